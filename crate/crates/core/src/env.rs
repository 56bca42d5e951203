//! Bandit environments: synthetic feedback in four functional forms, replay
//! of recorded click logs, a cascading click model, and CSV ingestion.

use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{ActionVector, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackForm {
    Linear,
    Cubic,
    Quadratic,
    Mixed,
}

impl FeedbackForm {
    pub fn name(self) -> &'static str {
        match self {
            FeedbackForm::Linear => "linear",
            FeedbackForm::Cubic => "cubic",
            FeedbackForm::Quadratic => "quadratic",
            FeedbackForm::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(FeedbackForm::Linear),
            "cubic" => Ok(FeedbackForm::Cubic),
            "quadratic" => Ok(FeedbackForm::Quadratic),
            "mixed" => Ok(FeedbackForm::Mixed),
            other => Err(Error::Config(format!("unknown feedback form `{other}`"))),
        }
    }
}

/// Hidden synthetic feedback function `h` plus additive Gaussian noise.
#[derive(Debug, Clone)]
pub struct SyntheticFeedbackSpec {
    pub form: FeedbackForm,
    pub theta: Vec<f64>,
    /// Row-major L x L matrix; only read by the quadratic and mixed forms.
    pub q: Vec<Vec<f64>>,
    pub noise_sigma: f64,
}

impl SyntheticFeedbackSpec {
    /// Paper-style generation: theta and Q drawn uniformly from [0, 0.5].
    pub fn generate(l: usize, form: FeedbackForm, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        let theta: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..0.5)).collect();
        let q: Vec<Vec<f64>> = (0..l)
            .map(|_| (0..l).map(|_| rng.random_range(0.0..0.5)).collect())
            .collect();
        Self {
            form,
            theta,
            q,
            noise_sigma,
        }
    }

    pub fn l(&self) -> usize {
        self.theta.len()
    }

    /// Noiseless feedback `h(A)`.
    pub fn h(&self, action: &ActionVector) -> Result<f64> {
        if action.len() != self.theta.len() {
            return Err(Error::InvalidInput(format!(
                "action length {} != environment arms {}",
                action.len(),
                self.theta.len()
            )));
        }
        let sel = action.selected();
        let lin: f64 = sel.iter().map(|&i| self.theta[i]).sum();
        let quad = || -> f64 {
            let mut s = 0.0;
            for &i in &sel {
                for &j in &sel {
                    s += self.q[i][j];
                }
            }
            s
        };
        Ok(match self.form {
            FeedbackForm::Linear => lin,
            FeedbackForm::Cubic => lin.powi(3),
            FeedbackForm::Quadratic => quad(),
            FeedbackForm::Mixed => lin * lin + quad(),
        })
    }

    /// `h(A) + eps`, `eps ~ Normal(0, noise_sigma^2)` driven by the stream.
    pub fn feedback(&self, action: &ActionVector, rng: &mut ChaCha8Rng) -> Result<f64> {
        let base = self.h(action)?;
        if self.noise_sigma == 0.0 {
            return Ok(base);
        }
        let noise = Normal::new(0.0, self.noise_sigma)
            .map_err(|e| Error::Internal(format!("noise distribution: {e}")))?
            .sample(rng);
        Ok(base + noise)
    }
}

/// Time-ordered click events of a single user.
#[derive(Debug, Clone)]
pub struct ReplayLog {
    events: Vec<(i64, usize)>,
    l: usize,
    k: usize,
    was_unsorted: bool,
}

impl ReplayLog {
    pub fn new(mut events: Vec<(i64, usize)>, l: usize, k: usize) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::InvalidInput("replay log has no events".into()));
        }
        for &(_, item) in &events {
            if item >= l {
                return Err(Error::InvalidInput(format!(
                    "event item {item} out of range {l}"
                )));
            }
        }
        let was_unsorted = events.windows(2).any(|w| w[0].0 > w[1].0);
        if was_unsorted {
            events.sort_by_key(|e| e.0);
        }
        Ok(Self {
            events,
            l,
            k,
            was_unsorted,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_recommendation_size(&mut self, k: usize) {
        self.k = k;
    }

    /// True when ingestion had to re-sort events by timestamp.
    pub fn was_unsorted(&self) -> bool {
        self.was_unsorted
    }

    pub fn events(&self) -> &[(i64, usize)] {
        &self.events
    }

    /// The click set in the 2K-event window centered on the event mapped to
    /// round `t` (1-based), clamped at the log boundaries.
    pub fn click_window(&self, t: usize) -> Result<Vec<usize>> {
        if t == 0 {
            return Err(Error::InvalidInput("rounds are 1-based".into()));
        }
        if t > self.events.len() {
            return Err(Error::EndOfLog(t));
        }
        let k = self.k.max(1);
        let n = self.events.len();
        let width = (2 * k).min(n);
        let center = t - 1;
        let lo = center.saturating_sub(k).min(n - width);
        let hi = lo + width;
        let mut items: Vec<usize> = self.events[lo..hi].iter().map(|e| e.1).collect();
        items.sort_unstable();
        items.dedup();
        Ok(items)
    }
}

/// Overlap reward: `|clicked-window items  ∩  selected| / 2K`.
pub fn replay_feedback(log: &ReplayLog, t: usize, action: &ActionVector) -> Result<f64> {
    if action.len() != log.l {
        return Err(Error::InvalidInput(format!(
            "action length {} != log items {}",
            action.len(),
            log.l
        )));
    }
    let window = log.click_window(t)?;
    let k = if log.k > 0 { log.k } else { action.k() };
    let overlap = window.iter().filter(|&&i| action.get(i)).count();
    Ok(overlap as f64 / (2 * k) as f64)
}

/// Cascade click model: per-item attraction and satisfaction probabilities
/// plus the continue-examination discount.
#[derive(Debug, Clone)]
pub struct CascadeSpec {
    pub attract: Vec<f64>,
    pub satisfy: Vec<f64>,
    pub gamma_c: f64,
}

impl CascadeSpec {
    pub fn new(attract: Vec<f64>, satisfy: Vec<f64>, gamma_c: f64) -> Result<Self> {
        if attract.len() != satisfy.len() {
            return Err(Error::InvalidInput(
                "attract/satisfy length mismatch".into(),
            ));
        }
        if attract
            .iter()
            .chain(satisfy.iter())
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidInput(
                "cascade probabilities must lie in [0, 1]".into(),
            ));
        }
        if !(gamma_c > 0.0 && gamma_c <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma_c must lie in (0, 1], got {gamma_c}"
            )));
        }
        Ok(Self {
            attract,
            satisfy,
            gamma_c,
        })
    }

    pub fn generate(l: usize, gamma_c: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let attract = (0..l).map(|_| rng.random::<f64>()).collect();
        let satisfy = (0..l).map(|_| rng.random::<f64>()).collect();
        Self::new(attract, satisfy, gamma_c)
    }

    pub fn l(&self) -> usize {
        self.attract.len()
    }

    /// Closed-form expected reward of an ordered list.
    pub fn expected_reward(&self, ordered_items: &[usize]) -> f64 {
        let mut reach = 1.0;
        let mut total = 0.0;
        for (pos, &item) in ordered_items.iter().enumerate() {
            let p_sat = self.attract[item] * self.satisfy[item];
            total += reach * p_sat;
            if pos + 1 < ordered_items.len() {
                reach *= (1.0 - p_sat) * self.gamma_c;
            }
        }
        total
    }
}

/// Simulate one examination pass over an ordered recommendation list.
/// Returns the binary reward and the number of items examined.
pub fn cascade_step(
    spec: &CascadeSpec,
    ordered_items: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(u8, usize)> {
    if ordered_items.is_empty() {
        return Err(Error::InvalidInput("empty recommendation list".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for &i in ordered_items {
        if i >= spec.l() {
            return Err(Error::InvalidInput(format!("item {i} out of range {}", spec.l())));
        }
        if !seen.insert(i) {
            return Err(Error::InvalidInput(format!("duplicate item {i} in list")));
        }
    }
    let mut examined = 0usize;
    for (pos, &item) in ordered_items.iter().enumerate() {
        examined = pos + 1;
        let attracted = rng.random::<f64>() < spec.attract[item];
        if attracted {
            let satisfied = rng.random::<f64>() < spec.satisfy[item];
            if satisfied {
                return Ok((1, examined));
            }
        }
        // Unsatisfied either way: examine the next item only with the
        // continuation probability.
        if pos + 1 < ordered_items.len() && rng.random::<f64>() >= spec.gamma_c {
            break;
        }
    }
    Ok((0, examined))
}

/// Read a headerless CSV of `d` comma-separated reals per row.
pub fn ingest_features(path: &Path) -> Result<FeatureMatrix> {
    let pd = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(pd.clone(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(pd.clone(), e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if let Some(d) = dim {
            if fields.len() != d {
                return Err(Error::Parse {
                    path: pd,
                    line: lineno + 1,
                    msg: format!("row has {} fields, expected {d}", fields.len()),
                });
            }
        } else {
            dim = Some(fields.len());
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            row.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: pd.clone(),
                line: lineno + 1,
                msg: format!("bad real `{f}`"),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{pd}: no feature rows")));
    }
    FeatureMatrix::new(rows)
}

/// Read a click log CSV with header `timestamp,item`; unsorted rows are
/// sorted with the warning flag set on the result.
pub fn ingest_log(path: &Path) -> Result<ReplayLog> {
    let pd = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(pd.clone(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut events: Vec<(i64, usize)> = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(pd.clone(), e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            if line != "timestamp,item" {
                return Err(Error::Parse {
                    path: pd,
                    line: lineno + 1,
                    msg: format!("expected header `timestamp,item`, got `{line}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let mut parts = line.split(',');
        let (Some(ts), Some(item), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                path: pd,
                line: lineno + 1,
                msg: "expected two comma-separated fields".into(),
            });
        };
        let ts: i64 = ts.trim().parse().map_err(|_| Error::Parse {
            path: pd.clone(),
            line: lineno + 1,
            msg: format!("bad timestamp `{ts}`"),
        })?;
        let item: usize = item.trim().parse().map_err(|_| Error::Parse {
            path: pd.clone(),
            line: lineno + 1,
            msg: format!("bad item index `{item}`"),
        })?;
        events.push((ts, item));
    }
    if events.is_empty() {
        return Err(Error::InvalidInput(format!("{pd}: no click events")));
    }
    let l = events.iter().map(|e| e.1).max().unwrap_or(0) + 1;
    ReplayLog::new(events, l, 0)
}
