//! Flat `key = value` experiment configuration. Unknown keys are rejected so
//! a config file is always a faithful record of the run it produced.

use std::path::PathBuf;

use crate::env::FeedbackForm;
use crate::error::{Error, Result};
use crate::harness::{EnvKind, ExperimentConfig, MasterKind, Mode};
use crate::types::SamplerId;

/// A parsed configuration plus whether the file pinned the seed itself.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub experiment: ExperimentConfig,
    pub explicit_seed: Option<u64>,
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    if s == "master-slave" {
        return Ok(Mode::MasterSlave);
    }
    if let Some(name) = s.strip_prefix("standalone:") {
        return Ok(Mode::Standalone(SamplerId::parse(name)?));
    }
    Err(Error::Config(format!(
        "mode must be `master-slave` or `standalone:<sampler>`, got `{s}`"
    )))
}

pub fn parse_master_kind(s: &str) -> Result<MasterKind> {
    match s {
        "stationary" => Ok(MasterKind::Stationary),
        "discounted" => Ok(MasterKind::Discounted),
        other => Err(Error::Config(format!(
            "master must be `stationary` or `discounted`, got `{other}`"
        ))),
    }
}

fn parse_samplers(s: &str) -> Result<Vec<SamplerId>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let id = SamplerId::parse(part)?;
        if !out.contains(&id) {
            out.push(id);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("samplers list is empty".into()));
    }
    Ok(out)
}

/// Parse the flat text format. Blank lines and `#` comments are allowed.
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let mut cfg = ExperimentConfig::new(crate::types::Hyperparameters::default());
    let mut explicit_seed = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, &mut explicit_seed, key, value).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
            other => other,
        })?;
    }
    Ok(ParsedConfig {
        experiment: cfg,
        explicit_seed,
    })
}

/// Apply one `key = value` assignment to a parsed configuration; external
/// bindings use this for incremental construction.
pub fn set_key(parsed: &mut ParsedConfig, key: &str, value: &str) -> Result<()> {
    apply_key(&mut parsed.experiment, &mut parsed.explicit_seed, key, value)
}

fn apply_key(
    cfg: &mut ExperimentConfig,
    explicit_seed: &mut Option<u64>,
    key: &str,
    value: &str,
) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("field `{key}`: bad value `{value}`")))
    }
    match key {
        "l" => cfg.hyper.l = num(key, value)?,
        "k" => cfg.hyper.k = num(key, value)?,
        "lambda" => cfg.hyper.lambda = num(key, value)?,
        "tau" => cfg.hyper.tau = num(key, value)?,
        "epsilon0" => cfg.hyper.epsilon0 = num(key, value)?,
        "rho" => cfg.hyper.rho = num(key, value)?,
        "f_in" => cfg.hyper.f_in = num(key, value)?,
        "length_epoch" => cfg.hyper.length_epoch = num(key, value)?,
        "l2_window" => cfg.hyper.l2_window = num(key, value)?,
        "n_es" => cfg.hyper.n_es = num(key, value)?,
        "cluster_count" => cfg.hyper.cluster_count = num(key, value)?,
        "seed" => {
            cfg.hyper.seed = num(key, value)?;
            *explicit_seed = Some(cfg.hyper.seed);
        }
        "t" => cfg.horizon = num(key, value)?,
        "replicates" => cfg.replicates = num(key, value)?,
        "mode" => cfg.mode = parse_mode(value)?,
        "master" => cfg.master = parse_master_kind(value)?,
        "samplers" => cfg.enabled = parse_samplers(value)?,
        "env" => {
            cfg.env = match value {
                "synthetic" => EnvKind::Synthetic {
                    form: current_form(&cfg.env),
                    noise_sigma: current_noise(&cfg.env),
                },
                "replay" => EnvKind::Replay {
                    log_path: PathBuf::new(),
                },
                "cascade" => EnvKind::Cascade { gamma_c: 0.9 },
                other => {
                    return Err(Error::Config(format!(
                        "field `env`: expected synthetic|replay|cascade, got `{other}`"
                    )))
                }
            }
        }
        "form" => {
            let form = FeedbackForm::parse(value)?;
            match &mut cfg.env {
                EnvKind::Synthetic { form: slot, .. } => *slot = form,
                _ => {
                    cfg.env = EnvKind::Synthetic {
                        form,
                        noise_sigma: 0.1,
                    }
                }
            }
        }
        "noise_sigma" => {
            let sigma: f64 = num(key, value)?;
            if sigma < 0.0 {
                return Err(Error::Config("field `noise_sigma`: must be >= 0".into()));
            }
            match &mut cfg.env {
                EnvKind::Synthetic { noise_sigma, .. } => *noise_sigma = sigma,
                _ => {
                    return Err(Error::Config(
                        "field `noise_sigma`: only valid for env = synthetic".into(),
                    ))
                }
            }
        }
        "log_path" => match &mut cfg.env {
            EnvKind::Replay { log_path } => *log_path = PathBuf::from(value),
            _ => {
                cfg.env = EnvKind::Replay {
                    log_path: PathBuf::from(value),
                }
            }
        },
        "cascade_gamma" => {
            let g: f64 = num(key, value)?;
            match &mut cfg.env {
                EnvKind::Cascade { gamma_c } => *gamma_c = g,
                _ => cfg.env = EnvKind::Cascade { gamma_c: g },
            }
        }
        "features_path" => cfg.features_path = Some(PathBuf::from(value)),
        "feature_dim" => cfg.feature_dim = num(key, value)?,
        "m" => cfg.ucb_m = num(key, value)?,
        "depth" => cfg.ucb_depth = num(key, value)?,
        "j_steps" => cfg.ucb_j_steps = num(key, value)?,
        "eta" => cfg.ucb_eta = num(key, value)?,
        "lambda1" => cfg.ucb_lambda1 = num(key, value)?,
        "nu" => cfg.ucb_nu = num(key, value)?,
        "ucb_delta" => cfg.ucb_delta = num(key, value)?,
        "gamma_floor" => cfg.ucb_gamma_floor = num(key, value)?,
        "warm_start" => {
            cfg.ucb_warm_start = match value {
                "true" | "1" => true,
                "false" | "0" => false,
                other => {
                    return Err(Error::Config(format!(
                        "field `warm_start`: expected true|false, got `{other}`"
                    )))
                }
            }
        }
        "z_refresh" => cfg.ucb_refresh = num(key, value)?,
        "gamma_ns" => cfg.gamma_ns = num(key, value)?,
        "alpha_const" => cfg.alpha_const = num(key, value)?,
        "n_demo" => cfg.n_demo = num(key, value)?,
        "demo_lr" => cfg.demo_lr = num(key, value)?,
        "wolp_train_steps" => cfg.wolp_train_steps = num(key, value)?,
        other => {
            return Err(Error::Config(format!("unknown key `{other}`")));
        }
    }
    Ok(())
}

fn current_form(env: &EnvKind) -> FeedbackForm {
    match env {
        EnvKind::Synthetic { form, .. } => *form,
        _ => FeedbackForm::Linear,
    }
}

fn current_noise(env: &EnvKind) -> f64 {
    match env {
        EnvKind::Synthetic { noise_sigma, .. } => *noise_sigma,
        _ => 0.1,
    }
}

/// Serialize the resolved configuration back to the flat format, with every
/// field pinned, so a run directory always carries its exact inputs.
pub fn render_config(cfg: &ExperimentConfig, seed: u64) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    push("l", cfg.hyper.l.to_string());
    push("k", cfg.hyper.k.to_string());
    push("lambda", cfg.hyper.lambda.to_string());
    push("tau", cfg.hyper.tau.to_string());
    push("epsilon0", cfg.hyper.epsilon0.to_string());
    push("rho", cfg.hyper.rho.to_string());
    push("f_in", cfg.hyper.f_in.to_string());
    push("length_epoch", cfg.hyper.length_epoch.to_string());
    push("l2_window", cfg.hyper.l2_window.to_string());
    push("n_es", cfg.hyper.n_es.to_string());
    push("cluster_count", cfg.hyper.cluster_count.to_string());
    push("seed", seed.to_string());
    push("t", cfg.horizon.to_string());
    push("replicates", cfg.replicates.to_string());
    push(
        "mode",
        match cfg.mode {
            Mode::MasterSlave => "master-slave".to_string(),
            Mode::Standalone(id) => format!("standalone:{}", id.name()),
        },
    );
    push(
        "master",
        match cfg.master {
            MasterKind::Stationary => "stationary".to_string(),
            MasterKind::Discounted => "discounted".to_string(),
        },
    );
    push(
        "samplers",
        cfg.enabled
            .iter()
            .map(|id| id.name())
            .collect::<Vec<_>>()
            .join(","),
    );
    match &cfg.env {
        EnvKind::Synthetic { form, noise_sigma } => {
            push("env", "synthetic".into());
            push("form", form.name().into());
            push("noise_sigma", noise_sigma.to_string());
        }
        EnvKind::Replay { log_path } => {
            push("env", "replay".into());
            push("log_path", log_path.display().to_string());
        }
        EnvKind::Cascade { gamma_c } => {
            push("env", "cascade".into());
            push("cascade_gamma", gamma_c.to_string());
        }
    }
    if let Some(p) = &cfg.features_path {
        push("features_path", p.display().to_string());
    }
    push("feature_dim", cfg.feature_dim.to_string());
    push("m", cfg.ucb_m.to_string());
    push("depth", cfg.ucb_depth.to_string());
    push("j_steps", cfg.ucb_j_steps.to_string());
    push("eta", cfg.ucb_eta.to_string());
    push("lambda1", cfg.ucb_lambda1.to_string());
    push("nu", cfg.ucb_nu.to_string());
    push("ucb_delta", cfg.ucb_delta.to_string());
    push("gamma_floor", cfg.ucb_gamma_floor.to_string());
    push("warm_start", cfg.ucb_warm_start.to_string());
    push("z_refresh", cfg.ucb_refresh.to_string());
    push("gamma_ns", cfg.gamma_ns.to_string());
    push("alpha_const", cfg.alpha_const.to_string());
    push("n_demo", cfg.n_demo.to_string());
    push("demo_lr", cfg.demo_lr.to_string());
    push("wolp_train_steps", cfg.wolp_train_steps.to_string());
    out
}
