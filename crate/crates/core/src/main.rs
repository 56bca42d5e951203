//! Command-line harness: generate synthetic data, run experiments, aggregate
//! replicate results, render plots, and validate configurations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;

use topk_bandit::config::{parse_config, parse_master_kind, parse_mode, render_config};
use topk_bandit::error::{Error, Result};
use topk_bandit::harness::{
    aggregate, experiment_features, export_arr_csv, export_csv, ground_truth, import_csv,
    render_plot, run_all, synthetic_spec_of, MetricsSeries,
};
use topk_bandit::seeding::{stream_rng, Stream};
use topk_bandit::types::{build_constraints, FeatureMatrix};

#[derive(Parser)]
#[command(name = "topk-bandit", version, about = "Constrained top-K bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic feature matrix and its constraint summary.
    GenSynthetic {
        #[arg(long, default_value_t = 300)]
        l: usize,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run an experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// master-slave or standalone:<sampler>.
        #[arg(long)]
        mode: Option<String>,
        /// stationary or discounted.
        #[arg(long)]
        master: Option<String>,
    },
    /// Aggregate replicate CSVs in a run directory into mean/std tables.
    Report {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Render cumulative-mean curves from replicate CSVs.
    Plot {
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value = "curves.svg")]
        file: PathBuf,
    },
    /// Parse and validate a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_seed(flag: Option<u64>, config_seed: Option<u64>) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if let Some(s) = config_seed {
        return s;
    }
    let generated: u64 = rand::rng().random();
    println!("seed = {generated} (generated; pass --seed to reproduce)");
    generated
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenSynthetic { l, d, tau, seed, out } => gen_synthetic(l, d, tau, seed, &out),
        Command::Run {
            config,
            seed,
            out,
            replicates,
            jobs,
            mode,
            master,
        } => run(&config, seed, &out, replicates, jobs, mode, master),
        Command::Report { out } => report(&out),
        Command::Plot { out, file } => plot(&out, &file),
        Command::ValidateConfig { config } => validate_config(&config),
    }
}

fn load_config(path: &Path) -> Result<topk_bandit::config::ParsedConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

fn gen_synthetic(l: usize, d: usize, tau: f64, seed: Option<u64>, out: &Path) -> Result<()> {
    let seed = resolve_seed(seed, None);
    let mut rng = stream_rng(seed, 0, Stream::Harness);
    let rows: Vec<Vec<f64>> = (0..l)
        .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let features = FeatureMatrix::new(rows)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let feat_path = out.join("features.csv");
    let mut text = String::new();
    for row in features.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    std::fs::write(&feat_path, text).map_err(|e| Error::io(feat_path.display().to_string(), e))?;
    let constraints = build_constraints(&features, tau)?;
    let summary = format!(
        "l = {l}\nd = {d}\ntau = {tau}\nseed = {seed}\nconstraints = {}\n",
        constraints.m()
    );
    let sum_path = out.join("constraints_summary.txt");
    std::fs::write(&sum_path, &summary).map_err(|e| Error::io(sum_path.display().to_string(), e))?;
    println!(
        "wrote {} ({l} x {d}); tau = {tau} yields {} diversity constraints",
        feat_path.display(),
        constraints.m()
    );
    Ok(())
}

fn run(
    config_path: &Path,
    seed_flag: Option<u64>,
    out: &Path,
    replicates: Option<usize>,
    jobs: usize,
    mode: Option<String>,
    master: Option<String>,
) -> Result<()> {
    let parsed = load_config(config_path)?;
    let mut cfg = parsed.experiment;
    // Flags override config keys.
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    if let Some(m) = mode {
        cfg.mode = parse_mode(&m)?;
    }
    if let Some(m) = master {
        cfg.master = parse_master_kind(&m)?;
    }
    let seed = resolve_seed(seed_flag, parsed.explicit_seed);
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let resolved = out.join("config.resolved.txt");
    std::fs::write(&resolved, render_config(&cfg, seed))
        .map_err(|e| Error::io(resolved.display().to_string(), e))?;
    let all = run_all(&cfg, seed, jobs)?;
    for (rep, series) in all.iter().enumerate() {
        export_csv(series, &out.join(format!("rep_{rep}.csv")))?;
        export_arr_csv(series, &out.join(format!("rep_{rep}_arr.csv")))?;
        println!(
            "replicate {rep}: {} rounds, mean reward {:.4}, mean violation {:.4}",
            series.len(),
            series.mean_reward(),
            series.mean_violation()
        );
    }
    let (rm, rs, vm, vs) = aggregate(&all);
    println!("aggregate: reward {rm:.4} +- {rs:.4}, violation {vm:.4} +- {vs:.4}");
    if let Some(spec) = synthetic_spec_of(&cfg, seed) {
        let features = experiment_features(&cfg, seed)?;
        if let Some(f) = features {
            let constraints = build_constraints(&f, cfg.hyper.tau)?;
            let mut rng = stream_rng(seed, 0, Stream::Harness);
            if let Ok((_, value, exact)) = ground_truth(&spec, &constraints, cfg.hyper.k, &mut rng) {
                let marker = if exact { "" } else { " (heuristic)" };
                println!("constrained ground truth: {value:.4}{marker}");
            }
        }
    }
    Ok(())
}

fn replicate_csvs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("rep_") && name.ends_with(".csv") && !name.ends_with("_arr.csv") {
            out.push(entry.path());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no rep_*.csv files under {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn report(dir: &Path) -> Result<()> {
    let paths = replicate_csvs(dir)?;
    let mut series = Vec::new();
    println!("{:<14} {:>8} {:>12} {:>12} {:>12}", "replicate", "rounds", "reward", "violation", "tail200");
    for p in &paths {
        let s = import_csv(p)?;
        println!(
            "{:<14} {:>8} {:>12.4} {:>12.4} {:>12.4}",
            p.file_name().unwrap_or_default().to_string_lossy(),
            s.len(),
            s.mean_reward(),
            s.mean_violation(),
            s.tail_mean_reward(200)
        );
        series.push(s);
    }
    let (rm, rs, vm, vs) = aggregate(&series);
    println!("mean reward    {rm:.4} +- {rs:.4}");
    println!("mean violation {vm:.4} +- {vs:.4}");
    Ok(())
}

fn plot(dir: &Path, file: &Path) -> Result<()> {
    let paths = replicate_csvs(dir)?;
    let mut series: Vec<(String, MetricsSeries)> = Vec::new();
    for p in &paths {
        series.push((
            p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            import_csv(p)?,
        ));
    }
    let named: Vec<(String, &MetricsSeries)> =
        series.iter().map(|(n, s)| (n.clone(), s)).collect();
    let target = if file.is_absolute() {
        file.to_path_buf()
    } else {
        dir.join(file)
    };
    render_plot(&named, &target)?;
    println!("wrote {}", target.display());
    Ok(())
}

fn validate_config(path: &Path) -> Result<()> {
    let parsed = load_config(path)?;
    parsed.experiment.validate()?;
    println!("{} is valid", path.display());
    Ok(())
}
