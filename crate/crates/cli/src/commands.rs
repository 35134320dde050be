use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use apo_core::divergence::ALPHA_EPS;
use apo_core::report::{format_sig9, write_metrics_csv};
use apo_core::trainer::{
    expected_reward, mean_max_probability, mean_policy_confidence, StepMetrics, ToyEnvironment, ToyPolicy, Trainer,
};

use crate::config::{MetricsFormat, PolicyKind, RunConfig};
use crate::error::{CliError, Result};

pub const SWEEP_HEADER: &str = "alpha,final_mean_reward,final_confidence,concentration";

pub struct RunOutcome {
    pub environment: ToyEnvironment,
    pub metrics: Vec<StepMetrics>,
    pub policy: ToyPolicy,
}

pub fn train(cfg: &RunConfig) -> Result<RunOutcome> {
    let environment = ToyEnvironment::generate(&cfg.environment_config())?;
    let mut trainer = Trainer::new(environment.clone(), cfg.train_config()?, cfg.alpha_scheduler()?)?;
    let metrics = trainer.run()?;
    Ok(RunOutcome {
        environment,
        metrics,
        policy: trainer.into_policy(),
    })
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes metrics (CSV, plus JSON lines if configured), the resolved config
/// and the final policy into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    ensure_dir(dir)?;
    let csv_path = dir.join("metrics.csv");
    let mut csv = create_file(&csv_path)?;
    write_metrics_csv(&mut csv, &outcome.metrics)
        .and_then(|_| csv.flush())
        .map_err(|e| CliError::io(&csv_path, e))?;

    if cfg.output.metrics_format == MetricsFormat::CsvJsonl {
        let path = dir.join("metrics.jsonl");
        let mut out = create_file(&path)?;
        for m in &outcome.metrics {
            let line = serde_json::to_string(m).expect("metrics are plain numbers");
            writeln!(out, "{line}").map_err(|e| CliError::io(&path, e))?;
        }
        out.flush().map_err(|e| CliError::io(&path, e))?;
    }

    write_text(&dir.join("config.toml"), &cfg.to_toml_string())?;
    let policy = toml::to_string(&outcome.policy).expect("policy tables always serialize");
    write_text(&dir.join("policy.toml"), &policy)
}

pub fn cmd_run(config_path: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply_env_overrides();
    let outcome = train(&cfg)?;
    write_run(&cfg.output.run_dir, &cfg, &outcome)?;
    println!(
        "wrote {} steps to {} (final expected reward {}, optimum {})",
        outcome.metrics.len(),
        cfg.output.run_dir.display(),
        format_sig9(expected_reward(&outcome.environment, &outcome.policy)),
        format_sig9(outcome.environment.optimum()),
    );
    Ok(())
}

/// Parses `a,b,c`; every value must lie strictly inside the divergence band.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::Usage(
            "--grid is empty; pass comma-separated alphas such as 0.35,0.6,0.95".into(),
        ));
    }
    items
        .into_iter()
        .map(|s| {
            let alpha: f64 = s
                .parse()
                .map_err(|_| CliError::Usage(format!("--grid entry \"{s}\" is not a number")))?;
            if alpha > ALPHA_EPS && alpha < 1.0 - ALPHA_EPS {
                Ok(alpha)
            } else {
                Err(CliError::Usage(format!(
                    "--grid entry {alpha} must lie strictly inside ({ALPHA_EPS}, {})",
                    1.0 - ALPHA_EPS
                )))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub final_mean_reward: f64,
    pub final_confidence: f64,
    pub concentration: f64,
}

impl SweepRow {
    fn csv(&self) -> String {
        [
            self.alpha,
            self.final_mean_reward,
            self.final_confidence,
            self.concentration,
        ]
        .map(format_sig9)
        .join(",")
    }
}

/// One fixed-α training per grid value on the shared environment seed. Each
/// run's artifacts land in `<run_dir>/alpha_<value>/`, the summary in `sweep.csv`.
pub fn sweep(base: &RunConfig, grid: &[f64]) -> Result<Vec<SweepRow>> {
    let root = &base.output.run_dir;
    ensure_dir(root)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let mut cfg = base.clone();
        cfg.scheduler.policy = PolicyKind::Fixed;
        cfg.scheduler.alpha = alpha;
        cfg.output.run_dir = root.join(format!("alpha_{alpha}"));
        cfg.validate()?;
        let outcome = train(&cfg)?;
        write_run(&cfg.output.run_dir, &cfg, &outcome)?;
        rows.push(SweepRow {
            alpha,
            final_mean_reward: expected_reward(&outcome.environment, &outcome.policy),
            final_confidence: mean_policy_confidence(&outcome.policy),
            concentration: mean_max_probability(&outcome.policy),
        });
    }
    let mut text = format!("{SWEEP_HEADER}\n");
    for row in &rows {
        text.push_str(&row.csv());
        text.push('\n');
    }
    write_text(&root.join("sweep.csv"), &text)?;
    Ok(rows)
}

pub fn cmd_sweep_alpha(config_path: &Path, grid: &str) -> Result<PathBuf> {
    let grid = parse_grid(grid)?;
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply_env_overrides();
    let rows = sweep(&cfg, &grid)?;
    println!("{SWEEP_HEADER}");
    for row in &rows {
        println!("{}", row.csv());
    }
    Ok(cfg.output.run_dir.join("sweep.csv"))
}
