//! Run configuration: a TOML file with `environment`, `training`, `scheduler`,
//! `clipping` and `output` sections. Every key is optional; unknown keys are
//! rejected so typos surface as errors instead of silently using defaults.

use std::path::{Path, PathBuf};

use apo_core::divergence::{ClipConfig, ALPHA_EPS};
use apo_core::scheduler::{fixed_alpha, AlphaPolicy, AlphaScheduler, EssTargetConfig, GuardedParams};
use apo_core::trainer::{ConfidenceSource, EnvironmentConfig, RewardMode, TrainConfig};
use apo_core::ApoError;
use toml::{Table, Value};

use crate::error::{CliError, Result};

pub const RUN_DIR_ENV: &str = "APO_RUN_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Fixed,
    Guarded,
    Ess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    CsvJsonl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSection {
    pub num_contexts: usize,
    pub m: usize,
    pub reward_mode: RewardMode,
    pub noise_std: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub t: usize,
    pub b: usize,
    pub p: usize,
    pub eta: f64,
    pub tau_anc: f64,
    pub beta_r: f64,
    pub zscore_epsilon: f64,
    pub anchor_refresh: usize,
    pub confidence_source: ConfidenceSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerSection {
    pub policy: PolicyKind,
    pub alpha: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub rho: f64,
    pub lambda: f64,
    pub s_r_init: f64,
    pub s_r_floor: f64,
    pub gamma: f64,
    pub warmup_steps: u64,
    pub baseline_init: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClippingSection {
    pub enabled: bool,
    pub w_min: f64,
    pub w_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub run_dir: PathBuf,
    pub metrics_format: MetricsFormat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub environment: EnvironmentSection,
    pub training: TrainingSection,
    pub scheduler: SchedulerSection,
    pub clipping: ClippingSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let guarded = GuardedParams::<f64>::default();
        let train = TrainConfig::default();
        let clip = ClipConfig::<f64>::disabled();
        Self {
            environment: EnvironmentSection {
                num_contexts: 16,
                m: 8,
                reward_mode: RewardMode::Unimodal,
                noise_std: 0.0,
                master_seed: 0,
            },
            training: TrainingSection {
                t: train.steps,
                b: train.batch_size,
                p: train.group_size,
                eta: train.learning_rate,
                tau_anc: train.tau_anc,
                beta_r: train.beta_r,
                zscore_epsilon: train.zscore_epsilon,
                anchor_refresh: train.anchor_refresh,
                confidence_source: train.confidence_source,
            },
            scheduler: SchedulerSection {
                policy: PolicyKind::Guarded,
                alpha: 0.6,
                alpha_min: guarded.alpha_min,
                alpha_max: guarded.alpha_max,
                rho: guarded.alpha_ema_rate,
                lambda: guarded.baseline_ema_rate,
                s_r_init: guarded.reward_scale_init,
                s_r_floor: guarded.reward_scale_floor,
                gamma: 0.5,
                warmup_steps: guarded.warmup_steps,
                baseline_init: guarded.baseline_init,
            },
            clipping: ClippingSection {
                enabled: clip.enabled,
                w_min: clip.w_min,
                w_max: clip.w_max,
            },
            output: OutputSection {
                run_dir: PathBuf::from("runs/default"),
                metrics_format: MetricsFormat::Csv,
            },
        }
    }
}

/// Consumes keys from one section, remembering its name for diagnostics.
struct Section {
    name: &'static str,
    table: Table,
}

impl Section {
    fn take(root: &mut Table, name: &'static str) -> Result<Self> {
        let table = match root.remove(name) {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(other) => {
                return Err(CliError::config(
                    name,
                    format!("expected a table, found {}", other.type_str()),
                ))
            }
        };
        Ok(Self { name, table })
    }

    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn float(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        match self.table.remove(key) {
            None => {}
            Some(Value::Float(v)) => *slot = v,
            Some(Value::Integer(v)) => *slot = v as f64,
            Some(other) => return Err(self.type_error(key, "a number", &other)),
        }
        if !slot.is_finite() {
            return Err(CliError::config(self.key(key), format!("must be finite, got {slot}")));
        }
        Ok(())
    }

    fn unsigned(&mut self, key: &str) -> Result<Option<u64>> {
        match self.table.remove(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if v >= 0 => Ok(Some(v as u64)),
            Some(Value::Integer(v)) => Err(CliError::config(
                self.key(key),
                format!("must be non-negative, got {v}"),
            )),
            Some(other) => Err(self.type_error(key, "an integer", &other)),
        }
    }

    fn count(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.unsigned(key)? {
            *slot = usize::try_from(v).map_err(|_| CliError::config(self.key(key), "value too large"))?;
        }
        Ok(())
    }

    fn seed(&mut self, key: &str, slot: &mut u64) -> Result<()> {
        if let Some(v) = self.unsigned(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn boolean(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        match self.table.remove(key) {
            None => Ok(()),
            Some(Value::Boolean(v)) => {
                *slot = v;
                Ok(())
            }
            Some(other) => Err(self.type_error(key, "a boolean", &other)),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.table.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(self.type_error(key, "a string", &other)),
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, slot: &mut T, options: &[(&str, T)]) -> Result<()> {
        let Some(s) = self.string(key)? else { return Ok(()) };
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => {
                *slot = *v;
                Ok(())
            }
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                Err(CliError::config(
                    self.key(key),
                    format!("expected one of {}, got \"{s}\"", names.join("|")),
                ))
            }
        }
    }

    fn type_error(&self, key: &str, expected: &str, found: &Value) -> CliError {
        CliError::config(
            self.key(key),
            format!("expected {expected}, found {}", found.type_str()),
        )
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            Some(k) => Err(CliError::config(self.key(k), "unknown key")),
            None => Ok(()),
        }
    }
}

const REWARD_MODES: &[(&str, RewardMode)] = &[
    ("unimodal", RewardMode::Unimodal),
    ("bimodal", RewardMode::Bimodal),
    ("binary", RewardMode::Binary),
];
const CONFIDENCE_SOURCES: &[(&str, ConfidenceSource)] = &[
    ("anchored", ConfidenceSource::Anchored),
    ("policy", ConfidenceSource::Policy),
];
const POLICIES: &[(&str, PolicyKind)] = &[
    ("fixed", PolicyKind::Fixed),
    ("guarded", PolicyKind::Guarded),
    ("ess", PolicyKind::Ess),
];
const METRICS_FORMATS: &[(&str, MetricsFormat)] =
    &[("csv", MetricsFormat::Csv), ("csv+jsonl", MetricsFormat::CsvJsonl)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], value: &T) -> &'static str {
    options
        .iter()
        .find(|(_, v)| v == value)
        .map(|(n, _)| *n)
        .expect("every variant has a name")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config("<file>", e.message().to_string()))?;
        let mut cfg = Self::default();

        let mut s = Section::take(&mut root, "environment")?;
        let env = &mut cfg.environment;
        s.count("num_contexts", &mut env.num_contexts)?;
        s.count("M", &mut env.m)?;
        s.choice("reward_mode", &mut env.reward_mode, REWARD_MODES)?;
        s.float("noise_std", &mut env.noise_std)?;
        s.seed("master_seed", &mut env.master_seed)?;
        s.finish()?;

        let mut s = Section::take(&mut root, "training")?;
        let tr = &mut cfg.training;
        s.count("T", &mut tr.t)?;
        s.count("B", &mut tr.b)?;
        s.count("P", &mut tr.p)?;
        s.float("eta", &mut tr.eta)?;
        s.float("tau_anc", &mut tr.tau_anc)?;
        s.float("beta_r", &mut tr.beta_r)?;
        s.float("zscore_epsilon", &mut tr.zscore_epsilon)?;
        s.count("anchor_refresh", &mut tr.anchor_refresh)?;
        s.choice("confidence_source", &mut tr.confidence_source, CONFIDENCE_SOURCES)?;
        s.finish()?;

        let mut s = Section::take(&mut root, "scheduler")?;
        let sc = &mut cfg.scheduler;
        s.choice("policy", &mut sc.policy, POLICIES)?;
        s.float("alpha", &mut sc.alpha)?;
        s.float("alpha_min", &mut sc.alpha_min)?;
        s.float("alpha_max", &mut sc.alpha_max)?;
        s.float("rho", &mut sc.rho)?;
        s.float("lambda", &mut sc.lambda)?;
        s.float("s_r_init", &mut sc.s_r_init)?;
        s.float("s_r_floor", &mut sc.s_r_floor)?;
        s.float("gamma", &mut sc.gamma)?;
        s.seed("warmup_steps", &mut sc.warmup_steps)?;
        s.float("baseline_init", &mut sc.baseline_init)?;
        s.finish()?;

        let mut s = Section::take(&mut root, "clipping")?;
        let cl = &mut cfg.clipping;
        s.boolean("enabled", &mut cl.enabled)?;
        s.float("w_min", &mut cl.w_min)?;
        s.float("w_max", &mut cl.w_max)?;
        s.finish()?;

        let mut s = Section::take(&mut root, "output")?;
        if let Some(dir) = s.string("run_dir")? {
            if dir.is_empty() {
                return Err(CliError::config("output.run_dir", "must not be empty"));
            }
            cfg.output.run_dir = PathBuf::from(dir);
        }
        s.choice("metrics_format", &mut cfg.output.metrics_format, METRICS_FORMATS)?;
        s.finish()?;

        if let Some(k) = root.keys().next() {
            return Err(CliError::config(k.as_str(), "unknown section"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks. Each failure names the key to edit.
    pub fn validate(&self) -> Result<()> {
        fn ensure(ok: bool, key: &str, message: String) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(CliError::config(key, message))
            }
        }
        let (env, tr, sc, cl) = (&self.environment, &self.training, &self.scheduler, &self.clipping);
        ensure(
            env.num_contexts >= 1,
            "environment.num_contexts",
            "must be at least 1".into(),
        )?;
        ensure(
            env.m >= 2,
            "environment.M",
            format!("need at least 2 candidates, got {}", env.m),
        )?;
        ensure(
            env.noise_std >= 0.0,
            "environment.noise_std",
            format!("must be >= 0, got {}", env.noise_std),
        )?;

        ensure(
            (1..=env.num_contexts).contains(&tr.b),
            "training.B",
            format!("must lie in [1, num_contexts = {}], got {}", env.num_contexts, tr.b),
        )?;
        ensure(
            (2..=env.m).contains(&tr.p),
            "training.P",
            format!("must lie in [2, M = {}], got {}", env.m, tr.p),
        )?;
        for (key, v) in [
            ("training.eta", tr.eta),
            ("training.tau_anc", tr.tau_anc),
            ("training.beta_r", tr.beta_r),
            ("training.zscore_epsilon", tr.zscore_epsilon),
        ] {
            ensure(v > 0.0, key, format!("must be positive, got {v}"))?;
        }
        ensure(
            tr.anchor_refresh >= 1,
            "training.anchor_refresh",
            "must be at least 1".into(),
        )?;

        let (lo, hi) = (ALPHA_EPS, 1.0 - ALPHA_EPS);
        ensure(
            sc.alpha_min >= lo && sc.alpha_min < sc.alpha_max,
            "scheduler.alpha_min",
            format!(
                "need {lo} <= alpha_min < alpha_max, got {} and {}",
                sc.alpha_min, sc.alpha_max
            ),
        )?;
        ensure(
            sc.alpha_max <= hi,
            "scheduler.alpha_max",
            format!("must be <= {hi}, got {}", sc.alpha_max),
        )?;
        if sc.policy == PolicyKind::Fixed {
            ensure(
                sc.alpha > lo && sc.alpha < hi,
                "scheduler.alpha",
                format!("must lie strictly inside ({lo}, {hi}), got {}", sc.alpha),
            )?;
        }
        for (key, v) in [("scheduler.rho", sc.rho), ("scheduler.lambda", sc.lambda)] {
            ensure(v > 0.0 && v <= 1.0, key, format!("must lie in (0, 1], got {v}"))?;
        }
        ensure(
            sc.s_r_init > 0.0,
            "scheduler.s_r_init",
            format!("must be positive, got {}", sc.s_r_init),
        )?;
        ensure(
            sc.s_r_floor > 0.0,
            "scheduler.s_r_floor",
            format!("must be positive, got {}", sc.s_r_floor),
        )?;
        if sc.policy == PolicyKind::Ess {
            let target = sc.gamma * tr.p as f64;
            ensure(
                target > 1.0 && target < tr.p as f64,
                "scheduler.gamma",
                format!("gamma * P = {target} must lie in (1, {})", tr.p),
            )?;
        }

        ensure(
            cl.w_min > 0.0 && cl.w_min <= 1.0,
            "clipping.w_min",
            format!("must lie in (0, 1], got {}", cl.w_min),
        )?;
        ensure(
            cl.w_max >= 1.0,
            "clipping.w_max",
            format!("must be >= 1, got {}", cl.w_max),
        )?;
        Ok(())
    }

    /// Replaces `output.run_dir` with `APO_RUN_DIR` when that is set and non-empty.
    pub fn apply_env_overrides(&mut self) {
        if let Some(dir) = std::env::var_os(RUN_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output.run_dir = PathBuf::from(dir);
        }
    }

    pub fn environment_config(&self) -> EnvironmentConfig {
        let env = &self.environment;
        EnvironmentConfig {
            num_contexts: env.num_contexts,
            candidates_per_context: env.m,
            reward_mode: env.reward_mode,
            noise_std: env.noise_std,
            seed: env.master_seed,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let (tr, cl) = (&self.training, &self.clipping);
        let clip = ClipConfig::new(cl.w_min, cl.w_max, cl.enabled).map_err(core_config_error)?;
        Ok(TrainConfig {
            steps: tr.t,
            batch_size: tr.b,
            group_size: tr.p,
            learning_rate: tr.eta,
            tau_anc: tr.tau_anc,
            beta_r: tr.beta_r,
            zscore_epsilon: tr.zscore_epsilon,
            clip,
            anchor_refresh: tr.anchor_refresh,
            confidence_source: tr.confidence_source,
            seed: self.environment.master_seed,
        })
    }

    pub fn guarded_params(&self) -> GuardedParams<f64> {
        let sc = &self.scheduler;
        GuardedParams {
            alpha_min: sc.alpha_min,
            alpha_max: sc.alpha_max,
            baseline_ema_rate: sc.lambda,
            alpha_ema_rate: sc.rho,
            reward_scale_init: sc.s_r_init,
            reward_scale_floor: sc.s_r_floor,
            baseline_init: sc.baseline_init,
            warmup_steps: sc.warmup_steps,
        }
    }

    pub fn alpha_scheduler(&self) -> Result<AlphaScheduler<f64>> {
        let sc = &self.scheduler;
        let policy = match sc.policy {
            PolicyKind::Fixed => AlphaPolicy::Fixed(fixed_alpha(sc.alpha).map_err(core_config_error)?),
            PolicyKind::Guarded => AlphaPolicy::Guarded,
            PolicyKind::Ess => {
                AlphaPolicy::Ess(EssTargetConfig::new(sc.gamma, self.training.p).map_err(core_config_error)?)
            }
        };
        AlphaScheduler::new(policy, self.guarded_params()).map_err(core_config_error)
    }

    /// Serializes every key, defaults included, so the file alone reproduces the run.
    pub fn to_toml_string(&self) -> String {
        fn table<const N: usize>(entries: [(&str, Value); N]) -> Value {
            Value::Table(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
        }
        let int = |v: u64| Value::Integer(v as i64);
        let text = |s: &str| Value::String(s.to_string());
        let (env, tr, sc, cl, out) = (
            &self.environment,
            &self.training,
            &self.scheduler,
            &self.clipping,
            &self.output,
        );
        let mut root = Table::new();
        root.insert(
            "environment".into(),
            table([
                ("num_contexts", int(env.num_contexts as u64)),
                ("M", int(env.m as u64)),
                ("reward_mode", text(name_of(REWARD_MODES, &env.reward_mode))),
                ("noise_std", Value::Float(env.noise_std)),
                ("master_seed", int(env.master_seed)),
            ]),
        );
        root.insert(
            "training".into(),
            table([
                ("T", int(tr.t as u64)),
                ("B", int(tr.b as u64)),
                ("P", int(tr.p as u64)),
                ("eta", Value::Float(tr.eta)),
                ("tau_anc", Value::Float(tr.tau_anc)),
                ("beta_r", Value::Float(tr.beta_r)),
                ("zscore_epsilon", Value::Float(tr.zscore_epsilon)),
                ("anchor_refresh", int(tr.anchor_refresh as u64)),
                (
                    "confidence_source",
                    text(name_of(CONFIDENCE_SOURCES, &tr.confidence_source)),
                ),
            ]),
        );
        root.insert(
            "scheduler".into(),
            table([
                ("policy", text(name_of(POLICIES, &sc.policy))),
                ("alpha", Value::Float(sc.alpha)),
                ("alpha_min", Value::Float(sc.alpha_min)),
                ("alpha_max", Value::Float(sc.alpha_max)),
                ("rho", Value::Float(sc.rho)),
                ("lambda", Value::Float(sc.lambda)),
                ("s_r_init", Value::Float(sc.s_r_init)),
                ("s_r_floor", Value::Float(sc.s_r_floor)),
                ("gamma", Value::Float(sc.gamma)),
                ("warmup_steps", int(sc.warmup_steps)),
                ("baseline_init", Value::Float(sc.baseline_init)),
            ]),
        );
        root.insert(
            "clipping".into(),
            table([
                ("enabled", Value::Boolean(cl.enabled)),
                ("w_min", Value::Float(cl.w_min)),
                ("w_max", Value::Float(cl.w_max)),
            ]),
        );
        root.insert(
            "output".into(),
            table([
                ("run_dir", text(&out.run_dir.to_string_lossy())),
                ("metrics_format", text(name_of(METRICS_FORMATS, &out.metrics_format))),
            ]),
        );
        toml::to_string(&root).expect("plain tables always serialize")
    }
}

/// Maps a core validation error onto the config key that feeds it.
fn core_config_error(err: ApoError) -> CliError {
    match &err {
        ApoError::Domain { name, detail } => {
            let section = match *name {
                "w_min" | "w_max" => "clipping",
                "tau_anc" | "beta_r" => "training",
                _ => "scheduler",
            };
            CliError::config(format!("{section}.{name}"), detail.clone())
        }
        _ => CliError::Core(err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(err: CliError) -> String {
        match err {
            CliError::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn snapshot_round_trips() {
        let text = "[environment]\nM = 6\nreward_mode = \"bimodal\"\n[training]\nT = 7\nP = 4\neta = 0.3\n\
                    [scheduler]\npolicy = \"ess\"\ngamma = 0.4\n[output]\nmetrics_format = \"csv+jsonl\"\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.environment.m, 6);
        assert_eq!(RunConfig::parse(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("[scheduler]\nalpha_min = 0.9\nalpha_max = 0.5\n", "scheduler.alpha_min"),
            ("[scheduler]\nalpha_max = 1.0\n", "scheduler.alpha_max"),
            ("[scheduler]\npolicy = \"fixed\"\nalpha = 1.0\n", "scheduler.alpha"),
            ("[scheduler]\npolicy = \"ess\"\ngamma = 0.1\n", "scheduler.gamma"),
            ("[scheduler]\nrho = 0\n", "scheduler.rho"),
            ("[training]\nP = 9\n", "training.P"),
            ("[training]\nB = 0\n", "training.B"),
            ("[training]\neta = \"fast\"\n", "training.eta"),
            ("[training]\nT = -1\n", "training.T"),
            ("[environment]\nreward_mode = \"trimodal\"\n", "environment.reward_mode"),
            ("[environment]\nseed = 3\n", "environment.seed"),
            ("[clipping]\nw_min = 2.0\n", "clipping.w_min"),
            ("[plotting]\nx = 1\n", "plotting"),
            ("environment = 3\n", "environment"),
        ];
        for (text, key) in cases {
            assert_eq!(key_of(RunConfig::parse(text).unwrap_err()), key, "{text}");
        }
    }

    #[test]
    fn integers_are_accepted_for_reals() {
        let cfg = RunConfig::parse("[training]\nbeta_r = 2\n").unwrap();
        assert_eq!(cfg.training.beta_r, 2.0);
    }
}
