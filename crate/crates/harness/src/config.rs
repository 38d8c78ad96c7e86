//! Flat key-value experiment configuration.
//!
//! The on-disk format is one `key = value` pair per line with dotted keys,
//! `#` comments and nothing else — no sections, no nesting. Unknown and
//! duplicate keys are rejected outright so a typo cannot silently fall back
//! to a default. [`TrainConfig::canonical`] serializes a resolved config
//! back into this format with every key explicit; that text is embedded in
//! checkpoints and reparsed at evaluation time, so the round trip must be
//! exact (floats are written in shortest round-trip form).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use hmarl_core::algorithm::TargetSync;
use hmarl_core::envs::EnvOverrides;
use hmarl_core::hybrid_action::{ExplorationConfig, LinearSchedule, NoiseKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgoKind {
    PdqnIndependent,
    Mapqn,
    Mahhqn,
}

impl AlgoKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pdqn" | "pdqn-independent" => Ok(AlgoKind::PdqnIndependent),
            "mapqn" => Ok(AlgoKind::Mapqn),
            "mahhqn" => Ok(AlgoKind::Mahhqn),
            other => bail!("unknown algorithm '{other}' (expected pdqn | mapqn | mahhqn)"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlgoKind::PdqnIndependent => "pdqn-independent",
            AlgoKind::Mapqn => "mapqn",
            AlgoKind::Mahhqn => "mahhqn",
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            AlgoKind::PdqnIndependent => 0,
            AlgoKind::Mapqn => 1,
            AlgoKind::Mahhqn => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(AlgoKind::PdqnIndependent),
            1 => Ok(AlgoKind::Mapqn),
            2 => Ok(AlgoKind::Mahhqn),
            other => bail!("unknown algorithm tag {other} in checkpoint"),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algo: AlgoKind,
    pub env: String,
    pub seed: u64,
    pub total_steps: u64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions collected before the first update.
    pub train_start: usize,
    /// Environment steps between updates.
    pub update_period: u64,
    pub value_lr: f64,
    pub policy_lr: f64,
    pub mixing_lr: f64,
    pub target_sync: TargetSync,
    pub explore: ExplorationConfig,
    pub hidden: Vec<usize>,
    pub mixing_width: usize,
    /// Low-level-only warm-up updates for the hierarchical learner.
    pub warmup_updates: u64,
    pub eval_period: u64,
    pub eval_episodes: u64,
    pub env_overrides: EnvOverrides,
}

impl TrainConfig {
    /// Defaults for a given algorithm/environment/seed; schedule lengths are
    /// derived from `total_steps` (exploration decays over half the run, the
    /// warm-up covers a tenth of the planned updates).
    pub fn defaults(algo: AlgoKind, env: &str, seed: u64) -> Self {
        let total_steps = 20_000;
        let mut cfg = TrainConfig {
            algo,
            env: env.to_string(),
            seed,
            total_steps,
            gamma: 0.95,
            batch_size: 64,
            buffer_capacity: 50_000,
            train_start: 256,
            update_period: 1,
            value_lr: 1e-3,
            policy_lr: 1e-4,
            mixing_lr: 1e-3,
            target_sync: TargetSync::Soft { tau: 0.01 },
            explore: ExplorationConfig {
                epsilon: LinearSchedule {
                    start: 1.0,
                    end: 0.05,
                    decay_steps: 0,
                },
                noise: NoiseKind::Gaussian,
                sigma: LinearSchedule {
                    start: 0.3,
                    end: 0.05,
                    decay_steps: 0,
                },
                ou_theta: 0.15,
            },
            hidden: vec![64, 64],
            mixing_width: 32,
            warmup_updates: 0,
            eval_period: 500,
            eval_episodes: 10,
            env_overrides: EnvOverrides::default(),
        };
        cfg.derive_schedule_defaults(true, true, true);
        cfg
    }

    fn planned_updates(&self) -> u64 {
        self.total_steps / self.update_period.max(1)
    }

    fn derive_schedule_defaults(&mut self, eps: bool, sigma: bool, warmup: bool) {
        if eps {
            self.explore.epsilon.decay_steps = self.total_steps / 2;
        }
        if sigma {
            self.explore.sigma.decay_steps = self.total_steps / 2;
        }
        if warmup {
            self.warmup_updates = self.planned_updates() / 10;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            bail!("gamma must lie in [0, 1], got {}", self.gamma);
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            bail!("total_steps, batch_size and buffer_capacity must be positive");
        }
        if self.eval_period == 0 || self.eval_episodes == 0 {
            bail!("eval.period and eval.episodes must be positive");
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            bail!("net.hidden needs at least one positive width");
        }
        if self.mixing_width == 0 {
            bail!("mixing.width must be positive");
        }
        let eps = &self.explore.epsilon;
        if !(0.0..=1.0).contains(&eps.start) || !(0.0..=1.0).contains(&eps.end) {
            bail!("epsilon schedule must stay in [0, 1]");
        }
        if self.explore.sigma.start < 0.0 || self.explore.sigma.end < 0.0 {
            bail!("sigma schedule must be non-negative");
        }
        if let TargetSync::Soft { tau } = self.target_sync {
            if !(0.0..=1.0).contains(&tau) {
                bail!("target.tau must lie in [0, 1]");
            }
        }
        if self.warmup_updates > self.planned_updates() {
            bail!(
                "warmup_updates {} exceeds the planned update count {}",
                self.warmup_updates,
                self.planned_updates()
            );
        }
        Ok(())
    }

    /// Applies a config file over the defaults. CLI-provided algo/env/seed
    /// stay authoritative unless the file sets them explicitly.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeMap::new();
        let mut eps_decay_set = false;
        let mut sigma_decay_set = false;
        let mut warmup_set = false;
        let mut total_steps_set = false;

        for (line_no, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value'", line_no + 1))?;
            let key = key.trim();
            let value = value.trim();
            if let Some(first) = seen.insert(key.to_string(), line_no + 1) {
                bail!("line {}: duplicate key '{key}' (first set on line {first})", line_no + 1);
            }
            let at = |r: Result<()>| r.with_context(|| format!("line {}: key '{key}'", line_no + 1));
            match key {
                "algo" => at(AlgoKind::parse(value).map(|a| self.algo = a))?,
                "env" => self.env = value.to_string(),
                "seed" => at(parse_into(value, &mut self.seed))?,
                "total_steps" => {
                    at(parse_into(value, &mut self.total_steps))?;
                    total_steps_set = true;
                }
                "gamma" => at(parse_into(value, &mut self.gamma))?,
                "batch_size" => at(parse_into(value, &mut self.batch_size))?,
                "buffer_capacity" => at(parse_into(value, &mut self.buffer_capacity))?,
                "train_start" => at(parse_into(value, &mut self.train_start))?,
                "update_period" => at(parse_into(value, &mut self.update_period))?,
                "lr.value" => at(parse_into(value, &mut self.value_lr))?,
                "lr.policy" => at(parse_into(value, &mut self.policy_lr))?,
                "lr.mixing" => at(parse_into(value, &mut self.mixing_lr))?,
                "target.mode" => match value {
                    "soft" => {
                        if !matches!(self.target_sync, TargetSync::Soft { .. }) {
                            self.target_sync = TargetSync::Soft { tau: 0.01 };
                        }
                    }
                    "hard" => {
                        if !matches!(self.target_sync, TargetSync::Hard { .. }) {
                            self.target_sync = TargetSync::Hard { period: 100 };
                        }
                    }
                    other => bail!("line {}: target.mode must be soft or hard, got '{other}'", line_no + 1),
                },
                "target.tau" => {
                    let mut tau = 0.01;
                    at(parse_into(value, &mut tau))?;
                    self.target_sync = TargetSync::Soft { tau };
                }
                "target.period" => {
                    let mut period = 100;
                    at(parse_into(value, &mut period))?;
                    self.target_sync = TargetSync::Hard { period };
                }
                "explore.eps_start" => at(parse_into(value, &mut self.explore.epsilon.start))?,
                "explore.eps_end" => at(parse_into(value, &mut self.explore.epsilon.end))?,
                "explore.eps_decay_steps" => {
                    at(parse_into(value, &mut self.explore.epsilon.decay_steps))?;
                    eps_decay_set = true;
                }
                "explore.noise" => match value {
                    "gaussian" => self.explore.noise = NoiseKind::Gaussian,
                    "ou" => self.explore.noise = NoiseKind::OrnsteinUhlenbeck,
                    other => bail!("line {}: explore.noise must be gaussian or ou, got '{other}'", line_no + 1),
                },
                "explore.sigma_start" => at(parse_into(value, &mut self.explore.sigma.start))?,
                "explore.sigma_end" => at(parse_into(value, &mut self.explore.sigma.end))?,
                "explore.sigma_decay_steps" => {
                    at(parse_into(value, &mut self.explore.sigma.decay_steps))?;
                    sigma_decay_set = true;
                }
                "explore.ou_theta" => at(parse_into(value, &mut self.explore.ou_theta))?,
                "net.hidden" => {
                    let widths: Result<Vec<usize>, _> =
                        value.split(',').map(|w| w.trim().parse::<usize>()).collect();
                    self.hidden = widths
                        .map_err(|e| anyhow!("line {}: net.hidden: {e}", line_no + 1))?;
                }
                "mixing.width" => at(parse_into(value, &mut self.mixing_width))?,
                "warmup_updates" => {
                    at(parse_into(value, &mut self.warmup_updates))?;
                    warmup_set = true;
                }
                "eval.period" => at(parse_into(value, &mut self.eval_period))?,
                "eval.episodes" => at(parse_into(value, &mut self.eval_episodes))?,
                "env.horizon" => {
                    let mut h = 0u64;
                    at(parse_into(value, &mut h))?;
                    self.env_overrides.horizon = Some(h);
                }
                "env.target_x" => {
                    let mut x = 0.0;
                    at(parse_into(value, &mut x))?;
                    let y = self.env_overrides.target.map(|t| t.1).unwrap_or(0.5);
                    self.env_overrides.target = Some((x, y));
                }
                "env.target_y" => {
                    let mut y = 0.0;
                    at(parse_into(value, &mut y))?;
                    let x = self.env_overrides.target.map(|t| t.0).unwrap_or(0.5);
                    self.env_overrides.target = Some((x, y));
                }
                "env.tag_radius" => {
                    let mut r = 0.0;
                    at(parse_into(value, &mut r))?;
                    self.env_overrides.tag_radius = Some(r);
                }
                other => bail!("line {}: unknown key '{other}'", line_no + 1),
            }
        }

        // Schedule lengths follow total_steps unless set explicitly.
        if total_steps_set {
            self.derive_schedule_defaults(!eps_decay_set, !sigma_decay_set, !warmup_set);
        }
        Ok(())
    }

    /// Every key written explicitly in a fixed order; parsing this text
    /// reproduces the config exactly.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("algo", self.algo.name().to_string());
        kv("env", self.env.clone());
        kv("seed", self.seed.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("gamma", format!("{:?}", self.gamma));
        kv("batch_size", self.batch_size.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("train_start", self.train_start.to_string());
        kv("update_period", self.update_period.to_string());
        kv("lr.value", format!("{:?}", self.value_lr));
        kv("lr.policy", format!("{:?}", self.policy_lr));
        kv("lr.mixing", format!("{:?}", self.mixing_lr));
        match self.target_sync {
            TargetSync::Soft { tau } => {
                kv("target.mode", "soft".to_string());
                kv("target.tau", format!("{tau:?}"));
            }
            TargetSync::Hard { period } => {
                kv("target.mode", "hard".to_string());
                kv("target.period", period.to_string());
            }
        }
        kv("explore.eps_start", format!("{:?}", self.explore.epsilon.start));
        kv("explore.eps_end", format!("{:?}", self.explore.epsilon.end));
        kv(
            "explore.eps_decay_steps",
            self.explore.epsilon.decay_steps.to_string(),
        );
        kv(
            "explore.noise",
            match self.explore.noise {
                NoiseKind::Gaussian => "gaussian".to_string(),
                NoiseKind::OrnsteinUhlenbeck => "ou".to_string(),
            },
        );
        kv("explore.sigma_start", format!("{:?}", self.explore.sigma.start));
        kv("explore.sigma_end", format!("{:?}", self.explore.sigma.end));
        kv(
            "explore.sigma_decay_steps",
            self.explore.sigma.decay_steps.to_string(),
        );
        kv("explore.ou_theta", format!("{:?}", self.explore.ou_theta));
        kv(
            "net.hidden",
            self.hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("mixing.width", self.mixing_width.to_string());
        kv("warmup_updates", self.warmup_updates.to_string());
        kv("eval.period", self.eval_period.to_string());
        kv("eval.episodes", self.eval_episodes.to_string());
        if let Some(h) = self.env_overrides.horizon {
            kv("env.horizon", h.to_string());
        }
        if let Some((x, y)) = self.env_overrides.target {
            kv("env.target_x", format!("{x:?}"));
            kv("env.target_y", format!("{y:?}"));
        }
        if let Some(r) = self.env_overrides.tag_radius {
            kv("env.tag_radius", format!("{r:?}"));
        }
        out
    }

    /// Rebuilds a config from canonical text (as stored in checkpoints).
    pub fn from_canonical(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::defaults(AlgoKind::Mapqn, "hybrid_climb", 0);
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_into<T: std::str::FromStr>(value: &str, into: &mut T) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    *into = value
        .parse::<T>()
        .map_err(|e| anyhow!("cannot parse '{value}': {e}"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for algo in [AlgoKind::PdqnIndependent, AlgoKind::Mapqn, AlgoKind::Mahhqn] {
            TrainConfig::defaults(algo, "hybrid_climb", 1).validate().unwrap();
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let mut cfg = TrainConfig::defaults(AlgoKind::Mapqn, "hybrid_climb", 1);
        let err = cfg.apply_str("gamma = 0.9\nlearning_rate = 3\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("unknown key"), "{msg}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let mut cfg = TrainConfig::defaults(AlgoKind::Mapqn, "hybrid_climb", 1);
        let err = cfg.apply_str("gamma = 0.9\ngamma = 0.8\n").unwrap_err();
        assert!(format!("{err:#}").contains("duplicate key"));
    }

    #[test]
    fn schedules_follow_total_steps_unless_pinned() {
        let mut cfg = TrainConfig::defaults(AlgoKind::Mahhqn, "hybrid_climb", 1);
        cfg.apply_str("total_steps = 1000\n").unwrap();
        assert_eq!(cfg.explore.epsilon.decay_steps, 500);
        assert_eq!(cfg.warmup_updates, 100);

        let mut cfg = TrainConfig::defaults(AlgoKind::Mahhqn, "hybrid_climb", 1);
        cfg.apply_str("total_steps = 1000\nwarmup_updates = 7\nexplore.eps_decay_steps = 42\n")
            .unwrap();
        assert_eq!(cfg.explore.epsilon.decay_steps, 42);
        assert_eq!(cfg.explore.sigma.decay_steps, 500);
        assert_eq!(cfg.warmup_updates, 7);
    }

    #[test]
    fn canonical_round_trips_exactly() {
        let mut cfg = TrainConfig::defaults(AlgoKind::Mahhqn, "catch_target", 99);
        cfg.apply_str(
            "gamma = 0.937\nlr.value = 0.00123\ntarget.mode = hard\ntarget.period = 17\nenv.tag_radius = 0.25\nnet.hidden = 32,16\nexplore.noise = ou\n",
        )
        .unwrap();
        let text = cfg.canonical();
        let back = TrainConfig::from_canonical(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.canonical());
    }

    #[test]
    fn invalid_gamma_is_rejected() {
        let mut cfg = TrainConfig::defaults(AlgoKind::Mapqn, "hybrid_climb", 1);
        cfg.apply_str("gamma = 1.5\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
