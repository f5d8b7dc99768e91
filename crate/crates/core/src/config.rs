//! Run configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! env = expr
//! algo = etpo
//! beta = 1.0
//! ```
//!
//! Keys match the CLI flag names (`beta`, `gamma`, `polyak`, `lr`, `seed`,
//! `steps`, `batch`, `buffer`, `mode`, ...). Later assignments win, so CLI
//! overrides are applied by calling [`RunConfig::set`] after loading a file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    Etpo,
    /// Discounts by `gamma` inside actions as well as between them.
    EtpoDisc,
    /// ETPO with the episode step limit forced to 1 (no reflection).
    Etpo1Step,
    PpoKl,
    /// Exact soft value iteration; enumerable environments only.
    Oracle,
}

impl Algo {
    pub const ALL: [Algo; 5] = [
        Algo::Etpo,
        Algo::EtpoDisc,
        Algo::Etpo1Step,
        Algo::PpoKl,
        Algo::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Etpo => "etpo",
            Algo::EtpoDisc => "etpo_disc",
            Algo::Etpo1Step => "etpo_1step",
            Algo::PpoKl => "ppo_kl",
            Algo::Oracle => "oracle",
        }
    }

    pub fn is_etpo(self) -> bool {
        matches!(self, Algo::Etpo | Algo::EtpoDisc | Algo::Etpo1Step)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::config(format!("unknown algo {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Tabular,
    Expr,
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tabular" => Ok(EnvKind::Tabular),
            "expr" => Ok(EnvKind::Expr),
            _ => Err(Error::config(format!("unknown env {s:?}"))),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Tabular => "tabular",
            EnvKind::Expr => "expr",
        })
    }
}

/// Function representation used by the trainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Tabular,
    Parametric,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tabular" => Ok(Mode::Tabular),
            "parametric" => Ok(Mode::Parametric),
            _ => Err(Error::config(format!("unknown mode {s:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Tabular => "tabular",
            Mode::Parametric => "parametric",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// KL coefficient.
    pub beta: f64,
    /// Discount applied between environment steps.
    pub gamma: f64,
    /// Polyak coefficient for the target Q (`target <- polyak*target + (1-polyak)*online`).
    pub polyak: f64,
    pub lr: f64,
    /// Maximum tokens per action; `None` uses the environment default.
    pub max_action_len: Option<usize>,
    /// Episode step limit; `None` uses the environment default.
    pub max_episode_steps: Option<usize>,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub algo: Algo,
    pub env: EnvKind,
    pub mode: Mode,
    /// Environment-step budget.
    pub steps: u64,
    /// Hidden width of parametric nets.
    pub hidden: usize,
    // expression environment
    pub target: i64,
    pub scale: f64,
    // tabular environment
    pub n_states: usize,
    pub vocab_size: usize,
    pub spec_seed: u64,
    pub spec_file: Option<PathBuf>,
    /// Write a checkpoint every this many environment steps (0 disables).
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 0.99,
            polyak: 0.995,
            lr: 1e-3,
            max_action_len: None,
            max_episode_steps: None,
            buffer_capacity: 10_000,
            batch_size: 32,
            seed: 0,
            algo: Algo::Etpo,
            env: EnvKind::Expr,
            mode: Mode::Tabular,
            steps: 2_000,
            hidden: 32,
            target: 42,
            scale: 20.0,
            n_states: 5,
            vocab_size: 3,
            spec_seed: 0,
            spec_file: None,
            checkpoint_every: 0,
        }
    }
}

/// Parameters of one per-token soft backup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackupParams {
    pub beta: f64,
    pub gamma: f64,
    /// Multiplier on within-action bootstrap terms: 1 for ETPO, `gamma` for
    /// the discounted ablation.
    pub within_discount: f64,
}

impl BackupParams {
    pub fn new(beta: f64, gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            within_discount: 1.0,
        }
    }

    pub fn discounted_within(beta: f64, gamma: f64) -> Self {
        Self {
            beta,
            gamma,
            within_discount: gamma,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "polyak" => self.polyak = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "max_action_len" => self.max_action_len = Some(parse(key, value)?),
            "max_episode_steps" => self.max_episode_steps = Some(parse(key, value)?),
            "buffer" | "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "batch" | "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "algo" => self.algo = value.parse()?,
            "env" => self.env = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "steps" => self.steps = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "target" => self.target = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "n_states" => self.n_states = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "spec_seed" => self.spec_seed = parse(key, value)?,
            "spec_file" => self.spec_file = Some(PathBuf::from(value.trim())),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => return Err(Error::config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text, Path::new("<string>"))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text, path)?;
        Ok(cfg)
    }

    fn apply_str(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key, value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(msg)) };
        check(self.beta > 0.0 && self.beta.is_finite(), "beta must be > 0")?;
        check(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "gamma must be in (0, 1]",
        )?;
        check(
            (0.0..1.0).contains(&self.polyak),
            "polyak must be in [0, 1)",
        )?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be > 0")?;
        check(self.batch_size >= 1, "batch must be >= 1")?;
        check(self.buffer_capacity >= 1, "buffer must be >= 1")?;
        check(
            self.batch_size <= self.buffer_capacity,
            "batch must not exceed buffer",
        )?;
        check(
            self.max_action_len != Some(0),
            "max_action_len must be >= 1",
        )?;
        check(
            self.max_episode_steps != Some(0),
            "max_episode_steps must be >= 1",
        )?;
        check(self.hidden >= 1, "hidden must be >= 1")?;
        check(
            self.scale > 0.0 && self.scale.is_finite(),
            "scale must be > 0",
        )?;
        Ok(())
    }

    pub fn backup_params(&self) -> BackupParams {
        match self.algo {
            Algo::EtpoDisc => BackupParams::discounted_within(self.beta, self.gamma),
            _ => BackupParams::new(self.beta, self.gamma),
        }
    }

    /// Serializes to the key-value format, including every key.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("env", self.env.to_string());
        put("algo", self.algo.to_string());
        put("mode", self.mode.to_string());
        put("beta", self.beta.to_string());
        put("gamma", self.gamma.to_string());
        put("polyak", self.polyak.to_string());
        put("lr", self.lr.to_string());
        if let Some(l) = self.max_action_len {
            put("max_action_len", l.to_string());
        }
        if let Some(t) = self.max_episode_steps {
            put("max_episode_steps", t.to_string());
        }
        put("buffer", self.buffer_capacity.to_string());
        put("batch", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("steps", self.steps.to_string());
        put("hidden", self.hidden.to_string());
        put("target", self.target.to_string());
        put("scale", self.scale.to_string());
        put("n_states", self.n_states.to_string());
        put("vocab_size", self.vocab_size.to_string());
        put("spec_seed", self.spec_seed.to_string());
        if let Some(p) = &self.spec_file {
            put("spec_file", p.display().to_string());
        }
        put("checkpoint_every", self.checkpoint_every.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = RunConfig::parse_str(
            "# a run\nenv = tabular\nalgo = ppo-kl  # baseline\nbeta=0.5\n\nbeta = 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.env, EnvKind::Tabular);
        assert_eq!(cfg.algo, Algo::PpoKl);
        assert_eq!(cfg.beta, 0.25);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            RunConfig::parse_str("beta 1.0"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(RunConfig::parse_str("colour = red").is_err());
        assert!(RunConfig::parse_str("beta = abc").is_err());
    }

    #[test]
    fn validation_catches_out_of_range_values() {
        for (k, v) in [
            ("beta", "0"),
            ("gamma", "0"),
            ("gamma", "1.5"),
            ("polyak", "1"),
            ("lr", "-1"),
            ("batch", "0"),
        ] {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            assert!(cfg.validate().is_err(), "{k}={v} accepted");
        }
        let mut cfg = RunConfig::default();
        cfg.set("buffer", "8").unwrap();
        cfg.set("batch", "16").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_string_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("algo", "etpo_disc").unwrap();
        cfg.set("max_action_len", "3").unwrap();
        cfg.set("lr", "0.0125").unwrap();
        assert_eq!(RunConfig::parse_str(&cfg.to_kv_string()).unwrap(), cfg);
    }

    #[test]
    fn disc_algo_discounts_within_actions() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.backup_params().within_discount, 1.0);
        cfg.algo = Algo::EtpoDisc;
        assert_eq!(cfg.backup_params().within_discount, cfg.gamma);
    }
}
