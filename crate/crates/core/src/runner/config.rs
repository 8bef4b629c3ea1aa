//! Experiment configuration: profiles, defaults, and the plain-text
//! `key = value` config format with `[section]` headers. Unknown sections
//! or keys are errors.

use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::AdamConfig;
use crate::preferences::MechanismKind;
use crate::world_model::RssmConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown section `[{0}]`")]
    UnknownSection(String),
    #[error("unknown key `{key}` in section `[{section}]`")]
    UnknownKey { section: String, key: String },
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("malformed line {line}: `{text}`")]
    MalformedLine { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn label(&self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Option<Profile> {
        match s {
            "desk" => Some(Profile::Desk),
            "paper" => Some(Profile::Paper),
            _ => None,
        }
    }
}

/// Full experiment configuration. Field defaults mirror the reference
/// training setup (planning horizon 15, episode length 100, 50 episodes,
/// agent reset every 10 pretraining steps, 5 ensemble members); the profile
/// scales the grid and latent sizes.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub mechanism: MechanismKind,
    /// Layout regeneration period in steps; `None` is a static environment.
    pub reset_period: Option<u32>,
    pub randomize_start: bool,
    pub seed: u64,
    pub episodes: usize,
    pub episode_length: usize,
    pub out_dir: PathBuf,

    pub grid_width: usize,
    pub grid_height: usize,
    pub hole_density: f64,
    pub subgoal_count: usize,

    pub state_dims: usize,
    pub state_categories: usize,
    pub deter_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub ensemble_size: usize,
    pub learning_rate: f64,
    pub kl_balance: f64,
    pub free_bits: f64,

    pub planning_horizon: usize,
    pub candidates: usize,
    /// `Some(t)` samples actions by softmax(−G/t) instead of argmin.
    pub softmax_temperature: Option<f64>,

    pub alpha: f64,
    pub beta: f64,
    pub imagination_steps: usize,

    pub pretrain_rounds: usize,
    pub pretrain_steps_per_round: usize,
    pub batch_size: usize,
    pub reset_agent_every: usize,
    /// Layout regeneration period during pretraining data collection.
    pub pretrain_layout_period: Option<u32>,
    pub pretrain_randomize_start: bool,
}

impl ExperimentConfig {
    pub fn desk() -> ExperimentConfig {
        ExperimentConfig {
            profile: Profile::Desk,
            mechanism: MechanismKind::Nore,
            reset_period: None,
            randomize_start: false,
            seed: 0,
            episodes: 50,
            episode_length: 100,
            out_dir: PathBuf::from("out"),

            grid_width: 4,
            grid_height: 4,
            hole_density: 0.25,
            subgoal_count: 2,

            state_dims: 8,
            state_categories: 16,
            deter_size: 24,
            embed_size: 24,
            hidden_size: 40,
            ensemble_size: 5,
            learning_rate: 1e-3,
            kl_balance: 0.8,
            free_bits: 1.0,

            planning_horizon: 15,
            candidates: 64,
            softmax_temperature: None,

            alpha: 0.1,
            beta: 0.9,
            imagination_steps: 15,

            pretrain_rounds: 16,
            pretrain_steps_per_round: 60,
            batch_size: 8,
            reset_agent_every: 10,
            pretrain_layout_period: Some(100),
            pretrain_randomize_start: true,
        }
    }

    pub fn paper() -> ExperimentConfig {
        ExperimentConfig {
            profile: Profile::Paper,
            grid_width: 8,
            grid_height: 8,
            state_dims: 50,
            state_categories: 64,
            deter_size: 200,
            embed_size: 128,
            hidden_size: 200,
            pretrain_rounds: 100,
            pretrain_steps_per_round: 100,
            batch_size: 16,
            ..ExperimentConfig::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> ExperimentConfig {
        match profile {
            Profile::Desk => ExperimentConfig::desk(),
            Profile::Paper => ExperimentConfig::paper(),
        }
    }

    pub fn observation_len(&self) -> usize {
        self.grid_width * self.grid_height * crate::env::OBS_CHANNELS
    }

    pub fn rssm(&self) -> RssmConfig {
        RssmConfig {
            state_dims: self.state_dims,
            state_categories: self.state_categories,
            deter_size: self.deter_size,
            embed_size: self.embed_size,
            hidden_size: self.hidden_size,
            ensemble_size: self.ensemble_size,
            obs_len: self.observation_len(),
            kl_balance: Some(self.kl_balance),
            free_bits: self.free_bits,
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
        }
    }

    /// Canonical `section.key = value` listing; also the config-hash input.
    pub fn canonical_string(&self) -> String {
        let period = |p: &Option<u32>| p.map_or("never".to_string(), |v| v.to_string());
        let temp = self
            .softmax_temperature
            .map_or("none".to_string(), |v| v.to_string());
        format!(
            "experiment.profile = {}\n\
             experiment.mechanism = {}\n\
             experiment.reset_period = {}\n\
             experiment.randomize_start = {}\n\
             experiment.seed = {}\n\
             experiment.episodes = {}\n\
             experiment.episode_length = {}\n\
             environment.grid_width = {}\n\
             environment.grid_height = {}\n\
             environment.hole_density = {}\n\
             environment.subgoal_count = {}\n\
             model.state_dims = {}\n\
             model.state_categories = {}\n\
             model.deter_size = {}\n\
             model.embed_size = {}\n\
             model.hidden_size = {}\n\
             model.ensemble_size = {}\n\
             model.learning_rate = {}\n\
             model.kl_balance = {}\n\
             model.free_bits = {}\n\
             planner.planning_horizon = {}\n\
             planner.candidates = {}\n\
             planner.softmax_temperature = {}\n\
             preferences.alpha = {}\n\
             preferences.beta = {}\n\
             preferences.imagination_steps = {}\n\
             pretrain.rounds = {}\n\
             pretrain.steps_per_round = {}\n\
             pretrain.batch_size = {}\n\
             pretrain.reset_agent_every = {}\n\
             pretrain.layout_period = {}\n\
             pretrain.randomize_start = {}\n",
            self.profile.label(),
            self.mechanism.label(),
            period(&self.reset_period),
            self.randomize_start,
            self.seed,
            self.episodes,
            self.episode_length,
            self.grid_width,
            self.grid_height,
            self.hole_density,
            self.subgoal_count,
            self.state_dims,
            self.state_categories,
            self.deter_size,
            self.embed_size,
            self.hidden_size,
            self.ensemble_size,
            self.learning_rate,
            self.kl_balance,
            self.free_bits,
            self.planning_horizon,
            self.candidates,
            temp,
            self.alpha,
            self.beta,
            self.imagination_steps,
            self.pretrain_rounds,
            self.pretrain_steps_per_round,
            self.batch_size,
            self.reset_agent_every,
            period(&self.pretrain_layout_period),
            self.pretrain_randomize_start,
        )
    }

    pub fn hash(&self) -> u64 {
        fnv64(self.canonical_string().as_bytes())
    }

    /// Sanity checks on counts and rates; runner entry points call this
    /// before touching the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&str, usize); 10] = [
            ("episodes", self.episodes),
            ("episode_length", self.episode_length),
            ("grid_width", self.grid_width),
            ("grid_height", self.grid_height),
            ("state_dims", self.state_dims),
            ("state_categories", self.state_categories),
            ("planning_horizon", self.planning_horizon),
            ("candidates", self.candidates),
            ("imagination_steps", self.imagination_steps),
            ("batch_size", self.batch_size),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(ConfigError::BadValue {
                    key: key.into(),
                    value: "0".into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if self.ensemble_size < 2 {
            return Err(ConfigError::BadValue {
                key: "ensemble_size".into(),
                value: self.ensemble_size.to_string(),
                reason: "ensemble needs at least 2 members".into(),
            });
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(ConfigError::BadValue {
                key: "beta".into(),
                value: self.beta.to_string(),
                reason: "memory trace must be in (0, 1]".into(),
            });
        }
        if self.alpha < 0.0 {
            return Err(ConfigError::BadValue {
                key: "alpha".into(),
                value: self.alpha.to_string(),
                reason: "learning rate must be non-negative".into(),
            });
        }
        Ok(())
    }
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: v.into(),
        reason: "expected a non-negative integer".into(),
    })
}

fn parse_u64(key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: v.into(),
        reason: "expected a non-negative integer".into(),
    })
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: v.into(),
        reason: "expected a number".into(),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: v.into(),
            reason: "expected true or false".into(),
        }),
    }
}

fn parse_period(key: &str, v: &str) -> Result<Option<u32>, ConfigError> {
    if v == "never" || v == "none" || v == "static" {
        return Ok(None);
    }
    let p: u32 = v.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: v.into(),
        reason: "expected a step count or `never`".into(),
    })?;
    if p == 0 {
        return Err(ConfigError::BadValue {
            key: key.into(),
            value: v.into(),
            reason: "period must be >= 1".into(),
        });
    }
    Ok(Some(p))
}

/// Parses the sectioned `key = value` format. A `profile` key (if present)
/// is applied first so later keys override profile defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    // First pass: pick the base profile.
    let mut profile = Profile::Desk;
    for line in text.lines() {
        let line = strip_comment(line);
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "profile" {
                profile = Profile::parse(v.trim()).ok_or_else(|| ConfigError::BadValue {
                    key: "profile".into(),
                    value: v.trim().into(),
                    reason: "expected `desk` or `paper`".into(),
                })?;
            }
        }
    }
    let mut cfg = ExperimentConfig::for_profile(profile);

    let mut section = String::from("experiment");
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            match section.as_str() {
                "experiment" | "environment" | "model" | "planner" | "preferences" | "pretrain" => {}
                _ => return Err(ConfigError::UnknownSection(section)),
            }
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::MalformedLine {
                line: idx + 1,
                text: raw.to_string(),
            });
        };
        let key = k.trim();
        let value = v.trim();
        apply_key(&mut cfg, &section, key, value)?;
    }
    Ok(cfg)
}

fn strip_comment(line: &str) -> &str {
    let line = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    line.trim()
}

fn apply_key(
    cfg: &mut ExperimentConfig,
    section: &str,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let unknown = || ConfigError::UnknownKey {
        section: section.to_string(),
        key: key.to_string(),
    };
    match (section, key) {
        ("experiment", "profile") => {} // applied in the first pass
        ("experiment", "mechanism") => {
            cfg.mechanism = MechanismKind::parse(value).ok_or_else(|| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                reason: "expected nore, pepper, or baseline-G".into(),
            })?;
        }
        ("experiment", "reset_period") => cfg.reset_period = parse_period(key, value)?,
        ("experiment", "randomize_start") => cfg.randomize_start = parse_bool(key, value)?,
        ("experiment", "seed") => cfg.seed = parse_u64(key, value)?,
        ("experiment", "episodes") => cfg.episodes = parse_usize(key, value)?,
        ("experiment", "episode_length") => cfg.episode_length = parse_usize(key, value)?,
        ("experiment", "out_dir") => cfg.out_dir = PathBuf::from(value),
        ("environment", "grid_width") => cfg.grid_width = parse_usize(key, value)?,
        ("environment", "grid_height") => cfg.grid_height = parse_usize(key, value)?,
        ("environment", "hole_density") => cfg.hole_density = parse_f64(key, value)?,
        ("environment", "subgoal_count") => cfg.subgoal_count = parse_usize(key, value)?,
        ("model", "state_dims") => cfg.state_dims = parse_usize(key, value)?,
        ("model", "state_categories") => cfg.state_categories = parse_usize(key, value)?,
        ("model", "deter_size") => cfg.deter_size = parse_usize(key, value)?,
        ("model", "embed_size") => cfg.embed_size = parse_usize(key, value)?,
        ("model", "hidden_size") => cfg.hidden_size = parse_usize(key, value)?,
        ("model", "ensemble_size") => cfg.ensemble_size = parse_usize(key, value)?,
        ("model", "learning_rate") => cfg.learning_rate = parse_f64(key, value)?,
        ("model", "kl_balance") => cfg.kl_balance = parse_f64(key, value)?,
        ("model", "free_bits") => cfg.free_bits = parse_f64(key, value)?,
        ("planner", "planning_horizon") => cfg.planning_horizon = parse_usize(key, value)?,
        ("planner", "candidates") => cfg.candidates = parse_usize(key, value)?,
        ("planner", "softmax_temperature") => {
            cfg.softmax_temperature = if value == "none" {
                None
            } else {
                Some(parse_f64(key, value)?)
            };
        }
        ("preferences", "alpha") => cfg.alpha = parse_f64(key, value)?,
        ("preferences", "beta") => cfg.beta = parse_f64(key, value)?,
        ("preferences", "imagination_steps") => cfg.imagination_steps = parse_usize(key, value)?,
        ("pretrain", "rounds") => cfg.pretrain_rounds = parse_usize(key, value)?,
        ("pretrain", "steps_per_round") => cfg.pretrain_steps_per_round = parse_usize(key, value)?,
        ("pretrain", "batch_size") => cfg.batch_size = parse_usize(key, value)?,
        ("pretrain", "reset_agent_every") => cfg.reset_agent_every = parse_usize(key, value)?,
        ("pretrain", "layout_period") => cfg.pretrain_layout_period = parse_period(key, value)?,
        ("pretrain", "randomize_start") => cfg.pretrain_randomize_start = parse_bool(key, value)?,
        _ => return Err(unknown()),
    }
    Ok(())
}
