//! End-to-end experiment orchestration: world-model pretraining driven by
//! ensemble disagreement, frozen-model preference-learning episodes, and
//! the mechanism × volatility sweep with CSV, figure, and report output.

pub mod config;
pub mod figures;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::env::{GridWorld, LayoutParams, VolatilitySchedule, ACTIONS};
use crate::metrics::{
    all_pairs_mean_hausdorff, pairwise_exploration_scores, MetricsError,
    TrajectoryLog, TrajectoryRow,
};
use crate::numerics::checkpoint::{load_checkpoint, save_checkpoint};
use crate::numerics::tensor::{no_grad, Tensor};
use crate::numerics::{categorical_sample_st, NumericsError};
use crate::planner::{
    select_action_with, uniform_preference_logp, ActionSelection, GBreakdown, PlannerConfig,
    PlannerError,
};
use crate::preferences::{
    encode_memories, make_mechanism, MechanismKind, PreferenceError, PreferenceMechanism,
};
use crate::rng::{seeded_rng, sub_seed, SeededRng};
use crate::rollout::RolloutEvaluator;
use crate::world_model::{Batch, LatentState, Rssm, Sequence, WorldModelError};

pub use config::{parse_config, ConfigError, ExperimentConfig, Profile};
use config::fnv64;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    WorldModel(#[from] WorldModelError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("frozen-model violation: checkpoint checksum changed during the sweep")]
    FrozenModelViolated,
    #[error("pretraining diverged: {0}")]
    Diverged(String),
}

/// The five volatility levels of the sweep. A period of K steps changes the
/// map every K% of a 100-step episode; period 100 is the constant-map end
/// of the scale and period 1 changes every step.
pub const SWEEP_PERIODS: [u32; 5] = [1, 25, 50, 75, 100];

pub const SWEEP_MECHANISMS: [MechanismKind; 3] = [
    MechanismKind::Nore,
    MechanismKind::Pepper,
    MechanismKind::BaselineG,
];

pub fn volatility_label(period: Option<u32>) -> &'static str {
    match period {
        None => "static",
        Some(1) => "every-step",
        Some(25) => "25%",
        Some(50) => "50%",
        Some(75) => "75%",
        Some(100) => "0%",
        Some(_) => "custom",
    }
}

pub fn period_string(period: Option<u32>) -> String {
    period.map_or("never".to_string(), |p| p.to_string())
}

fn layout_params(cfg: &ExperimentConfig) -> LayoutParams {
    LayoutParams {
        width: cfg.grid_width,
        height: cfg.grid_height,
        hole_density: cfg.hole_density,
        subgoal_count: cfg.subgoal_count,
    }
}

fn planner_config(cfg: &ExperimentConfig) -> PlannerConfig {
    PlannerConfig {
        horizon: cfg.planning_horizon,
        candidates: cfg.candidates,
        selection: match cfg.softmax_temperature {
            Some(t) => ActionSelection::SoftmaxNegG { temperature: t },
            None => ActionSelection::ArgMin,
        },
    }
}

pub fn checkpoint_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join("checkpoint.json"), out_dir.join("checkpoint.bin"))
}

/// FNV-64 over manifest and blob bytes; the frozen-model witness.
pub fn checkpoint_checksum(manifest: &Path, blob: &Path) -> Result<u64, RunnerError> {
    let mut bytes = fs::read(manifest)?;
    bytes.extend(fs::read(blob)?);
    Ok(fnv64(&bytes))
}

fn write_lines(path: &Path, header: &str, rows: &[String]) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub train_steps: u64,
    pub initial_elbo: f64,
    pub final_elbo_smoothed: f64,
    pub reconstruction_accuracy: f64,
    pub manifest_path: PathBuf,
    pub blob_path: PathBuf,
}

/// Samples the posterior at (h, obs) and returns the one-hot state.
fn posterior_state(
    model: &Rssm,
    h: &Tensor,
    obs: &[f64],
    rng: &mut SeededRng,
) -> Result<Tensor, RunnerError> {
    no_grad(|| {
        let logits = model.posterior_logits(h, obs)?;
        Ok(categorical_sample_st(&logits, rng).map_err(WorldModelError::from)?)
    })
}

/// Collects environment data with disagreement-driven planning (uniform
/// preferences, so term 2 carries no preference signal) and interleaves
/// world-model training, then checkpoints.
pub fn pretrain_world_model(cfg: &ExperimentConfig) -> Result<PretrainReport, RunnerError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut model_rng = seeded_rng(sub_seed(cfg.seed, "pretrain-model"));
    let mut model = Rssm::new(cfg.rssm(), &mut model_rng);
    let mut env = GridWorld::new(
        layout_params(cfg),
        VolatilitySchedule {
            reset_period: cfg.pretrain_layout_period,
            randomize_start: cfg.pretrain_randomize_start,
        },
        sub_seed(cfg.seed, "pretrain-env"),
    )?;
    let mut rng = seeded_rng(sub_seed(cfg.seed, "pretrain"));
    let uniform = uniform_preference_logp(cfg.state_categories);
    let plan_cfg = planner_config(cfg);

    let mut replay: Vec<Sequence> = Vec::new();
    let mut diag_rows: Vec<String> = Vec::new();
    let mut recent: Vec<f64> = Vec::new();
    let mut initial_elbo = f64::NAN;
    let mut train_steps = 0u64;

    for _round in 0..cfg.pretrain_rounds {
        // One episode of collection, segmented at the periodic agent-position
        // reset so every stored sequence has consistent dynamics. Weights
        // only change between rounds, so one evaluator per round suffices.
        let mut eval = RolloutEvaluator::new(&model);
        let mut obs = env.reset();
        let mut h = model.initial_state().h;
        let mut s = posterior_state(&model, &h, &obs.bits, &mut rng)?;
        let seg_len = cfg.reset_agent_every.clamp(1, cfg.episode_length);
        let segments = (cfg.episode_length / seg_len).max(1);
        for _seg in 0..segments {
            let mut seq = Sequence {
                observations: vec![obs.bits.clone()],
                actions: Vec::new(),
            };
            for _ in 0..seg_len {
                let latent = LatentState { h: h.clone(), s: s.clone() };
                let (action, _) = select_action_with(&mut eval, &latent, &uniform, &plan_cfg, &mut rng)?;
                let out = env.step(action);
                seq.actions.push(action);
                seq.observations.push(out.observation.bits.clone());
                h = no_grad(|| model.recurrent_step(&h, &s, action))?;
                s = posterior_state(&model, &h, &out.observation.bits, &mut rng)?;
            }
            replay.push(seq);
            env.return_agent_to_start();
            obs = env.observe();
            // Re-encode from the boundary state after the teleport.
            h = model.initial_state().h;
            s = posterior_state(&model, &h, &obs.bits, &mut rng)?;
        }
        if replay.len() > 400 {
            let excess = replay.len() - 400;
            replay.drain(..excess);
        }

        for _k in 0..cfg.pretrain_steps_per_round {
            let batch = Batch {
                sequences: (0..cfg.batch_size.min(replay.len()))
                    .map(|_| replay[rng.random_range(0..replay.len())].clone())
                    .collect(),
            };
            let diag = model.train_step(&batch, sub_seed(cfg.seed, &format!("train{train_steps}")))?;
            if !diag.loss.is_finite() {
                return Err(RunnerError::Diverged(format!("loss at step {train_steps}")));
            }
            if train_steps == 0 {
                initial_elbo = diag.loss;
            }
            diag_rows.push(format!(
                "{},{},{},{},{}",
                train_steps, diag.loss, diag.recon_nll, diag.kl, diag.disagreement_mean
            ));
            recent.push(diag.loss);
            if recent.len() > 20 {
                recent.remove(0);
            }
            train_steps += 1;
        }
    }

    write_lines(
        &cfg.out_dir.join("pretrain_log.csv"),
        "step,elbo,recon_nll,kl,disagreement_mean",
        &diag_rows,
    )?;

    // Accuracy probe: a fresh rollout with random actions.
    let mut probe_rng = seeded_rng(sub_seed(cfg.seed, "pretrain-probe"));
    let mut obs = env.reset();
    let mut h = model.initial_state().h;
    let mut s = posterior_state(&model, &h, &obs.bits, &mut probe_rng)?;
    let mut acc = 0.0;
    let probe_steps = 50;
    for _ in 0..probe_steps {
        acc += model.reconstruction_accuracy(&h, &s, &obs.bits)?;
        let action = ACTIONS[probe_rng.random_range(0..4)];
        let out = env.step(action);
        h = no_grad(|| model.recurrent_step(&h, &s, action))?;
        s = posterior_state(&model, &h, &out.observation.bits, &mut probe_rng)?;
        obs = out.observation;
    }
    let reconstruction_accuracy = acc / probe_steps as f64;

    let (manifest_path, blob_path) = checkpoint_paths(&cfg.out_dir);
    save_checkpoint(model.params(), &manifest_path, &blob_path)?;

    let final_elbo_smoothed = if recent.is_empty() {
        initial_elbo
    } else {
        recent.iter().sum::<f64>() / recent.len() as f64
    };
    Ok(PretrainReport {
        train_steps,
        initial_elbo,
        final_elbo_smoothed,
        reconstruction_accuracy,
        manifest_path,
        blob_path,
    })
}

/// Everything one preference-learning episode produces.
pub struct EpisodeRecord {
    pub trajectory: TrajectoryLog,
    pub g_breakdowns: Vec<GBreakdown>,
    pub concentration: Vec<f64>,
    pub entropy: f64,
}

/// Runs one episode with planner actions, then the imagination phase with
/// uniformly random actions, memory re-coding, and the mechanism's
/// preference update.
pub fn run_episode(
    model: &Rssm,
    eval: &mut RolloutEvaluator,
    mechanism: &mut dyn PreferenceMechanism,
    env: &mut GridWorld,
    cfg: &ExperimentConfig,
    rng: &mut SeededRng,
    episode: usize,
) -> Result<EpisodeRecord, RunnerError> {
    assert!(model.is_frozen(), "preference episodes require a frozen model");
    let plan_cfg = planner_config(cfg);
    let pref_logp = mechanism.preference_logp()?;

    let obs0 = env.reset();
    let mut h = model.initial_state().h;
    let mut s = posterior_state(model, &h, &obs0.bits, rng)?;

    let mut real_posteriors: Vec<Vec<f64>> = Vec::with_capacity(cfg.episode_length);
    let mut rows = Vec::with_capacity(cfg.episode_length);
    let mut g_breakdowns = Vec::with_capacity(cfg.episode_length);

    for step in 0..cfg.episode_length {
        real_posteriors.push(s.values());
        let latent = LatentState { h: h.clone(), s: s.clone() };
        let (action, breakdown) = select_action_with(eval, &latent, &pref_logp, &plan_cfg, rng)?;
        let out = env.step(action);
        let (row, col) = env.agent_pos();
        rows.push(TrajectoryRow {
            step,
            x: col,
            y: row,
            action,
            g_value: breakdown.total,
            hole_reset: out.hole_reset,
        });
        g_breakdowns.push(breakdown);
        h = no_grad(|| model.recurrent_step(&h, &s, action))?;
        s = posterior_state(model, &h, &out.observation.bits, rng)?;
    }

    // Imagination: uniformly random actions through the prior.
    let mut imagined: Vec<Vec<f64>> = Vec::with_capacity(cfg.imagination_steps);
    for _ in 0..cfg.imagination_steps {
        let action = ACTIONS[rng.random_range(0..4)];
        h = no_grad(|| model.recurrent_step(&h, &s, action))?;
        let prior = no_grad(|| model.prior_logits(&h))?;
        s = no_grad(|| categorical_sample_st(&prior, rng)).map_err(WorldModelError::from)?;
        imagined.push(s.values());
    }

    let buffer = encode_memories(
        &real_posteriors,
        &imagined,
        cfg.state_dims,
        cfg.state_categories,
        rng,
    )?;
    mechanism.update(&buffer, rng)?;

    let concentration = mechanism.concentration();
    let logp = mechanism.preference_logp()?;
    let probs: Vec<f64> = logp.iter().map(|lp| lp.exp()).collect();
    let entropy = crate::numerics::entropy_categorical(&probs)
        .map_err(PreferenceError::Numerics)?;

    Ok(EpisodeRecord {
        trajectory: TrajectoryLog { episode, rows },
        g_breakdowns,
        concentration,
        entropy,
    })
}

/// One (mechanism, volatility) cell of the sweep.
pub struct RunRecord {
    pub mechanism: MechanismKind,
    pub reset_period: Option<u32>,
    pub config_hash: u64,
    pub cell_dir: PathBuf,
    pub trajectories: Vec<Vec<(f64, f64)>>,
    pub entropies: Vec<f64>,
    pub concentrations: Vec<Vec<f64>>,
}

impl RunRecord {
    pub fn label(&self) -> String {
        format!(
            "{}_{}",
            self.mechanism.label(),
            match self.reset_period {
                None => "static".to_string(),
                Some(p) => format!("p{p}"),
            }
        )
    }
}

/// Runs `cfg.episodes` episodes for one mechanism × schedule cell against a
/// frozen model, writing the per-step and per-episode CSVs.
pub fn run_cell(
    model: &Rssm,
    cfg: &ExperimentConfig,
    mechanism_kind: MechanismKind,
    reset_period: Option<u32>,
    randomize_start: bool,
) -> Result<RunRecord, RunnerError> {
    let cell_tag = format!("{}:{}", mechanism_kind.label(), period_string(reset_period));
    let mut env = GridWorld::new(
        layout_params(cfg),
        VolatilitySchedule {
            reset_period,
            randomize_start,
        },
        sub_seed(cfg.seed, &format!("env:{cell_tag}")),
    )?;
    let mut rng = seeded_rng(sub_seed(cfg.seed, &format!("run:{cell_tag}")));
    let mut mech_rng = seeded_rng(sub_seed(cfg.seed, &format!("mech:{cell_tag}")));
    let mut mechanism = make_mechanism(
        mechanism_kind,
        cfg.state_categories,
        cfg.alpha,
        cfg.beta,
        &mut mech_rng,
    );

    let mut record = RunRecord {
        mechanism: mechanism_kind,
        reset_period,
        config_hash: cfg.hash(),
        cell_dir: cfg.out_dir.join("runs"),
        trajectories: Vec::new(),
        entropies: Vec::new(),
        concentrations: Vec::new(),
    };
    record.cell_dir = record.cell_dir.join(record.label());
    fs::create_dir_all(&record.cell_dir)?;

    let mut step_rows: Vec<String> = Vec::new();
    let mut pref_rows: Vec<String> = Vec::new();
    let mut eval = RolloutEvaluator::new(model);

    for episode in 0..cfg.episodes {
        let rec = run_episode(model, &mut eval, mechanism.as_mut(), &mut env, cfg, &mut rng, episode)?;
        assert_eq!(rec.trajectory.rows.len(), cfg.episode_length);
        for (row, gb) in rec.trajectory.rows.iter().zip(&rec.g_breakdowns) {
            step_rows.push(format!(
                "{},{},{},{},{},{},{},{},{},{}",
                episode,
                row.step,
                row.x,
                row.y,
                row.action.index(),
                row.g_value,
                gb.term1_total,
                gb.term2_total,
                gb.term3_total,
                row.hole_reset as u8
            ));
        }
        let d_list = rec
            .concentration
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        pref_rows.push(format!("{episode},{d_list}"));

        record.trajectories.push(rec.trajectory.points());
        record.entropies.push(rec.entropy);
        record.concentrations.push(rec.concentration);
    }

    let d_header: Vec<String> = (0..cfg.state_categories).map(|c| format!("d_{c}")).collect();
    write_lines(
        &record.cell_dir.join("steps.csv"),
        "episode,step,x,y,action,g_total,term1,term2,term3,hole_reset",
        &step_rows,
    )?;
    write_lines(
        &record.cell_dir.join("preferences.csv"),
        &format!("episode,{}", d_header.join(",")),
        &pref_rows,
    )?;
    Ok(record)
}

pub struct SweepReport {
    pub records: Vec<RunRecord>,
    pub exploration_csv: PathBuf,
    pub entropy_csv: PathBuf,
    pub report_path: PathBuf,
    pub checksum_before: u64,
    pub checksum_after: u64,
}

fn flush_aggregates(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
) -> Result<(PathBuf, PathBuf), RunnerError> {
    let mut exploration_rows: Vec<String> = Vec::new();
    let mut entropy_rows: Vec<String> = Vec::new();
    for record in records {
        let label = volatility_label(record.reset_period);
        let period = period_string(record.reset_period);
        if record.trajectories.len() >= 2 {
            let scores = pairwise_exploration_scores(&record.trajectories)?;
            let all_pairs = all_pairs_mean_hausdorff(&record.trajectories)?;
            for (pair, score) in scores.iter().enumerate() {
                exploration_rows.push(format!(
                    "{},{},{},{},{},{}",
                    label,
                    period,
                    record.mechanism.label(),
                    pair,
                    score,
                    all_pairs
                ));
            }
        }
        for (episode, h) in record.entropies.iter().enumerate() {
            entropy_rows.push(format!(
                "{},{},{},{},{}",
                label,
                period,
                episode,
                h,
                record.mechanism.label()
            ));
        }
    }
    let exploration_csv = cfg.out_dir.join("exploration.csv");
    let entropy_csv = cfg.out_dir.join("entropy.csv");
    write_lines(
        &exploration_csv,
        "volatility,reset_period,mechanism,episode_pair,hausdorff,allpairs_mean",
        &exploration_rows,
    )?;
    write_lines(
        &entropy_csv,
        "volatility,reset_period,episode,entropy,mechanism",
        &entropy_rows,
    )?;
    Ok((exploration_csv, entropy_csv))
}

/// Loads the pretrained checkpoint, freezes the model, and runs every
/// mechanism × reset-period cell. Aggregate CSVs are rewritten after each
/// cell so partial results survive an abort.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, RunnerError> {
    cfg.validate()?;
    let (manifest_path, blob_path) = checkpoint_paths(&cfg.out_dir);
    if !manifest_path.exists() || !blob_path.exists() {
        return Err(RunnerError::MissingCheckpoint(manifest_path));
    }
    let checksum_before = checkpoint_checksum(&manifest_path, &blob_path)?;

    let mut model_rng = seeded_rng(sub_seed(cfg.seed, "pretrain-model"));
    let mut model = Rssm::new(cfg.rssm(), &mut model_rng);
    load_checkpoint(model.params(), &manifest_path, &blob_path)?;
    model.freeze();

    let mut records = Vec::new();
    for mechanism in SWEEP_MECHANISMS {
        for period in SWEEP_PERIODS {
            let record = run_cell(&model, cfg, mechanism, Some(period), true)?;
            records.push(record);
            flush_aggregates(cfg, &records)?;
        }
    }
    let (exploration_csv, entropy_csv) = flush_aggregates(cfg, &records)?;

    figures::emit_figures(&cfg.out_dir, &records)?;
    let report_path = write_report(cfg)?;

    let checksum_after = checkpoint_checksum(&manifest_path, &blob_path)?;
    if checksum_after != checksum_before {
        return Err(RunnerError::FrozenModelViolated);
    }

    Ok(SweepReport {
        records,
        exploration_csv,
        entropy_csv,
        report_path,
        checksum_before,
        checksum_after,
    })
}

/// Loads the checkpoint and runs the single cell described by the config.
pub fn run_single(cfg: &ExperimentConfig) -> Result<RunRecord, RunnerError> {
    cfg.validate()?;
    let (manifest_path, blob_path) = checkpoint_paths(&cfg.out_dir);
    if !manifest_path.exists() || !blob_path.exists() {
        return Err(RunnerError::MissingCheckpoint(manifest_path));
    }
    let mut model_rng = seeded_rng(sub_seed(cfg.seed, "pretrain-model"));
    let mut model = Rssm::new(cfg.rssm(), &mut model_rng);
    load_checkpoint(model.params(), &manifest_path, &blob_path)?;
    model.freeze();
    let record = run_cell(&model, cfg, cfg.mechanism, cfg.reset_period, cfg.randomize_start)?;
    flush_aggregates(cfg, std::slice::from_ref(&record))?;
    figures::emit_figures(&cfg.out_dir, std::slice::from_ref(&record))?;
    write_report(cfg)?;
    Ok(record)
}

/// Writes `report.txt` listing every CSV and SVG under the output
/// directory, plus the config hash.
pub fn write_report(cfg: &ExperimentConfig) -> Result<PathBuf, RunnerError> {
    let mut files = Vec::new();
    collect_outputs(&cfg.out_dir, &cfg.out_dir, &mut files)?;
    files.sort();
    let path = cfg.out_dir.join("report.txt");
    let mut f = fs::File::create(&path)?;
    writeln!(f, "config_hash = {:016x}", cfg.hash())?;
    writeln!(f, "profile = {}", cfg.profile.label())?;
    writeln!(f, "seed = {}", cfg.seed)?;
    let (manifest_path, blob_path) = checkpoint_paths(&cfg.out_dir);
    if manifest_path.exists() && blob_path.exists() {
        writeln!(f, "checkpoint = checkpoint.json + checkpoint.bin")?;
        writeln!(
            f,
            "checkpoint_checksum = {:016x}",
            checkpoint_checksum(&manifest_path, &blob_path)?
        )?;
    }
    writeln!(f, "outputs:")?;
    for file in &files {
        writeln!(f, "  {file}")?;
    }
    Ok(path)
}

fn collect_outputs(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), RunnerError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_outputs(root, &path, out)?;
        } else if let Some(ext) = path.extension() {
            if ext == "csv" || ext == "svg" {
                out.push(path.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    Ok(())
}

/// Entropy time series of a run's preference snapshots (via each
/// mechanism's log-probabilities this is already applied upstream; here the
/// stored per-episode entropies are exposed for reporting).
pub fn record_entropy_series(record: &RunRecord) -> Vec<(usize, f64)> {
    record.entropies.iter().enumerate().map(|(e, h)| (e, *h)).collect()
}
