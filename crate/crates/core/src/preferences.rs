//! Preference stores and the three preference mechanisms.
//!
//! All mechanisms keep a concentration/logit vector `d` over state
//! categories and expose the same interface to the planner and runner:
//!
//! * NORE — memories pass through a precision-scaled attention MLP and a
//!   stochastic Gaussian head into a gating GRU whose recurrent state `w`
//!   drives `d ← β·d + α·w` per memory; block parameters then take one
//!   entropy-maximizing Adam step per episode.
//! * Pepper — decayed Hebbian accumulation: exposure counts added onto a
//!   Dirichlet concentration vector.
//! * Baseline — fixed uniform preferences.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::numerics::tensor::{log_softmax_vec, Tensor};
use crate::numerics::{digamma, gaussian_sample, AdamConfig, GruCell, Mlp, NumericsError, ParamSet};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("memory buffer is empty")]
    EmptyBuffer,
    #[error("non-positive Dirichlet concentration {0}")]
    NonPositiveConcentration(f64),
    #[error("preference entropy is non-finite")]
    NonFiniteEntropy,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismKind {
    Nore,
    Pepper,
    BaselineG,
}

impl MechanismKind {
    pub fn label(&self) -> &'static str {
        match self {
            MechanismKind::Nore => "nore",
            MechanismKind::Pepper => "pepper",
            MechanismKind::BaselineG => "baseline-G",
        }
    }

    pub fn parse(s: &str) -> Option<MechanismKind> {
        match s {
            "nore" => Some(MechanismKind::Nore),
            "pepper" => Some(MechanismKind::Pepper),
            "baseline-G" | "baseline" | "baseline-g" => Some(MechanismKind::BaselineG),
            _ => None,
        }
    }
}

/// Learned preference state: concentration (Pepper) or logits (NORE) over
/// state categories, with the update hyperparameters.
#[derive(Debug, Clone)]
pub struct PreferenceStore {
    pub d: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub kind: MechanismKind,
}

impl PreferenceStore {
    /// Uniform Dirichlet initialization: d is the 1-vector.
    pub fn new_uniform(categories: usize, alpha: f64, beta: f64, kind: MechanismKind) -> PreferenceStore {
        PreferenceStore {
            d: vec![1.0; categories],
            alpha,
            beta,
            kind,
        }
    }

    pub fn categories(&self) -> usize {
        self.d.len()
    }
}

/// E of D_i under Dir(d): d_i / Σ_k d_k.
pub fn dirichlet_mean(d: &[f64]) -> Result<Vec<f64>, PreferenceError> {
    for &v in d {
        if !v.is_finite() || v <= 0.0 {
            return Err(PreferenceError::NonPositiveConcentration(v));
        }
    }
    let total: f64 = d.iter().sum();
    Ok(d.iter().map(|v| v / total).collect())
}

/// E of log D_i under Dir(d): ψ(d_i) − ψ(Σ_k d_k).
pub fn dirichlet_log_mean(d: &[f64]) -> Result<Vec<f64>, PreferenceError> {
    for &v in d {
        if !v.is_finite() || v <= 0.0 {
            return Err(PreferenceError::NonPositiveConcentration(v));
        }
    }
    let total: f64 = d.iter().sum();
    let psi_total = digamma(total)?;
    d.iter().map(|v| Ok(digamma(*v)? - psi_total)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemorySource {
    Real,
    Imagined,
}

/// One retained posterior state sample (dims × categories one-hot, flat).
#[derive(Debug, Clone)]
pub struct MemoryEntry {
    pub state: Vec<f64>,
    pub source: MemorySource,
}

/// Shuffled mixture of real and imagined posterior samples consumed by the
/// preference updates.
#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    pub dims: usize,
    pub categories: usize,
    pub entries: Vec<MemoryEntry>,
}

impl MemoryBuffer {
    /// Mean over state dimensions: a length-`categories` exposure vector.
    pub fn aggregate(&self, entry: &MemoryEntry) -> Vec<f64> {
        let mut agg = vec![0.0; self.categories];
        for d in 0..self.dims {
            let row = &entry.state[d * self.categories..(d + 1) * self.categories];
            for (a, v) in agg.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in agg.iter_mut() {
            *a /= self.dims as f64;
        }
        agg
    }
}

/// Keeps ⌈0.3·|real|⌉ uniformly sampled real posteriors, concatenates all
/// imagined ones, and shuffles.
pub fn encode_memories(
    real: &[Vec<f64>],
    imagined: &[Vec<f64>],
    dims: usize,
    categories: usize,
    rng: &mut SeededRng,
) -> Result<MemoryBuffer, PreferenceError> {
    if real.is_empty() && imagined.is_empty() {
        return Err(PreferenceError::EmptyBuffer);
    }
    let keep = (0.3 * real.len() as f64).ceil() as usize;
    let mut picks: Vec<usize> = (0..real.len()).collect();
    picks.shuffle(rng);
    picks.truncate(keep);
    picks.sort_unstable(); // stable episode order before the final shuffle

    let mut entries: Vec<MemoryEntry> = picks
        .into_iter()
        .map(|i| MemoryEntry {
            state: real[i].clone(),
            source: MemorySource::Real,
        })
        .collect();
    entries.extend(imagined.iter().map(|s| MemoryEntry {
        state: s.clone(),
        source: MemorySource::Imagined,
    }));
    entries.shuffle(rng);
    Ok(MemoryBuffer {
        dims,
        categories,
        entries,
    })
}

/// Common interface of the three mechanisms; the planner and runner only
/// ever see this trait.
pub trait PreferenceMechanism {
    fn kind(&self) -> MechanismKind;
    /// Consumes one episode's memory buffer and updates the store.
    fn update(&mut self, buffer: &MemoryBuffer, rng: &mut SeededRng) -> Result<(), PreferenceError>;
    /// Log-probabilities over state categories for the planner's term 2.
    fn preference_logp(&self) -> Result<Vec<f64>, PreferenceError>;
    /// Current concentration/logit snapshot for logging.
    fn concentration(&self) -> Vec<f64>;
}

/// Fixed uniform preferences; the plain expected-free-energy baseline.
pub struct BaselineMechanism {
    categories: usize,
}

impl BaselineMechanism {
    pub fn new(categories: usize) -> BaselineMechanism {
        BaselineMechanism { categories }
    }
}

impl PreferenceMechanism for BaselineMechanism {
    fn kind(&self) -> MechanismKind {
        MechanismKind::BaselineG
    }

    fn update(&mut self, _buffer: &MemoryBuffer, _rng: &mut SeededRng) -> Result<(), PreferenceError> {
        Ok(())
    }

    fn preference_logp(&self) -> Result<Vec<f64>, PreferenceError> {
        Ok(vec![-(self.categories as f64).ln(); self.categories])
    }

    fn concentration(&self) -> Vec<f64> {
        vec![1.0; self.categories]
    }
}

/// Hebbian exposure accumulation on a Dirichlet concentration vector:
/// d ← β·d + α·Σ_memories mean-over-dims(posterior one-hot).
pub struct PepperMechanism {
    pub store: PreferenceStore,
}

impl PepperMechanism {
    pub fn new(categories: usize, alpha: f64, beta: f64) -> PepperMechanism {
        assert!(beta > 0.0 && beta <= 1.0, "memory trace must be in (0, 1]");
        assert!(alpha >= 0.0);
        PepperMechanism {
            store: PreferenceStore::new_uniform(categories, alpha, beta, MechanismKind::Pepper),
        }
    }
}

impl PreferenceMechanism for PepperMechanism {
    fn kind(&self) -> MechanismKind {
        MechanismKind::Pepper
    }

    fn update(&mut self, buffer: &MemoryBuffer, _rng: &mut SeededRng) -> Result<(), PreferenceError> {
        if buffer.entries.is_empty() {
            return Err(PreferenceError::EmptyBuffer);
        }
        let mut exposure = vec![0.0; self.store.categories()];
        for entry in &buffer.entries {
            for (e, a) in exposure.iter_mut().zip(buffer.aggregate(entry)) {
                *e += a;
            }
        }
        for (d, e) in self.store.d.iter_mut().zip(&exposure) {
            *d = self.store.beta * *d + self.store.alpha * e;
            if !d.is_finite() || *d <= 0.0 {
                return Err(PreferenceError::NonPositiveConcentration(*d));
            }
        }
        Ok(())
    }

    fn preference_logp(&self) -> Result<Vec<f64>, PreferenceError> {
        // E[log D] renormalized into a proper log-distribution.
        let lm = dirichlet_log_mean(&self.store.d)?;
        let max = lm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logsum = lm.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        Ok(lm.iter().map(|v| v - logsum).collect())
    }

    fn concentration(&self) -> Vec<f64> {
        self.store.d.clone()
    }
}

#[derive(Debug, Clone)]
pub struct NoreConfig {
    pub alpha: f64,
    pub beta: f64,
    pub attention_hidden: usize,
    pub adam: AdamConfig,
}

impl NoreConfig {
    pub fn for_categories(categories: usize) -> NoreConfig {
        NoreConfig {
            alpha: 0.1,
            beta: 0.9,
            attention_hidden: 2 * categories,
            adam: AdamConfig::default(),
        }
    }
}

/// Attention + gating blocks. The attention MLP maps a precision-scaled
/// exposure vector to the mean and log-variance of a diagonal Gaussian; one
/// sample per memory feeds the gating GRU whose state `w` updates `d`.
pub struct NoreBlocks {
    params: ParamSet,
    attention: Mlp,
    gating: GruCell,
    log_gamma: Tensor,
    /// Final gating state of the most recent sweep (diagnostic).
    pub w: Vec<f64>,
    adam: AdamConfig,
}

impl NoreBlocks {
    fn new(categories: usize, cfg: &NoreConfig, rng: &mut SeededRng) -> NoreBlocks {
        let mut params = ParamSet::new();
        let attention = Mlp::new(
            &mut params,
            "attention",
            &[categories, cfg.attention_hidden, 2 * categories],
            rng,
        );
        let gating = GruCell::new(&mut params, "gating", categories, categories, rng);
        let log_gamma = params.register("log_gamma", Tensor::param(&[1], vec![0.0]));
        NoreBlocks {
            params,
            attention,
            gating,
            log_gamma,
            w: vec![0.0; categories],
            adam: cfg.adam,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.value_at(0).exp()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }
}

pub struct NoreMechanism {
    pub store: PreferenceStore,
    pub blocks: NoreBlocks,
}

struct SweepResult {
    d_final: Tensor,
    w_final: Tensor,
    entropy: Tensor,
}

impl NoreMechanism {
    pub fn new(categories: usize, cfg: &NoreConfig, rng: &mut SeededRng) -> NoreMechanism {
        NoreMechanism {
            store: PreferenceStore::new_uniform(categories, cfg.alpha, cfg.beta, MechanismKind::Nore),
            blocks: NoreBlocks::new(categories, cfg, rng),
        }
    }

    /// One pass over the buffer: per memory, aggregate, scale by γ, attend,
    /// sample the Gaussian head, advance the gating GRU, update d. Returns
    /// the graph for the entropy of softmax(d_final).
    fn sweep(&self, buffer: &MemoryBuffer, rng: &mut SeededRng) -> Result<SweepResult, PreferenceError> {
        if buffer.entries.is_empty() {
            return Err(PreferenceError::EmptyBuffer);
        }
        let cats = self.store.categories();
        let gamma = self.blocks.log_gamma.exp();
        let mut w = Tensor::zeros(&[cats]);
        let mut d = Tensor::constant(&[cats], self.store.d.clone());
        for entry in &buffer.entries {
            let agg = Tensor::constant(&[cats], buffer.aggregate(entry));
            let attended = self.blocks.attention.forward(&agg.scale_by(&gamma))?;
            let mean = attended.narrow(0, cats);
            let logvar = attended.narrow(cats, cats);
            let gate_input = gaussian_sample(&mean, &logvar, rng)?;
            w = self.blocks.gating.step(&gate_input, &w)?;
            d = d.scale(self.store.beta).add(&w.scale(self.store.alpha));
        }
        let p = d.softmax_rows();
        let entropy = p.mul(&d.log_softmax_rows()).sum().neg();
        if !entropy.scalar_value().is_finite() {
            return Err(PreferenceError::NonFiniteEntropy);
        }
        Ok(SweepResult {
            d_final: d,
            w_final: w,
            entropy,
        })
    }

    /// Entropy of softmax(d_final) for a sweep, without updating anything.
    pub fn evaluate_entropy(&self, buffer: &MemoryBuffer, rng: &mut SeededRng) -> Result<f64, PreferenceError> {
        Ok(self.sweep(buffer, rng)?.entropy.scalar_value())
    }

    /// The entropy objective as a graph tensor (for gradient verification
    /// against finite differences; reparameterized sampling makes it a
    /// deterministic function of the parameters for a fixed RNG seed).
    pub fn entropy_objective(&self, buffer: &MemoryBuffer, rng: &mut SeededRng) -> Result<Tensor, PreferenceError> {
        Ok(self.sweep(buffer, rng)?.entropy)
    }
}

impl PreferenceMechanism for NoreMechanism {
    fn kind(&self) -> MechanismKind {
        MechanismKind::Nore
    }

    fn update(&mut self, buffer: &MemoryBuffer, rng: &mut SeededRng) -> Result<(), PreferenceError> {
        self.blocks.params.clear_grads();
        let sweep = self.sweep(buffer, rng)?;

        // One entropy-ascent Adam step on the block parameters; d itself
        // carries the values computed under the pre-step parameters.
        let loss = sweep.entropy.neg();
        loss.backward();
        self.blocks.params.zero_missing_grads();
        let adam = self.blocks.adam;
        self.blocks.params.adam_step(&adam)?;

        let d = sweep.d_final.values();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(PreferenceError::NonFiniteEntropy);
        }
        self.store.d = d;
        self.blocks.w = sweep.w_final.values();
        Ok(())
    }

    fn preference_logp(&self) -> Result<Vec<f64>, PreferenceError> {
        Ok(log_softmax_vec(&self.store.d))
    }

    fn concentration(&self) -> Vec<f64> {
        self.store.d.clone()
    }
}

/// Builds the configured mechanism behind the common interface.
pub fn make_mechanism(
    kind: MechanismKind,
    categories: usize,
    alpha: f64,
    beta: f64,
    rng: &mut SeededRng,
) -> Box<dyn PreferenceMechanism> {
    match kind {
        MechanismKind::Nore => {
            let cfg = NoreConfig {
                alpha,
                beta,
                ..NoreConfig::for_categories(categories)
            };
            Box::new(NoreMechanism::new(categories, &cfg, rng))
        }
        MechanismKind::Pepper => Box::new(PepperMechanism::new(categories, alpha, beta)),
        MechanismKind::BaselineG => Box::new(BaselineMechanism::new(categories)),
    }
}
