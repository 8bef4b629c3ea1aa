//! Recurrent state-space world model: GRU deterministic core, categorical
//! posterior/prior heads, and an ensemble of Bernoulli observation decoders.
//! Trained by ELBO (reconstruction + KL); the spread of the decoder
//! ensemble provides a disagreement signal used as the intrinsic drive
//! during pretraining.

use thiserror::Error;

use crate::env::Action;
use crate::numerics::tensor::{no_grad, sigmoid, Tensor};
use crate::numerics::{categorical_sample_st, AdamConfig, GruCell, Mlp, NumericsError, ParamSet};
use crate::rng::{seeded_rng, SeededRng};

#[derive(Debug, Error)]
pub enum WorldModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("bad batch: {0}")]
    BadBatch(String),
    #[error("non-finite {term} at sequence step {step}")]
    NonFiniteTerm { term: &'static str, step: usize },
    #[error("model is frozen; training is disabled")]
    Frozen,
}

#[derive(Debug, Clone)]
pub struct RssmConfig {
    pub state_dims: usize,
    pub state_categories: usize,
    pub deter_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub ensemble_size: usize,
    pub obs_len: usize,
    /// Weight on the prior-side KL gradient; `None` trains the plain KL.
    pub kl_balance: Option<f64>,
    /// Floor (nats) on the per-step KL term of the loss.
    pub free_bits: f64,
    pub adam: AdamConfig,
}

impl RssmConfig {
    /// Scaled-down profile used by tests and the acceptance suite.
    pub fn desk(obs_len: usize) -> RssmConfig {
        RssmConfig {
            state_dims: 8,
            state_categories: 16,
            deter_size: 32,
            embed_size: 32,
            hidden_size: 48,
            ensemble_size: 5,
            obs_len,
            kl_balance: Some(0.8),
            free_bits: 1.0,
            adam: AdamConfig::default(),
        }
    }

    /// Full-scale profile (50 dims × 64 categories).
    pub fn paper(obs_len: usize) -> RssmConfig {
        RssmConfig {
            state_dims: 50,
            state_categories: 64,
            deter_size: 200,
            embed_size: 128,
            hidden_size: 200,
            ensemble_size: 5,
            obs_len,
            kl_balance: Some(0.8),
            free_bits: 1.0,
            adam: AdamConfig::default(),
        }
    }

    pub fn state_flat(&self) -> usize {
        self.state_dims * self.state_categories
    }

    fn validate(&self) {
        assert!(self.state_dims > 0 && self.state_categories > 0);
        assert!(self.deter_size > 0 && self.embed_size > 0 && self.hidden_size > 0);
        assert!(self.ensemble_size >= 2, "ensemble needs at least 2 members");
        assert!(self.obs_len > 0);
    }
}

/// Paired deterministic recurrent state `h` and stochastic categorical
/// state `s` (one-hot per state dimension).
#[derive(Clone)]
pub struct LatentState {
    pub h: Tensor,
    pub s: Tensor,
}

/// One (observation, action) training sequence; `actions[t]` is the action
/// taken after observing `observations[t]`, so there is one fewer action
/// than observations.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub sequences: Vec<Sequence>,
}

impl Batch {
    fn validate(&self, obs_len: usize) -> Result<usize, WorldModelError> {
        if self.sequences.is_empty() {
            return Err(WorldModelError::BadBatch("empty batch".into()));
        }
        let len = self.sequences[0].observations.len();
        if len < 2 {
            return Err(WorldModelError::BadBatch(format!(
                "sequence length must be >= 2, got {len}"
            )));
        }
        for (i, seq) in self.sequences.iter().enumerate() {
            if seq.observations.len() != len {
                return Err(WorldModelError::BadBatch(format!(
                    "sequence {i} length {} differs from {len}",
                    seq.observations.len()
                )));
            }
            if seq.actions.len() + 1 != len {
                return Err(WorldModelError::BadBatch(format!(
                    "sequence {i} has {} actions for {len} observations",
                    seq.actions.len()
                )));
            }
            if seq.observations.iter().any(|o| o.len() != obs_len) {
                return Err(WorldModelError::BadBatch(format!(
                    "sequence {i} observation length mismatch"
                )));
            }
        }
        Ok(len)
    }
}

/// How the posterior state enters the graph during ELBO evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// One-hot straight-through sample (training default).
    Hard,
    /// Softmax probabilities instead of a sample; fully differentiable,
    /// used by finite-difference gradient verification.
    Soft,
}

#[derive(Debug, Clone, Default)]
pub struct ElboDiagnostics {
    pub loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
    pub disagreement_mean: f64,
}

pub struct Rssm {
    cfg: RssmConfig,
    params: ParamSet,
    input_embed: Mlp,
    gru: GruCell,
    posterior_head: Mlp,
    prior_head: Mlp,
    decoders: Vec<Mlp>,
    frozen: bool,
}

impl Rssm {
    pub fn new(cfg: RssmConfig, rng: &mut SeededRng) -> Rssm {
        cfg.validate();
        let mut params = ParamSet::new();
        let s_flat = cfg.state_flat();
        let input_embed = Mlp::new(&mut params, "embed", &[s_flat + 4, cfg.embed_size], rng);
        let gru = GruCell::new(&mut params, "gru", cfg.embed_size, cfg.deter_size, rng);
        let posterior_head = Mlp::new(
            &mut params,
            "posterior",
            &[cfg.deter_size + cfg.obs_len, cfg.hidden_size, s_flat],
            rng,
        );
        let prior_head = Mlp::new(&mut params, "prior", &[cfg.deter_size, cfg.hidden_size, s_flat], rng);
        let decoders = (0..cfg.ensemble_size)
            .map(|m| {
                Mlp::new(
                    &mut params,
                    &format!("decoder{m}"),
                    &[cfg.deter_size + s_flat, cfg.hidden_size, cfg.obs_len],
                    rng,
                )
            })
            .collect();
        Rssm {
            cfg,
            params,
            input_embed,
            gru,
            posterior_head,
            prior_head,
            decoders,
            frozen: false,
        }
    }

    pub fn config(&self) -> &RssmConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Zero deterministic and stochastic state; the first observation of a
    /// sequence is encoded against this boundary state.
    pub fn initial_state(&self) -> LatentState {
        LatentState {
            h: Tensor::zeros(&[self.cfg.deter_size]),
            s: Tensor::zeros(&[self.cfg.state_dims, self.cfg.state_categories]),
        }
    }

    /// h_t = GRU(embed(concat(flatten(s_prev), a_prev)), h_prev).
    pub fn recurrent_step(
        &self,
        h_prev: &Tensor,
        s_prev: &Tensor,
        a_prev: Action,
    ) -> Result<Tensor, WorldModelError> {
        let s_flat = s_prev.reshape(&[self.cfg.state_flat()]);
        let a = Tensor::constant(&[4], a_prev.one_hot());
        let x = Tensor::concat(&[&s_flat, &a]);
        let embed = self.input_embed.forward(&x)?;
        Ok(self.gru.step(&embed, h_prev)?)
    }

    /// Posterior categorical logits over (dims × categories) from the
    /// deterministic state and the current observation.
    pub fn posterior_logits(&self, h: &Tensor, obs: &[f64]) -> Result<Tensor, WorldModelError> {
        if obs.len() != self.cfg.obs_len {
            return Err(WorldModelError::Numerics(NumericsError::ShapeMismatch {
                op: "posterior",
                detail: format!("expected obs length {}, got {}", self.cfg.obs_len, obs.len()),
            }));
        }
        let o = Tensor::constant(&[self.cfg.obs_len], obs.to_vec());
        let x = Tensor::concat(&[h, &o]);
        let logits = self.posterior_head.forward(&x)?;
        Ok(logits.reshape(&[self.cfg.state_dims, self.cfg.state_categories]))
    }

    /// Prior (transition) categorical logits conditioned on `h` only.
    pub fn prior_logits(&self, h: &Tensor) -> Result<Tensor, WorldModelError> {
        let logits = self.prior_head.forward(h)?;
        Ok(logits.reshape(&[self.cfg.state_dims, self.cfg.state_categories]))
    }

    /// Bernoulli logits over observation bits from ensemble member `member`.
    pub fn decode_logits(&self, h: &Tensor, s: &Tensor, member: usize) -> Result<Tensor, WorldModelError> {
        let s_flat = s.reshape(&[self.cfg.state_flat()]);
        let x = Tensor::concat(&[h, &s_flat]);
        Ok(self.decoders[member].forward(&x)?)
    }

    /// Canonical decoder (ensemble member 0).
    pub fn decode(&self, h: &Tensor, s: &Tensor) -> Result<Tensor, WorldModelError> {
        self.decode_logits(h, s, 0)
    }

    /// Fraction of observation bits the canonical decoder reconstructs
    /// correctly at threshold 0.5.
    pub fn reconstruction_accuracy(&self, h: &Tensor, s: &Tensor, obs: &[f64]) -> Result<f64, WorldModelError> {
        let logits = no_grad(|| self.decode(h, s))?;
        let mut correct = 0usize;
        logits.with_values(|vals| {
            for (x, t) in vals.iter().zip(obs) {
                let p = sigmoid(*x);
                if (p > 0.5) == (*t > 0.5) {
                    correct += 1;
                }
            }
        });
        Ok(correct as f64 / obs.len() as f64)
    }

    /// Mean over observation bits of the population variance of the
    /// ensemble members' predicted probabilities.
    pub fn ensemble_disagreement(&self, h: &Tensor, s: &Tensor) -> Result<f64, WorldModelError> {
        let probs: Vec<Vec<f64>> = no_grad(|| -> Result<_, WorldModelError> {
            (0..self.cfg.ensemble_size)
                .map(|m| {
                    Ok(self
                        .decode_logits(h, s, m)?
                        .values()
                        .into_iter()
                        .map(sigmoid)
                        .collect())
                })
                .collect()
        })?;
        Ok(probability_disagreement(&probs))
    }

    fn categorical_kl(post: &Tensor, prior: &Tensor) -> Tensor {
        let p = post.softmax_rows();
        p.mul(&post.log_softmax_rows().sub(&prior.log_softmax_rows())).sum()
    }

    /// ELBO loss over a batch: per step, mean ensemble reconstruction NLL
    /// plus KL(posterior ‖ prior) summed over state dimensions, averaged
    /// over sequences. Posterior expectations use one sample per step.
    ///
    /// Each sequence draws its sample stream from a content-derived seed,
    /// so the loss is invariant to batch order.
    pub fn elbo_loss(
        &self,
        batch: &Batch,
        base_seed: u64,
        mode: SampleMode,
    ) -> Result<(Tensor, ElboDiagnostics), WorldModelError> {
        let seq_len = batch.validate(self.cfg.obs_len)?;
        let n_seq = batch.sequences.len() as f64;
        let mut loss_terms: Vec<Tensor> = Vec::new();
        let mut diag = ElboDiagnostics::default();
        let mut disagreement_samples = 0usize;

        for seq in &batch.sequences {
            let mut lrng = seeded_rng(sequence_seed(base_seed, seq));
            let mut h = Tensor::zeros(&[self.cfg.deter_size]);
            let mut s_prev: Option<Tensor> = None;
            for t in 0..seq_len {
                if t > 0 {
                    h = self.recurrent_step(&h, s_prev.as_ref().unwrap(), seq.actions[t - 1])?;
                }
                let post = self.posterior_logits(&h, &seq.observations[t])?;
                let prior = self.prior_logits(&h)?;
                let s = match mode {
                    SampleMode::Hard => categorical_sample_st(&post, &mut lrng)?,
                    SampleMode::Soft => post.softmax_rows(),
                };

                // Reconstruction: mean NLL across ensemble members so every
                // head trains on the same target.
                let mut nll_members: Vec<Tensor> = Vec::new();
                let mut member_probs: Vec<Vec<f64>> = Vec::new();
                for m in 0..self.cfg.ensemble_size {
                    let logits = self.decode_logits(&h, &s, m)?;
                    member_probs.push(logits.values().into_iter().map(sigmoid).collect());
                    nll_members.push(logits.bernoulli_nll(&seq.observations[t]));
                }
                let mut nll = nll_members[0].clone();
                for member in &nll_members[1..] {
                    nll = nll.add(member);
                }
                let nll = nll.scale(1.0 / self.cfg.ensemble_size as f64);

                let kl_raw = Self::categorical_kl(&post, &prior);

                if !nll.scalar_value().is_finite() {
                    return Err(WorldModelError::NonFiniteTerm {
                        term: "reconstruction",
                        step: t,
                    });
                }
                if !kl_raw.scalar_value().is_finite() {
                    return Err(WorldModelError::NonFiniteTerm { term: "kl", step: t });
                }

                let kl_for_loss = match self.cfg.kl_balance {
                    Some(w) => {
                        let prior_side = Self::categorical_kl(&post.detach(), &prior);
                        let post_side = Self::categorical_kl(&post, &prior.detach());
                        prior_side.scale(w).add(&post_side.scale(1.0 - w))
                    }
                    None => kl_raw.clone(),
                };
                let kl_for_loss = if self.cfg.free_bits > 0.0 {
                    kl_for_loss.clamp_min(self.cfg.free_bits)
                } else {
                    kl_for_loss
                };

                loss_terms.push(nll.add(&kl_for_loss));
                diag.recon_nll += nll.scalar_value() / n_seq;
                diag.kl += kl_raw.scalar_value() / n_seq;
                diag.disagreement_mean += probability_disagreement(&member_probs);
                disagreement_samples += 1;

                s_prev = Some(s);
            }
        }

        let mut loss = loss_terms[0].clone();
        for term in &loss_terms[1..] {
            loss = loss.add(term);
        }
        let loss = loss.scale(1.0 / n_seq);
        diag.loss = loss.scalar_value();
        diag.disagreement_mean /= disagreement_samples as f64;
        if !diag.loss.is_finite() {
            return Err(WorldModelError::NonFiniteTerm { term: "total", step: 0 });
        }
        Ok((loss, diag))
    }

    /// One joint Adam step on all model parameters. Errors if the model is
    /// frozen; parameters are untouched in that case.
    pub fn train_step(&mut self, batch: &Batch, base_seed: u64) -> Result<ElboDiagnostics, WorldModelError> {
        if self.frozen {
            return Err(WorldModelError::Frozen);
        }
        self.params.clear_grads();
        let (loss, diag) = self.elbo_loss(batch, base_seed, SampleMode::Hard)?;
        loss.backward();
        let adam = self.cfg.adam;
        self.params.adam_step(&adam)?;
        Ok(diag)
    }
}

/// Population variance across predictors, averaged over bits, in the
/// pairwise form Σ_{i<j}(p_i − p_j)²/N². Algebraically the same as the
/// mean-based form but exactly zero for identical members (no rounding
/// residue from the mean).
pub fn probability_disagreement(member_probs: &[Vec<f64>]) -> f64 {
    let n = member_probs.len();
    let bits = member_probs[0].len();
    let mut total = 0.0;
    for b in 0..bits {
        let mut pair_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = member_probs[i][b] - member_probs[j][b];
                pair_sum += d * d;
            }
        }
        total += pair_sum / (n * n) as f64;
    }
    total / bits as f64
}

/// Content-derived seed: identical sequences sample identically wherever
/// they appear in a batch.
fn sequence_seed(base: u64, seq: &Sequence) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut mix = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for obs in &seq.observations {
        for bit in obs {
            mix(bit.to_bits());
        }
    }
    for a in &seq.actions {
        mix(a.index() as u64 + 1);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_param_gradients;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn tiny_cfg() -> RssmConfig {
        RssmConfig {
            state_dims: 2,
            state_categories: 3,
            deter_size: 4,
            embed_size: 4,
            hidden_size: 5,
            ensemble_size: 2,
            obs_len: 6,
            kl_balance: None,
            free_bits: 0.0,
            adam: AdamConfig::default(),
        }
    }

    fn random_obs(rng: &mut crate::rng::SeededRng, len: usize) -> Vec<f64> {
        (0..len).map(|_| if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 }).collect()
    }

    fn toy_batch(rng: &mut crate::rng::SeededRng, cfg: &RssmConfig, seqs: usize, len: usize) -> Batch {
        Batch {
            sequences: (0..seqs)
                .map(|_| Sequence {
                    observations: (0..len).map(|_| random_obs(rng, cfg.obs_len)).collect(),
                    actions: (0..len - 1)
                        .map(|_| crate::env::ACTIONS[rng.random_range(0..4)])
                        .collect(),
                })
                .collect(),
        }
    }

    fn zero_params(model: &Rssm) {
        for name in model.params.names().cloned().collect::<Vec<_>>() {
            let t = model.params.get(&name).unwrap();
            t.set_values(&vec![0.0; t.len()]);
        }
    }

    #[test]
    fn recurrent_step_zero_weights_halves_hidden() {
        let mut rng = seeded_rng(1);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        zero_params(&model);
        let h_prev = Tensor::constant(&[4], vec![0.5, -0.5, 0.25, 0.0]);
        let s_prev = Tensor::zeros(&[2, 3]);
        let h = model.recurrent_step(&h_prev, &s_prev, Action::Left).unwrap();
        for (next, prev) in h.values().iter().zip(h_prev.values()) {
            assert!((next - 0.5 * prev).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrent_step_is_deterministic() {
        let mut rng = seeded_rng(2);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let h = Tensor::constant(&[4], vec![0.1, 0.2, 0.3, 0.4]);
        let s = Tensor::constant(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let a = model.recurrent_step(&h, &s, Action::Down).unwrap();
        let b = model.recurrent_step(&h, &s, Action::Down).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn recurrent_chain_gradients_match_finite_differences() {
        let mut rng = seeded_rng(3);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let s0 = Tensor::constant(&[2, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let h0 = Tensor::constant(&[4], vec![0.05, -0.1, 0.2, 0.0]);
        let report = check_param_gradients(model.params(), 1e-5, || {
            let h1 = model.recurrent_step(&h0, &s0, Action::Up).unwrap();
            let h2 = model.recurrent_step(&h1, &s0, Action::Right).unwrap();
            h2.mul(&h2).sum()
        });
        assert!(report.max_rel_error < 1e-4, "rel err {}", report.max_rel_error);
    }

    #[test]
    fn posterior_prior_shapes_and_normalization() {
        let mut rng = seeded_rng(4);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let h = Tensor::zeros(&[4]);
        let obs = random_obs(&mut rng, 6);
        let post = model.posterior_logits(&h, &obs).unwrap();
        assert_eq!(post.shape(), vec![2, 3]);
        let p = post.softmax_rows().values();
        for r in 0..2 {
            let s: f64 = p[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let prior = model.prior_logits(&h).unwrap();
        assert_eq!(prior.shape(), vec![2, 3]);
    }

    #[test]
    fn distinct_observations_give_distinct_posteriors() {
        let mut rng = seeded_rng(5);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let h = Tensor::zeros(&[4]);
        let mut seen = std::collections::BTreeSet::new();
        let mut obs_seen = std::collections::BTreeSet::new();
        for _ in 0..100 {
            let obs = random_obs(&mut rng, 6);
            let key: Vec<u64> = obs.iter().map(|b| b.to_bits()).collect();
            if !obs_seen.insert(key) {
                continue;
            }
            let logits = model.posterior_logits(&h, &obs).unwrap();
            let sig: Vec<u64> = logits.values().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(sig), "posterior collision for distinct observations");
        }
    }

    #[test]
    fn distinct_hidden_states_give_distinct_priors() {
        let mut rng = seeded_rng(6);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..100 {
            let h = Tensor::constant(&[4], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
            let logits = model.prior_logits(&h).unwrap();
            let sig: Vec<u64> = logits.values().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(sig), "prior collision for distinct hidden states");
        }
    }

    #[test]
    fn decode_output_length_and_zero_weight_half_probs() {
        let mut rng = seeded_rng(7);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let h = Tensor::zeros(&[4]);
        let s = Tensor::zeros(&[2, 3]);
        let logits = model.decode(&h, &s).unwrap();
        assert_eq!(logits.len(), 6);

        zero_params(&model);
        let logits = model.decode(&h, &s).unwrap();
        for x in logits.values() {
            assert!((sigmoid(x) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_zero_when_posterior_equals_prior() {
        let mut rng = seeded_rng(8);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        // Zero heads make posterior and prior logits identical (both zero).
        zero_params(&model);
        let mut batch_rng = seeded_rng(9);
        let batch = toy_batch(&mut batch_rng, &model.cfg, 1, 2);
        let (_, diag) = model.elbo_loss(&batch, 0, SampleMode::Hard).unwrap();
        assert!(diag.kl.abs() < 1e-9, "kl {}", diag.kl);
    }

    #[test]
    fn perfect_decoder_drives_nll_to_zero() {
        let mut rng = seeded_rng(10);
        let mut cfg = tiny_cfg();
        cfg.obs_len = 4;
        let model = Rssm::new(cfg.clone(), &mut rng);
        zero_params(&model);
        let obs = vec![1.0, 0.0, 1.0, 1.0];
        // Bias the output layer of every decoder toward the target bits.
        for m in 0..cfg.ensemble_size {
            let bias = model.params.get(&format!("decoder{m}.l1.b")).unwrap();
            let vals: Vec<f64> = obs.iter().map(|b| if *b > 0.5 { 50.0 } else { -50.0 }).collect();
            bias.set_values(&vals);
        }
        let batch = Batch {
            sequences: vec![Sequence {
                observations: vec![obs.clone(), obs.clone()],
                actions: vec![Action::Left],
            }],
        };
        let (_, diag) = model.elbo_loss(&batch, 0, SampleMode::Hard).unwrap();
        assert!(diag.recon_nll < 1e-9, "nll {}", diag.recon_nll);
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let mut rng = seeded_rng(11);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let mut batch_rng = seeded_rng(12);
        let batch = toy_batch(&mut batch_rng, &model.cfg, 1, 2);
        let report = check_param_gradients(model.params(), 1e-5, || {
            model.elbo_loss(&batch, 7, SampleMode::Soft).unwrap().0
        });
        assert!(report.max_rel_error < 1e-4, "rel err {}", report.max_rel_error);
    }

    #[test]
    fn elbo_is_batch_order_invariant() {
        let mut rng = seeded_rng(13);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let mut batch_rng = seeded_rng(14);
        let batch = toy_batch(&mut batch_rng, &model.cfg, 3, 3);
        let mut reversed = batch.clone();
        reversed.sequences.reverse();
        let (a, _) = model.elbo_loss(&batch, 5, SampleMode::Hard).unwrap();
        let (b, _) = model.elbo_loss(&reversed, 5, SampleMode::Hard).unwrap();
        assert!((a.scalar_value() - b.scalar_value()).abs() < 1e-9);
    }

    #[test]
    fn kl_and_nll_are_nonnegative() {
        let mut rng = seeded_rng(15);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        for seed in 0..20 {
            let mut batch_rng = seeded_rng(seed);
            let batch = toy_batch(&mut batch_rng, &model.cfg, 2, 3);
            let (_, diag) = model.elbo_loss(&batch, seed, SampleMode::Hard).unwrap();
            assert!(diag.kl >= -1e-12);
            assert!(diag.recon_nll >= 0.0);
        }
    }

    #[test]
    fn overfit_small_batch_halves_loss() {
        let mut rng = seeded_rng(16);
        let mut cfg = tiny_cfg();
        cfg.free_bits = 0.0;
        cfg.adam.lr = 5e-3;
        let mut model = Rssm::new(cfg, &mut rng);
        let mut batch_rng = seeded_rng(17);
        let batch = toy_batch(&mut batch_rng, &model.cfg, 2, 3);
        let initial = model.elbo_loss(&batch, 0, SampleMode::Hard).unwrap().1.loss;
        for step in 0..200 {
            model.train_step(&batch, step).unwrap();
        }
        let last = model.elbo_loss(&batch, 0, SampleMode::Hard).unwrap().1.loss;
        assert!(
            last < 0.5 * initial,
            "expected < 50% of initial loss, got {last} vs {initial}"
        );
    }

    #[test]
    fn overfit_single_observation_reconstructs_it() {
        let mut rng = seeded_rng(26);
        let mut cfg = tiny_cfg();
        cfg.free_bits = 0.0;
        cfg.adam.lr = 5e-3;
        let mut model = Rssm::new(cfg, &mut rng);
        let obs = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let batch = Batch {
            sequences: vec![Sequence {
                observations: vec![obs.clone(), obs.clone(), obs.clone()],
                actions: vec![Action::Left, Action::Left],
            }],
        };
        for step in 0..200 {
            model.train_step(&batch, step).unwrap();
        }
        let h = Tensor::zeros(&[model.cfg.deter_size]);
        let mut sample_rng = seeded_rng(27);
        let post = model.posterior_logits(&h, &obs).unwrap();
        let s = categorical_sample_st(&post, &mut sample_rng).unwrap();
        let acc = model.reconstruction_accuracy(&h, &s, &obs).unwrap();
        assert!(acc >= 0.99, "reconstruction accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let run = || {
            let mut rng = seeded_rng(18);
            let mut model = Rssm::new(tiny_cfg(), &mut rng);
            let mut batch_rng = seeded_rng(19);
            let batch = toy_batch(&mut batch_rng, &model.cfg, 2, 3);
            (0..20).map(|s| model.train_step(&batch, s).unwrap().loss).collect::<Vec<f64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut rng = seeded_rng(20);
        let mut cfg = tiny_cfg();
        cfg.adam.lr = 0.0;
        let mut model = Rssm::new(cfg, &mut rng);
        let before: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| t.values()).collect();
        let mut batch_rng = seeded_rng(21);
        let batch = toy_batch(&mut batch_rng, &model.cfg, 1, 2);
        model.train_step(&batch, 0).unwrap();
        let after: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| t.values()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn frozen_model_rejects_training_and_keeps_params() {
        let mut rng = seeded_rng(22);
        let mut model = Rssm::new(tiny_cfg(), &mut rng);
        model.freeze();
        let before: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| t.values()).collect();
        let mut batch_rng = seeded_rng(23);
        let batch = toy_batch(&mut batch_rng, &model.cfg, 1, 2);
        assert!(matches!(model.train_step(&batch, 0), Err(WorldModelError::Frozen)));
        let after: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| t.values()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn identical_members_have_zero_disagreement() {
        let mut rng = seeded_rng(24);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        // Clone member 0 into every other member.
        for layer in ["l0.w", "l0.b", "l1.w", "l1.b"] {
            let src = model.params.get(&format!("decoder0.{layer}")).unwrap().values();
            for m in 1..model.cfg.ensemble_size {
                model.params.get(&format!("decoder{m}.{layer}")).unwrap().set_values(&src);
            }
        }
        let h = Tensor::constant(&[4], vec![0.3, -0.3, 0.6, 0.0]);
        let s = Tensor::constant(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(model.ensemble_disagreement(&h, &s).unwrap(), 0.0);
    }

    #[test]
    fn disagreement_matches_hand_variance() {
        // Two members predicting 0 and 1 on one bit: population variance
        // of {0, 1} is 0.25.
        let probs = vec![vec![0.0], vec![1.0]];
        assert_eq!(probability_disagreement(&probs), 0.25);

        // Hand-built 3-member, 2-bit case against the mean-based
        // population-variance formula.
        let probs = vec![vec![0.2, 0.5], vec![0.4, 0.5], vec![0.9, 0.5]];
        let mean0 = (0.2 + 0.4 + 0.9) / 3.0;
        let var0 = ((0.2f64 - mean0).powi(2) + (0.4 - mean0).powi(2) + (0.9 - mean0).powi(2)) / 3.0;
        let expected = (var0 + 0.0) / 2.0;
        assert!((probability_disagreement(&probs) - expected).abs() < 1e-12);

        // Identical members give exactly zero, including member counts
        // where a mean-based form would leave rounding residue.
        let probs = vec![vec![0.1, 0.37]; 3];
        assert_eq!(probability_disagreement(&probs), 0.0);
    }

    #[test]
    fn bad_batches_are_rejected() {
        let mut rng = seeded_rng(25);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let empty = Batch { sequences: vec![] };
        assert!(model.elbo_loss(&empty, 0, SampleMode::Hard).is_err());

        let short = Batch {
            sequences: vec![Sequence {
                observations: vec![vec![0.0; 6]],
                actions: vec![],
            }],
        };
        assert!(model.elbo_loss(&short, 0, SampleMode::Hard).is_err());
    }
}
