//! Expected-free-energy planning over imagined rollouts.
//!
//! Candidate action sequences are scored by rolling the world model forward
//! in imagination and accumulating, per step, the observation-model entropy
//! (term 1), the divergence of the predicted state from the preferred-state
//! distribution (term 2), and the negated ensemble disagreement (term 3,
//! information gain). Action selection takes the minimum-G candidate's
//! first action; ties break uniformly at random.

use rand::Rng;
use thiserror::Error;

use crate::env::{Action, ACTIONS};
use crate::numerics::tensor::{log_softmax_vec, no_grad, sigmoid, Tensor};
use crate::numerics::{bernoulli_entropy, categorical_sample_st};
use crate::rng::SeededRng;
use crate::rollout::RolloutEvaluator;
use crate::world_model::{LatentState, Rssm, WorldModelError};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    WorldModel(#[from] WorldModelError),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("preference vector is not a log-distribution (exp-sum = {0})")]
    BadPreference(f64),
    #[error("preference vector length {got} != state categories {want}")]
    PreferenceLength { got: usize, want: usize },
}

/// How the planner turns candidate G values into an action.
#[derive(Debug, Clone, Copy)]
pub enum ActionSelection {
    /// Deterministic argmin with uniform random tie-breaking.
    ArgMin,
    /// Sample a candidate with probability softmax(−G / temperature).
    SoftmaxNegG { temperature: f64 },
}

#[derive(Debug, Clone)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub candidates: usize,
    pub selection: ActionSelection,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 15,
            candidates: 64,
            selection: ActionSelection::ArgMin,
        }
    }
}

/// A candidate action sequence and its accumulated cost.
#[derive(Debug, Clone)]
pub struct CandidatePolicy {
    pub actions: Vec<Action>,
    pub g_total: f64,
}

/// Per-step cost contributions.
#[derive(Debug, Clone, Copy, Default)]
pub struct GTerms {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
}

impl GTerms {
    pub fn total(&self) -> f64 {
        self.term1 + self.term2 - self.term3
    }
}

/// Expected free energy of one candidate, broken down per rollout step.
#[derive(Debug, Clone, Default)]
pub struct GBreakdown {
    pub per_step: Vec<GTerms>,
    pub term1_total: f64,
    pub term2_total: f64,
    pub term3_total: f64,
    pub total: f64,
}

impl GBreakdown {
    fn push(&mut self, t: GTerms) {
        self.term1_total += t.term1;
        self.term2_total += t.term2;
        self.term3_total -= t.term3;
        self.total += t.total();
        self.per_step.push(t);
    }
}

fn validate_preference(pref_logp: &[f64], categories: usize) -> Result<(), PlannerError> {
    if pref_logp.len() != categories {
        return Err(PlannerError::PreferenceLength {
            got: pref_logp.len(),
            want: categories,
        });
    }
    let sum: f64 = pref_logp.iter().map(|lp| lp.exp()).sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(PlannerError::BadPreference(sum));
    }
    Ok(())
}

/// Term 1: entropy of the observation model at (h, s), summed over bits.
pub fn term1_obs_entropy(model: &Rssm, h: &Tensor, s: &Tensor) -> Result<f64, PlannerError> {
    let logits = no_grad(|| model.decode(h, s))?;
    Ok(logits.with_values(|vals| vals.iter().map(|x| bernoulli_entropy(sigmoid(*x))).sum()))
}

/// Term 2 evaluated at a given one-hot prior sample: log Q(s*) minus the
/// preference log-probability of the sampled categories, summed over state
/// dimensions.
pub fn term2_given_sample(
    prior_logits: &Tensor,
    pref_logp: &[f64],
    sample: &Tensor,
) -> Result<f64, PlannerError> {
    let shape = prior_logits.shape();
    let (dims, cats) = (shape[0], shape[1]);
    validate_preference(pref_logp, cats)?;
    let logq = prior_logits.values();
    let onehot = sample.values();
    let mut term = 0.0;
    for d in 0..dims {
        let row = log_softmax_vec(&logq[d * cats..(d + 1) * cats]);
        let cat = onehot[d * cats..(d + 1) * cats]
            .iter()
            .position(|v| *v == 1.0)
            .expect("one-hot sample row");
        term += row[cat] - pref_logp[cat];
    }
    Ok(term)
}

/// Term 2 with a fresh single sample from the prior.
pub fn term2_preference_divergence(
    prior_logits: &Tensor,
    pref_logp: &[f64],
    rng: &mut SeededRng,
) -> Result<f64, PlannerError> {
    let sample = no_grad(|| categorical_sample_st(prior_logits, rng))
        .map_err(WorldModelError::from)?;
    term2_given_sample(prior_logits, pref_logp, &sample)
}

/// Term 3: expected information gain about model parameters, measured as
/// ensemble disagreement. Enters G with a negative sign.
pub fn term3_info_gain(model: &Rssm, h: &Tensor, s: &Tensor) -> Result<f64, PlannerError> {
    Ok(model.ensemble_disagreement(h, s)?)
}

/// Rolls the world model forward in imagination along `actions`,
/// accumulating G = term1 + term2 − term3 per step.
pub fn expected_free_energy(
    model: &Rssm,
    actions: &[Action],
    start: &LatentState,
    pref_logp: &[f64],
    rng: &mut SeededRng,
) -> Result<GBreakdown, PlannerError> {
    validate_preference(pref_logp, model.config().state_categories)?;
    no_grad(|| {
        let mut breakdown = GBreakdown::default();
        let mut h = start.h.clone();
        let mut s = start.s.clone();
        for &a in actions {
            h = model.recurrent_step(&h, &s, a)?;
            let prior = model.prior_logits(&h)?;
            s = categorical_sample_st(&prior, rng).map_err(WorldModelError::from)?;
            let terms = GTerms {
                term1: term1_obs_entropy(model, &h, &s)?,
                term2: term2_given_sample(&prior, pref_logp, &s)?,
                term3: term3_info_gain(model, &h, &s)?,
            };
            breakdown.push(terms);
        }
        Ok(breakdown)
    })
}

/// G of one candidate on the buffered fast-path evaluator; numerically
/// identical to [`expected_free_energy`] (pinned by a parity test).
pub fn expected_free_energy_fast(
    eval: &mut RolloutEvaluator,
    actions: &[Action],
    h0: &[f64],
    state0: &[usize],
    pref_logp: &[f64],
    rng: &mut SeededRng,
) -> GBreakdown {
    let mut breakdown = GBreakdown::default();
    let mut h = h0.to_vec();
    let mut state = state0.to_vec();
    for &a in actions {
        eval.recurrent_step(&mut h, &state, a);
        eval.sample_prior(&h, &mut state, rng);
        let (term1, term3) = eval.observation_terms(&h, &state);
        let term2 = eval.term2(&state, pref_logp);
        breakdown.push(GTerms { term1, term2, term3 });
    }
    breakdown
}

/// Hot category index per state dimension of a one-hot state tensor.
fn onehot_indices(s: &Tensor, dims: usize, cats: usize) -> Vec<usize> {
    let v = s.values();
    (0..dims)
        .map(|d| {
            v[d * cats..(d + 1) * cats]
                .iter()
                .position(|x| *x == 1.0)
                .unwrap_or(0)
        })
        .collect()
}

/// Index of the minimum value; exact ties break uniformly via `rng`.
pub fn choose_min_index(values: &[f64], rng: &mut SeededRng) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == min)
        .map(|(i, _)| i)
        .collect();
    Some(ties[rng.random_range(0..ties.len())])
}

fn choose_softmax_neg(values: &[f64], temperature: f64, rng: &mut SeededRng) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let neg: Vec<f64> = values.iter().map(|g| -g / temperature).collect();
    let probs = crate::numerics::softmax_vec(&neg);
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    Some(values.len() - 1)
}

/// Evaluates random-shooting candidates and returns the selected first
/// action together with the winning candidate's full breakdown.
///
/// Candidate rollouts run on the buffered evaluator; results match the
/// tensor-path reference bit for bit.
pub fn select_action(
    model: &Rssm,
    start: &LatentState,
    pref_logp: &[f64],
    cfg: &PlannerConfig,
    rng: &mut SeededRng,
) -> Result<(Action, GBreakdown), PlannerError> {
    let mut eval = RolloutEvaluator::new(model);
    select_action_with(&mut eval, start, pref_logp, cfg, rng)
}

/// [`select_action`] against a prebuilt evaluator; callers with a frozen
/// model reuse one evaluator across a whole run.
pub fn select_action_with(
    eval: &mut RolloutEvaluator,
    start: &LatentState,
    pref_logp: &[f64],
    cfg: &PlannerConfig,
    rng: &mut SeededRng,
) -> Result<(Action, GBreakdown), PlannerError> {
    if cfg.candidates == 0 {
        return Err(PlannerError::EmptyCandidates);
    }
    let model_cfg = eval.config();
    validate_preference(pref_logp, model_cfg.state_categories)?;
    let h0 = start.h.values();
    let state0 = onehot_indices(&start.s, model_cfg.state_dims, model_cfg.state_categories);

    let candidates: Vec<Vec<Action>> = (0..cfg.candidates)
        .map(|_| (0..cfg.horizon).map(|_| ACTIONS[rng.random_range(0..4)]).collect())
        .collect();
    let mut breakdowns = Vec::with_capacity(cfg.candidates);
    for actions in &candidates {
        breakdowns.push(expected_free_energy_fast(
            eval, actions, &h0, &state0, pref_logp, rng,
        ));
    }
    let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
    let winner = match cfg.selection {
        ActionSelection::ArgMin => choose_min_index(&totals, rng),
        ActionSelection::SoftmaxNegG { temperature } => {
            choose_softmax_neg(&totals, temperature, rng)
        }
    }
    .ok_or(PlannerError::EmptyCandidates)?;
    Ok((candidates[winner][0], breakdowns.swap_remove(winner)))
}

/// Uniform log-probability vector: the fixed-preference baseline and the
/// neutral preference used during pretraining.
pub fn uniform_preference_logp(categories: usize) -> Vec<f64> {
    vec![-(categories as f64).ln(); categories]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::AdamConfig;
    use crate::rng::seeded_rng;
    use crate::world_model::RssmConfig;

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

    fn zeroed_model(seed: u64) -> Rssm {
        let mut rng = seeded_rng(seed);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        for name in model.params().names().cloned().collect::<Vec<_>>() {
            let t = model.params().get(&name).unwrap();
            t.set_values(&vec![0.0; t.len()]);
        }
        model
    }

    fn start_state(model: &Rssm) -> LatentState {
        let mut s = vec![0.0; model.config().state_flat()];
        for d in 0..model.config().state_dims {
            s[d * model.config().state_categories] = 1.0;
        }
        LatentState {
            h: Tensor::zeros(&[model.config().deter_size]),
            s: Tensor::constant(
                &[model.config().state_dims, model.config().state_categories],
                s,
            ),
        }
    }

    #[test]
    fn term1_half_probs_give_n_ln2() {
        let model = zeroed_model(1);
        let start = start_state(&model);
        let t1 = term1_obs_entropy(&model, &start.h, &start.s).unwrap();
        assert!((t1 - 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn term1_saturated_probs_give_zero() {
        let model = zeroed_model(2);
        for m in 0..2 {
            let bias = model.params().get(&format!("decoder{m}.l1.b")).unwrap();
            bias.set_values(&[50.0, -50.0, 50.0, -50.0, 50.0, -50.0]);
        }
        let start = start_state(&model);
        let t1 = term1_obs_entropy(&model, &start.h, &start.s).unwrap();
        assert!(t1 < 1e-8, "entropy {t1}");
    }

    #[test]
    fn term1_quarter_prob_single_bit() {
        // H(Bernoulli(0.25)) = −0.25 ln 0.25 − 0.75 ln 0.75 ≈ 0.5623.
        let expected = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((expected - 0.5623).abs() < 1e-4);
        assert!((bernoulli_entropy(0.25) - expected).abs() < 1e-15);
    }

    #[test]
    fn term2_cancels_for_matching_uniform_distributions() {
        let prior = Tensor::constant(&[2, 3], vec![0.0; 6]);
        let pref = uniform_preference_logp(3);
        let mut rng = seeded_rng(3);
        let t2 = term2_preference_divergence(&prior, &pref, &mut rng).unwrap();
        assert!(t2.abs() < 1e-9);
    }

    #[test]
    fn term2_hand_case() {
        // 1 dim, 2 categories, Q = (0.8, 0.2), preferences (0.5, 0.5),
        // sampled category 0 → ln 0.8 − ln 0.5 ≈ 0.4700.
        let prior = Tensor::constant(&[1, 2], vec![0.8f64.ln(), 0.2f64.ln()]);
        let pref = vec![0.5f64.ln(), 0.5f64.ln()];
        let sample = Tensor::constant(&[1, 2], vec![1.0, 0.0]);
        let t2 = term2_given_sample(&prior, &pref, &sample).unwrap();
        assert!((t2 - (0.8f64.ln() - 0.5f64.ln())).abs() < 1e-12);
        assert!((t2 - 0.4700).abs() < 1e-4);
    }

    #[test]
    fn term2_onehot_preference_on_sample_is_log_q() {
        let prior = Tensor::constant(&[1, 2], vec![0.8f64.ln(), 0.2f64.ln()]);
        let sample = Tensor::constant(&[1, 2], vec![1.0, 0.0]);
        let onehot_pref = vec![0.0, f64::NEG_INFINITY]; // log(1), log(0)
        let t2 = term2_given_sample(&prior, &onehot_pref, &sample).unwrap();
        assert!((t2 - 0.8f64.ln()).abs() < 1e-12);
        // Strictly below the uniform-preference value for the same sample.
        let uniform = term2_given_sample(&prior, &uniform_preference_logp(2), &sample).unwrap();
        assert!(t2 < uniform);
    }

    #[test]
    fn term2_rejects_unnormalized_preferences() {
        let prior = Tensor::constant(&[1, 2], vec![0.0, 0.0]);
        let mut rng = seeded_rng(4);
        assert!(term2_preference_divergence(&prior, &[0.0, 0.0], &mut rng).is_err());
    }

    #[test]
    fn preferred_category_hits_lower_term2() {
        // Preferences concentrated on category 0; a sample path hitting it
        // more often scores strictly lower, all else equal.
        let prior = Tensor::constant(&[1, 2], vec![0.0, 0.0]); // uniform Q
        let pref = vec![0.9f64.ln(), 0.1f64.ln()];
        let hit = Tensor::constant(&[1, 2], vec![1.0, 0.0]);
        let miss = Tensor::constant(&[1, 2], vec![0.0, 1.0]);
        let many_hits: f64 = (0..3)
            .map(|_| term2_given_sample(&prior, &pref, &hit).unwrap())
            .sum::<f64>()
            + term2_given_sample(&prior, &pref, &miss).unwrap();
        let few_hits: f64 = (0..3)
            .map(|_| term2_given_sample(&prior, &pref, &miss).unwrap())
            .sum::<f64>()
            + term2_given_sample(&prior, &pref, &hit).unwrap();
        assert!(many_hits < few_hits);
    }

    #[test]
    fn term3_equals_ensemble_disagreement() {
        let mut rng = seeded_rng(5);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let start = start_state(&model);
        let t3 = term3_info_gain(&model, &start.h, &start.s).unwrap();
        let direct = model.ensemble_disagreement(&start.h, &start.s).unwrap();
        assert_eq!(t3, direct);
    }

    #[test]
    fn term3_zero_for_cloned_ensemble() {
        let model = zeroed_model(6);
        let start = start_state(&model);
        assert_eq!(term3_info_gain(&model, &start.h, &start.s).unwrap(), 0.0);
    }

    #[test]
    fn horizon_one_equals_single_step_sum() {
        let mut rng = seeded_rng(7);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let start = start_state(&model);
        let pref = uniform_preference_logp(3);
        let b = expected_free_energy(&model, &[Action::Right], &start, &pref, &mut rng).unwrap();
        assert_eq!(b.per_step.len(), 1);
        let t = b.per_step[0];
        assert!((b.total - (t.term1 + t.term2 - t.term3)).abs() < 1e-12);
    }

    #[test]
    fn zero_model_g_is_horizon_times_step_value() {
        // Uniform prior and preferences cancel term 2 for every sample;
        // term 1 is constant; the cloned ensemble zeroes term 3.
        let model = zeroed_model(8);
        let start = start_state(&model);
        let pref = uniform_preference_logp(3);
        let mut rng = seeded_rng(9);
        let one =
            expected_free_energy(&model, &[Action::Up], &start, &pref, &mut rng).unwrap();
        let five = expected_free_energy(
            &model,
            &[Action::Up, Action::Down, Action::Left, Action::Right, Action::Up],
            &start,
            &pref,
            &mut rng,
        )
        .unwrap();
        assert!((five.total - 5.0 * one.total).abs() < 1e-9);
    }

    #[test]
    fn breakdown_totals_resum() {
        let mut rng = seeded_rng(10);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let start = start_state(&model);
        let pref = uniform_preference_logp(3);
        let actions = vec![Action::Left, Action::Down, Action::Right];
        let b = expected_free_energy(&model, &actions, &start, &pref, &mut rng).unwrap();
        let resum: f64 = b.per_step.iter().map(|t| t.total()).sum();
        assert!((b.total - resum).abs() < 1e-9);
        assert!((b.total - (b.term1_total + b.term2_total + b.term3_total)).abs() < 1e-9);
        assert!(b.term3_total <= 0.0, "term3 enters G negatively");
    }

    #[test]
    fn g_evaluation_does_not_mutate_model() {
        let mut rng = seeded_rng(11);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let before: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| t.values()).collect();
        let start = start_state(&model);
        let pref = uniform_preference_logp(3);
        expected_free_energy(&model, &[Action::Up, Action::Down], &start, &pref, &mut rng).unwrap();
        let after: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| t.values()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn argmin_picks_smaller_and_shift_invariant() {
        let mut rng = seeded_rng(12);
        assert_eq!(choose_min_index(&[1.0, 2.0], &mut rng), Some(0));
        assert_eq!(choose_min_index(&[2.0, 1.0], &mut rng), Some(1));

        // Adding a constant to every G leaves the choice unchanged.
        let gs = [3.0, 1.5, 2.0, 1.5];
        let shifted: Vec<f64> = gs.iter().map(|g| g + 10.0).collect();
        let mut a = seeded_rng(13);
        let mut b = seeded_rng(13);
        assert_eq!(choose_min_index(&gs, &mut a), choose_min_index(&shifted, &mut b));
    }

    #[test]
    fn equal_g_ties_break_uniformly() {
        let mut rng = seeded_rng(14);
        let gs = vec![1.0; 4];
        let mut counts = [0usize; 4];
        let trials = 10_000;
        for _ in 0..trials {
            counts[choose_min_index(&gs, &mut rng).unwrap()] += 1;
        }
        let expected = trials as f64 / 4.0;
        let sigma = (trials as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 4.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn single_candidate_returns_its_first_action() {
        let mut rng = seeded_rng(15);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let start = start_state(&model);
        let pref = uniform_preference_logp(3);
        let cfg = PlannerConfig {
            horizon: 3,
            candidates: 1,
            selection: ActionSelection::ArgMin,
        };
        // With one candidate the selected action is that candidate's first
        // action regardless of its G value; determinism pins which one.
        let mut rng_a = seeded_rng(16);
        let (action, _) = select_action(&model, &start, &pref, &cfg, &mut rng_a).unwrap();
        let mut rng_b = seeded_rng(16);
        let first = ACTIONS[rng_b.random_range(0..4)];
        assert_eq!(action, first);
    }

    #[test]
    fn zero_candidates_error() {
        let mut rng = seeded_rng(17);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let start = start_state(&model);
        let pref = uniform_preference_logp(3);
        let cfg = PlannerConfig {
            horizon: 3,
            candidates: 0,
            selection: ActionSelection::ArgMin,
        };
        assert!(select_action(&model, &start, &pref, &cfg, &mut rng).is_err());
    }

    #[test]
    fn softmax_selection_mode_runs() {
        let mut rng = seeded_rng(18);
        let model = Rssm::new(tiny_cfg(), &mut rng);
        let start = start_state(&model);
        let pref = uniform_preference_logp(3);
        let cfg = PlannerConfig {
            horizon: 2,
            candidates: 8,
            selection: ActionSelection::SoftmaxNegG { temperature: 1.0 },
        };
        select_action(&model, &start, &pref, &cfg, &mut rng).unwrap();
    }
}
