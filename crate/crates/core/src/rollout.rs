//! Allocation-free imagination rollouts for the planner.
//!
//! [`RolloutEvaluator`] snapshots the world-model weights into flat buffers
//! and evaluates the recurrent step, prior head, prior sampling, and
//! decoder ensemble with plain loops and reusable scratch space. The
//! arithmetic replays the tensor-graph path operation for operation (one-hot
//! inputs let whole columns be skipped because adding an exact zero never
//! changes a sum), so its outputs are bit-identical to the reference
//! implementation; a parity test pins that.

use rand::Rng;

use crate::env::Action;
use crate::numerics::tensor::sigmoid;
use crate::rng::SeededRng;
use crate::world_model::{Rssm, RssmConfig};

/// Stable softmax that also reports (max, sum of shifted exps), so callers
/// can form log-softmax entries as `x − (ln(sum) + max)` without a second
/// pass. Identical arithmetic to the tensor-path softmax/log-softmax pair.
fn softmax_into_with_stats(row: &[f64], out: &mut [f64]) -> (f64, f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    (max, sum)
}

struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    cols: usize,
}

impl Linear {
    fn from_named(model: &Rssm, weight: &str, bias: Option<&str>) -> Linear {
        let w = model.params().get(weight).expect("weight").clone();
        let shape = w.shape();
        let b = match bias {
            Some(name) => model.params().get(name).expect("bias").values(),
            None => vec![0.0; shape[0]],
        };
        Linear {
            w: w.values(),
            b,
            cols: shape[1],
        }
    }

    fn from_params(model: &Rssm, name: &str) -> Linear {
        Linear::from_named(model, &format!("{name}.w"), Some(&format!("{name}.b")))
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, out_r) in out.iter_mut().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *out_r = acc + self.b[r];
        }
    }

    /// W·x + b where x is dense on `dense` and one-hot (by column index) on
    /// the remaining columns. The skipped columns hold exact zeros, so the
    /// sum is unchanged; `hot` must be ascending.
    fn forward_sparse(&self, dense: &[f64], hot: &[usize], out: &mut [f64]) {
        for (r, out_r) in out.iter_mut().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row[..dense.len()].iter().zip(dense) {
                acc += a * b;
            }
            for &j in hot {
                acc += row[dense.len() + j];
            }
            *out_r = acc + self.b[r];
        }
    }
}

struct GruWeights {
    w_z: Linear,
    u_z: Linear,
    b_z: Vec<f64>,
    w_r: Linear,
    u_r: Linear,
    b_r: Vec<f64>,
    w_h: Linear,
    u_h: Linear,
    b_h: Vec<f64>,
}

/// Weight snapshot plus scratch buffers for planner rollouts.
pub struct RolloutEvaluator {
    cfg: RssmConfig,
    embed: Linear,
    gru: GruWeights,
    prior0: Linear,
    prior1: Linear,
    decoders: Vec<(Linear, Linear)>,

    // scratch
    embed_out: Vec<f64>,
    gate_a: Vec<f64>,
    gate_b: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    cand: Vec<f64>,
    hidden: Vec<f64>,
    prior_logits: Vec<f64>,
    row_probs: Vec<f64>,
    dim_logq: Vec<f64>,
    dec_hidden: Vec<f64>,
    dec_logits: Vec<f64>,
    member_probs: Vec<Vec<f64>>,
}

impl RolloutEvaluator {
    pub fn new(model: &Rssm) -> RolloutEvaluator {
        let cfg = model.config().clone();
        // GRU biases stay separate so the gate additions reproduce the
        // reference grouping (W·x + U·h) + b exactly.
        let bias_of = |name: &str| model.params().get(name).unwrap().values();
        let gru = GruWeights {
            w_z: Linear::from_named(model, "gru.update.w", None),
            u_z: Linear::from_named(model, "gru.update.u", None),
            b_z: bias_of("gru.update.b"),
            w_r: Linear::from_named(model, "gru.reset.w", None),
            u_r: Linear::from_named(model, "gru.reset.u", None),
            b_r: bias_of("gru.reset.b"),
            w_h: Linear::from_named(model, "gru.cand.w", None),
            u_h: Linear::from_named(model, "gru.cand.u", None),
            b_h: bias_of("gru.cand.b"),
        };
        let decoders = (0..cfg.ensemble_size)
            .map(|m| {
                (
                    Linear::from_params(model, &format!("decoder{m}.l0")),
                    Linear::from_params(model, &format!("decoder{m}.l1")),
                )
            })
            .collect();
        let deter = cfg.deter_size;
        let embed = Linear::from_params(model, "embed.l0");
        let hidden = cfg.hidden_size;
        let obs_len = cfg.obs_len;
        let cats = cfg.state_categories;
        let dims = cfg.state_dims;
        let ensemble = cfg.ensemble_size;
        RolloutEvaluator {
            embed,
            gru,
            prior0: Linear::from_params(model, "prior.l0"),
            prior1: Linear::from_params(model, "prior.l1"),
            decoders,

            embed_out: vec![0.0; cfg.embed_size],
            gate_a: vec![0.0; deter],
            gate_b: vec![0.0; deter],
            z: vec![0.0; deter],
            r: vec![0.0; deter],
            rh: vec![0.0; deter],
            cand: vec![0.0; deter],
            hidden: vec![0.0; hidden],
            prior_logits: vec![0.0; dims * cats],
            row_probs: vec![0.0; cats],
            dim_logq: vec![0.0; dims],
            dec_hidden: vec![0.0; hidden],
            dec_logits: vec![0.0; obs_len],
            member_probs: vec![vec![0.0; obs_len]; ensemble],
            cfg,
        }
    }

    pub fn config(&self) -> &RssmConfig {
        &self.cfg
    }

    /// h = GRU(embed(concat(s, a)), h_prev); `state` holds the per-dim hot
    /// category indices, `h` is updated in place.
    #[allow(clippy::needless_range_loop)]
    pub fn recurrent_step(&mut self, h: &mut [f64], state: &[usize], action: Action) {
        // embed: dense part is empty, hot columns are the state categories
        // then the action column.
        let cats = self.cfg.state_categories;
        let mut hot: Vec<usize> = state.iter().enumerate().map(|(d, c)| d * cats + c).collect();
        hot.push(self.cfg.state_flat() + action.index());
        self.embed.forward_sparse(&[], &hot, &mut self.embed_out);

        let x = &self.embed_out;
        self.gru.w_z.forward(x, &mut self.gate_a);
        self.gru.u_z.forward(h, &mut self.gate_b);
        for i in 0..h.len() {
            self.z[i] = sigmoid(self.gate_a[i] + self.gate_b[i] + self.gru.b_z[i]);
        }
        self.gru.w_r.forward(x, &mut self.gate_a);
        self.gru.u_r.forward(h, &mut self.gate_b);
        for i in 0..h.len() {
            self.r[i] = sigmoid(self.gate_a[i] + self.gate_b[i] + self.gru.b_r[i]);
        }
        for i in 0..h.len() {
            self.rh[i] = self.r[i] * h[i];
        }
        self.gru.w_h.forward(x, &mut self.gate_a);
        self.gru.u_h.forward(&self.rh, &mut self.gate_b);
        for i in 0..h.len() {
            self.cand[i] = (self.gate_a[i] + self.gate_b[i] + self.gru.b_h[i]).tanh();
        }
        for i in 0..h.len() {
            h[i] = (1.0 - self.z[i]) * h[i] + self.z[i] * self.cand[i];
        }
    }

    /// Prior logits for `h`, then per-dim sampling. Writes the sampled
    /// category per dim into `state` and keeps per-dim log q values for
    /// [`RolloutEvaluator::term2`].
    #[allow(clippy::needless_range_loop)]
    pub fn sample_prior(&mut self, h: &[f64], state: &mut [usize], rng: &mut SeededRng) {
        self.prior0.forward(h, &mut self.hidden);
        for v in self.hidden.iter_mut() {
            *v = v.tanh();
        }
        let (prior1, hidden, logits) = (&self.prior1, &self.hidden, &mut self.prior_logits);
        prior1.forward(hidden, logits);

        let cats = self.cfg.state_categories;
        for d in 0..self.cfg.state_dims {
            let row = &self.prior_logits[d * cats..(d + 1) * cats];
            let (max, sum) = softmax_into_with_stats(row, &mut self.row_probs);
            let u: f64 = rng.random::<f64>();
            let mut acc = 0.0;
            let mut chosen = cats - 1;
            for (j, p) in self.row_probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            state[d] = chosen;
            self.dim_logq[d] = row[chosen] - (sum.ln() + max);
        }
    }

    /// Σ_dims (log q of the sampled category minus its preference
    /// log-probability) for the last sampled
    /// state, accumulated per dim to match the reference grouping.
    pub fn term2(&self, state: &[usize], pref_logp: &[f64]) -> f64 {
        let mut term = 0.0;
        for (c, lq) in state.iter().zip(&self.dim_logq) {
            term += lq - pref_logp[*c];
        }
        term
    }

    /// Decodes all ensemble members at (h, state); fills `member_probs`.
    fn decode_all(&mut self, h: &[f64], state: &[usize]) {
        let cats = self.cfg.state_categories;
        let hot: Vec<usize> = state.iter().enumerate().map(|(d, c)| d * cats + c).collect();
        for (m, (l0, l1)) in self.decoders.iter().enumerate() {
            l0.forward_sparse(h, &hot, &mut self.dec_hidden);
            for v in self.dec_hidden.iter_mut() {
                *v = v.tanh();
            }
            l1.forward(&self.dec_hidden, &mut self.dec_logits);
            for (p, x) in self.member_probs[m].iter_mut().zip(&self.dec_logits) {
                *p = sigmoid(*x);
            }
        }
    }

    /// (observation entropy of the canonical decoder, ensemble disagreement)
    /// at (h, state). The disagreement replicates
    /// [`crate::world_model::probability_disagreement`] loop for loop.
    pub fn observation_terms(&mut self, h: &[f64], state: &[usize]) -> (f64, f64) {
        self.decode_all(h, state);
        let entropy: f64 = self.member_probs[0]
            .iter()
            .map(|p| crate::numerics::bernoulli_entropy(*p))
            .sum();
        let n = self.member_probs.len();
        let bits = self.cfg.obs_len;
        let mut total = 0.0;
        for b in 0..bits {
            let mut pair_sum = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    let d = self.member_probs[i][b] - self.member_probs[j][b];
                    pair_sum += d * d;
                }
            }
            total += pair_sum / (n * n) as f64;
        }
        (entropy, total / bits as f64)
    }
}
