//! Named parameter sets and the Adam optimizer.

use std::collections::BTreeMap;

use crate::numerics::tensor::Tensor;
use crate::numerics::NumericsError;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named leaf parameters with per-parameter Adam moments and a shared step
/// counter. Iteration order is the name order (BTreeMap), which keeps
/// checkpoints and updates deterministic.
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet {
            params: BTreeMap::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    /// Registers a leaf parameter tensor under `name`. The tensor is shared:
    /// layers keep clones of the same `Tensor`, so optimizer updates are
    /// visible to them.
    pub fn register(&mut self, name: &str, tensor: Tensor) -> Tensor {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let n = tensor.len();
        self.moments.insert(
            name.to_string(),
            Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
        self.params.insert(name.to_string(), tensor.clone());
        tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn clear_grads(&self) {
        for t in self.params.values() {
            t.clear_grad();
        }
    }

    /// Fills in an explicit zero gradient for parameters backward never
    /// reached. For objectives where a degenerate setting (for instance a
    /// zero learning rate upstream) legitimately disconnects parameters.
    pub fn zero_missing_grads(&self) {
        for t in self.params.values() {
            t.ensure_zero_grad();
        }
    }

    /// One Adam step with bias-corrected moments. Every parameter must have
    /// a populated gradient; gradients are cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NumericsError> {
        for (name, t) in &self.params {
            if t.grad().is_none() {
                return Err(NumericsError::MissingGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, param) in &self.params {
            let grad = param.grad().expect("checked above");
            let moments = self.moments.get_mut(name).expect("registered");
            let mut values = param.values();
            for i in 0..values.len() {
                let g = grad[i];
                moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
                moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = moments.m[i] / bc1;
                let v_hat = moments.v[i] / bc2;
                values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            param.set_values(&values);
        }
        self.clear_grads();
        Ok(())
    }
}
