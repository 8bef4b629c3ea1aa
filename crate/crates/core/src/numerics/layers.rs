//! MLP and GRU building blocks.
//!
//! Weights are Xavier-uniform, biases zero, both registered in a [`ParamSet`]
//! so the optimizer and checkpointing see them by name.

use rand::Rng;

use crate::numerics::optim::ParamSet;
use crate::numerics::tensor::Tensor;
use crate::numerics::NumericsError;
use crate::rng::SeededRng;

fn xavier_uniform(rows: usize, cols: usize, rng: &mut SeededRng) -> Vec<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect()
}

fn linear_pair(
    ps: &mut ParamSet,
    name: &str,
    out: usize,
    inp: usize,
    rng: &mut SeededRng,
) -> (Tensor, Tensor) {
    let w = ps.register(
        &format!("{name}.w"),
        Tensor::param(&[out, inp], xavier_uniform(out, inp, rng)),
    );
    let b = ps.register(&format!("{name}.b"), Tensor::param(&[out], vec![0.0; out]));
    (w, b)
}

/// Multi-layer perceptron: tanh on hidden layers, linear output.
pub struct Mlp {
    layers: Vec<(Tensor, Tensor)>,
    sizes: Vec<usize>,
}

impl Mlp {
    /// `sizes` lists layer widths input-first, e.g. `[80, 64, 128]`.
    pub fn new(ps: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut SeededRng) -> Mlp {
        assert!(sizes.len() >= 2, "mlp needs at least input and output sizes");
        let mut layers = Vec::new();
        for i in 0..sizes.len() - 1 {
            layers.push(linear_pair(
                ps,
                &format!("{name}.l{i}"),
                sizes[i + 1],
                sizes[i],
                rng,
            ));
        }
        Mlp {
            layers,
            sizes: sizes.to_vec(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NumericsError> {
        if x.shape() != vec![self.input_size()] {
            return Err(NumericsError::ShapeMismatch {
                op: "mlp_forward",
                detail: format!("expected input [{}], got {:?}", self.input_size(), x.shape()),
            });
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = w.matvec(&h).add(b);
            if i < last {
                h = h.tanh();
            }
        }
        Ok(h)
    }
}

/// GRU cell with the convention h' = (1−z)⊙h_prev + z⊙h̃.
///
/// With all parameters zero this gives z = 0.5, h̃ = 0, so h' = 0.5·h_prev.
pub struct GruCell {
    input_size: usize,
    hidden_size: usize,
    w_z: Tensor,
    u_z: Tensor,
    b_z: Tensor,
    w_r: Tensor,
    u_r: Tensor,
    b_r: Tensor,
    w_h: Tensor,
    u_h: Tensor,
    b_h: Tensor,
}

impl GruCell {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut SeededRng,
    ) -> GruCell {
        let gate = |tag: &str, ps: &mut ParamSet, rng: &mut SeededRng| {
            let w = ps.register(
                &format!("{name}.{tag}.w"),
                Tensor::param(&[hidden_size, input_size], xavier_uniform(hidden_size, input_size, rng)),
            );
            let u = ps.register(
                &format!("{name}.{tag}.u"),
                Tensor::param(&[hidden_size, hidden_size], xavier_uniform(hidden_size, hidden_size, rng)),
            );
            let b = ps.register(
                &format!("{name}.{tag}.b"),
                Tensor::param(&[hidden_size], vec![0.0; hidden_size]),
            );
            (w, u, b)
        };
        let (w_z, u_z, b_z) = gate("update", ps, rng);
        let (w_r, u_r, b_r) = gate("reset", ps, rng);
        let (w_h, u_h, b_h) = gate("cand", ps, rng);
        GruCell {
            input_size,
            hidden_size,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn step(&self, x: &Tensor, h_prev: &Tensor) -> Result<Tensor, NumericsError> {
        if x.shape() != vec![self.input_size] {
            return Err(NumericsError::ShapeMismatch {
                op: "gru_step",
                detail: format!("expected input [{}], got {:?}", self.input_size, x.shape()),
            });
        }
        if h_prev.shape() != vec![self.hidden_size] {
            return Err(NumericsError::ShapeMismatch {
                op: "gru_step",
                detail: format!("expected hidden [{}], got {:?}", self.hidden_size, h_prev.shape()),
            });
        }
        let z = self.w_z.matvec(x).add(&self.u_z.matvec(h_prev)).add(&self.b_z).sigmoid();
        let r = self.w_r.matvec(x).add(&self.u_r.matvec(h_prev)).add(&self.b_r).sigmoid();
        let cand = self
            .w_h
            .matvec(x)
            .add(&self.u_h.matvec(&r.mul(h_prev)))
            .add(&self.b_h)
            .tanh();
        let ones = Tensor::constant(&[self.hidden_size], vec![1.0; self.hidden_size]);
        Ok(ones.sub(&z).mul(h_prev).add(&z.mul(&cand)))
    }
}
