//! Sampling ops and entropies: straight-through categorical, diagonal
//! Gaussian reparameterization, categorical and Bernoulli entropy.

use rand::Rng;

use crate::numerics::tensor::{grad_enabled, softmax_vec, Tensor};
use crate::numerics::NumericsError;
use crate::rng::SeededRng;

/// One-hot categorical sample per row with a straight-through backward pass:
/// gradients flow to the logits as if the output were softmax(logits).
///
/// 1-D logits are one row; 2-D logits sample each row independently.
pub fn categorical_sample_st(logits: &Tensor, rng: &mut SeededRng) -> Result<Tensor, NumericsError> {
    logits.check_finite("categorical_sample_st logits")?;
    let shape = logits.shape();
    let (rows, cols) = match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => {
            return Err(NumericsError::ShapeMismatch {
                op: "categorical_sample_st",
                detail: format!("expected 1-D or 2-D logits, got {shape:?}"),
            })
        }
    };

    let values = logits.values();
    let mut onehot = vec![0.0; rows * cols];
    let mut probs = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &values[r * cols..(r + 1) * cols];
        let p = softmax_vec(row);
        let u: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut chosen = cols - 1;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                chosen = j;
                break;
            }
        }
        onehot[r * cols + chosen] = 1.0;
        probs[r * cols..(r + 1) * cols].copy_from_slice(&p);
    }

    if !grad_enabled() || !logits.requires_grad() {
        return Ok(Tensor::constant(&shape, onehot));
    }

    // Forward emits the hard sample; backward applies the softmax Jacobian
    // row by row, exactly as if the forward output had been softmax(logits).
    let soft = logits.softmax_rows();
    let hard_minus_soft = Tensor::constant(&shape, onehot).sub(&soft.detach());
    Ok(soft.add(&hard_minus_soft))
}

/// Reparameterized sample from a diagonal Gaussian: mean + exp(0.5·logvar)⊙ε.
pub fn gaussian_sample(
    mean: &Tensor,
    logvar: &Tensor,
    rng: &mut SeededRng,
) -> Result<Tensor, NumericsError> {
    if mean.shape() != logvar.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "gaussian_sample",
            detail: format!("mean {:?} vs logvar {:?}", mean.shape(), logvar.shape()),
        });
    }
    let n = mean.len();
    let eps: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
    let eps = Tensor::constant(&mean.shape(), eps);
    let std = logvar.scale(0.5).exp();
    Ok(mean.add(&std.mul(&eps)))
}

/// Standard normal via Box-Muller; two uniforms per draw keeps the stream
/// layout simple and reproducible.
fn standard_normal(rng: &mut SeededRng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Entropy −Σ p·ln p in nats, with 0·ln 0 := 0. Errors if `p` is not a
/// probability vector (non-negative, sums to 1 within 1e-6).
pub fn entropy_categorical(p: &[f64]) -> Result<f64, NumericsError> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(NumericsError::NotNormalized(sum));
    }
    Ok(p.iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum())
}

/// Entropy of a Bernoulli(p) in nats.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let q = 1.0 - p;
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if q > 0.0 {
        h -= q * q.ln();
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn dominant_logit_selects_its_category() {
        let mut rng = seeded_rng(0);
        let logits = Tensor::constant(&[3], vec![100.0, 0.0, 0.0]);
        for _ in 0..50 {
            let s = categorical_sample_st(&logits, &mut rng).unwrap();
            assert_eq!(s.values(), vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut rng = seeded_rng(123);
        let cats = 4;
        let logits = Tensor::constant(&[cats], vec![0.0; cats]);
        let n = 100_000usize;
        let mut counts = vec![0usize; cats];
        for _ in 0..n {
            let s = categorical_sample_st(&logits, &mut rng).unwrap();
            let idx = s.values().iter().position(|v| *v == 1.0).unwrap();
            counts[idx] += 1;
        }
        // Binomial oracle: each count is Bin(n, 1/cats); 3σ band.
        let p = 1.0 / cats as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - n as f64 * p).abs() < 3.0 * sigma,
                "count {c} outside 3σ of {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn straight_through_gradient_matches_softmax_path() {
        // Loss linear in the sample: L = c·onehot. The straight-through
        // gradient equals the analytic gradient of c·softmax(logits).
        let mut rng = seeded_rng(9);
        let logits = Tensor::param(&[3], vec![0.2, -0.5, 1.0]);
        let c = [0.7, -1.3, 0.4];

        let sample = categorical_sample_st(&logits, &mut rng).unwrap();
        let coeff = Tensor::constant(&[3], c.to_vec());
        sample.mul(&coeff).sum().backward();
        let st_grad = logits.grad().unwrap();

        // Analytic gradient of Σ c_i p_i: dp_i/dx_j = p_i(δ_ij − p_j).
        let p = softmax_vec(&logits.values());
        let dot: f64 = c.iter().zip(&p).map(|(ci, pi)| ci * pi).sum();
        for j in 0..3 {
            let analytic = p[j] * (c[j] - dot);
            assert!(
                (st_grad[j] - analytic).abs() < 1e-12,
                "grad mismatch at {j}: {} vs {}",
                st_grad[j],
                analytic
            );
        }
    }

    #[test]
    fn rejects_non_finite_logits() {
        let mut rng = seeded_rng(1);
        let logits = Tensor::constant(&[2], vec![f64::NAN, 0.0]);
        assert!(categorical_sample_st(&logits, &mut rng).is_err());
    }

    #[test]
    fn multi_row_sampling_is_rowwise_onehot() {
        let mut rng = seeded_rng(2);
        let logits = Tensor::constant(&[4, 3], vec![0.0; 12]);
        let s = categorical_sample_st(&logits, &mut rng).unwrap();
        let v = s.values();
        for r in 0..4 {
            let row_sum: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert_eq!(row_sum, 1.0);
        }
    }

    #[test]
    fn entropy_known_values() {
        let uniform64 = vec![1.0 / 64.0; 64];
        assert!((entropy_categorical(&uniform64).unwrap() - 64f64.ln()).abs() < 1e-12);
        let mut onehot = vec![0.0; 8];
        onehot[3] = 1.0;
        assert_eq!(entropy_categorical(&onehot).unwrap(), 0.0);
        assert!((entropy_categorical(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_unnormalized() {
        assert!(entropy_categorical(&[0.5, 0.6]).is_err());
        assert!(entropy_categorical(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn gaussian_sample_is_reparameterized() {
        let mut rng = seeded_rng(4);
        let mean = Tensor::param(&[2], vec![1.0, -2.0]);
        let logvar = Tensor::param(&[2], vec![0.0, 0.0]);
        let s = gaussian_sample(&mean, &logvar, &mut rng).unwrap();
        s.sum().backward();
        // d(mean + std·ε)/d(mean) = 1 elementwise.
        assert_eq!(mean.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn gaussian_moments_roughly_match() {
        let mut rng = seeded_rng(77);
        let mean = Tensor::constant(&[1], vec![2.0]);
        let logvar = Tensor::constant(&[1], vec![(0.25f64).ln()]);
        let n = 20_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let v = gaussian_sample(&mean, &logvar, &mut rng).unwrap().scalar_value();
            acc += v;
            acc2 += v * v;
        }
        let m = acc / n as f64;
        let var = acc2 / n as f64 - m * m;
        assert!((m - 2.0).abs() < 0.02, "mean {m}");
        assert!((var - 0.25).abs() < 0.02, "var {var}");
    }
}
