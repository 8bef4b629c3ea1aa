//! Special functions.

use crate::numerics::NumericsError;

/// Digamma function ψ(x) for x > 0.
///
/// Uses the recurrence ψ(x) = ψ(x+1) − 1/x to shift the argument above 10,
/// then the asymptotic expansion
/// ψ(x) ≈ ln x − 1/(2x) − Σ B_{2n}/(2n x^{2n}),
/// which is accurate to well below 1e-12 in that range.
pub fn digamma(x: f64) -> Result<f64, NumericsError> {
    if !x.is_finite() || x <= 0.0 {
        return Err(NumericsError::DigammaDomain(x));
    }
    let mut shift = 0.0;
    let mut x = x;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Coefficients B_{2n}/(2n): 1/12, -1/120, 1/252, -1/240, 1/132, -691/32760.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    Ok(shift + x.ln() - 0.5 * inv - series)
}
