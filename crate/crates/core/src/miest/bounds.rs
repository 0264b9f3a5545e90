//! Conditional-entropy bounds from a classifier's error rate, and the
//! mid-point MI estimate built on them.

use serde::{Deserialize, Serialize};

use crate::data::entropy_bits;
use crate::error::{invalid, Result};

/// Slack when checking that an error rate lies in `[0, (M-1)/M]`.
const ERR_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBounds {
    pub lower: f64,
    pub upper: f64,
    /// Segment `m` of the piecewise-linear lower bound.
    pub regime: usize,
}

/// `H_2(p)` in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Lower (piecewise-linear) and upper (Fano) bounds on `H(Y|X)` in bits for
/// a Bayes error `err` over `m` classes.
pub fn cond_entropy_bounds(err: f64, m: usize) -> Result<EntropyBounds> {
    if m < 2 {
        return Err(invalid(format!("bounds need at least two classes, got {m}")));
    }
    let max_err = (m - 1) as f64 / m as f64;
    if !(err >= -ERR_SLACK && err <= max_err + ERR_SLACK) {
        return Err(invalid(format!("error rate {err} outside [0, {max_err}] for {m} classes")));
    }
    let err = err.clamp(0.0, max_err);
    let acc = 1.0 - err;
    // smallest segment with 1/(k+1) <= 1 - err
    let mut k = 1;
    while k < m - 1 && 1.0 / (k as f64 + 1.0) > acc {
        k += 1;
    }
    let kf = k as f64;
    let lower = kf.log2() + kf * (kf + 1.0) * ((kf + 1.0) / kf).log2() * (err - (kf - 1.0) / kf);
    let upper = binary_entropy(err) + err * ((m - 1) as f64).log2();
    let cap = (m as f64).log2();
    let upper = upper.min(cap);
    Ok(EntropyBounds {
        lower: lower.clamp(0.0, upper),
        upper,
        regime: k,
    })
}

/// MI bounds `(F_l, F_u) = (H(Y) - H_u, H(Y) - H_l)`.
pub fn mi_bounds(err: f64, marginal: &[f64]) -> Result<(f64, f64)> {
    let hy = entropy_bits(marginal)?;
    let b = cond_entropy_bounds(err, marginal.len())?;
    Ok((hy - b.upper, hy - b.lower))
}

/// Mid-point of the MI bounds, with negative bounds floored at zero.
pub fn midpoint_value(err: f64, marginal: &[f64]) -> Result<f64> {
    let (lo, hi) = mi_bounds(err, marginal)?;
    Ok(0.5 * (lo.max(0.0) + hi.max(0.0)))
}
