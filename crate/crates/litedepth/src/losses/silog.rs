//! Scale-invariant log loss: `α·√( mean(e²) − λ·mean(e)² )` with
//! `e = log d̂ − log d` over valid pixels.

use serde::Serialize;

use super::{real, DepthPair, LossError, Real, TermLoss, DEPTH_CLAMP_MIN};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SilogParams<T> {
    pub alpha: T,
    pub lambda: T,
}

impl<T: Real> Default for SilogParams<T> {
    fn default() -> Self {
        SilogParams { alpha: real(10.0), lambda: real(0.85) }
    }
}

impl<T: Real> SilogParams<T> {
    pub fn new(alpha: T, lambda: T) -> Result<Self, LossError> {
        if alpha <= T::zero() {
            return Err(LossError::InvalidParam(format!("silog alpha must be > 0, got {alpha}")));
        }
        if lambda < T::zero() || lambda > T::one() {
            return Err(LossError::InvalidParam(format!(
                "silog lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(SilogParams { alpha, lambda })
    }
}

/// With λ = 1 the value is `α` times the standard deviation of the log
/// error, invariant under any positive rescaling of the prediction.
pub fn silog_loss<T: Real>(
    pair: &DepthPair<T>,
    params: &SilogParams<T>,
) -> Result<TermLoss<T>, LossError> {
    let n = pair.require_valid()?;
    let n_t = real::<T>(n as f64);
    let clamp = real::<T>(DEPTH_CLAMP_MIN);

    let (h, w) = (pair.pred.height(), pair.pred.width());
    let mut errors = crate::grid::Grid::filled(h, w, T::zero());
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    for (y, x, &ok) in pair.valid.enumerate() {
        if !ok {
            continue;
        }
        let e = pair.pred_clamped(y, x).ln() - pair.gt.get(y, x).max(clamp).ln();
        errors.set(y, x, e);
        s1 = s1 + e;
        s2 = s2 + e * e;
    }

    // radicand = mean(e²) − λ·mean(e)²; non-negative for λ ≤ 1 in exact
    // arithmetic, guarded against rounding anyway.
    let mean1 = s1 / n_t;
    let radicand = s2 / n_t - params.lambda * mean1 * mean1;
    let mut out = TermLoss::zeros_like(pair);
    if radicand <= T::zero() {
        return Ok(out);
    }
    let value = params.alpha * radicand.sqrt();
    out.value = value;

    // dL/de_i = α (e_i/N − λ·S1/N²) / √radicand, then de/dd̂ = 1/d̂ (zero
    // where the clamp is active).
    let scale = params.alpha / radicand.sqrt();
    for (y, x, &ok) in pair.valid.enumerate() {
        if !ok {
            continue;
        }
        if pair.pred.get(y, x) < clamp {
            continue;
        }
        let e = errors.get(y, x);
        let de = scale * (e / n_t - params.lambda * mean1 / n_t);
        out.grad.set(y, x, de / pair.pred_clamped(y, x));
    }
    Ok(out)
}
