//! General robust loss on the raw depth error `e = d̂ − d`:
//! `(|α−2|/α)·( ((e/c)²/|α−2|)^{α/2} − 1 )`, averaged over valid pixels.

use serde::Serialize;

use super::{real, DepthPair, LossError, Real, TermLoss};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RobustParams<T> {
    pub alpha: T,
    pub c: T,
}

impl<T: Real> Default for RobustParams<T> {
    fn default() -> Self {
        RobustParams { alpha: T::one(), c: real(2.0) }
    }
}

impl<T: Real> RobustParams<T> {
    /// α ∈ {0, 2} makes the closed form degenerate and is rejected here.
    pub fn new(alpha: T, c: T) -> Result<Self, LossError> {
        if alpha == T::zero() || alpha == real(2.0) {
            return Err(LossError::InvalidParam(format!(
                "robust alpha must avoid {{0, 2}}, got {alpha}"
            )));
        }
        if c <= T::zero() {
            return Err(LossError::InvalidParam(format!("robust c must be > 0, got {c}")));
        }
        Ok(RobustParams { alpha, c })
    }
}

pub fn robust_loss<T: Real>(
    pair: &DepthPair<T>,
    params: &RobustParams<T>,
) -> Result<TermLoss<T>, LossError> {
    let n = pair.require_valid()?;
    RobustParams::new(params.alpha, params.c)?;
    let n_t = real::<T>(n as f64);
    let two = real::<T>(2.0);
    let a = params.alpha;
    let c2 = params.c * params.c;
    let am2 = (a - two).abs();

    let mut out = TermLoss::zeros_like(pair);
    for (y, x, &ok) in pair.valid.enumerate() {
        if !ok {
            continue;
        }
        let e = pair.pred.get(y, x) - pair.gt.get(y, x);
        let q = e * e / (c2 * am2);
        out.value = out.value + am2 / a * (q.powf(a / two) - T::one()) / n_t;
        // d/de = q^{α/2−1}·e/c²; the α < 2 branch is singular at e = 0,
        // where the subgradient 0 applies.
        if e != T::zero() {
            let g = q.powf(a / two - T::one()) * e / c2;
            out.grad.set(y, x, g / n_t);
        }
    }
    Ok(out)
}
