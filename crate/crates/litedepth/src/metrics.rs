//! Challenge evaluation metrics (si-RMSE, RMSE, log10, REL) and the
//! score formula combining si-RMSE with device runtime.

use serde::Serialize;
use thiserror::Error;

use crate::grid::Grid;
use crate::losses::DEPTH_CLAMP_MIN;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("valid mask has no true pixels")]
    EmptyMask,
    #[error("shape mismatch: pred {pred:?}, gt {gt:?}, valid {valid:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
        valid: (usize, usize),
    },
    #[error("runtime must be positive, got {0}")]
    NonPositiveRuntime(f64),
    #[error("score constant C must be positive, got {0}")]
    NonPositiveConstant(f64),
}

/// The four depth-quality metrics over a valid-pixel set. All accumulation
/// runs in f64.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    /// √(mean(e²) − mean(e)²) with e = ln d̂ − ln d: standard deviation of
    /// the log error, blind to global prediction scale.
    pub si_rmse: f64,
    /// √mean((d̂ − d)²), meters.
    pub rmse: f64,
    /// mean |log10 d̂ − log10 d|.
    pub log10: f64,
    /// mean |d̂ − d| / d.
    pub rel: f64,
    pub n_valid: usize,
}

/// Streaming accumulator so per-image and pixel-pooled aggregates share one
/// code path.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelPool {
    sum_e: f64,
    sum_e2: f64,
    sum_sq: f64,
    sum_log10: f64,
    sum_rel: f64,
    n: usize,
}

impl PixelPool {
    pub fn add(
        &mut self,
        pred: &Grid<f32>,
        gt: &Grid<f32>,
        valid: &Grid<bool>,
    ) -> Result<(), MetricsError> {
        if !pred.same_shape(gt) || !pred.same_shape(valid) {
            return Err(MetricsError::ShapeMismatch {
                pred: (pred.height(), pred.width()),
                gt: (gt.height(), gt.width()),
                valid: (valid.height(), valid.width()),
            });
        }
        for (y, x, &ok) in valid.enumerate() {
            if !ok {
                continue;
            }
            let d_hat = (pred.get(y, x) as f64).max(DEPTH_CLAMP_MIN);
            let d = gt.get(y, x) as f64;
            let e = d_hat.ln() - d.max(DEPTH_CLAMP_MIN).ln();
            self.sum_e += e;
            self.sum_e2 += e * e;
            let diff = pred.get(y, x) as f64 - d;
            self.sum_sq += diff * diff;
            self.sum_log10 += (d_hat.log10() - d.max(DEPTH_CLAMP_MIN).log10()).abs();
            self.sum_rel += diff.abs() / d;
            self.n += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<EvalResult, MetricsError> {
        if self.n == 0 {
            return Err(MetricsError::EmptyMask);
        }
        let n = self.n as f64;
        let mean_e = self.sum_e / n;
        Ok(EvalResult {
            si_rmse: (self.sum_e2 / n - mean_e * mean_e).max(0.0).sqrt(),
            rmse: (self.sum_sq / n).sqrt(),
            log10: self.sum_log10 / n,
            rel: self.sum_rel / n,
            n_valid: self.n,
        })
    }
}

/// Metrics of one prediction against ground truth over the valid pixels.
/// Predictions are clamped to ≥ 1e-6 m for the log metrics.
pub fn evaluate(
    pred: &Grid<f32>,
    gt: &Grid<f32>,
    valid: &Grid<bool>,
) -> Result<EvalResult, MetricsError> {
    let mut pool = PixelPool::default();
    pool.add(pred, gt, valid)?;
    pool.finish()
}

/// Runtime with a mandatory unit tag; the score divides by milliseconds and
/// a silent unit mix-up would be a 1000x error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Runtime {
    Millis(f64),
    Seconds(f64),
}

impl Runtime {
    pub fn as_millis(self) -> f64 {
        match self {
            Runtime::Millis(ms) => ms,
            Runtime::Seconds(s) => s * 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScoreParams {
    pub c: f64,
    pub runtime: Runtime,
}

impl ScoreParams {
    pub fn new(c: f64, runtime: Runtime) -> Result<Self, MetricsError> {
        if c <= 0.0 {
            return Err(MetricsError::NonPositiveConstant(c));
        }
        if runtime.as_millis() <= 0.0 {
            return Err(MetricsError::NonPositiveRuntime(runtime.as_millis()));
        }
        Ok(ScoreParams { c, runtime })
    }
}

/// Challenge score `2^(−20·si_rmse) / (C·runtime)`: strictly decreasing in
/// both si-RMSE and runtime.
pub fn challenge_score(si_rmse: f64, params: &ScoreParams) -> Result<f64, MetricsError> {
    ScoreParams::new(params.c, params.runtime)?;
    Ok((-20.0 * si_rmse).exp2() / (params.c * params.runtime.as_millis()))
}
