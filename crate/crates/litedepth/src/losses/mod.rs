//! Training-loss suite: scale-invariant log loss, masked gradient loss,
//! virtual-normal loss and the general robust loss, each with analytic
//! per-pixel gradients w.r.t. the predicted depth, plus static / dynamic
//! term weighting, affinity-map distillation and a toy fitter that descends
//! the analytic gradients.
//!
//! Everything is generic over the float type so the same code runs the f32
//! production path and the f64 verification path.

mod distill;
mod fit;
mod gradient;
mod robust;
mod silog;
mod vnl;

pub use distill::{affinity_from_tensor, affinity_map, distill_loss, AffinityMap, FeatureMap};
pub use fit::{fit_toy, FitConfig, FitOutcome, FitStep};
pub use gradient::grad_loss;
pub use robust::{robust_loss, RobustParams};
pub use silog::{silog_loss, SilogParams};
pub use vnl::{
    sample_triplets, vnl_loss, vnl_loss_with_triplets, CameraIntrinsics, Triplet, VnlConfig,
};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use serde::Serialize;
use thiserror::Error;

use crate::grid::Grid;

/// Float scalar the loss kernels are generic over (f32 or f64).
pub trait Real: Float + Sum + Debug + Display + Default + Send + Sync + 'static {}
impl<T: Float + Sum + Debug + Display + Default + Send + Sync + 'static> Real for T {}

/// Shorthand for lossless literal conversion into the generic scalar.
pub(crate) fn real<T: Real>(x: f64) -> T {
    T::from(x).expect("f64 converts into Real")
}

/// Predictions are clamped to this floor (meters) before any logarithm;
/// the network's final ReLU permits exact zeros.
pub const DEPTH_CLAMP_MIN: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("valid mask has no true pixels")]
    EmptyValidMask,
    #[error("shape mismatch: pred {pred:?}, gt {gt:?}, valid {valid:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
        valid: (usize, usize),
    },
    #[error("no finite gradient entries: every adjacent pair touches an invalid pixel")]
    NoFiniteGradientEntries,
    #[error(
        "sampler accepted {accepted} point triplets, fewer than the required {needed}; \
         relax the sampling constraints (image distance / angle bounds)"
    )]
    TooFewTriplets { accepted: usize, needed: usize },
    #[error("affinity features must have batch 1, got {0}")]
    BatchNotOne(usize),
    #[error("feature levels disagree: student {student}, teacher {teacher}")]
    LevelCountMismatch { student: usize, teacher: usize },
    #[error("level {level}: spatial dims differ, student {student:?} vs teacher {teacher:?}")]
    SpatialMismatch {
        level: usize,
        student: (usize, usize),
        teacher: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
}

/// Prediction / ground-truth / validity triple all loss terms consume.
/// Loss terms read only pixels where `valid` is true.
#[derive(Debug, Clone)]
pub struct DepthPair<T> {
    pub pred: Grid<T>,
    pub gt: Grid<T>,
    pub valid: Grid<bool>,
}

impl<T: Real> DepthPair<T> {
    pub fn new(pred: Grid<T>, gt: Grid<T>, valid: Grid<bool>) -> Result<Self, LossError> {
        if !pred.same_shape(&gt) || !pred.same_shape(&valid) {
            return Err(LossError::ShapeMismatch {
                pred: (pred.height(), pred.width()),
                gt: (gt.height(), gt.width()),
                valid: (valid.height(), valid.width()),
            });
        }
        Ok(DepthPair { pred, gt, valid })
    }

    pub fn n_valid(&self) -> usize {
        self.valid.count_true()
    }

    /// Valid-pixel count, or the empty-mask error every term reports.
    pub(crate) fn require_valid(&self) -> Result<usize, LossError> {
        match self.n_valid() {
            0 => Err(LossError::EmptyValidMask),
            n => Ok(n),
        }
    }

    /// Prediction clamped to [`DEPTH_CLAMP_MIN`] at (y, x).
    #[inline]
    pub(crate) fn pred_clamped(&self, y: usize, x: usize) -> T {
        self.pred.get(y, x).max(real(DEPTH_CLAMP_MIN))
    }
}

/// Scalar loss value plus its per-pixel gradient w.r.t. predicted depth.
/// Gradients are zero on invalid pixels.
#[derive(Debug, Clone)]
pub struct TermLoss<T> {
    pub value: T,
    pub grad: Grid<T>,
}

impl<T: Real> TermLoss<T> {
    pub(crate) fn zeros_like(pair: &DepthPair<T>) -> Self {
        TermLoss {
            value: T::zero(),
            grad: Grid::filled(pair.pred.height(), pair.pred.width(), T::zero()),
        }
    }
}

/// Subgradient-friendly sign: 0 at 0.
#[inline]
pub(crate) fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Term weighting for the combined depth loss. In static mode the four
/// fixed weights apply; in dynamic mode each term is weighted by
/// `exp(-s_k)` with the learnable log-variances `s_k` entering the combined
/// value as `Σ exp(-s_k)·L_k + s_k`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossWeights<T> {
    /// (silog, gradient, vnl, robust) static weights.
    pub w: [T; 4],
    /// Distillation weight used by [`total_loss`].
    pub w_d: T,
    pub dynamic: bool,
    pub log_vars: [T; 4],
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            w: [real(1.0), real(0.25), real(2.5), real(0.6)],
            w_d: real(10.0),
            dynamic: false,
            log_vars: [T::zero(); 4],
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.w.iter().any(|w| *w < T::zero()) || self.w_d < T::zero() {
            return Err(LossError::InvalidParam("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parameters for one full depth-loss evaluation.
#[derive(Debug, Clone)]
pub struct DepthLossParams<T> {
    pub silog: SilogParams<T>,
    pub robust: RobustParams<T>,
    pub vnl: VnlConfig<T>,
    /// Pinhole intrinsics for the VNL back-projection; `None` derives the
    /// default calibration from the map resolution.
    pub intrinsics: Option<CameraIntrinsics<T>>,
    /// Seed for the VNL triplet sampler.
    pub vnl_seed: u64,
}

impl<T: Real> Default for DepthLossParams<T> {
    fn default() -> Self {
        DepthLossParams {
            silog: SilogParams::default(),
            robust: RobustParams::default(),
            vnl: VnlConfig::default(),
            intrinsics: None,
            vnl_seed: 0,
        }
    }
}

/// Per-term values, the combined value under the active weighting, and the
/// per-pixel gradients of each term and of the combination.
#[derive(Debug, Clone)]
pub struct LossReport<T> {
    pub silog: TermLoss<T>,
    pub grad: TermLoss<T>,
    pub vnl: TermLoss<T>,
    pub robust: TermLoss<T>,
    /// Effective multiplier each term received.
    pub applied_weights: [T; 4],
    pub combined: T,
    pub combined_grad: Grid<T>,
    /// d(combined)/d(log_var_k), present in dynamic mode so a caller can
    /// update the log-variances.
    pub log_var_grads: Option<[T; 4]>,
}

impl<T: Real> LossReport<T> {
    pub fn term_values(&self) -> [T; 4] {
        [self.silog.value, self.grad.value, self.vnl.value, self.robust.value]
    }
}

/// Weighted combination of the four loss terms (static or dynamic mode).
pub fn depth_loss<T: Real>(
    pair: &DepthPair<T>,
    params: &DepthLossParams<T>,
    weights: &LossWeights<T>,
) -> Result<LossReport<T>, LossError> {
    weights.validate()?;
    let intr = params
        .intrinsics
        .unwrap_or_else(|| CameraIntrinsics::for_resolution(pair.pred.height(), pair.pred.width()));

    let silog = silog_loss(pair, &params.silog)?;
    let grad = grad_loss(pair)?;
    let vnl = vnl_loss(pair, &intr, &params.vnl, params.vnl_seed)?;
    let robust = robust_loss(pair, &params.robust)?;
    let terms = [&silog, &grad, &vnl, &robust];

    let applied: [T; 4] = if weights.dynamic {
        [
            (-weights.log_vars[0]).exp(),
            (-weights.log_vars[1]).exp(),
            (-weights.log_vars[2]).exp(),
            (-weights.log_vars[3]).exp(),
        ]
    } else {
        weights.w
    };

    let mut combined = T::zero();
    let mut combined_grad = Grid::filled(pair.pred.height(), pair.pred.width(), T::zero());
    for (k, term) in terms.iter().enumerate() {
        combined = combined + applied[k] * term.value;
        for (dst, &src) in combined_grad.data_mut().iter_mut().zip(term.grad.data()) {
            *dst = *dst + applied[k] * src;
        }
    }

    let log_var_grads = if weights.dynamic {
        // d/ds_k of exp(-s_k) L_k + s_k.
        let mut g = [T::zero(); 4];
        for k in 0..4 {
            combined = combined + weights.log_vars[k];
            g[k] = T::one() - applied[k] * terms[k].value;
        }
        Some(g)
    } else {
        None
    };

    Ok(LossReport {
        silog,
        grad,
        vnl,
        robust,
        applied_weights: applied,
        combined,
        combined_grad,
        log_var_grads,
    })
}

/// Final training objective: depth loss plus weighted distillation.
pub fn total_loss<T: Real>(depth: &LossReport<T>, distill_value: T, w_d: T) -> T {
    depth.combined + w_d * distill_value
}

/// Scale-invariant RMSE of the pair (the λ=1, α=1 variance form), shared by
/// the fitter's trace and the f64 test paths.
pub(crate) fn si_rmse_of<T: Real>(pair: &DepthPair<T>) -> T {
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut n = 0usize;
    for (y, x, &ok) in pair.valid.enumerate() {
        if !ok {
            continue;
        }
        let e = pair.pred_clamped(y, x).ln() - pair.gt.get(y, x).max(real(DEPTH_CLAMP_MIN)).ln();
        s1 = s1 + e;
        s2 = s2 + e * e;
        n += 1;
    }
    let n = real::<T>(n as f64);
    (s2 / n - (s1 / n) * (s1 / n)).max(T::zero()).sqrt()
}
