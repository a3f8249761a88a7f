//! Toy fitter: plain gradient descent of a free per-pixel prediction map
//! under the combined depth loss, exercising the analytic gradients and the
//! dynamic re-weighting end to end.

use serde::Serialize;

use super::{
    depth_loss, real, si_rmse_of, DepthLossParams, DepthPair, LossError, LossReport, LossWeights,
    Real,
};
use crate::grid::Grid;

#[derive(Debug, Clone)]
pub struct FitConfig<T> {
    pub steps: usize,
    /// Base step size on the prediction map.
    pub lr: T,
    /// Poly decay exponent: step t runs at lr·(1 − t/steps)^power. Zero
    /// disables the schedule.
    pub lr_decay_power: T,
    /// Step size on the log-variances (dynamic mode).
    pub log_var_lr: T,
    pub weights: LossWeights<T>,
    pub params: DepthLossParams<T>,
    /// Predictions are clamped to at least this depth after each step.
    pub pred_floor: T,
    /// Log-variances are kept inside ±this bound; the robust term is
    /// negative near convergence and would otherwise push its s_k to -∞.
    pub log_var_bound: T,
}

impl<T: Real> Default for FitConfig<T> {
    fn default() -> Self {
        FitConfig {
            steps: 500,
            lr: real(0.3),
            lr_decay_power: real(0.9),
            log_var_lr: real(0.05),
            weights: LossWeights::default(),
            params: DepthLossParams::default(),
            pred_floor: real(1e-3),
            log_var_bound: real(0.5),
        }
    }
}

/// One recorded step: scalar term values only (gradient maps for every step
/// of a long run would dwarf the trace).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitStep<T> {
    pub step: usize,
    pub silog: T,
    pub grad: T,
    pub vnl: T,
    pub robust: T,
    pub combined: T,
    pub si_rmse: T,
    pub log_vars: [T; 4],
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub trace: Vec<FitStep<T>>,
    pub final_pred: Grid<T>,
    /// Full report (with gradients) of the last evaluated step.
    pub final_report: LossReport<T>,
}

/// Runs `steps` descent steps from `init_pred`. Reports divergence with the
/// step index if any loss value turns non-finite.
pub fn fit_toy<T: Real>(
    gt: &Grid<T>,
    valid: &Grid<bool>,
    init_pred: &Grid<T>,
    config: &FitConfig<T>,
) -> Result<FitOutcome<T>, LossError> {
    if config.steps == 0 {
        return Err(LossError::InvalidParam("fit needs at least one step".into()));
    }
    let mut pred = init_pred.clone();
    let mut weights = config.weights;
    let mut trace = Vec::with_capacity(config.steps);
    let mut last_report: Option<LossReport<T>> = None;

    for step in 0..config.steps {
        let pair = DepthPair::new(pred.clone(), gt.clone(), valid.clone())?;
        let mut params = config.params.clone();
        // Fresh triplets per step, still fully seed-determined.
        params.vnl_seed = config.params.vnl_seed.wrapping_add(step as u64);
        let report = depth_loss(&pair, &params, &weights)?;
        if !report.combined.is_finite() {
            return Err(LossError::Diverged { step });
        }
        trace.push(FitStep {
            step,
            silog: report.silog.value,
            grad: report.grad.value,
            vnl: report.vnl.value,
            robust: report.robust.value,
            combined: report.combined,
            si_rmse: si_rmse_of(&pair),
            log_vars: weights.log_vars,
        });

        let frac = T::one() - real::<T>(step as f64) / real::<T>(config.steps as f64);
        let lr = if config.lr_decay_power > T::zero() {
            config.lr * frac.powf(config.lr_decay_power)
        } else {
            config.lr
        };
        for (p, &g) in pred.data_mut().iter_mut().zip(report.combined_grad.data()) {
            *p = (*p - lr * g).max(config.pred_floor);
        }
        if weights.dynamic {
            let g = report.log_var_grads.expect("dynamic mode reports log-var grads");
            for k in 0..4 {
                let s = weights.log_vars[k] - config.log_var_lr * g[k];
                weights.log_vars[k] = s.clamp(-config.log_var_bound, config.log_var_bound);
            }
        }
        last_report = Some(report);
    }

    Ok(FitOutcome {
        trace,
        final_pred: pred,
        final_report: last_report.expect("at least one step ran"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn slanted_scene(h: usize, w: usize) -> (Grid<f64>, Grid<bool>) {
        let gt = Grid::from_fn(h, w, |y, x| 3.0 + 0.04 * y as f64 + 0.03 * x as f64);
        let valid = Grid::filled(h, w, true);
        (gt, valid)
    }

    #[test]
    fn perfect_init_stays_at_the_floor() {
        let (gt, valid) = slanted_scene(12, 12);
        let config = FitConfig { steps: 5, ..Default::default() };
        let out = fit_toy(&gt, &valid, &gt, &config).unwrap();
        // At pred = gt: silog, grad and vnl vanish; robust sits at its
        // analytic floor −w4. The loss stays put across steps.
        let first = out.trace[0].combined;
        assert!((first - 0.6 * -1.0).abs() < 1e-9, "floor {first}");
        for s in &out.trace {
            assert!((s.combined - first).abs() < 1e-9);
            assert!(s.si_rmse < 1e-12);
        }
    }

    #[test]
    fn noisy_init_improves_si_rmse() {
        let (gt, valid) = slanted_scene(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let init = gt.map(|v| v + rng.gen_range(-0.8..0.8));
        let config = FitConfig { steps: 200, ..Default::default() };
        let out = fit_toy(&gt, &valid, &init, &config).unwrap();
        let first = out.trace.first().unwrap().si_rmse;
        let last = out.trace.last().unwrap().si_rmse;
        assert!(last < first * 0.5, "si-RMSE {first} -> {last}");
    }

    #[test]
    fn zero_steps_rejected() {
        let (gt, valid) = slanted_scene(8, 8);
        let config = FitConfig { steps: 0, ..Default::default() };
        assert!(fit_toy(&gt, &valid, &gt, &config).is_err());
    }

    #[test]
    fn divergence_reports_step_index() {
        let (gt, valid) = slanted_scene(10, 10);
        // An absurd learning rate overshoots into the floor clamp rather
        // than NaN, so force divergence through a poisoned init instead.
        let mut init = gt.clone();
        init.set(0, 0, f64::INFINITY);
        match fit_toy(&gt, &valid, &init, &FitConfig { steps: 3, ..Default::default() }) {
            Err(LossError::Diverged { step: 0 }) => {}
            other => panic!("expected divergence at step 0, got {other:?}"),
        }
    }

    #[test]
    fn trace_is_deterministic() {
        let (gt, valid) = slanted_scene(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = gt.map(|v| v + rng.gen_range(-0.5..0.5));
        let config = FitConfig { steps: 30, ..Default::default() };
        let a = fit_toy(&gt, &valid, &init, &config).unwrap();
        let b = fit_toy(&gt, &valid, &init, &config).unwrap();
        for (sa, sb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(sa.combined, sb.combined);
        }
        assert_eq!(a.final_pred, b.final_pred);
    }
}
