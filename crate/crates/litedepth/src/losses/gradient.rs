//! Gradience loss with invalid-hole masking.
//!
//! Forward differences are taken on both maps; the ground-truth differences
//! are computed after writing NaN into invalid pixels, so any difference
//! touching an invalid pixel turns non-finite and drops out of the masks
//! M_x / M_y. Each directional sum is normalized by its own surviving-entry
//! count and the two are added.

use super::{sign, DepthPair, LossError, Real, TermLoss};

pub fn grad_loss<T: Real>(pair: &DepthPair<T>) -> Result<TermLoss<T>, LossError> {
    pair.require_valid()?;
    let (h, w) = (pair.gt.height(), pair.gt.width());

    // NaN sentinel insertion, then plain dislocation subtraction.
    let gt_nan = crate::grid::Grid::from_fn(h, w, |y, x| {
        if pair.valid.get(y, x) {
            pair.gt.get(y, x)
        } else {
            T::nan()
        }
    });

    let mut out = TermLoss::zeros_like(pair);
    let mut sums = [T::zero(); 2];
    let mut counts = [0usize; 2];
    // (dy, dx) stencils for the y and x forward differences.
    let dirs: [(usize, usize); 2] = [(1, 0), (0, 1)];

    // First pass: masked sums per direction.
    let mut diffs: Vec<(usize, usize, usize, T)> = Vec::new();
    for (di, &(dy, dx)) in dirs.iter().enumerate() {
        for y in 0..h - dy {
            for x in 0..w - dx {
                let g = gt_nan.get(y + dy, x + dx) - gt_nan.get(y, x);
                if !g.is_finite() {
                    continue;
                }
                let p = pair.pred.get(y + dy, x + dx) - pair.pred.get(y, x);
                let d = p - g;
                sums[di] = sums[di] + d.abs();
                counts[di] += 1;
                diffs.push((di, y, x, d));
            }
        }
    }
    if counts[0] + counts[1] == 0 {
        return Err(LossError::NoFiniteGradientEntries);
    }

    for di in 0..2 {
        if counts[di] > 0 {
            out.value = out.value + sums[di] / super::real(counts[di] as f64);
        }
    }

    // Second pass: |Δpred − Δgt| propagates ±sign/N_dir into both stencil
    // endpoints.
    for (di, y, x, d) in diffs {
        let s = sign(d) / super::real(counts[di] as f64);
        let (dy, dx) = dirs[di];
        let hi = out.grad.get(y + dy, x + dx);
        out.grad.set(y + dy, x + dx, hi + s);
        let lo = out.grad.get(y, x);
        out.grad.set(y, x, lo - s);
    }
    Ok(out)
}
