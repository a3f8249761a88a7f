//! Independent reference implementations used by the verification suites.
//!
//! Everything in here is deliberately naive: straight nested loops, f64
//! accumulation, no shortcuts shared with the production kernels. The test
//! suites compare the fast paths against these.

use crate::grid::Grid;
use crate::tensor::{ConvSpec, Tensor};

/// Reference convolution: seven explicit loops over batch, group, output
/// channel, output position, input channel and kernel window.
pub fn naive_conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&[f32]>,
    spec: &ConvSpec,
) -> Tensor {
    let [n, c_in, in_h, in_w] = input.shape();
    let [c_out, c_in_g, k_h, k_w] = weights.shape();
    assert_eq!(c_in_g, c_in / spec.groups);
    let (out_h, out_w) = spec.out_dims(in_h, in_w);
    let out_per_group = c_out / spec.groups;

    let mut out = Tensor::zeros([n, c_out, out_h, out_w]);
    for bi in 0..n {
        for g in 0..spec.groups {
            for ocg in 0..out_per_group {
                let oc = g * out_per_group + ocg;
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = 0.0f64;
                        for cig in 0..c_in_g {
                            let ci = g * c_in_g + cig;
                            for ky in 0..k_h {
                                for kx in 0..k_w {
                                    let iy = (oy * spec.stride.0 + ky) as isize
                                        - spec.padding.top as isize;
                                    let ix = (ox * spec.stride.1 + kx) as isize
                                        - spec.padding.left as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= in_h as isize
                                        || ix >= in_w as isize
                                    {
                                        continue;
                                    }
                                    acc += input.at(bi, ci, iy as usize, ix as usize) as f64
                                        * weights.at(oc, cig, ky, kx) as f64;
                                }
                            }
                        }
                        let b = bias.map_or(0.0, |b| b[oc] as f64);
                        out.set(bi, oc, oy, ox, (acc + b) as f32);
                    }
                }
            }
        }
    }
    out
}

/// Central finite differences of a scalar function over a flat parameter
/// vector. `step(i)` gives the per-coordinate step size.
pub fn finite_diff_grad<F, S>(f: F, point: &[f64], step: S) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
    S: Fn(usize) -> f64,
{
    let mut perturbed = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let h = step(i);
        perturbed[i] = point[i] + h;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - h;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}

/// Normwise relative error `‖a − b‖₂ / max(‖a‖₂, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        norm += x * x;
    }
    diff.sqrt() / norm.sqrt().max(floor)
}

/// Explicit pair-enumeration reference for the masked gradient loss: walks
/// every horizontally / vertically adjacent pixel pair whose ground-truth
/// endpoints are both valid and averages |Δpred − Δgt| per direction.
///
/// Returns `None` when no direction has a valid pair.
pub fn pair_enum_grad_loss(
    pred: &Grid<f64>,
    gt: &Grid<f64>,
    valid: &Grid<bool>,
) -> Option<f64> {
    let (h, w) = (gt.height(), gt.width());
    let mut sum_x = 0.0;
    let mut n_x = 0usize;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            if valid.get(y, x) && valid.get(y, x + 1) {
                let dp = pred.get(y, x + 1) - pred.get(y, x);
                let dg = gt.get(y, x + 1) - gt.get(y, x);
                sum_x += (dp - dg).abs();
                n_x += 1;
            }
        }
    }
    let mut sum_y = 0.0;
    let mut n_y = 0usize;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            if valid.get(y, x) && valid.get(y + 1, x) {
                let dp = pred.get(y + 1, x) - pred.get(y, x);
                let dg = gt.get(y + 1, x) - gt.get(y, x);
                sum_y += (dp - dg).abs();
                n_y += 1;
            }
        }
    }
    if n_x == 0 && n_y == 0 {
        return None;
    }
    let mut total = 0.0;
    if n_x > 0 {
        total += sum_x / n_x as f64;
    }
    if n_y > 0 {
        total += sum_y / n_y as f64;
    }
    Some(total)
}

/// Naive affinity matrix: double loop over spatial positions, cosine
/// similarity of channel vectors in f64.
pub fn naive_affinity(features: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    assert_eq!(features.len(), c * hw);
    let vec_at = |p: usize| -> Vec<f64> { (0..c).map(|ch| features[ch * hw + p]).collect() };
    let mut out = vec![0.0; hw * hw];
    for p in 0..hw {
        for q in 0..hw {
            let fp = vec_at(p);
            let fq = vec_at(q);
            let np = fp.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nq = fq.iter().map(|v| v * v).sum::<f64>().sqrt();
            if np == 0.0 || nq == 0.0 {
                continue;
            }
            let dot: f64 = fp.iter().zip(&fq).map(|(a, b)| a * b).sum();
            out[p * hw + q] = dot / (np * nq);
        }
    }
    out
}

/// Upper critical values of the chi-square distribution at p = 0.01 for the
/// degrees of freedom the augmentation statistics use.
pub fn chi_square_crit_p01(dof: usize) -> f64 {
    match dof {
        1 => 6.6349,
        2 => 9.2103,
        3 => 11.3449,
        4 => 13.2767,
        15 => 30.5779,
        _ => panic!("no tabulated chi-square critical value for dof {dof}"),
    }
}

/// Pearson chi-square statistic for observed counts against expected counts.
pub fn chi_square_stat(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}
