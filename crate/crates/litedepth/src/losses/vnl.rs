//! Virtual-normal loss: compares unit normals of triangles spanned by three
//! back-projected depth points, sampled from valid pixels with constraints
//! evaluated on the *predicted* point cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{real, sign, DepthPair, LossError, Real, TermLoss, DEPTH_CLAMP_MIN};

/// Pinhole calibration in pixels.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self, LossError> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(LossError::InvalidParam("focal lengths must be positive".into()));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Default desk calibration: f = 500 px at the dataset's 640-px width,
    /// principal point at the map center (the dataset publishes no
    /// calibration). Other widths scale the focal length proportionally so
    /// the field of view stays put; a fixed 500 px on a tiny test grid
    /// would make every back-projected triangle near-degenerate.
    pub fn for_resolution(h: usize, w: usize) -> Self {
        let f = 500.0 * w as f64 / 640.0;
        CameraIntrinsics {
            fx: real(f),
            fy: real(f),
            cx: real(w as f64 / 2.0),
            cy: real(h as f64 / 2.0),
        }
    }

    /// Back-projection ray of pixel (y, x); the 3-D point is `depth * ray`.
    #[inline]
    fn ray(&self, y: usize, x: usize) -> [T; 3] {
        [
            (real::<T>(x as f64) - self.cx) / self.fx,
            (real::<T>(y as f64) - self.cy) / self.fy,
            T::one(),
        ]
    }
}

/// Sampler knobs. `max_triplets` caps the accepted count at
/// `min(max_triplets, n_valid/3)`; candidates are rejected unless every
/// pairwise image distance reaches `min_image_dist` and every triangle angle
/// of the *predicted* 3-D triangle lies inside the degree window.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VnlConfig<T> {
    pub max_triplets: usize,
    pub min_triplets: usize,
    pub min_image_dist: T,
    pub min_angle_deg: T,
    pub max_angle_deg: T,
    /// Candidate budget = attempt_factor × target.
    pub attempt_factor: usize,
}

impl<T: Real> Default for VnlConfig<T> {
    fn default() -> Self {
        VnlConfig {
            max_triplets: 5000,
            min_triplets: 4,
            min_image_dist: real(5.0),
            min_angle_deg: real(15.0),
            max_angle_deg: real(165.0),
            attempt_factor: 20,
        }
    }
}

/// Three pixel positions, (y, x) each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub c: (usize, usize),
}

#[inline]
fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm<T: Real>(a: [T; 3]) -> T {
    dot(a, a).sqrt()
}

#[inline]
fn scale<T: Real>(a: [T; 3], s: T) -> [T; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn angles_within<T: Real>(p: [[T; 3]; 3], min_deg: T, max_deg: T) -> bool {
    let deg = real::<T>(180.0 / std::f64::consts::PI);
    for i in 0..3 {
        let u = sub(p[(i + 1) % 3], p[i]);
        let v = sub(p[(i + 2) % 3], p[i]);
        let nu = norm(u);
        let nv = norm(v);
        if nu == T::zero() || nv == T::zero() {
            return false;
        }
        let cos = (dot(u, v) / (nu * nv)).clamp(-T::one(), T::one());
        let angle = cos.acos() * deg;
        if angle < min_deg || angle > max_deg {
            return false;
        }
    }
    true
}

/// Draws accepted triplets with a fixed protocol: ChaCha8 from `seed`, three
/// uniform indices into the row-major valid-pixel list per candidate,
/// rejection on duplicates, image distance and predicted-triangle angles.
pub fn sample_triplets<T: Real>(
    pair: &DepthPair<T>,
    intr: &CameraIntrinsics<T>,
    config: &VnlConfig<T>,
    seed: u64,
) -> Result<Vec<Triplet>, LossError> {
    pair.require_valid()?;
    let valid_pixels: Vec<(usize, usize)> = pair
        .valid
        .enumerate()
        .filter_map(|(y, x, &ok)| ok.then_some((y, x)))
        .collect();
    let n = valid_pixels.len();
    let target = config.max_triplets.min(n / 3);
    if target == 0 {
        return Err(LossError::TooFewTriplets { accepted: 0, needed: config.min_triplets.max(1) });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = Vec::with_capacity(target);
    let budget = config.attempt_factor.saturating_mul(target);
    for _ in 0..budget {
        if accepted.len() == target {
            break;
        }
        let ia = rng.gen_range(0..n);
        let ib = rng.gen_range(0..n);
        let ic = rng.gen_range(0..n);
        if ia == ib || ib == ic || ia == ic {
            continue;
        }
        let (pa, pb, pc) = (valid_pixels[ia], valid_pixels[ib], valid_pixels[ic]);

        let image_dist = |p: (usize, usize), q: (usize, usize)| -> T {
            let dy = p.0 as f64 - q.0 as f64;
            let dx = p.1 as f64 - q.1 as f64;
            real((dy * dy + dx * dx).sqrt())
        };
        if image_dist(pa, pb) < config.min_image_dist
            || image_dist(pa, pc) < config.min_image_dist
            || image_dist(pb, pc) < config.min_image_dist
        {
            continue;
        }

        let point = |p: (usize, usize)| scale(intr.ray(p.0, p.1), pair.pred_clamped(p.0, p.1));
        if !angles_within(
            [point(pa), point(pb), point(pc)],
            config.min_angle_deg,
            config.max_angle_deg,
        ) {
            continue;
        }
        accepted.push(Triplet { a: pa, b: pb, c: pc });
    }

    if accepted.len() < config.min_triplets {
        return Err(LossError::TooFewTriplets {
            accepted: accepted.len(),
            needed: config.min_triplets,
        });
    }
    Ok(accepted)
}

/// Mean L1 difference between predicted and ground-truth triangle unit
/// normals over fixed triplets, with the analytic gradient of the normalized
/// cross product w.r.t. the three predicted depths.
pub fn vnl_loss_with_triplets<T: Real>(
    pair: &DepthPair<T>,
    intr: &CameraIntrinsics<T>,
    triplets: &[Triplet],
) -> Result<TermLoss<T>, LossError> {
    pair.require_valid()?;
    if triplets.is_empty() {
        return Err(LossError::TooFewTriplets { accepted: 0, needed: 1 });
    }
    let clamp = real::<T>(DEPTH_CLAMP_MIN);
    let mut out = TermLoss::zeros_like(pair);
    let mut used = 0usize;
    let mut contributions: Vec<(Triplet, [T; 3])> = Vec::with_capacity(triplets.len());

    for &t in triplets {
        let rays = [intr.ray(t.a.0, t.a.1), intr.ray(t.b.0, t.b.1), intr.ray(t.c.0, t.c.1)];
        let pd = [
            pair.pred_clamped(t.a.0, t.a.1),
            pair.pred_clamped(t.b.0, t.b.1),
            pair.pred_clamped(t.c.0, t.c.1),
        ];
        let gd = [
            pair.gt.get(t.a.0, t.a.1).max(clamp),
            pair.gt.get(t.b.0, t.b.1).max(clamp),
            pair.gt.get(t.c.0, t.c.1).max(clamp),
        ];
        let p: Vec<[T; 3]> = (0..3).map(|i| scale(rays[i], pd[i])).collect();
        let g: Vec<[T; 3]> = (0..3).map(|i| scale(rays[i], gd[i])).collect();

        let e1 = sub(p[1], p[0]);
        let e2 = sub(p[2], p[0]);
        let cp = cross(e1, e2);
        let cp_norm = norm(cp);
        let gt_cp = cross(sub(g[1], g[0]), sub(g[2], g[0]));
        let gt_norm = norm(gt_cp);
        // Degenerate triangles (either cloud) carry no usable orientation;
        // the skip is prediction-independent for the gt side and the
        // sampler's angle constraints keep the predicted side away from it.
        if cp_norm == T::zero() || gt_norm == T::zero() {
            continue;
        }
        used += 1;
        let n_hat = scale(cp, T::one() / cp_norm);
        let n_gt = scale(gt_cp, T::one() / gt_norm);

        let diff = sub(n_hat, n_gt);
        out.value = out.value + diff[0].abs() + diff[1].abs() + diff[2].abs();

        // g_vec = (I − n̂n̂ᵀ)s / ‖c‖ with s the sign vector; then
        // ∂L/∂d_B = (E2 × g_vec)·r_B, ∂L/∂d_C = (g_vec × E1)·r_C and A takes
        // the negated sum.
        let s = [sign(diff[0]), sign(diff[1]), sign(diff[2])];
        let ns = dot(n_hat, s);
        let g_vec = scale(sub(s, scale(n_hat, ns)), T::one() / cp_norm);
        let de1 = cross(e2, g_vec);
        let de2 = cross(g_vec, e1);
        let d_b = dot(de1, rays[1]);
        let d_c = dot(de2, rays[2]);
        let d_a = -(dot(de1, rays[0]) + dot(de2, rays[0]));
        contributions.push((t, [d_a, d_b, d_c]));
    }

    if used == 0 {
        return Err(LossError::TooFewTriplets { accepted: 0, needed: 1 });
    }
    let k = real::<T>(used as f64);
    out.value = out.value / k;
    for (t, d) in contributions {
        for (pix, dv) in [(t.a, d[0]), (t.b, d[1]), (t.c, d[2])] {
            // Clamp derivative: zero below the floor.
            if pair.pred.get(pix.0, pix.1) < clamp {
                continue;
            }
            let cur = out.grad.get(pix.0, pix.1);
            out.grad.set(pix.0, pix.1, cur + dv / k);
        }
    }
    Ok(out)
}

/// Samples triplets and evaluates the loss in one call.
pub fn vnl_loss<T: Real>(
    pair: &DepthPair<T>,
    intr: &CameraIntrinsics<T>,
    config: &VnlConfig<T>,
    seed: u64,
) -> Result<TermLoss<T>, LossError> {
    let triplets = sample_triplets(pair, intr, config, seed)?;
    vnl_loss_with_triplets(pair, intr, &triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn slanted_pair(h: usize, w: usize) -> DepthPair<f64> {
        let gt = Grid::from_fn(h, w, |y, x| 4.0 + 0.03 * y as f64 + 0.02 * x as f64);
        let pred = Grid::from_fn(h, w, |y, x| {
            gt.get(y, x) + 0.05 * ((y * w + x) as f64 * 0.7).sin()
        });
        DepthPair::new(pred, gt, Grid::filled(h, w, true)).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = Grid::from_fn(16, 16, |y, x| 3.0 + 0.05 * y as f64 + 0.07 * x as f64);
        let pair = DepthPair::new(gt.clone(), gt, Grid::filled(16, 16, true)).unwrap();
        let intr = CameraIntrinsics::for_resolution(16, 16);
        let loss = vnl_loss(&pair, &intr, &VnlConfig::default(), 1).unwrap();
        assert!(loss.value.abs() < 1e-12);
        assert!(loss.grad.data().iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn constant_offset_on_frontoparallel_plane_is_zero() {
        // Fronto-parallel constant-depth gt: both normals are (0,0,±1) and a
        // constant z-shift preserves them.
        let gt = Grid::filled(16, 16, 5.0f64);
        let pred = Grid::filled(16, 16, 6.5f64);
        let pair = DepthPair::new(pred, gt, Grid::filled(16, 16, true)).unwrap();
        let intr = CameraIntrinsics::for_resolution(16, 16);
        let loss = vnl_loss(&pair, &intr, &VnlConfig::default(), 2).unwrap();
        assert!(loss.value.abs() < 1e-12, "value {}", loss.value);
    }

    #[test]
    fn sampler_is_deterministic_and_in_bounds() {
        let pair = slanted_pair(16, 16);
        let intr = CameraIntrinsics::for_resolution(16, 16);
        let a = sample_triplets(&pair, &intr, &VnlConfig::default(), 42).unwrap();
        let b = sample_triplets(&pair, &intr, &VnlConfig::default(), 42).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for t in &a {
            for (y, x) in [t.a, t.b, t.c] {
                assert!(y < 16 && x < 16);
                assert!(pair.valid.get(y, x));
            }
        }
    }

    #[test]
    fn sampler_respects_image_distance() {
        let pair = slanted_pair(16, 16);
        let intr = CameraIntrinsics::for_resolution(16, 16);
        let config = VnlConfig::default();
        let triplets = sample_triplets(&pair, &intr, &config, 7).unwrap();
        for t in triplets {
            for (p, q) in [(t.a, t.b), (t.a, t.c), (t.b, t.c)] {
                let d = ((p.0 as f64 - q.0 as f64).powi(2) + (p.1 as f64 - q.1 as f64).powi(2))
                    .sqrt();
                assert!(d >= 5.0, "{p:?} {q:?} at distance {d}");
            }
        }
    }

    #[test]
    fn impossible_constraints_error_out() {
        let pair = slanted_pair(8, 8);
        let intr = CameraIntrinsics::for_resolution(8, 8);
        let config = VnlConfig { min_image_dist: 100.0, ..Default::default() };
        assert!(matches!(
            sample_triplets(&pair, &intr, &config, 3),
            Err(LossError::TooFewTriplets { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences_on_fixed_triplets() {
        let pair = slanted_pair(12, 12);
        let intr = CameraIntrinsics::for_resolution(12, 12);
        let triplets = sample_triplets(&pair, &intr, &VnlConfig::default(), 11).unwrap();
        let analytic = vnl_loss_with_triplets(&pair, &intr, &triplets).unwrap();

        let point: Vec<f64> = pair.pred.data().to_vec();
        let f = |v: &[f64]| {
            let pred = Grid::from_vec(12, 12, v.to_vec());
            let p = DepthPair::new(pred, pair.gt.clone(), pair.valid.clone()).unwrap();
            vnl_loss_with_triplets(&p, &intr, &triplets).unwrap().value
        };
        let fd = crate::oracle::finite_diff_grad(f, &point, |i| 1e-6 * point[i].abs().max(1e-3));
        let rel = crate::oracle::rel_error(&fd, analytic.grad.data(), 1e-12);
        assert!(rel <= 1e-5, "normwise rel error {rel}");
    }
}
