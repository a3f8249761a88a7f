//! Paired image/depth/mask augmentation: rotation, horizontal flip, the
//! size-and-location-random crop, and color jitter, applied in that order.
//!
//! Geometry touches image, depth and mask with one shared window or warp;
//! depth and mask use nearest-neighbor resampling so no depth value is ever
//! fabricated across the valid/invalid boundary. Color jitter touches the
//! image only. All randomness comes from the caller's rng value, one draw
//! sequence per sample, so a fixed seed makes the pipeline byte-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{DepthMap, Grid, ValidMask};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("crop size list is empty")]
    EmptySizes,
    #[error("crop size {size:?} exceeds the {frame:?} frame")]
    SizeTooLarge { size: (usize, usize), frame: (usize, usize) },
    #[error("image {rgb:?}, depth {depth:?} and mask {mask:?} dims must agree")]
    ShapeMismatch {
        rgb: (usize, usize),
        depth: (usize, usize),
        mask: (usize, usize),
    },
}

/// Candidate crop sizes, (h, w) each; include the full frame to keep
/// full-area exposure in the mix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSizeList {
    pub sizes: Vec<(usize, usize)>,
}

impl CropSizeList {
    /// The shipping default: [(240, 384), (384, 512), (480, 640)].
    pub fn challenge_default() -> Self {
        CropSizeList { sizes: vec![(240, 384), (384, 512), (480, 640)] }
    }

    fn validate(&self, frame: (usize, usize)) -> Result<(), AugmentError> {
        if self.sizes.is_empty() {
            return Err(AugmentError::EmptySizes);
        }
        for &(h, w) in &self.sizes {
            if h == 0 || w == 0 || h > frame.0 || w > frame.1 {
                return Err(AugmentError::SizeTooLarge { size: (h, w), frame });
            }
        }
        Ok(())
    }
}

/// Record of the transforms applied to one sample, for reproducibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation_deg: f32,
    pub flipped: bool,
    /// Top-left corner and size of the crop window.
    pub crop: (usize, usize, usize, usize),
    pub brightness: f32,
    pub contrast: f32,
}

#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub rgb: Tensor,
    pub depth: DepthMap,
    pub valid: ValidMask,
    pub record: TransformRecord,
}

/// Pipeline knobs. Magnitudes of zero disable the corresponding draw.
#[derive(Debug, Clone, Serialize)]
pub struct AugmentConfig {
    /// Rotation is drawn uniformly from ±this many degrees.
    pub rotation_deg: f32,
    pub flip_prob: f64,
    /// Brightness multiplier drawn from 1 ± this.
    pub brightness_jitter: f32,
    /// Contrast multiplier drawn from 1 ± this, pivoting at mid-gray.
    pub contrast_jitter: f32,
    pub sizes: CropSizeList,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 2.5,
            flip_prob: 0.5,
            brightness_jitter: 0.1,
            contrast_jitter: 0.1,
            sizes: CropSizeList::challenge_default(),
        }
    }
}

fn check_shapes(rgb: &Tensor, depth: &DepthMap, valid: &ValidMask) -> Result<(usize, usize), AugmentError> {
    let [_, _, h, w] = rgb.shape();
    if (h, w) != (depth.height(), depth.width()) || (h, w) != (valid.height(), valid.width()) {
        return Err(AugmentError::ShapeMismatch {
            rgb: (h, w),
            depth: (depth.height(), depth.width()),
            mask: (valid.height(), valid.width()),
        });
    }
    Ok((h, w))
}

/// Draws the crop window: size uniform over the list, then the top-left
/// corner uniform over all in-bounds placements for that size. Returns
/// `(y0, x0, h, w)`.
pub fn draw_crop_window(
    frame: (usize, usize),
    sizes: &CropSizeList,
    rng: &mut impl Rng,
) -> Result<(usize, usize, usize, usize), AugmentError> {
    sizes.validate(frame)?;
    let (ch, cw) = sizes.sizes[rng.gen_range(0..sizes.sizes.len())];
    let y0 = rng.gen_range(0..=frame.0 - ch);
    let x0 = rng.gen_range(0..=frame.1 - cw);
    Ok((y0, x0, ch, cw))
}

fn crop_grid<T: Copy>(g: &Grid<T>, (y0, x0, ch, cw): (usize, usize, usize, usize)) -> Grid<T> {
    let mut data = Vec::with_capacity(ch * cw);
    for y in 0..ch {
        let start = (y0 + y) * g.width() + x0;
        data.extend_from_slice(&g.data()[start..start + cw]);
    }
    Grid::from_vec(ch, cw, data)
}

/// Crop with random size (uniform over the list) and random in-bounds
/// top-left corner (uniform conditional on the size); one identical window
/// cuts image, depth and mask.
pub fn r2_crop(
    rgb: &Tensor,
    depth: &DepthMap,
    valid: &ValidMask,
    sizes: &CropSizeList,
    rng: &mut impl Rng,
) -> Result<AugmentedSample, AugmentError> {
    let frame = check_shapes(rgb, depth, valid)?;
    let (y0, x0, ch, cw) = draw_crop_window(frame, sizes, rng)?;

    let mut rgb_data = Vec::with_capacity(3 * ch * cw);
    for c in 0..3 {
        let plane = c * frame.0 * frame.1;
        for y in 0..ch {
            let start = plane + (y0 + y) * frame.1 + x0;
            rgb_data.extend_from_slice(&rgb.data()[start..start + cw]);
        }
    }
    let rgb_out = Tensor::new([1, 3, ch, cw], rgb_data).expect("crop length");
    let depth_out = crop_grid(depth, (y0, x0, ch, cw));
    let valid_out = crop_grid(valid, (y0, x0, ch, cw));
    Ok(AugmentedSample {
        rgb: rgb_out,
        depth: depth_out,
        valid: valid_out,
        record: TransformRecord {
            rotation_deg: 0.0,
            flipped: false,
            crop: (y0, x0, ch, cw),
            brightness: 1.0,
            contrast: 1.0,
        },
    })
}

/// Mirrors image, depth and mask jointly around the vertical axis.
pub fn flip_horizontal(rgb: &Tensor, depth: &DepthMap, valid: &ValidMask) -> (Tensor, DepthMap, ValidMask) {
    let [_, _, h, w] = rgb.shape();
    (
        Tensor::from_fn([1, 3, h, w], |_, c, y, x| rgb.at(0, c, y, w - 1 - x)),
        Grid::from_fn(h, w, |y, x| depth.get(y, w - 1 - x)),
        Grid::from_fn(h, w, |y, x| valid.get(y, w - 1 - x)),
    )
}

/// Rotates around the frame center: bilinear for RGB, nearest-neighbor for
/// depth and mask; pixels whose source falls outside the frame turn invalid.
pub fn rotate(
    rgb: &Tensor,
    depth: &DepthMap,
    valid: &ValidMask,
    angle_deg: f32,
) -> (Tensor, DepthMap, ValidMask) {
    if angle_deg == 0.0 {
        return (rgb.clone(), depth.clone(), valid.clone());
    }
    let [_, _, h, w] = rgb.shape();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let rad = angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();

    let mut rgb_out = Tensor::zeros([1, 3, h, w]);
    let mut depth_out = Grid::filled(h, w, 0.0f32);
    let mut valid_out = Grid::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            // Inverse warp of the output pixel.
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            let sy = cy + dy * cos - dx * sin;
            let sx = cx + dy * sin + dx * cos;
            if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f32 || sx > (w - 1) as f32 {
                continue;
            }
            let (ny, nx) = (sy.round() as usize, sx.round() as usize);
            if valid.get(ny, nx) {
                valid_out.set(y, x, true);
                depth_out.set(y, x, depth.get(ny, nx));
            }

            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = sy - y0 as f32;
            let fx = sx - x0 as f32;
            for c in 0..3 {
                let top = rgb.at(0, c, y0, x0) * (1.0 - fx) + rgb.at(0, c, y0, x1) * fx;
                let bot = rgb.at(0, c, y1, x0) * (1.0 - fx) + rgb.at(0, c, y1, x1) * fx;
                rgb_out.set(0, c, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    (rgb_out, depth_out, valid_out)
}

/// Brightness multiplies, contrast pivots at mid-gray 128; output clamped to
/// the 0..255 pixel range. Image only.
pub fn color_jitter(rgb: &Tensor, brightness: f32, contrast: f32) -> Tensor {
    rgb.map(|v| (((v - 128.0) * contrast + 128.0) * brightness).clamp(0.0, 255.0))
}

/// Full pipeline in the fixed order rotation -> flip -> crop -> color.
/// Draws (only for enabled stages, in this order): angle, flip coin, crop
/// size, corner y, corner x, brightness, contrast.
pub fn augment_sample(
    rgb: &Tensor,
    depth: &DepthMap,
    valid: &ValidMask,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<AugmentedSample, AugmentError> {
    check_shapes(rgb, depth, valid)?;
    let angle = if config.rotation_deg > 0.0 {
        rng.gen_range(-config.rotation_deg..config.rotation_deg)
    } else {
        0.0
    };
    let flip = config.flip_prob > 0.0 && rng.gen_bool(config.flip_prob);

    let (mut rgb_cur, mut depth_cur, mut valid_cur) = rotate(rgb, depth, valid, angle);
    if flip {
        let (r, d, v) = flip_horizontal(&rgb_cur, &depth_cur, &valid_cur);
        rgb_cur = r;
        depth_cur = d;
        valid_cur = v;
    }
    let mut out = r2_crop(&rgb_cur, &depth_cur, &valid_cur, &config.sizes, rng)?;

    let brightness = if config.brightness_jitter > 0.0 {
        rng.gen_range(1.0 - config.brightness_jitter..1.0 + config.brightness_jitter)
    } else {
        1.0
    };
    let contrast = if config.contrast_jitter > 0.0 {
        rng.gen_range(1.0 - config.contrast_jitter..1.0 + config.contrast_jitter)
    } else {
        1.0
    };
    if brightness != 1.0 || contrast != 1.0 {
        out.rgb = color_jitter(&out.rgb, brightness, contrast);
    }
    out.record = TransformRecord {
        rotation_deg: angle,
        flipped: flip,
        crop: out.record.crop,
        brightness,
        contrast,
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_scene, SceneKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Tensor, DepthMap, ValidMask) {
        let s = synth_scene(SceneKind::Slanted, (48, 64), 0.1, 0.15, 5);
        (s.rgb, s.depth, s.valid)
    }

    #[test]
    fn full_frame_crop_is_identity_window() {
        let (rgb, depth, valid) = sample();
        let sizes = CropSizeList { sizes: vec![(48, 64)] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = r2_crop(&rgb, &depth, &valid, &sizes, &mut rng).unwrap();
        assert_eq!(out.record.crop, (0, 0, 48, 64));
        assert_eq!(out.rgb.data(), rgb.data());
        assert_eq!(out.depth.data(), depth.data());
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let (rgb, depth, valid) = sample();
        let sizes = CropSizeList { sizes: vec![(100, 100)] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            r2_crop(&rgb, &depth, &valid, &sizes, &mut rng),
            Err(AugmentError::SizeTooLarge { .. })
        ));
    }

    #[test]
    fn crop_applies_one_window_to_all_three() {
        let (rgb, depth, valid) = sample();
        let sizes = CropSizeList { sizes: vec![(20, 24)] };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = r2_crop(&rgb, &depth, &valid, &sizes, &mut rng).unwrap();
        let (y0, x0, ch, cw) = out.record.crop;
        for y in 0..ch {
            for x in 0..cw {
                assert_eq!(out.depth.get(y, x), depth.get(y0 + y, x0 + x));
                assert_eq!(out.valid.get(y, x), valid.get(y0 + y, x0 + x));
                assert_eq!(out.rgb.at(0, 1, y, x), rgb.at(0, 1, y0 + y, x0 + x));
            }
        }
    }

    #[test]
    fn flip_twice_restores_the_sample() {
        let (rgb, depth, valid) = sample();
        let (r1, d1, v1) = flip_horizontal(&rgb, &depth, &valid);
        let (r2, d2, v2) = flip_horizontal(&r1, &d1, &v1);
        assert_eq!(r2.data(), rgb.data());
        assert_eq!(d2.data(), depth.data());
        assert_eq!(v2.data(), valid.data());
    }

    #[test]
    fn identity_config_is_identity() {
        let (rgb, depth, valid) = sample();
        let config = AugmentConfig {
            rotation_deg: 0.0,
            flip_prob: 0.0,
            brightness_jitter: 0.0,
            contrast_jitter: 0.0,
            sizes: CropSizeList { sizes: vec![(48, 64)] },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_sample(&rgb, &depth, &valid, &config, &mut rng).unwrap();
        assert_eq!(out.rgb.data(), rgb.data());
        assert_eq!(out.depth.data(), depth.data());
        assert_eq!(out.valid.data(), valid.data());
    }

    #[test]
    fn rotation_strictly_shrinks_a_full_mask() {
        let s = synth_scene(SceneKind::Plane, (40, 60), 0.0, 0.0, 2);
        let before = s.valid.count_true();
        let (_, _, valid) = rotate(&s.rgb, &s.depth, &s.valid, 10.0);
        let after = valid.count_true();
        assert!(after < before, "{after} vs {before}");
        // Corners leave the frame under any non-trivial rotation.
        assert!(!valid.get(0, 0));
        assert!(!valid.get(0, 59));
        assert!(!valid.get(39, 0));
        assert!(!valid.get(39, 59));
    }

    #[test]
    fn depth_values_come_only_from_source_valid_depths() {
        let (rgb, depth, valid) = sample();
        let mut source: Vec<f32> = depth
            .enumerate()
            .filter_map(|(y, x, &d)| valid.get(y, x).then_some(d))
            .collect();
        source.sort_by(f32::total_cmp);
        let config = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sizes = CropSizeList { sizes: vec![(24, 32), (48, 64)] };
        let config = AugmentConfig { sizes, ..config };
        for _ in 0..20 {
            let out = augment_sample(&rgb, &depth, &valid, &config, &mut rng).unwrap();
            for (y, x, &d) in out.depth.enumerate() {
                if out.valid.get(y, x) {
                    assert!(
                        source.binary_search_by(|v| v.total_cmp(&d)).is_ok(),
                        "fabricated depth {d}"
                    );
                }
            }
        }
    }

    #[test]
    fn pipeline_is_reproducible_per_seed() {
        let (rgb, depth, valid) = sample();
        let config = AugmentConfig {
            sizes: CropSizeList { sizes: vec![(24, 32), (36, 48), (48, 64)] },
            ..Default::default()
        };
        let mut a_rng = ChaCha8Rng::seed_from_u64(77);
        let mut b_rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let a = augment_sample(&rgb, &depth, &valid, &config, &mut a_rng).unwrap();
            let b = augment_sample(&rgb, &depth, &valid, &config, &mut b_rng).unwrap();
            assert_eq!(a.record, b.record);
            assert_eq!(a.rgb.data(), b.rgb.data());
            assert_eq!(a.depth.data(), b.depth.data());
        }
    }
}
