//! Dataset ingestion and emission: 16-bit PNG depth maps with the raw-zero
//! invalid sentinel, 8-bit RGB images, synthetic scenes with closed-form
//! ground truth, and deterministic train/val splitting.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{DepthMap, Grid, ValidMask};
use crate::tensor::Tensor;

/// Raw units per meter: u16 0..40000 maps to 0..40 m.
pub const DEPTH_SCALE: f64 = 1000.0;
/// Largest encodable depth in meters.
pub const DEPTH_MAX_METERS: f64 = 40.0;
/// Raw value marking an unmeasured pixel.
pub const INVALID_RAW: u16 = 0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: String, source: image::ImageError },
    #[error("{path}: expected a 16-bit single-channel depth PNG, found {found}")]
    WrongDepthFormat { path: String, found: String },
    #[error("{path}: expected an 8-bit RGB PNG, found {found}")]
    WrongRgbFormat { path: String, found: String },
    #[error("resolution mismatch: rgb {rgb:?} vs depth {depth:?}")]
    ResolutionMismatch { rgb: (usize, usize), depth: (usize, usize) },
    #[error("depth {value} m out of the encodable range [0, {DEPTH_MAX_METERS}]")]
    OutOfRange { value: f32 },
    #[error("validation split of {n_val} needs fewer than the {total} available pairs")]
    BadSplit { n_val: usize, total: usize },
}

/// One dataset sample: RGB pixels as raw 0..255 floats in a (1, 3, H, W)
/// tensor, metric depth, and the validity mask decoded from the sentinel.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub rgb: Tensor,
    pub depth: DepthMap,
    pub valid: ValidMask,
}

/// Encodes meters to raw u16. Valid depths quantize to `round(1000·d)`;
/// values under half a millimeter fall onto the invalid sentinel, matching
/// a sensor's too-close cutoff. Out-of-range depths are rejected, never
/// wrapped.
pub fn encode_depth(depth: &DepthMap, valid: &ValidMask) -> Result<Vec<u16>, DataError> {
    let mut raw = Vec::with_capacity(depth.data().len());
    for (y, x, &ok) in valid.enumerate() {
        if !ok {
            raw.push(INVALID_RAW);
            continue;
        }
        let d = depth.get(y, x);
        if !(0.0..=DEPTH_MAX_METERS as f32).contains(&d) {
            return Err(DataError::OutOfRange { value: d });
        }
        raw.push((d as f64 * DEPTH_SCALE).round() as u16);
    }
    Ok(raw)
}

/// Decodes raw u16 to meters; the valid mask is exactly the raw-zero
/// complement.
pub fn decode_depth(raw: &[u16], h: usize, w: usize) -> (DepthMap, ValidMask) {
    assert_eq!(raw.len(), h * w, "raw depth length");
    let depth = Grid::from_vec(h, w, raw.iter().map(|&r| (r as f64 / DEPTH_SCALE) as f32).collect());
    let valid = Grid::from_vec(h, w, raw.iter().map(|&r| r != INVALID_RAW).collect());
    (depth, valid)
}

pub fn save_depth_png(path: &Path, depth: &DepthMap, valid: &ValidMask) -> Result<(), DataError> {
    let raw = encode_depth(depth, valid)?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_vec(depth.width() as u32, depth.height() as u32, raw)
            .expect("raster matches dims");
    buf.save(path).map_err(|source| DataError::Image { path: path.display().to_string(), source })
}

pub fn load_depth_png(path: &Path) -> Result<(DepthMap, ValidMask), DataError> {
    let img = image::open(path)
        .map_err(|source| DataError::Image { path: path.display().to_string(), source })?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok(decode_depth(buf.as_raw(), h, w))
        }
        other => Err(DataError::WrongDepthFormat {
            path: path.display().to_string(),
            found: format!("{:?}", other.color()),
        }),
    }
}

/// Saves an RGB tensor (1, 3, H, W) of raw 0..255 floats; values are
/// rounded and clamped into u8.
pub fn save_rgb_png(path: &Path, rgb: &Tensor) -> Result<(), DataError> {
    let [_, c, h, w] = rgb.shape();
    assert_eq!(c, 3, "rgb tensor needs 3 channels");
    let mut buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                rgb.at(0, 0, y, x).round().clamp(0.0, 255.0) as u8,
                rgb.at(0, 1, y, x).round().clamp(0.0, 255.0) as u8,
                rgb.at(0, 2, y, x).round().clamp(0.0, 255.0) as u8,
            ];
            buf.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    buf.save(path).map_err(|source| DataError::Image { path: path.display().to_string(), source })
}

pub fn load_rgb_png(path: &Path) -> Result<Tensor, DataError> {
    let img = image::open(path)
        .map_err(|source| DataError::Image { path: path.display().to_string(), source })?;
    let buf = match img {
        DynamicImage::ImageRgb8(buf) => buf,
        other => {
            return Err(DataError::WrongRgbFormat {
                path: path.display().to_string(),
                found: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        buf.get_pixel(x as u32, y as u32).0[c] as f32
    }))
}

/// Loads an RGB/depth pair and checks the resolutions agree.
pub fn load_pair(rgb_path: &Path, depth_path: &Path) -> Result<SamplePair, DataError> {
    let rgb = load_rgb_png(rgb_path)?;
    let (depth, valid) = load_depth_png(depth_path)?;
    let [_, _, h, w] = rgb.shape();
    if (h, w) != (depth.height(), depth.width()) {
        return Err(DataError::ResolutionMismatch {
            rgb: (h, w),
            depth: (depth.height(), depth.width()),
        });
    }
    Ok(SamplePair { rgb, depth, valid })
}

/// Analytic test scenes. Ground truth is known in closed form; holes are
/// punched i.i.d. per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Fronto-parallel plane at 5 m.
    Plane,
    /// Slanted plane 2..9 m across the frame.
    Slanted,
    /// Six depth plateaus.
    Stairs,
    /// Spherical bump on an 8 m background.
    Sphere,
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plane" => Ok(SceneKind::Plane),
            "slanted" => Ok(SceneKind::Slanted),
            "stairs" => Ok(SceneKind::Stairs),
            "sphere" => Ok(SceneKind::Sphere),
            other => Err(format!("unknown scene `{other}` (plane|slanted|stairs|sphere)")),
        }
    }
}

/// Closed-form depth of `kind` at (y, x) for an h×w frame.
pub fn scene_depth(kind: SceneKind, h: usize, w: usize, y: usize, x: usize) -> f32 {
    let fy = y as f32 / h as f32;
    let fx = x as f32 / w as f32;
    match kind {
        SceneKind::Plane => 5.0,
        SceneKind::Slanted => 2.0 + 4.0 * fy + 3.0 * fx,
        SceneKind::Stairs => 1.0 + (fy * 6.0).floor() * 0.8,
        SceneKind::Sphere => {
            let dy = fy - 0.5;
            let dx = fx - 0.5;
            let rho2 = (dy * dy + dx * dx) / (0.35 * 0.35);
            if rho2 < 1.0 {
                8.0 - 3.0 * (1.0 - rho2).sqrt()
            } else {
                8.0
            }
        }
    }
}

/// Builds a synthetic sample: analytic depth plus uniform noise of the given
/// amplitude (meters), a procedurally textured RGB image, and invalid holes
/// punched with probability `invalid_fraction`.
pub fn synth_scene(
    kind: SceneKind,
    (h, w): (usize, usize),
    noise: f32,
    invalid_fraction: f32,
    seed: u64,
) -> SamplePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut depth = Grid::filled(h, w, 0.0f32);
    let mut valid = Grid::filled(h, w, true);
    for y in 0..h {
        for x in 0..w {
            let mut d = scene_depth(kind, h, w, y, x);
            if noise > 0.0 {
                d += rng.gen_range(-noise..noise);
            }
            depth.set(y, x, d.clamp(0.001, DEPTH_MAX_METERS as f32));
            if invalid_fraction > 0.0 && rng.gen::<f32>() < invalid_fraction {
                valid.set(y, x, false);
            }
        }
    }
    // Texture: depth-shaded checker so edges follow geometry.
    let rgb = Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        let d = depth.get(y, x);
        let checker = ((y / 8 + x / 8) % 2) as f32;
        let shade = 255.0 * (1.0 - d / DEPTH_MAX_METERS as f32);
        (0.55 * shade + 60.0 * checker + 25.0 * c as f32).clamp(0.0, 255.0).round()
    });
    SamplePair { rgb, depth, valid }
}

/// Deterministic shuffled split: `n_val` entries go to validation, the rest
/// to training.
pub fn split<T: Clone>(items: &[T], n_val: usize, seed: u64) -> Result<(Vec<T>, Vec<T>), DataError> {
    if n_val >= items.len() {
        return Err(DataError::BadSplit { n_val, total: items.len() });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let val: Vec<T> = order[..n_val].iter().map(|&i| items[i].clone()).collect();
    let train: Vec<T> = order[n_val..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("litedepth-data-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn range_endpoints_encode_exactly() {
        let depth = Grid::from_vec(1, 2, vec![40.0, 0.002]);
        let valid = Grid::filled(1, 2, true);
        let raw = encode_depth(&depth, &valid).unwrap();
        assert_eq!(raw, vec![40000, 2]);
        let (decoded, mask) = decode_depth(&raw, 1, 2);
        assert_eq!(decoded.get(0, 0), 40.0);
        assert!(mask.get(0, 0) && mask.get(0, 1));
    }

    #[test]
    fn raw_zero_is_invalid() {
        let (depth, valid) = decode_depth(&[0, 1500, 0, 40000], 2, 2);
        assert!(!valid.get(0, 0));
        assert!(valid.get(0, 1));
        assert!(!valid.get(1, 0));
        assert_eq!(depth.get(0, 1), 1.5);
    }

    #[test]
    fn out_of_range_is_rejected_not_wrapped() {
        let valid = Grid::filled(1, 1, true);
        for bad in [40.001f32, -0.5, f32::NAN] {
            let depth = Grid::from_vec(1, 1, vec![bad]);
            assert!(matches!(
                encode_depth(&depth, &valid),
                Err(DataError::OutOfRange { .. })
            ));
        }
    }

    #[test]
    fn quantization_error_is_below_half_a_millimeter() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let depth = Grid::from_fn(16, 16, |_, _| rng.gen_range(0.0005f32..40.0));
        let valid = Grid::filled(16, 16, true);
        let raw = encode_depth(&depth, &valid).unwrap();
        let (decoded, _) = decode_depth(&raw, 16, 16);
        for (orig, dec) in depth.data().iter().zip(decoded.data()) {
            assert!((orig - dec).abs() <= 0.0005 + 1e-7, "{orig} vs {dec}");
        }
    }

    #[test]
    fn depth_png_round_trip_is_bit_identical() {
        let sample = synth_scene(SceneKind::Slanted, (24, 32), 0.05, 0.2, 3);
        let first = tmp("rt1.png");
        let second = tmp("rt2.png");
        save_depth_png(&first, &sample.depth, &sample.valid).unwrap();
        let (depth, valid) = load_depth_png(&first).unwrap();
        save_depth_png(&second, &depth, &valid).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
        // Quantized values survive exactly.
        let (depth2, valid2) = load_depth_png(&second).unwrap();
        assert_eq!(depth.data(), depth2.data());
        assert_eq!(valid.data(), valid2.data());
    }

    #[test]
    fn eight_bit_depth_png_is_rejected() {
        let path = tmp("gray8.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_pixel(4, 4, Luma([128]));
        buf.save(&path).unwrap();
        assert!(matches!(
            load_depth_png(&path),
            Err(DataError::WrongDepthFormat { .. })
        ));
    }

    #[test]
    fn pair_resolution_mismatch_is_rejected() {
        let rgb_path = tmp("pair_rgb.png");
        let depth_path = tmp("pair_depth.png");
        let sample = synth_scene(SceneKind::Plane, (8, 8), 0.0, 0.0, 1);
        save_rgb_png(&rgb_path, &sample.rgb).unwrap();
        let small = synth_scene(SceneKind::Plane, (4, 4), 0.0, 0.0, 1);
        save_depth_png(&depth_path, &small.depth, &small.valid).unwrap();
        assert!(matches!(
            load_pair(&rgb_path, &depth_path),
            Err(DataError::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn plane_scene_is_exactly_five_meters() {
        let sample = synth_scene(SceneKind::Plane, (32, 32), 0.0, 0.0, 7);
        for &d in sample.depth.data() {
            assert_eq!(d, 5.0);
        }
        assert_eq!(sample.valid.count_true(), 32 * 32);
    }

    #[test]
    fn slanted_scene_matches_closed_form() {
        let sample = synth_scene(SceneKind::Slanted, (20, 30), 0.0, 0.0, 7);
        for (y, x, &d) in sample.depth.enumerate() {
            let want = 2.0 + 4.0 * (y as f32 / 20.0) + 3.0 * (x as f32 / 30.0);
            assert!((d - want).abs() <= 1e-6);
        }
    }

    #[test]
    fn invalid_fraction_is_respected_within_binomial_bounds() {
        let (h, w, f) = (64, 64, 0.3f64);
        let sample = synth_scene(SceneKind::Plane, (h, w), 0.0, f as f32, 11);
        let n = (h * w) as f64;
        let invalid = n - sample.valid.count_true() as f64;
        // 4 sigma around n·f.
        let sigma = (n * f * (1.0 - f)).sqrt();
        assert!(
            (invalid - n * f).abs() <= 4.0 * sigma,
            "invalid count {invalid} vs expected {}",
            n * f
        );
    }

    #[test]
    fn split_is_deterministic_disjoint_exhaustive() {
        let ids: Vec<String> = (0..7385).map(|i| format!("{i:05}")).collect();
        let (train, val) = split(&ids, 516, 9).unwrap();
        assert_eq!(train.len(), 6869);
        assert_eq!(val.len(), 516);
        let (train2, val2) = split(&ids, 516, 9).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);

        let mut all: Vec<&String> = train.iter().chain(val.iter()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 7385);
    }

    #[test]
    fn split_rejects_oversized_validation() {
        let ids = vec![1, 2, 3];
        assert!(matches!(split(&ids, 3, 0), Err(DataError::BadSplit { .. })));
    }
}
