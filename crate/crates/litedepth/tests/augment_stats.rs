//! Distributional checks on the crop sampler: size frequencies uniform over
//! the configured list, corner positions uniform per size, and zero
//! out-of-bounds windows, all at chi-square p = 0.01 over 10^4 draws.
//!
//! The draws exercise `draw_crop_window`, the exact randomness path
//! `r2_crop` uses; a separate test pins the window application itself.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use litedepth::augment::{augment_sample, draw_crop_window, AugmentConfig, CropSizeList};
use litedepth::data::{synth_scene, SceneKind};
use litedepth::oracle::{chi_square_crit_p01, chi_square_stat};

const DRAWS: usize = 10_000;
const FRAME: (usize, usize) = (480, 640);

#[test]
fn crop_sizes_are_uniform_over_the_list() {
    let sizes = CropSizeList::challenge_default();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);

    let mut counts = [0u64; 3];
    for _ in 0..DRAWS {
        let (_, _, ch, cw) = draw_crop_window(FRAME, &sizes, &mut rng).unwrap();
        let idx = sizes.sizes.iter().position(|&s| s == (ch, cw)).expect("drawn size in list");
        counts[idx] += 1;
    }

    let expected = [DRAWS as f64 / 3.0; 3];
    let stat = chi_square_stat(&counts, &expected);
    let crit = chi_square_crit_p01(2);
    assert!(stat <= crit, "size chi-square {stat} > {crit} (counts {counts:?})");
}

#[test]
fn crop_corners_are_uniform_per_size() {
    // Sizes with room to move; the full frame has a single placement.
    for (seed, (ch, cw)) in [(7u64, (240usize, 384usize)), (8, (384, 512))] {
        let sizes = CropSizeList { sizes: vec![(ch, cw)] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (range_y, range_x) = (FRAME.0 - ch + 1, FRAME.1 - cw + 1);

        // 4x4 binning of the corner coordinate space, expectations
        // proportional to exact bin widths.
        let bin_edges = |range: usize| -> Vec<usize> { (0..=4).map(|i| i * range / 4).collect() };
        let (ey, ex) = (bin_edges(range_y), bin_edges(range_x));
        let bin_of = |v: usize, edges: &[usize]| -> usize {
            (0..4).find(|&b| v >= edges[b] && v < edges[b + 1]).expect("in range")
        };

        let mut counts = vec![0u64; 16];
        for _ in 0..DRAWS {
            let (y0, x0, h, w) = draw_crop_window(FRAME, &sizes, &mut rng).unwrap();
            assert_eq!((h, w), (ch, cw));
            assert!(y0 + h <= FRAME.0 && x0 + w <= FRAME.1, "window out of bounds");
            counts[bin_of(y0, &ey) * 4 + bin_of(x0, &ex)] += 1;
        }

        let mut expected = vec![0.0f64; 16];
        for by in 0..4 {
            for bx in 0..4 {
                let wy = (ey[by + 1] - ey[by]) as f64 / range_y as f64;
                let wx = (ex[bx + 1] - ex[bx]) as f64 / range_x as f64;
                expected[by * 4 + bx] = DRAWS as f64 * wy * wx;
            }
        }
        let stat = chi_square_stat(&counts, &expected);
        let crit = chi_square_crit_p01(15);
        assert!(stat <= crit, "corner chi-square for {ch}x{cw}: {stat} > {crit}");
    }
}

#[test]
fn every_window_stays_in_bounds() {
    let sizes = CropSizeList::challenge_default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..DRAWS {
        let (y0, x0, h, w) = draw_crop_window(FRAME, &sizes, &mut rng).unwrap();
        assert!(y0 + h <= FRAME.0);
        assert!(x0 + w <= FRAME.1);
    }
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let sample = synth_scene(SceneKind::Sphere, (120, 160), 0.05, 0.1, 4);
    let config = AugmentConfig {
        sizes: CropSizeList { sizes: vec![(60, 96), (96, 128), (120, 160)] },
        ..Default::default()
    };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        (0..16)
            .map(|_| {
                augment_sample(&sample.rgb, &sample.depth, &sample.valid, &config, &mut rng)
                    .unwrap()
            })
            .collect::<Vec<_>>()
    };
    let a = run();
    let b = run();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.record, y.record);
        assert_eq!(x.rgb.data(), y.rgb.data());
        assert_eq!(x.depth.data(), y.depth.data());
        assert_eq!(x.valid.data(), y.valid.data());
    }
}
