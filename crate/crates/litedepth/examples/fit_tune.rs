use litedepth::grid::Grid;
use litedepth::losses::{fit_toy, DepthLossParams, FitConfig, LossWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let gt = Grid::from_fn(16, 16, |y, x| 3.0 + 0.04 * y as f64 + 0.03 * x as f64);
    let valid = Grid::filled(16, 16, true);

    for seed in [21u64, 5, 99] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = gt.map(|v: f64| (v + rng.gen_range(-0.5..0.5)).max(0.05));
        for lr in [0.1, 0.2, 0.3, 0.5] {
            for bound in [0.5, 1.0] {
                let mut si = [0.0; 2];
                let mut si0 = 0.0;
                for (i, dynamic) in [false, true].into_iter().enumerate() {
                    let config = FitConfig::<f64> {
                        lr,
                        log_var_bound: bound,
                        weights: LossWeights { dynamic, ..Default::default() },
                        params: DepthLossParams { vnl_seed: 77, ..Default::default() },
                        ..Default::default()
                    };
                    let out = fit_toy(&gt, &valid, &init, &config).unwrap();
                    si0 = out.trace.first().unwrap().si_rmse;
                    si[i] = out.trace.last().unwrap().si_rmse;
                }
                println!(
                    "seed {seed:>3} lr {lr:>4} bound {bound}: static {:.2}% red (si {:.2e}), dyn/static {:.3}",
                    100.0 * (1.0 - si[0] / si0), si[0], si[1] / si[0],
                );
            }
        }
    }
}
