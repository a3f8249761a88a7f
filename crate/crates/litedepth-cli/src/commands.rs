//! Subcommand implementations. Reports are self-describing JSON documents;
//! every command echoes its resolved configuration to stderr first so runs
//! can be reproduced from logs alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use litedepth::augment::{augment_sample, AugmentConfig, CropSizeList};
use litedepth::data::{
    load_depth_png, load_pair, load_rgb_png, save_depth_png, save_rgb_png, synth_scene, SceneKind,
    DEPTH_MAX_METERS,
};
use litedepth::graph::{
    build_litedepth, fold_normalization, load_model, save_model, FoldError, GraphModel,
    LiteDepthConfig, NormalizationParams,
};
use litedepth::grid::Grid;
use litedepth::losses::{
    depth_loss, fit_toy as run_fit_toy, DepthLossParams, DepthPair, FitConfig, LossWeights,
    TermLoss,
};
use litedepth::metrics::{challenge_score, evaluate, EvalResult, PixelPool, Runtime, ScoreParams};
use litedepth::tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Weights(pub [f32; 4]);

#[derive(Clone, Debug)]
pub struct Sizes(pub Vec<(usize, usize)>);

#[derive(Clone, Debug)]
pub struct Channels(pub [usize; 4]);

pub fn parse_weights(s: &str) -> Result<Weights, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected w1,w2,w3,w4, got `{s}`"));
    }
    let mut w = [0.0f32; 4];
    for (dst, p) in w.iter_mut().zip(parts) {
        *dst = p.trim().parse().map_err(|e| format!("bad weight `{p}`: {e}"))?;
    }
    Ok(Weights(w))
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    Ok((
        h.trim().parse().map_err(|e| format!("bad height `{h}`: {e}"))?,
        w.trim().parse().map_err(|e| format!("bad width `{w}`: {e}"))?,
    ))
}

pub fn parse_sizes(s: &str) -> Result<Sizes, String> {
    let sizes: Result<Vec<_>, _> = s.split(',').map(parse_size).collect();
    let sizes = sizes?;
    if sizes.is_empty() {
        return Err("size list is empty".into());
    }
    Ok(Sizes(sizes))
}

pub fn parse_channels(s: &str) -> Result<Channels, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected four channel counts, got `{s}`"));
    }
    let mut c = [0usize; 4];
    for (dst, p) in c.iter_mut().zip(parts) {
        *dst = p.trim().parse().map_err(|e| format!("bad channel `{p}`: {e}"))?;
    }
    Ok(Channels(c))
}

fn echo_config(command: &str, config: &Value) {
    eprintln!("config: {}", json!({ "command": command, "config": config }));
}

fn emit_report(report: &Value, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    match output {
        Some(path) => fs::write(path, text + "\n")
            .with_context(|| format!("writing report to {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn eval_to_json(r: &EvalResult) -> Value {
    json!({
        "si_rmse": r.si_rmse,
        "rmse": r.rmse,
        "log10": r.log10,
        "rel": r.rel,
        "n_valid": r.n_valid,
    })
}

pub fn create(
    output: &Path,
    seed: u64,
    width_mult: f32,
    channels: Channels,
    no_normalization: bool,
) -> Result<()> {
    let config = LiteDepthConfig {
        width_mult,
        decoder_channels: channels.0,
        normalization: (!no_normalization).then(NormalizationParams::imagenet),
        seed,
        ..Default::default()
    };
    echo_config(
        "create",
        &json!({
            "output": output, "seed": seed, "width_mult": width_mult,
            "decoder_channels": channels.0, "normalization": !no_normalization,
        }),
    );
    let model = build_litedepth(&config)?;
    save_model(&model, output)?;
    emit_report(
        &json!({
            "command": "create",
            "path": output,
            "parameters": model.param_count(),
            "weight_bytes": model.weight_bytes(),
            "nodes": model.nodes.len(),
            "file_bytes": fs::metadata(output)?.len(),
        }),
        None,
    )
}

fn load_model_ctx(path: &Path) -> Result<GraphModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn infer(model_path: &Path, inputs: &[PathBuf], output: &Path, preview: bool) -> Result<()> {
    echo_config(
        "infer",
        &json!({ "model": model_path, "input": inputs, "output": output, "preview": preview }),
    );
    let model = load_model_ctx(model_path)?;
    let normalize = model.metadata.normalization.is_some();
    fs::create_dir_all(output)
        .with_context(|| format!("creating output dir {}", output.display()))?;

    let mut sorted: Vec<&PathBuf> = inputs.iter().collect();
    sorted.sort();

    let results: Vec<Result<Value>> = sorted
        .par_iter()
        .map(|path| -> Result<Value> {
            let rgb = load_rgb_png(path)?;
            let depth = model.run(&rgb, normalize)?;
            let [_, _, h, w] = depth.shape();
            let depth_grid = Grid::from_fn(h, w, |y, x| {
                depth.at(0, 0, y, x).clamp(0.0, DEPTH_MAX_METERS as f32)
            });
            let valid = Grid::filled(h, w, true);
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| anyhow!("input {} has no usable file stem", path.display()))?;
            let depth_path = output.join(format!("{stem}_depth.png"));
            save_depth_png(&depth_path, &depth_grid, &valid)?;

            let mut entry = json!({
                "input": path,
                "depth": depth_path,
                "min_m": depth.data().iter().cloned().fold(f32::INFINITY, f32::min),
                "max_m": depth.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max),
            });
            if preview {
                let preview_path = output.join(format!("{stem}_preview.png"));
                write_preview(&preview_path, &depth_grid)?;
                entry["preview"] = json!(preview_path);
            }
            Ok(entry)
        })
        .collect();

    let mut outputs = Vec::new();
    for r in results {
        outputs.push(r?);
    }
    emit_report(
        &json!({ "command": "infer", "normalized_input": normalize, "outputs": outputs }),
        None,
    )
}

fn write_preview(path: &Path, depth: &Grid<f32>) -> Result<()> {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-9);
    let rgb = Tensor::from_fn([1, 3, depth.height(), depth.width()], |_, c, y, x| {
        let t = (depth.get(y, x) - lo) / span;
        crate::colormap::heat(t)[c] as f32
    });
    save_rgb_png(path, &rgb)?;
    Ok(())
}

pub fn fold(model_path: &Path, output: &Path) -> Result<()> {
    echo_config("fold", &json!({ "model": model_path, "output": output }));
    let model = load_model_ctx(model_path)?;
    match fold_normalization(&model) {
        Ok(folded) => {
            save_model(&folded, output)?;
            emit_report(
                &json!({
                    "command": "fold",
                    "output": output,
                    "folded": true,
                    "parameters": folded.param_count(),
                    "weight_bytes": folded.weight_bytes(),
                }),
                None,
            )
        }
        Err(FoldError::NoNormalization) => {
            eprintln!("warning: {}; copying the model unchanged", FoldError::NoNormalization);
            save_model(&model, output)?;
            emit_report(
                &json!({ "command": "fold", "output": output, "folded": false }),
                None,
            )
        }
        Err(e) => Err(e.into()),
    }
}

pub fn verify_fold(
    a_path: &Path,
    b_path: &Path,
    trials: usize,
    tolerance: f32,
    seed: u64,
) -> Result<()> {
    echo_config(
        "verify-fold",
        &json!({
            "model_a": a_path, "model_b": b_path,
            "trials": trials, "tolerance": tolerance, "seed": seed,
        }),
    );
    let a = load_model_ctx(a_path)?;
    let b = load_model_ctx(b_path)?;
    let (h, w) = a.metadata.input_resolution;
    if b.metadata.input_resolution != (h, w) {
        bail!(
            "models disagree on input resolution: {:?} vs {:?}",
            a.metadata.input_resolution,
            b.metadata.input_resolution
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_trial = Vec::with_capacity(trials);
    let mut worst = 0.0f32;
    for _ in 0..trials {
        let img = Tensor::from_fn([1, 3, h, w], |_, _, _, _| rng.gen_range(0.0..255.0));
        let out_a = a.run(&img, a.metadata.normalization.is_some())?;
        let out_b = b.run(&img, b.metadata.normalization.is_some())?;
        let diff = out_a.max_abs_diff(&out_b);
        per_trial.push(diff);
        worst = worst.max(diff);
    }

    emit_report(
        &json!({
            "command": "verify-fold",
            "trials": trials,
            "tolerance": tolerance,
            "max_abs_diff": worst,
            "per_trial_max": per_trial,
            "pass": worst <= tolerance,
        }),
        None,
    )?;
    if worst > tolerance {
        bail!("max abs diff {worst} exceeds tolerance {tolerance}");
    }
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn eval(pred_dir: &Path, gt_dir: &Path, output: Option<&Path>) -> Result<()> {
    echo_config("eval", &json!({ "pred": pred_dir, "gt": gt_dir, "output": output }));
    let names = png_names(pred_dir)?;
    if names.is_empty() {
        bail!("no .png files in {}", pred_dir.display());
    }

    let per_image: Vec<(String, EvalResult)> = names
        .par_iter()
        .map(|name| -> Result<(String, EvalResult)> {
            let (pred, _) = load_depth_png(&pred_dir.join(name))?;
            let (gt, valid) = load_depth_png(&gt_dir.join(name))?;
            let r = evaluate(&pred, &gt, &valid)?;
            Ok((name.clone(), r))
        })
        .collect::<Result<Vec<_>>>()?;

    // Aggregate both ways: mean of per-image metrics and one pixel pool.
    let n = per_image.len() as f64;
    let mean = |f: &dyn Fn(&EvalResult) -> f64| per_image.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    let mut pool = PixelPool::default();
    for name in &names {
        let (pred, _) = load_depth_png(&pred_dir.join(name))?;
        let (gt, valid) = load_depth_png(&gt_dir.join(name))?;
        pool.add(&pred, &gt, &valid)?;
    }
    let pooled = pool.finish()?;

    emit_report(
        &json!({
            "command": "eval",
            "images": per_image.iter().map(|(f, r)| {
                let mut v = eval_to_json(r);
                v["file"] = json!(f);
                v
            }).collect::<Vec<_>>(),
            "aggregate": {
                "mean_over_images": {
                    "si_rmse": mean(&|r| r.si_rmse),
                    "rmse": mean(&|r| r.rmse),
                    "log10": mean(&|r| r.log10),
                    "rel": mean(&|r| r.rel),
                },
                "pixel_pooled": eval_to_json(&pooled),
            },
        }),
        output,
    )
}

pub fn score(si_rmse: f64, runtime_ms: f64, c: f64) -> Result<()> {
    echo_config("score", &json!({ "si_rmse": si_rmse, "runtime_ms": runtime_ms, "C": c }));
    let params = ScoreParams::new(c, Runtime::Millis(runtime_ms))?;
    let s = challenge_score(si_rmse, &params)?;
    emit_report(
        &json!({ "command": "score", "si_rmse": si_rmse, "runtime_ms": runtime_ms, "C": c, "score": s }),
        None,
    )
}

fn term_to_json(name: &str, t: &TermLoss<f64>, weight: f64, full: bool) -> Value {
    let grad_l2 = t.grad.data().iter().map(|&g| g * g).sum::<f64>().sqrt();
    let mut v = json!({
        "term": name,
        "value": t.value,
        "weight": weight,
        "grad_l2": grad_l2,
    });
    if full {
        v["grad"] = json!(t.grad.data());
    }
    v
}

#[allow(clippy::too_many_arguments)]
pub fn losses(
    pred_path: &Path,
    gt_path: &Path,
    weights: Weights,
    dynamic: bool,
    seed: u64,
    full_grads: bool,
    output: Option<&Path>,
) -> Result<()> {
    echo_config(
        "losses",
        &json!({
            "pred": pred_path, "gt": gt_path, "weights": weights.0,
            "dynamic": dynamic, "seed": seed, "full_grads": full_grads,
        }),
    );
    // Losses run at f64 here: full-frame f32 accumulation would smear the
    // report's low digits.
    let (pred, _) = load_depth_png(pred_path)?;
    let (gt, valid) = load_depth_png(gt_path)?;
    let pair = DepthPair::new(pred.map(|v| v as f64), gt.map(|v| v as f64), valid)?;
    let params = DepthLossParams { vnl_seed: seed, ..Default::default() };
    let lw = LossWeights { w: weights.0.map(|w| w as f64), dynamic, ..Default::default() };
    let report = depth_loss(&pair, &params, &lw)?;

    let combined_grad_l2 =
        report.combined_grad.data().iter().map(|&g| g * g).sum::<f64>().sqrt();
    let mut doc = json!({
        "command": "losses",
        "n_valid": pair.n_valid(),
        "terms": [
            term_to_json("silog", &report.silog, report.applied_weights[0], full_grads),
            term_to_json("grad", &report.grad, report.applied_weights[1], full_grads),
            term_to_json("vnl", &report.vnl, report.applied_weights[2], full_grads),
            term_to_json("robust", &report.robust, report.applied_weights[3], full_grads),
        ],
        "combined": report.combined,
        "combined_grad_l2": combined_grad_l2,
        "dynamic": dynamic,
    });
    if let Some(g) = report.log_var_grads {
        doc["log_var_grads"] = json!(g);
    }
    if full_grads {
        doc["combined_grad"] = json!(report.combined_grad.data());
    }
    emit_report(&doc, output)
}

#[allow(clippy::too_many_arguments)]
pub fn augment(
    rgb_path: &Path,
    depth_path: &Path,
    output: &Path,
    count: usize,
    seed: u64,
    sizes: Sizes,
    rotation: f32,
    flip_prob: f64,
    jitter: f32,
) -> Result<()> {
    echo_config(
        "augment",
        &json!({
            "rgb": rgb_path, "depth": depth_path, "output": output, "count": count,
            "seed": seed, "sizes": sizes.0, "rotation": rotation,
            "flip_prob": flip_prob, "jitter": jitter,
        }),
    );
    let pair = load_pair(rgb_path, depth_path)?;
    let config = AugmentConfig {
        rotation_deg: rotation,
        flip_prob,
        brightness_jitter: jitter,
        contrast_jitter: jitter,
        sizes: CropSizeList { sizes: sizes.0 },
    };
    fs::create_dir_all(output)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(count);
    for i in 0..count {
        let sample = augment_sample(&pair.rgb, &pair.depth, &pair.valid, &config, &mut rng)?;
        let rgb_out = output.join(format!("aug_{i:03}_rgb.png"));
        let depth_out = output.join(format!("aug_{i:03}_depth.png"));
        save_rgb_png(&rgb_out, &sample.rgb)?;
        save_depth_png(&depth_out, &sample.depth, &sample.valid)?;
        log.push(json!({
            "index": i,
            "rgb": rgb_out,
            "depth": depth_out,
            "transforms": sample.record,
        }));
    }
    let log_path = output.join("transforms.json");
    fs::write(&log_path, serde_json::to_string_pretty(&log)? + "\n")?;
    emit_report(
        &json!({ "command": "augment", "count": count, "log": log_path }),
        None,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn fit_toy(
    scene: &str,
    size: (usize, usize),
    steps: usize,
    lr: f64,
    dynamic: bool,
    seed: u64,
    init_noise: f64,
    invalid_fraction: f32,
    weights: Weights,
    output: Option<&Path>,
) -> Result<()> {
    echo_config(
        "fit-toy",
        &json!({
            "scene": scene, "size": [size.0, size.1], "steps": steps, "lr": lr,
            "dynamic": dynamic, "seed": seed, "init_noise": init_noise,
            "invalid_fraction": invalid_fraction, "weights": weights.0,
        }),
    );
    let kind: SceneKind = scene.parse().map_err(|e: String| anyhow!(e))?;
    let sample = synth_scene(kind, size, 0.0, invalid_fraction, seed);
    let gt: Grid<f64> = sample.depth.map(|v| v as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234_5678);
    let init = gt.map(|v: f64| (v + rng.gen_range(-init_noise..init_noise)).max(0.05));

    let config = FitConfig::<f64> {
        steps,
        lr,
        weights: LossWeights {
            w: weights.0.map(|w| w as f64),
            dynamic,
            ..Default::default()
        },
        params: DepthLossParams { vnl_seed: seed, ..Default::default() },
        ..Default::default()
    };
    let outcome = run_fit_toy(&gt, &sample.valid, &init, &config)?;
    let first = outcome.trace.first().expect("steps >= 1");
    let last = outcome.trace.last().expect("steps >= 1");

    emit_report(
        &json!({
            "command": "fit-toy",
            "initial_si_rmse": first.si_rmse,
            "final_si_rmse": last.si_rmse,
            "initial_combined": first.combined,
            "final_combined": last.combined,
            "final_log_vars": last.log_vars,
            "trace": outcome.trace,
        }),
        output,
    )
}

pub fn bench(model_path: &Path, trials: usize, seed: u64) -> Result<()> {
    echo_config("bench", &json!({ "model": model_path, "trials": trials, "seed": seed }));
    if trials == 0 {
        bail!("bench needs at least one trial");
    }
    let model = load_model_ctx(model_path)?;
    let normalize = model.metadata.normalization.is_some();
    let (h, w) = model.metadata.input_resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = Tensor::from_fn([1, 3, h, w], |_, _, _, _| rng.gen_range(0.0..255.0));

    // Warmup run outside the clock.
    model.run(&img, normalize)?;
    let mut times_ms = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t0 = Instant::now();
        model.run(&img, normalize)?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1000.0);
    }
    let mean = times_ms.iter().sum::<f64>() / trials as f64;
    let var = times_ms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / trials as f64;

    emit_report(
        &json!({
            "command": "bench",
            "trials": trials,
            "mean_ms": mean,
            "std_ms": var.sqrt(),
            "min_ms": times_ms.iter().cloned().fold(f64::INFINITY, f64::min),
            "max_ms": times_ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }),
        None,
    )
}
