use litedepth::graph::{build_litedepth, fold_normalization, LiteDepthConfig};
use litedepth::Tensor;
use std::time::Instant;

fn main() {
    let model = build_litedepth(&LiteDepthConfig::default()).unwrap();
    println!("params: {}  bytes: {}  nodes: {}", model.param_count(), model.weight_bytes(), model.nodes.len());
    let img = Tensor::from_fn([1, 3, 480, 640], |_, c, y, x| ((c * 89 + y * 13 + x * 7) % 256) as f32);
    let t0 = Instant::now();
    let out = model.run(&img, true).unwrap();
    println!("forward: {:?}  out range: {:?}..{:?}", t0.elapsed(),
        out.data().iter().cloned().fold(f32::INFINITY, f32::min),
        out.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max));
    let folded = fold_normalization(&model).unwrap();
    let t1 = Instant::now();
    let out2 = folded.run(&img, false).unwrap();
    println!("folded forward: {:?}, max diff {}", t1.elapsed(), out.max_abs_diff(&out2));
}
