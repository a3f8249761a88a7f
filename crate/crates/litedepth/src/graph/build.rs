//! Builder for the default lightweight depth network: a small fast-downsample
//! resize, a width-scaled MobileNet-v3-small feature trunk without the final
//! dimension-increasing 1x1 convolution, and a five-convolution decoder with
//! four skip connections.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Activation, ConvSpec, Tensor};

use super::{GraphModel, ModelMetadata, Node, NormalizationParams, OpKind};

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Knobs for [`build_litedepth`]. Defaults reproduce the shipping
/// architecture; weights are randomly initialized from `seed` (pretrained
/// import is out of scope, models otherwise come from `.ldw` files).
#[derive(Debug, Clone)]
pub struct LiteDepthConfig {
    /// Channel multiplier applied to the MobileNet-v3-small widths.
    pub width_mult: f32,
    /// Decoder stage widths at strides 16, 8, 4, 2.
    pub decoder_channels: [usize; 4],
    /// (height, width) of raw input and output images.
    pub input_resolution: (usize, usize),
    /// (height, width) after the fast-downsampling resize at graph entry.
    pub downsampled_resolution: (usize, usize),
    pub normalization: Option<NormalizationParams>,
    pub seed: u64,
}

impl Default for LiteDepthConfig {
    fn default() -> Self {
        LiteDepthConfig {
            width_mult: 0.5,
            decoder_channels: [64, 32, 32, 24],
            input_resolution: (480, 640),
            downsampled_resolution: (128, 160),
            normalization: Some(NormalizationParams::imagenet()),
            seed: 0,
        }
    }
}

/// MobileNet-v3-small inverted-residual settings:
/// (kernel, expansion, out channels, squeeze-excite, hardswish, stride).
const V3_SMALL: [(usize, usize, usize, bool, bool, usize); 11] = [
    (3, 16, 16, true, false, 2),
    (3, 72, 24, false, false, 2),
    (3, 88, 24, false, false, 1),
    (5, 96, 40, true, true, 2),
    (5, 240, 40, true, true, 1),
    (5, 240, 40, true, true, 1),
    (5, 120, 48, true, true, 1),
    (5, 144, 48, true, true, 1),
    (5, 288, 96, true, true, 2),
    (5, 576, 96, true, true, 1),
    (5, 576, 96, true, true, 1),
];

/// Standard MobileNet channel rounding: nearest multiple of 8, never below
/// 90% of the requested width.
fn scale_channels(base: usize, mult: f32) -> usize {
    let target = base as f32 * mult;
    let mut v = ((target / 8.0 + 0.5).floor() * 8.0) as usize;
    if (v as f32) < 0.9 * target {
        v += 8;
    }
    v.max(8)
}

struct GraphBuilder {
    nodes: Vec<Node>,
    weights: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
}

impl GraphBuilder {
    fn push(&mut self, id: &str, op: OpKind, inputs: &[&str]) -> String {
        self.nodes.push(Node {
            id: id.to_string(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        id.to_string()
    }

    /// He-uniform init over the kernel fan-in.
    fn init_conv_weight(&mut self, name: &str, shape: [usize; 4]) {
        let fan_in = (shape[1] * shape[2] * shape[3]) as f32;
        let limit = (6.0 / fan_in).sqrt();
        let t = {
            let rng = &mut self.rng;
            Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-limit..limit))
        };
        self.weights.insert(name.to_string(), t);
    }

    fn init_bias(&mut self, name: &str, len: usize) {
        let t = {
            let rng = &mut self.rng;
            Tensor::from_fn([len, 1, 1, 1], |_, _, _, _| rng.gen_range(-0.1..0.1))
        };
        self.weights.insert(name.to_string(), t);
    }

    /// Conv + bias, returning the node id.
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        id: &str,
        input: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        groups: usize,
        pad: usize,
    ) -> String {
        let spec = ConvSpec {
            kernel: (k, k),
            stride: (stride, stride),
            padding: crate::tensor::Padding::same(pad),
            groups,
            has_bias: true,
        };
        let w_name = format!("{id}.weight");
        let b_name = format!("{id}.bias");
        self.init_conv_weight(&w_name, [c_out, c_in / groups, k, k]);
        self.init_bias(&b_name, c_out);
        self.push(
            id,
            OpKind::Conv { spec, weight: w_name, bias: Some(b_name) },
            &[input],
        )
    }

    fn act(&mut self, id: &str, input: &str, kind: Activation) -> String {
        self.push(id, OpKind::Act { kind }, &[input])
    }

    fn squeeze_excite(&mut self, id: &str, input: &str, channels: usize) -> String {
        let reduced = scale_channels(channels / 4, 1.0).min(channels).max(1);
        let rw = format!("{id}.reduce.weight");
        let rb = format!("{id}.reduce.bias");
        let ew = format!("{id}.expand.weight");
        let eb = format!("{id}.expand.bias");
        self.init_conv_weight(&rw, [reduced, channels, 1, 1]);
        self.init_bias(&rb, reduced);
        self.init_conv_weight(&ew, [channels, reduced, 1, 1]);
        self.init_bias(&eb, channels);
        self.push(
            id,
            OpKind::SqueezeExcite {
                reduce_weight: rw,
                reduce_bias: rb,
                expand_weight: ew,
                expand_bias: eb,
            },
            &[input],
        )
    }

    /// Inverted residual: expand (1x1) -> depthwise (k×k, stride) ->
    /// optional squeeze-excite -> linear project (1x1), with a residual add
    /// when the block keeps resolution and width.
    #[allow(clippy::too_many_arguments)]
    fn inverted_residual(
        &mut self,
        prefix: &str,
        input: &str,
        c_in: usize,
        c_exp: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        use_se: bool,
        hswish: bool,
    ) -> String {
        let nl = if hswish { Activation::HardSwish } else { Activation::Relu };
        let mut cur = input.to_string();
        if c_exp != c_in {
            cur = self.conv(&format!("{prefix}.expand"), &cur, c_in, c_exp, 1, 1, 1, 0);
            cur = self.act(&format!("{prefix}.expand.act"), &cur, nl);
        }
        cur = self.conv(&format!("{prefix}.dw"), &cur, c_exp, c_exp, k, stride, c_exp, k / 2);
        cur = self.act(&format!("{prefix}.dw.act"), &cur, nl);
        if use_se {
            cur = self.squeeze_excite(&format!("{prefix}.se"), &cur, c_exp);
        }
        cur = self.conv(&format!("{prefix}.project"), &cur, c_exp, c_out, 1, 1, 1, 0);
        if stride == 1 && c_in == c_out {
            cur = self.push(&format!("{prefix}.add"), OpKind::Add, &[&cur, input]);
        }
        cur
    }
}

/// Builds the default network graph. The decoder holds exactly five
/// convolutions: 1x1 fusion convs at strides 16/8/4, a 3x3 fusion conv at
/// the highest decoder resolution (stride 2), and a final 1x1 projection
/// whose ReLU suppresses negative depth before the resize back to the input
/// resolution.
pub fn build_litedepth(config: &LiteDepthConfig) -> Result<GraphModel, BuildError> {
    if config.width_mult <= 0.0 {
        return Err(BuildError::InvalidConfig(format!(
            "width_mult must be positive, got {}",
            config.width_mult
        )));
    }
    if config.decoder_channels.iter().any(|&c| c == 0) {
        return Err(BuildError::InvalidConfig("decoder channel of zero".into()));
    }
    let (in_h, in_w) = config.input_resolution;
    let (ds_h, ds_w) = config.downsampled_resolution;
    for (label, v) in [("input", in_h), ("input", in_w), ("downsampled", ds_h), ("downsampled", ds_w)]
    {
        if v == 0 {
            return Err(BuildError::InvalidConfig(format!("{label} resolution has a zero dim")));
        }
    }
    if ds_h % 32 != 0 || ds_w % 32 != 0 {
        return Err(BuildError::InvalidConfig(format!(
            "downsampled resolution {ds_h}x{ds_w} must be divisible by 32"
        )));
    }

    let mut b = GraphBuilder {
        nodes: Vec::new(),
        weights: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };

    let image = b.push("image", OpKind::Input, &[]);
    // Fast downsampling: all trunk compute runs at the reduced resolution.
    let resized = b.push(
        "encoder.downsample",
        OpKind::Resize { h: ds_h, w: ds_w, align_corners: false },
        &[&image],
    );

    // The stem is pad-free: normalization folding rewrites this convolution,
    // and the rewrite is exact only when no kernel tap reads zero padding
    // (a padded tap would stand for the mean pixel pre-fold but a black
    // pixel post-fold). Downstream dims at strides 4..32 are unaffected.
    let stem_out = scale_channels(16, config.width_mult);
    let stem_spec = ConvSpec {
        kernel: (3, 3),
        stride: (2, 2),
        padding: crate::tensor::Padding::NONE,
        groups: 1,
        has_bias: true,
    };
    let (stem_h, stem_w) = stem_spec.out_dims(ds_h, ds_w);
    let mut cur = b.conv("encoder.stem", &resized, 3, stem_out, 3, 2, 1, 0);
    cur = b.act("encoder.stem.act", &cur, Activation::HardSwish);

    // Skip taps at strides 2/4/8/16 plus the stride-32 bottleneck.
    let tap_s2 = cur.clone();
    let mut tap_s4 = String::new();
    let mut tap_s8 = String::new();
    let mut tap_s16 = String::new();
    let mut c_in = stem_out;
    let mut c_s4 = 0;
    let mut c_s8 = 0;
    let mut c_s16 = 0;
    let mut stride = 2usize;

    for (i, &(k, exp, c, se, hs, s)) in V3_SMALL.iter().enumerate() {
        // Record the tap *before* leaving a stride level.
        if s == 2 {
            match stride {
                4 => {
                    tap_s4 = cur.clone();
                    c_s4 = c_in;
                }
                8 => {
                    tap_s8 = cur.clone();
                    c_s8 = c_in;
                }
                16 => {
                    tap_s16 = cur.clone();
                    c_s16 = c_in;
                }
                _ => {}
            }
        }
        let c_exp = scale_channels(exp, config.width_mult);
        let c_out = scale_channels(c, config.width_mult);
        cur = b.inverted_residual(
            &format!("encoder.block{i}"),
            &cur,
            c_in,
            c_exp,
            c_out,
            k,
            s,
            se,
            hs,
        );
        c_in = c_out;
        stride *= if s == 2 { 2 } else { 1 };
    }
    // The first stride-2 block fires at stride 2->4, so tap_s4 was taken at
    // stride 4 and so on; the loop leaves the bottleneck at stride 32. The
    // dimension-increasing 1x1 conv that follows in the classification
    // variant is intentionally absent.
    debug_assert_eq!(stride, 32);
    let bottleneck = cur;
    let c_bottleneck = c_in;

    // Decoder: upsample, concat skip, fuse.
    let [d16, d8, d4, d2] = config.decoder_channels;
    #[allow(clippy::too_many_arguments)]
    fn fuse(
        b: &mut GraphBuilder,
        name: &str,
        below: &str,
        below_c: usize,
        skip: &str,
        skip_c: usize,
        (h, w): (usize, usize),
        c_out: usize,
        k: usize,
    ) -> String {
        let up = b.push(
            &format!("decoder.{name}.up"),
            OpKind::Resize { h, w, align_corners: false },
            &[below],
        );
        let cat = b.push(&format!("decoder.{name}.concat"), OpKind::Concat, &[&up, skip]);
        let conv =
            b.conv(&format!("decoder.{name}.conv"), &cat, below_c + skip_c, c_out, k, 1, 1, k / 2);
        b.act(&format!("decoder.{name}.act"), &conv, Activation::Relu)
    }

    let f16 = fuse(
        &mut b,
        "fuse16",
        &bottleneck,
        c_bottleneck,
        &tap_s16,
        c_s16,
        (ds_h / 16, ds_w / 16),
        d16,
        1,
    );
    let f8 = fuse(&mut b, "fuse8", &f16, d16, &tap_s8, c_s8, (ds_h / 8, ds_w / 8), d8, 1);
    let f4 = fuse(&mut b, "fuse4", &f8, d8, &tap_s4, c_s4, (ds_h / 4, ds_w / 4), d4, 1);
    // 3x3 fusion at the highest decoder resolution (shallow features, one
    // row/column short of ds/2 because the stem is pad-free).
    let f2 = fuse(&mut b, "fuse2", &f4, d4, &tap_s2, stem_out, (stem_h, stem_w), d2, 3);

    let head = b.conv("decoder.head.conv", &f2, d2, 1, 1, 1, 1, 0);
    let head = b.act("decoder.head.act", &head, Activation::Relu);
    let output = b.push(
        "depth",
        OpKind::Resize { h: in_h, w: in_w, align_corners: false },
        &[&head],
    );

    let model = GraphModel {
        nodes: b.nodes,
        weights: b.weights,
        input: image,
        output,
        metadata: ModelMetadata {
            input_resolution: (in_h, in_w),
            normalization: config.normalization,
        },
    };
    model.validate().expect("builder emits a valid graph");
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpKind;

    #[test]
    fn default_model_shapes() {
        let model = build_litedepth(&LiteDepthConfig::default()).unwrap();
        let img = Tensor::filled([1, 3, 480, 640], 128.0);
        let out = model.run(&img, true).unwrap();
        assert_eq!(out.shape(), [1, 1, 480, 640]);
    }

    #[test]
    fn decoder_has_exactly_five_convolutions() {
        let model = build_litedepth(&LiteDepthConfig::default()).unwrap();
        let decoder_convs = model
            .nodes
            .iter()
            .filter(|n| n.id.starts_with("decoder.") && matches!(n.op, OpKind::Conv { .. }))
            .count();
        assert_eq!(decoder_convs, 5);
    }

    #[test]
    fn default_model_fits_weight_budget() {
        let model = build_litedepth(&LiteDepthConfig::default()).unwrap();
        assert!(
            model.weight_bytes() <= 1_400_000,
            "weights take {} bytes",
            model.weight_bytes()
        );
    }

    #[test]
    fn output_is_nonnegative() {
        let model = build_litedepth(&LiteDepthConfig::default()).unwrap();
        let img = Tensor::from_fn([1, 3, 480, 640], |_, c, y, x| {
            ((c * 83 + y * 7 + x * 3) % 256) as f32
        });
        let out = model.run(&img, true).unwrap();
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_weights_give_zero_depth() {
        let mut model = build_litedepth(&LiteDepthConfig::default()).unwrap();
        for t in model.weights.values_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let img = Tensor::filled([1, 3, 480, 640], 200.0);
        let out = model.run(&img, true).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = build_litedepth(&LiteDepthConfig::default()).unwrap();
        let b = build_litedepth(&LiteDepthConfig::default()).unwrap();
        assert_eq!(a.weights, b.weights);
        let c = build_litedepth(&LiteDepthConfig { seed: 7, ..Default::default() }).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn rejects_zero_decoder_channels() {
        let config = LiteDepthConfig { decoder_channels: [64, 0, 32, 24], ..Default::default() };
        assert!(matches!(build_litedepth(&config), Err(BuildError::InvalidConfig(_))));
    }

    #[test]
    fn rejects_non_divisible_resolution() {
        let config =
            LiteDepthConfig { downsampled_resolution: (100, 160), ..Default::default() };
        assert!(build_litedepth(&config).is_err());
    }
}
