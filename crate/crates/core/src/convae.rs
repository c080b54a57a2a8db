//! Tied-weight convolutional autoencoder over character bitmaps.
//!
//! Five convolutional levels in the encoder; the decoder mirrors them
//! with transposed convolutions that reuse the same kernel tensor per
//! level. Strides larger than one replace pooling. Trained level by
//! level with Adagrad, all other kernels frozen.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::glyph::{Bitmap, BITMAP_SIDE};
use crate::rng::substream;
use crate::tensorio::TensorFile;

pub const N_LEVELS: usize = 5;
const CHECKPOINT_MAGIC: [u8; 4] = *b"GVAE";

/// Channel-major feature map, `data[c][h][w]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> FeatureMap {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_bitmap(bmp: &Bitmap) -> FeatureMap {
        FeatureMap {
            channels: 1,
            height: BITMAP_SIDE,
            width: BITMAP_SIDE,
            data: bmp.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Geometry of one convolution level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayerSpec {
    pub fn out_size(&self, in_size: usize) -> usize {
        (in_size + 2 * self.padding - self.kernel_size) / self.stride + 1
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size * self.kernel_size
    }
}

/// Full network geometry: input side length plus the five level specs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvAeSpec {
    pub input_size: usize,
    pub levels: Vec<ConvLayerSpec>,
}

impl Default for ConvAeSpec {
    /// 60x60 input down to a 1x1x512 bottleneck.
    fn default() -> Self {
        let l = |i, o, k, s, p| ConvLayerSpec {
            in_channels: i,
            out_channels: o,
            kernel_size: k,
            stride: s,
            padding: p,
        };
        ConvAeSpec {
            input_size: BITMAP_SIDE,
            levels: vec![
                l(1, 8, 5, 2, 2),   // 60 -> 30
                l(8, 16, 5, 2, 2),  // 30 -> 15
                l(16, 32, 3, 2, 1), // 15 -> 8
                l(32, 64, 3, 2, 1), // 8 -> 4
                l(64, 512, 4, 1, 0), // 4 -> 1
            ],
        }
    }
}

/// 12x12 downscaled 5-level geometry for cheap numeric checks.
pub fn downscaled_spec() -> ConvAeSpec {
    let l = |i, o, k, s, p| ConvLayerSpec {
        in_channels: i,
        out_channels: o,
        kernel_size: k,
        stride: s,
        padding: p,
    };
    ConvAeSpec {
        input_size: 12,
        levels: vec![
            l(1, 2, 3, 2, 1), // 12 -> 6
            l(2, 2, 3, 2, 1), // 6 -> 3
            l(2, 3, 3, 2, 1), // 3 -> 2
            l(3, 3, 2, 1, 0), // 2 -> 1
            l(3, 4, 1, 1, 0), // 1 -> 1
        ],
    }
}

impl ConvAeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.len() != N_LEVELS {
            return Err(Error::Config(format!(
                "expected {N_LEVELS} levels, got {}",
                self.levels.len()
            )));
        }
        let mut size = self.input_size;
        for (i, l) in self.levels.iter().enumerate() {
            if l.stride < 1 {
                return Err(Error::ShapeMismatch {
                    level: i + 1,
                    msg: "stride must be >= 1".into(),
                });
            }
            if i > 0 && l.in_channels != self.levels[i - 1].out_channels {
                return Err(Error::ShapeMismatch {
                    level: i + 1,
                    msg: "channel chain broken".into(),
                });
            }
            size = l.out_size(size);
        }
        Ok(())
    }

    /// Spatial side length entering each level (index 0..5) plus the
    /// bottleneck size at index 5.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size];
        for l in &self.levels {
            sizes.push(l.out_size(*sizes.last().unwrap()));
        }
        sizes
    }

    pub fn feature_len(&self) -> usize {
        let sizes = self.sizes();
        let last = self.levels.last().unwrap();
        last.out_channels * sizes[N_LEVELS] * sizes[N_LEVELS]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    pub fn deriv(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = Activation::Sigmoid.apply(pre);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

/// All learnable state. One kernel tensor per level, shared between the
/// level's encoder convolution and decoder deconvolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvAeParams {
    pub spec: ConvAeSpec,
    /// `kernels[l][out][in][kh][kw]` flattened.
    pub kernels: Vec<Vec<f64>>,
    /// Per level, one bias per encoder output channel.
    pub encoder_biases: Vec<Vec<f64>>,
    /// Per level, one bias per decoder output channel (= level input channel).
    pub decoder_biases: Vec<Vec<f64>>,
}

impl ConvAeParams {
    pub fn init(spec: ConvAeSpec, seed: u64) -> Result<ConvAeParams> {
        spec.validate()?;
        let mut rng = substream(seed, "convae-init");
        let mut kernels = Vec::new();
        let mut encoder_biases = Vec::new();
        let mut decoder_biases = Vec::new();
        for l in &spec.levels {
            let fan_in = l.in_channels * l.kernel_size * l.kernel_size;
            let scale = 1.0 / (fan_in as f64).sqrt();
            kernels.push(
                (0..l.kernel_len())
                    .map(|_| rng.gen_range(-scale..scale))
                    .collect(),
            );
            // small positive bias keeps deep rectified units alive at init
            encoder_biases.push(vec![0.1; l.out_channels]);
            decoder_biases.push(vec![0.1; l.in_channels]);
        }
        Ok(ConvAeParams {
            spec,
            kernels,
            encoder_biases,
            decoder_biases,
        })
    }

    fn enc_activation(&self, _level: usize) -> Activation {
        Activation::Relu
    }

    fn dec_activation(&self, level: usize) -> Activation {
        if level == 0 {
            Activation::Sigmoid
        } else {
            Activation::Relu
        }
    }
}

/// Extracted glyph feature: the flattened bottleneck activation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphFeature {
    pub codepoint: char,
    pub values: Vec<f64>,
}

fn kidx(l: &ConvLayerSpec, co: usize, ci: usize, kh: usize, kw: usize) -> usize {
    ((co * l.in_channels + ci) * l.kernel_size + kh) * l.kernel_size + kw
}

/// Plain convolution, no bias or activation.
fn conv2d(input: &FeatureMap, kernel: &[f64], l: &ConvLayerSpec) -> FeatureMap {
    let oh = l.out_size(input.height);
    let ow = l.out_size(input.width);
    let mut out = FeatureMap::zeros(l.out_channels, oh, ow);
    let k = l.kernel_size;
    for co in 0..l.out_channels {
        for ci in 0..l.in_channels {
            let in_base = ci * input.height * input.width;
            for kh in 0..k {
                for kw in 0..k {
                    let w = kernel[kidx(l, co, ci, kh, kw)];
                    if w == 0.0 {
                        continue;
                    }
                    for ho in 0..oh {
                        let hi = (ho * l.stride + kh) as isize - l.padding as isize;
                        if hi < 0 || hi as usize >= input.height {
                            continue;
                        }
                        let row = in_base + hi as usize * input.width;
                        let out_row = (co * oh + ho) * ow;
                        for wo in 0..ow {
                            let wi = (wo * l.stride + kw) as isize - l.padding as isize;
                            if wi < 0 || wi as usize >= input.width {
                                continue;
                            }
                            out.data[out_row + wo] += w * input.data[row + wi as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint (transpose) of [`conv2d`]: maps an output-shaped map back to
/// an input-shaped one with the same kernel. Serves both as the decoder
/// forward pass and as the gradient of `conv2d` with respect to its input.
fn conv2d_adjoint(
    grad_out: &FeatureMap,
    kernel: &[f64],
    l: &ConvLayerSpec,
    in_h: usize,
    in_w: usize,
) -> FeatureMap {
    let mut out = FeatureMap::zeros(l.in_channels, in_h, in_w);
    let oh = grad_out.height;
    let ow = grad_out.width;
    let k = l.kernel_size;
    for co in 0..l.out_channels {
        for ci in 0..l.in_channels {
            let base = ci * in_h * in_w;
            for kh in 0..k {
                for kw in 0..k {
                    let w = kernel[kidx(l, co, ci, kh, kw)];
                    if w == 0.0 {
                        continue;
                    }
                    for ho in 0..oh {
                        let hi = (ho * l.stride + kh) as isize - l.padding as isize;
                        if hi < 0 || hi as usize >= in_h {
                            continue;
                        }
                        let row = base + hi as usize * in_w;
                        let g_row = (co * oh + ho) * ow;
                        for wo in 0..ow {
                            let wi = (wo * l.stride + kw) as isize - l.padding as isize;
                            if wi < 0 || wi as usize >= in_w {
                                continue;
                            }
                            out.data[row + wi as usize] += w * grad_out.data[g_row + wo];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `conv2d(input, K)` with respect to `K`, contracted against
/// an output-shaped cotangent.
fn conv2d_kernel_grad(
    input: &FeatureMap,
    grad_out: &FeatureMap,
    l: &ConvLayerSpec,
    acc: &mut [f64],
) {
    let oh = grad_out.height;
    let ow = grad_out.width;
    let k = l.kernel_size;
    for co in 0..l.out_channels {
        for ci in 0..l.in_channels {
            let in_base = ci * input.height * input.width;
            for kh in 0..k {
                for kw in 0..k {
                    let mut sum = 0.0;
                    for ho in 0..oh {
                        let hi = (ho * l.stride + kh) as isize - l.padding as isize;
                        if hi < 0 || hi as usize >= input.height {
                            continue;
                        }
                        let row = in_base + hi as usize * input.width;
                        let g_row = (co * oh + ho) * ow;
                        for wo in 0..ow {
                            let wi = (wo * l.stride + kw) as isize - l.padding as isize;
                            if wi < 0 || wi as usize >= input.width {
                                continue;
                            }
                            sum += grad_out.data[g_row + wo] * input.data[row + wi as usize];
                        }
                    }
                    acc[kidx(l, co, ci, kh, kw)] += sum;
                }
            }
        }
    }
}

fn check_channels(level: usize, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch {
            level,
            msg: format!("input has {got} channels, expected {want}"),
        });
    }
    Ok(())
}

/// Encoder convolution at one level: conv, bias, elementwise activation.
pub fn conv_forward(
    input: &FeatureMap,
    layer: &ConvLayerSpec,
    kernel: &[f64],
    bias: &[f64],
    activation: Activation,
) -> Result<FeatureMap> {
    check_channels(0, input.channels, layer.in_channels)?;
    let mut out = conv2d(input, kernel, layer);
    let plane = out.height * out.width;
    for c in 0..out.channels {
        for v in &mut out.data[c * plane..(c + 1) * plane] {
            *v = activation.apply(*v + bias[c]);
        }
    }
    Ok(out)
}

/// Decoder deconvolution at one level, sharing the paired level's kernel.
/// Output spatial size equals the paired encoder layer's input size.
pub fn deconv_forward(
    input: &FeatureMap,
    layer: &ConvLayerSpec,
    kernel: &[f64],
    bias: &[f64],
    activation: Activation,
    out_size: usize,
) -> Result<FeatureMap> {
    check_channels(0, input.channels, layer.out_channels)?;
    let mut out = conv2d_adjoint(input, kernel, layer, out_size, out_size);
    let plane = out.height * out.width;
    for c in 0..out.channels {
        for v in &mut out.data[c * plane..(c + 1) * plane] {
            *v = activation.apply(*v + bias[c]);
        }
    }
    Ok(out)
}

/// Per-example forward cache used by the backward pass.
pub struct ForwardCache {
    /// Encoder pre-activations (bias added), level 0..5.
    pub enc_pre: Vec<FeatureMap>,
    /// Encoder post-activations; `enc_act[l]` is the output of level l.
    pub enc_act: Vec<FeatureMap>,
    /// Decoder pre-activations indexed by level (4 down to 0).
    pub dec_pre: Vec<FeatureMap>,
    /// Decoder post-activations indexed by level; `dec_act[0]` is the
    /// reconstruction.
    pub dec_act: Vec<FeatureMap>,
}

impl ForwardCache {
    pub fn reconstruction(&self) -> &FeatureMap {
        &self.dec_act[0]
    }
}

pub fn forward_full(params: &ConvAeParams, input: &FeatureMap) -> Result<ForwardCache> {
    let sizes = params.spec.sizes();
    let mut enc_pre = Vec::with_capacity(N_LEVELS);
    let mut enc_act = Vec::with_capacity(N_LEVELS);
    let mut cur = input.clone();
    for (l, layer) in params.spec.levels.iter().enumerate() {
        check_channels(l + 1, cur.channels, layer.in_channels)?;
        let mut pre = conv2d(&cur, &params.kernels[l], layer);
        let plane = pre.height * pre.width;
        for c in 0..pre.channels {
            for v in &mut pre.data[c * plane..(c + 1) * plane] {
                *v += params.encoder_biases[l][c];
            }
        }
        let act = params.enc_activation(l);
        let mut post = pre.clone();
        for v in &mut post.data {
            *v = act.apply(*v);
        }
        enc_pre.push(pre);
        cur = post.clone();
        enc_act.push(post);
    }
    // decoder, levels 4 down to 0
    let mut dec_pre: Vec<Option<FeatureMap>> = (0..N_LEVELS).map(|_| None).collect();
    let mut dec_act: Vec<Option<FeatureMap>> = (0..N_LEVELS).map(|_| None).collect();
    for l in (0..N_LEVELS).rev() {
        let layer = &params.spec.levels[l];
        let mut pre = conv2d_adjoint(&cur, &params.kernels[l], layer, sizes[l], sizes[l]);
        let plane = pre.height * pre.width;
        for c in 0..pre.channels {
            for v in &mut pre.data[c * plane..(c + 1) * plane] {
                *v += params.decoder_biases[l][c];
            }
        }
        let act = params.dec_activation(l);
        let mut post = pre.clone();
        for v in &mut post.data {
            *v = act.apply(*v);
        }
        dec_pre[l] = Some(pre);
        cur = post.clone();
        dec_act[l] = Some(post);
    }
    Ok(ForwardCache {
        enc_pre,
        enc_act,
        dec_pre: dec_pre.into_iter().map(Option::unwrap).collect(),
        dec_act: dec_act.into_iter().map(Option::unwrap).collect(),
    })
}

/// Maps a bitmap to its flattened bottleneck feature.
pub fn encode(bitmap: &Bitmap, params: &ConvAeParams) -> Result<GlyphFeature> {
    let input = FeatureMap::from_bitmap(bitmap);
    encode_map(&input, params).map(|values| GlyphFeature {
        codepoint: bitmap.codepoint,
        values,
    })
}

/// Glyph feature with the blank-canvas response subtracted.
///
/// Encoder biases give every input a large shared activation component,
/// which would dominate cosine comparisons between glyphs; removing the
/// blank baseline keeps only the stroke-driven part. A blank bitmap maps
/// exactly to the zero feature, making it a neutral fallback for
/// characters without a rendered glyph.
pub fn encode_baselined(bitmap: &Bitmap, params: &ConvAeParams) -> Result<GlyphFeature> {
    let raw = encode(bitmap, params)?;
    let blank = encode(&Bitmap::blank(bitmap.codepoint), params)?;
    Ok(GlyphFeature {
        codepoint: raw.codepoint,
        values: raw
            .values
            .iter()
            .zip(&blank.values)
            .map(|(a, b)| a - b)
            .collect(),
    })
}

pub fn encode_map(input: &FeatureMap, params: &ConvAeParams) -> Result<Vec<f64>> {
    let mut cur = input.clone();
    for (l, layer) in params.spec.levels.iter().enumerate() {
        cur = conv_forward(
            &cur,
            layer,
            &params.kernels[l],
            &params.encoder_biases[l],
            params.enc_activation(l),
        )
        .map_err(|e| match e {
            Error::ShapeMismatch { msg, .. } => Error::ShapeMismatch { level: l + 1, msg },
            other => other,
        })?;
        if cur.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!(
                "non-finite encoder activation at level {}",
                l + 1
            )));
        }
    }
    Ok(cur.data)
}

/// Runs the decoder on a feature vector, returning the 60x60-shaped
/// real-valued reconstruction in [0, 1].
pub fn decode(feature: &[f64], params: &ConvAeParams) -> Result<FeatureMap> {
    let sizes = params.spec.sizes();
    let last = params.spec.levels.last().unwrap();
    if feature.len() != params.spec.feature_len() {
        return Err(Error::ShapeMismatch {
            level: N_LEVELS,
            msg: format!(
                "feature length {} != {}",
                feature.len(),
                params.spec.feature_len()
            ),
        });
    }
    let mut cur = FeatureMap {
        channels: last.out_channels,
        height: sizes[N_LEVELS],
        width: sizes[N_LEVELS],
        data: feature.to_vec(),
    };
    for l in (0..N_LEVELS).rev() {
        cur = deconv_forward(
            &cur,
            &params.spec.levels[l],
            &params.kernels[l],
            &params.decoder_biases[l],
            params.dec_activation(l),
            sizes[l],
        )?;
    }
    Ok(cur)
}

/// Sum of squared pixel differences plus l1 penalty on the encoder
/// convolution activations.
pub fn loss(
    input: &FeatureMap,
    reconstruction: &FeatureMap,
    encoder_activations: &[FeatureMap],
    l1_weight: f64,
) -> f64 {
    assert_eq!(input.data.len(), reconstruction.data.len(), "shape mismatch");
    let mut total: f64 = input
        .data
        .iter()
        .zip(&reconstruction.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if l1_weight != 0.0 {
        for act in encoder_activations {
            total += l1_weight * act.data.iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    total
}

/// Per-level parameter gradients. The kernel gradient is the sum of the
/// encoder-side and decoder-side contributions of the shared tensor.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub kernels: Vec<Vec<f64>>,
    pub encoder_biases: Vec<Vec<f64>>,
    pub decoder_biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(params: &ConvAeParams) -> Gradients {
        Gradients {
            kernels: params.kernels.iter().map(|k| vec![0.0; k.len()]).collect(),
            encoder_biases: params
                .encoder_biases
                .iter()
                .map(|b| vec![0.0; b.len()])
                .collect(),
            decoder_biases: params
                .decoder_biases
                .iter()
                .map(|b| vec![0.0; b.len()])
                .collect(),
        }
    }
}

fn channel_bias_grad(g: &FeatureMap, acc: &mut [f64]) {
    let plane = g.height * g.width;
    for c in 0..g.channels {
        acc[c] += g.data[c * plane..(c + 1) * plane].iter().sum::<f64>();
    }
}

/// Backpropagates the full-path loss over a batch. `active_level = None`
/// accumulates gradients for every level; `Some(l)` skips the parameter
/// gradients of frozen levels (input gradients still flow through them).
pub fn backward(
    inputs: &[FeatureMap],
    params: &ConvAeParams,
    l1_weight: f64,
    active_level: Option<usize>,
) -> Result<(f64, Gradients)> {
    let sizes = params.spec.sizes();
    let mut grads = Gradients::zeros(params);
    let mut total_loss = 0.0;
    let wants = |l: usize| active_level.map_or(true, |a| a == l);
    for input in inputs {
        let cache = forward_full(params, input)?;
        total_loss += loss(input, cache.reconstruction(), &cache.enc_act, l1_weight);
        // d loss / d reconstruction
        let recon = cache.reconstruction();
        let mut g = FeatureMap {
            channels: recon.channels,
            height: recon.height,
            width: recon.width,
            data: recon
                .data
                .iter()
                .zip(&input.data)
                .map(|(r, x)| 2.0 * (r - x))
                .collect(),
        };
        // decoder stages: level 0 upward
        for l in 0..N_LEVELS {
            let layer = &params.spec.levels[l];
            let act = params.dec_activation(l);
            let pre = &cache.dec_pre[l];
            for (gv, p) in g.data.iter_mut().zip(&pre.data) {
                *gv *= act.deriv(*p);
            }
            // deconv input at level l is enc_act[4] for l = 4, else dec_act[l+1]
            let dec_input = if l == N_LEVELS - 1 {
                &cache.enc_act[N_LEVELS - 1]
            } else {
                &cache.dec_act[l + 1]
            };
            if wants(l) {
                channel_bias_grad(&g, &mut grads.decoder_biases[l]);
                conv2d_kernel_grad(&g, dec_input, layer, &mut grads.kernels[l]);
            }
            g = conv2d(&g, &params.kernels[l], layer);
        }
        // g now carries d loss / d bottleneck (post-activation)
        // encoder stages: level 4 downward, adding the l1 subgradient on
        // each post-activation output
        for l in (0..N_LEVELS).rev() {
            let layer = &params.spec.levels[l];
            if l1_weight != 0.0 {
                for (gv, a) in g.data.iter_mut().zip(&cache.enc_act[l].data) {
                    if *a != 0.0 {
                        *gv += l1_weight * a.signum();
                    }
                }
            }
            let act = params.enc_activation(l);
            debug_assert_eq!(g.data.len(), cache.enc_pre[l].data.len());
            for (gv, p) in g.data.iter_mut().zip(&cache.enc_pre[l].data) {
                *gv *= act.deriv(*p);
            }
            let enc_input = if l == 0 { input } else { &cache.enc_act[l - 1] };
            if wants(l) {
                channel_bias_grad(&g, &mut grads.encoder_biases[l]);
                conv2d_kernel_grad(enc_input, &g, layer, &mut grads.kernels[l]);
            }
            if l > 0 {
                // back to the shape of this level's input, enc_act[l-1]
                g = conv2d_adjoint(&g, &params.kernels[l], layer, sizes[l], sizes[l]);
            }
        }
    }
    Ok((total_loss, grads))
}

/// Adagrad accumulator for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub accumulated: Vec<f64>,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new(len: usize) -> AdagradState {
        AdagradState {
            accumulated: vec![0.0; len],
            epsilon: 1e-8,
        }
    }
}

/// `accumulator += grad^2; param -= lr * grad / (sqrt(accumulator) + eps)`.
pub fn adagrad_step(param: &mut [f64], grad: &[f64], state: &mut AdagradState, lr: f64) {
    debug_assert_eq!(param.len(), grad.len());
    for ((p, g), acc) in param.iter_mut().zip(grad).zip(&mut state.accumulated) {
        *acc += g * g;
        *p -= lr * g / (acc.sqrt() + state.epsilon);
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs_per_level: usize,
    pub batch: usize,
    pub lr: f64,
    pub l1_weight: f64,
    pub seed: u64,
    pub spec: ConvAeSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_per_level: 100,
            batch: 20,
            lr: 0.001,
            l1_weight: 1e-4,
            seed: 1,
            spec: ConvAeSpec::default(),
        }
    }
}

/// Loss history: `per_level[l][epoch]` = summed batch losses of that epoch.
pub struct TrainResult {
    pub params: ConvAeParams,
    pub per_level_losses: Vec<Vec<f64>>,
    /// Parameter snapshot taken right after each level's phase; lets
    /// callers verify the freeze contract by byte comparison.
    pub level_snapshots: Vec<ConvAeParams>,
}

/// Layer-wise training: levels 1..5 in order, each trained for
/// `epochs_per_level` epochs with every other level frozen. The loss is
/// always the full-path reconstruction loss.
pub fn train_layerwise(bitmaps: &[Bitmap], config: &TrainConfig) -> Result<TrainResult> {
    if bitmaps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let maps: Vec<FeatureMap> = bitmaps.iter().map(FeatureMap::from_bitmap).collect();
    train_layerwise_maps(&maps, config)
}

pub fn train_layerwise_maps(maps: &[FeatureMap], config: &TrainConfig) -> Result<TrainResult> {
    let mut params = ConvAeParams::init(config.spec.clone(), config.seed)?;
    let mut rng = substream(config.seed, "convae-shuffle");
    let mut order: Vec<usize> = (0..maps.len()).collect();
    let mut per_level_losses = Vec::with_capacity(N_LEVELS);
    let mut level_snapshots = Vec::with_capacity(N_LEVELS);
    for level in 0..N_LEVELS {
        let mut kernel_state = AdagradState::new(params.kernels[level].len());
        let mut eb_state = AdagradState::new(params.encoder_biases[level].len());
        let mut db_state = AdagradState::new(params.decoder_biases[level].len());
        let mut epoch_losses = Vec::with_capacity(config.epochs_per_level);
        let mut step = 0usize;
        for _epoch in 0..config.epochs_per_level {
            // Fisher-Yates with the shared substream keeps runs reproducible
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(config.batch.max(1)) {
                let batch: Vec<FeatureMap> = chunk.iter().map(|&i| maps[i].clone()).collect();
                let (l, grads) = backward(&batch, &params, config.l1_weight, Some(level))?;
                if !l.is_finite() {
                    return Err(Error::Divergence {
                        level: level + 1,
                        step,
                    });
                }
                epoch_loss += l;
                adagrad_step(
                    &mut params.kernels[level],
                    &grads.kernels[level],
                    &mut kernel_state,
                    config.lr,
                );
                adagrad_step(
                    &mut params.encoder_biases[level],
                    &grads.encoder_biases[level],
                    &mut eb_state,
                    config.lr,
                );
                adagrad_step(
                    &mut params.decoder_biases[level],
                    &grads.decoder_biases[level],
                    &mut db_state,
                    config.lr,
                );
                step += 1;
            }
            epoch_losses.push(epoch_loss);
        }
        per_level_losses.push(epoch_losses);
        level_snapshots.push(params.clone());
    }
    Ok(TrainResult {
        params,
        per_level_losses,
        level_snapshots,
    })
}

/// Mean squared reconstruction error over a set of maps.
pub fn reconstruction_mse(maps: &[FeatureMap], params: &ConvAeParams) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for m in maps {
        let cache = forward_full(params, m)?;
        total += m
            .data
            .iter()
            .zip(&cache.reconstruction().data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        n += m.data.len();
    }
    Ok(total / n as f64)
}

pub fn save_params(params: &ConvAeParams, path: &Path) -> Result<()> {
    let mut meta = vec![params.spec.input_size as u32, N_LEVELS as u32];
    for l in &params.spec.levels {
        meta.extend([
            l.in_channels as u32,
            l.out_channels as u32,
            l.kernel_size as u32,
            l.stride as u32,
            l.padding as u32,
        ]);
    }
    let mut tensors = Vec::new();
    for l in 0..N_LEVELS {
        tensors.push((format!("kernel/{l}"), params.kernels[l].clone()));
        tensors.push((format!("enc_bias/{l}"), params.encoder_biases[l].clone()));
        tensors.push((format!("dec_bias/{l}"), params.decoder_biases[l].clone()));
    }
    TensorFile {
        magic: CHECKPOINT_MAGIC,
        version: 1,
        meta,
        tensors,
    }
    .write(path)
}

pub fn load_params(path: &Path) -> Result<ConvAeParams> {
    let tf = TensorFile::read(path, CHECKPOINT_MAGIC)?;
    if tf.meta.len() < 2 + 5 * N_LEVELS {
        return Err(Error::Config("checkpoint header truncated".into()));
    }
    let input_size = tf.meta[0] as usize;
    let mut levels = Vec::with_capacity(N_LEVELS);
    for l in 0..N_LEVELS {
        let m = &tf.meta[2 + l * 5..2 + (l + 1) * 5];
        levels.push(ConvLayerSpec {
            in_channels: m[0] as usize,
            out_channels: m[1] as usize,
            kernel_size: m[2] as usize,
            stride: m[3] as usize,
            padding: m[4] as usize,
        });
    }
    let spec = ConvAeSpec { input_size, levels };
    spec.validate()?;
    let mut kernels = Vec::new();
    let mut encoder_biases = Vec::new();
    let mut decoder_biases = Vec::new();
    for l in 0..N_LEVELS {
        kernels.push(tf.tensor(&format!("kernel/{l}"))?.to_vec());
        encoder_biases.push(tf.tensor(&format!("enc_bias/{l}"))?.to_vec());
        decoder_biases.push(tf.tensor(&format!("dec_bias/{l}"))?.to_vec());
    }
    Ok(ConvAeParams {
        spec,
        kernels,
        encoder_biases,
        decoder_biases,
    })
}

/// Feature export: TSV `U+<hex><TAB>v1 v2 ... vN`.
pub fn save_features(features: &BTreeMap<char, Vec<f64>>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (c, values) in features {
        write!(out, "U+{:04X}\t", *c as u32)?;
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                write!(out, " ")?;
            }
            write!(out, "{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn load_features(path: &Path) -> Result<BTreeMap<char, Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    let mut features = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let err = |msg: &str| crate::error::parse_err(i + 1, msg);
        let (cp, rest) = line.split_once('\t').ok_or_else(|| err("expected TAB"))?;
        let c = cp
            .strip_prefix("U+")
            .and_then(|h| u32::from_str_radix(h, 16).ok())
            .and_then(char::from_u32)
            .ok_or_else(|| err("bad codepoint"))?;
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err("bad float"))?;
        if features.insert(c, values).is_some() {
            return Err(Error::DuplicateCodepoint {
                codepoint: c,
                index: i,
            });
        }
    }
    Ok(features)
}
