//! Encoder-decoder FCN.
//!
//! For `S = channels.len()` stages the layer sequence is:
//!
//! * encoder stage `k`: conv(→ c[k]), relu, conv, relu, maxpool; the
//!   pre-pool activation is kept for the skip connection
//! * bottleneck: two conv + relu at 1/2^S resolution
//! * decoder stage `k = S−1 … 0`: nearest ×2 upsample, up-conv(→ c[k]),
//!   relu, optional concat with the encoder activation, conv(→ c[k]), relu
//! * head: 1×1 conv to `num_classes` logits
//!
//! Every conv except the head is `kernel_size` square, stride 1, same
//! padding, so output resolution equals input resolution.

use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, softmax_channels, softmax_cross_entropy, split_channels,
    upsample2_backward, upsample2_forward,
};
use super::{SegnetError, Tensor4};
use crate::image::GrayImage;
use crate::raster::Mask;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Nearest-neighbor ×2 followed by a learnable convolution.
    NearestConv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub in_channels: usize,
    /// Channel count per encoder stage; its length is the number of
    /// down-sampling stages.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub upsample: UpsampleMode,
    pub skip_connections: bool,
    pub num_classes: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            channels: vec![8, 16, 32],
            kernel_size: 3,
            upsample: UpsampleMode::NearestConv,
            skip_connections: true,
            num_classes: 2,
        }
    }
}

impl ArchitectureConfig {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    /// Input height and width must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<(), SegnetError> {
        let bad = |m: &str| Err(SegnetError::InvalidConfig(m.into()));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("need at least one stage with nonzero channels");
        }
        if self.stages() > 16 {
            return bad("too many stages");
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive");
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad("kernel size must be odd");
        }
        if self.num_classes != 2 {
            return bad("the head must have 2 output channels (background, head)");
        }
        Ok(())
    }

    /// `(out_ch, in_ch, k)` of every conv layer, in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let s = self.stages();
        let c = &self.channels;
        let k = self.kernel_size;
        let mut shapes = Vec::with_capacity(4 * s + 3);
        let mut prev = self.in_channels;
        for &ch in c {
            shapes.push((ch, prev, k));
            shapes.push((ch, ch, k));
            prev = ch;
        }
        shapes.push((prev, prev, k));
        shapes.push((prev, prev, k));
        for stage in (0..s).rev() {
            let ch = c[stage];
            shapes.push((ch, prev, k));
            let fuse_in = if self.skip_connections { 2 * ch } else { ch };
            shapes.push((ch, fuse_in, k));
            prev = ch;
        }
        shapes.push((self.num_classes, prev, 1));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor4,
    pub bias: Vec<f64>,
}

/// Network weights Θ: one kernel and one bias block per conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchitectureConfig,
    pub layers: Vec<ConvParams>,
}

/// Gradient of a scalar loss with respect to every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ConvParams>,
}

impl NetworkParams {
    /// He-uniform kernels (`±√(6 / fan_in)`), zero biases.
    pub fn init(arch: &ArchitectureConfig, seed: u64) -> Result<Self, SegnetError> {
        arch.validate()?;
        let mut rng = SplitMix64::new(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i, k)| {
                let bound = (6.0 / (i * k * k) as f64).sqrt();
                let data = (0..o * i * k * k).map(|_| rng.uniform(-bound, bound)).collect();
                ConvParams {
                    kernel: Tensor4::from_vec([o, i, k, k], data).expect("shape"),
                    bias: vec![0.0; o],
                }
            })
            .collect();
        Ok(Self { arch: arch.clone(), layers })
    }

    pub fn from_layers(arch: ArchitectureConfig, layers: Vec<ConvParams>) -> Result<Self, SegnetError> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(SegnetError::ShapeMismatch(format!(
                "architecture has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((o, c, k), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.kernel.shape() != [*o, *c, *k, *k] || l.bias.len() != *o {
                return Err(SegnetError::ShapeMismatch(format!(
                    "layer {i}: expected kernel {:?} and {o} biases",
                    [o, c, k, k]
                )));
            }
            if !l.kernel.all_finite() || !l.bias.iter().all(|v| v.is_finite()) {
                return Err(SegnetError::NonFinite(format!("layer {i}")));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    /// Blocks in layer order: kernel, bias, kernel, bias, ...
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.kernel.data(), l.bias.as_slice()]).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let ConvParams { kernel, bias } = l;
                [kernel.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }
}

impl Gradients {
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.kernel.data(), l.bias.as_slice()]).collect()
    }
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    conv_inputs: Vec<Tensor4>,
    relu_outputs: Vec<Tensor4>,
    pool: Vec<(Vec<usize>, [usize; 4])>,
    logits: Tensor4,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor4 {
        &self.logits
    }

    /// True when both passes took the same ReLU and max-pool branches, i.e.
    /// the network is locally the same smooth function at both inputs.
    pub fn same_activation_pattern(&self, other: &ForwardCache) -> bool {
        let relu_same = self.relu_outputs.iter().zip(&other.relu_outputs).all(|(a, b)| {
            a.data().iter().zip(b.data()).all(|(x, y)| (*x > 0.0) == (*y > 0.0))
        });
        relu_same && self.pool.iter().zip(&other.pool).all(|(a, b)| a.0 == b.0)
    }
}

fn check_input(arch: &ArchitectureConfig, input: &Tensor4) -> Result<(), SegnetError> {
    let d = arch.divisor();
    if !input.height().is_multiple_of(d) || !input.width().is_multiple_of(d) || input.height() == 0 || input.width() == 0 {
        return Err(SegnetError::DimensionNotDivisible {
            height: input.height(),
            width: input.width(),
            divisor: d,
        });
    }
    if input.channels() != arch.in_channels {
        return Err(SegnetError::ShapeMismatch(format!(
            "network expects {} input channels, got {}",
            arch.in_channels,
            input.channels()
        )));
    }
    Ok(())
}

pub fn forward(params: &NetworkParams, input: &Tensor4) -> Result<ForwardCache, SegnetError> {
    let arch = &params.arch;
    check_input(arch, input)?;
    let s = arch.stages();
    let mut cache = ForwardCache {
        conv_inputs: Vec::with_capacity(params.layers.len()),
        relu_outputs: Vec::with_capacity(params.layers.len()),
        pool: Vec::with_capacity(s),
        logits: Tensor4::zeros([0, 0, 0, 0]),
    };
    let mut layer = 0;
    let mut conv_relu = |x: Tensor4, cache: &mut ForwardCache| -> Result<Tensor4, SegnetError> {
        let p = &params.layers[layer];
        layer += 1;
        let y = relu_forward(&conv2d_forward(&x, &p.kernel, &p.bias)?);
        cache.conv_inputs.push(x);
        cache.relu_outputs.push(y.clone());
        Ok(y)
    };

    let mut x = input.clone();
    let mut skips = Vec::with_capacity(s);
    for _ in 0..s {
        x = conv_relu(x, &mut cache)?;
        x = conv_relu(x, &mut cache)?;
        let (pooled, idx) = maxpool2_forward(&x)?;
        cache.pool.push((idx, x.shape()));
        skips.push(x);
        x = pooled;
    }
    x = conv_relu(x, &mut cache)?;
    x = conv_relu(x, &mut cache)?;
    for stage in (0..s).rev() {
        x = conv_relu(upsample2_forward(&x), &mut cache)?;
        if arch.skip_connections {
            x = concat_channels(&x, &skips[stage])?;
        }
        x = conv_relu(x, &mut cache)?;
    }
    let head = params.layers.last().expect("head layer");
    cache.logits = conv2d_forward(&x, &head.kernel, &head.bias)?;
    cache.conv_inputs.push(x);
    Ok(cache)
}

fn conv_relu_back(
    params: &NetworkParams,
    cache: &ForwardCache,
    grads: &mut [Option<ConvParams>],
    i: usize,
    g: &Tensor4,
    want_input: bool,
) -> Result<Option<Tensor4>, SegnetError> {
    let g = relu_backward(g, &cache.relu_outputs[i])?;
    let cg = conv2d_backward(&g, &cache.conv_inputs[i], &params.layers[i].kernel, want_input)?;
    grads[i] = Some(ConvParams { kernel: cg.kernel, bias: cg.bias });
    Ok(cg.input)
}

/// Backpropagates `grad_logits` through a cached forward pass. Also
/// returns the input gradient when `need_input` is set.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    grad_logits: &Tensor4,
    need_input: bool,
) -> Result<(Gradients, Option<Tensor4>), SegnetError> {
    let arch = &params.arch;
    let s = arch.stages();
    let n_layers = params.layers.len();
    let mut grads: Vec<Option<ConvParams>> = vec![None; n_layers];
    let back = |grads: &mut [Option<ConvParams>], i: usize, g: &Tensor4, want: bool| {
        conv_relu_back(params, cache, grads, i, g, want)
    };

    let head = n_layers - 1;
    let cg = conv2d_backward(grad_logits, &cache.conv_inputs[head], &params.layers[head].kernel, true)?;
    grads[head] = Some(ConvParams { kernel: cg.kernel, bias: cg.bias });
    let mut g = cg.input.expect("input grad");

    // walking the layers backwards visits decoder stage 0 first
    let mut skip_grads: Vec<Option<Tensor4>> = vec![None; s];
    let mut layer = head;
    for stage in 0..s {
        layer -= 1;
        let fused = back(&mut grads, layer, &g, true)?.expect("input grad");
        let up_grad = if arch.skip_connections {
            let (up, skip) = split_channels(&fused, arch.channels[stage]);
            skip_grads[stage] = Some(skip);
            up
        } else {
            fused
        };
        layer -= 1;
        let up = back(&mut grads, layer, &up_grad, true)?.expect("input grad");
        g = upsample2_backward(&up)?;
    }
    for _ in 0..2 {
        layer -= 1;
        g = back(&mut grads, layer, &g, true)?.expect("input grad");
    }
    let mut input_grad = None;
    for stage in (0..s).rev() {
        let (idx, shape) = &cache.pool[stage];
        g = maxpool2_backward(&g, idx, *shape)?;
        if let Some(sg) = &skip_grads[stage] {
            g.add_assign(sg);
        }
        layer -= 1;
        g = back(&mut grads, layer, &g, true)?.expect("input grad");
        layer -= 1;
        if layer == 0 {
            input_grad = back(&mut grads, layer, &g, need_input)?;
        } else {
            g = back(&mut grads, layer, &g, true)?.expect("input grad");
        }
    }
    debug_assert_eq!(layer, 0);
    let layers = grads.into_iter().map(|g| g.expect("every layer visited")).collect();
    Ok((Gradients { layers }, input_grad))
}

/// Mean cross-entropy over the batch and its parameter gradients.
pub fn loss_and_gradients(
    params: &NetworkParams,
    input: &Tensor4,
    labels: &[&Mask],
) -> Result<(f64, Gradients), SegnetError> {
    let cache = forward(params, input)?;
    let (loss, grad) = softmax_cross_entropy(cache.logits(), labels)?;
    let (grads, _) = backward(params, &cache, &grad, false)?;
    Ok((loss, grads))
}

/// Network input for one image: intensities shifted to `[-0.5, 0.5]`.
pub fn image_to_tensor(images: &[&GrayImage]) -> Result<Tensor4, SegnetError> {
    let first = images.first().ok_or(SegnetError::EmptyDataset)?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(SegnetError::ShapeMismatch(format!(
                "batch mixes {w}x{h} and {}x{} images",
                img.width(),
                img.height()
            )));
        }
        data.extend(img.data().iter().map(|v| v - 0.5));
    }
    Tensor4::from_vec([images.len(), 1, h, w], data)
}

/// Per-pixel head probability (row-major) and the thresholded mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub width: usize,
    pub height: usize,
    pub prob: Vec<f64>,
    pub mask: Mask,
}

/// Softmax head probability and its argmax mask; probability exactly 0.5
/// labels background.
pub fn predict(params: &NetworkParams, img: &GrayImage) -> Result<Prediction, SegnetError> {
    let input = image_to_tensor(&[img])?;
    let cache = forward(params, &input)?;
    let probs = softmax_channels(cache.logits());
    let prob = probs.plane(0, 1).to_vec();
    let (w, h) = (img.width(), img.height());
    let mask = Mask::new(w, h, prob.iter().map(|&p| (p > 0.5) as u8).collect()).expect("dims");
    Ok(Prediction { width: w, height: h, prob, mask })
}
