//! Forward and backward passes of the network primitives.
//!
//! Convolutions are stride-1 cross-correlations with zero "same" padding
//! and an odd square kernel of shape `(out_ch, in_ch, k, k)`.

use super::{SegnetError, Tensor4};
use crate::raster::Mask;

fn check_kernel(input: &Tensor4, kernel: &Tensor4, bias: &[f64]) -> Result<usize, SegnetError> {
    let [out_ch, in_ch, kh, kw] = kernel.shape();
    if in_ch != input.channels() {
        return Err(SegnetError::ShapeMismatch(format!(
            "kernel expects {in_ch} input channels, input has {}",
            input.channels()
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(SegnetError::ShapeMismatch(format!("kernel must be odd and square, got {kh}x{kw}")));
    }
    if bias.len() != out_ch {
        return Err(SegnetError::ShapeMismatch(format!(
            "{} biases for {out_ch} output channels",
            bias.len()
        )));
    }
    Ok(kh)
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `t`.
#[inline]
fn tap_range(t: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(t);
    let hi = (len + pad).saturating_sub(t).min(len);
    (lo, hi.max(lo))
}

pub fn conv2d_forward(input: &Tensor4, kernel: &Tensor4, bias: &[f64]) -> Result<Tensor4, SegnetError> {
    let k = check_kernel(input, kernel, bias)?;
    let pad = k / 2;
    let [n, in_ch, h, w] = input.shape();
    let out_ch = kernel.shape()[0];
    let mut out = Tensor4::zeros([n, out_ch, h, w]);
    for b in 0..n {
        for co in 0..out_ch {
            let dst = out.plane_mut(b, co);
            dst.fill(bias[co]);
            for ci in 0..in_ch {
                let src = input.plane(b, ci);
                for ky in 0..k {
                    let (y0, y1) = tap_range(ky, pad, h);
                    for kx in 0..k {
                        let wv = kernel.get(co, ci, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = tap_range(kx, pad, w);
                        for y in y0..y1 {
                            let sy = y + ky - pad;
                            let d = &mut dst[y * w + x0..y * w + x1];
                            let s = &src[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                            for (o, i) in d.iter_mut().zip(s) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
    out.debug_check_finite();
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor4>,
    pub kernel: Tensor4,
    pub bias: Vec<f64>,
}

/// Gradients of a convolution. `grad_input` is skipped when `need_input`
/// is false (first layer).
pub fn conv2d_backward(
    grad_out: &Tensor4,
    input: &Tensor4,
    kernel: &Tensor4,
    need_input: bool,
) -> Result<ConvGrads, SegnetError> {
    let [out_ch, in_ch, k, _] = kernel.shape();
    check_kernel(input, kernel, &vec![0.0; out_ch])?;
    let [n, _, h, w] = input.shape();
    if grad_out.shape() != [n, out_ch, h, w] {
        return Err(SegnetError::ShapeMismatch(format!(
            "grad_out {:?} does not match forward output {:?}",
            grad_out.shape(),
            [n, out_ch, h, w]
        )));
    }
    let pad = k / 2;
    let mut g_in = need_input.then(|| Tensor4::zeros(input.shape()));
    let mut g_k = Tensor4::zeros(kernel.shape());
    let mut g_b = vec![0.0; out_ch];
    for b in 0..n {
        for co in 0..out_ch {
            let g = grad_out.plane(b, co);
            g_b[co] += g.iter().sum::<f64>();
            for ci in 0..in_ch {
                let src = input.plane(b, ci);
                for ky in 0..k {
                    let (y0, y1) = tap_range(ky, pad, h);
                    for kx in 0..k {
                        let (x0, x1) = tap_range(kx, pad, w);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = y + ky - pad;
                            let gr = &g[y * w + x0..y * w + x1];
                            let s = &src[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                            acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        }
                        let i = g_k.index(co, ci, ky, kx);
                        g_k.data_mut()[i] += acc;
                    }
                }
                if let Some(g_in) = g_in.as_mut() {
                    let dst = g_in.plane_mut(b, ci);
                    for ky in 0..k {
                        let (y0, y1) = tap_range(ky, pad, h);
                        for kx in 0..k {
                            let wv = kernel.get(co, ci, ky, kx);
                            let (x0, x1) = tap_range(kx, pad, w);
                            for y in y0..y1 {
                                let sy = y + ky - pad;
                                let gr = &g[y * w + x0..y * w + x1];
                                let d = &mut dst[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                                for (o, gv) in d.iter_mut().zip(gr) {
                                    *o += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads { input: g_in, kernel: g_k, bias: g_b })
}

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    let data = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor4::from_vec(input.shape(), data).expect("same shape")
}

/// Uses the forward *output*: the gradient passes where it is positive, so
/// the subgradient at 0 is 0.
pub fn relu_backward(grad_out: &Tensor4, output: &Tensor4) -> Result<Tensor4, SegnetError> {
    if grad_out.shape() != output.shape() {
        return Err(SegnetError::ShapeMismatch("relu gradient shape".into()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Tensor4::from_vec(output.shape(), data)
}

/// 2×2 max pooling with stride 2; also returns, per output element, the
/// flat input index of the winner (first maximum in row-major order).
pub fn maxpool2_forward(input: &Tensor4) -> Result<(Tensor4, Vec<usize>), SegnetError> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(SegnetError::OddDimension { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = input.index(b, ch, 2 * y, 2 * x);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = input.index(b, ch, 2 * y + dy, 2 * x + dx);
                        if input.data()[j] > input.data()[best] {
                            best = j;
                        }
                    }
                    out.set(b, ch, y, x, input.data()[best]);
                    idx.push(best);
                }
            }
        }
    }
    Ok((out, idx))
}

pub fn maxpool2_backward(
    grad_out: &Tensor4,
    argmax: &[usize],
    input_shape: [usize; 4],
) -> Result<Tensor4, SegnetError> {
    if grad_out.len() != argmax.len() {
        return Err(SegnetError::ShapeMismatch("maxpool gradient shape".into()));
    }
    let mut g = Tensor4::zeros(input_shape);
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g.data_mut()[i] += v;
    }
    Ok(g)
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample2_forward(input: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = input.shape();
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor4) -> Result<Tensor4, SegnetError> {
    let [n, c, h2, w2] = grad_out.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(SegnetError::OddDimension { height: h2, width: w2 });
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut g = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            let dst = g.plane_mut(b, ch);
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                }
            }
        }
    }
    Ok(g)
}

/// Channel concatenation `[a, b]`.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4, SegnetError> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(SegnetError::ShapeMismatch(format!("concat {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut out = Tensor4::zeros([n, ca + cb, h, w]);
    for s in 0..n {
        for c in 0..ca {
            out.plane_mut(s, c).copy_from_slice(a.plane(s, c));
        }
        for c in 0..cb {
            out.plane_mut(s, ca + c).copy_from_slice(b.plane(s, c));
        }
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(g: &Tensor4, first: usize) -> (Tensor4, Tensor4) {
    let [n, c, h, w] = g.shape();
    let mut a = Tensor4::zeros([n, first, h, w]);
    let mut b = Tensor4::zeros([n, c - first, h, w]);
    for s in 0..n {
        for ch in 0..first {
            a.plane_mut(s, ch).copy_from_slice(g.plane(s, ch));
        }
        for ch in first..c {
            b.plane_mut(s, ch - first).copy_from_slice(g.plane(s, ch));
        }
    }
    (a, b)
}

/// Per-pixel softmax over channels.
pub fn softmax_channels(logits: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = logits.shape();
    let mut out = Tensor4::zeros(logits.shape());
    let hw = h * w;
    let src = logits.data();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let max = (0..c).map(|ch| src[base + ch * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..c).map(|ch| (src[base + ch * hw + p] - max).exp()).sum();
            for ch in 0..c {
                out.data_mut()[base + ch * hw + p] = (src[base + ch * hw + p] - max).exp() / total;
            }
        }
    }
    out
}

/// Mean pixel-wise cross-entropy of the true class and its gradient
/// `(softmax − onehot) / N`, `N = batch × height × width`.
///
/// `labels[b]` holds the class index of each pixel of batch item `b`.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[&Mask]) -> Result<(f64, Tensor4), SegnetError> {
    let [n, c, h, w] = logits.shape();
    if labels.len() != n {
        return Err(SegnetError::ShapeMismatch(format!("{} label maps for batch {n}", labels.len())));
    }
    if let Some(m) = labels.iter().find(|m| m.width() != w || m.height() != h) {
        return Err(SegnetError::ShapeMismatch(format!(
            "label map {}x{} vs logits {w}x{h}",
            m.width(),
            m.height()
        )));
    }
    if c < 2 {
        return Err(SegnetError::ShapeMismatch("need at least 2 classes".into()));
    }
    let hw = h * w;
    let inv_n = 1.0 / (n * hw) as f64;
    let src = logits.data();
    let mut grad = Tensor4::zeros(logits.shape());
    let mut loss = 0.0;
    for b in 0..n {
        let base = b * c * hw;
        let lab = labels[b].data();
        for p in 0..hw {
            let y = lab[p] as usize;
            let (mut imax, mut max) = (0, f64::NEG_INFINITY);
            for ch in 0..c {
                let v = src[base + ch * hw + p];
                if v > max {
                    imax = ch;
                    max = v;
                }
            }
            // log-sum-exp = max + ln(1 + Σ_{j≠argmax} e^(l_j − max))
            let rest: f64 = (0..c)
                .filter(|&ch| ch != imax)
                .map(|ch| (src[base + ch * hw + p] - max).exp())
                .sum();
            let lse_minus_max = rest.ln_1p();
            loss += max - src[base + y * hw + p] + lse_minus_max;
            let total = 1.0 + rest;
            let g = grad.data_mut();
            for ch in 0..c {
                let prob = (src[base + ch * hw + p] - max).exp() / total;
                let onehot = if ch == y { 1.0 } else { 0.0 };
                g[base + ch * hw + p] = (prob - onehot) * inv_n;
            }
        }
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(shape: [usize; 4], seed: u64) -> Tensor4 {
        let mut r = SplitMix64::new(seed);
        let n = shape.iter().product();
        Tensor4::from_vec(shape, (0..n).map(|_| r.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Direct six-loop convolution.
    fn conv_naive(input: &Tensor4, kernel: &Tensor4, bias: &[f64]) -> Tensor4 {
        let [n, ci_n, h, w] = input.shape();
        let [co_n, _, k, _] = kernel.shape();
        let p = (k / 2) as i64;
        let mut out = Tensor4::zeros([n, co_n, h, w]);
        for b in 0..n {
            for co in 0..co_n {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = bias[co];
                        for ci in 0..ci_n {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as i64 + ky as i64 - p;
                                    let sx = x as i64 + kx as i64 - p;
                                    if sy >= 0 && sx >= 0 && sy < h as i64 && sx < w as i64 {
                                        acc += kernel.get(co, ci, ky, kx)
                                            * input.get(b, ci, sy as usize, sx as usize);
                                    }
                                }
                            }
                        }
                        out.set(b, co, y, x, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let input = random([1, 1, 3, 3], 1);
        let mut k = Tensor4::zeros([1, 1, 3, 3]);
        k.set(0, 0, 1, 1, 1.0);
        assert_eq!(conv2d_forward(&input, &k, &[0.0]).unwrap(), input);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let input = Tensor4::filled([1, 1, 5, 5], 1.0);
        let k = Tensor4::filled([1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&input, &k, &[0.0]).unwrap();
        assert_eq!(out.get(0, 0, 2, 2), 9.0);
        assert_eq!(out.get(0, 0, 0, 0), 4.0);
        assert_eq!(out.get(0, 0, 0, 2), 6.0);
    }

    #[test]
    fn conv_matches_naive() {
        let input = random([2, 3, 8, 8], 2);
        let k = random([4, 3, 3, 3], 3);
        let bias = [0.1, -0.2, 0.3, 0.0];
        let fast = conv2d_forward(&input, &k, &bias).unwrap();
        let slow = conv_naive(&input, &k, &bias);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let k5 = random([2, 3, 5, 5], 4);
        let fast = conv2d_forward(&input, &k5, &[0.0, 1.0]).unwrap();
        let slow = conv_naive(&input, &k5, &[0.0, 1.0]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors() {
        let input = random([1, 2, 4, 4], 5);
        assert!(conv2d_forward(&input, &random([1, 3, 3, 3], 6), &[0.0]).is_err());
        assert!(conv2d_forward(&input, &random([1, 2, 2, 2], 6), &[0.0]).is_err());
        assert!(conv2d_forward(&input, &random([2, 2, 3, 3], 6), &[0.0]).is_err());
        let k = random([2, 2, 3, 3], 7);
        assert!(conv2d_backward(&Tensor4::zeros([1, 3, 4, 4]), &input, &k, true).is_err());
    }

    #[test]
    fn conv_backward_zero_and_delta() {
        let input = random([1, 2, 5, 5], 8);
        let k = random([3, 2, 3, 3], 9);
        let g = conv2d_backward(&Tensor4::zeros([1, 3, 5, 5]), &input, &k, true).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));

        let mut ident = Tensor4::zeros([1, 1, 3, 3]);
        ident.set(0, 0, 1, 1, 1.0);
        let mut go = Tensor4::zeros([1, 1, 4, 4]);
        go.set(0, 0, 2, 1, 1.0);
        let g = conv2d_backward(&go, &random([1, 1, 4, 4], 10), &ident, true).unwrap();
        assert_eq!(g.input.unwrap(), go);
    }

    #[test]
    fn relu_examples() {
        let t = Tensor4::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let out = relu_forward(&t);
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&Tensor4::filled([1, 1, 1, 3], 1.0), &out).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_examples() {
        let t = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = maxpool2_forward(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        let g = maxpool2_backward(&Tensor4::filled([1, 1, 1, 1], 1.0), &idx, t.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
        // ties: first maximum in row-major order wins
        let t = Tensor4::from_vec([1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(maxpool2_forward(&t).unwrap().1, vec![0]);
        assert!(matches!(
            maxpool2_forward(&Tensor4::zeros([1, 1, 3, 4])),
            Err(SegnetError::OddDimension { .. })
        ));
    }

    #[test]
    fn upsample_roundtrip_shapes() {
        let t = random([2, 3, 3, 4], 11);
        let up = upsample2_forward(&t);
        assert_eq!(up.shape(), [2, 3, 6, 8]);
        assert_eq!(up.get(1, 2, 5, 7), t.get(1, 2, 2, 3));
        let g = upsample2_backward(&Tensor4::filled(up.shape(), 1.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn concat_split_inverse() {
        let a = random([2, 2, 3, 3], 12);
        let b = random([2, 3, 3, 3], 13);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [2, 5, 3, 3]);
        let (a2, b2) = split_channels(&c, 2);
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let labels = Mask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let logits = Tensor4::filled([1, 2, 2, 2], 0.3);
        let (loss, _) = softmax_cross_entropy(&logits, &[&labels]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let mut logits = Tensor4::zeros([1, 2, 2, 2]);
        for (p, &y) in labels.data().iter().enumerate() {
            logits.set(0, y as usize, p / 2, p % 2, 50.0);
        }
        let (loss, _) = softmax_cross_entropy(&logits, &[&labels]).unwrap();
        assert!(loss < 1e-20 && loss > 0.0, "{loss}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = random([2, 2, 5, 5], 14);
        let s = softmax_channels(&t);
        for b in 0..2 {
            for p in 0..25 {
                let sum = s.plane(b, 0)[p] + s.plane(b, 1)[p];
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_shape_errors() {
        let m = Mask::zeros(3, 3);
        assert!(softmax_cross_entropy(&Tensor4::zeros([1, 2, 2, 3]), &[&m]).is_err());
        assert!(softmax_cross_entropy(&Tensor4::zeros([2, 2, 3, 3]), &[&m]).is_err());
    }
}
