//! Central finite-difference checks of every layer's analytic gradient.
//!
//! Each layer is reduced to a scalar by projecting its output onto a random
//! direction `r`, so `∂L/∂y = r` drives the backward pass. Inputs are drawn
//! with unit RMS. Coordinates whose ±step probe flips a ReLU or max-pool
//! branch are skipped, since the function is not differentiable there.

use super::layers::{
    concat_channels, conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, softmax_cross_entropy, split_channels, upsample2_backward,
    upsample2_forward,
};
use super::network::{backward, forward, ArchitectureConfig, NetworkParams};
use super::{SegnetError, Tensor4};
use crate::raster::Mask;
use crate::rng::{derive_key, SplitMix64};

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub layer: &'static str,
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl CheckReport {
    fn new(layer: &'static str, trials: usize) -> Self {
        Self { layer, trials, checked: 0, skipped: 0, max_rel_err: 0.0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < TOLERANCE
    }
}

fn unit_rms(rng: &mut SplitMix64, shape: [usize; 4]) -> Tensor4 {
    let s3 = 3f64.sqrt();
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.uniform(-s3, s3)).collect()).expect("shape")
}

fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn dim(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

/// Central difference of `f` with respect to `x[i]`.
fn central(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn tensor_from(shape: [usize; 4], data: &[f64]) -> Tensor4 {
    Tensor4::from_vec(shape, data.to_vec()).expect("shape")
}

pub fn check_conv(trials: usize, seed: u64) -> Result<CheckReport, SegnetError> {
    let mut rep = CheckReport::new("conv2d", trials);
    for t in 0..trials {
        let mut rng = SplitMix64::new(derive_key(seed, t as u64));
        let (n, ci, co) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let (h, w) = (dim(&mut rng, 2, 6), dim(&mut rng, 2, 6));
        let k = if rng.coin() { 3 } else { 1 };
        let x = unit_rms(&mut rng, [n, ci, h, w]);
        let kern = unit_rms(&mut rng, [co, ci, k, k]);
        let bias: Vec<f64> = (0..co).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let r = unit_rms(&mut rng, [n, co, h, w]);
        let g = conv2d_backward(&r, &x, &kern, true)?;
        let gi = g.input.expect("input grad");

        let mut xd = x.data().to_vec();
        for i in 0..xd.len() {
            let num = central(&mut xd, i, |v| dot(&conv2d_forward(&tensor_from(x.shape(), v), &kern, &bias).unwrap(), &r));
            rep.record(gi.data()[i], num);
        }
        let mut kd = kern.data().to_vec();
        for i in 0..kd.len() {
            let num = central(&mut kd, i, |v| dot(&conv2d_forward(&x, &tensor_from(kern.shape(), v), &bias).unwrap(), &r));
            rep.record(g.kernel.data()[i], num);
        }
        let mut bd = bias.clone();
        for i in 0..bd.len() {
            let num = central(&mut bd, i, |v| dot(&conv2d_forward(&x, &kern, v).unwrap(), &r));
            rep.record(g.bias[i], num);
        }
    }
    Ok(rep)
}

pub fn check_relu(trials: usize, seed: u64) -> Result<CheckReport, SegnetError> {
    let mut rep = CheckReport::new("relu", trials);
    for t in 0..trials {
        let mut rng = SplitMix64::new(derive_key(seed, t as u64));
        let shape = [dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 5), dim(&mut rng, 1, 5)];
        let x = unit_rms(&mut rng, shape);
        let r = unit_rms(&mut rng, shape);
        let y = relu_forward(&x);
        let g = relu_backward(&r, &y)?;
        let mut xd = x.data().to_vec();
        for i in 0..xd.len() {
            if xd[i].abs() <= 2.0 * FD_STEP {
                rep.skipped += 1;
                continue;
            }
            let num = central(&mut xd, i, |v| dot(&relu_forward(&tensor_from(shape, v)), &r));
            rep.record(g.data()[i], num);
        }
    }
    Ok(rep)
}

pub fn check_maxpool(trials: usize, seed: u64) -> Result<CheckReport, SegnetError> {
    let mut rep = CheckReport::new("maxpool2", trials);
    for t in 0..trials {
        let mut rng = SplitMix64::new(derive_key(seed, t as u64));
        let shape = [dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), 2 * dim(&mut rng, 1, 3), 2 * dim(&mut rng, 1, 3)];
        let x = unit_rms(&mut rng, shape);
        let r = unit_rms(&mut rng, [shape[0], shape[1], shape[2] / 2, shape[3] / 2]);
        let (_, idx) = maxpool2_forward(&x)?;
        let g = maxpool2_backward(&r, &idx, shape)?;
        let mut xd = x.data().to_vec();
        for i in 0..xd.len() {
            let mut same = true;
            let num = central(&mut xd, i, |v| {
                let (y, probe) = maxpool2_forward(&tensor_from(shape, v)).unwrap();
                same &= probe == idx;
                dot(&y, &r)
            });
            if same {
                rep.record(g.data()[i], num);
            } else {
                rep.skipped += 1;
            }
        }
    }
    Ok(rep)
}

pub fn check_upsample(trials: usize, seed: u64) -> Result<CheckReport, SegnetError> {
    let mut rep = CheckReport::new("upsample2", trials);
    for t in 0..trials {
        let mut rng = SplitMix64::new(derive_key(seed, t as u64));
        let shape = [dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4)];
        let x = unit_rms(&mut rng, shape);
        let r = unit_rms(&mut rng, [shape[0], shape[1], 2 * shape[2], 2 * shape[3]]);
        let g = upsample2_backward(&r)?;
        let mut xd = x.data().to_vec();
        for i in 0..xd.len() {
            let num = central(&mut xd, i, |v| dot(&upsample2_forward(&tensor_from(shape, v)), &r));
            rep.record(g.data()[i], num);
        }
    }
    Ok(rep)
}

pub fn check_concat(trials: usize, seed: u64) -> Result<CheckReport, SegnetError> {
    let mut rep = CheckReport::new("concat", trials);
    for t in 0..trials {
        let mut rng = SplitMix64::new(derive_key(seed, t as u64));
        let (n, h, w) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let (ca, cb) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let a = unit_rms(&mut rng, [n, ca, h, w]);
        let b = unit_rms(&mut rng, [n, cb, h, w]);
        let r = unit_rms(&mut rng, [n, ca + cb, h, w]);
        let (ga, gb) = split_channels(&r, ca);
        let mut ad = a.data().to_vec();
        for i in 0..ad.len() {
            let num = central(&mut ad, i, |v| dot(&concat_channels(&tensor_from(a.shape(), v), &b).unwrap(), &r));
            rep.record(ga.data()[i], num);
        }
        let mut bd = b.data().to_vec();
        for i in 0..bd.len() {
            let num = central(&mut bd, i, |v| dot(&concat_channels(&a, &tensor_from(b.shape(), v)).unwrap(), &r));
            rep.record(gb.data()[i], num);
        }
    }
    Ok(rep)
}

fn random_masks(rng: &mut SplitMix64, n: usize, h: usize, w: usize) -> Vec<Mask> {
    (0..n).map(|_| Mask::from_fn(w, h, |_, _| rng.coin())).collect()
}

pub fn check_softmax_ce(trials: usize, seed: u64) -> Result<CheckReport, SegnetError> {
    let mut rep = CheckReport::new("softmax_cross_entropy", trials);
    for t in 0..trials {
        let mut rng = SplitMix64::new(derive_key(seed, t as u64));
        let (n, h, w) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let shape = [n, 2, h, w];
        let x = unit_rms(&mut rng, shape);
        let masks = random_masks(&mut rng, n, h, w);
        let labels: Vec<&Mask> = masks.iter().collect();
        let (_, g) = softmax_cross_entropy(&x, &labels)?;
        let mut xd = x.data().to_vec();
        for i in 0..xd.len() {
            let num = central(&mut xd, i, |v| softmax_cross_entropy(&tensor_from(shape, v), &labels).unwrap().0);
            rep.record(g.data()[i], num);
        }
    }
    Ok(rep)
}

/// Composed network loss with respect to every parameter block and the
/// input, on small random architectures.
pub fn check_network(trials: usize, seed: u64) -> Result<CheckReport, SegnetError> {
    const PER_BLOCK: usize = 4;
    let mut rep = CheckReport::new("network", trials);
    for t in 0..trials {
        let mut rng = SplitMix64::new(derive_key(seed, t as u64));
        let stages = dim(&mut rng, 1, 2);
        let arch = ArchitectureConfig {
            channels: (0..stages).map(|_| dim(&mut rng, 1, 3)).collect(),
            skip_connections: rng.coin(),
            ..ArchitectureConfig::default()
        };
        let d = arch.divisor();
        let (n, h, w) = (dim(&mut rng, 1, 2), d * dim(&mut rng, 1, 2), d * dim(&mut rng, 1, 2));
        let mut params = NetworkParams::init(&arch, rng.next_u64())?;
        for l in &mut params.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.uniform(-0.2, 0.2));
        }
        let x = unit_rms(&mut rng, [n, 1, h, w]);
        let masks = random_masks(&mut rng, n, h, w);
        let labels: Vec<&Mask> = masks.iter().collect();

        let cache = forward(&params, &x)?;
        let (_, gl) = softmax_cross_entropy(cache.logits(), &labels)?;
        let (grads, gin) = backward(&params, &cache, &gl, true)?;
        let gin = gin.expect("input grad");

        let loss_at = |p: &NetworkParams, x: &Tensor4, same: &mut bool| {
            let c = forward(p, x).unwrap();
            *same &= c.same_activation_pattern(&cache);
            softmax_cross_entropy(c.logits(), &labels).unwrap().0
        };
        let probe = |rep: &mut CheckReport, analytic: f64, mut f: Box<dyn FnMut(f64, &mut bool) -> f64 + '_>| {
            let mut same = true;
            let up = f(FD_STEP, &mut same);
            let down = f(-FD_STEP, &mut same);
            if same {
                rep.record(analytic, (up - down) / (2.0 * FD_STEP));
            } else {
                rep.skipped += 1;
            }
        };

        let n_blocks = 2 * params.layers.len();
        for blk in 0..n_blocks {
            let (layer, is_bias) = (blk / 2, blk % 2 == 1);
            let len = if is_bias { params.layers[layer].bias.len() } else { params.layers[layer].kernel.len() };
            for _ in 0..PER_BLOCK.min(len) {
                let i = rng.below(len as u64) as usize;
                let analytic = if is_bias { grads.layers[layer].bias[i] } else { grads.layers[layer].kernel.data()[i] };
                let (base, x0) = (&params, &x);
                probe(
                    &mut rep,
                    analytic,
                    Box::new(move |step, same| {
                        let mut p = base.clone();
                        if is_bias {
                            p.layers[layer].bias[i] += step;
                        } else {
                            p.layers[layer].kernel.data_mut()[i] += step;
                        }
                        loss_at(&p, x0, same)
                    }),
                );
            }
        }
        for _ in 0..PER_BLOCK {
            let i = rng.below(x.len() as u64) as usize;
            let base = &params;
            let x0 = &x;
            probe(
                &mut rep,
                gin.data()[i],
                Box::new(move |step, same| {
                    let mut xp = x0.clone();
                    xp.data_mut()[i] += step;
                    loss_at(base, &xp, same)
                }),
            );
        }
    }
    Ok(rep)
}

/// Every layer check plus the composed network, `trials` each.
pub fn check_all(trials: usize, seed: u64) -> Result<Vec<CheckReport>, SegnetError> {
    let checks: [fn(usize, u64) -> Result<CheckReport, SegnetError>; 7] = [
        check_conv,
        check_relu,
        check_maxpool,
        check_upsample,
        check_concat,
        check_softmax_ce,
        check_network,
    ];
    checks.iter().enumerate().map(|(i, f)| f(trials, derive_key(seed, i as u64))).collect()
}
