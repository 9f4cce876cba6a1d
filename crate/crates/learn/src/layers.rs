//! Layer kernels with explicit forward caches and backward passes.
//!
//! Activations are flat `Vec<f64>` in `[batch, channels, spatial]` order, where
//! `spatial` is `height * width` for feature maps and 1 for vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Shape of a batch of feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.spatial()
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((in_channels * 9) as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            weight: uniform(rng, out_channels * in_channels * 9, bound),
            bias: uniform(rng, out_channels, bound),
        }
    }

    pub fn forward(&self, x: &[f64], shape: Shape) -> (Vec<f64>, Shape) {
        let (h, w) = (shape.height, shape.width);
        let hw = h * w;
        let out_shape = Shape {
            channels: self.out_channels,
            ..shape
        };
        let mut out = vec![0.0; out_shape.len()];
        for n in 0..shape.batch {
            for oc in 0..self.out_channels {
                let plane = &mut out[(n * self.out_channels + oc) * hw..][..hw];
                plane.fill(self.bias[oc]);
                for ic in 0..self.in_channels {
                    let src = &x[(n * self.in_channels + ic) * hw..][..hw];
                    let kernel = &self.weight[(oc * self.in_channels + ic) * 9..][..9];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = kernel[ky * 3 + kx];
                            // ox in [ox_start, ox_end) maps to ix = ox + kx - 1 in [0, w)
                            let ox_start = 1usize.saturating_sub(kx);
                            let ox_end = (w + 1 - kx).min(w);
                            for oy in 0..h {
                                let iy = oy + ky;
                                if iy < 1 || iy > h {
                                    continue;
                                }
                                let src_row = &src[(iy - 1) * w..][..w];
                                let dst_row = &mut plane[oy * w..][..w];
                                for ox in ox_start..ox_end {
                                    dst_row[ox] += wv * src_row[ox + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
        (out, out_shape)
    }

    /// Returns `(d_input, d_weight, d_bias)`.
    pub fn backward(&self, x: &[f64], shape: Shape, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (h, w) = (shape.height, shape.width);
        let hw = h * w;
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; self.out_channels];
        for n in 0..shape.batch {
            for oc in 0..self.out_channels {
                let go = &grad_out[(n * self.out_channels + oc) * hw..][..hw];
                db[oc] += go.iter().sum::<f64>();
                for ic in 0..self.in_channels {
                    let src = &x[(n * self.in_channels + ic) * hw..][..hw];
                    let dsrc = &mut dx[(n * self.in_channels + ic) * hw..][..hw];
                    let base = (oc * self.in_channels + ic) * 9;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = self.weight[base + ky * 3 + kx];
                            let mut acc = 0.0;
                            let ox_start = 1usize.saturating_sub(kx);
                            let ox_end = (w + 1 - kx).min(w);
                            for oy in 0..h {
                                let iy = oy + ky;
                                if iy < 1 || iy > h {
                                    continue;
                                }
                                let go_row = &go[oy * w..][..w];
                                let row = (iy - 1) * w;
                                for ox in ox_start..ox_end {
                                    let ix = row + ox + kx - 1;
                                    acc += go_row[ox] * src[ix];
                                    dsrc[ix] += wv * go_row[ox];
                                }
                            }
                            dw[base + ky * 3 + kx] += acc;
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }
}

/// Dense layer `y = W x + b`, `W` stored `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            in_features,
            out_features,
            weight: uniform(rng, in_features * out_features, bound),
            bias: uniform(rng, out_features, bound),
        }
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(batch * self.out_features);
        for n in 0..batch {
            let xi = &x[n * self.in_features..][..self.in_features];
            for o in 0..self.out_features {
                let wo = &self.weight[o * self.in_features..][..self.in_features];
                let dot: f64 = wo.iter().zip(xi).map(|(a, b)| a * b).sum();
                out.push(dot + self.bias[o]);
            }
        }
        out
    }

    pub fn backward(&self, x: &[f64], batch: usize, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (fi, fo) = (self.in_features, self.out_features);
        let mut dx = vec![0.0; batch * fi];
        let mut dw = vec![0.0; fi * fo];
        let mut db = vec![0.0; fo];
        for n in 0..batch {
            let xi = &x[n * fi..][..fi];
            let dxi = &mut dx[n * fi..][..fi];
            for o in 0..fo {
                let g = grad_out[n * fo + o];
                db[o] += g;
                let wo = &self.weight[o * fi..][..fi];
                let dwo = &mut dw[o * fi..][..fi];
                for i in 0..fi {
                    dwo[i] += g * xi[i];
                    dxi[i] += g * wo[i];
                }
            }
        }
        (dx, dw, db)
    }
}

/// Per-channel normalisation over batch and spatial positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// What the backward pass of a normalisation layer needs.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Batch statistics `(mean, unbiased variance)`, present in training mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f64], batch: usize, spatial: usize, training: bool) -> (Vec<f64>, BnCache) {
        let c = self.channels();
        let count = batch * spatial;
        let mut out = vec![0.0; x.len()];
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut means = vec![0.0; c];
        let mut unbiased = vec![0.0; c];
        for ch in 0..c {
            let values = || (0..batch).flat_map(move |n| (0..spatial).map(move |s| (n * c + ch) * spatial + s));
            let (mean, var) = if training {
                let mean = values().map(|i| x[i]).sum::<f64>() / count as f64;
                let var = values().map(|i| (x[i] - mean).powi(2)).sum::<f64>() / count as f64;
                means[ch] = mean;
                unbiased[ch] = if count > 1 { var * count as f64 / (count - 1) as f64 } else { var };
                (mean, var)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = is;
            for i in values() {
                let xh = (x[i] - mean) * is;
                normalized[i] = xh;
                out[i] = self.gamma[ch] * xh + self.beta[ch];
            }
        }
        let batch_stats = training.then_some((means, unbiased));
        (
            out,
            BnCache {
                normalized,
                inv_std,
                batch_stats,
            },
        )
    }

    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward(&self, cache: &BnCache, batch: usize, spatial: usize, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let count = (batch * spatial) as f64;
        let mut dx = vec![0.0; grad_out.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let idx = || (0..batch).flat_map(move |n| (0..spatial).map(move |s| (n * c + ch) * spatial + s));
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for i in idx() {
                sum_dy += grad_out[i];
                sum_dy_xh += grad_out[i] * cache.normalized[i];
            }
            dgamma[ch] = sum_dy_xh;
            dbeta[ch] = sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            if cache.batch_stats.is_some() {
                for i in idx() {
                    dx[i] = scale / count * (count * grad_out[i] - sum_dy - cache.normalized[i] * sum_dy_xh);
                }
            } else {
                for i in idx() {
                    dx[i] = scale * grad_out[i];
                }
            }
        }
        (dx, dgamma, dbeta)
    }

    pub fn update_running(&mut self, cache: &BnCache) {
        if let Some((mean, var)) = &cache.batch_stats {
            for ch in 0..self.channels() {
                self.running_mean[ch] = (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * mean[ch];
                self.running_var[ch] = (1.0 - BN_MOMENTUM) * self.running_var[ch] + BN_MOMENTUM * var[ch];
            }
        }
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its input; zero slope at 0.
pub fn relu_backward(input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// 2x2 average pooling with stride 2; a trailing odd row or column is dropped.
pub fn avg_pool2(x: &[f64], shape: Shape) -> (Vec<f64>, Shape) {
    let (oh, ow) = (shape.height / 2, shape.width / 2);
    let out_shape = Shape {
        height: oh,
        width: ow,
        ..shape
    };
    let mut out = Vec::with_capacity(out_shape.len());
    for plane in x.chunks(shape.spatial()) {
        for oy in 0..oh {
            for ox in 0..ow {
                let at = |dy: usize, dx: usize| plane[(2 * oy + dy) * shape.width + 2 * ox + dx];
                out.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
    }
    (out, out_shape)
}

pub fn avg_pool2_backward(in_shape: Shape, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = (in_shape.height / 2, in_shape.width / 2);
    let mut dx = vec![0.0; in_shape.len()];
    for (p, plane) in dx.chunks_mut(in_shape.spatial()).enumerate() {
        let go = &grad_out[p * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = 0.25 * go[oy * ow + ox];
                for dy in 0..2 {
                    for dx_ in 0..2 {
                        plane[(2 * oy + dy) * in_shape.width + 2 * ox + dx_] = g;
                    }
                }
            }
        }
    }
    dx
}

/// Mean over spatial positions: `[B, C, HW] -> [B, C]`.
pub fn global_avg_pool(x: &[f64], shape: Shape) -> Vec<f64> {
    let s = shape.spatial() as f64;
    x.chunks(shape.spatial()).map(|p| p.iter().sum::<f64>() / s).collect()
}

pub fn global_avg_pool_backward(shape: Shape, grad_out: &[f64]) -> Vec<f64> {
    let s = shape.spatial();
    let mut dx = Vec::with_capacity(shape.len());
    for &g in grad_out {
        dx.extend(std::iter::repeat_n(g / s as f64, s));
    }
    dx
}

/// Inverted-dropout keep mask, scaled so the expected activation is unchanged.
pub fn dropout_mask(len: usize, p: f64, key: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    let scale = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random_bool(p) { 0.0 } else { scale })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(b: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape {
            batch: b,
            channels: c,
            height: h,
            width: w,
        }
    }

    /// Direct definition of a padded 3x3 convolution.
    fn conv_reference(conv: &Conv3x3, x: &[f64], s: Shape) -> Vec<f64> {
        let mut out = Vec::new();
        for n in 0..s.batch {
            for oc in 0..conv.out_channels {
                for oy in 0..s.height as isize {
                    for ox in 0..s.width as isize {
                        let mut acc = conv.bias[oc];
                        for ic in 0..conv.in_channels {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (iy, ix) = (oy + ky - 1, ox + kx - 1);
                                    if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                        continue;
                                    }
                                    let xi = ((n * conv.in_channels + ic) * s.height + iy as usize) * s.width + ix as usize;
                                    let wi = ((oc * conv.in_channels + ic) * 3 + ky as usize) * 3 + kx as usize;
                                    acc += conv.weight[wi] * x[xi];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv3x3::new(2, 3, &mut rng);
        let s = shape(2, 2, 5, 4);
        let x: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (out, _) = conv.forward(&x, s);
        let reference = conv_reference(&conv, &x, s);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> == <x, dx(g)> and == <w, dw(g)>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv3x3::new(2, 2, &mut rng);
        let s = shape(1, 2, 4, 3);
        let x: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, _) = conv.forward(&x, s);
        let (dx, dw, db) = conv.backward(&x, s, &g);
        let hw = s.spatial();
        let lhs: f64 = y
            .iter()
            .enumerate()
            .map(|(i, v)| (v - conv.bias[(i / hw) % 2]) * g[i])
            .sum();
        let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let via_w: f64 = conv.weight.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
        let gsum: f64 = g[..hw].iter().sum();
        assert!((db[0] - gsum).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let bn = BatchNorm::new(2);
        let x: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let (y, cache) = bn.forward(&x, 3, 2, true);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| (0..2).map(move |s| (n * 2 + ch) * 2 + s)).map(|i| y[i]).collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
        }
        assert!(cache.batch_stats.is_some());
        let (_, eval_cache) = bn.forward(&x, 3, 2, false);
        assert!(eval_cache.batch_stats.is_none());
    }

    #[test]
    fn pooling_round_trip_shapes() {
        let s = shape(1, 1, 5, 4);
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let (y, ys) = avg_pool2(&x, s);
        assert_eq!((ys.height, ys.width), (2, 2));
        assert_eq!(y[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let dx = avg_pool2_backward(s, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(dx.iter().sum::<f64>(), 4.0);
        assert_eq!(dx[16], 0.0);
    }

    #[test]
    fn dropout_mask_is_seeded() {
        let a = dropout_mask(64, 0.5, 9, 1);
        assert_eq!(a, dropout_mask(64, 0.5, 9, 1));
        assert_ne!(a, dropout_mask(64, 0.5, 9, 2));
        assert!(a.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
