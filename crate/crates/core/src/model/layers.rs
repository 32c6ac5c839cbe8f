//! Layers of the reference 3D CNN with hand-written backward passes.
//!
//! Activations are channel-major `[C][T][H][W]` volumes of f64.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            frames,
            height,
            width,
            data: vec![0.0; channels * frames * height * width],
        }
    }

    pub fn zeros_like(other: &Volume) -> Self {
        Self::zeros(other.channels, other.frames, other.height, other.width)
    }

    pub fn spatial(&self) -> usize {
        self.frames * self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.frames + t) * self.height + y) * self.width + x
    }
}

/// 3×3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

/// Output range `lo..hi` along one axis for kernel offset `k` (0..3) so that
/// the input index `o + k - 1` stays in `0..n`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n.saturating_sub(1) } else { n };
    (lo, hi)
}

impl Conv3d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * TAPS
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * TAPS
    }

    #[inline]
    fn w_index(&self, o: usize, i: usize, kt: usize, ky: usize, kx: usize) -> usize {
        (((o * self.in_channels + i) * KERNEL + kt) * KERNEL + ky) * KERNEL + kx
    }

    pub fn forward(&self, input: &Volume) -> Volume {
        assert_eq!(input.channels, self.in_channels, "conv input channels");
        let (t_n, h_n, w_n) = (input.frames, input.height, input.width);
        let mut out = Volume::zeros(self.out_channels, t_n, h_n, w_n);
        let plane = out.spatial();
        for o in 0..self.out_channels {
            let dst = &mut out.data[o * plane..(o + 1) * plane];
            dst.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = &input.data[i * plane..(i + 1) * plane];
                for kt in 0..KERNEL {
                    let (t0, t1) = valid_range(kt, t_n);
                    for ky in 0..KERNEL {
                        let (y0, y1) = valid_range(ky, h_n);
                        for kx in 0..KERNEL {
                            let (x0, x1) = valid_range(kx, w_n);
                            let w = self.weight[self.w_index(o, i, kt, ky, kx)];
                            if w == 0.0 || x1 <= x0 {
                                continue;
                            }
                            for t in t0..t1 {
                                let st = t + kt - 1;
                                for y in y0..y1 {
                                    let sy = y + ky - 1;
                                    let d = (t * h_n + y) * w_n;
                                    let s = (st * h_n + sy) * w_n;
                                    let drow = &mut dst[d + x0..d + x1];
                                    let srow = &src[s + x0 + kx - 1..s + x1 + kx - 1];
                                    for (a, b) in drow.iter_mut().zip(srow) {
                                        *a += w * b;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, input: &Volume, grad_out: &Volume) -> (Volume, Vec<f64>, Vec<f64>) {
        let (t_n, h_n, w_n) = (input.frames, input.height, input.width);
        let plane = input.spatial();
        let mut grad_in = Volume::zeros_like(input);
        let mut grad_w = vec![0.0; self.weight.len()];
        let mut grad_b = vec![0.0; self.out_channels];
        for o in 0..self.out_channels {
            let go = &grad_out.data[o * plane..(o + 1) * plane];
            grad_b[o] = go.iter().sum();
            for i in 0..self.in_channels {
                let src = &input.data[i * plane..(i + 1) * plane];
                for kt in 0..KERNEL {
                    let (t0, t1) = valid_range(kt, t_n);
                    for ky in 0..KERNEL {
                        let (y0, y1) = valid_range(ky, h_n);
                        for kx in 0..KERNEL {
                            let (x0, x1) = valid_range(kx, w_n);
                            if x1 <= x0 {
                                continue;
                            }
                            let wi = self.w_index(o, i, kt, ky, kx);
                            let w = self.weight[wi];
                            let gi = &mut grad_in.data[i * plane..(i + 1) * plane];
                            let mut acc = 0.0;
                            for t in t0..t1 {
                                let st = t + kt - 1;
                                for y in y0..y1 {
                                    let sy = y + ky - 1;
                                    let d = (t * h_n + y) * w_n;
                                    let s = (st * h_n + sy) * w_n + x0 + kx - 1;
                                    let len = x1 - x0;
                                    let grow = &go[d + x0..d + x1];
                                    let srow = &src[s..s + len];
                                    let girow = &mut gi[s..s + len];
                                    for ((g, x), gin) in grow.iter().zip(srow).zip(girow.iter_mut()) {
                                        acc += g * x;
                                        *gin += w * g;
                                    }
                                }
                            }
                            grad_w[wi] += acc;
                        }
                    }
                }
            }
        }
        (grad_in, grad_w, grad_b)
    }
}

pub fn relu(input: &Volume) -> Volume {
    let mut out = input.clone();
    out.data.iter_mut().for_each(|x| *x = x.max(0.0));
    out
}

/// Gradient through ReLU given the pre-activation input.
pub fn relu_backward(pre: &Volume, grad_out: &Volume) -> Volume {
    Volume {
        data: pre
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
        channels: pre.channels,
        frames: pre.frames,
        height: pre.height,
        width: pre.width,
    }
}

/// 2×2×2 max pool, stride 2; odd trailing slices are dropped. Returns the
/// pooled volume and, per output element, the flat input index of its max
/// (first in scan order on ties).
pub fn max_pool(input: &Volume) -> (Volume, Vec<usize>) {
    let (t_o, h_o, w_o) = (input.frames / 2, input.height / 2, input.width / 2);
    let mut out = Volume::zeros(input.channels, t_o, h_o, w_o);
    let mut arg = vec![0usize; out.data.len()];
    for c in 0..input.channels {
        for t in 0..t_o {
            for y in 0..h_o {
                for x in 0..w_o {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dt in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = input.index(c, 2 * t + dt, 2 * y + dy, 2 * x + dx);
                                if input.data[i] > best {
                                    best = input.data[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = out.index(c, t, y, x);
                    out.data[o] = best;
                    arg[o] = best_i;
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward(input: &Volume, argmax: &[usize], grad_out: &Volume) -> Volume {
    let mut grad = Volume::zeros_like(input);
    for (o, &i) in argmax.iter().enumerate() {
        grad.data[i] += grad_out.data[o];
    }
    grad
}

/// Global average pool to one value per channel.
pub fn global_avg_pool(input: &Volume) -> Vec<f64> {
    let n = input.spatial();
    input
        .data
        .chunks_exact(n)
        .map(|ch| ch.iter().sum::<f64>() / n as f64)
        .collect()
}

pub fn global_avg_pool_backward(input: &Volume, grad_out: &[f64]) -> Volume {
    let n = input.spatial();
    let mut grad = Volume::zeros_like(input);
    for (c, chunk) in grad.data.chunks_exact_mut(n).enumerate() {
        chunk.fill(grad_out[c] / n as f64);
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, input: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut grad_in = vec![0.0; self.inputs];
        let mut grad_w = vec![0.0; self.weight.len()];
        for (o, &g) in grad_out.iter().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            for k in 0..self.inputs {
                grad_in[k] += row[k] * g;
                grad_w[o * self.inputs + k] = input[k] * g;
            }
        }
        (grad_in, grad_w, grad_out.to_vec())
    }
}
