use rand::Rng;

use super::tape::{Accumulator, Op};
use super::{Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-12;
pub(crate) const BATCH_NORM_EPS: f64 = 1e-5;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Saved state for layer and batch normalization backward passes.
pub(super) struct NormSaved {
    pub x: Var,
    pub gain: Var,
    pub bias: Var,
    /// Normalized input before the affine transform.
    pub xhat: Vec<f64>,
    /// `1 / sqrt(var + eps)`, per row (layer norm) or per channel (batch norm).
    pub inv_std: Vec<f64>,
    /// False when batch norm ran with fixed running statistics.
    pub batch_stats: bool,
}

/// `(outer, n, inner)` strides for reducing `shape` along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn for_each_lane(
    shape: &[usize],
    axis: usize,
    mut f: impl FnMut(&mut dyn FnMut(usize) -> usize, usize),
) {
    let (outer, n, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for j in 0..inner {
            let mut idx = |i: usize| (o * n + i) * inner + j;
            f(&mut idx, n);
        }
    }
}

pub(super) fn softmax_backward(
    acc: &mut Accumulator<'_>,
    x: Var,
    y: &Tensor,
    axis: usize,
    g: &[f64],
) {
    let yd = y.data();
    acc.with(x, |d| {
        for_each_lane(y.shape(), axis, |idx, n| {
            let s: f64 = (0..n).map(|i| g[idx(i)] * yd[idx(i)]).sum();
            for i in 0..n {
                let p = idx(i);
                d[p] += yd[p] * (g[p] - s);
            }
        })
    });
}

pub(super) fn log_softmax_backward(
    acc: &mut Accumulator<'_>,
    x: Var,
    y: &Tensor,
    axis: usize,
    g: &[f64],
) {
    let yd = y.data();
    acc.with(x, |d| {
        for_each_lane(y.shape(), axis, |idx, n| {
            let s: f64 = (0..n).map(|i| g[idx(i)]).sum();
            for i in 0..n {
                let p = idx(i);
                d[p] += g[p] - yd[p].exp() * s;
            }
        })
    });
}

pub(super) fn glu_backward(acc: &mut Accumulator<'_>, x: Var, g: &[f64]) {
    let xv = acc.value(x).clone();
    let (rows, cols) = xv.dims2().unwrap();
    let half = cols / 2;
    acc.with(x, |d| {
        for r in 0..rows {
            for c in 0..half {
                let a = xv.data[r * cols + c];
                let s = sigmoid(xv.data[r * cols + half + c]);
                let go = g[r * half + c];
                d[r * cols + c] += go * s;
                d[r * cols + half + c] += go * a * s * (1.0 - s);
            }
        }
    });
}

pub(super) fn layer_norm_backward(acc: &mut Accumulator<'_>, s: &NormSaved, g: &[f64]) {
    let gain = acc.value(s.gain).data().to_vec();
    let d = gain.len();
    acc.with(s.gain, |dg| {
        for (row_g, row_x) in g.chunks(d).zip(s.xhat.chunks(d)) {
            for c in 0..d {
                dg[c] += row_g[c] * row_x[c];
            }
        }
    });
    acc.with(s.bias, |db| {
        for row_g in g.chunks(d) {
            db.iter_mut().zip(row_g).for_each(|(b, g)| *b += g);
        }
    });
    acc.with(s.x, |dx| {
        for (r, (row_g, row_x)) in g.chunks(d).zip(s.xhat.chunks(d)).enumerate() {
            let mut mean_gh = 0.0;
            let mut mean_ghx = 0.0;
            for c in 0..d {
                let gh = row_g[c] * gain[c];
                mean_gh += gh;
                mean_ghx += gh * row_x[c];
            }
            mean_gh /= d as f64;
            mean_ghx /= d as f64;
            for c in 0..d {
                let gh = row_g[c] * gain[c];
                dx[r * d + c] += s.inv_std[r] * (gh - mean_gh - row_x[c] * mean_ghx);
            }
        }
    });
}

pub(super) fn batch_norm_backward(acc: &mut Accumulator<'_>, s: &NormSaved, g: &[f64]) {
    let gain = acc.value(s.gain).data().to_vec();
    let d = gain.len();
    let rows = g.len() / d;
    let mut sum_g = vec![0.0; d];
    let mut sum_gx = vec![0.0; d];
    for (row_g, row_x) in g.chunks(d).zip(s.xhat.chunks(d)) {
        for c in 0..d {
            sum_g[c] += row_g[c];
            sum_gx[c] += row_g[c] * row_x[c];
        }
    }
    acc.with(s.gain, |dg| {
        dg.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b)
    });
    acc.with(s.bias, |db| {
        db.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b)
    });
    let n = rows as f64;
    acc.with(s.x, |dx| {
        for (r, (row_g, row_x)) in g.chunks(d).zip(s.xhat.chunks(d)).enumerate() {
            for c in 0..d {
                let scale = gain[c] * s.inv_std[c];
                dx[r * d + c] += if s.batch_stats {
                    scale * (row_g[c] - sum_g[c] / n - row_x[c] * sum_gx[c] / n)
                } else {
                    scale * row_g[c]
                };
            }
        }
    });
}

/// Index of the input frame read by kernel tap `j` for output frame `t`.
fn tap_offset(t: usize, j: usize, half: usize, dilation: usize, len: usize) -> Option<usize> {
    let pos = t as isize + (j as isize - half as isize) * dilation as isize;
    (0..len as isize).contains(&pos).then_some(pos as usize)
}

pub(super) fn depthwise_backward(
    acc: &mut Accumulator<'_>,
    x: Var,
    kernel: Var,
    dilation: usize,
    segments: &Segments,
    g: &[f64],
) {
    let xv = acc.value(x).data().to_vec();
    let kv = acc.value(kernel).clone();
    let (k, d) = kv.dims2().unwrap();
    let half = k / 2;
    acc.with(x, |dx| {
        for seg in segments.iter() {
            let len = seg.len();
            for t in 0..len {
                for j in 0..k {
                    if let Some(src) = tap_offset(t, j, half, dilation, len) {
                        let (o, i) = ((seg.start + t) * d, (seg.start + src) * d);
                        for c in 0..d {
                            dx[i + c] += g[o + c] * kv.data[j * d + c];
                        }
                    }
                }
            }
        }
    });
    acc.with(kernel, |dk| {
        for seg in segments.iter() {
            let len = seg.len();
            for t in 0..len {
                for j in 0..k {
                    if let Some(src) = tap_offset(t, j, half, dilation, len) {
                        let (o, i) = ((seg.start + t) * d, (seg.start + src) * d);
                        for c in 0..d {
                            dk[j * d + c] += g[o + c] * xv[i + c];
                        }
                    }
                }
            }
        }
    });
}

impl Tape {
    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        self.value(x).map(f)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.unary(x, sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v * sigmoid(v));
        self.push(out, Op::Swish(x))
    }

    /// Gated linear unit: splits the columns in half as `[a | b]` and returns
    /// `a * sigmoid(b)`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if cols % 2 != 0 {
            return Err(Error::invalid(format!(
                "glu needs an even width, got {cols}"
            )));
        }
        let half = cols / 2;
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            data.extend((0..half).map(|c| row[c] * sigmoid(row[half + c])));
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows, half],
                data,
            },
            Op::Glu(x),
        ))
    }

    fn check_axis(&self, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let xv = self.value(x);
        let mut out = xv.clone();
        for_each_lane(xv.shape(), axis, |idx, n| {
            let max = (0..n)
                .map(|i| xv.data[idx(i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..n {
                let e = (xv.data[idx(i)] - max).exp();
                out.data[idx(i)] = e;
                z += e;
            }
            for i in 0..n {
                out.data[idx(i)] /= z;
            }
        });
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let xv = self.value(x);
        let mut out = xv.clone();
        for_each_lane(xv.shape(), axis, |idx, n| {
            let max = (0..n)
                .map(|i| xv.data[idx(i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..n)
                    .map(|i| (xv.data[idx(i)] - max).exp())
                    .sum::<f64>()
                    .ln();
            for i in 0..n {
                out.data[idx(i)] = xv.data[idx(i)] - lse;
            }
        });
        Ok(self.push(out, Op::LogSoftmax { x, axis }))
    }

    fn check_affine(
        &self,
        op: &'static str,
        x: Var,
        gain: Var,
        bias: Var,
    ) -> Result<(usize, usize)> {
        let (rows, d) = self.value(x).dims2()?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op,
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        Ok((rows, d))
    }

    /// Per-row normalization to zero mean and unit (population) variance,
    /// followed by `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, d) = self.check_affine("layer_norm", x, gain, bias)?;
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                data[r * d + c] = h * gv.data[c] + bv.data[c];
            }
        }
        let saved = NormSaved {
            x,
            gain,
            bias,
            xhat,
            inv_std,
            batch_stats: true,
        };
        Ok(self.push(
            Tensor {
                shape: vec![rows, d],
                data,
            },
            Op::LayerNorm(saved),
        ))
    }

    /// Batch normalization over all rows of `x` (the batch and time axes),
    /// using the statistics of the current batch. Returns the output and the
    /// per-channel `(mean, population variance)` that were used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (rows, d) = self.check_affine("batch_norm", x, gain, bias)?;
        let xv = self.value(x);
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for row in xv.data.chunks(d) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for row in xv.data.chunks(d) {
            for c in 0..d {
                var[c] += (row[c] - mean[c]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let out = self.batch_norm_with(x, gain, bias, &mean, &var, true)?;
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        self.check_affine("batch_norm", x, gain, bias)?;
        self.batch_norm_with(x, gain, bias, mean, var, false)
    }

    fn batch_norm_with(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        mean: &[f64],
        var: &[f64],
        batch_stats: bool,
    ) -> Result<Var> {
        let (rows, d) = self.value(x).dims2()?;
        if mean.len() != d || var.len() != d {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: vec![rows, d],
                rhs: vec![mean.len()],
            });
        }
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
            .collect();
        let mut xhat = vec![0.0; rows * d];
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            for c in 0..d {
                let h = (xv.data[r * d + c] - mean[c]) * inv_std[c];
                xhat[r * d + c] = h;
                data[r * d + c] = h * gv.data[c] + bv.data[c];
            }
        }
        let saved = NormSaved {
            x,
            gain,
            bias,
            xhat,
            inv_std,
            batch_stats,
        };
        Ok(self.push(
            Tensor {
                shape: vec![rows, d],
                data,
            },
            Op::BatchNorm(saved),
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`. The drawn mask is kept for the backward
    /// pass. With `train == false` or `p == 0` this is the identity and
    /// records nothing.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        out.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Per-channel 1-D convolution over time with zero "same" padding, so
    /// every segment keeps its length. `kernel` is `[k x d]` with odd `k`;
    /// the receptive field is `(k - 1) * dilation + 1` frames.
    pub fn depthwise_conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        dilation: usize,
        segments: &Segments,
    ) -> Result<Var> {
        let (rows, d) = self.value(x).dims2()?;
        let (k, kd) = self.value(kernel).dims2()?;
        if kd != d {
            return Err(Error::Shape {
                op: "depthwise_conv1d",
                lhs: vec![rows, d],
                rhs: vec![k, kd],
            });
        }
        if k % 2 == 0 {
            return Err(Error::invalid(format!(
                "depthwise kernel size must be odd, got {k}"
            )));
        }
        if dilation < 1 {
            return Err(Error::invalid("dilation must be at least 1"));
        }
        if segments.total() != rows {
            return Err(Error::invalid(format!(
                "segments cover {} frames but input has {rows}",
                segments.total()
            )));
        }
        let (xv, kv) = (self.value(x).data(), self.value(kernel).data());
        let half = k / 2;
        let mut data = vec![0.0; rows * d];
        for seg in segments.iter() {
            let len = seg.len();
            for t in 0..len {
                let o = (seg.start + t) * d;
                for j in 0..k {
                    if let Some(src) = tap_offset(t, j, half, dilation, len) {
                        let i = (seg.start + src) * d;
                        for c in 0..d {
                            data[o + c] += kv[j * d + c] * xv[i + c];
                        }
                    }
                }
            }
        }
        let out = Tensor {
            shape: vec![rows, d],
            data,
        };
        Ok(self.push(
            out,
            Op::DepthwiseConv {
                x,
                kernel,
                dilation,
                segments: segments.clone(),
            },
        ))
    }

    /// Convex mixture `sum_k weights[k] * inputs[k]` of equally shaped
    /// tensors; `weights` is a vector with one entry per input.
    pub fn mix(&mut self, inputs: &[Var], weights: Var) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::invalid("mix needs at least one input"));
        };
        if self.shape(weights) != [inputs.len()] {
            return Err(Error::Shape {
                op: "mix",
                lhs: vec![inputs.len()],
                rhs: self.shape(weights).to_vec(),
            });
        }
        let shape = self.shape(first).to_vec();
        let mut data = vec![0.0; self.value(first).len()];
        for (k, &inp) in inputs.iter().enumerate() {
            if *self.shape(inp) != shape[..] {
                return Err(Error::Shape {
                    op: "mix",
                    lhs: shape,
                    rhs: self.shape(inp).to_vec(),
                });
            }
            let w = self.value(weights).data()[k];
            data.iter_mut()
                .zip(self.value(inp).data())
                .for_each(|(o, v)| *o += w * v);
        }
        Ok(self.push(
            Tensor { shape, data },
            Op::Mix {
                inputs: inputs.to_vec(),
                weights,
            },
        ))
    }
}
