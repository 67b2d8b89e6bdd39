//! Operation tape: every forward op stores its output tensor and appends one
//! [`OpRecord`]; [`Tape::backward`] replays the records in reverse.

use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::{format_shape, Shape, Tensor};
use serde::{Deserialize, Serialize};

/// Handle to a tensor owned by a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    SoftmaxRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    GlobalAvg,
}

#[derive(Debug)]
pub enum Op {
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Depthwise {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Pointwise {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MaxPool {
        input: Var,
        /// Flat input index of each output element's maximum.
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Softmax {
        input: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ChannelScale {
        input: Var,
        scale: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::Pointwise { .. } => "pointwise_conv2d",
            Op::MaxPool { .. } => "max_pool2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool2d",
            Op::Upsample { .. } => "upsample2d_nearest",
            Op::Dense { .. } => "dense",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softmax { .. } => "softmax_rows",
            Op::Mul { .. } => "mul",
            Op::ChannelScale { .. } => "channel_scale",
            Op::Add { .. } => "add",
        }
    }
}

#[derive(Debug)]
pub struct OpRecord {
    pub op: Op,
    pub output: Var,
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    records: Vec<OpRecord>,
}

fn dim_err(op: &str, msg: String) -> Error {
    Error::Dimension(format!("{op}: {msg}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.values.push(t);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.values[v.0].grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.values[v.0].take_grad()
    }

    pub fn records(&self) -> &[OpRecord] {
        &self.records
    }

    fn push(&mut self, out: Tensor, op: Op) -> Result<Var> {
        if !out.all_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite value", op.name())));
        }
        self.values.push(out);
        let v = Var(self.values.len() - 1);
        self.records.push(OpRecord { op, output: v });
        Ok(v)
    }

    fn check_bias(&self, op: &str, bias: Option<Var>, len: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.value(b).len() != len {
                return Err(dim_err(
                    op,
                    format!("bias has {} values, expected {len}", self.value(b).len()),
                ));
            }
        }
        Ok(())
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).shape();
        let [cout, wcin, kh, kw] = self.value(weight).shape();
        if wcin != cin {
            return Err(dim_err("conv2d", format!("input has {cin} channels, weight expects {wcin}")));
        }
        if kh != kw {
            return Err(dim_err("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        self.check_bias("conv2d", bias, cout)?;
        let g = ConvGeom::new(cin, h, w, kh, stride, pad)?;
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            n,
            &g,
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            cout,
        );
        let t = Tensor::from_parts([n, cout, g.hout, g.wout], out);
        self.push(t, Op::Conv2d { input, weight, bias, stride, pad })
    }

    pub fn depthwise_conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).shape();
        let [wc, one, kh, kw] = self.value(weight).shape();
        if wc != c || one != 1 {
            return Err(dim_err(
                "depthwise_conv2d",
                format!("input has {c} channels, weight shape {}", format_shape(&self.value(weight).shape())),
            ));
        }
        if kh != kw {
            return Err(dim_err("depthwise_conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        self.check_bias("depthwise_conv2d", bias, c)?;
        let g = ConvGeom::new(c, h, w, kh, stride, pad)?;
        let out = kernels::depthwise_forward(
            self.value(input).data(),
            n,
            &g,
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let t = Tensor::from_parts([n, c, g.hout, g.wout], out);
        self.push(t, Op::Depthwise { input, weight, bias, stride, pad })
    }

    pub fn pointwise_conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).shape();
        let [cout, wcin, kh, kw] = self.value(weight).shape();
        if wcin != cin || kh != 1 || kw != 1 {
            return Err(dim_err(
                "pointwise_conv2d",
                format!(
                    "input has {cin} channels, weight shape {}",
                    format_shape(&self.value(weight).shape())
                ),
            ));
        }
        self.check_bias("pointwise_conv2d", bias, cout)?;
        let g = ConvGeom::new(cin, h, w, 1, 1, 0)?;
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            n,
            &g,
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            cout,
        );
        let t = Tensor::from_parts([n, cout, h, w], out);
        self.push(t, Op::Pointwise { input, weight, bias })
    }

    pub fn pool2d(&mut self, input: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        match kind {
            PoolKind::Max => self.max_pool2d(input, window, stride),
            PoolKind::GlobalAvg => self.global_avg_pool2d(input),
        }
    }

    /// Max pooling over exactly tiling windows (`window == stride`, extents divisible).
    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).shape();
        if window == 0 || window != stride {
            return Err(Error::Config(format!(
                "max_pool2d requires window == stride > 0, got window {window} stride {stride}"
            )));
        }
        if h % window != 0 || w % window != 0 {
            return Err(Error::Config(format!(
                "max_pool2d window {window} does not tile {h}x{w}"
            )));
        }
        let (ho, wo) = (h / window, w / window);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * window * w + ox * window;
                    for dy in 0..window {
                        let row = base + (oy * window + dy) * w + ox * window;
                        for idx in row..row + window {
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::from_parts([n, c, ho, wo], out);
        self.push(t, Op::MaxPool { input, argmax })
    }

    pub fn global_avg_pool2d(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).shape();
        let hw = h * w;
        if hw == 0 {
            return Err(dim_err("global_avg_pool2d", "empty spatial extent".into()));
        }
        let out = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let t = Tensor::from_parts([n, c, 1, 1], out);
        self.push(t, Op::GlobalAvgPool { input })
    }

    pub fn upsample2d_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Config("upsample factor must be >= 1".into()));
        }
        let [n, c, h, w] = self.value(input).shape();
        let (ho, wo) = (h * factor, w * factor);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
                for ox in 0..wo {
                    out.push(row[ox / factor]);
                }
            }
        }
        let t = Tensor::from_parts([n, c, ho, wo], out);
        self.push(t, Op::Upsample { input, factor })
    }

    /// Affine map on each flattened batch row; weight shape (out, in, 1, 1).
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.batch();
        let fan_in = x.len() / n.max(1);
        let [out_f, in_f, a, b] = self.value(weight).shape();
        if in_f != fan_in || a != 1 || b != 1 {
            return Err(dim_err(
                "dense",
                format!(
                    "flattened input length {fan_in} does not match weight shape {}",
                    format_shape(&self.value(weight).shape())
                ),
            ));
        }
        self.check_bias("dense", Some(bias), out_f)?;
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(n * out_f);
        for _ in 0..n {
            out.extend_from_slice(bv);
        }
        kernels::gemm(
            n,
            in_f,
            out_f,
            x.data(),
            (in_f, 1),
            self.value(weight).data(),
            (1, in_f),
            1.0,
            &mut out,
            (out_f, 1),
        );
        let t = Tensor::from_parts([n, out_f, 1, 1], out);
        self.push(t, Op::Dense { input, weight, bias })
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(input),
            Activation::Sigmoid => self.sigmoid(input),
            Activation::SoftmaxRows => self.softmax_rows(input),
        }
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::from_parts(x.shape(), out);
        self.push(t, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::from_parts(x.shape(), out);
        self.push(t, Op::Sigmoid { input })
    }

    /// Row-wise softmax over logits shaped (N, K, 1, 1).
    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, k, h, w] = x.shape();
        if h != 1 || w != 1 {
            return Err(dim_err(
                "softmax_rows",
                format!("expects (N,K,1,1) logits, got {}", format_shape(&x.shape())),
            ));
        }
        let mut out = Vec::with_capacity(n * k);
        for row in x.data().chunks(k.max(1)) {
            out.extend(softmax(row));
        }
        let t = Tensor::from_parts(x.shape(), out);
        self.push(t, Op::Softmax { input })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(
                "mul",
                format!("{} vs {}", format_shape(&ta.shape()), format_shape(&tb.shape())),
            ));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(ta.shape(), out);
        self.push(t, Op::Mul { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(
                "add",
                format!("{} vs {}", format_shape(&ta.shape()), format_shape(&tb.shape())),
            ));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(ta.shape(), out);
        self.push(t, Op::Add { a, b })
    }

    /// Multiplies every channel plane by its entry of `scale` (C values).
    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape();
        let s = self.value(scale).data();
        if s.len() != c {
            return Err(dim_err("channel_scale", format!("{} scales for {c} channels", s.len())));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(x.len());
        for (plane, chunk) in x.data().chunks(hw.max(1)).enumerate().take(n * c) {
            let f = s[plane % c];
            out.extend(chunk.iter().map(|v| v * f));
        }
        let t = Tensor::from_parts(x.shape(), out);
        self.push(t, Op::ChannelScale { input, scale })
    }

    /// Back-propagates `seed` (same shape as `output`) through every recorded op,
    /// consuming the records. Leaf gradients accumulate into their tensors.
    pub fn backward(&mut self, output: Var, seed: &[f64]) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::State("backward called with no recorded forward ops".into()));
        }
        if seed.len() != self.value(output).len() {
            return Err(Error::Dimension(format!(
                "seed gradient has {} values, output has {}",
                seed.len(),
                self.value(output).len()
            )));
        }
        {
            let g = self.values[output.0].grad_mut_or_zero();
            for (a, b) in g.iter_mut().zip(seed) {
                *a += b;
            }
        }
        while let Some(rec) = self.records.pop() {
            let gout = match self.values[rec.output.0].take_grad() {
                Some(g) => g,
                None => continue,
            };
            let contributions = self.op_backward(&rec.op, rec.output, &gout);
            for (v, g) in contributions {
                let dst = self.values[v.0].grad_mut_or_zero();
                for (a, b) in dst.iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn op_backward(&self, op: &Op, output: Var, gout: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let mut res = Vec::with_capacity(3);
        match *op {
            Op::Conv2d { input, weight, bias, stride, pad } => {
                let [n, cin, h, w] = self.value(input).shape();
                let [cout, _, k, _] = self.value(weight).shape();
                let g = ConvGeom::new(cin, h, w, k, stride, pad).expect("validated in forward");
                let gr = kernels::conv2d_backward(self.value(input).data(), n, &g, self.value(weight).data(), cout, gout);
                res.push((input, gr.input));
                res.push((weight, gr.weight));
                if let Some(b) = bias {
                    res.push((b, gr.bias));
                }
            }
            Op::Pointwise { input, weight, bias } => {
                let [n, cin, h, w] = self.value(input).shape();
                let cout = self.value(weight).shape()[0];
                let g = ConvGeom::new(cin, h, w, 1, 1, 0).expect("validated in forward");
                let gr = kernels::conv2d_backward(self.value(input).data(), n, &g, self.value(weight).data(), cout, gout);
                res.push((input, gr.input));
                res.push((weight, gr.weight));
                if let Some(b) = bias {
                    res.push((b, gr.bias));
                }
            }
            Op::Depthwise { input, weight, bias, stride, pad } => {
                let [n, c, h, w] = self.value(input).shape();
                let k = self.value(weight).shape()[2];
                let g = ConvGeom::new(c, h, w, k, stride, pad).expect("validated in forward");
                let gr = kernels::depthwise_backward(self.value(input).data(), n, &g, self.value(weight).data(), gout);
                res.push((input, gr.input));
                res.push((weight, gr.weight));
                if let Some(b) = bias {
                    res.push((b, gr.bias));
                }
            }
            Op::MaxPool { input, ref argmax } => {
                let mut gx = vec![0.0; self.value(input).len()];
                for (&idx, &g) in argmax.iter().zip(gout) {
                    gx[idx] += g;
                }
                res.push((input, gx));
            }
            Op::GlobalAvgPool { input } => {
                let x = self.value(input);
                let hw = x.height() * x.width();
                let mut gx = Vec::with_capacity(x.len());
                for &g in gout {
                    gx.extend(std::iter::repeat_n(g / hw as f64, hw));
                }
                res.push((input, gx));
            }
            Op::Upsample { input, factor } => {
                let [n, c, h, w] = self.value(input).shape();
                let wo = w * factor;
                let mut gx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let src = &gout[plane * h * w * factor * factor..][..h * w * factor * factor];
                    let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for (oy, row) in src.chunks(wo).enumerate() {
                        let drow = &mut dst[(oy / factor) * w..(oy / factor + 1) * w];
                        for (ox, &g) in row.iter().enumerate() {
                            drow[ox / factor] += g;
                        }
                    }
                }
                res.push((input, gx));
            }
            Op::Dense { input, weight, bias } => {
                let x = self.value(input);
                let n = x.batch();
                let [out_f, in_f, _, _] = self.value(weight).shape();
                let mut gx = vec![0.0; n * in_f];
                kernels::gemm(n, out_f, in_f, gout, (out_f, 1), self.value(weight).data(), (in_f, 1), 0.0, &mut gx, (in_f, 1));
                let mut gw = vec![0.0; out_f * in_f];
                kernels::gemm(out_f, n, in_f, gout, (1, out_f), x.data(), (in_f, 1), 0.0, &mut gw, (in_f, 1));
                let mut gb = vec![0.0; out_f];
                for row in gout.chunks(out_f) {
                    for (a, b) in gb.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                res.push((input, gx));
                res.push((weight, gw));
                res.push((bias, gb));
            }
            Op::Relu { input } => {
                let gx = self
                    .value(input)
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                res.push((input, gx));
            }
            Op::Sigmoid { input } => {
                let y = self.value(output).data();
                let gx = y.iter().zip(gout).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                res.push((input, gx));
            }
            Op::Softmax { input } => {
                let y = self.value(output);
                let k = y.channels();
                let mut gx = Vec::with_capacity(y.len());
                for (row, grow) in y.data().chunks(k).zip(gout.chunks(k)) {
                    let dot: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
                    gx.extend(row.iter().zip(grow).map(|(&s, &g)| s * (g - dot)));
                }
                res.push((input, gx));
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(a).data(), self.value(b).data());
                let ga = tb.iter().zip(gout).map(|(y, g)| y * g).collect();
                let gb = ta.iter().zip(gout).map(|(x, g)| x * g).collect();
                res.push((a, ga));
                res.push((b, gb));
            }
            Op::Add { a, b } => {
                res.push((a, gout.to_vec()));
                res.push((b, gout.to_vec()));
            }
            Op::ChannelScale { input, scale } => {
                let x = self.value(input);
                let [_, c, h, w] = x.shape();
                let hw = h * w;
                let s = self.value(scale).data();
                let mut gx = Vec::with_capacity(x.len());
                let mut gs = vec![0.0; c];
                for (plane, (xc, gc)) in x.data().chunks(hw).zip(gout.chunks(hw)).enumerate() {
                    let ch = plane % c;
                    gx.extend(gc.iter().map(|g| g * s[ch]));
                    gs[ch] += xc.iter().zip(gc).map(|(a, b)| a * b).sum::<f64>();
                }
                res.push((input, gx));
                res.push((scale, gs));
            }
        }
        res
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stabilized softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Shape helper for convolution-family layers.
pub fn conv_output_shape(input: Shape, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Shape> {
    let h = kernels::conv_out_extent(input[2], k, stride, pad)?;
    let w = kernels::conv_out_extent(input[3], k, stride, pad)?;
    Ok([input[0], cout, h, w])
}
