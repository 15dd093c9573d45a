//! Layers built from tape primitives.
//!
//! Every layer owns only [`ParamId`]s into a [`ParamStore`]; the store is
//! passed to `forward` so the same architecture can be bound to any set of
//! weights. Sequence tensors are `[batch, time, channels]`; images are
//! `[batch, height, width, channels]`.

use crate::error::TensorError;
use crate::graph::{Graph, Group, Mode, ParamId, ParamStore};
use crate::init::Initializer;
use crate::tape::{Conv1dGeom, Conv2dGeom, Var};
use crate::tensor::Tensor;
use crate::Result;

pub trait Layer {
    fn name(&self) -> &str;
    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var>;
}

fn mismatch(layer: &str, expected: String, got: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        layer: layer.to_string(),
        expected,
        got: got.to_vec(),
    }
}

fn check_rank_last(g: &Graph, x: Var, layer: &str, rank: Option<usize>, last: usize) -> Result<()> {
    let s = g.shape(x);
    let rank_ok = rank.map_or(!s.is_empty(), |r| s.len() == r);
    if !rank_ok || s.last() != Some(&last) {
        let expected = match rank {
            Some(3) => format!("[batch, time, {last}]"),
            Some(4) => format!("[batch, height, width, {last}]"),
            Some(r) => format!("rank {r} with last dim {last}"),
            None => format!("[.., {last}]"),
        };
        return Err(mismatch(layer, expected, s));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Relu;

impl Layer for Relu {
    fn name(&self) -> &str {
        "relu"
    }

    fn forward(&self, g: &mut Graph, _ps: &ParamStore, x: Var) -> Result<Var> {
        Ok(g.relu(x))
    }
}

/// Fully connected layer applied to the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        group: Group,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = ps.add(format!("{name}.weight"), init.fan_in_uniform(&[in_dim, out_dim], in_dim), group);
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]), group);
        Self {
            name: name.to_string(),
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }
}

impl Layer for Linear {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        check_rank_last(g, x, &self.name, None, self.in_dim)?;
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        let y = g.matmul(x, w);
        Ok(g.add_bias(y, b))
    }
}

/// 1-D convolution over time with bias.
#[derive(Debug, Clone)]
pub struct Conv1d {
    name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: Conv1dGeom,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        group: Group,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        // "same" padding at stride 1; even kernels pad one extra frame on the right
        let geom = Conv1dGeom {
            kernel,
            stride,
            pad_left: (kernel - 1) / 2,
            pad_right: kernel / 2,
        };
        Self::with_geom(ps, init, name, group, in_ch, out_ch, geom)
    }

    pub fn with_geom(
        ps: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        group: Group,
        in_ch: usize,
        out_ch: usize,
        geom: Conv1dGeom,
    ) -> Self {
        let fan_in = geom.kernel * in_ch;
        let weight = ps.add(format!("{name}.weight"), init.fan_in_uniform(&[fan_in, out_ch], fan_in), group);
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), group);
        Self {
            name: name.to_string(),
            weight,
            bias,
            in_ch,
            out_ch,
            geom,
        }
    }
}

impl Layer for Conv1d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        check_rank_last(g, x, &self.name, Some(3), self.in_ch)?;
        if self.geom.out_len(g.shape(x)[1]) == 0 {
            return Err(mismatch(
                &self.name,
                format!("at least {} frames", self.geom.kernel),
                g.shape(x),
            ));
        }
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        let y = g.conv1d(x, w, self.geom);
        Ok(g.add_bias(y, b))
    }
}

/// 2-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: Conv2dGeom,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        group: Group,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Self {
        let geom = Conv2dGeom {
            kernel,
            stride,
            pad: ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2),
        };
        let fan_in = kernel.0 * kernel.1 * in_ch;
        let weight = ps.add(format!("{name}.weight"), init.fan_in_uniform(&[fan_in, out_ch], fan_in), group);
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), group);
        Self {
            name: name.to_string(),
            weight,
            bias,
            in_ch,
            out_ch,
            geom,
        }
    }
}

impl Layer for Conv2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        check_rank_last(g, x, &self.name, Some(4), self.in_ch)?;
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        let y = g.conv2d(x, w, self.geom);
        Ok(g.add_bias(y, b))
    }
}

/// Parallel 1-D convolutions with kernel sizes `1..=K`, concatenated on channels.
#[derive(Debug, Clone)]
pub struct ConvBank {
    name: String,
    pub convs: Vec<Conv1d>,
    pub in_ch: usize,
}

impl ConvBank {
    pub fn new(
        ps: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        group: Group,
        in_ch: usize,
        ch_per_kernel: usize,
        max_kernel: usize,
    ) -> Self {
        let convs = (1..=max_kernel)
            .map(|k| Conv1d::new(ps, init, &format!("{name}.k{k}"), group, in_ch, ch_per_kernel, k, 1))
            .collect();
        Self {
            name: name.to_string(),
            convs,
            in_ch,
        }
    }

    pub fn out_ch(&self) -> usize {
        self.convs.iter().map(|c| c.out_ch).sum()
    }
}

impl Layer for ConvBank {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        check_rank_last(g, x, &self.name, Some(3), self.in_ch)?;
        let outs = self
            .convs
            .iter()
            .map(|c| c.forward(g, ps, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat_last(&outs))
    }
}

/// Batch normalization over every leading index of the last dimension.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, name: &str, group: Group, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: ps.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), group),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(&[channels]), group),
            running_mean: ps.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]), group),
            running_var: ps.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), group),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

impl Layer for BatchNorm {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        check_rank_last(g, x, &self.name, None, self.channels)?;
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        match g.mode() {
            Mode::Train => {
                let rows = g.value(x).rows();
                if rows < 2 {
                    return Err(mismatch(&self.name, "at least 2 rows in training mode".into(), g.shape(x)));
                }
                let (y, mean, var) = g.batch_norm(x, gamma, beta, self.eps);
                let m = self.momentum;
                let unbias = rows as f64 / (rows as f64 - 1.0);
                let rm: Vec<f64> = ps
                    .get(self.running_mean)
                    .data()
                    .iter()
                    .zip(&mean)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let rv: Vec<f64> = ps
                    .get(self.running_var)
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(r, b)| (1.0 - m) * r + m * b * unbias)
                    .collect();
                let c = self.channels;
                g.record_buffer(self.running_mean, Tensor::new(vec![c], rm)?);
                g.record_buffer(self.running_var, Tensor::new(vec![c], rv)?);
                Ok(y)
            }
            Mode::Eval => {
                let rm = ps.get(self.running_mean).clone();
                let inv_std: Vec<f64> = ps
                    .get(self.running_var)
                    .data()
                    .iter()
                    .map(|v| 1.0 / (v + self.eps).sqrt())
                    .collect();
                let inv_std = g.input(Tensor::new(vec![self.channels], inv_std)?);
                let rm = g.input(rm);
                let scale = g.mul(gamma, inv_std);
                let offset = g.mul(rm, scale);
                let shift = g.sub(beta, offset);
                let y = g.mul_bias(x, scale);
                Ok(g.add_bias(y, shift))
            }
        }
    }
}

/// Gated recurrent unit (reset, update, candidate gate order).
///
/// `r = σ(x·Wr + br + h·Ur + cr)`, `z = σ(x·Wz + bz + h·Uz + cz)`,
/// `n = tanh(x·Wn + bn + r ⊙ (h·Un + cn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone)]
pub struct Gru {
    name: String,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        ps: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        group: Group,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let h3 = 3 * hidden;
        Self {
            name: name.to_string(),
            w_ih: ps.add(format!("{name}.w_ih"), init.fan_in_uniform(&[in_dim, h3], in_dim), group),
            w_hh: ps.add(format!("{name}.w_hh"), init.fan_in_uniform(&[hidden, h3], hidden), group),
            b_ih: ps.add(format!("{name}.b_ih"), Tensor::zeros(&[h3]), group),
            b_hh: ps.add(format!("{name}.b_hh"), Tensor::zeros(&[h3]), group),
            in_dim,
            hidden,
        }
    }

    /// One step from state `h: [batch, hidden]` given `x·W_ih + b_ih` for this step.
    fn cell(&self, g: &mut Graph, ps: &ParamStore, xw: Var, h: Option<Var>, batch: usize) -> Var {
        let hd = self.hidden;
        let b_hh = g.param(ps, self.b_hh);
        let hw = match h {
            Some(h) => {
                let w_hh = g.param(ps, self.w_hh);
                let hw = g.matmul(h, w_hh);
                g.add_bias(hw, b_hh)
            }
            None => {
                let z = g.input(Tensor::zeros(&[batch, 3 * hd]));
                g.add_bias(z, b_hh)
            }
        };
        let xr = g.slice_last(xw, 0, hd);
        let xz = g.slice_last(xw, hd, hd);
        let xn = g.slice_last(xw, 2 * hd, hd);
        let hr = g.slice_last(hw, 0, hd);
        let hz = g.slice_last(hw, hd, hd);
        let hn = g.slice_last(hw, 2 * hd, hd);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let rhn = g.mul(r, hn);
        let n = g.add(xn, rhn);
        let n = g.tanh(n);
        match h {
            // h' = n + z ⊙ (h − n)
            Some(h) => {
                let d = g.sub(h, n);
                let zd = g.mul(z, d);
                g.add(n, zd)
            }
            None => {
                let zn = g.mul(z, n);
                g.sub(n, zn)
            }
        }
    }

    /// Run over `x: [batch, time, in]`, returning all states `[batch, time, hidden]`
    /// and the final state `[batch, hidden]`.
    pub fn forward_seq(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<(Var, Var)> {
        check_rank_last(g, x, &self.name, Some(3), self.in_dim)?;
        let (batch, steps) = (g.shape(x)[0], g.shape(x)[1]);
        let w_ih = g.param(ps, self.w_ih);
        let b_ih = g.param(ps, self.b_ih);
        let xw = g.matmul(x, w_ih);
        let xw = g.add_bias(xw, b_ih);
        let mut h = None;
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = g.select_time(xw, t);
            let next = self.cell(g, ps, xt, h, batch);
            outs.push(next);
            h = Some(next);
        }
        let seq = g.stack_time(&outs);
        Ok((seq, *outs.last().expect("non-empty sequence")))
    }

    /// Single step with explicit input and state, both `[batch, ·]`.
    pub fn step(&self, g: &mut Graph, ps: &ParamStore, x: Var, h: Var) -> Result<Var> {
        check_rank_last(g, x, &self.name, Some(2), self.in_dim)?;
        check_rank_last(g, h, &self.name, Some(2), self.hidden)?;
        let batch = g.shape(x)[0];
        let w_ih = g.param(ps, self.w_ih);
        let b_ih = g.param(ps, self.b_ih);
        let xw = g.matmul(x, w_ih);
        let xw = g.add_bias(xw, b_ih);
        Ok(self.cell(g, ps, xw, Some(h), batch))
    }
}

impl Layer for Gru {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_seq(g, ps, x)?.0)
    }
}

/// Long short-term memory layer (input, forget, cell, output gate order).
#[derive(Debug, Clone)]
pub struct Lstm {
    name: String,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        ps: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        group: Group,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let h4 = 4 * hidden;
        let mut bias = vec![0.0; h4];
        // forget gate starts open
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            name: name.to_string(),
            w_ih: ps.add(format!("{name}.w_ih"), init.fan_in_uniform(&[in_dim, h4], in_dim), group),
            w_hh: ps.add(format!("{name}.w_hh"), init.fan_in_uniform(&[hidden, h4], hidden), group),
            bias: ps.add(format!("{name}.bias"), Tensor::new(vec![h4], bias).expect("bias"), group),
            in_dim,
            hidden,
        }
    }

    pub fn forward_seq(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<(Var, Var)> {
        check_rank_last(g, x, &self.name, Some(3), self.in_dim)?;
        let steps = g.shape(x)[1];
        let hd = self.hidden;
        let w_ih = g.param(ps, self.w_ih);
        let w_hh = g.param(ps, self.w_hh);
        let bias = g.param(ps, self.bias);
        let xw = g.matmul(x, w_ih);
        let xw = g.add_bias(xw, bias);
        let mut state: Option<(Var, Var)> = None;
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut gates = g.select_time(xw, t);
            if let Some((h, _)) = state {
                let hw = g.matmul(h, w_hh);
                gates = g.add(gates, hw);
            }
            let i = g.slice_last(gates, 0, hd);
            let i = g.sigmoid(i);
            let f = g.slice_last(gates, hd, hd);
            let f = g.sigmoid(f);
            let gg = g.slice_last(gates, 2 * hd, hd);
            let gg = g.tanh(gg);
            let o = g.slice_last(gates, 3 * hd, hd);
            let o = g.sigmoid(o);
            let ig = g.mul(i, gg);
            let c = match state {
                Some((_, c)) => {
                    let fc = g.mul(f, c);
                    g.add(fc, ig)
                }
                None => ig,
            };
            let tc = g.tanh(c);
            let h = g.mul(o, tc);
            outs.push(h);
            state = Some((h, c));
        }
        let seq = g.stack_time(&outs);
        Ok((seq, *outs.last().expect("non-empty sequence")))
    }
}

impl Layer for Lstm {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_seq(g, ps, x)?.0)
    }
}
