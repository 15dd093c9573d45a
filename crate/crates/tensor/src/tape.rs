use crate::error::TensorError;
use crate::gemm::gemm;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 1-D convolution over `[batch, time, channels]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1dGeom {
    pub fn out_len(&self, t: usize) -> usize {
        let padded = t + self.pad_left + self.pad_right;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }
}

/// Geometry of a 2-D convolution over `[batch, height, width, channels]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2dGeom {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad.0).saturating_sub(self.kernel.0) / self.stride.0 + 1;
        let ow = (w + 2 * self.pad.1).saturating_sub(self.kernel.1) / self.stride.1 + 1;
        (oh, ow)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Matmul(Var, Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumLast(Var),
    Reshape(Var),
    SliceLast { x: Var, start: usize },
    ConcatLast(Vec<Var>),
    SelectTime { x: Var, t: usize },
    StackTime(Vec<Var>),
    MeanTime(Var),
    RepeatTime { x: Var, factor: usize },
    BroadcastTime(Var),
    Conv1d { x: Var, w: Var, geom: Conv1dGeom, cols: Vec<f64> },
    Conv2d { x: Var, w: Var, geom: Conv2dGeom, cols: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"))
    }

    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

/// Wengert list of tensor operations.
///
/// Every op appends one node. A node requires a gradient if any input does;
/// leaves choose explicitly. Shape errors inside primitives are programmer
/// errors and panic; layers validate their inputs before calling in.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.numel() == value.shape().iter().product::<usize>());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())
            .expect("unary shape");
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = zip_map(self.data(a), self.data(b), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let out = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Mul(a, b), rg)
    }

    /// `x[.., c] + b[c]`, broadcasting `b` over every leading index.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let c = self.value(x).last_dim();
        assert_eq!(self.shape(b), [c], "add_bias: bias must be [{c}]");
        let bd = self.data(b);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % c])
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, b]);
        self.push(Tensor::new(shape, out).unwrap(), Op::AddBias(x, b), rg)
    }

    /// `x[.., c] * s[c]`, broadcasting `s` over every leading index.
    pub fn mul_bias(&mut self, x: Var, s: Var) -> Var {
        let c = self.value(x).last_dim();
        assert_eq!(self.shape(s), [c], "mul_bias: scale must be [{c}]");
        let sd = self.data(s);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sd[i % c])
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, s]);
        self.push(Tensor::new(shape, out).unwrap(), Op::MulBias(x, s), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, Op::Scale(x, k), |v| v * k)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + k)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// `x[.., k] · w[k, n] -> [.., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "matmul: rhs must be 2-D, got {ws:?}");
        let k = *xs.last().expect("matmul: lhs is scalar");
        assert_eq!(k, ws[0], "matmul: inner dims {xs:?} x {ws:?}");
        let m = self.value(x).numel() / k.max(1);
        let n = ws[1];
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(x), false, self.data(w), false, 0.0, &mut out);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[x, w]);
        self.push(Tensor::new(shape, out).unwrap(), Op::Matmul(x, w), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean over every leading index: `[.., c] -> [c]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        let rows = xv.rows();
        let mut out = vec![0.0; c];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![c], out).unwrap(), Op::MeanRows(x), rg)
    }

    /// Sum over the last dimension: `[.., c] -> [..]`.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let mut shape = xv.shape().to_vec();
        shape.pop();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), Op::SumLast(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape.to_vec()).expect("reshape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    /// Columns `start..start+len` of the last dimension.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        assert!(start + len <= c, "slice_last: {start}+{len} > {c}");
        let mut out = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), Op::SliceLast { x, start }, rg)
    }

    /// Concatenate along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_last: no inputs");
        let lead = {
            let s = self.shape(xs[0]);
            s[..s.len() - 1].to_vec()
        };
        for &x in xs {
            let s = self.shape(x);
            assert_eq!(&s[..s.len() - 1], &lead[..], "concat_last: leading dims");
        }
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows = self.value(xs[0]).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(xs);
        self.push(Tensor::new(shape, out).unwrap(), Op::ConcatLast(xs.to_vec()), rg)
    }

    fn btc(&self, x: Var, what: &str) -> (usize, usize, usize) {
        let s = self.shape(x);
        assert_eq!(s.len(), 3, "{what}: expected [batch, time, channels], got {s:?}");
        (s[0], s[1], s[2])
    }

    /// `x[b, t, c] -> [b, c]` at one time step.
    pub fn select_time(&mut self, x: Var, t: usize) -> Var {
        let (b, steps, c) = self.btc(x, "select_time");
        assert!(t < steps);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(b * c);
        for bi in 0..b {
            let off = (bi * steps + t) * c;
            out.extend_from_slice(&xd[off..off + c]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![b, c], out).unwrap(), Op::SelectTime { x, t }, rg)
    }

    /// Stack `[b, c]` steps into `[b, t, c]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Var {
        assert!(!steps.is_empty(), "stack_time: no steps");
        let s0 = self.shape(steps[0]).to_vec();
        assert_eq!(s0.len(), 2, "stack_time: steps must be [batch, channels]");
        let (b, c) = (s0[0], s0[1]);
        let t = steps.len();
        let mut out = vec![0.0; b * t * c];
        for (ti, &s) in steps.iter().enumerate() {
            assert_eq!(self.shape(s), &s0[..], "stack_time: step shapes differ");
            let sd = self.data(s);
            for bi in 0..b {
                let dst = (bi * t + ti) * c;
                out[dst..dst + c].copy_from_slice(&sd[bi * c..(bi + 1) * c]);
            }
        }
        let rg = self.rg(steps);
        self.push(
            Tensor::new(vec![b, t, c], out).unwrap(),
            Op::StackTime(steps.to_vec()),
            rg,
        )
    }

    /// Average over time: `[b, t, c] -> [b, c]`.
    pub fn mean_time(&mut self, x: Var) -> Var {
        let (b, t, c) = self.btc(x, "mean_time");
        let xd = self.data(x);
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for ti in 0..t {
                let off = (bi * t + ti) * c;
                for ci in 0..c {
                    out[bi * c + ci] += xd[off + ci];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= t as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![b, c], out).unwrap(), Op::MeanTime(x), rg)
    }

    /// Repeat every frame `factor` times: `[b, t, c] -> [b, t·factor, c]`.
    pub fn repeat_time(&mut self, x: Var, factor: usize) -> Var {
        let (b, t, c) = self.btc(x, "repeat_time");
        let xd = self.data(x);
        let mut out = Vec::with_capacity(b * t * factor * c);
        for bi in 0..b {
            for ti in 0..t {
                let off = (bi * t + ti) * c;
                for _ in 0..factor {
                    out.extend_from_slice(&xd[off..off + c]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(vec![b, t * factor, c], out).unwrap(),
            Op::RepeatTime { x, factor },
            rg,
        )
    }

    /// Broadcast an utterance-level vector to every frame: `[b, c] -> [b, t, c]`.
    pub fn broadcast_time(&mut self, x: Var, steps: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "broadcast_time: expected [batch, channels]");
        let (b, c) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(b * steps * c);
        for bi in 0..b {
            for _ in 0..steps {
                out.extend_from_slice(&xd[bi * c..(bi + 1) * c]);
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(vec![b, steps, c], out).unwrap(),
            Op::BroadcastTime(x),
            rg,
        )
    }

    /// 1-D convolution. `x: [b, t, cin]`, `w: [kernel·cin, cout]` → `[b, t', cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, geom: Conv1dGeom) -> Var {
        let (b, t, cin) = self.btc(x, "conv1d");
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[0], geom.kernel * cin, "conv1d: weight rows");
        let cout = ws[1];
        let tout = geom.out_len(t);
        assert!(tout > 0, "conv1d: input too short");
        let kc = geom.kernel * cin;
        let xd = self.data(x);
        let mut cols = vec![0.0; b * tout * kc];
        for bi in 0..b {
            for to in 0..tout {
                let row = &mut cols[(bi * tout + to) * kc..(bi * tout + to + 1) * kc];
                for k in 0..geom.kernel {
                    let ti = (to * geom.stride + k) as isize - geom.pad_left as isize;
                    if ti < 0 || ti as usize >= t {
                        continue;
                    }
                    let src = (bi * t + ti as usize) * cin;
                    row[k * cin..(k + 1) * cin].copy_from_slice(&xd[src..src + cin]);
                }
            }
        }
        let mut out = vec![0.0; b * tout * cout];
        gemm(b * tout, kc, cout, &cols, false, self.data(w), false, 0.0, &mut out);
        let rg = self.rg(&[x, w]);
        self.push(
            Tensor::new(vec![b, tout, cout], out).unwrap(),
            Op::Conv1d { x, w, geom, cols },
            rg,
        )
    }

    /// 2-D convolution. `x: [b, h, w, cin]`, `w: [kh·kw·cin, cout]` → `[b, h', w', cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, geom: Conv2dGeom) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "conv2d: expected [batch, h, w, channels]");
        let (b, h, wd, cin) = (s[0], s[1], s[2], s[3]);
        let (kh, kw) = geom.kernel;
        let ws = self.shape(w).to_vec();
        assert_eq!(ws[0], kh * kw * cin, "conv2d: weight rows");
        let cout = ws[1];
        let (oh, ow) = geom.out_dims(h, wd);
        let kc = kh * kw * cin;
        let xd = self.data(x);
        let mut cols = vec![0.0; b * oh * ow * kc];
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let r = ((bi * oh + oy) * ow + ox) * kc;
                    for ky in 0..kh {
                        let iy = (oy * geom.stride.0 + ky) as isize - geom.pad.0 as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * geom.stride.1 + kx) as isize - geom.pad.1 as isize;
                            if ix < 0 || ix as usize >= wd {
                                continue;
                            }
                            let src = ((bi * h + iy as usize) * wd + ix as usize) * cin;
                            let dst = r + (ky * kw + kx) * cin;
                            cols[dst..dst + cin].copy_from_slice(&xd[src..src + cin]);
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; b * oh * ow * cout];
        gemm(b * oh * ow, kc, cout, &cols, false, self.data(w), false, 0.0, &mut out);
        let rg = self.rg(&[x, w]);
        self.push(
            Tensor::new(vec![b, oh, ow, cout], out).unwrap(),
            Op::Conv2d { x, w, geom, cols },
            rg,
        )
    }

    /// Training-mode batch normalization over every leading index of `x[.., c]`.
    ///
    /// Returns the output together with the batch mean and biased variance so
    /// the caller can maintain running statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let c = xv.last_dim();
        let rows = xv.rows();
        assert_eq!(self.shape(gamma), [c]);
        assert_eq!(self.shape(beta), [c]);
        let mut mean = vec![0.0; c];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for r in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut out = Vec::with_capacity(xv.numel());
        for (i, v) in xv.data().iter().enumerate() {
            let ci = i % c;
            let xh = (v - mean[ci]) * inv_std[ci];
            xhat.push(xh);
            out.push(xh * g[ci] + bt[ci]);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            Tensor::new(shape, out).unwrap(),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std },
            rg,
        );
        (v, mean, var)
    }

    /// Forward value is `quantized`; the gradient flows to `x` unchanged.
    pub fn straight_through(&mut self, x: Var, quantized: Tensor) -> Var {
        assert_eq!(self.shape(x), quantized.shape(), "straight_through: shapes");
        let rg = self.rg(&[x]);
        self.push(quantized, Op::StraightThrough(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if !lv.shape().is_empty() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::DetachedGraph);
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let len = self.value(v).numel();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.to_vec());
                if self.wants(*b) {
                    self.acc(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, zip_map(g, self.data(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, zip_map(g, self.data(*a), |x, y| x * y));
                }
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, g.to_vec());
                if self.wants(*b) {
                    let c = self.value(*b).numel();
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % c] += v;
                    }
                    self.acc(grads, *b, gb);
                }
            }
            Op::MulBias(x, s) => {
                let c = self.value(*s).numel();
                if self.wants(*x) {
                    let sd = self.data(*s);
                    self.acc(grads, *x, g.iter().enumerate().map(|(i, v)| v * sd[i % c]).collect());
                }
                if self.wants(*s) {
                    let xd = self.data(*x);
                    let mut gs = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        gs[i % c] += v * xd[i];
                    }
                    self.acc(grads, *s, gs);
                }
            }
            Op::Scale(x, k) => self.acc(grads, *x, g.iter().map(|v| v * k).collect()),
            Op::AddScalar(x) | Op::Reshape(x) | Op::StraightThrough(x) => {
                self.acc(grads, *x, g.to_vec())
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                self.acc(grads, *x, zip_map(g, xd, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Sigmoid(x) => self.acc(grads, *x, zip_map(g, out, |gv, y| gv * y * (1.0 - y))),
            Op::Tanh(x) => self.acc(grads, *x, zip_map(g, out, |gv, y| gv * (1.0 - y * y))),
            Op::Exp(x) => self.acc(grads, *x, zip_map(g, out, |gv, y| gv * y)),
            Op::Square(x) => {
                self.acc(grads, *x, zip_map(g, self.data(*x), |gv, xv| 2.0 * gv * xv))
            }
            Op::Abs(x) => self.acc(
                grads,
                *x,
                zip_map(g, self.data(*x), |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Clamp(x, lo, hi) => self.acc(
                grads,
                *x,
                zip_map(g, self.data(*x), |gv, xv| if xv > *lo && xv < *hi { gv } else { 0.0 }),
            ),
            Op::Matmul(x, w) => {
                let ws = self.shape(*w);
                let (k, n) = (ws[0], ws[1]);
                let m = self.value(*x).numel() / k.max(1);
                if self.wants(*x) {
                    let wd = self.data(*w);
                    self.acc_with(grads, *x, |gx| gemm(m, n, k, g, false, wd, true, 1.0, gx));
                }
                if self.wants(*w) {
                    let xd = self.data(*x);
                    self.acc_with(grads, *w, |gw| gemm(k, m, n, xd, true, g, false, 1.0, gw));
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).numel();
                self.acc(grads, *x, vec![g[0]; len]);
            }
            Op::Mean(x) => {
                let len = self.value(*x).numel();
                self.acc(grads, *x, vec![g[0] / len as f64; len]);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let rows = xv.rows() as f64;
                let c = g.len();
                self.acc(grads, *x, (0..xv.numel()).map(|i| g[i % c] / rows).collect());
            }
            Op::SumLast(x) => {
                let c = self.value(*x).last_dim();
                let len = self.value(*x).numel();
                self.acc(grads, *x, (0..len).map(|i| g[i / c]).collect());
            }
            Op::SliceLast { x, start } => {
                let c = self.value(*x).last_dim();
                let len = node.value.last_dim();
                let start = *start;
                self.acc_with(grads, *x, |gx| {
                    for (r, chunk) in g.chunks(len).enumerate() {
                        for (j, v) in chunk.iter().enumerate() {
                            gx[r * c + start + j] += v;
                        }
                    }
                });
            }
            Op::ConcatLast(xs) => {
                let total = node.value.last_dim();
                let mut off = 0;
                for &x in xs {
                    let w = self.value(x).last_dim();
                    if self.wants(x) {
                        let rows = self.value(x).rows();
                        let mut gx = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gx.extend_from_slice(&g[r * total + off..r * total + off + w]);
                        }
                        self.acc(grads, x, gx);
                    }
                    off += w;
                }
            }
            Op::SelectTime { x, t } => {
                let s = self.shape(*x);
                let (steps, c) = (s[1], s[2]);
                let t = *t;
                self.acc_with(grads, *x, |gx| {
                    for (bi, chunk) in g.chunks(c).enumerate() {
                        let off = (bi * steps + t) * c;
                        gx[off..off + c].iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::StackTime(steps) => {
                let s = node.value.shape();
                let (b, t, c) = (s[0], s[1], s[2]);
                for (ti, &sv) in steps.iter().enumerate() {
                    if !self.wants(sv) {
                        continue;
                    }
                    let mut gs = Vec::with_capacity(b * c);
                    for bi in 0..b {
                        let off = (bi * t + ti) * c;
                        gs.extend_from_slice(&g[off..off + c]);
                    }
                    self.acc(grads, sv, gs);
                }
            }
            Op::MeanTime(x) => {
                let s = self.shape(*x);
                let (b, t, c) = (s[0], s[1], s[2]);
                let mut gx = vec![0.0; b * t * c];
                for bi in 0..b {
                    for ti in 0..t {
                        for ci in 0..c {
                            gx[(bi * t + ti) * c + ci] = g[bi * c + ci] / t as f64;
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::RepeatTime { x, factor } => {
                let s = self.shape(*x);
                let (b, t, c) = (s[0], s[1], s[2]);
                let mut gx = vec![0.0; b * t * c];
                for bi in 0..b {
                    for ti in 0..t {
                        for r in 0..*factor {
                            let src = ((bi * t + ti) * factor + r) * c;
                            let dst = (bi * t + ti) * c;
                            for ci in 0..c {
                                gx[dst + ci] += g[src + ci];
                            }
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::BroadcastTime(x) => {
                let s = node.value.shape();
                let (b, t, c) = (s[0], s[1], s[2]);
                let mut gx = vec![0.0; b * c];
                for bi in 0..b {
                    for ti in 0..t {
                        let off = (bi * t + ti) * c;
                        for ci in 0..c {
                            gx[bi * c + ci] += g[off + ci];
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Conv1d { x, w, geom, cols } => {
                let s = self.shape(*x);
                let (b, t, cin) = (s[0], s[1], s[2]);
                let cout = self.shape(*w)[1];
                let tout = node.value.shape()[1];
                let kc = geom.kernel * cin;
                if self.wants(*w) {
                    self.acc_with(grads, *w, |gw| {
                        gemm(kc, b * tout, cout, cols, true, g, false, 1.0, gw)
                    });
                }
                if self.wants(*x) {
                    let mut dcols = vec![0.0; b * tout * kc];
                    gemm(b * tout, cout, kc, g, false, self.data(*w), true, 0.0, &mut dcols);
                    self.acc_with(grads, *x, |gx| {
                        for bi in 0..b {
                            for to in 0..tout {
                                let row = &dcols[(bi * tout + to) * kc..(bi * tout + to + 1) * kc];
                                for k in 0..geom.kernel {
                                    let ti = (to * geom.stride + k) as isize - geom.pad_left as isize;
                                    if ti < 0 || ti as usize >= t {
                                        continue;
                                    }
                                    let dst = (bi * t + ti as usize) * cin;
                                    gx[dst..dst + cin]
                                        .iter_mut()
                                        .zip(&row[k * cin..(k + 1) * cin])
                                        .for_each(|(a, v)| *a += v);
                                }
                            }
                        }
                    });
                }
            }
            Op::Conv2d { x, w, geom, cols } => {
                let s = self.shape(*x);
                let (b, h, wd, cin) = (s[0], s[1], s[2], s[3]);
                let cout = self.shape(*w)[1];
                let os = node.value.shape();
                let (oh, ow) = (os[1], os[2]);
                let (kh, kw) = geom.kernel;
                let kc = kh * kw * cin;
                let rows = b * oh * ow;
                if self.wants(*w) {
                    self.acc_with(grads, *w, |gw| gemm(kc, rows, cout, cols, true, g, false, 1.0, gw));
                }
                if self.wants(*x) {
                    let mut dcols = vec![0.0; rows * kc];
                    gemm(rows, cout, kc, g, false, self.data(*w), true, 0.0, &mut dcols);
                    self.acc_with(grads, *x, |gx| {
                        for bi in 0..b {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let r = ((bi * oh + oy) * ow + ox) * kc;
                                    for ky in 0..kh {
                                        let iy = (oy * geom.stride.0 + ky) as isize - geom.pad.0 as isize;
                                        if iy < 0 || iy as usize >= h {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * geom.stride.1 + kx) as isize
                                                - geom.pad.1 as isize;
                                            if ix < 0 || ix as usize >= wd {
                                                continue;
                                            }
                                            let dst = ((bi * h + iy as usize) * wd + ix as usize) * cin;
                                            let src = r + (ky * kw + kx) * cin;
                                            gx[dst..dst + cin]
                                                .iter_mut()
                                                .zip(&dcols[src..src + cin])
                                                .for_each(|(a, v)| *a += v);
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                if self.wants(*beta) {
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % c] += v;
                    }
                    self.acc(grads, *beta, gb);
                }
                if self.wants(*gamma) {
                    let mut gg = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        gg[i % c] += v * xhat[i];
                    }
                    self.acc(grads, *gamma, gg);
                }
                if self.wants(*x) {
                    let gam = self.data(*gamma);
                    let mut sum_d = vec![0.0; c];
                    let mut sum_dx = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        let d = v * gam[i % c];
                        sum_d[i % c] += d;
                        sum_dx[i % c] += d * xhat[i];
                    }
                    let nf = rows as f64;
                    let gx: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            let ci = i % c;
                            let d = v * gam[ci];
                            inv_std[ci] / nf * (nf * d - sum_d[ci] - xhat[i] * sum_dx[ci])
                        })
                        .collect();
                    self.acc(grads, *x, gx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clips_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
        assert_eq!(g.get(x).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn sum_of_squares_power_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let sq = tape.mul(x, x);
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let p = tape.mul(x, c);
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn non_scalar_and_detached_losses_are_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(c);
        assert_eq!(tape.backward(s).unwrap_err(), TensorError::DetachedGraph);
    }

    #[test]
    fn identity_pointwise_conv_is_noop() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 5 * 3).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x = tape.constant(t(&[2, 5, 3], &data));
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = tape.constant(t(&[3, 3], &eye));
        let geom = Conv1dGeom { kernel: 1, stride: 1, pad_left: 0, pad_right: 0 };
        let y = tape.conv1d(x, w, geom);
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[0.1, 0.2]), true);
        let q = tape.straight_through(x, t(&[2], &[1.0, 1.0]));
        let w = tape.constant(t(&[2], &[3.0, 5.0]));
        let p = tape.mul(q, w);
        let s = tape.sum(p);
        assert_eq!(tape.value(s).item(), 8.0);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn repeat_time_layout() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 1], &[1.0, 2.0]));
        let y = tape.repeat_time(x, 2);
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0]);
    }
}
