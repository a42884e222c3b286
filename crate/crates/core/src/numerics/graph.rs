//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order, so node indices
//! are already a topological order and the tape is acyclic by construction.
//! Building the graph evaluates it; [`Graph::backward`] walks the tape once
//! in reverse.

use std::collections::BTreeMap;

use super::kernels::{self, ConvDims, MatRef};
use super::{NumericsError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Graph::custom_unary`]: `(x, y, dy) -> dx`.
pub type UnaryBackward = fn(&Tensor, &Tensor, &Tensor) -> Tensor;

#[derive(Clone)]
pub(crate) enum Op {
    Constant,
    Param(String),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    BatchMatMul { a: Var, b: Var, ta: bool, tb: bool },
    Conv1d { x: Var, w: Var, bias: Option<Var>, pad: usize },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, s: Var },
    Affine { x: Var, mul: f64 },
    Mse(Var, Var),
    L2Norm(Var),
    Concat(Vec<Var>),
    AvgPool2d(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    Custom { x: Var, name: &'static str, backward: UnaryBackward },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias { .. } => "add_bias",
            Op::Scale { .. } => "scale",
            Op::Affine { .. } => "affine",
            Op::Mse(..) => "mse",
            Op::L2Norm(_) => "l2_norm",
            Op::Concat(_) => "concat",
            Op::AvgPool2d(_) => "avg_pool2d",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Custom { name, .. } => name,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } | Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Conv1d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::Scale { x, s } => vec![*x, *s],
            Op::Concat(xs) => xs.clone(),
            Op::Softmax { x, .. }
            | Op::Affine { x, .. }
            | Op::Permute { x, .. }
            | Op::MeanAxis { x, .. }
            | Op::Custom { x, .. } => vec![*x],
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::L2Norm(x)
            | Op::AvgPool2d(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
        }
    }
}

pub(crate) struct Node {
    pub op: Op,
    pub value: Tensor,
    pub needs_grad: bool,
}

/// Output-size cap used by [`Graph::avg_pool2d`].
#[derive(Clone, Copy, Debug)]
pub struct PoolCap(pub usize);

#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    by_var: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

fn same_shape(node: String, a: &Tensor, b: &Tensor) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::Shape {
            node,
            detail: format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
        });
    }
    Ok(())
}

impl Graph {
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

    /// Names the node that an op pushed next would occupy, for error messages.
    fn next_name(&self, op: &str) -> String {
        format!("{op}#{}", self.nodes.len())
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// A learnable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, t: Tensor) -> Var {
        self.push(Op::Param(name.to_string()), t)
    }

    fn check_finite(&self, name: &str, t: &Tensor) -> Result<(), NumericsError> {
        if t.all_finite() {
            Ok(())
        } else {
            Err(NumericsError::NonFinite {
                node: self.next_name(name),
            })
        }
    }

    fn mat_dims(&self, op: &str, v: Var) -> Result<(usize, usize), NumericsError> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(NumericsError::Shape {
                node: self.next_name(op),
                detail: format!("expected a matrix, got {s:?}"),
            }),
        }
    }

    /// `op(a) · op(b)` for matrices, with optional transposition of each side.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, NumericsError> {
        let (ar, ac) = self.mat_dims("matmul", a)?;
        let (br, bc) = self.mat_dims("matmul", b)?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(NumericsError::Shape {
                node: self.next_name("matmul"),
                detail: format!("inner dimensions {k} and {kb} differ"),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            MatRef { data: self.value(a).data(), rows: ar, cols: ac, trans: ta },
            MatRef { data: self.value(b).data(), rows: br, cols: bc, trans: tb },
            &mut out,
            false,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_t(a, b, false, false)
    }

    /// Batched product over the leading axis of two rank-3 tensors.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, NumericsError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(NumericsError::Shape {
                node: self.next_name("batch_matmul"),
                detail: format!("need rank-3 operands with equal batch, got {sa:?} and {sb:?}"),
            });
        }
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(NumericsError::Shape {
                node: self.next_name("batch_matmul"),
                detail: format!("inner dimensions {k} and {kb} differ"),
            });
        }
        let batch = sa[0];
        let mut out = vec![0.0; batch * m * n];
        let (asz, bsz) = (sa[1] * sa[2], sb[1] * sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for g in 0..batch {
            kernels::gemm(
                MatRef { data: &ad[g * asz..][..asz], rows: sa[1], cols: sa[2], trans: ta },
                MatRef { data: &bd[g * bsz..][..bsz], rows: sb[1], cols: sb[2], trans: tb },
                &mut out[g * m * n..][..m * n],
                false,
            );
        }
        let t = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(Op::BatchMatMul { a, b, ta, tb }, t))
    }

    /// True (kernel-flipped) 1-D convolution.
    ///
    /// `x`: `(batch, c_in, len)`, `w`: `(c_out, c_in, kernel)`, `bias`: `(c_out)`.
    /// The input is left-padded with `pad` zeros; output length is
    /// `len + pad - kernel + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, pad: usize) -> Result<Var, NumericsError> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let bad = |detail: String| NumericsError::Shape {
            node: self.next_name("conv1d"),
            detail,
        };
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(bad(format!("input {sx:?} incompatible with kernel {sw:?}")));
        }
        if sx[2] + pad < sw[2] {
            return Err(bad(format!("signal of length {} shorter than kernel {}", sx[2], sw[2])));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(bad(format!("bias shape {:?}, expected [{}]", self.shape(b), sw[0])));
            }
        }
        let d = ConvDims {
            batch: sx[0],
            c_in: sx[1],
            len: sx[2],
            c_out: sw[0],
            kernel: sw[2],
            pad,
        };
        let y = kernels::conv1d(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &d,
        );
        let t = Tensor::new(vec![d.batch, d.c_out, d.out_len()], y)?;
        Ok(self.push(Op::Conv1d { x, w, bias, pad }, t))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Shape {
                node: self.next_name("softmax"),
                detail: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        let y = kernels::softmax(self.value(x).data(), &shape, axis);
        let t = Tensor::new(shape, y)?;
        Ok(self.push(Op::Softmax { x, axis }, t))
    }

    /// Normalizes over the last axis, then applies `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().expect("tensor has rank >= 1");
        if self.shape(gamma) != [width] || self.shape(beta) != [width] {
            return Err(NumericsError::Shape {
                node: self.next_name("layer_norm"),
                detail: format!("affine terms must be [{width}]"),
            });
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xs.len() / width;
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * width..][..width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..width {
                let h = (row[c] - mean) * is;
                xhat[r * width + c] = h;
                y[r * width + c] = g[c] * h + b[c];
            }
        }
        let t = Tensor::new(shape, y)?;
        Ok(self.push(Op::LayerNorm { x, gamma, beta, xhat, inv_std }, t))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), t)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), t)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, NumericsError> {
        let name = self.next_name(op.name());
        same_shape(name, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(op, t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let width = *self.shape(x).last().expect("rank >= 1");
        if self.shape(bias) != [width] {
            return Err(NumericsError::Shape {
                node: self.next_name("add_bias"),
                detail: format!("bias {:?} does not match last axis {width}", self.shape(bias)),
            });
        }
        let mut t = self.value(x).clone();
        let b = self.value(bias).data();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += b[i % width];
        }
        Ok(self.push(Op::AddBias { x, bias }, t))
    }

    /// Multiplies every entry of `x` by the single-element node `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        if !self.value(s).is_scalar() {
            return Err(NumericsError::Shape {
                node: self.next_name("scale"),
                detail: format!("scale factor must be scalar, got {:?}", self.shape(s)),
            });
        }
        let k = self.value(s).item();
        let t = self.value(x).map(|v| v * k);
        Ok(self.push(Op::Scale { x, s }, t))
    }

    /// `mul · x + add` with constant coefficients.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let t = self.value(x).map(|v| mul * v + add);
        self.push(Op::Affine { x, mul }, t)
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let name = self.next_name("mse");
        same_shape(name, self.value(a), self.value(b))?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let v = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64;
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(v)))
    }

    /// Euclidean norm over the last axis. A rank-1 input yields a `[1]` tensor.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().expect("rank >= 1");
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(width)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out_shape = if shape.len() == 1 {
            vec![1]
        } else {
            shape[..shape.len() - 1].to_vec()
        };
        let t = Tensor::new(out_shape, out).expect("norm shape");
        self.push(Op::L2Norm(x), t)
    }

    /// Concatenates along the leading axis; trailing dims must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, NumericsError> {
        let first = xs.first().ok_or_else(|| NumericsError::Shape {
            node: self.next_name("concat"),
            detail: "no operands".into(),
        })?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s[1..] != tail[..] {
                return Err(NumericsError::Shape {
                    node: self.next_name("concat"),
                    detail: format!("trailing dims {:?} vs {:?}", &s[1..], tail),
                });
            }
            lead += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat(xs.to_vec()), t))
    }

    /// Adaptive average pooling of the last two axes down to at most
    /// `cap × cap`; axes already within the cap pass through unchanged.
    pub fn avg_pool2d(&mut self, x: Var, cap: PoolCap) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || cap.0 == 0 {
            return Err(NumericsError::Shape {
                node: self.next_name("avg_pool2d"),
                detail: format!("need rank >= 2 and positive cap, got {shape:?}"),
            });
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let (oh, ow) = (h.min(cap.0), w.min(cap.0));
        let rb = kernels::pool_bins(h, oh);
        let cb = kernels::pool_bins(w, ow);
        let lead: usize = shape[..shape.len() - 2].iter().product();
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(lead * oh * ow);
        for l in 0..lead {
            let plane = &xs[l * h * w..][..h * w];
            for &(r0, r1) in &rb {
                for &(c0, c1) in &cb {
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        acc += plane[r * w + c0..r * w + c1].iter().sum::<f64>();
                    }
                    out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.extend([oh, ow]);
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(Op::AvgPool2d(x), t))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x).clone().reshaped(shape).map_err(|_| NumericsError::Shape {
            node: self.next_name("reshape"),
            detail: format!("cannot view {:?} as {shape:?}", self.shape(x)),
        })?;
        Ok(self.push(Op::Reshape(x), t))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let mut seen = perm.to_vec();
        seen.sort_unstable();
        if seen != (0..shape.len()).collect::<Vec<_>>() {
            return Err(NumericsError::Shape {
                node: self.next_name("permute"),
                detail: format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            });
        }
        let (y, s) = kernels::permute(self.value(x).data(), &shape, perm);
        let t = Tensor::new(s, y)?;
        Ok(self.push(Op::Permute { x, perm: perm.to_vec() }, t))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.permute(x, &[1, 0])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), t)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(Op::Mean(x), t)
    }

    /// Averages over `axis`, removing it (a rank-1 input yields `[1]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Shape {
                node: self.next_name("mean_axis"),
                detail: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let xs = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xs[(o * len + l) * inner..][..inner];
                for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(Op::MeanAxis { x, axis }, t))
    }

    /// Elementwise op with a caller-supplied adjoint. No second-order support.
    pub fn custom_unary(
        &mut self,
        x: Var,
        name: &'static str,
        forward: impl Fn(f64) -> f64,
        backward: UnaryBackward,
    ) -> Result<Var, NumericsError> {
        let t = self.value(x).map(forward);
        self.check_finite(name, &t)?;
        Ok(self.push(Op::Custom { x, name, backward }, t))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::NonScalarLoss {
                node: format!("{}#{}", self.nodes[loss.0].op.name(), loss.0),
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0).reshaped(self.shape(loss))?);
        let mut params = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if let Op::Param(name) = &node.op {
                params
                    .entry(name.clone())
                    .and_modify(|g: &mut Tensor| g.add_assign(&dy))
                    .or_insert_with(|| dy.clone());
                grads[i] = Some(dy);
                continue;
            }
            for (input, g) in self.local_grads(i, &dy)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(dy);
        }
        Ok(Gradients { by_var: grads, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of node `i` for each of its inputs.
    fn local_grads(&self, i: usize, dy: &Tensor) -> Result<Vec<(Var, Tensor)>, NumericsError> {
        let node = &self.nodes[i];
        let y = &node.value;
        let shaped = |like: Var, data: Vec<f64>| Tensor::new(self.shape(like).to_vec(), data);
        let mut out = Vec::new();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = (self.shape(a)[0], self.shape(a)[1]);
                let (br, bc) = (self.shape(b)[0], self.shape(b)[1]);
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let dym = MatRef { data: dy.data(), rows: m, cols: n, trans: false };
                if self.wants(a) {
                    let mut da = vec![0.0; ar * ac];
                    let bm = MatRef { data: self.value(b).data(), rows: br, cols: bc, trans: tb };
                    if ta {
                        kernels::gemm(bm, MatRef { trans: true, ..dym }, &mut da, false);
                    } else {
                        kernels::gemm(dym, MatRef { trans: !tb, ..bm }, &mut da, false);
                    }
                    out.push((a, shaped(a, da)?));
                }
                if self.wants(b) {
                    let mut db = vec![0.0; br * bc];
                    let am = MatRef { data: self.value(a).data(), rows: ar, cols: ac, trans: ta };
                    if tb {
                        kernels::gemm(MatRef { trans: true, ..dym }, am, &mut db, false);
                    } else {
                        kernels::gemm(MatRef { trans: !ta, ..am }, dym, &mut db, false);
                    }
                    out.push((b, shaped(b, db)?));
                }
            }
            &Op::BatchMatMul { a, b, ta, tb } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, n) = (y.shape()[1], y.shape()[2]);
                let (asz, bsz) = (sa[1] * sa[2], sb[1] * sb[2]);
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                let mut da = self.wants(a).then(|| vec![0.0; ad.len()]);
                let mut db = self.wants(b).then(|| vec![0.0; bd.len()]);
                for g in 0..sa[0] {
                    let dym = MatRef { data: &dy.data()[g * m * n..][..m * n], rows: m, cols: n, trans: false };
                    let am = MatRef { data: &ad[g * asz..][..asz], rows: sa[1], cols: sa[2], trans: ta };
                    let bm = MatRef { data: &bd[g * bsz..][..bsz], rows: sb[1], cols: sb[2], trans: tb };
                    if let Some(da) = &mut da {
                        let slot = &mut da[g * asz..][..asz];
                        if ta {
                            kernels::gemm(bm, MatRef { trans: true, ..dym }, slot, false);
                        } else {
                            kernels::gemm(dym, MatRef { trans: !tb, ..bm }, slot, false);
                        }
                    }
                    if let Some(db) = &mut db {
                        let slot = &mut db[g * bsz..][..bsz];
                        if tb {
                            kernels::gemm(MatRef { trans: true, ..dym }, am, slot, false);
                        } else {
                            kernels::gemm(MatRef { trans: !ta, ..am }, dym, slot, false);
                        }
                    }
                }
                if let Some(da) = da {
                    out.push((a, shaped(a, da)?));
                }
                if let Some(db) = db {
                    out.push((b, shaped(b, db)?));
                }
            }
            &Op::Conv1d { x, w, bias, pad } => {
                let sx = self.shape(x);
                let sw = self.shape(w);
                let d = ConvDims {
                    batch: sx[0],
                    c_in: sx[1],
                    len: sx[2],
                    c_out: sw[0],
                    kernel: sw[2],
                    pad,
                };
                let (dx, dw, db) =
                    kernels::conv1d_backward(self.value(x).data(), self.value(w).data(), dy.data(), &d);
                out.push((x, shaped(x, dx)?));
                out.push((w, shaped(w, dw)?));
                if let Some(b) = bias {
                    out.push((b, shaped(b, db)?));
                }
            }
            &Op::Softmax { x, axis } => {
                let dx = kernels::softmax_backward(y.data(), dy.data(), y.shape(), axis);
                out.push((x, shaped(x, dx)?));
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let width = self.shape(*gamma)[0];
                let g = self.value(*gamma).data();
                let mut dx = vec![0.0; xhat.len()];
                let mut dg = vec![0.0; width];
                let mut dbeta = vec![0.0; width];
                for (r, &is) in inv_std.iter().enumerate() {
                    let h = &xhat[r * width..][..width];
                    let d = &dy.data()[r * width..][..width];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..width {
                        let dh = d[c] * g[c];
                        mean_dh += dh;
                        mean_dh_h += dh * h[c];
                        dg[c] += d[c] * h[c];
                        dbeta[c] += d[c];
                    }
                    mean_dh /= width as f64;
                    mean_dh_h /= width as f64;
                    for c in 0..width {
                        dx[r * width + c] = is * (d[c] * g[c] - mean_dh - h[c] * mean_dh_h);
                    }
                }
                out.push((*x, shaped(*x, dx)?));
                out.push((*gamma, shaped(*gamma, dg)?));
                out.push((*beta, shaped(*beta, dbeta)?));
            }
            &Op::Relu(x) => {
                // Subgradient 0 at the kink.
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                out.push((x, shaped(x, dx)?));
            }
            &Op::Sigmoid(x) => {
                let dx = y.data().iter().zip(dy.data()).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                out.push((x, shaped(x, dx)?));
            }
            &Op::Add(a, b) => {
                out.push((a, dy.clone()));
                out.push((b, dy.clone()));
            }
            &Op::Sub(a, b) => {
                out.push((a, dy.clone()));
                out.push((b, dy.map(|v| -v)));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                if self.wants(a) {
                    let da = dy.data().iter().zip(bv).map(|(g, v)| g * v).collect();
                    out.push((a, shaped(a, da)?));
                }
                if self.wants(b) {
                    let db = dy.data().iter().zip(av).map(|(g, v)| g * v).collect();
                    out.push((b, shaped(b, db)?));
                }
            }
            &Op::AddBias { x, bias } => {
                let width = self.shape(bias)[0];
                let mut db = vec![0.0; width];
                for (i, g) in dy.data().iter().enumerate() {
                    db[i % width] += g;
                }
                out.push((x, dy.clone()));
                out.push((bias, shaped(bias, db)?));
            }
            &Op::Scale { x, s } => {
                let k = self.value(s).item();
                out.push((x, dy.map(|g| g * k)));
                let ds: f64 = dy.data().iter().zip(self.value(x).data()).map(|(g, v)| g * v).sum();
                out.push((s, Tensor::scalar(ds).reshaped(self.shape(s))?));
            }
            &Op::Affine { x, mul } => out.push((x, dy.map(|g| g * mul))),
            &Op::Mse(a, b) => {
                let g = dy.item() * 2.0 / self.value(a).len() as f64;
                let diff: Vec<f64> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(p, q)| g * (p - q))
                    .collect();
                out.push((b, shaped(b, diff.iter().map(|v| -v).collect())?));
                out.push((a, shaped(a, diff)?));
            }
            &Op::L2Norm(x) => {
                let xv = self.value(x);
                let width = *xv.shape().last().expect("rank >= 1");
                let mut dx = vec![0.0; xv.len()];
                for (r, row) in xv.data().chunks(width).enumerate() {
                    let norm = y.data()[r];
                    if norm > 0.0 {
                        let k = dy.data()[r] / norm;
                        for (c, v) in row.iter().enumerate() {
                            dx[r * width + c] = k * v;
                        }
                    }
                }
                out.push((x, shaped(x, dx)?));
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    out.push((x, shaped(x, dy.data()[offset..offset + n].to_vec())?));
                    offset += n;
                }
            }
            &Op::AvgPool2d(x) => {
                let shape = self.shape(x);
                let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let (oh, ow) = (y.shape()[y.rank() - 2], y.shape()[y.rank() - 1]);
                let rb = kernels::pool_bins(h, oh);
                let cb = kernels::pool_bins(w, ow);
                let lead = self.value(x).len() / (h * w);
                let mut dx = vec![0.0; self.value(x).len()];
                for l in 0..lead {
                    for (i, &(r0, r1)) in rb.iter().enumerate() {
                        for (j, &(c0, c1)) in cb.iter().enumerate() {
                            let g = dy.data()[(l * oh + i) * ow + j] / ((r1 - r0) * (c1 - c0)) as f64;
                            for r in r0..r1 {
                                for v in &mut dx[l * h * w + r * w + c0..l * h * w + r * w + c1] {
                                    *v += g;
                                }
                            }
                        }
                    }
                }
                out.push((x, shaped(x, dx)?));
            }
            &Op::Reshape(x) => out.push((x, dy.clone().reshaped(self.shape(x))?)),
            Op::Permute { x, perm } => {
                let (dx, _) = kernels::permute(dy.data(), dy.shape(), &kernels::inverse_perm(perm));
                out.push((*x, shaped(*x, dx)?));
            }
            &Op::Sum(x) => out.push((x, Tensor::full(self.shape(x), dy.item()))),
            &Op::Mean(x) => {
                let n = self.value(x).len() as f64;
                out.push((x, Tensor::full(self.shape(x), dy.item() / n)));
            }
            &Op::MeanAxis { x, axis } => {
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = kernels::axis_split(&shape, axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for k in 0..inner {
                            dx[(o * len + l) * inner + k] = dy.data()[o * inner + k] / len as f64;
                        }
                    }
                }
                out.push((x, shaped(x, dx)?));
            }
            &Op::Custom { x, backward, .. } => {
                let dx = backward(self.value(x), y, dy);
                out.push((x, dx));
            }
        }
        Ok(out)
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
