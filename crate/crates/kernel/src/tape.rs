//! Wengert-list reverse-mode differentiation over [`DenseArray`] values.
//!
//! Every operation evaluates eagerly and appends a node to the tape. A call
//! to [`Tape::backward`] walks the list in reverse and returns the gradient
//! of a scalar output with respect to every node that depends on a trainable
//! leaf. Parameters enter the tape through [`Tape::param`], which records the
//! store name so gradients can be written back with
//! [`Tape::accumulate_param_grads`].
//!
//! Binary elementwise operations broadcast numpy-style: shapes are aligned
//! from the right and a dimension of size 1 stretches to match.

use std::collections::BTreeMap;

use crate::array::{numel, strides, DenseArray};
use crate::error::{KernelError, Result};
use crate::params::{Init, ParameterStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    IndexAxis0(Var, usize),
    Stack0(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SumAll(Var),
    SumAxis(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    /// Cached `[r | z | n]` activations per row.
    GruGates { x: Var, hp: Var, h: Var, gates: DenseArray },
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseArray,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseArray> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
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

    fn push(&mut self, value: DenseArray, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not tied to a parameter store.
    pub fn variable(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Detached copy of `v`: same value, no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Loads parameter `name`, initializing it in `store` if absent. Repeated
    /// calls with the same name return the same tape node.
    pub fn param(
        &mut self,
        store: &mut ParameterStore,
        name: &str,
        shape: &[usize],
        init: Init,
    ) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            if self.shape(v) != shape {
                return Err(KernelError::dim(
                    name,
                    format!("parameter has shape {:?}, requested {:?}", self.shape(v), shape),
                ));
            }
            return Ok(v);
        }
        let value = store.get_or_init(name, shape, init)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Names and nodes of every parameter loaded on this tape.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    // ---------------------------------------------------------------- binary

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x + y, "add")?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x - y, "sub")?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x * y, "mul")?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), |x, y| x / y, "div")?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Div(a, b), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    // ----------------------------------------------------------------- unary

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.needs(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    // ----------------------------------------------------------------- shape

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if perm.len() != src.ndim() || sorted.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(KernelError::dim(
                "permute",
                format!("{:?} is not a permutation of {} axes", perm, src.ndim()),
            ));
        }
        let out = permute_array(src, perm);
        let ng = self.needs(a);
        Ok(self.push(out, Op::Permute(a, perm.to_vec()), ng))
    }

    /// Transpose of a 2-D value.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.permute(a, &[1, 0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| KernelError::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(KernelError::dim("concat", format!("axis {axis} on rank {}", base.len())));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(KernelError::dim(
                    "concat",
                    format!("{:?} incompatible with {:?} along axis {axis}", s, base),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        let out = DenseArray::new(out_shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), ng))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(KernelError::dim(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, shape),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&src.data()[from..from + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = DenseArray::new(out_shape, data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Slice { src: a, axis, start }, ng))
    }

    /// `a[i]`, dropping the leading axis.
    pub fn index_axis0(&mut self, a: Var, i: usize) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape();
        if shape.is_empty() || i >= shape[0] {
            return Err(KernelError::dim("index_axis0", format!("{i} of {:?}", shape)));
        }
        let inner: usize = shape[1..].iter().product();
        let out = DenseArray::new(shape[1..].to_vec(), src.data()[i * inner..(i + 1) * inner].to_vec())?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::IndexAxis0(a, i), ng))
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| KernelError::dim("stack0", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        let mut data = Vec::with_capacity(numel(&base) * parts.len());
        for &p in parts {
            if self.shape(p) != base.as_slice() {
                return Err(KernelError::dim("stack0", format!("{:?} vs {:?}", self.shape(p), base)));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&base);
        let ng = parts.iter().any(|&p| self.needs(p));
        let out = DenseArray::new(shape, data)?;
        Ok(self.push(out, Op::Stack0(parts.to_vec()), ng))
    }

    /// Selects leading-axis rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape();
        if shape.is_empty() {
            return Err(KernelError::dim("gather_rows", "scalar input"));
        }
        let inner: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &r in idx {
            if r >= shape[0] {
                return Err(KernelError::dim("gather_rows", format!("row {r} of {}", shape[0])));
            }
            data.extend_from_slice(&src.data()[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = idx.len();
        let out = DenseArray::new(out_shape, data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Sums leading-axis rows into `segments` buckets: `out[seg[r]] += a[r]`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape();
        if shape.is_empty() || shape[0] != seg.len() {
            return Err(KernelError::dim(
                "segment_sum",
                format!("{} segment ids for {:?}", seg.len(), shape),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let mut data = vec![0.0; segments * inner];
        for (r, &s) in seg.iter().enumerate() {
            if s >= segments {
                return Err(KernelError::dim("segment_sum", format!("segment {s} of {segments}")));
            }
            let row = &src.data()[r * inner..(r + 1) * inner];
            for (o, x) in data[s * inner..(s + 1) * inner].iter_mut().zip(row) {
                *o += x;
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = segments;
        let out = DenseArray::new(out_shape, data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SegmentSum(a, seg.to_vec()), ng))
    }

    // ------------------------------------------------------------ reductions

    pub fn sum(&mut self, a: Var) -> Var {
        let out = DenseArray::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape();
        if axis >= shape.len() {
            return Err(KernelError::dim("sum_axis", format!("axis {axis} of {:?}", shape)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let from = (o * n + k) * inner;
                for (d, x) in data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(&src.data()[from..from + inner])
                {
                    *d += x;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let out = DenseArray::new(out_shape, data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SumAxis(a, axis), ng))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = softmax_array(self.value(a), axis, false)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Softmax(a, axis), ng))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = softmax_array(self.value(a), axis, true)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::LogSoftmax(a, axis), ng))
    }

    /// Fused GRU update `h' = n + z·(h − n)` with `r = σ(x_r + h_r)`,
    /// `z = σ(x_z + h_z)` and `n = tanh(x_n + r·h_n)`. `x_proj` and `h_proj`
    /// are `[B × 3H]` pre-activations in `[r | z | n]` order; `h` is `[B × H]`.
    /// Values and gradients match the same update built from primitive ops.
    pub fn gru_gates(&mut self, x_proj: Var, h_proj: Var, h: Var) -> Result<Var> {
        let s = self.shape(h).to_vec();
        let expected = [s.first().copied().unwrap_or(0), 3 * s.get(1).copied().unwrap_or(0)];
        if s.len() != 2 || self.shape(x_proj) != expected || self.shape(h_proj) != expected {
            return Err(KernelError::dim(
                "gru_gates",
                format!("x {:?}, h_proj {:?}, h {:?}", self.shape(x_proj), self.shape(h_proj), s),
            ));
        }
        let (b, hd) = (s[0], s[1]);
        let (xv, hv, prev) = (self.value(x_proj).data(), self.value(h_proj).data(), self.value(h).data());
        let mut gates = vec![0.0; b * 3 * hd];
        let mut out = vec![0.0; b * hd];
        for i in 0..b {
            let (xr, hr, gr) = (&xv[i * 3 * hd..][..3 * hd], &hv[i * 3 * hd..][..3 * hd], &mut gates[i * 3 * hd..][..3 * hd]);
            for j in 0..hd {
                let r = sigmoid(xr[j] + hr[j]);
                let z = sigmoid(xr[hd + j] + hr[hd + j]);
                let n = (xr[2 * hd + j] + r * hr[2 * hd + j]).tanh();
                (gr[j], gr[hd + j], gr[2 * hd + j]) = (r, z, n);
                out[i * hd + j] = n + z * (prev[i * hd + j] - n);
            }
        }
        let ng = self.needs(x_proj) || self.needs(h_proj) || self.needs(h);
        let gates = DenseArray::new(vec![b, 3 * hd], gates)?;
        let op = Op::GruGates {
            x: x_proj,
            hp: h_proj,
            h,
            gates,
        };
        Ok(self.push(DenseArray::new(vec![b, hd], out)?, op, ng))
    }

    // -------------------------------------------------------------- backward

    /// Reverse sweep from `out`, seeded with ones of `out`'s shape (so a
    /// non-scalar output is differentiated as the sum of its entries).
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<DenseArray>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(DenseArray::ones(self.shape(out)));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Adds the gradient of every parameter loaded on this tape into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParameterStore) {
        for (name, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(name, g);
            }
        }
    }

    /// Gradient buffer of `v`, created as zeros on first use; `None` when `v`
    /// needs no gradient.
    fn accumulator<'g>(&self, grads: &'g mut [Option<DenseArray>], v: Var) -> Option<&'g mut DenseArray> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| DenseArray::zeros(self.shape(v))))
    }

    /// Adds `sign * g`, summed over broadcast axes, into the gradient of `v`.
    fn send_reduced(&self, grads: &mut [Option<DenseArray>], v: Var, g: &DenseArray, sign: f64) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let shape = self.shape(v);
        if shape == g.shape() {
            match &mut grads[v.0] {
                Some(acc) => {
                    for (o, x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += sign * x;
                    }
                }
                slot @ None => *slot = Some(if sign == 1.0 { g.clone() } else { g.scale(sign) }),
            }
            return;
        }
        let width = *g.shape().last().unwrap_or(&1);
        let acc = grads[v.0].get_or_insert_with(|| DenseArray::zeros(shape));
        // Row vector broadcast over all leading axes, as for biases.
        if acc.len() == width && shape.last() == Some(&width) {
            let d = acc.data_mut();
            for row in g.data().chunks_exact(width.max(1)) {
                for (o, x) in d.iter_mut().zip(row) {
                    *o += sign * x;
                }
            }
            return;
        }
        let r = reduce_to(g, shape);
        for (o, x) in acc.data_mut().iter_mut().zip(r.data()) {
            *o += sign * x;
        }
    }

    fn propagate(&self, i: usize, g: &DenseArray, grads: &mut [Option<DenseArray>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let send = |grads: &mut [Option<DenseArray>], v: Var, d: DenseArray| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send_reduced(grads, *a, g, 1.0);
                self.send_reduced(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.send_reduced(grads, *a, g, 1.0);
                self.send_reduced(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = broadcast_binary(g, vb, |x, y| x * y, "mul'").expect("shapes fixed");
                    self.send_reduced(grads, *a, &d, 1.0);
                }
                if self.needs(*b) {
                    let d = broadcast_binary(g, va, |x, y| x * y, "mul'").expect("shapes fixed");
                    self.send_reduced(grads, *b, &d, 1.0);
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if self.needs(*a) {
                    let d = broadcast_binary(g, vb, |x, y| x / y, "div'").expect("shapes fixed");
                    self.send_reduced(grads, *a, &d, 1.0);
                }
                if self.needs(*b) {
                    // d/db (a/b) = -(a/b)/b = -y/b
                    let gy = g.zip_map(y, |x, q| x * q).expect("same shape");
                    let d = broadcast_binary(&gy, vb, |x, q| -x / q, "div'").expect("shapes fixed");
                    self.send_reduced(grads, *b, &d, 1.0);
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // Accumulate straight into the existing gradient (beta = 1).
                if let Some(d) = self.accumulator(grads, *a) {
                    crate::array::gemm(m, n, k, g.data(), false, vb.data(), true, d.data_mut(), 1.0);
                }
                if let Some(d) = self.accumulator(grads, *b) {
                    crate::array::gemm(k, m, n, va.data(), true, g.data(), false, d.data_mut(), 1.0);
                }
            }
            Op::Scale(a, c) => send(grads, *a, g.scale(*c)),
            Op::AddScalar(a) => send(grads, *a, g.clone()),
            Op::Tanh(a) => send(grads, *a, g.zip_map(y, |d, t| d * (1.0 - t * t)).expect("shape")),
            Op::Sigmoid(a) => send(grads, *a, g.zip_map(y, |d, s| d * s * (1.0 - s)).expect("shape")),
            Op::Relu(a) => {
                let x = self.value(*a);
                send(grads, *a, g.zip_map(x, |d, x| if x > 0.0 { d } else { 0.0 }).expect("shape"));
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                send(grads, *a, g.zip_map(x, |d, x| d * sigmoid(x)).expect("shape"));
            }
            Op::Exp(a) => send(grads, *a, g.zip_map(y, |d, e| d * e).expect("shape")),
            Op::Ln(a) => {
                let x = self.value(*a);
                send(grads, *a, g.zip_map(x, |d, x| d / x).expect("shape"));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                send(grads, *a, g.zip_map(x, |d, x| 2.0 * d * x).expect("shape"));
            }
            Op::Reshape(a) => send(grads, *a, g.reshape(self.shape(*a)).expect("shape")),
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(grads, *a, permute_array(g, &inv));
            }
            Op::Concat(parts, axis) => {
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let block = ps[*axis] * inner;
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let from = o * total + offset;
                            d.extend_from_slice(&g.data()[from..from + block]);
                        }
                        send(grads, p, DenseArray::new(ps.to_vec(), d).expect("shape"));
                    }
                    offset += block;
                }
            }
            Op::Slice { src, axis, start } => {
                let ss = self.shape(*src);
                let outer: usize = ss[..*axis].iter().product();
                let inner: usize = ss[*axis + 1..].iter().product();
                let (n, len) = (ss[*axis], y.shape()[*axis]);
                if let Some(d) = self.accumulator(grads, *src) {
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        let from = o * len * inner;
                        add_into(&mut d.data_mut()[to..to + len * inner], &g.data()[from..from + len * inner]);
                    }
                }
            }
            Op::IndexAxis0(a, i) => {
                let inner = g.len();
                if let Some(d) = self.accumulator(grads, *a) {
                    add_into(&mut d.data_mut()[i * inner..(i + 1) * inner], g.data());
                }
            }
            Op::Stack0(parts) => {
                let inner = g.len() / parts.len();
                for (k, &p) in parts.iter().enumerate() {
                    let d = DenseArray::new(
                        self.shape(p).to_vec(),
                        g.data()[k * inner..(k + 1) * inner].to_vec(),
                    )
                    .expect("shape");
                    send(grads, p, d);
                }
            }
            Op::GatherRows(a, idx) => {
                let inner: usize = self.shape(*a)[1..].iter().product();
                if let Some(d) = self.accumulator(grads, *a) {
                    for (r, &src_row) in idx.iter().enumerate() {
                        let row = &g.data()[r * inner..(r + 1) * inner];
                        add_into(&mut d.data_mut()[src_row * inner..(src_row + 1) * inner], row);
                    }
                }
            }
            Op::SegmentSum(a, seg) => {
                let sa = self.shape(*a);
                let inner: usize = sa[1..].iter().product();
                let mut d = Vec::with_capacity(seg.len() * inner);
                for &s in seg {
                    d.extend_from_slice(&g.data()[s * inner..(s + 1) * inner]);
                }
                send(grads, *a, DenseArray::new(sa.to_vec(), d).expect("shape"));
            }
            Op::SumAll(a) => send(grads, *a, DenseArray::full(self.shape(*a), g.item())),
            Op::SumAxis(a, axis) => {
                let sa = self.shape(*a);
                let outer: usize = sa[..*axis].iter().product();
                let inner: usize = sa[*axis + 1..].iter().product();
                let n = sa[*axis];
                let mut d = Vec::with_capacity(numel(sa));
                for o in 0..outer {
                    for _ in 0..n {
                        d.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                send(grads, *a, DenseArray::new(sa.to_vec(), d).expect("shape"));
            }
            Op::Softmax(a, axis) => {
                // dx = y * (g - sum(g*y))
                let d = along_axis(y, g, *axis, |ys, gs, out| {
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for ((o, y), g) in out.iter_mut().zip(ys).zip(gs) {
                        *o = y * (g - dot);
                    }
                });
                send(grads, *a, d);
            }
            Op::LogSoftmax(a, axis) => {
                // dx = g - softmax * sum(g)
                let d = along_axis(y, g, *axis, |ys, gs, out| {
                    let total: f64 = gs.iter().sum();
                    for ((o, y), g) in out.iter_mut().zip(ys).zip(gs) {
                        *o = g - y.exp() * total;
                    }
                });
                send(grads, *a, d);
            }
            Op::GruGates { x, hp, h, gates } => {
                let (b, hd) = (y.shape()[0], y.shape()[1]);
                let (hv, prev, gv, gd) = (self.value(*hp).data(), self.value(*h).data(), gates.data(), g.data());
                let mut dx = vec![0.0; b * 3 * hd];
                let mut dhp = vec![0.0; b * 3 * hd];
                let mut dh = vec![0.0; b * hd];
                for i in 0..b {
                    let row = i * 3 * hd;
                    for j in 0..hd {
                        let (r, z, n) = (gv[row + j], gv[row + hd + j], gv[row + 2 * hd + j]);
                        let go = gd[i * hd + j];
                        let dn = go - go * z;
                        let da_n = dn * (1.0 - n * n);
                        let da_r = da_n * hv[row + 2 * hd + j] * r * (1.0 - r);
                        let da_z = go * (prev[i * hd + j] - n) * z * (1.0 - z);
                        dh[i * hd + j] = go * z;
                        (dx[row + j], dx[row + hd + j], dx[row + 2 * hd + j]) = (da_r, da_z, da_n);
                        (dhp[row + j], dhp[row + hd + j], dhp[row + 2 * hd + j]) = (da_r, da_z, da_n * r);
                    }
                }
                let shape3 = vec![b, 3 * hd];
                send(grads, *x, DenseArray::new(shape3.clone(), dx).expect("shape"));
                send(grads, *hp, DenseArray::new(shape3, dhp).expect("shape"));
                send(grads, *h, DenseArray::new(vec![b, hd], dh).expect("shape"));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize], i: usize| {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    (0..rank)
        .map(|i| {
            let (x, y) = (pad(a, i), pad(b, i));
            if x == y || y == 1 {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else {
                None
            }
        })
        .collect()
}

/// Strides of `src` viewed inside `out_shape`, zero on broadcast axes.
fn broadcast_strides(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let off = out_shape.len() - src.len();
    let st = strides(src);
    (0..out_shape.len())
        .map(|i| {
            if i < off || src[i - off] == 1 {
                0
            } else {
                st[i - off]
            }
        })
        .collect()
}

fn broadcast_binary(
    a: &DenseArray,
    b: &DenseArray,
    f: impl Fn(f64, f64) -> f64,
    ctx: &str,
) -> Result<DenseArray> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return DenseArray::new(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| KernelError::dim(ctx, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())))?;
    let n = numel(&out_shape);
    let (sa, sb) = (broadcast_strides(a.shape(), &out_shape), broadcast_strides(b.shape(), &out_shape));
    let (da, db) = (a.data(), b.data());
    let mut data = Vec::with_capacity(n);
    let rank = out_shape.len();
    // Fast path: b is a single trailing-row vector broadcast over the rest.
    let last = *out_shape.last().unwrap_or(&1);
    if rank >= 1 && b.len() == last && sb[rank - 1] == 1 && sb[..rank - 1].iter().all(|&s| s == 0) && a.shape() == out_shape.as_slice() {
        for (i, &x) in da.iter().enumerate() {
            data.push(f(x, db[i % last]));
        }
        return DenseArray::new(out_shape, data);
    }
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        data.push(f(da[oa], db[ob]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
    DenseArray::new(out_shape, data)
}

/// Sums `g` over the axes along which `shape` was broadcast.
fn reduce_to(g: &DenseArray, shape: &[usize]) -> DenseArray {
    if g.shape() == shape {
        return g.clone();
    }
    let out_shape = g.shape();
    let st = broadcast_strides(shape, out_shape);
    let mut acc = DenseArray::zeros(shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let data = acc.data_mut();
    for &x in g.data() {
        data[off] += x;
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= st[d] * idx[d];
            idx[d] = 0;
        }
    }
    acc
}

fn permute_array(src: &DenseArray, perm: &[usize]) -> DenseArray {
    let in_shape = src.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let walk: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = src.len();
    let rank = out_shape.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        data.push(src.data()[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += walk[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= walk[d] * idx[d];
            idx[d] = 0;
        }
    }
    DenseArray::new(out_shape, data).expect("permutation preserves size")
}

/// Applies `f(y_lane, g_lane, out_lane)` to every 1-D lane along `axis`.
fn along_axis(
    y: &DenseArray,
    g: &DenseArray,
    axis: usize,
    f: impl Fn(&[f64], &[f64], &mut [f64]),
) -> DenseArray {
    let shape = y.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = DenseArray::zeros(shape);
    let (mut ys, mut gs, mut os) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for o in 0..outer {
        for i in 0..inner {
            for k in 0..n {
                let off = (o * n + k) * inner + i;
                ys[k] = y.data()[off];
                gs[k] = g.data()[off];
            }
            f(&ys, &gs, &mut os);
            for (k, v) in os.iter().enumerate() {
                out.data_mut()[(o * n + k) * inner + i] = *v;
            }
        }
    }
    out
}

pub(crate) fn softmax_array(x: &DenseArray, axis: usize, log: bool) -> Result<DenseArray> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(KernelError::dim("softmax", format!("axis {axis} of {:?}", shape)));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = DenseArray::zeros(shape);
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| x.data()[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..n).map(|k| (x.data()[at(k)] - max).exp()).sum();
            let log_total = total.ln();
            for k in 0..n {
                let z = x.data()[at(k)] - max;
                out.data_mut()[at(k)] = if log { z - log_total } else { z.exp() / total };
            }
        }
    }
    Ok(out)
}
