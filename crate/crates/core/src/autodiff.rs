//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! topological order. [`Tape::backward`] walks the records once in reverse
//! and returns [`Gradients`] for every leaf that requires a gradient.
//! Trainable weights live outside the tape as [`Parameter`]s; a forward pass
//! registers a snapshot of each one with [`Tape::param`], and
//! [`Parameter::accumulate`] adds the resulting gradient into the
//! parameter's own buffer (`+=`), so several backward passes sum until
//! [`Parameter::zero_grad`] is called.
//!
//! The tape is rebuilt for every forward pass and never shared across
//! threads.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{split_at_axis, strides, Tensor};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug)]
pub struct Parameter<T> {
    id: ParamId,
    value: Tensor<T>,
    grad: Tensor<T>,
    requires_grad: bool,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            id: ParamId::fresh(),
            value,
            grad,
            requires_grad: true,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    /// Add this parameter's gradient from `grads` into its buffer.
    ///
    /// Does nothing when the parameter did not take part in the graph or
    /// has `requires_grad` off.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        if !self.requires_grad {
            return;
        }
        if let Some(g) = grads.params.get(&self.id) {
            for (acc, &x) in self.grad.data_mut().iter_mut().zip(g.data()) {
                *acc += x;
            }
        }
    }

    /// Split borrow used by optimizers.
    pub fn value_and_grad_mut(&mut self) -> (&mut Tensor<T>, &Tensor<T>) {
        (&mut self.value, &self.grad)
    }
}

impl<T: Clone> Clone for Parameter<T> {
    /// Clones get a fresh identity so their gradients never mix with the
    /// original's.
    fn clone(&self) -> Self {
        Self {
            id: ParamId::fresh(),
            value: self.value.clone(),
            grad: self.grad.clone(),
            requires_grad: self.requires_grad,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Selu(Var),
    Recip(Var),
    ScaleBy(Var, Var),
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Permute {
        input: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    L2Norm {
        input: Var,
        axis: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<Var, Tensor<T>>,
    params: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. a leaf created with `requires_grad`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf { param: None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a snapshot of `p` as a leaf.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Leaf { param: Some(p.id) },
            requires_grad: p.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a[..., q] x b[q, r] -> [..., r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shapes("matmul", sa, sb));
        }
        let (q, r) = (sb[0], sb[1]);
        let mut out_shape = sa.to_vec();
        *out_shape.last_mut().unwrap() = r;
        let rows = self.value(a).numel() / q;
        let mut out = vec![T::zero(); rows * r];
        T::gemm(
            rows,
            q,
            r,
            self.value(a).data(),
            (q as isize, 1),
            self.value(b).data(),
            (r as isize, 1),
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x[..., r] + bias[r]`, broadcasting over leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shapes("add_bias", sx, sb));
        }
        let r = sb[0];
        let b = self.value(bias).data();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(r) {
            for (y, &bb) in row.iter_mut().zip(b) {
                *y += bb;
            }
        }
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shapes(op, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(selu);
        self.push(value, Op::Selu(a), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.recip());
        self.push(value, Op::Recip(a), &[a])
    }

    /// Multiply each trailing block of `x` by one entry of `s`, where
    /// `s.shape` is a leading prefix of `x.shape`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss.len() > sx.len() || sx[..ss.len()] != *ss {
            return Err(Error::shapes("scale_by", sx, ss));
        }
        let inner = self.value(x).numel() / self.value(s).numel();
        let mut value = self.value(x).clone();
        for (block, &k) in value.data_mut().chunks_mut(inner).zip(self.value(s).data()) {
            block.iter_mut().for_each(|y| *y *= k);
        }
        Ok(self.push(value, Op::ScaleBy(x, s), &[x, s]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let total: T = v.data().iter().copied().sum();
        let mean = total / T::lit(v.numel() as f64);
        self.push(Tensor::scalar(mean), Op::Mean(a), &[a])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// evaluated as `max(z,0) - z*t + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (z, t) = (self.value(logits), self.value(targets));
        if z.shape() != t.shape() {
            return Err(Error::shapes("bce_with_logits", z.shape(), t.shape()));
        }
        let total: T = z
            .data()
            .iter()
            .zip(t.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / T::lit(z.numel() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits(logits, targets),
            &[logits, targets],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shapes("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&ax| ax < seen.len() && !std::mem::replace(&mut seen[ax], true));
        if !valid {
            return Err(Error::dim(
                "permute",
                format!("{axes:?} is not a permutation of {shape:?}"),
            ));
        }
        let value = permute_tensor(self.value(a), axes);
        Ok(self.push(
            value,
            Op::Permute {
                input: a,
                axes: axes.to_vec(),
            },
            &[a],
        ))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(Error::dim("transpose", format!("rank {rank} < 2")));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Elements `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "slice",
                format!("{start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, size, inner) = split_at_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * size + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(
            value,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            &[a],
        ))
    }

    /// Euclidean norm along `axis`; that axis is removed from the shape.
    pub fn l2_norm(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "l2_norm",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, size, inner) = split_at_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..size {
                let row = &src[(o * size + k) * inner..(o * size + k + 1) * inner];
                for (acc, &x) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += x * x;
                }
            }
        }
        data.iter_mut().for_each(|x| *x = x.sqrt());
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = if out_shape.is_empty() {
            Tensor::scalar(data[0])
        } else {
            Tensor::new(out_shape, data)?
        };
        Ok(self.push(value, Op::L2Norm { input: a, axis }, &[a]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut out = Gradients {
            leaves: HashMap::new(),
            params: HashMap::new(),
        };
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads, &mut out, Var(i));
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
        this: Var,
    ) {
        match &node.op {
            Op::Leaf { param } => match param {
                Some(id) => match out.params.get_mut(id) {
                    Some(acc) => add_into(acc.data_mut(), g.data()),
                    None => {
                        out.params.insert(*id, g);
                    }
                },
                None => {
                    out.leaves.insert(this, g);
                }
            },
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (q, r) = (vb.shape()[0], vb.shape()[1]);
                let rows = va.numel() / q;
                if self.wants(*a) {
                    let ga = grad_slot(grads, *a, va.shape());
                    // dA = dC * B^T
                    T::gemm(
                        rows,
                        r,
                        q,
                        g.data(),
                        (r as isize, 1),
                        vb.data(),
                        (1, r as isize),
                        T::one(),
                        ga,
                    );
                }
                if self.wants(*b) {
                    let gb = grad_slot(grads, *b, vb.shape());
                    // dB = A^T * dC
                    T::gemm(
                        q,
                        rows,
                        r,
                        va.data(),
                        (1, q as isize),
                        g.data(),
                        (r as isize, 1),
                        T::one(),
                        gb,
                    );
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(*bias) {
                    let r = self.shape(*bias)[0];
                    let gb = grad_slot(grads, *bias, self.shape(*bias));
                    for row in g.data().chunks(r) {
                        add_into(gb, row);
                    }
                }
                if self.wants(*x) {
                    self.pass(grads, *x, g);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    add_into(grad_slot(grads, *b, g.shape()), g.data());
                }
                if self.wants(*a) {
                    self.pass(grads, *a, g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    let gb = grad_slot(grads, *b, g.shape());
                    for (acc, &x) in gb.iter_mut().zip(g.data()) {
                        *acc -= x;
                    }
                }
                if self.wants(*a) {
                    self.pass(grads, *a, g);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.pass(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => self.pass(grads, *a, g),
            Op::Selu(a) => {
                let ga = grad_slot(grads, *a, g.shape());
                for ((acc, &up), &x) in ga.iter_mut().zip(g.data()).zip(self.value(*a).data()) {
                    *acc += up * selu_grad(x);
                }
            }
            Op::Recip(a) => {
                let ga = grad_slot(grads, *a, g.shape());
                for ((acc, &up), &y) in ga.iter_mut().zip(g.data()).zip(node.value.data()) {
                    *acc -= up * y * y;
                }
            }
            Op::ScaleBy(x, s) => {
                let (vx, vs) = (self.value(*x), self.value(*s));
                let inner = vx.numel() / vs.numel();
                if self.wants(*s) {
                    let gs = grad_slot(grads, *s, vs.shape());
                    for ((acc, gb), xb) in gs
                        .iter_mut()
                        .zip(g.data().chunks(inner))
                        .zip(vx.data().chunks(inner))
                    {
                        *acc += gb.iter().zip(xb).map(|(&u, &v)| u * v).sum();
                    }
                }
                if self.wants(*x) {
                    let gx = grad_slot(grads, *x, vx.shape());
                    for ((acc, gb), &k) in gx
                        .chunks_mut(inner)
                        .zip(g.data().chunks(inner))
                        .zip(vs.data())
                    {
                        for (a, &u) in acc.iter_mut().zip(gb) {
                            *a += u * k;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let up = g.item();
                grad_slot(grads, *a, self.shape(*a))
                    .iter_mut()
                    .for_each(|x| *x += up);
            }
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).numel() as f64);
                let up = g.item() / n;
                grad_slot(grads, *a, self.shape(*a))
                    .iter_mut()
                    .for_each(|x| *x += up);
            }
            Op::BceWithLogits(logits, targets) => {
                let (vz, vt) = (self.value(*logits), self.value(*targets));
                let scale = g.item() / T::lit(vz.numel() as f64);
                if self.wants(*logits) {
                    let gz = grad_slot(grads, *logits, vz.shape());
                    for ((acc, &z), &t) in gz.iter_mut().zip(vz.data()).zip(vt.data()) {
                        *acc += (sigmoid(z) - t) * scale;
                    }
                }
                if self.wants(*targets) {
                    // d/dt = -z / count
                    let gt = grad_slot(grads, *targets, vt.shape());
                    for (acc, &z) in gt.iter_mut().zip(vz.data()) {
                        *acc -= z * scale;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_at_axis(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.wants(*p) {
                        let gp = grad_slot(grads, *p, self.shape(*p));
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut gp[o * len * inner..(o + 1) * len * inner],
                                &g.data()[src..src + len * inner],
                            );
                        }
                    }
                    offset += len;
                }
            }
            Op::Permute { input, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                self.pass(grads, *input, permute_tensor(&g, &inverse));
            }
            Op::Reshape(a) => {
                let g = g
                    .reshape(self.shape(*a).to_vec())
                    .expect("reshape preserves numel");
                self.pass(grads, *a, g);
            }
            Op::Slice { input, axis, start } => {
                let shape = self.shape(*input);
                let (outer, size, inner) = split_at_axis(shape, *axis);
                let len = g.shape()[*axis];
                let ga = grad_slot(grads, *input, shape);
                for o in 0..outer {
                    let dst = (o * size + start) * inner;
                    add_into(
                        &mut ga[dst..dst + len * inner],
                        &g.data()[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
            Op::L2Norm { input, axis } => {
                let vx = self.value(*input);
                let (outer, size, inner) = split_at_axis(vx.shape(), *axis);
                let norms = node.value.data();
                let ga = grad_slot(grads, *input, vx.shape());
                for o in 0..outer {
                    for k in 0..size {
                        for i in 0..inner {
                            let norm = norms[o * inner + i];
                            if norm > T::zero() {
                                let idx = (o * size + k) * inner + i;
                                ga[idx] += g.data()[o * inner + i] * vx.data()[idx] / norm;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Hand `g` to `target`, moving it into an empty slot when possible.
    fn pass(&self, grads: &mut [Option<Tensor<T>>], target: Var, g: Tensor<T>) {
        if !self.wants(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => add_into(acc.data_mut(), g.data()),
            slot @ None => {
                let shape = self.shape(target);
                *slot = Some(if g.shape() == shape {
                    g
                } else {
                    g.reshape(shape.to_vec()).expect("gradient numel matches")
                });
            }
        }
    }
}

fn grad_slot<'g, T: Real>(
    grads: &'g mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'g mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
        .data_mut()
}

fn add_into<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub(crate) fn permute_tensor<T: Real>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let src = t.data();
    let mut data = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        data.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, data).expect("permutation preserves numel")
}

#[inline]
pub fn selu<T: Real>(x: T) -> T {
    let lambda = T::lit(SELU_LAMBDA);
    if x > T::zero() {
        lambda * x
    } else {
        lambda * T::lit(SELU_ALPHA) * x.exp_m1()
    }
}

#[inline]
fn selu_grad<T: Real>(x: T) -> T {
    let lambda = T::lit(SELU_LAMBDA);
    if x > T::zero() {
        lambda
    } else {
        lambda * T::lit(SELU_ALPHA) * x.exp()
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
