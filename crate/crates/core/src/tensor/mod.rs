//! Minimal reverse-mode differentiable tensor engine.
//!
//! A [`Tensor`] is an immutable, reference-counted node holding row-major
//! `f64` data. Applying a [`Primitive`] to inputs that require grad records
//! the primitive and its parents on the output, so [`Tensor::backward`] can
//! walk the provenance graph in reverse creation order.
//!
//! Parameters are leaves created with [`Tensor::param`]. Gradients
//! accumulate across `backward` calls until [`Tensor::zero_grad`].

pub mod dlif;
pub mod gradcheck;
pub(crate) mod kernels;
mod primitive;

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

pub use primitive::{Primitive, PrimitiveKind};

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

struct Record {
    op: Primitive,
    parents: Vec<Tensor>,
    aux: Vec<f64>,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    record: Option<Record>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.record.as_ref().map(|r| r.op.kind()))
            .finish()
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("dimensions must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(Tensor(Rc::new(Node { id: next_id(), shape, data, requires_grad, grad: RefCell::new(None), record: None })))
    }

    /// Constant leaf that never receives gradient.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(&[1], vec![v]).expect("scalar shape")
    }

    /// Constant copy of this tensor with no provenance.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false).expect("valid shape")
    }

    /// Trainable leaf copy of this tensor's values.
    pub fn to_param(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), true).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.record.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<f64>>> {
        let g = self.0.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().expect("checked")))
        } else {
            None
        }
    }

    pub fn grad_vec(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Identity of the underlying node.
    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Populates `grad` on every ancestor that requires grad with
    /// `d(self)/d(ancestor)`, accumulating into existing buffers.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(Error::MissingProvenance);
        }

        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.0.id);
        while let Some(t) = stack.pop() {
            if let Some(rec) = &t.0.record {
                for p in &rec.parents {
                    if p.requires_grad() && seen.insert(p.0.id) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        // Parents are always created before their children.
        order.sort_unstable_by_key(|e| std::cmp::Reverse(e.0.id));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for t in order {
            let Some(g) = pending.remove(&t.0.id) else { continue };
            if let Some(rec) = &t.0.record {
                let grads = rec.op.vjp(&rec.parents, &t.0.data, &rec.aux, &g);
                for (p, pg) in rec.parents.iter().zip(grads) {
                    let Some(pg) = pg else { continue };
                    debug_assert_eq!(pg.len(), p.numel(), "{:?} returned a gradient of the wrong size", rec.op);
                    if !p.requires_grad() {
                        continue;
                    }
                    match pending.get_mut(&p.0.id) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.0.id, pg);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Applies `op` to `inputs`, recording provenance when any input requires
/// grad.
pub fn apply_primitive(op: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let kind = op.kind().name();
    for (i, t) in inputs.iter().enumerate() {
        if t.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { kind, input: i });
        }
    }
    let out = op.forward(inputs)?;
    let requires_grad = inputs.iter().any(|t| t.requires_grad());
    let record =
        requires_grad.then(|| Record { op, parents: inputs.iter().map(|t| (*t).clone()).collect(), aux: out.aux });
    Ok(Tensor(Rc::new(Node {
        id: next_id(),
        shape: out.shape,
        data: out.data,
        requires_grad,
        grad: RefCell::new(None),
        record,
    })))
}

impl Tensor {
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
        let op = Primitive::Conv2d { stride, padding };
        match bias {
            Some(b) => apply_primitive(op, &[self, weight, b]),
            None => apply_primitive(op, &[self, weight]),
        }
    }

    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        match bias {
            Some(b) => apply_primitive(Primitive::Linear, &[self, weight, b]),
            None => apply_primitive(Primitive::Linear, &[self, weight]),
        }
    }

    pub fn relu(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Relu, &[self])
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Sigmoid, &[self])
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        apply_primitive(Primitive::Softmax { axis }, &[self])
    }

    pub fn l2_normalize(&self, axis: usize) -> Result<Tensor> {
        apply_primitive(Primitive::L2Normalize { axis }, &[self])
    }

    pub fn channel_mean(&self) -> Result<Tensor> {
        apply_primitive(Primitive::ChannelMean, &[self])
    }

    pub fn channel_std(&self, eps: f64) -> Result<Tensor> {
        apply_primitive(Primitive::ChannelStd { eps }, &[self])
    }

    pub fn global_avg_pool(&self) -> Result<Tensor> {
        apply_primitive(Primitive::GlobalAvgPool, &[self])
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        apply_primitive(Primitive::Concat { axis }, parts)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        apply_primitive(Primitive::Add, &[self, other])
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        apply_primitive(Primitive::Mul, &[self, other])
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        apply_primitive(Primitive::Scale { factor, offset: 0.0 }, &[self])
    }

    /// `factor * self + offset`
    pub fn affine(&self, factor: f64, offset: f64) -> Result<Tensor> {
        apply_primitive(Primitive::Scale { factor, offset }, &[self])
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0)?)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        apply_primitive(Primitive::Matmul, &[self, other])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Transpose, &[self])
    }

    pub fn sum(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Sum, &[self])
    }

    pub fn mean(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Mean, &[self])
    }

    pub fn square(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Square, &[self])
    }

    pub fn log(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Log, &[self])
    }

    pub fn exp(&self) -> Result<Tensor> {
        apply_primitive(Primitive::Exp, &[self])
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        apply_primitive(Primitive::Slice { axis, start, len }, &[self])
    }

    pub fn broadcast_channel(&self, height: usize, width: usize) -> Result<Tensor> {
        apply_primitive(Primitive::BroadcastChannel { height, width }, &[self])
    }

    /// Reorders rows (axis 0) so that output row `i` is input row `index[i]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        let rows = self.shape()[0];
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("slice", format!("row {bad} out of range for {rows} rows")));
        }
        if index.iter().enumerate().all(|(i, &j)| i == j) && index.len() == rows {
            return Ok(self.clone());
        }
        let parts = index.iter().map(|&i| self.slice(0, i, 1)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat(&refs, 0)
    }
}
