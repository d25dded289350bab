use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Result, TensorError};
use crate::precision::round_slice;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule of a recorded op: maps the output gradient to one optional
/// gradient per parent. `needs[i]` tells whether parent `i` wants one.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct GradFn {
    pub(crate) op: &'static str,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Dense row-major tensor. Cloning is cheap (shared, immutable storage).
///
/// Every op whose inputs require gradients records itself on the implicit
/// tape: nodes carry a creation sequence number, and [`Tensor::backward`]
/// replays the reachable ops in reverse creation order.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_node(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    /// Creates a constant (no gradient) tensor.
    pub fn new(shape: &[usize], mut data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "extents must be positive".into(),
            });
        }
        if numel_of(shape) != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("expected {} elements, got {}", numel_of(shape), data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("Tensor::new"));
        }
        round_slice(&mut data);
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f64).collect())
    }

    /// Creates a leaf that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Self::new(shape, data)?.with_grad())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::new(shape, vec![value; numel_of(shape)]).expect("full: invalid shape or value")
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    /// Identity matrix `n × n`.
    pub fn eye(n: usize) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        Self::new(&[n, n], d).expect("eye")
    }

    /// Returns a fresh leaf sharing these values and tracking gradients.
    pub fn with_grad(&self) -> Self {
        Self::from_node(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    /// Returns a constant copy cut from the tape.
    pub fn detach(&self) -> Self {
        Self::from_node(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Builds an op output. Parents that do not require gradients are not
    /// recorded; if none do, the output is a plain constant.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        mut data: Vec<f64>,
        parents: &[&Tensor],
        backward: BackwardFn,
    ) -> Result<Self> {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}: bad output length");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(op));
        }
        round_slice(&mut data);
        let tracked = parents.iter().any(|p| p.requires_grad());
        let grad_fn = tracked.then(|| GradFn {
            op,
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward,
        });
        Ok(Self::from_node(shape, data, tracked, grad_fn))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.0.data.iter().map(|&v| v as f32).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the op that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// Tape sequence number.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_tensor(&self) -> Option<Tensor> {
        self.grad()
            .map(|g| Tensor::from_node(self.0.shape.clone(), g, false, None))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Reverse-mode pass from a scalar loss. Every reachable leaf created
    /// with gradients receives the sum of its path gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(invalid("backward", "loss does not depend on any tracked tensor"));
        }
        let tape = self.reachable_tape();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for node in tape.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&g) {
                                *a += v;
                            }
                            round_slice(acc);
                        }
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let needs: Vec<bool> = gf.parents.iter().map(|p| p.requires_grad()).collect();
                    let parent_grads = (gf.backward)(&g, &needs);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for ((p, pg), need) in gf.parents.iter().zip(parent_grads).zip(needs) {
                        let (Some(mut pg), true) = (pg, need) else {
                            continue;
                        };
                        debug_assert_eq!(pg.len(), p.numel(), "{}: grad length", gf.op);
                        if pg.iter().any(|v| !v.is_finite()) {
                            return Err(TensorError::NonFinite(gf.op));
                        }
                        round_slice(&mut pg);
                        match grads.get_mut(&p.id()) {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(&pg) {
                                    *a += v;
                                }
                                round_slice(acc);
                            }
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Tracked nodes reachable from `self`, ordered by creation.
    fn reachable_tape(&self) -> Vec<Tensor> {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        let mut out = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.parents.iter().cloned());
            }
            out.push(t);
        }
        out.sort_by_key(|t| t.id());
        out
    }

    /// Number of recorded ops reachable from this tensor.
    pub fn tape_len(&self) -> usize {
        self.reachable_tape().iter().filter(|t| !t.is_leaf()).count()
    }
}
