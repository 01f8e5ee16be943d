//! Dense `f64` tensors with a reverse-mode differentiation record.
//!
//! Every operation that touches a tensor with `requires_grad` appends a node
//! to an implicit computation graph. Nodes are created with strictly
//! increasing ids, so a descending id order over the reachable nodes is a
//! valid reverse topological order and [`Tensor::backward`] visits each node
//! exactly once.
//!
//! Tensors are immutable after construction; only the gradient slot is
//! written, behind a mutex, so frozen models can be shared across threads.

mod gradcheck;
mod nn;
mod ops;
pub(crate) mod shape;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use nn::{Conv2dSpec, PoolSpec};
pub use ops::{sigmoid, silu, sinc, softplus, zoh_coefficient, ZOH_SERIES_THRESHOLD};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Local adjoint rule: receives the output gradient and, per input, whether a
/// gradient is wanted; returns one optional gradient per input.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Recorded {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Option<Recorded>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if let Some(op) = &self.0.op {
            d.field("op", &op.name);
        }
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.field("requires_grad", &self.0.requires_grad).finish()
    }
}

fn check_len(data: &[f64], shape: &[usize]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::Contract(format!(
            "shape {shape:?} holds {n} elements but {} were given",
            data.len()
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Contract(format!(
            "shape {shape:?} has a zero extent"
        )));
    }
    Ok(())
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Recorded>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_len(&data, shape)?;
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_len(&data, shape)?;
        Ok(Self::make(shape.to_vec(), data, true, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::make(vec![], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::make(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::make(shape.to_vec(), vec![v; n], false, None)
    }

    /// Records an operation result. When no input tracks gradients the
    /// adjoint rule is dropped and a plain constant is returned.
    pub(crate) fn from_op<F>(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(|| Recorded {
            name,
            inputs,
            backward: Box::new(backward),
        });
        Self::make(shape, data, requires_grad, op)
    }

    pub fn id(&self) -> u64 {
        self.0.id
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

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Name of the recording operation, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|o| o.name)
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// New trainable leaf with the same shape and the given values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Tensor> {
        check_len(&data, self.shape())?;
        Ok(Self::make(self.0.shape.clone(), data, self.0.requires_grad, None))
    }

    fn accumulate_grad(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// gradient-tracking node reachable from `self`; the record itself is
    /// left intact, so a second call accumulates again.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut nodes: HashMap<u64, Tensor> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.id()) {
                continue;
            }
            if let Some(op) = &t.0.op {
                stack.extend(op.inputs.iter().filter(|i| i.requires_grad()).cloned());
            }
            nodes.insert(t.id(), t);
        }
        let mut order: Vec<u64> = nodes.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for id in order {
            let node = &nodes[&id];
            let Some(g) = pending.remove(&id) else {
                continue;
            };
            if let Some(op) = &node.0.op {
                let needs: Vec<bool> = op.inputs.iter().map(|i| i.requires_grad()).collect();
                let contributions = (op.backward)(&g, &needs);
                debug_assert_eq!(contributions.len(), op.inputs.len(), "{}", op.name);
                for (input, contrib) in op.inputs.iter().zip(contributions) {
                    let Some(c) = contrib else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(c.len(), input.numel(), "{}", op.name);
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), c);
                        }
                    }
                }
            }
            node.accumulate_grad(g);
        }
        Ok(())
    }
}
