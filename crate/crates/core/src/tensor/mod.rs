//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable once created (the optimizer mutates leaf values
//! between steps, never inside a graph); every operation records its inputs
//! and a backprop closure, and `backward` replays the recorded operations in
//! reverse execution order. Graphs are rebuilt every step and live on a
//! single thread.

mod adam;
mod conv;
mod ops;

pub use adam::{Adam, AdamConfig, Param};

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackpropFn = Box<dyn Fn(&[f64])>;

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backprop: Option<BackpropFn>,
    backward_done: Cell<bool>,
}

/// A dense N-dimensional array of f64 (up to 4 axes) participating in a
/// recorded computation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if shape.len() > 4 {
            return Err(Error::shape(
                "from_vec",
                format!("at most 4 axes supported, got {}", shape.len()),
            ));
        }
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(Error::shape(
                "from_vec",
                format!(
                    "shape {:?} implies {} values, got {}",
                    shape,
                    count,
                    values.len()
                ),
            ));
        }
        Ok(Tensor::leaf(shape.to_vec(), values, requires_grad))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![v], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![0.0; shape.iter().product()], false)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![v; shape.iter().product()], false)
    }

    pub(crate) fn leaf(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backprop: None,
                backward_done: Cell::new(false),
            }),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backprop: BackpropFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backprop: if requires_grad { Some(backprop) } else { None },
                backward_done: Cell::new(false),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Snapshot of the values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.inner.values.borrow()[0]
    }

    /// Snapshot of the gradient, if one was populated by `backward`.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
        self.inner.backward_done.set(false);
    }

    /// Overwrite leaf values in place. Used by the optimizer between steps;
    /// never call on a tensor that is part of a live graph.
    pub(crate) fn set_values(&self, new: &[f64]) {
        let mut v = self.inner.values.borrow_mut();
        debug_assert_eq!(v.len(), new.len());
        v.copy_from_slice(new);
    }

    pub(crate) fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.values.borrow())
    }

    pub(crate) fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.values.borrow_mut());
    }

    /// Constant copy of this tensor, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.inner.shape.clone(), self.to_vec(), false)
    }

    fn accumulate_grad(&self, delta: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable tensor with `requires_grad`. Each node is visited exactly
    /// once, in reverse execution order.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.inner.shape
            )));
        }
        if self.inner.backward_done.get() {
            return Err(Error::Autodiff(
                "backward already ran on this graph; zero gradients and rebuild it".into(),
            ));
        }
        if !self.inner.requires_grad {
            return Err(Error::Autodiff(
                "loss does not depend on any tensor with requires_grad".into(),
            ));
        }
        self.inner.backward_done.set(true);

        // Node ids increase monotonically at creation and operations always
        // reference earlier tensors, so descending id order is reverse
        // execution order.
        let mut order = trace(self);
        order.sort_by(|a, b| b.inner.id.cmp(&a.inner.id));

        self.accumulate_grad(&[1.0]);
        for node in &order {
            if let Some(backprop) = &node.inner.backprop {
                let grad = node
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .expect("reachable node visited before its gradient arrived");
                backprop(&grad);
            }
        }
        Ok(())
    }
}

/// Collect the recorded operations reachable from `root` through
/// gradient-requiring tensors. The returned set, ordered by id, is the
/// execution-order trace of the graph.
fn trace(root: &Tensor) -> Vec<Tensor> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut stack = vec![root.clone()];
    while let Some(t) = stack.pop() {
        if !t.inner.requires_grad || !seen.insert(t.inner.id) {
            continue;
        }
        for p in &t.inner.parents {
            stack.push(p.clone());
        }
        out.push(t);
    }
    out
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![1.0; 5], false).is_err());
    }

    #[test]
    fn from_vec_rejects_five_axes() {
        assert!(Tensor::from_vec(&[1, 1, 1, 1, 1], vec![1.0], false).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0], true).unwrap();
        assert!(x.backward().is_err());
    }

    #[test]
    fn backward_rejects_double_call() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0], true).unwrap();
        let loss = x.mean_all().unwrap();
        loss.backward().unwrap();
        let err = loss.backward().unwrap_err();
        assert!(err.to_string().contains("already ran"));
    }

    #[test]
    fn constant_gets_no_grad_buffer() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0], true).unwrap();
        let c = Tensor::from_vec(&[2], vec![3.0, 4.0], false).unwrap();
        let loss = x.mul(&c).unwrap().mean_all().unwrap();
        loss.backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.5, 2.0]);
    }

    #[test]
    fn grad_accumulates_across_graphs_until_zeroed() {
        let x = Tensor::from_vec(&[1], vec![2.0], true).unwrap();
        x.mul(&x).unwrap().mean_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
        x.mul(&x).unwrap().mean_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::from_vec(&[1], vec![3.0], true).unwrap();
        let d = x.detach();
        assert!(!d.requires_grad());
        let loss = d.mul(&d).unwrap().mean_all().unwrap();
        assert!(loss.backward().is_err());
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let x = Tensor::from_vec(&[1], vec![3.0], true).unwrap();
        let y = x.mul(&x).unwrap();
        y.mean_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn disconnected_parameter_receives_no_grad() {
        let x = Tensor::from_vec(&[1], vec![1.0], true).unwrap();
        let unused = Tensor::from_vec(&[1], vec![5.0], true).unwrap();
        x.mul(&x).unwrap().mean_all().unwrap().backward().unwrap();
        assert!(unused.grad().is_none());
    }
}
