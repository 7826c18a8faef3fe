//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are immutable once produced by an op. Each op records its parents
//! and a backward closure on the result; calling [`Tensor::backward`] on a
//! scalar walks the graph in reverse topological order, accumulates gradients
//! into every `requires_grad` ancestor, and releases the graph.
//!
//! Element type is generic over [`Elem`] (`f64` default everywhere in tests,
//! `f32` selectable for training speed).

mod conv;
mod gradcheck;
mod norm;
mod pointwise;
mod pool;
mod reduce;
mod snapshot;

pub use conv::{
    conv2d_direct, conv2d_im2col, conv_transpose2d, im2col, im2col_center_slice, ConvSpec,
    DeconvSpec,
};
pub use gradcheck::{finite_diff_check, finite_diff_check_param, finite_diff_check_sampled};
pub use norm::BatchNorm;
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_HEADER_BYTES};
pub(crate) use snapshot::{read_snapshot_from, write_snapshot_to};

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type for tensor data. Implemented for `f32` and `f64`.
pub trait Elem:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const NAME: &'static str;

    /// Convert from f64, panicking on unrepresentable values.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("value not representable in element type")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("element not convertible to f64")
    }
}

impl Elem for f32 {
    const NAME: &'static str = "f32";
}

impl Elem for f64 {
    const NAME: &'static str = "f64";
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward step recorded by an op: given the gradient w.r.t. the op output,
/// accumulate gradients into the per-parent slots (`Some` iff that parent
/// requires a gradient).
pub(crate) struct Node<E: Elem> {
    parents: Vec<Tensor<E>>,
    backward: Box<dyn Fn(&[E], &[E], &mut [Option<Vec<E>>])>,
}

struct Inner<E: Elem> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<E>>>,
    node: RefCell<Option<Node<E>>>,
}

/// Dense row-major n-dimensional array participating in a differentiation
/// graph. Cloning is cheap (shared storage).
pub struct Tensor<E: Elem> {
    inner: Rc<Inner<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Elem> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<E: Elem> Tensor<E> {
    fn build(shape: Vec<usize>, data: Vec<E>, requires_grad: bool, node: Option<Node<E>>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                node: RefCell::new(node),
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Self {
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Leaf parameter: gradients accumulate here on backward.
    pub fn param(shape: &[usize], data: Vec<E>) -> Self {
        Self::build(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![E::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Self::from_vec(shape, vec![value; shape.iter().product()])
    }

    pub fn scalar(value: E) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    /// Convenience for tests: build from f64 literals.
    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| E::of(v)).collect())
    }

    /// Result of an op. Records a backward node iff any parent requires
    /// grad. The backward closure receives the output gradient, the output
    /// data, and one gradient slot per parent (`Some` iff that parent needs
    /// a gradient).
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: impl Fn(&[E], &[E], &mut [Option<Vec<E>>]) + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        let node = if requires_grad {
            Some(Node {
                parents,
                backward: Box::new(backward),
            })
        } else {
            None
        };
        Self::build(shape, data, requires_grad, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Shape as NCHW, asserting the tensor is 4-d.
    pub fn dims4(&self) -> [usize; 4] {
        assert_eq!(
            self.inner.shape.len(),
            4,
            "expected 4-d tensor, got shape {:?}",
            self.inner.shape
        );
        [
            self.inner.shape[0],
            self.inner.shape[1],
            self.inner.shape[2],
            self.inner.shape[3],
        ]
    }

    pub fn data(&self) -> Ref<'_, [E]> {
        Ref::map(self.inner.data.borrow(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() requires a single-element tensor");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Mutate leaf data in place (parameter updates). Rejected on op results.
    pub fn update_data(&self, f: impl FnOnce(&mut [E])) {
        assert!(
            self.inner.node.borrow().is_none(),
            "cannot mutate a tensor produced by an op"
        );
        f(&mut self.inner.data.borrow_mut());
    }

    /// Detached constant copy sharing no graph history.
    pub fn detach(&self) -> Tensor<E> {
        Tensor::from_vec(self.shape(), self.to_vec())
    }

    /// Reverse-mode gradient pass from a scalar result. Populates `grad` on
    /// every `requires_grad` ancestor and releases the recorded graph.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward requires a scalar result, got shape {:?}",
            self.shape()
        );
        assert!(
            self.inner.requires_grad,
            "backward requires a result with a recorded operation graph"
        );

        let order = topo_order(self);
        let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
        grads.insert(self.id(), vec![E::one()]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let node = t.inner.node.borrow_mut().take();
            if node.is_none() && t.inner.requires_grad {
                // leaf parameter: retain the gradient
                let mut slot = t.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => *slot = Some(g),
                }
                continue;
            }
            if let Some(node) = node {
                let mut slots: Vec<Option<Vec<E>>> = node
                    .parents
                    .iter()
                    .map(|p| {
                        if p.inner.requires_grad {
                            Some(vec![E::zero(); p.numel()])
                        } else {
                            None
                        }
                    })
                    .collect();
                (node.backward)(&g, &t.inner.data.borrow(), &mut slots);
                for (p, s) in node.parents.iter().zip(slots) {
                    if let Some(s) = s {
                        match grads.get_mut(&p.id()) {
                            Some(acc) => {
                                for (a, b) in acc.iter_mut().zip(&s) {
                                    *a += *b;
                                }
                            }
                            None => {
                                grads.insert(p.id(), s);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Post-order DFS over recorded parents: parents appear before consumers.
fn topo_order<E: Elem>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // (tensor, expanded) stack; expanded=true means children already pushed.
    let mut stack: Vec<(Tensor<E>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.inner.node.borrow().as_ref() {
            for p in &node.parents {
                if !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
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
    fn leaf_construction_and_access() {
        let t = Tensor::<f64>::from_f64s(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.numel(), 4);
        assert!(!t.requires_grad());
        assert_eq!(t.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "data length")]
    fn shape_data_mismatch_rejected() {
        let _ = Tensor::<f64>::from_vec(&[2, 3], vec![1.0; 5]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]);
        let s = x.sum_all();
        s.backward();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_2x() {
        let vals = vec![1.0, -2.0, 3.0, 0.5];
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vals.clone());
        let s = x.mul(&x).sum_all();
        s.backward();
        let g = x.grad().unwrap();
        for (gi, vi) in g.iter().zip(&vals) {
            assert!((gi - 2.0 * vi).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_accumulates_across_backward_calls() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        x.sum_all().backward();
        x.sum_all().backward();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    #[should_panic(expected = "backward requires a scalar")]
    fn backward_on_non_scalar_rejected() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let y = x.scale(2.0);
        y.backward();
    }

    #[test]
    fn graph_released_after_backward() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let s = x.sum_all();
        s.backward();
        assert!(s.inner.node.borrow().is_none());
    }

    #[test]
    #[should_panic(expected = "cannot mutate")]
    fn op_results_are_immutable() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]);
        let y = x.scale(2.0);
        y.update_data(|d| d[0] = 0.0);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // s = sum(x) + sum(x) => grad = 2
        let x = Tensor::<f64>::param(&[3], vec![1.0, 2.0, 3.0]);
        let a = x.sum_all();
        let b = x.sum_all();
        a.add(&b).backward();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }
}
