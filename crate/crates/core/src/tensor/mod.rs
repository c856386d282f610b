//! Minimal reverse-mode autodiff on dense row-major f64 matrices.
//!
//! A [`Tensor`] is a shared handle to a rank-2 value (vectors are 1xN rows,
//! scalars are 1x1). Operations live on [`Graph`]; while a graph is in
//! training mode every op records a backward closure, and
//! [`Graph::backward`] replays them in exact reverse recording order, which
//! is a reverse topological order of the data flow. Gradients accumulate
//! into `grad` on every tensor that requires them.

mod check;
mod graph;
pub(crate) mod linalg;

pub use check::{grad_check, GradCheckReport};
pub use graph::{Graph, Mode};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: expected {expected} data values for shape {shape:?}, got {got}")]
    BadLength {
        op: &'static str,
        shape: (usize, usize),
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("cross entropy: every target is the ignore index")]
    AllIgnored,
    #[error("embedding id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("masked mean: no unmasked positions")]
    EmptyMask,
    #[error("function under gradient check is not deterministic")]
    NonDeterministic,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

struct Inner {
    id: u64,
    rows: usize,
    cols: usize,
    data: RefCell<Vec<f64>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
}

/// Shared handle to a rank-2 f64 value. Cloning is cheap and aliases the
/// same storage; weights stay alive across steps while op graphs come and go.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &(self.inner.rows, self.inner.cols))
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl Tensor {
    fn alloc(rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(data.len(), rows * cols);
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                rows,
                cols,
                data: RefCell::new(data),
                requires_grad: Cell::new(requires_grad),
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::alloc(rows, cols, vec![0.0; rows * cols], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::alloc(1, 1, vec![v], false)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::BadLength {
                op: "from_vec",
                shape: (rows, cols),
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Tensor::alloc(rows, cols, data, false))
    }

    /// Trainable leaf: same as [`Tensor::from_vec`] but with gradients enabled.
    pub fn param(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, TensorError> {
        let t = Tensor::from_vec(rows, cols, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub(crate) fn result(rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor::alloc(rows, cols, data, requires_grad)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn rows(&self) -> usize {
        self.inner.rows
    }

    pub fn cols(&self) -> usize {
        self.inner.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.inner.rows, self.inner.cols)
    }

    pub fn numel(&self) -> usize {
        self.inner.rows * self.inner.cols
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.requires_grad.set(on);
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows() && c < self.cols());
        self.inner.data.borrow()[r * self.cols() + c]
    }

    /// Overwrite the stored values. Shape is fixed at construction.
    pub fn set_data(&self, values: &[f64]) -> Result<(), TensorError> {
        if values.len() != self.numel() {
            return Err(TensorError::BadLength {
                op: "set_data",
                shape: self.shape(),
                expected: self.numel(),
                got: values.len(),
            });
        }
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// In-place update for optimizers: data[i] += scale * delta[i].
    pub fn add_scaled(&self, delta: &[f64], scale: f64) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), delta.len());
        for (x, dx) in d.iter_mut().zip(delta) {
            *x += scale * dx;
        }
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn ensure_grad(&self) {
        let mut slot = self.inner.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![0.0; self.numel()]);
        }
    }

    /// Applies `f` to the gradient in place, if one is populated.
    pub fn map_grad(&self, f: impl FnOnce(&mut [f64])) {
        if let Some(g) = self.inner.grad.borrow_mut().as_mut() {
            f(g);
        }
    }

    /// Independent deep copy with the same values; gradients start empty.
    pub fn deep_copy(&self) -> Tensor {
        let t = Tensor::alloc(self.rows(), self.cols(), self.to_vec(), self.requires_grad());
        t
    }
}

/// Scratch space for one backward pass, keyed by tensor id.
pub(crate) struct GradStore {
    map: HashMap<u64, Vec<f64>>,
}

impl GradStore {
    pub(crate) fn new() -> GradStore {
        GradStore {
            map: HashMap::new(),
        }
    }

    pub(crate) fn seed(&mut self, t: &Tensor, v: f64) {
        self.map.insert(t.id(), vec![v; t.numel()]);
    }

    /// Zero-initialized accumulation buffer for `t`.
    pub(crate) fn entry(&mut self, t: &Tensor) -> &mut Vec<f64> {
        self.map
            .entry(t.id())
            .or_insert_with(|| vec![0.0; t.numel()])
    }

    pub(crate) fn take(&mut self, t: &Tensor) -> Option<Vec<f64>> {
        self.map.remove(&t.id())
    }
}
