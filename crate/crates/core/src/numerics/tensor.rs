//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tensor`] holds a shape, an `f64` value buffer, and (for graph nodes)
//! the parents plus a backward closure recorded during the forward pass.
//! Calling [`Tensor::backward`] on a scalar output topologically sorts the
//! graph and accumulates gradients into every node that requires them.
//!
//! The graph is single-threaded by construction (`Rc`-linked nodes). Wrap
//! rollout or evaluation code in [`no_grad`] to skip graph recording
//! entirely; values are still computed.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::numerics::NumericsError;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct TensorInner {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Dense numeric array with optional gradient and graph linkage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorInner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &b.shape)
            .field("values", &b.values)
            .field("requires_grad", &b.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new_inner(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "tensor values length must equal product of shape"
        );
        Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape,
                values,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Constant (non-differentiable) tensor.
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::new_inner(shape.to_vec(), values, false)
    }

    /// Leaf parameter: gradients accumulate here during backward.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::new_inner(shape.to_vec(), values, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(&[1], vec![v])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Borrow the value buffer without cloning.
    pub fn with_values<T>(&self, f: impl FnOnce(&[f64]) -> T) -> T {
        f(&self.inner.borrow().values)
    }

    pub fn value_at(&self, i: usize) -> f64 {
        self.inner.borrow().values[i]
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self) -> f64 {
        let b = self.inner.borrow();
        assert_eq!(b.values.len(), 1, "scalar_value on non-scalar tensor");
        b.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Overwrites the values of a leaf tensor in place. Panics if the length
    /// changes or the tensor is an interior graph node.
    pub fn set_values(&self, values: &[f64]) {
        let mut b = self.inner.borrow_mut();
        assert!(b.backward.is_none(), "set_values on interior graph node");
        assert_eq!(b.values.len(), values.len(), "set_values length mismatch");
        b.values.copy_from_slice(values);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn clear_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Initializes the gradient to zeros if absent.
    pub fn ensure_zero_grad(&self) {
        let mut b = self.inner.borrow_mut();
        let n = b.values.len();
        b.grad.get_or_insert_with(|| vec![0.0; n]);
    }

    /// Detached copy: same values, no graph linkage, no gradient flow.
    pub fn detach(&self) -> Tensor {
        let b = self.inner.borrow();
        Tensor::constant(&b.shape, b.values.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.inner.borrow().values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, ctx: &str) -> Result<(), NumericsError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(NumericsError::NonFinite(ctx.to_string()))
        }
    }

    fn accumulate_grad(&self, delta: &[f64]) {
        let mut b = self.inner.borrow_mut();
        let n = b.values.len();
        let grad = b.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Backpropagates from this scalar through the recorded graph,
    /// accumulating gradients into every node that requires them.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward is defined for scalar outputs");

        // Iterative DFS topological sort; sequence graphs get deep.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child_idx)) = stack.pop() {
            let key = Rc::as_ptr(&node.inner) as usize;
            if child_idx == 0 {
                if visited.contains(&key) {
                    continue;
                }
                visited.insert(key);
            }
            let parents: Vec<Tensor> = node.inner.borrow().parents.clone();
            if child_idx < parents.len() {
                let child = parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                let child_key = Rc::as_ptr(&child.inner) as usize;
                if !visited.contains(&child_key) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let (grad, parents, has_backward) = {
                let b = node.inner.borrow();
                (b.grad.clone(), b.parents.clone(), b.backward.is_some())
            };
            let Some(grad) = grad else { continue };
            if has_backward {
                let b = node.inner.borrow();
                if let Some(back) = &b.backward {
                    back(&grad, &parents);
                }
            }
        }
    }
}

/// Builds an op node. The backward closure receives the node's output
/// gradient and its parents, and accumulates into each parent that
/// requires gradients.
fn make_op(shape: Vec<usize>, values: Vec<f64>, parents: Vec<Tensor>, back: BackwardFn) -> Tensor {
    let track = grad_enabled() && parents.iter().any(|p| p.inner.borrow().requires_grad);
    let t = Tensor::new_inner(shape, values, track);
    if track {
        let mut b = t.inner.borrow_mut();
        b.parents = parents;
        b.backward = Some(back);
    }
    t
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.inner.borrow(), other.inner.borrow());
        assert_eq!(a.shape, b.shape, "add: shape mismatch");
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
        let shape = a.shape.clone();
        drop(a);
        drop(b);
        make_op(
            shape,
            values,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            }),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.inner.borrow(), other.inner.borrow());
        assert_eq!(a.shape, b.shape, "sub: shape mismatch");
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
        let shape = a.shape.clone();
        drop(a);
        drop(b);
        make_op(
            shape,
            values,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                parents[1].accumulate_grad(&neg);
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.inner.borrow(), other.inner.borrow());
        assert_eq!(a.shape, b.shape, "mul: shape mismatch");
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
        let shape = a.shape.clone();
        drop(a);
        drop(b);
        make_op(
            shape,
            values,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let bvals = parents[1].inner.borrow().values.clone();
                let da: Vec<f64> = g.iter().zip(&bvals).map(|(gi, bi)| gi * bi).collect();
                parents[0].accumulate_grad(&da);
                let avals = parents[0].inner.borrow().values.clone();
                let db: Vec<f64> = g.iter().zip(&avals).map(|(gi, ai)| gi * ai).collect();
                parents[1].accumulate_grad(&db);
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let a = self.inner.borrow();
        let values = a.values.iter().map(|x| x * c).collect();
        let shape = a.shape.clone();
        drop(a);
        make_op(
            shape,
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let da: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                parents[0].accumulate_grad(&da);
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Multiplies every element by a single-element tensor, keeping the
    /// scalar differentiable (unlike [`Tensor::scale`]).
    pub fn scale_by(&self, scalar: &Tensor) -> Tensor {
        assert_eq!(scalar.len(), 1, "scale_by expects a scalar tensor");
        let c = scalar.value_at(0);
        let a = self.inner.borrow();
        let values = a.values.iter().map(|x| x * c).collect();
        let shape = a.shape.clone();
        drop(a);
        make_op(
            shape,
            values,
            vec![self.clone(), scalar.clone()],
            Box::new(|g, parents| {
                let c = parents[1].inner.borrow().values[0];
                let da: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                parents[0].accumulate_grad(&da);
                let xv = parents[0].inner.borrow().values.clone();
                let ds: f64 = g.iter().zip(&xv).map(|(gi, xi)| gi * xi).sum();
                parents[1].accumulate_grad(&[ds]);
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let a = self.inner.borrow();
        let values: Vec<f64> = a.values.iter().map(|x| x.tanh()).collect();
        let shape = a.shape.clone();
        drop(a);
        let saved = values.clone();
        make_op(
            shape,
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&saved)
                    .map(|(gi, yi)| gi * (1.0 - yi * yi))
                    .collect();
                parents[0].accumulate_grad(&da);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let a = self.inner.borrow();
        let values: Vec<f64> = a.values.iter().map(|x| sigmoid(*x)).collect();
        let shape = a.shape.clone();
        drop(a);
        let saved = values.clone();
        make_op(
            shape,
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&saved)
                    .map(|(gi, yi)| gi * yi * (1.0 - yi))
                    .collect();
                parents[0].accumulate_grad(&da);
            }),
        )
    }

    pub fn exp(&self) -> Tensor {
        let a = self.inner.borrow();
        let values: Vec<f64> = a.values.iter().map(|x| x.exp()).collect();
        let shape = a.shape.clone();
        drop(a);
        let saved = values.clone();
        make_op(
            shape,
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let da: Vec<f64> = g.iter().zip(&saved).map(|(gi, yi)| gi * yi).collect();
                parents[0].accumulate_grad(&da);
            }),
        )
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let a = self.inner.borrow();
        let total: f64 = a.values.iter().sum();
        let n = a.values.len();
        drop(a);
        make_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(&vec![g[0]; n]);
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Matrix-vector product; `self` has shape `[m, n]` (row-major), `x` has
    /// shape `[n]`, result `[m]`.
    pub fn matvec(&self, x: &Tensor) -> Tensor {
        let (w, v) = (self.inner.borrow(), x.inner.borrow());
        assert_eq!(w.shape.len(), 2, "matvec: weight must be 2-D");
        let (m, n) = (w.shape[0], w.shape[1]);
        assert_eq!(v.shape, vec![n], "matvec: input length mismatch");
        let mut out = vec![0.0; m];
        for (i, out_i) in out.iter_mut().enumerate() {
            let row = &w.values[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(&v.values) {
                acc += a * b;
            }
            *out_i = acc;
        }
        drop(w);
        drop(v);
        make_op(
            vec![m],
            out,
            vec![self.clone(), x.clone()],
            Box::new(move |g, parents| {
                let xv = parents[1].inner.borrow().values.clone();
                // dW[i][j] = g[i] * x[j]
                let mut dw = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dw[i * n + j] = g[i] * xv[j];
                    }
                }
                parents[0].accumulate_grad(&dw);
                // dx[j] = sum_i W[i][j] * g[i]
                let wv = parents[0].inner.borrow().values.clone();
                let mut dx = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dx[j] += wv[i * n + j] * g[i];
                    }
                }
                parents[1].accumulate_grad(&dx);
            }),
        )
    }

    /// Concatenation of 1-D tensors.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat: no inputs");
        let mut values = Vec::new();
        let mut lens = Vec::new();
        for p in parts {
            let b = p.inner.borrow();
            assert_eq!(b.shape.len(), 1, "concat: 1-D tensors only");
            lens.push(b.values.len());
            values.extend_from_slice(&b.values);
        }
        let total = values.len();
        make_op(
            vec![total],
            values,
            parts.iter().map(|p| (*p).clone()).collect(),
            Box::new(move |g, parents| {
                let mut off = 0;
                for (p, len) in parents.iter().zip(&lens) {
                    p.accumulate_grad(&g[off..off + len]);
                    off += len;
                }
            }),
        )
    }

    /// Contiguous 1-D slice `[start, start+len)` with gradient scatter.
    pub fn narrow(&self, start: usize, len: usize) -> Tensor {
        let a = self.inner.borrow();
        assert_eq!(a.shape.len(), 1, "narrow: 1-D tensors only");
        let total = a.values.len();
        assert!(start + len <= total, "narrow: out of bounds");
        let values = a.values[start..start + len].to_vec();
        drop(a);
        make_op(
            vec![len],
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; total];
                dx[start..start + len].copy_from_slice(g);
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Shape change preserving element order.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let a = self.inner.borrow();
        assert_eq!(
            shape.iter().product::<usize>(),
            a.values.len(),
            "reshape: element count mismatch"
        );
        let values = a.values.clone();
        drop(a);
        make_op(
            shape.to_vec(),
            values,
            vec![self.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
            }),
        )
    }

    /// Elementwise `max(x, c)`; gradient passes only where `x > c`.
    pub fn clamp_min(&self, c: f64) -> Tensor {
        let a = self.inner.borrow();
        let values: Vec<f64> = a.values.iter().map(|x| x.max(c)).collect();
        let shape = a.shape.clone();
        let saved: Vec<f64> = a.values.clone();
        drop(a);
        make_op(
            shape,
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&saved)
                    .map(|(gi, xi)| if *xi > c { *gi } else { 0.0 })
                    .collect();
                parents[0].accumulate_grad(&da);
            }),
        )
    }

    /// Row-wise softmax. 1-D input is a single row; 2-D input applies
    /// per-row over the last dimension.
    pub fn softmax_rows(&self) -> Tensor {
        let a = self.inner.borrow();
        let (rows, cols) = row_layout(&a.shape);
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &a.values[r * cols..(r + 1) * cols];
            softmax_into(row, &mut values[r * cols..(r + 1) * cols]);
        }
        let shape = a.shape.clone();
        drop(a);
        let saved = values.clone();
        make_op(
            shape,
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let p = &saved[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = p.iter().zip(gr).map(|(pi, gi)| pi * gi).sum();
                    for j in 0..cols {
                        dx[r * cols + j] = p[j] * (gr[j] - dot);
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Row-wise log-softmax, stable via max subtraction.
    pub fn log_softmax_rows(&self) -> Tensor {
        let a = self.inner.borrow();
        let (rows, cols) = row_layout(&a.shape);
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &a.values[r * cols..(r + 1) * cols];
            log_softmax_into(row, &mut values[r * cols..(r + 1) * cols]);
        }
        let shape = a.shape.clone();
        drop(a);
        let saved = values.clone();
        make_op(
            shape,
            values,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let ls = &saved[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..cols {
                        dx[r * cols + j] = gr[j] - ls[j].exp() * gsum;
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Summed Bernoulli negative log-likelihood of binary `targets` under
    /// `self` as per-bit logits. Stable for large |logit|.
    pub fn bernoulli_nll(&self, targets: &[f64]) -> Tensor {
        let a = self.inner.borrow();
        assert_eq!(a.values.len(), targets.len(), "bernoulli_nll: length mismatch");
        let mut total = 0.0;
        for (x, t) in a.values.iter().zip(targets) {
            total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        }
        drop(a);
        let targets = targets.to_vec();
        make_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let xv = parents[0].inner.borrow().values.clone();
                let dx: Vec<f64> = xv
                    .iter()
                    .zip(&targets)
                    .map(|(x, t)| g[0] * (sigmoid(*x) - t))
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }
}

fn row_layout(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("row ops support 1-D and 2-D tensors only"),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softmax of `row` into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logsum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    for (o, x) in out.iter_mut().zip(row) {
        *o = x - logsum;
    }
}

pub fn softmax_vec(row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    softmax_into(row, &mut out);
    out
}

pub fn log_softmax_vec(row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    log_softmax_into(row, &mut out);
    out
}
