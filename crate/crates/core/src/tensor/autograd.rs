//! Reverse-mode differentiation on a per-pass tape.
//!
//! A [`Tape`] lives for one forward/backward pass on one thread. Every
//! operation on a [`Var`] computes its value eagerly and, when the tape is
//! recording, pushes a node holding the vector-Jacobian product. Calling
//! [`Tape::backward`] walks the nodes in reverse creation order.

use std::cell::RefCell;
use std::sync::Arc;

use super::conv::{conv2d, conv2d_backward, ConvSpec};
use super::ops;
use super::{Real, Tensor};
use crate::error::{config_err, Result};
use crate::spectral;

type Backward<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Real> {
    parents: Vec<usize>,
    backward: Option<Backward<T>>,
}

pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

/// A value on a tape.
#[derive(Clone)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: Option<usize>,
    value: Arc<Tensor<T>>,
}

/// Gradients indexed by node.
pub struct Grads<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: &Var<'_, T>) -> Option<&Tensor<T>> {
        v.id.and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: &Var<'_, T>) -> Option<Tensor<T>> {
        v.id.and_then(|id| self.grads.get_mut(id)).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that evaluates without keeping anything for backward.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<'_, T> {
        let value = value.into();
        if !self.recording {
            return Var { tape: self, id: None, value };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<'_, T> {
        Var {
            tape: self,
            id: None,
            value: value.into(),
        }
    }

    fn record<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[&Var<'t, T>],
        backward: impl Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    ) -> Var<'t, T> {
        let value = Arc::new(value);
        let ids: Vec<usize> = parents.iter().filter_map(|p| p.id).collect();
        if !self.recording || ids.is_empty() {
            return Var { tape: self, id: None, value };
        }
        // Closure returns one entry per parent in call order; map to the
        // parents that are tracked.
        let tracked: Vec<bool> = parents.iter().map(|p| p.id.is_some()).collect();
        let wrapped: Backward<T> = Box::new(move |g| {
            let all = backward(g)?;
            Ok(all
                .into_iter()
                .zip(&tracked)
                .filter_map(|(gr, &t)| t.then_some(gr))
                .collect())
        });
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: ids,
            backward: Some(wrapped),
        });
        Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value,
        }
    }

    /// Back-propagates from a single-element `root`, seeding it with 1.
    pub fn backward(&self, root: &Var<'_, T>) -> Result<Grads<T>> {
        if root.value.len() != 1 {
            return config_err!("backward root must be a scalar, got {:?}", root.value.shape());
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root_id) = root.id else {
            return Ok(Grads { grads });
        };
        grads[root_id] = Some(Tensor::full(root.value.shape(), T::one()));
        for id in (0..=root_id).rev() {
            let node = &nodes[id];
            let Some(back) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let parent_grads = back(&g)?;
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
            // Interior gradients are consumed; keep leaves only.
            if !node.parents.is_empty() {
                grads[id] = None;
            } else {
                grads[id] = Some(g);
            }
        }
        Ok(Grads { grads })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared_value(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    fn arc(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value.add(&other.value)?;
        Ok(self
            .tape
            .record(v, &[self, other], |g| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value.sub(&other.value)?;
        Ok(self
            .tape
            .record(v, &[self, other], |g| Ok(vec![Some(g.clone()), Some(g.scale(-T::one()))])))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.value.mul(&other.value)?;
        let (a, b) = (self.arc(), other.arc());
        Ok(self.tape.record(v, &[self, other], move |g| {
            Ok(vec![Some(g.mul(&b)?), Some(g.mul(&a)?)])
        }))
    }

    pub fn scale(&self, s: f64) -> Var<'t, T> {
        let s = T::c(s);
        let v = self.value.scale(s);
        self.tape.record(v, &[self], move |g| Ok(vec![Some(g.scale(s))]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let from = self.value.shape().to_vec();
        let v = (*self.value).clone().reshape(shape)?;
        Ok(self.tape.record(v, &[self], move |g| {
            Ok(vec![Some(g.clone().reshape(&from)?)])
        }))
    }

    pub fn conv2d(
        &self,
        spec: &ConvSpec,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let v = conv2d(&self.value, spec, &weight.value, bias.map(|b| &*b.value))?;
        let (x, w, spec) = (self.arc(), weight.arc(), *spec);
        let back = move |g: &Tensor<T>| {
            let gr = conv2d_backward(&x, &spec, &w, g)?;
            Ok(vec![Some(gr.x), Some(gr.weight), gr.bias])
        };
        Ok(match bias {
            Some(b) => self.tape.record(v, &[self, weight, b], back),
            None => self.tape.record(v, &[self, weight], back),
        })
    }

    pub fn layer_norm_channels(
        &self,
        gamma: &Var<'t, T>,
        beta: &Var<'t, T>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let (v, cache) = ops::layer_norm_channels(&self.value, &gamma.value, &beta.value, eps)?;
        let gm = gamma.arc();
        Ok(self.tape.record(v, &[self, gamma, beta], move |g| {
            let (dx, dg, db) = ops::layer_norm_backward(&cache, &gm, g)?;
            Ok(vec![Some(dx), Some(dg), Some(db)])
        }))
    }

    pub fn simple_gate(&self) -> Result<Var<'t, T>> {
        let v = ops::simple_gate(&self.value)?;
        let x = self.arc();
        Ok(self.tape.record(v, &[self], move |g| {
            Ok(vec![Some(ops::simple_gate_backward(&x, g)?)])
        }))
    }

    pub fn gelu(&self) -> Var<'t, T> {
        let v = ops::gelu(&self.value);
        let x = self.arc();
        self.tape
            .record(v, &[self], move |g| Ok(vec![Some(ops::gelu_backward(&x, g)?)]))
    }

    pub fn global_avg_pool(&self) -> Result<Var<'t, T>> {
        let (_, h, w) = self.value.dims3()?;
        let v = ops::global_avg_pool(&self.value)?;
        Ok(self.tape.record(v, &[self], move |g| {
            let spread = ops::block_broadcast(g, h, w)?;
            Ok(vec![Some(spread.scale(T::c(1.0 / (h * w) as f64)))])
        }))
    }

    /// Repeats a `C×m×n` map over blocks of an `h×w` map.
    pub fn block_broadcast(&self, h: usize, w: usize) -> Result<Var<'t, T>> {
        let (_, rows, cols) = self.value.dims3()?;
        let v = ops::block_broadcast(&self.value, h, w)?;
        Ok(self.tape.record(v, &[self], move |g| {
            Ok(vec![Some(ops::block_broadcast_backward(g, rows, cols)?)])
        }))
    }

    pub fn patch_weighted_sum(
        &self,
        kernels: &Var<'t, T>,
        bias: &Var<'t, T>,
        rows: usize,
        cols: usize,
    ) -> Result<Var<'t, T>> {
        let v = ops::patch_weighted_sum(&self.value, &kernels.value, &bias.value, rows, cols)?;
        let (x, k) = (self.arc(), kernels.arc());
        let bshape = bias.value.shape().to_vec();
        Ok(self.tape.record(v, &[self, kernels, bias], move |g| {
            let (dx, dk, db) = ops::patch_weighted_sum_backward(&x, &k, g)?;
            Ok(vec![Some(dx), Some(dk), Some(db.reshape(&bshape)?)])
        }))
    }

    /// `self (N×in) · wᵀ + b`.
    pub fn linear(&self, w: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        let v = ops::linear(&self.value, &w.value, &b.value)?;
        let (x, wv) = (self.arc(), w.arc());
        Ok(self.tape.record(v, &[self, w, b], move |g| {
            let (dx, dw, db) = ops::linear_backward(&x, &wv, g)?;
            Ok(vec![Some(dx), Some(dw), Some(db)])
        }))
    }

    pub fn depth_to_space(&self, r: usize) -> Result<Var<'t, T>> {
        let v = ops::depth_to_space(&self.value, r)?;
        Ok(self.tape.record(v, &[self], move |g| {
            Ok(vec![Some(ops::space_to_depth(g, r)?)])
        }))
    }

    /// Circular shift of each channel plane.
    pub fn roll2d(&self, dy: isize, dx: isize) -> Result<Var<'t, T>> {
        let v = ops::roll2d(&self.value, dy, dx)?;
        Ok(self
            .tape
            .record(v, &[self], move |g| Ok(vec![Some(ops::roll2d(g, -dy, -dx)?)])))
    }

    /// Real `C` channels to a packed `2C` spectrum (real planes first).
    pub fn fft2d_packed(&self) -> Result<Var<'t, T>> {
        let v = spectral::fft2d_packed(&self.value)?;
        // The orthonormal DFT matrix F is symmetric and unitary, so the
        // adjoint of x ↦ (Re Fx, Im Fx) is Re(conj(F)·g) = Re(ifft(g)).
        Ok(self.tape.record(v, &[self], |g| {
            Ok(vec![Some(spectral::ifft2d_packed(g)?)])
        }))
    }

    /// Packed `2C` spectrum to the real part of its inverse transform.
    pub fn ifft2d_packed(&self) -> Result<Var<'t, T>> {
        let v = spectral::ifft2d_packed(&self.value)?;
        // Adjoint of X ↦ Re(conj(F)·X) is g ↦ (Re Fg, Im Fg).
        Ok(self.tape.record(v, &[self], |g| {
            Ok(vec![Some(spectral::fft2d_packed(g)?)])
        }))
    }

    /// Mean of absolute values. Subgradient 0 at exact zeros.
    pub fn mean_abs(&self) -> Var<'t, T> {
        let n = self.value.len() as f64;
        let v = Tensor::scalar(T::c(
            self.value.data().iter().map(|x| x.f64().abs()).sum::<f64>() / n,
        ));
        let x = self.arc();
        self.tape.record(v, &[self], move |g| {
            let s = g.item().f64() / n;
            Ok(vec![Some(x.map(|xv| {
                if xv > T::zero() {
                    T::c(s)
                } else if xv < T::zero() {
                    T::c(-s)
                } else {
                    T::zero()
                }
            }))])
        })
    }

    pub fn mean_sq(&self) -> Var<'t, T> {
        let n = self.value.len() as f64;
        let v = Tensor::scalar(T::c(self.value.sum_sq_f64() / n));
        let x = self.arc();
        self.tape.record(v, &[self], move |g| {
            let s = T::c(2.0 * g.item().f64() / n);
            Ok(vec![Some(x.scale(s))])
        })
    }

    /// Inner product with a same-shaped tensor, as a scalar.
    pub fn dot(&self, weights: &Tensor<T>) -> Result<Var<'t, T>> {
        self.value.expect_same_shape(weights)?;
        let v = Tensor::scalar(T::c(self.value.mul(weights)?.sum_f64()));
        let w = weights.clone();
        Ok(self
            .tape
            .record(v, &[self], move |g| Ok(vec![Some(w.scale(g.item()))])))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let v = Tensor::scalar(T::c(self.value.sum_f64()));
        let shape = self.value.shape().to_vec();
        self.tape
            .record(v, &[self], move |g| Ok(vec![Some(Tensor::full(&shape, g.item()))]))
    }

    /// Channel range `[start, end)`.
    pub fn channels(&self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let v = self.value.channels(start, end)?;
        let (c, h, w) = self.value.dims3()?;
        Ok(self.tape.record(v, &[self], move |g| {
            let mut full = Tensor::zeros(&[c, h, w]);
            full.data_mut()[start * h * w..end * h * w].copy_from_slice(g.data());
            Ok(vec![Some(full)])
        }))
    }
}
