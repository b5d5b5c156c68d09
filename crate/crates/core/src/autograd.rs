//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during the
//! forward pass. Values are computed eagerly; [`Tape::backward`] walks the
//! tape in reverse and returns the gradients of the leaves. Parameters enter
//! the tape through [`Tape::param`], and [`Tape::backward_into`] adds their
//! gradients to the owning [`ParamStore`].
//!
//! ```
//! use m2mrf::{autograd::Tape, tensor::Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(&[2], vec![1.0, -3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, -6.0]);
//! ```

use std::collections::HashMap;

use crate::error::{contract_err, shape_err, Result};
use crate::kernels::{self, IndexMap};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, k: Var, stride: usize, pad: usize },
    MaxPool { x: Var, map: IndexMap },
    Unpool { x: Var, map: IndexMap },
    Bilinear(Var),
    Sigmoid(Var),
    Relu(Var),
    Sum(Var),
    ChannelSum(Var),
    Gather { x: Var, index: Vec<Option<usize>> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to every leaf and parameter node.
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient for a leaf or parameter var; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            store.accumulate_grad(*id, g);
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records an input or constant.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter; repeated calls for the same id return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "add")?;
        let out = zip_with(x, y, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "sub")?;
        let out = zip_with(x, y, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "mul")?;
        let out = zip_with(x, y, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "div")?;
        let out = zip_with(x, y, |p, q| p / q);
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(k), stride, pad)?;
        Ok(self.push(out, Op::Conv2d { x, k, stride, pad }))
    }

    pub fn conv2d_transpose(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d_transpose(self.value(x), self.value(k), stride, pad)?;
        Ok(self.push(out, Op::ConvTranspose2d { x, k, stride, pad }))
    }

    /// Max-pool; returns the winner map alongside the pooled var.
    pub fn maxpool2d(&mut self, x: Var, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<(Var, IndexMap)> {
        let (out, map) = kernels::maxpool2d_argmax(self.value(x), kh, kw, stride, pad)?;
        let v = self.push(out, Op::MaxPool { x, map: map.clone() });
        Ok((v, map))
    }

    pub fn unpool(&mut self, x: Var, map: &IndexMap) -> Result<Var> {
        let out = kernels::unpool(self.value(x), map)?;
        Ok(self.push(out, Op::Unpool { x, map: map.clone() }))
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = kernels::bilinear_resize(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::Bilinear(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Sum of all elements, as a shape-`[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reduces every axis but the last: `(…, K) → (K)`.
    pub fn channel_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let k = *t.shape().last().expect("non-empty shape");
        let mut out = vec![0.0; k];
        for (i, v) in t.data().iter().enumerate() {
            out[i % k] += v;
        }
        let out = Tensor::new(&[k], out).expect("positive length");
        self.push(out, Op::ChannelSum(x))
    }

    /// `out[i] = x[index[i]]`, or zero where the index is `None`.
    pub fn gather(&mut self, x: Var, shape: &[usize], index: Vec<Option<usize>>) -> Result<Var> {
        let src = self.value(x);
        if index.len() != shape.iter().product::<usize>() {
            return shape_err(format!(
                "gather: {} indices for output shape {shape:?}",
                index.len()
            ));
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= src.len()) {
            return shape_err(format!("gather: index {bad} out of range for {:?}", src.shape()));
        }
        let sd = src.data();
        let data = index.iter().map(|i| i.map_or(0.0, |i| sd[i])).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Gather { x, index }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Reverse sweep from a scalar `loss`. Intermediate gradients are dropped
    /// as soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return contract_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients {
            leaves: HashMap::new(),
            params: Vec::new(),
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => {
                    out.params.push((*id, g.clone()));
                    out.leaves.insert(Var(i), g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_with(&g, self.value(*b), |p, q| p * q);
                    let gb = zip_with(&g, self.value(*a), |p, q| p * q);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip_with(&g, bv, |p, q| p / q);
                    let mut gb = zip_with(&g, av, |p, q| -p * q);
                    for (x, d) in gb.data_mut().iter_mut().zip(bv.data()) {
                        *x /= d * d;
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|v| v * c)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::MatMul(a, b) => {
                    let ga = kernels::matmul(&g, &kernels::transpose(self.value(*b))?)?;
                    let gb = kernels::matmul(&kernels::transpose(self.value(*a))?, &g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Conv2d { x, k, stride, pad } => {
                    let (xv, kv) = (self.value(*x), self.value(*k));
                    let gx = kernels::conv2d_grad_input(&g, xv.shape(), kv, *stride, *pad)?;
                    let gk = kernels::conv2d_grad_kernel(xv, &g, kv.shape(), *stride, *pad)?;
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *k, gk);
                }
                Op::ConvTranspose2d { x, k, stride, pad } => {
                    let (xv, kv) = (self.value(*x), self.value(*k));
                    let gx = kernels::conv2d_transpose_grad_input(&g, xv.shape(), kv, *stride, *pad)?;
                    let gk = kernels::conv2d_transpose_grad_kernel(xv, &g, kv.shape(), *stride, *pad)?;
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *k, gk);
                }
                Op::MaxPool { x, map } => acc(&mut grads, *x, kernels::unpool(&g, map)?),
                Op::Unpool { x, map } => {
                    let gd = g.data();
                    let data = map.indices.iter().map(|&idx| gd[idx]).collect();
                    acc(&mut grads, *x, Tensor::new(&map.output_shape, data)?);
                }
                Op::Bilinear(x) => {
                    let gx = kernels::bilinear_resize_grad(&g, self.shape(*x))?;
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = zip_with(&g, &node.value, |p, s| p * s * (1.0 - s));
                    acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = zip_with(&g, self.value(*x), |p, v| if v > 0.0 { p } else { 0.0 });
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    acc(&mut grads, *x, Tensor::full(self.shape(*x), g.data()[0]));
                }
                Op::ChannelSum(x) => {
                    let shape = self.shape(*x);
                    let k = g.len();
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|i| g.data()[i % k]).collect();
                    acc(&mut grads, *x, Tensor::new(shape, data)?);
                }
                Op::Gather { x, index } => {
                    let mut gx = Tensor::zeros(self.shape(*x));
                    let gd = gx.data_mut();
                    for (&src, gv) in index.iter().zip(g.data()) {
                        if let Some(s) = src {
                            gd[s] += gv;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Reshape(x) => {
                    let gx = g.reshape(self.shape(*x))?;
                    acc(&mut grads, *x, gx);
                }
            }
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// [`Tape::backward`], then adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store);
        Ok(grads)
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_param_gives_ones() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let loss = tape.sum(p);
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[1.0; 4]);
    }

    #[test]
    fn square_gives_twice_value() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(&[3], vec![1.0, -2.0, 0.25]).unwrap());
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq);
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[2.0, -4.0, 0.5]);
    }

    #[test]
    fn reused_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let a = tape.scale(x, 3.0);
        let b = tape.scale(x, -1.0);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn same_param_maps_to_one_node() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(2.0));
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn backward_twice_accumulates_into_store() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        for _ in 0..2 {
            let mut tape = Tape::new();
            let p = tape.param(&store, id);
            let loss = tape.sum(p);
            tape.backward_into(loss, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad.data(), &[2.0, 2.0]);
    }
}
