//! Operation record and reverse sweep.

use std::collections::HashMap;

use super::conv::{conv2d_backward, conv2d_forward, maxpool2_forward, ConvGeometry};
use super::{matmul_t, sigmoid, ParameterSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable operation defined outside this module. The forward value
/// is computed by the caller; the op supplies the vector-Jacobian product.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// One entry per input, `None` where no gradient flows.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddChannelBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    SquaredError {
        pred: Var,
        target: Tensor<T>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of primitive operations. Operands always precede the
/// nodes that consume them, so a reverse index sweep is a valid
/// topological order.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) {
    match slot {
        None => *slot = Some(grad),
        Some(acc) => {
            for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                *a = *a + *g;
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records parameter `name`. Repeated calls return the same handle so
    /// that every use of a parameter feeds one accumulated gradient.
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<Var> {
        let idx = params.index_of(name)?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let v = self.push(params.by_index(idx).value.clone(), Op::Param(idx), true);
        self.params.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul_t(self.value(a), false, self.value(b), false)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("elementwise", va.shape(), vb.shape()));
        }
        let value = va.zip_map(vb, f)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`m` bias to every row of an `[n, m]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (_, m) = vx.dims2()?;
        if vb.shape() != [m] {
            return Err(mismatch("add_bias", vx.shape(), vb.shape()));
        }
        let b = vb.data();
        let mut value = vx.clone();
        for row in value.data_mut().chunks_mut(m) {
            for (v, &bj) in row.iter_mut().zip(b) {
                *v = *v + bj;
            }
        }
        let ng = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), ng))
    }

    /// Adds a per-channel bias to an NCHW tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let &[_, c, h, w] = vx.shape() else {
            return Err(mismatch("add_channel_bias", vx.shape(), vb.shape()));
        };
        if vb.shape() != [c] {
            return Err(mismatch("add_channel_bias", vx.shape(), vb.shape()));
        }
        let b = vb.data().to_vec();
        let mut value = vx.clone();
        for (i, plane) in value.data_mut().chunks_mut(h * w).enumerate() {
            let bc = b[i % c];
            for v in plane {
                *v = *v + bc;
            }
        }
        let ng = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddChannelBias(x, bias), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, s), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let value = Tensor::scalar(vx.sum() / T::from_f64(vx.numel() as f64));
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Mean(x), ng)
    }

    /// `sum(x * x)`.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().map(|&v| v * v).sum());
        let ng = self.any_grad(&[x]);
        self.push(value, Op::SumSquares(x), ng)
    }

    /// `sum((pred - target)^2)` against a constant target.
    pub fn squared_error(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return Err(mismatch("squared_error", vp.shape(), target.shape()));
        }
        let value = Tensor::scalar(
            vp.data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum(),
        );
        let ng = self.any_grad(&[pred]);
        Ok(self.push(value, Op::SquaredError { pred, target }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let ng = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape.first().copied().unwrap_or(1);
        let rest = shape.iter().skip(1).product::<usize>();
        self.reshape(x, [n, rest])
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(kernel), stride, padding)?;
        let (value, cols) = conv2d_forward(self.value(input), self.value(kernel), stride, padding)?;
        let ng = self.any_grad(&[input, kernel]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            ng,
        ))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (value, argmax) = maxpool2_forward(self.value(input))?;
        let ng = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, ng))
    }

    /// Row-wise softmax of an `[n, m]` matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x))?;
        let ng = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax(x), ng))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    /// Returns the scalar loss and the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<T>)> {
        let vl = self.value(logits);
        let (n, m) = vl.dims2()?;
        if labels.len() != n {
            return Err(mismatch("softmax_cross_entropy", vl.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::invalid(format!("label {bad} out of range for {m} classes")));
        }
        let probs = softmax_rows(vl)?;
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            // log p = z_l - max - log(sum exp(z - max))
            let row = &vl.data()[i * m..(i + 1) * m];
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = row.iter().map(|&z| (z - mx).exp()).sum::<T>().ln();
            loss = loss - (row[l] - mx - lse);
        }
        let value = Tensor::scalar(loss / T::from_f64(n as f64));
        let ng = self.any_grad(&[logits]);
        let v = self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: probs.clone(),
            },
            ng,
        );
        Ok((v, probs))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let ng = self.any_grad(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        )
    }

    /// Propagates from scalar `loss`, accumulates into the gradients of every
    /// reachable parameter, then clears the record.
    pub fn backward(&mut self, loss: Var, params: &mut ParameterSet<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(idx), Some(g)) = (&node.op, grad) {
                params.accumulate(*idx, g)?;
            }
        }
        self.clear();
        Ok(())
    }

    fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let wants = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Constant => {}
                Op::Param(_) => grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], matmul_t(&g, false, self.value(*b), true)?);
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], matmul_t(self.value(*a), true, &g, false)?);
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], g.zip_map(self.value(*b), |x, y| x * y)?);
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], g.zip_map(self.value(*a), |x, y| x * y)?);
                    }
                }
                Op::AddBias(x, b) => {
                    if wants(b) {
                        let m = self.value(*b).numel();
                        let mut gb = vec![T::zero(); m];
                        for row in g.data().chunks(m) {
                            for (acc, &v) in gb.iter_mut().zip(row) {
                                *acc = *acc + v;
                            }
                        }
                        add_into(&mut grads[b.0], Tensor::new([m], gb)?);
                    }
                    if wants(x) {
                        add_into(&mut grads[x.0], g);
                    }
                }
                Op::AddChannelBias(x, b) => {
                    if wants(b) {
                        let shape = self.shape(*x);
                        let (c, plane) = (shape[1], shape[2] * shape[3]);
                        let mut gb = vec![T::zero(); c];
                        for (k, chunk) in g.data().chunks(plane).enumerate() {
                            gb[k % c] = gb[k % c] + chunk.iter().copied().sum::<T>();
                        }
                        add_into(&mut grads[b.0], Tensor::new([c], gb)?);
                    }
                    if wants(x) {
                        add_into(&mut grads[x.0], g);
                    }
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    add_into(
                        &mut grads[x.0],
                        g.zip_map(y, |gv, yv| if yv > T::zero() { gv } else { T::zero() })?,
                    );
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    add_into(&mut grads[x.0], g.zip_map(y, |gv, yv| gv * yv * (T::one() - yv))?);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    add_into(&mut grads[x.0], g.map(|v| v * s));
                }
                Op::Sum(x) => {
                    let gv = g.item();
                    add_into(&mut grads[x.0], Tensor::full(self.shape(*x).to_vec(), gv));
                }
                Op::Mean(x) => {
                    let n = T::from_f64(self.value(*x).numel() as f64);
                    let gv = g.item() / n;
                    add_into(&mut grads[x.0], Tensor::full(self.shape(*x).to_vec(), gv));
                }
                Op::SumSquares(x) => {
                    let two_g = (T::one() + T::one()) * g.item();
                    add_into(&mut grads[x.0], self.value(*x).map(|v| two_g * v));
                }
                Op::SquaredError { pred, target } => {
                    let two_g = (T::one() + T::one()) * g.item();
                    add_into(
                        &mut grads[pred.0],
                        self.value(*pred).zip_map(target, |p, t| two_g * (p - t))?,
                    );
                }
                Op::Reshape(x) => {
                    add_into(&mut grads[x.0], g.reshape(self.shape(*x).to_vec())?);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                    cols,
                } => {
                    let (gi, gk) = conv2d_backward(geom, self.value(*kernel), cols, g.data(), wants(input));
                    if wants(kernel) {
                        add_into(&mut grads[kernel.0], Tensor::new(self.shape(*kernel).to_vec(), gk)?);
                    }
                    if let Some(gi) = gi {
                        add_into(&mut grads[input.0], Tensor::new(self.shape(*input).to_vec(), gi)?);
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut gi = Tensor::zeros(self.shape(*input).to_vec());
                    let d = gi.data_mut();
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        d[src] = d[src] + gv;
                    }
                    add_into(&mut grads[input.0], gi);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let (_, m) = y.dims2()?;
                    let mut gx = g.clone();
                    for (row, yrow) in gx.data_mut().chunks_mut(m).zip(y.data().chunks(m)) {
                        let dot: T = row.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for (r, &yv) in row.iter_mut().zip(yrow) {
                            *r = yv * (*r - dot);
                        }
                    }
                    add_into(&mut grads[x.0], gx);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let (n, m) = probs.dims2()?;
                    let scale = g.item() / T::from_f64(n as f64);
                    let mut gl = probs.clone();
                    let d = gl.data_mut();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * m + l] = d[i * m + l] - T::one();
                    }
                    for v in d.iter_mut() {
                        *v = *v * scale;
                    }
                    add_into(&mut grads[logits.0], gl);
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let input_grads = op.backward(&vals, &node.value, &g)?;
                    if input_grads.len() != inputs.len() {
                        return Err(Error::invalid(format!(
                            "custom op `{}` returned {} gradients for {} inputs",
                            op.name(),
                            input_grads.len(),
                            inputs.len()
                        )));
                    }
                    for (v, gi) in inputs.iter().zip(input_grads) {
                        if let (true, Some(gi)) = (wants(v), gi) {
                            if gi.shape() != self.shape(*v) {
                                return Err(mismatch(op.name(), gi.shape(), self.shape(*v)));
                            }
                            add_into(&mut grads[v.0], gi);
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

pub(crate) fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, m) = x.dims2()?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(m) {
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(name: &str, value: Tensor<f64>) -> ParameterSet<f64> {
        let mut ps = ParameterSet::new();
        ps.insert(name, value).unwrap();
        ps
    }

    #[test]
    fn quadratic_gradient() {
        let mut ps = one_param("x", Tensor::new([1], vec![3.0]).unwrap());
        let mut g = Graph::new();
        let x = g.param(&ps, "x").unwrap();
        let xx = g.mul(x, x).unwrap();
        let loss = g.sum(xx);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get("x").unwrap().grad.as_ref().unwrap().data(), &[6.0]);
        assert!(g.is_empty());
    }

    #[test]
    fn fan_out_accumulates_exactly() {
        let mut ps = one_param("x", Tensor::new([3], vec![0.1, -2.0, 7.5]).unwrap());
        let mut g = Graph::new();
        let x = g.param(&ps, "x").unwrap();
        let x_again = g.param(&ps, "x").unwrap();
        assert_eq!(x, x_again);
        let s = g.add(x, x_again).unwrap();
        let loss = g.sum(s);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get("x").unwrap().grad.as_ref().unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut ps = one_param("x", Tensor::scalar(1.5));
        for _ in 0..2 {
            let mut g = Graph::new();
            let x = g.param(&ps, "x").unwrap();
            let loss = g.scale(x, 2.0);
            g.backward(loss, &mut ps).unwrap();
        }
        assert_eq!(ps.get("x").unwrap().grad.as_ref().unwrap().item(), 4.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut ps = one_param("x", Tensor::zeros([2]));
        let mut g = Graph::new();
        let x = g.param(&ps, "x").unwrap();
        assert!(matches!(g.backward(x, &mut ps), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn cross_entropy_reference_cases() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros([3, 10]));
        let (loss, probs) = g.softmax_cross_entropy(logits, &[0, 4, 9]).unwrap();
        assert!((g.value(loss).item() - 10f64.ln()).abs() < 1e-12);
        assert!(probs.data().iter().all(|&p| (p - 0.1).abs() < 1e-15));

        let mut z = vec![0.0; 10];
        z[3] = 1000.0;
        let logits = g.constant(Tensor::new([1, 10], z).unwrap());
        let (loss, _) = g.softmax_cross_entropy(logits, &[3]).unwrap();
        assert!(g.value(loss).item().abs() < 1e-12);

        let logits = g.constant(Tensor::zeros([1, 3]));
        assert!(g.softmax_cross_entropy(logits, &[3]).is_err());
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let mut ps = one_param("w", Tensor::ones([2, 2]));
        let mut g = Graph::new();
        let c = g.constant(Tensor::ones([3, 2]));
        let w = g.param(&ps, "w").unwrap();
        let y = g.matmul(c, w).unwrap();
        assert!(!g.requires_grad(c));
        assert!(g.requires_grad(y));
        let loss = g.sum(y);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get("w").unwrap().grad.as_ref().unwrap().data(), &[3.0; 4]);
    }
}
