//! Tape-based reverse-mode automatic differentiation over whole tensors.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`]
//! handle. [`Tape::backward`] walks the tape in reverse from a scalar and
//! returns the accumulated gradient of every node that requires one.
//! Nodes are never mutated after creation.

use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Structural description of a node, for graph introspection.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        kernel: (usize, usize),
        dilation: usize,
    },
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Concat(Var, Var),
    Affine { input: Var, scale: f64, shift: f64 },
    MuLaw { input: Var, mu: f64 },
    InverseMuLaw { input: Var, mu: f64 },
    Sum(Var),
    MulConst(Var),
    MeanAbsDiff(Var, Var),
    WeightedSum(Vec<(Var, f64)>),
}

impl OpKind {
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            OpKind::Leaf => vec![],
            OpKind::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
            OpKind::Relu(x)
            | OpKind::Tanh(x)
            | OpKind::Sum(x)
            | OpKind::MulConst(x)
            | OpKind::Affine { input: x, .. }
            | OpKind::MuLaw { input: x, .. }
            | OpKind::InverseMuLaw { input: x, .. } => vec![*x],
            OpKind::Add(a, b) | OpKind::Concat(a, b) | OpKind::MeanAbsDiff(a, b) => vec![*a, *b],
            OpKind::WeightedSum(terms) => terms.iter().map(|(v, _)| *v).collect(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    kind: OpKind,
    requires_grad: bool,
    /// Constant operand of `MulConst`.
    aux: Option<Tensor<T>>,
}

/// Deliberate gradient corruption, used as a negative control for
/// gradient verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradFault {
    /// Multiply every convolution weight gradient by this factor.
    ScaleConvWeights(f64),
}

/// A recording of tensor operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<GradFault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` if `v` does not require one or was not reached.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, a, b))
    }
}

fn mu_law_domain<T: Scalar>(op: &str, t: &Tensor<T>) -> Result<()> {
    const SLACK: f64 = 1e-6;
    match t
        .data()
        .iter()
        .find(|v| !(v.as_f64() >= -SLACK && v.as_f64() <= 1.0 + SLACK))
    {
        Some(bad) => Err(Error::Domain(format!(
            "{op} expects values in [0, 1], found {:?}",
            bad
        ))),
        None => Ok(()),
    }
}

/// Neumaier-compensated sum. Scalar reductions feed finite-difference
/// checks, where a few ulps of loss noise are visible.
fn compensated_sum<T: Scalar>(values: impl Iterator<Item = T>) -> T {
    let (mut sum, mut comp) = (T::zero(), T::zero());
    for v in values {
        let t = sum + v;
        comp = comp
            + if sum.abs() >= v.abs() {
                (sum - t) + v
            } else {
                (v - t) + sum
            };
        sum = t;
    }
    sum + comp
}

pub(crate) fn mu_law_value<T: Scalar>(x: T, mu: T) -> T {
    (T::one() + mu * x).ln() / (T::one() + mu).ln()
}

pub(crate) fn inverse_mu_law_value<T: Scalar>(y: T, mu: T) -> T {
    ((T::one() + mu).powf(y) - T::one()) / mu
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn with_fault(fault: GradFault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> &OpKind {
        &self.nodes[v.0].kind
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// All node handles in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.nodes.len()).map(Var)
    }

    fn push(&mut self, value: Tensor<T>, kind: OpKind, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            kind,
            requires_grad,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient (a trainable parameter or a probed input).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, OpKind::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, OpKind::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let geom = ConvGeometry::new(
            self.value(input).shape(),
            self.value(weight).shape(),
            dilation,
        )?;
        if self.value(bias).shape() != [geom.out_channels] {
            return Err(Error::shape(
                "conv2d bias",
                self.value(bias).shape(),
                &[geom.out_channels],
            ));
        }
        let out = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(geom.output_shape().to_vec(), out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            OpKind::Conv2d {
                input,
                weight,
                bias,
                kernel: (geom.kernel_h, geom.kernel_w),
                dilation,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(value, OpKind::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::tanh);
        let rg = self.any_grad(&[x]);
        self.push(value, OpKind::Tanh(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a).shape(), self.value(b).shape())?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, OpKind::Add(a, b), rg))
    }

    /// Concatenates two rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for n in 0..na {
            data.extend_from_slice(&da[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&db[n * cb * plane..(n + 1) * cb * plane]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, OpKind::Concat(a, b), rg))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::of(scale), T::of(shift));
        let value = self.value(x).map(|v| s * v + b);
        let rg = self.any_grad(&[x]);
        self.push(value, OpKind::Affine { input: x, scale, shift }, rg)
    }

    /// Elementwise `ln(1 + mu·x) / ln(1 + mu)` for `x` in `[0, 1]`.
    pub fn mu_law(&mut self, x: Var, mu: f64) -> Result<Var> {
        mu_law_domain("mu_law", self.value(x))?;
        let m = T::of(mu);
        let value = self.value(x).map(|v| mu_law_value(v, m));
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, OpKind::MuLaw { input: x, mu }, rg))
    }

    /// Elementwise `((1 + mu)^y − 1) / mu` for `y` in `[0, 1]`.
    pub fn inverse_mu_law(&mut self, y: Var, mu: f64) -> Result<Var> {
        mu_law_domain("inverse_mu_law", self.value(y))?;
        let m = T::of(mu);
        let value = self.value(y).map(|v| inverse_mu_law_value(v, m));
        let rg = self.any_grad(&[y]);
        Ok(self.push(value, OpKind::InverseMuLaw { input: y, mu }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = compensated_sum(self.value(x).data().iter().copied());
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), OpKind::Sum(x), rg)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        check_same("mul_const", self.value(x).shape(), c.shape())?;
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let value = Tensor::new(c.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        let v = self.push(value, OpKind::MulConst(x), rg);
        self.nodes[v.0].aux = Some(c);
        Ok(v)
    }

    /// Scalar `mean(|a − b|)`.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mean_abs_diff", self.value(a).shape(), self.value(b).shape())?;
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let total = compensated_sum(
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| (x - y).abs()),
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::scalar(total / T::of(n as f64)),
            OpKind::MeanAbsDiff(a, b),
            rg,
        ))
    }

    /// Scalar `Σ wᵢ·xᵢ` over single-element inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let products = terms
            .iter()
            .map(|&(v, w)| Ok(T::of(w) * self.value(v).item()?))
            .collect::<Result<Vec<T>>>()?;
        let acc = compensated_sum(products.into_iter());
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        Ok(self.push(Tensor::scalar(acc), OpKind::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a single-element loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.kind {
            OpKind::Leaf => {}
            OpKind::Conv2d {
                input,
                weight,
                bias,
                dilation,
                ..
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let geom = ConvGeometry::new(x.shape(), w.shape(), *dilation)
                    .expect("geometry validated at record time");
                let need_params = needs(*weight) || needs(*bias);
                let cg = conv::backward(&geom, x.data(), w.data(), g.data(), needs(*input), need_params);
                if let Some(gi) = cg.input {
                    accumulate(grads, *input, x.shape(), gi);
                }
                if let Some(mut gw) = cg.weight {
                    if let Some(GradFault::ScaleConvWeights(f)) = self.fault {
                        let f = T::of(f);
                        gw.iter_mut().for_each(|v| *v = *v * f);
                    }
                    if needs(*weight) {
                        accumulate(grads, *weight, w.shape(), gw);
                    }
                }
                if let Some(gb) = cg.bias {
                    if needs(*bias) {
                        accumulate(grads, *bias, &[geom.out_channels], gb);
                    }
                }
            }
            OpKind::Relu(x) => {
                let out = node.value.data();
                let gi = g
                    .data()
                    .iter()
                    .zip(out)
                    .map(|(&gv, &o)| if o > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, g.shape(), gi);
            }
            OpKind::Tanh(x) => {
                let out = node.value.data();
                let gi = g
                    .data()
                    .iter()
                    .zip(out)
                    .map(|(&gv, &o)| gv * (T::one() - o * o))
                    .collect();
                accumulate(grads, *x, g.shape(), gi);
            }
            OpKind::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        accumulate(grads, v, g.shape(), g.data().to_vec());
                    }
                }
            }
            OpKind::Concat(a, b) => {
                let ca = self.value(*a).shape()[1];
                let (ga, gb) = g.split_channels(ca).expect("concat output is rank 4");
                if needs(*a) {
                    let shape = ga.shape().to_vec();
                    accumulate(grads, *a, &shape, ga.into_data());
                }
                if needs(*b) {
                    let shape = gb.shape().to_vec();
                    accumulate(grads, *b, &shape, gb.into_data());
                }
            }
            OpKind::Affine { input, scale, .. } => {
                let s = T::of(*scale);
                let gi = g.data().iter().map(|&v| v * s).collect();
                accumulate(grads, *input, g.shape(), gi);
            }
            OpKind::MuLaw { input, mu } => {
                let m = T::of(*mu);
                let denom = (T::one() + m).ln();
                let x = self.value(*input).data();
                let gi = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| gv * m / ((T::one() + m * xv) * denom))
                    .collect();
                accumulate(grads, *input, g.shape(), gi);
            }
            OpKind::InverseMuLaw { input, mu } => {
                let m = T::of(*mu);
                let ln = (T::one() + m).ln();
                let y = self.value(*input).data();
                let gi = g
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * (T::one() + m).powf(yv) * ln / m)
                    .collect();
                accumulate(grads, *input, g.shape(), gi);
            }
            OpKind::Sum(x) => {
                let gv = g.data()[0];
                let shape = self.value(*x).shape();
                let n = self.value(*x).len();
                accumulate(grads, *x, shape, vec![gv; n]);
            }
            OpKind::MulConst(x) => {
                let c = node.aux.as_ref().expect("mul_const keeps its operand");
                let gi = g.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
                accumulate(grads, *x, g.shape(), gi);
            }
            OpKind::MeanAbsDiff(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let scale = g.data()[0] / T::of(av.len() as f64);
                let sign: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| {
                        if x > y {
                            scale
                        } else if x < y {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if needs(*b) {
                    let neg = sign.iter().map(|&v| -v).collect();
                    accumulate(grads, *b, bv.shape(), neg);
                }
                if needs(*a) {
                    accumulate(grads, *a, av.shape(), sign);
                }
            }
            OpKind::WeightedSum(terms) => {
                let gv = g.data()[0];
                for &(v, w) in terms {
                    if needs(v) {
                        accumulate(grads, v, &[1], vec![gv * T::of(w)]);
                    }
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(g)
            .for_each(|(a, b)| *a = *a + b),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient matches operand shape"))
        }
    }
}

/// Central-difference estimate of `∂f/∂p`, one element at a time:
/// `(f(p + eps·eᵢ) − f(p − eps·eᵢ)) / (2·eps)`.
///
/// Elements are evaluated independently and may run in parallel.
pub fn finite_diff_grad<T, F>(f: F, p: &Tensor<T>, eps: f64) -> Tensor<T>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> T + Send + Sync,
{
    let e = T::of(eps);
    let data = exec::map_indices(p.len(), |i| {
        let mut probe = p.clone();
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + e;
        let up = f(&probe);
        probe.data_mut()[i] = orig - e;
        let down = f(&probe);
        (up - down) / (e + e)
    });
    Tensor::new(p.shape().to_vec(), data).expect("same element count")
}

/// Elementwise relative error `|a − b| / max(|a|, |b|, floor)`, maximized.
pub fn max_relative_error<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn detached_parameter_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::full(&[3], 2.0));
        let q = tape.param(Tensor::full(&[3], 1.0));
        let s = tape.sum(q);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(p).is_none());
        assert_eq!(grads.get(q).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn linear_map_gradient_is_the_constant() {
        let x = Tensor::new(vec![4], vec![0.5, -1.0, 3.0, 2.0]).unwrap();
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::full(&[4], 0.3));
        let wx = tape.mul_const(w, x.clone()).unwrap();
        let loss = tape.sum(wx);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &x);
    }

    #[test]
    fn shared_node_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(&[2], 1.5));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn fault_scales_weight_gradient() {
        let run = |tape: &mut Tape<f64>| {
            let x = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
            let w = tape.param(Tensor::full(&[1, 1, 1, 1], 0.5));
            let b = tape.param(Tensor::zeros(&[1]));
            let y = tape.conv2d(x, w, b, 1).unwrap();
            let s = tape.sum(y);
            tape.backward(s).unwrap().get(w).unwrap().data()[0]
        };
        let clean = run(&mut Tape::new());
        let faulty = run(&mut Tape::with_fault(GradFault::ScaleConvWeights(2.0)));
        assert_eq!(clean, 4.0);
        assert_eq!(faulty, 8.0);
    }
}
