//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every node caches its forward value. [`Tape::backward`] walks the nodes in
//! reverse recording order, which is a reverse topological order because
//! inputs are always recorded before the nodes that consume them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{regularizer_vjp, step_raw};
use crate::nn::loss::{heaviside_bce, heaviside_bce_grad, logit_bce, logit_bce_grad};
use crate::nn::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the reverse sweep treats the `mu * R(psi)` term of an evolution step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerGrad {
    /// Differentiate through the regularizer stencil.
    #[default]
    Exact,
    /// Treat the regularizer as a constant (`phi_next` grad flows as identity).
    Stop,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Tanh(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    Scale(Var, f64),
    Step {
        phi: Var,
        velocity: Var,
        dt: f64,
        mu: f64,
        psi: Vec<f64>,
        reg_grad: RegularizerGrad,
    },
    HeavisideBce {
        phi: Var,
        target: Vec<f64>,
        eps: f64,
    },
    LogitBce {
        logits: Var,
        target: Vec<f64>,
    },
    Sum(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Constant input; gradients are tracked but never consumed.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param)
    }

    pub fn conv(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let v = tensor::conv2d(self.value(input), self.value(weight), self.value(bias));
        self.push(
            v,
            Op::Conv {
                input,
                weight,
                bias,
            },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = tensor::tanh(self.value(x));
        self.push(v, Op::Tanh(x))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let v = tensor::avg_pool2(self.value(x));
        self.push(v, Op::AvgPool2(x))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = tensor::upsample2(self.value(x));
        self.push(v, Op::Upsample2(x))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::concat(self.value(a), self.value(b));
        self.push(v, Op::Concat(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = tensor::scale(self.value(x), s);
        self.push(v, Op::Scale(x, s))
    }

    /// Evolution step on single-channel `[1, h, w]` tensors:
    /// `psi = phi - dt V`, `phi_next = psi + mu R(psi)`.
    pub fn evolve_step(
        &mut self,
        phi: Var,
        velocity: Var,
        dt: f64,
        mu: f64,
        reg_grad: RegularizerGrad,
    ) -> Result<Var> {
        let (c, h, w) = self.value(phi).chw();
        if c != 1 || self.value(velocity).shape() != self.value(phi).shape() {
            return Err(Error::Shape(format!(
                "evolution step on {:?} and {:?}",
                self.value(phi).shape(),
                self.value(velocity).shape()
            )));
        }
        let (psi, next) = step_raw(
            self.value(phi).data(),
            self.value(velocity).data(),
            w,
            h,
            dt,
            mu,
        );
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("taped evolution step".into()));
        }
        Ok(self.push(
            Tensor::new(vec![1, h, w], next),
            Op::Step {
                phi,
                velocity,
                dt,
                mu,
                psi,
                reg_grad,
            },
        ))
    }

    /// Mean per-pixel BCE between `H_eps(phi)` and a binary target.
    pub fn heaviside_bce(&mut self, phi: Var, target: &[f64], eps: f64) -> Result<Var> {
        if self.value(phi).len() != target.len() {
            return Err(Error::Shape("heaviside loss target size".into()));
        }
        let v = heaviside_bce(self.value(phi).data(), target, eps);
        Ok(self.push(
            Tensor::scalar(v),
            Op::HeavisideBce {
                phi,
                target: target.to_vec(),
                eps,
            },
        ))
    }

    /// Mean per-pixel BCE between `sigmoid(logits)` and a binary target.
    pub fn logit_bce(&mut self, logits: Var, target: &[f64]) -> Result<Var> {
        if self.value(logits).len() != target.len() {
            return Err(Error::Shape("logit loss target size".into()));
        }
        let v = logit_bce(self.value(logits).data(), target);
        Ok(self.push(
            Tensor::scalar(v),
            Op::LogitBce {
                logits,
                target: target.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let shape = self.value(terms[0]).shape().to_vec();
        let mut acc = Tensor::zeros(shape);
        for &t in terms {
            acc.add_assign(self.value(t));
        }
        self.push(acc, Op::Sum(terms.to_vec()))
    }

    fn evaluate(&self, op: &Op, cached: &Tensor, values: &[Tensor]) -> Tensor {
        let v = |x: &Var| &values[x.0];
        match op {
            Op::Input | Op::Param => cached.clone(),
            Op::Conv {
                input,
                weight,
                bias,
            } => tensor::conv2d(v(input), v(weight), v(bias)),
            Op::Tanh(x) => tensor::tanh(v(x)),
            Op::AvgPool2(x) => tensor::avg_pool2(v(x)),
            Op::Upsample2(x) => tensor::upsample2(v(x)),
            Op::Concat(a, b) => tensor::concat(v(a), v(b)),
            Op::Scale(x, s) => tensor::scale(v(x), *s),
            Op::Step {
                phi,
                velocity,
                dt,
                mu,
                ..
            } => {
                let (_, h, w) = v(phi).chw();
                let (_, next) = step_raw(v(phi).data(), v(velocity).data(), w, h, *dt, *mu);
                Tensor::new(vec![1, h, w], next)
            }
            Op::HeavisideBce { phi, target, eps } => {
                Tensor::scalar(heaviside_bce(v(phi).data(), target, *eps))
            }
            Op::LogitBce { logits, target } => Tensor::scalar(logit_bce(v(logits).data(), target)),
            Op::Sum(terms) => {
                let mut acc = Tensor::zeros(v(&terms[0]).shape().to_vec());
                for t in terms {
                    acc.add_assign(v(t));
                }
                acc
            }
        }
    }

    /// Recomputes every node from its recorded inputs.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = self.evaluate(&node.op, &node.value, &values);
            values.push(v);
        }
        values
    }

    /// Recorded forward values, in node order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }

    /// Reverse sweep seeded with `d loss = seed`.
    pub fn backward(&self, loss: Var, seed: f64) -> Result<Gradients> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Tape(format!(
                "loss node {} not on this tape",
                loss.0
            )));
        };
        if node.value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                node.value.shape()
            )));
        }
        self.vjp(loss, Tensor::scalar(seed))
    }

    /// Vector-Jacobian product: reverse sweep from `out` seeded with
    /// `cotangent`, which must match the shape of `out`.
    pub fn vjp(&self, out: Var, cotangent: Tensor) -> Result<Gradients> {
        let Some(node) = self.nodes.get(out.0) else {
            return Err(Error::Tape(format!("node {} not on this tape", out.0)));
        };
        if node.value.shape() != cotangent.shape() {
            return Err(Error::Tape(format!(
                "cotangent shape {:?} does not match node shape {:?}",
                cotangent.shape(),
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(cotangent);
        let loss = out;

        fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param => {}
                Op::Conv {
                    input,
                    weight,
                    bias,
                } => {
                    let (di, dw, db) =
                        tensor::conv2d_backward(self.value(*input), self.value(*weight), &g);
                    accumulate(&mut grads, *input, di);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Tanh(x) => accumulate(&mut grads, *x, tensor::tanh_backward(&node.value, &g)),
                Op::AvgPool2(x) => {
                    let d = tensor::avg_pool2_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads, *x, d);
                }
                Op::Upsample2(x) => {
                    let d = tensor::upsample2_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads, *x, d);
                }
                Op::Concat(a, b) => {
                    let na = self.value(*a).len();
                    let data = g.data();
                    accumulate(
                        &mut grads,
                        *a,
                        Tensor::new(self.value(*a).shape().to_vec(), data[..na].to_vec()),
                    );
                    accumulate(
                        &mut grads,
                        *b,
                        Tensor::new(self.value(*b).shape().to_vec(), data[na..].to_vec()),
                    );
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, tensor::scale(&g, *s)),
                Op::Step {
                    phi,
                    velocity,
                    dt,
                    mu,
                    psi,
                    reg_grad,
                } => {
                    let (_, h, w) = node.value.chw();
                    let mut d_psi = g.data().to_vec();
                    if *mu != 0.0 && *reg_grad == RegularizerGrad::Exact {
                        for (d, r) in d_psi.iter_mut().zip(regularizer_vjp(psi, g.data(), w, h)) {
                            *d += mu * r;
                        }
                    }
                    let d_vel: Vec<f64> = d_psi.iter().map(|d| -dt * d).collect();
                    accumulate(&mut grads, *velocity, Tensor::new(vec![1, h, w], d_vel));
                    accumulate(&mut grads, *phi, Tensor::new(vec![1, h, w], d_psi));
                }
                Op::HeavisideBce { phi, target, eps } => {
                    let d = heaviside_bce_grad(self.value(*phi).data(), target, *eps, g.item());
                    accumulate(
                        &mut grads,
                        *phi,
                        Tensor::new(self.value(*phi).shape().to_vec(), d),
                    );
                }
                Op::LogitBce { logits, target } => {
                    let d = logit_bce_grad(self.value(*logits).data(), target, g.item());
                    accumulate(
                        &mut grads,
                        *logits,
                        Tensor::new(self.value(*logits).shape().to_vec(), d),
                    );
                }
                Op::Sum(terms) => {
                    for t in terms {
                        accumulate(&mut grads, *t, g.clone());
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Operations shared by the taped and eager forward paths of a network.
pub trait Graph {
    type Value;

    fn conv(&mut self, x: &Self::Value, weight: &Self::Value, bias: &Self::Value) -> Self::Value;
    fn tanh(&mut self, x: &Self::Value) -> Self::Value;
    fn avg_pool2(&mut self, x: &Self::Value) -> Self::Value;
    fn upsample2(&mut self, x: &Self::Value) -> Self::Value;
    fn concat(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
}

impl Graph for Tape {
    type Value = Var;

    fn conv(&mut self, x: &Var, weight: &Var, bias: &Var) -> Var {
        Tape::conv(self, *x, *weight, *bias)
    }

    fn tanh(&mut self, x: &Var) -> Var {
        Tape::tanh(self, *x)
    }

    fn avg_pool2(&mut self, x: &Var) -> Var {
        Tape::avg_pool2(self, *x)
    }

    fn upsample2(&mut self, x: &Var) -> Var {
        Tape::upsample2(self, *x)
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Var {
        Tape::concat(self, *a, *b)
    }
}

/// Forward evaluation without recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Graph for Eager {
    type Value = Tensor;

    fn conv(&mut self, x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
        tensor::conv2d(x, weight, bias)
    }

    fn tanh(&mut self, x: &Tensor) -> Tensor {
        tensor::tanh(x)
    }

    fn avg_pool2(&mut self, x: &Tensor) -> Tensor {
        tensor::avg_pool2(x)
    }

    fn upsample2(&mut self, x: &Tensor) -> Tensor {
        tensor::upsample2(x)
    }

    fn concat(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        tensor::concat(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    /// Finite-difference check of one primitive through a fixed random
    /// cotangent `probe`: compares `J^T probe` against `d<out(x), probe>/dx`.
    fn check_primitive(build: impl Fn(&mut Tape, Var) -> Var, shape: Vec<usize>) {
        let n: usize = shape.iter().product();
        let x0 = Tensor::new(shape, pseudo(11, n));
        let run = |x: &Tensor| -> (Tape, Var, Var) {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let out = build(&mut tape, xv);
            (tape, xv, out)
        };
        let (tape, xv, out) = run(&x0);
        let probe = Tensor::new(
            tape.value(out).shape().to_vec(),
            pseudo(99, tape.value(out).len()),
        );
        let objective = |x: &Tensor| -> f64 {
            let (t, _, o) = run(x);
            t.value(o)
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let grads = tape.vjp(out, probe.clone()).unwrap();
        let analytic = grads.get(xv).unwrap();
        let h = 1e-6;
        for i in 0..n {
            let (mut p, mut m) = (x0.clone(), x0.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = fd.abs().max(a.abs()).max(1e-8);
            assert!((fd - a).abs() / denom < 1e-6, "elem {i}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        check_primitive(|t, x| t.tanh(x), vec![2, 3, 4]);
        check_primitive(|t, x| t.avg_pool2(x), vec![2, 4, 4]);
        check_primitive(|t, x| t.upsample2(x), vec![2, 2, 3]);
        check_primitive(|t, x| t.scale(x, -1.7), vec![1, 3, 3]);
        check_primitive(
            |t, x| {
                let y = t.tanh(x);
                t.concat(x, y)
            },
            vec![1, 4, 4],
        );
        check_primitive(
            |t, x| {
                let w = t.input(Tensor::new(vec![2, 1, 3, 3], pseudo(5, 18)));
                let b = t.input(Tensor::new(vec![2], pseudo(6, 2)));
                t.conv(x, w, b)
            },
            vec![1, 5, 4],
        );
        check_primitive(
            |t, x| {
                let v = t.input(Tensor::new(vec![1, 6, 6], pseudo(7, 36)));
                let phi = t.scale(x, 3.0);
                t.evolve_step(phi, v, 0.7, 0.2, RegularizerGrad::Exact)
                    .unwrap()
            },
            vec![1, 6, 6],
        );
        check_primitive(
            |t, x| {
                let phi = t.input(Tensor::new(vec![1, 6, 6], pseudo(8, 36)));
                t.evolve_step(phi, x, 0.7, 0.2, RegularizerGrad::Exact)
                    .unwrap()
            },
            vec![1, 6, 6],
        );
        let target: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let tgt = target.clone();
        check_primitive(
            move |t, x| t.heaviside_bce(x, &tgt, 1.5).unwrap(),
            vec![1, 4, 4],
        );
        check_primitive(move |t, x| t.logit_bce(x, &target).unwrap(), vec![1, 4, 4]);
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![1, 4, 4], pseudo(1, 16)));
        let w = t.param(Tensor::new(vec![2, 1, 3, 3], pseudo(2, 18)));
        let b = t.param(Tensor::new(vec![2], pseudo(3, 2)));
        let c = t.conv(x, w, b);
        let a = t.tanh(c);
        let p = t.avg_pool2(a);
        let u = t.upsample2(p);
        let _ = t.concat(u, x);
        let replayed = t.replay();
        for (r, v) in replayed.iter().zip(t.values()) {
            assert_eq!(r, v);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let mut t = Tape::new();
        let x = t.input(Tensor::zeros(vec![1, 2, 2]));
        assert!(matches!(t.backward(x, 1.0), Err(Error::Tape(_))));
        assert!(matches!(t.backward(Var(10), 1.0), Err(Error::Tape(_))));
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![1, 2, 2], vec![0.1, -0.2, 0.3, 0.0]));
        let unused = t.param(Tensor::new(vec![1, 2, 2], vec![1.0; 4]));
        let loss = t.logit_bce(x, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let g = t.backward(loss, 1.0).unwrap();
        assert!(g.get(unused).is_none());
        assert!(g
            .get_or_zeros(unused, t.value(unused))
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(g.get(x).is_some());
    }

    #[test]
    fn stop_gradient_skips_regularizer_adjoint() {
        let mut t = Tape::new();
        let phi = t.param(Tensor::new(
            vec![1, 4, 4],
            pseudo(4, 16).iter().map(|v| 3.0 * v).collect(),
        ));
        let v = t.param(Tensor::zeros(vec![1, 4, 4]));
        let next = t
            .evolve_step(phi, v, 1.0, 0.2, RegularizerGrad::Stop)
            .unwrap();
        let loss = t.heaviside_bce(next, &[1.0; 16], 1.5).unwrap();
        let g = t.backward(loss, 1.0).unwrap();
        let d_next = heaviside_bce_grad(t.value(next).data(), &[1.0; 16], 1.5, 1.0);
        assert_eq!(g.get(phi).unwrap().data(), &d_next[..]);
        let dv: Vec<f64> = d_next.iter().map(|d| -d).collect();
        assert_eq!(g.get(v).unwrap().data(), &dv[..]);
    }
}
