//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only Wengert list. Every node stores its value and
//! the local partial derivatives with respect to its parents, so the backward
//! sweep is a single reverse pass over the node array.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Logistic,
    Clamp,
    Pow,
    Sum,
    Dot,
    Custom,
}

#[derive(Default)]
struct Inner {
    values: Vec<f64>,
    kinds: Vec<OpKind>,
    // edges of node i live in edges[starts[i]..starts[i + 1]]
    starts: Vec<u32>,
    edges: Vec<(u32, f64)>,
    nonsmooth: usize,
}

#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        let tape = Self::default();
        tape.inner.borrow_mut().starts.push(0);
        tape
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let tape = Self::new();
        {
            let mut inner = tape.inner.borrow_mut();
            inner.values.reserve(nodes);
            inner.kinds.reserve(nodes);
            inner.starts.reserve(nodes + 1);
            inner.edges.reserve(nodes * 2);
        }
        tape
    }

    fn push(&self, kind: OpKind, value: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.values.len() as u32;
        inner.values.push(value);
        inner.kinds.push(kind);
        inner.edges.extend(edges);
        let end = inner.edges.len() as u32;
        inner.starts.push(end);
        Var { tape: self, idx }
    }

    /// Independent input (parameter or constant).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Leaf, value, [])
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self, node: usize) -> OpKind {
        self.inner.borrow().kinds[node]
    }

    /// Number of operations recorded at a non-differentiable point
    /// (an active clamp or floor).
    pub fn nonsmooth_count(&self) -> usize {
        self.inner.borrow().nonsmooth
    }

    pub fn mark_nonsmooth(&self) {
        self.inner.borrow_mut().nonsmooth += 1;
    }

    /// Reverse sweep from `output`; returns the adjoint of every node.
    pub fn adjoints(&self, output: Var<'_>) -> Result<Vec<f64>> {
        let inner = self.inner.borrow();
        let out = output.idx as usize;
        if let Some(bad) = inner.values[..=out].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: bad });
        }
        let mut adj = vec![0.0; out + 1];
        adj[out] = 1.0;
        for i in (0..=out).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (inner.starts[i] as usize, inner.starts[i + 1] as usize);
            for &(p, d) in &inner.edges[s..e] {
                adj[p as usize] += a * d;
            }
        }
        Ok(adj)
    }

    /// Gradient of `output` w.r.t. the given input nodes.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<f64>> {
        let adj = self.adjoints(output)?;
        Ok(inputs
            .iter()
            .map(|v| adj.get(v.idx as usize).copied().unwrap_or(0.0))
            .collect())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.inner.borrow().values[self.idx as usize]
    }

    pub fn index(&self) -> usize {
        self.idx as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, kind: OpKind, value: f64, deriv: f64) -> Self {
        self.tape.push(kind, value, [(self.idx, deriv)])
    }

    pub fn exp(self) -> Self {
        let v = self.value().exp();
        self.unary(OpKind::Exp, v, v)
    }

    pub fn ln(self) -> Self {
        let x = self.value();
        self.unary(OpKind::Ln, x.ln(), 1.0 / x)
    }

    pub fn tanh(self) -> Self {
        let v = self.value().tanh();
        self.unary(OpKind::Tanh, v, 1.0 - v * v)
    }

    pub fn logistic(self) -> Self {
        let x = self.value();
        let v = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        self.unary(OpKind::Logistic, v, v * (1.0 - v))
    }

    /// Clamp to `[lo, hi]` with pass-through subgradient (1 inside, 0 outside).
    pub fn clamp(self, lo: f64, hi: f64) -> Self {
        let x = self.value();
        if x < lo || x > hi {
            self.tape.mark_nonsmooth();
            self.unary(OpKind::Clamp, x.clamp(lo, hi), 0.0)
        } else {
            self.unary(OpKind::Clamp, x, 1.0)
        }
    }

    pub fn powf(self, e: f64) -> Self {
        let x = self.value();
        self.unary(OpKind::Pow, x.powf(e), e * x.powf(e - 1.0))
    }

    pub fn square(self) -> Self {
        let x = self.value();
        self.unary(OpKind::Pow, x * x, 2.0 * x)
    }

    /// `ln(max(x, floor))`.
    pub fn ln_floor(self, floor: f64) -> Self {
        let x = self.value();
        if x < floor {
            self.tape.mark_nonsmooth();
            self.unary(OpKind::Ln, floor.ln(), 0.0)
        } else {
            self.unary(OpKind::Ln, x.ln(), 1.0 / x)
        }
    }

    /// Node with externally supplied value and partial derivatives.
    pub fn custom(parents: &[Var<'t>], value: f64, partials: &[f64]) -> Self {
        let tape = parents[0].tape;
        tape.push(
            OpKind::Custom,
            value,
            parents.iter().zip(partials).map(|(p, &d)| (p.idx, d)),
        )
    }

    /// `Σ items`; `None` when empty.
    pub fn sum(items: &[Var<'t>]) -> Option<Self> {
        let tape = items.first()?.tape;
        let v = {
            let inner = tape.inner.borrow();
            items.iter().map(|x| inner.values[x.idx as usize]).sum()
        };
        Some(tape.push(OpKind::Sum, v, items.iter().map(|x| (x.idx, 1.0))))
    }

    /// `bias + Σ w_k x_k` with constant inputs `x`.
    pub fn dot_const(weights: &[Var<'t>], x: &[f64], bias: Var<'t>) -> Self {
        let tape = bias.tape;
        let v = {
            let inner = tape.inner.borrow();
            weights
                .iter()
                .zip(x)
                .fold(inner.values[bias.idx as usize], |acc, (w, &xi)| {
                    acc + inner.values[w.idx as usize] * xi
                })
        };
        tape.push(
            OpKind::Dot,
            v,
            std::iter::once((bias.idx, 1.0)).chain(weights.iter().zip(x).map(|(w, &xi)| (w.idx, xi))),
        )
    }

    /// `bias + Σ w_k x_k` with both factors on the tape.
    pub fn dot(weights: &[Var<'t>], x: &[Var<'t>], bias: Var<'t>) -> Self {
        let tape = bias.tape;
        let (v, pairs): (f64, Vec<(f64, f64)>) = {
            let inner = tape.inner.borrow();
            let pairs: Vec<(f64, f64)> = weights
                .iter()
                .zip(x)
                .map(|(w, xi)| (inner.values[w.idx as usize], inner.values[xi.idx as usize]))
                .collect();
            let v = pairs
                .iter()
                .fold(inner.values[bias.idx as usize], |acc, (w, xi)| acc + w * xi);
            (v, pairs)
        };
        let edges = std::iter::once((bias.idx, 1.0)).chain(
            weights
                .iter()
                .zip(x)
                .zip(pairs)
                .flat_map(|((w, xi), (wv, xv))| [(w.idx, xv), (xi.idx, wv)]),
        );
        tape.push(OpKind::Dot, v, edges)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.tape.push(OpKind::Add, v, [(self.idx, 1.0), (rhs.idx, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.tape.push(OpKind::Sub, v, [(self.idx, 1.0), (rhs.idx, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(OpKind::Mul, a * b, [(self.idx, b), (rhs.idx, a)])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.tape
            .push(OpKind::Div, a / b, [(self.idx, 1.0 / b), (rhs.idx, -a / (b * b))])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        let v = -self.value();
        self.unary(OpKind::Neg, v, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        let v = self.value() + rhs;
        self.unary(OpKind::Add, v, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        let v = self.value() - rhs;
        self.unary(OpKind::Sub, v, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        let v = self.value() * rhs;
        self.unary(OpKind::Mul, v, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        let v = self.value() / rhs;
        self.unary(OpKind::Div, v, 1.0 / rhs)
    }
}
