//! Tape-based reverse-mode automatic differentiation over `f64` scalars.
//!
//! A [`Tape`] records every elementary operation as a node holding the
//! local partial derivatives with respect to its inputs (a Wengert list).
//! [`Tape::gradient`] then sweeps the list once in reverse, accumulating
//! adjoints, so the cost of a full gradient is a small constant multiple of
//! the cost of the forward evaluation regardless of the parameter count.
//!
//! Numerical code is written once against the [`Scalar`] trait and runs
//! either on plain `f64` (value only) or on [`Var`] (value plus tape record).
//!
//! ```
//! use gmcm::autodiff::{Scalar, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x + x.ln();
//! let grad = tape.gradient(y);
//! assert!((grad.wrt(x) - (6.0 + 1.0 / 3.0)).abs() < 1e-12);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the likelihood code, implemented by `f64` and [`Var`].
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn square(self) -> Self {
        self * self
    }
    fn powi(self, n: i32) -> Self;
    /// Sum of a non-empty slice.
    fn sum(xs: &[Self]) -> Self;
    /// `ln Σ exp(xᵢ)` of a non-empty slice, shifted by the maximum.
    fn log_sum_exp(xs: &[Self]) -> Self;
}

/// Shift-by-max log-sum-exp on plain floats.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

impl Scalar for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        log_sum_exp(xs)
    }
}

#[derive(Default)]
struct TapeInner {
    /// Per node: (offset, count) into `edges`.
    nodes: Vec<(u32, u32)>,
    /// (parent index, ∂node/∂parent)
    edges: Vec<(u32, f64)>,
}

/// Records operations on [`Var`]s for a later reverse sweep.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("edges", &inner.edges.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            inner: RefCell::new(TapeInner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(2 * nodes),
            }),
        }
    }

    /// A new independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(&[]);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: &[(u32, f64)]) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len() as u32;
        let start = inner.edges.len() as u32;
        inner.edges.extend_from_slice(parents);
        inner.nodes.push((start, parents.len() as u32));
        idx
    }

    fn derived(&self, val: f64, parents: &[(u32, f64)]) -> Var<'_> {
        Var {
            tape: self,
            idx: self.push(parents),
            val,
        }
    }

    /// Adjoints of every node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Gradient {
        assert!(
            std::ptr::eq(output.tape, self),
            "output variable belongs to a different tape"
        );
        let inner = self.inner.borrow();
        let mut adjoints = vec![0.0; output.idx as usize + 1];
        adjoints[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let (start, len) = inner.nodes[i];
            for &(parent, partial) in &inner.edges[start as usize..(start + len) as usize] {
                adjoints[parent as usize] += a * partial;
            }
        }
        Gradient { adjoints }
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    /// ∂output/∂`v`; zero for nodes recorded after the output.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoints.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.val)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, val: f64, partial: f64) -> Self {
        self.tape.derived(val, &[(self.idx, partial)])
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        self.tape
            .derived(val, &[(self.idx, da), (other.idx, db)])
    }
}

impl Scalar for Var<'_> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn lift(self, c: f64) -> Self {
        self.tape.var(c)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    fn powi(self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            f64::from(n) * self.val.powi(n - 1)
        };
        self.unary(self.val.powi(n), d)
    }

    fn sum(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let parents: Vec<(u32, f64)> = xs.iter().map(|x| (x.idx, 1.0)).collect();
        tape.derived(xs.iter().map(|x| x.val).sum(), &parents)
    }

    fn log_sum_exp(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let vals: Vec<f64> = xs.iter().map(|x| x.val).collect();
        let out = log_sum_exp(&vals);
        // softmax weights are the partials
        let parents: Vec<(u32, f64)> = xs
            .iter()
            .map(|x| {
                let w = if out.is_finite() {
                    (x.val - out).exp()
                } else {
                    0.0
                };
                (x.idx, w)
            })
            .collect();
        tape.derived(out, &parents)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}
