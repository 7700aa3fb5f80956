//! Scalar abstraction shared by the numeric kernels.
//!
//! Every kernel in [`crate::kernels`] is generic over [`Scalar`], so the same
//! code path runs on plain `f64` in production and on [`Counted`] when the cost
//! benchmark needs exact operation counts.
//!
//! Counting convention: `*` counts one multiply, `+`/`-` one add, `/` one
//! division, `exp`/`ln` one transcendental. Negation, comparisons and `abs`
//! are free.

use std::cell::Cell;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
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
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// Operation tallies collected while running kernels on [`Counted`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub multiplies: u64,
    pub adds: u64,
    pub divides: u64,
    pub exps: u64,
}

thread_local! {
    static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts { multiplies: 0, adds: 0, divides: 0, exps: 0 }) };
}

#[inline]
fn bump(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

/// Runs `f` with fresh thread-local counters and returns what it consumed.
///
/// Counters are per thread, so `f` must not hand [`Counted`] work to other
/// threads.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    let saved = COUNTS.with(|c| c.replace(OpCounts::default()));
    let out = f();
    let used = COUNTS.with(|c| c.replace(saved));
    (out, used)
}

/// An `f64` that tallies every arithmetic operation performed on it.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Counted(pub f64);

impl Add for Counted {
    type Output = Counted;
    #[inline]
    fn add(self, rhs: Counted) -> Counted {
        bump(|c| c.adds += 1);
        Counted(self.0 + rhs.0)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Sub for Counted {
    type Output = Counted;
    #[inline]
    fn sub(self, rhs: Counted) -> Counted {
        bump(|c| c.adds += 1);
        Counted(self.0 - rhs.0)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Mul for Counted {
    type Output = Counted;
    #[inline]
    fn mul(self, rhs: Counted) -> Counted {
        bump(|c| c.multiplies += 1);
        Counted(self.0 * rhs.0)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Div for Counted {
    type Output = Counted;
    #[inline]
    fn div(self, rhs: Counted) -> Counted {
        bump(|c| c.divides += 1);
        Counted(self.0 / rhs.0)
    }
}

impl Neg for Counted {
    type Output = Counted;
    #[inline]
    fn neg(self) -> Counted {
        Counted(-self.0)
    }
}

impl Scalar for Counted {
    fn from_f64(v: f64) -> Self {
        Counted(v)
    }
    fn to_f64(self) -> f64 {
        self.0
    }
    fn exp(self) -> Self {
        bump(|c| c.exps += 1);
        Counted(self.0.exp())
    }
    fn ln(self) -> Self {
        bump(|c| c.exps += 1);
        Counted(self.0.ln())
    }
    fn abs(self) -> Self {
        Counted(self.0.abs())
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy)]
pub struct CompensatedSum<S> {
    sum: S,
    comp: S,
}

impl<S: Scalar> Default for CompensatedSum<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> CompensatedSum<S> {
    pub fn new() -> Self {
        CompensatedSum {
            sum: S::zero(),
            comp: S::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, x: S) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> S {
        self.sum + self.comp
    }
}

impl<S: Scalar> AddAssign<S> for CompensatedSum<S> {
    fn add_assign(&mut self, rhs: S) {
        self.add(rhs);
    }
}

/// Compensated sum of an iterator.
pub fn compensated_sum<S: Scalar>(items: impl IntoIterator<Item = S>) -> S {
    let mut acc = CompensatedSum::new();
    for x in items {
        acc.add(x);
    }
    acc.value()
}
