//! Scalar types that basis kernels are generic over.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;

    fn sqr(&self) -> Self {
        self.clone() * self.clone()
    }

    fn powi(&self, n: u32) -> Self {
        match n {
            0 => Self::cst(1.0),
            1 => self.clone(),
            _ => {
                let mut r = self.clone();
                for _ in 1..n {
                    r = r * self.clone();
                }
                r
            }
        }
    }

    fn is_finite(&self) -> bool;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// Forward-mode dual number carrying `L` tangent lanes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const L: usize> {
    pub re: f64,
    pub eps: [f64; L],
}

impl<const L: usize> Dual<L> {
    pub fn new(re: f64, eps: [f64; L]) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; L] }
    }

    fn chain(self, f: f64, df: f64) -> Self {
        let mut eps = self.eps;
        eps.iter_mut().for_each(|e| *e *= df);
        Self { re: f, eps }
    }
}

impl<const L: usize> Add for Dual<L> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.re += o.re;
        for (a, b) in self.eps.iter_mut().zip(o.eps) {
            *a += b;
        }
        self
    }
}

impl<const L: usize> Sub for Dual<L> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        self.re -= o.re;
        for (a, b) in self.eps.iter_mut().zip(o.eps) {
            *a -= b;
        }
        self
    }
}

impl<const L: usize> Mul for Dual<L> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut eps = [0.0; L];
        for l in 0..L {
            eps[l] = self.eps[l] * o.re + self.re * o.eps[l];
        }
        Self {
            re: self.re * o.re,
            eps,
        }
    }
}

impl<const L: usize> Neg for Dual<L> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.re = -self.re;
        self.eps.iter_mut().for_each(|e| *e = -*e);
        self
    }
}

impl<const L: usize> Add<f64> for Dual<L> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.re += o;
        self
    }
}

impl<const L: usize> Sub<f64> for Dual<L> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.re -= o;
        self
    }
}

impl<const L: usize> Mul<f64> for Dual<L> {
    type Output = Self;
    fn mul(mut self, o: f64) -> Self {
        self.re *= o;
        self.eps.iter_mut().for_each(|e| *e *= o);
        self
    }
}

impl<const L: usize> AddAssign for Dual<L> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const L: usize> SubAssign for Dual<L> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const L: usize> Scalar for Dual<L> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(&self) -> f64 {
        self.re
    }
    fn sin(&self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.iter().all(|e| e.is_finite())
    }
}

/// Propagates which inputs a value depends on, and which input pairs
/// appear in its second derivative.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tracer {
    pub deps: Vec<u32>,
    /// Pairs `(i, j)` with `i <= j`.
    pub hess: Vec<(u32, u32)>,
}

impl Tracer {
    pub fn var(i: usize) -> Self {
        Self {
            deps: vec![i as u32],
            hess: vec![],
        }
    }

    fn union<T: Ord + Copy>(a: &[T], b: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut p, mut q) = (0, 0);
        while p < a.len() || q < b.len() {
            if q == b.len() || (p < a.len() && a[p] < b[q]) {
                out.push(a[p]);
                p += 1;
            } else if p == a.len() || b[q] < a[p] {
                out.push(b[q]);
                q += 1;
            } else {
                out.push(a[p]);
                p += 1;
                q += 1;
            }
        }
        out
    }

    fn cross(a: &[u32], b: &[u32]) -> Vec<(u32, u32)> {
        let mut out: Vec<(u32, u32)> = a
            .iter()
            .flat_map(|&i| b.iter().map(move |&j| (i.min(j), i.max(j))))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn nonlinear(&self) -> Self {
        Self {
            deps: self.deps.clone(),
            hess: Self::union(&self.hess, &Self::cross(&self.deps, &self.deps)),
        }
    }
}

impl Add for Tracer {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            deps: Self::union(&self.deps, &o.deps),
            hess: Self::union(&self.hess, &o.hess),
        }
    }
}

impl Sub for Tracer {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn sub(self, o: Self) -> Self {
        self + o
    }
}

impl Mul for Tracer {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let hess = Self::union(
            &Self::union(&self.hess, &o.hess),
            &Self::cross(&self.deps, &o.deps),
        );
        Self {
            deps: Self::union(&self.deps, &o.deps),
            hess,
        }
    }
}

impl Neg for Tracer {
    type Output = Self;
    fn neg(self) -> Self {
        self
    }
}

impl Add<f64> for Tracer {
    type Output = Self;
    fn add(self, _: f64) -> Self {
        self
    }
}

impl Sub<f64> for Tracer {
    type Output = Self;
    fn sub(self, _: f64) -> Self {
        self
    }
}

impl Mul<f64> for Tracer {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        if o == 0.0 {
            Self::default()
        } else {
            self
        }
    }
}

impl AddAssign for Tracer {
    fn add_assign(&mut self, o: Self) {
        *self = std::mem::take(self) + o;
    }
}

impl SubAssign for Tracer {
    fn sub_assign(&mut self, o: Self) {
        *self = std::mem::take(self) - o;
    }
}

impl Scalar for Tracer {
    fn cst(_: f64) -> Self {
        Self::default()
    }
    fn value(&self) -> f64 {
        0.0
    }
    fn sin(&self) -> Self {
        self.nonlinear()
    }
    fn cos(&self) -> Self {
        self.nonlinear()
    }
    fn is_finite(&self) -> bool {
        true
    }
}
