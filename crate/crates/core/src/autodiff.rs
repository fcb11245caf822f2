//! Hyper-dual numbers for exact first and second derivatives.
//!
//! A hyper-dual number `a + b·ε₁ + c·ε₂ + d·ε₁ε₂` with `ε₁² = ε₂² = 0`
//! carries, after evaluating a function `f` at `x + ε₁·u + ε₂·v`, the value
//! `f(x)`, the directional derivatives `∇f·u`, `∇f·v` and the mixed second
//! derivative `uᵀ∇²f v`, all without truncation error.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub const fn constant(re: f64) -> Self {
        Self {
            re,
            e1: 0.0,
            e2: 0.0,
            e12: 0.0,
        }
    }

    pub const fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        Self { re, e1, e2, e12 }
    }

    /// Applies a scalar function given its value and first two derivatives at `re`.
    #[inline]
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        Self {
            re: f0,
            e1: f1 * self.e1,
            e2: f1 * self.e2,
            e12: f1 * self.e12 + f2 * self.e1 * self.e2,
        }
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.re;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.re))
    }

    pub fn ln(self) -> Self {
        let r = 1.0 / self.re;
        self.chain(self.re.ln(), r, -r * r)
    }

    pub fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn asin(self) -> Self {
        let w = 1.0 - self.re * self.re;
        let d1 = 1.0 / w.sqrt();
        self.chain(self.re.asin(), d1, self.re * d1 / w)
    }

    pub fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::constant(1.0),
            1 => self,
            _ => {
                let nf = f64::from(n);
                self.chain(
                    self.re.powi(n),
                    nf * self.re.powi(n - 1),
                    nf * (nf - 1.0) * self.re.powi(n - 2),
                )
            }
        }
    }

    pub fn powf(self, p: f64) -> Self {
        self.chain(
            self.re.powf(p),
            p * self.re.powf(p - 1.0),
            p * (p - 1.0) * self.re.powf(p - 2.0),
        )
    }

    /// `|x|`; the derivative at zero is taken as zero.
    pub fn abs(self) -> Self {
        if self.re >= 0.0 {
            self
        } else {
            -self
        }
    }
}

impl From<f64> for HyperDual {
    fn from(re: f64) -> Self {
        Self::constant(re)
    }
}

impl Add for HyperDual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(
            self.re + o.re,
            self.e1 + o.e1,
            self.e2 + o.e2,
            self.e12 + o.e12,
        )
    }
}

impl Sub for HyperDual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.re - o.re,
            self.e1 - o.e1,
            self.e2 - o.e2,
            self.e12 - o.e12,
        )
    }
}

impl Mul for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re,
            self.re * o.e1 + self.e1 * o.re,
            self.re * o.e2 + self.e2 * o.re,
            self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        )
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Neg for HyperDual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl Add<f64> for HyperDual {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Self {
            re: self.re + o,
            ..self
        }
    }
}

impl Sub<f64> for HyperDual {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Self {
            re: self.re - o,
            ..self
        }
    }
}

impl Mul<f64> for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        Self::new(self.re * o, self.e1 * o, self.e2 * o, self.e12 * o)
    }
}

impl Div<f64> for HyperDual {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl Add<HyperDual> for f64 {
    type Output = HyperDual;
    #[inline]
    fn add(self, o: HyperDual) -> HyperDual {
        o + self
    }
}

impl Sub<HyperDual> for f64 {
    type Output = HyperDual;
    #[inline]
    fn sub(self, o: HyperDual) -> HyperDual {
        -o + self
    }
}

impl Mul<HyperDual> for f64 {
    type Output = HyperDual;
    #[inline]
    fn mul(self, o: HyperDual) -> HyperDual {
        o * self
    }
}

impl Div<HyperDual> for f64 {
    type Output = HyperDual;
    #[inline]
    fn div(self, o: HyperDual) -> HyperDual {
        o.recip() * self
    }
}

impl AddAssign for HyperDual {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for HyperDual {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for HyperDual {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

/// Seeds `q` with `ε₁` along axis `i` and `ε₂` along axis `j`.
pub fn seed(q: &DVector<f64>, i: Option<usize>, j: Option<usize>) -> Vec<HyperDual> {
    q.iter()
        .enumerate()
        .map(|(k, &v)| {
            HyperDual::new(
                v,
                if Some(k) == i { 1.0 } else { 0.0 },
                if Some(k) == j { 1.0 } else { 0.0 },
                0.0,
            )
        })
        .collect()
}

/// Value, gradient and Hessian of `f` at `q`.
pub fn value_gradient_hessian<F>(f: F, q: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>)
where
    F: Fn(&[HyperDual]) -> HyperDual,
{
    let n = q.len();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut value = f64::NAN;
    for i in 0..n {
        for j in i..n {
            let r = f(&seed(q, Some(i), Some(j)));
            value = r.re;
            grad[i] = r.e1;
            grad[j] = r.e2;
            hess[(i, j)] = r.e12;
            hess[(j, i)] = r.e12;
        }
    }
    if n == 0 {
        value = f(&[]).re;
    }
    (value, grad, hess)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_elementary_functions() {
        let x = HyperDual::new(0.3, 1.0, 1.0, 0.0);
        let checks: [(HyperDual, f64, f64, f64); 5] = [
            (x.sin(), 0.3f64.sin(), 0.3f64.cos(), -0.3f64.sin()),
            (x.ln(), 0.3f64.ln(), 1.0 / 0.3, -1.0 / 0.09),
            (
                x.asin(),
                0.3f64.asin(),
                1.0 / 0.91f64.sqrt(),
                0.3 / 0.91f64.powf(1.5),
            ),
            (x.powi(3), 0.027, 0.27, 1.8),
            (x.recip(), 1.0 / 0.3, -1.0 / 0.09, 2.0 / 0.027),
        ];
        for (r, v, d1, d2) in checks {
            assert!((r.re - v).abs() < 1e-14);
            assert!((r.e1 - d1).abs() < 1e-12 * d1.abs().max(1.0));
            assert!((r.e12 - d2).abs() < 1e-11 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn mixed_hessian_of_product() {
        let q = DVector::from_vec(vec![1.5, -0.5]);
        let (v, g, h) = value_gradient_hessian(|p| p[0] * p[0] * p[1], &q);
        assert_eq!(v, -1.125);
        assert_eq!(g.as_slice(), &[-1.5, 2.25]);
        assert_eq!(h[(0, 0)], -1.0);
        assert_eq!(h[(0, 1)], 3.0);
        assert_eq!(h[(1, 1)], 0.0);
    }
}
