//! Scalar functions of one complex variable used as coefficients throughout
//! the cocycle machinery: exact banded Laurent polynomials with an opaque
//! closure fallback.
//!
//! Band arithmetic (add, multiply, differentiate) is exact, which is what
//! lets degree-by-degree normalization drive transition cocycles to identity
//! at roundoff level. Opaque closures participate in the same algebra but
//! only support evaluation; they memoize values because the pipelines
//! re-evaluate on fixed contour sample sets.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Finite Laurent polynomial `sum_i coeffs[i] z^{k_min + i}`.
#[derive(Debug, Clone)]
pub struct LaurentBand {
    pub k_min: i64,
    pub coeffs: Vec<C64>,
}

impl LaurentBand {
    pub fn zero() -> Self {
        LaurentBand { k_min: 0, coeffs: Vec::new() }
    }

    pub fn constant(c: C64) -> Self {
        if c.norm() == 0.0 {
            Self::zero()
        } else {
            LaurentBand { k_min: 0, coeffs: vec![c] }
        }
    }

    pub fn monomial(k: i64, c: C64) -> Self {
        LaurentBand { k_min: k, coeffs: vec![c] }
    }

    pub fn from_pairs(pairs: &[(i64, C64)]) -> Self {
        if pairs.is_empty() {
            return Self::zero();
        }
        let k_min = pairs.iter().map(|p| p.0).min().unwrap();
        let k_max = pairs.iter().map(|p| p.0).max().unwrap();
        let mut coeffs = vec![C64::new(0.0, 0.0); (k_max - k_min + 1) as usize];
        for &(k, c) in pairs {
            coeffs[(k - k_min) as usize] += c;
        }
        LaurentBand { k_min, coeffs }.trimmed()
    }

    pub fn coeff(&self, k: i64) -> C64 {
        let off = k - self.k_min;
        if off < 0 || off as usize >= self.coeffs.len() {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[off as usize]
        }
    }

    pub fn k_max(&self) -> i64 {
        self.k_min + self.coeffs.len() as i64 - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.norm() == 0.0)
    }

    /// Drop exact zeros at both band edges.
    pub fn trimmed(mut self) -> Self {
        while let Some(last) = self.coeffs.last() {
            if last.norm() == 0.0 {
                self.coeffs.pop();
            } else {
                break;
            }
        }
        let lead = self.coeffs.iter().take_while(|c| c.norm() == 0.0).count();
        if lead > 0 {
            self.coeffs.drain(..lead);
            self.k_min += lead as i64;
        }
        if self.coeffs.is_empty() {
            self.k_min = 0;
        }
        self
    }

    pub fn eval(&self, z: C64) -> C64 {
        if self.coeffs.is_empty() {
            return C64::new(0.0, 0.0);
        }
        // Horner on the polynomial part, times z^{k_min}
        let mut acc = C64::new(0.0, 0.0);
        for c in self.coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc * z.powi(self.k_min as i32)
    }

    pub fn add(&self, other: &LaurentBand) -> LaurentBand {
        if self.is_zero() {
            return other.clone().trimmed();
        }
        if other.is_zero() {
            return self.clone().trimmed();
        }
        let k_min = self.k_min.min(other.k_min);
        let k_max = self.k_max().max(other.k_max());
        let mut coeffs = vec![C64::new(0.0, 0.0); (k_max - k_min + 1) as usize];
        for (i, c) in self.coeffs.iter().enumerate() {
            coeffs[(self.k_min - k_min) as usize + i] += c;
        }
        for (i, c) in other.coeffs.iter().enumerate() {
            coeffs[(other.k_min - k_min) as usize + i] += c;
        }
        LaurentBand { k_min, coeffs }.trimmed()
    }

    pub fn mul(&self, other: &LaurentBand) -> LaurentBand {
        if self.is_zero() || other.is_zero() {
            return LaurentBand::zero();
        }
        let mut coeffs =
            vec![C64::new(0.0, 0.0); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.norm() == 0.0 {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        LaurentBand { k_min: self.k_min + other.k_min, coeffs }.trimmed()
    }

    pub fn scale(&self, s: C64) -> LaurentBand {
        LaurentBand {
            k_min: self.k_min,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
        .trimmed()
    }

    pub fn neg(&self) -> LaurentBand {
        self.scale(C64::new(-1.0, 0.0))
    }

    /// d/dz, exact on the band.
    pub fn derivative(&self) -> LaurentBand {
        let pairs: Vec<(i64, C64)> = self
            .coeffs
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let k = self.k_min + i as i64;
                if k == 0 || c.norm() == 0.0 {
                    None
                } else {
                    Some((k - 1, c * C64::new(k as f64, 0.0)))
                }
            })
            .collect();
        LaurentBand::from_pairs(&pairs)
    }

    /// Split into (nonnegative powers, negative powers).
    pub fn split_at_zero(&self) -> (LaurentBand, LaurentBand) {
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = self.k_min + i as i64;
            if k >= 0 {
                plus.push((k, *c));
            } else {
                minus.push((k, *c));
            }
        }
        (LaurentBand::from_pairs(&plus), LaurentBand::from_pairs(&minus))
    }

    /// `sum |c_k| r^k`: an upper bound for the sup on |z| = r.
    pub fn abs_sum_on_circle(&self, r: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.norm() * r.powi((self.k_min + i as i64) as i32))
            .sum()
    }
}

/// Opaque scalar function with value memoization.
pub struct CachedFn {
    f: Box<dyn Fn(C64) -> C64 + Send + Sync>,
    cache: Mutex<HashMap<(u64, u64), C64>>,
}

impl CachedFn {
    pub fn new(f: impl Fn(C64) -> C64 + Send + Sync + 'static) -> Self {
        CachedFn { f: Box::new(f), cache: Mutex::new(HashMap::new()) }
    }

    pub fn eval(&self, z: C64) -> C64 {
        let key = (z.re.to_bits(), z.im.to_bits());
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return *v;
        }
        let v = (self.f)(z);
        self.cache.lock().unwrap().insert(key, v);
        v
    }
}

impl std::fmt::Debug for CachedFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CachedFn")
    }
}

/// Coefficient function of one complex variable.
#[derive(Debug, Clone)]
pub enum ZFun {
    Band(LaurentBand),
    Fun(Arc<CachedFn>),
}

impl ZFun {
    pub fn zero() -> Self {
        ZFun::Band(LaurentBand::zero())
    }

    pub fn constant(c: C64) -> Self {
        ZFun::Band(LaurentBand::constant(c))
    }

    pub fn monomial(k: i64, c: C64) -> Self {
        ZFun::Band(LaurentBand::monomial(k, c))
    }

    pub fn from_fn(f: impl Fn(C64) -> C64 + Send + Sync + 'static) -> Self {
        ZFun::Fun(Arc::new(CachedFn::new(f)))
    }

    pub fn eval(&self, z: C64) -> C64 {
        match self {
            ZFun::Band(b) => b.eval(z),
            ZFun::Fun(f) => f.eval(z),
        }
    }

    pub fn is_exact_zero(&self) -> bool {
        matches!(self, ZFun::Band(b) if b.is_zero())
    }

    pub fn add(&self, other: &ZFun) -> ZFun {
        match (self, other) {
            (ZFun::Band(a), ZFun::Band(b)) => ZFun::Band(a.add(b)),
            _ => {
                if self.is_exact_zero() {
                    return other.clone();
                }
                if other.is_exact_zero() {
                    return self.clone();
                }
                let a = self.clone();
                let b = other.clone();
                ZFun::from_fn(move |z| a.eval(z) + b.eval(z))
            }
        }
    }

    pub fn mul(&self, other: &ZFun) -> ZFun {
        if self.is_exact_zero() || other.is_exact_zero() {
            return ZFun::zero();
        }
        match (self, other) {
            (ZFun::Band(a), ZFun::Band(b)) => ZFun::Band(a.mul(b)),
            _ => {
                let a = self.clone();
                let b = other.clone();
                ZFun::from_fn(move |z| a.eval(z) * b.eval(z))
            }
        }
    }

    pub fn scale(&self, s: C64) -> ZFun {
        match self {
            ZFun::Band(b) => ZFun::Band(b.scale(s)),
            ZFun::Fun(_) => {
                let a = self.clone();
                ZFun::from_fn(move |z| a.eval(z) * s)
            }
        }
    }

    pub fn neg(&self) -> ZFun {
        self.scale(C64::new(-1.0, 0.0))
    }

    pub fn sub(&self, other: &ZFun) -> ZFun {
        self.add(&other.neg())
    }

    /// Exact on bands; opaque closures do not carry enough analyticity
    /// information for a certified derivative.
    pub fn derivative(&self) -> Result<ZFun> {
        match self {
            ZFun::Band(b) => Ok(ZFun::Band(b.derivative())),
            ZFun::Fun(_) => Err(Error::Config(
                "derivative of an opaque coefficient function is not certified".into(),
            )),
        }
    }

    /// Max modulus over `n` equispaced samples of |z| = r.
    pub fn sup_on_circle(&self, r: f64, n: usize) -> f64 {
        (0..n)
            .map(|j| {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                self.eval(C64::from_polar(r, theta)).norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn band(&self) -> Option<&LaurentBand> {
        match self {
            ZFun::Band(b) => Some(b),
            ZFun::Fun(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn band_arithmetic_matches_pointwise() {
        let a = LaurentBand::from_pairs(&[(-2, c(1.0, 0.0)), (1, c(0.5, -0.5))]);
        let b = LaurentBand::from_pairs(&[(0, c(2.0, 0.0)), (3, c(0.0, 1.0))]);
        let z = c(0.7, -0.3);
        let sum = a.add(&b);
        let prod = a.mul(&b);
        assert!((sum.eval(z) - (a.eval(z) + b.eval(z))).norm() <= 1e-14);
        assert!((prod.eval(z) - (a.eval(z) * b.eval(z))).norm() <= 1e-14);
    }

    #[test]
    fn band_derivative_exact() {
        // d/dz (z^{-1} + 3 z^2) = -z^{-2} + 6 z
        let f = LaurentBand::from_pairs(&[(-1, c(1.0, 0.0)), (2, c(3.0, 0.0))]);
        let d = f.derivative();
        assert_eq!(d.coeff(-2), c(-1.0, 0.0));
        assert_eq!(d.coeff(1), c(6.0, 0.0));
        assert_eq!(d.coeff(0), c(0.0, 0.0));
    }

    #[test]
    fn split_reassembles() {
        let f = LaurentBand::from_pairs(&[
            (-3, c(2.0, 1.0)),
            (-1, c(0.0, -1.0)),
            (0, c(1.0, 0.0)),
            (4, c(-0.25, 0.0)),
        ]);
        let (p, m) = f.split_at_zero();
        assert!(p.k_min >= 0);
        assert!(m.is_zero() || m.k_max() < 0);
        let z = c(0.9, 0.2);
        assert!((p.eval(z) + m.eval(z) - f.eval(z)).norm() <= 1e-14);
    }

    #[test]
    fn mixed_algebra_falls_back_to_closures() {
        let band = ZFun::monomial(1, c(2.0, 0.0));
        let fun = ZFun::from_fn(|z| (z * c(0.3, 0.0)).exp());
        let s = band.mul(&fun);
        let z = c(0.4, 0.1);
        let expect = c(2.0, 0.0) * z * (z * c(0.3, 0.0)).exp();
        assert!((s.eval(z) - expect).norm() <= 1e-14);
        assert!(s.derivative().is_err());
    }
}
