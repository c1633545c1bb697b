//! Tubular-coordinate normalization around an embedded analytic disk.
//!
//! Pipeline pieces, bottom to top:
//!
//! * [`WPoly`] / [`WMap`]: polynomials and near-identity series maps in the
//!   fiber variables `w in C^M` whose coefficients are scalar functions of
//!   the base variable `z` ([`ZFun`], exact Laurent bands whenever
//!   possible). Band arithmetic keeps composition, inversion and degree
//!   extraction exact up to roundoff, which is what makes the "identity
//!   through degree N to 1e-9" contracts below testable at all.
//! * [`straighten_chart`]: adapted-frame straightening of an immersed disk,
//!   `h o phi = (z, 0)` through the working degree, by orthonormal frame
//!   choice, series inversion of the first component, and graph
//!   subtraction.
//! * [`factor_multiplicative_cocycle`]: near-identity matrix cocycles on the
//!   disk/annulus overlap split through the principal matrix logarithm and
//!   a Laurent projection, `B = B_inner * B_outer^{-1}`, iterating on the
//!   residual to absorb the non-commuting second-order mismatch.
//! * [`normalize_transitions`]: the degree-by-degree loop. At each degree n
//!   the transition cocycle is resolved by [`solve_cousin`], the per-chart
//!   coordinate change `z - A_n(z)(w), w - B_n(z)(w)` is applied, and the
//!   recomposed transitions are identity through degree n; only higher
//!   degrees move. The per-degree norm table certifies a convergence
//!   radius `epsilon` for the composed change by a log-linear fit.
//! * [`assemble_tubular_map`]: glue the per-chart inverse changes into one
//!   map on `disk x ball(epsilon * safety)`, checking chart agreement.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dbar::{solve_cousin, AdditiveCocycle, Cover, CousinOptions};
use crate::error::{Error, Result};
use crate::series::{log_linear_fit, PowerSeriesMap};
use crate::zfun::{LaurentBand, ZFun};

// ---------------------------------------------------------------------------
// small dense complex matrices (row-major), ambient dimension <= 8
// ---------------------------------------------------------------------------

fn mat_id(m: usize) -> Vec<C64> {
    let mut a = vec![C64::new(0.0, 0.0); m * m];
    for i in 0..m {
        a[i * m + i] = C64::new(1.0, 0.0);
    }
    a
}

fn mat_mul(m: usize, a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik.norm() == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i * m + j] += aik * b[k * m + j];
            }
        }
    }
    out
}

fn mat_frob(a: &[C64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn mat_sub_id(m: usize, a: &[C64]) -> Vec<C64> {
    let mut e = a.to_vec();
    for i in 0..m {
        e[i * m + i] -= 1.0;
    }
    e
}

/// Max-row-sum (operator infinity) norm of `A - I`.
fn mat_rowsum_dev(m: usize, a: &[C64]) -> f64 {
    let e = mat_sub_id(m, a);
    (0..m)
        .map(|i| (0..m).map(|j| e[i * m + j].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gauss-Jordan inverse with partial pivoting.
fn mat_inv(m: usize, a: &[C64]) -> Result<Vec<C64>> {
    let mut aug = a.to_vec();
    let mut inv = mat_id(m);
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| {
                aug[i * m + col]
                    .norm()
                    .partial_cmp(&aug[j * m + col].norm())
                    .unwrap()
            })
            .unwrap();
        if aug[pivot * m + col].norm() < 1e-300 {
            return Err(Error::Config("singular matrix in factorization step".into()));
        }
        if pivot != col {
            for j in 0..m {
                aug.swap(col * m + j, pivot * m + j);
                inv.swap(col * m + j, pivot * m + j);
            }
        }
        let d = aug[col * m + col];
        for j in 0..m {
            aug[col * m + j] /= d;
            inv[col * m + j] /= d;
        }
        for i in 0..m {
            if i == col {
                continue;
            }
            let f = aug[i * m + col];
            if f.norm() == 0.0 {
                continue;
            }
            for j in 0..m {
                let u = aug[col * m + j];
                let v = inv[col * m + j];
                aug[i * m + j] -= f * u;
                inv[i * m + j] -= f * v;
            }
        }
    }
    Ok(inv)
}

/// Principal logarithm of a near-identity matrix via the alternating power
/// series in `E = A - I`; converges whenever the spectral radius of `E` is
/// below one, which the Frobenius gate in the caller guarantees.
fn mat_log_near_id(m: usize, a: &[C64]) -> Result<Vec<C64>> {
    let e = mat_sub_id(m, a);
    let mut out = vec![C64::new(0.0, 0.0); m * m];
    let mut pow = e.clone();
    for k in 1..=240 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let scale = sign / k as f64;
        for (o, p) in out.iter_mut().zip(pow.iter()) {
            *o += p * scale;
        }
        let term = mat_frob(&pow) / k as f64;
        if term < 1e-18 {
            return Ok(out);
        }
        pow = mat_mul(m, &pow, &e);
    }
    Err(Error::Config(
        "matrix logarithm series did not converge (cocycle too far from identity)".into(),
    ))
}

/// Matrix exponential by scaling-and-squaring with a Taylor core.
fn mat_exp(m: usize, a: &[C64]) -> Vec<C64> {
    let norm = mat_frob(a);
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as u32 } else { 0 };
    let scale = (0.5f64).powi(s as i32);
    let small: Vec<C64> = a.iter().map(|c| c * scale).collect();
    let mut out = mat_id(m);
    let mut pow = mat_id(m);
    for k in 1..=28 {
        pow = mat_mul(m, &pow, &small);
        let f = 1.0
            / (1..=k).map(|i| i as f64).product::<f64>();
        for (o, p) in out.iter_mut().zip(pow.iter()) {
            *o += p * f;
        }
    }
    for _ in 0..s {
        out = mat_mul(m, &out, &out);
    }
    out
}

// ---------------------------------------------------------------------------
// WPoly: polynomials in w with coefficient functions of z
// ---------------------------------------------------------------------------

fn windex_degree(j: &[u8]) -> usize {
    j.iter().map(|&e| e as usize).sum()
}

/// A polynomial in the fiber variables `w in C^m` whose coefficients are
/// scalar functions of the base variable `z`.
#[derive(Debug, Clone)]
pub struct WPoly {
    pub m: usize,
    pub terms: BTreeMap<Vec<u8>, ZFun>,
}

impl WPoly {
    pub fn zero(m: usize) -> Self {
        WPoly { m, terms: BTreeMap::new() }
    }

    /// The constant 1 (as a w-polynomial with a constant coefficient).
    pub fn one(m: usize) -> Self {
        WPoly::from_term(m, &vec![0u8; m], ZFun::constant(C64::new(1.0, 0.0)))
    }

    /// The base coordinate `z` itself (w-constant term `z`).
    pub fn identity_z(m: usize) -> Self {
        WPoly::from_term(m, &vec![0u8; m], ZFun::monomial(1, C64::new(1.0, 0.0)))
    }

    /// The fiber coordinate `w_i`.
    pub fn coordinate(m: usize, i: usize) -> Self {
        let mut j = vec![0u8; m];
        j[i] = 1;
        WPoly::from_term(m, &j, ZFun::constant(C64::new(1.0, 0.0)))
    }

    pub fn from_term(m: usize, j: &[u8], c: ZFun) -> Self {
        assert_eq!(j.len(), m);
        let mut terms = BTreeMap::new();
        if !c.is_exact_zero() {
            terms.insert(j.to_vec(), c);
        }
        WPoly { m, terms }
    }

    pub fn add_term(&mut self, j: &[u8], c: &ZFun) {
        assert_eq!(j.len(), self.m);
        if c.is_exact_zero() {
            return;
        }
        match self.terms.get_mut(j) {
            Some(existing) => *existing = existing.add(c),
            None => {
                self.terms.insert(j.to_vec(), c.clone());
            }
        }
    }

    pub fn coeff(&self, j: &[u8]) -> ZFun {
        self.terms.get(j).cloned().unwrap_or_else(ZFun::zero)
    }

    pub fn add(&self, other: &WPoly) -> WPoly {
        assert_eq!(self.m, other.m);
        let mut out = self.clone();
        for (j, c) in &other.terms {
            out.add_term(j, c);
        }
        out.cleaned()
    }

    pub fn neg(&self) -> WPoly {
        self.scale(C64::new(-1.0, 0.0))
    }

    pub fn sub(&self, other: &WPoly) -> WPoly {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: C64) -> WPoly {
        WPoly {
            m: self.m,
            terms: self.terms.iter().map(|(j, c)| (j.clone(), c.scale(s))).collect(),
        }
    }

    pub fn mul_zfun(&self, f: &ZFun) -> WPoly {
        if f.is_exact_zero() {
            return WPoly::zero(self.m);
        }
        WPoly {
            m: self.m,
            terms: self.terms.iter().map(|(j, c)| (j.clone(), c.mul(f))).collect(),
        }
    }

    /// Product truncated at total w-degree `cap`.
    pub fn mul(&self, other: &WPoly, cap: usize) -> WPoly {
        assert_eq!(self.m, other.m);
        let mut out = WPoly::zero(self.m);
        for (ja, ca) in &self.terms {
            if ca.is_exact_zero() {
                continue;
            }
            let da = windex_degree(ja);
            if da > cap {
                continue;
            }
            for (jb, cb) in &other.terms {
                if cb.is_exact_zero() {
                    continue;
                }
                if da + windex_degree(jb) > cap {
                    continue;
                }
                let j: Vec<u8> = ja.iter().zip(jb.iter()).map(|(x, y)| x + y).collect();
                out.add_term(&j, &ca.mul(cb));
            }
        }
        out.cleaned()
    }

    /// Coefficient-wise d/dz (exact on bands).
    pub fn derivative_z(&self) -> Result<WPoly> {
        let mut terms = BTreeMap::new();
        for (j, c) in &self.terms {
            let d = c.derivative()?;
            if !d.is_exact_zero() {
                terms.insert(j.clone(), d);
            }
        }
        Ok(WPoly { m: self.m, terms })
    }

    /// Terms of total w-degree exactly `n`.
    pub fn degree_part(&self, n: usize) -> WPoly {
        WPoly {
            m: self.m,
            terms: self
                .terms
                .iter()
                .filter(|(j, c)| windex_degree(j) == n && !c.is_exact_zero())
                .map(|(j, c)| (j.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn truncated(&self, cap: usize) -> WPoly {
        WPoly {
            m: self.m,
            terms: self
                .terms
                .iter()
                .filter(|(j, _)| windex_degree(j) <= cap)
                .map(|(j, c)| (j.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn min_w_degree(&self) -> Option<usize> {
        self.terms
            .iter()
            .filter(|(_, c)| !c.is_exact_zero())
            .map(|(j, _)| windex_degree(j))
            .min()
    }

    pub fn max_w_degree(&self) -> usize {
        self.terms
            .iter()
            .filter(|(_, c)| !c.is_exact_zero())
            .map(|(j, _)| windex_degree(j))
            .max()
            .unwrap_or(0)
    }

    pub fn is_exact_zero(&self) -> bool {
        self.terms.values().all(|c| c.is_exact_zero())
    }

    fn cleaned(mut self) -> Self {
        self.terms.retain(|_, c| !c.is_exact_zero());
        self
    }

    pub fn eval(&self, z: C64, w: &[C64]) -> C64 {
        debug_assert_eq!(w.len(), self.m);
        let mut acc = C64::new(0.0, 0.0);
        for (j, c) in &self.terms {
            let mut mono = C64::new(1.0, 0.0);
            for (wi, &e) in w.iter().zip(j.iter()) {
                for _ in 0..e {
                    mono *= wi;
                }
            }
            acc += c.eval(z) * mono;
        }
        acc
    }

    /// `max over sampled circles of sum_J |c_J(z)|`: an upper bound for the
    /// homogeneous-map sup norm over the closed unit w-ball at each z.
    pub fn coeff_sup(&self, radii: &[f64], nodes: usize) -> f64 {
        let mut worst = 0.0f64;
        for &r in radii {
            for j in 0..nodes {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / nodes as f64;
                let z = C64::from_polar(r, theta);
                let s: f64 = self.terms.values().map(|c| c.eval(z).norm()).sum();
                worst = worst.max(s);
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// WMap: series self-maps of (z, w) space
// ---------------------------------------------------------------------------

/// A series map `(z, w) -> (base(z, w), fiber_1(z, w), ..., fiber_m(z, w))`
/// truncated at total w-degree `cap`. Transition maps and coordinate changes
/// are near-identity: `base = z + O(w)`, `fiber_i = w_i + O(w^2)`.
#[derive(Debug, Clone)]
pub struct WMap {
    pub m: usize,
    pub cap: usize,
    pub base: WPoly,
    pub fiber: Vec<WPoly>,
}

impl WMap {
    pub fn identity(m: usize, cap: usize) -> Self {
        WMap {
            m,
            cap,
            base: WPoly::identity_z(m),
            fiber: (0..m).map(|i| WPoly::coordinate(m, i)).collect(),
        }
    }

    /// The coordinate change `(z, w) -> (z - a(z)(w), w_i - b_i(z)(w))`.
    pub fn change(a: &WPoly, b: &[WPoly], cap: usize) -> Self {
        let m = a.m;
        assert_eq!(b.len(), m);
        WMap {
            m,
            cap,
            base: WPoly::identity_z(m).sub(a),
            fiber: (0..m).map(|i| WPoly::coordinate(m, i).sub(&b[i])).collect(),
        }
    }

    fn components(&self) -> Vec<&WPoly> {
        let mut v = vec![&self.base];
        v.extend(self.fiber.iter());
        v
    }

    /// Componentwise deviation from the identity map.
    pub fn minus_identity(&self) -> Vec<WPoly> {
        let mut out = vec![self.base.sub(&WPoly::identity_z(self.m))];
        for i in 0..self.m {
            out.push(self.fiber[i].sub(&WPoly::coordinate(self.m, i)));
        }
        out
    }

    pub fn eval(&self, z: C64, w: &[C64]) -> (C64, Vec<C64>) {
        (
            self.base.eval(z, w),
            self.fiber.iter().map(|f| f.eval(z, w)).collect(),
        )
    }

    /// Sup of coefficient mass of the identity deviation over w-degrees in
    /// `lo..=hi`, measured on the sampled circles.
    pub fn deviation_from_identity(
        &self,
        lo: usize,
        hi: usize,
        radii: &[f64],
        nodes: usize,
    ) -> f64 {
        let mut worst = 0.0f64;
        for comp in self.minus_identity() {
            for n in lo..=hi {
                worst = worst.max(comp.degree_part(n).coeff_sup(radii, nodes));
            }
        }
        worst
    }

    /// Composition `self o inner`, substituting `inner` into every
    /// component of `self`. `inner` must fix the zero section:
    /// `base = z + O(w)` (exact identity w-constant term) and
    /// `fiber_i = O(w)`. Coefficients of `self` must be exact bands when the
    /// substitution shifts `z` (the Taylor shift differentiates them).
    pub fn compose(&self, inner: &WMap) -> Result<WMap> {
        if self.m != inner.m {
            return Err(Error::Config(format!(
                "fiber dimension mismatch in composition: {} vs {}",
                self.m, inner.m
            )));
        }
        let m = self.m;
        let cap = self.cap.min(inner.cap);

        let shift = inner.base.sub(&WPoly::identity_z(m)).truncated(cap).cleaned();
        if shift.min_w_degree() == Some(0) {
            return Err(Error::Config(
                "composition target must have base component z + O(w)".into(),
            ));
        }
        for f in &inner.fiber {
            if f.min_w_degree() == Some(0) {
                return Err(Error::Config(
                    "composition target must have fiber components O(w)".into(),
                ));
            }
        }

        // Powers of the base shift (order >= 1 in w, so the list is short).
        let mut shift_pows: Vec<WPoly> = vec![WPoly::one(m)];
        while !shift_pows.last().unwrap().is_exact_zero() && shift_pows.len() <= cap {
            let next = shift_pows.last().unwrap().mul(&shift, cap);
            shift_pows.push(next);
        }
        while shift_pows.len() > 1 && shift_pows.last().unwrap().is_exact_zero() {
            shift_pows.pop();
        }

        // Powers of each substituted fiber component, up to the largest
        // exponent appearing in `self`.
        let mut needed = vec![0u8; m];
        for comp in self.components() {
            for j in comp.terms.keys() {
                for i in 0..m {
                    needed[i] = needed[i].max(j[i]);
                }
            }
        }
        let sub_pows: Vec<Vec<WPoly>> = (0..m)
            .map(|i| {
                let mut v = vec![WPoly::one(m)];
                for _ in 0..needed[i] {
                    v.push(v.last().unwrap().mul(&inner.fiber[i], cap));
                }
                v
            })
            .collect();

        let substitute = |comp: &WPoly| -> Result<WPoly> {
            let mut out = WPoly::zero(m);
            for (j, cj) in &comp.terms {
                if cj.is_exact_zero() || windex_degree(j) > cap {
                    continue;
                }
                let mut mono = WPoly::one(m);
                for i in 0..m {
                    if j[i] > 0 {
                        mono = mono.mul(&sub_pows[i][j[i] as usize], cap);
                    }
                }
                if mono.is_exact_zero() {
                    continue;
                }
                // Taylor shift in z: sum_k c^(k)(z)/k! * shift^k.
                let mut scaled_deriv = cj.clone();
                for (k, pow) in shift_pows.iter().enumerate() {
                    if pow.is_exact_zero() || scaled_deriv.is_exact_zero() {
                        break;
                    }
                    out = out.add(&mono.mul(pow, cap).mul_zfun(&scaled_deriv));
                    if k + 1 < shift_pows.len() {
                        scaled_deriv = scaled_deriv
                            .derivative()?
                            .scale(C64::new(1.0 / (k as f64 + 1.0), 0.0));
                    }
                }
            }
            Ok(out.truncated(cap).cleaned())
        };

        Ok(WMap {
            m,
            cap,
            base: substitute(&self.base)?,
            fiber: self
                .fiber
                .iter()
                .map(|f| substitute(f))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// Inverse of a map tangent to the identity (`self - id` of w-order
    /// >= 2), by the unipotent fixed-point iteration `Y <- id - E o Y`
    /// which settles one degree per pass.
    pub fn inverse(&self) -> Result<WMap> {
        let m = self.m;
        let cap = self.cap;
        let dev = self.minus_identity();
        for comp in &dev {
            if let Some(o) = comp.min_w_degree() {
                if o < 2 {
                    return Err(Error::Config(
                        "inverse requires a map tangent to the identity (deviation of w-order >= 2)"
                            .into(),
                    ));
                }
            }
        }
        let e = WMap { m, cap, base: dev[0].clone(), fiber: dev[1..].to_vec() };
        let mut y = WMap::identity(m, cap);
        for _ in 0..cap.max(1) {
            let ey = e.compose(&y)?;
            y = WMap {
                m,
                cap,
                base: WPoly::identity_z(m).sub(&ey.base),
                fiber: (0..m)
                    .map(|i| WPoly::coordinate(m, i).sub(&ey.fiber[i]))
                    .collect(),
            };
        }
        Ok(y)
    }
}

// ---------------------------------------------------------------------------
// chart straightening
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StraightenOptions {
    /// Working degree of the inverse and graph series.
    pub cap: usize,
    /// When set, the orthogonal complement frame is rotated by a seeded
    /// random unitary; the straightened output must not depend on this
    /// gauge beyond roundoff, which downstream consistency tests exploit.
    pub frame_seed: Option<u64>,
}

impl Default for StraightenOptions {
    fn default() -> Self {
        StraightenOptions { cap: 12, frame_seed: None }
    }
}

/// A straightening chart `h` around an immersed disk: the composition of
/// the adapted-frame linear change, the series inverse of the first
/// component, and the graph subtraction. `h o phi = (z, 0)` through the
/// working degree.
#[derive(Debug, Clone)]
pub struct StraightChart {
    /// Image of the expansion point.
    pub center: Vec<C64>,
    /// Unit vector along the differential of the embedding.
    pub tangent: Vec<C64>,
    /// Magnitude of the differential (its only singular value).
    pub sigma: f64,
    /// Orthonormal complement frame (rows), length `ambient - 1`.
    pub frame: Vec<Vec<C64>>,
    /// Coefficients (by degree) of the first straightened component.
    pub forward_series: Vec<C64>,
    /// Coefficients of its series inverse.
    pub inverse_series: Vec<C64>,
    /// Graph coefficients per complement direction.
    pub graph: Vec<Vec<C64>>,
    pub cap: usize,
}

fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

fn poly1_eval(c: &[C64], z: C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for k in (0..c.len()).rev() {
        acc = acc * z + c[k];
    }
    acc
}

fn poly1_mul(a: &[C64], b: &[C64], cap: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); cap + 1];
    for (i, x) in a.iter().enumerate().take(cap + 1) {
        if x.norm() == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            if i + j > cap {
                break;
            }
            out[i + j] += x * y;
        }
    }
    out
}

/// `outer(inner(z))` truncated at `cap`; `inner` must have zero constant
/// term so the truncation is degree-exact.
fn poly1_compose(outer: &[C64], inner: &[C64], cap: usize) -> Vec<C64> {
    debug_assert!(inner.first().map(|c| c.norm() == 0.0).unwrap_or(true));
    let mut out = vec![C64::new(0.0, 0.0); cap + 1];
    for k in (0..outer.len().min(cap + 1)).rev() {
        out = poly1_mul(&out, inner, cap);
        out[0] += outer[k];
    }
    out
}

fn complement_frame(tangent: &[C64], seed: Option<u64>) -> Vec<Vec<C64>> {
    let m = tangent.len();
    let mut frame: Vec<Vec<C64>> = vec![tangent.to_vec()];
    let mut candidates: Vec<Vec<C64>> = Vec::new();
    if let Some(s) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut gauss = || {
            let u: f64 = rng.gen::<f64>().max(1e-12);
            let v: f64 = rng.gen();
            (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
        };
        for _ in 0..(2 * m) {
            candidates.push((0..m).map(|_| C64::new(gauss(), gauss())).collect());
        }
    }
    for k in 0..m {
        let mut e = vec![C64::new(0.0, 0.0); m];
        e[k] = C64::new(1.0, 0.0);
        candidates.push(e);
    }
    for cand in candidates {
        if frame.len() == m {
            break;
        }
        let mut v = cand;
        for f in &frame {
            let p = dot_h(&v, f);
            for (vi, fi) in v.iter_mut().zip(f.iter()) {
                *vi -= p * fi;
            }
        }
        let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-6 {
            for vi in v.iter_mut() {
                *vi /= n;
            }
            frame.push(v);
        }
    }
    debug_assert_eq!(frame.len(), m);
    frame[1..].to_vec()
}

/// Straighten an immersed disk `phi: C -> C^M` around its expansion point:
/// find a chart `h` of the ambient space with `(h o phi)(z) = (z, 0, ..., 0)`
/// through the working degree. Requires the differential at the expansion
/// point to be bounded away from zero.
pub fn straighten_chart(
    phi: &PowerSeriesMap,
    tolerance: f64,
    opts: &StraightenOptions,
) -> Result<StraightChart> {
    if phi.dim_in() != 1 {
        return Err(Error::Config(format!(
            "straightening is implemented for one-dimensional disks, got base dimension {}",
            phi.dim_in()
        )));
    }
    let ambient = phi.dim_out();
    if ambient < 2 {
        return Err(Error::Config("ambient dimension must be at least 2".into()));
    }
    let cap = opts.cap;
    let one = [C64::new(1.0, 0.0)];
    let coeff_vec = |d: usize| -> Vec<C64> {
        phi.terms
            .get(d)
            .map(|t| t.eval(&one))
            .unwrap_or_else(|| vec![C64::new(0.0, 0.0); ambient])
    };

    let center = coeff_vec(0);
    let differential = coeff_vec(1);
    let sigma = differential.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if sigma < tolerance {
        return Err(Error::NotImmersion { sigma, tolerance });
    }
    let tangent: Vec<C64> = differential.iter().map(|c| c / sigma).collect();
    let frame = complement_frame(&tangent, opts.frame_seed);

    // Components of phi in the adapted frame.
    let mut forward = vec![C64::new(0.0, 0.0); cap + 1];
    let mut graph_raw: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); cap + 1]; ambient - 1];
    for d in 1..=cap {
        let cd = coeff_vec(d);
        forward[d] = dot_h(&cd, &tangent) / sigma;
        for (j, f) in frame.iter().enumerate() {
            graph_raw[j][d] = dot_h(&cd, f);
        }
    }

    // Series inverse of the unipotent first component by fixed point:
    // eta <- zeta - G(eta) with G = forward - z.
    let mut tail = forward.clone();
    tail[1] = C64::new(0.0, 0.0);
    let mut eta = vec![C64::new(0.0, 0.0); cap + 1];
    eta[1] = C64::new(1.0, 0.0);
    for _ in 0..cap {
        let g = poly1_compose(&tail, &eta, cap);
        for k in 0..=cap {
            eta[k] = -g[k];
        }
        eta[1] += 1.0;
    }

    // Graph of the image over the straightened coordinate.
    let graph: Vec<Vec<C64>> = graph_raw
        .iter()
        .map(|t| poly1_compose(t, &eta, cap))
        .collect();

    Ok(StraightChart {
        center,
        tangent,
        sigma,
        frame,
        forward_series: forward,
        inverse_series: eta,
        graph,
        cap,
    })
}

impl StraightChart {
    pub fn ambient_dim(&self) -> usize {
        self.frame.len() + 1
    }

    /// Apply the chart: ambient point -> straightened `(z, w)` coordinates.
    pub fn eval(&self, p: &[C64]) -> Vec<C64> {
        debug_assert_eq!(p.len(), self.ambient_dim());
        let rel: Vec<C64> = p.iter().zip(self.center.iter()).map(|(a, b)| a - b).collect();
        let zp = dot_h(&rel, &self.tangent) / self.sigma;
        let mut out = Vec::with_capacity(p.len());
        out.push(poly1_eval(&self.inverse_series, zp));
        for (j, f) in self.frame.iter().enumerate() {
            out.push(dot_h(&rel, f) - poly1_eval(&self.graph[j], zp));
        }
        out
    }

    /// Invert the chart: straightened `(z, w)` -> ambient point.
    pub fn unstraighten(&self, z: C64, w: &[C64]) -> Vec<C64> {
        debug_assert_eq!(w.len(), self.ambient_dim() - 1);
        let zp = poly1_eval(&self.forward_series, z);
        let mut p = self.center.clone();
        for (pi, ti) in p.iter_mut().zip(self.tangent.iter()) {
            *pi += zp * self.sigma * ti;
        }
        for (j, f) in self.frame.iter().enumerate() {
            let wj = w[j] + poly1_eval(&self.graph[j], zp);
            for (pi, fi) in p.iter_mut().zip(f.iter()) {
                *pi += wj * fi;
            }
        }
        p
    }
}

// ---------------------------------------------------------------------------
// multiplicative cocycle factorization
// ---------------------------------------------------------------------------

/// A matrix-valued function on the disk/annulus overlap (row-major values).
pub struct MatrixCocycle {
    pub m: usize,
    f: Arc<dyn Fn(C64) -> Vec<C64> + Send + Sync>,
}

impl MatrixCocycle {
    pub fn new(m: usize, f: impl Fn(C64) -> Vec<C64> + Send + Sync + 'static) -> Self {
        MatrixCocycle { m, f: Arc::new(f) }
    }

    /// Scalar function times the identity matrix.
    pub fn scalar(m: usize, f: impl Fn(C64) -> C64 + Send + Sync + 'static) -> Self {
        MatrixCocycle::new(m, move |z| {
            let v = f(z);
            let mut a = vec![C64::new(0.0, 0.0); m * m];
            for i in 0..m {
                a[i * m + i] = v;
            }
            a
        })
    }

    pub fn eval(&self, z: C64) -> Vec<C64> {
        (self.f)(z)
    }
}

impl std::fmt::Debug for MatrixCocycle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MatrixCocycle(m={})", self.m)
    }
}

#[derive(Debug, Clone)]
pub struct FactorOptions {
    /// Circle nodes for Laurent extraction (power of two).
    pub nodes: usize,
    /// Target residual of the product contract.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative trim threshold for extracted band coefficients.
    pub trim: f64,
}

impl Default for FactorOptions {
    fn default() -> Self {
        FactorOptions { nodes: 256, tolerance: 1e-10, max_iterations: 30, trim: 1e-13 }
    }
}

/// Result of the multiplicative splitting `B(z) = inner(z) * outer(z)^{-1}`
/// with `inner` holomorphic on the disk chart (nonnegative powers) and
/// `outer` holomorphic on the annulus chart including infinity
/// (nonpositive powers).
#[derive(Debug, Clone)]
pub struct MatrixFactors {
    pub m: usize,
    pub inner: Vec<ZFun>,
    pub outer: Vec<ZFun>,
    /// sup Frobenius distance of the input from the identity on the overlap.
    pub deviation: f64,
    /// sup Frobenius residual of the product contract on the overlap.
    pub residual: f64,
    pub iterations: usize,
}

impl MatrixFactors {
    pub fn eval_inner(&self, z: C64) -> Vec<C64> {
        self.inner.iter().map(|e| e.eval(z)).collect()
    }

    pub fn eval_outer(&self, z: C64) -> Vec<C64> {
        self.outer.iter().map(|e| e.eval(z)).collect()
    }
}

/// Extract per-entry Laurent bands of a matrix function sampled on a circle.
/// Trimming compares the coefficient magnitude *at the extraction radius*
/// against the sample scale, so quadrature roundoff is dropped before the
/// `radius^{-k}` rescaling can amplify it.
fn matrix_bands_from_circle(
    m: usize,
    values: &[Vec<C64>],
    radius: f64,
    k_lo: i64,
    k_hi: i64,
    trim: f64,
) -> Vec<LaurentBand> {
    let n = values.len();
    let mut bands = Vec::with_capacity(m * m);
    let scale_ref: f64 = values
        .iter()
        .map(|v| v.iter().map(|c| c.norm()).fold(0.0, f64::max))
        .fold(1.0, f64::max);
    for e in 0..m * m {
        let mut pairs = Vec::new();
        for k in k_lo..=k_hi {
            let mut acc = C64::new(0.0, 0.0);
            for (j, v) in values.iter().enumerate() {
                let theta = -2.0 * std::f64::consts::PI * (j as f64) * (k as f64) / n as f64;
                acc += v[e] * C64::from_polar(1.0, theta);
            }
            let at_radius = acc / n as f64;
            if at_radius.norm() > trim * scale_ref {
                pairs.push((k, at_radius * radius.powi(-k as i32)));
            }
        }
        bands.push(LaurentBand::from_pairs(&pairs));
    }
    bands
}

/// Split a near-identity multiplicative matrix cocycle on the two-chart
/// annular overlap: `B = inner * outer^{-1}` via the principal logarithm
/// and the Laurent projection (nonnegative powers to the disk chart,
/// negative powers to the annulus chart), iterating on the residual to
/// absorb the non-commuting second-order mismatch.
pub fn factor_multiplicative_cocycle(
    b: &MatrixCocycle,
    cover: &Cover,
    opts: &FactorOptions,
) -> Result<MatrixFactors> {
    let (_, _, r_in, r_disk) = cover.two_chart_annular().ok_or_else(|| {
        Error::Config("multiplicative factorization requires a disk+annulus cover".into())
    })?;
    let m = b.m;
    // Per-side extraction circles: nonnegative powers are extracted at the
    // outer overlap edge and negative powers at the inner edge, so the
    // coefficient conditioning factor (r_eval / r_extract)^k never exceeds
    // one inside the overlap.
    let rho_in = r_in * 1.02;
    let rho_out = r_disk * 0.98;
    let check_radii = [rho_in, (rho_in * rho_out).sqrt(), rho_out];
    let check_nodes = 64usize;

    let mut deviation = 0.0f64;
    for &r in &check_radii {
        for j in 0..check_nodes {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / check_nodes as f64;
            let v = b.eval(C64::from_polar(r, theta));
            deviation = deviation.max(mat_rowsum_dev(m, &v));
        }
    }
    if !(deviation < 0.5) {
        return Err(Error::NotNearIdentity { deviation });
    }

    let k_half = (opts.nodes / 4) as i64;
    // Accumulated factors, as lists of banded matrix functions (product in
    // push order). Starting state is the identity (empty lists).
    let mut inner_factors: Vec<Vec<LaurentBand>> = Vec::new();
    let mut outer_factors: Vec<Vec<LaurentBand>> = Vec::new();
    let eval_list = |list: &[Vec<LaurentBand>], z: C64| -> Vec<C64> {
        let mut acc = mat_id(m);
        for f in list {
            let v: Vec<C64> = f.iter().map(|band| band.eval(z)).collect();
            acc = mat_mul(m, &acc, &v);
        }
        acc
    };

    let residual_of = |inner: &dyn Fn(C64) -> Vec<C64>,
                       outer: &dyn Fn(C64) -> Vec<C64>|
     -> Result<f64> {
        let mut worst = 0.0f64;
        for &r in &check_radii {
            for j in 0..check_nodes {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / check_nodes as f64;
                let z = C64::from_polar(r, theta);
                let d = mat_mul(
                    m,
                    &mat_inv(m, &inner(z))?,
                    &mat_mul(m, &b.eval(z), &outer(z)),
                );
                worst = worst.max(mat_frob(&mat_sub_id(m, &d)));
            }
        }
        Ok(worst)
    };

    let sample_circle = |radius: f64, f: &dyn Fn(C64) -> Result<Vec<C64>>| -> Result<Vec<Vec<C64>>> {
        (0..opts.nodes)
            .map(|j| {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / opts.nodes as f64;
                f(C64::from_polar(radius, theta))
            })
            .collect()
    };

    let mut iterations = 0usize;
    loop {
        let res = residual_of(
            &|z| eval_list(&inner_factors, z),
            &|z| eval_list(&outer_factors, z),
        )?;
        if res <= opts.tolerance * 0.1 || iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        // Logarithm of the current defect, sampled on both extraction
        // circles (the Laurent coefficients agree; each side is read off
        // the circle where it is well conditioned).
        let log_defect = |z: C64| -> Result<Vec<C64>> {
            let d = mat_mul(
                m,
                &mat_inv(m, &eval_list(&inner_factors, z))?,
                &mat_mul(m, &b.eval(z), &eval_list(&outer_factors, z)),
            );
            mat_log_near_id(m, &d)
        };
        let plus_bands =
            matrix_bands_from_circle(m, &sample_circle(rho_out, &log_defect)?, rho_out, 0, k_half, opts.trim);
        let minus_bands =
            matrix_bands_from_circle(m, &sample_circle(rho_in, &log_defect)?, rho_in, -k_half, -1, opts.trim);

        // Pointwise exponentials of each Laurent part, re-extracted on the
        // matching circle.
        let exp_part = |parts: &[LaurentBand], sign: f64, radius: f64, k_lo: i64, k_hi: i64| -> Vec<LaurentBand> {
            let vals: Vec<Vec<C64>> = (0..opts.nodes)
                .map(|j| {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / opts.nodes as f64;
                    let z = C64::from_polar(radius, theta);
                    let l: Vec<C64> = parts.iter().map(|band| band.eval(z) * sign).collect();
                    mat_exp(m, &l)
                })
                .collect();
            matrix_bands_from_circle(m, &vals, radius, k_lo, k_hi, opts.trim)
        };
        inner_factors.push(exp_part(&plus_bands, 1.0, rho_out, 0, k_half));
        outer_factors.push(exp_part(&minus_bands, -1.0, rho_in, -k_half, 0));
    }

    // Collapse the factor lists into single band matrices (one extraction
    // each), projecting onto the chart-appropriate powers.
    let collapse = |list: &[Vec<LaurentBand>], radius: f64, k_lo: i64, k_hi: i64| -> Vec<LaurentBand> {
        let vals: Vec<Vec<C64>> = (0..opts.nodes)
            .map(|j| {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / opts.nodes as f64;
                eval_list(list, C64::from_polar(radius, theta))
            })
            .collect();
        matrix_bands_from_circle(m, &vals, radius, k_lo, k_hi, opts.trim)
    };
    let inner_bands = collapse(&inner_factors, rho_out, 0, k_half);
    let outer_bands = collapse(&outer_factors, rho_in, -k_half, 0);
    let inner: Vec<ZFun> = inner_bands.into_iter().map(ZFun::Band).collect();
    let outer: Vec<ZFun> = outer_bands.into_iter().map(ZFun::Band).collect();

    // Honest final residual, measured on the returned band objects.
    let eval_entries = |entries: &[ZFun], z: C64| -> Vec<C64> {
        entries.iter().map(|e| e.eval(z)).collect()
    };
    let residual = residual_of(&|z| eval_entries(&inner, z), &|z| eval_entries(&outer, z))?;
    if residual > opts.tolerance {
        return Err(Error::Config(format!(
            "multiplicative factorization stalled: residual {residual:.3e} > {:.3e} after {iterations} iterations",
            opts.tolerance
        )));
    }

    Ok(MatrixFactors { m, inner, outer, deviation, residual, iterations })
}

// ---------------------------------------------------------------------------
// chart atlas
// ---------------------------------------------------------------------------

/// Transition data of a tubular-neighborhood atlas along the closed unit
/// disk with margin `r`: a disk/annulus cover of the disk of radius
/// `1 + r/2` and near-identity transition series between chart coordinates
/// (`transitions[(a, b)]` maps chart-b coordinates to chart-a coordinates).
#[derive(Debug, Clone)]
pub struct ChartAtlas {
    pub m: usize,
    pub cap: usize,
    pub r: f64,
    pub cover: Cover,
    pub transitions: BTreeMap<(usize, usize), WMap>,
}

impl ChartAtlas {
    /// The two-chart cover whose union is the closed disk of radius
    /// `1 + r/2` (the norm-certification domain).
    pub fn cover_for_margin(r: f64) -> Cover {
        Cover::standard_two_chart((1.0 + r / 2.0) / 1.05)
    }

    pub fn identity(m: usize, cap: usize, r: f64) -> Self {
        let mut transitions = BTreeMap::new();
        transitions.insert((0usize, 1usize), WMap::identity(m, cap));
        ChartAtlas { m, cap, r, cover: Self::cover_for_margin(r), transitions }
    }

    /// Atlas obtained by changing coordinates per chart: chart coordinates
    /// are `g_a(global)`, so transitions are `g_a o g_b^{-1}`.
    pub fn from_chart_changes(gauges: &[WMap], r: f64) -> Result<Self> {
        if gauges.is_empty() {
            return Err(Error::Config("atlas needs at least one chart gauge".into()));
        }
        let m = gauges[0].m;
        let cap = gauges[0].cap;
        let mut transitions = BTreeMap::new();
        for a in 0..gauges.len() {
            for b in (a + 1)..gauges.len() {
                transitions.insert((a, b), gauges[a].compose(&gauges[b].inverse()?)?);
            }
        }
        let atlas = ChartAtlas { m, cap, r, cover: Self::cover_for_margin(r), transitions };
        if atlas.cover.sets.len() != gauges.len() {
            return Err(Error::Config(format!(
                "expected {} chart gauges for the cover, got {}",
                atlas.cover.sets.len(),
                gauges.len()
            )));
        }
        Ok(atlas)
    }

    pub fn transition(&self, a: usize, b: usize) -> Result<WMap> {
        if a == b {
            return Ok(WMap::identity(self.m, self.cap));
        }
        if a < b {
            Ok(self
                .transitions
                .get(&(a, b))
                .cloned()
                .unwrap_or_else(|| WMap::identity(self.m, self.cap)))
        } else {
            self.transitions
                .get(&(b, a))
                .map(|t| t.inverse())
                .unwrap_or_else(|| Ok(WMap::identity(self.m, self.cap)))
        }
    }

    /// Overlap sampling radii of the two-chart cover.
    fn overlap_radii(&self) -> Result<(f64, f64)> {
        let (_, _, r_in, r_disk) = self.cover.two_chart_annular().ok_or_else(|| {
            Error::Config("normalization requires the standard disk+annulus cover".into())
        })?;
        Ok((r_in, r_disk))
    }

    /// Check that every stored transition fixes the zero section to first
    /// order (no w-constant or w-linear deviation) -- the shape the
    /// degree-by-degree loop starts from.
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        let (r_in, r_disk) = self.overlap_radii()?;
        let radii = [r_in * 1.02, (r_in * r_disk).sqrt(), r_disk * 0.98];
        for t in self.transitions.values() {
            let dev = t.deviation_from_identity(0, 1, &radii, 32);
            if dev > tolerance {
                return Err(Error::Config(format!(
                    "transition deviates from the identity at w-degree <= 1 by {dev:.3e} \
                     (> {tolerance:.3e}); normalize the Jacobian first"
                )));
            }
        }
        Ok(())
    }

    /// Serialize the deviation-from-identity terms of each stored
    /// transition. Columns: chart pair, component (0 = base, i = fiber i),
    /// dot-joined w multi-index, z power, coefficient. Coefficients must be
    /// exact bands.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from("alpha,beta,component,windex,zpower,re,im\n");
        for (&(a, b), t) in &self.transitions {
            for (comp_idx, comp) in t.minus_identity().iter().enumerate() {
                for (j, c) in &comp.terms {
                    let band = c.band().ok_or_else(|| {
                        Error::Config(
                            "only banded transition coefficients serialize to CSV".into(),
                        )
                    })?;
                    let widx: Vec<String> = j.iter().map(|e| e.to_string()).collect();
                    for (i, coeff) in band.coeffs.iter().enumerate() {
                        if coeff.norm() == 0.0 {
                            continue;
                        }
                        out.push_str(&format!(
                            "{a},{b},{comp_idx},{},{},{},{}\n",
                            widx.join("."),
                            band.k_min + i as i64,
                            crate::io::fmt_f64(coeff.re),
                            crate::io::fmt_f64(coeff.im),
                        ));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_csv(m: usize, cap: usize, r: f64, text: &str) -> Result<Self> {
        let mut deviations: BTreeMap<(usize, usize), Vec<WPoly>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("alpha") || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(Error::Config(format!(
                    "atlas CSV line {} has {} columns, expected 7",
                    lineno + 1,
                    cols.len()
                )));
            }
            let parse_usize = |s: &str| -> Result<usize> {
                s.trim().parse().map_err(|_| {
                    Error::Config(format!("atlas CSV line {}: bad integer `{s}`", lineno + 1))
                })
            };
            let parse_f64 = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| {
                    Error::Config(format!("atlas CSV line {}: bad float `{s}`", lineno + 1))
                })
            };
            let a = parse_usize(cols[0])?;
            let b = parse_usize(cols[1])?;
            let comp = parse_usize(cols[2])?;
            let j: Vec<u8> = cols[3]
                .split('.')
                .map(|s| parse_usize(s).map(|v| v as u8))
                .collect::<Result<_>>()?;
            let k: i64 = cols[4].trim().parse().map_err(|_| {
                Error::Config(format!("atlas CSV line {}: bad z power", lineno + 1))
            })?;
            let re = parse_f64(cols[5])?;
            let im = parse_f64(cols[6])?;
            if j.len() != m || comp > m || a >= b {
                return Err(Error::Config(format!(
                    "atlas CSV line {} is out of shape for fiber dimension {m}",
                    lineno + 1
                )));
            }
            let entry = deviations
                .entry((a, b))
                .or_insert_with(|| vec![WPoly::zero(m); m + 1]);
            entry[comp].add_term(&j, &ZFun::monomial(k, C64::new(re, im)));
        }
        let mut transitions = BTreeMap::new();
        for ((a, b), devs) in deviations {
            let mut t = WMap::identity(m, cap);
            t.base = t.base.add(&devs[0]);
            for i in 0..m {
                t.fiber[i] = t.fiber[i].add(&devs[i + 1]);
            }
            transitions.insert((a, b), t);
        }
        Ok(ChartAtlas { m, cap, r, cover: Self::cover_for_margin(r), transitions })
    }
}

// ---------------------------------------------------------------------------
// degree-by-degree normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RoydenOptions {
    /// Post-step identity tolerance (degrees <= current must vanish).
    pub tolerance: f64,
    /// Sampled cocycle-consistency gate.
    pub cocycle_tolerance: f64,
    /// Options of the inner Cousin solves. The default lowers the grid
    /// resolution: the returned cochain is the exact banded split, the grid
    /// only feeds the cross-check constant.
    pub cousin: CousinOptions,
    /// Circle nodes for the norm table.
    pub norm_nodes: usize,
    /// Radius collapse is declared when even the optimistic end of the
    /// fitted-radius window falls below this floor.
    pub collapse_floor: f64,
}

impl Default for RoydenOptions {
    fn default() -> Self {
        RoydenOptions {
            tolerance: 1e-9,
            cocycle_tolerance: 1e-8,
            cousin: CousinOptions { resolution: 64, ..CousinOptions::default() },
            norm_nodes: 64,
            collapse_floor: 1e-6,
        }
    }
}

/// One row of the per-degree norm table.
#[derive(Debug, Clone)]
pub struct RoydenNormRow {
    pub degree: usize,
    /// Max coefficient mass of the degree-n transition cocycle on the
    /// overlap.
    pub cocycle_norm: f64,
    /// Max coefficient mass of the resolved per-chart change on the
    /// chart domains intersected with the certification disk.
    pub chart_norm: f64,
    /// chart_norm / cocycle_norm (0 when the cocycle vanishes).
    pub constant: f64,
    /// Max norm constant reported by the inner Cousin solves.
    pub cousin_constant: f64,
}

/// Diagnostics of one degree step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub degree: usize,
    /// Sampled cocycle-consistency residual before the step.
    pub cocycle_residual: f64,
    /// Max delta-residual of the inner Cousin solves.
    pub cousin_delta_residual: f64,
    /// Deviation at degrees below n after the step (locality check).
    pub lower_degree_deviation: f64,
    /// Deviation at degrees 2..=n after the step.
    pub identity_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct RoydenResult {
    pub m: usize,
    pub cap: usize,
    pub r: f64,
    pub cover: Cover,
    /// Accumulated coordinate change per chart (applied to chart
    /// coordinates; the normalized coordinates are `changes[a](chart_a)`).
    pub changes: Vec<WMap>,
    /// Certified convergence radius of the changes (`+inf` marker when the
    /// atlas was already the identity).
    pub epsilon: f64,
    /// Optimistic/pessimistic ends of the fit window (2 standard errors).
    pub epsilon_window: (f64, f64),
    /// Fitted growth rate `e^{slope}` of the per-degree norms.
    pub fit_rate: f64,
    pub norm_table: Vec<RoydenNormRow>,
    pub steps: Vec<StepReport>,
}

impl RoydenResult {
    /// The result of normalizing an identity atlas, available without
    /// running the loop (used by callers that construct tubular coordinates
    /// around a disk with intrinsically trivial transitions).
    pub fn identity(m: usize, cap: usize, r: f64) -> Self {
        let cover = ChartAtlas::cover_for_margin(r);
        RoydenResult {
            m,
            cap,
            r,
            cover: cover.clone(),
            changes: vec![WMap::identity(m, cap); cover.sets.len()],
            epsilon: f64::INFINITY,
            epsilon_window: (f64::INFINITY, f64::INFINITY),
            fit_rate: 0.0,
            norm_table: Vec::new(),
            steps: Vec::new(),
        }
    }
}

/// Reduce the atlas transitions to the identity degree by degree.
///
/// For each degree `n = 2..=n_max`: extract the degree-n cocycle of every
/// transition, check its consistency, resolve it per w-monomial with
/// [`solve_cousin`], apply the coordinate change
/// `(z, w) -> (z - A_n, w - B_n)` per chart and recompose. Each step leaves
/// degrees below `n` untouched and zeroes degree `n`; the loop terminates
/// with transitions equal to the identity through `n_max`.
///
/// The certified radius is fitted from the per-degree norm table: with
/// `chart_norm_n` growing like `rho^n`, the changes converge on
/// `||w|| < 1/rho`, so `epsilon = e^{-slope}` of the log-linear fit.
pub fn normalize_transitions(
    atlas: &ChartAtlas,
    n_max: usize,
    opts: &RoydenOptions,
) -> Result<RoydenResult> {
    if n_max < 2 {
        return Err(Error::Config("working degree must be at least 2".into()));
    }
    if n_max > atlas.cap {
        return Err(Error::Config(format!(
            "working degree {n_max} exceeds the atlas truncation cap {}",
            atlas.cap
        )));
    }
    atlas.validate(opts.tolerance.max(1e-12))?;
    let m = atlas.m;
    let cap = atlas.cap;
    let n_charts = atlas.cover.sets.len();
    let (r_in, r_disk) = atlas.overlap_radii()?;
    let r_half = atlas.cover.covered_radius;
    let r_outer = atlas.cover.grid_radius();

    // Sampling circles: cocycles live on the overlap annulus; chart norms
    // are measured on each chart intersected with the certification disk.
    let overlap_radii = [r_in * 1.02, (r_in * r_disk).sqrt(), r_disk * 0.98];
    let disk_chart_radii = [0.35 * r_disk, 0.7 * r_disk, 0.999 * r_disk];
    let annulus_hi = r_half.min(r_outer * 0.999);
    let annulus_chart_radii = [r_in * 1.02, (r_in * annulus_hi).sqrt(), annulus_hi];

    let mut work: BTreeMap<(usize, usize), WMap> = atlas.transitions.clone();
    let mut changes = vec![WMap::identity(m, cap); n_charts];
    let mut norm_table = Vec::new();
    let mut steps = Vec::new();

    for n in 2..=n_max {
        // Degree-n cocycle of every stored pair: 1 + m scalar components.
        let mut cocycle_residual = 0.0f64;
        let parts: BTreeMap<(usize, usize), Vec<WPoly>> = work
            .iter()
            .map(|(&(a, b), t)| {
                let mut comps = vec![t.base.degree_part(n)];
                for f in &t.fiber {
                    comps.push(f.degree_part(n));
                }
                ((a, b), comps)
            })
            .collect();

        // Sampled additivity on triple overlaps (vacuous for two charts).
        for (&(a, b), f_ab) in &parts {
            for (&(b2, c), f_bc) in &parts {
                if b2 != b {
                    continue;
                }
                if let Some(f_ac) = parts.get(&(a, c)) {
                    for comp in 0..=m {
                        let diff = f_ac[comp].sub(&f_ab[comp]).sub(&f_bc[comp]);
                        cocycle_residual = cocycle_residual
                            .max(diff.coeff_sup(&overlap_radii, opts.norm_nodes));
                    }
                }
            }
        }
        if cocycle_residual > opts.cocycle_tolerance {
            return Err(Error::CocycleViolation {
                residual: cocycle_residual,
                tolerance: opts.cocycle_tolerance,
            });
        }

        // Resolve per scalar w-monomial component through the Cousin solver.
        let mut base_change: Vec<WPoly> = vec![WPoly::zero(m); n_charts];
        let mut fiber_change: Vec<Vec<WPoly>> =
            vec![vec![WPoly::zero(m); m]; n_charts];
        let mut cousin_delta = 0.0f64;
        let mut cousin_constant = 0.0f64;
        let mut cocycle_norm = 0.0f64;
        if let Some(f01) = parts.get(&(0usize, 1usize)) {
            for (comp_idx, comp) in f01.iter().enumerate() {
                cocycle_norm =
                    cocycle_norm.max(comp.coeff_sup(&overlap_radii, opts.norm_nodes));
                for (j, c) in &comp.terms {
                    if c.is_exact_zero() {
                        continue;
                    }
                    let sol = solve_cousin(
                        &atlas.cover,
                        &AdditiveCocycle::two_chart(c.clone()),
                        &opts.cousin,
                    )?;
                    cousin_delta = cousin_delta.max(sol.report.delta_residual);
                    cousin_constant = cousin_constant.max(sol.report.norm_constant);
                    for alpha in 0..n_charts {
                        let target = if comp_idx == 0 {
                            &mut base_change[alpha]
                        } else {
                            &mut fiber_change[alpha][comp_idx - 1]
                        };
                        target.add_term(j, &sol.charts[alpha]);
                    }
                }
            }
        }

        // Norm-table row for this degree.
        let mut chart_norm = 0.0f64;
        for alpha in 0..n_charts {
            let radii: &[f64] = if alpha == 0 { &disk_chart_radii } else { &annulus_chart_radii };
            chart_norm = chart_norm.max(base_change[alpha].coeff_sup(radii, opts.norm_nodes));
            for f in &fiber_change[alpha] {
                chart_norm = chart_norm.max(f.coeff_sup(radii, opts.norm_nodes));
            }
        }
        norm_table.push(RoydenNormRow {
            degree: n,
            cocycle_norm,
            chart_norm,
            constant: if cocycle_norm > 1e-300 { chart_norm / cocycle_norm } else { 0.0 },
            cousin_constant,
        });

        // Apply the degree-n change and recompose.
        let xs: Vec<WMap> = (0..n_charts)
            .map(|alpha| WMap::change(&base_change[alpha], &fiber_change[alpha], cap))
            .collect();
        let xs_inv: Vec<WMap> =
            xs.iter().map(|x| x.inverse()).collect::<Result<Vec<_>>>()?;
        let mut new_work = BTreeMap::new();
        for (&(a, b), t) in &work {
            new_work.insert((a, b), xs[a].compose(&t.compose(&xs_inv[b])?)?);
        }
        work = new_work;
        for alpha in 0..n_charts {
            changes[alpha] = xs[alpha].compose(&changes[alpha])?;
        }

        // Post-step checks: degrees < n must be untouched (they were zero),
        // and degree n must now vanish.
        let mut lower = 0.0f64;
        let mut through_n = 0.0f64;
        for t in work.values() {
            if n > 2 {
                lower = lower.max(t.deviation_from_identity(
                    2,
                    n - 1,
                    &overlap_radii,
                    opts.norm_nodes,
                ));
            }
            through_n =
                through_n.max(t.deviation_from_identity(2, n, &overlap_radii, opts.norm_nodes));
        }
        if through_n > opts.tolerance {
            return Err(Error::CocycleViolation {
                residual: through_n,
                tolerance: opts.tolerance,
            });
        }
        steps.push(StepReport {
            degree: n,
            cocycle_residual,
            cousin_delta_residual: cousin_delta,
            lower_degree_deviation: lower,
            identity_deviation: through_n,
        });
    }

    // Certify the radius from the norm table.
    let rows: Vec<(f64, f64)> = norm_table
        .iter()
        .filter(|row| row.chart_norm > 0.0)
        .map(|row| (row.degree as f64, row.chart_norm))
        .collect();
    if rows.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::RadiusCollapse { detail: "nonfinite norm table".into() });
    }
    let (epsilon, window, fit_rate) = if rows.is_empty() {
        (f64::INFINITY, (f64::INFINITY, f64::INFINITY), 0.0)
    } else if rows.len() == 1 {
        let (n, v) = rows[0];
        let eps = v.powf(-1.0 / n);
        (eps, (eps, eps), v.powf(1.0 / n))
    } else {
        let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
        let (slope, intercept) = log_linear_fit(&xs, &ys)?;
        let k = xs.len() as f64;
        let xbar = xs.iter().sum::<f64>() / k;
        let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        let ss_res: f64 = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
            .sum();
        let se = if rows.len() > 2 && sxx > 0.0 {
            (ss_res / (k - 2.0) / sxx).sqrt()
        } else {
            0.0
        };
        let eps = (-slope).exp();
        let window = ((-(slope + 2.0 * se)).exp(), (-(slope - 2.0 * se)).exp());
        (eps, (window.0.min(window.1), window.0.max(window.1)), slope.exp())
    };
    if epsilon.is_finite() && window.1 < opts.collapse_floor {
        return Err(Error::RadiusCollapse {
            detail: format!(
                "fitted radius {epsilon:.3e} (optimistic end {:.3e}) below floor {:.3e}",
                window.1, opts.collapse_floor
            ),
        });
    }

    Ok(RoydenResult {
        m,
        cap,
        r: atlas.r,
        cover: atlas.cover.clone(),
        changes,
        epsilon,
        epsilon_window: window,
        fit_rate,
        norm_table,
        steps,
    })
}

// ---------------------------------------------------------------------------
// tubular map assembly
// ---------------------------------------------------------------------------

/// Embedding data for tubular assembly: the disk embedding, its global
/// straightening chart, and (optionally) the per-chart gauge maps relating
/// atlas chart coordinates to the straightened coordinates.
#[derive(Debug, Clone)]
pub struct TubularEmbedding {
    pub phi: PowerSeriesMap,
    pub chart: StraightChart,
    /// `chart_coords = gauges[a](straightened_coords)`; `None` means the
    /// atlas was built directly in the straightened coordinates.
    pub gauges: Option<Vec<WMap>>,
}

impl TubularEmbedding {
    pub fn graph(
        phi: PowerSeriesMap,
        tolerance: f64,
        sopts: &StraightenOptions,
    ) -> Result<Self> {
        let chart = straighten_chart(&phi, tolerance, sopts)?;
        Ok(TubularEmbedding { phi, chart, gauges: None })
    }
}

#[derive(Debug, Clone)]
pub struct AssembleOptions {
    /// Fraction of the certified radius actually used.
    pub safety: f64,
    /// Cap on the fiber radius when the certified radius is unbounded.
    pub radius_cap: f64,
    /// Chart-agreement tolerance.
    pub tolerance: f64,
    /// Overlap sample count for the agreement check.
    pub samples: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { safety: 0.9, radius_cap: 1.0, tolerance: 1e-8, samples: 160 }
    }
}

/// A glued map `disk x ball(fiber_radius) -> ambient`: per chart the
/// composition `unstraighten o gauge^{-1} o change^{-1}`, with the charts
/// agreeing on the overlap within the recorded residual.
#[derive(Debug, Clone)]
pub struct TubularMap {
    pub m: usize,
    pub fiber_radius: f64,
    pub cover: Cover,
    pub per_chart: Vec<WMap>,
    pub chart: StraightChart,
    pub agreement_residual: f64,
    /// Max distance of the w = 0 slice from the embedding on disk samples.
    pub w0_residual: f64,
}

impl TubularMap {
    pub fn eval_in_chart(&self, alpha: usize, z: C64, w: &[C64]) -> Vec<C64> {
        let (zs, ws) = self.per_chart[alpha].eval(z, w);
        self.chart.unstraighten(zs, &ws)
    }

    /// Evaluate, picking the chart that contains `z` (disk chart
    /// preferred).
    pub fn eval(&self, z: C64, w: &[C64]) -> Result<Vec<C64>> {
        let wnorm = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if wnorm > self.fiber_radius * (1.0 + 1e-9) {
            return Err(Error::OutOfRadius {
                dist: wnorm,
                radius: self.fiber_radius,
            });
        }
        let alpha = self
            .cover
            .sets
            .iter()
            .position(|s| s.contains(z))
            .ok_or(Error::OutOfRadius { dist: z.norm(), radius: self.cover.covered_radius })?;
        Ok(self.eval_in_chart(alpha, z, w))
    }

    /// Round-trip residual of Newton inversion on a deterministic sample
    /// grid: solve `eval(x) = p` from the straightened starting guess and
    /// report the max distance of the solution from the original
    /// coordinates.
    pub fn newton_inverse_residual(&self, samples: usize) -> Result<f64> {
        let dim = self.m + 1;
        let mut worst = 0.0f64;
        let pts = sample_zw(self.m, samples, 0.9, self.fiber_radius * 0.5);
        for (z, w) in pts {
            let p = self.eval(z, &w)?;
            // Newton from (z, 0).
            let mut x = vec![C64::new(0.0, 0.0); dim];
            x[0] = z;
            for _ in 0..60 {
                let fx = self.eval(x[0], &x[1..])?;
                let r: Vec<C64> = fx.iter().zip(p.iter()).map(|(a, b)| a - b).collect();
                let rn = r.iter().map(|c| c.norm()).fold(0.0, f64::max);
                if rn < 1e-13 {
                    break;
                }
                // Finite-difference Jacobian, column per input coordinate.
                let e = 1e-6;
                let mut jac = vec![C64::new(0.0, 0.0); dim * dim];
                for col in 0..dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[col] += C64::new(e, 0.0);
                    xm[col] -= C64::new(e, 0.0);
                    let fp = self.eval_in_chart(self.chart_of(x[0]), xp[0], &xp[1..]);
                    let fm = self.eval_in_chart(self.chart_of(x[0]), xm[0], &xm[1..]);
                    for row in 0..dim {
                        jac[row * dim + col] = (fp[row] - fm[row]) / (2.0 * e);
                    }
                }
                let jinv = mat_inv(dim, &jac)?;
                for row in 0..dim {
                    let mut dx = C64::new(0.0, 0.0);
                    for col in 0..dim {
                        dx += jinv[row * dim + col] * r[col];
                    }
                    x[row] -= dx;
                }
            }
            let mut dist = (x[0] - z).norm();
            for (xi, wi) in x[1..].iter().zip(w.iter()) {
                dist = dist.max((xi - wi).norm());
            }
            worst = worst.max(dist);
        }
        Ok(worst)
    }

    fn chart_of(&self, z: C64) -> usize {
        self.cover.sets.iter().position(|s| s.contains(z)).unwrap_or(0)
    }
}

/// Deterministic (z, w) sample set: Halton points of the disk of radius
/// `z_radius` crossed with Halton points of the fiber ball.
fn sample_zw(m: usize, count: usize, z_radius: f64, w_radius: f64) -> Vec<(C64, Vec<C64>)> {
    let mut out = Vec::with_capacity(count);
    let mut i = 0usize;
    while out.len() < count {
        let x = 2.0 * crate::series::halton(i, 2) - 1.0;
        let y = 2.0 * crate::series::halton(i, 3) - 1.0;
        let zr = (x * x + y * y).sqrt();
        let mut w = Vec::with_capacity(m);
        let mut wnorm2 = 0.0f64;
        for a in 0..m {
            let u = 2.0 * crate::series::halton(i, primes(2 * a + 2)) - 1.0;
            let v = 2.0 * crate::series::halton(i, primes(2 * a + 3)) - 1.0;
            wnorm2 += u * u + v * v;
            w.push(C64::new(u, v));
        }
        i += 1;
        if zr > 1.0 || wnorm2 > 1.0 {
            continue;
        }
        out.push((
            C64::new(z_radius * x, z_radius * y),
            w.into_iter().map(|c| c * w_radius).collect(),
        ));
    }
    out
}

fn primes(i: usize) -> usize {
    const P: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    P[i % P.len()]
}

/// Glue the normalized per-chart coordinates into a single map on
/// `disk x ball(epsilon * safety)` and verify chart agreement and the
/// `w = 0` restriction.
pub fn assemble_tubular_map(
    result: &RoydenResult,
    emb: &TubularEmbedding,
    opts: &AssembleOptions,
) -> Result<TubularMap> {
    if !(result.epsilon > 0.0) {
        return Err(Error::Config(format!(
            "certified radius must be positive, got {}",
            result.epsilon
        )));
    }
    let m = result.m;
    if emb.chart.ambient_dim() != m + 1 {
        return Err(Error::Config(format!(
            "embedding ambient dimension {} does not match fiber dimension {} + 1",
            emb.chart.ambient_dim(),
            m
        )));
    }
    let n_charts = result.cover.sets.len();
    let gauges: Vec<WMap> = match &emb.gauges {
        Some(g) => {
            if g.len() != n_charts {
                return Err(Error::Config(format!(
                    "expected {n_charts} gauges, got {}",
                    g.len()
                )));
            }
            g.clone()
        }
        None => vec![WMap::identity(m, result.cap); n_charts],
    };
    let fiber_radius = opts.safety * result.epsilon.min(opts.radius_cap);

    let per_chart: Vec<WMap> = (0..n_charts)
        .map(|a| gauges[a].inverse()?.compose(&result.changes[a].inverse()?))
        .collect::<Result<Vec<_>>>()?;

    let mut map = TubularMap {
        m,
        fiber_radius,
        cover: result.cover.clone(),
        per_chart,
        chart: emb.chart.clone(),
        agreement_residual: 0.0,
        w0_residual: 0.0,
    };

    // Chart agreement on the overlap annulus.
    let (_, _, r_in, r_disk) = map
        .cover
        .two_chart_annular()
        .ok_or_else(|| Error::Config("tubular assembly requires the two-chart cover".into()))?;
    let mut residual = 0.0f64;
    for (zu, w) in sample_zw(m, opts.samples, 1.0, fiber_radius * 0.9) {
        // Remap the unit-disk Halton point into the overlap annulus.
        let t = zu.norm();
        let radius = r_in * 1.01 + (r_disk * 0.99 - r_in * 1.01) * t;
        let z = if t > 0.0 { zu / t * radius } else { C64::new(radius, 0.0) };
        let pa = map.eval_in_chart(0, z, &w);
        let pb = map.eval_in_chart(1, z, &w);
        for (a, b) in pa.iter().zip(pb.iter()) {
            residual = residual.max((a - b).norm());
        }
    }
    map.agreement_residual = residual;
    if residual > opts.tolerance {
        return Err(Error::ChartDisagreement { residual, tolerance: opts.tolerance });
    }

    // w = 0 restriction equals the embedding.
    let zero_w = vec![C64::new(0.0, 0.0); m];
    let mut w0 = 0.0f64;
    for k in 0..64 {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
        for rr in [0.0, 0.35, 0.7, 0.95] {
            let z = C64::from_polar(rr, theta);
            let p = map.eval(z, &zero_w)?;
            let q = crate::series::eval_series(&emb.phi, &[z])?;
            for (a, b) in p.iter().zip(q.coords.iter()) {
                w0 = w0.max((a - b).norm());
            }
        }
    }
    map.w0_residual = w0;

    Ok(map)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{circle_coefficients, CircleSampler};
    use crate::series::HomogeneousMap;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn series_1var(cols: &[Vec<C64>]) -> PowerSeriesMap {
        // cols[d] = coefficient vector of z^d
        let dim_out = cols[0].len();
        let terms: Vec<HomogeneousMap> = cols
            .iter()
            .enumerate()
            .map(|(d, col)| {
                let mut coeffs = BTreeMap::new();
                if col.iter().any(|v| v.norm() != 0.0) {
                    coeffs.insert(vec![d as u8], col.clone());
                }
                HomogeneousMap::dense(d, 1, dim_out, coeffs).unwrap()
            })
            .collect();
        PowerSeriesMap::from_polynomial_terms(vec![C64::new(0.0, 0.0)], terms)
    }

    // -- straightening ----------------------------------------------------

    #[test]
    fn straighten_graph_case_is_exact() {
        // phi(z) = (z, z^2): the chart must be (p0, p1 - p0^2).
        let phi = series_1var(&[
            vec![c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
        ]);
        let h = straighten_chart(&phi, 1e-8, &StraightenOptions::default()).unwrap();
        assert!((h.sigma - 1.0).abs() <= 1e-14);
        for k in 0..24 {
            let z = C64::from_polar(0.6, 0.7 * k as f64);
            let img = [z, z * z];
            let out = h.eval(&img);
            assert!((out[0] - z).norm() <= 1e-13, "z-comp {}", (out[0] - z).norm());
            assert!(out[1].norm() <= 1e-13, "w-comp {}", out[1].norm());
            // generic point, closed form
            let p = [z + c(0.3, -0.2), z * z - c(0.1, 0.4)];
            let out = h.eval(&p);
            assert!((out[0] - p[0]).norm() <= 1e-13);
            assert!((out[1] - (p[1] - p[0] * p[0])).norm() <= 1e-12);
        }
    }

    #[test]
    fn straighten_linear_isometry_is_adjoint() {
        let u = [c(0.6, 0.0), c(0.0, 0.8)];
        let phi = series_1var(&[vec![c(0.0, 0.0); 2], u.to_vec()]);
        let h = straighten_chart(&phi, 1e-8, &StraightenOptions::default()).unwrap();
        assert!((h.sigma - 1.0).abs() <= 1e-14);
        for k in 0..16 {
            let z = C64::from_polar(0.8, 0.5 * k as f64);
            let img = [z * u[0], z * u[1]];
            let out = h.eval(&img);
            assert!((out[0] - z).norm() <= 1e-13);
            assert!(out[1].norm() <= 1e-13);
            // linearity: h(lambda p) = lambda h(p)
            let p = [c(0.3, 0.1), c(-0.2, 0.4)];
            let lam = c(0.7, -0.3);
            let hp = h.eval(&p);
            let hlp = h.eval(&[p[0] * lam, p[1] * lam]);
            assert!((hlp[0] - hp[0] * lam).norm() <= 1e-13);
            assert!((hlp[1] - hp[1] * lam).norm() <= 1e-13);
        }
    }

    #[test]
    fn straighten_cubic_matches_inversion_oracle() {
        // phi(z) = (z + 0.1 z^3, z^2). Oracle: extract the Taylor
        // coefficients of h o phi by circle quadrature; they must be those
        // of (z, 0) through degree 9.
        let phi = series_1var(&[
            vec![c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(0.1, 0.0), c(0.0, 0.0)],
        ]);
        let h = straighten_chart(&phi, 1e-8, &StraightenOptions::default()).unwrap();
        for comp in 0..2 {
            let s = CircleSampler::sample(0.4, 256, |z| {
                let out = h.eval(&[z + 0.1 * z * z * z, z * z]);
                out[comp]
            })
            .unwrap();
            let lc = circle_coefficients(&s, 0..=9);
            for d in 0..=9i64 {
                let expected = if comp == 0 && d == 1 { c(1.0, 0.0) } else { c(0.0, 0.0) };
                let got = lc.coeff(d);
                assert!(
                    (got - expected).norm() <= 1e-10,
                    "comp {comp} degree {d}: {got}"
                );
            }
        }
    }

    #[test]
    fn straighten_rejects_degenerate_differential() {
        let phi = series_1var(&[
            vec![c(0.0, 0.0); 2],
            vec![c(0.0, 0.0); 2],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
        ]);
        match straighten_chart(&phi, 1e-8, &StraightenOptions::default()) {
            Err(Error::NotImmersion { sigma, .. }) => assert!(sigma < 1e-12),
            other => panic!("expected NotImmersion, got {other:?}"),
        }
    }

    // -- w-map algebra ----------------------------------------------------

    fn sample_wmap() -> WMap {
        let m = 2;
        let cap = 8;
        let mut a = WPoly::zero(m);
        a.add_term(&[2, 0], &ZFun::monomial(1, c(0.3, 0.1)));
        a.add_term(&[0, 2], &ZFun::monomial(-1, c(0.0, 0.2)));
        let mut b0 = WPoly::zero(m);
        b0.add_term(&[1, 1], &ZFun::monomial(2, c(-0.25, 0.0)));
        let mut b1 = WPoly::zero(m);
        b1.add_term(&[0, 3], &ZFun::monomial(-2, c(0.1, -0.1)));
        WMap::change(&a, &[b0, b1], cap)
    }

    #[test]
    fn wmap_inverse_round_trips() {
        let x = sample_wmap();
        let xi = x.inverse().unwrap();
        let round = x.compose(&xi).unwrap();
        let radii = [0.6, 0.8, 1.0];
        let dev = round.deviation_from_identity(0, 8, &radii, 32);
        assert!(dev <= 1e-11, "round-trip deviation {dev}");
        // pointwise check with w small enough that the tail beyond the
        // truncation cap (degree 9 and up) sits under the tolerance
        let z = c(0.7, 0.2);
        let w = [c(0.02, 0.008), c(-0.012, 0.016)];
        let (z1, w1) = xi.eval(z, &w);
        let (z2, w2) = x.eval(z1, &w1);
        assert!((z2 - z).norm() <= 1e-12);
        assert!((w2[0] - w[0]).norm() <= 1e-12);
        assert!((w2[1] - w[1]).norm() <= 1e-12);
    }

    #[test]
    fn wmap_composition_matches_pointwise_evaluation() {
        let x = sample_wmap();
        let y = {
            let mut a = WPoly::zero(2);
            a.add_term(&[1, 1], &ZFun::monomial(0, c(0.2, -0.1)));
            let mut b0 = WPoly::zero(2);
            b0.add_term(&[2, 0], &ZFun::monomial(1, c(0.15, 0.0)));
            let b1 = WPoly::zero(2);
            WMap::change(&a, &[b0, b1], 8)
        };
        let comp = x.compose(&y).unwrap();
        // Composition truncates at total w-degree 8; evaluate at small w so
        // the discarded tail sits below the tolerance.
        let z = c(0.9, -0.3);
        let w = [c(0.02, 0.01), c(0.015, -0.02)];
        let (zy, wy) = y.eval(z, &w);
        let (ze, we) = x.eval(zy, &wy);
        let (zc, wc) = comp.eval(z, &w);
        assert!((zc - ze).norm() <= 1e-12, "base {}", (zc - ze).norm());
        assert!((wc[0] - we[0]).norm() <= 1e-12);
        assert!((wc[1] - we[1]).norm() <= 1e-12);
    }

    // -- multiplicative factorization --------------------------------------

    // A small two-chart cover (disk radius 0.32, annulus [0.22, 0.44]):
    // the fixtures below stay in the near-identity regime on its overlap.
    fn factor_cover() -> Cover {
        Cover::standard_two_chart(0.4)
    }

    #[test]
    fn factor_identity_cocycle_is_identity() {
        let b = MatrixCocycle::scalar(2, |_| c(1.0, 0.0));
        let f = factor_multiplicative_cocycle(&b, &factor_cover(), &FactorOptions::default())
            .unwrap();
        assert!(f.residual <= 1e-12);
        assert_eq!(f.iterations, 0);
        let v = f.eval_inner(c(0.2, 0.1));
        assert!((v[0] - c(1.0, 0.0)).norm() <= 1e-12);
        assert!(v[1].norm() <= 1e-12);
    }

    #[test]
    fn factor_entire_scalar_cocycle_goes_to_disk_chart() {
        // B(z) = e^z I has no negative Laurent powers: the disk-chart
        // factor carries everything and the annulus factor is the identity.
        let b = MatrixCocycle::scalar(2, |z| z.exp());
        let f = factor_multiplicative_cocycle(&b, &factor_cover(), &FactorOptions::default())
            .unwrap();
        assert!(f.residual <= 1e-10, "residual {}", f.residual);
        for k in 0..24 {
            let z = C64::from_polar(0.26, 0.26 * k as f64);
            let inner = f.eval_inner(z);
            let outer = f.eval_outer(z);
            assert!((inner[0] - z.exp()).norm() <= 1e-10, "inner {}", (inner[0] - z.exp()).norm());
            assert!(inner[1].norm() <= 1e-12);
            assert!((outer[0] - c(1.0, 0.0)).norm() <= 1e-10);
            assert!((outer[3] - c(1.0, 0.0)).norm() <= 1e-10);
        }
    }

    #[test]
    fn factor_principal_part_cocycle_goes_to_annulus_chart() {
        // B(z) = exp(c/z) I is purely negative-power: the disk factor is
        // the identity and the annulus factor is exp(-c/z), so that the
        // product contract inner * outer^{-1} = B holds.
        let cc = c(0.06, 0.03);
        let b = MatrixCocycle::scalar(2, move |z| (cc / z).exp());
        let f = factor_multiplicative_cocycle(&b, &factor_cover(), &FactorOptions::default())
            .unwrap();
        assert!(f.residual <= 1e-9, "residual {}", f.residual);
        for k in 0..24 {
            let z = C64::from_polar(0.26, 0.26 * k as f64);
            let inner = f.eval_inner(z);
            let outer = f.eval_outer(z);
            assert!((inner[0] - c(1.0, 0.0)).norm() <= 1e-9);
            let expected = (-cc / z).exp();
            assert!((outer[0] - expected).norm() <= 1e-9, "outer {}", (outer[0] - expected).norm());
        }
    }

    #[test]
    fn factor_noncommuting_cocycle_iterates_to_contract() {
        // exp(0.3 z N) exp(0.1 K / z) with N, K non-commuting nilpotents:
        // the Laurent parts of the log do not commute, so one split leaves
        // a second-order defect and the iteration must engage.
        let b = MatrixCocycle::new(2, |z| {
            let a = 0.3 * z; // upper nilpotent coefficient
            let d = 0.1 / z; // lower nilpotent coefficient
            // exp(aN) = I + aN, exp(dK) = I + dK
            let left = vec![c(1.0, 0.0), a, c(0.0, 0.0), c(1.0, 0.0)];
            let right = vec![c(1.0, 0.0), c(0.0, 0.0), d, c(1.0, 0.0)];
            mat_mul(2, &left, &right)
        });
        let f = factor_multiplicative_cocycle(&b, &factor_cover(), &FactorOptions::default())
            .unwrap();
        assert!(f.iterations >= 2, "expected the residual iteration to engage");
        assert!(f.residual <= 1e-10, "residual {}", f.residual);
        // product contract pointwise on the overlap
        for k in 0..16 {
            let z = C64::from_polar(0.27, 0.4 * k as f64);
            let prod = mat_mul(
                2,
                &f.eval_inner(z),
                &mat_inv(2, &f.eval_outer(z)).unwrap(),
            );
            let target = b.eval(z);
            let diff: f64 = prod
                .iter()
                .zip(target.iter())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-9, "product defect {diff}");
        }
    }

    #[test]
    fn factor_rejects_far_from_identity() {
        let b = MatrixCocycle::scalar(2, |_| c(2.0, 0.0));
        match factor_multiplicative_cocycle(&b, &factor_cover(), &FactorOptions::default()) {
            Err(Error::NotNearIdentity { deviation }) => assert!(deviation >= 0.5),
            other => panic!("expected NotNearIdentity, got {other:?}"),
        }
    }

    // -- atlas + normalization ---------------------------------------------

    #[test]
    fn atlas_csv_round_trips() {
        let mut t = WMap::identity(2, 6);
        t.base.add_term(&[2, 0], &ZFun::monomial(1, c(1.0, 0.0)));
        t.fiber[1].add_term(&[1, 2], &ZFun::monomial(-2, c(0.5, -0.25)));
        let mut atlas = ChartAtlas::identity(2, 6, 0.2);
        atlas.transitions.insert((0, 1), t);
        let csv = atlas.to_csv().unwrap();
        let back = ChartAtlas::from_csv(2, 6, 0.2, &csv).unwrap();
        let a = atlas.transition(0, 1).unwrap();
        let b = back.transition(0, 1).unwrap();
        let z = c(0.7, 0.1);
        let w = [c(0.3, -0.2), c(0.1, 0.25)];
        let (za, wa) = a.eval(z, &w);
        let (zb, wb) = b.eval(z, &w);
        assert!((za - zb).norm() <= 1e-15);
        assert!((wa[0] - wb[0]).norm() <= 1e-15);
        assert!((wa[1] - wb[1]).norm() <= 1e-15);
    }

    #[test]
    fn normalize_identity_atlas_returns_unbounded_radius() {
        let atlas = ChartAtlas::identity(2, 6, 0.2);
        let res = normalize_transitions(&atlas, 6, &RoydenOptions::default()).unwrap();
        assert!(res.epsilon.is_infinite());
        for ch in &res.changes {
            let dev = ch.deviation_from_identity(0, 6, &[0.6, 0.9], 16);
            assert!(dev <= 1e-15);
        }
        assert!(res.norm_table.iter().all(|row| row.chart_norm == 0.0));
    }

    #[test]
    fn normalize_single_quadratic_cocycle_splits_across_charts() {
        // Single degree-2 base cocycle z * w1^2. Its coefficient z has no
        // negative Laurent part, so the resolved change must sit entirely
        // on the disk chart: A_0 = z * w1^2, A_1 = 0.
        let m = 2;
        let cap = 4;
        let mut t = WMap::identity(m, cap);
        t.base.add_term(&[2, 0], &ZFun::monomial(1, c(1.0, 0.0)));
        let mut atlas = ChartAtlas::identity(m, cap, 0.2);
        atlas.transitions.insert((0, 1), t.clone());

        let res = normalize_transitions(&atlas, 4, &RoydenOptions::default()).unwrap();

        // transitions recomposed with the changes are identity through 4
        let x0 = &res.changes[0];
        let x1 = &res.changes[1];
        let recomposed = x0.compose(&t.compose(&x1.inverse().unwrap()).unwrap()).unwrap();
        let dev = recomposed.deviation_from_identity(2, 4, &[0.6, 0.7, 0.8], 32);
        assert!(dev <= 1e-9, "post-normalization deviation {dev}");

        // the degree-2 change reproduces the Laurent split
        let d0 = x0.minus_identity()[0].degree_part(2);
        let c0 = d0.coeff(&[2, 0]);
        for k in 0..8 {
            let z = C64::from_polar(0.7, 0.8 * k as f64);
            assert!((c0.eval(z) - (-z)).norm() <= 1e-12, "disk-chart split coefficient");
        }
        let d1 = x1.minus_identity()[0].degree_part(2);
        assert!(d1.is_exact_zero() || d1.coeff_sup(&[0.7], 16) <= 1e-14);
    }

    fn mixed_gauges(cap: usize) -> Vec<WMap> {
        let m = 2;
        // disk-side gauge: nonnegative-power coefficients
        let mut a0 = WPoly::zero(m);
        a0.add_term(&[2, 0], &ZFun::monomial(1, c(0.3, 0.0)));
        let mut b00 = WPoly::zero(m);
        b00.add_term(&[1, 1], &ZFun::monomial(2, c(-0.2, 0.1)));
        let b01 = WPoly::zero(m);
        let g0 = WMap::change(&a0, &[b00, b01], cap);
        // annulus-side gauge: negative-power coefficients
        let mut a1 = WPoly::zero(m);
        a1.add_term(&[0, 2], &ZFun::monomial(-1, c(0.15, 0.0)));
        let b10 = WPoly::zero(m);
        let mut b11 = WPoly::zero(m);
        b11.add_term(&[1, 1], &ZFun::monomial(-1, c(0.1, -0.05)));
        let g1 = WMap::change(&a1, &[b10, b11], cap);
        vec![g0, g1]
    }

    #[test]
    fn normalize_mixed_round_trip_recovers_global_change() {
        let cap = 8;
        let gauges = mixed_gauges(cap);
        let atlas = ChartAtlas::from_chart_changes(&gauges, 0.2).unwrap();
        let res = normalize_transitions(&atlas, cap, &RoydenOptions::default()).unwrap();

        // locality: each degree step leaves lower degrees untouched
        for step in &res.steps {
            assert!(
                step.lower_degree_deviation <= 1e-12,
                "degree {} moved lower degrees by {}",
                step.degree,
                step.lower_degree_deviation
            );
            assert!(step.identity_deviation <= 1e-9);
            assert!(step.cousin_delta_residual <= 1e-7);
        }

        // chart independence: changes[a] o g_a agree across charts,
        // i.e. both equal the same global coordinate change.
        let c0 = res.changes[0].compose(&gauges[0]).unwrap();
        let c1 = res.changes[1].compose(&gauges[1]).unwrap();
        let mut worst = 0.0f64;
        for (zu, w) in sample_zw(2, 60, 1.0, 0.1) {
            let t = zu.norm().max(1e-9);
            let radius = 0.6 + 0.2 * t; // overlap annulus
            let z = zu / t * radius;
            let (za, wa) = c0.eval(z, &w);
            let (zb, wb) = c1.eval(z, &w);
            worst = worst.max((za - zb).norm());
            for (x, y) in wa.iter().zip(wb.iter()) {
                worst = worst.max((x - y).norm());
            }
        }
        assert!(worst <= 1e-8, "chart disagreement {worst}");
    }

    /// One-sided gauge with fiber `w1 -> w1 (1 - gamma w2)` (and `w2`
    /// fixed) plus a base shift `z -> z - sum_{n=2..5} gamma^{n-1} w2^n`.
    /// Its inverse is `w1 / (1 - gamma w2)` over a polynomial base shift:
    /// a geometric series with convergence radius exactly `1 / gamma`
    /// on fiber balls.
    fn geometric_gauge(gamma: f64, cap: usize) -> WMap {
        let m = 2;
        let mut a = WPoly::zero(m);
        for n in 2..=5u8 {
            a.add_term(&[0, n], &ZFun::constant(c(gamma.powi(n as i32 - 1), 0.0)));
        }
        let mut b0 = WPoly::zero(m);
        b0.add_term(&[1, 1], &ZFun::constant(c(gamma, 0.0))); // fiber1 = w1 - gamma w1 w2
        let b1 = WPoly::zero(m);
        WMap::change(&a, &[b0, b1], cap)
    }

    #[test]
    fn normalize_geometric_fixture_certifies_exact_radius() {
        // Every cocycle coefficient is a z-constant, so the whole change
        // lands on the disk chart and X_0 o g_0 = id. The per-step norms
        // are exactly gamma^(n-1) (base terms at degrees 2..5, fiber terms
        // at 2, 3, 5, 9 by the doubling of the removal), so the log-linear
        // fit recovers the known radius 1/gamma without bias.
        let m = 2;
        let cap = 10;
        let gamma = 2.0;
        let g0 = geometric_gauge(gamma, cap);
        let g1 = WMap::identity(m, cap);
        let atlas = ChartAtlas::from_chart_changes(&[g0.clone(), g1], 0.2).unwrap();

        let res = normalize_transitions(&atlas, 9, &RoydenOptions::default()).unwrap();

        // annulus chart untouched
        let dev1 = res.changes[1].deviation_from_identity(0, cap, &[0.7, 1.0], 16);
        assert!(dev1 <= 1e-12, "annulus chart moved by {dev1}");

        // X_0 o g_0 = id through the working degree
        let comp = res.changes[0].compose(&g0).unwrap();
        let dev0 = comp.deviation_from_identity(2, 9, &[0.5, 0.8], 32);
        assert!(dev0 <= 1e-9, "round trip deviation {dev0}");

        // norm rows sit on the exact line gamma^(n-1)
        for row in &res.norm_table {
            if row.chart_norm > 0.0 {
                let expected = gamma.powi(row.degree as i32 - 1);
                assert!(
                    (row.chart_norm - expected).abs() <= 1e-9 * expected,
                    "degree {} norm {} expected {expected}",
                    row.degree,
                    row.chart_norm
                );
                assert!((row.cousin_constant - 1.0).abs() <= 1e-9);
            }
        }
        let nonzero = res.norm_table.iter().filter(|r| r.chart_norm > 0.0).count();
        assert_eq!(nonzero, 5, "expected rows at degrees 2, 3, 4, 5, 9");

        // certified radius is exact for this fixture
        let known = 1.0 / gamma;
        assert!(
            (res.epsilon - known).abs() <= 1e-6 * known,
            "epsilon {} vs known {known}",
            res.epsilon
        );
        assert!(res.epsilon_window.0 <= known && known <= res.epsilon_window.1 * (1.0 + 1e-9));

        // growth-rate stabilization over the top third of degrees
        let roots: Vec<f64> = res
            .norm_table
            .iter()
            .filter(|row| row.chart_norm > 0.0)
            .map(|row| row.chart_norm.powf(1.0 / row.degree as f64))
            .collect();
        let take = (roots.len() / 3).max(2);
        let top = &roots[roots.len() - take..];
        let lo = top.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = top.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            hi / lo - 1.0 < 0.10,
            "rate drift {:.3} over the top third (roots {roots:?})",
            hi / lo - 1.0
        );
    }

    #[test]
    fn normalize_quadratic_fiber_fixture_brackets_branch_radius() {
        // Gauge g_0 = (z, w + gamma w^2): the inverse has a square-root
        // branch point at |w| = 1/(4 gamma). The per-step norms of this
        // fixture oscillate (composition cross terms nearly cancel at some
        // degrees), so the fitted radius is only bracketed, not exact.
        let m = 1;
        let cap = 10;
        let gamma = 0.5;
        let mut b = WPoly::zero(m);
        b.add_term(&[2], &ZFun::constant(c(-gamma, 0.0))); // change subtracts: fiber = w + gamma w^2
        let g0 = WMap::change(&WPoly::zero(m), &[b], cap);
        let g1 = WMap::identity(m, cap);
        let atlas = ChartAtlas::from_chart_changes(&[g0.clone(), g1], 0.2).unwrap();

        let res = normalize_transitions(&atlas, cap, &RoydenOptions::default()).unwrap();

        // annulus chart untouched, disk chart inverts the gauge
        let dev1 = res.changes[1].deviation_from_identity(0, cap, &[0.7, 1.0], 16);
        assert!(dev1 <= 1e-12, "annulus chart moved by {dev1}");
        let comp = res.changes[0].compose(&g0).unwrap();
        let dev0 = comp.deviation_from_identity(2, cap, &[0.5, 0.8], 32);
        assert!(dev0 <= 1e-9, "round trip deviation {dev0}");

        // hand-derived per-step norms at the first degrees: the degree-2
        // step removes gamma w^2; the recomposition then exposes
        // 2 gamma^2 w^3, then gamma^3 w^4, then 12 gamma^4 w^5.
        let expected = [gamma, 2.0 * gamma * gamma, gamma.powi(3), 12.0 * gamma.powi(4)];
        for (row, want) in res.norm_table.iter().zip(expected.iter()) {
            assert!(
                (row.chart_norm - want).abs() <= 1e-9 * want.max(1.0),
                "degree {} norm {} expected {want}",
                row.degree,
                row.chart_norm
            );
        }

        // the fitted radius brackets the branch-point radius
        let known = 1.0 / (4.0 * gamma);
        assert!(
            res.epsilon >= known / 3.0 && res.epsilon <= known * 3.0,
            "epsilon {} vs known {known}",
            res.epsilon
        );
    }

    #[test]
    fn normalize_rejects_inconsistent_degree_data() {
        // A transition whose w-linear block deviates from the identity is
        // rejected up front: the degree loop starts at 2.
        let m = 1;
        let mut t = WMap::identity(m, 4);
        t.fiber[0].add_term(&[1], &ZFun::constant(c(0.3, 0.0)));
        let mut atlas = ChartAtlas::identity(m, 4, 0.2);
        atlas.transitions.insert((0, 1), t);
        assert!(matches!(
            normalize_transitions(&atlas, 4, &RoydenOptions::default()),
            Err(Error::Config(_))
        ));
    }

    // -- tubular assembly ---------------------------------------------------

    #[test]
    fn assemble_identity_atlas_appends_fiber_frame() {
        // phi(z) = (z, 0.5 z^2 + 0.1 z^3): for the identity atlas the glued
        // map must be phi(z) + w appended in the complement frame, which
        // here is (z, 0.5 z^2 + 0.1 z^3 + w).
        let phi = series_1var(&[
            vec![c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(0.5, 0.0)],
            vec![c(0.0, 0.0), c(0.1, 0.0)],
        ]);
        let emb = TubularEmbedding::graph(phi, 1e-8, &StraightenOptions::default()).unwrap();
        let res = RoydenResult::identity(1, 8, 0.2);
        let map = assemble_tubular_map(&res, &emb, &AssembleOptions::default()).unwrap();
        assert!(map.w0_residual <= 1e-12, "w0 residual {}", map.w0_residual);
        for k in 0..24 {
            let z = C64::from_polar(0.8, 0.4 * k as f64);
            let w = [c(0.05, -0.03)];
            let p = map.eval(z, &w).unwrap();
            assert!((p[0] - z).norm() <= 1e-12);
            let expected = 0.5 * z * z + 0.1 * z * z * z + w[0];
            assert!((p[1] - expected).norm() <= 1e-12);
        }
        let inv = map.newton_inverse_residual(40).unwrap();
        assert!(inv <= 1e-8, "newton round trip {inv}");
    }

    #[test]
    fn assemble_round_trip_matches_known_global_map() {
        // One-sided fixture: the normalized coordinates undo the gauge
        // exactly, so the glued map must coincide with the map assembled
        // from the identity atlas.
        let m = 1;
        let cap = 8;
        let mut b = WPoly::zero(m);
        b.add_term(&[2], &ZFun::constant(c(-0.5, 0.0)));
        let g0 = WMap::change(&WPoly::zero(m), &[b], cap);
        let g1 = WMap::identity(m, cap);
        let gauges = vec![g0, g1];
        let atlas = ChartAtlas::from_chart_changes(&gauges, 0.2).unwrap();
        let res = normalize_transitions(&atlas, cap, &RoydenOptions::default()).unwrap();

        let phi = series_1var(&[
            vec![c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
        ]);
        let mut emb =
            TubularEmbedding::graph(phi.clone(), 1e-8, &StraightenOptions::default()).unwrap();
        emb.gauges = Some(gauges);
        let map = assemble_tubular_map(&res, &emb, &AssembleOptions::default()).unwrap();

        let emb_id = TubularEmbedding::graph(phi, 1e-8, &StraightenOptions::default()).unwrap();
        let id_res = RoydenResult::identity(1, cap, 0.2);
        let known = assemble_tubular_map(&id_res, &emb_id, &AssembleOptions::default()).unwrap();

        let mut worst = 0.0f64;
        for (z, w) in sample_zw(1, 80, 0.95, 0.1) {
            let p = map.eval(z, &w).unwrap();
            let q = known.eval(z, &w).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                worst = worst.max((a - b).norm());
            }
        }
        assert!(worst <= 1e-8, "tubular map deviates from the known map by {worst}");
        assert!(map.w0_residual <= 1e-12);
    }

    #[test]
    fn assemble_rejects_mismatched_gauges() {
        // Gauges that do not belong to the normalized atlas break chart
        // agreement on the overlap.
        let m = 1;
        let cap = 8;
        let mut b = WPoly::zero(m);
        b.add_term(&[2], &ZFun::constant(c(-0.5, 0.0)));
        let g0 = WMap::change(&WPoly::zero(m), &[b], cap);
        let g1 = WMap::identity(m, cap);
        let atlas = ChartAtlas::from_chart_changes(&[g0, g1.clone()], 0.2).unwrap();
        let res = normalize_transitions(&atlas, cap, &RoydenOptions::default()).unwrap();

        let phi = series_1var(&[
            vec![c(0.0, 0.0), c(0.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
        ]);
        let mut emb = TubularEmbedding::graph(phi, 1e-8, &StraightenOptions::default()).unwrap();
        emb.gauges = Some(vec![g1.clone(), g1]); // wrong: identity on both charts
        match assemble_tubular_map(&res, &emb, &AssembleOptions::default()) {
            Err(Error::ChartDisagreement { residual, .. }) => assert!(residual > 1e-8),
            other => panic!("expected ChartDisagreement, got {other:?}"),
        }
    }
}
