//! Power series with certified truncation: truncated Hilbert-space vectors,
//! homogeneous polynomial maps, and radius estimation via Cauchy-Hadamard.
//!
//! A power series map is `f(x) = sum_n P_n(x - center)` with `P_n`
//! n-homogeneous; `||P_n|| = sup { ||P_n(x)|| : ||x|| <= 1 }` and
//! `limsup ||P_n||^{1/n} = 1/r` ties coefficient decay to the convergence
//! radius. Evaluation always returns a tail bound next to the value.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::io::CsvTable;

/// Truncation of an l^2 vector to finitely many coordinates, with an upper
/// bound for the norm of the discarded tail.
#[derive(Debug, Clone)]
pub struct TruncatedVector {
    pub coords: Vec<C64>,
    pub tail_bound: f64,
}

impl TruncatedVector {
    pub fn new(coords: Vec<C64>) -> Self {
        TruncatedVector { coords, tail_bound: 0.0 }
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Distance between truncations of possibly different lengths; the
    /// shorter one is zero-padded.
    pub fn dist(&self, other: &TruncatedVector) -> f64 {
        let n = self.coords.len().max(other.coords.len());
        let zero = C64::new(0.0, 0.0);
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.coords.get(i).copied().unwrap_or(zero);
            let b = other.coords.get(i).copied().unwrap_or(zero);
            acc += (a - b).norm_sqr();
        }
        acc.sqrt()
    }
}

/// Dense symmetric-tensor storage is capped here; beyond these sizes a map
/// must be supplied as a callable.
pub const MAX_DENSE_DEGREE: usize = 12;
pub const MAX_DENSE_DIM: usize = 8;

#[derive(Clone)]
pub enum HomogeneousRep {
    /// Canonical polynomial form of the symmetrized tensor: exponent vector
    /// (length `dim_in`, entries summing to `degree`) -> coefficient vector
    /// in the codomain.
    Dense(BTreeMap<Vec<u8>, Vec<C64>>),
    /// Evaluation-only representation for high degree/dimension.
    Callable(Arc<dyn Fn(&[C64]) -> Vec<C64> + Send + Sync>),
}

impl std::fmt::Debug for HomogeneousRep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HomogeneousRep::Dense(m) => write!(f, "Dense({} terms)", m.len()),
            HomogeneousRep::Callable(_) => write!(f, "Callable"),
        }
    }
}

/// An n-homogeneous polynomial map `C^dim_in -> C^dim_out`.
#[derive(Debug, Clone)]
pub struct HomogeneousMap {
    pub degree: usize,
    pub dim_in: usize,
    pub dim_out: usize,
    pub rep: HomogeneousRep,
    /// Filled by `homogeneous_norm`; a certified lower bound for the sup norm.
    pub norm_estimate: Option<f64>,
}

impl HomogeneousMap {
    pub fn zero(degree: usize, dim_in: usize, dim_out: usize) -> Self {
        HomogeneousMap {
            degree,
            dim_in,
            dim_out,
            rep: HomogeneousRep::Dense(BTreeMap::new()),
            norm_estimate: Some(0.0),
        }
    }

    /// Dense map from monomial coefficients. Exponent vectors must match
    /// `dim_in` and sum to `degree`; sizes are capped by `MAX_DENSE_*`.
    pub fn dense(
        degree: usize,
        dim_in: usize,
        dim_out: usize,
        coeffs: BTreeMap<Vec<u8>, Vec<C64>>,
    ) -> Result<Self> {
        if degree > MAX_DENSE_DEGREE || dim_in > MAX_DENSE_DIM {
            return Err(Error::Config(format!(
                "dense homogeneous maps are capped at degree {MAX_DENSE_DEGREE}, dim {MAX_DENSE_DIM}; \
                 got degree {degree}, dim {dim_in} (use a callable)"
            )));
        }
        for (alpha, c) in &coeffs {
            if alpha.len() != dim_in {
                return Err(Error::Config(format!(
                    "exponent vector length {} != dim_in {dim_in}",
                    alpha.len()
                )));
            }
            let total: usize = alpha.iter().map(|&e| e as usize).sum();
            if total != degree {
                return Err(Error::Config(format!(
                    "exponent vector {alpha:?} has degree {total}, expected {degree}"
                )));
            }
            if c.len() != dim_out {
                return Err(Error::Config(format!(
                    "coefficient vector length {} != dim_out {dim_out}",
                    c.len()
                )));
            }
        }
        Ok(HomogeneousMap {
            degree,
            dim_in,
            dim_out,
            rep: HomogeneousRep::Dense(coeffs),
            norm_estimate: None,
        })
    }

    /// Degree-1 map from a dense matrix (rows = codomain).
    pub fn linear(matrix: &[Vec<C64>]) -> Result<Self> {
        let dim_out = matrix.len();
        let dim_in = matrix.first().map(|r| r.len()).unwrap_or(0);
        let mut coeffs: BTreeMap<Vec<u8>, Vec<C64>> = BTreeMap::new();
        for j in 0..dim_in {
            let mut alpha = vec![0u8; dim_in];
            alpha[j] = 1;
            let col: Vec<C64> = matrix.iter().map(|row| row[j]).collect();
            if col.iter().any(|c| c.norm() != 0.0) {
                coeffs.insert(alpha, col);
            }
        }
        Self::dense(1, dim_in, dim_out, coeffs)
    }

    /// Scalar map of one variable: `c * z^degree`.
    pub fn scalar_monomial(degree: usize, c: C64) -> Self {
        let mut coeffs = BTreeMap::new();
        if c.norm() != 0.0 {
            coeffs.insert(vec![degree as u8], vec![c]);
        }
        HomogeneousMap {
            degree,
            dim_in: 1,
            dim_out: 1,
            rep: HomogeneousRep::Dense(coeffs),
            norm_estimate: None,
        }
    }

    pub fn callable(
        degree: usize,
        dim_in: usize,
        dim_out: usize,
        f: Arc<dyn Fn(&[C64]) -> Vec<C64> + Send + Sync>,
    ) -> Self {
        HomogeneousMap {
            degree,
            dim_in,
            dim_out,
            rep: HomogeneousRep::Callable(f),
            norm_estimate: None,
        }
    }

    pub fn eval(&self, x: &[C64]) -> Vec<C64> {
        debug_assert_eq!(x.len(), self.dim_in);
        match &self.rep {
            HomogeneousRep::Dense(coeffs) => {
                let mut out = vec![C64::new(0.0, 0.0); self.dim_out];
                for (alpha, c) in coeffs {
                    let mut mono = C64::new(1.0, 0.0);
                    for (xi, &e) in x.iter().zip(alpha.iter()) {
                        for _ in 0..e {
                            mono *= xi;
                        }
                    }
                    for (o, ci) in out.iter_mut().zip(c.iter()) {
                        *o += ci * mono;
                    }
                }
                out
            }
            HomogeneousRep::Callable(f) => f(x),
        }
    }

    /// True when all stored coefficients vanish (callables are never "zero").
    pub fn is_zero(&self) -> bool {
        match &self.rep {
            HomogeneousRep::Dense(c) => c.values().flatten().all(|v| v.norm() == 0.0),
            HomogeneousRep::Callable(_) => false,
        }
    }
}

/// Result of `homogeneous_norm`: a certified lower bound for
/// `sup { ||P(x)|| : ||x|| <= 1 }` together with the witness point.
#[derive(Debug, Clone)]
pub struct NormEstimate {
    pub lower_bound: f64,
    pub witness: Vec<C64>,
}

pub(crate) fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index + 1;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const HALTON_BASES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Deterministic low-discrepancy points on the unit sphere of R^dim:
/// Halton tuples pushed through Box-Muller and normalized.
fn sphere_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    assert!(dim <= HALTON_BASES.len(), "sphere sampling capped at 16 real dims");
    let pairs = dim.div_ceil(2);
    (0..count)
        .map(|i| {
            let mut x = Vec::with_capacity(2 * pairs);
            for p in 0..pairs {
                let u1 = halton(i, HALTON_BASES[2 * p]).max(1e-12);
                let u2 = halton(i, HALTON_BASES[2 * p + 1]);
                let r = (-2.0 * u1.ln()).sqrt();
                let t = 2.0 * std::f64::consts::PI * u2;
                x.push(r * t.cos());
                x.push(r * t.sin());
            }
            x.truncate(dim);
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            x.iter().map(|v| v / n).collect()
        })
        .collect()
}

fn to_complex(x: &[f64]) -> Vec<C64> {
    x.chunks(2).map(|p| C64::new(p[0], p.get(1).copied().unwrap_or(0.0))).collect()
}

/// Certified lower bound for the sup norm of a homogeneous map over the unit
/// sphere: deterministic low-discrepancy sampling followed by projected
/// gradient ascent from the best sample. Every reported value is attained at
/// the returned witness, so it is a true lower bound; no upper bound is
/// claimed.
pub fn homogeneous_norm(map: &HomogeneousMap, sample_count: usize) -> NormEstimate {
    let rdim = 2 * map.dim_in;
    let obj = |x: &[f64]| -> f64 {
        let z = to_complex(x);
        map.eval(&z).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    };

    let mut best_x: Vec<f64> = vec![0.0; rdim];
    best_x[0] = 1.0;
    let mut best_v = obj(&best_x);
    for p in sphere_points(rdim, sample_count.max(8)) {
        let v = obj(&p);
        if v > best_v {
            best_v = v;
            best_x = p;
        }
    }

    // Projected gradient ascent with backtracking; gradient by central
    // differences on the sphere tangent space.
    let normalize = |x: &mut Vec<f64>| {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in x.iter_mut() {
            *v /= n;
        }
    };
    let mut x = best_x;
    let mut v = best_v;
    let mut step = 0.25f64;
    'outer: for _ in 0..600 {
        let h = (step * 1e-3).clamp(1e-9, 1e-4);
        let mut grad = vec![0.0; rdim];
        for i in 0..rdim {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            grad[i] = (obj(&xp) - obj(&xm)) / (2.0 * h);
        }
        let dot: f64 = grad.iter().zip(&x).map(|(g, xi)| g * xi).sum();
        for (g, xi) in grad.iter_mut().zip(&x) {
            *g -= dot * xi;
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-12 {
            break;
        }
        loop {
            let mut cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(xi, gi)| xi + step * gi / gnorm)
                .collect();
            normalize(&mut cand);
            let cv = obj(&cand);
            if cv > v {
                x = cand;
                v = cv;
                step = (step * 1.9).min(0.5);
                break;
            }
            step *= 0.5;
            if step < 1e-13 {
                break 'outer;
            }
        }
    }

    NormEstimate { lower_bound: v, witness: to_complex(&x) }
}

/// A truncated power series map `f(x) = sum_{n < terms.len()} P_n(x - center)`.
///
/// `radius_estimate` is `f64::INFINITY` for polynomials. Construct
/// polynomials through `from_polynomial_terms`, which pads the term list
/// with zero maps so the estimator can recognize the shape.
#[derive(Debug, Clone)]
pub struct PowerSeriesMap {
    pub center: Vec<C64>,
    pub terms: Vec<HomogeneousMap>,
    pub radius_estimate: f64,
}

impl PowerSeriesMap {
    pub fn new(center: Vec<C64>, terms: Vec<HomogeneousMap>) -> Self {
        PowerSeriesMap { center, terms, radius_estimate: f64::NAN }
    }

    /// Wrap a finite polynomial: pads with zero maps to twice the length so
    /// `estimate_radius` certifies the polynomial shape (trailing half zero)
    /// and returns `+inf`.
    pub fn from_polynomial_terms(center: Vec<C64>, terms: Vec<HomogeneousMap>) -> Self {
        let dim_in = terms.first().map(|t| t.dim_in).unwrap_or(1);
        let dim_out = terms.first().map(|t| t.dim_out).unwrap_or(1);
        let deg = terms.len();
        let mut padded = terms;
        for n in deg..(2 * deg).max(deg + 2) {
            padded.push(HomogeneousMap::zero(n, dim_in, dim_out));
        }
        PowerSeriesMap { center, terms: padded, radius_estimate: f64::INFINITY }
    }

    pub fn dim_in(&self) -> usize {
        self.terms.first().map(|t| t.dim_in).unwrap_or(self.center.len())
    }

    pub fn dim_out(&self) -> usize {
        self.terms.first().map(|t| t.dim_out).unwrap_or(1)
    }

    /// Sup-norm per degree, computing (and caching into the return value
    /// only) `homogeneous_norm` where no estimate is stored.
    pub fn term_norms(&self, sample_count: usize) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| {
                if t.is_zero() {
                    0.0
                } else {
                    t.norm_estimate
                        .unwrap_or_else(|| homogeneous_norm(t, sample_count).lower_bound)
                }
            })
            .collect()
    }

    /// Serialize to the shared CSV layout.
    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new();
        for term in &self.terms {
            if let HomogeneousRep::Dense(coeffs) = &term.rep {
                for (alpha, c) in coeffs {
                    let mi: Vec<i64> = alpha.iter().map(|&e| e as i64).collect();
                    for (comp, v) in c.iter().enumerate() {
                        table.push(term.degree as i64, &mi, comp, *v);
                    }
                }
            }
        }
        table.to_string()
    }

    /// Rebuild a dense series from CSV rows (degrees define term slots;
    /// missing degrees become zero maps).
    pub fn from_csv(center: Vec<C64>, dim_in: usize, dim_out: usize, text: &str) -> Result<Self> {
        let rows = CsvTable::parse(text)?;
        let max_deg = rows.iter().map(|r| r.0).max().unwrap_or(0);
        if max_deg < 0 {
            return Err(Error::Config("series CSV has negative degrees".into()));
        }
        let mut maps: Vec<BTreeMap<Vec<u8>, Vec<C64>>> =
            vec![BTreeMap::new(); (max_deg + 1) as usize];
        for (deg, mi, comp, v) in rows {
            if deg < 0 || mi.len() != dim_in || comp >= dim_out {
                return Err(Error::Config(format!(
                    "series CSV row out of shape: degree {deg}, multi_index {mi:?}, component {comp}"
                )));
            }
            let alpha: Vec<u8> = mi.iter().map(|&e| e as u8).collect();
            let entry = maps[deg as usize]
                .entry(alpha)
                .or_insert_with(|| vec![C64::new(0.0, 0.0); dim_out]);
            entry[comp] = v;
        }
        let terms: Result<Vec<HomogeneousMap>> = maps
            .into_iter()
            .enumerate()
            .map(|(n, coeffs)| HomogeneousMap::dense(n, dim_in, dim_out, coeffs))
            .collect();
        Ok(PowerSeriesMap::new(center, terms?))
    }
}

fn norm_of(x: &[C64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Evaluate a series at `x`, returning the truncated value together with a
/// tail bound from the geometric remainder implied by the radius estimate.
///
/// With fitted growth `||P_n|| <= A rho^n` (A taken as the max observed
/// ratio, rho = 1/radius), the discarded tail is at most
/// `A (rho t)^{N+1} / (1 - rho t)` at distance `t` from the center.
pub fn eval_series(f: &PowerSeriesMap, x: &[C64]) -> Result<TruncatedVector> {
    if x.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite { context: "eval_series input".into() });
    }
    let dx: Vec<C64> = x
        .iter()
        .zip(self_center(f))
        .map(|(xi, ci)| xi - ci)
        .collect();
    let t = norm_of(&dx);
    let radius = if f.radius_estimate.is_nan() {
        estimate_radius(f)?
    } else {
        f.radius_estimate
    };
    if t >= radius {
        return Err(Error::OutOfRadius { dist: t, radius });
    }

    let mut value = vec![C64::new(0.0, 0.0); f.dim_out()];
    for term in &f.terms {
        let tv = term.eval(&dx);
        for (v, tvi) in value.iter_mut().zip(tv) {
            *v += tvi;
        }
    }
    if value.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite { context: "eval_series accumulation".into() });
    }

    let tail_bound = if radius.is_infinite() {
        0.0
    } else {
        let rho = 1.0 / radius;
        let norms = f.term_norms(256);
        let prefactor = norms
            .iter()
            .enumerate()
            .map(|(n, &nn)| nn / rho.powi(n as i32))
            .fold(0.0, f64::max);
        let n_top = f.terms.len(); // first discarded degree
        let q = rho * t;
        // q < 1 is guaranteed by the radius gate above
        prefactor * q.powi(n_top as i32) / (1.0 - q) * (1.0 + 1e-12)
    };

    Ok(TruncatedVector { coords: value, tail_bound })
}

fn self_center(f: &PowerSeriesMap) -> impl Iterator<Item = C64> + '_ {
    let dim = f.dim_in();
    (0..dim).map(move |i| f.center.get(i).copied().unwrap_or_else(|| C64::new(0.0, 0.0)))
}

/// Cauchy-Hadamard radius from the coefficient norms: least-squares fit of
/// `log ||P_n||` against `n` over the top half of the available degrees,
/// radius `exp(-slope)`.
///
/// A polynomial shape (all terms in the trailing half zero) certifies
/// radius `+inf`. Otherwise at least 4 nonzero terms are required.
pub fn estimate_radius(f: &PowerSeriesMap) -> Result<f64> {
    let norms = f.term_norms(256);
    let nonzero: Vec<usize> = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0.0)
        .map(|(i, _)| i)
        .collect();
    if nonzero.is_empty() {
        return Ok(f64::INFINITY); // the zero map converges everywhere
    }
    let top_deg = f.terms.len() - 1;
    let max_nz = *nonzero.last().unwrap();
    if max_nz <= top_deg / 2 {
        return Ok(f64::INFINITY); // trailing half vanishes: polynomial
    }
    if nonzero.len() < 4 {
        return Err(Error::InsufficientTerms { found: nonzero.len() });
    }

    // Fit over nonzero degrees in the top half; fall back to the last four
    // nonzero degrees when the top half is too sparse.
    let half = top_deg / 2;
    let mut fit_degs: Vec<usize> = nonzero.iter().copied().filter(|&n| n >= half).collect();
    if fit_degs.len() < 2 {
        fit_degs = nonzero[nonzero.len().saturating_sub(4)..].to_vec();
    }
    let (slope, _intercept) = log_linear_fit(
        &fit_degs.iter().map(|&n| n as f64).collect::<Vec<_>>(),
        &fit_degs.iter().map(|&n| norms[n].ln()).collect::<Vec<_>>(),
    )?;
    Ok((-slope).exp())
}

/// Least-squares line `y = intercept + slope * x`.
pub fn log_linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Err(Error::InsufficientTerms { found: xs.len() });
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientTerms { found: 1 });
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
