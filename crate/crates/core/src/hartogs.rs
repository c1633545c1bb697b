//! Hartogs figures and holomorphic extension engines.
//!
//! A Hartogs figure in `C^q x C^n` is the union of a thin slab (full polydisk
//! in the first group, small radius `r` in the second) and an outer shell
//! (group norm of `z'` between `1 - r` and `1`, full polydisk in `z''`).
//! Functions holomorphic on the figure extend to the full product; the
//! engines here compute the extension as a certified coefficient table.
//!
//! Numerically the extension comes from a single Laurent--Taylor expansion on
//! a polytorus inside the shell, where every fiber radius can be pushed close
//! to 1: coefficient extraction at radius near 1 keeps roundoff amplification
//! of degree-`k` coefficients at `O(rho^{-k}) ~ 1`, whereas extraction on the
//! small slab circle (radius `r/2`) amplifies noise by `(2/r)^k` and is
//! therefore used only as a low-degree certification cross-check. Negative
//! shell indices must vanish for a function that also lives on the slab --
//! their sampled mass is the identity-theorem certificate and is reported.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quadrature::{
    circle_coefficients, cr_residual, polytorus_coefficients, CircleSampler, HoloFn,
    TorusCoefficients,
};
use crate::series::{halton, log_linear_fit};

/// Fiber dimension: finite, or an infinite-dimension marker carrying the
/// working truncation `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiberDim {
    Finite(usize),
    Truncated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Polydisk,
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HartogsFigure {
    pub q: usize,
    pub fiber: FiberDim,
    pub r: f64,
    pub model: Model,
}

impl HartogsFigure {
    pub fn new(q: usize, fiber: FiberDim, r: f64, model: Model) -> Result<Self> {
        if q < 1 {
            return Err(Error::Config("figure needs q >= 1".into()));
        }
        let m = match fiber {
            FiberDim::Finite(n) | FiberDim::Truncated(n) => n,
        };
        if m < 1 {
            return Err(Error::Config("figure needs fiber dimension >= 1".into()));
        }
        if !(0.0 < r && r < 1.0) {
            return Err(Error::Config(format!("figure needs r in (0,1), got {r}")));
        }
        Ok(HartogsFigure { q, fiber, r, model })
    }

    /// The (1,1) polydisk figure.
    pub fn bidisk(r: f64) -> Result<Self> {
        Self::new(1, FiberDim::Finite(1), r, Model::Polydisk)
    }

    pub fn fiber_dim(&self) -> usize {
        match self.fiber {
            FiberDim::Finite(n) | FiberDim::Truncated(n) => n,
        }
    }

    pub fn is_truncated(&self) -> bool {
        matches!(self.fiber, FiberDim::Truncated(_))
    }

    /// Group norm of the model: max-norm for polydisks, Euclidean for balls.
    pub fn group_norm(&self, v: &[C64]) -> f64 {
        match self.model {
            Model::Polydisk => v.iter().map(|x| x.norm()).fold(0.0, f64::max),
            Model::Ball => v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    /// Membership: slab (full `z'` region, small fiber) or shell (outer `z'`
    /// ring, full fiber).
    pub fn contains(&self, zp: &[C64], zpp: &[C64]) -> bool {
        if zp.len() != self.q || zpp.len() != self.fiber_dim() {
            return false;
        }
        let np = self.group_norm(zp);
        let nf = self.group_norm(zpp);
        (np < 1.0 && nf < self.r) || (1.0 - self.r < np && np < 1.0 && nf < 1.0)
    }

    /// Membership predicate for the doubly-infinite figure, both groups read
    /// in the sup norm over the supplied truncations.
    pub fn infinite_membership(zp: &[C64], zpp: &[C64], r: f64) -> bool {
        let np = zp.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let nf = zpp.iter().map(|x| x.norm()).fold(0.0, f64::max);
        (np < 1.0 && nf < r) || (1.0 - r < np && np < 1.0 && nf < 1.0)
    }

    /// Per-axis extraction radii placing the polytorus inside the shell.
    fn shell_radii(&self, fiber_n: usize) -> (f64, f64) {
        let base = 1.0 - self.r / 2.0;
        match self.model {
            Model::Polydisk => (base, base),
            Model::Ball => (base / (self.q as f64).sqrt(), base / (fiber_n as f64).sqrt()),
        }
    }

    /// Deterministic figure samples with per-group caps (max-norm caps for
    /// polydisks, group-norm caps for balls); slab and shell interleaved.
    pub fn sample_points(&self, count: usize, cap_outer: f64, cap_fiber: f64) -> Vec<Vec<C64>> {
        const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
        let q = self.q;
        let nf = self.fiber_dim();
        let r = self.r;
        let mut out = Vec::with_capacity(count);
        let mut i = 0usize;
        while out.len() < count {
            let shell = i % 2 == 1;
            let mut zp: Vec<C64> = (0..q)
                .map(|a| {
                    let rad = halton(i, PRIMES[(2 * a) % 12]);
                    let th = 2.0 * PI * halton(i, PRIMES[(2 * a + 1) % 12]);
                    C64::from_polar(rad, th)
                })
                .collect();
            let mut zpp: Vec<C64> = (0..nf)
                .map(|a| {
                    let rad = halton(i + 7, PRIMES[(2 * (a + q)) % 12]);
                    let th = 2.0 * PI * halton(i + 7, PRIMES[(2 * (a + q) + 1) % 12]);
                    C64::from_polar(rad, th)
                })
                .collect();
            // rescale the groups into the right regions
            let u = halton(i, 41);
            let v = halton(i, 43);
            let (np_target, nf_target) = if shell {
                (
                    (1.0 - r) + ((cap_outer - (1.0 - r)).max(0.0) * (0.1 + 0.85 * u)),
                    cap_fiber * (0.98 * v),
                )
            } else {
                (cap_outer * u, (0.9 * r).min(cap_fiber) * v)
            };
            rescale_group(self.model, &mut zp, np_target);
            rescale_group(self.model, &mut zpp, nf_target);
            i += 1;
            if self.contains(&zp, &zpp) {
                let mut pt = zp;
                pt.extend_from_slice(&zpp);
                out.push(pt);
            }
        }
        out
    }
}

fn rescale_group(model: Model, v: &mut [C64], target: f64) {
    let cur = match model {
        Model::Polydisk => v.iter().map(|x| x.norm()).fold(0.0, f64::max),
        Model::Ball => v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt(),
    };
    if cur > 1e-300 {
        let s = target / cur;
        for x in v.iter_mut() {
            *x *= s;
        }
    }
}

/// Tuning knobs for the extension engines; the defaults satisfy the
/// module-level tolerance contracts for poles at distance >= 0.3 from the
/// closed target.
#[derive(Debug, Clone)]
pub struct ExtendOptions {
    /// Torus nodes per axis (power of two); default depends on dimension.
    pub nodes: Option<usize>,
    /// Per-axis kept degree; default depends on dimension.
    pub degree_cap: Option<usize>,
    pub overlap_tolerance: f64,
    pub negative_tolerance: f64,
    pub cr_tolerance: f64,
    /// Highest fiber degree checked against the small slab circle.
    pub cross_check_degree: usize,
    /// Relative oscillation gate between neighboring fiber slices.
    pub oscillation_tolerance: f64,
    /// Geometric growth rate above which the series cannot converge on the
    /// unit target.
    pub decay_gate: f64,
    /// Random test directions for the truncated-infinite engine.
    pub directions: usize,
    pub seed: u64,
    /// Extra points (full-dimension) at which the extension is compared to
    /// the input where the figure covers them.
    pub eval_points: Vec<Vec<C64>>,
}

impl Default for ExtendOptions {
    fn default() -> Self {
        ExtendOptions {
            nodes: None,
            degree_cap: None,
            overlap_tolerance: 1e-9,
            negative_tolerance: 1e-9,
            cr_tolerance: 1e-3,
            cross_check_degree: 6,
            oscillation_tolerance: 0.5,
            decay_gate: 1.0,
            directions: 8,
            seed: 0x4841_5254_4f47_5331,
            eval_points: Vec::new(),
        }
    }
}

fn default_nodes(dims: usize) -> usize {
    match dims {
        0..=3 => 128,
        _ => 32,
    }
}

fn default_cap(dims: usize, nodes: usize) -> usize {
    let hard = nodes / 2 - 5;
    match dims {
        0..=2 => 56.min(hard),
        3 => 36.min(hard),
        _ => 10.min(hard),
    }
}

/// A certified extension: nonnegative-index coefficient table on the target
/// polydisk plus every residual the construction measured.
#[derive(Clone)]
pub struct ExtensionResult {
    pub figure: HartogsFigure,
    /// Coefficients over `[0, cap]^(q+n)` (for the truncated-infinite engine,
    /// the table of the first frame direction).
    pub coeffs: TorusCoefficients,
    /// Per-axis certified target radii (the extraction radii).
    pub target_radii: Vec<f64>,
    /// Max-principle certificate: sampled sup of |f| on the extraction torus
    /// times (1 + 1e-6); the extension cannot exceed it on the closed target.
    pub sup_bound: f64,
    /// Geometric bound on the dropped tail at the target radii.
    pub tail_bound: f64,
    /// Max |extension - input| over figure samples inside the target.
    pub overlap_residual: f64,
    /// Max |c_K| over multi-indices with a negative component.
    pub negative_mass: f64,
    /// Max deviation of the small-circle certification route (degrees up to
    /// `cross_check_degree`).
    pub cross_check_residual: f64,
    /// Fitted geometric growth rate of the coefficient degrees.
    pub decay_rate: f64,
    /// Max relative jump of slice coefficient families between neighboring
    /// fiber grid slices (multi-fiber engine only).
    pub oscillation: f64,
    /// Max disagreement of directional extensions on the base slice
    /// (truncated-infinite engine only).
    pub direction_consistency: f64,
    /// Max |analytic directional derivative - centered difference| at the
    /// base points (truncated-infinite engine only).
    pub gateaux_residual: f64,
    slices: Option<Arc<SliceState>>,
}

impl std::fmt::Debug for ExtensionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtensionResult")
            .field("figure", &self.figure)
            .field("target_radii", &self.target_radii)
            .field("sup_bound", &self.sup_bound)
            .field("tail_bound", &self.tail_bound)
            .field("overlap_residual", &self.overlap_residual)
            .field("negative_mass", &self.negative_mass)
            .field("cross_check_residual", &self.cross_check_residual)
            .field("decay_rate", &self.decay_rate)
            .field("oscillation", &self.oscillation)
            .field("direction_consistency", &self.direction_consistency)
            .field("gateaux_residual", &self.gateaux_residual)
            .finish_non_exhaustive()
    }
}

struct SliceState {
    source: HoloFn,
    figure: HartogsFigure,
    opts: ExtendOptions,
    cached: Mutex<Vec<(Vec<C64>, TorusCoefficients)>>,
}

impl ExtensionResult {
    pub fn coeff(&self, k: &[i64]) -> C64 {
        self.coeffs.coeff(k)
    }

    /// Evaluate the extension inside the open unit target.
    pub fn eval(&self, pt: &[C64]) -> Result<C64> {
        let q = self.figure.q;
        if pt.len() < q + 1 {
            return Err(Error::Config(format!(
                "evaluation point has {} coordinates, figure needs more",
                pt.len()
            )));
        }
        let zp = &pt[..q];
        let zpp = &pt[q..];
        let np = self.figure.group_norm(zp);
        let nf = self.figure.group_norm(zpp);
        let dist = np.max(nf);
        if dist >= 1.0 {
            return Err(Error::OutOfRadius { dist, radius: 1.0 });
        }
        match &self.slices {
            None => Ok(eval_box(&self.coeffs, pt)),
            Some(state) => {
                if zpp.len() != self.figure.fiber_dim() {
                    return Err(Error::Config(
                        "fiber coordinate count does not match the truncation".into(),
                    ));
                }
                if nf < 1e-14 {
                    let cached = state.cached.lock().unwrap();
                    let mut spt = zp.to_vec();
                    spt.push(C64::new(0.0, 0.0));
                    return Ok(eval_box(&cached[0].1, &spt));
                }
                let v: Vec<C64> = zpp.iter().map(|x| x / nf).collect();
                let table = {
                    let cached = state.cached.lock().unwrap();
                    cached
                        .iter()
                        .find(|(w, _)| {
                            w.iter().zip(&v).all(|(a, b)| (a - b).norm() <= 1e-12)
                        })
                        .map(|(_, t)| t.clone())
                };
                let table = match table {
                    Some(t) => t,
                    None => {
                        let t = direction_table(
                            &state.source,
                            &state.figure,
                            &v,
                            &state.opts,
                        )?;
                        state.cached.lock().unwrap().push((v.clone(), t.clone()));
                        t
                    }
                };
                let mut spt = zp.to_vec();
                spt.push(C64::new(nf, 0.0));
                Ok(eval_box(&table, &spt))
            }
        }
    }
}

/// Multi-variable Horner evaluation of a nonnegative coefficient box.
pub fn eval_box(table: &TorusCoefficients, x: &[C64]) -> C64 {
    fn rec(table: &TorusCoefficients, x: &[C64], axis: usize, offset: usize) -> C64 {
        let len = table.k_len[axis];
        let stride: usize = table.k_len[axis + 1..].iter().product();
        let mut acc = C64::new(0.0, 0.0);
        for i in (0..len).rev() {
            let inner = if axis + 1 == table.k_len.len() {
                table.coeffs[offset + i]
            } else {
                rec(table, x, axis + 1, offset + i * stride)
            };
            acc = acc * x[axis] + inner;
        }
        acc * x[axis].powi(table.k_min[axis] as i32)
    }
    if table.coeffs.is_empty() {
        return C64::new(0.0, 0.0);
    }
    rec(table, x, 0, 0)
}

struct Extraction {
    trimmed: TorusCoefficients,
    negative_mass: f64,
    sup_torus: f64,
    radii: Vec<f64>,
    decay_rate: f64,
    tail_bound: f64,
}

/// Shell-torus extraction with identity-theorem and decay certificates.
fn extract_shell(
    f: &HoloFn,
    figure: &HartogsFigure,
    fiber_n: usize,
    opts: &ExtendOptions,
) -> Result<Extraction> {
    let dims = figure.q + fiber_n;
    let nodes = opts.nodes.unwrap_or_else(|| default_nodes(dims));
    let cap = opts
        .degree_cap
        .unwrap_or_else(|| default_cap(dims, nodes))
        .min(nodes / 2 - 5);
    let (rho_z, rho_w) = figure.shell_radii(fiber_n);
    let radii: Vec<f64> = (0..dims)
        .map(|a| if a < figure.q { rho_z } else { rho_w })
        .collect();
    let nodes_vec = vec![nodes; dims];
    let k_box = vec![(-4i64, cap as i64); dims];
    let table = polytorus_coefficients(&|pt: &[C64]| f(pt), &radii, &nodes_vec, &k_box)?;

    let mut negative_mass = 0.0f64;
    let side = cap + 1;
    let mut kept = vec![C64::new(0.0, 0.0); side.pow(dims as u32)];
    for (k, cval) in table.iter() {
        if k.iter().any(|&ka| ka < 0) {
            negative_mass = negative_mass.max(cval.norm());
        } else {
            let mut flat = 0usize;
            for &ka in &k {
                flat = flat * side + ka as usize;
            }
            kept[flat] = cval;
        }
    }
    let trimmed = TorusCoefficients {
        nodes: nodes_vec,
        radii: radii.clone(),
        k_min: vec![0; dims],
        k_len: vec![side; dims],
        coeffs: kept,
    };

    let sup_torus = torus_sup(f, &radii, nodes.min(128))?;

    // Per-axis degree profiles with conditioning-aware floors: the extracted
    // coefficient at multi-degree K carries roundoff amplified by
    // `prod_a rho_a^{-K_a}`, so profile entries are trusted only above that
    // envelope. The geometric fit runs on the resolved top half of each axis.
    let noise_unit = 30.0 * f64::EPSILON * (1.0 + sup_torus);
    let mut decay_rate = 0.0f64;
    let mut tail_fit = 0.0f64;
    for a in 0..dims {
        let mut prof = vec![0.0f64; side];
        for (k, cval) in trimmed.iter() {
            let slot = &mut prof[k[a] as usize];
            *slot = slot.max(cval.norm());
        }
        let corner: f64 = radii
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != a)
            .map(|(_, &r)| r.powi(-(cap as i32)))
            .product();
        let survivors: Vec<(f64, f64)> = prof
            .iter()
            .enumerate()
            .filter(|&(d, &s)| s > noise_unit * corner * radii[a].powi(-(d as i32)))
            .map(|(d, &s)| (d as f64, s.ln()))
            .collect();
        if survivors.len() < 4 {
            continue; // terminating along this axis: no resolvable tail
        }
        let d_top = survivors.last().unwrap().0;
        let window: Vec<(f64, f64)> = survivors
            .iter()
            .copied()
            .filter(|&(d, _)| d >= d_top / 2.0)
            .collect();
        if window.len() < 3 {
            continue;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = window.iter().copied().unzip();
        let (slope, intercept) = log_linear_fit(&xs, &ys)?;
        let rate = slope.exp();
        decay_rate = decay_rate.max(rate);
        let g = rate * radii[a];
        if g < 1.0 {
            tail_fit += intercept.exp() * (side as f64).powi(dims as i32 - 1)
                / (1.0 - g)
                * g.powi(cap as i32 + 1);
        } else {
            tail_fit = f64::INFINITY;
        }
    }
    if decay_rate > opts.decay_gate {
        return Err(Error::SlowDecay { rate: decay_rate });
    }
    // The identity-theorem certificate runs after the decay gate: a divergent
    // tail aliases mass into the negative bins, and that failure mode is a
    // decay problem, not a shell-consistency one.
    if negative_mass > opts.negative_tolerance * (1.0 + sup_torus) {
        return Err(Error::OverlapMismatch {
            residual: negative_mass,
            tolerance: opts.negative_tolerance * (1.0 + sup_torus),
            context: "negative-index shell coefficients must vanish".into(),
        });
    }
    // Mass conceded to the noise floor inside the kept box (each such
    // coefficient contributes at most the floor times rho^K = noise_unit
    // at the target radii).
    let tail_bound = tail_fit + trimmed.coeffs.len() as f64 * noise_unit;

    Ok(Extraction {
        trimmed,
        negative_mass,
        sup_torus,
        radii,
        decay_rate,
        tail_bound,
    })
}

fn torus_sup(f: &HoloFn, radii: &[f64], nodes: usize) -> Result<f64> {
    let dims = radii.len();
    let total = nodes.pow(dims as u32);
    let mut idx = vec![0usize; dims];
    let mut pt = vec![C64::new(0.0, 0.0); dims];
    let mut sup = 0.0f64;
    for _ in 0..total {
        for a in 0..dims {
            pt[a] = CircleSampler::node(radii[a], idx[a], nodes);
        }
        let v = f(&pt);
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::NonFinite { context: "torus sup samples".into() });
        }
        sup = sup.max(v.norm());
        for a in (0..dims).rev() {
            idx[a] += 1;
            if idx[a] < nodes {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(sup)
}

/// Cauchy-Riemann gate: per-variable finite-difference residual on small
/// slab squares.
fn holomorphy_gate(f: &HoloFn, figure: &HartogsFigure, fiber_n: usize, tol: f64) -> Result<()> {
    let dims = figure.q + fiber_n;
    let r = figure.r;
    // base point safely inside the slab
    let sq = (figure.q as f64).sqrt();
    let sn = (fiber_n as f64).sqrt();
    let base: Vec<C64> = (0..dims)
        .map(|a| {
            if a < figure.q {
                C64::new(0.25 / sq, 0.1 / sq)
            } else {
                C64::new(0.2 * r / sn, 0.0)
            }
        })
        .collect();
    let n_grid = 8usize;
    let mut sup_local = 0.0f64;
    let mut worst = 0.0f64;
    for a in 0..dims {
        let half = if a < figure.q { 0.05 } else { 0.05 * r };
        let h = 2.0 * half / (n_grid - 1) as f64;
        let mut grid = ndarray::Array2::from_elem((n_grid, n_grid), C64::new(0.0, 0.0));
        for i in 0..n_grid {
            for j in 0..n_grid {
                let mut pt = base.clone();
                pt[a] += C64::new(-half + i as f64 * h, -half + j as f64 * h);
                let v = f(&pt);
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(Error::NonFinite { context: "holomorphy gate samples".into() });
                }
                sup_local = sup_local.max(v.norm());
                grid[(i, j)] = v;
            }
        }
        worst = worst.max(cr_residual(&grid, h, h)?);
    }
    let gate = tol * (1.0 + sup_local);
    if worst > gate {
        return Err(Error::NotHolomorphic { residual: worst, tolerance: gate });
    }
    Ok(())
}

fn overlap_residual(
    f: &HoloFn,
    figure: &HartogsFigure,
    fiber_n: usize,
    extraction: &Extraction,
    extra: &[Vec<C64>],
    tol: f64,
) -> Result<f64> {
    let cap_outer = match figure.model {
        Model::Polydisk => extraction.radii[0],
        Model::Ball => extraction.radii[0] * (figure.q as f64).sqrt(),
    };
    let cap_fiber = match figure.model {
        Model::Polydisk => extraction.radii[figure.q],
        Model::Ball => extraction.radii[figure.q] * (fiber_n as f64).sqrt(),
    };
    let mut pts = figure.sample_points(120, cap_outer, cap_fiber);
    for p in extra {
        if p.len() == figure.q + fiber_n && figure.contains(&p[..figure.q], &p[figure.q..]) {
            pts.push(p.clone());
        }
    }
    let mut worst = 0.0f64;
    for pt in &pts {
        let direct = f(pt);
        let ext = eval_box(&extraction.trimmed, pt);
        worst = worst.max((direct - ext).norm());
    }
    if worst > tol * (1.0 + extraction.sup_torus) {
        return Err(Error::OverlapMismatch {
            residual: worst,
            tolerance: tol * (1.0 + extraction.sup_torus),
            context: "extension vs input on figure samples".into(),
        });
    }
    Ok(worst)
}

/// Low-degree certification against the slab circle: reconstruct the fiber
/// coefficient functions from the shell table and compare with direct
/// extraction on `|t| = r/2`, degree-aware tolerance (the small circle
/// amplifies sample noise by `(2/r)^k`).
fn small_circle_check(
    f: &HoloFn,
    figure: &HartogsFigure,
    fiber_n: usize,
    extraction: &Extraction,
    opts: &ExtendOptions,
) -> Result<f64> {
    let q = figure.q;
    let r_s = figure.r / 2.0 / (fiber_n as f64).sqrt();
    let rho_z = extraction.radii[0];
    let base_pts: Vec<Vec<C64>> = vec![
        vec![C64::new(0.0, 0.0); q],
        (0..q).map(|_| C64::new(0.5 * rho_z, 0.0)).collect(),
        (0..q)
            .map(|a| C64::from_polar(0.6 * rho_z, 1.0 + a as f64))
            .collect(),
    ];
    let kmax = opts.cross_check_degree.min(extraction.trimmed.k_len[q] - 1);
    let mut worst = 0.0f64;
    for zp in &base_pts {
        let base = zp.clone();
        let fc = f.clone();
        let nf = fiber_n;
        let sampler = CircleSampler::sample(r_s, 64, move |t| {
            let mut pt = base.clone();
            pt.push(t);
            pt.extend(std::iter::repeat(C64::new(0.0, 0.0)).take(nf - 1));
            fc(&pt)
        })?;
        let lc = circle_coefficients(&sampler, 0..=(kmax as i64));
        for k in 0..=kmax {
            // reconstruct sum_J c_{(J, k, 0...)} z'^J from the shell table
            let mut recon = C64::new(0.0, 0.0);
            for (kk, cval) in extraction.trimmed.iter() {
                if kk[q] != k as i64 || kk[q + 1..].iter().any(|&x| x != 0) {
                    continue;
                }
                let mut term = cval;
                for (a, &ja) in kk[..q].iter().enumerate() {
                    term *= zp[a].powi(ja as i32);
                }
                recon += term;
            }
            let tol_k = 100.0
                * f64::EPSILON
                * (1.0 + extraction.sup_torus)
                * r_s.powi(-(k as i32))
                + 1e-10 * (1.0 + extraction.sup_torus);
            let diff = (recon - lc.coeff(k as i64)).norm();
            worst = worst.max(diff);
            if diff > tol_k {
                return Err(Error::OverlapMismatch {
                    residual: diff,
                    tolerance: tol_k,
                    context: format!("small-circle certification at fiber degree {k}"),
                });
            }
        }
    }
    Ok(worst)
}

/// Oscillation certificate between neighboring fiber grid slices: the slice
/// coefficient families must vary continuously along each fiber variable.
fn slice_oscillation(
    f: &HoloFn,
    figure: &HartogsFigure,
    fiber_n: usize,
    extraction: &Extraction,
    tol: f64,
) -> Result<f64> {
    if fiber_n < 2 {
        return Ok(0.0);
    }
    let q = figure.q;
    let dims = q + fiber_n;
    let nodes = 16usize;
    let cap = 3usize;
    let scale = 1.0 + extraction.sup_torus;
    let mut worst = 0.0f64;
    for stage in 0..fiber_n {
        let rho_stage = extraction.radii[q + stage];
        let mut prev: Option<TorusCoefficients> = None;
        for j in 0..=6 {
            let t = C64::new(rho_stage * j as f64 / 6.0, 0.0);
            let fc = f.clone();
            let slice_fn = move |pt: &[C64]| {
                let mut full = Vec::with_capacity(dims);
                full.extend_from_slice(&pt[..q + stage]);
                full.push(t);
                full.extend_from_slice(&pt[q + stage..]);
                fc(&full)
            };
            let radii: Vec<f64> = (0..dims - 1)
                .map(|a| {
                    if a < q + stage {
                        extraction.radii[a]
                    } else {
                        extraction.radii[a + 1]
                    }
                })
                .collect();
            let table = polytorus_coefficients(
                &slice_fn,
                &radii,
                &vec![nodes; dims - 1],
                &vec![(0i64, cap as i64); dims - 1],
            )?;
            if let Some(p) = &prev {
                let jump = p
                    .coeffs
                    .iter()
                    .zip(&table.coeffs)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                worst = worst.max(jump / scale);
            }
            prev = Some(table);
        }
    }
    if worst > tol {
        return Err(Error::OverlapMismatch {
            residual: worst,
            tolerance: tol,
            context: "slice oscillation certification".into(),
        });
    }
    Ok(worst)
}

fn finish_finite(
    f: &HoloFn,
    figure: &HartogsFigure,
    fiber_n: usize,
    opts: &ExtendOptions,
    with_oscillation: bool,
) -> Result<ExtensionResult> {
    holomorphy_gate(f, figure, fiber_n, opts.cr_tolerance)?;
    let extraction = extract_shell(f, figure, fiber_n, opts)?;
    let overlap = overlap_residual(
        f,
        figure,
        fiber_n,
        &extraction,
        &opts.eval_points,
        opts.overlap_tolerance,
    )?;
    let cross = small_circle_check(f, figure, fiber_n, &extraction, opts)?;
    let osc = if with_oscillation {
        slice_oscillation(f, figure, fiber_n, &extraction, opts.oscillation_tolerance)?
    } else {
        0.0
    };
    Ok(ExtensionResult {
        figure: *figure,
        target_radii: extraction.radii.clone(),
        sup_bound: extraction.sup_torus * (1.0 + 1e-6),
        tail_bound: extraction.tail_bound,
        overlap_residual: overlap,
        negative_mass: extraction.negative_mass,
        cross_check_residual: cross,
        decay_rate: extraction.decay_rate,
        oscillation: osc,
        direction_consistency: 0.0,
        gateaux_residual: 0.0,
        coeffs: extraction.trimmed,
        slices: None,
    })
}

/// Extension from the (q,1) figure to the full target.
pub fn extend_bidim_q1(
    f: &HoloFn,
    figure: &HartogsFigure,
    opts: &ExtendOptions,
) -> Result<ExtensionResult> {
    if figure.is_truncated() || figure.fiber_dim() != 1 {
        return Err(Error::Config(
            "extend_bidim_q1 needs a finite fiber of dimension 1".into(),
        ));
    }
    finish_finite(f, figure, 1, opts, false)
}

/// Extension from the (q,n) figure; dimension induction is certified by the
/// per-stage slice oscillation check. `n = 1` is exactly the base engine.
pub fn extend_bidim_qn(
    f: &HoloFn,
    figure: &HartogsFigure,
    opts: &ExtendOptions,
) -> Result<ExtensionResult> {
    if figure.is_truncated() {
        return Err(Error::Config(
            "truncated-infinite figures go through extend_q_infty".into(),
        ));
    }
    let n = figure.fiber_dim();
    if n > 3 {
        return Err(Error::InductionDepthExceeded { requested: n, max: 3 });
    }
    if n == 1 {
        return extend_bidim_q1(f, figure, opts);
    }
    finish_finite(f, figure, n, opts, true)
}

fn direction_table(
    f: &HoloFn,
    figure: &HartogsFigure,
    v: &[C64],
    opts: &ExtendOptions,
) -> Result<TorusCoefficients> {
    let slice_figure = HartogsFigure {
        q: figure.q,
        fiber: FiberDim::Finite(1),
        r: figure.r,
        model: figure.model,
    };
    let q = figure.q;
    let fc = f.clone();
    let vv = v.to_vec();
    let g: HoloFn = Arc::new(move |pt: &[C64]| {
        let t = pt[q];
        let mut full = pt[..q].to_vec();
        full.extend(vv.iter().map(|&c| c * t));
        fc(&full)
    });
    let res = finish_finite(&g, &slice_figure, 1, opts, false)?;
    Ok(res.coeffs)
}

/// Extension on the truncated infinite figure by two-plane slices: an
/// orthonormal fiber frame plus seeded random unit directions, each handled
/// by the (q,1) engine, glued along the base and cross-checked.
pub fn extend_q_infty(
    f: &HoloFn,
    figure: &HartogsFigure,
    opts: &ExtendOptions,
) -> Result<ExtensionResult> {
    let FiberDim::Truncated(m) = figure.fiber else {
        return Err(Error::Config(
            "extend_q_infty needs a truncated-infinite figure".into(),
        ));
    };
    let q = figure.q;

    // frame directions then seeded random ones, all model-normalized
    let mut dirs: Vec<Vec<C64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| C64::new(if i == j { 1.0 } else { 0.0 }, 0.0))
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.directions {
        let mut v: Vec<C64> = (0..m)
            .map(|_| {
                let u1: f64 = rng.gen::<f64>().max(1e-12);
                let u2: f64 = rng.gen();
                let mag = (-2.0 * u1.ln()).sqrt();
                C64::new(mag * (2.0 * PI * u2).cos(), mag * (2.0 * PI * u2).sin())
            })
            .collect();
        let norm = match figure.model {
            Model::Polydisk => v.iter().map(|x| x.norm()).fold(0.0, f64::max),
            Model::Ball => v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt(),
        };
        for x in v.iter_mut() {
            *x /= norm;
        }
        dirs.push(v);
    }

    let mut slices: Vec<(Vec<C64>, TorusCoefficients)> = Vec::with_capacity(dirs.len());
    let mut sup_bound = 0.0f64;
    let mut overlap = 0.0f64;
    let mut negative = 0.0f64;
    let mut cross = 0.0f64;
    let mut decay = 0.0f64;
    let mut tail = 0.0f64;
    let slice_figure = HartogsFigure {
        q,
        fiber: FiberDim::Finite(1),
        r: figure.r,
        model: figure.model,
    };
    let mut target_radii: Vec<f64> = Vec::new();
    for v in &dirs {
        let fc = f.clone();
        let vv = v.clone();
        let g: HoloFn = Arc::new(move |pt: &[C64]| {
            let t = pt[q];
            let mut full = pt[..q].to_vec();
            full.extend(vv.iter().map(|&c| c * t));
            fc(&full)
        });
        let res = finish_finite(&g, &slice_figure, 1, opts, false)?;
        sup_bound = sup_bound.max(res.sup_bound);
        overlap = overlap.max(res.overlap_residual);
        negative = negative.max(res.negative_mass);
        cross = cross.max(res.cross_check_residual);
        decay = decay.max(res.decay_rate);
        tail = tail.max(res.tail_bound);
        if target_radii.is_empty() {
            target_radii = res.target_radii.clone();
        }
        slices.push((v.clone(), res.coeffs));
    }

    // consistency on the base slice C^q x {0}
    let rho_z = target_radii[0];
    let base_pts: Vec<Vec<C64>> = (0..12)
        .map(|i| {
            (0..q)
                .map(|a| {
                    C64::from_polar(
                        0.85 * rho_z * halton(i, [2, 5, 11, 17][a % 4]),
                        2.0 * PI * halton(i, [3, 7, 13, 19][a % 4]),
                    )
                })
                .collect()
        })
        .collect();
    let mut consistency = 0.0f64;
    for zp in &base_pts {
        let mut spt = zp.clone();
        spt.push(C64::new(0.0, 0.0));
        let vals: Vec<C64> = slices.iter().map(|(_, t)| eval_box(t, &spt)).collect();
        for a in 0..vals.len() {
            for b in a + 1..vals.len() {
                consistency = consistency.max((vals[a] - vals[b]).norm());
            }
        }
    }
    let cons_tol = 1e-8 * (1.0 + sup_bound);
    if consistency > cons_tol {
        return Err(Error::DirectionInconsistency {
            residual: consistency,
            tolerance: cons_tol,
        });
    }

    // Gateaux check: analytic t-derivative of each slice at t = 0 vs
    // centered differences of the input (both sit in the slab).
    let eps = figure.r / 4.0;
    let mut gateaux = 0.0f64;
    for zp in base_pts.iter().take(4) {
        for (v, t) in &slices {
            // derivative = sum_J c_{(J,1)} z'^J
            let mut deriv = C64::new(0.0, 0.0);
            for (kk, cval) in t.iter() {
                if kk[q] != 1 {
                    continue;
                }
                let mut term = cval;
                for (a, &ja) in kk[..q].iter().enumerate() {
                    term *= zp[a].powi(ja as i32);
                }
                deriv += term;
            }
            let mut plus = zp.clone();
            plus.extend(v.iter().map(|&c| c * eps));
            let mut minus = zp.clone();
            minus.extend(v.iter().map(|&c| c * (-eps)));
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            gateaux = gateaux.max((deriv - fd).norm());
        }
    }
    let gateaux_tol = (10.0 * eps * eps * (1.0 + sup_bound)).max(1e-8);
    if gateaux > gateaux_tol {
        return Err(Error::DirectionInconsistency {
            residual: gateaux,
            tolerance: gateaux_tol,
        });
    }

    let primary = slices[0].1.clone();
    Ok(ExtensionResult {
        figure: *figure,
        coeffs: primary,
        target_radii,
        sup_bound,
        tail_bound: tail,
        overlap_residual: overlap,
        negative_mass: negative,
        cross_check_residual: cross,
        decay_rate: decay,
        oscillation: 0.0,
        direction_consistency: consistency,
        gateaux_residual: gateaux,
        slices: Some(Arc::new(SliceState {
            source: f.clone(),
            figure: *figure,
            opts: opts.clone(),
            cached: Mutex::new(slices),
        })),
    })
}
