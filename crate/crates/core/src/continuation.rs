//! Analytic continuation of a function element along a family of embedded
//! analytic disks.
//!
//! A [`DiskFamily`] describes holomorphic maps `phi_t` from varying closed
//! disks into `C x C^m`. Starting from a function known on an open set `U`
//! containing the initial disk and every disk boundary, [`continue_along`]
//! marches the parameter grid: around each frontier disk it builds tubular
//! coordinates (straightened chart plus identity transition atlas, which is
//! exact for single embedded disks), expresses the previously continued data
//! together with fresh boundary-ring data as a Hartogs figure in those
//! coordinates, and extends across the figure to the full coordinate bidisk.
//! The step size is controlled by the graph norm of the previous disk in the
//! frontier coordinates: the known disk must stay within a quarter of the
//! figure margin, otherwise the step is halved.
//!
//! [`check_family`] is the report-only preflight: it samples the membership
//! conditions, the holomorphy of each disk map, and the continuity modulus
//! of the family without running the continuation.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hartogs::{
    extend_bidim_qn, ExtendOptions, ExtensionResult, FiberDim, HartogsFigure, Model,
};
use crate::quadrature::{cr_residual, sample_rect, HoloFn};
use crate::royden::{
    assemble_tubular_map, AssembleOptions, RoydenResult, StraightenOptions, TubularEmbedding,
    TubularMap,
};
use crate::series::{halton, HomogeneousMap, PowerSeriesMap};

/// Ambient disk map handle: `(t, lambda) -> point of C^(1+m)` where `lambda`
/// ranges over the domain disk of parameter `t`.
pub type DiskMapFn = Arc<dyn Fn(f64, C64) -> Vec<C64> + Send + Sync>;

/// Membership oracle for the known region `U`: positive values mean the
/// point lies inside `U` with that margin (any distance-like surrogate),
/// non-positive values mean the point is outside.
pub type MarginFn = Arc<dyn Fn(&[C64]) -> f64 + Send + Sync>;

// ---------------------------------------------------------------------------
// disk families
// ---------------------------------------------------------------------------

/// A one-parameter family of closed analytic disks in `C x C^m`: a parameter
/// grid, a domain descriptor `t -> (center, radius)` and the ambient map.
#[derive(Clone)]
pub struct DiskFamily {
    grid: Vec<f64>,
    fiber_dim: usize,
    domain: Arc<dyn Fn(f64) -> (C64, f64) + Send + Sync>,
    map: DiskMapFn,
}

impl fmt::Debug for DiskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiskFamily")
            .field("grid", &self.grid)
            .field("fiber_dim", &self.fiber_dim)
            .finish_non_exhaustive()
    }
}

impl DiskFamily {
    pub fn new(
        grid: Vec<f64>,
        fiber_dim: usize,
        domain: Arc<dyn Fn(f64) -> (C64, f64) + Send + Sync>,
        map: DiskMapFn,
    ) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Config("disk family needs at least two grid points".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("family grid must be strictly increasing".into()));
        }
        if fiber_dim < 1 {
            return Err(Error::Config("disk family needs fiber dimension >= 1".into()));
        }
        for &t in &grid {
            let (c, rho) = domain(t);
            if !(rho > 0.0) || !rho.is_finite() || !c.re.is_finite() || !c.im.is_finite() {
                return Err(Error::Config(format!(
                    "domain disk at t = {t} is degenerate (center {c}, radius {rho})"
                )));
            }
        }
        Ok(DiskFamily { grid, fiber_dim, domain, map })
    }

    /// Graph family over constant unit disks: `phi_t(lambda) = (lambda,
    /// g(t, lambda))` with `g` returning the `fiber_dim` fiber components.
    pub fn graphs(
        grid: Vec<f64>,
        fiber_dim: usize,
        graph: Arc<dyn Fn(f64, C64) -> Vec<C64> + Send + Sync>,
    ) -> Result<Self> {
        let g = graph.clone();
        let map: DiskMapFn = Arc::new(move |t, lambda| {
            let mut p = Vec::with_capacity(1 + fiber_dim);
            p.push(lambda);
            p.extend(g(t, lambda));
            p
        });
        DiskFamily::new(
            grid,
            fiber_dim,
            Arc::new(|_| (C64::new(0.0, 0.0), 1.0)),
            map,
        )
    }

    pub fn uniform_grid(t0: f64, t1: f64, count: usize) -> Vec<f64> {
        let n = count.max(2);
        (0..n)
            .map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.fiber_dim + 1
    }

    pub fn domain_disk(&self, t: f64) -> (C64, f64) {
        (self.domain)(t)
    }

    /// Ambient map at the raw domain coordinate.
    pub fn eval(&self, t: f64, lambda: C64) -> Vec<C64> {
        (self.map)(t, lambda)
    }

    /// Ambient map in unit-disk coordinates: `zeta -> phi_t(c_t + rho_t zeta)`.
    pub fn eval_unit(&self, t: f64, zeta: C64) -> Vec<C64> {
        let (c, rho) = (self.domain)(t);
        (self.map)(t, c + zeta * rho)
    }

    /// Taylor coefficients of the unit-coordinate disk map through `cap`,
    /// extracted on the boundary circle, plus the largest dropped
    /// coefficient as a tail estimate.
    fn taylor(&self, t: f64, cap: usize, nodes: usize) -> (Vec<Vec<C64>>, f64) {
        let dim = self.ambient_dim();
        let mut vals: Vec<Vec<C64>> = vec![Vec::with_capacity(nodes); dim];
        for k in 0..nodes {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / nodes as f64;
            let p = self.eval_unit(t, C64::from_polar(1.0, theta));
            for (j, v) in p.into_iter().enumerate() {
                vals[j].push(v);
            }
        }
        let mut cols: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); dim]; cap + 1];
        let mut tail = 0.0f64;
        for (j, comp) in vals.iter().enumerate() {
            for d in 0..=(nodes / 2) {
                let mut acc = C64::new(0.0, 0.0);
                for (k, v) in comp.iter().enumerate() {
                    let theta = 2.0 * std::f64::consts::PI * (k * d) as f64 / nodes as f64;
                    acc += v * C64::from_polar(1.0, -theta);
                }
                acc /= nodes as f64;
                if d <= cap {
                    cols[d][j] = acc;
                } else {
                    tail = tail.max(acc.norm());
                }
            }
        }
        (cols, tail)
    }

    /// The disk map at parameter `t` as a power series in the unit
    /// coordinate, with the dropped-tail estimate.
    pub fn disk_series(&self, t: f64, cap: usize) -> Result<(PowerSeriesMap, f64)> {
        let (cols, tail) = self.taylor(t, cap, 256);
        let dim = self.ambient_dim();
        let terms: Vec<HomogeneousMap> = cols
            .iter()
            .enumerate()
            .map(|(d, col)| {
                let mut coeffs = std::collections::BTreeMap::new();
                if col.iter().any(|v| v.norm() > 1e-15) {
                    coeffs.insert(vec![d as u8], col.clone());
                }
                HomogeneousMap::dense(d, 1, dim, coeffs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((PowerSeriesMap::from_polynomial_terms(vec![C64::new(0.0, 0.0)], terms), tail))
    }
}

// ---------------------------------------------------------------------------
// options and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ContinueOptions {
    /// Hartogs figure margin `r`; the known disk must stay within `r/4` of
    /// the frontier disk in unit fiber coordinates.
    pub figure_margin: f64,
    /// Requested tubular fiber radius (shrunk further by the measured
    /// boundary membership margin).
    pub tube_radius: f64,
    /// Parameter steps below this abort with `StepCollapse`.
    pub min_step: f64,
    /// Growth factor for the adaptive step after an accepted step.
    pub step_growth: f64,
    /// Taylor degree kept for each disk map (dense series cap).
    pub disk_degree_cap: usize,
    /// Largest tolerated dropped Taylor coefficient of a disk map.
    pub taylor_tolerance: f64,
    /// Immersion gate forwarded to the chart straightening.
    pub straighten_tolerance: f64,
    /// Optional seed for the adapted complement frame.
    pub frame_seed: Option<u64>,
    /// Boundary samples per grid parameter in the membership pre-check.
    pub boundary_nodes: usize,
    /// Interior samples of the initial disk in the membership pre-check.
    pub interior_samples: usize,
    /// Sample count for the consecutive-element agreement residual.
    pub overlap_samples: usize,
    /// Options forwarded to the Hartogs extension of every step.
    pub extend: ExtendOptions,
}

impl Default for ContinueOptions {
    fn default() -> Self {
        ContinueOptions {
            figure_margin: 0.2,
            tube_radius: 0.5,
            min_step: 1e-4,
            step_growth: 1.6,
            disk_degree_cap: 12,
            taylor_tolerance: 1e-8,
            straighten_tolerance: 1e-9,
            frame_seed: None,
            boundary_nodes: 64,
            interior_samples: 80,
            overlap_samples: 50,
            extend: ExtendOptions::default(),
        }
    }
}

/// One continued element: the tubular coordinates of its disk and the
/// extension of the function to the full coordinate bidisk.
#[derive(Debug, Clone)]
pub struct FunctionElement {
    pub t: f64,
    /// Tubular coordinates around the disk at `t`; the fiber radius is the
    /// ambient scale of one coordinate fiber unit.
    pub tube: TubularMap,
    /// Extension in unit tube coordinates `(z, w / fiber_radius)`.
    pub extension: ExtensionResult,
    /// Max disagreement with the previous element on shared tube samples.
    pub overlap_residual: f64,
    /// Min membership margin over this step's boundary-ring probes.
    pub boundary_margin: f64,
    /// Graph sup of the previous disk in this element's unit fiber
    /// coordinates (0 for the initial element).
    pub psi_sup: f64,
    /// Max base-coordinate displacement of the previous disk (0 initially).
    pub base_drift: f64,
}

impl FunctionElement {
    pub fn fiber_radius(&self) -> f64 {
        self.tube.fiber_radius
    }

    /// Evaluate at unit tube coordinates (`|z| < 1`, `max |w_hat| < 1`).
    pub fn eval_chart(&self, z: C64, w_hat: &[C64]) -> Result<C64> {
        let mut pt = Vec::with_capacity(1 + w_hat.len());
        pt.push(z);
        pt.extend_from_slice(w_hat);
        self.extension.eval(&pt)
    }

    /// Evaluate at an ambient point inside the element's tube.
    pub fn eval_ambient(&self, p: &[C64]) -> Result<C64> {
        let coords = self.tube.chart.eval(p);
        let scale = self.tube.fiber_radius;
        let mut pt = Vec::with_capacity(coords.len());
        pt.push(coords[0]);
        for w in &coords[1..] {
            pt.push(w / scale);
        }
        self.extension.eval(&pt)
    }
}

/// Per-attempt log row of the continuation march.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t_from: f64,
    pub t_to: f64,
    pub accepted: bool,
    pub psi_sup: f64,
    pub base_drift: f64,
    pub boundary_margin: f64,
    pub overlap_residual: f64,
    pub decay_rate: f64,
    pub extension_residual: f64,
}

/// The continued chain: one element per visited parameter (every grid point
/// plus any adaptive midpoints), in increasing order.
#[derive(Debug)]
pub struct Continuation {
    pub elements: Vec<FunctionElement>,
    pub grid: Vec<f64>,
    pub reached_t: f64,
}

impl Continuation {
    pub fn final_element(&self) -> &FunctionElement {
        self.elements.last().expect("continuation holds at least the initial element")
    }

    /// Element at an exact parameter value, if one was emitted there.
    pub fn element_at(&self, t: f64) -> Option<&FunctionElement> {
        self.elements.iter().find(|e| (e.t - t).abs() <= 1e-12)
    }
}

/// Report of the report-only family preflight.
#[derive(Debug, Clone)]
pub struct FamilyReport {
    /// Min membership margin over samples of the closed initial disk.
    pub interior_margin: f64,
    /// Min membership margin over all grid boundary rings.
    pub boundary_margin: f64,
    /// Parameter attaining the boundary minimum.
    pub boundary_argmin_t: f64,
    /// Max sup distance of consecutive grid disk maps (shared unit
    /// parametrization).
    pub continuity_modulus: f64,
    /// Max Cauchy-Riemann residual of the disk maps over the grid.
    pub cr_residual: f64,
}

// ---------------------------------------------------------------------------
// family preflight
// ---------------------------------------------------------------------------

fn boundary_min_margin(
    family: &DiskFamily,
    membership: &MarginFn,
    t: f64,
    nodes: usize,
) -> f64 {
    let mut min = f64::INFINITY;
    for k in 0..nodes {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / nodes as f64;
        let p = family.eval_unit(t, C64::from_polar(1.0, theta));
        min = min.min(membership(&p));
    }
    min
}

fn family_cr_residual(family: &DiskFamily, t: f64) -> Result<f64> {
    let (c, rho) = family.domain_disk(t);
    let n = 10usize;
    let half = 0.35 * rho;
    let h = 2.0 * half / (n - 1) as f64;
    let mut worst = 0.0f64;
    for j in 0..family.ambient_dim() {
        let grid = sample_rect(
            |lambda| family.eval(t, lambda)[j],
            c.re - half,
            c.im - half,
            h,
            h,
            n,
            n,
        );
        worst = worst.max(cr_residual(&grid, h, h)?);
    }
    Ok(worst)
}

/// Sample the membership conditions and the family regularity without
/// running the continuation: interior membership of the initial disk,
/// boundary membership per grid parameter, holomorphy of each disk map, and
/// the continuity modulus of `t -> phi_t` in the unit parametrization.
pub fn check_family(
    family: &DiskFamily,
    membership: &MarginFn,
    boundary_nodes: usize,
) -> Result<FamilyReport> {
    let nodes = boundary_nodes.max(8);
    let t0 = family.grid()[0];

    let mut interior = f64::INFINITY;
    for i in 0..80 {
        let rad = halton(i, 2).sqrt();
        let theta = 2.0 * std::f64::consts::PI * halton(i, 3);
        let p = family.eval_unit(t0, C64::from_polar(rad, theta));
        interior = interior.min(membership(&p));
    }

    let mut boundary = f64::INFINITY;
    let mut argmin = t0;
    let mut cr = 0.0f64;
    for &t in family.grid() {
        let m = boundary_min_margin(family, membership, t, nodes);
        if m < boundary {
            boundary = m;
            argmin = t;
        }
        cr = cr.max(family_cr_residual(family, t)?);
    }

    let mut modulus = 0.0f64;
    for w in family.grid().windows(2) {
        let mut sup = 0.0f64;
        for i in 0..48 {
            let rad = if i % 3 == 0 { 1.0 } else { halton(i, 2).sqrt() };
            let theta = 2.0 * std::f64::consts::PI * halton(i, 3);
            let zeta = C64::from_polar(rad, theta);
            let a = family.eval_unit(w[0], zeta);
            let b = family.eval_unit(w[1], zeta);
            for (x, y) in a.iter().zip(b.iter()) {
                sup = sup.max((x - y).norm());
            }
        }
        modulus = modulus.max(sup);
    }

    Ok(FamilyReport {
        interior_margin: interior,
        boundary_margin: boundary,
        boundary_argmin_t: argmin,
        continuity_modulus: modulus,
        cr_residual: cr,
    })
}

// ---------------------------------------------------------------------------
// continuation
// ---------------------------------------------------------------------------

/// Tubular coordinates around the disk at `t` with the identity transition
/// atlas (exact for a single embedded disk: nothing to normalize).
fn build_tube(family: &DiskFamily, t: f64, fiber_radius_target: f64, opts: &ContinueOptions) -> Result<TubularMap> {
    let (phi, tail) = family.disk_series(t, opts.disk_degree_cap)?;
    if tail > opts.taylor_tolerance {
        return Err(Error::Config(format!(
            "disk map at t = {t} keeps Taylor mass {tail:.3e} beyond degree {} \
             (tolerance {:.3e})",
            opts.disk_degree_cap, opts.taylor_tolerance
        )));
    }
    let sopts = StraightenOptions {
        cap: opts.disk_degree_cap,
        frame_seed: opts.frame_seed,
    };
    let emb = TubularEmbedding::graph(phi, opts.straighten_tolerance, &sopts)?;
    let identity = RoydenResult::identity(family.fiber_dim(), opts.disk_degree_cap.max(2), opts.figure_margin);
    let aopts = AssembleOptions {
        safety: 0.9,
        radius_cap: fiber_radius_target / 0.9,
        tolerance: 1e-8,
        samples: 24,
    };
    assemble_tubular_map(&identity, &emb, &aopts)
}

/// Sup of the previous disk's graph in the frontier tube's unit coordinates:
/// fiber sup (relative to the fiber radius) and base displacement.
fn measure_shift(family: &DiskFamily, t_prev: f64, tube: &TubularMap) -> (f64, f64) {
    let mut psi = 0.0f64;
    let mut drift = 0.0f64;
    let mut probe = |zeta: C64| {
        let p = family.eval_unit(t_prev, zeta);
        let coords = tube.chart.eval(&p);
        drift = drift.max((coords[0] - zeta).norm());
        for w in &coords[1..] {
            psi = psi.max(w.norm() / tube.fiber_radius);
        }
    };
    probe(C64::new(0.0, 0.0));
    for k in 0..32 {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
        probe(C64::from_polar(1.0, theta));
        if k % 2 == 0 {
            probe(C64::from_polar(0.6, theta));
        }
    }
    (psi, drift)
}

/// Min membership margin over the shell probes the extension will sample:
/// the extraction torus and the outer ring of the figure.
fn shell_margin(
    tube: &TubularMap,
    membership: &MarginFn,
    figure_r: f64,
    fiber_dim: usize,
) -> f64 {
    let rho = 1.0 - figure_r / 2.0;
    let mut min = f64::INFINITY;
    let mut check = |z: C64, w_hat: &[C64]| {
        let w: Vec<C64> = w_hat.iter().map(|x| x * tube.fiber_radius).collect();
        if let Ok(p) = tube.eval(z, &w) {
            min = min.min(membership(&p));
        }
    };
    for i in 0..16 {
        let zt = 2.0 * std::f64::consts::PI * i as f64 / 16.0;
        for j in 0..16 {
            let wt = 2.0 * std::f64::consts::PI * j as f64 / 16.0;
            let mut w_hat = vec![C64::new(0.0, 0.0); fiber_dim];
            w_hat[0] = C64::from_polar(rho, wt);
            for (a, wh) in w_hat.iter_mut().enumerate().skip(1) {
                *wh = C64::from_polar(rho, wt + 1.7 * a as f64);
            }
            check(C64::from_polar(rho, zt), &w_hat);
            check(C64::from_polar(1.0 - 0.25 * figure_r, zt), &w_hat);
        }
    }
    min
}

struct PrevElement {
    chart_t: f64,
    tube: TubularMap,
    extension: ExtensionResult,
}

impl PrevElement {
    fn eval_ambient(&self, p: &[C64]) -> Result<C64> {
        let coords = self.tube.chart.eval(p);
        let scale = self.tube.fiber_radius;
        let mut pt = Vec::with_capacity(coords.len());
        pt.push(coords[0]);
        for w in &coords[1..] {
            pt.push(w / scale);
        }
        self.extension.eval(&pt)
    }
}

/// Extend one element at parameter `t`: the figure's shell ring is fed from
/// `f` on `U`, the slab from the previous element (the cylinder structure is
/// literal: the prolonged function depends on the tube coordinates only
/// through the ambient point).
#[allow(clippy::too_many_arguments)]
fn extend_element(
    f: &HoloFn,
    membership: &MarginFn,
    tube: &TubularMap,
    prev: Option<&Arc<PrevElement>>,
    t: f64,
    fiber_dim: usize,
    opts: &ContinueOptions,
    psi_sup: f64,
    base_drift: f64,
) -> Result<FunctionElement> {
    let r = opts.figure_margin;
    let margin = shell_margin(tube, membership, r, fiber_dim);
    if margin <= 0.0 {
        return Err(Error::BoundaryEscape { t, margin });
    }

    let figure = HartogsFigure::new(1, FiberDim::Finite(fiber_dim), r, Model::Polydisk)?;
    let tube_g = tube.clone();
    let prev_g = prev.cloned();
    let f_g = f.clone();
    let member_g = membership.clone();
    let scale = tube.fiber_radius;
    let source: HoloFn = Arc::new(move |pt: &[C64]| {
        let z = pt[0];
        let w: Vec<C64> = pt[1..].iter().map(|x| x * scale).collect();
        let p = match tube_g.eval(z, &w) {
            Ok(p) => p,
            Err(_) => return C64::new(f64::NAN, 0.0),
        };
        if z.norm() > 1.0 - r && member_g(&p) > 0.0 {
            return f_g(&p);
        }
        if let Some(prev) = &prev_g {
            if let Ok(v) = prev.eval_ambient(&p) {
                return v;
            }
        }
        if member_g(&p) > 0.0 {
            f_g(&p)
        } else {
            C64::new(f64::NAN, 0.0)
        }
    });

    let extension = extend_bidim_qn(&source, &figure, &opts.extend)?;

    // Agreement with the previous element on shared tube samples.
    let mut overlap = 0.0f64;
    if let Some(prev) = prev {
        let mut hits = 0usize;
        let mut i = 0usize;
        while hits < opts.overlap_samples && i < opts.overlap_samples * 20 {
            i += 1;
            let z = C64::from_polar(
                0.75 * halton(i, 2).sqrt(),
                2.0 * std::f64::consts::PI * halton(i, 3),
            );
            let mut w_hat = vec![C64::new(0.0, 0.0); fiber_dim];
            for (a, wh) in w_hat.iter_mut().enumerate() {
                *wh = C64::from_polar(
                    0.22 * halton(i, 5 + 2 * a),
                    2.0 * std::f64::consts::PI * halton(i, 7 + 2 * a),
                );
            }
            let w: Vec<C64> = w_hat.iter().map(|x| x * scale).collect();
            let p = match tube.eval(z, &w) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let prev_val = match prev.eval_ambient(&p) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let mut pt = Vec::with_capacity(1 + fiber_dim);
            pt.push(z);
            pt.extend_from_slice(&w_hat);
            let new_val = extension.eval(&pt)?;
            overlap = overlap.max((new_val - prev_val).norm());
            hits += 1;
        }
    }

    Ok(FunctionElement {
        t,
        tube: tube.clone(),
        extension,
        overlap_residual: overlap,
        boundary_margin: margin,
        psi_sup,
        base_drift,
    })
}

/// March the family, recording every attempted step. The trace survives a
/// mid-run error: the last record names the offending parameter.
pub fn continue_along_traced(
    f: &HoloFn,
    membership: &MarginFn,
    family: &DiskFamily,
    opts: &ContinueOptions,
) -> (Vec<StepRecord>, Result<Continuation>) {
    let mut trace = Vec::new();
    let result = run_continuation(f, membership, family, opts, &mut trace);
    (trace, result)
}

/// Continue `f` along the family. Preconditions are sampled first (initial
/// disk inside `U`, every grid boundary ring inside `U`, each disk map
/// holomorphic); then the march emits one element per visited parameter.
pub fn continue_along(
    f: &HoloFn,
    membership: &MarginFn,
    family: &DiskFamily,
    opts: &ContinueOptions,
) -> Result<Continuation> {
    let mut trace = Vec::new();
    run_continuation(f, membership, family, opts, &mut trace)
}

fn run_continuation(
    f: &HoloFn,
    membership: &MarginFn,
    family: &DiskFamily,
    opts: &ContinueOptions,
    trace: &mut Vec<StepRecord>,
) -> Result<Continuation> {
    if !(opts.figure_margin > 0.0 && opts.figure_margin < 1.0) {
        return Err(Error::Config(format!(
            "figure margin must lie in (0,1), got {}",
            opts.figure_margin
        )));
    }
    if opts.disk_degree_cap < 2 || opts.disk_degree_cap > 12 {
        return Err(Error::Config(format!(
            "disk degree cap must lie in 2..=12, got {}",
            opts.disk_degree_cap
        )));
    }
    let grid = family.grid().to_vec();
    let t0 = grid[0];
    let m = family.fiber_dim();

    // Pre-checks: initial disk inside U, boundary rings inside U, disk maps
    // holomorphic.
    let mut run_margin = f64::INFINITY;
    for i in 0..opts.interior_samples.max(16) {
        let rad = halton(i, 2).sqrt();
        let theta = 2.0 * std::f64::consts::PI * halton(i, 3);
        let p = family.eval_unit(t0, C64::from_polar(rad, theta));
        let mg = membership(&p);
        if mg <= 0.0 {
            return Err(Error::BoundaryEscape { t: t0, margin: mg });
        }
        run_margin = run_margin.min(mg);
    }
    for &t in &grid {
        let mg = boundary_min_margin(family, membership, t, opts.boundary_nodes.max(16));
        if mg <= 0.0 {
            return Err(Error::BoundaryEscape { t, margin: mg });
        }
        run_margin = run_margin.min(mg);
        let cr = family_cr_residual(family, t)?;
        if cr > opts.extend.cr_tolerance {
            return Err(Error::NotHolomorphic {
                residual: cr,
                tolerance: opts.extend.cr_tolerance,
            });
        }
    }

    let fiber_target = opts.tube_radius.min(0.75 * run_margin);
    let psi_bound = opts.figure_margin / 4.0;

    // Initial element.
    let tube0 = build_tube(family, t0, fiber_target, opts)?;
    let first = extend_element(f, membership, &tube0, None, t0, m, opts, 0.0, 0.0);
    trace.push(StepRecord {
        t_from: t0,
        t_to: t0,
        accepted: first.is_ok(),
        psi_sup: 0.0,
        base_drift: 0.0,
        boundary_margin: first.as_ref().map(|e| e.boundary_margin).unwrap_or(f64::NAN),
        overlap_residual: 0.0,
        decay_rate: first.as_ref().map(|e| e.extension.decay_rate).unwrap_or(f64::NAN),
        extension_residual: first
            .as_ref()
            .map(|e| e.extension.overlap_residual)
            .unwrap_or(f64::NAN),
    });
    let mut elements = vec![first?];
    let mut prev = Arc::new(PrevElement {
        chart_t: t0,
        tube: elements[0].tube.clone(),
        extension: elements[0].extension.clone(),
    });
    let _ = prev.chart_t;

    let mut step_hint = grid[1] - grid[0];
    for &target in &grid[1..] {
        let mut t_cur = elements.last().expect("nonempty").t;
        while target - t_cur > 1e-14 {
            let mut t_next = (t_cur + step_hint).min(target);
            // Shrink until the previous disk is a small graph in the
            // frontier coordinates.
            let (tube, psi, drift) = loop {
                let tube = build_tube(family, t_next, fiber_target, opts)?;
                let (psi, drift) = measure_shift(family, t_cur, &tube);
                if psi < psi_bound && drift < psi_bound {
                    break (tube, psi, drift);
                }
                trace.push(StepRecord {
                    t_from: t_cur,
                    t_to: t_next,
                    accepted: false,
                    psi_sup: psi,
                    base_drift: drift,
                    boundary_margin: f64::NAN,
                    overlap_residual: f64::NAN,
                    decay_rate: f64::NAN,
                    extension_residual: f64::NAN,
                });
                let half = t_cur + 0.5 * (t_next - t_cur);
                if half - t_cur < opts.min_step {
                    return Err(Error::StepCollapse { t: t_next, min_step: opts.min_step });
                }
                t_next = half;
            };
            let element = extend_element(
                f,
                membership,
                &tube,
                Some(&prev),
                t_next,
                m,
                opts,
                psi,
                drift,
            );
            trace.push(StepRecord {
                t_from: t_cur,
                t_to: t_next,
                accepted: element.is_ok(),
                psi_sup: psi,
                base_drift: drift,
                boundary_margin: element
                    .as_ref()
                    .map(|e| e.boundary_margin)
                    .unwrap_or(f64::NAN),
                overlap_residual: element
                    .as_ref()
                    .map(|e| e.overlap_residual)
                    .unwrap_or(f64::NAN),
                decay_rate: element
                    .as_ref()
                    .map(|e| e.extension.decay_rate)
                    .unwrap_or(f64::NAN),
                extension_residual: element
                    .as_ref()
                    .map(|e| e.extension.overlap_residual)
                    .unwrap_or(f64::NAN),
            });
            let element = element?;
            prev = Arc::new(PrevElement {
                chart_t: t_next,
                tube: element.tube.clone(),
                extension: element.extension.clone(),
            });
            elements.push(element);
            step_hint = ((t_next - t_cur) * opts.step_growth).max(opts.min_step);
            t_cur = t_next;
        }
    }

    let reached_t = elements.last().expect("nonempty").t;
    Ok(Continuation { elements, grid, reached_t })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn everywhere() -> MarginFn {
        Arc::new(|_: &[C64]| 1.0)
    }

    /// Constant-in-lambda fiber sweep: phi_t(lambda) = (lambda, t*a).
    fn constant_sweep(a: C64, grid: Vec<f64>) -> DiskFamily {
        DiskFamily::graphs(grid, 1, Arc::new(move |t, _| vec![a * t])).unwrap()
    }

    /// Polynomial graph sweep without linear term: (lambda, t(b0 + b2 l^2)).
    fn quadratic_sweep(b0: C64, b2: C64, grid: Vec<f64>) -> DiskFamily {
        DiskFamily::graphs(
            grid,
            1,
            Arc::new(move |t, l| vec![(b0 + b2 * l * l) * t]),
        )
        .unwrap()
    }

    #[test]
    fn disk_series_recovers_polynomial_graph() {
        let fam = quadratic_sweep(c(0.3, 0.0), c(0.2, -0.1), DiskFamily::uniform_grid(0.0, 1.0, 5));
        let (phi, tail) = fam.disk_series(0.5, 8).unwrap();
        assert!(tail <= 1e-13, "tail {tail}");
        // degree 0: (0, 0.15); degree 1: (1, 0); degree 2: (0, 0.1 - 0.05i)
        let t0 = phi.terms[0].eval(&[c(0.0, 0.0)]);
        assert!((t0[0]).norm() <= 1e-13);
        assert!((t0[1] - c(0.15, 0.0)).norm() <= 1e-13);
        let t1 = phi.terms[1].eval(&[c(1.0, 0.0)]);
        assert!((t1[0] - c(1.0, 0.0)).norm() <= 1e-13);
        assert!(t1[1].norm() <= 1e-13);
        let t2 = phi.terms[2].eval(&[c(1.0, 0.0)]);
        assert!(t2[0].norm() <= 1e-13);
        assert!((t2[1] - c(0.1, -0.05)).norm() <= 1e-13);
    }

    #[test]
    fn constant_sweep_reaches_full_parameter() {
        // Pole of f far from the swept tube: the continuation must reach
        // t = 1 and reproduce the function there.
        let a = c(0.4, 0.0);
        let fam = constant_sweep(a, DiskFamily::uniform_grid(0.0, 1.0, 11));
        let f: HoloFn = Arc::new(|p: &[C64]| 1.0 / (p[1] - 2.0));
        let membership: MarginFn = Arc::new(|p: &[C64]| (p[1] - 2.0).norm() - 0.3);
        let cont = continue_along(&f, &membership, &fam, &ContinueOptions::default()).unwrap();
        assert!((cont.reached_t - 1.0).abs() <= 1e-12);
        let last = cont.final_element();
        let got = last.eval_ambient(&[c(0.0, 0.0), a]).unwrap();
        let want = 1.0 / (a - 2.0);
        assert!(
            (got - want).norm() <= 1e-7,
            "value at the final disk center: {got} vs {want}"
        );
        // Every grid parameter must carry an element.
        for &t in fam.grid() {
            assert!(cont.element_at(t).is_some(), "missing element at t = {t}");
        }
    }

    #[test]
    fn polynomial_function_continues_exactly() {
        let fam = quadratic_sweep(c(0.3, 0.0), c(0.2, 0.0), DiskFamily::uniform_grid(0.0, 1.0, 6));
        let f: HoloFn =
            Arc::new(|p: &[C64]| p[1] * p[1] + 3.0 * p[0] * p[1] - p[0] * p[0] * p[0]);
        let cont = continue_along(&f, &everywhere(), &fam, &ContinueOptions::default()).unwrap();
        assert!((cont.reached_t - 1.0).abs() <= 1e-12);
        // Each element must reproduce the polynomial on its tube.
        for e in &cont.elements {
            for i in 0..20 {
                let z = C64::from_polar(
                    0.8 * halton(i, 2).sqrt(),
                    2.0 * std::f64::consts::PI * halton(i, 3),
                );
                let wh = C64::from_polar(
                    0.6 * halton(i, 5),
                    2.0 * std::f64::consts::PI * halton(i, 7),
                );
                let w = wh * e.fiber_radius();
                let p = e.tube.eval(z, &[w]).unwrap();
                let got = e.eval_chart(z, &[wh]).unwrap();
                assert!(
                    (got - f(&p)).norm() <= 1e-9,
                    "t = {}, residual {}",
                    e.t,
                    (got - f(&p)).norm()
                );
            }
        }
    }

    #[test]
    fn halved_grid_matches_coarse_grid() {
        let f: HoloFn = Arc::new(|p: &[C64]| 1.0 / (p[1] - 2.0) + p[0] * p[1]);
        let membership: MarginFn = Arc::new(|p: &[C64]| (p[1] - 2.0).norm() - 0.3);
        let a = c(0.35, 0.1);
        let coarse = constant_sweep(a, DiskFamily::uniform_grid(0.0, 1.0, 6));
        let fine = constant_sweep(a, DiskFamily::uniform_grid(0.0, 1.0, 11));
        let opts = ContinueOptions::default();
        let c1 = continue_along(&f, &membership, &coarse, &opts).unwrap();
        let c2 = continue_along(&f, &membership, &fine, &opts).unwrap();
        let e1 = c1.final_element();
        let e2 = c2.final_element();
        for i in 0..25 {
            let z = C64::from_polar(
                0.8 * halton(i, 2).sqrt(),
                2.0 * std::f64::consts::PI * halton(i, 3),
            );
            let wh = C64::from_polar(
                0.5 * halton(i, 5),
                2.0 * std::f64::consts::PI * halton(i, 7),
            );
            let p = e1.tube.eval(z, &[wh * e1.fiber_radius()]).unwrap();
            let v1 = e1.eval_ambient(&p).unwrap();
            let v2 = e2.eval_ambient(&p).unwrap();
            assert!(
                (v1 - v2).norm() <= 1e-9,
                "grid refinement changed the continuation by {}",
                (v1 - v2).norm()
            );
        }
    }

    #[test]
    fn consecutive_elements_agree_on_overlap() {
        let f: HoloFn = Arc::new(|p: &[C64]| 1.0 / (p[1] - 2.0));
        let membership: MarginFn = Arc::new(|p: &[C64]| (p[1] - 2.0).norm() - 0.3);
        let fam = constant_sweep(c(0.4, 0.0), DiskFamily::uniform_grid(0.0, 1.0, 11));
        let cont = continue_along(&f, &membership, &fam, &ContinueOptions::default()).unwrap();
        assert!(cont.elements.len() >= 2);
        // Recorded residuals (50 samples each) obey the contract...
        for e in &cont.elements[1..] {
            assert!(
                e.overlap_residual <= 1e-8,
                "t = {}: overlap residual {}",
                e.t,
                e.overlap_residual
            );
        }
        // ... and an independent re-sampling of a consecutive pair does too.
        let (ea, eb) = (&cont.elements[cont.elements.len() - 2], cont.final_element());
        let mut checked = 0usize;
        for i in 0..400 {
            if checked >= 50 {
                break;
            }
            let z = C64::from_polar(
                0.7 * halton(i, 2).sqrt(),
                2.0 * std::f64::consts::PI * halton(i, 3),
            );
            let wh = C64::from_polar(
                0.2 * halton(i, 5),
                2.0 * std::f64::consts::PI * halton(i, 7),
            );
            let p = eb.tube.eval(z, &[wh * eb.fiber_radius()]).unwrap();
            let (va, vb) = match (ea.eval_ambient(&p), eb.eval_ambient(&p)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue,
            };
            checked += 1;
            assert!((va - vb).norm() <= 1e-8, "overlap sample {i}: {}", (va - vb).norm());
        }
        assert!(checked >= 50, "only {checked} overlap samples landed in both tubes");
    }

    #[test]
    fn rotated_adapted_frame_gives_same_values() {
        let f: HoloFn = Arc::new(|p: &[C64]| 1.0 / (p[1] - 2.0) + p[0]);
        let membership: MarginFn = Arc::new(|p: &[C64]| (p[1] - 2.0).norm() - 0.3);
        let fam = constant_sweep(c(0.4, 0.0), DiskFamily::uniform_grid(0.0, 1.0, 6));
        let base = continue_along(&f, &membership, &fam, &ContinueOptions::default()).unwrap();
        let rotated = continue_along(
            &f,
            &membership,
            &fam,
            &ContinueOptions { frame_seed: Some(11), ..ContinueOptions::default() },
        )
        .unwrap();
        let ea = base.final_element();
        let eb = rotated.final_element();
        for i in 0..25 {
            let z = C64::from_polar(
                0.7 * halton(i, 2).sqrt(),
                2.0 * std::f64::consts::PI * halton(i, 3),
            );
            let wh = C64::from_polar(
                0.4 * halton(i, 5),
                2.0 * std::f64::consts::PI * halton(i, 7),
            );
            let p = ea.tube.eval(z, &[wh * ea.fiber_radius()]).unwrap();
            let va = ea.eval_ambient(&p).unwrap();
            let vb = eb.eval_ambient(&p).unwrap();
            assert!(
                (va - vb).norm() <= 1e-8,
                "adapted frame changed the continuation by {}",
                (va - vb).norm()
            );
        }
    }

    #[test]
    fn pole_crossing_surfaces_slow_decay_with_parameter() {
        // The pole sheet w = 0.28 + 0.1 z crosses the interiors of the
        // swept disks (lambda, 0.8 t) for t beyond 0.225, while every grid
        // boundary ring keeps a positive membership margin: the sampled
        // preconditions hold, so the failure must surface from the decay
        // certificate of a step extension, tagged with the parameter the
        // march had reached. The conservative decay gate fires while the
        // sheet still clears the sampled shell tori, keeping the data
        // bounded there.
        let f: HoloFn = Arc::new(|p: &[C64]| 1.0 / (p[1] - 0.28 - 0.1 * p[0]));
        let membership: MarginFn = Arc::new(|p: &[C64]| (p[1] - 0.28 - 0.1 * p[0]).norm());
        let fam = constant_sweep(c(0.8, 0.0), vec![0.0, 0.12, 0.38, 0.65, 1.0]);
        let opts = ContinueOptions {
            tube_radius: 0.06,
            extend: ExtendOptions {
                decay_gate: 0.85,
                overlap_tolerance: 1e-4,
                ..ExtendOptions::default()
            },
            ..ContinueOptions::default()
        };
        let (trace, result) = continue_along_traced(&f, &membership, &fam, &opts);
        let err = result.expect_err("continuation into a pole sheet must fail");
        assert!(
            matches!(err, Error::SlowDecay { .. }),
            "expected the decay certificate to fail, got {err:?}"
        );
        let last = trace.last().expect("trace nonempty");
        assert!(!last.accepted);
        assert!(
            (0.125..=0.45).contains(&last.t_to),
            "offending parameter {} outside the approach window",
            last.t_to
        );
        // The march made real progress before aborting.
        assert!(trace.iter().filter(|r| r.accepted).count() >= 5);
    }

    #[test]
    fn boundary_escape_reports_first_bad_parameter() {
        // Boundary rings sit at |w| = 0.45 t; U only reaches |w| < 0.3.
        let f: HoloFn = Arc::new(|p: &[C64]| p[1]);
        let membership: MarginFn = Arc::new(|p: &[C64]| 0.3 - p[1].norm());
        let fam = constant_sweep(c(0.45, 0.0), DiskFamily::uniform_grid(0.0, 1.0, 11));
        let err = continue_along(&f, &membership, &fam, &ContinueOptions::default())
            .expect_err("escaping family must fail");
        match err {
            Error::BoundaryEscape { t, margin } => {
                assert!((t - 0.7).abs() <= 1e-12, "first failing grid parameter, got {t}");
                assert!(margin <= 0.0);
            }
            other => panic!("expected a boundary escape, got {other:?}"),
        }
    }

    #[test]
    fn fast_family_collapses_step() {
        // Fiber speed 2.0 with a tight tube: the quarter-margin bound needs
        // steps ~1e-3, below the configured minimum.
        let f: HoloFn = Arc::new(|p: &[C64]| p[0] + p[1]);
        let fam = DiskFamily::graphs(
            DiskFamily::uniform_grid(0.0, 1.0, 5),
            1,
            Arc::new(|t, _| vec![c(2.0 * t, 0.0)]),
        )
        .unwrap();
        let opts = ContinueOptions {
            tube_radius: 0.1,
            min_step: 0.02,
            ..ContinueOptions::default()
        };
        let err = continue_along(&f, &everywhere(), &fam, &opts)
            .expect_err("fast family must exhaust the step control");
        match err {
            Error::StepCollapse { min_step, .. } => assert!((min_step - 0.02).abs() <= 1e-15),
            other => panic!("expected step collapse, got {other:?}"),
        }
    }

    #[test]
    fn non_holomorphic_family_is_rejected() {
        let f: HoloFn = Arc::new(|p: &[C64]| p[0] + p[1]);
        let fam = DiskFamily::graphs(
            DiskFamily::uniform_grid(0.0, 1.0, 4),
            1,
            Arc::new(|t, l: C64| vec![c(0.2 * t, 0.0) + l.conj() * 0.3]),
        )
        .unwrap();
        let err = continue_along(&f, &everywhere(), &fam, &ContinueOptions::default())
            .expect_err("antiholomorphic graph must fail the CR gate");
        assert!(matches!(err, Error::NotHolomorphic { .. }), "got {err:?}");
    }

    #[test]
    fn check_family_reports_positive_margins_inside() {
        let fam = constant_sweep(c(0.3, 0.0), DiskFamily::uniform_grid(0.0, 1.0, 6));
        let membership: MarginFn = Arc::new(|p: &[C64]| 1.0 - p[1].norm());
        let report = check_family(&fam, &membership, 64).unwrap();
        assert!(report.interior_margin >= 0.9);
        assert!(report.boundary_margin >= 0.69 && report.boundary_margin <= 0.71);
        assert!(report.cr_residual <= 1e-10);
    }

    #[test]
    fn check_family_sees_touching_boundary() {
        // At t = 1 the boundary fiber sits exactly on the edge of U.
        let fam = constant_sweep(c(0.7, 0.0), DiskFamily::uniform_grid(0.0, 1.0, 6));
        let membership: MarginFn = Arc::new(|p: &[C64]| 0.7 - p[1].norm());
        let report = check_family(&fam, &membership, 64).unwrap();
        assert!(
            report.boundary_margin.abs() <= 1e-12,
            "touching margin {}",
            report.boundary_margin
        );
        assert!((report.boundary_argmin_t - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn check_family_modulus_matches_lipschitz_constant() {
        // sup_lambda |phi_t - phi_s| = 0.3 |t - s| exactly (attained on the
        // boundary), grid spacing 0.2.
        let fam = DiskFamily::graphs(
            DiskFamily::uniform_grid(0.0, 1.0, 6),
            1,
            Arc::new(|t, l| vec![l * (0.3 * t)]),
        )
        .unwrap();
        let report = check_family(&fam, &everywhere(), 64).unwrap();
        let expected = 0.3 * 0.2;
        assert!(
            report.continuity_modulus <= expected * (1.0 + 1e-12)
                && report.continuity_modulus >= expected * 0.98,
            "modulus {} vs Lipschitz step bound {expected}",
            report.continuity_modulus
        );
    }

    #[test]
    fn element_evaluation_matches_function_on_figure() {
        // Both evaluation routes (chart coordinates and ambient points) hit
        // the function on slab and shell alike.
        let f: HoloFn = Arc::new(|p: &[C64]| (p[0] * 0.3 + p[1]).exp());
        let fam = quadratic_sweep(c(0.2, 0.1), c(0.15, 0.0), DiskFamily::uniform_grid(0.0, 0.5, 4));
        let cont = continue_along(&f, &everywhere(), &fam, &ContinueOptions::default()).unwrap();
        let e = cont.final_element();
        for i in 0..30 {
            let shell = i % 2 == 0;
            let zr = if shell {
                0.84 + 0.1 * halton(i, 2)
            } else {
                0.7 * halton(i, 2).sqrt()
            };
            let wr = if shell { 0.85 * halton(i, 5) } else { 0.18 * halton(i, 5) };
            let z = C64::from_polar(zr, 2.0 * std::f64::consts::PI * halton(i, 3));
            let wh = C64::from_polar(wr, 2.0 * std::f64::consts::PI * halton(i, 7));
            let p = e.tube.eval(z, &[wh * e.fiber_radius()]).unwrap();
            let via_chart = e.eval_chart(z, &[wh]).unwrap();
            let via_ambient = e.eval_ambient(&p).unwrap();
            assert!((via_chart - f(&p)).norm() <= 1e-8, "chart route {}", (via_chart - f(&p)).norm());
            assert!(
                (via_ambient - via_chart).norm() <= 1e-9,
                "ambient route disagrees by {}",
                (via_ambient - via_chart).norm()
            );
        }
    }
}
