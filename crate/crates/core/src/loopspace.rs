//! Fourier–Sobolev model of the loop space `W^{k,2}(S^1, C^N)` and the
//! loop-valued Hartogs mechanism.
//!
//! A [`SobolevLoop`] stores finitely many Fourier coefficients with the
//! `(1+|m|)^{2k}`-weighted norm. A [`LoopFamily`] attaches a holomorphic
//! coefficient function of the base variable to each mode;
//! [`extend_loop_family`] pushes every mode across a Hartogs figure
//! independently and certifies the result with the maximum principle: the
//! Sobolev norm at each interior target must not exceed the largest norm on
//! the distinguished boundary of the evaluation polydisk (the squared norm
//! is a sum of squared moduli of holomorphic functions, hence
//! plurisubharmonic). [`mobius_disk_family`] builds the disk family of
//! loop-space envelopes: a Möbius swap in the first ball factor crossed with
//! a linear sweep of the second.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hartogs::{extend_bidim_qn, ExtendOptions, ExtensionResult, HartogsFigure};
use crate::quadrature::HoloFn;
use crate::series::halton;

/// Per-mode coefficient function of the base variable, valued in `C^N`.
pub type ModeFn = Arc<dyn Fn(&[C64]) -> Vec<C64> + Send + Sync>;

const HALTON_PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

// ---------------------------------------------------------------------------
// loops
// ---------------------------------------------------------------------------

/// A loop in `W^{k,2}(S^1, C^N)` held by its Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevLoop {
    n_dim: usize,
    k: usize,
    coeffs: BTreeMap<i64, Vec<C64>>,
}

impl SobolevLoop {
    pub fn new(n_dim: usize, k: usize, coeffs: BTreeMap<i64, Vec<C64>>) -> Result<Self> {
        if n_dim == 0 {
            return Err(Error::Config("loop target dimension must be >= 1".into()));
        }
        for (m, c) in &coeffs {
            if c.len() != n_dim {
                return Err(Error::Config(format!(
                    "mode {m} has {} components, expected {n_dim}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::NonFinite { context: format!("coefficient of mode {m}") });
            }
        }
        Ok(SobolevLoop { n_dim, k, coeffs })
    }

    /// The constant loop with value `c`.
    pub fn constant(k: usize, c: Vec<C64>) -> Result<Self> {
        let n = c.len();
        let mut coeffs = BTreeMap::new();
        coeffs.insert(0, c);
        SobolevLoop::new(n, k, coeffs)
    }

    /// A single-mode loop `c · e^{i m s}`.
    pub fn single_mode(k: usize, m: i64, c: Vec<C64>) -> Result<Self> {
        let n = c.len();
        let mut coeffs = BTreeMap::new();
        coeffs.insert(m, c);
        SobolevLoop::new(n, k, coeffs)
    }

    pub fn dim(&self) -> usize {
        self.n_dim
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn modes(&self) -> impl Iterator<Item = (i64, &[C64])> {
        self.coeffs.iter().map(|(&m, c)| (m, c.as_slice()))
    }

    pub fn mode(&self, m: i64) -> Option<&[C64]> {
        self.coeffs.get(&m).map(|c| c.as_slice())
    }

    /// Pointwise evaluation `Σ_m ĉ_m e^{i m s}` (continuous for k >= 1).
    pub fn eval(&self, s: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.n_dim];
        for (&m, c) in &self.coeffs {
            let phase = C64::from_polar(1.0, m as f64 * s);
            for (o, v) in out.iter_mut().zip(c.iter()) {
                *o += v * phase;
            }
        }
        out
    }
}

/// `(Σ_m (1+|m|)^{2k} ‖ĉ_m‖²)^{1/2}`.
pub fn sobolev_norm(lp: &SobolevLoop) -> f64 {
    let mut sum = 0.0f64;
    for (&m, c) in &lp.coeffs {
        let w = (1.0 + m.unsigned_abs() as f64).powi(2 * lp.k as i32);
        sum += w * c.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    sum.sqrt()
}

fn weighted_diff_norm(k: usize, a: &SobolevLoop, b: &SobolevLoop) -> f64 {
    let mut sum = 0.0f64;
    let zero = vec![C64::new(0.0, 0.0); a.n_dim];
    let modes: std::collections::BTreeSet<i64> =
        a.coeffs.keys().chain(b.coeffs.keys()).copied().collect();
    for m in modes {
        let ca = a.coeffs.get(&m).unwrap_or(&zero);
        let cb = b.coeffs.get(&m).unwrap_or(&zero);
        let w = (1.0 + m.unsigned_abs() as f64).powi(2 * k as i32);
        sum += w
            * ca.iter()
                .zip(cb.iter())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>();
    }
    sum.sqrt()
}

// ---------------------------------------------------------------------------
// loop families over a base domain
// ---------------------------------------------------------------------------

/// A family of loops parameterized holomorphically by a base variable:
/// per Fourier mode, one coefficient function `z -> C^N`.
#[derive(Clone)]
pub struct LoopFamily {
    base_dim: usize,
    n_dim: usize,
    k: usize,
    modes: BTreeMap<i64, ModeFn>,
}

impl std::fmt::Debug for LoopFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoopFamily")
            .field("base_dim", &self.base_dim)
            .field("n_dim", &self.n_dim)
            .field("k", &self.k)
            .field("modes", &self.modes.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl LoopFamily {
    pub fn new(base_dim: usize, n_dim: usize, k: usize) -> Self {
        LoopFamily { base_dim, n_dim, k, modes: BTreeMap::new() }
    }

    pub fn with_mode(mut self, m: i64, f: ModeFn) -> Self {
        self.modes.insert(m, f);
        self
    }

    /// Family constant in the base variable, equal to the given loop.
    pub fn from_loop(base_dim: usize, lp: &SobolevLoop) -> Self {
        let mut fam = LoopFamily::new(base_dim, lp.dim(), lp.order());
        for (m, c) in lp.modes() {
            let c = c.to_vec();
            fam = fam.with_mode(m, Arc::new(move |_z: &[C64]| c.clone()));
        }
        fam
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn dim(&self) -> usize {
        self.n_dim
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn mode_indices(&self) -> Vec<i64> {
        self.modes.keys().copied().collect()
    }

    /// The loop at a fixed base point.
    pub fn loop_at(&self, z: &[C64]) -> Result<SobolevLoop> {
        let mut coeffs = BTreeMap::new();
        for (&m, f) in &self.modes {
            coeffs.insert(m, f(z));
        }
        SobolevLoop::new(self.n_dim, self.k, coeffs)
    }

    pub fn eval(&self, z: &[C64], s: f64) -> Result<Vec<C64>> {
        Ok(self.loop_at(z)?.eval(s))
    }
}

// ---------------------------------------------------------------------------
// coefficientwise extension
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LoopExtendOptions {
    /// Radius of the closed evaluation polydisk for the certificate.
    pub eval_radius: f64,
    /// Interior certificate samples (plus the origin).
    pub interior_samples: usize,
    /// Nodes per axis on the distinguished boundary torus.
    pub boundary_nodes: usize,
    /// Relative slack of the maximum-principle certificate.
    pub certificate_slack: f64,
    /// Modes beyond this index are dropped into the recorded tail bound.
    pub mode_cutoff: i64,
    /// Options forwarded to the per-mode Hartogs extensions.
    pub extend: ExtendOptions,
}

impl Default for LoopExtendOptions {
    fn default() -> Self {
        LoopExtendOptions {
            eval_radius: 0.9,
            interior_samples: 40,
            boundary_nodes: 12,
            certificate_slack: 1e-6,
            mode_cutoff: 32,
            extend: ExtendOptions::default(),
        }
    }
}

/// One row of the per-mode extension log.
#[derive(Debug, Clone)]
pub struct ModeRecord {
    pub m: i64,
    pub component: usize,
    pub accepted: bool,
    /// `ok`, the error tag of the failed extension, or `dropped` for modes
    /// beyond the cutoff.
    pub tag: String,
}

/// The extended family: per mode and target component, a full extension on
/// the unit polydisk, plus the norm certificate data.
#[derive(Debug)]
pub struct LoopExtension {
    pub base_dim: usize,
    pub n_dim: usize,
    pub k: usize,
    pub modes: BTreeMap<i64, Vec<ExtensionResult>>,
    /// k-weighted norm mass of the dropped modes on the boundary torus.
    pub tail_bound: f64,
    /// Largest Sobolev norm over the boundary torus samples.
    pub max_boundary_norm: f64,
    /// Largest Sobolev norm over the interior samples.
    pub worst_interior_norm: f64,
    /// worst interior / max boundary (the certified quantity).
    pub certificate_ratio: f64,
    /// Max rate of change of `z -> F(z, ·)` in Sobolev norm along the
    /// sampled first-axis ray.
    pub continuity_modulus: f64,
}

impl LoopExtension {
    pub fn loop_at(&self, z: &[C64]) -> Result<SobolevLoop> {
        let mut coeffs = BTreeMap::new();
        for (&m, comps) in &self.modes {
            let mut c = Vec::with_capacity(comps.len());
            for ext in comps {
                c.push(ext.eval(z)?);
            }
            coeffs.insert(m, c);
        }
        SobolevLoop::new(self.n_dim, self.k, coeffs)
    }

    pub fn eval(&self, z: &[C64], s: f64) -> Result<Vec<C64>> {
        Ok(self.loop_at(z)?.eval(s))
    }

    pub fn sobolev_norm_at(&self, z: &[C64]) -> Result<f64> {
        Ok(sobolev_norm(&self.loop_at(z)?))
    }
}

fn boundary_torus(dims: usize, radius: f64, nodes: usize) -> Vec<Vec<C64>> {
    let total = nodes.pow(dims as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dims];
    for _ in 0..total {
        out.push(
            idx.iter()
                .enumerate()
                .map(|(a, &i)| {
                    C64::from_polar(
                        radius,
                        2.0 * std::f64::consts::PI * (i as f64 + 0.31 * a as f64) / nodes as f64,
                    )
                })
                .collect(),
        );
        for a in (0..dims).rev() {
            idx[a] += 1;
            if idx[a] < nodes {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

fn interior_points(dims: usize, radius: f64, count: usize) -> Vec<Vec<C64>> {
    let mut out = vec![vec![C64::new(0.0, 0.0); dims]];
    for i in 1..count.max(2) {
        out.push(
            (0..dims)
                .map(|a| {
                    C64::from_polar(
                        radius * halton(i, HALTON_PRIMES[2 * a]).sqrt(),
                        2.0 * std::f64::consts::PI * halton(i, HALTON_PRIMES[2 * a + 1]),
                    )
                })
                .collect(),
        );
    }
    out
}

/// Extend every mode of the family across the figure and certify the
/// maximum principle, logging one record per (mode, component) job.
pub fn extend_loop_family_traced(
    family: &LoopFamily,
    figure: &HartogsFigure,
    opts: &LoopExtendOptions,
) -> (Vec<ModeRecord>, Result<LoopExtension>) {
    let mut records = Vec::new();
    let result = run_loop_extension(family, figure, opts, &mut records);
    (records, result)
}

/// See [`extend_loop_family_traced`]; this variant drops the log.
pub fn extend_loop_family(
    family: &LoopFamily,
    figure: &HartogsFigure,
    opts: &LoopExtendOptions,
) -> Result<LoopExtension> {
    let mut records = Vec::new();
    run_loop_extension(family, figure, opts, &mut records)
}

fn run_loop_extension(
    family: &LoopFamily,
    figure: &HartogsFigure,
    opts: &LoopExtendOptions,
    records: &mut Vec<ModeRecord>,
) -> Result<LoopExtension> {
    if family.k < 1 {
        return Err(Error::Config(
            "loop smoothness order k must be >= 1 for the extension mechanism".into(),
        ));
    }
    let dims = figure.q + figure.fiber_dim();
    if family.base_dim != dims {
        return Err(Error::Config(format!(
            "family base dimension {} does not match the figure's {dims}",
            family.base_dim
        )));
    }
    if !(opts.eval_radius > 0.0 && opts.eval_radius < 1.0) {
        return Err(Error::Config(format!(
            "evaluation radius must lie in (0,1), got {}",
            opts.eval_radius
        )));
    }
    if opts.certificate_slack <= -1.0 {
        return Err(Error::Config("certificate slack must exceed -1".into()));
    }

    let boundary = boundary_torus(dims, opts.eval_radius, opts.boundary_nodes.max(4));
    let interior = interior_points(dims, opts.eval_radius, opts.interior_samples.max(8));

    // Split kept and dropped modes; the dropped mass is certified, not lost
    // silently.
    let mut tail_sq = 0.0f64;
    let mut jobs: Vec<(i64, usize, ModeFn)> = Vec::new();
    for (&m, f) in &family.modes {
        if m.abs() > opts.mode_cutoff {
            let w = (1.0 + m.unsigned_abs() as f64).powi(2 * family.k as i32);
            let mut worst = 0.0f64;
            for z in &boundary {
                let c = f(z);
                worst = worst.max(c.iter().map(|v| v.norm_sqr()).sum::<f64>());
            }
            tail_sq += w * worst;
            records.push(ModeRecord {
                m,
                component: 0,
                accepted: false,
                tag: "dropped".into(),
            });
            continue;
        }
        for j in 0..family.n_dim {
            jobs.push((m, j, f.clone()));
        }
    }

    let outcomes: Vec<(i64, usize, Result<ExtensionResult>)> = jobs
        .into_par_iter()
        .map(|(m, j, f)| {
            let h: HoloFn = Arc::new(move |pt: &[C64]| f(pt)[j]);
            (m, j, extend_bidim_qn(&h, figure, &opts.extend))
        })
        .collect();

    let mut modes: BTreeMap<i64, Vec<ExtensionResult>> = BTreeMap::new();
    let mut first_err: Option<Error> = None;
    for (m, j, res) in outcomes {
        match res {
            Ok(ext) => {
                records.push(ModeRecord { m, component: j, accepted: true, tag: "ok".into() });
                modes.entry(m).or_default().push(ext);
            }
            Err(e) => {
                records.push(ModeRecord { m, component: j, accepted: false, tag: e.tag().into() });
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let ext = LoopExtension {
        base_dim: dims,
        n_dim: family.n_dim,
        k: family.k,
        modes,
        tail_bound: tail_sq.sqrt(),
        max_boundary_norm: 0.0,
        worst_interior_norm: 0.0,
        certificate_ratio: 0.0,
        continuity_modulus: 0.0,
    };

    // Maximum-principle certificate on the evaluation polydisk.
    let mut max_boundary = 0.0f64;
    for z in &boundary {
        max_boundary = max_boundary.max(ext.sobolev_norm_at(z)?);
    }
    let mut worst_interior = 0.0f64;
    for z in &interior {
        worst_interior = worst_interior.max(ext.sobolev_norm_at(z)?);
    }
    let bound = max_boundary * (1.0 + opts.certificate_slack);
    if worst_interior > bound {
        return Err(Error::NormBlowup { norm: worst_interior, bound });
    }

    // Continuity modulus along the first-axis ray.
    let steps = 8usize;
    let h = opts.eval_radius / steps as f64;
    let mut modulus = 0.0f64;
    let mut prev = ext.loop_at(&vec![C64::new(0.0, 0.0); dims])?;
    for j in 1..=steps {
        let mut z = vec![C64::new(0.0, 0.0); dims];
        z[0] = C64::new(h * j as f64, 0.0);
        let cur = ext.loop_at(&z)?;
        modulus = modulus.max(weighted_diff_norm(family.k, &prev, &cur) / h);
        prev = cur;
    }

    Ok(LoopExtension {
        max_boundary_norm: max_boundary,
        worst_interior_norm: worst_interior,
        certificate_ratio: if max_boundary > 0.0 { worst_interior / max_boundary } else { 0.0 },
        continuity_modulus: modulus,
        ..ext
    })
}

// ---------------------------------------------------------------------------
// Möbius disk family
// ---------------------------------------------------------------------------

/// The disk automorphism interchanging `a` and `0`: `(a - z) / (1 - ā z)`.
pub fn mobius(a: C64, z: C64) -> C64 {
    (a - z) / (C64::new(1.0, 0.0) - a.conj() * z)
}

/// The swept family of loop-space disks: first component Möbius-swaps the
/// base loop with the disk variable, second sweeps linearly to the fiber
/// loop. At `t = 1` the disk centers recover the input loop pair.
#[derive(Debug, Clone)]
pub struct LoopDiskFamily {
    grid: Vec<f64>,
    q_loop: SobolevLoop,
    fiber_loop: SobolevLoop,
    shell_margin: f64,
}

impl LoopDiskFamily {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Max sampled deviation of the boundary first component from the unit
    /// circle (the shell parameter of the swept figure).
    pub fn shell_margin(&self) -> f64 {
        self.shell_margin
    }

    pub fn base_loop(&self) -> &SobolevLoop {
        &self.q_loop
    }

    pub fn fiber_loop(&self) -> &SobolevLoop {
        &self.fiber_loop
    }

    /// `phi_t(z, s) = (h_{fq(s)}(z), t·fn(s))`.
    pub fn eval(&self, t: f64, z: C64, s: f64) -> Vec<C64> {
        let a = self.q_loop.eval(s)[0];
        let mut out = Vec::with_capacity(1 + self.fiber_loop.dim());
        out.push(mobius(a, z));
        out.extend(self.fiber_loop.eval(s).into_iter().map(|v| v * t));
        out
    }
}

/// Build the Möbius disk family from a loop into `B^1 x B^n`, given as the
/// pair of component loops. Both must land strictly inside their balls on
/// the sample circle.
pub fn mobius_disk_family(
    q_loop: &SobolevLoop,
    fiber_loop: &SobolevLoop,
    grid: Vec<f64>,
) -> Result<LoopDiskFamily> {
    if q_loop.dim() != 1 {
        return Err(Error::Config(
            "the Möbius factor acts on a one-dimensional base ball".into(),
        ));
    }
    let samples = 128usize;
    let mut sup = 0.0f64;
    for i in 0..samples {
        let s = 2.0 * std::f64::consts::PI * i as f64 / samples as f64;
        sup = sup.max(q_loop.eval(s)[0].norm());
        let fiber: f64 = fiber_loop.eval(s).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        sup = sup.max(fiber);
    }
    if sup >= 1.0 {
        return Err(Error::LoopEscapesBall { sup });
    }
    // Boundary circles map to the unit circle exactly; report the sampled
    // deviation as the family's shell parameter.
    let mut shell = 0.0f64;
    for i in 0..samples {
        let s = 2.0 * std::f64::consts::PI * i as f64 / samples as f64;
        let a = q_loop.eval(s)[0];
        for j in 0..16 {
            let z = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / 16.0);
            shell = shell.max((mobius(a, z).norm() - 1.0).abs());
        }
    }
    Ok(LoopDiskFamily {
        grid,
        q_loop: q_loop.clone(),
        fiber_loop: fiber_loop.clone(),
        shell_margin: shell,
    })
}

// ---------------------------------------------------------------------------
