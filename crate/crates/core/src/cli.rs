//! Command-line driver.
//!
//! One subcommand per pipeline, each reading a flat `key=value` config and
//! writing `summary.txt` (one certified quantity per line) plus trace CSVs
//! into the output directory. All floats go through [`crate::io::fmt_f64`]
//! so two runs of the same config produce byte-identical artifacts. Every
//! error path exits nonzero after printing a single machine-readable line
//! `error tag=<tag> code=<code> msg="..."` to stderr; traces produced
//! before the failure stay on disk.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;

use crate::config::ConfigMap;
use crate::continuation::{continue_along_traced, StepRecord};
use crate::dbar::{cauchy_transform, solve_cousin, sup_constant, CousinOptions, PlanarDomain};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::hartogs::{extend_bidim_q1, ExtendOptions};
use crate::io::{fmt_f64, write_summary, CsvTable};
use crate::loopspace::{extend_loop_family_traced, LoopExtendOptions};
use crate::royden::{normalize_transitions, RoydenOptions};

#[derive(Parser)]
#[command(
    name = "hartogskit",
    version,
    about = "Certified analytic continuation runs: figure extension, dbar and \
             Cousin solves, transition normalization, disk-family continuation, \
             and loop-valued extension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for summary.txt and trace CSVs (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Cap on inner data parallelism (defaults to all cores; results are
    /// identical for any value).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Extend a figure-sampled function to the unit bidisk.
    Extend(RunArgs),
    /// Solve du/dzbar = g by the quadrature Cauchy transform.
    Dbar(RunArgs),
    /// Split an additive overlap cocycle into per-chart functions.
    Cousin(RunArgs),
    /// Normalize a fibered chart atlas to identity transitions.
    Normalize(RunArgs),
    /// March a function element along a disk family.
    #[command(name = "continue")]
    Continue(RunArgs),
    /// Extend a loop-valued family coefficientwise.
    Loopspace(RunArgs),
}

/// Process entry point: parse, dispatch, render errors. Returns the exit
/// code instead of exiting so tests can call it in-process.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    let (name, args): (_, &RunArgs) = match &cli.command {
        Command::Extend(a) => ("extend", a),
        Command::Dbar(a) => ("dbar", a),
        Command::Cousin(a) => ("cousin", a),
        Command::Normalize(a) => ("normalize", a),
        Command::Continue(a) => ("continue", a),
        Command::Loopspace(a) => ("loopspace", a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error tag=config_error code=2 msg=\"thread pool: {e}\"");
            return 2;
        }
    }
    match run_from_files(name, &args.config, &args.out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error tag={} code={} msg=\"{}\"", e.tag(), e.exit_code(), e);
            e.exit_code()
        }
    }
}

/// File-level wrapper around [`run_subcommand`].
pub fn run_from_files(subcommand: &str, config: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config)?;
    let cfg = ConfigMap::parse(&text)?;
    std::fs::create_dir_all(out)?;
    run_subcommand(subcommand, &cfg, out)
}

/// Dispatch one run with a parsed config into an existing directory.
pub fn run_subcommand(subcommand: &str, cfg: &ConfigMap, out: &Path) -> Result<()> {
    match subcommand {
        "extend" => run_extend(cfg, out),
        "dbar" => run_dbar(cfg, out),
        "cousin" => run_cousin(cfg, out),
        "normalize" => run_normalize(cfg, out),
        "continue" => run_continue(cfg, out),
        "loopspace" => run_loopspace(cfg, out),
        other => Err(Error::Config(format!("unknown subcommand `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// shared artifact helpers
// ---------------------------------------------------------------------------

struct Summary(Vec<(String, String)>);

impl Summary {
    fn new() -> Self {
        Summary(Vec::new())
    }
    fn text(&mut self, key: &str, value: &str) {
        self.0.push((key.to_string(), value.to_string()));
    }
    fn float(&mut self, key: &str, value: f64) {
        self.text(key, &fmt_f64(value));
    }
    fn count(&mut self, key: &str, value: usize) {
        self.text(key, &value.to_string());
    }
    fn write(self, out: &Path) -> Result<()> {
        write_summary(&out.join("summary.txt"), &self.0)
    }
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// extend
// ---------------------------------------------------------------------------

/// Deterministic interior grid: per-axis spiral nodes with radii up to
/// 0.9 * count/(count+1) and equidistributed angles.
fn spiral_node(j: usize, count: usize) -> C64 {
    C64::from_polar(
        0.9 * (j + 1) as f64 / (count + 1) as f64,
        std::f64::consts::TAU * j as f64 / count.max(1) as f64,
    )
}

fn run_extend(cfg: &ConfigMap, out: &Path) -> Result<()> {
    cfg.allow_keys(&["fixture", "r", "grid"])?;
    let name = cfg.require("fixture")?;
    let r = cfg.get_f64("r", 0.2)?;
    let grid = cfg.get_usize("grid", 20)?;
    if grid == 0 {
        return Err(Error::Config("grid must be at least 1".into()));
    }
    let fx = fixtures::extend_fixture(name, r)?;
    let ext = extend_bidim_q1(&fx.f, &fx.figure, &ExtendOptions::default())?;

    let mut rows = Vec::with_capacity(grid * grid);
    let mut max_err = 0.0f64;
    for a in 0..grid {
        for b in 0..grid {
            let p = [spiral_node(a, grid), spiral_node(b, grid)];
            let got = ext.eval(&p)?;
            let err = (got - (fx.f)(&p)).norm();
            max_err = max_err.max(err);
            rows.push(vec![
                (a * grid + b).to_string(),
                fmt_f64(p[0].re),
                fmt_f64(p[0].im),
                fmt_f64(p[1].re),
                fmt_f64(p[1].im),
                fmt_f64(got.re),
                fmt_f64(got.im),
                fmt_f64(err),
            ]);
        }
    }
    write_csv(
        &out.join("extend_trace.csv"),
        "index,re_z1,im_z1,re_z2,im_z2,re_value,im_value,abs_err",
        &rows,
    )?;

    let mut s = Summary::new();
    s.text("fixture", name);
    s.float("r", r);
    s.float("target_radius_z", ext.target_radii[0]);
    s.float("target_radius_w", ext.target_radii[1]);
    s.float("sup_bound", ext.sup_bound);
    s.float("tail_bound", ext.tail_bound);
    s.float("max_overlap_residual", ext.overlap_residual);
    s.float("negative_mass", ext.negative_mass);
    s.float("cross_check_residual", ext.cross_check_residual);
    s.float("decay_rate", ext.decay_rate);
    s.count("oracle_grid", grid);
    s.float("oracle_max_err", max_err);
    s.write(out)
}

// ---------------------------------------------------------------------------
// dbar
// ---------------------------------------------------------------------------

fn run_dbar(cfg: &ConfigMap, out: &Path) -> Result<()> {
    cfg.allow_keys(&["fixture", "resolution", "radius"])?;
    let name = cfg.require("fixture")?;
    let resolution = cfg.get_usize("resolution", 256)?;
    let radius = cfg.get_f64("radius", 1.0)?;
    let fx = fixtures::dbar_fixture(name)?;
    let domain = PlanarDomain::disk(C64::new(0.0, 0.0), radius, resolution)?;
    let g = domain.sample(|z| (fx.g)(z))?;
    let sol = cauchy_transform(&g)?;
    let sc = sup_constant(&domain);

    // Solution profile along the horizontal diameter.
    let j = domain.ny / 2;
    let mut rows = Vec::new();
    for i in 0..domain.nx {
        let z = domain.cell_center(i, j);
        if domain.contains(z) {
            let u = sol.u.values[(i, j)];
            rows.push(vec![
                rows.len().to_string(),
                fmt_f64(z.re),
                fmt_f64(z.im),
                fmt_f64(u.re),
                fmt_f64(u.im),
                fmt_f64(u.norm()),
            ]);
        }
    }
    write_csv(&out.join("dbar_trace.csv"), "index,x,y,re_u,im_u,abs_u", &rows)?;

    let mut s = Summary::new();
    s.text("fixture", name);
    s.count("resolution", resolution);
    s.float("radius", radius);
    s.float("residual", sol.residual);
    s.float("expected_residual", sol.expected_residual);
    s.float("interior_margin", sol.interior_margin);
    s.float("sup_g", sol.sup_g);
    s.float("sup_u", sol.sup_u);
    s.float("gamma", sol.gamma);
    s.float("sup_bound", sol.sup_bound);
    s.float("sup_constant", sc.value);
    s.float("sup_constant_argmax_re", sc.argmax.re);
    s.float("sup_constant_argmax_im", sc.argmax.im);
    s.write(out)
}

// ---------------------------------------------------------------------------
// cousin
// ---------------------------------------------------------------------------

fn run_cousin(cfg: &ConfigMap, out: &Path) -> Result<()> {
    cfg.allow_keys(&["fixture", "scale", "resolution", "tolerance"])?;
    let name = cfg.require("fixture")?;
    let scale = cfg.get_f64("scale", 1.0)?;
    let resolution = cfg.get_usize("resolution", 192)?;
    let tolerance = cfg.get_f64("tolerance", 1e-7)?;
    if !(tolerance > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tolerance}")));
    }
    let fx = fixtures::cousin_fixture(name, scale)?;
    let opts = CousinOptions { resolution, tolerance, ..CousinOptions::default() };
    let sol = solve_cousin(&fx.cover, &fx.cocycle, &opts)?;

    // Banded cochains serialize exactly; function-backed charts have no
    // finite coefficient table and are skipped.
    let mut table = CsvTable::new();
    for (a, chart) in sol.charts.iter().enumerate() {
        if let Some(band) = chart.band() {
            for (off, &v) in band.coeffs.iter().enumerate() {
                if v.norm() > 0.0 {
                    table.push(band.k_min + off as i64, &[], a, v);
                }
            }
        }
    }
    table.write(&out.join("cousin_cochain.csv"))?;

    let mut s = Summary::new();
    s.text("fixture", name);
    s.float("scale", scale);
    s.count("charts", sol.charts.len());
    s.float("delta_residual", sol.report.delta_residual);
    for (a, res) in sol.report.cr_residuals.iter().enumerate() {
        s.float(&format!("cr_residual_{a}"), *res);
    }
    s.float("sup_f", sol.report.sup_f);
    s.float("sup_c", sol.report.sup_c);
    s.float("norm_constant", sol.report.norm_constant);
    s.float("norm_constant_pou", sol.report.norm_constant_pou);
    s.float("delta_residual_pou", sol.report.delta_residual_pou);
    s.float("dbar_residual", sol.report.dbar_residual);
    s.count("banded", sol.report.banded as usize);
    s.write(out)
}

// ---------------------------------------------------------------------------
// normalize
// ---------------------------------------------------------------------------

fn run_normalize(cfg: &ConfigMap, out: &Path) -> Result<()> {
    cfg.allow_keys(&["fixture", "n_max"])?;
    let name = cfg.require("fixture")?;
    let n_max = cfg.get_usize("n_max", 8)?;
    let fx = fixtures::normalize_fixture(name, n_max)?;
    let res = normalize_transitions(&fx.atlas, fx.n_max, &RoydenOptions::default())?;

    let rows: Vec<Vec<String>> = res
        .norm_table
        .iter()
        .map(|row| {
            vec![
                row.degree.to_string(),
                fmt_f64(row.cocycle_norm),
                fmt_f64(row.chart_norm),
                fmt_f64(row.constant),
                fmt_f64(row.cousin_constant),
            ]
        })
        .collect();
    write_csv(
        &out.join("normalize_norms.csv"),
        "degree,cocycle_norm,chart_norm,constant,cousin_constant",
        &rows,
    )?;

    let mut s = Summary::new();
    s.text("fixture", name);
    s.count("m", res.m);
    s.count("cap", res.cap);
    s.float("r", res.r);
    s.count("n_max", n_max);
    s.float("epsilon", res.epsilon);
    s.float("epsilon_lo", res.epsilon_window.0);
    s.float("epsilon_hi", res.epsilon_window.1);
    s.float("fit_rate", res.fit_rate);
    if let Some(known) = fx.known_epsilon {
        s.float("known_epsilon", known);
    }
    s.count("steps", res.steps.len());
    let max_cocycle =
        res.steps.iter().map(|st| st.cocycle_residual).fold(0.0f64, f64::max);
    let max_identity =
        res.steps.iter().map(|st| st.identity_deviation).fold(0.0f64, f64::max);
    s.float("max_cocycle_residual", max_cocycle);
    s.float("max_identity_deviation", max_identity);
    s.write(out)
}

// ---------------------------------------------------------------------------
// continue
// ---------------------------------------------------------------------------

fn step_row(rec: &StepRecord) -> Vec<String> {
    vec![
        fmt_f64(rec.t_from),
        fmt_f64(rec.t_to),
        (rec.accepted as usize).to_string(),
        fmt_f64(rec.psi_sup),
        fmt_f64(rec.base_drift),
        fmt_f64(rec.boundary_margin),
        fmt_f64(rec.overlap_residual),
        fmt_f64(rec.decay_rate),
        fmt_f64(rec.extension_residual),
    ]
}

const CONTINUE_TRACE_HEADER: &str = "t_from,t_to,accepted,psi_sup,base_drift,\
boundary_margin,overlap_residual,decay_rate,extension_residual";

fn run_continue(cfg: &ConfigMap, out: &Path) -> Result<()> {
    cfg.allow_keys(&["fixture", "grid"])?;
    let name = cfg.require("fixture")?;
    let grid = cfg.get_opt_usize("grid")?;
    let fx = fixtures::continue_fixture(name, grid)?;
    let (trace, result) =
        continue_along_traced(&fx.f, &fx.membership, &fx.family, &fx.opts);

    // The step trace is written before the outcome is inspected, so a
    // failed march still leaves its full history (including the rejected
    // final step) on disk next to the nonzero exit.
    let rows: Vec<Vec<String>> = trace.iter().map(step_row).collect();
    write_csv(&out.join("continue_trace.csv"), CONTINUE_TRACE_HEADER, &rows)?;
    let cont = result?;

    let accepted = trace.iter().filter(|r| r.accepted).count();
    let finite_max = |pick: fn(&StepRecord) -> f64| {
        trace
            .iter()
            .filter(|r| r.accepted)
            .map(pick)
            .filter(|v| v.is_finite())
            .fold(0.0f64, f64::max)
    };
    let last = cont.final_element();

    let mut s = Summary::new();
    s.text("fixture", name);
    s.count("grid_points", fx.family.grid().len());
    s.float("reached_t", cont.reached_t);
    s.count("elements", cont.elements.len());
    s.count("accepted_steps", accepted);
    s.count("rejected_steps", trace.len() - accepted);
    s.float("max_psi", finite_max(|r| r.psi_sup));
    s.float("max_base_drift", finite_max(|r| r.base_drift));
    s.float("max_overlap_residual", finite_max(|r| r.overlap_residual));
    s.float("final_fiber_radius", last.fiber_radius());
    if let Some(point) = &fx.oracle_point {
        let got = last.eval_ambient(point)?;
        let want = (fx.f)(point);
        s.float("final_value_re", got.re);
        s.float("final_value_im", got.im);
        s.float("oracle_abs_err", (got - want).norm());
    }
    s.write(out)
}

// ---------------------------------------------------------------------------
// loopspace
// ---------------------------------------------------------------------------

fn run_loopspace(cfg: &ConfigMap, out: &Path) -> Result<()> {
    cfg.allow_keys(&["fixture", "r", "eval_radius"])?;
    let name = cfg.require("fixture")?;
    let r = cfg.get_f64("r", 0.2)?;
    let eval_radius = cfg.get_f64("eval_radius", 0.9)?;
    let fx = fixtures::loop_fixture(name, r)?;
    let opts = LoopExtendOptions { eval_radius, ..LoopExtendOptions::default() };
    let (records, result) = extend_loop_family_traced(&fx.family, &fx.figure, &opts);

    // Mode log first: a failed mode is identified on disk even when the
    // run exits nonzero.
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|rec| {
            vec![
                rec.m.to_string(),
                rec.component.to_string(),
                (rec.accepted as usize).to_string(),
                rec.tag.clone(),
            ]
        })
        .collect();
    write_csv(&out.join("loop_modes.csv"), "m,component,accepted,tag", &rows)?;
    let ext = result?;

    // Extended loop at the base origin, one row per mode and component.
    let origin = vec![C64::new(0.0, 0.0); ext.base_dim];
    let center = ext.loop_at(&origin)?;
    let mut table = CsvTable::new();
    for (m, coeffs) in center.modes() {
        for (component, &v) in coeffs.iter().enumerate() {
            table.push(m, &[], component, v);
        }
    }
    table.write(&out.join("loop_center.csv"))?;

    // Sobolev norm along the first-axis ray out to the evaluation radius.
    let mut ray = Vec::new();
    for i in 0..=16usize {
        let rad = eval_radius * i as f64 / 16.0;
        let mut z = origin.clone();
        z[0] = C64::new(rad, 0.0);
        ray.push(vec![i.to_string(), fmt_f64(rad), fmt_f64(ext.sobolev_norm_at(&z)?)]);
    }
    write_csv(&out.join("loop_norm_trace.csv"), "index,radius,norm", &ray)?;

    let mut s = Summary::new();
    s.text("fixture", name);
    s.count("base_dim", ext.base_dim);
    s.count("loop_dim", ext.n_dim);
    s.count("order", ext.k);
    s.count("modes", ext.modes.len());
    s.float("eval_radius", eval_radius);
    s.float("tail_bound", ext.tail_bound);
    s.float("max_boundary_norm", ext.max_boundary_norm);
    s.float("worst_interior_norm", ext.worst_interior_norm);
    s.float("certificate_ratio", ext.certificate_ratio);
    s.float("continuity_modulus", ext.continuity_modulus);
    s.float("center_norm", ext.sobolev_norm_at(&origin)?);
    s.write(out)
}
