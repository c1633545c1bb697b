//! Error type shared by all toolkit modules.
//!
//! Every failure mode carries enough context to act on (which quantity
//! violated which bound); the CLI maps each variant to a stable exit code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A sampled value was NaN or infinite.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Evaluation point lies outside the certified radius of a series.
    #[error("point at distance {dist:.3e} exceeds certified radius {radius:.3e}")]
    OutOfRadius { dist: f64, radius: f64 },

    /// Radius estimation needs at least 4 nonzero terms (or a polynomial tail).
    #[error("radius estimate needs >= 4 nonzero terms, found {found}")]
    InsufficientTerms { found: usize },

    /// A finite-difference stencil does not fit the supplied grid.
    #[error("grid of {rows}x{cols} too small for the residual stencil")]
    GridTooSmall { rows: usize, cols: usize },

    /// Cauchy-Riemann residual of an input exceeded the holomorphy gate.
    #[error("input fails holomorphy gate: CR residual {residual:.3e} > {tolerance:.3e}")]
    NotHolomorphic { residual: f64, tolerance: f64 },

    /// Extension disagrees with the input on the overlap region.
    #[error("overlap residual {residual:.3e} > {tolerance:.3e} ({context})")]
    OverlapMismatch {
        residual: f64,
        tolerance: f64,
        context: String,
    },

    /// Coefficient decay too slow: singularity inside the requested target.
    #[error("coefficient decay rate {rate:.6} certifies no convergence on the target")]
    SlowDecay { rate: f64 },

    /// Dimension induction exceeded the supported depth.
    #[error("induction over {requested} fiber variables exceeds supported depth {max}")]
    InductionDepthExceeded { requested: usize, max: usize },

    /// Directional extensions disagree where they must agree.
    #[error("directional extensions disagree by {residual:.3e} (tolerance {tolerance:.3e})")]
    DirectionInconsistency { residual: f64, tolerance: f64 },

    /// Requested accuracy is unreachable at the configured grid resolution.
    #[error("residual {residual:.3e} exceeds 10x the expected bound {expected:.3e} at resolution {resolution}")]
    ResolutionTooCoarse {
        residual: f64,
        expected: f64,
        resolution: usize,
    },

    /// Additive or multiplicative cocycle relation is violated.
    #[error("cocycle relation violated by {residual:.3e} (tolerance {tolerance:.3e})")]
    CocycleViolation { residual: f64, tolerance: f64 },

    /// Multiplicative factorization requires sup |B - I| < 1/2 on the overlap.
    #[error("cocycle is not near identity: sup |B - I| = {deviation:.3} >= 0.5")]
    NotNearIdentity { deviation: f64 },

    /// Derivative of the mapping is not injective at the chart center.
    #[error("mapping is not an immersion: smallest singular value {sigma:.3e} < {tolerance:.3e}")]
    NotImmersion { sigma: f64, tolerance: f64 },

    /// Fitted convergence radius collapsed to zero within confidence.
    #[error("norm table grows super-geometrically: fitted radius collapsed ({detail})")]
    RadiusCollapse { detail: String },

    /// Per-chart assembled maps disagree on a chart overlap.
    #[error("assembled charts disagree by {residual:.3e} (tolerance {tolerance:.3e})")]
    ChartDisagreement { residual: f64, tolerance: f64 },

    /// A disk boundary left the region where the continued map is known.
    #[error("disk boundary escapes the known region at t = {t:.6} (margin {margin:.3e})")]
    BoundaryEscape { t: f64, margin: f64 },

    /// Step control drove the parameter step below the configured minimum.
    #[error("step collapsed below {min_step:.3e} at t = {t:.6}")]
    StepCollapse { t: f64, min_step: f64 },

    /// Sobolev norm certificate failed on the extension target.
    #[error("Sobolev norm {norm:.6e} exceeds boundary certificate {bound:.6e}")]
    NormBlowup { norm: f64, bound: f64 },

    /// A loop left the domain ball where the family is defined.
    #[error("loop leaves the unit ball: sup |f(s)| = {sup:.6}")]
    LoopEscapesBall { sup: f64 },

    /// Configuration file is missing, malformed, or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code for the CLI (0 is success, 1 is reserved
    /// for panics, 2 follows the usual bad-usage convention).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonFinite { .. } => 3,
            Error::OutOfRadius { .. } => 4,
            Error::InsufficientTerms { .. } => 5,
            Error::GridTooSmall { .. } => 6,
            Error::NotHolomorphic { .. } => 7,
            Error::OverlapMismatch { .. } => 8,
            Error::SlowDecay { .. } => 9,
            Error::InductionDepthExceeded { .. } => 10,
            Error::DirectionInconsistency { .. } => 11,
            Error::ResolutionTooCoarse { .. } => 12,
            Error::CocycleViolation { .. } => 13,
            Error::NotNearIdentity { .. } => 14,
            Error::NotImmersion { .. } => 15,
            Error::RadiusCollapse { .. } => 16,
            Error::ChartDisagreement { .. } => 17,
            Error::BoundaryEscape { .. } => 18,
            Error::StepCollapse { .. } => 19,
            Error::NormBlowup { .. } => 20,
            Error::LoopEscapesBall { .. } => 21,
            Error::Io(_) => 22,
        }
    }

    /// Short machine-readable tag, written to summaries and stderr.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Config(_) => "config_error",
            Error::NonFinite { .. } => "non_finite",
            Error::OutOfRadius { .. } => "out_of_radius",
            Error::InsufficientTerms { .. } => "insufficient_terms",
            Error::GridTooSmall { .. } => "grid_too_small",
            Error::NotHolomorphic { .. } => "not_holomorphic",
            Error::OverlapMismatch { .. } => "overlap_mismatch",
            Error::SlowDecay { .. } => "slow_decay",
            Error::InductionDepthExceeded { .. } => "induction_depth_exceeded",
            Error::DirectionInconsistency { .. } => "direction_inconsistency",
            Error::ResolutionTooCoarse { .. } => "resolution_too_coarse",
            Error::CocycleViolation { .. } => "cocycle_violation",
            Error::NotNearIdentity { .. } => "not_near_identity",
            Error::NotImmersion { .. } => "not_immersion",
            Error::RadiusCollapse { .. } => "radius_collapse",
            Error::ChartDisagreement { .. } => "chart_disagreement",
            Error::BoundaryEscape { .. } => "boundary_escape",
            Error::StepCollapse { .. } => "step_collapse",
            Error::NormBlowup { .. } => "norm_blowup",
            Error::LoopEscapesBall { .. } => "loop_escapes_ball",
            Error::Io(_) => "io_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
