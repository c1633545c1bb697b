//! hartogskit: numerical analytic continuation on Hartogs figures with
//! certified error reporting.
//!
//! The toolkit builds holomorphic extensions from Hartogs figures to full
//! polydisks (in finite dimension, in truncated infinite dimension, and for
//! Sobolev loop spaces), solves planar dbar and additive Cousin problems
//! with explicit constants, normalizes near-identity transition cocycles of
//! tubular neighborhoods degree by degree, and continues function elements
//! along families of analytic disks. Every operation reports residuals and
//! certified bounds next to its values; nothing is returned silently.

pub mod cli;
pub mod config;
pub mod continuation;
pub mod dbar;
pub mod error;
pub mod fixtures;
pub mod hartogs;
pub mod io;
pub mod loopspace;
pub mod quadrature;
pub mod royden;
pub mod series;
pub mod zfun;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

pub use cli::run_cli;
