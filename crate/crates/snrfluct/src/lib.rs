//! Deterministic equivalents and Gaussian fluctuation limits for the output
//! SNR of an LMMSE receiver applied to random matrices with a variance
//! profile.
//!
//! The crate has two halves that deliberately never share code paths:
//!
//! * an analytic side ([`equilibrium`], [`fluctuations`]) that solves the
//!   deterministic fixed-point system attached to a variance profile and
//!   evaluates the large-system SNR `beta_bar` together with the variance
//!   `theta2` of its CLT fluctuation;
//! * a stochastic side ([`simulator`]) that draws finite random channels,
//!   evaluates the exact SNR quadratic form per trial, and checks the
//!   standardized deviations against the predicted normal law.
//!
//! Agreement between the two sides is the whole point: every prediction the
//! analytic half produces can be replayed against direct Monte Carlo through
//! the same [`profiles::VarianceProfile`] value.
//!
//! All per-interferer averages in this crate are normalized by `K`, the
//! number of interfering columns. Column `0` of a profile is the user of
//! interest and never enters the fixed-point system; it only weights the
//! final SNR functionals.

pub mod equilibrium;
pub mod fluctuations;
pub mod profiles;
pub mod report;
pub mod simulator;

mod error;

pub use error::{Error, Result};

pub use equilibrium::{FixedPointSolution, SeparableSolution, SolverSettings};
pub use fluctuations::CltQuantities;
pub use profiles::{
    ChannelRealization, PowerClass, PowerClassTable, SeparableFactors, VarianceProfile,
};
pub use simulator::{EntryLaw, HistogramBin, Moments, NormalityReport, TrialSet};
