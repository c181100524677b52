//! Rating-transition matrices as an SDE on the Lie group of stochastic
//! matrices.
//!
//! The crate covers the whole chain from data to valuation:
//!
//! * [`lie`]: generator basis, matrix exponential, verification operators.
//! * [`cohort`]: repair of cohort matrices with withdrawals and the
//!   distance/adjustment matrices used as an uncertainty target.
//! * [`sde`]: coefficient SDEs, Girsanov measure changes and the geometric
//!   Euler-Maruyama scheme.
//! * [`calibrate`] and [`properties`]: least-squares calibration under the
//!   historical and risk-neutral measure, rating-property diagnostics.
//! * [`ssa`]: nested Gillespie simulation of rating processes.
//! * [`xva`]: portfolio simulation, rating-trigger collateral and
//!   CVA/DVA/BVA.
//!
//! Monte Carlo work runs through [`Executor`]; all random numbers come from
//! counter-based streams keyed by logical indices, so results do not depend
//! on the executor or the number of threads.

pub mod calibrate;
pub mod cohort;
pub mod error;
pub mod exec;
pub mod io;
pub mod lie;
pub mod lm;
pub mod matrix;
pub mod properties;
pub mod reference_data;
pub mod rng;
pub mod sde;
pub mod ssa;
pub mod xva;

pub use error::{Error, Result};
pub use exec::Executor;
pub use lie::{AlgebraCoeffs, BasisIndexMap, StochasticMatrix};
pub use matrix::SquareMatrix;
pub use sde::{MeasureChange, MeasureKind, SdeParams, TimeGrid};
