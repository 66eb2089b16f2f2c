//! Numerical toolkit for rate-distortion theory of mixed-state ensemble
//! sources.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] and [`qcore`]: complex Hermitian linear algebra, labelled
//!   tensor layouts, entropies, fidelity and purification.
//! * [`ensemble`]: ensemble sources with side information, their cq states
//!   and purifications.
//! * [`channel`]: CPTP maps stored as Choi matrices.
//! * [`kidecomp`]: Koashi–Imoto decomposition and the blind compression rate.
//! * [`distortion`]: distortion functions on the output cq state.
//! * [`rdsolver`], [`epsolver`], [`rateregion`]: the rate-distortion solvers.
//! * [`verify`]: seeded property suites shared by the CLI and the tests.
//!
//! All entropies are in bits.

pub mod channel;
pub mod distortion;
pub mod ensemble;
pub mod epsolver;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod kidecomp;
pub mod linalg;
pub(crate) mod optim;
pub mod qcore;
pub mod rateregion;
pub mod rdsolver;
pub mod verify;

pub use channel::{Channel, Isometry};
pub use distortion::{Distortion, DistortionKind};
pub use ensemble::{Ensemble, EnsembleItem, PurifiedSource};
pub use error::{QrdError, Result};
pub use linalg::CMatrix;
pub use qcore::{DensityOp, DimLayout, PureState};
