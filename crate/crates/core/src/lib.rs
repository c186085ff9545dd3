//! Observability analysis of a uniform cantilever Euler-Bernoulli beam.
//!
//! The crate covers the full pipeline used to reason about strain-sensor
//! layouts on a clamped-free beam:
//!
//! * [`beam_model`]: characteristic roots, mode shapes, curvatures and the
//!   truncated modal state-space model.
//! * [`simulate`]: closed-form and RK4 propagation, noisy strain synthesis and
//!   the ±ε perturbation runs behind empirical Gramians.
//! * [`gramian`]: truncated and continuum observability Gramians (analytical
//!   and empirical), the observability matrix and the single-sensor
//!   determinant test.
//! * [`placement`]: observability measures, the convex sensor-activation
//!   relaxation, rounding and baseline layouts.
//! * [`estimate`]: an unscented Kalman filter on the modal model and a
//!   Monte-Carlo covariance comparison between layouts.
//! * [`export`]: CSV/JSON/SVG writers shared by the command-line driver.

pub mod beam_model;
pub mod error;
pub mod estimate;
pub mod export;
pub mod gramian;
pub mod placement;
pub mod quadrature;
pub mod simulate;

pub use beam_model::{
    assemble_truncated_system, build_modal_basis, find_characteristic_roots,
    project_initial_condition, BeamConfig, BeamSpec, InitialCondition, ModalBasis, TruncatedSystem,
};
pub use error::{Error, Result};
pub use gramian::{Gramian, GramianKind};
pub use placement::{MetricSet, PlacementSolution};
pub use quadrature::TimeQuadrature;
pub use simulate::{TimeGrid, Trajectory};
