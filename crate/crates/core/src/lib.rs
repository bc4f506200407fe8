//! Regularized geodesics of impulsive gravitational wave space-times.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod asymptotics;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod fit;
pub mod impulse;
pub mod limit;
pub mod manifold;
pub mod ode;
pub mod quadrature;
pub mod scenario;

pub use error::{Error, Result};
pub use impulse::{DeltaNet, WaveProfile};
pub use manifold::ChartManifold;
