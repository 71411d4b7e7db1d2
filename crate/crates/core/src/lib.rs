//! Curve shortening flow on Riemannian model manifolds given in a single
//! chart, with space-form ODE reductions, ramp diagnostics and evolving
//! metrics.

// `!(x <= limit)` is deliberate throughout: NaN has to trip the guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod curve;
pub mod evolving_metric;
pub mod flow;
pub mod generators;
pub mod io;
pub mod manifold;
pub mod par;
pub mod ramp;
pub mod spaceform_ode;
pub mod spline;
