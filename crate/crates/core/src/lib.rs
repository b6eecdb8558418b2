//! 1.5D relativistic Vlasov-Maxwell kinetic solver on the unit interval.
//!
//! Runs the same plasma under a scaled external magnetic mirror, a finite
//! mirror, or a specular-reflecting wall, and measures how closely the mirror
//! reproduces the wall as the scaling integer N grows: reflection-time
//! identities, perturbed-trajectory scalings, weak-form residuals, the layer
//! coupling term, and field/moment gaps along an N ladder.

pub mod confinement;
pub mod harness;
pub mod maxwell;
pub mod ode;
pub mod pic;
pub mod quad;
pub mod sampling;
pub mod trajectory;
pub mod weakform;
