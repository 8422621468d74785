//! Structured state-space models with a prescribed L2-gain bound.
//!
//! The crate provides:
//! - dense numeric kernels sized for control-design problems ([`numerics`]);
//! - discrete-time LTI state-space systems with gain certification and two
//!   simulation paths ([`lti`]);
//! - two smooth, surjective-onto-feasible parametrizations of gain-bounded
//!   systems — a complete one for square systems ([`psi`]) and a structured
//!   conservative one for arbitrary shapes ([`kappa`]);
//! - Lipschitz-bounded MLP nonlinearities ([`mlp`]);
//! - deep models built from those layers whose end-to-end L2 gain is bounded
//!   by construction ([`model`]);
//! - gradient-based training with exact reverse-mode derivatives ([`train`]);
//! - a three-tank process benchmark and dataset tooling ([`tank`]).

pub mod kappa;
pub mod lti;
pub mod mlp;
pub mod model;
pub mod numerics;
pub mod psi;
pub mod tank;
pub mod tape;
pub mod train;
