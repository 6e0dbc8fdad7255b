//! Robust optimal stopping of one-dimensional diffusions under drift
//! ambiguity, and the crash-scenario stopping model via its reduction
//! to an ordinary stopping problem plus a Dynkin game.
//!
//! The value function of the ambiguity problem
//! `v(x) = sup_τ inf_P E_x^P[e^{-rτ} g(X_τ)]` is the smallest majorant
//! of the reward g inside the two-parameter family {λ·h_c}, where h_c
//! smoothly merges r-harmonic functions of the (+κ)- and (−κ)-shifted
//! diffusion at the merge point c. The crate provides:
//!
//! - closed-form h_c for arithmetic Brownian motion ([`closed_form`]),
//! - numerically tabulated fundamental solutions and general-diffusion
//!   h_c via Riccati integration ([`ode`]),
//! - the majorant solver: values, stopping sets, worst-case priors
//!   ([`majorant`]),
//! - the crash model: post-crash stopping value, Dynkin-game reduction,
//!   and the geometric-Brownian call solution ([`crash`]),
//! - independent discrete-time oracles: robust Snell trees, Dynkin
//!   backward induction, Euler–Maruyama Monte Carlo ([`oracle`]),
//! - the end-to-end verification suite behind `ambistop verify`
//!   ([`verify`]).

pub mod closed_form;
pub mod config;
pub mod crash;
pub mod error;
pub mod majorant;
pub mod ode;
pub mod oracle;
pub mod problem;
pub mod verify;

pub use error::{Error, Result};
