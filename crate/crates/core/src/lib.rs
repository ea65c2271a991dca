//! Small-gain analysis for infinite networks of input-to-state stable systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`kfunc`]: comparison functions (class K, K∞, positive definite)
//! - [`gainop`]: max-type gain operators, iteration and the Kleene closure `Q`
//! - [`sgc`]: small-gain condition checkers and stability of `s ↦ Γ(s)`
//! - [`path`]: paths of strict decay `σ(r) = Q_θ(r𝟙)` and their verification
//! - [`network`]: truncated ODE networks, composite Lyapunov functions and
//!   trajectory-level checks
//!
//! Every verdict computed on a truncated operator or a sampling grid carries a
//! scope string saying so.

pub mod envelope;
pub mod gainop;
pub mod kfunc;
pub mod network;
pub mod path;
pub mod sgc;
