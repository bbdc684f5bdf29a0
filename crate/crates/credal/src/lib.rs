//! Plausible-reasoning toolkit: compiles uncertainty-qualified Horn-clause
//! rule bases into acyclic AND/OR inference networks and executes them under
//! real-time constraints.
//!
//! The pipeline: a rule base ([`kb`]) is compiled ([`compile`]) into a
//! dependency network whose nodes carry `[LB, UB]` confidence intervals
//! ([`calculus`]). The runtime ([`engine`]) propagates evidence through the
//! network incrementally, resolving non-monotonic loops ([`nonmono`]) to
//! extensions. A task executive ([`exec`]) schedules queries against
//! deadlines using per-node timing profiles, and a scenario simulator
//! ([`sim`]) exercises the whole stack against synthetic ground truth.

pub mod calculus;
pub mod compile;
pub mod engine;
pub mod exec;
pub mod kb;
pub mod nonmono;
pub mod sim;

pub use calculus::{Confidence, TnormFamily, UncertaintyInterval};
