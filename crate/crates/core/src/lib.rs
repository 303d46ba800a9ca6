//! Energy-minimising Modified Lagrangian Mean (MLM) background states.
//!
//! Given a discrete distribution of mass over zonal angular momentum and
//! potential temperature, the crate computes the surface pressure `p̄(s)`
//! (in sine-of-latitude `s`) and the rearrangement of conserved labels that
//! minimises total energy. The free-surface problem is solved by
//! capping the pressure axis at a height `P`, adding a zero-cost reservoir
//! atom that absorbs the empty part of the strip `B × [0, P]`, and maximising
//! the concave Kantorovich dual of the resulting semi-discrete transport
//! problem.
//!
//! Module map:
//!
//! - [`cost`]: vertically separable costs `c((s,p),y) = g(s,y) + w(y) h(p)`.
//! - [`measures`]: target measures, the cap height and the extended problem.
//! - [`envelope`]: exact per-column Laguerre geometry (lower envelope of lines).
//! - [`dual`]: dual value, cell masses, the ascent solver and `τ_ψ` bisection.
//! - [`state`]: extraction, transport map, derived fields and file export.
//! - [`oracle`]: exact discrete transport and brute-force surfaces for tiny cases.
//! - [`harness`]: gradient checks and stability sweeps.

pub mod cost;
pub mod dual;
pub mod envelope;
pub mod harness;
pub mod measures;
pub mod oracle;
pub mod quadrature;
pub mod state;

mod error;

pub use cost::{CostConstants, CostKind, Interval, SeparableCost, SeparableParts, TargetBox, TargetPoint};
pub use dual::{solve, DualState, SolveOptions};
pub use envelope::{ColumnEnvelope, Owner};
pub use error::{Error, Result};
pub use measures::{DiscreteMeasure, ExtendedProblem, MeasureFormat};
pub use state::{extract_state, MlmState};
