//! Linear solves for step (R2) and the alternating reconstruction driver.

mod alone;
mod cg;
mod isometry;
mod trace;

pub use alone::{alone_reconstruct, regularized_patch_sum, AloneConfig, AloneOptions, AloneOutcome, StopReason};
pub use cg::{pcg_solve, solve_volume, CgOutcome};
pub use isometry::closed_form_isometry;
pub use trace::{IterationRecord, Trace, TRACE_HEADER};
