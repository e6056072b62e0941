//! Calibrated signaling for second-price auctions with uncertain click outcomes.
//!
//! The prior over click profiles is symmetric and summarized by the outcome-sum
//! distribution. A signaling is built in two stages: per-class bid marginals are
//! chosen first (`marginals`), then each class is coupled into a joint bid plan
//! (`transport`). `signaling` assembles and evaluates the result, `ir` builds the
//! individually rational approximation, `oracle` holds brute-force verifiers and
//! `sim` runs Monte-Carlo auctions.

pub mod error;
pub mod ir;
pub mod lp;
pub mod marginals;
pub mod oracle;
pub mod prior;
pub mod signaling;
pub mod sim;
pub mod sweep;
pub mod transport;

pub use error::{Error, Result};
pub use marginals::{DiscreteDist, MarginalFamily};
pub use prior::PriorBySum;
pub use signaling::CalibratedSignaling;
pub use transport::TransportPlan;

/// Support values closer than this are treated as the same atom.
pub const ATOM_TOL: f64 = 1e-12;
