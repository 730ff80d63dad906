//! Autonomous exploration in piecewise-stationary controlled Markov
//! processes.
//!
//! - [`cmp`]: kernels with a RESET action, change schedules, a seeded simulator
//! - [`oracle`]: exact navigation times, `S_L` and `S→_L` on a known kernel
//! - [`explorer`]: a resumable two-phase explorer for stationary kernels
//! - [`mnm`]: the round-based meta-algorithm for changing kernels
//! - [`runlog`]: the event log a run emits
//! - [`metrics`]: exploration-step accounting and the theoretical bound

pub mod cmp;
pub mod explorer;
pub mod metrics;
pub mod mnm;
pub mod oracle;
pub mod runlog;

pub use cmp::{ActionId, ChangeSchedule, CmpError, Kernel, KernelBuilder, Simulator, StateId};
pub use explorer::{ExplorerConfig, ExplorerRun, Hypothesis, Phase};
pub use mnm::{Mnm, MnmConfig};
pub use oracle::{NavTime, Policy};
pub use runlog::RunLog;
