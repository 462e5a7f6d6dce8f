//! Capacity planning for cryptomining facilities that sell flexibility into
//! ancillary-service markets.
//!
//! A facility runs several machine types with different per-MWh mining
//! rewards. Capacity committed to a program earns its price up front; when
//! the operator deploys a fraction of it, the least profitable machines are
//! switched off first. The crate covers:
//!
//! * [`deployment`]: greedy shutdown order and the realized per-slot cost,
//! * [`sgd`]: projected stochastic subgradient descent on the expected cost,
//! * [`regulation`]: closed-form expected cost for coupled reg-up/reg-down,
//! * [`single_machine`]: linear and mean-variance solutions for one machine type,
//! * [`online`]: online gradient descent with static-regret accounting,
//! * [`traces`]: market trace ingestion and synthesis,
//! * [`oracle`]: brute-force and Monte Carlo references plus strategy comparison,
//! * [`verify`]: the oracle agreement suites, runnable from the CLI.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deployment;
pub mod error;
pub mod fleet;
pub mod online;
pub mod oracle;
pub mod program;
pub mod regulation;
pub mod sgd;
pub mod single_machine;
pub mod traces;
pub mod verify;

pub use deployment::{Allocation, DeploymentSample, Profile};
pub use error::{Error, Result};
pub use fleet::{FleetSpec, MachineType};
pub use program::{DeploymentModel, Direction, ProgramSpec};
