//! Replayable online decision-making for micro-randomized intervention
//! studies.
//!
//! - [`policy`]: conjugate Thompson-sampling bandit as pure functions.
//! - [`ledger`]: append-only, hash-chained event log.
//! - [`runtime`]: the deployment loop (scheduling, imputation, fallback,
//!   nightly updates, version registration).
//! - [`twin`]: digital-twin environments, trials, evaluation, tuning.
//! - [`replay`]: bit-exact reconstruction and verification of a ledger.
//! - [`monitor`]: fidelity metrics, alert rules, reports.
//! - [`cli`]: the `intervene` command.

pub mod cli;
pub mod codec;
pub mod config;
pub mod ledger;
pub mod monitor;
pub mod par;
pub mod policy;
pub mod replay;
pub mod runtime;
pub mod twin;
