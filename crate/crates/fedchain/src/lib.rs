//! Deterministic simulator for blockchain-based federated learning with
//! top-k compressed communications.
//!
//! The crate models a serverless federated-learning system in which clients
//! train locally, compress their model updates with top-k sparsification and
//! error feedback, and publish them through a proof-of-work mining race into
//! a hash-linked ledger. Alongside the simulation it provides the analytic
//! round-time model `h(k, lambda)`, a convergence-bound objective built from
//! constants estimated in the first round, and an alternate-convex-search
//! optimizer that picks the compression level `k` and block generation rate
//! `lambda` jointly.
//!
//! Modules map onto the moving parts:
//!
//! - [`learning`]: MLP model, loss/gradient, synthetic federated datasets.
//! - [`compression`]: top-k operator, energy bound, payload sizing, wire format.
//! - [`protocol`]: per-client rounds with error feedback, aggregation, the
//!   round/experiment loop with a virtual clock.
//! - [`chain`]: mining race with fork retries, blocks, verifiable ledger.
//! - [`timecost`]: wireless link model and the analytic round-time function.
//! - [`convergence`]: constant estimation and the bound objective.
//! - [`optimizer`]: golden-section search and alternate convex search.
//! - [`harness`]: configuration, experiment orchestration, CLI plumbing.
//!
//! Every run is fully determined by its configuration and seed; the virtual
//! clock never sleeps.

pub mod chain;
pub mod compression;
pub mod convergence;
pub mod harness;
pub mod learning;
pub mod optimizer;
pub mod protocol;
pub mod rngstream;
pub mod timecost;

pub use learning::ParamVector;
