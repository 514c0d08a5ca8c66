//! OneDSE: trace-driven design space exploration for out-of-order CPU cores.
//!
//! The crate couples a deterministic trace-driven microarchitecture simulator
//! (the ground-truth oracle) with trace-conditioned neural predictors:
//!
//! * [`trace`]: instruction trace records, synthetic workload generation,
//!   chunking and tokenization.
//! * [`design_space`]: the 68-parameter microarchitecture catalog, rank
//!   encoding of configurations, and the subsystem partition.
//! * [`simulator`]: the out-of-order pipeline model that produces event
//!   counters for a (chunk, configuration) pair.
//! * [`metrics`]: IPC, weighted power/area estimates, and the IPC-per-area
//!   objective.
//! * [`neural`]: a small f64 tensor kernel with hand-written reverse-mode
//!   gradients (embeddings, windowed attention encoder, MLP head, Adam).
//! * [`trace_models`]: the TrACE predictor pair. P-mode maps
//!   (trace, configuration) to a metric; M-mode maps (trace, metric target)
//!   to parameter ranks.
//! * [`datagen`]: dataset grids of simulator runs, splits, and the CSV
//!   serialization used by training tools.
//! * [`mast`]: metric-space search. Sweeps a constraint schedule through an
//!   M-mode model without touching the simulator.
//! * [`metaheuristics`]: GA/ABC/exhaustive search over rank space against an
//!   explicit evaluator with call accounting.
//! * [`smart`]: multi-agent fine-tuning of per-subsystem M-mode models with
//!   a shared simulator-in-the-loop reward term.

pub mod datagen;
pub mod design_space;
pub mod error;
pub mod mast;
pub mod metaheuristics;
pub mod metrics;
pub mod neural;
pub mod report;
pub mod simulator;
pub mod smart;
pub mod trace;
pub mod trace_models;
pub(crate) mod util;

pub use error::{Error, Result};
pub use util::{derive_seed, fmt_f64};
