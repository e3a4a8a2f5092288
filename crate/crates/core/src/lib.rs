//! Generalized attention flow, without `std`.
//!
//! The crate turns the attention weights of a Transformer encoder (and their
//! gradients) into a layered capacity network, solves a log-barrier
//! regularized maximum flow on it and reads per-token Shapley attributions
//! off the unique optimal flow. It also carries the exact combinatorial
//! max-flow used as a ground-truth oracle and the evaluation metrics used to
//! score attributions (AOPC, log-odds, classification metrics and the
//! almost-stochastic-order test).
//!
//! Everything here is pure computation over `alloc` collections. File
//! formats, JSON and the command line live in the `gaflow` crate.

#![no_std]

extern crate alloc;

pub mod attribution;
pub mod barrier;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod info_tensor;
mod linalg;
pub mod maxflow;
mod special;
pub mod synthetic;
pub mod tensor;

pub use attribution::{
    attribute, corollary1_demo, payoff, ranking, shapley_check, shapley_exact, AttributionVector,
    AxiomReport, Corollary1Report,
};
pub use barrier::{BarrierConfig, BarrierSolver};
pub use error::{Error, Result};
pub use evaluation::{aopc, aso, cls_metrics, lodds, AsoConfig, AsoResult, MaskDirection, MaskedRecord};
pub use graph::{build_graph, to_circulation, CirculationProblem, Direction, LayeredGraph};
pub use info_tensor::{aggregate, AggregationMode, AttentionBundle, InfoTensor};
pub use maxflow::{compare_directions, max_flow_exact, CapacityScale, FlowSolution, SolverKind};
pub use tensor::DenseTensor;
