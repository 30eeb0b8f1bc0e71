//! A workbench for learning job-allocation policies.
//!
//! Job-allocation instances are bipartite people-to-jobs graphs with directed
//! job-to-job conflict arcs. Picking assignments one at a time is a
//! sequential decision process; this crate provides the graph types and
//! validators, seeded synthetic instance generators, the decision-process
//! environment, a graph-attention Q-network with hand-rolled exact gradients,
//! a Double-DQN trainer with prioritized replay, greedy/random baselines, an
//! exact branch-and-bound oracle, and a benchmark harness that reports
//! approximation ratios against the oracle.

#![forbid(unsafe_code)]

pub mod baselines;
pub mod checkpoint;
pub mod env;
pub mod gen;
pub mod graph;
pub mod harness;
pub mod optim;
pub mod oracle;
pub mod par;
pub mod qnet;
pub mod replay;
pub mod seeds;
pub mod trainer;

pub use baselines::{approximation_ratio, greedy_action, random_action, PolicyKind};
pub use env::{JobAllocEnv, StepOutcome};
pub use gen::{dataset_stats, generate, DatasetStats, GeneratorConfig, GraphFamily};
pub use graph::{
    validate_allocation, Allocation, Assignment, ConflictRemovalMode, JobAllocationGraph,
};
pub use oracle::{brute_force_optimum, exact_optimum, OptimumResult};
pub use qnet::{q_backward, q_forward, q_forward_with_tape, QNetworkParams};
pub use replay::{ReplayBuffer, TransitionSample};
pub use trainer::{train, TrainConfig, TrainOutcome};
