//! The sequential decision process over job-allocation graphs: states are
//! graphs, actions are selection edges, each step pays reward 1 and removes
//! the chosen edge plus the chooser's now-conflicting edges, and an episode
//! ends when the selection set is empty.
//!
//! The environment is a pure state-transition library; training loops own
//! their own iteration and randomness.

use std::sync::Arc;

use thiserror::Error;

use crate::graph::{
    Allocation, Assignment, ConflictRemovalMode, GraphError, JobAllocationGraph, Violation,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid graph: {0:?}")]
    InvalidGraph(Vec<Violation>),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("policy returned unavailable action {{p{person}, j{job}}}")]
    PolicyReturnedUnavailableAction { person: usize, job: usize },
}

/// An episode state: the current graph plus the trace of chosen assignments.
#[derive(Clone, Debug)]
pub struct EnvState {
    initial: Arc<JobAllocationGraph>,
    graph: Arc<JobAllocationGraph>,
    chosen: Vec<Assignment>,
}

impl PartialEq for EnvState {
    fn eq(&self, other: &Self) -> bool {
        self.graph == other.graph && self.chosen == other.chosen && self.initial == other.initial
    }
}

impl EnvState {
    pub fn graph(&self) -> &Arc<JobAllocationGraph> {
        &self.graph
    }

    pub fn initial_graph(&self) -> &Arc<JobAllocationGraph> {
        &self.initial
    }

    pub fn chosen(&self) -> &[Assignment] {
        &self.chosen
    }

    pub fn steps_taken(&self) -> usize {
        self.chosen.len()
    }

    /// Available actions are exactly the remaining selection edges.
    pub fn actions(&self) -> &[Assignment] {
        self.graph.selection()
    }

    pub fn is_terminal(&self) -> bool {
        self.graph.selection().is_empty()
    }

    /// The trace as an allocation against the initial graph.
    pub fn allocation(&self) -> Allocation {
        Allocation::new(self.chosen.clone(), &self.initial)
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// One step of an episode trace: which edge was taken and how many selection
/// edges remained afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub step: usize,
    pub person: usize,
    pub job: usize,
    pub remaining: usize,
}

/// Renders a trace in the text format `step person job remaining`, one line
/// per step.
pub fn render_trace(trace: &[TraceStep]) -> String {
    let mut out = String::new();
    for t in trace {
        out.push_str(&format!(
            "{} {} {} {}\n",
            t.step, t.person, t.job, t.remaining
        ));
    }
    out
}

/// The environment configuration: how conflict arcs translate into removals.
#[derive(Clone, Copy, Debug, Default)]
pub struct JobAllocEnv {
    pub mode: ConflictRemovalMode,
}

impl JobAllocEnv {
    pub fn new(mode: ConflictRemovalMode) -> Self {
        Self { mode }
    }

    /// Wraps a graph as a fresh episode state with an empty trace.
    pub fn reset(&self, graph: JobAllocationGraph) -> Result<EnvState, EnvError> {
        let violations = graph.validate();
        if !violations.is_empty() {
            return Err(EnvError::InvalidGraph(violations));
        }
        let graph = Arc::new(graph);
        Ok(EnvState {
            initial: Arc::clone(&graph),
            graph,
            chosen: Vec::new(),
        })
    }

    /// Applies one action: reward is always 1, done exactly when the next
    /// selection set is empty.
    pub fn step(&self, state: &EnvState, action: Assignment) -> Result<StepOutcome, EnvError> {
        let next_graph = state.graph.apply_assignment(action, self.mode)?;
        let done = next_graph.selection().is_empty();
        let mut chosen = state.chosen.clone();
        chosen.push(action);
        Ok(StepOutcome {
            next_state: EnvState {
                initial: Arc::clone(&state.initial),
                graph: Arc::new(next_graph),
                chosen,
            },
            reward: 1.0,
            done,
        })
    }

    /// Runs a full episode under `policy`, returning the resulting allocation
    /// and the total (undiscounted) reward, which always equals its size.
    pub fn rollout(
        &self,
        graph: JobAllocationGraph,
        mut policy: impl FnMut(&EnvState) -> Assignment,
    ) -> Result<(Allocation, f64), EnvError> {
        let (alloc, reward, _) = self.rollout_traced(graph, &mut policy)?;
        Ok((alloc, reward))
    }

    /// As [`Self::rollout`], also recording the per-step trace.
    pub fn rollout_traced(
        &self,
        graph: JobAllocationGraph,
        mut policy: impl FnMut(&EnvState) -> Assignment,
    ) -> Result<(Allocation, f64, Vec<TraceStep>), EnvError> {
        let mut state = self.reset(graph)?;
        let mut total = 0.0;
        let mut trace = Vec::new();
        while !state.is_terminal() {
            let action = policy(&state);
            if !state.graph.contains_selection(action) {
                return Err(EnvError::PolicyReturnedUnavailableAction {
                    person: action.person,
                    job: action.job,
                });
            }
            let outcome = self.step(&state, action)?;
            total += outcome.reward;
            trace.push(TraceStep {
                step: trace.len(),
                person: action.person,
                job: action.job,
                remaining: outcome.next_state.graph().selection().len(),
            });
            state = outcome.next_state;
        }
        Ok((state.allocation(), total, trace))
    }
}
