//! Exact maximum-allocation solvers.
//!
//! The production solver exploits per-person separability: the feasibility
//! constraint only ever couples two assignments of the same person, so the
//! optimum is the sum over people of the maximum independent set in the
//! conflict graph induced on that person's eligible jobs (arcs symmetrized).
//! Each per-person MIS is solved by branch and bound. A whole-graph
//! backtracking enumeration is kept alongside as the independent reference;
//! the decomposition is property-tested against it rather than assumed.

use crate::graph::{Allocation, Assignment, JobAllocationGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimumMethod {
    DecomposedBnb,
    BruteForce,
}

#[derive(Clone, Debug)]
pub struct OptimumResult {
    pub size: usize,
    pub witness: Allocation,
    pub method: OptimumMethod,
    /// Search nodes explored across all subproblems.
    pub node_count: u64,
    /// False when a node budget tripped; `size`/`witness` are then only a
    /// best-known lower bound.
    pub optimal: bool,
}

/// Word-packed vertex sets for the per-person subproblems.
#[derive(Clone, Debug, PartialEq, Eq)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn empty(n: usize) -> Self {
        Self {
            words: vec![0; n.div_ceil(64)],
        }
    }

    fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    fn contains(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    fn subtract(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    fn intersect_count(&self, other: &BitSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }
}

/// Branch-and-bound maximum independent set over an undirected adjacency
/// given as bitsets. Deterministic: all choices break ties by lowest index.
struct MisSolver<'a> {
    adj: &'a [BitSet],
    n: usize,
    best: Vec<usize>,
    nodes: u64,
    budget: u64,
    aborted: bool,
}

impl<'a> MisSolver<'a> {
    fn new(adj: &'a [BitSet], budget: u64) -> Self {
        let n = adj.len();
        Self {
            adj,
            n,
            best: Vec::new(),
            nodes: 0,
            budget,
            aborted: false,
        }
    }

    /// Greedy min-degree independent set: a fast initial lower bound.
    fn greedy_seed(&self) -> Vec<usize> {
        let mut candidates = BitSet::full(self.n);
        let mut picked = Vec::new();
        while !candidates.is_empty() {
            let v = candidates
                .iter()
                .min_by_key(|&v| (self.adj[v].intersect_count(&candidates), v))
                .unwrap();
            picked.push(v);
            candidates.remove(v);
            candidates.subtract(&self.adj[v]);
        }
        picked
    }

    /// Greedy clique cover of `candidates`; its size bounds any independent
    /// set inside.
    fn clique_cover_bound(&self, candidates: &BitSet) -> usize {
        let mut cliques: Vec<(Vec<usize>, BitSet)> = Vec::new();
        for v in candidates.iter() {
            let mut placed = false;
            for (members, common) in cliques.iter_mut() {
                if common.contains(v) {
                    members.push(v);
                    let mut next = BitSet::empty(self.n);
                    for (a, b) in next.words.iter_mut().zip(&common.words) {
                        *a = *b;
                    }
                    for (a, b) in next.words.iter_mut().zip(&self.adj[v].words) {
                        *a &= b;
                    }
                    *common = next;
                    placed = true;
                    break;
                }
            }
            if !placed {
                cliques.push((vec![v], self.adj[v].clone()));
            }
        }
        cliques.len()
    }

    fn solve(&mut self) -> Vec<usize> {
        self.best = self.greedy_seed();
        let candidates = BitSet::full(self.n);
        let mut current = Vec::new();
        self.branch(candidates, &mut current);
        std::mem::take(&mut self.best)
    }

    fn branch(&mut self, mut candidates: BitSet, current: &mut Vec<usize>) {
        if self.aborted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.aborted = true;
            return;
        }
        // Pull in vertices of candidate-degree 0 or 1 for free; for degree 1
        // the vertex is at least as good as its lone neighbor.
        loop {
            let mut progress = false;
            let verts: Vec<usize> = candidates.iter().collect();
            for v in verts {
                if !candidates.contains(v) {
                    continue;
                }
                let deg = self.adj[v].intersect_count(&candidates);
                if deg <= 1 {
                    current.push(v);
                    candidates.remove(v);
                    candidates.subtract(&self.adj[v]);
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
        if candidates.is_empty() {
            if current.len() > self.best.len() {
                self.best = current.clone();
            }
        } else if current.len() + self.clique_cover_bound(&candidates) > self.best.len() {
            // Branch on the highest-degree candidate (lowest index on ties).
            let v = candidates
                .iter()
                .max_by_key(|&v| (self.adj[v].intersect_count(&candidates), usize::MAX - v))
                .unwrap();
            let depth = current.len();
            // Include v.
            let mut with_v = candidates.clone();
            with_v.remove(v);
            with_v.subtract(&self.adj[v]);
            current.push(v);
            self.branch(with_v, current);
            current.truncate(depth);
            // Exclude v.
            candidates.remove(v);
            self.branch(candidates, current);
            current.truncate(depth);
        }
        // Undo the free picks for the caller.
    }
}

/// Default per-person search-node budget.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// Exact maximum allocation via the per-person decomposition. `budget` caps
/// the branch-and-bound nodes per person; on exhaustion the result is the
/// best allocation found so far with `optimal` cleared.
pub fn exact_optimum(g: &JobAllocationGraph, budget: u64) -> OptimumResult {
    let mut assignments = Vec::new();
    let mut nodes = 0u64;
    let mut optimal = true;
    for person in 0..g.n_people() {
        let eligible = g.person_jobs(person);
        let n = eligible.len();
        if n == 0 {
            continue;
        }
        // Symmetrized conflict adjacency restricted to the eligible jobs.
        let mut adj = vec![BitSet::empty(n); n];
        for (i, &ja) in eligible.iter().enumerate() {
            for (k, &jb) in eligible.iter().enumerate().skip(i + 1) {
                if g.has_conflict(ja, jb) || g.has_conflict(jb, ja) {
                    adj[i].insert(k);
                    adj[k].insert(i);
                }
            }
        }
        let mut solver = MisSolver::new(&adj, budget);
        let picked = solver.solve();
        nodes += solver.nodes;
        if solver.aborted {
            optimal = false;
        }
        for local in picked {
            assignments.push(Assignment::new(person, eligible[local]));
        }
    }
    let witness = Allocation::new(assignments, g);
    OptimumResult {
        size: witness.size(),
        witness,
        method: OptimumMethod::DecomposedBnb,
        node_count: nodes,
        optimal,
    }
}

/// Whole-graph exhaustive enumeration over feasible subsets of the selection
/// set (with subset-size pruning only). Exponential; the reference oracle for
/// tiny instances.
pub fn brute_force_optimum(g: &JobAllocationGraph) -> OptimumResult {
    let edges = g.selection();
    let mut best: Vec<Assignment> = Vec::new();
    let mut current: Vec<Assignment> = Vec::new();
    let mut nodes = 0u64;
    fn compatible(g: &JobAllocationGraph, current: &[Assignment], e: Assignment) -> bool {
        current.iter().all(|c| {
            c.person != e.person || (!g.has_conflict(c.job, e.job) && !g.has_conflict(e.job, c.job))
        })
    }
    fn recurse(
        g: &JobAllocationGraph,
        edges: &[Assignment],
        idx: usize,
        current: &mut Vec<Assignment>,
        best: &mut Vec<Assignment>,
        nodes: &mut u64,
    ) {
        *nodes += 1;
        if current.len() > best.len() {
            *best = current.clone();
        }
        if idx == edges.len() || current.len() + (edges.len() - idx) <= best.len() {
            return;
        }
        if compatible(g, current, edges[idx]) {
            current.push(edges[idx]);
            recurse(g, edges, idx + 1, current, best, nodes);
            current.pop();
        }
        recurse(g, edges, idx + 1, current, best, nodes);
    }
    recurse(g, edges, 0, &mut current, &mut best, &mut nodes);
    let witness = Allocation::new(best, g);
    OptimumResult {
        size: witness.size(),
        witness,
        method: OptimumMethod::BruteForce,
        node_count: nodes,
        optimal: true,
    }
}
