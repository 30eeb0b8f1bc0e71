//! Job-allocation graphs: a bipartite selection set between people and jobs
//! plus directed job-to-job conflict arcs.
//!
//! The graph doubles as the state of the allocation MDP, so values are
//! immutable after construction; [`JobAllocationGraph::apply_assignment`]
//! returns a new graph instead of mutating in place.

use ndarray::Array2;
use thiserror::Error;

/// One (person, job) selection edge. Used both as a member of the selection
/// set and as the action unit of the environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Assignment {
    pub person: usize,
    pub job: usize,
}

impl Assignment {
    pub fn new(person: usize, job: usize) -> Self {
        Self { person, job }
    }
}

/// Which conflict arcs of the chosen job knock out the chooser's other edges.
///
/// `OutgoingOnly` removes `{p, j_i}` only for arcs `(j, j_i)`. That leaves
/// sequences that can end in an allocation where some person holds two jobs
/// connected by an arc pointing *into* the earlier choice, so `Bidirectional`
/// (the default) also removes `{p, j_i}` for arcs `(j_i, j)` and is the only
/// mode that guarantees feasible rollouts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConflictRemovalMode {
    #[default]
    Bidirectional,
    OutgoingOnly,
}

/// A single structural defect found while validating candidate edge sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    SelectionPersonOutOfRange { person: usize, job: usize },
    SelectionJobOutOfRange { person: usize, job: usize },
    /// A conflict arc endpoint is not a job index.
    ConflictNotJobToJob { from: usize, to: usize },
    SelfConflict { job: usize },
    DuplicateSelection { person: usize, job: usize },
    DuplicateConflict { from: usize, to: usize },
    /// A derived adjacency index disagrees with the edge sets.
    AdjacencyInconsistent,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid job allocation graph: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("action {{p{person}, j{job}}} is not an available selection edge")]
    ActionNotAvailable { person: usize, job: usize },
    #[error("allocation contains {{p{person}, j{job}}} which is not in the selection set")]
    AssignmentNotInSelection { person: usize, job: usize },
    #[error("malformed instance record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
}

/// Bipartite people-to-jobs selection edges plus directed job-to-job conflict
/// arcs, with derived adjacency indices kept alongside the canonical edge
/// lists.
#[derive(Clone, Debug)]
pub struct JobAllocationGraph {
    n_people: usize,
    n_jobs: usize,
    selection: Vec<Assignment>,     // sorted by (person, job)
    conflicts: Vec<(usize, usize)>, // sorted by (from, to)
    person_jobs: Vec<Vec<usize>>,
    job_people: Vec<Vec<usize>>,
    conflict_out: Vec<Vec<usize>>,
    conflict_in: Vec<Vec<usize>>,
    fingerprint: u64,
}

impl PartialEq for JobAllocationGraph {
    fn eq(&self, other: &Self) -> bool {
        self.n_people == other.n_people
            && self.n_jobs == other.n_jobs
            && self.selection == other.selection
            && self.conflicts == other.conflicts
    }
}

impl Eq for JobAllocationGraph {}

/// Validates arbitrary candidate edge sets against the structural rules:
/// selection edges run person-to-job, conflict arcs run job-to-job between
/// distinct jobs, and neither set contains duplicates.
pub fn validate_parts(
    n_people: usize,
    n_jobs: usize,
    selection: &[(usize, usize)],
    conflicts: &[(usize, usize)],
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut sel_sorted: Vec<(usize, usize)> = Vec::with_capacity(selection.len());
    for &(person, job) in selection {
        if person >= n_people {
            violations.push(Violation::SelectionPersonOutOfRange { person, job });
            continue;
        }
        if job >= n_jobs {
            violations.push(Violation::SelectionJobOutOfRange { person, job });
            continue;
        }
        sel_sorted.push((person, job));
    }
    sel_sorted.sort_unstable();
    for w in sel_sorted.windows(2) {
        if w[0] == w[1] {
            violations.push(Violation::DuplicateSelection {
                person: w[0].0,
                job: w[0].1,
            });
        }
    }
    let mut conf_sorted: Vec<(usize, usize)> = Vec::with_capacity(conflicts.len());
    for &(from, to) in conflicts {
        if from >= n_jobs || to >= n_jobs {
            violations.push(Violation::ConflictNotJobToJob { from, to });
            continue;
        }
        if from == to {
            violations.push(Violation::SelfConflict { job: from });
            continue;
        }
        conf_sorted.push((from, to));
    }
    conf_sorted.sort_unstable();
    for w in conf_sorted.windows(2) {
        if w[0] == w[1] {
            violations.push(Violation::DuplicateConflict {
                from: w[0].0,
                to: w[0].1,
            });
        }
    }
    violations
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut state: u64) -> u64 {
    for b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}

impl JobAllocationGraph {
    /// Builds a graph from raw edge lists, rejecting any structural violation.
    pub fn new(
        n_people: usize,
        n_jobs: usize,
        selection: Vec<(usize, usize)>,
        conflicts: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let violations = validate_parts(n_people, n_jobs, &selection, &conflicts);
        if !violations.is_empty() {
            return Err(GraphError::Invalid(violations));
        }
        let mut selection: Vec<Assignment> = selection
            .into_iter()
            .map(|(person, job)| Assignment { person, job })
            .collect();
        selection.sort_unstable();
        let mut conflicts = conflicts;
        conflicts.sort_unstable();
        Ok(Self::from_sorted_parts(n_people, n_jobs, selection, conflicts))
    }

    fn from_sorted_parts(
        n_people: usize,
        n_jobs: usize,
        selection: Vec<Assignment>,
        conflicts: Vec<(usize, usize)>,
    ) -> Self {
        let mut person_jobs = vec![Vec::new(); n_people];
        let mut job_people = vec![Vec::new(); n_jobs];
        for a in &selection {
            person_jobs[a.person].push(a.job);
            job_people[a.job].push(a.person);
        }
        let mut conflict_out = vec![Vec::new(); n_jobs];
        let mut conflict_in = vec![Vec::new(); n_jobs];
        for &(from, to) in &conflicts {
            conflict_out[from].push(to);
            conflict_in[to].push(from);
        }
        // Building from sorted edge lists leaves every adjacency list sorted
        // except conflict_in, which is keyed by the second component.
        for list in &mut conflict_in {
            list.sort_unstable();
        }
        let fingerprint = Self::compute_fingerprint(n_people, n_jobs, &selection, &conflicts);
        Self {
            n_people,
            n_jobs,
            selection,
            conflicts,
            person_jobs,
            job_people,
            conflict_out,
            conflict_in,
            fingerprint,
        }
    }

    fn compute_fingerprint(
        n_people: usize,
        n_jobs: usize,
        selection: &[Assignment],
        conflicts: &[(usize, usize)],
    ) -> u64 {
        // FNV-1a over the canonical encoding; stable across platforms.
        let mut h = 0xcbf2_9ce4_8422_2325_u64;
        h = fnv1a((n_people as u64).to_le_bytes(), h);
        h = fnv1a((n_jobs as u64).to_le_bytes(), h);
        for a in selection {
            h = fnv1a((a.person as u32).to_le_bytes(), h);
            h = fnv1a((a.job as u32).to_le_bytes(), h);
        }
        h = fnv1a([0xff], h);
        for &(from, to) in conflicts {
            h = fnv1a((from as u32).to_le_bytes(), h);
            h = fnv1a((to as u32).to_le_bytes(), h);
        }
        h
    }

    pub fn n_people(&self) -> usize {
        self.n_people
    }

    pub fn n_jobs(&self) -> usize {
        self.n_jobs
    }

    /// Selection edges in canonical (person, job) order.
    pub fn selection(&self) -> &[Assignment] {
        &self.selection
    }

    /// Conflict arcs in canonical (from, to) order.
    pub fn conflicts(&self) -> &[(usize, usize)] {
        &self.conflicts
    }

    pub fn person_jobs(&self, person: usize) -> &[usize] {
        &self.person_jobs[person]
    }

    pub fn job_people(&self, job: usize) -> &[usize] {
        &self.job_people[job]
    }

    pub fn conflict_out(&self, job: usize) -> &[usize] {
        &self.conflict_out[job]
    }

    pub fn conflict_in(&self, job: usize) -> &[usize] {
        &self.conflict_in[job]
    }

    /// Hash of the canonical encoding; used to tie allocations and cached
    /// evaluations back to the graph they came from.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn selection_index(&self, a: Assignment) -> Option<usize> {
        self.selection.binary_search(&a).ok()
    }

    pub fn contains_selection(&self, a: Assignment) -> bool {
        self.selection_index(a).is_some()
    }

    pub fn has_conflict(&self, from: usize, to: usize) -> bool {
        self.conflicts.binary_search(&(from, to)).is_ok()
    }

    /// Re-checks every structural invariant including consistency of the
    /// derived adjacency indices with the edge lists.
    pub fn validate(&self) -> Vec<Violation> {
        let sel: Vec<(usize, usize)> = self.selection.iter().map(|a| (a.person, a.job)).collect();
        let mut violations = validate_parts(self.n_people, self.n_jobs, &sel, &self.conflicts);
        let rebuilt = Self::from_sorted_parts(
            self.n_people,
            self.n_jobs,
            self.selection.clone(),
            self.conflicts.clone(),
        );
        if rebuilt.person_jobs != self.person_jobs
            || rebuilt.job_people != self.job_people
            || rebuilt.conflict_out != self.conflict_out
            || rebuilt.conflict_in != self.conflict_in
            || rebuilt.fingerprint != self.fingerprint
        {
            violations.push(Violation::AdjacencyInconsistent);
        }
        violations
    }

    /// Selection degree and conflict out-degree per vertex, as the two-column
    /// real matrices used to seed the network embeddings. The conflict column
    /// of every person row is zero since conflict arcs never touch people.
    pub fn degree_features(&self) -> DegreeFeatures {
        let mut people = Array2::zeros((self.n_people, 2));
        for (p, jobs) in self.person_jobs.iter().enumerate() {
            people[[p, 0]] = jobs.len() as f64;
        }
        let mut jobs = Array2::zeros((self.n_jobs, 2));
        for j in 0..self.n_jobs {
            jobs[[j, 0]] = self.job_people[j].len() as f64;
            jobs[[j, 1]] = self.conflict_out[j].len() as f64;
        }
        DegreeFeatures { people, jobs }
    }

    /// Applies a selection-edge action: removes the edge itself plus every
    /// other edge of the same person whose job conflicts with the chosen one.
    /// People, jobs, and conflict arcs are untouched; `self` is not mutated.
    pub fn apply_assignment(
        &self,
        a: Assignment,
        mode: ConflictRemovalMode,
    ) -> Result<Self, GraphError> {
        if !self.contains_selection(a) {
            return Err(GraphError::ActionNotAvailable {
                person: a.person,
                job: a.job,
            });
        }
        let mut blocked: Vec<usize> = self.conflict_out[a.job].clone();
        if mode == ConflictRemovalMode::Bidirectional {
            blocked.extend_from_slice(&self.conflict_in[a.job]);
        }
        blocked.sort_unstable();
        blocked.dedup();
        let selection: Vec<Assignment> = self
            .selection
            .iter()
            .copied()
            .filter(|e| {
                if *e == a {
                    return false;
                }
                !(e.person == a.person && blocked.binary_search(&e.job).is_ok())
            })
            .collect();
        Ok(Self::from_sorted_parts(
            self.n_people,
            self.n_jobs,
            selection,
            self.conflicts.clone(),
        ))
    }

    /// Canonical text encoding: `jap 1` header, vertex counts, then sorted
    /// `s <person> <job>` and `c <from> <to>` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("jap 1\n");
        out.push_str(&format!("people {}\n", self.n_people));
        out.push_str(&format!("jobs {}\n", self.n_jobs));
        for a in &self.selection {
            out.push_str(&format!("s {} {}\n", a.person, a.job));
        }
        for &(from, to) in &self.conflicts {
            out.push_str(&format!("c {} {}\n", from, to));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let malformed = |line: usize, msg: &str| GraphError::MalformedRecord {
            line,
            msg: msg.to_string(),
        };
        let mut counts: Option<(usize, usize)> = None;
        let mut n_people = 0usize;
        let mut n_jobs: Option<usize> = None;
        let mut saw_header = false;
        let mut saw_people = false;
        let mut selection = Vec::new();
        let mut conflicts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap();
            let rest: Vec<&str> = fields.collect();
            match tag {
                "jap" => {
                    if saw_header {
                        return Err(malformed(line_no, "duplicate header"));
                    }
                    if rest != ["1"] {
                        return Err(malformed(line_no, "unsupported format version"));
                    }
                    saw_header = true;
                }
                "people" | "jobs" => {
                    if !saw_header {
                        return Err(malformed(line_no, "missing `jap 1` header"));
                    }
                    if rest.len() != 1 {
                        return Err(malformed(line_no, "expected a single count"));
                    }
                    let n: usize = rest[0]
                        .parse()
                        .map_err(|_| malformed(line_no, "count is not a non-negative integer"))?;
                    if tag == "people" {
                        if saw_people {
                            return Err(malformed(line_no, "duplicate people line"));
                        }
                        n_people = n;
                        saw_people = true;
                    } else {
                        if n_jobs.is_some() {
                            return Err(malformed(line_no, "duplicate jobs line"));
                        }
                        n_jobs = Some(n);
                        counts = Some((n_people, n));
                    }
                }
                "s" | "c" => {
                    let (np, nj) = counts
                        .ok_or_else(|| malformed(line_no, "edge before people/jobs counts"))?;
                    if rest.len() != 2 {
                        return Err(malformed(line_no, "expected two indices"));
                    }
                    let u: usize = rest[0]
                        .parse()
                        .map_err(|_| malformed(line_no, "index is not a non-negative integer"))?;
                    let v: usize = rest[1]
                        .parse()
                        .map_err(|_| malformed(line_no, "index is not a non-negative integer"))?;
                    if tag == "s" {
                        if u >= np {
                            return Err(malformed(line_no, "person index out of range"));
                        }
                        if v >= nj {
                            return Err(malformed(line_no, "job index out of range"));
                        }
                        selection.push((u, v));
                    } else {
                        if u >= nj || v >= nj {
                            return Err(malformed(line_no, "job index out of range"));
                        }
                        if u == v {
                            return Err(malformed(line_no, "self-conflict arc"));
                        }
                        conflicts.push((u, v));
                    }
                }
                _ => return Err(malformed(line_no, "unknown record tag")),
            }
        }
        if !saw_header {
            return Err(malformed(0, "empty instance: missing `jap 1` header"));
        }
        let (np, nj) = counts.ok_or_else(|| malformed(0, "missing people/jobs counts"))?;
        Self::new(np, nj, selection, conflicts).map_err(|e| match e {
            GraphError::Invalid(v) => GraphError::MalformedRecord {
                line: 0,
                msg: format!("duplicate edges: {v:?}"),
            },
            other => other,
        })
    }
}

/// Per-vertex `[selection degree, conflict out-degree]` feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeFeatures {
    pub people: Array2<f64>,
    pub jobs: Array2<f64>,
}

/// A set of assignments tied to the graph it was produced from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    assignments: Vec<Assignment>, // sorted, deduplicated
    graph_fingerprint: u64,
}

impl Allocation {
    pub fn new(mut assignments: Vec<Assignment>, graph: &JobAllocationGraph) -> Self {
        assignments.sort_unstable();
        assignments.dedup();
        Self {
            assignments,
            graph_fingerprint: graph.fingerprint(),
        }
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn size(&self) -> usize {
        self.assignments.len()
    }

    pub fn graph_fingerprint(&self) -> u64 {
        self.graph_fingerprint
    }
}

/// Outcome of a feasibility check; the infeasible case carries the first
/// violating pair in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AllocationCheck {
    Feasible,
    Infeasible { first: Assignment, second: Assignment },
}

impl AllocationCheck {
    pub fn is_feasible(&self) -> bool {
        matches!(self, AllocationCheck::Feasible)
    }
}

/// Checks that an allocation is a subset of the selection set and that no
/// person holds two jobs connected by a conflict arc in either direction.
pub fn validate_allocation(
    graph: &JobAllocationGraph,
    allocation: &Allocation,
) -> Result<AllocationCheck, GraphError> {
    for &a in allocation.assignments() {
        if !graph.contains_selection(a) {
            return Err(GraphError::AssignmentNotInSelection {
                person: a.person,
                job: a.job,
            });
        }
    }
    // Assignments are sorted by (person, job), so per-person runs are
    // contiguous.
    let assignments = allocation.assignments();
    let mut start = 0;
    while start < assignments.len() {
        let person = assignments[start].person;
        let mut end = start;
        while end < assignments.len() && assignments[end].person == person {
            end += 1;
        }
        for i in start..end {
            for k in (i + 1)..end {
                let (ja, jb) = (assignments[i].job, assignments[k].job);
                if graph.has_conflict(ja, jb) || graph.has_conflict(jb, ja) {
                    return Ok(AllocationCheck::Infeasible {
                        first: assignments[i],
                        second: assignments[k],
                    });
                }
            }
        }
        start = end;
    }
    Ok(AllocationCheck::Feasible)
}
