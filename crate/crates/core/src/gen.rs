//! Seeded synthetic instance generation and dataset bookkeeping.
//!
//! Two graph families are supported: independent-coin conflict arcs
//! (Erdős–Rényi) and preferential-attachment conflict structure
//! (Barabási–Albert). Selection edges are always independent coins with
//! probability `p_select`. Everything is a pure function of the config, so
//! datasets regenerate bit-identically from their manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{GraphError, JobAllocationGraph};

/// Identifier of the RNG algorithm recorded in dataset manifests.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFamily {
    ErdosRenyi,
    BarabasiAlbert,
}

impl GraphFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphFamily::ErdosRenyi => "er",
            GraphFamily::BarabasiAlbert => "ba",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "er" | "erdos-renyi" => Some(GraphFamily::ErdosRenyi),
            "ba" | "barabasi-albert" => Some(GraphFamily::BarabasiAlbert),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed manifest at line {line}: {msg}")]
    MalformedManifest { line: usize, msg: String },
}

/// Parameters for one synthetic instance. `p_conflict` is only used by the
/// Erdős–Rényi family and `ba_m` only by Barabási–Albert.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub family: GraphFamily,
    pub n_jobs: usize,
    pub n_people: usize,
    pub p_conflict: f64,
    pub p_select: f64,
    pub ba_m: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub const DEFAULT_P_SELECT: f64 = 0.666;

    pub fn erdos_renyi(n_jobs: usize, n_people: usize, p_conflict: f64, seed: u64) -> Self {
        Self {
            family: GraphFamily::ErdosRenyi,
            n_jobs,
            n_people,
            p_conflict,
            p_select: Self::DEFAULT_P_SELECT,
            ba_m: 0,
            seed,
        }
    }

    pub fn barabasi_albert(n_jobs: usize, n_people: usize, ba_m: usize, seed: u64) -> Self {
        Self {
            family: GraphFamily::BarabasiAlbert,
            n_jobs,
            n_people,
            p_conflict: 0.0,
            p_select: Self::DEFAULT_P_SELECT,
            ba_m,
            seed,
        }
    }

    /// The standard Erdős–Rényi evaluation config: 300 jobs, 15 people,
    /// conflict probability 0.10.
    pub fn er_standard(seed: u64) -> Self {
        Self::erdos_renyi(300, 15, 0.10, seed)
    }

    /// The standard Barabási–Albert evaluation config: 300 jobs, 15 people,
    /// attachment 3, with `p_select` lifted so the expected selection-edge
    /// count matches that family's usual density.
    pub fn ba_standard(seed: u64) -> Self {
        let mut c = Self::barabasi_albert(300, 15, 3, seed);
        c.p_select = 0.6973;
        c
    }

    /// Hospital-scale surrogate: 507 jobs, 25 people, probabilities fit so
    /// expected arc and edge counts land near 14344.5 and 5777.9.
    pub fn planny_surrogate(seed: u64) -> Self {
        let mut c = Self::erdos_renyi(507, 25, 14344.5 / (507.0 * 506.0), seed);
        c.p_select = 5777.9 / (507.0 * 25.0);
        c
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.n_jobs < 1 || self.n_people < 1 {
            return Err(GenError::InvalidConfig(
                "counts must be at least 1".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_select) {
            return Err(GenError::InvalidConfig(format!(
                "p_select {} outside [0, 1]",
                self.p_select
            )));
        }
        match self.family {
            GraphFamily::ErdosRenyi => {
                if !(0.0..=1.0).contains(&self.p_conflict) {
                    return Err(GenError::InvalidConfig(format!(
                        "p_conflict {} outside [0, 1]",
                        self.p_conflict
                    )));
                }
            }
            GraphFamily::BarabasiAlbert => {
                if self.ba_m < 1 || self.ba_m >= self.n_jobs {
                    return Err(GenError::InvalidConfig(format!(
                        "ba_m {} must satisfy 1 <= ba_m < n_jobs",
                        self.ba_m
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates one instance. Deterministic in the config, including the seed.
///
/// Erdős–Rényi: every ordered job pair (u, v), u != v, becomes a conflict arc
/// with probability `p_conflict`. Barabási–Albert: an undirected
/// preferential-attachment job graph with `ba_m` edges per arriving vertex is
/// built, and each undirected edge emits both arcs. Selection edges are
/// independent coins over every (person, job) pair in both families.
pub fn generate(config: &GeneratorConfig) -> Result<JobAllocationGraph, GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let conflicts = match config.family {
        GraphFamily::ErdosRenyi => {
            let mut arcs = Vec::new();
            for u in 0..config.n_jobs {
                for v in 0..config.n_jobs {
                    if u != v && rng.gen_bool(config.p_conflict) {
                        arcs.push((u, v));
                    }
                }
            }
            arcs
        }
        GraphFamily::BarabasiAlbert => {
            let undirected = ba_undirected_edges(config.n_jobs, config.ba_m, &mut rng);
            let mut arcs = Vec::with_capacity(2 * undirected.len());
            for &(u, v) in &undirected {
                arcs.push((u, v));
                arcs.push((v, u));
            }
            arcs
        }
    };
    let mut selection = Vec::new();
    for p in 0..config.n_people {
        for j in 0..config.n_jobs {
            if rng.gen_bool(config.p_select) {
                selection.push((p, j));
            }
        }
    }
    JobAllocationGraph::new(config.n_people, config.n_jobs, selection, conflicts)
        .map_err(|e| GenError::InvalidConfig(format!("generator produced invalid graph: {e}")))
}

/// Preferential attachment: the first `m` vertices start isolated, each later
/// vertex attaches `m` edges to distinct targets drawn proportionally to
/// degree (uniformly while all degrees are zero). Exactly `m * (n - m)` edges.
fn ba_undirected_edges(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(m * n.saturating_sub(m));
    let mut targets: Vec<usize> = (0..m).collect();
    let mut repeated: Vec<usize> = Vec::with_capacity(2 * m * n);
    for source in m..n {
        for &t in &targets {
            edges.push((t.min(source), t.max(source)));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat(source).take(m));
        // Degree-proportional draw of m distinct endpoints.
        let mut next = Vec::with_capacity(m);
        while next.len() < m {
            let pick = repeated[rng.gen_range(0..repeated.len())];
            if !next.contains(&pick) {
                next.push(pick);
            }
        }
        targets = next;
    }
    edges
}

/// Arithmetic-mean summary over a list of graphs. Density is
/// `(|S| + |C|) / (|P|·|J| + |J|·(|J|−1))`, the filled fraction of all
/// possible selection edges and conflict arcs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub n_graphs: usize,
    pub mean_jobs: f64,
    pub mean_people: f64,
    pub mean_conflict_arcs: f64,
    pub mean_selection_edges: f64,
    pub mean_density: f64,
}

pub fn dataset_stats(graphs: &[JobAllocationGraph]) -> Result<DatasetStats, GenError> {
    if graphs.is_empty() {
        return Err(GenError::EmptyDataset);
    }
    let n = graphs.len() as f64;
    let mut jobs = 0.0;
    let mut people = 0.0;
    let mut arcs = 0.0;
    let mut edges = 0.0;
    let mut density = 0.0;
    for g in graphs {
        jobs += g.n_jobs() as f64;
        people += g.n_people() as f64;
        arcs += g.conflicts().len() as f64;
        edges += g.selection().len() as f64;
        let slots = (g.n_people() * g.n_jobs() + g.n_jobs() * (g.n_jobs() - 1)) as f64;
        density += (g.selection().len() + g.conflicts().len()) as f64 / slots;
    }
    Ok(DatasetStats {
        n_graphs: graphs.len(),
        mean_jobs: jobs / n,
        mean_people: people / n,
        mean_conflict_arcs: arcs / n,
        mean_selection_edges: edges / n,
        mean_density: density / n,
    })
}

/// One manifest line: the config an instance was generated from and the
/// instance file path relative to the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub config: GeneratorConfig,
    pub path: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("japman 1 rng={RNG_ALGORITHM}\n");
        for e in &self.entries {
            let c = &e.config;
            out.push_str(&format!(
                "instance family={} jobs={} people={} p_conflict={} p_select={} ba_m={} seed={} path={}\n",
                c.family.as_str(),
                c.n_jobs,
                c.n_people,
                c.p_conflict,
                c.p_select,
                c.ba_m,
                c.seed,
                e.path
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let malformed = |line: usize, msg: &str| DatasetError::MalformedManifest {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| malformed(0, "empty manifest"))?;
        if !header.starts_with("japman 1") {
            return Err(malformed(1, "missing `japman 1` header"));
        }
        let mut entries = Vec::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            if fields.next() != Some("instance") {
                return Err(malformed(line_no, "expected `instance` record"));
            }
            let mut family = None;
            let mut jobs = None;
            let mut people = None;
            let mut p_conflict = None;
            let mut p_select = None;
            let mut ba_m = None;
            let mut seed = None;
            let mut path = None;
            for field in fields {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| malformed(line_no, "expected key=value fields"))?;
                match key {
                    "family" => {
                        family = Some(GraphFamily::parse(value).ok_or_else(|| {
                            malformed(line_no, "family must be `er` or `ba`")
                        })?)
                    }
                    "jobs" => jobs = value.parse().ok(),
                    "people" => people = value.parse().ok(),
                    "p_conflict" => p_conflict = value.parse().ok(),
                    "p_select" => p_select = value.parse().ok(),
                    "ba_m" => ba_m = value.parse().ok(),
                    "seed" => seed = value.parse().ok(),
                    "path" => path = Some(value.to_string()),
                    _ => return Err(malformed(line_no, "unknown field")),
                }
            }
            let entry = ManifestEntry {
                config: GeneratorConfig {
                    family: family.ok_or_else(|| malformed(line_no, "missing family"))?,
                    n_jobs: jobs.ok_or_else(|| malformed(line_no, "missing jobs"))?,
                    n_people: people.ok_or_else(|| malformed(line_no, "missing people"))?,
                    p_conflict: p_conflict
                        .ok_or_else(|| malformed(line_no, "missing p_conflict"))?,
                    p_select: p_select.ok_or_else(|| malformed(line_no, "missing p_select"))?,
                    ba_m: ba_m.ok_or_else(|| malformed(line_no, "missing ba_m"))?,
                    seed: seed.ok_or_else(|| malformed(line_no, "missing seed"))?,
                },
                path: path.ok_or_else(|| malformed(line_no, "missing path"))?,
            };
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Generates every config, writes the instances and a manifest into `dir`.
pub fn write_dataset(dir: &Path, configs: &[GeneratorConfig]) -> Result<Manifest, DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(configs.len());
    for (i, config) in configs.iter().enumerate() {
        let graph = generate(config)?;
        let name = format!("inst_{i:04}.jap");
        let path = dir.join(&name);
        fs::write(&path, graph.to_text()).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            config: *config,
            path: name,
        });
    }
    let manifest = Manifest { entries };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.to_text()).map_err(io_err(&mpath))?;
    Ok(manifest)
}

/// Loads a dataset directory written by [`write_dataset`].
pub fn read_dataset(
    dir: &Path,
) -> Result<Vec<(GeneratorConfig, JobAllocationGraph)>, DatasetError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest = Manifest::from_text(&text)?;
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let ipath = dir.join(&entry.path);
        let text = fs::read_to_string(&ipath).map_err(io_err(&ipath))?;
        out.push((entry.config, JobAllocationGraph::from_text(&text)?));
    }
    Ok(out)
}
