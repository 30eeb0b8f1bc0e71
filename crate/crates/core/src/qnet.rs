//! The Q-value approximator: stacked context-aware embedding modules over the
//! selection and conflict subgraphs, a symmetric learned merger for the two
//! job-embedding streams, and an inner-product head over selection edges.
//!
//! Everything is plain `f64` code with a hand-written reverse pass;
//! [`q_backward`] returns exact gradients for every learnable block and is
//! checked against central finite differences in the test suite. The forward
//! and reverse passes sit inside the training batch loop, so the internals
//! work on flat row-major buffers rather than ndarray views.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{DegreeFeatures, JobAllocationGraph};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
/// (d_in, d_out) per module: degree features in, 16-wide hidden, 8-wide out.
pub const DEFAULT_DIMS: [(usize, usize); 3] = [(2, 16), (16, 16), (16, 8)];

#[derive(Debug, Error)]
pub enum QNetError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Which conflict arcs a job aggregates messages from. `Incoming` means a
/// job's embedding reflects the jobs that would knock it out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConflictMsgDir {
    #[default]
    Incoming,
    Outgoing,
}

impl ConflictMsgDir {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConflictMsgDir::Incoming => "in",
            ConflictMsgDir::Outgoing => "out",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in" => Some(ConflictMsgDir::Incoming),
            "out" => Some(ConflictMsgDir::Outgoing),
            _ => None,
        }
    }
}

/// One single-head attention sublayer: a shared linear map plus a scoring
/// vector over concatenated destination/source transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayerParams {
    /// d_in × d_out shared transform.
    pub weight: Array2<f64>,
    /// 2·d_out scorer; first half weighs the destination, second the source.
    pub attn: Array1<f64>,
    pub leaky_slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergerParams {
    /// (2·d_out) × d_out fully connected map applied to [x ‖ y].
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array1<f64>,
    /// Scalar modulating how far the merged value deviates from 1.
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

/// One context-aware embedding module: an attention sublayer per subgraph,
/// the symmetric merger, and (except on the last module) layer-norm params.
#[derive(Clone, Debug, PartialEq)]
pub struct CaeModuleParams {
    pub selection_attn: AttentionLayerParams,
    pub conflict_attn: AttentionLayerParams,
    pub merger: MergerParams,
    pub norm: Option<LayerNormParams>,
}

impl CaeModuleParams {
    pub fn d_in(&self) -> usize {
        self.selection_attn.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.selection_attn.weight.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetworkParams {
    pub modules: Vec<CaeModuleParams>,
    pub conflict_msg_dir: ConflictMsgDir,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

fn glorot_vec(len: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let limit = (6.0 / (len + 1) as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.gen_range(-limit..limit))
}

impl QNetworkParams {
    /// Deterministic random init with the default architecture.
    pub fn init(seed: u64) -> Self {
        Self::init_with(&DEFAULT_DIMS, ConflictMsgDir::default(), seed)
    }

    /// Glorot-uniform weights, zero biases, lambda 0, layer-norm scale 1 and
    /// shift 0. Per-module draw order: selection weight, selection scorer,
    /// conflict weight, conflict scorer, merger weight.
    pub fn init_with(dims: &[(usize, usize)], conflict_msg_dir: ConflictMsgDir, seed: u64) -> Self {
        assert!(!dims.is_empty(), "at least one module required");
        for w in dims.windows(2) {
            assert_eq!(w[0].1, w[1].0, "module dims must chain");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 1;
        let modules = dims
            .iter()
            .enumerate()
            .map(|(i, &(d_in, d_out))| CaeModuleParams {
                selection_attn: AttentionLayerParams {
                    weight: glorot(d_in, d_out, &mut rng),
                    attn: glorot_vec(2 * d_out, &mut rng),
                    leaky_slope: DEFAULT_LEAKY_SLOPE,
                },
                conflict_attn: AttentionLayerParams {
                    weight: glorot(d_in, d_out, &mut rng),
                    attn: glorot_vec(2 * d_out, &mut rng),
                    leaky_slope: DEFAULT_LEAKY_SLOPE,
                },
                merger: MergerParams {
                    fc_weight: glorot(2 * d_out, d_out, &mut rng),
                    fc_bias: Array1::zeros(d_out),
                    lambda: 0.0,
                },
                norm: (i != last).then(|| LayerNormParams {
                    scale: Array1::ones(d_out),
                    shift: Array1::zeros(d_out),
                }),
            })
            .collect();
        Self {
            modules,
            conflict_msg_dir,
        }
    }

    /// A same-shape parameter set with every learnable entry zero; used as a
    /// gradient container.
    pub fn zeros_like(&self) -> Self {
        let modules = self
            .modules
            .iter()
            .map(|m| CaeModuleParams {
                selection_attn: AttentionLayerParams {
                    weight: Array2::zeros(m.selection_attn.weight.raw_dim()),
                    attn: Array1::zeros(m.selection_attn.attn.len()),
                    leaky_slope: m.selection_attn.leaky_slope,
                },
                conflict_attn: AttentionLayerParams {
                    weight: Array2::zeros(m.conflict_attn.weight.raw_dim()),
                    attn: Array1::zeros(m.conflict_attn.attn.len()),
                    leaky_slope: m.conflict_attn.leaky_slope,
                },
                merger: MergerParams {
                    fc_weight: Array2::zeros(m.merger.fc_weight.raw_dim()),
                    fc_bias: Array1::zeros(m.merger.fc_bias.len()),
                    lambda: 0.0,
                },
                norm: m.norm.as_ref().map(|n| LayerNormParams {
                    scale: Array1::zeros(n.scale.len()),
                    shift: Array1::zeros(n.shift.len()),
                }),
            })
            .collect();
        Self {
            modules,
            conflict_msg_dir: self.conflict_msg_dir,
        }
    }

    /// Number of learnable scalars (leaky slope and message direction are
    /// architecture constants, not parameters).
    pub fn param_count(&self) -> usize {
        self.modules
            .iter()
            .map(|m| {
                m.selection_attn.weight.len()
                    + m.selection_attn.attn.len()
                    + m.conflict_attn.weight.len()
                    + m.conflict_attn.attn.len()
                    + m.merger.fc_weight.len()
                    + m.merger.fc_bias.len()
                    + 1
                    + m.norm.as_ref().map_or(0, |n| n.scale.len() + n.shift.len())
            })
            .sum()
    }

    /// Learnable scalars in block order: per module, selection weight
    /// (row-major), selection scorer, conflict weight, conflict scorer,
    /// merger weight (row-major), merger bias, lambda, then norm scale and
    /// shift when present.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in &self.modules {
            out.extend(m.selection_attn.weight.iter());
            out.extend(m.selection_attn.attn.iter());
            out.extend(m.conflict_attn.weight.iter());
            out.extend(m.conflict_attn.attn.iter());
            out.extend(m.merger.fc_weight.iter());
            out.extend(m.merger.fc_bias.iter());
            out.push(m.merger.lambda);
            if let Some(n) = &m.norm {
                out.extend(n.scale.iter());
                out.extend(n.shift.iter());
            }
        }
        out
    }

    /// Overwrites every learnable scalar from a flat slice laid out as in
    /// [`Self::flatten`].
    pub fn read_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut it = flat.iter().copied();
        for m in &mut self.modules {
            for v in m.selection_attn.weight.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in m.selection_attn.attn.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in m.conflict_attn.weight.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in m.conflict_attn.attn.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in m.merger.fc_weight.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in m.merger.fc_bias.iter_mut() {
                *v = it.next().unwrap();
            }
            m.merger.lambda = it.next().unwrap();
            if let Some(n) = &mut m.norm {
                for v in n.scale.iter_mut() {
                    *v = it.next().unwrap();
                }
                for v in n.shift.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C3: f64 = 0.044_715;

/// tanh-form GELU.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_C3 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_C3 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_C3 * x * x)
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

// ---------------------------------------------------------------------------
// Flat row-major matrices for the hot paths
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default)]
struct Flat {
    data: Vec<f64>,
    cols: usize,
}

impl Flat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            cols,
        }
    }

    fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn from_array(a: &Array2<f64>) -> Self {
        Self {
            data: a.iter().copied().collect(),
            cols: a.ncols(),
        }
    }

    fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows(), self.cols), self.data.clone())
            .expect("consistent dims")
    }
}

/// out = h · w for flat row-major h (n×d_in) and w (d_in×d_out).
fn matmul(h: &Flat, w: &[f64], d_out: usize) -> Flat {
    let d_in = h.cols;
    let n = h.rows();
    let mut out = Flat::zeros(n, d_out);
    for r in 0..n {
        let hr = h.row(r);
        let or = out.row_mut(r);
        for i in 0..d_in {
            let hi = hr[i];
            let wr = &w[i * d_out..(i + 1) * d_out];
            for o in 0..d_out {
                or[o] += hi * wr[o];
            }
        }
    }
    out
}

/// out = dz · wᵀ: maps d_out-wide cotangents back through w (d_in×d_out).
fn matmul_transposed(dz: &Flat, w: &[f64], d_in: usize) -> Flat {
    let d_out = dz.cols;
    let n = dz.rows();
    let mut out = Flat::zeros(n, d_in);
    for r in 0..n {
        let dzr = dz.row(r);
        let or = out.row_mut(r);
        for i in 0..d_in {
            let wr = &w[i * d_out..(i + 1) * d_out];
            let mut s = 0.0;
            for o in 0..d_out {
                s += dzr[o] * wr[o];
            }
            or[i] = s;
        }
    }
    out
}

/// dw += hᵀ · dz, accumulated into the flat (d_in×d_out) gradient.
fn weight_grad_acc(h: &Flat, dz: &Flat, dw: &mut [f64]) {
    let d_in = h.cols;
    let d_out = dz.cols;
    for r in 0..h.rows() {
        let hr = h.row(r);
        let dzr = dz.row(r);
        for i in 0..d_in {
            let hi = hr[i];
            if hi == 0.0 {
                continue;
            }
            let dwr = &mut dw[i * d_out..(i + 1) * d_out];
            for o in 0..d_out {
                dwr[o] += hi * dzr[o];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Attention bookkeeping for one destination family: flattened
/// `[self, neighbors...]` softmax weights and pre-activation scores per
/// destination, CSR-style.
#[derive(Clone, Debug)]
struct AttnSide {
    alpha: Vec<f64>,
    score: Vec<f64>,
    off: Vec<usize>,
}

impl AttnSide {
    fn with_degrees(degrees: impl Iterator<Item = usize>) -> Self {
        let mut off = vec![0usize];
        for d in degrees {
            off.push(off.last().unwrap() + d + 1);
        }
        let total = *off.last().unwrap();
        Self {
            alpha: vec![0.0; total],
            score: vec![0.0; total],
            off,
        }
    }
}

/// Softmax over `[self, srcs...]` pre-activation scores (max-subtracted for
/// overflow safety), then weighted aggregation of the transformed source rows
/// into `out_row`. `src` is the flat source matrix with row width `d`.
#[allow(clippy::too_many_arguments)]
fn aggregate_dest(
    scores: &[f64],
    alpha: &mut [f64],
    slope: f64,
    self_row: &[f64],
    src: &[f64],
    nbrs: &[usize],
    d: usize,
    out_row: &mut [f64],
) {
    let count = scores.len();
    let mut max = f64::NEG_INFINITY;
    for k in 0..count {
        let l = leaky(scores[k], slope);
        alpha[k] = l;
        if l > max {
            max = l;
        }
    }
    let mut denom = 0.0;
    for a in alpha.iter_mut() {
        *a = (*a - max).exp();
        denom += *a;
    }
    for a in alpha.iter_mut() {
        *a /= denom;
    }
    let a0 = alpha[0];
    for i in 0..d {
        out_row[i] = a0 * self_row[i];
    }
    for (k, &u) in nbrs.iter().enumerate() {
        let a = alpha[k + 1];
        let row = &src[u * d..u * d + d];
        for i in 0..d {
            out_row[i] += a * row[i];
        }
    }
}

/// Splits the scorer in two and projects: e_dst[v] = a_dst · z_v,
/// e_src[v] = a_src · z_v. Raw scores are then e_dst[v] + e_src[u].
fn score_halves(z: &Flat, attn: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = z.cols;
    let (a_dst, a_src) = attn.split_at(d);
    let n = z.rows();
    let mut e_dst = vec![0.0; n];
    let mut e_src = vec![0.0; n];
    for v in 0..n {
        let row = z.row(v);
        let mut sd = 0.0;
        let mut ss = 0.0;
        for i in 0..d {
            sd += a_dst[i] * row[i];
            ss += a_src[i] * row[i];
        }
        e_dst[v] = sd;
        e_src[v] = ss;
    }
    (e_dst, e_src)
}

/// Runs one attention sublayer over an explicit adjacency on a single vertex
/// set: destination `v` aggregates `{v} ∪ neighbors[v]` with learned softmax
/// weights over leaky-rectified scores. No output nonlinearity.
pub fn attention_forward(
    neighbors: &[Vec<usize>],
    h: &Array2<f64>,
    params: &AttentionLayerParams,
) -> Result<Array2<f64>, QNetError> {
    if h.nrows() != neighbors.len() {
        return Err(QNetError::DimensionMismatch(format!(
            "embedding rows {} vs vertex count {}",
            h.nrows(),
            neighbors.len()
        )));
    }
    if h.ncols() != params.weight.nrows() {
        return Err(QNetError::DimensionMismatch(format!(
            "embedding width {} vs weight d_in {}",
            h.ncols(),
            params.weight.nrows()
        )));
    }
    let d = params.weight.ncols();
    if params.attn.len() != 2 * d {
        return Err(QNetError::DimensionMismatch(format!(
            "scorer length {} vs 2*d_out {}",
            params.attn.len(),
            2 * d
        )));
    }
    let hf = Flat::from_array(h);
    let wf: Vec<f64> = params.weight.iter().copied().collect();
    let attn: Vec<f64> = params.attn.iter().copied().collect();
    let z = matmul(&hf, &wf, d);
    let (e_dst, e_src) = score_halves(&z, &attn);
    let mut side = AttnSide::with_degrees(neighbors.iter().map(|n| n.len()));
    let mut out = Flat::zeros(neighbors.len(), d);
    for (v, nbrs) in neighbors.iter().enumerate() {
        let start = side.off[v];
        let end = side.off[v + 1];
        side.score[start] = e_dst[v] + e_src[v];
        for (k, &u) in nbrs.iter().enumerate() {
            side.score[start + k + 1] = e_dst[v] + e_src[u];
        }
        aggregate_dest(
            &side.score[start..end],
            &mut side.alpha[start..end],
            params.leaky_slope,
            &z.data[v * d..v * d + d],
            &z.data,
            nbrs,
            d,
            out.row_mut(v),
        );
    }
    Ok(out.to_array())
}

/// ν = ½(f(x, y) + f(y, x)), f(a, b) = 1 + λ·FC([a ‖ b]); returns the merged
/// rows plus both FC outputs for the reverse pass.
fn merge_streams(x: &Flat, y: &Flat, w: &[f64], bias: &[f64], lambda: f64) -> (Flat, Flat, Flat) {
    let d = x.cols;
    let n = x.rows();
    let mut fc_xy = Flat::zeros(n, d);
    let mut fc_yx = Flat::zeros(n, d);
    let mut out = Flat::zeros(n, d);
    for r in 0..n {
        let xr = x.row(r);
        let yr = y.row(r);
        let f1 = fc_xy.row_mut(r);
        let f2 = fc_yx.row_mut(r);
        f1.copy_from_slice(bias);
        f2.copy_from_slice(bias);
        // Weight rows 0..d act on the first half of the concatenation,
        // rows d..2d on the second half.
        for i in 0..d {
            let xi = xr[i];
            let yi = yr[i];
            let w_hi = &w[i * d..(i + 1) * d];
            let w_lo = &w[(i + d) * d..(i + d + 1) * d];
            for o in 0..d {
                f1[o] += xi * w_hi[o] + yi * w_lo[o];
                f2[o] += yi * w_hi[o] + xi * w_lo[o];
            }
        }
        let or = out.row_mut(r);
        for o in 0..d {
            or[o] = 0.5 * ((1.0 + lambda * f1[o]) + (1.0 + lambda * f2[o]));
        }
    }
    (out, fc_xy, fc_yx)
}

fn layer_norm_forward(x: &Flat, scale: &[f64], shift: &[f64]) -> (Flat, Flat, Vec<f64>) {
    let d = x.cols;
    let n = x.rows();
    let mut xhat = Flat::zeros(n, d);
    let mut out = Flat::zeros(n, d);
    let mut inv_stds = vec![0.0; n];
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_stds[r] = inv_std;
        let xh = xhat.row_mut(r);
        for i in 0..d {
            xh[i] = (row[i] - mean) * inv_std;
        }
        let o = out.row_mut(r);
        let xh = xhat.row(r);
        for i in 0..d {
            o[i] = scale[i] * xh[i] + shift[i];
        }
    }
    (out, xhat, inv_stds)
}

fn layer_norm_backward(
    d_y: &Flat,
    xhat: &Flat,
    inv_stds: &[f64],
    scale: &[f64],
    d_scale: &mut [f64],
    d_shift: &mut [f64],
) -> Flat {
    let d = d_y.cols;
    let n = d_y.rows();
    let mut d_x = Flat::zeros(n, d);
    for r in 0..n {
        let dy = d_y.row(r);
        let xh = xhat.row(r);
        let mut g_mean = 0.0;
        let mut gx_mean = 0.0;
        for i in 0..d {
            d_scale[i] += dy[i] * xh[i];
            d_shift[i] += dy[i];
            let g = dy[i] * scale[i];
            g_mean += g;
            gx_mean += g * xh[i];
        }
        g_mean /= d as f64;
        gx_mean /= d as f64;
        let inv_std = inv_stds[r];
        let dx = d_x.row_mut(r);
        for i in 0..d {
            let g = dy[i] * scale[i];
            dx[i] = inv_std * (g - g_mean - xh[i] * gx_mean);
        }
    }
    d_x
}

fn gelu_forward(x: &Flat) -> Flat {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = gelu(*v);
    }
    out
}

fn gelu_backward(d_y: &Flat, pre: &Flat) -> Flat {
    let mut out = d_y.clone();
    for (dv, &x) in out.data.iter_mut().zip(&pre.data) {
        *dv *= gelu_grad(x);
    }
    out
}

fn conflict_neighbors(g: &JobAllocationGraph, dir: ConflictMsgDir, j: usize) -> &[usize] {
    match dir {
        ConflictMsgDir::Incoming => g.conflict_in(j),
        ConflictMsgDir::Outgoing => g.conflict_out(j),
    }
}

#[derive(Clone, Debug)]
struct NormTape {
    mu_xhat: Flat,
    mu_inv_std: Vec<f64>,
    mu_postln: Flat,
    nu_xhat: Flat,
    nu_inv_std: Vec<f64>,
    nu_postln: Flat,
}

#[derive(Clone, Debug)]
struct ModuleTape {
    mu_in: Flat,
    nu_in: Flat,
    sel_z_people: Flat,
    sel_z_jobs: Flat,
    sel_people: AttnSide,
    sel_jobs: AttnSide,
    conf_z: Flat,
    conf_jobs: AttnSide,
    mu_attn: Flat,
    nu_sel: Flat,
    nu_conf: Flat,
    fc_xy: Flat,
    fc_yx: Flat,
    norm: Option<NormTape>,
}

/// Saved intermediates from one [`q_forward_with_tape`] call.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    modules: Vec<ModuleTape>,
    final_mu: Flat,
    final_nu: Flat,
}

impl ForwardTape {
    /// Final person embeddings (rows) after the last module.
    pub fn final_people(&self) -> Array2<f64> {
        self.final_mu.to_array()
    }

    /// Final job embeddings (rows) after the last module.
    pub fn final_jobs(&self) -> Array2<f64> {
        self.final_nu.to_array()
    }

    /// Post-layer-norm normalized rows (x̂) of the job stream per hidden
    /// module; used by tests to check row standardization.
    pub fn job_xhat_rows(&self) -> Vec<Array2<f64>> {
        self.modules
            .iter()
            .filter_map(|m| m.norm.as_ref())
            .map(|n| n.nu_xhat.to_array())
            .collect()
    }
}

/// Runs one module and keeps everything the reverse pass needs. Returns the
/// tape together with the merged job output.
fn cae_module_tape(
    g: &JobAllocationGraph,
    mu: Flat,
    nu: Flat,
    module: &CaeModuleParams,
    dir: ConflictMsgDir,
) -> Result<(ModuleTape, Flat), QNetError> {
    let d_in = module.d_in();
    if mu.cols != d_in || nu.cols != d_in {
        return Err(QNetError::DimensionMismatch(format!(
            "module expects d_in {d_in}, got mu {} nu {}",
            mu.cols, nu.cols
        )));
    }
    if mu.rows() != g.n_people() || nu.rows() != g.n_jobs() {
        return Err(QNetError::DimensionMismatch(format!(
            "embedding rows ({}, {}) vs graph ({}, {})",
            mu.rows(),
            nu.rows(),
            g.n_people(),
            g.n_jobs()
        )));
    }
    let d = module.d_out();
    // Selection subgraph: shared transform, messages both ways across the
    // bipartition, self-loops on every vertex.
    let sel = &module.selection_attn;
    let sel_w = sel.weight.as_slice().expect("standard layout");
    let sel_attn = sel.attn.as_slice().expect("contiguous scorer");
    let sel_z_people = matmul(&mu, sel_w, d);
    let sel_z_jobs = matmul(&nu, sel_w, d);
    let (pe_dst, pe_src) = score_halves(&sel_z_people, sel_attn);
    let (je_dst, je_src) = score_halves(&sel_z_jobs, sel_attn);
    let mut sel_people = AttnSide::with_degrees((0..g.n_people()).map(|p| g.person_jobs(p).len()));
    let mut sel_jobs = AttnSide::with_degrees((0..g.n_jobs()).map(|j| g.job_people(j).len()));
    let mut mu_attn = Flat::zeros(g.n_people(), d);
    let mut nu_sel = Flat::zeros(g.n_jobs(), d);
    let slope = sel.leaky_slope;
    for p in 0..g.n_people() {
        let start = sel_people.off[p];
        let end = sel_people.off[p + 1];
        let nbrs = g.person_jobs(p);
        sel_people.score[start] = pe_dst[p] + pe_src[p];
        for (k, &j) in nbrs.iter().enumerate() {
            sel_people.score[start + k + 1] = pe_dst[p] + je_src[j];
        }
        aggregate_dest(
            &sel_people.score[start..end],
            &mut sel_people.alpha[start..end],
            slope,
            &sel_z_people.data[p * d..p * d + d],
            &sel_z_jobs.data,
            nbrs,
            d,
            mu_attn.row_mut(p),
        );
    }
    for j in 0..g.n_jobs() {
        let start = sel_jobs.off[j];
        let end = sel_jobs.off[j + 1];
        let nbrs = g.job_people(j);
        sel_jobs.score[start] = je_dst[j] + je_src[j];
        for (k, &p) in nbrs.iter().enumerate() {
            sel_jobs.score[start + k + 1] = je_dst[j] + pe_src[p];
        }
        aggregate_dest(
            &sel_jobs.score[start..end],
            &mut sel_jobs.alpha[start..end],
            slope,
            &sel_z_jobs.data[j * d..j * d + d],
            &sel_z_people.data,
            nbrs,
            d,
            nu_sel.row_mut(j),
        );
    }
    // Conflict subgraph over jobs only.
    let conf = &module.conflict_attn;
    let conf_w = conf.weight.as_slice().expect("standard layout");
    let conf_attn = conf.attn.as_slice().expect("contiguous scorer");
    let conf_z = matmul(&nu, conf_w, d);
    let (ce_dst, ce_src) = score_halves(&conf_z, conf_attn);
    let mut conf_jobs =
        AttnSide::with_degrees((0..g.n_jobs()).map(|j| conflict_neighbors(g, dir, j).len()));
    let mut nu_conf = Flat::zeros(g.n_jobs(), d);
    let cslope = conf.leaky_slope;
    for j in 0..g.n_jobs() {
        let start = conf_jobs.off[j];
        let end = conf_jobs.off[j + 1];
        let nbrs = conflict_neighbors(g, dir, j);
        conf_jobs.score[start] = ce_dst[j] + ce_src[j];
        for (k, &u) in nbrs.iter().enumerate() {
            conf_jobs.score[start + k + 1] = ce_dst[j] + ce_src[u];
        }
        aggregate_dest(
            &conf_jobs.score[start..end],
            &mut conf_jobs.alpha[start..end],
            cslope,
            &conf_z.data[j * d..j * d + d],
            &conf_z.data,
            nbrs,
            d,
            nu_conf.row_mut(j),
        );
    }
    let (merged, fc_xy, fc_yx) = merge_streams(
        &nu_sel,
        &nu_conf,
        module.merger.fc_weight.as_slice().expect("standard layout"),
        module.merger.fc_bias.as_slice().expect("contiguous bias"),
        module.merger.lambda,
    );
    Ok((
        ModuleTape {
            mu_in: mu,
            nu_in: nu,
            sel_z_people,
            sel_z_jobs,
            sel_people,
            sel_jobs,
            conf_z,
            conf_jobs,
            mu_attn,
            nu_sel,
            nu_conf,
            fc_xy,
            fc_yx,
            norm: None,
        },
        merged,
    ))
}

/// One context-aware embedding module applied functionally: selection
/// attention updates both sides, conflict attention (incoming messages)
/// updates jobs, and the two job streams merge through the learned map.
/// Layer norm and the activation between modules live in [`q_forward`].
pub fn cae_forward(
    g: &JobAllocationGraph,
    mu: &Array2<f64>,
    nu: &Array2<f64>,
    module: &CaeModuleParams,
) -> Result<(Array2<f64>, Array2<f64>), QNetError> {
    let (tape, merged) = cae_module_tape(
        g,
        Flat::from_array(mu),
        Flat::from_array(nu),
        module,
        ConflictMsgDir::default(),
    )?;
    Ok((tape.mu_attn.to_array(), merged.to_array()))
}

/// Q-values for every selection edge, aligned with `g.selection()`.
pub fn q_forward(g: &JobAllocationGraph, params: &QNetworkParams) -> Vec<f64> {
    q_forward_with_tape(g, params).0
}

/// Forward pass keeping every intermediate needed by [`q_backward`].
pub fn q_forward_with_tape(
    g: &JobAllocationGraph,
    params: &QNetworkParams,
) -> (Vec<f64>, ForwardTape) {
    let DegreeFeatures { people, jobs } = g.degree_features();
    let mut mu = Flat::from_array(&people);
    let mut nu = Flat::from_array(&jobs);
    let last = params.modules.len() - 1;
    let mut modules = Vec::with_capacity(params.modules.len());
    for (i, module) in params.modules.iter().enumerate() {
        let (mut tape, nu_merged) = cae_module_tape(g, mu, nu, module, params.conflict_msg_dir)
            .expect("module dims chain with inputs");
        if i != last {
            let norm = module.norm.as_ref().expect("norm present on hidden modules");
            let scale = norm.scale.as_slice().unwrap();
            let shift = norm.shift.as_slice().unwrap();
            let (mu_postln, mu_xhat, mu_inv_std) = layer_norm_forward(&tape.mu_attn, scale, shift);
            let (nu_postln, nu_xhat, nu_inv_std) = layer_norm_forward(&nu_merged, scale, shift);
            mu = gelu_forward(&mu_postln);
            nu = gelu_forward(&nu_postln);
            tape.norm = Some(NormTape {
                mu_xhat,
                mu_inv_std,
                mu_postln,
                nu_xhat,
                nu_inv_std,
                nu_postln,
            });
        } else {
            mu = tape.mu_attn.clone();
            nu = nu_merged;
        }
        modules.push(tape);
    }
    let d = mu.cols;
    let q = g
        .selection()
        .iter()
        .map(|a| {
            let mp = mu.row(a.person);
            let nj = nu.row(a.job);
            let mut s = 0.0;
            for i in 0..d {
                s += mp[i] * nj[i];
            }
            s
        })
        .collect();
    (
        q,
        ForwardTape {
            modules,
            final_mu: mu,
            final_nu: nu,
        },
    )
}

/// Shared reverse step for one attention destination family. `z_dst` and
/// `z_src` may alias the same matrix (conflict layer); gradients then go to
/// separate accumulators the caller adds together.
#[allow(clippy::too_many_arguments)]
fn attention_dest_backward<'g>(
    n_dst: usize,
    nbrs_of: impl Fn(usize) -> &'g [usize],
    side: &AttnSide,
    z_dst: &Flat,
    z_src: &Flat,
    d_out: &Flat,
    d_z_dst: &mut Flat,
    d_z_src: &mut Flat,
    a_dst: &[f64],
    a_src: &[f64],
    g_attn: &mut [f64],
    slope: f64,
) {
    let d = z_dst.cols;
    let (g_dst, g_src) = g_attn.split_at_mut(d);
    let mut d_alpha: Vec<f64> = Vec::new();
    for v in 0..n_dst {
        let start = side.off[v];
        let nbrs = nbrs_of(v);
        let count = nbrs.len() + 1;
        let dov = d_out.row(v);
        d_alpha.clear();
        d_alpha.resize(count, 0.0);
        {
            let zv = z_dst.row(v);
            let mut s = 0.0;
            for i in 0..d {
                s += dov[i] * zv[i];
            }
            d_alpha[0] = s;
        }
        for (k, &u) in nbrs.iter().enumerate() {
            let zu = &z_src.data[u * d..u * d + d];
            let mut s = 0.0;
            for i in 0..d {
                s += dov[i] * zu[i];
            }
            d_alpha[k + 1] = s;
        }
        let mut dot = 0.0;
        for k in 0..count {
            dot += side.alpha[start + k] * d_alpha[k];
        }
        let mut de_dst = 0.0;
        for k in 0..count {
            let alpha = side.alpha[start + k];
            let dl = alpha * (d_alpha[k] - dot);
            let ds = dl * leaky_grad(side.score[start + k], slope);
            de_dst += ds;
            if k == 0 {
                // Self term: source is the destination itself.
                let zv = z_dst.row(v);
                for i in 0..d {
                    g_src[i] += ds * zv[i];
                }
                let dzv = d_z_dst.row_mut(v);
                for i in 0..d {
                    dzv[i] += ds * a_src[i] + alpha * dov[i];
                }
            } else {
                let u = nbrs[k - 1];
                let zu = &z_src.data[u * d..u * d + d];
                for i in 0..d {
                    g_src[i] += ds * zu[i];
                }
                let dzu = d_z_src.row_mut(u);
                for i in 0..d {
                    dzu[i] += ds * a_src[i] + alpha * dov[i];
                }
            }
        }
        let zv = z_dst.row(v);
        for i in 0..d {
            g_dst[i] += de_dst * zv[i];
        }
        let dzv = d_z_dst.row_mut(v);
        for i in 0..d {
            dzv[i] += de_dst * a_dst[i];
        }
    }
}

/// Exact gradient of `Σ_e cotangent[e] · q[e]` with respect to every
/// learnable parameter. `cotangent` is aligned with `g.selection()`.
pub fn q_backward(
    g: &JobAllocationGraph,
    params: &QNetworkParams,
    tape: &ForwardTape,
    cotangent: &[f64],
) -> QNetworkParams {
    assert_eq!(
        cotangent.len(),
        g.selection().len(),
        "cotangent must align with the selection set"
    );
    let mut grad = params.zeros_like();
    let last = params.modules.len() - 1;
    let d_last = params.modules[last].d_out();
    let mut d_mu = Flat::zeros(g.n_people(), d_last);
    let mut d_nu = Flat::zeros(g.n_jobs(), d_last);
    // Inner-product head.
    for (e, &c) in g.selection().iter().zip(cotangent) {
        if c == 0.0 {
            continue;
        }
        let fm = tape.final_mu.row(e.person);
        let fnu = tape.final_nu.row(e.job);
        let dm = d_mu.row_mut(e.person);
        for i in 0..d_last {
            dm[i] += c * fnu[i];
        }
        let dn = d_nu.row_mut(e.job);
        for i in 0..d_last {
            dn[i] += c * fm[i];
        }
    }
    for i in (0..params.modules.len()).rev() {
        let module = &params.modules[i];
        let tape_i = &tape.modules[i];
        let g_mod = &mut grad.modules[i];
        let d = module.d_out();
        let (d_mu_attn, d_nu_merged) = if let Some(nt) = &tape_i.norm {
            let norm = module.norm.as_ref().unwrap();
            let scale = norm.scale.as_slice().unwrap();
            let g_norm = g_mod.norm.as_mut().unwrap();
            let d_scale = g_norm.scale.as_slice_mut().unwrap();
            let d_shift = g_norm.shift.as_slice_mut().unwrap();
            let d_mu_postln = gelu_backward(&d_mu, &nt.mu_postln);
            let d_nu_postln = gelu_backward(&d_nu, &nt.nu_postln);
            let d_mu_pre = layer_norm_backward(
                &d_mu_postln,
                &nt.mu_xhat,
                &nt.mu_inv_std,
                scale,
                d_scale,
                d_shift,
            );
            let d_nu_pre = layer_norm_backward(
                &d_nu_postln,
                &nt.nu_xhat,
                &nt.nu_inv_std,
                scale,
                d_scale,
                d_shift,
            );
            (d_mu_pre, d_nu_pre)
        } else {
            (d_mu, d_nu)
        };
        // Merger backward.
        let lambda = module.merger.lambda;
        let w = module.merger.fc_weight.as_slice().unwrap();
        let mut d_nu_sel = Flat::zeros(g.n_jobs(), d);
        let mut d_nu_conf = Flat::zeros(g.n_jobs(), d);
        {
            let gm = &mut g_mod.merger;
            let gw = gm.fc_weight.as_slice_mut().unwrap();
            let gb = gm.fc_bias.as_slice_mut().unwrap();
            let mut g_lambda = 0.0;
            for r in 0..g.n_jobs() {
                let dm = d_nu_merged.row(r);
                let f1 = tape_i.fc_xy.row(r);
                let f2 = tape_i.fc_yx.row(r);
                let xr = tape_i.nu_sel.row(r);
                let yr = tape_i.nu_conf.row(r);
                let dx = d_nu_sel.row_mut(r);
                let dy = d_nu_conf.row_mut(r);
                for o in 0..d {
                    let dv = dm[o];
                    if dv == 0.0 {
                        continue;
                    }
                    g_lambda += dv * 0.5 * (f1[o] + f2[o]);
                    // Both concatenation orders receive the same cotangent.
                    let dfc = 0.5 * lambda * dv;
                    gb[o] += 2.0 * dfc;
                    for iin in 0..d {
                        let w_hi = w[iin * d + o];
                        let w_lo = w[(iin + d) * d + o];
                        dx[iin] += dfc * (w_hi + w_lo);
                        dy[iin] += dfc * (w_hi + w_lo);
                        gw[iin * d + o] += dfc * (xr[iin] + yr[iin]);
                        gw[(iin + d) * d + o] += dfc * (yr[iin] + xr[iin]);
                    }
                }
            }
            gm.lambda = g_lambda;
        }
        // Conflict attention backward (z_dst aliases z_src).
        let mut d_conf_z = Flat::zeros(g.n_jobs(), d);
        {
            let conf = &module.conflict_attn;
            let attn = conf.attn.as_slice().unwrap();
            let (a_dst, a_src) = attn.split_at(d);
            let mut d_conf_z_src = Flat::zeros(g.n_jobs(), d);
            attention_dest_backward(
                g.n_jobs(),
                |j| conflict_neighbors(g, params.conflict_msg_dir, j),
                &tape_i.conf_jobs,
                &tape_i.conf_z,
                &tape_i.conf_z,
                &d_nu_conf,
                &mut d_conf_z,
                &mut d_conf_z_src,
                a_dst,
                a_src,
                g_mod.conflict_attn.attn.as_slice_mut().unwrap(),
                conf.leaky_slope,
            );
            for (a, b) in d_conf_z.data.iter_mut().zip(&d_conf_z_src.data) {
                *a += b;
            }
        }
        // Selection attention backward over both destination families.
        let mut d_sel_z_people = Flat::zeros(g.n_people(), d);
        let mut d_sel_z_jobs = Flat::zeros(g.n_jobs(), d);
        {
            let sel = &module.selection_attn;
            let attn = sel.attn.as_slice().unwrap();
            let (a_dst, a_src) = attn.split_at(d);
            let slope = sel.leaky_slope;
            let g_attn = g_mod.selection_attn.attn.as_slice_mut().unwrap();
            attention_dest_backward(
                g.n_people(),
                |p| g.person_jobs(p),
                &tape_i.sel_people,
                &tape_i.sel_z_people,
                &tape_i.sel_z_jobs,
                &d_mu_attn,
                &mut d_sel_z_people,
                &mut d_sel_z_jobs,
                a_dst,
                a_src,
                g_attn,
                slope,
            );
            attention_dest_backward(
                g.n_jobs(),
                |j| g.job_people(j),
                &tape_i.sel_jobs,
                &tape_i.sel_z_jobs,
                &tape_i.sel_z_people,
                &d_nu_sel,
                &mut d_sel_z_jobs,
                &mut d_sel_z_people,
                a_dst,
                a_src,
                g_attn,
                slope,
            );
        }
        // Through the shared linear transforms back to the module inputs.
        let sel_w = module.selection_attn.weight.as_slice().unwrap();
        let conf_w = module.conflict_attn.weight.as_slice().unwrap();
        weight_grad_acc(
            &tape_i.mu_in,
            &d_sel_z_people,
            g_mod.selection_attn.weight.as_slice_mut().unwrap(),
        );
        weight_grad_acc(
            &tape_i.nu_in,
            &d_sel_z_jobs,
            g_mod.selection_attn.weight.as_slice_mut().unwrap(),
        );
        weight_grad_acc(
            &tape_i.nu_in,
            &d_conf_z,
            g_mod.conflict_attn.weight.as_slice_mut().unwrap(),
        );
        let d_in = module.d_in();
        let d_mu_in = matmul_transposed(&d_sel_z_people, sel_w, d_in);
        let mut d_nu_in = matmul_transposed(&d_sel_z_jobs, sel_w, d_in);
        let d_nu_conf_in = matmul_transposed(&d_conf_z, conf_w, d_in);
        for (a, b) in d_nu_in.data.iter_mut().zip(&d_nu_conf_in.data) {
            *a += b;
        }
        d_mu = d_mu_in;
        d_nu = d_nu_in;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Assignment, JobAllocationGraph};
    use approx::assert_abs_diff_eq;

    fn tiny_graph() -> JobAllocationGraph {
        JobAllocationGraph::new(
            3,
            5,
            vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 4), (0, 4)],
            vec![(0, 1), (1, 2), (4, 3), (3, 1)],
        )
        .unwrap()
    }

    /// Adds seeded noise to every learnable scalar so lambda, biases, and
    /// norm params all leave their (often zero) init values.
    fn randomized(mut params: QNetworkParams, seed: u64, spread: f64) -> QNetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = params
            .flatten()
            .iter()
            .map(|v| v + rng.gen_range(-spread..spread))
            .collect();
        params.read_flat(&flat);
        params
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        assert_eq!(QNetworkParams::init(7), QNetworkParams::init(7));
        assert_ne!(
            QNetworkParams::init(7).flatten(),
            QNetworkParams::init(8).flatten()
        );
    }

    #[test]
    fn init_shapes_follow_default_dims() {
        let p = QNetworkParams::init(0);
        assert_eq!(p.modules.len(), 3);
        assert_eq!(p.modules[0].selection_attn.weight.dim(), (2, 16));
        assert_eq!(p.modules[2].selection_attn.weight.dim(), (16, 8));
        assert_eq!(p.modules[2].merger.fc_weight.dim(), (16, 8));
        assert!(p.modules[0].norm.is_some());
        assert!(p.modules[1].norm.is_some());
        assert!(p.modules[2].norm.is_none());
        for m in &p.modules {
            assert_eq!(m.merger.lambda, 0.0);
        }
    }

    #[test]
    fn flatten_round_trips() {
        let p = QNetworkParams::init(3);
        let flat = p.flatten();
        assert_eq!(flat.len(), p.param_count());
        let mut q = QNetworkParams::init(4);
        q.read_flat(&flat);
        assert_eq!(q.flatten(), flat);
        assert_eq!(q, p);
    }

    #[test]
    fn attention_isolated_vertex_keeps_its_transform() {
        // One vertex, no edges: alpha_self = 1, output = W h.
        let params = AttentionLayerParams {
            weight: Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            attn: Array1::from_vec(vec![0.3, -0.2, 0.1, 0.5]),
            leaky_slope: 0.2,
        };
        let h = Array2::from_shape_vec((1, 2), vec![1.0, -1.0]).unwrap();
        let out = attention_forward(&[vec![]], &h, &params).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[0, 1]], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn attention_zero_scorer_averages_the_neighborhood() {
        // Two vertices, one edge, scorer 0: alpha = 1/2 each, so the output is
        // the mean of the two transformed embeddings.
        let params = AttentionLayerParams {
            weight: Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            attn: Array1::zeros(4),
            leaky_slope: 0.2,
        };
        let h = Array2::from_shape_vec((2, 2), vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let out = attention_forward(&[vec![1], vec![0]], &h, &params).unwrap();
        for v in 0..2 {
            assert_abs_diff_eq!(out[[v, 0]], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(out[[v, 1]], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_rejects_mismatched_shapes() {
        let params = AttentionLayerParams {
            weight: Array2::zeros((3, 2)),
            attn: Array1::zeros(4),
            leaky_slope: 0.2,
        };
        let h = Array2::zeros((2, 2));
        assert!(attention_forward(&[vec![1], vec![0]], &h, &params).is_err());
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let params = AttentionLayerParams {
            weight: Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3),
            attn: Array1::from_shape_fn(8, |i| 0.1 * i as f64 - 0.3),
            leaky_slope: 0.2,
        };
        let h = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.25 - 1.0);
        let neighbors = vec![vec![1, 2], vec![0], vec![0, 3], vec![2]];
        let out = attention_forward(&neighbors, &h, &params).unwrap();
        let perm = [3usize, 2, 1, 0];
        let mut h2 = Array2::zeros((4, 3));
        for v in 0..4 {
            h2.row_mut(perm[v]).assign(&h.row(v));
        }
        let mut n2 = vec![Vec::new(); 4];
        for v in 0..4 {
            n2[perm[v]] = neighbors[v].iter().map(|&u| perm[u]).collect();
        }
        let out2 = attention_forward(&n2, &h2, &params).unwrap();
        for v in 0..4 {
            for c in 0..4 {
                assert_abs_diff_eq!(out2[[perm[v], c]], out[[v, c]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn merger_with_zero_lambda_is_all_ones() {
        let g = tiny_graph();
        let p = QNetworkParams::init(11); // lambda = 0 everywhere at init
        let f = g.degree_features();
        let (_, nu) = cae_forward(&g, &f.people, &f.jobs, &p.modules[0]).unwrap();
        for v in nu.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn merger_is_symmetric_under_stream_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let fc_weight = glorot(2 * d, d, &mut rng);
        let fc_bias = glorot_vec(d, &mut rng);
        let x = Flat::from_array(&Array2::from_shape_fn((6, d), |(i, j)| {
            (i + j) as f64 * 0.2 - 0.5
        }));
        let y = Flat::from_array(&Array2::from_shape_fn((6, d), |(i, j)| {
            (i as f64 - j as f64) * 0.3
        }));
        let w = fc_weight.as_slice().unwrap();
        let b = fc_bias.as_slice().unwrap();
        let (a, _, _) = merge_streams(&x, &y, w, b, 0.7);
        let (bb, _, _) = merge_streams(&y, &x, w, b, 0.7);
        assert_eq!(a.data, bb.data);
    }

    #[test]
    fn merger_single_row_matches_hand_computation() {
        // d_out = 2, one row: x = [1, 2], y = [3, -1], lambda = 1.
        let w = vec![
            1.0, 0.0, //
            0.0, 1.0, //
            2.0, 0.0, //
            0.0, -1.0,
        ];
        let b = vec![0.5, -0.5];
        let x = Flat {
            data: vec![1.0, 2.0],
            cols: 2,
        };
        let y = Flat {
            data: vec![3.0, -1.0],
            cols: 2,
        };
        // FC([x‖y]) = [1 + 6 + 0.5, 2 + 1 - 0.5] = [7.5, 2.5]
        // FC([y‖x]) = [3 + 2 + 0.5, -1 - 2 - 0.5] = [5.5, -3.5]
        // out = mean(1 + [7.5, 2.5], 1 + [5.5, -3.5]) = [7.5, 0.5]
        let (out, _, _) = merge_streams(&x, &y, &w, &b, 1.0);
        assert_abs_diff_eq!(out.data[0], 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn q_values_are_empty_on_empty_selection() {
        let g = JobAllocationGraph::new(2, 3, vec![], vec![(0, 1)]).unwrap();
        let p = QNetworkParams::init(0);
        assert!(q_forward(&g, &p).is_empty());
    }

    #[test]
    fn q_is_the_inner_product_of_final_embeddings() {
        let g = tiny_graph();
        let params = randomized(QNetworkParams::init(21), 3, 0.3);
        let (q, tape) = q_forward_with_tape(&g, &params);
        let mu = tape.final_people();
        let nu = tape.final_jobs();
        for (i, a) in g.selection().iter().enumerate() {
            let dot: f64 = mu
                .row(a.person)
                .iter()
                .zip(nu.row(a.job).iter())
                .map(|(x, y)| x * y)
                .sum();
            assert_abs_diff_eq!(q[i], dot, epsilon = 1e-12);
        }
    }

    #[test]
    fn q_forward_is_permutation_invariant() {
        let g = tiny_graph();
        let params = randomized(QNetworkParams::init(9), 33, 0.3);
        let q = q_forward(&g, &params);
        let pperm = [2usize, 0, 1];
        let jperm = [4usize, 3, 0, 2, 1];
        let sel: Vec<(usize, usize)> = g
            .selection()
            .iter()
            .map(|a| (pperm[a.person], jperm[a.job]))
            .collect();
        let conf: Vec<(usize, usize)> = g
            .conflicts()
            .iter()
            .map(|&(u, v)| (jperm[u], jperm[v]))
            .collect();
        let g2 = JobAllocationGraph::new(3, 5, sel, conf).unwrap();
        let q2 = q_forward(&g2, &params);
        for (i, a) in g.selection().iter().enumerate() {
            let relabeled = Assignment::new(pperm[a.person], jperm[a.job]);
            let j = g2.selection_index(relabeled).unwrap();
            assert_abs_diff_eq!(q2[j], q[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let g = tiny_graph();
        let params = randomized(QNetworkParams::init(4), 12, 0.4);
        let (_, tape) = q_forward_with_tape(&g, &params);
        let xhats = tape.job_xhat_rows();
        assert_eq!(xhats.len(), 2);
        for xhat in xhats {
            for r in 0..xhat.nrows() {
                let row = xhat.row(r);
                let mean: f64 = row.sum() / row.len() as f64;
                let var: f64 =
                    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
                assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
                // Var of xhat is var/(var+eps): at most 1, near 1 for
                // non-degenerate rows.
                assert!(var <= 1.0 + 1e-9, "row var {var}");
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let g = tiny_graph();
        let params = QNetworkParams::init(1);
        let (q, tape) = q_forward_with_tape(&g, &params);
        let grad = q_backward(&g, &params, &tape, &vec![0.0; q.len()]);
        assert!(grad.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_gradient_is_nonzero_at_zero_lambda() {
        let g = tiny_graph();
        let params = QNetworkParams::init(6); // lambda = 0
        let (q, tape) = q_forward_with_tape(&g, &params);
        let cot = vec![1.0; q.len()];
        let grad = q_backward(&g, &params, &tape, &cot);
        // The merged output still depends on lambda through FC([x‖y]).
        let lambda_grads: Vec<f64> = grad.modules.iter().map(|m| m.merger.lambda).collect();
        assert!(
            lambda_grads.iter().any(|&v| v.abs() > 1e-9),
            "lambda grads {lambda_grads:?}"
        );
    }

    /// Central finite differences over every learnable scalar.
    fn finite_difference_check(seed: u64, g: &JobAllocationGraph, dir: ConflictMsgDir) {
        let params = randomized(
            QNetworkParams::init_with(&[(2, 5), (5, 4), (4, 3)], dir, seed),
            seed ^ 0xdead_beef,
            0.5,
        );
        let (q, tape) = q_forward_with_tape(g, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let cot: Vec<f64> = q.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = q_backward(g, &params, &tape, &cot).flatten();
        let base = params.flatten();
        let h = 1e-5;
        let mut p = params.clone();
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] += h;
            p.read_flat(&probe);
            let fp: f64 = q_forward(g, &p).iter().zip(&cot).map(|(a, b)| a * b).sum();
            probe[i] = base[i] - h;
            p.read_flat(&probe);
            let fm: f64 = q_forward(g, &p).iter().zip(&cot).map(|(a, b)| a * b).sum();
            let numeric = (fp - fm) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-3);
            let rel = (analytic[i] - numeric).abs() / denom;
            assert!(
                rel < 1e-4,
                "param {i}: analytic {} vs numeric {numeric} (rel {rel:.2e})",
                analytic[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = tiny_graph();
        finite_difference_check(17, &g, ConflictMsgDir::Incoming);
    }

    #[test]
    fn gradients_match_finite_differences_outgoing_messages() {
        let g = tiny_graph();
        finite_difference_check(29, &g, ConflictMsgDir::Outgoing);
    }
}
