//! Versioned text checkpoints: network dims and parameter blocks, the init
//! seed, the training distribution, and free-form metadata. Floats are
//! written in shortest round-trip form, so load(save(x)) is bit-exact.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::gen::{GeneratorConfig, GraphFamily};
use crate::qnet::{
    AttentionLayerParams, CaeModuleParams, ConflictMsgDir, LayerNormParams, MergerParams,
    QNetworkParams,
};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed checkpoint at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: QNetworkParams,
    pub init_seed: u64,
    /// The distribution the checkpoint was trained on, when known.
    pub train_dist: Option<GeneratorConfig>,
    /// Ordered key/value pairs (keys must not contain whitespace).
    pub meta: Vec<(String, String)>,
}

fn fmt_floats(values: impl Iterator<Item = f64>) -> String {
    let mut out = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out
}

fn dist_line(c: &GeneratorConfig) -> String {
    format!(
        "train_dist family={} jobs={} people={} p_conflict={} p_select={} ba_m={} seed={}",
        c.family.as_str(),
        c.n_jobs,
        c.n_people,
        c.p_conflict,
        c.p_select,
        c.ba_m,
        c.seed
    )
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::from("japckpt 1\n");
        out.push_str(&format!(
            "conflict_msg {}\n",
            self.params.conflict_msg_dir.as_str()
        ));
        out.push_str(&format!("init_seed {}\n", self.init_seed));
        if let Some(dist) = &self.train_dist {
            out.push_str(&dist_line(dist));
            out.push('\n');
        }
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        out.push_str(&format!("modules {}\n", self.params.modules.len()));
        for (i, m) in self.params.modules.iter().enumerate() {
            out.push_str(&format!(
                "module {i} d_in {} d_out {} leaky {} norm {}\n",
                m.d_in(),
                m.d_out(),
                m.selection_attn.leaky_slope,
                u8::from(m.norm.is_some())
            ));
            out.push_str(&format!(
                "sel_w {}\n",
                fmt_floats(m.selection_attn.weight.iter().copied())
            ));
            out.push_str(&format!(
                "sel_a {}\n",
                fmt_floats(m.selection_attn.attn.iter().copied())
            ));
            out.push_str(&format!(
                "conf_w {}\n",
                fmt_floats(m.conflict_attn.weight.iter().copied())
            ));
            out.push_str(&format!(
                "conf_a {}\n",
                fmt_floats(m.conflict_attn.attn.iter().copied())
            ));
            out.push_str(&format!(
                "fc_w {}\n",
                fmt_floats(m.merger.fc_weight.iter().copied())
            ));
            out.push_str(&format!(
                "fc_b {}\n",
                fmt_floats(m.merger.fc_bias.iter().copied())
            ));
            out.push_str(&format!("lambda {}\n", m.merger.lambda));
            if let Some(n) = &m.norm {
                out.push_str(&format!("norm_scale {}\n", fmt_floats(n.scale.iter().copied())));
                out.push_str(&format!("norm_shift {}\n", fmt_floats(n.shift.iter().copied())));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        Parser {
            lines: text.lines().enumerate().peekable(),
        }
        .parse()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_text()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Parser<'a> {
    fn err(line: usize, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed {
            line,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str), CheckpointError> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Self::err(0, "unexpected end of checkpoint"))
    }

    fn tagged(&mut self, tag: &str) -> Result<(usize, &'a str), CheckpointError> {
        let (no, line) = self.next_line()?;
        let rest = line
            .strip_prefix(tag)
            .ok_or_else(|| Self::err(no, format!("expected `{tag}` record")))?;
        Ok((no, rest.trim_start()))
    }

    fn floats(no: usize, text: &str, expect: usize) -> Result<Vec<f64>, CheckpointError> {
        let values: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|_| Self::err(no, "bad float"))?;
        if values.len() != expect {
            return Err(Self::err(
                no,
                format!("expected {expect} values, found {}", values.len()),
            ));
        }
        Ok(values)
    }

    fn parse(mut self) -> Result<Checkpoint, CheckpointError> {
        let (no, header) = self.next_line()?;
        if header != "japckpt 1" {
            return Err(Self::err(no, "missing `japckpt 1` header"));
        }
        let (no, dir) = self.tagged("conflict_msg")?;
        let conflict_msg_dir = ConflictMsgDir::parse(dir)
            .ok_or_else(|| Self::err(no, "conflict_msg must be `in` or `out`"))?;
        let (no, seed) = self.tagged("init_seed")?;
        let init_seed: u64 = seed.parse().map_err(|_| Self::err(no, "bad init_seed"))?;
        let mut train_dist = None;
        if let Some((_, line)) = self.lines.peek() {
            if line.starts_with("train_dist") {
                let (no, rest) = self.tagged("train_dist")?;
                train_dist = Some(Self::parse_dist(no, rest)?);
            }
        }
        let mut meta = Vec::new();
        while let Some((_, line)) = self.lines.peek() {
            if !line.starts_with("meta ") {
                break;
            }
            let (no, rest) = self.tagged("meta")?;
            let (key, value) = rest
                .split_once(' ')
                .ok_or_else(|| Self::err(no, "meta needs key and value"))?;
            meta.push((key.to_string(), value.to_string()));
        }
        let (no, count) = self.tagged("modules")?;
        let count: usize = count.parse().map_err(|_| Self::err(no, "bad module count"))?;
        let mut modules = Vec::with_capacity(count);
        for i in 0..count {
            let (no, header) = self.tagged("module")?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            if fields.len() != 9
                || fields[0] != i.to_string()
                || fields[1] != "d_in"
                || fields[3] != "d_out"
                || fields[5] != "leaky"
                || fields[7] != "norm"
            {
                return Err(Self::err(no, "bad module header"));
            }
            let d_in: usize = fields[2].parse().map_err(|_| Self::err(no, "bad d_in"))?;
            let d_out: usize = fields[4].parse().map_err(|_| Self::err(no, "bad d_out"))?;
            let leaky: f64 = fields[6].parse().map_err(|_| Self::err(no, "bad leaky"))?;
            let has_norm = match fields[8] {
                "0" => false,
                "1" => true,
                _ => return Err(Self::err(no, "bad norm flag")),
            };
            let (no_w, w) = self.tagged("sel_w")?;
            let sel_w = Self::floats(no_w, w, d_in * d_out)?;
            let (no_a, a) = self.tagged("sel_a")?;
            let sel_a = Self::floats(no_a, a, 2 * d_out)?;
            let (no_w, w) = self.tagged("conf_w")?;
            let conf_w = Self::floats(no_w, w, d_in * d_out)?;
            let (no_a, a) = self.tagged("conf_a")?;
            let conf_a = Self::floats(no_a, a, 2 * d_out)?;
            let (no_w, w) = self.tagged("fc_w")?;
            let fc_w = Self::floats(no_w, w, 2 * d_out * d_out)?;
            let (no_b, b) = self.tagged("fc_b")?;
            let fc_b = Self::floats(no_b, b, d_out)?;
            let (no_l, l) = self.tagged("lambda")?;
            let lambda: f64 = l.parse().map_err(|_| Self::err(no_l, "bad lambda"))?;
            let norm = if has_norm {
                let (no_s, s) = self.tagged("norm_scale")?;
                let scale = Self::floats(no_s, s, d_out)?;
                let (no_s, s) = self.tagged("norm_shift")?;
                let shift = Self::floats(no_s, s, d_out)?;
                Some(LayerNormParams {
                    scale: Array1::from_vec(scale),
                    shift: Array1::from_vec(shift),
                })
            } else {
                None
            };
            modules.push(CaeModuleParams {
                selection_attn: AttentionLayerParams {
                    weight: Array2::from_shape_vec((d_in, d_out), sel_w).unwrap(),
                    attn: Array1::from_vec(sel_a),
                    leaky_slope: leaky,
                },
                conflict_attn: AttentionLayerParams {
                    weight: Array2::from_shape_vec((d_in, d_out), conf_w).unwrap(),
                    attn: Array1::from_vec(conf_a),
                    leaky_slope: leaky,
                },
                merger: MergerParams {
                    fc_weight: Array2::from_shape_vec((2 * d_out, d_out), fc_w).unwrap(),
                    fc_bias: Array1::from_vec(fc_b),
                    lambda,
                },
                norm,
            });
        }
        Ok(Checkpoint {
            params: QNetworkParams {
                modules,
                conflict_msg_dir,
            },
            init_seed,
            train_dist,
            meta,
        })
    }

    fn parse_dist(no: usize, rest: &str) -> Result<GeneratorConfig, CheckpointError> {
        let mut family = None;
        let mut jobs = None;
        let mut people = None;
        let mut p_conflict = None;
        let mut p_select = None;
        let mut ba_m = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Self::err(no, "train_dist needs key=value fields"))?;
            match key {
                "family" => {
                    family = Some(
                        GraphFamily::parse(value)
                            .ok_or_else(|| Self::err(no, "bad family"))?,
                    )
                }
                "jobs" => jobs = value.parse().ok(),
                "people" => people = value.parse().ok(),
                "p_conflict" => p_conflict = value.parse().ok(),
                "p_select" => p_select = value.parse().ok(),
                "ba_m" => ba_m = value.parse().ok(),
                "seed" => seed = value.parse().ok(),
                _ => return Err(Self::err(no, "unknown train_dist field")),
            }
        }
        Ok(GeneratorConfig {
            family: family.ok_or_else(|| Self::err(no, "missing family"))?,
            n_jobs: jobs.ok_or_else(|| Self::err(no, "missing jobs"))?,
            n_people: people.ok_or_else(|| Self::err(no, "missing people"))?,
            p_conflict: p_conflict.ok_or_else(|| Self::err(no, "missing p_conflict"))?,
            p_select: p_select.ok_or_else(|| Self::err(no, "missing p_select"))?,
            ba_m: ba_m.ok_or_else(|| Self::err(no, "missing ba_m"))?,
            seed: seed.ok_or_else(|| Self::err(no, "missing seed"))?,
        })
    }
}
