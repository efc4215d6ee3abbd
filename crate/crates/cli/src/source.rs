//! Graph and model sources named on the command line.
//!
//! Graph sources:
//!
//! ```text
//! sbm:<blocks>x<block_size>:<p_in>:<p_out>
//! powerlaw:<nodes>:<avg_degree>:<exponent>
//! <path>            edge list, or binary CSR when the file ends in .rbkg
//! ```
//!
//! Model sources: `gin[:hidden=H]`, `graphsage[:hidden=H]`, `sum[:out=D]`
//! (one sum-aggregation layer) or a path to a JSON model descriptor.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rubik_core::gcn::{builtin_models, Aggregator, ModelSpec, UpdateKind};
use rubik_core::graph::{generate_powerlaw, generate_sbm, load_edge_list, EdgeListOptions, Graph};

#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    Sbm {
        blocks: usize,
        block_size: usize,
        p_in: f64,
        p_out: f64,
    },
    PowerLaw {
        nodes: usize,
        avg_degree: f64,
        exponent: f64,
    },
    File(PathBuf),
}

fn field<T: FromStr>(s: &str, what: &str, spec: &str) -> Result<T> {
    s.parse()
        .map_err(|_| anyhow::anyhow!("bad {what} {s:?} in graph spec {spec:?}"))
}

impl FromStr for GraphSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("sbm:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let [shape, p_in, p_out] = parts[..] else {
                bail!("expected sbm:<B>x<S>:<p_in>:<p_out>, got {s:?}");
            };
            let Some((b, n)) = shape.split_once('x') else {
                bail!("expected <blocks>x<block_size> in {s:?}");
            };
            return Ok(GraphSource::Sbm {
                blocks: field(b, "block count", s)?,
                block_size: field(n, "block size", s)?,
                p_in: field(p_in, "p_in", s)?,
                p_out: field(p_out, "p_out", s)?,
            });
        }
        if let Some(rest) = s.strip_prefix("powerlaw:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let [n, avg, exp] = parts[..] else {
                bail!("expected powerlaw:<n>:<avg_degree>:<exponent>, got {s:?}");
            };
            return Ok(GraphSource::PowerLaw {
                nodes: field(n, "node count", s)?,
                avg_degree: field(avg, "average degree", s)?,
                exponent: field(exp, "exponent", s)?,
            });
        }
        if s.is_empty() {
            bail!("empty graph spec");
        }
        Ok(GraphSource::File(PathBuf::from(s)))
    }
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSource::Sbm {
                blocks,
                block_size,
                p_in,
                p_out,
            } => write!(f, "sbm:{blocks}x{block_size}:{p_in}:{p_out}"),
            GraphSource::PowerLaw {
                nodes,
                avg_degree,
                exponent,
            } => write!(f, "powerlaw:{nodes}:{avg_degree}:{exponent}"),
            GraphSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// How edge-list files are read.
#[derive(Clone, Copy, Debug, Default)]
pub struct FileOptions {
    pub directed: bool,
    pub base_index: u64,
}

impl GraphSource {
    /// Short label for CSV rows: the file stem or the generator spec.
    pub fn label(&self) -> String {
        match self {
            GraphSource::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            other => other.to_string(),
        }
    }

    /// Generators draw from `seed`; files ignore it.
    pub fn load(&self, feature_dim: usize, file: FileOptions, seed: u64) -> Result<Graph> {
        let g = match self {
            GraphSource::Sbm {
                blocks,
                block_size,
                p_in,
                p_out,
            } => generate_sbm(*blocks, *block_size, *p_in, *p_out, seed)?,
            GraphSource::PowerLaw {
                nodes,
                avg_degree,
                exponent,
            } => generate_powerlaw(*nodes, *avg_degree, *exponent, seed)?,
            GraphSource::File(path) => {
                if path.extension().is_some_and(|e| e == "rbkg") {
                    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                    Graph::read_binary(std::io::BufReader::new(f))
                        .with_context(|| format!("reading {}", path.display()))?
                } else {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    load_edge_list(
                        &text,
                        EdgeListOptions {
                            directed: file.directed,
                            feature_dim,
                            base_index: file.base_index,
                        },
                    )
                    .with_context(|| format!("parsing {}", path.display()))?
                }
            }
        };
        Ok(g.with_feature_dim(feature_dim))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    Gin { hidden: Option<usize> },
    GraphSage { hidden: Option<usize> },
    Sum { out: Option<usize> },
    File(PathBuf),
}

impl FromStr for ModelSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, opts) = s.split_once(':').unwrap_or((s, ""));
        let value = |key: &str| -> Result<Option<usize>> {
            if opts.is_empty() {
                return Ok(None);
            }
            let Some(v) = opts.strip_prefix(key).and_then(|r| r.strip_prefix('=')) else {
                bail!("model {name:?} accepts only {key}=<n>, got {opts:?}");
            };
            let n: usize = v.parse().with_context(|| format!("bad {key} in {s:?}"))?;
            if n == 0 {
                bail!("{key} must be positive in {s:?}");
            }
            Ok(Some(n))
        };
        match name {
            "gin" => Ok(ModelSource::Gin {
                hidden: value("hidden")?,
            }),
            "graphsage" => Ok(ModelSource::GraphSage {
                hidden: value("hidden")?,
            }),
            "sum" => Ok(ModelSource::Sum { out: value("out")? }),
            _ if s.ends_with(".json") => Ok(ModelSource::File(PathBuf::from(s))),
            _ => bail!("unknown model {s:?}; expected gin, graphsage, sum or a .json file"),
        }
    }
}

impl fmt::Display for ModelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSource::Gin { hidden: None } => f.write_str("gin"),
            ModelSource::Gin { hidden: Some(h) } => write!(f, "gin:hidden={h}"),
            ModelSource::GraphSage { hidden: None } => f.write_str("graphsage"),
            ModelSource::GraphSage { hidden: Some(h) } => write!(f, "graphsage:hidden={h}"),
            ModelSource::Sum { out: None } => f.write_str("sum"),
            ModelSource::Sum { out: Some(d) } => write!(f, "sum:out={d}"),
            ModelSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl ModelSource {
    /// Same model with a different hidden (or output) width.
    pub fn with_hidden(&self, h: usize) -> Result<Self> {
        Ok(match self {
            ModelSource::Gin { .. } => ModelSource::Gin { hidden: Some(h) },
            ModelSource::GraphSage { .. } => ModelSource::GraphSage { hidden: Some(h) },
            ModelSource::Sum { .. } => ModelSource::Sum { out: Some(h) },
            ModelSource::File(p) => bail!("cannot override the width of model file {}", p.display()),
        })
    }

    pub fn build(&self, in_dim: usize, seed: u64) -> Result<ModelSpec> {
        let m = match self {
            ModelSource::Gin { hidden } => builtin_models(in_dim, *hidden, seed).gin,
            ModelSource::GraphSage { hidden } => builtin_models(in_dim, *hidden, seed).graphsage,
            ModelSource::Sum { out } => ModelSpec::single_layer(
                "sum",
                in_dim,
                out.unwrap_or(in_dim),
                Aggregator::Sum,
                UpdateKind::SageConcat,
                seed,
            ),
            ModelSource::File(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let m: ModelSpec =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                if m.in_dim() != in_dim {
                    bail!(
                        "model {} expects {}-dim input, features are {in_dim}-dim",
                        path.display(),
                        m.in_dim()
                    );
                }
                m
            }
        };
        Ok(m)
    }
}
