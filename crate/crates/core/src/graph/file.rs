//! JSON graph specification files.
//!
//! ```json
//! {
//!   "variables": [{"name": "S", "size": 4}, {"name": "X", "size": 2}],
//!   "sources":   [{"name": "pi_S", "variable": "S", "prior": "uniform", "trainable": true}],
//!   "blocks":    [{"name": "P_X", "from": "S", "to": "X", "matrix": "uniform", "trainable": true}],
//!   "diverters": []
//! }
//! ```
//!
//! `matrix` is `"uniform"`, a list of rows (row = input symbol), or
//! `{"builder": "expander" | "projector", "sizes": [..], "j": 1}`.
//! Builder blocks are always fixed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_expander, build_projector, GraphSpec, SisoBlock, SourceBlock};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::messages::{normalize, Distribution};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub variables: Vec<VariableEntry>,
    #[serde(default)]
    pub sources: Vec<SourceEntry>,
    #[serde(default)]
    pub blocks: Vec<BlockEntry>,
    #[serde(default)]
    pub diverters: Vec<DiverterEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VariableEntry {
    pub name: String,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Keyword {
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PriorSpec {
    Keyword(Keyword),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BuilderKind {
    Expander,
    Projector,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BuilderSpec {
    pub builder: BuilderKind,
    pub sizes: Vec<usize>,
    pub j: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixSpec {
    Keyword(Keyword),
    Rows(Vec<Vec<f64>>),
    Builder(BuilderSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub name: String,
    pub variable: String,
    pub prior: PriorSpec,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub name: String,
    pub from: String,
    pub to: String,
    pub matrix: MatrixSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiverterEntry {
    pub variable: String,
    pub taps: Vec<String>,
}

fn default_true() -> bool {
    true
}

fn parse_err(context: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        context: context.into(),
        message: message.into(),
    }
}

impl GraphFile {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            // serde_json already reports the line and column
            let message = if path == "?" || path == "." {
                inner.to_string()
            } else {
                format!("field `{path}`: {inner}")
            };
            parse_err(context, message)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph file serializes")
    }

    pub fn into_spec(self, context: &str) -> Result<GraphSpec> {
        let mut g = GraphSpec::new();
        for v in &self.variables {
            g.add_variable(&v.name, v.size);
        }
        let size_of = |g: &GraphSpec, var: &str, field: String| {
            g.variable_size(var)
                .ok_or_else(|| parse_err(context, format!("field `{field}`: unknown variable `{var}`")))
        };
        for (i, s) in self.sources.into_iter().enumerate() {
            let prior = match s.prior {
                PriorSpec::Keyword(Keyword::Uniform) => {
                    Distribution::uniform(size_of(&g, &s.variable, format!("sources[{i}].variable"))?)
                }
                PriorSpec::Values(v) => normalize(&v)
                    .map_err(|e| parse_err(context, format!("field `sources[{i}].prior`: {e}")))?,
            };
            let block = SourceBlock {
                name: s.name,
                prior,
                trainable: s.trainable,
            };
            g.add_source(&s.variable, block);
        }
        for (i, b) in self.blocks.into_iter().enumerate() {
            let field = |f: &str| format!("blocks[{i}].{f}");
            let (theta, trainable) = match b.matrix {
                MatrixSpec::Keyword(Keyword::Uniform) => (
                    Matrix::uniform_rows(
                        size_of(&g, &b.from, field("from"))?,
                        size_of(&g, &b.to, field("to"))?,
                    ),
                    b.trainable.unwrap_or(true),
                ),
                MatrixSpec::Rows(rows) => (
                    Matrix::from_rows(&rows)
                        .map_err(|e| parse_err(context, format!("field `{}`: {e}", field("matrix"))))?,
                    b.trainable.unwrap_or(true),
                ),
                MatrixSpec::Builder(spec) => {
                    if b.trainable == Some(true) {
                        return Err(parse_err(
                            context,
                            format!("field `{}`: builder blocks are fixed", field("trainable")),
                        ));
                    }
                    let built = match spec.builder {
                        BuilderKind::Expander => build_expander(&spec.sizes, spec.j),
                        BuilderKind::Projector => build_projector(&spec.sizes, spec.j),
                    }
                    .map_err(|e| parse_err(context, format!("field `{}`: {e}", field("matrix"))))?;
                    (built.theta, false)
                }
            };
            g.add_block(&b.from, &b.to, SisoBlock::new(b.name, theta, trainable));
        }
        for d in self.diverters {
            let taps: Vec<&str> = d.taps.iter().map(String::as_str).collect();
            g.add_diverter(&d.variable, &taps);
        }
        Ok(g)
    }

    /// Explicit matrices everywhere, so the file reproduces the graph exactly.
    pub fn from_spec(g: &GraphSpec) -> Self {
        GraphFile {
            variables: g
                .variables
                .iter()
                .map(|v| VariableEntry {
                    name: v.name.clone(),
                    size: v.size,
                })
                .collect(),
            sources: g
                .sources
                .iter()
                .map(|s| SourceEntry {
                    name: s.block.name.clone(),
                    variable: s.variable.clone(),
                    prior: PriorSpec::Values(s.block.prior.values().to_vec()),
                    trainable: s.block.trainable,
                })
                .collect(),
            blocks: g
                .blocks
                .iter()
                .map(|b| BlockEntry {
                    name: b.block.name.clone(),
                    from: b.from.clone(),
                    to: b.to.clone(),
                    matrix: MatrixSpec::Rows(b.block.theta.to_rows()),
                    trainable: Some(b.block.trainable),
                })
                .collect(),
            diverters: g
                .diverters
                .iter()
                .map(|d| DiverterEntry {
                    variable: d.variable.clone(),
                    taps: d.taps.clone(),
                })
                .collect(),
        }
    }
}

impl GraphSpec {
    pub fn from_json(text: &str) -> Result<GraphSpec> {
        GraphFile::from_json(text, "graph")?.into_spec("graph")
    }

    pub fn to_json(&self) -> String {
        GraphFile::from_spec(self).to_json()
    }

    pub fn load(path: &Path) -> Result<GraphSpec> {
        let text = crate::io::read_text(path)?;
        let ctx = path.display().to_string();
        GraphFile::from_json(&text, &ctx)?.into_spec(&ctx)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &(self.to_json() + "\n"))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(&GraphFile::from_spec(self)).expect("serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}
