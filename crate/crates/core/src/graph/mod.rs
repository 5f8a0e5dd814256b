//! Topology of a normal-form factor graph.
//!
//! Variables are edges. Sources produce an edge, SISO blocks consume their
//! `from` edge and produce their `to` edge, and a diverter ties together the
//! edges listed in `variable` and `taps`. A diverter's role on each of its
//! edges is inferred: it consumes edges that some source or block produces
//! and produces every other edge, so a product-space junction is just a
//! diverter whose taps are fed by expander blocks. Edges with a single
//! endpoint are terminals, the only places where evidence is injected.

mod builders;
pub mod file;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use builders::{build_expander, build_projector, expander_matrix, projector_matrix};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::messages::Distribution;

/// Tolerance on row sums accepted by [`GraphSpec::validate`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Row-stochastic conditional `θ = P(Y|X)`, rows indexed by input symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoBlock {
    pub name: String,
    pub theta: Matrix,
    pub trainable: bool,
}

impl SisoBlock {
    pub fn new(name: impl Into<String>, theta: Matrix, trainable: bool) -> Self {
        SisoBlock {
            name: name.into(),
            theta,
            trainable,
        }
    }

    pub fn input_size(&self) -> usize {
        self.theta.rows()
    }

    pub fn output_size(&self) -> usize {
        self.theta.cols()
    }
}

/// Prior vector for a root variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBlock {
    pub name: String,
    pub prior: Distribution,
    pub trainable: bool,
}

impl SourceBlock {
    /// The prior as a `1 × M` block fed by the constant input `[1]`, so that
    /// priors and conditionals share one learning path.
    pub fn as_siso(&self) -> SisoBlock {
        SisoBlock {
            name: self.name.clone(),
            theta: Matrix::from_vec(1, self.prior.len(), self.prior.values().to_vec())
                .expect("prior shape"),
            trainable: self.trainable,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceNode {
    pub variable: String,
    pub block: SourceBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockNode {
    pub from: String,
    pub to: String,
    pub block: SisoBlock,
}

/// Equality constraint over `variable` and its replicas `taps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiverterNode {
    pub variable: String,
    pub taps: Vec<String>,
}

impl DiverterNode {
    pub fn name(&self) -> String {
        format!("diverter:{}", self.variable)
    }

    pub fn edges(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.variable).chain(&self.taps)
    }
}

/// Reference to a node of a [`GraphSpec`] by kind and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Source(usize),
    Block(usize),
    Diverter(usize),
}

/// Who produces and who consumes a variable edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Wiring {
    pub producer: Option<NodeRef>,
    pub consumer: Option<NodeRef>,
}

impl Wiring {
    pub fn degree(&self) -> usize {
        self.producer.is_some() as usize + self.consumer.is_some() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateName(String),
    UnknownVariable { node: String, variable: String },
    AlphabetMismatch {
        node: String,
        variable: String,
        expected: usize,
        found: usize,
    },
    DanglingVariable(String),
    MultipleProducers(String),
    MultipleConsumers(String),
    DiverterConflict(String),
    DiverterTooSmall(String),
    NotRowStochastic(String),
    Cycle(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateName(n) => write!(f, "duplicate name `{n}`"),
            Violation::UnknownVariable { node, variable } => {
                write!(f, "node `{node}` references unknown variable `{variable}`")
            }
            Violation::AlphabetMismatch {
                node,
                variable,
                expected,
                found,
            } => write!(
                f,
                "alphabet mismatch: node `{node}` expects size {found} on `{variable}` of size {expected}"
            ),
            Violation::DanglingVariable(v) => write!(f, "dangling edge: `{v}` is not attached to any node"),
            Violation::MultipleProducers(v) => write!(f, "variable `{v}` has more than one producer"),
            Violation::MultipleConsumers(v) => write!(f, "variable `{v}` has more than one consumer"),
            Violation::DiverterConflict(v) => {
                write!(f, "variable `{v}` cannot be attached to this diverter")
            }
            Violation::DiverterTooSmall(v) => write!(f, "diverter on `{v}` needs at least one tap"),
            Violation::NotRowStochastic(n) => write!(f, "block `{n}` is not row-stochastic"),
            Violation::Cycle(v) => write!(f, "cycle detected through `{v}`"),
        }
    }
}

/// A normal-form factor graph. Value semantics: edits return new specs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphSpec {
    pub variables: Vec<Variable>,
    pub sources: Vec<SourceNode>,
    pub blocks: Vec<BlockNode>,
    pub diverters: Vec<DiverterNode>,
}

impl GraphSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: &str, size: usize) -> &mut Self {
        self.variables.push(Variable {
            name: name.into(),
            size,
        });
        self
    }

    pub fn add_source(&mut self, variable: &str, block: SourceBlock) -> &mut Self {
        self.sources.push(SourceNode {
            variable: variable.into(),
            block,
        });
        self
    }

    pub fn add_block(&mut self, from: &str, to: &str, block: SisoBlock) -> &mut Self {
        self.blocks.push(BlockNode {
            from: from.into(),
            to: to.into(),
            block,
        });
        self
    }

    pub fn add_diverter(&mut self, variable: &str, taps: &[&str]) -> &mut Self {
        self.diverters.push(DiverterNode {
            variable: variable.into(),
            taps: taps.iter().map(|t| t.to_string()).collect(),
        });
        self
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn variable_size(&self, name: &str) -> Option<usize> {
        self.variables.iter().find(|v| v.name == name).map(|v| v.size)
    }

    pub fn node_name(&self, node: NodeRef) -> String {
        match node {
            NodeRef::Source(i) => self.sources[i].block.name.clone(),
            NodeRef::Block(i) => self.blocks[i].block.name.clone(),
            NodeRef::Diverter(i) => self.diverters[i].name(),
        }
    }

    pub fn block(&self, name: &str) -> Option<&SisoBlock> {
        self.blocks
            .iter()
            .find(|b| b.block.name == name)
            .map(|b| &b.block)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut SisoBlock> {
        self.blocks
            .iter_mut()
            .find(|b| b.block.name == name)
            .map(|b| &mut b.block)
    }

    pub fn source(&self, name: &str) -> Option<&SourceBlock> {
        self.sources
            .iter()
            .find(|s| s.block.name == name)
            .map(|s| &s.block)
    }

    /// Per-variable endpoints, plus any wiring violations found on the way.
    pub fn wiring(&self) -> (Vec<Wiring>, Vec<Violation>) {
        let mut wiring = vec![Wiring::default(); self.variables.len()];
        let mut violations = Vec::new();
        let index: BTreeMap<&str, usize> = self
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect();

        let attach = |var: &str,
                          node: NodeRef,
                          produce: bool,
                          wiring: &mut Vec<Wiring>,
                          violations: &mut Vec<Violation>| {
            let Some(&e) = index.get(var) else {
                violations.push(Violation::UnknownVariable {
                    node: self.node_name(node),
                    variable: var.into(),
                });
                return;
            };
            let slot = if produce {
                &mut wiring[e].producer
            } else {
                &mut wiring[e].consumer
            };
            if slot.is_some() {
                violations.push(if produce {
                    Violation::MultipleProducers(var.into())
                } else {
                    Violation::MultipleConsumers(var.into())
                });
            } else {
                *slot = Some(node);
            }
        };

        for (i, s) in self.sources.iter().enumerate() {
            attach(&s.variable, NodeRef::Source(i), true, &mut wiring, &mut violations);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            attach(&b.from, NodeRef::Block(i), false, &mut wiring, &mut violations);
            attach(&b.to, NodeRef::Block(i), true, &mut wiring, &mut violations);
        }
        let mut claimed = BTreeSet::new();
        for (i, d) in self.diverters.iter().enumerate() {
            for var in d.edges() {
                if !claimed.insert(var.as_str()) {
                    violations.push(Violation::DiverterConflict(var.clone()));
                    continue;
                }
                let Some(&e) = index.get(var.as_str()) else {
                    violations.push(Violation::UnknownVariable {
                        node: d.name(),
                        variable: var.clone(),
                    });
                    continue;
                };
                let w = wiring[e];
                match (w.producer, w.consumer) {
                    (Some(_), Some(_)) => violations.push(Violation::DiverterConflict(var.clone())),
                    (Some(_), None) => wiring[e].consumer = Some(NodeRef::Diverter(i)),
                    (None, _) => wiring[e].producer = Some(NodeRef::Diverter(i)),
                }
            }
        }
        (wiring, violations)
    }

    /// Structural violations; empty means the graph is a valid cycle-free
    /// normal graph.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();

        let mut names = BTreeSet::new();
        for v in &self.variables {
            if !names.insert(("var", v.name.as_str())) {
                violations.push(Violation::DuplicateName(v.name.clone()));
            }
            if v.size == 0 {
                violations.push(Violation::AlphabetMismatch {
                    node: v.name.clone(),
                    variable: v.name.clone(),
                    expected: 0,
                    found: 1,
                });
            }
        }
        let node_names = self
            .sources
            .iter()
            .map(|s| &s.block.name)
            .chain(self.blocks.iter().map(|b| &b.block.name));
        for n in node_names {
            if !names.insert(("node", n.as_str())) {
                violations.push(Violation::DuplicateName(n.clone()));
            }
        }

        let (wiring, wiring_violations) = self.wiring();
        violations.extend(wiring_violations);

        let mut size_check = |node: String, var: &str, found: usize| {
            if let Some(expected) = self.variable_size(var) {
                if expected != found {
                    violations.push(Violation::AlphabetMismatch {
                        node,
                        variable: var.into(),
                        expected,
                        found,
                    });
                }
            }
        };
        for s in &self.sources {
            size_check(s.block.name.clone(), &s.variable, s.block.prior.len());
        }
        for b in &self.blocks {
            size_check(b.block.name.clone(), &b.from, b.block.input_size());
            size_check(b.block.name.clone(), &b.to, b.block.output_size());
        }
        for d in &self.diverters {
            if let Some(size) = self.variable_size(&d.variable) {
                for t in &d.taps {
                    size_check(d.name(), t, size);
                }
            }
        }
        for d in &self.diverters {
            if d.taps.is_empty() {
                violations.push(Violation::DiverterTooSmall(d.variable.clone()));
            }
        }
        for b in &self.blocks {
            if !b.block.theta.is_row_stochastic(ROW_SUM_TOLERANCE) {
                violations.push(Violation::NotRowStochastic(b.block.name.clone()));
            }
        }
        for s in &self.sources {
            let p = s.block.prior.values();
            if p.iter().any(|x| *x < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOLERANCE {
                violations.push(Violation::NotRowStochastic(s.block.name.clone()));
            }
        }

        for (v, w) in self.variables.iter().zip(&wiring) {
            if w.degree() == 0 {
                violations.push(Violation::DanglingVariable(v.name.clone()));
            }
        }

        // Undirected acyclicity via union-find over nodes.
        let mut uf = UnionFind::new(self.sources.len() + self.blocks.len() + self.diverters.len());
        let id = |n: NodeRef| match n {
            NodeRef::Source(i) => i,
            NodeRef::Block(i) => self.sources.len() + i,
            NodeRef::Diverter(i) => self.sources.len() + self.blocks.len() + i,
        };
        for (v, w) in self.variables.iter().zip(&wiring) {
            if let (Some(p), Some(c)) = (w.producer, w.consumer) {
                if !uf.union(id(p), id(c)) {
                    violations.push(Violation::Cycle(v.name.clone()));
                }
            }
        }
        violations
    }

    /// [`validate`](Self::validate) as a `Result`.
    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(v))
        }
    }

    /// Variables with a single endpoint, in declaration order.
    pub fn terminals(&self) -> Vec<String> {
        let (wiring, _) = self.wiring();
        self.variables
            .iter()
            .zip(&wiring)
            .filter(|(_, w)| w.degree() == 1)
            .map(|(v, _)| v.name.clone())
            .collect()
    }

    /// Inserts a diverter on `v` exposing a fresh terminal replica, whose
    /// name is returned alongside the new graph. If `v` already belongs to a
    /// diverter, the tap is added to that diverter instead.
    pub fn split_variable(&self, v: &str) -> Result<(GraphSpec, String)> {
        let size = self
            .variable_size(v)
            .ok_or_else(|| Error::UnknownVariable(v.into()))?;
        let mut g = self.clone();
        let tap = g.fresh_name(&format!("{v}#tap"));
        g.add_variable(&tap, size);

        if let Some(d) = g.diverters.iter_mut().find(|d| d.edges().any(|e| e == v)) {
            d.taps.push(tap.clone());
            return Ok((g, tap));
        }

        let (wiring, _) = self.wiring();
        let e = self.variable_index(v).expect("checked above");
        let mut taps = vec![tap.clone()];
        if let Some(NodeRef::Block(i)) = wiring[e].consumer {
            let out = g.fresh_name(&format!("{v}#out"));
            g.add_variable(&out, size);
            g.blocks[i].from = out.clone();
            taps.push(out);
        }
        g.diverters.push(DiverterNode {
            variable: v.into(),
            taps,
        });
        Ok((g, tap))
    }

    fn fresh_name(&self, base: &str) -> String {
        if self.variable_index(base).is_none() {
            return base.to_string();
        }
        (2..)
            .map(|k| format!("{base}{k}"))
            .find(|n| self.variable_index(n).is_none())
            .expect("unbounded")
    }

    /// Names of every trainable source and block.
    pub fn trainable_names(&self) -> Vec<String> {
        self.sources
            .iter()
            .filter(|s| s.block.trainable)
            .map(|s| s.block.name.clone())
            .chain(
                self.blocks
                    .iter()
                    .filter(|b| b.block.trainable)
                    .map(|b| b.block.name.clone()),
            )
            .collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
