//! Exact sum-product message passing on cycle-free normal graphs.
//!
//! A [`Network`] is a compiled [`GraphSpec`]: edges are indexed, every node
//! knows its ports, and a dependency-ordered schedule of the `2·|E|` directed
//! messages is computed once. Each message is evaluated exactly once per
//! [`Network::propagate`] call, which on a tree is the two-pass
//! (leaves→root, root→leaves) sweep. [`Network::propagate_flooding`] runs the
//! synchronous schedule from random initial messages for
//! [`Network::diameter`] rounds and reaches the same fixed point.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeRef, SisoBlock};
use crate::learning::BlockDataset;
use crate::matrix::Matrix;
use crate::messages::{normalize_vec, Distribution, MessagePair};

/// One observed value at a terminal variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// 0-based symbol index.
    Hard(usize),
    Soft(Distribution),
}

/// Per-terminal observations; absent terminals are uninformative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    observations: BTreeMap<String, Observation>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hard(mut self, variable: &str, symbol: usize) -> Self {
        self.observations
            .insert(variable.into(), Observation::Hard(symbol));
        self
    }

    pub fn soft(mut self, variable: &str, dist: Distribution) -> Self {
        self.observations
            .insert(variable.into(), Observation::Soft(dist));
        self
    }

    pub fn set(&mut self, variable: &str, obs: Observation) {
        self.observations.insert(variable.into(), obs);
    }

    pub fn get(&self, variable: &str) -> Option<&Observation> {
        self.observations.get(variable)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Observation)> {
        self.observations.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Normalized messages on every edge after propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    names: Arc<[String]>,
    pairs: Vec<MessagePair>,
    pub epoch: usize,
}

impl MessageState {
    pub fn pair(&self, variable: &str) -> Option<&MessagePair> {
        self.index(variable).map(|i| &self.pairs[i])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &MessagePair)> {
        self.names.iter().map(String::as_str).zip(&self.pairs)
    }

    fn index(&self, variable: &str) -> Option<usize> {
        self.names.iter().position(|n| n == variable)
    }

    pub(crate) fn pair_at(&self, edge: usize) -> &MessagePair {
        &self.pairs[edge]
    }

    /// `p ∝ f ⊙ b` at `variable`.
    pub fn posterior(&self, variable: &str) -> Result<Distribution> {
        let pair = self
            .pair(variable)
            .ok_or_else(|| Error::UnknownVariable(variable.into()))?;
        pair.posterior().map_err(|_| Error::ContradictoryEvidence {
            variable: variable.into(),
            sample: None,
        })
    }

    /// `log 1ᵀ(f ⊙ b)` at `variable`; `-inf` when the product vanishes.
    pub fn log_evidence_at(&self, variable: &str) -> Result<f64> {
        let pair = self
            .pair(variable)
            .ok_or_else(|| Error::UnknownVariable(variable.into()))?;
        Ok(log_inner(pair))
    }
}

fn log_inner(pair: &MessagePair) -> f64 {
    let s: f64 = pair
        .forward
        .values()
        .iter()
        .zip(pair.backward.values())
        .map(|(f, b)| f * b)
        .sum();
    if s > 0.0 {
        s.ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub fn posterior(state: &MessageState, variable: &str) -> Result<Distribution> {
    state.posterior(variable)
}

/// `Σ_samples Σ_terminals log 1ᵀ(f ⊙ b)`; `-inf` if any term vanishes.
pub fn aggregated_log_likelihood<S: AsRef<str>>(states: &[MessageState], terminals: &[S]) -> f64 {
    let mut total = 0.0;
    for state in states {
        for t in terminals {
            match state.pair(t.as_ref()) {
                Some(pair) => total += log_inner(pair),
                None => return f64::NEG_INFINITY,
            }
        }
    }
    total
}

/// `Σ_n L[n] log(f_X[n]ᵀ θ b_Y[n])`; `-inf` on a vanishing bilinear form.
pub fn block_log_likelihood(theta: &Matrix, data: &BlockDataset) -> f64 {
    let mut total = 0.0;
    for (f, b) in data.active() {
        let v = theta.bilinear(f.values(), b.values());
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        total += v.ln();
    }
    total
}

/// `f_Y ∝ θᵀ f_X`.
pub fn siso_forward(block: &SisoBlock, f_in: &Distribution) -> Result<Distribution> {
    if f_in.len() != block.input_size() {
        return Err(Error::LengthMismatch {
            left: block.input_size(),
            right: f_in.len(),
        });
    }
    normalize_vec(block.theta.tmul(f_in.values()))
}

/// `b_X ∝ θ b_Y`.
pub fn siso_backward(block: &SisoBlock, b_out: &Distribution) -> Result<Distribution> {
    if b_out.len() != block.output_size() {
        return Err(Error::LengthMismatch {
            left: block.output_size(),
            right: b_out.len(),
        });
    }
    normalize_vec(block.theta.mul(b_out.values()))
}

/// Equality node with one inbound replica and `D` outbound replicas:
/// `b₀ ∝ ⊙ b_j`, `f_m ∝ f₀ ⊙_{j≠m} b_j`.
pub fn diverter_out(
    f0: &Distribution,
    backs: &[Distribution],
) -> Result<(Distribution, Vec<Distribution>)> {
    if backs.is_empty() {
        return Err(Error::InvalidParameter("diverter needs at least one replica".into()));
    }
    if let Some(bad) = backs.iter().find(|b| b.len() != f0.len()) {
        return Err(Error::LengthMismatch {
            left: f0.len(),
            right: bad.len(),
        });
    }
    let named = |replica: usize| Error::ContradictoryEvidence {
        variable: format!("replica {replica}"),
        sample: None,
    };
    let b0 = normalize_vec(product(backs.iter().map(|b| b.values()), f0.len())).map_err(|_| named(0))?;
    let fwds = (0..backs.len())
        .map(|m| {
            let others = std::iter::once(f0.values()).chain(
                backs
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != m)
                    .map(|(_, b)| b.values()),
            );
            normalize_vec(product(others, f0.len())).map_err(|_| named(m + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((b0, fwds))
}

fn product<'a>(vs: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut out = vec![1.0; len];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o *= x;
        }
    }
    out
}

/// Compiles `g` and runs one exact propagation.
pub fn propagate(g: &GraphSpec, ev: &Evidence) -> Result<MessageState> {
    Network::compile(g)?.propagate(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Msg {
    edge: usize,
    dir: Dir,
}

impl Msg {
    fn slot(self) -> usize {
        2 * self.edge + (self.dir == Dir::Backward) as usize
    }
}

#[derive(Debug, Clone)]
enum Node {
    Source { prior: Vec<f64> },
    Siso { theta: Matrix, input: usize, output: usize },
    /// `(edge, diverter consumes edge)`
    Diverter { ports: Vec<(usize, bool)> },
}

#[derive(Debug, Clone, Copy)]
struct Ends {
    producer: Option<usize>,
    consumer: Option<usize>,
}

/// Compiled, validated graph ready for repeated propagation.
#[derive(Debug, Clone)]
pub struct Network {
    names: Arc<[String]>,
    sizes: Vec<usize>,
    ends: Vec<Ends>,
    nodes: Vec<Node>,
    schedule: Vec<Msg>,
    diameter: usize,
    source_edges: Vec<usize>,
    block_edges: Vec<(usize, usize)>,
}

impl Network {
    pub fn compile(g: &GraphSpec) -> Result<Self> {
        g.check()?;
        let (wiring, _) = g.wiring();
        let node_id = |n: NodeRef| match n {
            NodeRef::Source(i) => i,
            NodeRef::Block(i) => g.sources.len() + i,
            NodeRef::Diverter(i) => g.sources.len() + g.blocks.len() + i,
        };
        let edge = |name: &str| g.variable_index(name).expect("validated");

        let mut nodes = Vec::new();
        for s in &g.sources {
            nodes.push(Node::Source {
                prior: s.block.prior.values().to_vec(),
            });
        }
        for b in &g.blocks {
            nodes.push(Node::Siso {
                theta: b.block.theta.clone(),
                input: edge(&b.from),
                output: edge(&b.to),
            });
        }
        for (i, d) in g.diverters.iter().enumerate() {
            let ports = d
                .edges()
                .map(|name| {
                    let e = edge(name);
                    (e, wiring[e].consumer == Some(NodeRef::Diverter(i)))
                })
                .collect();
            nodes.push(Node::Diverter { ports });
        }
        let ends = wiring
            .iter()
            .map(|w| Ends {
                producer: w.producer.map(node_id),
                consumer: w.consumer.map(node_id),
            })
            .collect();

        let mut net = Network {
            names: g.variables.iter().map(|v| v.name.clone()).collect(),
            sizes: g.variables.iter().map(|v| v.size).collect(),
            ends,
            nodes,
            schedule: Vec::new(),
            diameter: 0,
            source_edges: g.sources.iter().map(|s| edge(&s.variable)).collect(),
            block_edges: g.blocks.iter().map(|b| (edge(&b.from), edge(&b.to))).collect(),
        };
        let root = net
            .names
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        net.schedule_from(root);
        Ok(net)
    }

    /// Rebuilds the evaluation order starting the depth-first walk at `root`.
    /// Message values do not depend on the root.
    pub fn reroot(&mut self, variable: &str) -> Result<()> {
        let root = self
            .edge_index(variable)
            .ok_or_else(|| Error::UnknownVariable(variable.into()))?;
        self.schedule_from(root);
        Ok(())
    }

    fn schedule_from(&mut self, root: usize) {
        let n = self.names.len();
        let mut depth: Vec<Option<usize>> = vec![None; 2 * n];
        let mut order = Vec::with_capacity(2 * n);
        let starts = [root]
            .into_iter()
            .chain((0..n).filter(|&e| e != root))
            .flat_map(|e| {
                [
                    Msg { edge: e, dir: Dir::Forward },
                    Msg { edge: e, dir: Dir::Backward },
                ]
            });
        for start in starts {
            if depth[start.slot()].is_some() {
                continue;
            }
            // iterative post-order DFS
            let mut stack = vec![(start, false)];
            while let Some((m, expanded)) = stack.pop() {
                if depth[m.slot()].is_some() {
                    continue;
                }
                let deps = self.dependencies(m);
                if expanded {
                    let d = deps
                        .iter()
                        .map(|x| depth[x.slot()].expect("dependency scheduled") + 1)
                        .max()
                        .unwrap_or(0);
                    depth[m.slot()] = Some(d);
                    order.push(m);
                } else {
                    stack.push((m, true));
                    for x in deps {
                        if depth[x.slot()].is_none() {
                            stack.push((x, false));
                        }
                    }
                }
            }
        }
        self.diameter = depth.iter().flatten().max().map_or(0, |d| d + 1);
        self.schedule = order;
    }

    /// Node emitting `m`, if any (terminals carry evidence instead).
    fn emitter(&self, m: Msg) -> Option<usize> {
        match m.dir {
            Dir::Forward => self.ends[m.edge].producer,
            Dir::Backward => self.ends[m.edge].consumer,
        }
    }

    fn dependencies(&self, m: Msg) -> Vec<Msg> {
        let Some(node) = self.emitter(m) else {
            return Vec::new();
        };
        match &self.nodes[node] {
            Node::Source { .. } => Vec::new(),
            Node::Siso { input, output, .. } => match m.dir {
                Dir::Forward => vec![Msg { edge: *input, dir: Dir::Forward }],
                Dir::Backward => vec![Msg { edge: *output, dir: Dir::Backward }],
            },
            Node::Diverter { ports } => ports
                .iter()
                .filter(|(e, _)| *e != m.edge)
                .map(|&(e, consumes)| Msg {
                    edge: e,
                    dir: if consumes { Dir::Forward } else { Dir::Backward },
                })
                .collect(),
        }
    }

    /// Number of synchronous rounds after which flooding is exact.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn variable_names(&self) -> &[String] {
        &self.names
    }

    pub fn edge_index(&self, variable: &str) -> Option<usize> {
        self.names.iter().position(|n| n == variable)
    }

    pub fn is_terminal(&self, edge: usize) -> bool {
        let e = self.ends[edge];
        e.producer.is_none() || e.consumer.is_none()
    }

    /// Edge carried by each source, aligned with `GraphSpec::sources`.
    pub fn source_edges(&self) -> &[usize] {
        &self.source_edges
    }

    /// `(input, output)` edges, aligned with `GraphSpec::blocks`.
    pub fn block_edges(&self) -> &[(usize, usize)] {
        &self.block_edges
    }

    /// Evidence vector for each terminal message slot.
    fn evidence_slots(&self, ev: &Evidence) -> Result<Vec<Option<Vec<f64>>>> {
        let mut slots = vec![None; 2 * self.names.len()];
        for (name, obs) in ev.iter() {
            let e = self
                .edge_index(name)
                .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
            if !self.is_terminal(e) {
                return Err(Error::InvalidParameter(format!(
                    "evidence at `{name}`: only terminal variables accept evidence (split it first)"
                )));
            }
            let size = self.sizes[e];
            let v = match obs {
                Observation::Hard(k) => Distribution::delta(size, *k)?.into_values(),
                Observation::Soft(d) if d.len() == size => d.values().to_vec(),
                Observation::Soft(d) => {
                    return Err(Error::LengthMismatch {
                        left: size,
                        right: d.len(),
                    })
                }
            };
            let dir = if self.ends[e].consumer.is_none() {
                Dir::Backward
            } else {
                Dir::Forward
            };
            slots[Msg { edge: e, dir }.slot()] = Some(v);
        }
        Ok(slots)
    }

    fn compute(&self, m: Msg, msgs: &[Vec<f64>], evidence: &[Option<Vec<f64>>]) -> Result<Vec<f64>> {
        let size = self.sizes[m.edge];
        let raw = match self.emitter(m) {
            None => match &evidence[m.slot()] {
                Some(v) => v.clone(),
                None => vec![1.0; size],
            },
            Some(node) => match &self.nodes[node] {
                Node::Source { prior } => prior.clone(),
                Node::Siso { theta, input, output } => match m.dir {
                    Dir::Forward => theta.tmul(&msgs[Msg { edge: *input, dir: Dir::Forward }.slot()]),
                    Dir::Backward => theta.mul(&msgs[Msg { edge: *output, dir: Dir::Backward }.slot()]),
                },
                Node::Diverter { .. } => {
                    let deps = self.dependencies(m);
                    product(deps.iter().map(|d| msgs[d.slot()].as_slice()), size)
                }
            },
        };
        normalize_vec(raw)
            .map(Distribution::into_values)
            .map_err(|_| Error::ContradictoryEvidence {
                variable: self.names[m.edge].clone(),
                sample: None,
            })
    }

    fn build_state(&self, msgs: Vec<Vec<f64>>) -> MessageState {
        let mut it = msgs.into_iter();
        let pairs = (0..self.names.len())
            .map(|_| {
                let f = it.next().expect("forward");
                let b = it.next().expect("backward");
                MessagePair::new(raw_dist(f), raw_dist(b)).expect("same alphabet")
            })
            .collect();
        MessageState {
            names: self.names.clone(),
            pairs,
            epoch: 0,
        }
    }

    /// Exact messages for `ev`, one evaluation per directed message.
    pub fn propagate(&self, ev: &Evidence) -> Result<MessageState> {
        let evidence = self.evidence_slots(ev)?;
        let mut msgs = vec![Vec::new(); 2 * self.names.len()];
        for &m in &self.schedule {
            msgs[m.slot()] = self.compute(m, &msgs, &evidence)?;
        }
        Ok(self.build_state(msgs))
    }

    /// Messages drawn independently uniform in `[0, 1]` and normalized,
    /// except terminal slots, which carry the evidence (uniform if absent).
    pub fn random_state<R: Rng>(&self, ev: &Evidence, rng: &mut R) -> Result<MessageState> {
        Ok(self.build_state(self.random_messages(ev, rng)?))
    }

    fn random_messages<R: Rng>(&self, ev: &Evidence, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let evidence = self.evidence_slots(ev)?;
        let mut msgs = Vec::with_capacity(2 * self.names.len());
        for e in 0..self.names.len() {
            for dir in [Dir::Forward, Dir::Backward] {
                let m = Msg { edge: e, dir };
                let v = if self.emitter(m).is_none() {
                    self.compute(m, &[], &evidence)?
                } else {
                    let draws: Vec<f64> = (0..self.sizes[e]).map(|_| rng.gen::<f64>()).collect();
                    normalize_vec(draws)?.into_values()
                };
                msgs.push(v);
            }
        }
        Ok(msgs)
    }

    /// Synchronous flooding from random initial messages for `rounds`
    /// iterations (default [`diameter`](Self::diameter)).
    pub fn propagate_flooding<R: Rng>(
        &self,
        ev: &Evidence,
        rng: &mut R,
        rounds: Option<usize>,
    ) -> Result<MessageState> {
        let evidence = self.evidence_slots(ev)?;
        let mut msgs = self.random_messages(ev, rng)?;
        for _ in 0..rounds.unwrap_or(self.diameter) {
            let next = self
                .schedule
                .iter()
                .map(|&m| self.compute(m, &msgs, &evidence).map(|v| (m.slot(), v)))
                .collect::<Result<Vec<_>>>()?;
            for (slot, v) in next {
                msgs[slot] = v;
            }
        }
        Ok(self.build_state(msgs))
    }
}

fn raw_dist(values: Vec<f64>) -> Distribution {
    // already normalized by `compute`
    normalize_vec(values).expect("normalized message")
}
