//! Synthetic data: ancestral sampling of a graph in generative mode and the
//! random message pairs used by the single-block studies.
//!
//! Every random draw comes from a ChaCha8 stream keyed by the run seed and a
//! label (variable name, `"f"`, `"b"`, ...), so adding a block to a graph
//! leaves the draws of the other variables unchanged.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeRef};
use crate::learning::BlockDataset;
use crate::matrix::Matrix;
use crate::messages::{normalize_vec, sharpen, Distribution};
use crate::propagation::Evidence;

/// FNV-1a, used to turn labels into stream ids.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent generator for `(seed, label)`.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}

/// Inverse-CDF draw from unnormalized nonnegative weights.
fn draw<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Sampled terminal values, 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub terminals: Vec<String>,
    pub records: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Hard evidence at every terminal, one entry per sample.
    pub fn to_evidence(&self) -> Vec<Evidence> {
        self.records
            .iter()
            .map(|row| {
                self.terminals
                    .iter()
                    .zip(row)
                    .fold(Evidence::new(), |ev, (t, k)| ev.hard(t, *k))
            })
            .collect()
    }
}

/// Variables tied together by diverters share one value; each group is
/// sampled once.
struct Groups {
    of_edge: Vec<usize>,
    members: Vec<Vec<usize>>,
}

fn groups(g: &GraphSpec) -> Groups {
    let n = g.variables.len();
    let mut of_edge: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for d in &g.diverters {
        let ids: Vec<usize> = d.edges().filter_map(|e| g.variable_index(e)).collect();
        for w in ids.windows(2) {
            let (a, b) = (find(&mut of_edge, w[0]), find(&mut of_edge, w[1]));
            if a != b {
                of_edge[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|e| find(&mut of_edge, e)).collect();
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut of_edge = vec![0; n];
    for (e, r) in roots.into_iter().enumerate() {
        let next = ids.len();
        let id = *ids.entry(r).or_insert(next);
        if id == members.len() {
            members.push(Vec::new());
        }
        members[id].push(e);
        of_edge[e] = id;
    }
    Groups { of_edge, members }
}

/// Values of every variable for each sample, in `g.variables` order.
///
/// Groups are visited in dependency order. A group fed by one node draws
/// from that node's row; a group fed by several blocks (a product-space
/// junction) draws from the normalized product of their rows, which is exact
/// whenever the product's normalizer does not depend on the parents, as for
/// expander blocks.
pub fn ancestral_sample_full(g: &GraphSpec, n_samples: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    g.check()?;
    let (wiring, _) = g.wiring();
    let groups = groups(g);
    let ng = groups.members.len();

    // producers of each group: sources and blocks writing to one of its edges
    let mut feeds: Vec<Vec<NodeRef>> = vec![Vec::new(); ng];
    for (e, w) in wiring.iter().enumerate() {
        if let Some(p @ (NodeRef::Source(_) | NodeRef::Block(_))) = w.producer {
            feeds[groups.of_edge[e]].push(p);
        }
    }
    let parents = |grp: usize| -> Vec<usize> {
        feeds[grp]
            .iter()
            .filter_map(|p| match p {
                NodeRef::Block(i) => Some(groups.of_edge[g.variable_index(&g.blocks[*i].from).expect("validated")]),
                _ => None,
            })
            .collect()
    };

    let mut waiting: Vec<usize> = (0..ng).map(|grp| parents(grp).len()).collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); ng];
    for grp in 0..ng {
        for p in parents(grp) {
            children[p].push(grp);
        }
    }
    let mut queue: VecDeque<usize> = (0..ng).filter(|&grp| waiting[grp] == 0).collect();
    let mut order = Vec::with_capacity(ng);
    while let Some(grp) = queue.pop_front() {
        if feeds[grp].is_empty() {
            let name = &g.variables[groups.members[grp][0]].name;
            return Err(Error::InvalidParameter(format!(
                "variable `{name}` is not reachable from any source"
            )));
        }
        order.push(grp);
        for &c in &children[grp] {
            waiting[c] -= 1;
            if waiting[c] == 0 {
                queue.push_back(c);
            }
        }
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..ng)
        .map(|grp| substream(seed, &g.variables[groups.members[grp][0]].name))
        .collect();
    let mut out = Vec::with_capacity(n_samples);
    let mut value = vec![0usize; ng];
    for _ in 0..n_samples {
        for &grp in &order {
            let size = g.variables[groups.members[grp][0]].size;
            let mut weights = vec![1.0; size];
            for p in &feeds[grp] {
                let row: &[f64] = match p {
                    NodeRef::Source(i) => g.sources[*i].block.prior.values(),
                    NodeRef::Block(i) => {
                        let b = &g.blocks[*i];
                        let input = groups.of_edge[g.variable_index(&b.from).expect("validated")];
                        b.block.theta.row(value[input])
                    }
                    NodeRef::Diverter(_) => unreachable!("diverters are not producers here"),
                };
                for (w, r) in weights.iter_mut().zip(row) {
                    *w *= r;
                }
            }
            if !weights.iter().any(|w| *w > 0.0) {
                let name = &g.variables[groups.members[grp][0]].name;
                return Err(Error::ContradictoryEvidence {
                    variable: name.clone(),
                    sample: Some(out.len()),
                });
            }
            value[grp] = draw(&mut rngs[grp], &weights);
        }
        out.push(groups.of_edge.iter().map(|&grp| value[grp]).collect());
    }
    Ok(out)
}

/// Leaf variables (produced but never consumed).
pub fn output_terminals(g: &GraphSpec) -> Vec<String> {
    let (wiring, _) = g.wiring();
    g.variables
        .iter()
        .zip(&wiring)
        .filter(|(_, w)| w.producer.is_some() && w.consumer.is_none())
        .map(|(v, _)| v.name.clone())
        .collect()
}

/// Draws `n_samples` joint configurations and keeps the leaf terminals.
pub fn ancestral_sample(g: &GraphSpec, n_samples: usize, seed: u64) -> Result<SampleSet> {
    let full = ancestral_sample_full(g, n_samples, seed)?;
    let terminals = output_terminals(g);
    let idx: Vec<usize> = terminals
        .iter()
        .map(|t| g.variable_index(t).expect("terminal exists"))
        .collect();
    Ok(SampleSet {
        records: full.iter().map(|row| idx.iter().map(|&i| row[i]).collect()).collect(),
        terminals,
        seed,
    })
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidParameter(format!("{name} must be positive")));
    }
    Ok(())
}

fn random_distribution<R: Rng>(rng: &mut R, size: usize) -> Distribution {
    loop {
        let draws: Vec<f64> = (0..size).map(|_| rng.gen::<f64>()).collect();
        if let Ok(d) = normalize_vec(draws) {
            return d;
        }
    }
}

/// `N` pairs `f = sharpen(u, EX)`, `b = sharpen(v, EY)` from normalized
/// uniform draws, all in the training set.
pub fn random_message_pairs(
    m_x: usize,
    m_y: usize,
    n: usize,
    ex: f64,
    ey: f64,
    seed: u64,
) -> Result<BlockDataset> {
    positive("M_X", m_x)?;
    positive("M_Y", m_y)?;
    if !(ex > 0.0 && ey > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sharpening exponents must be positive, got {ex} and {ey}"
        )));
    }
    let mut rf = substream(seed, "f");
    let mut rb = substream(seed, "b");
    let pairs = (0..n)
        .map(|_| {
            let f = sharpen(&random_distribution(&mut rf, m_x), ex)?;
            let b = sharpen(&random_distribution(&mut rb, m_y), ey)?;
            Ok((f, b))
        })
        .collect::<Result<Vec<_>>>()?;
    BlockDataset::full(pairs)
}

/// Rows of normalized uniform draws.
pub fn random_row_stochastic(m_x: usize, m_y: usize, seed: u64) -> Result<Matrix> {
    random_row_stochastic_labeled(m_x, m_y, seed, "theta")
}

pub(crate) fn random_row_stochastic_labeled(m_x: usize, m_y: usize, seed: u64, label: &str) -> Result<Matrix> {
    positive("M_X", m_x)?;
    positive("M_Y", m_y)?;
    let mut rng = substream(seed, label);
    let rows: Vec<Vec<f64>> = (0..m_x)
        .map(|_| random_distribution(&mut rng, m_y).into_values())
        .collect();
    Matrix::from_rows(&rows)
}
