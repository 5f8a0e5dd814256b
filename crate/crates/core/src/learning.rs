//! Local M-step rules for a single SISO block and the EM loop that drives
//! them across a graph.
//!
//! A block only ever sees its [`BlockDataset`]: for each sample the forward
//! message entering its input and the backward message entering its output.
//! Source blocks are treated as `1 × M` blocks whose input message is `[1]`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, SisoBlock};
use crate::matrix::Matrix;
use crate::messages::{max_indicator, normalize_vec, Distribution};
use crate::propagation::{aggregated_log_likelihood, Evidence, MessageState, Network};

/// Floor applied to message entries before the ML and KL updates.
pub const MESSAGE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Ml,
    Kl,
    Vit,
    Var,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Ml, Algorithm::Kl, Algorithm::Vit, Algorithm::Var];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ml => "ml",
            Algorithm::Kl => "kl",
            Algorithm::Vit => "vit",
            Algorithm::Var => "var",
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Algorithm::Ml | Algorithm::Kl)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Algorithm::Ml),
            "kl" => Ok(Algorithm::Kl),
            "vit" => Ok(Algorithm::Vit),
            "var" => Ok(Algorithm::Var),
            other => Err(Error::InvalidParameter(format!(
                "unknown algorithm `{other}` (expected ml, kl, vit or var)"
            ))),
        }
    }
}

/// Per-sample `(f_X[n], b_Y[n])` pairs with a 0/1 learning mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDataset {
    pairs: Vec<(Distribution, Distribution)>,
    mask: Vec<bool>,
}

impl BlockDataset {
    pub fn new(pairs: Vec<(Distribution, Distribution)>, mask: Vec<bool>) -> Result<Self> {
        if pairs.len() != mask.len() {
            return Err(Error::LengthMismatch {
                left: pairs.len(),
                right: mask.len(),
            });
        }
        if let Some((f0, b0)) = pairs.first() {
            for (f, b) in &pairs {
                if f.len() != f0.len() || b.len() != b0.len() {
                    return Err(Error::LengthMismatch {
                        left: f0.len() * b0.len(),
                        right: f.len() * b.len(),
                    });
                }
            }
        }
        Ok(BlockDataset { pairs, mask })
    }

    /// Every sample in the training set.
    pub fn full(pairs: Vec<(Distribution, Distribution)>) -> Result<Self> {
        let mask = vec![true; pairs.len()];
        Self::new(pairs, mask)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Distribution, Distribution)] {
        &self.pairs
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Pairs with `L[n] = 1`.
    pub fn active(&self) -> impl Iterator<Item = (&Distribution, &Distribution)> {
        self.pairs
            .iter()
            .zip(&self.mask)
            .filter(|(_, on)| **on)
            .map(|((f, b), _)| (f, b))
    }

    fn check_shape(&self, theta: &Matrix) -> Result<()> {
        match self.pairs.first() {
            Some((f, b)) if f.len() != theta.rows() || b.len() != theta.cols() => {
                Err(Error::LengthMismatch {
                    left: theta.rows() * theta.cols(),
                    right: f.len() * b.len(),
                })
            }
            _ => Ok(()),
        }
    }
}

fn floored(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(MESSAGE_FLOOR)).collect()
}

#[derive(Clone, Copy)]
enum Denominator {
    Bilinear,
    Column,
}

/// One multiplicative step. Rows with no forward mass keep their values
/// and are reported.
fn multiplicative_step(theta: &Matrix, data: &BlockDataset, denom: Denominator) -> Result<(Matrix, Vec<usize>)> {
    data.check_shape(theta)?;
    let (rows, cols) = (theta.rows(), theta.cols());
    let mut acc = Matrix::zeros(rows, cols);
    let mut mass = vec![0.0; rows];
    for (f, b) in data.active() {
        let f = floored(f.values());
        let b = floored(b.values());
        match denom {
            Denominator::Bilinear => {
                let d = theta.bilinear(&f, &b);
                if !(d > 0.0) {
                    continue;
                }
                for l in 0..rows {
                    let w = f[l] / d;
                    for (a, bm) in acc.row_mut(l).iter_mut().zip(&b) {
                        *a += w * bm;
                    }
                }
            }
            Denominator::Column => {
                let col = theta.tmul(&f);
                for l in 0..rows {
                    for m in 0..cols {
                        if col[m] > 0.0 {
                            acc[(l, m)] += f[l] * b[m] / col[m];
                        }
                    }
                }
            }
        }
        for (s, fl) in mass.iter_mut().zip(&f) {
            *s += fl;
        }
    }
    let mut next = theta.clone();
    let mut empty = Vec::new();
    for l in 0..rows {
        if !(mass[l] > 0.0) {
            empty.push(l);
            continue;
        }
        let row: Vec<f64> = (0..cols).map(|m| theta[(l, m)] * acc[(l, m)] / mass[l]).collect();
        match normalize_vec(row) {
            Ok(r) => next.row_mut(l).copy_from_slice(r.values()),
            Err(_) => empty.push(l),
        }
    }
    Ok((next, empty))
}

fn strict(result: (Matrix, Vec<usize>)) -> Result<Matrix> {
    match result.1.first() {
        Some(&row) => Err(Error::EmptyRow { row }),
        None => Ok(result.0),
    }
}

/// `θ_lm ← θ_lm/(Σ L f(l)) · Σ L f(l)b(m)/(fᵀθb)`, then row-normalize.
pub fn ml_update(theta: &Matrix, data: &BlockDataset) -> Result<Matrix> {
    strict(multiplicative_step(theta, data, Denominator::Bilinear)?)
}

/// `θ_lm ← θ_lm/(Σ L f(l)) · Σ L f(l)b(m)/(θᵀf)_m`, then row-normalize.
pub fn kl_update(theta: &Matrix, data: &BlockDataset) -> Result<Matrix> {
    strict(multiplicative_step(theta, data, Denominator::Column)?)
}

fn finish_counts(mut counts: Matrix) -> Matrix {
    let cols = counts.cols();
    for l in counts.row_normalize() {
        counts.row_mut(l).fill(1.0 / cols as f64);
    }
    counts
}

/// Row-normalized `Σ L (I_max(f)+δ)(I_max(b)+δ)ᵀ`.
pub fn vit_update(data: &BlockDataset, rows: usize, cols: usize, delta: f64) -> Result<Matrix> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let mut counts = Matrix::zeros(rows, cols);
    data.check_shape(&counts)?;
    let mut total = 0usize;
    for (f, b) in data.active() {
        let ef = max_indicator(f.values(), delta);
        let eb = max_indicator(b.values(), delta);
        for (l, x) in ef.iter().enumerate() {
            for (c, y) in counts.row_mut(l).iter_mut().zip(&eb) {
                *c += x * y;
            }
        }
        total += 1;
    }
    if total == 0 {
        counts = Matrix::filled(rows, cols, delta * delta);
    }
    Ok(finish_counts(counts))
}

/// Row-normalized `α + δ + Σ L f bᵀ`.
pub fn var_update(
    data: &BlockDataset,
    rows: usize,
    cols: usize,
    delta: f64,
    alpha: Option<&Matrix>,
) -> Result<Matrix> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be non-negative, got {delta}")));
    }
    let mut counts = match alpha {
        Some(a) if a.rows() != rows || a.cols() != cols => {
            return Err(Error::LengthMismatch {
                left: rows * cols,
                right: a.rows() * a.cols(),
            })
        }
        Some(a) if a.as_slice().iter().any(|x| !(*x >= 0.0)) => {
            return Err(Error::InvalidParameter("prior counts must be non-negative".into()))
        }
        Some(a) => a.clone(),
        None => Matrix::zeros(rows, cols),
    };
    data.check_shape(&counts)?;
    counts.as_mut_slice().iter_mut().for_each(|x| *x += delta);
    for (f, b) in data.active() {
        for (l, fl) in f.values().iter().enumerate() {
            for (c, bm) in counts.row_mut(l).iter_mut().zip(b.values()) {
                *c += fl * bm;
            }
        }
    }
    Ok(finish_counts(counts))
}

/// Training hyper-parameters shared by every block of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    /// `Nit`, used by ML and KL only.
    pub inner_iterations: usize,
    /// Smoothing for VIT and VAR.
    pub delta: f64,
    /// VAR prior counts, keyed by block name.
    pub prior_counts: BTreeMap<String, Matrix>,
    pub seed: u64,
    /// Stop once `|Δℓ|` between consecutive epochs falls below this.
    pub tol: Option<f64>,
    pub record_coefficients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Ml,
            epochs: 60,
            inner_iterations: 3,
            delta: 1e-6,
            prior_counts: BTreeMap::new(),
            seed: 1,
            tol: None,
            record_coefficients: false,
        }
    }
}

impl TrainConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        TrainConfig {
            algorithm,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.algorithm.is_iterative() && self.inner_iterations == 0 {
            return Err(Error::InvalidParameter("inner iterations must be at least 1".into()));
        }
        if !self.algorithm.is_iterative() && !(self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive for {}, got {}",
                self.algorithm, self.delta
            )));
        }
        Ok(())
    }
}

/// New `θ` for one block: `Nit` iterative steps from the current `θ` for
/// ML/KL, one batch computation for VIT/VAR. Rows without forward mass keep
/// their previous values.
pub fn train_block(block: &SisoBlock, data: &BlockDataset, cfg: &TrainConfig) -> Result<Matrix> {
    if !block.trainable {
        return Err(Error::InvalidParameter(format!("block `{}` is fixed", block.name)));
    }
    cfg.check()?;
    let (rows, cols) = (block.input_size(), block.output_size());
    match cfg.algorithm {
        Algorithm::Ml | Algorithm::Kl => {
            let denom = if cfg.algorithm == Algorithm::Ml {
                Denominator::Bilinear
            } else {
                Denominator::Column
            };
            let mut theta = block.theta.clone();
            for _ in 0..cfg.inner_iterations {
                theta = multiplicative_step(&theta, data, denom)?.0;
            }
            Ok(theta)
        }
        Algorithm::Vit => vit_update(data, rows, cols, cfg.delta),
        Algorithm::Var => var_update(data, rows, cols, cfg.delta, cfg.prior_counts.get(&block.name)),
    }
}

/// `G_lm = Σ L f(l)b(m)/(fᵀθb)`, the gradient of the block log-likelihood.
pub fn likelihood_gradient(theta: &Matrix, data: &BlockDataset) -> Result<Matrix> {
    data.check_shape(theta)?;
    let mut g = Matrix::zeros(theta.rows(), theta.cols());
    for (f, b) in data.active() {
        let d = theta.bilinear(f.values(), b.values());
        if !(d > 0.0) {
            continue;
        }
        for (l, fl) in f.values().iter().enumerate() {
            for (gm, bm) in g.row_mut(l).iter_mut().zip(b.values()) {
                *gm += fl * bm / d;
            }
        }
    }
    Ok(g)
}

/// Non-negativity multipliers of the row-constrained likelihood problem,
/// with the row multiplier eliminated: `λ_lm = Σ_m' θ_lm' G_lm' − G_lm`.
/// At a constrained maximum `λ ≥ 0` and `λ_lm θ_lm = 0`.
pub fn kkt_multipliers(theta: &Matrix, data: &BlockDataset) -> Result<Matrix> {
    let g = likelihood_gradient(theta, data)?;
    let mut lambda = Matrix::zeros(theta.rows(), theta.cols());
    for l in 0..theta.rows() {
        let beta: f64 = theta.row(l).iter().zip(g.row(l)).map(|(t, x)| t * x).sum();
        for m in 0..theta.cols() {
            lambda[(l, m)] = beta - g[(l, m)];
        }
    }
    Ok(lambda)
}

/// `Σ L [Σ_m b(m) log(b(m)/(θᵀf)_m) + Σ_m (θᵀf)_m]`, the cost the KL rule
/// descends. Zero entries of `b` contribute nothing to the first sum.
pub fn generalized_divergence(theta: &Matrix, data: &BlockDataset) -> Result<f64> {
    data.check_shape(theta)?;
    let mut total = 0.0;
    for (f, b) in data.active() {
        let q = theta.tmul(f.values());
        for (bm, qm) in b.values().iter().zip(&q) {
            if *bm > 0.0 {
                if !(*qm > 0.0) {
                    return Ok(f64::INFINITY);
                }
                total += bm * (bm / qm).ln();
            }
            total += qm;
        }
    }
    Ok(total)
}

/// `Σ L Σ_y b(y) log f_Y(y)` with `f_Y = normalize(θᵀ f_X)`, a lower bound
/// on the block log-likelihood.
pub fn jensen_bound(theta: &Matrix, data: &BlockDataset) -> Result<f64> {
    data.check_shape(theta)?;
    let mut total = 0.0;
    for (f, b) in data.active() {
        let fy = normalize_vec(theta.tmul(f.values()))?;
        for (bm, q) in b.values().iter().zip(fy.values()) {
            if *bm > 0.0 {
                total += bm * q.ln();
            }
        }
    }
    Ok(total)
}

/// Log-likelihood of one epoch, recorded after its E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loglik: f64,
    pub test_loglik: Option<f64>,
    pub wall_ms: f64,
    /// Trainable parameters after this epoch's M-step, sources as `1 × M`.
    pub coefficients: Option<BTreeMap<String, Matrix>>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub algorithm: Algorithm,
    pub epochs: Vec<EpochRecord>,
    pub graph: GraphSpec,
}

impl TrainReport {
    pub fn final_train_loglik(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loglik)
    }

    pub fn final_test_loglik(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_loglik)
    }
}

/// Names of every variable carrying evidence in at least one sample.
pub fn observed_variables(samples: &[Evidence]) -> Vec<String> {
    let mut names: Vec<String> = samples
        .iter()
        .flat_map(|ev| ev.iter().map(|(k, _)| k.clone()))
        .collect();
    names.sort();
    names.dedup();
    names
}

fn tag_sample(err: Error, n: usize) -> Error {
    match err {
        Error::ContradictoryEvidence { variable, .. } => Error::ContradictoryEvidence {
            variable,
            sample: Some(n),
        },
        other => other,
    }
}

fn e_step(net: &Network, samples: &[Evidence]) -> Result<Vec<MessageState>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(n, ev)| net.propagate(ev).map_err(|e| tag_sample(e, n)))
        .collect()
}

/// `(train ℓ, test ℓ)` summed over `terminals`; the test value is `None`
/// when every sample is in the training set.
pub fn split_log_likelihood<S: AsRef<str>>(
    states: &[MessageState],
    mask: &[bool],
    terminals: &[S],
) -> (f64, Option<f64>) {
    let pick = |want: bool| -> Vec<MessageState> {
        states
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m == want)
            .map(|(s, _)| s.clone())
            .collect()
    };
    let train = aggregated_log_likelihood(&pick(true), terminals);
    let test = if mask.iter().all(|m| *m) {
        None
    } else {
        Some(aggregated_log_likelihood(&pick(false), terminals))
    };
    (train, test)
}

fn coefficients(g: &GraphSpec) -> BTreeMap<String, Matrix> {
    let mut out = BTreeMap::new();
    for s in g.sources.iter().filter(|s| s.block.trainable) {
        out.insert(s.block.name.clone(), s.block.as_siso().theta);
    }
    for b in g.blocks.iter().filter(|b| b.block.trainable) {
        out.insert(b.block.name.clone(), b.block.theta.clone());
    }
    out
}

/// Gathers every trainable block's dataset from one frozen snapshot of
/// per-sample messages, then replaces all of them at once.
fn m_step(
    g: &mut GraphSpec,
    net: &Network,
    states: &[MessageState],
    mask: &[bool],
    cfg: &TrainConfig,
) -> Result<()> {
    let one = Distribution::uniform(1);
    let mut updates: Vec<(usize, bool, Matrix)> = Vec::new();
    for (i, s) in g.sources.iter().enumerate().filter(|(_, s)| s.block.trainable) {
        let e = net.source_edges()[i];
        let pairs = states
            .iter()
            .map(|st| (one.clone(), st.pair_at(e).backward.clone()))
            .collect();
        let data = BlockDataset::new(pairs, mask.to_vec())?;
        updates.push((i, true, train_block(&s.block.as_siso(), &data, cfg)?));
    }
    for (i, b) in g.blocks.iter().enumerate().filter(|(_, b)| b.block.trainable) {
        let (input, output) = net.block_edges()[i];
        let pairs = states
            .iter()
            .map(|st| (st.pair_at(input).forward.clone(), st.pair_at(output).backward.clone()))
            .collect();
        let data = BlockDataset::new(pairs, mask.to_vec())?;
        updates.push((i, false, train_block(&b.block, &data, cfg)?));
    }
    for (i, is_source, theta) in updates {
        if is_source {
            g.sources[i].block.prior = normalize_vec(theta.row(0).to_vec())?;
        } else {
            g.blocks[i].block.theta = theta;
        }
    }
    Ok(())
}

/// EM over `samples`: each epoch runs an M-step on every trainable block
/// from the latest messages, then an E-step with the new parameters, and
/// records the aggregated log-likelihood over the observed terminals.
///
/// Parameters start from the values in `g`. The first M-step uses
/// independent uniform random messages (seeded by `cfg.seed`) with the
/// evidence fixed at the terminals, which breaks the symmetry of uniform
/// initial tables. `mask` selects the training samples; the rest are
/// scored as the test set.
pub fn em_train(
    g: &GraphSpec,
    samples: &[Evidence],
    mask: Option<&[bool]>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.check()?;
    let mask: Vec<bool> = match mask {
        Some(m) if m.len() != samples.len() => {
            return Err(Error::LengthMismatch {
                left: samples.len(),
                right: m.len(),
            })
        }
        Some(m) => m.to_vec(),
        None => vec![true; samples.len()],
    };
    let terminals = observed_variables(samples);
    let mut graph = g.clone();
    let mut net = Network::compile(&graph)?;
    let mut report = TrainReport {
        algorithm: cfg.algorithm,
        epochs: Vec::with_capacity(cfg.epochs),
        graph: graph.clone(),
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut states = samples
        .iter()
        .enumerate()
        .map(|(n, ev)| net.random_state(ev, &mut rng).map_err(|e| tag_sample(e, n)))
        .collect::<Result<Vec<_>>>()?;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        m_step(&mut graph, &net, &states, &mask, cfg)?;
        net = Network::compile(&graph)?;
        states = e_step(&net, samples)?;
        let (train, test) = split_log_likelihood(&states, &mask, &terminals);
        let previous = report.epochs.last().map(|r| r.train_loglik);
        report.epochs.push(EpochRecord {
            epoch,
            train_loglik: train,
            test_loglik: test,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            coefficients: cfg.record_coefficients.then(|| coefficients(&graph)),
        });
        if let (Some(tol), Some(prev)) = (cfg.tol, previous) {
            if (train - prev).abs() < tol {
                break;
            }
        }
    }
    report.graph = graph;
    Ok(report)
}
