//! Synthetic studies: a single block fed with random messages, the latent
//! tree with one hidden parent and three observed children, and a deeper
//! graph with product-space junctions built from fixed expander blocks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_expander, GraphSpec, SisoBlock, SourceBlock};
use crate::io::ResultRow;
use crate::learning::{em_train, kl_update, ml_update, train_block, Algorithm, TrainConfig, TrainReport};
use crate::matrix::Matrix;
use crate::messages::{normalize, Distribution};
use crate::propagation::block_log_likelihood;
use crate::synthgen::{ancestral_sample, random_message_pairs, random_row_stochastic, random_row_stochastic_labeled, SampleSet};

/// Generative conditionals of the latent-tree study, rows indexed by `S`.
pub fn tree_generative_matrices() -> [Matrix; 3] {
    let m = |rows: &[&[f64]]| Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("literal");
    [
        m(&[&[0.1, 0.9], &[0.1, 0.9], &[0.9, 0.1], &[0.3, 0.7]]),
        m(&[&[0.1, 0.9], &[0.99, 0.01], &[0.5, 0.5], &[0.2, 0.8]]),
        m(&[&[0.1, 0.89, 0.01], &[0.3, 0.3, 0.4], &[0.8, 0.1, 0.1], &[0.1, 0.8, 0.1]]),
    ]
}

pub const TREE_TERMINALS: [&str; 3] = ["X1", "X2", "X3"];

fn tree_graph(prior: Distribution, prior_trainable: bool, blocks: [Matrix; 3], trainable: bool) -> GraphSpec {
    let m_s = prior.len();
    let mut g = GraphSpec::new();
    g.add_variable("S", m_s);
    for i in 1..=3 {
        g.add_variable(&format!("S{i}"), m_s);
    }
    for (i, theta) in blocks.iter().enumerate() {
        g.add_variable(TREE_TERMINALS[i], theta.cols());
    }
    g.add_source(
        "S",
        SourceBlock {
            name: "pi_S".into(),
            prior,
            trainable: prior_trainable,
        },
    );
    g.add_diverter("S", &["S1", "S2", "S3"]);
    for (i, theta) in blocks.into_iter().enumerate() {
        let x = TREE_TERMINALS[i];
        g.add_block(&format!("S{}", i + 1), x, SisoBlock::new(format!("P_{x}"), theta, trainable));
    }
    g
}

/// The generative latent tree: uniform prior over four states and the
/// fixed conditionals of [`tree_generative_matrices`].
pub fn tree_generative_graph() -> GraphSpec {
    tree_graph(Distribution::uniform(4), false, tree_generative_matrices(), false)
}

/// Same topology with `m_s` hidden states and every table trainable,
/// initialized to uniform rows.
pub fn tree_learning_graph(m_s: usize) -> GraphSpec {
    let sizes = [2, 2, 3];
    let blocks = sizes.map(|c| Matrix::uniform_rows(m_s, c));
    tree_graph(Distribution::uniform(m_s), true, blocks, true)
}

/// Alphabet sizes of the deeper graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeepSizes {
    pub s1: usize,
    pub s2: usize,
    pub s3: usize,
    pub y1: usize,
    pub y2: usize,
    pub x1: usize,
    pub x2: usize,
    pub x3: usize,
}

impl Default for DeepSizes {
    fn default() -> Self {
        DeepSizes {
            s1: 4,
            s2: 2,
            s3: 3,
            y1: 3,
            y2: 4,
            x1: 3,
            x2: 2,
            x3: 3,
        }
    }
}

/// Names of the four fixed expander blocks of the deeper graph, with the
/// `(sizes, j)` each one is built from.
pub fn deep_fixed_blocks(s: &DeepSizes) -> [(&'static str, [usize; 2], usize); 4] {
    [
        ("E_S1", [s.s1, s.s2], 1),
        ("E_S2", [s.s1, s.s2], 2),
        ("E_Y2", [s.y2, s.s3], 1),
        ("E_S3", [s.y2, s.s3], 2),
    ]
}

/// Builds the deeper graph:
///
/// ```text
/// pi_S1 → S1 ═╦═ S1a → P_Y1 → Y1 → P_X1 → X1
///             ╚═ S1b → E_S1 → S1S2#1 ═╗
/// pi_S2 → S2 → E_S2 → S1S2#2 ═════════╩═ S1S2 → P_Y2 → Y2 ═╦═ Y2a → P_X2 → X2
///                                                           ╚═ Y2b → E_Y2 → Y2S3#1 ═╗
/// pi_S3 → S3 → E_S3 → Y2S3#2 ══════════════════════════════════════════════════════╩═ Y2S3 → P_X3 → X3
/// ```
///
/// `tables` supplies the priors and the trainable conditionals by name;
/// missing entries default to uniform.
pub fn deep_graph(s: &DeepSizes, tables: &dyn Fn(&str, usize, usize) -> Matrix, trainable: bool) -> Result<GraphSpec> {
    let mut g = GraphSpec::new();
    for (name, size) in [
        ("S1", s.s1),
        ("S1a", s.s1),
        ("S1b", s.s1),
        ("S2", s.s2),
        ("S3", s.s3),
        ("S1S2", s.s1 * s.s2),
        ("S1S2#1", s.s1 * s.s2),
        ("S1S2#2", s.s1 * s.s2),
        ("Y1", s.y1),
        ("Y2", s.y2),
        ("Y2a", s.y2),
        ("Y2b", s.y2),
        ("Y2S3", s.y2 * s.s3),
        ("Y2S3#1", s.y2 * s.s3),
        ("Y2S3#2", s.y2 * s.s3),
        ("X1", s.x1),
        ("X2", s.x2),
        ("X3", s.x3),
    ] {
        g.add_variable(name, size);
    }
    for (var, name, size) in [("S1", "pi_S1", s.s1), ("S2", "pi_S2", s.s2), ("S3", "pi_S3", s.s3)] {
        let prior = normalize(tables(name, 1, size).row(0))?;
        g.add_source(
            var,
            SourceBlock {
                name: name.into(),
                prior,
                trainable,
            },
        );
    }
    g.add_diverter("S1", &["S1a", "S1b"]);
    g.add_diverter("S1S2", &["S1S2#1", "S1S2#2"]);
    g.add_diverter("Y2", &["Y2a", "Y2b"]);
    g.add_diverter("Y2S3", &["Y2S3#1", "Y2S3#2"]);

    let fixed = deep_fixed_blocks(s);
    let wiring = [("S1b", "S1S2#1"), ("S2", "S1S2#2"), ("Y2b", "Y2S3#1"), ("S3", "Y2S3#2")];
    for ((name, sizes, j), (from, to)) in fixed.into_iter().zip(wiring) {
        let mut block = build_expander(&sizes, j)?;
        block.name = name.into();
        g.add_block(from, to, block);
    }
    for (name, from, to) in [
        ("P_Y1", "S1a", "Y1"),
        ("P_Y2", "S1S2", "Y2"),
        ("P_X1", "Y1", "X1"),
        ("P_X2", "Y2a", "X2"),
        ("P_X3", "Y2S3", "X3"),
    ] {
        let rows = g.variable_size(from).expect("declared");
        let cols = g.variable_size(to).expect("declared");
        g.add_block(from, to, SisoBlock::new(name, tables(name, rows, cols), trainable));
    }
    g.check()?;
    Ok(g)
}

/// Generative deeper graph with every table drawn by
/// [`random_row_stochastic`] on a per-table stream of `seed`.
pub fn deep_generative_graph(s: &DeepSizes, seed: u64) -> Result<GraphSpec> {
    deep_graph(
        s,
        &|name, r, c| random_row_stochastic_labeled(r, c, seed, &format!("gen/{name}")).expect("positive sizes"),
        false,
    )
}

pub fn deep_learning_graph(s: &DeepSizes) -> Result<GraphSpec> {
    deep_graph(s, &|_, r, c| Matrix::uniform_rows(r, c), true)
}

/// Settings shared by the tree and deep studies.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub epochs: usize,
    pub nit: usize,
    pub delta: f64,
    pub algorithms: Vec<Algorithm>,
    /// Fraction of samples (taken from the front) used for training.
    pub split: f64,
    pub seed: u64,
    /// Hidden-state count of the learning graph (tree study only).
    pub m_s: usize,
    pub record_coefficients: bool,
    pub tol: Option<f64>,
}

impl ExperimentConfig {
    /// Defaults of tree variant 1 (matched model), 2 (mismatched `M_S`) or 3
    /// (generalization with a held-out half).
    pub fn tree(variant: u8) -> Result<Self> {
        let base = ExperimentConfig {
            n: 400,
            epochs: 60,
            nit: 3,
            delta: 1e-6,
            algorithms: Algorithm::ALL.to_vec(),
            split: 1.0,
            seed: 1,
            m_s: 4,
            record_coefficients: false,
            tol: None,
        };
        match variant {
            1 => Ok(base),
            2 => Ok(ExperimentConfig { m_s: 2, ..base }),
            3 => Ok(ExperimentConfig {
                n: 300,
                split: 0.5,
                ..base
            }),
            v => Err(Error::InvalidParameter(format!("tree variant must be 1, 2 or 3, got {v}"))),
        }
    }

    pub fn deep() -> Self {
        ExperimentConfig {
            n: 100,
            epochs: 600,
            ..Self::tree(1).expect("variant 1")
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.split) {
            return Err(Error::InvalidParameter(format!("split must lie in [0, 1], got {}", self.split)));
        }
        if self.m_s == 0 || self.nit == 0 {
            return Err(Error::InvalidParameter("M_S and Nit must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self, algorithm: Algorithm) -> TrainConfig {
        TrainConfig {
            algorithm,
            epochs: self.epochs,
            inner_iterations: self.nit,
            delta: self.delta,
            seed: self.seed,
            tol: self.tol,
            record_coefficients: self.record_coefficients,
            ..TrainConfig::default()
        }
    }

    /// Training mask: the first `round(split·n)` samples.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let train = (self.split * n as f64).round() as usize;
        (0..n).map(|i| i < train).collect()
    }
}

/// Everything a study produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub samples: SampleSet,
    pub reports: Vec<TrainReport>,
}

impl ExperimentOutput {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.reports.iter().flat_map(ResultRow::from_report).collect()
    }

    pub fn report(&self, algorithm: Algorithm) -> Option<&TrainReport> {
        self.reports.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn final_train(&self, algorithm: Algorithm) -> Option<f64> {
        self.report(algorithm).and_then(TrainReport::final_train_loglik)
    }
}

/// Trains every configured algorithm on one sample set, in parallel.
pub fn train_all(learning: &GraphSpec, samples: SampleSet, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.check()?;
    let evidence = samples.to_evidence();
    let mask = cfg.mask(evidence.len());
    let reports = cfg
        .algorithms
        .par_iter()
        .map(|&a| em_train(learning, &evidence, Some(&mask), &cfg.train_config(a)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput { samples, reports })
}

/// Samples the generative tree and trains a learning tree with `cfg.m_s`
/// hidden states.
pub fn run_tree_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.check()?;
    let samples = ancestral_sample(&tree_generative_graph(), cfg.n, cfg.seed)?;
    train_all(&tree_learning_graph(cfg.m_s), samples, cfg)
}

pub fn run_deep_experiment(cfg: &ExperimentConfig, sizes: &DeepSizes) -> Result<ExperimentOutput> {
    cfg.check()?;
    let samples = ancestral_sample(&deep_generative_graph(sizes, cfg.seed)?, cfg.n, cfg.seed)?;
    train_all(&deep_learning_graph(sizes)?, samples, cfg)
}

/// Final train log-likelihood of the tree study for each `Nit` and
/// repetition; repetition `r` uses seed `cfg.seed + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub nit: usize,
    pub repetition: usize,
    pub algorithm: Algorithm,
    pub final_loglik: f64,
}

pub const NIT_SWEEP: [usize; 5] = [1, 3, 5, 10, 20];

pub fn run_nit_sweep(cfg: &ExperimentConfig, nits: &[usize], repetitions: usize) -> Result<Vec<SweepPoint>> {
    let algorithms: Vec<Algorithm> = cfg.algorithms.iter().copied().filter(|a| a.is_iterative()).collect();
    let jobs: Vec<(usize, usize)> = nits
        .iter()
        .flat_map(|&nit| (0..repetitions).map(move |r| (nit, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(nit, rep)| {
            let run = ExperimentConfig {
                nit,
                seed: cfg.seed + rep as u64,
                algorithms: algorithms.clone(),
                ..cfg.clone()
            };
            let out = run_tree_experiment(&run)?;
            Ok(algorithms
                .iter()
                .map(|&a| SweepPoint {
                    nit,
                    repetition: rep,
                    algorithm: a,
                    final_loglik: out.final_train(a).unwrap_or(f64::NAN),
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().flatten().collect())
}

pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("nit,repetition,algorithm,final_loglik\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.nit,
            p.repetition,
            p.algorithm,
            crate::io::fmt_f64(p.final_loglik)
        ));
    }
    out
}

/// Single-block study parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleBlockConfig {
    pub m_x: usize,
    pub m_y: usize,
    pub n: usize,
    pub ex: f64,
    pub ey: f64,
    pub iterations: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for SingleBlockConfig {
    fn default() -> Self {
        SingleBlockConfig {
            m_x: 4,
            m_y: 3,
            n: 100,
            ex: 1.0,
            ey: 1.0,
            iterations: 100,
            delta: 1e-6,
            seed: 1,
        }
    }
}

/// Rows labelled `ml`, `kl` (one per iteration), `vit`, `var` and `ref`
/// (one each). The `train_loglik` column holds the block log-likelihood.
pub fn run_single_block(cfg: &SingleBlockConfig) -> Result<Vec<ResultRow>> {
    let data = random_message_pairs(cfg.m_x, cfg.m_y, cfg.n, cfg.ex, cfg.ey, cfg.seed)?;
    let row = |algorithm: &str, epoch: usize, l: f64, ms: f64| ResultRow {
        algorithm: algorithm.into(),
        epoch,
        train_loglik: l,
        test_loglik: None,
        wall_ms: ms,
    };
    let mut rows = Vec::new();
    for (name, step) in [
        ("ml", ml_update as fn(&Matrix, &crate::learning::BlockDataset) -> Result<Matrix>),
        ("kl", kl_update),
    ] {
        let mut theta = Matrix::uniform_rows(cfg.m_x, cfg.m_y);
        for it in 1..=cfg.iterations {
            let start = std::time::Instant::now();
            theta = step(&theta, &data)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            rows.push(row(name, it, block_log_likelihood(&theta, &data), ms));
        }
    }
    let block = SisoBlock::new("theta", Matrix::uniform_rows(cfg.m_x, cfg.m_y), true);
    for algorithm in [Algorithm::Vit, Algorithm::Var] {
        let start = std::time::Instant::now();
        let theta = train_block(
            &block,
            &data,
            &TrainConfig {
                algorithm,
                delta: cfg.delta,
                ..TrainConfig::default()
            },
        )?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        rows.push(row(algorithm.name(), 1, block_log_likelihood(&theta, &data), ms));
    }
    let reference = random_row_stochastic(cfg.m_x, cfg.m_y, cfg.seed)?;
    rows.push(row("ref", 1, block_log_likelihood(&reference, &data), 0.0));
    Ok(rows)
}

/// Last value per label, in first-seen order.
pub fn final_values(rows: &[ResultRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(a, _)| *a == r.algorithm) {
            Some(slot) => slot.1 = r.train_loglik,
            None => out.push((r.algorithm.clone(), r.train_loglik)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_validate() {
        assert_eq!(tree_generative_graph().validate(), vec![]);
        for m_s in [2, 4, 7, 9] {
            assert_eq!(tree_learning_graph(m_s).validate(), vec![]);
        }
        let s = DeepSizes::default();
        let g = deep_generative_graph(&s, 1).unwrap();
        assert_eq!(g.terminals(), vec!["X1", "X2", "X3"]);
        assert_eq!(deep_learning_graph(&s).unwrap().validate(), vec![]);
    }

    #[test]
    fn deep_fixed_blocks_are_expanders() {
        let s = DeepSizes::default();
        let g = deep_learning_graph(&s).unwrap();
        for (name, sizes, j) in deep_fixed_blocks(&s) {
            let b = g.block(name).unwrap();
            assert!(!b.trainable);
            assert_eq!(b.theta, build_expander(&sizes, j).unwrap().theta);
        }
    }

    #[test]
    fn tree_marginal_of_first_child() {
        let samples = ancestral_sample(&tree_generative_graph(), 400, 1).unwrap();
        let i = samples.terminals.iter().position(|t| t == "X1").unwrap();
        let ones = samples.records.iter().filter(|r| r[i] == 0).count() as f64;
        let p: f64 = 0.35;
        let sigma = (400.0 * p * (1.0 - p)).sqrt();
        assert!((ones - 400.0 * p).abs() <= 3.0 * sigma, "{ones}");
    }

    #[test]
    fn single_block_shape() {
        let rows = run_single_block(&SingleBlockConfig {
            iterations: 1,
            n: 10,
            ..SingleBlockConfig::default()
        })
        .unwrap();
        let labels: Vec<&str> = rows.iter().map(|r| r.algorithm.as_str()).collect();
        assert_eq!(labels, ["ml", "kl", "vit", "var", "ref"]);
    }

    #[test]
    fn mask_takes_the_front() {
        let cfg = ExperimentConfig::tree(3).unwrap();
        let m = cfg.mask(300);
        assert_eq!(m.iter().filter(|x| **x).count(), 150);
        assert!(m[149] && !m[150]);
        assert!(ExperimentConfig::tree(4).is_err());
    }
}
