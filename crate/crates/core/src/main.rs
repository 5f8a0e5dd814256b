//! `normalgraph` command-line harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use normalgraph::experiments::{
    final_values, run_deep_experiment, run_nit_sweep, run_single_block, run_tree_experiment, sweep_to_csv,
    tree_generative_graph, tree_learning_graph, DeepSizes, ExperimentConfig, ExperimentOutput, SingleBlockConfig,
    NIT_SWEEP,
};
use normalgraph::io::{coefficients_to_csv, fmt_f64, gnuplot_script, results_to_csv, Dataset, ResultRow};
use normalgraph::learning::{em_train, split_log_likelihood, TrainReport};
use normalgraph::synthgen::ancestral_sample;
use normalgraph::{Algorithm, Error, GraphSpec, Network, Result};

#[derive(Parser)]
#[command(name = "normalgraph", version, about = "Belief propagation and local learning on normal-form factor graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a graph in generative mode.
    Generate {
        #[arg(long)]
        graph: PathBuf,
        /// Number of samples.
        #[arg(short = 'n', long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the trainable blocks of a graph from a dataset with EM.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        learn: LearnArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Write the learned graph here (`.<algo>` is inserted when several
        /// algorithms run).
        #[arg(long)]
        save_graph: Option<PathBuf>,
    },
    /// Aggregated log-likelihood of a dataset under a graph.
    Eval {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        split: f64,
    },
    /// Run one of the built-in synthetic studies.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        /// Tree study variant: 1 matched, 2 mismatched hidden size, 3 held-out test half.
        #[arg(long, default_value_t = 1)]
        variant: u8,
        /// Hidden-state count of the learning tree.
        #[arg(long)]
        ms_override: Option<usize>,
        #[arg(short = 'n', long)]
        samples: Option<usize>,
        #[command(flatten)]
        learn: LearnArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Final log-likelihood for Nit in {1,3,5,10,20}, 10 repetitions each.
        #[arg(long)]
        nit_sweep: bool,
        #[command(flatten)]
        single: SingleArgs,
        /// Directory receiving the generative graph, learning graph and dataset.
        #[arg(long)]
        save_inputs: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Single,
    Tree,
    Deep,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgoChoice {
    Ml,
    Kl,
    Vit,
    Var,
    All,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    algo: Vec<AlgoChoice>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 3)]
    nit: usize,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    /// Fraction of samples (from the front) used for training.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stop early once |Δ log-likelihood| between epochs falls below this.
    #[arg(long)]
    tol: Option<f64>,
}

impl LearnArgs {
    fn algorithms(&self) -> Vec<Algorithm> {
        if self.algo.contains(&AlgoChoice::All) {
            return Algorithm::ALL.to_vec();
        }
        let mut out = Vec::new();
        for a in &self.algo {
            let alg = match a {
                AlgoChoice::Ml => Algorithm::Ml,
                AlgoChoice::Kl => Algorithm::Kl,
                AlgoChoice::Vit => Algorithm::Vit,
                AlgoChoice::Var => Algorithm::Var,
                AlgoChoice::All => unreachable!(),
            };
            if !out.contains(&alg) {
                out.push(alg);
            }
        }
        out
    }

    fn apply(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        cfg.algorithms = self.algorithms();
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.nit = self.nit;
        cfg.delta = self.delta;
        if let Some(s) = self.split {
            cfg.split = s;
        }
        cfg.seed = self.seed;
        cfg.tol = self.tol;
        cfg
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Results CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch coefficient dump CSV.
    #[arg(long)]
    dump_coefficients: Option<PathBuf>,
    /// Gnuplot script plotting the results CSV.
    #[arg(long)]
    emit_plot: Option<PathBuf>,
}

#[derive(Args)]
struct SingleArgs {
    #[arg(long, default_value_t = 4)]
    mx: usize,
    #[arg(long, default_value_t = 3)]
    my: usize,
    #[arg(long, default_value_t = 1.0)]
    ex: f64,
    #[arg(long, default_value_t = 1.0)]
    ey: f64,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
}

fn write(path: &Path, text: &str) -> Result<()> {
    normalgraph::io::write_text(path, text)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn emit(output: &OutputArgs, rows: &[ResultRow], reports: &[TrainReport], suffix: &str, title: &str) -> Result<()> {
    let csv = results_to_csv(rows);
    match &output.out {
        Some(p) => write(&with_suffix(p, suffix), &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &output.dump_coefficients {
        write(&with_suffix(p, suffix), &coefficients_to_csv(reports))?;
    }
    if let Some(p) = &output.emit_plot {
        let results = output
            .out
            .as_ref()
            .map(|o| with_suffix(o, suffix).display().to_string())
            .unwrap_or_else(|| "results.csv".into());
        write(&with_suffix(p, suffix), &gnuplot_script(&results, rows, title))?;
    }
    Ok(())
}

fn summarize(out: &ExperimentOutput, label: &str) {
    for r in &out.reports {
        let last = r.epochs.last();
        eprintln!(
            "{label} {}: final train {} test {}",
            r.algorithm,
            last.map_or("n/a".into(), |e| fmt_f64(e.train_loglik)),
            last.and_then(|e| e.test_loglik).map_or("n/a".into(), fmt_f64),
        );
    }
}

fn load_evidence(graph: &GraphSpec, data: &Path) -> Result<(Dataset, Vec<normalgraph::Evidence>)> {
    let dataset = Dataset::load(data)?;
    dataset.check_against(graph, &data.display().to_string())?;
    let ev = dataset.to_evidence();
    Ok((dataset, ev))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { graph, samples, seed, out } => {
            let g = GraphSpec::load(&graph)?;
            let set = ancestral_sample(&g, samples, seed)?;
            Dataset::from_samples(&set, Some(g.content_hash())).save(&out)?;
        }
        Command::Train {
            graph,
            data,
            learn,
            output,
            save_graph,
        } => {
            let g = GraphSpec::load(&graph)?;
            let (_, evidence) = load_evidence(&g, &data)?;
            let cfg = learn.apply(ExperimentConfig::tree(1)?);
            cfg.check()?;
            let cfg = ExperimentConfig {
                record_coefficients: output.dump_coefficients.is_some(),
                ..cfg
            };
            let mask = cfg.mask(evidence.len());
            let mut reports = Vec::new();
            for a in &cfg.algorithms {
                reports.push(em_train(&g, &evidence, Some(&mask), &cfg.train_config(*a))?);
            }
            let rows: Vec<ResultRow> = reports.iter().flat_map(ResultRow::from_report).collect();
            emit(&output, &rows, &reports, "", "training")?;
            if let Some(p) = save_graph {
                for r in &reports {
                    let path = if reports.len() == 1 {
                        p.clone()
                    } else {
                        with_suffix(&p, &format!(".{}", r.algorithm))
                    };
                    r.graph.save(&path)?;
                }
            }
        }
        Command::Eval { graph, data, split } => {
            let g = GraphSpec::load(&graph)?;
            let (dataset, evidence) = load_evidence(&g, &data)?;
            let net = Network::compile(&g)?;
            let states = evidence
                .iter()
                .enumerate()
                .map(|(n, ev)| {
                    net.propagate(ev).map_err(|e| match e {
                        Error::ContradictoryEvidence { variable, .. } => Error::ContradictoryEvidence {
                            variable,
                            sample: Some(n),
                        },
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = ExperimentConfig {
                split,
                ..ExperimentConfig::tree(1)?
            };
            cfg.check()?;
            let (train, test) = split_log_likelihood(&states, &cfg.mask(states.len()), &dataset.terminals);
            println!("train_loglik,{}", fmt_f64(train));
            if let Some(t) = test {
                println!("test_loglik,{}", fmt_f64(t));
            }
        }
        Command::Experiment {
            kind,
            variant,
            ms_override,
            samples,
            learn,
            output,
            nit_sweep,
            single,
            save_inputs,
        } => match kind {
            ExperimentKind::Single => {
                let cfg = SingleBlockConfig {
                    m_x: single.mx,
                    m_y: single.my,
                    n: samples.unwrap_or(100),
                    ex: single.ex,
                    ey: single.ey,
                    iterations: single.iterations,
                    delta: learn.delta,
                    seed: learn.seed,
                };
                let rows = run_single_block(&cfg)?;
                emit(&output, &rows, &[], "", "single block")?;
                for (a, l) in final_values(&rows) {
                    eprintln!("single {a}: final {}", fmt_f64(l));
                }
            }
            ExperimentKind::Tree => {
                let base = learn.apply(ExperimentConfig::tree(variant)?);
                let base = ExperimentConfig {
                    n: samples.unwrap_or(base.n),
                    record_coefficients: output.dump_coefficients.is_some(),
                    ..base
                };
                let sizes: Vec<usize> = match (ms_override, variant) {
                    (Some(m), _) => vec![m],
                    (None, 2) => vec![2, 7],
                    (None, 3) => vec![4, 9],
                    (None, _) => vec![4],
                };
                if nit_sweep {
                    let cfg = ExperimentConfig { m_s: sizes[0], ..base };
                    let points = run_nit_sweep(&cfg, &NIT_SWEEP, 10)?;
                    let csv = sweep_to_csv(&points);
                    match &output.out {
                        Some(p) => write(p, &csv)?,
                        None => print!("{csv}"),
                    }
                    return Ok(());
                }
                for &m_s in &sizes {
                    let cfg = ExperimentConfig { m_s, ..base.clone() };
                    let out = run_tree_experiment(&cfg)?;
                    let suffix = if sizes.len() > 1 { format!("_ms{m_s}") } else { String::new() };
                    if let Some(dir) = &save_inputs {
                        std::fs::create_dir_all(dir)?;
                        let gen = tree_generative_graph();
                        gen.save(&dir.join("tree_generative.json"))?;
                        tree_learning_graph(m_s).save(&dir.join(format!("tree_learning_ms{m_s}.json")))?;
                        Dataset::from_samples(&out.samples, Some(gen.content_hash()))
                            .save(&dir.join("tree_data.csv"))?;
                    }
                    emit(&output, &out.rows(), &out.reports, &suffix, &format!("tree, M_S = {m_s}"))?;
                    summarize(&out, &format!("tree M_S={m_s}"));
                }
            }
            ExperimentKind::Deep => {
                let cfg = learn.apply(ExperimentConfig::deep());
                let cfg = ExperimentConfig {
                    n: samples.unwrap_or(cfg.n),
                    record_coefficients: output.dump_coefficients.is_some(),
                    ..cfg
                };
                let sizes = DeepSizes::default();
                let out = run_deep_experiment(&cfg, &sizes)?;
                if let Some(dir) = &save_inputs {
                    std::fs::create_dir_all(dir)?;
                    let gen = normalgraph::experiments::deep_generative_graph(&sizes, cfg.seed)?;
                    gen.save(&dir.join("deep_generative.json"))?;
                    normalgraph::experiments::deep_learning_graph(&sizes)?.save(&dir.join("deep_learning.json"))?;
                    Dataset::from_samples(&out.samples, Some(gen.content_hash())).save(&dir.join("deep_data.csv"))?;
                }
                emit(&output, &out.rows(), &out.reports, "", "deep graph")?;
                summarize(&out, "deep");
            }
        },
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "argument" => 2,
        "parse" => 3,
        "graph" => 4,
        "data" => 5,
        "numeric" => 6,
        _ => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
