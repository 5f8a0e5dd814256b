//! CSV formats used by the command-line harness.
//!
//! Dataset files carry `# seed <n>` and `# graph <sha256>` comment lines,
//! a header of terminal names and one row of 1-based symbol indices per
//! sample. An empty cell leaves that terminal unobserved.
//!
//! Results files have the fixed header
//! `algorithm,epoch,train_loglik,test_loglik,wall_ms`; floats are written
//! with 17 significant digits so they parse back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::learning::TrainReport;
use crate::matrix::Matrix;
use crate::propagation::Evidence;
use crate::synthgen::SampleSet;

pub const RESULTS_HEADER: [&str; 5] = ["algorithm", "epoch", "train_loglik", "test_loglik", "wall_ms"];

/// 17 significant digits, exact on parse.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn parse_err(context: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        context: context.into(),
        message: message.into(),
    }
}

/// Terminal observations as read from a dataset file, 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub terminals: Vec<String>,
    pub rows: Vec<Vec<Option<usize>>>,
    pub seed: Option<u64>,
    pub graph_hash: Option<String>,
}

impl Dataset {
    pub fn from_samples(samples: &SampleSet, graph_hash: Option<String>) -> Self {
        Dataset {
            terminals: samples.terminals.clone(),
            rows: samples
                .records
                .iter()
                .map(|r| r.iter().map(|k| Some(*k)).collect())
                .collect(),
            seed: Some(samples.seed),
            graph_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks that every column is a terminal of `g` and every value fits
    /// its alphabet. `context` names the source in errors.
    pub fn check_against(&self, g: &GraphSpec, context: &str) -> Result<()> {
        let terminals = g.terminals();
        let mut sizes = Vec::with_capacity(self.terminals.len());
        for t in &self.terminals {
            if !terminals.contains(t) {
                return Err(parse_err(
                    context,
                    format!("column `{t}` is not a terminal of the graph (terminals: {})", terminals.join(", ")),
                ));
            }
            sizes.push(g.variable_size(t).expect("terminal exists"));
        }
        for (r, row) in self.rows.iter().enumerate() {
            for ((t, size), k) in self.terminals.iter().zip(&sizes).zip(row) {
                if let Some(k) = k.filter(|k| k >= size) {
                    return Err(parse_err(
                        context,
                        format!("data row {}, column `{t}`: value {} exceeds the alphabet size {size}", r + 1, k + 1),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_evidence(&self) -> Vec<Evidence> {
        self.rows
            .iter()
            .map(|row| {
                let mut ev = Evidence::new();
                for (t, k) in self.terminals.iter().zip(row) {
                    if let Some(k) = k {
                        ev = ev.hard(t, *k);
                    }
                }
                ev
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "# seed {seed}");
        }
        if let Some(h) = &self.graph_hash {
            let _ = writeln!(out, "# graph {h}");
        }
        out.push_str(&self.terminals.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|k| k.map_or(String::new(), |k| (k + 1).to_string()))
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut seed = None;
        let mut graph_hash = None;
        for (i, line) in text.lines().enumerate() {
            let Some(rest) = line.trim().strip_prefix('#') else {
                continue;
            };
            let mut words = rest.split_whitespace();
            match (words.next(), words.next()) {
                (Some("seed"), Some(v)) => {
                    seed = Some(v.parse().map_err(|_| {
                        parse_err(context, format!("line {}: bad seed `{v}`", i + 1))
                    })?)
                }
                (Some("graph"), Some(v)) => graph_hash = Some(v.to_string()),
                _ => {}
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(text.as_bytes());
        let terminals: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(context, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if terminals.is_empty() || terminals.iter().any(String::is_empty) {
            return Err(parse_err(context, "header must list terminal names"));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| parse_err(context, e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let row = record
                .iter()
                .zip(&terminals)
                .map(|(cell, t)| {
                    if cell.is_empty() {
                        return Ok(None);
                    }
                    match cell.parse::<usize>() {
                        Ok(k) if k >= 1 => Ok(Some(k - 1)),
                        _ => Err(parse_err(
                            context,
                            format!("line {line}, column `{t}`: expected a 1-based index, got `{cell}`"),
                        )),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Dataset {
            terminals,
            rows,
            seed,
            graph_hash,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string())?;
        Ok(())
    }
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algorithm: String,
    pub epoch: usize,
    pub train_loglik: f64,
    pub test_loglik: Option<f64>,
    pub wall_ms: f64,
}

impl ResultRow {
    pub fn from_report(report: &TrainReport) -> Vec<ResultRow> {
        report
            .epochs
            .iter()
            .map(|e| ResultRow {
                algorithm: report.algorithm.to_string(),
                epoch: e.epoch,
                train_loglik: e.train_loglik,
                test_loglik: e.test_loglik,
                wall_ms: e.wall_ms,
            })
            .collect()
    }
}

pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = RESULTS_HEADER.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.algorithm,
            r.epoch,
            fmt_f64(r.train_loglik),
            r.test_loglik.map_or(String::new(), fmt_f64),
            fmt_f64(r.wall_ms)
        );
    }
    out
}

fn parse_f64(cell: &str, context: &str, line: u64, column: &str) -> Result<f64> {
    cell.parse()
        .map_err(|_| parse_err(context, format!("line {line}, column `{column}`: bad number `{cell}`")))
}

pub fn parse_results(text: &str, context: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(context, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != RESULTS_HEADER {
        return Err(parse_err(
            context,
            format!("expected header `{}`", RESULTS_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(context, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let epoch = record[1]
            .parse()
            .map_err(|_| parse_err(context, format!("line {line}, column `epoch`: bad integer")))?;
        rows.push(ResultRow {
            algorithm: record[0].to_string(),
            epoch,
            train_loglik: parse_f64(&record[2], context, line, "train_loglik")?,
            test_loglik: match &record[3] {
                "" => None,
                cell => Some(parse_f64(cell, context, line, "test_loglik")?),
            },
            wall_ms: parse_f64(&record[4], context, line, "wall_ms")?,
        });
    }
    Ok(rows)
}

/// `algorithm,epoch,block,row,col,value`, rows and columns 1-based.
pub fn coefficients_to_csv(reports: &[TrainReport]) -> String {
    let mut out = String::from("algorithm,epoch,block,row,col,value\n");
    for report in reports {
        for e in &report.epochs {
            let Some(coeffs) = &e.coefficients else {
                continue;
            };
            write_coefficients(&mut out, report.algorithm.name(), e.epoch, coeffs);
        }
    }
    out
}

fn write_coefficients(out: &mut String, algorithm: &str, epoch: usize, coeffs: &BTreeMap<String, Matrix>) {
    for (name, theta) in coeffs {
        for r in 0..theta.rows() {
            for c in 0..theta.cols() {
                let _ = writeln!(
                    out,
                    "{algorithm},{epoch},{name},{},{},{}",
                    r + 1,
                    c + 1,
                    fmt_f64(theta[(r, c)])
                );
            }
        }
    }
}

/// Gnuplot script drawing the train log-likelihood of each algorithm found
/// in `rows` against the epoch.
pub fn gnuplot_script(results_file: &str, rows: &[ResultRow], title: &str) -> String {
    let mut algorithms: Vec<&str> = Vec::new();
    for r in rows {
        if !algorithms.contains(&r.algorithm.as_str()) {
            algorithms.push(&r.algorithm);
        }
    }
    let has_test = rows.iter().any(|r| r.test_loglik.is_some());
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel 'epoch'");
    let _ = writeln!(s, "set ylabel 'log-likelihood'");
    let _ = writeln!(s, "set key bottom right");
    let mut plots = Vec::new();
    for a in &algorithms {
        plots.push(format!(
            "'{results_file}' using 2:(strcol(1) eq '{a}' ? $3 : 1/0) with lines title '{a} train'"
        ));
        if has_test {
            plots.push(format!(
                "'{results_file}' using 2:(strcol(1) eq '{a}' ? $4 : 1/0) with lines dashtype 2 title '{a} test'"
            ));
        }
    }
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

/// Reads a whole file, naming the path on failure.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a whole file, naming the path on failure.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for x in [0.1, -1234.5678901234567, 1e-300, 2.0f64.sqrt(), -0.0, f64::NEG_INFINITY] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x}");
        }
    }

    #[test]
    fn dataset_round_trip() {
        let d = Dataset {
            terminals: vec!["X1".into(), "X2".into()],
            rows: vec![vec![Some(0), Some(2)], vec![None, Some(1)]],
            seed: Some(7),
            graph_hash: Some("abc".into()),
        };
        let text = d.to_csv_string();
        assert!(text.starts_with("# seed 7\n# graph abc\nX1,X2\n1,3\n,2\n"));
        assert_eq!(Dataset::parse(&text, "t").unwrap(), d);
        let ev = d.to_evidence();
        assert!(ev[1].get("X1").is_none());
    }

    #[test]
    fn dataset_errors_name_line_and_column() {
        let err = Dataset::parse("A,B\n1,2\n1,0\n", "data.csv").unwrap_err().to_string();
        assert!(err.contains("data.csv") && err.contains("line 3") && err.contains("`B`"), "{err}");
        assert!(Dataset::parse("A,B\n1\n", "d").is_err());
        let empty = Dataset::parse("A\n", "d").unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn results_round_trip() {
        let rows = vec![
            ResultRow {
                algorithm: "ml".into(),
                epoch: 1,
                train_loglik: -123.456,
                test_loglik: None,
                wall_ms: 0.5,
            },
            ResultRow {
                algorithm: "vit".into(),
                epoch: 2,
                train_loglik: f64::NEG_INFINITY,
                test_loglik: Some(-1.0 / 3.0),
                wall_ms: 1.25,
            },
        ];
        let text = results_to_csv(&rows);
        assert_eq!(parse_results(&text, "r").unwrap(), rows);
        assert!(parse_results("a,b\n", "r").is_err());
        let script = gnuplot_script("r.csv", &rows, "t");
        assert!(script.contains("'vit'") && script.contains("$4"));
    }

    #[test]
    fn datasets_are_checked_against_the_graph() {
        let g = crate::experiments::tree_learning_graph(4);
        let ok = Dataset::parse("X1,X3\n2,3\n,1\n", "d").unwrap();
        assert!(ok.check_against(&g, "d").is_ok());
        let foreign = Dataset::parse("X1,S\n1,1\n", "d").unwrap();
        assert!(foreign.check_against(&g, "d").unwrap_err().to_string().contains("`S`"));
        let big = Dataset::parse("X1,X2\n1,2\n1,3\n", "d").unwrap();
        let msg = big.check_against(&g, "d").unwrap_err().to_string();
        assert!(msg.contains("data row 2") && msg.contains("`X2`"), "{msg}");
    }
}
