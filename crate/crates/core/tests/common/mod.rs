//! Test-only helpers: a brute-force joint-table oracle and random tree
//! generators.
#![allow(dead_code)]

use std::collections::BTreeMap;

use normalgraph::graph::NodeRef;
use normalgraph::messages::normalize;
use normalgraph::{Distribution, Evidence, GraphSpec, Matrix, Observation, SisoBlock, SourceBlock};
use rand::Rng;

/// Posterior of every edge by enumerating the joint table. Edges tied by a
/// diverter share one value. Returns `None` when the evidence has zero
/// probability.
pub fn brute_force_posteriors(g: &GraphSpec, ev: &Evidence) -> Option<BTreeMap<String, Vec<f64>>> {
    let n = g.variables.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for d in &g.diverters {
        let ids: Vec<usize> = d.edges().map(|e| g.variable_index(e).unwrap()).collect();
        for w in ids.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    let mut class_of = vec![0; n];
    let mut reps: Vec<usize> = Vec::new();
    for e in 0..n {
        let r = find(&mut parent, e);
        class_of[e] = match reps.iter().position(|x| *x == r) {
            Some(i) => i,
            None => {
                reps.push(r);
                reps.len() - 1
            }
        };
    }
    let sizes: Vec<usize> = reps.iter().map(|&r| g.variables[r].size).collect();
    let edge = |name: &str| class_of[g.variable_index(name).unwrap()];

    let sources: Vec<(usize, Vec<f64>)> = g
        .sources
        .iter()
        .map(|s| (edge(&s.variable), s.block.prior.values().to_vec()))
        .collect();
    let blocks: Vec<(usize, usize, &Matrix)> = g
        .blocks
        .iter()
        .map(|b| (edge(&b.from), edge(&b.to), &b.block.theta))
        .collect();
    let evidence: Vec<(usize, Vec<f64>)> = ev
        .iter()
        .map(|(name, obs)| {
            let size = g.variable_size(name).unwrap();
            let v = match obs {
                Observation::Hard(k) => Distribution::delta(size, *k).unwrap().into_values(),
                Observation::Soft(d) => d.values().to_vec(),
            };
            (edge(name), v)
        })
        .collect();

    let mut marg: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut x = vec![0usize; sizes.len()];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for (c, p) in &sources {
            w *= p[x[*c]];
        }
        for (a, b, theta) in &blocks {
            w *= theta[(x[*a], x[*b])];
        }
        for (c, v) in &evidence {
            w *= v[x[*c]];
        }
        if w != 0.0 {
            total += w;
            for (c, m) in marg.iter_mut().enumerate() {
                m[x[c]] += w;
            }
        }
        // mixed-radix increment
        let mut i = 0;
        loop {
            if i == x.len() {
                return finish(g, &class_of, marg, total);
            }
            x[i] += 1;
            if x[i] < sizes[i] {
                break;
            }
            x[i] = 0;
            i += 1;
        }
    }
}

fn finish(g: &GraphSpec, class_of: &[usize], marg: Vec<Vec<f64>>, total: f64) -> Option<BTreeMap<String, Vec<f64>>> {
    if !(total > 0.0) {
        return None;
    }
    Some(
        g.variables
            .iter()
            .enumerate()
            .map(|(e, v)| (v.name.clone(), marg[class_of[e]].iter().map(|m| m / total).collect()))
            .collect(),
    )
}

pub fn random_distribution<R: Rng>(rng: &mut R, size: usize) -> Distribution {
    let v: Vec<f64> = (0..size).map(|_| rng.gen_range(0.05..1.0)).collect();
    normalize(&v).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(random_distribution(rng, cols).values());
    }
    m
}

/// Random Bayesian forest over at most `max_vars` variables, converted to
/// normal form. Variables with several children get a diverter; some
/// internal variables are split to expose an extra terminal tap.
pub fn random_tree<R: Rng>(rng: &mut R, max_vars: usize, max_size: usize) -> GraphSpec {
    let k = rng.gen_range(1..=max_vars);
    let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=max_size)).collect();
    let parents: Vec<Option<usize>> = (0..k)
        .map(|i| if i == 0 || rng.gen_bool(0.2) { None } else { Some(rng.gen_range(0..i)) })
        .collect();
    let children: Vec<Vec<usize>> = (0..k)
        .map(|i| (0..k).filter(|&c| parents[c] == Some(i)).collect())
        .collect();

    let mut g = GraphSpec::new();
    // the edge each child block reads from
    let mut feed: BTreeMap<usize, String> = BTreeMap::new();
    for i in 0..k {
        let name = format!("V{i}");
        g.add_variable(&name, sizes[i]);
        match children[i].len() {
            0 => {}
            1 => {
                feed.insert(children[i][0], name.clone());
            }
            _ => {
                let taps: Vec<String> = children[i].iter().map(|c| format!("V{i}_{c}")).collect();
                for t in &taps {
                    g.add_variable(t, sizes[i]);
                }
                for (c, t) in children[i].iter().zip(&taps) {
                    feed.insert(*c, t.clone());
                }
                let refs: Vec<&str> = taps.iter().map(String::as_str).collect();
                g.add_diverter(&name, &refs);
            }
        }
    }
    for i in 0..k {
        let name = format!("V{i}");
        match parents[i] {
            None => {
                g.add_source(
                    &name,
                    SourceBlock {
                        name: format!("pi_{i}"),
                        prior: random_distribution(rng, sizes[i]),
                        trainable: true,
                    },
                );
            }
            Some(p) => {
                let theta = random_matrix(rng, sizes[p], sizes[i]);
                g.add_block(&feed[&i], &name, SisoBlock::new(format!("P_{i}"), theta, true));
            }
        }
    }
    // expose a few internal variables
    for i in 0..k {
        if !children[i].is_empty() && rng.gen_bool(0.3) {
            g = g.split_variable(&format!("V{i}")).unwrap().0;
        }
    }
    assert_eq!(g.validate(), vec![], "generator produced an invalid graph");
    g
}

/// Leaf or tap variables that may carry evidence.
pub fn evidence_sites(g: &GraphSpec) -> Vec<String> {
    let (wiring, _) = g.wiring();
    g.variables
        .iter()
        .zip(&wiring)
        .filter(|(_, w)| w.degree() == 1 && !matches!(w.consumer, Some(NodeRef::Block(_))))
        .map(|(v, _)| v.name.clone())
        .collect()
}

/// Random mix of absent, hard and soft observations at the terminals.
pub fn random_evidence<R: Rng>(rng: &mut R, g: &GraphSpec) -> Evidence {
    let mut ev = Evidence::new();
    for t in evidence_sites(g) {
        let size = g.variable_size(&t).unwrap();
        match rng.gen_range(0..3) {
            0 => {}
            1 => ev = ev.hard(&t, rng.gen_range(0..size)),
            _ => ev = ev.soft(&t, random_distribution(rng, size)),
        }
    }
    ev
}

/// Normalized co-occurrence counts of delta pairs, rows without counts
/// reported as `None`.
pub fn count_table(pairs: &[(usize, usize)], rows: usize, cols: usize) -> Vec<Option<Vec<f64>>> {
    let mut c = vec![vec![0.0; cols]; rows];
    for &(l, m) in pairs {
        c[l][m] += 1.0;
    }
    c.into_iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            (s > 0.0).then(|| row.iter().map(|x| x / s).collect())
        })
        .collect()
}
