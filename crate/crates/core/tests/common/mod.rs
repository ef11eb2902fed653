//! Random DAG taxonomies with an exhaustive ancestor oracle.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sugartc::taxonomy::{Taxonomy, TaxonomyCounts};

pub struct RandomDag {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub own: Vec<f64>,
}

pub fn random_dag(rng: &mut ChaCha8Rng) -> RandomDag {
    let n = rng.random_range(3..12);
    let mut edges = Vec::new();
    // Parents always have a smaller index, so the graph is acyclic.
    for child in 1..n {
        for parent in 0..child {
            if rng.random_bool(0.3) {
                edges.push((child, parent));
            }
        }
    }
    let own = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
    RandomDag { n, edges, own }
}

/// Ancestors including self, by walking parent edges (the root is implicit).
pub fn ancestors(dag: &RandomDag, node: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if seen.insert(x) {
            stack.extend(dag.edges.iter().filter(|e| e.0 == x).map(|e| e.1));
        }
    }
    seen
}

pub fn build(dag: &RandomDag) -> (Taxonomy, Vec<f64>, f64) {
    let total: f64 = dag.own.iter().sum();
    // Subsumption count: own counts of every descendant, each once.
    let node_counts: Vec<f64> = (0..dag.n)
        .map(|a| (0..dag.n).filter(|&d| ancestors(dag, d).contains(&a)).map(|d| dag.own[d]).sum())
        .collect();
    let names = (0..dag.n).map(|i| format!("t{i}")).collect();
    let counts = TaxonomyCounts {
        tag_counts: dag.own.clone(),
        pair_counts: HashMap::new(),
        node_counts: node_counts.clone(),
        total,
    };
    (Taxonomy::from_parts(names, dag.n, &dag.edges, counts).unwrap(), node_counts, total)
}

pub fn ic(count: f64, total: f64) -> f64 {
    if count <= 0.0 || total <= 0.0 {
        f64::NEG_INFINITY
    } else {
        -(count / total).min(1.0).ln()
    }
}

/// Common ancestor with the largest information content, ties by smaller
/// index; the root (IC 0) when nothing beats it.
pub fn lcs_oracle(dag: &RandomDag, counts: &[f64], total: f64, root: usize, a: usize, b: usize) -> (usize, f64) {
    let mut best = (root, 0.0);
    for &c in ancestors(dag, a).intersection(&ancestors(dag, b)) {
        let v = ic(counts[c], total);
        if v > best.1 || (v == best.1 && c < best.0) {
            best = (c, v);
        }
    }
    best
}
