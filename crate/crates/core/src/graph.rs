//! The anchor-unit graph: inter-adjacency between non-anchor and anchor images
//! (`I_m`) and users (`U_m`), intra-adjacency among non-anchors induced through
//! shared anchors (`W_I`, `W_U`), and tag-tag similarity `T`.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::anchors::Partition;
use crate::dataset::{read_text, Dataset, FeatureStore, GroupMembership, IdIndex};
use crate::error::{Error, Result};
use crate::matrix::{MatrixOperand, SparseMatrix};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_SIGMA: f64 = 2.5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_A1: f64 = 0.9;
pub const DEFAULT_A2: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct GraphConfig {
    pub sigma: f64,
    /// `I_m` entries below this are dropped.
    pub threshold: f64,
    pub a1: f64,
    pub a2: f64,
    /// L2-normalize feature vectors before the RBF kernel.
    pub normalize_features: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            threshold: DEFAULT_THRESHOLD,
            a1: DEFAULT_A1,
            a2: DEFAULT_A2,
            normalize_features: true,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::param("sigma", "must be positive"));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::param("threshold", "must be nonnegative"));
        }
        check_tag_weights(self.a1, self.a2)
    }
}

fn check_tag_weights(a1: f64, a2: f64) -> Result<()> {
    if !(a1 >= 0.0 && a2 >= 0.0) || (a1 + a2 - 1.0).abs() > 1e-9 {
        return Err(Error::param("a1/a2", format!("need a1, a2 >= 0 and a1 + a2 = 1, got {a1} and {a2}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencySet {
    /// Non-anchor images x anchor images.
    pub i_m: SparseMatrix,
    /// Non-anchor users x anchor users.
    pub u_m: SparseMatrix,
    pub w_i: SparseMatrix,
    pub w_u: SparseMatrix,
    pub t: SparseMatrix,
    /// Column sums of `I_m`.
    pub lambda_i: Vec<f64>,
    /// Column sums of `U_m`.
    pub lambda_u: Vec<f64>,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// RBF affinity `exp(-|d_i - d_j|^2 / sigma^2)` between each non-anchor and
/// each anchor image, keeping entries at or above `threshold`.
pub fn image_inter_adjacency(
    feat: &FeatureStore,
    ids: &IdIndex,
    non_anchors: &[usize],
    anchors: &[usize],
    cfg: &GraphConfig,
) -> Result<SparseMatrix> {
    let lookup = |i: usize| -> Result<Vec<f64>> {
        let v = feat.get(i).ok_or_else(|| Error::Feature {
            image: if i < ids.len() { ids.name(i).to_owned() } else { format!("#{i}") },
            message: "missing".into(),
        })?;
        Ok(if cfg.normalize_features { normalized(v) } else { v.to_vec() })
    };
    let anchor_vecs = anchors.iter().map(|&a| lookup(a)).collect::<Result<Vec<_>>>()?;
    let rows = non_anchors.iter().map(|&i| lookup(i)).collect::<Result<Vec<_>>>()?;
    let s2 = cfg.sigma * cfg.sigma;
    let per_row: Vec<Vec<(usize, f64)>> = rows
        .par_iter()
        .map(|x| {
            anchor_vecs
                .iter()
                .enumerate()
                .filter_map(|(a, y)| {
                    let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                    let v = (-d2 / s2).exp();
                    (v >= cfg.threshold && v > 0.0).then_some((a, v))
                })
                .collect()
        })
        .collect();
    SparseMatrix::from_triplets(
        non_anchors.len(),
        anchors.len(),
        per_row.into_iter().enumerate().flat_map(|(r, row)| row.into_iter().map(move |(c, v)| (r, c, v))),
    )
}

/// Jaccard overlap of group sets; absent when the users share no group.
pub fn user_inter_adjacency(groups: &GroupMembership, non_anchors: &[usize], anchors: &[usize]) -> Result<SparseMatrix> {
    let mut triplets = Vec::new();
    for (r, &u) in non_anchors.iter().enumerate() {
        let gu = groups.of(u);
        for (c, &a) in anchors.iter().enumerate() {
            let ga = groups.of(a);
            let shared = gu.intersection(ga).count();
            if shared > 0 {
                let union = gu.len() + ga.len() - shared;
                triplets.push((r, c, shared as f64 / union as f64));
            }
        }
    }
    SparseMatrix::from_triplets(non_anchors.len(), anchors.len(), triplets)
}

/// `W = M Λ^-1 Mᵀ` with `Λ` the column sums of `M`, symmetrized by averaging.
/// Columns that sum to zero are left out of the product. Returns `(W, Λ)`.
pub fn intra_adjacency(m: &SparseMatrix, what: &str) -> Result<(SparseMatrix, Vec<f64>)> {
    let (rows, cols) = m.shape();
    let lambda = m.col_sums();
    if rows == 0 || cols == 0 {
        return Ok((SparseMatrix::empty(rows, rows), lambda));
    }
    if m.nnz() == 0 {
        return Err(Error::InvalidInput(format!(
            "{what} inter-adjacency is all zero: no non-anchor is connected to any anchor"
        )));
    }
    let empty = lambda.iter().filter(|&&l| l <= 0.0).count();
    if empty > 0 {
        warn!("{what} inter-adjacency: {empty} anchor columns with zero sum excluded");
    }
    let mt = m.transpose();
    let per_row: Vec<Vec<(usize, f64)>> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; rows];
            let mut touched = Vec::new();
            for (a, v) in m.row_entries(i) {
                if lambda[a] <= 0.0 {
                    continue;
                }
                let w = v / lambda[a];
                for (j, u) in mt.row_entries(a) {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += w * u;
                }
            }
            touched.sort_unstable();
            touched.into_iter().map(|j| (j, acc[j])).collect()
        })
        .collect();
    let raw = SparseMatrix::from_triplets(
        rows,
        rows,
        per_row.iter().enumerate().flat_map(|(i, row)| row.iter().map(move |&(j, v)| (i, j, v))),
    )?;
    let rt = raw.transpose();
    let sym = SparseMatrix::from_triplets(
        rows,
        rows,
        raw.triplets().chain(rt.triplets()).map(|(i, j, v)| (i, j, 0.5 * v)),
    )?;
    Ok((sym, lambda))
}

/// Tag similarity: `a1 * Jaccard(N) + a2 * Lin`, with Lin similarity
/// `2 C(L) / (C(t_i) + C(t_j))` over the least common subsumer `L`.
pub fn tag_intra_adjacency(tax: &Taxonomy, a1: f64, a2: f64) -> Result<SparseMatrix> {
    check_tag_weights(a1, a2)?;
    let n = tax.num_tags();
    let ic: Vec<Option<f64>> = (0..n).map(|t| tax.information_content(t)).collect();
    let undefined = ic.iter().filter(|c| c.is_none()).count();
    if undefined > 0 && a2 > 0.0 {
        warn!("{undefined} tags have zero count; their taxonomy similarity is taken as 0");
    }
    let upper: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .filter_map(|j| {
                    let v = a1 * jaccard_count(tax, i, j) + a2 * lin(tax, &ic, i, j);
                    (v > 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let mut triplets = Vec::new();
    for (i, row) in upper.iter().enumerate() {
        for &(j, v) in row {
            triplets.push((i, j, v));
            if i != j {
                triplets.push((j, i, v));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

fn jaccard_count(tax: &Taxonomy, i: usize, j: usize) -> f64 {
    let nij = tax.co_occurrence(i, j);
    let den = tax.occurrence(i) + tax.occurrence(j) - nij;
    if den > 0.0 {
        nij / den
    } else {
        0.0
    }
}

/// Lin similarity of two tags; 0 when either has no information content
/// defined, and for the 0/0 case of two distinct tags that cover everything.
pub fn lin_similarity(tax: &Taxonomy, i: usize, j: usize) -> f64 {
    let ic = [tax.information_content(i), tax.information_content(j)];
    match ic {
        [Some(ci), Some(cj)] => lin_from(tax, ci, cj, i, j),
        _ => 0.0,
    }
}

fn lin(tax: &Taxonomy, ic: &[Option<f64>], i: usize, j: usize) -> f64 {
    match (ic[i], ic[j]) {
        (Some(ci), Some(cj)) => lin_from(tax, ci, cj, i, j),
        _ => 0.0,
    }
}

fn lin_from(tax: &Taxonomy, ci: f64, cj: f64, i: usize, j: usize) -> f64 {
    let den = ci + cj;
    if den <= 0.0 {
        return if i == j { 1.0 } else { 0.0 };
    }
    let l = tax.least_common_subsumer(i, j);
    let cl = tax.information_content(l).unwrap_or(0.0);
    (2.0 * cl / den).min(1.0)
}

/// Every matrix of the anchor-unit graph for one anchor partition.
pub fn build_adjacency(ds: &Dataset, part: &Partition, cfg: &GraphConfig) -> Result<AdjacencySet> {
    cfg.validate()?;
    let i_m = image_inter_adjacency(
        &ds.features,
        &ds.vocab.images,
        &part.non_anchor_images,
        &part.anchor_images,
        cfg,
    )?;
    let u_m = user_inter_adjacency(&ds.groups, &part.non_anchor_users, &part.anchor_users)?;
    let (w_i, lambda_i) = intra_adjacency(&i_m, "image")?;
    let (w_u, lambda_u) = if u_m.nnz() == 0 && u_m.rows() > 0 {
        warn!("no non-anchor user shares a group with an anchor user; user graph is empty");
        (SparseMatrix::empty(u_m.rows(), u_m.rows()), u_m.col_sums())
    } else {
        intra_adjacency(&u_m, "user")?
    };
    let t = tag_intra_adjacency(&ds.taxonomy, cfg.a1, cfg.a2)?;
    Ok(AdjacencySet {
        i_m,
        u_m,
        w_i,
        w_u,
        t,
        lambda_i,
        lambda_u,
    })
}

/// Text sparse format: `rows cols nnz` header, then one `i j value` line per entry.
pub fn format_sparse(m: &SparseMatrix) -> String {
    let (rows, cols) = m.shape();
    let mut s = format!("{rows} {cols} {}\n", m.nnz());
    for (i, j, v) in m.triplets() {
        let _ = writeln!(s, "{i} {j} {v}");
    }
    s
}

pub fn parse_sparse(path: &Path, text: &str) -> Result<SparseMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let h: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, 1, format!("bad header: {e}")))?;
    let [rows, cols, nnz] = h[..] else {
        return Err(Error::parse(path, 1, "header must be `rows cols nnz`"));
    };
    let mut triplets = Vec::with_capacity(nnz);
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: String| Error::parse(path, n + 1, m);
        if f.len() != 3 {
            return Err(bad(format!("expected `i j value`, found {} fields", f.len())));
        }
        let i = f[0].parse().map_err(|e| bad(format!("{e}")))?;
        let j = f[1].parse().map_err(|e| bad(format!("{e}")))?;
        let v = f[2].parse().map_err(|e| bad(format!("{e}")))?;
        triplets.push((i, j, v));
    }
    if triplets.len() != nnz {
        return Err(Error::parse(path, 1, format!("header says {nnz} entries, found {}", triplets.len())));
    }
    SparseMatrix::from_triplets(rows, cols, triplets)
}

pub fn read_sparse(path: &Path) -> Result<SparseMatrix> {
    parse_sparse(path, &read_text(path)?)
}

pub const MATRIX_FILES: [&str; 5] = ["I_m.txt", "U_m.txt", "W_I.txt", "W_U.txt", "T.txt"];

impl AdjacencySet {
    pub fn matrices(&self) -> [(&'static str, &SparseMatrix); 5] {
        [
            (MATRIX_FILES[0], &self.i_m),
            (MATRIX_FILES[1], &self.u_m),
            (MATRIX_FILES[2], &self.w_i),
            (MATRIX_FILES[3], &self.w_u),
            (MATRIX_FILES[4], &self.t),
        ]
    }

    pub fn write_matrices(&self, dir: &Path) -> Result<()> {
        for (name, m) in self.matrices() {
            let path = dir.join(name);
            std::fs::write(&path, format_sparse(m)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
