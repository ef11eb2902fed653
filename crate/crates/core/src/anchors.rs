//! Anchor-unit selection: spectral co-clustering of the image-user matrix and
//! picking the observed (image, user) units closest to each co-cluster center.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Vocabulary;
use crate::error::{Error, Result};
use crate::matrix::{MatrixOperand, SparseMatrix};
use crate::tensor::SparseTensor3;

pub const KMEANS_MAX_ITERS: usize = 100;

/// Image-user matrix: entry `(i, k)` counts the tags linking image `i` and user `k`.
pub fn image_user_matrix(d: &SparseTensor3) -> Result<SparseMatrix> {
    if d.nnz() == 0 {
        return Err(Error::InvalidInput("observed tensor is empty".into()));
    }
    let (_, n_images, n_users) = d.dims();
    SparseMatrix::from_triplets(n_images, n_users, d.entries().iter().map(|&(_, i, k, v)| (i, k, v)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoClustering {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub row_embedding: Vec<Vec<f64>>,
    pub col_embedding: Vec<Vec<f64>>,
}

impl CoClustering {
    pub fn num_row_clusters(&self) -> usize {
        self.row_labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn num_col_clusters(&self) -> usize {
        self.col_labels.iter().max().map_or(0, |m| m + 1)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Relabel so cluster ids are dense and numbered in order of first occurrence.
fn relabel_dense(labels: &mut [usize]) {
    let mut map = BTreeMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
}

/// Lloyd's k-means with k-means++ seeding. Labels are dense in first-occurrence
/// order, so fewer than `k` clusters can come back when points coincide.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                continue;
            }
            // Empty cluster: move it onto the point farthest from its center.
            let far = (0..n)
                .map(|i| (i, sq_dist(&points[i], &centers[labels[i]])))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if far.1 > 0.0 {
                centers[c] = points[far.0].clone();
                labels[far.0] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    relabel_dense(&mut labels);
    labels
}

/// Spectral bipartite co-clustering of a nonnegative matrix.
///
/// Rows and columns are embedded with the scaled leading singular vectors of
/// `D1^-1/2 M D2^-1/2`, then rows and columns are clustered with k-means in that
/// shared space. Rows or columns with no mass sit outside the spectral problem
/// and join the nearest cluster afterwards.
pub fn cocluster(m: &SparseMatrix, c_i: usize, c_u: usize, seed: u64) -> Result<CoClustering> {
    let (rows, cols) = (m.rows(), m.cols());
    if c_i == 0 || c_u == 0 {
        return Err(Error::param("clusters", "cluster counts must be at least 1"));
    }
    if c_i > rows {
        return Err(Error::param("c_i", format!("{c_i} image clusters for {rows} images")));
    }
    if c_u > cols {
        return Err(Error::param("c_u", format!("{c_u} user clusters for {cols} users")));
    }
    let d1 = m.row_sums();
    let d2 = m.col_sums();
    let live_rows: Vec<usize> = (0..rows).filter(|&r| d1[r] > 0.0).collect();
    let live_cols: Vec<usize> = (0..cols).filter(|&c| d2[c] > 0.0).collect();
    if live_rows.is_empty() {
        return Err(Error::InvalidInput("image-user matrix is all zero".into()));
    }
    if live_rows.len() < rows || live_cols.len() < cols {
        warn!(
            "{} empty rows and {} empty columns assigned to the nearest cluster",
            rows - live_rows.len(),
            cols - live_cols.len()
        );
    }
    let mut row_pos = vec![usize::MAX; rows];
    for (p, &r) in live_rows.iter().enumerate() {
        row_pos[r] = p;
    }
    let mut col_pos = vec![usize::MAX; cols];
    for (p, &c) in live_cols.iter().enumerate() {
        col_pos[c] = p;
    }
    let mut an = DMatrix::<f64>::zeros(live_rows.len(), live_cols.len());
    for (r, c, v) in m.triplets() {
        an[(row_pos[r], col_pos[c])] = v / (d1[r] * d2[c]).sqrt();
    }

    let k = c_i.max(c_u);
    let dim = (ceil_log2(k) + 1).min(live_rows.len()).min(live_cols.len());
    let svd = an.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let mut row_embedding = vec![vec![0.0; dim]; rows];
    let mut col_embedding = vec![vec![0.0; dim]; cols];
    for (e, &s) in order.iter().take(dim).enumerate() {
        // Fix the sign so the largest-magnitude coordinate is positive.
        let mut pivot = 0.0f64;
        for p in 0..live_rows.len() {
            if u[(p, s)].abs() > pivot.abs() {
                pivot = u[(p, s)];
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (p, &r) in live_rows.iter().enumerate() {
            row_embedding[r][e] = sign * u[(p, s)] / d1[r].sqrt();
        }
        for (p, &c) in live_cols.iter().enumerate() {
            col_embedding[c][e] = sign * vt[(s, p)] / d2[c].sqrt();
        }
    }

    let row_labels = cluster_with_fallback(&row_embedding, &live_rows, c_i, seed);
    let col_labels = cluster_with_fallback(&col_embedding, &live_cols, c_u, seed.wrapping_add(1));
    Ok(CoClustering {
        row_labels,
        col_labels,
        row_embedding,
        col_embedding,
    })
}

fn ceil_log2(k: usize) -> usize {
    if k <= 1 {
        0
    } else {
        (usize::BITS - (k - 1).leading_zeros()) as usize
    }
}

fn cluster_with_fallback(embedding: &[Vec<f64>], live: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let points: Vec<Vec<f64>> = live.iter().map(|&r| embedding[r].clone()).collect();
    let live_labels = kmeans(&points, k, seed);
    let n_clusters = live_labels.iter().max().map_or(0, |m| m + 1);
    let dim = embedding.first().map_or(0, Vec::len);
    let mut centers = vec![vec![0.0; dim]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (p, &l) in points.iter().zip(&live_labels) {
        counts[l] += 1;
        for (s, x) in centers[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (c, n) in centers.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|x| *x /= *n as f64);
    }
    let mut labels: Vec<usize> = embedding.iter().map(|e| nearest(e, &centers).0).collect();
    for (&r, &l) in live.iter().zip(&live_labels) {
        labels[r] = l;
    }
    labels
}

/// Selected anchor units with their deduplicated image and user sides.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    /// `(image, user)` pairs in selection order.
    pub units: Vec<(usize, usize)>,
    pub unit_cocluster: Vec<usize>,
    pub anchor_images: Vec<usize>,
    pub anchor_users: Vec<usize>,
    /// Position of each unit's image in `anchor_images` and user in `anchor_users`.
    pub unit_slots: Vec<(usize, usize)>,
}

impl AnchorSet {
    pub fn from_units(units: Vec<(usize, usize)>, unit_cocluster: Vec<usize>) -> Self {
        let mut anchor_images = Vec::new();
        let mut anchor_users = Vec::new();
        let mut image_slot = BTreeMap::new();
        let mut user_slot = BTreeMap::new();
        let unit_slots = units
            .iter()
            .map(|&(i, u)| {
                let a = *image_slot.entry(i).or_insert_with(|| {
                    anchor_images.push(i);
                    anchor_images.len() - 1
                });
                let b = *user_slot.entry(u).or_insert_with(|| {
                    anchor_users.push(u);
                    anchor_users.len() - 1
                });
                (a, b)
            })
            .collect();
        Self {
            units,
            unit_cocluster,
            anchor_images,
            anchor_users,
            unit_slots,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Anchor-user slot paired with each anchor image slot (first unit wins).
    pub fn image_user_slot(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.anchor_images.len()];
        for &(a, b) in &self.unit_slots {
            if out[a] == usize::MAX {
                out[a] = b;
            }
        }
        out
    }

    pub fn partition(&self, n_images: usize, n_users: usize) -> Partition {
        Partition::new(n_images, n_users, &self.anchor_images, &self.anchor_users)
    }
}

/// Position of an entity inside the anchor or the non-anchor index range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Anchor(usize),
    NonAnchor(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub anchor_images: Vec<usize>,
    pub non_anchor_images: Vec<usize>,
    pub anchor_users: Vec<usize>,
    pub non_anchor_users: Vec<usize>,
    pub image_slot: Vec<Slot>,
    pub user_slot: Vec<Slot>,
}

fn split(n: usize, anchors: &[usize]) -> (Vec<usize>, Vec<Slot>) {
    let mut slot = vec![Slot::NonAnchor(usize::MAX); n];
    for (a, &x) in anchors.iter().enumerate() {
        slot[x] = Slot::Anchor(a);
    }
    let mut rest = Vec::new();
    for (x, s) in slot.iter_mut().enumerate() {
        if let Slot::NonAnchor(p) = s {
            *p = rest.len();
            rest.push(x);
        }
    }
    (rest, slot)
}

impl Partition {
    pub fn new(n_images: usize, n_users: usize, anchor_images: &[usize], anchor_users: &[usize]) -> Self {
        let (non_anchor_images, image_slot) = split(n_images, anchor_images);
        let (non_anchor_users, user_slot) = split(n_users, anchor_users);
        Self {
            anchor_images: anchor_images.to_vec(),
            non_anchor_images,
            anchor_users: anchor_users.to_vec(),
            non_anchor_users,
            image_slot,
            user_slot,
        }
    }
}

/// For every co-cluster with observed units, the `m_c` units whose stacked
/// embedding lies closest to the co-cluster's mean unit embedding.
pub fn select_anchor_units(cc: &CoClustering, m: &SparseMatrix, m_c: usize) -> Result<AnchorSet> {
    if m_c < 1 {
        return Err(Error::param("m_c", "must be at least 1"));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for (i, k, _) in m.triplets() {
        groups.entry((cc.row_labels[i], cc.col_labels[k])).or_default().push((i, k));
    }
    let stacked = |i: usize, k: usize| -> Vec<f64> {
        cc.row_embedding[i].iter().chain(&cc.col_embedding[k]).copied().collect()
    };
    let mut units = Vec::new();
    let mut unit_cocluster = Vec::new();
    for (cid, members) in groups.values().enumerate() {
        let embedded: Vec<Vec<f64>> = members.iter().map(|&(i, k)| stacked(i, k)).collect();
        let dim = embedded[0].len();
        let mut centroid = vec![0.0; dim];
        for e in &embedded {
            for (c, x) in centroid.iter_mut().zip(e) {
                *c += x / members.len() as f64;
            }
        }
        let mut ranked: Vec<(f64, (usize, usize))> = embedded
            .iter()
            .zip(members)
            .map(|(e, &unit)| (sq_dist(e, &centroid), unit))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, unit) in ranked.iter().take(m_c) {
            units.push(unit);
            unit_cocluster.push(cid);
        }
    }
    Ok(AnchorSet::from_units(units, unit_cocluster))
}

/// Debugging fallback: `count` observed units drawn uniformly at random.
pub fn random_anchor_units(m: &SparseMatrix, count: usize, seed: u64) -> Result<AnchorSet> {
    if count < 1 {
        return Err(Error::param("anchor count", "must be at least 1"));
    }
    let all: Vec<(usize, usize)> = m.triplets().map(|(i, k, _)| (i, k)).collect();
    if all.is_empty() {
        return Err(Error::InvalidInput("image-user matrix is all zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, all.len(), count.min(all.len())).into_vec();
    picked.sort_unstable();
    let units = picked.into_iter().map(|p| all[p]).collect::<Vec<_>>();
    let n = units.len();
    Ok(AnchorSet::from_units(units, vec![0; n]))
}

/// Observed tensor split into the non-anchor tensor (non-anchor images and
/// users) and the anchor tensor (anchor images and users).
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTensors {
    pub non_anchor: SparseTensor3,
    pub anchor: SparseTensor3,
    /// Entries linking an anchor side to a non-anchor side; in neither tensor.
    pub dropped: usize,
}

pub fn split_anchor_tensors(d: &SparseTensor3, part: &Partition) -> Result<AnchorTensors> {
    if part.anchor_images.is_empty() || part.anchor_users.is_empty() {
        return Err(Error::InvalidInput("no anchor units selected".into()));
    }
    if part.image_slot.len() != d.dims().1 || part.user_slot.len() != d.dims().2 {
        return Err(Error::ShapeMismatch {
            context: "anchor partition",
            expected: (0, d.dims().1, d.dims().2),
            found: (0, part.image_slot.len(), part.user_slot.len()),
        });
    }
    let n_tags = d.dims().0;
    let mut non_anchor = Vec::new();
    let mut anchor = Vec::new();
    let mut dropped = 0;
    for &(t, i, k, v) in d.entries() {
        match (part.image_slot[i], part.user_slot[k]) {
            (Slot::Anchor(a), Slot::Anchor(b)) => anchor.push((t, a, b, v)),
            (Slot::NonAnchor(a), Slot::NonAnchor(b)) => non_anchor.push((t, a, b, v)),
            _ => dropped += 1,
        }
    }
    Ok(AnchorTensors {
        non_anchor: SparseTensor3::from_entries(
            (n_tags, part.non_anchor_images.len(), part.non_anchor_users.len()),
            non_anchor,
        )?,
        anchor: SparseTensor3::from_entries(
            (n_tags, part.anchor_images.len(), part.anchor_users.len()),
            anchor,
        )?,
        dropped,
    })
}

/// `image_id<TAB>user_id<TAB>cocluster_id` per unit.
pub fn format_anchors(anchors: &AnchorSet, vocab: &Vocabulary) -> String {
    let mut s = String::new();
    for (&(i, k), c) in anchors.units.iter().zip(&anchors.unit_cocluster) {
        let _ = writeln!(s, "{}\t{}\t{}", vocab.images.name(i), vocab.users.name(k), c);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_matrix() -> SparseMatrix {
        // Two blocks: rows 0..3 x cols 0..2 and rows 3..6 x cols 2..4.
        let mut t = Vec::new();
        for r in 0..3 {
            for c in 0..2 {
                t.push((r, c, 1.0 + (r + c) as f64));
            }
        }
        for r in 3..6 {
            for c in 2..4 {
                t.push((r, c, 2.0 + (r * c % 3) as f64));
            }
        }
        SparseMatrix::from_triplets(6, 4, t).unwrap()
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.len() == b.len()
            && (0..a.len()).all(|x| (0..a.len()).all(|y| (a[x] == a[y]) == (b[x] == b[y])))
    }

    #[test]
    fn matrix_accumulates_tags() {
        let d = SparseTensor3::from_entries(
            (4, 2, 2),
            vec![(0, 0, 1, 1.0), (1, 0, 1, 1.0), (3, 0, 1, 1.0), (2, 1, 0, 1.0)],
        )
        .unwrap();
        let m = image_user_matrix(&d).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 1.0);
        assert_eq!(m.sum(), 4.0);
        assert!(image_user_matrix(&SparseTensor3::empty((1, 1, 1))).is_err());
    }

    #[test]
    fn block_diagonal_recovered() {
        let m = block_matrix();
        let cc = cocluster(&m, 2, 2, 3).unwrap();
        assert!(same_partition(&cc.row_labels, &[0, 0, 0, 1, 1, 1]));
        assert!(same_partition(&cc.col_labels, &[0, 0, 1, 1]));
        let again = cocluster(&m, 2, 2, 3).unwrap();
        assert_eq!(cc, again);
    }

    #[test]
    fn identity_saturates() {
        let m = SparseMatrix::identity(5);
        let cc = cocluster(&m, 5, 5, 1).unwrap();
        assert_eq!(cc.row_labels, vec![0, 1, 2, 3, 4]);
        assert_eq!(cc.col_labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn one_unit_per_block() {
        let m = block_matrix();
        let cc = cocluster(&m, 2, 2, 3).unwrap();
        let a = select_anchor_units(&cc, &m, 1).unwrap();
        assert_eq!(a.len(), 2);
        let blocks: Vec<bool> = a.units.iter().map(|&(i, _)| i < 3).collect();
        assert!(blocks.contains(&true) && blocks.contains(&false));
        for &(i, k) in &a.units {
            assert!(m.get(i, k) > 0.0);
        }
        let all = select_anchor_units(&cc, &m, 100).unwrap();
        assert_eq!(all.len(), m.nnz());
        assert!(select_anchor_units(&cc, &m, 0).is_err());
    }

    #[test]
    fn kmeans_handles_duplicates_and_saturation() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0]];
        let labels = kmeans(&pts, 3, 9);
        assert_eq!(labels[0], labels[1]);
        assert_ne!(labels[0], labels[3]);
        assert_eq!(kmeans(&pts, 4, 9), vec![0, 1, 2, 3]);
    }

    #[test]
    fn partition_and_split() {
        let a = AnchorSet::from_units(vec![(2, 1), (0, 1)], vec![0, 0]);
        assert_eq!(a.anchor_images, vec![2, 0]);
        assert_eq!(a.anchor_users, vec![1]);
        assert_eq!(a.unit_slots, vec![(0, 0), (1, 0)]);
        let p = a.partition(4, 3);
        assert_eq!(p.non_anchor_images, vec![1, 3]);
        assert_eq!(p.non_anchor_users, vec![0, 2]);
        assert_eq!(p.image_slot[0], Slot::Anchor(1));
        let d = SparseTensor3::from_entries(
            (2, 4, 3),
            vec![(0, 2, 1, 1.0), (1, 3, 2, 1.0), (0, 1, 1, 1.0)],
        )
        .unwrap();
        let s = split_anchor_tensors(&d, &p).unwrap();
        assert_eq!(s.anchor.entries(), &[(0, 0, 0, 1.0)]);
        assert_eq!(s.non_anchor.entries(), &[(1, 1, 1, 1.0)]);
        assert_eq!(s.dropped, 1);
    }
}
