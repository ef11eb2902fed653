//! Anchor-aware tag assignment.
//!
//! A non-anchor image is scored from the `s` anchor images it is most similar
//! to, mixing their refined tag-image associations with the tag-user
//! associations of the paired anchor users:
//!
//! ```text
//! y_i = [γ · Σ_a I_m[i,a] A3[:,a] + (1 − γ) · Σ_b U_m[k,b] A2[:,b]] / s
//! ```
//!
//! Anchor images take their own column of `A3`.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::anchors::{AnchorSet, Partition, Slot};
use crate::dataset::{read_text, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::AdjacencySet;
use crate::matrix::{DenseMatrix, MatrixOperand, SparseMatrix};
use crate::tensor::{accumulate_mode, DenseTensor3, Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct AssignConfig {
    pub s: usize,
    pub gamma: f64,
    pub k: usize,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            s: 10,
            gamma: 0.8,
            k: 10,
        }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 1 {
            return Err(Error::param("s", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", format!("{} is outside [0, 1]", self.gamma)));
        }
        if self.k < 1 {
            return Err(Error::param("k", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagRanking {
    pub image: usize,
    /// `(tag, score)` with non-increasing scores.
    pub tags: Vec<(usize, f64)>,
}

/// `(A3, A2)`: the tensor summed over users (tags x anchor images) and over
/// images (tags x anchor users).
pub fn association_matrices(a: &DenseTensor3) -> (DenseMatrix, DenseMatrix) {
    (accumulate_mode(a, Mode::Three), accumulate_mode(a, Mode::Two))
}

/// Affinity of the uploader towards the anchor users.
#[derive(Clone, Copy, Debug)]
pub enum UploaderAffinity<'a> {
    /// A non-anchor uploader: its row of `U_m`.
    Row(&'a SparseMatrix, usize),
    /// The uploader is itself the anchor user in this slot: affinity 1 to
    /// itself and 0 to every other anchor user.
    Anchor(usize),
    Absent,
}

impl UploaderAffinity<'_> {
    fn towards(&self, b: usize) -> Option<f64> {
        match *self {
            UploaderAffinity::Row(m, r) => Some(m.get(r, b)),
            UploaderAffinity::Anchor(slot) => Some(if slot == b { 1.0 } else { 0.0 }),
            UploaderAffinity::Absent => None,
        }
    }
}

/// The `s` anchors with the largest affinity, ties by smaller anchor index.
pub fn nearest_anchors(affinity: &[(usize, f64)], n_anchors: usize, s: usize) -> Vec<(usize, f64)> {
    let mut dense = vec![0.0; n_anchors];
    for &(a, v) in affinity {
        dense[a] = v;
    }
    let mut order: Vec<usize> = (0..n_anchors).collect();
    order.sort_by(|&x, &y| dense[y].total_cmp(&dense[x]).then(x.cmp(&y)));
    order.into_iter().take(s).map(|a| (a, dense[a])).collect()
}

/// Score vector of one non-anchor image. `paired_user[a]` is the anchor-user
/// slot paired with anchor image slot `a`.
pub fn score_image(
    image_affinity: &[(usize, f64)],
    uploader: UploaderAffinity<'_>,
    paired_user: &[usize],
    a3: &DenseMatrix,
    a2: &DenseMatrix,
    cfg: &AssignConfig,
) -> Vec<f64> {
    let (n_tags, n_anchors) = (a3.rows(), a3.cols());
    let neighbors = nearest_anchors(image_affinity, n_anchors, cfg.s);
    let gamma = if matches!(uploader, UploaderAffinity::Absent) { 1.0 } else { cfg.gamma };
    let mut y = vec![0.0; n_tags];
    for &(a, w) in &neighbors {
        if w != 0.0 {
            for (t, yt) in y.iter_mut().enumerate() {
                *yt += gamma * w * a3.get(t, a);
            }
        }
        if gamma < 1.0 {
            let b = paired_user[a];
            let wu = uploader.towards(b).unwrap_or(0.0);
            if wu != 0.0 {
                for (t, yt) in y.iter_mut().enumerate() {
                    *yt += (1.0 - gamma) * wu * a2.get(t, b);
                }
            }
        }
    }
    let s = cfg.s as f64;
    y.iter_mut().for_each(|v| *v /= s);
    y
}

/// Top `k` tags by score, ties broken by smaller tag index.
pub fn rank_tags(y: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    order.into_iter().take(k).map(|t| (t, y[t])).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Full score vector per image, in vocabulary order.
    pub scores: Vec<Vec<f64>>,
    pub rankings: Vec<TagRanking>,
    /// Images whose scores are all zero.
    pub zero_images: usize,
    /// Non-anchor images scored without the user term.
    pub image_only: usize,
}

/// Score every image: anchor images from their own refined column, the rest
/// through their nearest anchors.
pub fn assign_all(
    uploader: &[usize],
    anchors: &AnchorSet,
    part: &Partition,
    adj: &AdjacencySet,
    a: &DenseTensor3,
    cfg: &AssignConfig,
) -> Result<Assignment> {
    cfg.validate()?;
    let (a3, a2) = association_matrices(a);
    if a3.cols() != part.anchor_images.len() || a2.cols() != part.anchor_users.len() {
        return Err(Error::ShapeMismatch {
            context: "completed tensor vs anchor set",
            expected: (a3.rows(), part.anchor_images.len(), part.anchor_users.len()),
            found: a.dims(),
        });
    }
    let paired = anchors.image_user_slot();
    let n_images = part.image_slot.len();
    let per_image: Vec<(Vec<f64>, bool)> = (0..n_images)
        .into_par_iter()
        .map(|img| match part.image_slot[img] {
            Slot::Anchor(a) => ((0..a3.rows()).map(|t| a3.get(t, a)).collect(), false),
            Slot::NonAnchor(r) => {
                let row: Vec<(usize, f64)> = adj.i_m.row_entries(r).collect();
                let up = match uploader.get(img).map(|&u| part.user_slot[u]) {
                    Some(Slot::NonAnchor(ur)) => UploaderAffinity::Row(&adj.u_m, ur),
                    Some(Slot::Anchor(b)) => UploaderAffinity::Anchor(b),
                    None => UploaderAffinity::Absent,
                };
                let image_only = matches!(up, UploaderAffinity::Absent);
                (score_image(&row, up, &paired, &a3, &a2, cfg), image_only)
            }
        })
        .collect();
    let zero_images = per_image.iter().filter(|(y, _)| y.iter().all(|&v| v == 0.0)).count();
    let image_only = per_image.iter().filter(|(_, f)| *f).count();
    if zero_images > 0 {
        warn!("{zero_images} images received all-zero tag scores");
    }
    if image_only > 0 {
        warn!("{image_only} images scored without an uploader term");
    }
    let scores: Vec<Vec<f64>> = per_image.into_iter().map(|(y, _)| y).collect();
    let rankings = scores
        .iter()
        .enumerate()
        .map(|(image, y)| TagRanking {
            image,
            tags: rank_tags(y, cfg.k),
        })
        .collect();
    Ok(Assignment {
        scores,
        rankings,
        zero_images,
        image_only,
    })
}

/// Observed tags as a ranking: score 1 each, in tag-index order, at most `k`.
pub fn observed_rankings(tags_per_image: &[std::collections::BTreeSet<usize>], k: usize) -> Vec<TagRanking> {
    tags_per_image
        .iter()
        .enumerate()
        .map(|(image, tags)| TagRanking {
            image,
            tags: tags.iter().take(k).map(|&t| (t, 1.0)).collect(),
        })
        .collect()
}

/// `x` with six significant digits, in the shorter of fixed and exponent form.
pub fn format_score(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s.to_owned()
        }
    };
    if !(-4..6).contains(&exp) {
        format!("{}e{exp}", trim(mantissa))
    } else {
        trim(&format!("{x:.*}", (5 - exp) as usize))
    }
}

/// `image_id<TAB>tag:score,...` per ranking.
pub fn format_rankings(rankings: &[TagRanking], vocab: &Vocabulary) -> String {
    let mut s = String::new();
    for r in rankings {
        s.push_str(vocab.images.name(r.image));
        s.push('\t');
        for (n, &(t, v)) in r.tags.iter().enumerate() {
            if n > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}:{}", vocab.tags.name(t), format_score(v));
        }
        s.push('\n');
    }
    s
}

/// A parsed prediction file: per image, tags in rank order with optional scores.
pub type PredictionList = Vec<(String, Vec<(String, Option<f64>)>)>;

/// Read `image<TAB>tag[:score],...` lines. Blank lines and `#` comments are skipped.
pub fn parse_rankings(path: &Path, text: &str) -> Result<PredictionList> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (image, rest) = line.split_once('\t').unwrap_or((line, ""));
        let mut tags = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.rsplit_once(':') {
                Some((tag, score)) => {
                    let v: f64 = score
                        .parse()
                        .map_err(|e| Error::parse(path, n + 1, format!("bad score `{score}`: {e}")))?;
                    tags.push((tag.to_owned(), Some(v)));
                }
                None => tags.push((item.to_owned(), None)),
            }
        }
        out.push((image.trim().to_owned(), tags));
    }
    Ok(out)
}

pub fn read_rankings(path: &Path) -> Result<PredictionList> {
    parse_rankings(path, &read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn association_matrices_sum_axes() {
        let mut a = DenseTensor3::zeros((3, 2, 2));
        a.set(2, 1, 0, 1.0);
        let (a3, a2) = association_matrices(&a);
        assert_eq!(a3.get(2, 1), 1.0);
        assert_eq!(a2.get(2, 0), 1.0);
        assert_eq!(a3.sum(), 1.0);
        assert_eq!(a2.sum(), 1.0);
    }

    #[test]
    fn single_neighbor_copies_column() {
        let a3 = DenseMatrix::from_rows(&[vec![0.2, 0.9], vec![0.7, 0.1]]);
        let a2 = DenseMatrix::from_rows(&[vec![5.0], vec![6.0]]);
        let cfg = AssignConfig { s: 1, gamma: 1.0, k: 2 };
        let y = score_image(&[(1, 1.0)], UploaderAffinity::Anchor(0), &[0, 0], &a3, &a2, &cfg);
        assert_eq!(y, vec![0.9, 0.1]);
    }

    #[test]
    fn gamma_zero_uses_users_only() {
        let a3 = DenseMatrix::from_rows(&[vec![0.2, 0.9], vec![0.7, 0.1]]);
        let a2 = DenseMatrix::from_rows(&[vec![5.0, 1.0], vec![6.0, 2.0]]);
        let cfg = AssignConfig { s: 1, gamma: 0.0, k: 2 };
        let u_m = SparseMatrix::from_triplets(1, 2, [(0, 1, 0.5)]).unwrap();
        let y = score_image(&[(0, 0.3)], UploaderAffinity::Row(&u_m, 0), &[1, 0], &a3, &a2, &cfg);
        assert_eq!(y, vec![0.5, 1.0]);
    }

    #[test]
    fn two_neighbors_by_hand() {
        // Anchors 0..3; affinities pick anchors 2 (0.8) and 0 (0.5).
        let a3 = DenseMatrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 1.0]]);
        let a2 = DenseMatrix::from_rows(&[vec![1.0, 4.0], vec![2.0, 0.5]]);
        let u_m = SparseMatrix::from_triplets(1, 2, [(0, 0, 0.25), (0, 1, 1.0)]).unwrap();
        let paired = [0, 0, 1];
        let cfg = AssignConfig { s: 2, gamma: 0.8, k: 2 };
        let y = score_image(&[(0, 0.5), (1, 0.1), (2, 0.8)], UploaderAffinity::Row(&u_m, 0), &paired, &a3, &a2, &cfg);
        let img0 = 0.8 * 2.0 + 0.5 * 1.0;
        let img1 = 0.8 * 1.0 + 0.5 * 0.0;
        let usr0 = 1.0 * 4.0 + 0.25 * 1.0;
        let usr1 = 1.0 * 0.5 + 0.25 * 2.0;
        let expect = [(0.8 * img0 + 0.2 * usr0) / 2.0, (0.8 * img1 + 0.2 * usr1) / 2.0];
        assert!((y[0] - expect[0]).abs() < 1e-15 && (y[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn absent_uploader_means_image_term_only() {
        let a3 = DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]);
        let a2 = DenseMatrix::from_rows(&[vec![9.0], vec![9.0]]);
        let cfg = AssignConfig { s: 1, gamma: 0.3, k: 2 };
        let y = score_image(&[(0, 1.0)], UploaderAffinity::Absent, &[0], &a3, &a2, &cfg);
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn ranking_ties_and_saturation() {
        assert_eq!(rank_tags(&[0.5; 5], 3), vec![(0, 0.5), (1, 0.5), (2, 0.5)]);
        assert_eq!(rank_tags(&[0.1, 0.3], 10), vec![(1, 0.3), (0, 0.1)]);
    }

    #[test]
    fn score_formatting() {
        assert_eq!(format_score(0.0), "0");
        assert_eq!(format_score(0.123456789), "0.123457");
        assert_eq!(format_score(1.0), "1");
        assert_eq!(format_score(123456.7), "123457");
        assert_eq!(format_score(1234567.0), "1.23457e6");
        assert_eq!(format_score(0.0000123456), "1.23456e-5");
        assert_eq!(format_score(0.000999999), "0.000999999");
        assert_eq!(format_score(9.999996), "10");
    }

    #[test]
    fn prediction_parsing() {
        let p = parse_rankings(Path::new("r"), "im1\ta:0.5,b:1e-3\nim2\t\n# c\nim3\tx,y\n").unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].1, vec![("a".into(), Some(0.5)), ("b".into(), Some(1e-3))]);
        assert!(p[1].1.is_empty());
        assert_eq!(p[2].1[1], ("y".into(), None));
        assert!(parse_rankings(Path::new("r"), "im\ta:zz\n").is_err());
    }
}
