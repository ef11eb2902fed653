//! Per-concept F-score and tag-based retrieval AP/MAP.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::assign::PredictionList;
use crate::dataset::read_text;
use crate::error::{Error, Result};

pub const DEFAULT_CUTOFFS: [usize; 4] = [10, 20, 50, 100];
pub const DEFAULT_QUERIES: usize = 5;

/// Relevant images per concept. Image and concept order follow the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub images: Vec<String>,
    pub concepts: Vec<String>,
    /// Per concept, the indices (into `images`) of its relevant images.
    pub relevant: Vec<BTreeSet<usize>>,
}

impl GroundTruth {
    /// From `image<TAB>tag,tag,...` lines.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut gt = GroundTruth::default();
        let mut image_index = HashMap::new();
        let mut concept_index: HashMap<String, usize> = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (image, tags) = line.split_once('\t').unwrap_or((line, ""));
            let image = image.trim();
            if image_index.insert(image.to_owned(), gt.images.len()).is_some() {
                return Err(Error::parse(path, n + 1, format!("image `{image}` listed twice")));
            }
            let i = gt.images.len();
            gt.images.push(image.to_owned());
            for tag in tags.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let c = *concept_index.entry(tag.to_owned()).or_insert_with(|| {
                    gt.concepts.push(tag.to_owned());
                    gt.relevant.push(BTreeSet::new());
                    gt.concepts.len() - 1
                });
                gt.relevant[c].insert(i);
            }
        }
        Ok(gt)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn concept(&self, tag: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == tag)
    }

    /// The `n` concepts with the most relevant images, ties by concept order.
    pub fn top_concepts(&self, n: usize) -> Vec<String> {
        let mut order: Vec<usize> = (0..self.concepts.len()).collect();
        order.sort_by(|&a, &b| self.relevant[b].len().cmp(&self.relevant[a].len()).then(a.cmp(&b)));
        order.into_iter().take(n).map(|c| self.concepts[c].clone()).collect()
    }
}

/// Predictions aligned to the ground-truth image order.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPredictions {
    /// Per ground-truth image, the predicted tags (top-k) with scores.
    pub tags: Vec<Vec<(String, f64)>>,
}

/// Align parsed predictions with the ground truth. A predicted image that
/// the ground truth does not know is an error; ground-truth images without a
/// prediction get an empty list. Tags without a score get score 1.
pub fn align(pred: &PredictionList, gt: &GroundTruth, k: usize) -> Result<AlignedPredictions> {
    let index: HashMap<&str, usize> = gt.images.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut tags = vec![Vec::new(); gt.images.len()];
    let mut seen = vec![false; gt.images.len()];
    for (image, list) in pred {
        let &i = index
            .get(image.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("predicted image `{image}` is not in the ground truth")))?;
        if seen[i] {
            return Err(Error::InvalidInput(format!("image `{image}` predicted twice")));
        }
        seen[i] = true;
        tags[i] = list.iter().take(k).map(|(t, s)| (t.clone(), s.unwrap_or(1.0))).collect();
    }
    let missing = seen.iter().filter(|s| !**s).count();
    if missing > 0 {
        warn!("{missing} ground-truth images have no prediction; counted as empty");
    }
    Ok(AlignedPredictions { tags })
}

/// `2PR / (P + R)`, 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall and F of predicting `concept` for the images whose
/// predictions contain it.
pub fn fscore(pred: &AlignedPredictions, gt: &GroundTruth, concept: usize) -> (f64, f64, f64) {
    let name = &gt.concepts[concept];
    let relevant = &gt.relevant[concept];
    let predicted: Vec<usize> = (0..pred.tags.len())
        .filter(|&i| pred.tags[i].iter().any(|(t, _)| t == name))
        .collect();
    let hits = predicted.iter().filter(|i| relevant.contains(i)).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { hits / predicted.len() as f64 };
    let recall = if relevant.is_empty() { 0.0 } else { hits / relevant.len() as f64 };
    (precision, recall, f_measure(precision, recall))
}

/// What `R` counts in the AP normalizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApRMode {
    /// Relevant items inside the top-T list.
    #[default]
    Topt,
    /// Relevant items in the whole corpus.
    Corpus,
}

impl std::str::FromStr for ApRMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topt" | "top-t" => Ok(ApRMode::Topt),
            "corpus" => Ok(ApRMode::Corpus),
            _ => Err(Error::param("ap_r_mode", format!("`{s}` is not `topt` or `corpus`"))),
        }
    }
}

impl std::fmt::Display for ApRMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ApRMode::Topt => "topt",
            ApRMode::Corpus => "corpus",
        })
    }
}

/// `AP = (1/R) Σ_{r ≤ T} p(r) χ(r)`.
pub fn average_precision(ranked: &[usize], relevant: &BTreeSet<usize>, cutoff: usize, mode: ApRMode) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, item) in ranked.iter().take(cutoff).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    let denom = match mode {
        ApRMode::Topt => hits,
        ApRMode::Corpus => relevant.len(),
    };
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

/// Images whose predictions contain `tag`, ranked by its score, ties by image
/// index. Images without the tag are not retrieved.
pub fn rank_for_query(pred: &AlignedPredictions, tag: &str) -> Vec<usize> {
    let mut hits: Vec<(usize, f64)> = pred
        .tags
        .iter()
        .enumerate()
        .filter_map(|(i, list)| list.iter().find(|(t, _)| t == tag).map(|&(_, s)| (i, s)))
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.into_iter().map(|(i, _)| i).collect()
}

pub fn retrieval_run(
    pred: &AlignedPredictions,
    gt: &GroundTruth,
    query: &str,
    cutoffs: &[usize],
    mode: ApRMode,
) -> Result<Vec<f64>> {
    let c = gt
        .concept(query)
        .ok_or_else(|| Error::InvalidInput(format!("unknown query tag `{query}`")))?;
    let ranked = rank_for_query(pred, query);
    Ok(cutoffs
        .iter()
        .map(|&t| average_precision(&ranked, &gt.relevant[c], t, mode))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub concept: String,
    pub relevant: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: String,
    /// AP per cutoff, aligned with `MetricsReport::cutoffs`.
    pub ap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub images: usize,
    pub average_fscore: f64,
    pub concepts: Vec<ConceptMetrics>,
    pub cutoffs: Vec<usize>,
    pub ap_r_mode: ApRMode,
    pub queries: Vec<QueryMetrics>,
    /// MAP per cutoff.
    pub map: Vec<f64>,
}

impl MetricsReport {
    pub fn map_at(&self, cutoff: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == cutoff).map(|p| self.map[p])
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    /// One row per concept.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("concept,relevant,precision,recall,fscore\n");
        for c in &self.concepts {
            let _ = writeln!(s, "{},{},{},{},{}", c.concept, c.relevant, c.precision, c.recall, c.fscore);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub cutoffs: Vec<usize>,
    /// Retrieval queries; empty means the most frequent ground-truth concepts.
    pub queries: Vec<String>,
    pub num_queries: usize,
    pub ap_r_mode: ApRMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            queries: Vec::new(),
            num_queries: DEFAULT_QUERIES,
            ap_r_mode: ApRMode::Topt,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::param("k", "must be at least 1"));
        }
        if self.cutoffs.iter().any(|&c| c < 1) {
            return Err(Error::param("cutoffs", "every cutoff must be at least 1"));
        }
        Ok(())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn evaluate(pred: &PredictionList, gt: &GroundTruth, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if pred.is_empty() {
        warn!("no predictions; every metric is zero");
    }
    let aligned = align(pred, gt, cfg.k)?;
    let concepts: Vec<ConceptMetrics> = (0..gt.concepts.len())
        .map(|c| {
            let (precision, recall, fscore) = fscore(&aligned, gt, c);
            ConceptMetrics {
                concept: gt.concepts[c].clone(),
                relevant: gt.relevant[c].len(),
                precision,
                recall,
                fscore,
            }
        })
        .collect();
    let average_fscore = mean(&concepts.iter().map(|c| c.fscore).collect::<Vec<_>>());
    let query_names = if cfg.queries.is_empty() {
        gt.top_concepts(cfg.num_queries)
    } else {
        cfg.queries.clone()
    };
    let queries = query_names
        .iter()
        .map(|q| {
            Ok(QueryMetrics {
                query: q.clone(),
                ap: retrieval_run(&aligned, gt, q, &cfg.cutoffs, cfg.ap_r_mode)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let map = (0..cfg.cutoffs.len())
        .map(|p| mean(&queries.iter().map(|q| q.ap[p]).collect::<Vec<_>>()))
        .collect();
    Ok(MetricsReport {
        k: cfg.k,
        images: gt.images.len(),
        average_fscore,
        concepts,
        cutoffs: cfg.cutoffs.clone(),
        ap_r_mode: cfg.ap_r_mode,
        queries,
        map,
    })
}
