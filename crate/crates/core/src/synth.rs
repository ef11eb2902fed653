//! Planted-model generator: a synthetic dataset whose true image tags are known.
//!
//! Images and users are split into clusters. Each cluster owns a tag set and a
//! feature-space center; each image is uploaded by a user from its own cluster
//! and carries the cluster's tags. The observed triples are the true pairs with
//! an exact fraction deleted (missing tags) plus an exact fraction of spurious
//! pairs added (noisy tags). Group memberships follow the user clusters and the
//! taxonomy is a random tree over the tags.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{RawDataset, RawTriple, GROUND_TRUTH_FILE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub num_tags: usize,
    pub num_images: usize,
    pub num_users: usize,
    pub num_clusters: usize,
    /// True tags carried by every image of a cluster.
    pub tags_per_cluster: usize,
    /// Spurious pairs added, as a fraction of the true pairs.
    pub noise_rate: f64,
    /// True pairs deleted, as a fraction of the true pairs.
    pub missing_rate: f64,
    pub feature_dim: usize,
    /// Standard deviation of per-image feature noise around the cluster center.
    pub feature_noise: f64,
    pub groups_per_cluster: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_tags: 30,
            num_images: 200,
            num_users: 40,
            num_clusters: 5,
            tags_per_cluster: 10,
            noise_rate: 0.1,
            missing_rate: 0.3,
            feature_dim: 16,
            feature_noise: 0.25,
            groups_per_cluster: 3,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("noise_rate", self.noise_rate), ("missing_rate", self.missing_rate)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::param(name, format!("{rate} is outside [0, 1)")));
            }
        }
        if self.num_clusters == 0 {
            return Err(Error::param("num_clusters", "must be at least 1"));
        }
        if self.num_images < self.num_clusters || self.num_users < self.num_clusters {
            return Err(Error::param(
                "num_clusters",
                "needs at least one image and one user per cluster",
            ));
        }
        if self.tags_per_cluster == 0 || self.tags_per_cluster > self.num_tags {
            return Err(Error::param("tags_per_cluster", "must be in 1..=num_tags"));
        }
        if self.feature_dim == 0 {
            return Err(Error::param("feature_dim", "must be at least 1"));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::param("feature_noise", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedDataset {
    pub raw: RawDataset,
    /// True tag list per image id, in image order.
    pub ground_truth: Vec<(String, Vec<String>)>,
    pub image_cluster: Vec<usize>,
    pub user_cluster: Vec<usize>,
    pub cluster_tags: Vec<Vec<usize>>,
    pub true_pairs: usize,
    pub deleted_pairs: usize,
    pub spurious_pairs: usize,
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Cluster labels for `n` items, balanced and shuffled.
fn balanced_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    labels
}

pub fn generate_planted(cfg: &GenConfig) -> Result<PlantedDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.num_clusters;
    let image_ids = ids("img", cfg.num_images);
    let user_ids = ids("user", cfg.num_users);
    let tag_ids = ids("tag", cfg.num_tags);

    // Each cluster gets a private block of tags, topped up from outside the
    // block when the block is smaller than `tags_per_cluster`.
    let mut tag_order: Vec<usize> = (0..cfg.num_tags).collect();
    tag_order.shuffle(&mut rng);
    let block = (cfg.num_tags / k).max(1);
    let cluster_tags: Vec<Vec<usize>> = (0..k)
        .map(|c| {
            let start = (c * block) % cfg.num_tags;
            let own: Vec<usize> = (0..block).map(|o| tag_order[(start + o) % cfg.num_tags]).collect();
            let mut set: BTreeSet<usize> = own.iter().copied().take(cfg.tags_per_cluster).collect();
            let others: Vec<usize> = tag_order.iter().copied().filter(|t| !own.contains(t)).collect();
            let extra = cfg.tags_per_cluster.saturating_sub(set.len());
            for i in index::sample(&mut rng, others.len(), extra.min(others.len())) {
                set.insert(others[i]);
            }
            set.into_iter().collect()
        })
        .collect();

    let user_cluster = balanced_labels(&mut rng, cfg.num_users, k);
    let image_cluster = balanced_labels(&mut rng, cfg.num_images, k);
    let users_by_cluster: Vec<Vec<usize>> = (0..k)
        .map(|c| (0..cfg.num_users).filter(|&u| user_cluster[u] == c).collect())
        .collect();
    let uploader: Vec<usize> = image_cluster
        .iter()
        .map(|&c| {
            let pool = &users_by_cluster[c];
            pool[rng.random_range(0..pool.len())]
        })
        .collect();

    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..cfg.feature_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let features: Vec<(String, Vec<f64>)> = image_cluster
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let v = centers[c]
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + cfg.feature_noise * z
                })
                .collect();
            (image_ids[i].clone(), v)
        })
        .collect();

    let truth: Vec<BTreeSet<usize>> = image_cluster
        .iter()
        .map(|&c| cluster_tags[c].iter().copied().collect())
        .collect();
    let true_list: Vec<(usize, usize)> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, tags)| tags.iter().map(move |&t| (i, t)))
        .collect();
    let n_true = true_list.len();
    let n_delete = (cfg.missing_rate * n_true as f64).round() as usize;
    let n_spurious = (cfg.noise_rate * n_true as f64).round() as usize;

    let mut observed = truth.clone();
    for i in index::sample(&mut rng, n_true, n_delete) {
        let (img, tag) = true_list[i];
        observed[img].remove(&tag);
    }
    let candidates: Vec<(usize, usize)> = (0..cfg.num_images)
        .flat_map(|i| (0..cfg.num_tags).map(move |t| (i, t)))
        .filter(|&(i, t)| !truth[i].contains(&t))
        .collect();
    if n_spurious > candidates.len() {
        return Err(Error::param("noise_rate", "more spurious pairs than free (image, tag) slots"));
    }
    for i in index::sample(&mut rng, candidates.len(), n_spurious) {
        let (img, tag) = candidates[i];
        observed[img].insert(tag);
    }

    let tag_ref = &tag_ids;
    let triples = observed
        .iter()
        .enumerate()
        .flat_map(|(i, tags)| {
            let image = &image_ids[i];
            let user = &user_ids[uploader[i]];
            tags.iter().map(move |&t| RawTriple {
                image: image.clone(),
                user: user.clone(),
                tag: tag_ref[t].clone(),
            })
        })
        .collect();

    // Users join a random nonempty subset of their cluster's groups and,
    // occasionally, one foreign group.
    let gpc = cfg.groups_per_cluster;
    let mut groups = Vec::new();
    if gpc > 0 {
        for u in 0..cfg.num_users {
            let c = user_cluster[u];
            let mut joined: BTreeSet<String> = (0..gpc)
                .filter(|_| rng.random_bool(0.5))
                .map(|g| format!("group{c}_{g}"))
                .collect();
            if joined.is_empty() {
                joined.insert(format!("group{c}_{}", rng.random_range(0..gpc)));
            }
            if k > 1 && rng.random_bool(0.1) {
                let other = (c + rng.random_range(1..k)) % k;
                joined.insert(format!("group{other}_{}", rng.random_range(0..gpc)));
            }
            groups.extend(joined.into_iter().map(|g| (user_ids[u].clone(), g)));
        }
    }

    // Random tree: a few top-level tags under the root, every other tag picks
    // a parent among the tags placed before it.
    let mut tree_order: Vec<usize> = (0..cfg.num_tags).collect();
    tree_order.shuffle(&mut rng);
    let top = k.min(cfg.num_tags);
    let mut taxonomy = Vec::new();
    for pos in top..cfg.num_tags {
        let parent = tree_order[rng.random_range(0..pos)];
        taxonomy.push((tag_ids[tree_order[pos]].clone(), tag_ids[parent].clone()));
    }

    let ground_truth = truth
        .iter()
        .enumerate()
        .map(|(i, tags)| (image_ids[i].clone(), tags.iter().map(|&t| tag_ids[t].clone()).collect()))
        .collect();

    Ok(PlantedDataset {
        raw: RawDataset {
            triples,
            features,
            groups,
            taxonomy,
        },
        ground_truth,
        image_cluster,
        user_cluster,
        cluster_tags,
        true_pairs: n_true,
        deleted_pairs: n_delete,
        spurious_pairs: n_spurious,
    })
}

pub fn format_ground_truth(gt: &[(String, Vec<String>)]) -> String {
    let mut s = String::new();
    for (image, tags) in gt {
        s.push_str(image);
        s.push('\t');
        s.push_str(&tags.join(","));
        s.push('\n');
    }
    s
}

impl PlantedDataset {
    /// Write the four dataset files plus `ground_truth.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.raw.write(dir)?;
        let path = dir.join(GROUND_TRUTH_FILE);
        fs::write(&path, format_ground_truth(&self.ground_truth)).map_err(|e| Error::io(&path, e))
    }
}
