//! Tag taxonomy (a DAG under a synthetic root) with corpus counts.
//!
//! Node indices `0..num_tags` coincide with vocabulary tag indices. Names that
//! only appear in the taxonomy file become extra internal nodes after them and
//! the synthetic root is always the last node.
//!
//! Two kinds of counts are kept. `N(t)` and `N(t_i, t_j)` count images carrying
//! a tag (or both tags). Information content uses subsumption counts instead:
//! the number of images carrying the node or any of its descendants, so that
//! internal nodes have a probability and `p` never decreases towards the root.

use std::collections::{BTreeSet, HashMap};

use crate::dataset::{Observations, Vocabulary};
use crate::error::{Error, Result};

pub const ROOT_NAME: &str = "<root>";

#[derive(Clone, Debug, PartialEq)]
pub struct Taxonomy {
    names: Vec<String>,
    num_tags: usize,
    /// Parents of every node; empty only for the root.
    parents: Vec<Vec<usize>>,
    /// Sorted ancestor sets, each including the node itself.
    ancestors: Vec<Vec<usize>>,
    tag_counts: Vec<f64>,
    pair_counts: HashMap<(usize, usize), f64>,
    node_counts: Vec<f64>,
    total: f64,
}

/// Explicit counts for [`Taxonomy::from_parts`].
#[derive(Clone, Debug, Default)]
pub struct TaxonomyCounts {
    /// `N(t)` per tag.
    pub tag_counts: Vec<f64>,
    /// `N(t_i, t_j)` for `i < j`; missing pairs count zero.
    pub pair_counts: HashMap<(usize, usize), f64>,
    /// Subsumption count per node (tags, extra nodes, root).
    pub node_counts: Vec<f64>,
    /// Size of the universe `p` is measured against.
    pub total: f64,
}

impl Taxonomy {
    /// Taxonomy over the vocabulary's tags with counts taken from the
    /// observations (image-level occurrence and co-occurrence).
    pub fn build(vocab: &Vocabulary, obs: &Observations, edges: &[(String, String)]) -> Result<Self> {
        let num_tags = vocab.tags.len();
        let mut names: Vec<String> = vocab.tags.ids().to_vec();
        let mut index: HashMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut explicit: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (child, parent) in edges {
            let mut node = |name: &String| {
                *index.entry(name.clone()).or_insert_with(|| {
                    names.push(name.clone());
                    names.len() - 1
                })
            };
            let c = node(child);
            let p = node(parent);
            explicit.push((c, p));
        }
        names.push(ROOT_NAME.to_owned());
        let parents = attach_root(names.len(), &explicit);

        let image_tags = obs.tags_per_image(vocab.images.len());
        let mut tag_counts = vec![0.0; num_tags];
        let mut pair_counts = HashMap::new();
        for tags in &image_tags {
            let tags: Vec<usize> = tags.iter().copied().collect();
            for (a, &ta) in tags.iter().enumerate() {
                tag_counts[ta] += 1.0;
                for &tb in &tags[a + 1..] {
                    *pair_counts.entry((ta, tb)).or_insert(0.0) += 1.0;
                }
            }
        }

        let ancestors = ancestor_sets(&names, &parents)?;
        let mut node_counts = vec![0.0; names.len()];
        for tags in &image_tags {
            let covered: BTreeSet<usize> = tags.iter().flat_map(|&t| ancestors[t].iter().copied()).collect();
            for n in covered {
                node_counts[n] += 1.0;
            }
        }
        let total = vocab.images.len() as f64;
        let root = names.len() - 1;
        node_counts[root] = total;

        Ok(Self {
            names,
            num_tags,
            parents,
            ancestors,
            tag_counts,
            pair_counts,
            node_counts,
            total,
        })
    }

    /// Assemble from explicit parts. `names` lists the tags first, then any
    /// extra nodes; the root is appended. `edges` are `(child, parent)` node
    /// indices into `names`.
    pub fn from_parts(
        names: Vec<String>,
        num_tags: usize,
        edges: &[(usize, usize)],
        counts: TaxonomyCounts,
    ) -> Result<Self> {
        let mut names = names;
        names.push(ROOT_NAME.to_owned());
        let n = names.len();
        if num_tags > n - 1 || edges.iter().any(|&(c, p)| c >= n - 1 || p >= n - 1) {
            return Err(Error::InvalidInput("taxonomy edge or tag count out of range".into()));
        }
        if counts.tag_counts.len() != num_tags || counts.node_counts.len() + 1 < n {
            return Err(Error::InvalidInput("taxonomy count vectors have the wrong length".into()));
        }
        for (&(a, b), &c) in &counts.pair_counts {
            let bound = counts.tag_counts[a].min(counts.tag_counts[b]);
            if c < 0.0 || c > bound {
                return Err(Error::InvalidInput(format!(
                    "co-occurrence N({a},{b}) = {c} exceeds min(N) = {bound}"
                )));
            }
        }
        let parents = attach_root(n, edges);
        let ancestors = ancestor_sets(&names, &parents)?;
        let mut node_counts = counts.node_counts;
        node_counts.resize(n, 0.0);
        node_counts[n - 1] = counts.total;
        let pair_counts = counts
            .pair_counts
            .into_iter()
            .map(|((a, b), c)| ((a.min(b), a.max(b)), c))
            .collect();
        Ok(Self {
            names,
            num_tags,
            parents,
            ancestors,
            tag_counts: counts.tag_counts,
            pair_counts,
            node_counts,
            total: counts.total,
        })
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn root(&self) -> usize {
        self.names.len() - 1
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    /// Ancestors of `node` including itself, ascending.
    pub fn ancestors(&self, node: usize) -> &[usize] {
        &self.ancestors[node]
    }

    /// `N(t)`.
    pub fn occurrence(&self, tag: usize) -> f64 {
        self.tag_counts[tag]
    }

    /// `N(t_i, t_j)`; on the diagonal this is `N(t)`.
    pub fn co_occurrence(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return self.tag_counts[a];
        }
        self.pair_counts.get(&(a.min(b), a.max(b))).copied().unwrap_or(0.0)
    }

    /// Subsumption probability clamped to `(0, 1]`; `None` when the node
    /// covers no image.
    pub fn probability(&self, node: usize) -> Option<f64> {
        if node == self.root() {
            return Some(1.0);
        }
        let c = self.node_counts[node];
        if c <= 0.0 || self.total <= 0.0 {
            return None;
        }
        Some((c / self.total).min(1.0))
    }

    /// `C(t) = −log p(t)`.
    pub fn information_content(&self, node: usize) -> Option<f64> {
        // `max(0.0)` turns the -0.0 of log(1) into +0.0.
        self.probability(node).map(|p| (-p.ln()).max(0.0))
    }

    /// The common ancestor of `a` and `b` with the largest information
    /// content, ties broken by the smaller node index.
    pub fn least_common_subsumer(&self, a: usize, b: usize) -> usize {
        let (sa, sb) = (&self.ancestors[a], &self.ancestors[b]);
        let mut best = self.root();
        let mut best_ic = f64::NEG_INFINITY;
        // Both lists are sorted; walk the intersection.
        let (mut i, mut j) = (0, 0);
        while i < sa.len() && j < sb.len() {
            match sa[i].cmp(&sb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    let node = sa[i];
                    let ic = self.information_content(node).unwrap_or(f64::NEG_INFINITY);
                    if ic > best_ic || (ic == best_ic && node < best) {
                        best = node;
                        best_ic = ic;
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        best
    }

    /// Explicit `(child, parent)` name pairs, omitting edges to the root.
    pub fn edges(&self) -> Vec<(String, String)> {
        let root = self.root();
        let mut out = Vec::new();
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                if p != root {
                    out.push((self.names[c].clone(), self.names[p].clone()));
                }
            }
        }
        out
    }
}

fn attach_root(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let root = n - 1;
    let mut parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(c, p) in edges {
        parents[c].insert(p);
    }
    parents
        .into_iter()
        .enumerate()
        .map(|(i, ps)| {
            if i == root {
                Vec::new()
            } else if ps.is_empty() {
                vec![root]
            } else {
                ps.into_iter().collect()
            }
        })
        .collect()
}

/// Ancestor closure of every node; fails with one cycle if the graph has any.
fn ancestor_sets(names: &[String], parents: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        New,
        Active,
        Done,
    }
    let n = parents.len();
    let mut state = vec![State::New; n];
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for start in 0..n {
        if state[start] != State::New {
            continue;
        }
        // Iterative DFS; `path` holds the active chain for cycle reporting.
        let mut path: Vec<(usize, usize)> = vec![(start, 0)];
        state[start] = State::Active;
        while let Some(&(node, next)) = path.last() {
            if let Some(&p) = parents[node].get(next) {
                path.last_mut().expect("nonempty path").1 += 1;
                match state[p] {
                    State::New => {
                        state[p] = State::Active;
                        path.push((p, 0));
                    }
                    State::Active => {
                        let from = path.iter().position(|&(x, _)| x == p).expect("active node on path");
                        let mut cycle: Vec<String> = path[from..].iter().map(|&(x, _)| names[x].clone()).collect();
                        cycle.push(names[p].clone());
                        return Err(Error::TaxonomyCycle { cycle });
                    }
                    State::Done => {}
                }
            } else {
                let mut set: BTreeSet<usize> = BTreeSet::from([node]);
                for &p in &parents[node] {
                    set.extend(sets[p].iter().copied());
                }
                sets[node] = set.into_iter().collect();
                state[node] = State::Done;
                path.pop();
            }
        }
    }
    Ok(sets)
}
