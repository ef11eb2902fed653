//! Indexed in-memory dataset: vocabulary, observations, features, groups and
//! the tag taxonomy, plus the tab-separated file formats they are read from.
//!
//! Ids are opaque strings. Internal indices are assigned in first-seen order
//! while scanning `triples.tsv`, which is the file that defines the image,
//! user and tag universes.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;
use crate::tensor::SparseTensor3;

pub const TRIPLES_FILE: &str = "triples.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const GROUPS_FILE: &str = "groups.tsv";
pub const TAXONOMY_FILE: &str = "taxonomy.tsv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.tsv";

/// User ids that mark an unavailable uploader.
const MISSING_USER_IDS: [&str; 6] = ["", "-", "?", "NA", "null", "unknown"];

/// Ordered id list with its inverse map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `id`, inserting it at the end if unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<S> for IdIndex {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut idx = IdIndex::new();
        for s in iter {
            idx.intern(s.as_ref());
        }
        idx
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub images: IdIndex,
    pub users: IdIndex,
    pub tags: IdIndex,
}

impl Vocabulary {
    /// `(|𝕋|, |𝕀|, |𝕌|)`, the axis order of every tag–image–user tensor.
    pub fn tensor_dims(&self) -> (usize, usize, usize) {
        (self.tags.len(), self.images.len(), self.users.len())
    }
}

/// Distinct `(image, tag, user)` triples and the single uploader of every image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Observations {
    triples: BTreeSet<(usize, usize, usize)>,
    uploader: Vec<usize>,
}

impl Observations {
    pub fn new(triples: BTreeSet<(usize, usize, usize)>, uploader: Vec<usize>) -> Result<Self> {
        for &(image, _, user) in &triples {
            match uploader.get(image) {
                Some(&u) if u == user => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "triple for image {image} names user {user}, which is not its uploader"
                    )))
                }
            }
        }
        Ok(Self { triples, uploader })
    }

    /// `(image, tag, user)` in ascending order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.triples.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn uploader(&self, image: usize) -> usize {
        self.uploader[image]
    }

    pub fn uploaders(&self) -> &[usize] {
        &self.uploader
    }

    /// Tag indices observed on each image.
    pub fn tags_per_image(&self, num_images: usize) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); num_images];
        for &(image, tag, _) in &self.triples {
            out[image].insert(tag);
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl FeatureStore {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Feature {
                    image: format!("#{i}"),
                    message: format!("expected {dim} values, found {}", v.len()),
                });
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, image: usize) -> Option<&[f64]> {
        self.vectors.get(image).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupMembership {
    groups: Vec<BTreeSet<String>>,
}

impl GroupMembership {
    pub fn new(groups: Vec<BTreeSet<String>>) -> Self {
        Self { groups }
    }

    pub fn of(&self, user: usize) -> &BTreeSet<String> {
        &self.groups[user]
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// One `image<TAB>user<TAB>tag` record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTriple {
    pub image: String,
    pub user: String,
    pub tag: String,
}

/// File contents before indexing. The synthetic generator produces this
/// directly; the loader produces it by parsing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawDataset {
    pub triples: Vec<RawTriple>,
    pub features: Vec<(String, Vec<f64>)>,
    pub groups: Vec<(String, String)>,
    pub taxonomy: Vec<(String, String)>,
}

/// Locations of the dataset files.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub triples: PathBuf,
    pub features: PathBuf,
    pub groups: PathBuf,
    /// Optional: without it every tag hangs directly off the root.
    pub taxonomy: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`. The taxonomy is used only if present.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let taxonomy = dir.join(TAXONOMY_FILE);
        Self {
            triples: dir.join(TRIPLES_FILE),
            features: dir.join(FEATURES_FILE),
            groups: dir.join(GROUPS_FILE),
            taxonomy: taxonomy.exists().then_some(taxonomy),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.triples.as_path(), self.features.as_path(), self.groups.as_path()];
        if let Some(t) = &self.taxonomy {
            v.push(t);
        }
        v
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub observations: Observations,
    pub features: FeatureStore,
    pub groups: GroupMembership,
    pub taxonomy: Taxonomy,
    /// Images removed because their uploader was missing or ambiguous.
    pub dropped_images: usize,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-blank lines as `(1-based line number, fields)`.
fn tsv_records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(n, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            None
        } else {
            Some((n + 1, line.split('\t').collect()))
        }
    })
}

fn expect_fields<'a>(path: &Path, line: usize, fields: &[&'a str], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::parse(
            path,
            line,
            format!("expected {n} tab-separated fields, found {}", fields.len()),
        ));
    }
    Ok(())
}

pub fn parse_triples(path: &Path, text: &str) -> Result<Vec<RawTriple>> {
    tsv_records(text)
        .map(|(line, f)| {
            expect_fields(path, line, &f, 3)?;
            if f[0].is_empty() || f[2].is_empty() {
                return Err(Error::parse(path, line, "empty image or tag id"));
            }
            Ok(RawTriple {
                image: f[0].to_owned(),
                user: f[1].to_owned(),
                tag: f[2].to_owned(),
            })
        })
        .collect()
}

pub fn parse_features(path: &Path, text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    tsv_records(text)
        .map(|(line, f)| {
            expect_fields(path, line, &f, 2)?;
            let values = f[1]
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::parse(path, line, format!("bad feature value `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((f[0].to_owned(), values))
        })
        .collect()
}

fn parse_pairs(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    tsv_records(text)
        .map(|(line, f)| {
            expect_fields(path, line, &f, 2)?;
            if f[0].is_empty() || f[1].is_empty() {
                return Err(Error::parse(path, line, "empty id"));
            }
            Ok((f[0].to_owned(), f[1].to_owned()))
        })
        .collect()
}

impl RawDataset {
    pub fn read(paths: &DatasetPaths) -> Result<Self> {
        let triples = parse_triples(&paths.triples, &read_text(&paths.triples)?)?;
        let features = parse_features(&paths.features, &read_text(&paths.features)?)?;
        let groups = parse_pairs(&paths.groups, &read_text(&paths.groups)?)?;
        let taxonomy = match &paths.taxonomy {
            Some(p) => parse_pairs(p, &read_text(p)?)?,
            None => Vec::new(),
        };
        Ok(Self {
            triples,
            features,
            groups,
            taxonomy,
        })
    }
}

/// Parse and index the dataset files.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    Dataset::from_raw(&RawDataset::read(paths)?)
}

impl Dataset {
    pub fn from_raw(raw: &RawDataset) -> Result<Self> {
        // An image keeps its triples only if every record names the same,
        // available uploader.
        let mut uploader_of: HashMap<&str, Option<&str>> = HashMap::new();
        for t in &raw.triples {
            let user = (!MISSING_USER_IDS.contains(&t.user.as_str())).then_some(t.user.as_str());
            uploader_of
                .entry(t.image.as_str())
                .and_modify(|u| {
                    if *u != user {
                        *u = None;
                    }
                })
                .or_insert(user);
        }
        let dropped_images = uploader_of.values().filter(|u| u.is_none()).count();
        if dropped_images > 0 {
            log::warn!("dropped {dropped_images} image(s) with a missing or ambiguous uploader");
        }

        let mut vocab = Vocabulary::default();
        let mut uploader = Vec::new();
        let mut triples = BTreeSet::new();
        for t in &raw.triples {
            if uploader_of[t.image.as_str()].is_none() {
                continue;
            }
            let image = vocab.images.intern(&t.image);
            let user = vocab.users.intern(&t.user);
            let tag = vocab.tags.intern(&t.tag);
            if image == uploader.len() {
                uploader.push(user);
            }
            triples.insert((image, tag, user));
        }
        let observations = Observations::new(triples, uploader)?;

        let mut vectors: Vec<Option<Vec<f64>>> = vec![None; vocab.images.len()];
        let mut dim = None;
        for (id, v) in &raw.features {
            let Some(image) = vocab.images.get(id) else {
                continue;
            };
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Feature {
                    image: id.clone(),
                    message: format!("non-finite value {x}"),
                });
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Feature {
                        image: id.clone(),
                        message: format!("expected {d} values, found {}", v.len()),
                    })
                }
                _ => {}
            }
            vectors[image] = Some(v.clone());
        }
        let vectors = vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| Error::Feature {
                    image: vocab.images.name(i).to_owned(),
                    message: "no feature vector".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let features = FeatureStore::new(dim.unwrap_or(0), vectors)?;

        let mut groups = vec![BTreeSet::new(); vocab.users.len()];
        for (user, group) in &raw.groups {
            if let Some(u) = vocab.users.get(user) {
                groups[u].insert(group.clone());
            }
        }
        let groups = GroupMembership::new(groups);

        let taxonomy = Taxonomy::build(&vocab, &observations, &raw.taxonomy)?;

        Ok(Self {
            vocab,
            observations,
            features,
            groups,
            taxonomy,
            dropped_images,
        })
    }

    /// Binary tag × image × user tensor with one entry per distinct triple.
    pub fn observed_tensor(&self) -> SparseTensor3 {
        build_observed_tensor(&self.observations, &self.vocab)
    }

    /// Canonical file representation: records in index order, groups sorted.
    pub fn to_raw(&self) -> RawDataset {
        let v = &self.vocab;
        let triples = self
            .observations
            .triples()
            .map(|(i, t, u)| RawTriple {
                image: v.images.name(i).to_owned(),
                user: v.users.name(u).to_owned(),
                tag: v.tags.name(t).to_owned(),
            })
            .collect();
        let features = (0..v.images.len())
            .map(|i| (v.images.name(i).to_owned(), self.features.get(i).unwrap_or(&[]).to_vec()))
            .collect();
        let groups = (0..v.users.len())
            .flat_map(|u| {
                self.groups
                    .of(u)
                    .iter()
                    .map(move |g| (v.users.name(u).to_owned(), g.clone()))
            })
            .collect();
        RawDataset {
            triples,
            features,
            groups,
            taxonomy: self.taxonomy.edges(),
        }
    }
}

pub fn build_observed_tensor(obs: &Observations, vocab: &Vocabulary) -> SparseTensor3 {
    SparseTensor3::from_entries(
        vocab.tensor_dims(),
        obs.triples().map(|(image, tag, user)| (tag, image, user, 1.0)),
    )
    .expect("observation indices are within the vocabulary")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn format_vector(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RawDataset {
    /// Write the four dataset files into `dir` (created if needed).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut s = String::new();
        for t in &self.triples {
            s.push_str(&format!("{}\t{}\t{}\n", t.image, t.user, t.tag));
        }
        write_file(&dir.join(TRIPLES_FILE), &s)?;

        let mut s = String::new();
        for (id, v) in &self.features {
            s.push_str(&format!("{id}\t{}\n", format_vector(v)));
        }
        write_file(&dir.join(FEATURES_FILE), &s)?;

        let mut s = String::new();
        for (u, g) in &self.groups {
            s.push_str(&format!("{u}\t{g}\n"));
        }
        write_file(&dir.join(GROUPS_FILE), &s)?;

        let mut s = String::new();
        for (c, p) in &self.taxonomy {
            s.push_str(&format!("{c}\t{p}\n"));
        }
        write_file(&dir.join(TAXONOMY_FILE), &s)
    }
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.to_raw().write(dir)
}
