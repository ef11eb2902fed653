//! Flat `key = value` pipeline configuration.
//!
//! Every key has a default; a config file overrides defaults and explicit
//! `key=value` overrides are applied last. [`PipelineConfig::to_text`] prints
//! every key, and parsing that text gives back the same configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::assign::AssignConfig;
use crate::completion::CompletionConfig;
use crate::dataset::{read_text, DatasetPaths, FEATURES_FILE, GROUND_TRUTH_FILE, GROUPS_FILE, TAXONOMY_FILE, TRIPLES_FILE};
use crate::error::{Error, Result};
use crate::eval::{ApRMode, EvalConfig};
use crate::graph::GraphConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AnchorMode {
    #[default]
    Cocluster,
    Random,
}

impl std::str::FromStr for AnchorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cocluster" => Ok(AnchorMode::Cocluster),
            "random" => Ok(AnchorMode::Random),
            _ => Err(Error::Config(format!("anchor_mode `{s}` is not `cocluster` or `random`"))),
        }
    }
}

impl std::fmt::Display for AnchorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnchorMode::Cocluster => "cocluster",
            AnchorMode::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorConfig {
    pub mode: AnchorMode,
    pub c_i: usize,
    pub c_u: usize,
    pub m_c: usize,
    pub seed: u64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            mode: AnchorMode::Cocluster,
            c_i: 40,
            c_u: 12,
            m_c: 10,
            seed: 0,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_i < 1 || self.c_u < 1 {
            return Err(Error::param("c_i/c_u", "cluster counts must be at least 1"));
        }
        if self.m_c < 1 {
            return Err(Error::param("m_c", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataConfig {
    /// Directory holding the standard file names.
    pub dir: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

impl DataConfig {
    fn pick(&self, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.dir.as_ref().map(|d| d.join(name)))
            .ok_or_else(|| Error::Config(format!("no path for {name}: set `data` or the file key")))
    }

    pub fn dataset_paths(&self) -> Result<DatasetPaths> {
        let taxonomy = match (&self.taxonomy, &self.dir) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(d)) => Some(d.join(TAXONOMY_FILE)).filter(|p| p.exists()),
            (None, None) => None,
        };
        Ok(DatasetPaths {
            triples: self.pick(&self.triples, TRIPLES_FILE)?,
            features: self.pick(&self.features, FEATURES_FILE)?,
            groups: self.pick(&self.groups, GROUPS_FILE)?,
            taxonomy,
        })
    }

    pub fn ground_truth_path(&self) -> Option<PathBuf> {
        match (&self.ground_truth, &self.dir) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(d)) => Some(d.join(GROUND_TRUTH_FILE)).filter(|p| p.exists()),
            (None, None) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub anchors: AnchorConfig,
    pub graph: GraphConfig,
    pub completion: CompletionConfig,
    pub assign: AssignConfig,
    pub eval: EvalConfig,
}

pub const KEYS: &[&str] = &[
    "data",
    "triples",
    "features",
    "groups",
    "taxonomy",
    "ground_truth",
    "anchor_mode",
    "c_i",
    "c_u",
    "m_c",
    "anchor_seed",
    "sigma",
    "threshold",
    "a1",
    "a2",
    "normalize_features",
    "alpha",
    "beta",
    "lambda1",
    "lambda2",
    "rel_tol",
    "max_iters",
    "init_noise",
    "completion_seed",
    "s",
    "gamma",
    "k",
    "cutoffs",
    "queries",
    "num_queries",
    "ap_r_mode",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data.dir = path(v),
            "triples" => self.data.triples = path(v),
            "features" => self.data.features = path(v),
            "groups" => self.data.groups = path(v),
            "taxonomy" => self.data.taxonomy = path(v),
            "ground_truth" => self.data.ground_truth = path(v),
            "anchor_mode" => self.anchors.mode = v.parse()?,
            "c_i" => self.anchors.c_i = num(key, v)?,
            "c_u" => self.anchors.c_u = num(key, v)?,
            "m_c" => self.anchors.m_c = num(key, v)?,
            "anchor_seed" => self.anchors.seed = num(key, v)?,
            "sigma" => self.graph.sigma = num(key, v)?,
            "threshold" => self.graph.threshold = num(key, v)?,
            "a1" => self.graph.a1 = num(key, v)?,
            "a2" => self.graph.a2 = num(key, v)?,
            "normalize_features" => self.graph.normalize_features = num(key, v)?,
            "alpha" => self.completion.alpha = num(key, v)?,
            "beta" => self.completion.beta = num(key, v)?,
            "lambda1" => self.completion.lambda1 = num(key, v)?,
            "lambda2" => self.completion.lambda2 = num(key, v)?,
            "rel_tol" => self.completion.rel_tol = num(key, v)?,
            "max_iters" => self.completion.max_iters = num(key, v)?,
            "init_noise" => self.completion.init_noise_scale = num(key, v)?,
            "completion_seed" => self.completion.seed = num(key, v)?,
            "s" => self.assign.s = num(key, v)?,
            "gamma" => self.assign.gamma = num(key, v)?,
            "k" => {
                self.assign.k = num(key, v)?;
                self.eval.k = self.assign.k;
            }
            "cutoffs" => {
                self.eval.cutoffs = list(v).iter().map(|c| num(key, c)).collect::<Result<_>>()?;
            }
            "queries" => self.eval.queries = list(v),
            "num_queries" => self.eval.num_queries = num(key, v)?,
            "ap_r_mode" => {
                self.eval.ap_r_mode = v.parse::<ApRMode>().map_err(|e| Error::Config(e.to_string()))?
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data" => show_path(&self.data.dir),
            "triples" => show_path(&self.data.triples),
            "features" => show_path(&self.data.features),
            "groups" => show_path(&self.data.groups),
            "taxonomy" => show_path(&self.data.taxonomy),
            "ground_truth" => show_path(&self.data.ground_truth),
            "anchor_mode" => self.anchors.mode.to_string(),
            "c_i" => self.anchors.c_i.to_string(),
            "c_u" => self.anchors.c_u.to_string(),
            "m_c" => self.anchors.m_c.to_string(),
            "anchor_seed" => self.anchors.seed.to_string(),
            "sigma" => self.graph.sigma.to_string(),
            "threshold" => self.graph.threshold.to_string(),
            "a1" => self.graph.a1.to_string(),
            "a2" => self.graph.a2.to_string(),
            "normalize_features" => self.graph.normalize_features.to_string(),
            "alpha" => self.completion.alpha.to_string(),
            "beta" => self.completion.beta.to_string(),
            "lambda1" => self.completion.lambda1.to_string(),
            "lambda2" => self.completion.lambda2.to_string(),
            "rel_tol" => self.completion.rel_tol.to_string(),
            "max_iters" => self.completion.max_iters.to_string(),
            "init_noise" => self.completion.init_noise_scale.to_string(),
            "completion_seed" => self.completion.seed.to_string(),
            "s" => self.assign.s.to_string(),
            "gamma" => self.assign.gamma.to_string(),
            "k" => self.assign.k.to_string(),
            "cutoffs" => self.eval.cutoffs.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "queries" => self.eval.queries.join(","),
            "num_queries" => self.eval.num_queries.to_string(),
            "ap_r_mode" => self.eval.ap_r_mode.to_string(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines. `#` starts a comment line.
    pub fn apply_text(&mut self, origin: &Path, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", origin.display(), n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(path, &read_text(path)?)?;
        Ok(cfg)
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("every key printable"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        self.graph.validate()?;
        self.completion.validate()?;
        self.assign.validate()?;
        self.eval.validate()?;
        if self.eval.k != self.assign.k {
            return Err(Error::Config("evaluation k differs from assignment k".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn print_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_overrides(&["sigma=0.75", "queries=tag01,tag02", "data=/tmp/x", "anchor_mode=random", "rel_tol=1e-7"])
            .unwrap();
        let text = cfg.to_text();
        let mut back = PipelineConfig::default();
        back.apply_text(Path::new("c"), &text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn defaults_and_errors() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.anchors.c_i, cfg.anchors.c_u, cfg.anchors.m_c), (40, 12, 10));
        assert_eq!(cfg.graph.sigma, 2.5);
        assert_eq!(cfg.assign.gamma, 0.8);
        cfg.validate().unwrap();
        let mut c = PipelineConfig::default();
        assert!(c.set("nope", "1").unwrap_err().is_usage());
        assert!(c.set("c_i", "x").is_err());
        assert!(c.apply_text(Path::new("c"), "sigma 3\n").is_err());
        c.set("gamma", "1.5").unwrap();
        assert!(c.validate().unwrap_err().is_usage());
    }

    #[test]
    fn data_paths_resolve() {
        let mut c = PipelineConfig::default();
        assert!(c.data.dataset_paths().is_err());
        c.set("data", "/d").unwrap();
        c.set("groups", "/elsewhere/g.tsv").unwrap();
        let p = c.data.dataset_paths().unwrap();
        assert_eq!(p.triples, Path::new("/d/triples.tsv"));
        assert_eq!(p.groups, Path::new("/elsewhere/g.tsv"));
    }
}
