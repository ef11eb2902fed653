//! End-to-end run: load, anchors, graphs, complete, assign, eval.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::anchors::{
    cocluster, format_anchors, image_user_matrix, random_anchor_units, select_anchor_units, split_anchor_tensors,
    AnchorSet, AnchorTensors, Partition,
};
use crate::assign::{assign_all, format_rankings, observed_rankings, parse_rankings, Assignment, TagRanking};
use crate::checkpoint;
use crate::completion::{format_trace, CompletionState, Solver};
use crate::config::{AnchorConfig, AnchorMode, PipelineConfig};
use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, GroundTruth, MetricsReport};
use crate::graph::{build_adjacency, AdjacencySet};

pub const RETAGGED_FILE: &str = "retagged.tsv";
pub const OBSERVED_FILE: &str = "observed.tsv";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const OBSERVED_METRICS_FILE: &str = "metrics_observed.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const ANCHORS_FILE: &str = "anchors.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CACHE_DIR: &str = "cache";

/// Last stage to execute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Load,
    Anchors,
    Graphs,
    Complete,
    Assign,
    #[default]
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Anchors => "anchors",
            Stage::Graphs => "graphs",
            Stage::Complete => "complete",
            Stage::Assign => "assign",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Stage::Load, Stage::Anchors, Stage::Graphs, Stage::Complete, Stage::Assign, Stage::Eval]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where artifacts go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub stop_after: Stage,
    pub dump_matrices: bool,
    pub write_anchors: bool,
    pub metrics_csv: bool,
    /// Reuse and store solved tensors under `out_dir/cache`.
    pub cache: bool,
}

#[derive(Debug, Default)]
pub struct RunResult {
    pub dataset: Option<Dataset>,
    pub anchors: Option<AnchorSet>,
    pub partition: Option<Partition>,
    pub tensors: Option<AnchorTensors>,
    pub adjacency: Option<AdjacencySet>,
    pub completion: Option<CompletionState>,
    pub assignment: Option<Assignment>,
    pub observed: Option<Vec<TagRanking>>,
    pub metrics: Option<MetricsReport>,
    pub observed_metrics: Option<MetricsReport>,
    pub timings: Vec<(Stage, Duration)>,
    pub cache_hit: bool,
}

/// Files created by this run, deleted again if a later stage fails.
struct Artifacts {
    dir: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn cleanup(&self) {
        for p in &self.written {
            if let Err(e) = fs::remove_file(p) {
                warn!("could not remove partial output {}: {e}", p.display());
            }
        }
    }
}

fn timed<T>(stage: Stage, timings: &mut Vec<(Stage, Duration)>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(Error::in_stage(stage.name()))?;
    let elapsed = start.elapsed();
    info!("stage {stage}: {:.3}s", elapsed.as_secs_f64());
    timings.push((stage, elapsed));
    Ok(out)
}

pub fn select_anchors(ds: &Dataset, cfg: &AnchorConfig) -> Result<AnchorSet> {
    cfg.validate()?;
    let m = image_user_matrix(&ds.observed_tensor())?;
    let set = match cfg.mode {
        AnchorMode::Cocluster => {
            let cc = cocluster(&m, cfg.c_i, cfg.c_u, cfg.seed)?;
            select_anchor_units(&cc, &m, cfg.m_c)?
        }
        AnchorMode::Random => random_anchor_units(&m, cfg.c_i.max(cfg.c_u) * cfg.m_c, cfg.seed)?,
    };
    info!(
        "{} anchor units: {} anchor images, {} anchor users",
        set.len(),
        set.anchor_images.len(),
        set.anchor_users.len()
    );
    Ok(set)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of the input files and every setting the solve depends on.
pub fn solve_key(cfg: &PipelineConfig) -> Result<String> {
    let paths = cfg.data.dataset_paths()?;
    let mut h = Sha256::new();
    for p in paths.all() {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    const SOLVE_KEYS: &[&str] = &[
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
    ];
    for key in SOLVE_KEYS {
        h.update(format!("{key}={}\n", cfg.get(key).expect("known key")));
    }
    Ok(hex(&h.finalize()))
}

fn solve(
    cfg: &PipelineConfig,
    opts: &RunOptions,
    tensors: &AnchorTensors,
    adj: &AdjacencySet,
) -> Result<(CompletionState, bool)> {
    let cache_path = match (&opts.out_dir, opts.cache) {
        (Some(dir), true) => Some(dir.join(CACHE_DIR).join(format!("solve-{}.sgtc", solve_key(cfg)?))),
        _ => None,
    };
    let a0 = tensors.anchor.to_dense();
    if let Some(p) = cache_path.as_ref().filter(|p| p.exists()) {
        match checkpoint::load(p) {
            Ok(state) if state.a.dims() == a0.dims() => {
                info!("reusing solved tensor from {}", p.display());
                return Ok((state, true));
            }
            Ok(_) => warn!("ignoring cached solve {} with mismatched dims", p.display()),
            Err(e) => warn!("ignoring unreadable cached solve: {e}"),
        }
    }
    let solver = Solver::new(&tensors.non_anchor, &a0, adj, &cfg.completion)?;
    let state = solver.solve()?;
    info!(
        "completion: {} iterations, objective {:e} -> {:e}",
        state.iterations,
        state.trace.first().copied().unwrap_or(f64::NAN),
        state.trace.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(p) = cache_path {
        let dir = p.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&p, &state)?;
    }
    Ok((state, false))
}

/// Run the stages up to `opts.stop_after`. On error every file this run
/// wrote is removed and the error names the failing stage.
pub fn run(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut art = Artifacts {
        dir: opts.out_dir.clone(),
        written: Vec::new(),
    };
    let mut res = RunResult::default();
    match run_stages(cfg, opts, &mut art, &mut res) {
        Ok(()) => Ok(res),
        Err(e) => {
            art.cleanup();
            Err(e)
        }
    }
}

fn run_stages(cfg: &PipelineConfig, opts: &RunOptions, art: &mut Artifacts, res: &mut RunResult) -> Result<()> {
    let stop = opts.stop_after;
    let t = &mut res.timings;
    art.write(CONFIG_FILE, &cfg.to_text())?;

    let ds = timed(Stage::Load, t, || {
        let ds = load_dataset(&cfg.data.dataset_paths()?)?;
        let (n_tags, n_images, n_users) = ds.vocab.tensor_dims();
        info!(
            "{} observations: {n_tags} tags, {n_images} images, {n_users} users",
            ds.observations.len()
        );
        Ok(ds)
    })?;
    let (_, n_images, n_users) = ds.vocab.tensor_dims();
    let gt = match cfg.data.ground_truth_path() {
        Some(p) if stop >= Stage::Eval => Some(GroundTruth::read(&p).map_err(Error::in_stage("load"))?),
        _ => None,
    };
    res.dataset = Some(ds);
    let ds = res.dataset.as_ref().expect("just set");
    if stop == Stage::Load {
        return Ok(());
    }

    let anchors = timed(Stage::Anchors, t, || select_anchors(ds, &cfg.anchors))?;
    if opts.write_anchors || stop == Stage::Anchors {
        art.write(ANCHORS_FILE, &format_anchors(&anchors, &ds.vocab))?;
    }
    let part = anchors.partition(n_images, n_users);
    res.anchors = Some(anchors);
    if stop == Stage::Anchors {
        res.partition = Some(part);
        return Ok(());
    }

    let (tensors, adj) = timed(Stage::Graphs, t, || {
        let tensors = split_anchor_tensors(&ds.observed_tensor(), &part)?;
        if tensors.dropped > 0 {
            info!("{} observations link an anchor side to a non-anchor side", tensors.dropped);
        }
        let adj = build_adjacency(ds, &part, &cfg.graph)?;
        Ok((tensors, adj))
    })?;
    if opts.dump_matrices {
        if let Some(dir) = &art.dir {
            adj.write_matrices(dir).map_err(Error::in_stage("graphs"))?;
            for (name, _) in adj.matrices() {
                art.written.push(dir.join(name));
            }
        }
    }
    if stop == Stage::Graphs {
        res.partition = Some(part);
        res.tensors = Some(tensors);
        res.adjacency = Some(adj);
        return Ok(());
    }

    let (state, hit) = timed(Stage::Complete, t, || solve(cfg, opts, &tensors, &adj))?;
    res.cache_hit = hit;
    art.write(TRACE_FILE, &format_trace(&state.trace))?;

    if stop >= Stage::Assign {
        let anchors = res.anchors.as_ref().expect("anchors ran");
        let assignment = timed(Stage::Assign, t, || {
            assign_all(ds.observations.uploaders(), anchors, &part, &adj, &state.a, &cfg.assign)
        })?;
        let observed = observed_rankings(&ds.observations.tags_per_image(n_images), cfg.assign.k);
        let retagged = format_rankings(&assignment.rankings, &ds.vocab);
        let observed_text = format_rankings(&observed, &ds.vocab);
        art.write(RETAGGED_FILE, &retagged)?;
        art.write(OBSERVED_FILE, &observed_text)?;

        if let (Some(gt), Stage::Eval) = (&gt, stop) {
            let (metrics, observed_metrics) = timed(Stage::Eval, t, || {
                let pred = parse_rankings(Path::new(RETAGGED_FILE), &retagged)?;
                let base = parse_rankings(Path::new(OBSERVED_FILE), &observed_text)?;
                Ok((evaluate(&pred, gt, &cfg.eval)?, evaluate(&base, gt, &cfg.eval)?))
            })?;
            info!(
                "average F {:.4} (observed tags {:.4})",
                metrics.average_fscore, observed_metrics.average_fscore
            );
            art.write(METRICS_FILE, &metrics.to_json())?;
            art.write(OBSERVED_METRICS_FILE, &observed_metrics.to_json())?;
            if opts.metrics_csv {
                art.write(METRICS_CSV_FILE, &metrics.to_csv())?;
            }
            res.metrics = Some(metrics);
            res.observed_metrics = Some(observed_metrics);
        } else if stop == Stage::Eval {
            info!("no ground truth configured; skipping evaluation");
        }
        res.assignment = Some(assignment);
        res.observed = Some(observed);
    }
    res.partition = Some(part);
    res.tensors = Some(tensors);
    res.adjacency = Some(adj);
    res.completion = Some(state);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_planted, GenConfig};

    fn planted(dir: &Path) -> PipelineConfig {
        let gen = GenConfig {
            num_images: 60,
            num_users: 12,
            num_tags: 12,
            num_clusters: 3,
            tags_per_cluster: 4,
            ..GenConfig::default()
        };
        generate_planted(&gen).unwrap().write(dir).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.apply_overrides(&[
            format!("data={}", dir.display()),
            "c_i=3".into(),
            "c_u=3".into(),
            "m_c=4".into(),
            "max_iters=200".into(),
        ])
        .unwrap();
        cfg
    }

    #[test]
    fn stages_and_cache() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = planted(tmp.path());
        let out = tmp.path().join("out");
        let opts = RunOptions {
            out_dir: Some(out.clone()),
            cache: true,
            ..RunOptions::default()
        };
        let first = run(&cfg, &opts).unwrap();
        assert!(!first.cache_hit);
        let metrics = first.metrics.unwrap();
        assert!((0.0..=1.0).contains(&metrics.average_fscore));
        let bytes = fs::read(out.join(RETAGGED_FILE)).unwrap();
        let second = run(&cfg, &opts).unwrap();
        assert!(second.cache_hit);
        assert_eq!(fs::read(out.join(RETAGGED_FILE)).unwrap(), bytes);
        let names: Vec<Stage> = first.timings.iter().map(|(s, _)| *s).collect();
        assert_eq!(
            names,
            [Stage::Load, Stage::Anchors, Stage::Graphs, Stage::Complete, Stage::Assign, Stage::Eval]
        );
    }

    #[test]
    fn failure_names_stage_and_cleans_up() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = planted(tmp.path());
        let out = tmp.path().join("out");
        cfg.set("features", tmp.path().join("missing.tsv").to_str().unwrap()).unwrap();
        let opts = RunOptions {
            out_dir: Some(out.clone()),
            ..RunOptions::default()
        };
        let err = run(&cfg, &opts).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("load") && msg.contains("missing.tsv"), "{msg}");
        assert!(!out.join(CONFIG_FILE).exists());
    }

    #[test]
    fn stop_after_graphs() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = planted(tmp.path());
        let out = tmp.path().join("out");
        let opts = RunOptions {
            out_dir: Some(out.clone()),
            stop_after: Stage::Graphs,
            dump_matrices: true,
            ..RunOptions::default()
        };
        let res = run(&cfg, &opts).unwrap();
        assert!(res.completion.is_none());
        for name in crate::graph::MATRIX_FILES {
            assert!(out.join(name).exists());
        }
        assert!(!out.join(TRACE_FILE).exists());
    }
}
