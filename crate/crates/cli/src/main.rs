use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use sugartc::assign::read_rankings;
use sugartc::config::PipelineConfig;
use sugartc::eval::{evaluate, ApRMode, GroundTruth};
use sugartc::pipeline::{run, RunOptions, Stage};
use sugartc::synth::{generate_planted, GenConfig};
use sugartc::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Social image retagging by anchor-unit graph regularized tensor completion.
#[derive(Parser, Debug)]
#[command(name = "sugar-tc", version)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted synthetic dataset.
    Synth(SynthArgs),
    /// Run the full pipeline.
    Run(RunArgs),
    /// Select anchor units and write anchors.tsv.
    Anchors(RunArgs),
    /// Build the adjacency matrices and dump them.
    Graphs(RunArgs),
    /// Solve the completion problem and write trace.csv.
    Complete(RunArgs),
    /// Assign tags and write retagged.tsv.
    Assign(RunArgs),
    /// Score an existing prediction file against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    images: usize,
    #[arg(long, default_value_t = 40)]
    users: usize,
    #[arg(long, default_value_t = 30)]
    tags: usize,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 10)]
    tags_per_cluster: usize,
    /// Spurious pairs as a fraction of true pairs.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Fraction of true pairs deleted.
    #[arg(long, default_value_t = 0.3)]
    missing: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.25)]
    feature_noise: f64,
    #[arg(long, default_value_t = 3)]
    groups_per_cluster: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset directory (same as `--set data=DIR`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Stop after this stage (load, anchors, graphs, complete, assign, eval).
    #[arg(long)]
    stage: Option<Stage>,
    /// Write the five adjacency matrices.
    #[arg(long)]
    dump_matrices: bool,
    /// Write anchors.tsv.
    #[arg(long)]
    anchors_out: bool,
    /// Also write metrics.csv.
    #[arg(long)]
    metrics_csv: bool,
    /// Neither read nor write the solve cache.
    #[arg(long)]
    no_cache: bool,
    /// Print the merged configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction file (`image<TAB>tag:score,...`).
    predictions: PathBuf,
    /// Ground-truth file (`image<TAB>tag,tag,...`).
    #[arg(long)]
    gt: PathBuf,
    /// metrics.json destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    queries: Option<Vec<String>>,
    #[arg(long)]
    ap_r_mode: Option<ApRMode>,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_usage() {
        EXIT_USAGE
    } else if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, Error> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let cfg = GenConfig {
        num_tags: a.tags,
        num_images: a.images,
        num_users: a.users,
        num_clusters: a.clusters,
        tags_per_cluster: a.tags_per_cluster,
        noise_rate: a.noise,
        missing_rate: a.missing,
        feature_dim: a.feature_dim,
        feature_noise: a.feature_noise,
        groups_per_cluster: a.groups_per_cluster,
        seed: a.seed,
    };
    cfg.validate()?;
    let planted = generate_planted(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    planted.write(&a.out)?;
    info!(
        "wrote planted dataset to {}: {} deleted, {} spurious pairs",
        a.out.display(),
        planted.deleted_pairs,
        planted.spurious_pairs
    );
    Ok(())
}

fn cmd_run(a: RunArgs, default_stage: Stage) -> Result<(), Error> {
    let mut cfg = load_config(a.config.as_deref(), &a.overrides)?;
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
    }
    if a.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let stop_after = a.stage.unwrap_or(default_stage);
    let opts = RunOptions {
        out_dir: Some(a.out.clone()),
        stop_after,
        dump_matrices: a.dump_matrices || stop_after == Stage::Graphs,
        write_anchors: a.anchors_out,
        metrics_csv: a.metrics_csv,
        cache: !a.no_cache,
    };
    let res = run(&cfg, &opts)?;
    let total: f64 = res.timings.iter().map(|(_, d)| d.as_secs_f64()).sum();
    info!("done in {total:.3}s; outputs in {}", a.out.display());
    if let (Some(m), Some(o)) = (&res.metrics, &res.observed_metrics) {
        println!("average F-score {:.4} (observed tags {:.4})", m.average_fscore, o.average_fscore);
        for (c, v) in m.cutoffs.iter().zip(&m.map) {
            println!("MAP@{c} {v:.4}");
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let mut cfg = load_config(a.config.as_deref(), &a.overrides)?;
    if let Some(k) = a.k {
        cfg.assign.k = k;
        cfg.eval.k = k;
    }
    if let Some(c) = a.cutoffs {
        cfg.eval.cutoffs = c;
    }
    if let Some(q) = a.queries {
        cfg.eval.queries = q;
    }
    if let Some(m) = a.ap_r_mode {
        cfg.eval.ap_r_mode = m;
    }
    cfg.eval.validate()?;
    let pred = read_rankings(&a.predictions)?;
    let gt = GroundTruth::read(&a.gt)?;
    let report = evaluate(&pred, &gt, &cfg.eval)?;
    match &a.out {
        Some(p) => write(p, &report.to_json())?,
        None => print!("{}", report.to_json()),
    }
    if let Some(p) = &a.metrics_csv {
        write(p, &report.to_csv())?;
    }
    if a.out.is_some() {
        println!("average F-score {:.4}", report.average_fscore);
    }
    Ok(())
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("SUGAR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SUGAR_THREADS must be a positive integer, got `{v}`")))?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        warn!("could not size the worker pool: {e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a, Stage::Eval),
        Command::Anchors(a) => cmd_run(
            RunArgs {
                anchors_out: true,
                ..a
            },
            Stage::Anchors,
        ),
        Command::Graphs(a) => cmd_run(a, Stage::Graphs),
        Command::Complete(a) => cmd_run(a, Stage::Complete),
        Command::Assign(a) => cmd_run(a, Stage::Assign),
        Command::Eval(a) => cmd_eval(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
