use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sugar-tc"));
    c.arg("--log").arg("error");
    c
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, seed: u64) {
    ok(bin()
        .args(["synth", "--images", "200", "--users", "40", "--tags", "30", "--clusters", "5", "--seed"])
        .arg(seed.to_string())
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap());
}

const SMALL: &[&str] = &["--set", "c_i=5", "--set", "c_u=5", "--set", "sigma=0.5"];

fn run_in(data: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .args(extra)
        .output()
        .unwrap()
}

fn average_f(metrics: &Path) -> f64 {
    let text = fs::read_to_string(metrics).unwrap();
    let line = text.lines().find(|l| l.contains("\"average_fscore\"")).unwrap();
    line.split(':').nth(1).unwrap().trim().trim_end_matches(',').parse().unwrap()
}

#[test]
fn synth_writes_five_files_deterministically() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 7);
    synth(&b, 7);
    let names = ["triples.tsv", "features.tsv", "groups.tsv", "taxonomy.tsv", "ground_truth.tsv"];
    for n in names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    assert_eq!(fs::read_dir(&a).unwrap().count(), 5);
}

#[test]
fn invalid_noise_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = bin().args(["synth", "--noise", "1.5", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["run", "--set", "no_such_key=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().arg("run").env("SUGAR_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn planted_run_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 7);
    let out = tmp.path().join("out");
    let res = ok(run_in(&data, &out, &["--metrics-csv", "--anchors-out"]));
    assert!(String::from_utf8_lossy(&res.stdout).contains("average F-score"));
    for f in ["metrics.json", "metrics.csv", "retagged.tsv", "trace.csv", "anchors.tsv", "config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let trace: Vec<f64> = fs::read_to_string(out.join("trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(trace.len() >= 2);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} -> {}", w[0], w[1]);
    }

    // Standalone re-scoring agrees with the run, and the observed tags score lower.
    let rescored = tmp.path().join("rescored.json");
    ok(bin()
        .arg("eval")
        .arg(out.join("retagged.tsv"))
        .arg("--gt")
        .arg(data.join("ground_truth.tsv"))
        .arg("--out")
        .arg(&rescored)
        .output()
        .unwrap());
    assert_eq!(fs::read(&rescored).unwrap(), fs::read(out.join("metrics.json")).unwrap());
    let observed = tmp.path().join("observed.json");
    ok(bin()
        .arg("eval")
        .arg(out.join("observed.tsv"))
        .arg("--gt")
        .arg(data.join("ground_truth.tsv"))
        .arg("--out")
        .arg(&observed)
        .output()
        .unwrap());
    assert!(average_f(&observed) < average_f(&rescored));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(run_in(&data, &a, &["--no-cache"]));

    // print-config -> file -> rerun reproduces the first run.
    let printed = ok(bin()
        .arg("run")
        .arg("--data")
        .arg(&data)
        .args(SMALL)
        .arg("--print-config")
        .output()
        .unwrap());
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, &printed.stdout).unwrap();
    ok(bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .arg("--no-cache")
        .output()
        .unwrap());
    for f in ["retagged.tsv", "metrics.json", "trace.csv", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(!a.join("cache").exists());
}

#[test]
fn missing_features_file_names_path() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1);
    fs::remove_file(data.join("features.tsv")).unwrap();
    let out = tmp.path().join("out");
    let res = run_in(&data, &out, &[]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("features.tsv") && err.contains("load"), "{err}");
    assert!(!out.join("config.txt").exists(), "partial outputs removed");
}

#[test]
fn graphs_stage_dumps_matrices_and_stops() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let out = tmp.path().join("out");
    ok(run_in(&data, &out, &["--stage", "graphs", "--dump-matrices"]));
    for f in ["I_m.txt", "U_m.txt", "W_I.txt", "W_U.txt", "T.txt"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        let header: Vec<usize> = text.lines().next().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
        assert_eq!(header.len(), 3);
        assert_eq!(text.lines().count(), header[2] + 1, "{f}");
    }
    assert!(!out.join("trace.csv").exists());
    assert!(!out.join("retagged.tsv").exists());
}

#[test]
fn standalone_stage_commands() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4);
    let stage = |cmd: &str, out: &str| {
        ok(bin()
            .arg(cmd)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(tmp.path().join(out))
            .args(SMALL)
            .output()
            .unwrap())
    };
    stage("anchors", "o1");
    assert!(tmp.path().join("o1/anchors.tsv").exists());
    stage("complete", "o2");
    assert!(tmp.path().join("o2/trace.csv").exists());
    assert!(!tmp.path().join("o2/retagged.tsv").exists());
    stage("assign", "o2");
    assert!(tmp.path().join("o2/retagged.tsv").exists());
    assert!(!tmp.path().join("o2/metrics.json").exists());
}

#[test]
fn eval_identity_and_empty() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 5);
    let gt = data.join("ground_truth.tsv");
    let res = ok(bin().arg("eval").arg(&gt).arg("--gt").arg(&gt).output().unwrap());
    let json = String::from_utf8(res.stdout).unwrap();
    assert!(json.contains("\"average_fscore\": 1.0"), "{json}");

    let empty = tmp.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let m = tmp.path().join("m.json");
    let res = ok(Command::new(env!("CARGO_BIN_EXE_sugar-tc"))
        .args(["--log", "warn", "eval"])
        .arg(&empty)
        .arg("--gt")
        .arg(&gt)
        .arg("--out")
        .arg(&m)
        .output()
        .unwrap());
    assert_eq!(average_f(&m), 0.0);
    assert!(String::from_utf8_lossy(&res.stderr).contains("WARN"));
}
