use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use r4t_cli::stages::{pipeline_files, DENOISER};

const TINY: &str = "\
seed = 3
world.dim = 8
world.clusters = 4
world.items_per_cluster = 20
world.query_count = 8
fanout.k = 3
fanout.n_per_subquery = 5
grpo.iterations = 3
grpo.group_size = 4
grpo.queries_per_batch = 2
synth.samples_per_query = 2
synth.l = 4
diffusion.width = 16
diffusion.depth = 1
diffusion.total_steps = 20
diffusion.warmup_steps = 2
diffusion.batch_size = 4
diffusion.sample_steps = 4
eval.runs = 2
eval.best_of_n = 2
bench.batch_sizes = 2,4
bench.call_delay = 0.001
";

fn r4t(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r4t"))
        .arg("--config")
        .arg(dir.join("tiny.conf"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_usage_errors() {
    let help = Command::new(env!("CARGO_BIN_EXE_r4t")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["world-gen", "train-folm", "synth", "train-diffusion", "sample", "eval", "bench", "pipeline"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
    let bad = Command::new(env!("CARGO_BIN_EXE_r4t")).arg("frobnicate").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let missing = Command::new(env!("CARGO_BIN_EXE_r4t")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = setup();
    fs::write(dir.path().join("tiny.conf"), "seed = 1\n# ok\nworld.size = 3\n").unwrap();
    let o = r4t(dir.path(), &["world-gen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(stderr(&o).contains("world.size"));

    let o = Command::new(env!("CARGO_BIN_EXE_r4t"))
        .args(["--config", "/nonexistent/r4t.conf", "world-gen"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_prerequisites_name_their_producer() {
    let dir = setup();
    let o = r4t(dir.path(), &["train-folm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("world-gen"), "{}", stderr(&o));

    assert!(r4t(dir.path(), &["world-gen"]).status.success());
    let o = r4t(dir.path(), &["synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train-folm"));

    assert!(r4t(dir.path(), &["train-folm"]).status.success());
    let o = r4t(dir.path(), &["train-diffusion"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`r4t synth`"));

    let o = r4t(dir.path(), &["eval"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train-diffusion"), "{}", stderr(&o));
    let o = r4t(dir.path(), &["sample"]);
    assert!(stderr(&o).contains("train-diffusion"));
}

#[test]
fn stages_run_one_by_one_and_bench_writes_plots() {
    let dir = setup();
    for sub in ["world-gen", "train-folm", "synth", "train-diffusion", "sample", "eval", "bench"] {
        let o = r4t(dir.path(), &[sub]);
        assert!(o.status.success(), "{sub}: {}", stderr(&o));
    }
    let out = dir.path().join("out");
    for f in pipeline_files().into_iter().chain(["latency.csv", "latency.svg"]) {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.join("latency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("seed 3"));
    assert!(summary.contains("config digest"));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    for arm in ["no-fan-out", "zero-shot", "best-of-n", "folm", "diffusion"] {
        assert!(metrics.contains(&format!("{arm},mean,")), "{arm}");
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("latency.svg "));
}

#[test]
fn eval_refuses_foreign_digest_unless_forced() {
    let dir = setup();
    assert!(r4t(dir.path(), &["pipeline"]).status.success());
    let o = r4t(dir.path(), &["--seed", "4", "eval"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("digest"), "{}", stderr(&o));
    assert!(stderr(&o).contains("--force"));
    let o = r4t(dir.path(), &["--seed", "4", "--force", "eval"]);
    assert!(o.status.success(), "{}", stderr(&o));

    // same values, different spelling: same digest
    fs::write(dir.path().join("tiny.conf"), format!("# respelled\n{}", TINY.replace(" = ", "="))).unwrap();
    assert!(r4t(dir.path(), &["eval"]).status.success());

    // a hand-edited artifact no longer matches its recorded hash
    let den = dir.path().join("out").join(DENOISER);
    let mut bytes = fs::read(&den).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&den, &bytes).unwrap();
    assert_eq!(r4t(dir.path(), &["eval"]).status.code(), Some(1));
}

#[test]
fn corrupt_artifacts_exit_2() {
    let dir = setup();
    assert!(r4t(dir.path(), &["pipeline"]).status.success());
    let den = dir.path().join("out").join(DENOISER);
    let bytes = fs::read(&den).unwrap();
    fs::write(&den, &bytes[..bytes.len() / 2]).unwrap();
    let o = r4t(dir.path(), &["--force", "eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("format error at byte"), "{}", stderr(&o));

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    fs::write(&den, &bad).unwrap();
    let o = r4t(dir.path(), &["sample"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("byte 0"));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = setup();
    let b = setup();
    assert!(r4t(a.path(), &["pipeline"]).status.success());
    assert!(r4t(b.path(), &["--serial", "pipeline"]).status.success());
    for f in pipeline_files() {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let c = setup();
    assert!(r4t(c.path(), &["--seed", "5", "pipeline"]).status.success());
    let x = fs::read(a.path().join("out").join(DENOISER)).unwrap();
    let y = fs::read(c.path().join("out").join(DENOISER)).unwrap();
    assert_ne!(x, y);
}
