use std::path::Path;
use std::process::{Command, Output};

use issp_core::checkpoint::Checkpoint;
use issp_core::config::RunConfig;
use issp_core::metrics::parse_metrics_csv;
use issp_core::pruning::{Method, TrainState};

fn issp(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_issp"));
    cmd.args(args).env_remove("ISSP_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Short desk-model run into `dir`.
fn quick_train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--k-p", "10", "--k", "20", "--synthetic", "8", "--progress", "0", "--output"];
    args.push(dir.to_str().unwrap());
    args.extend_from_slice(extra);
    issp(&args, &[])
}

fn resolved(dir: &Path) -> RunConfig {
    RunConfig::load(dir.join("config.resolved")).unwrap()
}

#[test]
fn train_at_r_zero_writes_artifacts_without_zeros() {
    let tmp = tempfile::tempdir().unwrap();
    let out = quick_train(tmp.path(), &["--method", "issp", "--r", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["final.ckpt", "metrics.csv", "config.resolved"] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let rows = parse_metrics_csv(&std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 20 * 7);
    assert!(rows.iter().all(|r| r.zero_fraction == 0.0));
    let ckpt = Checkpoint::load(tmp.path().join("final.ckpt")).unwrap();
    assert_eq!(ckpt.state.k, 20);
    assert!(ckpt.state.masks.frozen);
}

#[test]
fn missing_manifest_exits_3_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere").join("images.txt");
    let run = tmp.path().join("run");
    let out = issp(&["train", "--manifest", missing.to_str().unwrap(), "--output", run.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains(missing.to_str().unwrap()), "{}", stderr(&out));
    assert!(!tmp.path().join("run").join("final.ckpt").exists());
}

#[test]
fn flags_override_environment_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.json");
    std::fs::write(
        &cfg_path,
        r#"{"seed": 7, "prune": {"method": "scratch", "r": 0.5, "alpha": 0.8, "k_p": 10, "k_ft": 10}, "schedule": {"k": 20}, "data": {"synthetic": 8}}"#,
    )
    .unwrap();
    let dir = tmp.path().join("a");
    let base = ["train", "--config", cfg_path.to_str().unwrap(), "--progress", "0", "--output", dir.to_str().unwrap()];

    let out = issp(&base, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let c = resolved(&dir);
    assert_eq!((c.seed, c.prune.method, c.prune.r, c.prune.alpha), (7, Method::Scratch, 0.5, 0.8));
    // untouched fields come from the desk preset
    assert_eq!(c.model, RunConfig::desk().model);

    let out = issp(&base, &[("ISSP_SEED", "11")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(resolved(&dir).seed, 11);

    let mut args = base.to_vec();
    args.extend_from_slice(&["--method", "issp", "--r", "0.95", "--alpha", "0.95", "--seed", "3"]);
    let out = issp(&args, &[("ISSP_SEED", "11")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let c = resolved(&dir);
    assert_eq!((c.seed, c.prune.method, c.prune.r, c.prune.alpha), (3, Method::Issp, 0.95, 0.95));
}

#[test]
fn k_flags_adjust_the_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--synthetic", "8", "--progress", "0", "--output", dir];
        args.extend_from_slice(extra);
        issp(&args, &[])
    };
    let out = train(&["--k-p", "4", "--k", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let c = resolved(tmp.path());
    assert_eq!((c.prune.k_p, c.prune.k_ft, c.schedule.k), (4, 5, 9));
    // --k-p alone keeps the desk fine-tune length
    let desk = RunConfig::desk();
    let c = RunConfig::from_json(&format!(r#"{{"prune": {{"k_p": 3}}, "schedule": {{"k": {}}}}}"#, 3 + desk.prune.k_ft)).unwrap();
    assert_eq!(c.prune.k_ft, desk.prune.k_ft);
    assert_eq!(code(&train(&["--k-p", "30", "--k", "9"])), 2);
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"prune": {"alpha": 1.5}}"#).unwrap();
    let out = issp(&["train", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&issp(&["train", "--config", bad.to_str().unwrap()], &[])), 2);
    std::fs::write(&bad, r#"{"schedule": {"k": 5}}"#).unwrap();
    assert_eq!(code(&issp(&["train", "--config", bad.to_str().unwrap()], &[])), 2);
    assert_eq!(code(&issp(&["train", "--method", "magic"], &[])), 2);
    assert_eq!(code(&issp(&["train"], &[("ISSP_SEED", "minus one")])), 2);
}

#[test]
fn eval_prints_inf_for_a_perfect_reconstruction() {
    let tmp = tempfile::tempdir().unwrap();
    // every weight pruned and no training: the model outputs black
    let out = issp(
        &["train", "--method", "l1_oneshot", "--r", "1", "--k-p", "0", "--k", "0", "--synthetic", "8", "--output", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut ppm = b"P6\n24 24\n255\n".to_vec();
    ppm.resize(ppm.len() + 24 * 24 * 3, 0);
    std::fs::write(tmp.path().join("black.ppm"), ppm).unwrap();
    std::fs::write(tmp.path().join("set.txt"), "black.ppm\n").unwrap();
    let ckpt = tmp.path().join("final.ckpt");
    let set = tmp.path().join("set.txt");
    let out = issp(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", set.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    let mean = table.lines().find(|l| l.starts_with("mean")).unwrap();
    assert!(mean.contains("inf"), "{table}");
    let csv = std::fs::read_to_string(tmp.path().join("eval.csv")).unwrap();
    assert!(csv.contains("black.ppm,inf,1\n"), "{csv}");
}

#[test]
fn eval_is_deterministic_and_rejects_damaged_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&quick_train(tmp.path(), &[])), 0);
    let ckpt = tmp.path().join("final.ckpt");
    let run = |csv: &str| {
        let out = issp(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--csv", tmp.path().join(csv).to_str().unwrap()], &[]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::read(tmp.path().join(csv)).unwrap()
    };
    assert_eq!(run("one.csv"), run("two.csv"));

    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = tmp.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&issp(&["eval", "--checkpoint", cut.to_str().unwrap()], &[])), 4);
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xff;
    std::fs::write(&cut, flipped).unwrap();
    assert_eq!(code(&issp(&["eval", "--checkpoint", cut.to_str().unwrap()], &[])), 4);
    assert_eq!(code(&issp(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--scale", "3"], &[])), 2);
}

#[test]
fn export_then_bench_passes_correctness() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&quick_train(tmp.path(), &["--method", "issp", "--r", "0.95"])), 0);
    let ckpt = tmp.path().join("final.ckpt");
    let out = issp(&["export-sparse", "--checkpoint", ckpt.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = tmp.path().join("sparse.bin");
    assert_eq!(&std::fs::read(&model).unwrap()[..6], b"ISSPs1");

    let report = tmp.path().join("bench.json");
    let out = issp(&["bench", "--model", model.to_str().unwrap(), "--reps", "3", "--report", report.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["dense_ns", "nnz_fraction", "sparse_ns", "speedup"]);
    let nnz = v["nnz_fraction"].as_f64().unwrap();
    assert!(nnz > 0.04 && nnz < 0.06, "{nnz}");

    assert_eq!(code(&issp(&["bench", "--model", model.to_str().unwrap(), "--reps", "1"], &[])), 2);
    assert_eq!(code(&issp(&["bench", "--matmul", "64", "--reps", "2"], &[])), 2);
}

#[test]
fn export_of_an_unfrozen_checkpoint_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::desk();
    cfg.prune.method = Method::Issp;
    let state = TrainState::init(&cfg).unwrap();
    assert!(!state.masks.frozen);
    let ckpt = tmp.path().join("mid.ckpt");
    Checkpoint { config: cfg, state }.save(&ckpt).unwrap();
    let out = issp(&["export-sparse", "--checkpoint", ckpt.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(!tmp.path().join("sparse.bin").exists());
}

#[test]
fn gradcheck_passes_and_catches_a_broken_conv_backward() {
    let out = issp(&["gradcheck"], &[]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let out = issp(&["gradcheck", "--inject-fault", "conv2d"], &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("worst layer conv2d"), "{}", stderr(&out));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(code(&quick_train(&first, &["--method", "iht", "--r", "0.9"])), 0);
    let snapshot = |dir: &Path| {
        ["final.ckpt", "metrics.csv", "config.resolved"].map(|f| std::fs::read(dir.join(f)).unwrap())
    };
    let before = snapshot(&first);
    let out = issp(&["train", "--config", first.join("config.resolved").to_str().unwrap(), "--progress", "0"], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(before, snapshot(&first));
}
