use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use m2mrf::net::{MiniFusionNet, Variant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_m2mrf"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("M2MRF_THREADS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, relative path and bytes, in sorted order.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

fn gen(dir: &Path, n: usize, size: usize) {
    let o = run(&["gen", "--n", &n.to_string(), "--size", &size.to_string(), "--seed", "0", "--out", path(dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_writes_samples_and_manifest_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, 8, 64);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n"], 8);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 8);
    assert!(a.join("sample_0007/image.m2mt").exists());
    assert!(a.join("sample_0007/mask_MA.pgm").exists());
    assert!(a.join("run_config.json").exists());

    gen(&b, 8, 64);
    let strip = |s: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        s.into_iter().filter(|(p, _)| p != Path::new("run_config.json")).collect()
    };
    assert_eq!(strip(snapshot(&a)), strip(snapshot(&b)));
}

#[test]
fn gen_without_out_is_a_usage_error() {
    let o = run(&["gen", "--n", "2", "--size", "16"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--variant", "E", "--iters", "1", "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown variant"));
}

#[test]
fn train_without_dataset_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--variant", "A", "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_iterations_save_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 2, 16);
    let out = tmp.path().join("run");
    let o = run(&[
        "train", "--variant", "D", "--iters", "0", "--seed", "3", "--dataset", path(&data), "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = MiniFusionNet::load(out.join("checkpoint")).unwrap();
    let fresh = MiniFusionNet::build(Variant::D.net_config(), 3).unwrap();
    assert_eq!(saved.store(), fresh.store());
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap(), "iter,lr,loss\n");
}

#[test]
fn train_writes_history_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 2, 16);
    let out = tmp.path().join("run");
    let o = run(&[
        "train", "--variant", "baseline-sc-bl", "--iters", "2", "--dataset", path(&data), "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<_> = history.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,1e-2,"), "{}", lines[1]);

    let cfg: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["variant"], "baseline-sc-bl");
    assert_eq!(cfg["net"]["down"], "stride-conv");
    assert_eq!(cfg["net"]["up"], "bilinear");
    assert_eq!(cfg["train"]["iters"], 2);

    // replaying the resolved config reproduces the run
    let again = tmp.path().join("again");
    let o = run(&["train", "--config", path(&out.join("run_config.json")), "--out", path(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(again.join("history.csv")).unwrap(), history.as_bytes());
}

fn write_oracle(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("net.json"), r#"{"kind": "oracle"}"#).unwrap();
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 3, 32);
    let ckpt = tmp.path().join("oracle");
    write_oracle(&ckpt);
    let out = tmp.path().join("eval");
    let o = run(&["eval", "--checkpoint", path(&ckpt), "--dataset", path(&data), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<_> = csv.lines().collect();
    assert_eq!(rows[0], "class,AUPR,F,IoU");
    let names: Vec<_> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, vec!["EX", "HE", "SE", "MA", "mean"]);
    for row in &rows[1..] {
        assert!(row.ends_with(",1.000000,1.000000,1.000000"), "{row}");
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["means"]["mIoU"], 1.0);
    assert!(out.join("predictions/sample_0002/pred_SE.pgm").exists());
    assert!(out.join("run_config.json").exists());
}

#[test]
fn eval_is_repeatable_and_thread_count_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 3, 16);
    let train_out = tmp.path().join("run");
    let o = run(&["train", "--variant", "B", "--iters", "1", "--dataset", path(&data), "--out", path(&train_out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = train_out.join("checkpoint");
    let eval = |name: &str, threads: Option<&str>| {
        let out = tmp.path().join(name);
        let mut cmd = bin();
        cmd.args(["eval", "--checkpoint", path(&ckpt), "--dataset", path(&data), "--out", path(&out)]);
        match threads {
            Some(t) => cmd.env("M2MRF_THREADS", t),
            None => cmd.env_remove("M2MRF_THREADS"),
        };
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out.join("report.csv")).unwrap(), fs::read(out.join("report.json")).unwrap())
    };
    let first = eval("e1", None);
    assert_eq!(first, eval("e2", None));
    assert_eq!(first, eval("e3", Some("3")));
}

#[test]
fn eval_reports_class_count_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 1, 16);
    let cfg = tmp.path().join("cfg.json");
    let mut net = Variant::A.net_config();
    net.num_classes = 3;
    fs::write(&cfg, serde_json::json!({ "net": net }).to_string()).unwrap();
    let run_dir = tmp.path().join("run");
    let o = run(&[
        "train", "--config", path(&cfg), "--iters", "0", "--dataset", path(&data), "--out", path(&run_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "eval",
        "--checkpoint",
        path(&run_dir.join("checkpoint")),
        "--dataset",
        path(&data),
        "--out",
        path(&tmp.path().join("eval")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape error"));
}

#[test]
fn verify_params_prints_the_default_count() {
    let o = run(&["verify", "params"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("PASS params one-step δ=1/2: 5632"), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn verify_oracle_and_gradcheck_pass() {
    for suite in ["oracle", "gradcheck", "shapes"] {
        let o = run(&["verify", suite]);
        let out = stdout(&o);
        assert!(o.status.success(), "{suite}: {out}");
        assert!(out.contains("all checks passed"), "{out}");
    }
}

#[test]
fn verify_rejects_unknown_suite() {
    assert_eq!(run(&["verify", "everything"]).status.code(), Some(2));
}
