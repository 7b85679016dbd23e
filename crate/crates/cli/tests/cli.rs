use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bicnet_core::simulate::SimScenario;

fn bicnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bicnet"))
        .args(args)
        .env_remove("BICNET_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scenario(dir: &Path, mutate: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut sc = SimScenario::small_scale(40, 3);
    sc.subjects = 3;
    sc.fractions = vec![0.6, 0.8, 1.0];
    let mut v = serde_json::to_value(&sc).unwrap();
    mutate(&mut v);
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn simulate(dir: &Path) -> PathBuf {
    let sc = scenario(dir, |_| {});
    let data = dir.join("data");
    let o = bicnet(&["simulate", "--config", p(&sc), "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    data.join("manifest.json")
}

fn run_config(dir: &Path, manifest: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "manifest": manifest,
        "k": 2,
        "iterations": 40,
        "burn_in": 10,
        "seed": 5
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("run.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (dir_bytes(a), dir_bytes(b));
    let names = |f: &[(PathBuf, Vec<u8>)]| f.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    assert_eq!(names(&fa), names(&fb));
    let differing: Vec<_> = fa.iter().zip(&fb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.clone()).collect();
    assert!(differing.is_empty(), "files differ: {differing:?}");
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = scenario(tmp.path(), |_| {});
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = bicnet(&["simulate", "--config", p(&sc), "--out", p(d), "--seed", "11"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(dir_bytes(&a).len(), 3 * 2 + 3);
    assert_same_tree(&a, &b);
    let csv = fs::read_to_string(a.join("rest_s1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 40);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 6);
}

#[test]
fn invalid_fraction_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = scenario(tmp.path(), |v| v["fractions"][0] = serde_json::json!(1.5));
    let o = bicnet(&["simulate", "--config", p(&sc), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fractions"), "{}", stderr(&o));
}

#[test]
fn fit_summarize_compare_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = simulate(tmp.path());
    let cfg = run_config(tmp.path(), &manifest, serde_json::json!({"chains": 2}));
    let a = tmp.path().join("fit_a");
    let b = tmp.path().join("fit_b");
    for d in [&a, &b] {
        let o = bicnet(&["fit", "--config", p(&cfg), "--out", p(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_same_tree(&a, &b);
    assert!(a.join("chain1/lambda.bin").exists());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seed"], 5);
    assert_eq!(meta["stored_draws_per_chain"], serde_json::json!([30, 30]));

    let sum = tmp.path().join("sum");
    let o = bicnet(&["summarize", "--store", p(&a), "--threshold", "0.999", "--out", p(&sum)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let map = fs::read_to_string(sum.join("group_map.csv")).unwrap();
    assert!(map.starts_with("region,k0,k1"));
    assert!(sum.join("task_effects.csv").exists());
    let median = fs::read_to_string(sum.join("lambda_summary.csv")).unwrap();
    let o = bicnet(&["summarize", "--store", p(&a), "--estimator", "mean", "--out", p(&sum)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mean = fs::read_to_string(sum.join("lambda_summary.csv")).unwrap();
    assert_ne!(median, mean);
    let o = bicnet(&["summarize", "--store", p(&a), "--estimator", "mode"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bicnet(&["compare", p(&sum.join("pi0_summary.csv")), p(&sum.join("pi0_summary.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1.0000 ± 0.0000"));
}

#[test]
fn empty_store_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bicnet(&["summarize", "--store", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_disjoint_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "region,k0,k1\n0,1,0\n1,1,0\n2,0,0\n3,0,1\n").unwrap();
    fs::write(&b, "region,k0,k1\n0,0,0\n1,0,0\n2,1,0\n3,0,0\n").unwrap();
    let o = bicnet(&["compare", p(&a), p(&b), "--out", p(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.0000 ± 0.0000"));
    assert!(tmp.path().join("comparison.json").exists());
}

#[test]
fn select_k_single_value_and_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = simulate(tmp.path());
    let cfg = run_config(tmp.path(), &manifest, serde_json::json!({}));
    let out = tmp.path().join("k");
    let o = bicnet(&["select-k", "--config", p(&cfg), "--ks", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("k_scores.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    let o = bicnet(&["select-k", "--config", p(&cfg), "--ks", "2,6"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("K < N required"), "{}", stderr(&o));
}

#[test]
fn regress_requires_rest_and_reads_behavior() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = simulate(tmp.path());
    let cfg = run_config(tmp.path(), &manifest, serde_json::json!({}));
    let fit_dir = tmp.path().join("fit");
    let o = bicnet(&["fit", "--config", p(&cfg), "--out", p(&fit_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let behavior = tmp.path().join("behavior.csv");
    fs::write(&behavior, "subject,score\ns1,1.0\ns2,1.0\ns3,1.0\n").unwrap();
    let args = [
        "regress", "--store", p(&fit_dir), "--behavior", p(&behavior), "--measure", "score", "--task", "task1",
        "--sweeps", "600", "--burn-in", "100",
    ];
    let o = bicnet(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["associated"], serde_json::json!([false, false]));

    // The same store without a rest condition.
    let meta_path = fit_dir.join("metadata.json");
    let mut meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
    meta["has_rest"] = serde_json::json!(false);
    fs::write(&meta_path, meta.to_string()).unwrap();
    let o = bicnet(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("task effects require rest"), "{}", stderr(&o));
}

#[test]
fn thread_count_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = simulate(tmp.path());
    let cfg = run_config(tmp.path(), &manifest, serde_json::json!({}));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = Command::new(env!("CARGO_BIN_EXE_bicnet"))
        .args(["fit", "--config", p(&cfg), "--out", p(&a)])
        .env("BICNET_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bicnet(&["fit", "--config", p(&cfg), "--out", p(&b), "--threads", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_same_tree(&a, &b);
}

#[test]
fn missing_config_is_a_validation_error() {
    let o = bicnet(&["fit"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bicnet(&["fit", "--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(2));
}
