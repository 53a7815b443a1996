use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn calprop(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calprop")).arg("--out-dir").arg(out).args(args).output().expect("binary runs")
}

fn ok(output: Output) -> Output {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    output
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(calprop(&sim, &["--seed", "4", "simulate", "--kind", "drug", "--variant", "c", "--n", "3000"]));
    let data = sim.join("data.csv");
    assert!(fs::read_to_string(&data).unwrap().starts_with("x1,x2,x3,t,y\n"));
    assert_eq!(json(&sim.join("provenance.json"))["seed"], 4);

    let est = dir.path().join("est");
    ok(calprop(&est, &["estimate", "--data", data.to_str().unwrap(), "--estimator", "aipw", "--folds", "5"]));
    let record = json(&est.join("estimate.json"));
    assert_eq!(record["estimator"], "aipw");
    assert_eq!(record["n"], 3000);
    assert!(record["ate"].as_f64().unwrap().is_finite());
    assert!(record["propensity_min"].as_f64().unwrap() >= 0.01);
    assert!(record["ece_after"].is_number());

    let none = dir.path().join("none");
    ok(calprop(&none, &["estimate", "--data", data.to_str().unwrap(), "--recal", "none", "--folds", "5"]));
    assert!(json(&none.join("estimate.json"))["ece_after"].is_null());
}

#[test]
fn fit_round_trip_matches_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    ok(calprop(dir.path(), &["simulate", "--kind", "binary", "--n", "4000"]));
    let data = dir.path().join("data.csv");
    let fit = dir.path().join("fit");
    ok(calprop(&fit, &["fit", "--data", data.to_str().unwrap(), "--base", "nb", "--recal", "sigmoid"]));
    let model = json(&fit.join("model.json"));
    assert_eq!(model["base"]["kind"], "naive_bayes");
    assert_eq!(model["recalibrator"]["kind"], "sigmoid");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(calprop(out, &["estimate", "--data", data.to_str().unwrap(), "--model", fit.join("model.json").to_str().unwrap()]));
    }
    assert_eq!(fs::read(a.join("estimate.json")).unwrap(), fs::read(b.join("estimate.json")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["--seed", "7", "simulate", "--kind", "gwas", "--n", "200", "--m", "12", "--causal-frac", "0.1"],
        &["bench-drug", "--variants", "A,D", "--seeds", "1,2", "--n", "1500", "--folds", "3"],
        &["bench-gwas", "--n", "300", "--m", "8", "--causal-frac", "0.2", "--seeds", "1,2", "--folds", "3", "--threads", "2"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let first = dir.path().join(format!("{k}a"));
        let second = dir.path().join(format!("{k}b"));
        ok(calprop(&first, args));
        ok(calprop(&second, args));
        let mut csvs: Vec<_> = fs::read_dir(&first).unwrap().map(|e| e.unwrap().file_name()).filter(|f| f.to_string_lossy().ends_with(".csv")).collect();
        csvs.sort();
        assert!(!csvs.is_empty());
        for f in csvs {
            assert_eq!(fs::read(first.join(&f)).unwrap(), fs::read(second.join(&f)).unwrap(), "{f:?} differs");
        }
    }
    let table = fs::read_to_string(dir.path().join("2a/bench_gwas.csv")).unwrap();
    let methods: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["naive", "pca", "iptw_plain", "iptw_calib", "aipw_plain", "aipw_calib", "delta_ece"]);
    assert!(json(&dir.path().join("2a/timing.json"))["snps_per_sec"]["naive"].is_number());
    let drug = fs::read_to_string(dir.path().join("1a/bench_drug.csv")).unwrap();
    assert_eq!(drug.lines().count(), 3);
}

#[test]
fn reliability_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(calprop(dir.path(), &["simulate", "--kind", "drug", "--variant", "a", "--n", "3000"]));
    let out = dir.path().join("rel");
    ok(calprop(&out, &["reliability", "--data", dir.path().join("data.csv").to_str().unwrap(), "--folds", "4"]));
    for f in ["reliability_plain.csv", "reliability_calibrated.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with("bin_lo,bin_hi,count,mean_pred,mean_obs\n"));
        assert_eq!(text.lines().count(), 11);
    }
    let hist = fs::read_to_string(out.join("propensity_histogram.csv")).unwrap();
    let below_eps: u64 = hist
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() <= 0.01)
        .map(|l| l.split(',').nth(3).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(below_eps, 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| calprop(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["bench-drug", "--seeds", "1"]), 2);
    assert_eq!(code(&["bench-gwas", "--methods", "lmm"]), 2);
    assert_eq!(code(&["simulate", "--kind", "gwas", "--variant", "a"]), 2);
    assert_eq!(code(&["estimate", "--data", "/definitely/missing.csv"]), 3);
    fs::write(dir.path().join("bad.csv"), "x,t,y\n1,2,3\n").unwrap();
    assert_eq!(code(&["estimate", "--data", dir.path().join("bad.csv").to_str().unwrap()]), 3);
    fs::write(dir.path().join("treated.csv"), "x,t,y\n1,1,3\n2,1,4\n3,1,5\n4,1,6\n").unwrap();
    assert_eq!(code(&["estimate", "--data", dir.path().join("treated.csv").to_str().unwrap(), "--folds", "2"]), 3);
}
