use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_msm-mediate");

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).env_remove("MSM_MEDIATE_THREADS").args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Data lines of a CSV output, provenance comments removed.
fn rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let r = rows(path);
    let j = r[0].split(',').position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    r[1..].iter().map(|l| l.split(',').nth(j).unwrap().to_string()).collect()
}

fn simulate(dir: &Path, scen: &str, n: &str, level: &str, seed: &str) {
    let s = scenario(scen);
    ok(dir, &["simulate", "--scenario", s.to_str().unwrap(), "--n", n, "--semicompeting", level, "--seed", seed]);
}

#[test]
fn simulate_is_reproducible_and_documented() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "s1.kv", "500", "0.4", "7");
    let first = fs::read(dir.path().join("simulated.csv")).unwrap();
    simulate(dir.path(), "s1.kv", "500", "0.4", "7");
    assert_eq!(first, fs::read(dir.path().join("simulated.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    for key in ["# tool: msm-mediate", "# config_sha256: ", "# seed: 7", "# scenario_sha256: "] {
        assert!(text.contains(key), "missing {key}");
    }
    assert_eq!(rows(&dir.path().join("simulated.csv")).len(), 501);
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("simulated.csv.provenance.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 7);
    assert!(side["scenario_sha256"].as_str().unwrap().len() == 64);
    simulate(dir.path(), "s1.kv", "500", "0.4", "8");
    assert_ne!(text.as_bytes(), fs::read(dir.path().join("simulated.csv")).unwrap());
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("s1.kv");
    let out = run(dir.path(), &["simulate", "--scenario", s.to_str().unwrap(), "--n", "0", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["simulate", "--scenario", s.to_str().unwrap(), "--n", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    let out = run(dir.path(), &["simulate", "--scenario", "missing.kv", "--n", "10", "--seed", "1"]);
    assert!(!out.status.success());
    let out = Command::new(BIN)
        .current_dir(dir.path())
        .env("MSM_MEDIATE_THREADS", "0")
        .args(["simulate", "--scenario", s.to_str().unwrap(), "--n", "10", "--seed", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("s1.kv");
    fs::write(dir.path().join("run.toml"), format!("scenario = {:?}\nn = 40\nseed = 3\n", s.to_str().unwrap()))
        .unwrap();
    ok(dir.path(), &["simulate", "--config", "run.toml"]);
    assert_eq!(rows(&dir.path().join("simulated.csv")).len(), 41);
    ok(dir.path(), &["simulate", "--config", "run.toml", "--n", "25"]);
    let text = fs::read_to_string(dir.path().join("simulated.csv")).unwrap();
    assert_eq!(rows(&dir.path().join("simulated.csv")).len(), 26);
    assert!(text.contains("# config.n = 25"));
    fs::write(dir.path().join("bad.toml"), "sed = 3\n").unwrap();
    assert!(!run(dir.path(), &["simulate", "--config", "bad.toml"]).status.success());
}

#[test]
fn fit_reports_both_models_and_handles_null_spec() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "s1.kv", "800", "0.1", "2");
    ok(dir.path(), &["fit", "--input", "simulated.csv"]);
    let fit = dir.path().join("fit_multistate.csv");
    let models = column(&fit, "model");
    assert_eq!(models.iter().filter(|m| *m == "adjusted").count(), 11);
    assert_eq!(models.iter().filter(|m| *m == "unadjusted").count(), 3);
    for p in column(&fit, "p_value") {
        let p: f64 = p.parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    for (lo, hi) in column(&fit, "hr_lo").iter().zip(column(&fit, "hr_hi")) {
        assert!(lo.parse::<f64>().unwrap() < hi.parse::<f64>().unwrap());
    }

    fs::write(dir.path().join("null.toml"), "t01 = []\nt02 = []\nt12 = []\n").unwrap();
    let out = ok(dir.path(), &["fit", "--input", "simulated.csv", "--spec", "null.toml"]);
    assert_eq!(rows(&fit).len(), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("baseline hazards only"));
    assert!(rows(&dir.path().join("baseline_multistate.csv")).len() > 100);
}

#[test]
fn malformed_csv_lists_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let text = "id,y_t,delta_t,y_s,delta_s,a,x\n1,2,1,3,1,0,1\n2,abc,0,3,1,0,1\n3,1,1,2,0,0,1\n4,2,0,2,,1,1\n";
    fs::write(dir.path().join("bad.csv"), text).unwrap();
    let out = run(dir.path(), &["fit", "--input", "bad.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("line 5"), "{err}");
}

#[test]
fn effects_curve_with_bands_and_method_agreement() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "s1.kv", "400", "0", "5");
    ok(
        dir.path(),
        &[
            "effects",
            "--input",
            "simulated.csv",
            "--method",
            "multistate,exclude",
            "--horizon",
            "24",
            "--step",
            "0.5",
            "--bootstrap",
            "10",
            "--seed",
            "1",
        ],
    );
    let ms = dir.path().join("effects_multistate.csv");
    let ex = dir.path().join("effects_exclude.csv");
    assert_eq!(rows(&ms).len(), 49);
    assert!(rows(&ms)[0].ends_with("sie_lo,sie_hi"));
    assert!(fs::read_to_string(&ms).unwrap().contains("# bootstrap: "));
    for effect in ["te", "sde", "sie", "te_lo", "sie_hi"] {
        for (a, b) in column(&ms, effect).iter().zip(column(&ex, effect)) {
            let (a, b): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            assert!((a - b).abs() < 1e-9, "{effect}: {a} vs {b}");
        }
    }
    let out = run(dir.path(), &["effects", "--input", "simulated.csv", "--bootstrap", "5"]);
    assert!(!out.status.success(), "bootstrap without a seed must fail");
}

#[test]
fn proportion_eliminated_is_flagged_when_total_effect_is_null() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "s1.kv", "300", "0.1", "4");
    fs::write(dir.path().join("noa.toml"), "t01 = [\"X\", \"C1\"]\nt02 = [\"X\"]\nt12 = [\"X\", \"T\"]\n").unwrap();
    ok(dir.path(), &["effects", "--input", "simulated.csv", "--spec", "noa.toml", "--horizon", "12", "--pe", "--rmst"]);
    let t2 = dir.path().join("pe_table.csv");
    assert_eq!(column(&t2, "pe"), vec!["NA"]);
    assert_eq!(column(&t2, "pe_defined"), vec!["false"]);
    assert_eq!(column(&dir.path().join("rmst.csv"), "rmst_te"), vec!["0"]);
}

#[test]
fn experiment_single_method_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("s1.kv");
    let args = [
        "experiment",
        "--scenario",
        s.to_str().unwrap(),
        "--levels",
        "0.1",
        "--n",
        "300",
        "--replicates",
        "3",
        "--bootstrap",
        "4",
        "--methods",
        "multistate",
        "--seed",
        "9",
        "--output-dir",
        "out",
    ];
    ok(dir.path(), &args);
    let out = dir.path().join("out");
    let summary = out.join("summary.csv");
    assert_eq!(rows(&summary).len(), 4);
    assert!(rows(&summary)[0].starts_with("level,scenario,method,effect"));
    assert_eq!(column(&summary, "method"), vec!["Multistate"; 3]);
    assert_eq!(column(&summary, "failed_replicates"), vec!["0"; 3]);
    assert_eq!(rows(&out.join("truth.csv")).len(), 2);
    let before = rows(&summary);
    let rep = out.join("replicates/level_0.1/rep_1.csv");
    fs::remove_file(&rep).unwrap();
    let mut resumed = args.to_vec();
    resumed.push("--resume");
    ok(dir.path(), &resumed);
    assert!(rep.exists());
    assert_eq!(rows(&summary), before);
}
