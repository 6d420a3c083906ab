//! End-to-end acceptance checks. Each criterion prints one `[PASS]` or
//! `[FAIL]` line; the process exits nonzero if any fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use msm_mediate::cox::{breslow_baseline, fit_partial_likelihood, partial_likelihood, CoxOptions};
use msm_mediate::dataset::{validate, CovariateSpec, Transition, TransitionRow};
use msm_mediate::effects::{
    effects_at, reporting_grid, ContrastOptions, CovariateProfile, Effect, InterventionPolicy, StateOccupation,
};
use msm_mediate::rng::substream;
use msm_mediate::simgen::{
    calibrate_semicompeting, forward_occupation, generate, true_effects, ParametricModel, Scenario, TransitionModel,
    Weibull,
};
use msm_mediate::study::{fit_method, run_experiment, summarize, ExperimentConfig, MethodId};
use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::from_file(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn row(subject: usize, entry: f64, exit: f64, status: u8, z: Vec<f64>) -> TransitionRow {
    TransitionRow { subject, transition: Transition::DiagTreat, entry, exit, status, z }
}

/// Random rows with delayed entry and tied times on a 0.5 grid.
fn random_rows(seed: u64, k: u64, n: usize, p: usize) -> Vec<TransitionRow> {
    let mut rng = substream(seed, &[k], 0);
    let mut rows: Vec<TransitionRow> = (0..n)
        .map(|i| {
            let entry = if rng.random_bool(0.3) { rng.random_range(0..6) as f64 * 0.5 } else { 0.0 };
            let exit = entry + rng.random_range(1..12) as f64 * 0.5;
            let status = u8::from(rng.random_bool(0.7));
            let z = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
            row(i, entry, exit, status, z)
        })
        .collect();
    rows[0].status = 1;
    rows
}

fn constant_hazards() -> Scenario {
    let model = |rate| TransitionModel { baseline: Weibull { shape: 1.0, rate }, coefs: vec![] };
    Scenario {
        id: 0,
        prevalence: 0.5,
        x_levels: 1,
        confounders: vec![],
        t01: model(0.1),
        t02: model(0.05),
        t12: model(0.2),
        admin_censor: f64::INFINITY,
        dropout_max: 0.0,
        semicompeting: None,
        profile_x: 1,
        profile_c: vec![],
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let rows: Vec<TransitionRow> = [(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 0.0)]
        .iter()
        .enumerate()
        .map(|(i, &(t, a))| row(i, 0.0, t, 1, vec![a]))
        .collect();
    let fit = fit_partial_likelihood(&rows, &[0.0], &CoxOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let root = ((1.0 + 17f64.sqrt()) / 2.0).ln();
    let beta = fit.beta[0];
    check((beta - root).abs() < 1e-6, format!("beta = {beta}, analytic root {root}"))?;
    check(elapsed < 1.0, format!("runtime {elapsed} s"))?;
    Ok(format!(
        "beta = {beta:.7} vs ln((1+sqrt 17)/2) = {root:.7} in {:.1} ms; the literal 0.94078 differs from the root by {:.1e}",
        elapsed * 1e3,
        (0.94078 - root).abs()
    ))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..200u64 {
        let mut rng = substream(2, &[k], 1);
        let n = rng.random_range(1..=100);
        let rows = random_rows(2, k, n, 0);
        let fit = fit_partial_likelihood(&rows, &[], &CoxOptions::default()).map_err(|e| e.to_string())?;
        let b = breslow_baseline(&fit, &rows).map_err(|e| e.to_string())?;
        let mut times: Vec<f64> = rows.iter().filter(|r| r.status == 1).map(|r| r.exit).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        check(b.jump_times() == times.as_slice(), format!("dataset {k}: jump times differ"))?;
        let mut na = 0.0;
        for (j, &t) in times.iter().enumerate() {
            let d = rows.iter().filter(|r| r.status == 1 && r.exit == t).count() as f64;
            let at_risk = rows.iter().filter(|r| r.entry < t && t <= r.exit).count() as f64;
            na += d / at_risk;
            worst = worst.max((b.cum_values()[j] - na).abs());
        }
    }
    check(worst < 1e-12, format!("max difference {worst:e}"))?;
    Ok(format!("200 datasets, max |Breslow - Nelson-Aalen| = {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let sc = constant_hazards();
    let prof = CovariateProfile::new(0, 1, vec![]);
    let nat = InterventionPolicy::natural(&prof);
    let truth = ParametricModel::new(sc.clone());
    let (p00, p01) = (truth.p00(&prof, nat, 5.0), truth.p01(&prof, nat, 5.0));
    check((p00 - 0.47237).abs() < 1e-5, format!("parametric p00(5) = {p00}"))?;
    check((p01 - 0.20898).abs() < 1e-5, format!("parametric p01(5) = {p01}"))?;
    let ds = validate(generate(&sc, 2000, 3).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let fit = fit_method(MethodId::Multistate, &ds, &CovariateSpec::empty(), &CoxOptions::default())
        .map_err(|e| e.to_string())?;
    let (f00, f01) = (fit.p00(&prof, nat, 5.0), fit.p01(&prof, nat, 5.0));
    check((f00 - 0.47237).abs() < 2e-2, format!("fitted p00(5) = {f00}"))?;
    check((f01 - 0.20898).abs() < 2e-2, format!("fitted p01(5) = {f01}"))?;
    Ok(format!("parametric ({p00:.6}, {p01:.6}); fitted n=2000 ({f00:.4}, {f01:.4})"))
}

fn criterion_4() -> Outcome {
    let times = [6.0, 12.0, 24.0];
    let mut worst = 0.0f64;
    for (i, name) in ["s1.kv", "s2.kv", "s3.kv", "s4.kv"].iter().enumerate() {
        let sc = scenario(name);
        let m = ParametricModel::new(sc.clone());
        let prof = sc.profile().with_exposure(1);
        let nat = InterventionPolicy::natural(&prof);
        let f = forward_occupation(&sc, &prof, nat, &times, 1_000_000, 40 + i as u64);
        for (j, &s) in times.iter().enumerate() {
            for (label, analytic, freq) in
                [("p00", m.p00(&prof, nat, s), f.p00[j]), ("p01", m.p01(&prof, nat, s), f.p01[j])]
            {
                let z = (freq - analytic).abs() / f.std_error(analytic);
                worst = worst.max(z);
                check(z < 3.0, format!("{name} {label}({s}): analytic {analytic}, simulated {freq}, {z:.2} SE"))?;
            }
        }
    }
    Ok(format!("scenarios 1-4, s in {{6, 12, 24}}, 1e6 paths: max deviation {worst:.2} SE"))
}

fn criterion_5() -> Outcome {
    let grid = reporting_grid(24.0, 0.5).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut fits = 0;
    for (i, name) in ["s1.kv", "s2.kv", "s3.kv", "s4.kv", "cohort_like.kv"].iter().enumerate() {
        let base = scenario(name);
        for level in [0.0, 0.1, 0.4] {
            let sc = calibrate_semicompeting(&base, level).map_err(|e| e.to_string())?;
            let ds =
                validate(generate(&sc, 1000, 70 + i as u64).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            for method in MethodId::ALL {
                let fit =
                    fit_method(method, &ds, &sc.true_spec(), &CoxOptions::default()).map_err(|e| e.to_string())?;
                let curve =
                    effects_at(&fit, &grid, &sc.profile(), &ContrastOptions::default()).map_err(|e| e.to_string())?;
                for k in 0..grid.len() {
                    worst = worst.max((curve.te[k] - curve.sde[k] - curve.sie[k]).abs());
                }
                fits += 1;
            }
        }
    }
    check(worst < 1e-9, format!("max |TE - SDE - SIE| = {worst:e}"))?;
    Ok(format!("{fits} fitted models x {} times: max |TE - SDE - SIE| = {worst:.1e}", grid.len()))
}

fn criterion_6() -> Outcome {
    let base = scenario("s1.kv");
    let sc = calibrate_semicompeting(&base, 0.4).map_err(|e| e.to_string())?;
    let truth = true_effects(&sc, &[24.0]).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::for_scenario(sc, 2000, 100, 100, 20240601);
    let results = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let summary = summarize(&results, &truth, 24.0).map_err(|e| e.to_string())?;
    let get = |m, e| summary.get(m, e).ok_or_else(|| format!("no summary row for {m} {e:?}"));
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for e in Effect::ALL {
        let r = get(MethodId::Multistate, e)?;
        let cov = r.coverage.unwrap_or(f64::NAN);
        notes.push(format!("{} bias {:+.4} cov {:.2}", e.name(), r.bias, cov));
        if r.bias.abs() >= 0.02 {
            failures.push(format!("(a) Multistate {} bias {}", e.name(), r.bias));
        }
        if !(0.88..=0.99).contains(&cov) {
            failures.push(format!("(b) Multistate {} coverage {cov}", e.name()));
        }
    }
    for m in [MethodId::ExcludeTgtS, MethodId::CensorTgtS] {
        let severe = [Effect::Sde, Effect::Sie]
            .iter()
            .map(|&e| Ok((e, get(m, e)?.bias, get(MethodId::Multistate, e)?.bias)))
            .collect::<Result<Vec<_>, String>>()?;
        notes.push(format!("{m} bias sde {:+.4} sie {:+.4}", severe[0].1, severe[1].1));
        if !severe.iter().any(|(_, b, ms)| b.abs() >= 2.0 * ms.abs()) {
            failures.push(format!("(c) {m} bias not at least twice the Multistate bias"));
        }
    }

    let null = calibrate_semicompeting(&base, 0.0).map_err(|e| e.to_string())?;
    let cfg0 = ExperimentConfig::for_scenario(null, 2000, 100, 0, 20240602);
    let res0 = run_experiment(&cfg0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for r in 0..100 {
        let per: Vec<_> = res0.iter().filter(|x| x.replicate == r).collect();
        if per.len() != 3 || per.iter().any(|x| x.failed()) {
            failures.push(format!("(d) replicate {r} incomplete"));
            continue;
        }
        for x in &per[1..] {
            for e in Effect::ALL {
                worst = worst.max((x.estimates[0].get(e) - per[0].estimates[0].get(e)).abs());
            }
        }
    }
    notes.push(format!("0% max method difference {worst:.1e}"));
    if worst >= 1e-9 {
        failures.push(format!("(d) methods differ by {worst:e} at 0%"));
    }
    let failed = results.iter().filter(|r| r.failed()).count();
    notes.push(format!("{failed} failed analyses"));
    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{}; {}", failures.join("; "), notes.join("; ")))
    }
}

/// Smallest and largest rejection rates inside the central 95% of a
/// Binomial(r, 0.05).
fn binomial_region(r: u64) -> (f64, f64) {
    let b = Binomial::new(0.05, r).expect("valid binomial");
    let lo = (0..=r).find(|&k| b.cdf(k) >= 0.025).unwrap();
    let hi = (0..=r).find(|&k| b.cdf(k) >= 0.975).unwrap();
    (lo as f64 / r as f64, hi as f64 / r as f64)
}

fn criterion_7() -> Outcome {
    let (lo, hi) = binomial_region(100);
    let mut notes = vec![format!("region [{lo:.2}, {hi:.2}]")];
    let mut failures = Vec::new();
    for (name, effect, seed) in [("s3.kv", Effect::Sde, 20240603), ("s4.kv", Effect::Sie, 20240604)] {
        let sc = calibrate_semicompeting(&scenario(name), 0.4).map_err(|e| e.to_string())?;
        let truth = true_effects(&sc, &[24.0]).map_err(|e| e.to_string())?;
        let mut cfg = ExperimentConfig::for_scenario(sc, 2000, 100, 100, seed);
        cfg.methods = vec![MethodId::Multistate];
        let results = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let summary = summarize(&results, &truth, 24.0).map_err(|e| e.to_string())?;
        let row = summary.get(MethodId::Multistate, effect).ok_or("missing summary row")?;
        let rate = row.type1_error.ok_or_else(|| format!("{name}: truth {} is not null", row.truth))?;
        notes.push(format!("{name} {} rejection {rate:.2}", effect.name()));
        if !(lo..=hi).contains(&rate) {
            failures.push(format!("{name} {} rejection rate {rate}", effect.name()));
        }
    }
    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("{}; {}", failures.join("; "), notes.join("; ")))
    }
}

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_msm-mediate"))
        .current_dir(dir)
        .env_remove("MSM_MEDIATE_THREADS")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn data_lines(path: &Path) -> Result<Vec<String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text.lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect())
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let sc = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/cohort_like.kv");
    fs::write(
        d.join("spec.toml"),
        "t01 = [\"A\", \"X\", \"C1\", \"C2\", \"A:C1\"]\n\
         t02 = [\"A\", \"X\", \"C1\", \"C2\"]\n\
         t12 = [\"A\", \"X\", \"C1\", \"C2\", \"A:C1\", \"T\", \"T2\", \"A:T\", \"A:T2\"]\n",
    )
    .map_err(|e| e.to_string())?;
    cli(d, &["simulate", "--scenario", sc.to_str().unwrap(), "--n", "283", "--seed", "11", "--output", "cohort.csv"])?;
    cli(d, &["fit", "--input", "cohort.csv", "--spec", "spec.toml"])?;
    cli(
        d,
        &[
            "effects",
            "--input",
            "cohort.csv",
            "--spec",
            "spec.toml",
            "--horizon",
            "60",
            "--pe",
            "--bootstrap",
            "50",
            "--seed",
            "5",
        ],
    )?;
    let t1 = data_lines(&d.join("fit_multistate.csv"))?;
    let adjusted = t1.iter().filter(|l| l.starts_with("adjusted,")).count();
    let unadjusted = t1.iter().filter(|l| l.starts_with("unadjusted,")).count();
    check(
        adjusted == 18 && unadjusted == 5,
        format!("coefficient table has {adjusted} adjusted and {unadjusted} unadjusted rows"),
    )?;
    let t2 = data_lines(&d.join("pe_table.csv"))?;
    check(t2.len() == 2 && t2[0].starts_with("method,te,te_lo"), format!("effect table: {t2:?}"))?;
    let curve = data_lines(&d.join("effects_multistate.csv"))?;
    check(curve.len() == 121, format!("curve has {} rows", curve.len() - 1))?;
    Ok(format!("n = 283: coefficient table with {adjusted} + {unadjusted} rows; effect table: {}", t2[1]))
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let rows = random_rows(9, k, 30 + 3 * k as usize, 3);
        let mut rng = substream(9, &[k], 1);
        for _ in 0..5 {
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = partial_likelihood(&rows, &beta).map_err(|e| e.to_string())?.gradient;
            for j in 0..3 {
                let h = 1e-5;
                let mut up = beta.clone();
                let mut down = beta.clone();
                up[j] += h;
                down[j] -= h;
                let lu = partial_likelihood(&rows, &up).map_err(|e| e.to_string())?.loglik;
                let ld = partial_likelihood(&rows, &down).map_err(|e| e.to_string())?.loglik;
                let fd = (lu - ld) / (2.0 * h);
                worst = worst.max((g[j] - fd).abs() / g[j].abs().max(1.0));
            }
        }
    }
    check(worst < 1e-6, format!("max relative error {worst:e}"))?;
    Ok(format!("20 datasets x 5 points: max relative error {worst:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("Cox closed form", criterion_1),
        ("Breslow equals Nelson-Aalen", criterion_2),
        ("transition-probability oracle", criterion_3),
        ("forward-simulation equivalence", criterion_4),
        ("decomposition identity", criterion_5),
        ("simulation study, scenario 1", criterion_6),
        ("type-I error, scenarios 3 and 4", criterion_7),
        ("cohort-like dataset end to end", criterion_8),
        ("gradient check", criterion_9),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {id}. {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id}. {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
