use proptest::prelude::*;

use super::*;
use crate::dataset::{validate, SubjectRecord};
use crate::simgen::{calibrate_semicompeting, true_effects, TruthRow};

const S1: &str = include_str!("../../../../scenarios/s1.kv");

fn scenario(level: f64) -> Scenario {
    calibrate_semicompeting(&Scenario::parse(S1).unwrap(), level).unwrap()
}

fn dataset(sc: &Scenario, n: usize, seed: u64) -> ValidatedDataset {
    validate(generate(sc, n, seed).unwrap()).unwrap()
}

#[test]
fn methods_coincide_without_semicompeting_subjects() {
    let sc = scenario(0.0);
    let ds = dataset(&sc, 800, 3);
    assert_eq!(ds.summary().n_semicompeting, 0);
    let grid = [6.0, 12.0, 24.0];
    let copts = ContrastOptions::default();
    let (ms, _) = estimate(MethodId::Multistate, &ds, &sc.true_spec(), &sc.profile(), &grid, &copts).unwrap();
    for m in [MethodId::ExcludeTgtS, MethodId::CensorTgtS] {
        let (other, _) = estimate(m, &ds, &sc.true_spec(), &sc.profile(), &grid, &copts).unwrap();
        for (a, b) in ms.iter().zip(&other) {
            for e in Effect::ALL {
                assert!((a.get(e) - b.get(e)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn naive_methods_differ_with_semicompeting_subjects() {
    let sc = scenario(0.4);
    let ds = dataset(&sc, 800, 3);
    let copts = ContrastOptions::default();
    let spec = sc.true_spec();
    let (ms, _) = estimate(MethodId::Multistate, &ds, &spec, &sc.profile(), &[24.0], &copts).unwrap();
    let (ex, _) = estimate(MethodId::ExcludeTgtS, &ds, &spec, &sc.profile(), &[24.0], &copts).unwrap();
    assert!((ms[0].sde - ex[0].sde).abs() > 1e-3);
    assert!((ms[0].te - ms[0].sde - ms[0].sie).abs() < 1e-9);
}

#[test]
fn exclude_needs_treated_subjects() {
    let recs: Vec<SubjectRecord> = (0..5)
        .map(|i| SubjectRecord {
            id: i.to_string(),
            y_t: 1.0 + i as f64,
            delta_t: 0,
            y_s: 1.0 + i as f64,
            delta_s: (i % 2) as u8,
            a: (i % 2) as u8,
            x: 1,
            c: vec![],
        })
        .collect();
    let ds = validate(recs).unwrap();
    let err = estimate(
        MethodId::ExcludeTgtS,
        &ds,
        &CovariateSpec::empty(),
        &CovariateProfile::new(0, 1, vec![]),
        &[1.0],
        &ContrastOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err, StudyError::NoTreatedSubjects { method: MethodId::ExcludeTgtS });
    assert!(err.to_string().contains("no treated subjects"));
}

#[test]
fn identical_subjects_give_zero_width_intervals() {
    let recs: Vec<SubjectRecord> = (0..20)
        .map(|i| SubjectRecord { id: i.to_string(), y_t: 2.0, delta_t: 1, y_s: 5.0, delta_s: 1, a: 1, x: 1, c: vec![] })
        .collect();
    let ds = validate(recs).unwrap();
    let p = CovariateProfile::new(0, 1, vec![]);
    let copts = ContrastOptions::default();
    let spec = CovariateSpec::empty();
    let (point, _) = estimate(MethodId::Multistate, &ds, &spec, &p, &[3.0], &copts).unwrap();
    let ci = bootstrap_ci(MethodId::Multistate, &ds, &spec, &p, &[3.0], 10, 1, 0.95, &copts).unwrap();
    assert_eq!(ci.bands.te.lo[0], point[0].te);
    assert_eq!(ci.bands.te.hi[0], point[0].te);
    assert_eq!(ci.failures, 0);
}

#[test]
fn bootstrap_is_reproducible_and_nested_in_level() {
    let sc = scenario(0.1);
    let ds = dataset(&sc, 300, 8);
    let spec = sc.true_spec();
    let copts = ContrastOptions::default();
    let run =
        || bootstrap_draws(MethodId::Multistate, &ds, &spec, &sc.profile(), &[12.0, 24.0], 20, 5, &copts).unwrap();
    let a = run();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(run);
    assert_eq!(a, b);
    let (i90, i95) = (a.interval(0.90).unwrap(), a.interval(0.95).unwrap());
    for (n, w) in [(&i90.te, &i95.te), (&i90.sde, &i95.sde), (&i90.sie, &i95.sie)] {
        for j in 0..2 {
            assert!(w.lo[j] <= n.lo[j] && n.hi[j] <= w.hi[j]);
        }
    }
    assert!(bootstrap_draws(MethodId::Multistate, &ds, &spec, &sc.profile(), &[24.0], 1, 5, &copts).is_err());
    assert!(a.interval(1.0).is_err());
}

#[test]
fn type7_quantiles() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile(&v, 0.0), 1.0);
    assert_eq!(quantile(&v, 0.25), 1.75);
    assert_eq!(quantile(&v, 0.5), 2.5);
    assert_eq!(quantile(&v, 1.0), 4.0);
    assert_eq!(quantile(&[7.0], 0.3), 7.0);
}

fn fake(replicate: usize, method: MethodId, t: EffectTriple, lo: f64, hi: f64) -> ReplicateResult {
    let band = || Band { lo: vec![lo], hi: vec![hi] };
    ReplicateResult {
        replicate,
        method,
        scenario_id: 1,
        seed: replicate as u64,
        s_list: vec![24.0],
        estimates: vec![t],
        ci: Some(EffectBands { te: band(), sde: band(), sie: band() }),
        boot_failures: 0,
        boot_total: 10,
        ci_unreliable: false,
        converged: true,
        error: None,
    }
}

fn truth(te: f64, sde: f64, sie: f64) -> TruthTable {
    TruthTable {
        scenario_id: 1,
        semicompeting: None,
        profile: CovariateProfile::new(0, 1, vec![]),
        rows: vec![TruthRow { s: 24.0, te, sde, sie }],
    }
}

#[test]
fn summary_of_exact_estimates() {
    let t = EffectTriple { te: -0.1, sde: -0.06, sie: -0.04 };
    let res: Vec<_> = (0..4).map(|r| fake(r, MethodId::Multistate, t, -0.2, -0.05)).collect();
    let s = summarize(&res, &truth(-0.1, -0.06, -0.04), 24.0).unwrap();
    let row = s.get(MethodId::Multistate, Effect::Te).unwrap();
    assert_eq!(row.bias, 0.0);
    assert_eq!(row.mse, 0.0);
    assert_eq!(row.coverage, Some(1.0));
    // sde/sie truths lie above the interval
    assert_eq!(s.get(MethodId::Multistate, Effect::Sie).unwrap().coverage, Some(0.0));
    assert!(summarize(&[], &truth(0.0, 0.0, 0.0), 24.0).is_err());
    assert!(summarize(&res, &truth(0.0, 0.0, 0.0), 12.0).is_err());
}

#[test]
fn type1_error_only_for_null_truths() {
    let t = EffectTriple { te: 0.01, sde: 0.0, sie: 0.01 };
    let mut res: Vec<_> = (0..10).map(|r| fake(r, MethodId::Multistate, t, -0.02, 0.03)).collect();
    res[0] = fake(0, MethodId::Multistate, t, 0.001, 0.03);
    let s = summarize(&res, &truth(0.01, 0.0, 0.01), 24.0).unwrap();
    assert_eq!(s.get(MethodId::Multistate, Effect::Sde).unwrap().type1_error, Some(0.1));
    assert_eq!(s.get(MethodId::Multistate, Effect::Te).unwrap().type1_error, None);
}

#[test]
fn failed_replicates_are_counted() {
    let t = EffectTriple { te: 0.1, sde: 0.05, sie: 0.05 };
    let mut res: Vec<_> = (0..3).map(|r| fake(r, MethodId::CensorTgtS, t, 0.0, 0.2)).collect();
    res[1].estimates.clear();
    res[1].error = Some("boom".into());
    let s = summarize(&res, &truth(0.1, 0.05, 0.05), 24.0).unwrap();
    let row = s.get(MethodId::CensorTgtS, Effect::Te).unwrap();
    assert_eq!((row.replicates, row.failed_replicates), (2, 1));
}

#[test]
fn replicate_csv_round_trip() {
    let t = EffectTriple { te: 0.1234567890123, sde: -0.05, sie: 0.1734567890123 };
    let mut res = vec![fake(0, MethodId::Multistate, t, -0.3, 0.4), fake(0, MethodId::ExcludeTgtS, t, -0.1, 0.2)];
    res[1].ci = None;
    let mut failed = fake(1, MethodId::Multistate, t, 0.0, 0.0);
    failed.estimates.clear();
    failed.ci = None;
    failed.error = Some("transition 01: no events".into());
    res.push(failed);
    let mut buf = Vec::new();
    write_replicates_csv(&mut buf, &res).unwrap();
    let back = read_replicates_csv(&buf[..]).unwrap();
    assert_eq!(back, res);
}

#[test]
fn experiment_is_schedule_independent() {
    let sc = scenario(0.1);
    let mut cfg = ExperimentConfig::for_scenario(sc, 250, 2, 4, 9);
    cfg.s_list = vec![12.0, 24.0];
    let a = run_experiment(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let b = pool.install(|| run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert_eq!(a[0].method, MethodId::Multistate);
    assert_eq!(a[3].replicate, 1);
    cfg.methods = vec![MethodId::Multistate];
    cfg.replicates = 1;
    let one = run_experiment(&cfg).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0], a[0]);
    let tt = true_effects(&cfg.scenario, &[24.0]).unwrap();
    let s = summarize(&a, &tt, 24.0).unwrap();
    assert_eq!(s.rows.len(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_decomposes_and_bias_is_translation_equivariant(
        est in proptest::collection::vec(-0.5f64..0.5, 1..40),
        t in -0.3f64..0.3,
        shift in -0.1f64..0.1,
    ) {
        let mk = |d: f64| -> Vec<ReplicateResult> {
            est.iter().enumerate().map(|(r, &e)| {
                fake(r, MethodId::Multistate, EffectTriple { te: e + d, sde: e + d, sie: 0.0 }, -1.0, 1.0)
            }).collect()
        };
        let tt = truth(t, t, 0.0);
        let base = summarize(&mk(0.0), &tt, 24.0).unwrap();
        let moved = summarize(&mk(shift), &tt, 24.0).unwrap();
        let b = base.get(MethodId::Multistate, Effect::Te).unwrap();
        let m = moved.get(MethodId::Multistate, Effect::Te).unwrap();
        prop_assert!((b.mse - (b.variance + b.bias * b.bias)).abs() < 1e-12);
        prop_assert!(b.mse >= b.bias * b.bias - 1e-15);
        prop_assert!((m.bias - b.bias - shift).abs() < 1e-12);
        prop_assert!((m.variance - b.variance).abs() < 1e-12);
        prop_assert!(b.coverage.unwrap() >= 0.0 && b.coverage.unwrap() <= 1.0);
    }
}
