use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use msm_mediate::cox::CoxOptions;
use msm_mediate::dataset::{CovariateSpec, Transition};
use msm_mediate::effects::MultistateFit;
use msm_mediate::study::{fit_method, MethodId};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::common::{check_level, init_threads, load_dataset, load_spec, na};
use crate::config::{merge, output_dir, write_output, Provenance};

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Covariate specification (TOML); defaults to main effects.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// multistate, exclude or censor.
    #[arg(long)]
    pub method: Option<String>,
    /// Confidence level of the hazard-ratio intervals.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, env = "MSM_MEDIATE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// One coefficient row of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow {
    pub model: &'static str,
    pub transition: Transition,
    pub term: String,
    pub coef: f64,
    pub se: f64,
    pub hr: f64,
    pub hr_lo: f64,
    pub hr_hi: f64,
    pub p_value: f64,
    pub aliased: bool,
    pub n_events: usize,
    pub converged: bool,
}

fn coef_rows(model: &'static str, fit: &MultistateFit, transitions: &[Transition], level: f64) -> Vec<CoefRow> {
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let q = z.inverse_cdf(0.5 + level / 2.0);
    let mut out = Vec::new();
    for &tr in transitions {
        let Some(f) = fit.fit(tr) else { continue };
        let names = fit.spec.column_names(tr);
        let se = f.std_errors();
        for (j, name) in names.into_iter().enumerate() {
            let b = f.beta[j];
            let p_value = if se[j] > 0.0 { 2.0 * (1.0 - z.cdf((b / se[j]).abs())) } else { f64::NAN };
            out.push(CoefRow {
                model,
                transition: tr,
                term: name,
                coef: b,
                se: se[j],
                hr: b.exp(),
                hr_lo: (b - q * se[j]).exp(),
                hr_hi: (b + q * se[j]).exp(),
                p_value,
                aliased: f.aliased[j],
                n_events: f.n_events,
                converged: f.converged,
            });
        }
    }
    out
}

fn without_mediator(spec: &CovariateSpec) -> CovariateSpec {
    let mut s = spec.clone();
    s.t12.retain(|t| !t.is_mediator_derived());
    s
}

fn fnum(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".to_string()
    }
}

pub fn write_coefficients<W: Write>(w: W, rows: &[CoefRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "model",
        "transition",
        "term",
        "coef",
        "se",
        "hr",
        "hr_lo",
        "hr_hi",
        "p_value",
        "aliased",
        "n_events",
        "converged",
    ])?;
    for r in rows {
        out.write_record([
            r.model.to_string(),
            r.transition.code().to_string(),
            r.term.clone(),
            fnum(r.coef),
            fnum(r.se),
            fnum(r.hr),
            fnum(r.hr_lo),
            fnum(r.hr_hi),
            fnum(r.p_value),
            r.aliased.to_string(),
            r.n_events.to_string(),
            r.converged.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn write_baselines<W: Write>(mut w: W, fit: &MultistateFit) -> Result<()> {
    writeln!(w, "transition,time,cumulative_hazard")?;
    for tr in Transition::ALL {
        if let Some(f) = fit.fit(tr) {
            for (t, v) in f.baseline.jump_times().iter().zip(f.baseline.cum_values()) {
                writeln!(w, "{},{t},{v}", tr.code())?;
            }
        }
    }
    Ok(())
}

pub fn run(cli: FitArgs) -> Result<()> {
    let args = merge(&cli, cli.config.as_deref())?;
    init_threads(args.threads)?;
    let input = args.input.clone().context("--input is required")?;
    let method_name = args.method.clone().unwrap_or_else(|| "multistate".into());
    let method = MethodId::parse(&method_name).with_context(|| format!("unknown method '{method_name}'"))?;
    let level = args.level.unwrap_or(0.95);
    check_level(level)?;
    let out_dir = output_dir(&args.output_dir)?;

    let ds = load_dataset(&input)?;
    let spec = load_spec(args.spec.as_deref(), &ds)?;
    let opts = CoxOptions::default();
    let fit = fit_method(method, &ds, &spec, &opts)?;
    let mut rows = coef_rows("adjusted", &fit, &Transition::ALL, level);
    if spec.t12.iter().any(|t| t.is_mediator_derived()) {
        let reduced = fit_method(method, &ds, &without_mediator(&spec), &opts).context("fit without mediator terms")?;
        rows.extend(coef_rows("unadjusted", &reduced, &[Transition::TreatDeath], level));
    }

    let mut inputs: Vec<(&str, &std::path::Path)> = vec![("input", &input)];
    if let Some(s) = &args.spec {
        inputs.push(("spec", s));
    }
    let prov = Provenance::new("fit", &args, args.seed, &inputs)?;
    let name = method.name();
    write_output(&out_dir.join(format!("fit_{name}.csv")), &prov, |buf| write_coefficients(buf, &rows))?;
    write_output(&out_dir.join(format!("baseline_{name}.csv")), &prov, |buf| write_baselines(buf, &fit))?;

    let summary = ds.summary();
    println!(
        "{} subjects; events 0->1: {}, 0->2: {}, 1->2: {}",
        summary.n, summary.events_01, summary.events_02, summary.events_12
    );
    println!("{:<11} {:<4} {:<8} {:>10} {:>10} {:>22} {:>9}", "model", "tr", "term", "coef", "HR", "CI", "p");
    for r in &rows {
        println!(
            "{:<11} {:<4} {:<8} {:>10.4} {:>10.4} {:>22} {:>9}",
            r.model,
            r.transition.code(),
            r.term,
            r.coef,
            r.hr,
            format!("({:.3}, {:.3})", r.hr_lo, r.hr_hi),
            na(r.p_value.is_finite().then_some(r.p_value)).chars().take(9).collect::<String>()
        );
    }
    if rows.is_empty() {
        println!("no covariates; baseline hazards only");
    }
    for tr in Transition::ALL {
        if fit.fit(tr).is_none() {
            println!("transition {}: no intensity fitted", tr.code());
        }
    }
    Ok(())
}
