use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use msm_mediate::cox::CoxOptions;
use msm_mediate::effects::{
    effects_at, marginal_effects_at, proportion_eliminated, reporting_grid, rmst_total_effect, ContrastOptions,
    SieOrdering,
};
use msm_mediate::study::{bootstrap_draws, fit_method, quantile, MethodId};
use serde::{Deserialize, Serialize};

use crate::common::{check_level, init_threads, load_dataset, load_spec, na, parse_methods, profile};
use crate::config::{is_false, merge, output_dir, write_output, Provenance};

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct EffectsArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Covariate specification (TOML); defaults to main effects.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated list of multistate, exclude, censor.
    #[arg(long)]
    pub method: Option<String>,
    /// Last time of the reporting grid.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Spacing of the reporting grid.
    #[arg(long)]
    pub step: Option<f64>,
    /// Bootstrap replicates for percentile bands; 0 skips them.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Required with --bootstrap.
    #[arg(long)]
    pub seed: Option<u64>,
    /// X level of the reporting profile; defaults to the lower median.
    #[arg(long, allow_hyphen_values = true)]
    pub profile_x: Option<i64>,
    /// Comma-separated confounder values of the profile; defaults to the column means.
    #[arg(long, allow_hyphen_values = true)]
    pub profile_c: Option<String>,
    /// Report the indirect effect with the opposite sign (shifted minus natural).
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub negate_sie: bool,
    /// Write TE, SDE and the proportion eliminated at the horizon.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub pe: bool,
    /// Write the restricted mean survival difference up to the horizon.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub rmst: bool,
    /// Also write effects averaged over the observed covariates.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub marginal: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, env = "MSM_MEDIATE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// TE, SDE and PE at the horizon for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct PeRow {
    pub method: MethodId,
    pub te: f64,
    pub sde: f64,
    pub pe: Option<f64>,
    pub te_ci: Option<(f64, f64)>,
    pub sde_ci: Option<(f64, f64)>,
    pub pe_ci: Option<(f64, f64)>,
}

fn interval(mut v: Vec<f64>, level: f64) -> Option<(f64, f64)> {
    if v.len() < 2 {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Some((quantile(&v, alpha), quantile(&v, 1.0 - alpha)))
}

fn write_pe_table<W: Write>(w: W, rows: &[PeRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method",
        "te",
        "te_lo",
        "te_hi",
        "sde",
        "sde_lo",
        "sde_hi",
        "pe",
        "pe_lo",
        "pe_hi",
        "pe_defined",
    ])?;
    let pair = |c: Option<(f64, f64)>| [na(c.map(|c| c.0)), na(c.map(|c| c.1))];
    for r in rows {
        let [te_lo, te_hi] = pair(r.te_ci);
        let [sde_lo, sde_hi] = pair(r.sde_ci);
        let [pe_lo, pe_hi] = pair(r.pe_ci);
        out.write_record([
            r.method.name().to_string(),
            r.te.to_string(),
            te_lo,
            te_hi,
            r.sde.to_string(),
            sde_lo,
            sde_hi,
            na(r.pe),
            pe_lo,
            pe_hi,
            r.pe.is_some().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn run(cli: EffectsArgs) -> Result<()> {
    let args = merge(&cli, cli.config.as_deref())?;
    init_threads(args.threads)?;
    let input = args.input.clone().context("--input is required")?;
    let methods = parse_methods(args.method.as_deref().unwrap_or("multistate"))?;
    let horizon = args.horizon.unwrap_or(24.0);
    let step = args.step.unwrap_or(0.5);
    let b = args.bootstrap.unwrap_or(0);
    anyhow::ensure!(b != 1, "--bootstrap needs at least 2 replicates");
    let level = args.level.unwrap_or(0.95);
    check_level(level)?;
    let seed = if b > 0 { Some(args.seed.context("--seed is required with --bootstrap")?) } else { args.seed };
    let out_dir = output_dir(&args.output_dir)?;
    let copts = ContrastOptions {
        sie_ordering: if args.negate_sie { SieOrdering::ShiftedMinusNatural } else { SieOrdering::NaturalMinusShifted },
    };

    let ds = load_dataset(&input)?;
    let spec = load_spec(args.spec.as_deref(), &ds)?;
    let template = profile(&ds, args.profile_x, args.profile_c.as_deref())?;
    let grid = reporting_grid(horizon, step)?;

    let mut inputs: Vec<(&str, &Path)> = vec![("input", &input)];
    if let Some(s) = &args.spec {
        inputs.push(("spec", s));
    }
    let prov = Provenance::new("effects", &args, seed, &inputs)?.with_line(format!(
        "profile: x = {}, c = [{}]",
        template.x,
        template.c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
    ));

    let mut pe_rows = Vec::new();
    let mut rmst_rows = Vec::new();
    for &method in &methods {
        let fit = fit_method(method, &ds, &spec, &CoxOptions::default())?;
        let mut curve = effects_at(&fit, &grid, &template, &copts)?;
        let mut mprov = prov.clone();
        let draws = match seed.filter(|_| b > 0) {
            Some(seed) => {
                let d = bootstrap_draws(method, &ds, &spec, &template, &grid, b, seed, &copts)?;
                curve.bands = Some(d.interval(level)?);
                mprov = mprov.with_line(format!("bootstrap: {} of {} replicates failed", d.failures, d.b));
                if d.unreliable() {
                    mprov = mprov.with_line("warning: more than 10% of bootstrap replicates failed; bands unreliable");
                }
                Some(d)
            }
            None => None,
        };
        for w in &curve.warnings {
            eprintln!("warning ({}): {w}", method.name());
            mprov = mprov.with_line(format!("warning: {w}"));
        }
        if args.rmst {
            let r = rmst_total_effect(&fit, &template, horizon, step)?;
            curve.rmst_te = Some((horizon, r));
            rmst_rows.push((method, r));
        }
        write_output(&out_dir.join(format!("effects_{}.csv", method.name())), &mprov, |buf| Ok(curve.write_csv(buf)?))?;

        if args.marginal {
            let covs: Vec<(i64, Vec<f64>)> = ds.records().iter().map(|r| (r.x, r.c.clone())).collect();
            let m = marginal_effects_at(&fit, &grid, &covs, &copts)?;
            write_output(&out_dir.join(format!("effects_{}_marginal.csv", method.name())), &prov, |buf| {
                Ok(m.write_csv(buf)?)
            })?;
        }

        if args.pe {
            let last = grid.len() - 1;
            let t = curve.triple(last);
            let collect = |f: &dyn Fn(&msm_mediate::effects::EffectTriple) -> Option<f64>| {
                draws.as_ref().and_then(|d| interval(d.draws.iter().filter_map(|v| f(&v[last])).collect(), level))
            };
            pe_rows.push(PeRow {
                method,
                te: t.te,
                sde: t.sde,
                pe: proportion_eliminated(t.te, t.sde).ok(),
                te_ci: collect(&|e| Some(e.te)),
                sde_ci: collect(&|e| Some(e.sde)),
                pe_ci: collect(&|e| proportion_eliminated(e.te, e.sde).ok()),
            });
        }
        let last = grid.len() - 1;
        println!(
            "{:<11} s={:<6} TE={:>9.5} SDE={:>9.5} SIE={:>9.5}",
            method.name(),
            grid[last],
            curve.te[last],
            curve.sde[last],
            curve.sie[last]
        );
    }
    if args.pe {
        let p = prov.with_line(format!("table of TE, SDE and PE at s = {horizon}"));
        write_output(&out_dir.join("pe_table.csv"), &p, |buf| write_pe_table(buf, &pe_rows))?;
        for r in &pe_rows {
            match r.pe {
                Some(pe) => println!("{:<11} PE({horizon}) = {pe:.4}", r.method.name()),
                None => println!("{:<11} PE({horizon}) undefined: total effect is null", r.method.name()),
            }
        }
    }
    if args.rmst {
        write_output(&out_dir.join("rmst.csv"), &prov, |buf| {
            writeln!(buf, "method,r,rmst_te")?;
            for (m, v) in &rmst_rows {
                writeln!(buf, "{},{horizon},{v}", m.name())?;
            }
            Ok(())
        })?;
    }
    Ok(())
}
