use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use msm_mediate::simgen::{calibrate_semicompeting, true_effects, Scenario};
use msm_mediate::study::{
    read_replicates_csv, run_replicate, summarize, write_replicates_csv, write_summary_csv, ExperimentConfig,
    ReplicateResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::common::{check_level, init_threads, parse_methods};
use crate::config::{is_false, merge, output_dir, parse_list, recorded_hash, write_output, Provenance};

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentArgs {
    /// Scenario file (flat `key = value`).
    #[arg(long, visible_alias = "input")]
    pub scenario: Option<PathBuf>,
    /// Comma-separated semi-competing fractions; defaults to the scenario's
    /// `semicompeting` key, else 0,0.1,0.4.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: Option<u64>,
    /// Bootstrap replicates per analysis; 0 skips the intervals.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Comma-separated list of multistate, exclude, censor.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated evaluation times.
    #[arg(long)]
    pub s: Option<String>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reuse per-replicate files written by an earlier run with the same configuration.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub resume: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, env = "MSM_MEDIATE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn level_tag(level: f64) -> String {
    level.to_string()
}

fn replicate_file(dir: &Path, level: f64, r: usize) -> PathBuf {
    dir.join("replicates").join(format!("level_{}", level_tag(level))).join(format!("rep_{r}.csv"))
}

/// Results of replicate `r`, from disk when resuming and the recorded
/// configuration matches, otherwise computed and written.
fn replicate(
    cfg: &ExperimentConfig,
    r: usize,
    path: &Path,
    prov: &Provenance,
    resume: bool,
) -> Result<Vec<ReplicateResult>> {
    if resume && recorded_hash(path).as_deref() == Some(prov.config_hash.as_str()) {
        if let Ok(file) = File::open(path) {
            if let Ok(results) = read_replicates_csv(file) {
                if !results.is_empty() {
                    return Ok(results);
                }
            }
        }
    }
    let results = run_replicate(cfg, r)?;
    write_output(path, prov, |buf| Ok(write_replicates_csv(buf, &results)?))?;
    Ok(results)
}

/// Prefixes every line of a CSV (header included) with fixed columns.
fn prefix_columns(csv_text: &str, header: &str, values: &str, with_header: bool) -> String {
    let mut out = String::new();
    for (i, line) in csv_text.lines().enumerate() {
        if i == 0 {
            if with_header {
                out.push_str(&format!("{header},{line}\n"));
            }
        } else {
            out.push_str(&format!("{values},{line}\n"));
        }
    }
    out
}

pub fn run(cli: ExperimentArgs) -> Result<()> {
    let args = merge(&cli, cli.config.as_deref())?;
    init_threads(args.threads)?;
    let scenario_path = args.scenario.clone().context("--scenario is required")?;
    let seed = args.seed.context("--seed is required")?;
    let base = Scenario::from_file(&scenario_path).with_context(|| format!("scenario {}", scenario_path.display()))?;
    let levels = match (&args.levels, base.semicompeting) {
        (Some(text), _) => parse_list(text, "level", |s| s.parse::<f64>().ok())?,
        (None, Some(l)) => vec![l],
        (None, None) => vec![0.0, 0.1, 0.4],
    };
    anyhow::ensure!(!levels.is_empty(), "no semi-competing levels given");
    let methods = parse_methods(args.methods.as_deref().unwrap_or("multistate,exclude,censor"))?;
    let s_list = parse_list(args.s.as_deref().unwrap_or("24"), "time", |s| s.parse::<f64>().ok().filter(|v| *v > 0.0))?;
    anyhow::ensure!(!s_list.is_empty(), "no evaluation times given");
    let level = args.level.unwrap_or(0.95);
    check_level(level)?;
    let n = args.n.unwrap_or(2000) as usize;
    let replicates = args.replicates.unwrap_or(100) as usize;
    let bootstrap = args.bootstrap.unwrap_or(100);
    let out_dir = output_dir(&args.output_dir)?;

    let mut summary_text = String::new();
    let mut truth_text = String::new();
    let mut total_failed = 0usize;
    for (li, &sc_level) in levels.iter().enumerate() {
        let scenario = calibrate_semicompeting(&base, sc_level).context("calibrating the semi-competing fraction")?;
        let mut cfg = ExperimentConfig::for_scenario(scenario.clone(), n, replicates, bootstrap, seed);
        cfg.methods = methods.clone();
        cfg.s_list = s_list.clone();
        cfg.level = level;
        let prov = Provenance::new(
            &format!("experiment semicompeting={}", level_tag(sc_level)),
            &args,
            Some(seed),
            &[("scenario", &scenario_path)],
        )?
        .with_line(format!("semicompeting = {sc_level}, rate02 = {}", scenario.t02.baseline.rate));

        let dir = replicate_file(&out_dir, sc_level, 0);
        fs::create_dir_all(dir.parent().unwrap()).with_context(|| format!("creating {}", dir.display()))?;
        eprintln!("semi-competing level {sc_level}: {replicates} replicates of n = {n}");
        let per: Vec<Vec<ReplicateResult>> = (0..replicates)
            .into_par_iter()
            .map(|r| replicate(&cfg, r, &replicate_file(&out_dir, sc_level, r), &prov, args.resume))
            .collect::<Result<_>>()?;
        let results: Vec<ReplicateResult> = per.into_iter().flatten().collect();
        for r in results.iter().filter(|r| r.failed()) {
            eprintln!("replicate {} ({}): {}", r.replicate, r.method.name(), r.error.as_deref().unwrap_or(""));
        }
        total_failed += results.iter().filter(|r| r.failed()).count();
        write_output(&out_dir.join(format!("replicates_level_{}.csv", level_tag(sc_level))), &prov, |buf| {
            Ok(write_replicates_csv(buf, &results)?)
        })?;

        let truth = true_effects(&scenario, &s_list)?;
        let mut t = Vec::new();
        truth.write_csv(&mut t)?;
        let t = String::from_utf8(t)?;
        truth_text.push_str(if li == 0 { &t } else { t.split_once('\n').map_or("", |x| x.1) });

        for (si, &s) in s_list.iter().enumerate() {
            let summary = summarize(&results, &truth, s)?;
            let mut buf = Vec::new();
            write_summary_csv(&mut buf, &summary, 0)?;
            let text = String::from_utf8(buf)?;
            let values = format!("{},{}", sc_level, scenario.id);
            summary_text.push_str(&prefix_columns(&text, "level,scenario", &values, li == 0 && si == 0));
        }
    }

    let prov = Provenance::new("experiment", &args, Some(seed), &[("scenario", &scenario_path)])?;
    write_output(&out_dir.join("truth.csv"), &prov, |buf| Ok(buf.write_all(truth_text.as_bytes())?))?;
    write_output(&out_dir.join("summary.csv"), &prov, |buf| Ok(buf.write_all(summary_text.as_bytes())?))?;
    print!("{summary_text}");
    if total_failed > 0 {
        eprintln!("{total_failed} method-replicate analyses failed; see summary.csv");
    }
    Ok(())
}
