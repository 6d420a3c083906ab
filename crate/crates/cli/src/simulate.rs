use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use msm_mediate::dataset::write_records;
use msm_mediate::effects::reporting_grid;
use msm_mediate::simgen::{calibrate_semicompeting, generate_with, true_effects, GenerateOptions, Scenario};
use serde::{Deserialize, Serialize};

use crate::common::init_threads;
use crate::config::{file_sha256, is_false, merge, output_dir, write_output, Provenance, TOOL};

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Scenario file (flat `key = value`).
    #[arg(long, visible_alias = "input")]
    pub scenario: Option<PathBuf>,
    /// Number of subjects.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    /// Latent death-before-treatment fraction; the 0→2 rate is calibrated to it.
    /// Defaults to the scenario's `semicompeting` key, if any.
    #[arg(long)]
    pub semicompeting: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file name inside the output directory.
    #[arg(long)]
    pub output: Option<String>,
    /// Disable administrative censoring and dropout.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub no_censoring: bool,
    /// Also write the true TE/SDE/SIE on a 0.5 grid up to this time.
    #[arg(long)]
    pub truth_horizon: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, env = "MSM_MEDIATE_THREADS")]
    pub threads: Option<usize>,
    /// TOML file with default values for these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: SimulateArgs) -> Result<()> {
    let args = merge(&cli, cli.config.as_deref())?;
    init_threads(args.threads)?;
    let scenario_path = args.scenario.clone().context("--scenario is required")?;
    let n = args.n.context("--n is required")?;
    anyhow::ensure!(n >= 1, "--n must be at least 1");
    let seed = args.seed.context("--seed is required")?;
    let out_dir = output_dir(&args.output_dir)?;
    let output = args.output.clone().unwrap_or_else(|| "simulated.csv".into());

    let base = Scenario::from_file(&scenario_path).with_context(|| format!("scenario {}", scenario_path.display()))?;
    let target = args.semicompeting.or(base.semicompeting);
    let scenario = match target {
        Some(t) => calibrate_semicompeting(&base, t).context("calibrating the semi-competing fraction")?,
        None => base,
    };
    let records = generate_with(&scenario, n as usize, seed, &GenerateOptions { censoring: !args.no_censoring })?;

    let prov = Provenance::new("simulate", &args, Some(seed), &[("scenario", &scenario_path)])?
        .with_line(format!("rate02 = {}", scenario.t02.baseline.rate));
    let path = out_dir.join(&output);
    write_output(&path, &prov, |buf| Ok(write_records(buf, &records)?))?;

    let sidecar = serde_json::json!({
        "tool": TOOL,
        "command": "simulate",
        "config_sha256": prov.config_hash,
        "scenario_sha256": file_sha256(&scenario_path)?,
        "seed": seed,
        "n": n,
        "config": &args,
        "scenario": &scenario,
    });
    let sidecar_path = out_dir.join(format!("{output}.provenance.json"));
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)? + "\n")
        .with_context(|| format!("writing {}", sidecar_path.display()))?;

    if let Some(h) = args.truth_horizon {
        let grid = reporting_grid(h, 0.5)?;
        let truth = true_effects(&scenario, &grid)?;
        write_output(&out_dir.join("truth.csv"), &prov, |buf| Ok(truth.write_csv(buf)?))?;
    }
    let observed = records.iter().filter(|r| r.delta_s == 1 && r.delta_t == 0).count();
    eprintln!(
        "wrote {} subjects to {} ({} died before treatment, rate02 = {:.6})",
        records.len(),
        path.display(),
        observed,
        scenario.t02.baseline.rate
    );
    Ok(())
}
