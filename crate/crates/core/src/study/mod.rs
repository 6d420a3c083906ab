//! Estimator comparison: the multistate analysis against two analyses that
//! ignore death before treatment, with subject-level bootstrap intervals and
//! Monte Carlo summaries.

mod io;

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cox::CoxOptions;
use crate::dataset::{CovariateSpec, ValidatedDataset};
use crate::effects::{
    contrasts, Band, ContrastOptions, CovariateProfile, Effect, EffectBands, EffectTriple, EffectsError, FitError,
};
use crate::effects::{fit_multistate, MultistateFit};
use crate::rng::{derive_seed, substream};
use crate::simgen::{generate, Scenario, ScenarioError, TruthTable};

pub use io::{read_replicates_csv, write_replicates_csv, write_summary_csv};

const REPLICATE_KEY: u64 = 0x7265_706c;
const BOOTSTRAP_KEY: u64 = 0x626f_6f74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MethodId {
    Multistate,
    ExcludeTgtS,
    CensorTgtS,
}

impl MethodId {
    pub const ALL: [MethodId; 3] = [MethodId::Multistate, MethodId::ExcludeTgtS, MethodId::CensorTgtS];

    /// Command-line name.
    pub fn name(self) -> &'static str {
        match self {
            MethodId::Multistate => "multistate",
            MethodId::ExcludeTgtS => "exclude",
            MethodId::CensorTgtS => "censor",
        }
    }

    pub fn parse(s: &str) -> Option<MethodId> {
        let s = s.trim().to_ascii_lowercase();
        MethodId::ALL.into_iter().find(|m| m.name() == s || m.to_string().to_ascii_lowercase() == s)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodId::Multistate => "Multistate",
            MethodId::ExcludeTgtS => "ExcludeTgtS",
            MethodId::CensorTgtS => "CensorTgtS",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("{method}: no treated subjects in the analytic sample")]
    NoTreatedSubjects { method: MethodId },
    #[error("{method}: {source}")]
    Fit { method: MethodId, source: FitError },
    #[error("{method}: {message}")]
    Dataset { method: MethodId, message: String },
    #[error("{method}: all {b} bootstrap replicates failed")]
    AllBootstrapFailed { method: MethodId, b: usize },
    #[error(transparent)]
    Effects(#[from] EffectsError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no replicate results to summarize")]
    EmptyResults,
}

/// The dataset a method analyses and whether it drops the 0→2 intensity.
pub fn analytic_sample(method: MethodId, ds: &ValidatedDataset) -> Result<(ValidatedDataset, bool), StudyError> {
    match method {
        MethodId::Multistate => Ok((ds.clone(), false)),
        MethodId::ExcludeTgtS => {
            let kept =
                ds.exclude_semicompeting().map_err(|e| StudyError::Dataset { method, message: e.to_string() })?;
            if !kept.records().iter().any(|r| r.treated()) {
                return Err(StudyError::NoTreatedSubjects { method });
            }
            Ok((kept, true))
        }
        MethodId::CensorTgtS => Ok((ds.censor_semicompeting(), true)),
    }
}

pub fn fit_method(
    method: MethodId,
    ds: &ValidatedDataset,
    spec: &CovariateSpec,
    opts: &CoxOptions,
) -> Result<MultistateFit, StudyError> {
    let (sample, null02) = analytic_sample(method, ds)?;
    fit_multistate(&sample, spec, opts, null02).map_err(|source| StudyError::Fit { method, source })
}

fn all_converged(fit: &MultistateFit) -> bool {
    [&fit.fit01, &fit.fit02, &fit.fit12].into_iter().flatten().all(|f| f.converged)
}

/// Effects of `method` at `template` on `s_list`, with a flag telling
/// whether every transition fit converged.
pub fn estimate(
    method: MethodId,
    ds: &ValidatedDataset,
    spec: &CovariateSpec,
    template: &CovariateProfile,
    s_list: &[f64],
    copts: &ContrastOptions,
) -> Result<(Vec<EffectTriple>, bool), StudyError> {
    let fit = fit_method(method, ds, spec, &CoxOptions::default())?;
    Ok((contrasts(&fit, template, s_list, copts), all_converged(&fit)))
}

/// Quantile with linear interpolation between order statistics (type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Successful bootstrap estimates, in replicate order, and the failure count.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub s_list: Vec<f64>,
    pub b: usize,
    pub draws: Vec<Vec<EffectTriple>>,
    pub failures: usize,
}

impl BootstrapDraws {
    /// More than 10% of the replicates failed.
    pub fn unreliable(&self) -> bool {
        self.failures * 10 > self.b
    }

    /// Percentile interval at `level` for every effect and time.
    pub fn interval(&self, level: f64) -> Result<EffectBands, StudyError> {
        if !(level > 0.0 && level < 1.0) {
            return Err(StudyError::InvalidArgument(format!("confidence level {level} is not in (0, 1)")));
        }
        let alpha = (1.0 - level) / 2.0;
        let band = |effect: Effect| {
            let (mut lo, mut hi) = (Vec::new(), Vec::new());
            for j in 0..self.s_list.len() {
                let mut v: Vec<f64> = self.draws.iter().map(|d| d[j].get(effect)).collect();
                v.sort_by(f64::total_cmp);
                lo.push(quantile(&v, alpha));
                hi.push(quantile(&v, 1.0 - alpha));
            }
            Band { lo, hi }
        };
        Ok(EffectBands { te: band(Effect::Te), sde: band(Effect::Sde), sie: band(Effect::Sie) })
    }
}

/// Resampling of subjects for bootstrap replicate `index`.
fn resample_indices(n: usize, seed: u64, index: usize) -> Vec<usize> {
    let mut rng = substream(seed, &[BOOTSTRAP_KEY], index as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Re-estimates on `b` subject-level resamples. Failed fits are dropped and
/// counted.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_draws(
    method: MethodId,
    ds: &ValidatedDataset,
    spec: &CovariateSpec,
    template: &CovariateProfile,
    s_list: &[f64],
    b: usize,
    seed: u64,
    copts: &ContrastOptions,
) -> Result<BootstrapDraws, StudyError> {
    if b < 2 {
        return Err(StudyError::InvalidArgument("the bootstrap needs at least 2 replicates".into()));
    }
    let results: Vec<Option<Vec<EffectTriple>>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let idx = resample_indices(ds.len(), seed, k);
            let boot = ds.resample(&idx).ok()?;
            estimate(method, &boot, spec, template, s_list, copts).ok().map(|(t, _)| t)
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures == b {
        return Err(StudyError::AllBootstrapFailed { method, b });
    }
    Ok(BootstrapDraws { s_list: s_list.to_vec(), b, draws: results.into_iter().flatten().collect(), failures })
}

/// Percentile bootstrap interval with its failure accounting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub level: f64,
    pub bands: EffectBands,
    pub b: usize,
    pub failures: usize,
    pub unreliable: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci(
    method: MethodId,
    ds: &ValidatedDataset,
    spec: &CovariateSpec,
    template: &CovariateProfile,
    s_list: &[f64],
    b: usize,
    seed: u64,
    level: f64,
    copts: &ContrastOptions,
) -> Result<BootstrapCi, StudyError> {
    let draws = bootstrap_draws(method, ds, spec, template, s_list, b, seed, copts)?;
    Ok(BootstrapCi {
        level,
        bands: draws.interval(level)?,
        b,
        failures: draws.failures,
        unreliable: draws.unreliable(),
    })
}

/// One method's analysis of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub method: MethodId,
    pub scenario_id: u32,
    /// Seed the dataset was generated from.
    pub seed: u64,
    pub s_list: Vec<f64>,
    /// Empty when the analysis failed.
    pub estimates: Vec<EffectTriple>,
    pub ci: Option<EffectBands>,
    pub boot_failures: usize,
    pub boot_total: usize,
    pub ci_unreliable: bool,
    pub converged: bool,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Scenario with its 0→2 rate already calibrated.
    pub scenario: Scenario,
    pub spec: CovariateSpec,
    pub template: CovariateProfile,
    pub n: usize,
    pub replicates: usize,
    /// Bootstrap replicates per analysis; 0 skips the intervals.
    pub bootstrap: usize,
    pub level: f64,
    pub methods: Vec<MethodId>,
    pub s_list: Vec<f64>,
    pub seed: u64,
    pub contrast: ContrastOptions,
}

impl ExperimentConfig {
    /// Correctly specified analysis, with the exposure in every transition, at
    /// the scenario's reporting profile.
    pub fn for_scenario(scenario: Scenario, n: usize, replicates: usize, bootstrap: usize, seed: u64) -> Self {
        ExperimentConfig {
            spec: scenario.analysis_spec(),
            template: scenario.profile(),
            scenario,
            n,
            replicates,
            bootstrap,
            level: 0.95,
            methods: MethodId::ALL.to_vec(),
            s_list: vec![24.0],
            seed,
            contrast: ContrastOptions::default(),
        }
    }

    fn check(&self) -> Result<(), StudyError> {
        if self.replicates == 0 || self.n == 0 {
            return Err(StudyError::InvalidArgument("replicates and n must be at least 1".into()));
        }
        if self.bootstrap == 1 {
            return Err(StudyError::InvalidArgument("the bootstrap needs at least 2 replicates".into()));
        }
        if self.methods.is_empty() || self.s_list.is_empty() {
            return Err(StudyError::InvalidArgument("no methods or no evaluation times".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(StudyError::InvalidArgument(format!("confidence level {} is not in (0, 1)", self.level)));
        }
        Ok(())
    }

    pub fn dataset_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.seed, &[REPLICATE_KEY, replicate as u64])
    }

    /// All methods share the resamples of a replicate.
    fn bootstrap_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.seed, &[BOOTSTRAP_KEY, replicate as u64])
    }
}

fn analyse(cfg: &ExperimentConfig, replicate: usize, method: MethodId, ds: &ValidatedDataset) -> ReplicateResult {
    let mut out = ReplicateResult {
        replicate,
        method,
        scenario_id: cfg.scenario.id,
        seed: cfg.dataset_seed(replicate),
        s_list: cfg.s_list.clone(),
        estimates: Vec::new(),
        ci: None,
        boot_failures: 0,
        boot_total: cfg.bootstrap,
        ci_unreliable: false,
        converged: false,
        error: None,
    };
    match estimate(method, ds, &cfg.spec, &cfg.template, &cfg.s_list, &cfg.contrast) {
        Ok((est, converged)) => {
            out.estimates = est;
            out.converged = converged;
        }
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    }
    if cfg.bootstrap >= 2 {
        let seed = cfg.bootstrap_seed(replicate);
        match bootstrap_draws(method, ds, &cfg.spec, &cfg.template, &cfg.s_list, cfg.bootstrap, seed, &cfg.contrast) {
            Ok(d) => {
                out.boot_failures = d.failures;
                out.ci_unreliable = d.unreliable();
                out.ci = d.interval(cfg.level).ok();
            }
            Err(_) => {
                // the point estimate stands; the interval is missing
                out.boot_failures = cfg.bootstrap;
                out.ci_unreliable = true;
            }
        }
    }
    out
}

/// Generates replicate `r` and analyses it with every configured method.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> Result<Vec<ReplicateResult>, StudyError> {
    cfg.check()?;
    let records = generate(&cfg.scenario, cfg.n, cfg.dataset_seed(replicate))?;
    let ds = match crate::dataset::validate(records) {
        Ok(ds) => ds,
        Err(e) => {
            return Ok(cfg
                .methods
                .iter()
                .map(|&m| ReplicateResult {
                    replicate,
                    method: m,
                    scenario_id: cfg.scenario.id,
                    seed: cfg.dataset_seed(replicate),
                    s_list: cfg.s_list.clone(),
                    estimates: Vec::new(),
                    ci: None,
                    boot_failures: 0,
                    boot_total: cfg.bootstrap,
                    ci_unreliable: false,
                    converged: false,
                    error: Some(e.to_string()),
                })
                .collect())
        }
    };
    Ok(cfg.methods.iter().map(|&m| analyse(cfg, replicate, m, &ds)).collect())
}

/// Runs replicates `0..R` in parallel. Results are ordered by replicate and
/// then by the configured method order, whatever the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateResult>, StudyError> {
    cfg.check()?;
    let per: Vec<Vec<ReplicateResult>> =
        (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect::<Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Monte Carlo performance of one method for one effect at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummaryRow {
    pub method: MethodId,
    pub effect: Effect,
    pub s: f64,
    pub truth: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub mean: f64,
    pub bias: f64,
    /// Population variance (divisor R) of the estimates.
    pub variance: f64,
    pub mse: f64,
    /// Fraction of intervals containing the truth; `None` without intervals.
    pub coverage: Option<f64>,
    /// Fraction of intervals excluding zero, reported when the truth is zero.
    pub type1_error: Option<f64>,
    pub intervals: usize,
    pub boot_failures: usize,
    pub unreliable_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub rows: Vec<McSummaryRow>,
}

impl McSummary {
    pub fn get(&self, method: MethodId, effect: Effect) -> Option<&McSummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.effect == effect)
    }
}

/// Truths with absolute value at most this are treated as null effects.
pub const NULL_TRUTH: f64 = 1e-8;

/// Bias, variance, MSE, coverage and (for null truths) the type-I error of
/// every method and effect at time `s`.
pub fn summarize(results: &[ReplicateResult], truth: &TruthTable, s: f64) -> Result<McSummary, StudyError> {
    if results.is_empty() {
        return Err(StudyError::EmptyResults);
    }
    let row = truth.at(s).ok_or_else(|| StudyError::InvalidArgument(format!("no true value at s = {s}")))?;
    let mut methods: Vec<MethodId> = results.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut rows = Vec::new();
    for method in methods {
        let mine: Vec<&ReplicateResult> = results.iter().filter(|r| r.method == method).collect();
        let ok: Vec<(&ReplicateResult, usize)> = mine
            .iter()
            .filter(|r| !r.failed())
            .filter_map(|r| r.s_list.iter().position(|&t| (t - s).abs() < 1e-9).map(|j| (*r, j)))
            .collect();
        let failed = mine.len() - ok.len();
        for effect in Effect::ALL {
            let t = match effect {
                Effect::Te => row.te,
                Effect::Sde => row.sde,
                Effect::Sie => row.sie,
            };
            let est: Vec<f64> = ok.iter().map(|(r, j)| r.estimates[*j].get(effect)).collect();
            let n = est.len() as f64;
            let (mean, bias, variance, mse) = if est.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mean = est.iter().sum::<f64>() / n;
                let variance = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
                let mse = est.iter().map(|e| (e - t).powi(2)).sum::<f64>() / n;
                (mean, mean - t, variance, mse)
            };
            let cis: Vec<(f64, f64)> = ok
                .iter()
                .filter_map(|(r, j)| {
                    r.ci.as_ref().map(|b| {
                        let band = match effect {
                            Effect::Te => &b.te,
                            Effect::Sde => &b.sde,
                            Effect::Sie => &b.sie,
                        };
                        (band.lo[*j], band.hi[*j])
                    })
                })
                .collect();
            let frac = |pred: &dyn Fn(f64, f64) -> bool| {
                (!cis.is_empty())
                    .then(|| cis.iter().filter(|(lo, hi)| pred(*lo, *hi)).count() as f64 / cis.len() as f64)
            };
            let coverage = frac(&|lo, hi| lo <= t && t <= hi);
            let type1_error = if t.abs() <= NULL_TRUTH { frac(&|lo, hi| lo > 0.0 || hi < 0.0) } else { None };
            rows.push(McSummaryRow {
                method,
                effect,
                s,
                truth: t,
                replicates: est.len(),
                failed_replicates: failed,
                mean,
                bias,
                variance,
                mse,
                coverage,
                type1_error,
                intervals: cis.len(),
                boot_failures: ok.iter().map(|(r, _)| r.boot_failures).sum(),
                unreliable_intervals: ok.iter().filter(|(r, _)| r.ci_unreliable).count(),
            });
        }
    }
    Ok(McSummary { rows })
}

#[cfg(test)]
mod tests;
