//! State-occupation probabilities of the illness-death model and the causal
//! contrasts built from them.
//!
//! For a covariate profile `(a, x, c)` the global survival is
//! `P(S > s) = P00(s) + P01(s)` with
//!
//! ```text
//! P00(s) = exp(−Λ01(s) − Λ02(s))
//! P01(s) = ∫₀ˢ P00(u) α01(u) exp(−[Λ12(s | u) − Λ12(u | u)]) du
//! ```
//!
//! A stochastic intervention replaces the 0→1 intensity with that of the
//! exposure group `source_exposure`, keeping the death intensities of `a`.

mod fitted;

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use fitted::{fit_multistate, FitError, MultistateFit};

/// Conditioning set `(A, X, C)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateProfile {
    pub a: u8,
    pub x: i64,
    pub c: Vec<f64>,
}

impl CovariateProfile {
    pub fn new(a: u8, x: i64, c: Vec<f64>) -> Self {
        CovariateProfile { a, x, c }
    }

    pub fn with_exposure(&self, a: u8) -> Self {
        CovariateProfile { a, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PolicyTag {
    Natural,
    Shifted,
}

/// Which exposure group's 0→1 intensity generates the mediator time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InterventionPolicy {
    pub source_exposure: u8,
    pub tag: PolicyTag,
}

impl InterventionPolicy {
    pub fn natural(prof: &CovariateProfile) -> Self {
        InterventionPolicy { source_exposure: prof.a, tag: PolicyTag::Natural }
    }

    pub fn shifted(source_exposure: u8) -> Self {
        assert!(source_exposure <= 1, "source exposure must be 0 or 1");
        InterventionPolicy { source_exposure, tag: PolicyTag::Shifted }
    }
}

/// Anything that can produce `P00` and `P01` for a profile and a policy:
/// a fitted semi-parametric model or known parametric hazards.
pub trait StateOccupation {
    fn p00(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> f64;

    fn p01(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> f64;

    fn survival(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> f64 {
        self.p00(prof, policy, s) + self.p01(prof, policy, s)
    }

    /// `P00 + P01` on a grid; implementors may share work across points.
    fn survival_curve(&self, prof: &CovariateProfile, policy: InterventionPolicy, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&s| self.survival(prof, policy, s)).collect()
    }

    /// Warnings about extrapolation or positivity for the given profile.
    fn diagnostics(&self, _template: &CovariateProfile, _horizon: f64) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectsError {
    #[error("total effect is null (|TE| < 1e-12); the proportion eliminated is undefined")]
    DivisionByNullEffect,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Ordering of the two terms of the stochastic indirect effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SieOrdering {
    /// Natural A=1 survival minus survival of A=1 under the A=0 mediator
    /// distribution, so that `TE = SDE + SIE`.
    #[default]
    NaturalMinusShifted,
    /// The opposite sign.
    ShiftedMinusNatural,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ContrastOptions {
    pub sie_ordering: SieOrdering,
}

/// TE, SDE and SIE at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EffectTriple {
    pub te: f64,
    pub sde: f64,
    pub sie: f64,
}

impl EffectTriple {
    pub fn get(&self, effect: Effect) -> f64 {
        match effect {
            Effect::Te => self.te,
            Effect::Sde => self.sde,
            Effect::Sie => self.sie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Effect {
    Te,
    Sde,
    Sie,
}

impl Effect {
    pub const ALL: [Effect; 3] = [Effect::Te, Effect::Sde, Effect::Sie];

    pub fn name(self) -> &'static str {
        match self {
            Effect::Te => "te",
            Effect::Sde => "sde",
            Effect::Sie => "sie",
        }
    }

    pub fn parse(s: &str) -> Option<Effect> {
        Effect::ALL.into_iter().find(|e| e.name() == s)
    }
}

/// TE/SDE/SIE on `grid` for the profile template (its `a` is ignored).
///
/// With `S(a, g)` the survival of exposure `a` under the 0→1 intensity of
/// group `g`: `TE = S(1,1) − S(0,0)`, `SDE = S(1,0) − S(0,0)`,
/// `SIE = S(1,1) − S(1,0)`.
pub fn contrasts<M: StateOccupation + ?Sized>(
    model: &M,
    template: &CovariateProfile,
    grid: &[f64],
    opts: &ContrastOptions,
) -> Vec<EffectTriple> {
    let p1 = template.with_exposure(1);
    let p0 = template.with_exposure(0);
    let s11 = model.survival_curve(&p1, InterventionPolicy::natural(&p1), grid);
    let s00 = model.survival_curve(&p0, InterventionPolicy::natural(&p0), grid);
    let s10 = model.survival_curve(&p1, InterventionPolicy::shifted(0), grid);
    (0..grid.len())
        .map(|i| {
            let sie = match opts.sie_ordering {
                SieOrdering::NaturalMinusShifted => s11[i] - s10[i],
                SieOrdering::ShiftedMinusNatural => s10[i] - s11[i],
            };
            EffectTriple { te: s11[i] - s00[i], sde: s10[i] - s00[i], sie }
        })
        .collect()
}

pub fn total_effect<M: StateOccupation + ?Sized>(model: &M, template: &CovariateProfile, s: f64) -> f64 {
    contrasts(model, template, &[s], &ContrastOptions::default())[0].te
}

pub fn sde<M: StateOccupation + ?Sized>(model: &M, template: &CovariateProfile, s: f64) -> f64 {
    contrasts(model, template, &[s], &ContrastOptions::default())[0].sde
}

pub fn sie<M: StateOccupation + ?Sized>(model: &M, template: &CovariateProfile, s: f64, opts: &ContrastOptions) -> f64 {
    contrasts(model, template, &[s], opts)[0].sie
}

/// Difference in restricted mean survival time `∫₀ʳ S(u|1) − S(u|0) du` by
/// the midpoint rectangular rule with step `step` (the last cell is
/// truncated at `r`).
pub fn rmst_total_effect<M: StateOccupation + ?Sized>(
    model: &M,
    template: &CovariateProfile,
    r: f64,
    step: f64,
) -> Result<f64, EffectsError> {
    if r.is_nan() || r <= 0.0 || step.is_nan() || step <= 0.0 {
        return Err(EffectsError::InvalidArgument("r and step must be positive".into()));
    }
    let mut mids = Vec::new();
    let mut widths = Vec::new();
    let mut lo = 0.0;
    while lo < r {
        let hi = (lo + step).min(r);
        mids.push(0.5 * (lo + hi));
        widths.push(hi - lo);
        lo = hi;
    }
    let p1 = template.with_exposure(1);
    let p0 = template.with_exposure(0);
    let s1 = model.survival_curve(&p1, InterventionPolicy::natural(&p1), &mids);
    let s0 = model.survival_curve(&p0, InterventionPolicy::natural(&p0), &mids);
    Ok(widths.iter().zip(s1.iter().zip(&s0)).map(|(w, (a, b))| w * (a - b)).sum())
}

/// `PE = (TE − SDE) / TE`.
pub fn proportion_eliminated(te: f64, sde: f64) -> Result<f64, EffectsError> {
    if te.abs() < 1e-12 {
        return Err(EffectsError::DivisionByNullEffect);
    }
    Ok((te - sde) / te)
}

/// `{step, 2·step, …, horizon}`; a final partial step ends exactly at `horizon`.
pub fn reporting_grid(horizon: f64, step: f64) -> Result<Vec<f64>, EffectsError> {
    if !horizon.is_finite() || horizon <= 0.0 || step.is_nan() || step <= 0.0 {
        return Err(EffectsError::InvalidArgument("horizon and step must be positive".into()));
    }
    let k = (horizon / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (1..=k).map(|i| i as f64 * step).collect();
    match grid.last() {
        Some(&last) if (horizon - last).abs() <= 1e-9 * horizon => {
            *grid.last_mut().unwrap() = horizon;
        }
        _ => grid.push(horizon),
    }
    Ok(grid)
}

/// Pointwise confidence band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectBands {
    pub te: Band,
    pub sde: Band,
    pub sie: Band,
}

/// Effects on a grid of times, with optional bootstrap bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectCurve {
    pub grid: Vec<f64>,
    pub te: Vec<f64>,
    pub sde: Vec<f64>,
    pub sie: Vec<f64>,
    pub bands: Option<EffectBands>,
    /// `(r, RMST difference)`.
    pub rmst_te: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl EffectCurve {
    pub fn from_triples(grid: Vec<f64>, triples: &[EffectTriple]) -> Self {
        EffectCurve {
            te: triples.iter().map(|t| t.te).collect(),
            sde: triples.iter().map(|t| t.sde).collect(),
            sie: triples.iter().map(|t| t.sie).collect(),
            grid,
            bands: None,
            rmst_te: None,
            warnings: Vec::new(),
        }
    }

    pub fn values(&self, effect: Effect) -> &[f64] {
        match effect {
            Effect::Te => &self.te,
            Effect::Sde => &self.sde,
            Effect::Sie => &self.sie,
        }
    }

    pub fn triple(&self, i: usize) -> EffectTriple {
        EffectTriple { te: self.te[i], sde: self.sde[i], sie: self.sie[i] }
    }

    /// CSV with header `s,te,sde,sie[,te_lo,te_hi,sde_lo,sde_hi,sie_lo,sie_hi]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match &self.bands {
            None => writeln!(w, "s,te,sde,sie")?,
            Some(_) => writeln!(w, "s,te,sde,sie,te_lo,te_hi,sde_lo,sde_hi,sie_lo,sie_hi")?,
        }
        for i in 0..self.grid.len() {
            write!(w, "{},{},{},{}", self.grid[i], self.te[i], self.sde[i], self.sie[i])?;
            if let Some(b) = &self.bands {
                write!(
                    w,
                    ",{},{},{},{},{},{}",
                    b.te.lo[i], b.te.hi[i], b.sde.lo[i], b.sde.hi[i], b.sie.lo[i], b.sie.hi[i]
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// TE/SDE/SIE on `{step, …, horizon}` for one covariate profile.
pub fn effect_curve<M: StateOccupation + ?Sized>(
    model: &M,
    horizon: f64,
    step: f64,
    template: &CovariateProfile,
    opts: &ContrastOptions,
) -> Result<EffectCurve, EffectsError> {
    let grid = reporting_grid(horizon, step)?;
    effects_at(model, &grid, template, opts)
}

/// TE/SDE/SIE at arbitrary increasing times.
pub fn effects_at<M: StateOccupation + ?Sized>(
    model: &M,
    grid: &[f64],
    template: &CovariateProfile,
    opts: &ContrastOptions,
) -> Result<EffectCurve, EffectsError> {
    if grid.is_empty() || grid[0] <= 0.0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EffectsError::InvalidArgument("grid must be positive and strictly increasing".into()));
    }
    let triples = contrasts(model, template, grid, opts);
    let mut curve = EffectCurve::from_triples(grid.to_vec(), &triples);
    curve.warnings = model.diagnostics(template, *grid.last().unwrap());
    Ok(curve)
}

/// Population-averaged effects: the profile-specific contrasts averaged
/// over the empirical distribution of `(x, c)`.
pub fn marginal_effects_at<M: StateOccupation + Sync + ?Sized>(
    model: &M,
    grid: &[f64],
    covariates: &[(i64, Vec<f64>)],
    opts: &ContrastOptions,
) -> Result<EffectCurve, EffectsError> {
    use rayon::prelude::*;
    if covariates.is_empty() {
        return Err(EffectsError::InvalidArgument("no covariate patterns to average over".into()));
    }
    let sums = covariates
        .par_iter()
        .map(|(x, c)| contrasts(model, &CovariateProfile::new(0, *x, c.clone()), grid, opts))
        .reduce(
            || vec![EffectTriple::default(); grid.len()],
            |mut acc, t| {
                for (a, b) in acc.iter_mut().zip(&t) {
                    a.te += b.te;
                    a.sde += b.sde;
                    a.sie += b.sie;
                }
                acc
            },
        );
    let n = covariates.len() as f64;
    let avg: Vec<EffectTriple> =
        sums.iter().map(|t| EffectTriple { te: t.te / n, sde: t.sde / n, sie: t.sie / n }).collect();
    Ok(EffectCurve::from_triples(grid.to_vec(), &avg))
}
