use std::io::Write;

use serde::Serialize;

use super::{Scenario, ScenarioError};
use crate::effects::{contrasts, ContrastOptions, CovariateProfile, InterventionPolicy, StateOccupation};
use crate::quadrature::{adaptive_simpson, QuadratureError};

const SIMPSON_TOL: f64 = 1e-10;
const SIMPSON_DEPTH: u32 = 50;

/// Occupation probabilities computed from the generating hazards.
#[derive(Debug, Clone)]
pub struct ParametricModel {
    pub scenario: Scenario,
}

impl ParametricModel {
    pub fn new(scenario: Scenario) -> Self {
        ParametricModel { scenario }
    }

    fn risks(&self, prof: &CovariateProfile, policy: InterventionPolicy) -> (f64, f64) {
        let sc = &self.scenario;
        let r01 = sc.t01.eta(policy.source_exposure, prof.x, &prof.c, 0.0).exp();
        let r02 = sc.t02.eta(prof.a, prof.x, &prof.c, 0.0).exp();
        (r01, r02)
    }

    fn p00_at(&self, r01: f64, r02: f64, u: f64) -> f64 {
        (-self.scenario.t01.baseline.cumulative(u) * r01 - self.scenario.t02.baseline.cumulative(u) * r02).exp()
    }

    /// Integrand of `P01(s)` at treatment time `u`, without the `α01` factor.
    fn stay_treated(&self, prof: &CovariateProfile, u: f64, s: f64) -> f64 {
        let t12 = &self.scenario.t12;
        let inc = t12.baseline.cumulative(s) - t12.baseline.cumulative(u);
        (-inc * t12.eta(prof.a, prof.x, &prof.c, u).exp()).exp()
    }

    /// `P01(s)` by adaptive Simpson after the substitution `u = s·v^m`,
    /// which turns the `u^(k−1)` factor of a Weibull intensity into a
    /// smooth power of `v`.
    pub fn try_p01(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> Result<f64, QuadratureError> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        let (r01, r02) = self.risks(prof, policy);
        let b01 = self.scenario.t01.baseline;
        let m = (5.0 / b01.shape).ceil().max(1.0);
        let scale = b01.rate * b01.shape * r01 * s.powf(b01.shape) * m;
        let f = |v: f64| {
            if v == 0.0 {
                return 0.0;
            }
            let u = s * v.powf(m);
            scale * v.powf(m * b01.shape - 1.0) * self.p00_at(r01, r02, u) * self.stay_treated(prof, u, s)
        };
        adaptive_simpson(f, 0.0, 1.0, SIMPSON_TOL, SIMPSON_DEPTH)
    }

    /// `P01(s)` by the midpoint rule on a uniform grid of width `step`,
    /// the discretization used for fitted curves.
    pub fn p01_rectangular(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64, step: f64) -> f64 {
        let (r01, r02) = self.risks(prof, policy);
        let b01 = self.scenario.t01.baseline;
        let mut total = 0.0;
        let mut lo = 0.0;
        while lo < s {
            let hi = (lo + step).min(s);
            let u = 0.5 * (lo + hi);
            let d01 = (b01.cumulative(hi) - b01.cumulative(lo)) * r01;
            total += self.p00_at(r01, r02, u) * d01 * self.stay_treated(prof, u, s);
            lo = hi;
        }
        total
    }
}

impl StateOccupation for ParametricModel {
    fn p00(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> f64 {
        let (r01, r02) = self.risks(prof, policy);
        self.p00_at(r01, r02, s)
    }

    /// Panics if the quadrature fails; use [`ParametricModel::try_p01`] to
    /// handle that case.
    fn p01(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> f64 {
        self.try_p01(prof, policy, s).expect("quadrature of P01 converges")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthRow {
    pub s: f64,
    pub te: f64,
    pub sde: f64,
    pub sie: f64,
}

/// True effects of a scenario at its reporting profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthTable {
    pub scenario_id: u32,
    pub semicompeting: Option<f64>,
    pub profile: CovariateProfile,
    pub rows: Vec<TruthRow>,
}

impl TruthTable {
    pub fn at(&self, s: f64) -> Option<&TruthRow> {
        self.rows.iter().find(|r| (r.s - s).abs() < 1e-9)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "scenario,semicompeting,s,te,sde,sie")?;
        let level = self.semicompeting.map_or("NA".to_string(), |f| f.to_string());
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", self.scenario_id, level, r.s, r.te, r.sde, r.sie)?;
        }
        Ok(())
    }
}

/// TE, SDE and SIE of `sc` at its reporting profile on `grid`, from the
/// generating hazards.
pub fn true_effects(sc: &Scenario, grid: &[f64]) -> Result<TruthTable, ScenarioError> {
    let model = ParametricModel::new(sc.clone());
    let template = sc.profile();
    // surface quadrature failures as errors before the infallible trait path
    for a in [0u8, 1] {
        let p = template.with_exposure(a);
        for &s in grid {
            model.try_p01(&p, InterventionPolicy::natural(&p), s)?;
            model.try_p01(&p, InterventionPolicy::shifted(1 - a), s)?;
        }
    }
    let rows = contrasts(&model, &template, grid, &ContrastOptions::default())
        .into_iter()
        .zip(grid)
        .map(|(t, &s)| TruthRow { s, te: t.te, sde: t.sde, sie: t.sie })
        .collect();
    Ok(TruthTable { scenario_id: sc.id, semicompeting: sc.semicompeting, profile: template, rows })
}
