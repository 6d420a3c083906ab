use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::{CovariateProfile, InterventionPolicy, StateOccupation};
use crate::cox::{fit_partial_likelihood, CoxError, CoxFit, CoxOptions};
use crate::dataset::{expand_transition, CovariateSpec, SpecError, Transition, ValidatedDataset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("transition {transition}: {source}")]
    Cox { transition: Transition, source: CoxError },
}

/// The three transition fits plus the covariate specification that built
/// their design matrices. A missing fit means the transition has no
/// intensity (no observed events, or forced null).
#[derive(Debug, Clone, Serialize)]
pub struct MultistateFit {
    #[serde(skip)]
    pub spec: CovariateSpec,
    pub fit01: Option<CoxFit>,
    pub fit02: Option<CoxFit>,
    pub fit12: Option<CoxFit>,
    /// 0→1 events per `(a, x)` pattern in the fitting data.
    pub treatment_events: BTreeMap<(u8, i64), usize>,
}

/// Fits the three transitions of `ds`. Transitions without events get no
/// fit; `null_death_before_treatment` drops the 0→2 intensity altogether.
pub fn fit_multistate(
    ds: &ValidatedDataset,
    spec: &CovariateSpec,
    opts: &CoxOptions,
    null_death_before_treatment: bool,
) -> Result<MultistateFit, FitError> {
    spec.check_dataset(ds)?;
    let fit_one = |tr: Transition| -> Result<Option<CoxFit>, FitError> {
        let rows = expand_transition(ds, spec, tr)?;
        if rows.iter().all(|r| r.status == 0) {
            return Ok(None);
        }
        let init = vec![0.0; spec.n_columns(tr)];
        fit_partial_likelihood(&rows, &init, opts).map(Some).map_err(|source| FitError::Cox { transition: tr, source })
    };
    let fit01 = fit_one(Transition::DiagTreat)?;
    let fit02 = if null_death_before_treatment { None } else { fit_one(Transition::DiagDeath)? };
    let fit12 = fit_one(Transition::TreatDeath)?;
    Ok(MultistateFit { spec: spec.clone(), fit01, fit02, fit12, treatment_events: ds.treatment_events_by_pattern() })
}

impl MultistateFit {
    pub fn fit(&self, tr: Transition) -> Option<&CoxFit> {
        match tr {
            Transition::DiagTreat => self.fit01.as_ref(),
            Transition::DiagDeath => self.fit02.as_ref(),
            Transition::TreatDeath => self.fit12.as_ref(),
        }
    }

    /// `exp(βᵀz)` for the profile, 1 when the transition has no fit.
    fn risk(&self, tr: Transition, a: u8, prof: &CovariateProfile, t_prime: Option<f64>) -> f64 {
        match self.fit(tr) {
            None => 1.0,
            Some(f) => {
                let z = self.spec.design_row(tr, a, prof.x, &prof.c, t_prime);
                f.linear_predictor(&z).expect("profile matches the fitted specification").exp()
            }
        }
    }

    fn base_eval(&self, tr: Transition, t: f64) -> f64 {
        self.fit(tr).map_or(0.0, |f| f.baseline.eval(t))
    }

    fn base_eval_left(&self, tr: Transition, t: f64) -> f64 {
        self.fit(tr).map_or(0.0, |f| f.baseline.eval_left(t))
    }

    /// Integration nodes of `P01`: the 0→1 Breslow jumps with their weights
    /// `P00(u−) · dΛ01(u)` and the 1→2 relative risk for treatment at `u`.
    fn treatment_nodes(&self, prof: &CovariateProfile, policy: InterventionPolicy) -> Vec<(f64, f64, f64)> {
        let Some(f01) = &self.fit01 else { return Vec::new() };
        let r01 = self.risk(Transition::DiagTreat, policy.source_exposure, prof, None);
        let r02 = self.risk(Transition::DiagDeath, prof.a, prof, None);
        let base = &f01.baseline;
        base.jump_times()
            .iter()
            .enumerate()
            .map(|(j, &u)| {
                let before01 = if j == 0 { 0.0 } else { base.cum_values()[j - 1] };
                let p00_left = (-before01 * r01 - self.base_eval_left(Transition::DiagDeath, u) * r02).exp();
                let weight = p00_left * base.jump(j) * r01;
                let r12 = self.risk(Transition::TreatDeath, prof.a, prof, Some(u));
                (u, weight, r12)
            })
            .collect()
    }

    fn p01_from_nodes(&self, nodes: &[(f64, f64, f64)], s: f64) -> f64 {
        let b12_s = self.base_eval(Transition::TreatDeath, s);
        nodes
            .iter()
            .take_while(|(u, _, _)| *u <= s)
            .map(|&(u, w, r12)| w * (-(b12_s - self.base_eval(Transition::TreatDeath, u)) * r12).exp())
            .sum()
    }

    /// Largest event time over the fitted transitions.
    pub fn last_event_times(&self) -> Vec<(Transition, f64)> {
        Transition::ALL
            .iter()
            .filter_map(|&tr| self.fit(tr).and_then(|f| f.baseline.last_jump()).map(|t| (tr, t)))
            .collect()
    }
}

impl StateOccupation for MultistateFit {
    fn p00(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> f64 {
        let r01 = self.risk(Transition::DiagTreat, policy.source_exposure, prof, None);
        let r02 = self.risk(Transition::DiagDeath, prof.a, prof, None);
        (-self.base_eval(Transition::DiagTreat, s) * r01 - self.base_eval(Transition::DiagDeath, s) * r02).exp()
    }

    fn p01(&self, prof: &CovariateProfile, policy: InterventionPolicy, s: f64) -> f64 {
        self.p01_from_nodes(&self.treatment_nodes(prof, policy), s)
    }

    fn survival_curve(&self, prof: &CovariateProfile, policy: InterventionPolicy, grid: &[f64]) -> Vec<f64> {
        let nodes = self.treatment_nodes(prof, policy);
        grid.iter().map(|&s| self.p00(prof, policy, s) + self.p01_from_nodes(&nodes, s)).collect()
    }

    fn diagnostics(&self, template: &CovariateProfile, horizon: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (tr, last) in self.last_event_times() {
            if horizon > last {
                out.push(format!(
                    "horizon {horizon} exceeds the last observed event time {last} of transition {tr}; its cumulative hazard is held constant beyond it"
                ));
            }
        }
        if self.fit01.is_some() {
            for a in [0u8, 1] {
                let events = self.treatment_events.get(&(a, template.x)).copied().unwrap_or(0);
                if events == 0 {
                    out.push(format!(
                        "positivity: no 0->1 events among subjects with A={a}, X={} in the fitting data",
                        template.x
                    ));
                }
            }
        }
        out
    }
}
