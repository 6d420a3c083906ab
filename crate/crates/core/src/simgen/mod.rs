//! Synthetic illness-death data with known parametric intensities.
//!
//! Every transition has a Weibull baseline `Λ(t) = rate · t^shape` and a
//! proportional effect `exp(βᵀz)`. The 1→2 intensity runs on the diagnosis
//! clock: a subject treated at `t'` has cumulative hazard
//! `rate₁₂ (s^k − t'^k) exp(η₁₂(t'))` over `(t', s]`.

mod generate;
mod truth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{CovariateSpec, Term, Transition, XEncoding};
use crate::effects::CovariateProfile;

pub use generate::{
    calibrate_semicompeting, forward_occupation, generate, generate_with, latent_fraction, GenerateOptions,
    OccupationFrequencies,
};
pub use truth::{true_effects, ParametricModel, TruthRow, TruthTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("unknown scenario key '{0}'")]
    UnknownKey(String),
    #[error("missing scenario key '{0}'")]
    MissingKey(String),
    #[error("invalid scenario parameter {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("scenario {id} structure: {reason}")]
    Structure { id: u32, reason: String },
    #[error("semi-competing target {target} is unreachable: {reason}")]
    Unreachable { target: f64, reason: String },
    #[error(transparent)]
    Quadrature(#[from] crate::quadrature::QuadratureError),
}

/// `Λ(t) = rate · t^shape`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weibull {
    pub shape: f64,
    pub rate: f64,
}

impl Weibull {
    pub fn cumulative(&self, t: f64) -> f64 {
        if self.rate == 0.0 {
            0.0
        } else {
            self.rate * t.powf(self.shape)
        }
    }

    /// Time at which the cumulative hazard scaled by `risk` reaches `e`.
    pub fn invert(&self, e: f64, risk: f64) -> f64 {
        if self.rate == 0.0 {
            f64::INFINITY
        } else {
            (e / (self.rate * risk)).powf(1.0 / self.shape)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ConfounderDist {
    Normal { mean: f64, sd: f64 },
    Bernoulli(f64),
}

impl fmt::Display for ConfounderDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfounderDist::Normal { mean, sd } if *mean == 0.0 && *sd == 1.0 => write!(f, "normal"),
            ConfounderDist::Normal { mean, sd } => write!(f, "normal:{mean}:{sd}"),
            ConfounderDist::Bernoulli(p) => write!(f, "bernoulli:{p}"),
        }
    }
}

impl ConfounderDist {
    fn parse(s: &str) -> Option<ConfounderDist> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["normal"] => Some(ConfounderDist::Normal { mean: 0.0, sd: 1.0 }),
            ["normal", m, sd] => {
                let (mean, sd) = (m.parse().ok()?, sd.parse().ok()?);
                (sd > 0.0).then_some(ConfounderDist::Normal { mean, sd })
            }
            ["bernoulli", p] => {
                let p: f64 = p.parse().ok()?;
                (0.0..=1.0).contains(&p).then_some(ConfounderDist::Bernoulli(p))
            }
            _ => None,
        }
    }
}

/// Baseline and coefficients of one transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionModel {
    pub baseline: Weibull,
    pub coefs: Vec<(Term, f64)>,
}

impl TransitionModel {
    /// Linear predictor with X entered numerically.
    pub fn eta(&self, a: u8, x: i64, c: &[f64], t_prime: f64) -> f64 {
        let a = a as f64;
        let x = x as f64;
        self.coefs
            .iter()
            .map(|&(term, b)| {
                let z = match term {
                    Term::A => a,
                    Term::X => x,
                    Term::C(j) => c[j],
                    Term::AX => a * x,
                    Term::AC(j) => a * c[j],
                    Term::Mediator => t_prime,
                    Term::MediatorSq => t_prime * t_prime,
                    Term::AMediator => a * t_prime,
                    Term::AMediatorSq => a * t_prime * t_prime,
                };
                b * z
            })
            .sum()
    }

    fn coef(&self, term: Term) -> f64 {
        self.coefs.iter().find(|(t, _)| *t == term).map_or(0.0, |(_, b)| *b)
    }

    fn has_exposure_term(&self) -> bool {
        self.coefs.iter().any(|&(t, b)| {
            b != 0.0 && matches!(t, Term::A | Term::AX | Term::AC(_) | Term::AMediator | Term::AMediatorSq)
        })
    }
}

/// A data-generating scenario.
///
/// File keys: `id`, `prevalence`, `x_levels`, `confounders`, `c<j>`
/// (`"normal"`, `"normal:<mean>:<sd>"` or `"bernoulli:<p>"`),
/// `shape<tr>`/`rate<tr>` and coefficients `b<tr>_<term>` for `tr` in
/// `01`, `02`, `12` with `:` in term names written as `_` (`b12_A_T`),
/// `admin_censor`, `dropout_max`, `semicompeting`, `profile_x`,
/// `profile_c<j>`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub id: u32,
    pub prevalence: f64,
    /// X is uniform over `1..=x_levels`.
    pub x_levels: i64,
    pub confounders: Vec<ConfounderDist>,
    pub t01: TransitionModel,
    pub t02: TransitionModel,
    pub t12: TransitionModel,
    pub admin_censor: f64,
    /// Upper end of the uniform dropout time; 0 disables dropout.
    pub dropout_max: f64,
    /// Target death-before-treatment fraction the 0→2 rate was (or is to be)
    /// calibrated to.
    pub semicompeting: Option<f64>,
    /// Covariate values at which effects are reported.
    pub profile_x: i64,
    pub profile_c: Vec<f64>,
}

const SCALAR_KEYS: &[&str] = &[
    "id",
    "prevalence",
    "x_levels",
    "confounders",
    "shape01",
    "rate01",
    "shape02",
    "rate02",
    "shape12",
    "rate12",
    "admin_censor",
    "dropout_max",
    "semicompeting",
    "profile_x",
];

fn transition_of(code: &str) -> Option<Transition> {
    Transition::ALL.into_iter().find(|t| t.code() == code)
}

impl Scenario {
    pub fn model(&self, tr: Transition) -> &TransitionModel {
        match tr {
            Transition::DiagTreat => &self.t01,
            Transition::DiagDeath => &self.t02,
            Transition::TreatDeath => &self.t12,
        }
    }

    pub fn model_mut(&mut self, tr: Transition) -> &mut TransitionModel {
        match tr {
            Transition::DiagTreat => &mut self.t01,
            Transition::DiagDeath => &mut self.t02,
            Transition::TreatDeath => &mut self.t12,
        }
    }

    /// The covariate specification that contains the generating model,
    /// i.e. a correctly specified analysis model.
    pub fn true_spec(&self) -> CovariateSpec {
        let terms = |m: &TransitionModel| m.coefs.iter().map(|(t, _)| *t).collect();
        CovariateSpec {
            t01: terms(&self.t01),
            t02: terms(&self.t02),
            t12: terms(&self.t12),
            x_encoding: XEncoding::Numeric,
        }
    }

    /// [`Scenario::true_spec`] with the exposure main effect added to every
    /// transition that lacks it. Still correctly specified, but it does not
    /// impose a structural null on the effect estimates.
    pub fn analysis_spec(&self) -> CovariateSpec {
        let mut spec = self.true_spec();
        for terms in [&mut spec.t01, &mut spec.t02, &mut spec.t12] {
            if !terms.contains(&Term::A) {
                terms.push(Term::A);
                terms.sort();
            }
        }
        spec
    }

    /// Reporting profile with exposure 0.
    pub fn profile(&self) -> CovariateProfile {
        CovariateProfile::new(0, self.profile_x, self.profile_c.clone())
    }

    pub fn from_file(path: &Path) -> Result<Scenario, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        Scenario::parse(&text)
    }

    /// Parses the flat `key = value` format (a TOML document without tables).
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
        let mut conf_dists: BTreeMap<usize, ConfounderDist> = BTreeMap::new();
        let mut profile_c: BTreeMap<usize, f64> = BTreeMap::new();
        let mut coefs: BTreeMap<Transition, Vec<(Term, f64)>> = BTreeMap::new();
        let number = |key: &str, v: &toml::Value| -> Result<f64, ScenarioError> {
            match v {
                toml::Value::Float(f) => Ok(*f),
                toml::Value::Integer(i) => Ok(*i as f64),
                _ => Err(ScenarioError::Invalid { key: key.into(), reason: "expected a number".into() }),
            }
        };
        let index = |digits: &str, key: &str| -> Result<usize, ScenarioError> {
            match digits.parse::<usize>() {
                Ok(j) if j >= 1 => Ok(j - 1),
                _ => Err(ScenarioError::UnknownKey(key.into())),
            }
        };
        for (key, value) in &table {
            if SCALAR_KEYS.contains(&key.as_str()) {
                scalars.insert(key.clone(), number(key, value)?);
            } else if let Some(rest) = key.strip_prefix("profile_c") {
                profile_c.insert(index(rest, key)?, number(key, value)?);
            } else if let Some(rest) = key.strip_prefix('c').filter(|r| r.chars().all(|c| c.is_ascii_digit())) {
                let j = index(rest, key)?;
                let text = value
                    .as_str()
                    .ok_or_else(|| ScenarioError::Invalid { key: key.clone(), reason: "expected a string".into() })?;
                let dist = ConfounderDist::parse(text).ok_or_else(|| ScenarioError::Invalid {
                    key: key.clone(),
                    reason: format!("'{text}' is not normal, normal:<mean>:<sd> or bernoulli:<p>"),
                })?;
                conf_dists.insert(j, dist);
            } else if let Some((tr, term)) = key
                .strip_prefix('b')
                .and_then(|r| r.split_once('_'))
                .and_then(|(code, term)| Some((transition_of(code)?, term)))
            {
                let term: Term = term.replace('_', ":").parse().map_err(|_| ScenarioError::UnknownKey(key.clone()))?;
                coefs.entry(tr).or_default().push((term, number(key, value)?));
            } else {
                return Err(ScenarioError::UnknownKey(key.clone()));
            }
        }
        let get = |k: &str| scalars.get(k).copied().ok_or_else(|| ScenarioError::MissingKey(k.into()));
        let get_or = |k: &str, d: f64| scalars.get(k).copied().unwrap_or(d);
        let integer = |k: &str, v: f64| -> Result<i64, ScenarioError> {
            if v.fract() == 0.0 {
                Ok(v as i64)
            } else {
                Err(ScenarioError::Invalid { key: k.into(), reason: "expected an integer".into() })
            }
        };
        let n_conf = integer("confounders", get_or("confounders", conf_dists.len() as f64))? as usize;
        let confounders = (0..n_conf)
            .map(|j| conf_dists.get(&j).copied().unwrap_or(ConfounderDist::Normal { mean: 0.0, sd: 1.0 }))
            .collect();
        if let Some(&j) = conf_dists.keys().chain(profile_c.keys()).find(|&&j| j >= n_conf) {
            return Err(ScenarioError::Invalid {
                key: format!("c{}", j + 1),
                reason: format!("scenario declares {n_conf} confounders"),
            });
        }
        let model = |tr: Transition, shape: &str, rate: &str| -> Result<TransitionModel, ScenarioError> {
            Ok(TransitionModel {
                baseline: Weibull { shape: get(shape)?, rate: get(rate)? },
                coefs: {
                    let mut v = coefs.get(&tr).cloned().unwrap_or_default();
                    v.sort_by_key(|(t, _)| *t);
                    v
                },
            })
        };
        let x_levels = integer("x_levels", get_or("x_levels", 1.0))?;
        let sc = Scenario {
            id: integer("id", get("id")?)? as u32,
            prevalence: get_or("prevalence", 0.5),
            x_levels,
            confounders,
            t01: model(Transition::DiagTreat, "shape01", "rate01")?,
            t02: model(Transition::DiagDeath, "shape02", "rate02")?,
            t12: model(Transition::TreatDeath, "shape12", "rate12")?,
            admin_censor: get_or("admin_censor", f64::INFINITY),
            dropout_max: get_or("dropout_max", 0.0),
            semicompeting: scalars.get("semicompeting").copied(),
            profile_x: integer("profile_x", get_or("profile_x", 1.0))?,
            profile_c: (0..n_conf).map(|j| profile_c.get(&j).copied().unwrap_or(0.0)).collect(),
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Writes the scenario back in the flat key format.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        let num = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:?}") };
        line("id", self.id.to_string());
        line("prevalence", num(self.prevalence));
        line("x_levels", self.x_levels.to_string());
        line("confounders", self.confounders.len().to_string());
        for (j, d) in self.confounders.iter().enumerate() {
            line(&format!("c{}", j + 1), format!("\"{d}\""));
        }
        for tr in Transition::ALL {
            let m = self.model(tr);
            line(&format!("shape{}", tr.code()), num(m.baseline.shape));
            line(&format!("rate{}", tr.code()), num(m.baseline.rate));
            for (t, b) in &m.coefs {
                line(&format!("b{}_{}", tr.code(), t.to_string().replace(':', "_")), num(*b));
            }
        }
        line("admin_censor", num(self.admin_censor));
        line("dropout_max", num(self.dropout_max));
        if let Some(f) = self.semicompeting {
            line("semicompeting", num(f));
        }
        line("profile_x", self.profile_x.to_string());
        for (j, v) in self.profile_c.iter().enumerate() {
            line(&format!("profile_c{}", j + 1), num(*v));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |key: &str, reason: &str| Err(ScenarioError::Invalid { key: key.into(), reason: reason.into() });
        if !(0.0..=1.0).contains(&self.prevalence) {
            return invalid("prevalence", "must lie in [0, 1]");
        }
        if self.x_levels < 1 {
            return invalid("x_levels", "must be at least 1");
        }
        for tr in Transition::ALL {
            let m = self.model(tr);
            let code = tr.code();
            if !(m.baseline.shape > 0.0 && m.baseline.shape.is_finite()) {
                return invalid(&format!("shape{code}"), "Weibull shape must be positive");
            }
            // a zero 0→2 rate removes direct death; the other two must be positive
            let rate_ok = if tr == Transition::DiagDeath { m.baseline.rate >= 0.0 } else { m.baseline.rate > 0.0 };
            if !(rate_ok && m.baseline.rate.is_finite()) {
                return invalid(&format!("rate{code}"), "Weibull rate must be positive");
            }
            for (i, (t, b)) in m.coefs.iter().enumerate() {
                let key = format!("b{code}_{}", t.to_string().replace(':', "_"));
                if !b.is_finite() {
                    return invalid(&key, "coefficient must be finite");
                }
                if t.is_mediator_derived() && tr != Transition::TreatDeath {
                    return invalid(&key, "mediator terms are only allowed in transition 12");
                }
                if let Term::C(j) | Term::AC(j) = t {
                    if *j >= self.confounders.len() {
                        return invalid(&key, "refers to an undeclared confounder");
                    }
                }
                if m.coefs[..i].iter().any(|(u, _)| u == t) {
                    return invalid(&key, "duplicate coefficient");
                }
            }
        }
        if self.admin_censor.is_nan() || self.admin_censor <= 0.0 {
            return invalid("admin_censor", "must be positive");
        }
        if !(self.dropout_max >= 0.0 && self.dropout_max.is_finite()) {
            return invalid("dropout_max", "must be finite and nonnegative");
        }
        if let Some(f) = self.semicompeting {
            if !(0.0..=0.9).contains(&f) {
                return invalid("semicompeting", "target must lie in [0, 0.9]");
            }
        }
        if !(1..=self.x_levels).contains(&self.profile_x) {
            return invalid("profile_x", "must be one of the X levels");
        }
        self.check_structure()
    }

    /// Structural constraints of the four study scenarios; other ids are free.
    fn check_structure(&self) -> Result<(), ScenarioError> {
        let fail = |reason: &str| Err(ScenarioError::Structure { id: self.id, reason: reason.into() });
        let mediated = self.t01.has_exposure_term();
        let direct = self.t02.has_exposure_term() || self.t12.has_exposure_term();
        let interaction = self.t12.coef(Term::AMediator) != 0.0 || self.t12.coef(Term::AMediatorSq) != 0.0;
        match self.id {
            1 if !(mediated && direct) => fail("needs exposure effects on both the mediator and the outcome"),
            1 if interaction => fail("must not have an exposure-mediator interaction"),
            2 if !(mediated && direct) => fail("needs exposure effects on both the mediator and the outcome"),
            2 if !interaction => fail("needs an exposure-mediator interaction"),
            3 if direct => fail("exposure terms must be absent from transitions 02 and 12"),
            3 if !mediated => fail("needs an exposure effect on transition 01"),
            4 if mediated => fail("exposure terms must be absent from transition 01"),
            4 if !direct => fail("needs an exposure effect on transition 02 or 12"),
            _ => Ok(()),
        }
    }
}
