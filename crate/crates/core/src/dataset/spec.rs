use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Transition, ValidatedDataset};

/// A model term. Mediator-derived terms (`T`, `T2`, `A:T`, `A:T2`) refer to
/// the treatment time `t'` and are only allowed in the 1→2 transition.
/// Variant order is the canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    A,
    X,
    /// Confounder component, zero-based.
    C(usize),
    AX,
    AC(usize),
    Mediator,
    MediatorSq,
    AMediator,
    AMediatorSq,
}

impl Term {
    pub fn is_mediator_derived(self) -> bool {
        matches!(self, Term::Mediator | Term::MediatorSq | Term::AMediator | Term::AMediatorSq)
    }

    fn confounder(self) -> Option<usize> {
        match self {
            Term::C(j) | Term::AC(j) => Some(j),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::A => write!(f, "A"),
            Term::X => write!(f, "X"),
            Term::C(j) => write!(f, "C{}", j + 1),
            Term::AX => write!(f, "A:X"),
            Term::AC(j) => write!(f, "A:C{}", j + 1),
            Term::Mediator => write!(f, "T"),
            Term::MediatorSq => write!(f, "T2"),
            Term::AMediator => write!(f, "A:T"),
            Term::AMediatorSq => write!(f, "A:T2"),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl FromStr for Term {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let confounder = |digits: &str| -> Result<usize, SpecError> {
            match digits.parse::<usize>() {
                Ok(j) if j >= 1 => Ok(j - 1),
                _ => Err(SpecError::UnknownTerm(s.to_string())),
            }
        };
        Ok(match compact.as_str() {
            "A" => Term::A,
            "X" => Term::X,
            "A:X" | "X:A" => Term::AX,
            "T" => Term::Mediator,
            "T2" => Term::MediatorSq,
            "A:T" | "T:A" => Term::AMediator,
            "A:T2" | "T2:A" => Term::AMediatorSq,
            other => {
                if let Some(rest) = other.strip_prefix("A:C") {
                    Term::AC(confounder(rest)?)
                } else if let Some(rest) = other.strip_prefix('C') {
                    Term::C(confounder(rest)?)
                } else {
                    return Err(SpecError::UnknownTerm(s.to_string()));
                }
            }
        })
    }
}

/// How the ordinal covariate `X` enters the linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum XEncoding {
    Numeric,
    /// One indicator per non-reference level, in `levels` order.
    Categorical {
        levels: Vec<i64>,
        reference: i64,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("unknown term '{0}'")]
    UnknownTerm(String),
    #[error("term {term} is mediator-derived and only allowed in transition 12 (found in {transition})")]
    MediatorTermOutside12 { term: String, transition: Transition },
    #[error("term {term} refers to confounder C{index} but the data have {available}")]
    MissingConfounder { term: String, index: usize, available: usize },
    #[error("duplicate term {term} in transition {transition}")]
    DuplicateTerm { term: String, transition: Transition },
    #[error("categorical X: reference level {0} is not among the declared levels")]
    BadReference(i64),
    #[error("categorical X: value {0} is not a declared level")]
    UnknownLevel(i64),
    #[error("covariate specification: {0}")]
    Parse(String),
}

/// Per-transition term lists.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    pub t01: Vec<Term>,
    pub t02: Vec<Term>,
    pub t12: Vec<Term>,
    pub x_encoding: XEncoding,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default)]
    t01: Vec<String>,
    #[serde(default)]
    t02: Vec<String>,
    #[serde(default)]
    t12: Vec<String>,
    #[serde(default = "numeric")]
    x_encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_levels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_reference: Option<i64>,
}

fn numeric() -> String {
    "numeric".into()
}

impl CovariateSpec {
    /// No covariates in any transition.
    pub fn empty() -> Self {
        CovariateSpec { t01: vec![], t02: vec![], t12: vec![], x_encoding: XEncoding::Numeric }
    }

    /// `A + X + C1..Ck` in every transition, plus `T + A:T` in 1→2.
    pub fn main_effects(n_confounders: usize) -> Self {
        let mut base = vec![Term::A, Term::X];
        base.extend((0..n_confounders).map(Term::C));
        let mut t12 = base.clone();
        t12.extend([Term::Mediator, Term::AMediator]);
        CovariateSpec { t01: base.clone(), t02: base, t12, x_encoding: XEncoding::Numeric }
    }

    pub fn terms(&self, transition: Transition) -> &[Term] {
        match transition {
            Transition::DiagTreat => &self.t01,
            Transition::DiagDeath => &self.t02,
            Transition::TreatDeath => &self.t12,
        }
    }

    /// Structural checks that do not depend on data.
    pub fn check(&self) -> Result<(), SpecError> {
        for tr in Transition::ALL {
            let terms = self.terms(tr);
            for (i, t) in terms.iter().enumerate() {
                if t.is_mediator_derived() && tr != Transition::TreatDeath {
                    return Err(SpecError::MediatorTermOutside12 { term: t.to_string(), transition: tr });
                }
                if terms[..i].contains(t) {
                    return Err(SpecError::DuplicateTerm { term: t.to_string(), transition: tr });
                }
            }
        }
        if let XEncoding::Categorical { levels, reference } = &self.x_encoding {
            if !levels.contains(reference) {
                return Err(SpecError::BadReference(*reference));
            }
        }
        Ok(())
    }

    /// Checks that every term names an existing field of `ds`.
    pub fn check_dataset(&self, ds: &ValidatedDataset) -> Result<(), SpecError> {
        self.check()?;
        let k = ds.n_confounders();
        for tr in Transition::ALL {
            for t in self.terms(tr) {
                if let Some(j) = t.confounder() {
                    if j >= k {
                        return Err(SpecError::MissingConfounder { term: t.to_string(), index: j + 1, available: k });
                    }
                }
            }
        }
        if let XEncoding::Categorical { levels, .. } = &self.x_encoding {
            if let Some(r) = ds.records().iter().find(|r| !levels.contains(&r.x)) {
                return Err(SpecError::UnknownLevel(r.x));
            }
        }
        Ok(())
    }

    fn x_columns(&self, x: i64) -> Vec<f64> {
        match &self.x_encoding {
            XEncoding::Numeric => vec![x as f64],
            XEncoding::Categorical { levels, reference } => {
                levels.iter().filter(|l| *l != reference).map(|l| if *l == x { 1.0 } else { 0.0 }).collect()
            }
        }
    }

    fn x_names(&self, prefix: &str) -> Vec<String> {
        match &self.x_encoding {
            XEncoding::Numeric => vec![format!("{prefix}X")],
            XEncoding::Categorical { levels, reference } => {
                levels.iter().filter(|l| *l != reference).map(|l| format!("{prefix}X={l}")).collect()
            }
        }
    }

    /// Column labels of the design matrix for `transition`.
    pub fn column_names(&self, transition: Transition) -> Vec<String> {
        let mut out = Vec::new();
        for t in self.terms(transition) {
            match t {
                Term::X => out.extend(self.x_names("")),
                Term::AX => out.extend(self.x_names("A:")),
                other => out.push(other.to_string()),
            }
        }
        out
    }

    pub fn n_columns(&self, transition: Transition) -> usize {
        self.column_names(transition).len()
    }

    /// Design row for one subject. `t_prime` is the treatment time and must
    /// be provided whenever the transition carries mediator-derived terms.
    pub fn design_row(&self, transition: Transition, a: u8, x: i64, c: &[f64], t_prime: Option<f64>) -> Vec<f64> {
        let a = a as f64;
        let tp = || t_prime.expect("mediator-derived term requires a treatment time");
        let mut z = Vec::with_capacity(self.terms(transition).len() + 2);
        for t in self.terms(transition) {
            match *t {
                Term::A => z.push(a),
                Term::X => z.extend(self.x_columns(x)),
                Term::C(j) => z.push(c[j]),
                Term::AX => z.extend(self.x_columns(x).into_iter().map(|v| a * v)),
                Term::AC(j) => z.push(a * c[j]),
                Term::Mediator => z.push(tp()),
                Term::MediatorSq => z.push(tp() * tp()),
                Term::AMediator => z.push(a * tp()),
                Term::AMediatorSq => z.push(a * tp() * tp()),
            }
        }
        z
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SpecError> {
        let file: SpecFile = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        let parse = |v: &[String]| v.iter().map(|s| s.parse()).collect::<Result<Vec<Term>, _>>();
        let x_encoding = match file.x_encoding.as_str() {
            "numeric" => XEncoding::Numeric,
            "categorical" => {
                let levels = file.x_levels.ok_or_else(|| SpecError::Parse("categorical X needs x_levels".into()))?;
                let reference = file.x_reference.unwrap_or(levels[0]);
                XEncoding::Categorical { levels, reference }
            }
            other => return Err(SpecError::Parse(format!("unknown x_encoding '{other}'"))),
        };
        let spec = CovariateSpec { t01: parse(&file.t01)?, t02: parse(&file.t02)?, t12: parse(&file.t12)?, x_encoding };
        spec.check()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        let names = |v: &[Term]| v.iter().map(|t| t.to_string()).collect();
        let (x_encoding, x_levels, x_reference) = match &self.x_encoding {
            XEncoding::Numeric => ("numeric".to_string(), None, None),
            XEncoding::Categorical { levels, reference } => {
                ("categorical".to_string(), Some(levels.clone()), Some(*reference))
            }
        };
        let file = SpecFile {
            t01: names(&self.t01),
            t02: names(&self.t02),
            t12: names(&self.t12),
            x_encoding,
            x_levels,
            x_reference,
        };
        toml::to_string(&file).expect("spec serializes")
    }
}
