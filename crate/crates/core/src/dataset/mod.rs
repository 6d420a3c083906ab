//! Observed illness-death records, their validation, and the long-format
//! expansion consumed by the Cox engine.
//!
//! Each subject is observed as `(Y^T, δ^T, Y^S, δ^S, A, X, C)` where `T` is the
//! time of the non-terminal event (treatment), `S` the time of the terminal
//! event (death), and `Y^T = min(T, S, K)`, `Y^S = min(S, K)` for censoring
//! time `K`.

mod csv_io;
mod spec;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{read_records, write_records};
pub use spec::{CovariateSpec, SpecError, Term, XEncoding};

/// The three transitions of the illness-death model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transition {
    /// Diagnosed → treated (0→1).
    DiagTreat,
    /// Diagnosed → dead (0→2).
    DiagDeath,
    /// Treated → dead (1→2).
    TreatDeath,
}

impl Transition {
    pub const ALL: [Transition; 3] = [Transition::DiagTreat, Transition::DiagDeath, Transition::TreatDeath];

    pub fn code(self) -> &'static str {
        match self {
            Transition::DiagTreat => "01",
            Transition::DiagDeath => "02",
            Transition::TreatDeath => "12",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Transition::DiagTreat => "diagnosed-treated",
            Transition::DiagDeath => "diagnosed-death",
            Transition::TreatDeath => "treated-death",
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One observed individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// Observation time of the non-terminal event, `min(T, S, K)`.
    pub y_t: f64,
    pub delta_t: u8,
    /// Observation time of the terminal event, `min(S, K)`.
    pub y_s: f64,
    pub delta_s: u8,
    /// Binary exposure.
    pub a: u8,
    /// Ordinal covariate (stage).
    pub x: i64,
    /// Baseline confounders.
    pub c: Vec<f64>,
}

impl SubjectRecord {
    pub fn treated(&self) -> bool {
        self.delta_t == 1
    }

    /// Died without experiencing the non-terminal event.
    pub fn semicompeting(&self) -> bool {
        self.delta_s == 1 && self.delta_t == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordProblem {
    NonFiniteTime,
    NegativeTime,
    ZeroTime,
    NonBinaryFlag { field: &'static str, value: u8 },
    TExceedsS,
    CensoredTimeMismatch,
    ZeroLengthTreatedInterval,
    CovariateDimension { expected: usize, found: usize },
    NonFiniteCovariate,
}

impl fmt::Display for RecordProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordProblem::NonFiniteTime => write!(f, "non-finite time"),
            RecordProblem::NegativeTime => write!(f, "negative time"),
            RecordProblem::ZeroTime => write!(f, "zero observation time"),
            RecordProblem::NonBinaryFlag { field, value } => {
                write!(f, "{field} must be 0 or 1 (got {value})")
            }
            RecordProblem::TExceedsS => write!(f, "y_t exceeds y_s"),
            RecordProblem::CensoredTimeMismatch => write!(f, "delta_t = 0 requires y_t = y_s"),
            RecordProblem::ZeroLengthTreatedInterval => {
                write!(f, "treated at y_t = y_s leaves an empty treated-to-death interval")
            }
            RecordProblem::CovariateDimension { expected, found } => {
                write!(f, "expected {expected} confounders, found {found}")
            }
            RecordProblem::NonFiniteCovariate => write!(f, "non-finite confounder value"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordIssue {
    pub id: String,
    pub problem: RecordProblem,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.id, self.problem)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("{} invalid record(s): {}", .0.len(), join_issues(.0))]
    Invalid(Vec<RecordIssue>),
    #[error("malformed CSV: {}", .0.join("; "))]
    Malformed(Vec<String>),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn join_issues(issues: &[RecordIssue]) -> String {
    const SHOWN: usize = 10;
    let mut s = issues.iter().take(SHOWN).map(|i| i.to_string()).collect::<Vec<_>>().join("; ");
    if issues.len() > SHOWN {
        s.push_str(&format!("; ... and {} more", issues.len() - SHOWN));
    }
    s
}

/// Counts reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub events_01: usize,
    pub events_02: usize,
    pub events_12: usize,
    pub n_semicompeting: usize,
    /// `#{δ^S = 1 ∧ δ^T = 0} / n`.
    pub semicompeting_fraction: f64,
    pub n_confounders: usize,
}

/// A nonempty list of records that satisfies every record invariant and
/// shares one confounder dimension.
#[derive(Debug, Clone)]
pub struct ValidatedDataset {
    records: Vec<SubjectRecord>,
    summary: DatasetSummary,
}

fn check_record(r: &SubjectRecord, k: usize) -> Vec<RecordProblem> {
    let mut out = Vec::new();
    if !r.y_t.is_finite() || !r.y_s.is_finite() {
        out.push(RecordProblem::NonFiniteTime);
        return out;
    }
    if r.y_t < 0.0 || r.y_s < 0.0 {
        out.push(RecordProblem::NegativeTime);
    } else if r.y_t == 0.0 {
        out.push(RecordProblem::ZeroTime);
    }
    for (field, value) in [("delta_t", r.delta_t), ("delta_s", r.delta_s), ("a", r.a)] {
        if value > 1 {
            out.push(RecordProblem::NonBinaryFlag { field, value });
        }
    }
    if r.y_t > r.y_s {
        out.push(RecordProblem::TExceedsS);
    } else if r.delta_t == 0 && r.y_t != r.y_s {
        out.push(RecordProblem::CensoredTimeMismatch);
    } else if r.delta_t == 1 && r.y_t == r.y_s {
        out.push(RecordProblem::ZeroLengthTreatedInterval);
    }
    if r.c.len() != k {
        out.push(RecordProblem::CovariateDimension { expected: k, found: r.c.len() });
    } else if r.c.iter().any(|v| !v.is_finite()) {
        out.push(RecordProblem::NonFiniteCovariate);
    }
    out
}

/// Checks every record invariant and computes the dataset summary. All
/// offending records are reported, not just the first.
pub fn validate(records: Vec<SubjectRecord>) -> Result<ValidatedDataset, DatasetError> {
    let Some(first) = records.first() else {
        return Err(DatasetError::Empty);
    };
    let k = first.c.len();
    let issues: Vec<RecordIssue> = records
        .iter()
        .flat_map(|r| check_record(r, k).into_iter().map(|problem| RecordIssue { id: r.id.clone(), problem }))
        .collect();
    if !issues.is_empty() {
        return Err(DatasetError::Invalid(issues));
    }
    Ok(ValidatedDataset::from_checked(records))
}

impl ValidatedDataset {
    fn from_checked(records: Vec<SubjectRecord>) -> Self {
        let n = records.len();
        let events_01 = records.iter().filter(|r| r.treated()).count();
        let events_12 = records.iter().filter(|r| r.treated() && r.delta_s == 1).count();
        let n_semicompeting = records.iter().filter(|r| r.semicompeting()).count();
        let n_confounders = records.first().map_or(0, |r| r.c.len());
        let summary = DatasetSummary {
            n,
            events_01,
            events_02: n_semicompeting,
            events_12,
            n_semicompeting,
            semicompeting_fraction: n_semicompeting as f64 / n as f64,
            n_confounders,
        };
        ValidatedDataset { records, summary }
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SubjectRecord> {
        self.records
    }

    pub fn summary(&self) -> &DatasetSummary {
        &self.summary
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_confounders(&self) -> usize {
        self.summary.n_confounders
    }

    /// Subset by predicate. Fails with [`DatasetError::Empty`] if nothing is kept.
    pub fn filter<F: Fn(&SubjectRecord) -> bool>(&self, keep: F) -> Result<ValidatedDataset, DatasetError> {
        let kept: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        if kept.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Self::from_checked(kept))
    }

    /// Dataset made of the records at `indices` (with repetition), as used by
    /// the subject-level bootstrap.
    pub fn resample(&self, indices: &[usize]) -> Result<ValidatedDataset, DatasetError> {
        if indices.is_empty() {
            return Err(DatasetError::Empty);
        }
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Ok(Self::from_checked(records))
    }

    /// Recodes every death-before-treatment as censored at `y_s`.
    pub fn censor_semicompeting(&self) -> ValidatedDataset {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.semicompeting() {
                    r.delta_s = 0;
                }
                r
            })
            .collect();
        Self::from_checked(records)
    }

    /// Drops every death-before-treatment subject.
    pub fn exclude_semicompeting(&self) -> Result<ValidatedDataset, DatasetError> {
        self.filter(|r| !r.semicompeting())
    }

    /// Number of 0→1 events per `(a, x)` pattern.
    pub fn treatment_events_by_pattern(&self) -> BTreeMap<(u8, i64), usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            let e = out.entry((r.a, r.x)).or_insert(0);
            if r.treated() {
                *e += 1;
            }
        }
        out
    }
}

/// One subject's contribution to one transition in counting-process form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    /// Index of the subject in the dataset it was expanded from.
    pub subject: usize,
    pub transition: Transition,
    /// Left-truncation time; the row is at risk on `(entry, exit]`.
    pub entry: f64,
    pub exit: f64,
    pub status: u8,
    pub z: Vec<f64>,
}

/// Rows of a single transition. Mediator-derived terms use `t' = y_t`.
pub fn expand_transition(
    ds: &ValidatedDataset,
    spec: &CovariateSpec,
    transition: Transition,
) -> Result<Vec<TransitionRow>, SpecError> {
    spec.check_dataset(ds)?;
    let mut rows = Vec::with_capacity(ds.len());
    for (i, r) in ds.records().iter().enumerate() {
        let (entry, exit, status, t_prime) = match (transition, r.treated()) {
            (Transition::DiagTreat, true) => (0.0, r.y_t, 1, None),
            (Transition::DiagTreat, false) => (0.0, r.y_t, 0, None),
            (Transition::DiagDeath, true) => (0.0, r.y_t, 0, None),
            (Transition::DiagDeath, false) => (0.0, r.y_s, r.delta_s, None),
            (Transition::TreatDeath, true) => (r.y_t, r.y_s, r.delta_s, Some(r.y_t)),
            (Transition::TreatDeath, false) => continue,
        };
        rows.push(TransitionRow {
            subject: i,
            transition,
            entry,
            exit,
            status,
            z: spec.design_row(transition, r.a, r.x, &r.c, t_prime),
        });
    }
    Ok(rows)
}

/// Long-format rows of all three transitions, ordered by transition.
pub fn expand_transitions(ds: &ValidatedDataset, spec: &CovariateSpec) -> Result<Vec<TransitionRow>, SpecError> {
    let mut out = Vec::with_capacity(3 * ds.len());
    for tr in Transition::ALL {
        out.extend(expand_transition(ds, spec, tr)?);
    }
    Ok(out)
}

/// Observed outcome `(y_t, δ^T, y_s, δ^S)` of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedOutcome {
    pub y_t: f64,
    pub delta_t: u8,
    pub y_s: f64,
    pub delta_s: u8,
}

/// Inverse of [`expand_transitions`] on the outcome fields, keyed by subject index.
pub fn reconstruct_outcomes(rows: &[TransitionRow]) -> BTreeMap<usize, ObservedOutcome> {
    let mut out: BTreeMap<usize, ObservedOutcome> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.transition == Transition::DiagTreat) {
        out.insert(row.subject, ObservedOutcome { y_t: row.exit, delta_t: row.status, y_s: row.exit, delta_s: 0 });
    }
    for row in rows {
        let Some(o) = out.get_mut(&row.subject) else { continue };
        match row.transition {
            Transition::DiagDeath if o.delta_t == 0 => {
                o.y_s = row.exit;
                o.delta_s = row.status;
            }
            Transition::TreatDeath => {
                o.y_s = row.exit;
                o.delta_s = row.status;
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, y_t: f64, dt: u8, y_s: f64, ds: u8) -> SubjectRecord {
        SubjectRecord { id: id.into(), y_t, delta_t: dt, y_s, delta_s: ds, a: 1, x: 2, c: vec![0.5] }
    }

    fn rows_of(rows: &[TransitionRow], tr: Transition) -> Vec<(f64, f64, u8)> {
        rows.iter().filter(|r| r.transition == tr).map(|r| (r.entry, r.exit, r.status)).collect()
    }

    #[test]
    fn treated_then_dead_contributes_to_all_transitions() {
        let ds = validate(vec![rec("1", 3.0, 1, 10.0, 1)]).unwrap();
        let rows = expand_transitions(&ds, &CovariateSpec::empty()).unwrap();
        assert_eq!(rows_of(&rows, Transition::DiagTreat), vec![(0.0, 3.0, 1)]);
        assert_eq!(rows_of(&rows, Transition::DiagDeath), vec![(0.0, 3.0, 0)]);
        assert_eq!(rows_of(&rows, Transition::TreatDeath), vec![(3.0, 10.0, 1)]);
    }

    #[test]
    fn death_before_treatment_is_semicompeting() {
        let ds = validate(vec![rec("1", 5.0, 0, 5.0, 1)]).unwrap();
        assert_eq!(ds.summary().semicompeting_fraction, 1.0);
        let rows = expand_transitions(&ds, &CovariateSpec::empty()).unwrap();
        assert_eq!(rows_of(&rows, Transition::DiagTreat), vec![(0.0, 5.0, 0)]);
        assert_eq!(rows_of(&rows, Transition::DiagDeath), vec![(0.0, 5.0, 1)]);
        assert!(rows_of(&rows, Transition::TreatDeath).is_empty());
    }

    #[test]
    fn fully_censored_subject() {
        let ds = validate(vec![rec("1", 7.0, 0, 7.0, 0)]).unwrap();
        let rows = expand_transitions(&ds, &CovariateSpec::empty()).unwrap();
        assert_eq!(rows_of(&rows, Transition::DiagTreat), vec![(0.0, 7.0, 0)]);
        assert_eq!(rows_of(&rows, Transition::DiagDeath), vec![(0.0, 7.0, 0)]);
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn rejects_t_after_s() {
        let err = validate(vec![rec("bad", 6.0, 0, 5.0, 1)]).unwrap_err();
        let DatasetError::Invalid(issues) = err else { panic!("wrong error") };
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].id, "bad");
        assert_eq!(issues[0].problem.to_string(), "y_t exceeds y_s");
    }

    #[test]
    fn reports_every_offending_record() {
        let mut flag = rec("flag", 1.0, 2, 4.0, 1);
        flag.a = 3;
        let err = validate(vec![
            rec("ok", 1.0, 1, 2.0, 0),
            rec("neg", -1.0, 1, 2.0, 0),
            flag,
            rec("mismatch", 2.0, 0, 3.0, 1),
            rec("tie", 2.0, 1, 2.0, 1),
        ])
        .unwrap_err();
        let DatasetError::Invalid(issues) = err else { panic!("wrong error") };
        let ids: Vec<_> = issues.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, vec!["neg", "flag", "flag", "mismatch", "tie"]);
        assert!(matches!(issues[3].problem, RecordProblem::CensoredTimeMismatch));
        assert!(matches!(issues[4].problem, RecordProblem::ZeroLengthTreatedInterval));
    }

    #[test]
    fn rejects_empty_and_ragged_confounders() {
        assert!(matches!(validate(vec![]), Err(DatasetError::Empty)));
        let mut r2 = rec("2", 1.0, 1, 2.0, 1);
        r2.c = vec![];
        assert!(validate(vec![rec("1", 1.0, 1, 2.0, 1), r2]).is_err());
    }

    #[test]
    fn naive_method_transforms() {
        let ds = validate(vec![rec("1", 5.0, 0, 5.0, 1), rec("2", 3.0, 1, 9.0, 1), rec("3", 4.0, 0, 4.0, 0)]).unwrap();
        let censored = ds.censor_semicompeting();
        assert_eq!(censored.summary().n_semicompeting, 0);
        assert_eq!(censored.len(), 3);
        let excluded = ds.exclude_semicompeting().unwrap();
        assert_eq!(excluded.len(), 2);
        assert!(excluded.records().iter().all(|r| r.id != "1"));
    }

    fn arb_record() -> impl Strategy<Value = SubjectRecord> {
        (0.01f64..50.0, 0.01f64..50.0, 0u8..2, 0u8..2, 0u8..2).prop_map(|(t, gap, dt, ds, a)| {
            let y_s = if dt == 1 { t + gap } else { t };
            SubjectRecord { id: String::new(), y_t: t, delta_t: dt, y_s, delta_s: ds, a, x: 1, c: vec![] }
        })
    }

    proptest! {
        #[test]
        fn expansion_round_trips_and_counts_events(records in prop::collection::vec(arb_record(), 1..60)) {
            let ds = validate(records.clone()).unwrap();
            let rows = expand_transitions(&ds, &CovariateSpec::empty()).unwrap();
            let events: usize = rows.iter().map(|r| r.status as usize).sum();
            let expected: usize = records.iter().map(|r| (r.delta_t + r.delta_s) as usize).sum();
            prop_assert_eq!(events, expected);
            let back = reconstruct_outcomes(&rows);
            prop_assert_eq!(back.len(), records.len());
            for (i, r) in records.iter().enumerate() {
                let o = back[&i];
                prop_assert_eq!((o.y_t, o.delta_t, o.y_s, o.delta_s), (r.y_t, r.delta_t, r.y_s, r.delta_s));
            }
            for row in &rows {
                prop_assert!(row.entry < row.exit);
            }
            let n12 = rows.iter().filter(|r| r.transition == Transition::TreatDeath).count();
            prop_assert_eq!(n12, records.iter().filter(|r| r.delta_t == 1).count());
            let semi = records.iter().filter(|r| r.delta_s == 1 && r.delta_t == 0).count();
            prop_assert_eq!(ds.summary().semicompeting_fraction, semi as f64 / records.len() as f64);
        }
    }
}
