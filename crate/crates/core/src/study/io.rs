use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{McSummary, MethodId, ReplicateResult, StudyError};
use crate::effects::{Band, Effect, EffectBands, EffectTriple};

const REPLICATE_HEADER: [&str; 14] = [
    "replicate",
    "method",
    "scenario",
    "seed",
    "s",
    "effect",
    "estimate",
    "lo",
    "hi",
    "boot_failures",
    "boot_total",
    "ci_unreliable",
    "converged",
    "error",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn io_err(e: impl std::fmt::Display) -> StudyError {
    StudyError::InvalidArgument(format!("replicate file: {e}"))
}

/// Tidy rows: one per (replicate, method, effect, s).
pub fn write_replicates_csv<W: Write>(w: W, results: &[ReplicateResult]) -> Result<(), StudyError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPLICATE_HEADER).map_err(io_err)?;
    for r in results {
        for (j, &s) in r.s_list.iter().enumerate() {
            for effect in Effect::ALL {
                let est = r.estimates.get(j).map(|t| t.get(effect));
                let band = r.ci.as_ref().map(|b| match effect {
                    Effect::Te => &b.te,
                    Effect::Sde => &b.sde,
                    Effect::Sie => &b.sie,
                });
                out.write_record([
                    r.replicate.to_string(),
                    r.method.to_string(),
                    r.scenario_id.to_string(),
                    r.seed.to_string(),
                    s.to_string(),
                    effect.name().to_string(),
                    opt(est),
                    opt(band.map(|b| b.lo[j])),
                    opt(band.map(|b| b.hi[j])),
                    r.boot_failures.to_string(),
                    r.boot_total.to_string(),
                    r.ci_unreliable.to_string(),
                    r.converged.to_string(),
                    r.error.clone().unwrap_or_default(),
                ])
                .map_err(io_err)?;
            }
        }
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

fn parse_opt(s: &str) -> Result<Option<f64>, StudyError> {
    if s == "NA" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(io_err)
    }
}

/// Inverse of [`write_replicates_csv`]; `#` lines are skipped.
pub fn read_replicates_csv<R: Read>(r: R) -> Result<Vec<ReplicateResult>, StudyError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = rdr.headers().map_err(io_err)?.clone();
    if header.iter().collect::<Vec<_>>() != REPLICATE_HEADER {
        return Err(io_err("unexpected header"));
    }
    type Key = (usize, MethodId);
    /// Estimate, lower and upper bound.
    type Cell = (Option<f64>, Option<f64>, Option<f64>);
    struct Acc {
        res: ReplicateResult,
        values: BTreeMap<(u64, Effect), Cell>,
    }
    let mut acc: BTreeMap<Key, Acc> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(io_err)?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let replicate: usize = f(0).parse().map_err(io_err)?;
        let method = MethodId::parse(f(1)).ok_or_else(|| io_err(format!("unknown method {}", f(1))))?;
        let s: f64 = f(4).parse().map_err(io_err)?;
        let effect = Effect::parse(f(5)).ok_or_else(|| io_err(format!("unknown effect {}", f(5))))?;
        let entry = acc.entry((replicate, method)).or_insert_with(|| Acc {
            res: ReplicateResult {
                replicate,
                method,
                scenario_id: f(2).parse().unwrap_or(0),
                seed: f(3).parse().unwrap_or(0),
                s_list: Vec::new(),
                estimates: Vec::new(),
                ci: None,
                boot_failures: f(9).parse().unwrap_or(0),
                boot_total: f(10).parse().unwrap_or(0),
                ci_unreliable: f(11) == "true",
                converged: f(12) == "true",
                error: (!f(13).is_empty()).then(|| f(13).to_string()),
            },
            values: BTreeMap::new(),
        });
        if !entry.res.s_list.contains(&s) {
            entry.res.s_list.push(s);
        }
        entry.values.insert((s.to_bits(), effect), (parse_opt(f(6))?, parse_opt(f(7))?, parse_opt(f(8))?));
    }
    let mut out = Vec::new();
    for (_, Acc { mut res, values }) in acc {
        let get = |s: f64, e: Effect| values.get(&(s.to_bits(), e)).copied().unwrap_or((None, None, None));
        let complete = res.s_list.iter().all(|&s| Effect::ALL.iter().all(|&e| get(s, e).0.is_some()));
        if complete && res.error.is_none() {
            res.estimates = res
                .s_list
                .iter()
                .map(|&s| EffectTriple {
                    te: get(s, Effect::Te).0.unwrap(),
                    sde: get(s, Effect::Sde).0.unwrap(),
                    sie: get(s, Effect::Sie).0.unwrap(),
                })
                .collect();
        }
        let has_ci =
            res.s_list.iter().all(|&s| Effect::ALL.iter().all(|&e| get(s, e).1.is_some() && get(s, e).2.is_some()));
        if has_ci && !res.s_list.is_empty() {
            let band = |e: Effect| Band {
                lo: res.s_list.iter().map(|&s| get(s, e).1.unwrap()).collect(),
                hi: res.s_list.iter().map(|&s| get(s, e).2.unwrap()).collect(),
            };
            res.ci = Some(EffectBands { te: band(Effect::Te), sde: band(Effect::Sde), sie: band(Effect::Sie) });
        }
        out.push(res);
    }
    Ok(out)
}

/// One row per (method, effect) with bias, coverage, MSE and type-I error.
pub fn write_summary_csv<W: Write>(w: W, summary: &McSummary, failed_replicates: usize) -> Result<(), StudyError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method",
        "effect",
        "s",
        "truth",
        "replicates",
        "failed_replicates",
        "mean",
        "bias",
        "variance",
        "mse",
        "coverage",
        "type1_error",
        "intervals",
        "boot_failures",
        "unreliable_intervals",
    ])
    .map_err(io_err)?;
    for r in &summary.rows {
        out.write_record([
            r.method.to_string(),
            r.effect.name().to_string(),
            r.s.to_string(),
            r.truth.to_string(),
            r.replicates.to_string(),
            r.failed_replicates.max(failed_replicates).to_string(),
            r.mean.to_string(),
            r.bias.to_string(),
            r.variance.to_string(),
            r.mse.to_string(),
            opt(r.coverage),
            opt(r.type1_error),
            r.intervals.to_string(),
            r.boot_failures.to_string(),
            r.unreliable_intervals.to_string(),
        ])
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}
