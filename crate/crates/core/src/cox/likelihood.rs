use super::{CoxError, StepFunction};
use crate::dataset::TransitionRow;

/// Log partial likelihood with its first two derivatives.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    /// Observed information (negative Hessian), row-major `p × p`.
    pub information: Vec<f64>,
}

/// Rows of one transition arranged for repeated risk-set sweeps.
///
/// The risk set at time `t` is `{rows: entry < t ≤ exit}`; tied event times
/// use the Breslow approximation. Covariates are centered internally, which
/// leaves the partial likelihood unchanged.
#[derive(Debug, Clone)]
pub(crate) struct RiskSets {
    n: usize,
    p: usize,
    z: Vec<f64>,
    means: Vec<f64>,
    entry: Vec<f64>,
    exit: Vec<f64>,
    event: Vec<bool>,
    by_exit_desc: Vec<usize>,
    by_entry_desc: Vec<usize>,
    n_events: usize,
}

pub(crate) struct EventGroup<'a> {
    pub time: f64,
    pub deaths: usize,
    pub s0: f64,
    pub s1: &'a [f64],
    pub s2: &'a [f64],
    pub event_eta: f64,
    pub event_z: &'a [f64],
}

impl RiskSets {
    pub(crate) fn new(rows: &[TransitionRow]) -> Result<Self, CoxError> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.z.len());
        let mut z = Vec::with_capacity(n * p);
        for r in rows {
            if r.z.len() != p {
                return Err(CoxError::DimensionMismatch { expected: p, found: r.z.len() });
            }
            if !(r.entry.is_finite() && r.exit.is_finite() && r.entry < r.exit) || r.z.iter().any(|v| !v.is_finite()) {
                return Err(CoxError::InvalidRow { subject: r.subject });
            }
            z.extend_from_slice(&r.z);
        }
        let mut means = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                means[j] += z[i * p + j];
            }
        }
        if n > 0 {
            means.iter_mut().for_each(|m| *m /= n as f64);
        }
        for i in 0..n {
            for j in 0..p {
                z[i * p + j] -= means[j];
            }
        }
        let entry: Vec<f64> = rows.iter().map(|r| r.entry).collect();
        let exit: Vec<f64> = rows.iter().map(|r| r.exit).collect();
        let event: Vec<bool> = rows.iter().map(|r| r.status == 1).collect();
        let mut by_exit_desc: Vec<usize> = (0..n).collect();
        by_exit_desc.sort_by(|&a, &b| exit[b].total_cmp(&exit[a]));
        let mut by_entry_desc: Vec<usize> = (0..n).collect();
        by_entry_desc.sort_by(|&a, &b| entry[b].total_cmp(&entry[a]));
        let n_events = event.iter().filter(|e| **e).count();
        Ok(RiskSets { n, p, z, means, entry, exit, event, by_exit_desc, by_entry_desc, n_events })
    }

    pub(crate) fn p(&self) -> usize {
        self.p
    }

    pub(crate) fn n_events(&self) -> usize {
        self.n_events
    }

    fn centered_eta(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.p;
        (0..self.n).map(|i| (0..p).map(|j| beta[j] * self.z[i * p + j]).sum()).collect()
    }

    /// Visits every distinct event time in decreasing order. Returns the
    /// log-scale shift `c` such that `exp(η − c)` were the weights used.
    fn sweep(&self, beta: &[f64], second_order: bool, mut visit: impl FnMut(EventGroup<'_>)) -> f64 {
        let p = self.p;
        let eta = self.centered_eta(beta);
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; if second_order { p * p } else { 0 }];
        let mut ev_z = vec![0.0; p];
        let mut at_risk = 0usize;
        let (mut ie, mut ir) = (0usize, 0usize);

        let update = |i: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
            let wi = sign * w[i];
            let zi = &self.z[i * p..(i + 1) * p];
            *s0 += wi;
            for j in 0..p {
                s1[j] += wi * zi[j];
            }
            if second_order {
                for j in 0..p {
                    let a = wi * zi[j];
                    for k in 0..=j {
                        s2[j * p + k] += a * zi[k];
                    }
                }
            }
        };

        while ie < self.n {
            let t = self.exit[self.by_exit_desc[ie]];
            let mut deaths = 0usize;
            let mut event_eta = 0.0;
            ev_z.iter_mut().for_each(|v| *v = 0.0);
            while ie < self.n && self.exit[self.by_exit_desc[ie]] == t {
                let i = self.by_exit_desc[ie];
                update(i, 1.0, &mut s0, &mut s1, &mut s2);
                at_risk += 1;
                if self.event[i] {
                    deaths += 1;
                    event_eta += eta[i];
                    for (e, z) in ev_z.iter_mut().zip(&self.z[i * p..(i + 1) * p]) {
                        *e += z;
                    }
                }
                ie += 1;
            }
            while ir < self.n && self.entry[self.by_entry_desc[ir]] >= t {
                update(self.by_entry_desc[ir], -1.0, &mut s0, &mut s1, &mut s2);
                at_risk -= 1;
                ir += 1;
            }
            if at_risk == 0 {
                s0 = 0.0;
                s1.iter_mut().for_each(|v| *v = 0.0);
                s2.iter_mut().for_each(|v| *v = 0.0);
            }
            if deaths > 0 {
                visit(EventGroup { time: t, deaths, s0, s1: &s1, s2: &s2, event_eta, event_z: &ev_z });
            }
        }
        shift
    }

    pub(crate) fn evaluate(&self, beta: &[f64]) -> LikelihoodEval {
        let p = self.p;
        let mut loglik = 0.0;
        let mut gradient = vec![0.0; p];
        let mut information = vec![0.0; p * p];
        let mut mean = vec![0.0; p];
        let mut groups: Vec<(f64, f64)> = Vec::new();
        let shift = self.sweep(beta, true, |g| {
            let d = g.deaths as f64;
            groups.push((g.event_eta, d * g.s0.ln()));
            for j in 0..p {
                mean[j] = g.s1[j] / g.s0;
                gradient[j] += g.event_z[j] - d * mean[j];
            }
            for j in 0..p {
                for k in 0..=j {
                    information[j * p + k] += d * (g.s2[j * p + k] / g.s0 - mean[j] * mean[k]);
                }
            }
        });
        // accumulate in increasing time order for reproducible rounding
        for &(eta, dlog) in groups.iter().rev() {
            loglik += eta - dlog;
        }
        let total_deaths = self.n_events as f64;
        loglik -= total_deaths * shift;
        for j in 0..p {
            for k in 0..j {
                information[k * p + j] = information[j * p + k];
            }
        }
        LikelihoodEval { loglik, gradient, information }
    }

    /// Breslow cumulative baseline hazard at `z = 0` (uncentered scale).
    pub(crate) fn breslow(&self, beta: &[f64]) -> StepFunction {
        let mut times = Vec::new();
        let mut ratios = Vec::new();
        let shift = self.sweep(beta, false, |g| {
            times.push(g.time);
            ratios.push(g.deaths as f64 / g.s0);
        });
        let offset: f64 = shift + beta.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        let scale = (-offset).exp();
        times.reverse();
        ratios.reverse();
        let mut cum = 0.0;
        let values = ratios
            .iter()
            .map(|r| {
                cum += r * scale;
                cum
            })
            .collect();
        StepFunction::new(times, values)
    }
}

/// Log partial likelihood, score and observed information at `beta`.
pub fn partial_likelihood(rows: &[TransitionRow], beta: &[f64]) -> Result<LikelihoodEval, CoxError> {
    let rs = RiskSets::new(rows)?;
    if beta.len() != rs.p() {
        return Err(CoxError::DimensionMismatch { expected: rs.p(), found: beta.len() });
    }
    Ok(rs.evaluate(beta))
}
