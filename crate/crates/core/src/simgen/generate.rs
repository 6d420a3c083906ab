use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use super::{ConfounderDist, Scenario, ScenarioError};
use crate::dataset::SubjectRecord;
use crate::effects::{CovariateProfile, InterventionPolicy};
use crate::rng::substream;

const GENERATE_KEY: u64 = 0x6765_6e65;
const CALIBRATE_KEY: u64 = 0x6361_6c69;
const FORWARD_KEY: u64 = 0x666f_7277;
const CALIBRATION_SEED: u64 = 20_240_501;
const CALIBRATION_N: usize = 100_000;
const FORWARD_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    /// Apply administrative and dropout censoring.
    pub censoring: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { censoring: true }
    }
}

/// Per-subject random inputs. Every subject consumes the same number of
/// draws, so changing a rate never shifts the stream of other quantities.
struct Draws {
    a: u8,
    x: i64,
    c: Vec<f64>,
    e: [f64; 3],
    dropout: f64,
}

fn draw_covariates(sc: &Scenario, rng: &mut ChaCha8Rng) -> (u8, i64, Vec<f64>) {
    let a = u8::from(rng.random::<f64>() < sc.prevalence);
    let x = rng.random_range(1..=sc.x_levels);
    let c = sc
        .confounders
        .iter()
        .map(|d| match *d {
            ConfounderDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            ConfounderDist::Bernoulli(p) => f64::from(u8::from(rng.random::<f64>() < p)),
        })
        .collect();
    (a, x, c)
}

fn draw_clocks(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.sample(Exp1), rng.sample(Exp1), rng.sample(Exp1)]
}

fn draw_subject(sc: &Scenario, rng: &mut ChaCha8Rng) -> Draws {
    let (a, x, c) = draw_covariates(sc, rng);
    let e = draw_clocks(rng);
    let dropout = rng.random::<f64>();
    Draws { a, x, c, e, dropout }
}

/// Uncensored event times of one path.
#[derive(Debug, Clone, Copy)]
struct Latent {
    t01: f64,
    t02: f64,
    /// Death time; equals `t02` when death comes first.
    death: f64,
}

impl Latent {
    fn treated(&self) -> bool {
        self.t01 < self.t02
    }
}

/// Latent clocks for exposure `a` with the 0→1 intensity of group `source`.
fn latent(sc: &Scenario, a: u8, source: u8, x: i64, c: &[f64], e: [f64; 3]) -> Latent {
    let t01 = sc.t01.baseline.invert(e[0], sc.t01.eta(source, x, c, 0.0).exp());
    let t02 = sc.t02.baseline.invert(e[1], sc.t02.eta(a, x, c, 0.0).exp());
    let death = if t01 < t02 {
        let b = sc.t12.baseline;
        let risk = sc.t12.eta(a, x, c, t01).exp();
        (t01.powf(b.shape) + e[2] / (b.rate * risk)).powf(1.0 / b.shape)
    } else {
        t02
    };
    Latent { t01, t02, death }
}

fn observe(id: usize, d: &Draws, l: Latent, censor: f64) -> SubjectRecord {
    let (y_t, delta_t, y_s, delta_s) = if l.treated() {
        if l.t01 <= censor {
            let dead = l.death <= censor;
            (l.t01, 1, if dead { l.death } else { censor }, u8::from(dead))
        } else {
            (censor, 0, censor, 0)
        }
    } else if l.t02 <= censor {
        (l.t02, 0, l.t02, 1)
    } else {
        (censor, 0, censor, 0)
    };
    SubjectRecord { id: (id + 1).to_string(), y_t, delta_t, y_s, delta_s, a: d.a, x: d.x, c: d.c.clone() }
}

pub fn generate(sc: &Scenario, n: usize, seed: u64) -> Result<Vec<SubjectRecord>, ScenarioError> {
    generate_with(sc, n, seed, &GenerateOptions::default())
}

/// Draws `n` subjects. Subject `i` uses its own substream, so the output is
/// identical for any thread count.
pub fn generate_with(
    sc: &Scenario,
    n: usize,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Vec<SubjectRecord>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::Invalid { key: "n".into(), reason: "sample size must be at least 1".into() });
    }
    sc.validate()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[GENERATE_KEY], i as u64);
            let d = draw_subject(sc, &mut rng);
            let l = latent(sc, d.a, d.a, d.x, &d.c, d.e);
            let censor = if opts.censoring {
                let dropout = if sc.dropout_max > 0.0 { d.dropout * sc.dropout_max } else { f64::INFINITY };
                sc.admin_censor.min(dropout)
            } else {
                f64::INFINITY
            };
            observe(i, &d, l, censor)
        })
        .collect())
}

/// Fraction of `n` latent paths that die before treatment, ignoring censoring.
pub fn latent_fraction(sc: &Scenario, n: usize, seed: u64) -> f64 {
    let count: usize = (0..n)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = substream(seed, &[GENERATE_KEY], i as u64);
            let d = draw_subject(sc, &mut rng);
            !latent(sc, d.a, d.a, d.x, &d.c, d.e).treated()
        })
        .count();
    count as f64 / n as f64
}

/// Rescales the 0→2 baseline rate so that the latent death-before-treatment
/// fraction equals `target` on a fixed sample of 10⁵ paths.
///
/// With common random numbers, path `i` dies first exactly when the rate
/// exceeds `ρᵢ = E₀₂ / (exp(η₀₂) t₀₁^k)`, so the fraction is a step function
/// of the rate and its root lies between two order statistics of `ρᵢ`.
pub fn calibrate_semicompeting(sc: &Scenario, target: f64) -> Result<Scenario, ScenarioError> {
    if !(0.0..=0.9).contains(&target) {
        return Err(ScenarioError::Unreachable { target, reason: "target must lie in [0, 0.9]".into() });
    }
    let mut out = sc.clone();
    out.semicompeting = Some(target);
    if target == 0.0 {
        out.t02.baseline.rate = 0.0;
        out.validate()?;
        return Ok(out);
    }
    let k02 = sc.t02.baseline.shape;
    let mut thresholds: Vec<f64> = (0..CALIBRATION_N)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(CALIBRATION_SEED, &[CALIBRATE_KEY], i as u64);
            let d = draw_subject(sc, &mut rng);
            let t01 = sc.t01.baseline.invert(d.e[0], sc.t01.eta(d.a, d.x, &d.c, 0.0).exp());
            d.e[1] / (sc.t02.eta(d.a, d.x, &d.c, 0.0).exp() * t01.powf(k02))
        })
        .collect();
    thresholds.sort_by(f64::total_cmp);
    let m = (target * CALIBRATION_N as f64).round() as usize;
    let (lo, hi) = (thresholds[m - 1], thresholds[m]);
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0) {
        return Err(ScenarioError::Unreachable {
            target,
            reason: "the 0->1 intensity leaves no room for the requested fraction".into(),
        });
    }
    out.t02.baseline.rate = (lo * hi).sqrt();
    out.validate()?;
    Ok(out)
}

/// State-occupation frequencies of forward-simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationFrequencies {
    pub times: Vec<f64>,
    pub n: usize,
    pub p00: Vec<f64>,
    pub p01: Vec<f64>,
}

impl OccupationFrequencies {
    /// Binomial standard error of a frequency `p` over `n` paths.
    pub fn std_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.n as f64).sqrt()
    }
}

/// Simulates `n` uncensored paths at a fixed profile under `policy` and
/// counts who is alive and untreated, or alive and treated, at each time.
pub fn forward_occupation(
    sc: &Scenario,
    prof: &CovariateProfile,
    policy: InterventionPolicy,
    times: &[f64],
    n: usize,
    seed: u64,
) -> OccupationFrequencies {
    let chunks = n.div_ceil(FORWARD_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, &[FORWARD_KEY], k as u64);
            let len = FORWARD_CHUNK.min(n - k * FORWARD_CHUNK);
            let mut c00 = vec![0usize; times.len()];
            let mut c01 = vec![0usize; times.len()];
            for _ in 0..len {
                let e = draw_clocks(&mut rng);
                let l = latent(sc, prof.a, policy.source_exposure, prof.x, &prof.c, e);
                for (j, &s) in times.iter().enumerate() {
                    if l.t01.min(l.t02) > s {
                        c00[j] += 1;
                    } else if l.treated() && l.death > s {
                        c01[j] += 1;
                    }
                }
            }
            (c00, c01)
        })
        .reduce(
            || (vec![0; times.len()], vec![0; times.len()]),
            |(mut a0, mut a1), (b0, b1)| {
                for j in 0..a0.len() {
                    a0[j] += b0[j];
                    a1[j] += b1[j];
                }
                (a0, a1)
            },
        );
    let freq = |v: Vec<usize>| v.into_iter().map(|c| c as f64 / n as f64).collect();
    OccupationFrequencies { times: times.to_vec(), n, p00: freq(counts.0), p01: freq(counts.1) }
}
