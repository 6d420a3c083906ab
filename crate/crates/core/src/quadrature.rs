//! Adaptive Simpson quadrature for smooth parametric integrands.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("adaptive Simpson did not reach tolerance {tol:e} on [{a}, {b}] within depth {depth}")]
    NoConvergence { a: f64, b: f64, tol: f64, depth: u32 },
    #[error("integrand is not finite at {0}")]
    NonFinite(f64),
}

/// `∫ₐᵇ f` by recursive Simpson with step halving until the Richardson
/// error estimate of every panel is below its share of `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<f64, QuadratureError> {
    if a == b {
        return Ok(0.0);
    }
    let fa = eval(&f, a)?;
    let fb = eval(&f, b)?;
    let m = 0.5 * (a + b);
    let fm = eval(&f, m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(&f, Panel { a, b, fa, fm, fb, whole }, tol, max_depth, max_depth)
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn eval<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64, QuadratureError> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(QuadratureError::NonFinite(x))
    }
}

fn recurse<F: Fn(f64) -> f64>(f: &F, p: Panel, tol: f64, depth: u32, max_depth: u32) -> Result<f64, QuadratureError> {
    let m = 0.5 * (p.a + p.b);
    let lm = 0.5 * (p.a + m);
    let rm = 0.5 * (m + p.b);
    let flm = eval(f, lm)?;
    let frm = eval(f, rm)?;
    let left = (m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
    let right = (p.b - m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
    let delta = left + right - p.whole;
    // require a few levels so that a lucky coarse estimate is not accepted
    if max_depth - depth >= 3 && delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(QuadratureError::NoConvergence { a: p.a, b: p.b, tol, depth: max_depth });
    }
    let l =
        recurse(f, Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left }, 0.5 * tol, depth - 1, max_depth)?;
    let r =
        recurse(f, Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right }, 0.5 * tol, depth - 1, max_depth)?;
    Ok(l + r)
}
