//! Adaptive Simpson quadrature with interval bisection.

use alloc::vec::Vec;
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;

use crate::error::{Error, Result};

/// Relative tolerance used for field-window integrals.
pub const DEFAULT_REL_TOL: f64 = 1e-12;
/// Maximum number of interval bisections before giving up.
pub const DEFAULT_BUDGET: usize = 1 << 20;

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The tolerance is relative to the larger of `|∫f|` and `∫|f|` (estimated
/// on a coarse composite rule), so integrals that cancel to zero still
/// terminate.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, rel_tol: f64, budget: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let width = hi - lo;

    // coarse magnitude scale: composite Simpson of |f| on 32 panels
    let coarse = 32;
    let h = width / coarse as f64;
    let mut abs_scale = 0.0;
    let mut signed = 0.0;
    let mut stack: Vec<Panel> = Vec::with_capacity(64);
    for k in 0..coarse {
        let pa = lo + h * k as f64;
        let pb = if k + 1 == coarse { hi } else { lo + h * (k + 1) as f64 };
        let pm = 0.5 * (pa + pb);
        let (fa, fm, fb) = (f(pa), f(pm), f(pb));
        if !(fa.is_finite() && fm.is_finite() && fb.is_finite()) {
            return Err(Error::QuadratureFailure { budget });
        }
        abs_scale += simpson(pa, pb, fa.abs(), fm.abs(), fb.abs());
        let whole = simpson(pa, pb, fa, fm, fb);
        signed += whole;
        stack.push(Panel {
            a: pa,
            b: pb,
            fa,
            fm,
            fb,
            whole,
        });
    }
    let scale = signed.abs().max(abs_scale);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let eps = rel_tol * scale;
    let min_width = width * 1e-15;

    let mut total = 0.0;
    let mut splits = 0usize;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        if !(flm.is_finite() && frm.is_finite()) {
            return Err(Error::QuadratureFailure { budget });
        }
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        let local_eps = eps * (p.b - p.a) / width;
        if delta.abs() <= 15.0 * local_eps || (p.b - p.a) < min_width {
            total += left + right + delta / 15.0;
            continue;
        }
        splits += 1;
        if splits > budget {
            return Err(Error::QuadratureFailure { budget });
        }
        stack.push(Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
        });
        stack.push(Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
        });
    }
    Ok(sign * total)
}
