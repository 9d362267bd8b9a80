//! Free-induction-decay (Ramsey delay sweep) simulation and T2* fitting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use nalgebra::DMatrix;
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::NvParams;
use crate::error::{Error, Result};
use crate::lm::{covariance, minimize, LeastSquaresProblem, LmConfig};
use crate::montecarlo::rng_from_seed;
use crate::simulate::{ShotNoise, Trace, TraceMeta, TracePoint};

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

/// FID readout at delays `delays`, averaged over the given detunings.
///
/// Mean signal is `O + (c0/2)·exp(−(τ/T2*)^n)·mean_j cos(2π·δ_j·τ)`.
pub fn simulate_fid(p: &NvParams, delays: &[f64], detunings: &[f64], m_iter: u64, noise: ShotNoise, seed: u64) -> Result<Trace> {
    p.validate()?;
    if delays.is_empty() {
        return Err(Error::invalid("delays", "must not be empty"));
    }
    if delays.windows(2).any(|w| w[1] <= w[0]) || delays[0] < 0.0 {
        return Err(Error::invalid("delays", "must be non-negative and strictly increasing"));
    }
    if !(1..=2).contains(&detunings.len()) {
        return Err(Error::invalid("detunings", "give one or two detunings"));
    }
    if m_iter == 0 {
        return Err(Error::invalid("m_iter", "must be ≥ 1"));
    }
    let mut rng = rng_from_seed(seed);
    let offset = 1.0 - 0.5 * p.contrast_c0;
    let sigma1 = noise.sigma1(m_iter);
    let points = delays
        .iter()
        .map(|&tau| {
            let beat = detunings.iter().map(|d| (TAU * d * tau).cos()).sum::<f64>() / detunings.len() as f64;
            let mean = offset + 0.5 * p.contrast_c0 * p.envelope(tau) * beat;
            TracePoint {
                t: tau,
                signal: noise.sample(mean, m_iter, &mut rng),
                sigma1,
                readout_phase: 0.0,
            }
        })
        .collect();
    Ok(Trace {
        points,
        meta: TraceMeta { plan: None, f: None, seed },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2StarFit {
    pub t2_star: Estimate,
    pub stretch_n: Estimate,
    /// `None` when no oscillation is resolvable within the record.
    pub detuning: Option<Estimate>,
    pub offset: Estimate,
    /// Fitted `c0/2`.
    pub amplitude: Estimate,
    pub residual_norm_r: f64,
    pub dof_d: usize,
}

/// Parameters `[offset, amplitude, t2, n, detuning]`.
struct FidProblem<'a> {
    tau: &'a [f64],
    y: &'a [f64],
    base: [f64; 5],
    free: Vec<usize>,
}

impl FidProblem<'_> {
    fn full(&self, p: &[f64]) -> [f64; 5] {
        let mut q = self.base;
        for (k, &j) in self.free.iter().enumerate() {
            q[j] = p[k];
        }
        q
    }
}

impl LeastSquaresProblem for FidProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.tau.len()
    }

    fn n_params(&self) -> usize {
        self.free.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let [o, c, t2, n, d] = self.full(p);
        if !(t2 > 0.0 && n > 0.0) {
            return Err(Error::invalid("t2_star", "left the physical domain"));
        }
        for (i, (&t, &y)) in self.tau.iter().zip(self.y).enumerate() {
            out[i] = o + c * (-(t / t2).powf(n)).exp() * (TAU * d * t).cos() - y;
        }
        Ok(())
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        let [_, c, t2, n, d] = self.full(p);
        for (i, &t) in self.tau.iter().enumerate() {
            let x = t / t2;
            let xn = if x > 0.0 { x.powf(n) } else { 0.0 };
            let e = (-xn).exp();
            let (s, co) = (TAU * d * t).sin_cos();
            let full = [
                1.0,
                e * co,
                c * e * co * xn * n / t2,
                if x > 0.0 { -c * e * co * xn * x.ln() } else { 0.0 },
                -c * e * s * TAU * t,
            ];
            for (k, &j) in self.free.iter().enumerate() {
                jac[(i, k)] = full[j];
            }
        }
        Ok(())
    }
}

/// Fits `O + C·exp(−(τ/T2*)^n)·cos(2π·δ·τ)` to an FID trace.
///
/// The detuning is fitted only when the periodogram of the data peaks
/// clearly above the `1/span` Fourier resolution; otherwise it is held
/// at zero and any beating is absorbed into an apparent, shorter T2*.
/// `fix_n` holds the stretch power.
pub fn fit_t2star(trace: &Trace, fix_n: Option<f64>) -> Result<T2StarFit> {
    if trace.len() < 8 {
        return Err(Error::InsufficientData(format!("{} points, need at least 8", trace.len())));
    }
    let tau: Vec<f64> = trace.points.iter().map(|p| p.t).collect();
    let y: Vec<f64> = trace.points.iter().map(|p| p.signal).collect();
    let span = tau[tau.len() - 1] - tau[0];
    if !(span > 0.0) {
        return Err(Error::InsufficientData("delays do not span a range".into()));
    }

    // starting values: tail level for the offset, first point for the amplitude
    let tail = y[y.len() * 3 / 4..].iter().sum::<f64>() / (y.len() - y.len() * 3 / 4) as f64;
    let c0 = y[0] - tail;
    let target = tail + c0 / core::f64::consts::E;
    let t2_0 = tau
        .iter()
        .zip(&y)
        .find(|(_, &v)| (v - target) * c0.signum() <= 0.0)
        .map(|(&t, _)| t)
        .unwrap_or(0.5 * span)
        .max(span / tau.len() as f64);
    let n0 = fix_n.unwrap_or(2.0);
    let detuning0 = resolved_detuning(&tau, &y, tail, span);

    let mut free = vec![0, 1, 2];
    if fix_n.is_none() {
        free.push(3);
    }
    if detuning0.is_some() {
        free.push(4);
    }
    let base = [tail, c0, t2_0, n0, detuning0.unwrap_or(0.0)];
    let problem = FidProblem { tau: &tau, y: &y, base, free: free.clone() };
    let amp_scale = c0.abs().max(1e-12);
    let scale_of = |j: usize| match j {
        0 | 1 => amp_scale,
        2 => t2_0,
        3 => 1.0,
        _ => 1.0 / span,
    };
    let scales: Vec<f64> = free.iter().map(|&j| scale_of(j)).collect();
    let x0: Vec<f64> = free.iter().map(|&j| base[j]).collect();
    let out = minimize(&problem, &x0, &scales, &LmConfig::default())?;
    let (cov, condition) = covariance(&out.jacobian, &scales);
    if !(condition <= crate::fit::MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let dof = tau.len() - free.len();
    let r = out.cost.sqrt();
    let q = problem.full(&out.params);
    let est = |j: usize| match free.iter().position(|&k| k == j) {
        Some(k) => Estimate {
            value: q[j],
            sigma: r * (cov[(k, k)] / dof as f64).sqrt(),
        },
        None => Estimate { value: q[j], sigma: 0.0 },
    };
    let mut detuning = detuning0.map(|_| est(4));
    if let Some(d) = detuning.as_mut() {
        d.value = d.value.abs();
    }
    Ok(T2StarFit {
        t2_star: est(2),
        stretch_n: est(3),
        detuning,
        offset: est(0),
        amplitude: est(1),
        residual_norm_r: r,
        dof_d: dof,
    })
}

/// Detuning estimate from the periodogram, or `None` when the peak lies
/// within 1.5 Fourier bins of zero. A decaying envelope alone already
/// pushes the one-sided periodogram peak out to about one bin.
fn resolved_detuning(tau: &[f64], y: &[f64], offset: f64, span: f64) -> Option<f64> {
    let df = 1.0 / span;
    let nyquist = 0.5 * (tau.len() - 1) as f64 / span;
    let steps = (4.0 * nyquist / df) as usize;
    let mut best = (0.0, 0.0);
    for k in 0..=steps {
        let f = k as f64 * df / 4.0;
        let (mut re, mut im) = (0.0, 0.0);
        for (&t, &v) in tau.iter().zip(y) {
            let (s, c) = (TAU * f * t).sin_cos();
            re += (v - offset) * c;
            im += (v - offset) * s;
        }
        let pw = re * re + im * im;
        if pw > best.1 {
            best = (f, pw);
        }
    }
    (best.0 > 1.5 * df).then_some(best.0)
}
