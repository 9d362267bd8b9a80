//! Constant-field calibration sweeps: fitting the readout fringe, and
//! locating zero field from the extremum of the dual-transition fringe.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Matrix3, Vector3};
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::wrap_phase;
use crate::lm::{covariance, minimize, LeastSquaresProblem, LmConfig};
use crate::montecarlo::rng_from_seed;
use crate::nvmodel::{DualTransitionModel, SignalModel};
use crate::simulate::ShotNoise;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    /// Applied constant field (T).
    pub b: f64,
    pub signal: f64,
    pub sigma: f64,
}

fn sweep<F: Fn(f64) -> f64>(fields: &[f64], m_iter: u64, noise: ShotNoise, seed: u64, mean: F) -> Result<Vec<CalibrationPoint>> {
    noise.validate()?;
    if m_iter == 0 {
        return Err(Error::invalid("m_iter", "must be ≥ 1"));
    }
    let mut rng = rng_from_seed(seed);
    let sigma = noise.sigma1(m_iter);
    Ok(fields
        .iter()
        .map(|&b| CalibrationPoint {
            b,
            signal: noise.sample(mean(b), m_iter, &mut rng),
            sigma,
        })
        .collect())
}

/// Readout versus constant field.
pub fn simulate_calibration(sm: &SignalModel, fields: &[f64], m_iter: u64, noise: ShotNoise, seed: u64) -> Result<Vec<CalibrationPoint>> {
    sm.validate()?;
    sweep(fields, m_iter, noise, seed, |b| sm.expected_signal(b * sm.tau, 0.0))
}

/// Dual-transition readout versus applied field, with the true zero at
/// applied field `b_zero`.
pub fn simulate_zero_field(
    model: &DualTransitionModel,
    fields: &[f64],
    b_zero: f64,
    m_iter: u64,
    noise: ShotNoise,
    seed: u64,
) -> Result<Vec<CalibrationPoint>> {
    model.base.validate()?;
    sweep(fields, m_iter, noise, seed, |b| model.expected_signal_zero_field(b - b_zero))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub amp_a: f64,
    pub omega_s: f64,
    pub theta: f64,
    pub offset_o: f64,
    /// Standard errors of `[amp_a, omega_s, theta, offset_o]`.
    pub sigma: [f64; 4],
    pub residual_norm_r: f64,
    pub dof_d: usize,
}

impl CalibrationFit {
    pub fn signal_model(&self, tau: f64) -> SignalModel {
        SignalModel {
            amp_a: self.amp_a,
            omega_s: self.omega_s,
            theta: self.theta,
            offset_o: self.offset_o,
            tau,
        }
    }
}

/// `S = A·sin(ω·τ·b + θ) + O` with parameters `[A, ω, θ, O]`.
struct Fringe<'a> {
    pts: &'a [CalibrationPoint],
    tau: f64,
}

impl LeastSquaresProblem for Fringe<'_> {
    fn n_residuals(&self) -> usize {
        self.pts.len()
    }

    fn n_params(&self) -> usize {
        4
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, pt) in out.iter_mut().zip(self.pts) {
            *o = p[0] * (p[1] * self.tau * pt.b + p[2]).sin() + p[3] - pt.signal;
        }
        Ok(())
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        for (i, pt) in self.pts.iter().enumerate() {
            let x = p[1] * self.tau * pt.b + p[2];
            let (s, c) = x.sin_cos();
            jac[(i, 0)] = s;
            jac[(i, 1)] = p[0] * c * self.tau * pt.b;
            jac[(i, 2)] = p[0] * c;
            jac[(i, 3)] = 1.0;
        }
        Ok(())
    }
}

/// Linear least squares of `c1·sin(k·b) + c2·cos(k·b) + O`; returns the
/// coefficients and the residual sum of squares.
fn project(pts: &[CalibrationPoint], k: f64) -> Option<(Vector3<f64>, f64)> {
    let mut m = Matrix3::zeros();
    let mut v = Vector3::zeros();
    for pt in pts {
        let (s, c) = (k * pt.b).sin_cos();
        let row = Vector3::new(s, c, 1.0);
        m += row * row.transpose();
        v += row * pt.signal;
    }
    let coef = m.cholesky()?.solve(&v);
    let rss = pts
        .iter()
        .map(|pt| {
            let (s, c) = (k * pt.b).sin_cos();
            (coef[0] * s + coef[1] * c + coef[2] - pt.signal).powi(2)
        })
        .sum();
    Some((coef, rss))
}

/// Fits the calibration fringe.
///
/// The fringe wavenumber `ω·τ` is first located on a grid covering
/// between a quarter fringe and Nyquist over the swept span, then all four
/// parameters are refined jointly. The sign of `ω` is fixed positive.
pub fn fit_calibration(pts: &[CalibrationPoint], tau: f64) -> Result<CalibrationFit> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", "must be > 0"));
    }
    if pts.len() < 6 {
        return Err(Error::DegenerateDof { points: pts.len(), params: 4 });
    }
    let bmin = pts.iter().map(|p| p.b).fold(f64::INFINITY, f64::min);
    let bmax = pts.iter().map(|p| p.b).fold(f64::NEG_INFINITY, f64::max);
    let span = bmax - bmin;
    if !(span > 0.0) {
        return Err(Error::InsufficientData("calibration fields do not span a range".into()));
    }
    let k_lo = 0.5 * PI / span;
    let k_hi = PI * (pts.len() - 1) as f64 / span;
    let steps = 8 * pts.len();
    let mut best: Option<(f64, Vector3<f64>, f64)> = None;
    for i in 0..=steps {
        let k = k_lo * (k_hi / k_lo).powf(i as f64 / steps as f64);
        if let Some((c, rss)) = project(pts, k) {
            if best.as_ref().is_none_or(|b| rss < b.2) {
                best = Some((k, c, rss));
            }
        }
    }
    let (k, c, _) = best.ok_or_else(|| Error::InsufficientData("no fringe wavenumber fits".into()))?;
    let amp = (c[0] * c[0] + c[1] * c[1]).sqrt();
    let x0 = [amp, k / tau, c[1].atan2(c[0]), c[2]];
    let problem = Fringe { pts, tau };
    let scale = [amp.max(1e-12), k / tau, 1.0, amp.max(1e-12)];
    let out = minimize(&problem, &x0, &scale, &LmConfig::default())?;
    let mut p = [out.params[0], out.params[1], out.params[2], out.params[3]];
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[2] += PI;
    }
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[2] = PI - p[2];
    }
    p[2] = wrap_phase(p[2]);
    let dof = pts.len() - 4;
    let (cov, _) = covariance(&out.jacobian, &scale);
    let s2 = out.cost / dof as f64;
    Ok(CalibrationFit {
        amp_a: p[0],
        omega_s: p[1],
        theta: p[2],
        offset_o: p[3],
        sigma: core::array::from_fn(|i| (s2 * cov[(i, i)]).sqrt()),
        residual_norm_r: out.cost.sqrt(),
        dof_d: dof,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroFieldFit {
    /// Applied field at the fringe extremum (T).
    pub b_zero: f64,
    pub sigma_b_zero: f64,
    /// Signed fringe contrast `C` in `O + C·cos(ω·τ·(b − b0))`.
    pub contrast: f64,
    pub offset: f64,
    pub residual_norm_r: f64,
    pub dof_d: usize,
}

/// `O + C·cos(ω·τ·(b − b0))` with parameters `[O, C, b0]`.
struct EvenFringe<'a> {
    pts: &'a [CalibrationPoint],
    k: f64,
}

impl LeastSquaresProblem for EvenFringe<'_> {
    fn n_residuals(&self) -> usize {
        self.pts.len()
    }

    fn n_params(&self) -> usize {
        3
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, pt) in out.iter_mut().zip(self.pts) {
            *o = p[0] + p[1] * (self.k * (pt.b - p[2])).cos() - pt.signal;
        }
        Ok(())
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        for (i, pt) in self.pts.iter().enumerate() {
            let (s, c) = (self.k * (pt.b - p[2])).sin_cos();
            jac[(i, 0)] = 1.0;
            jac[(i, 1)] = c;
            jac[(i, 2)] = p[1] * s * self.k;
        }
        Ok(())
    }
}

/// Locates zero field as the extremum of the even dual-transition fringe,
/// with `ω` known from the single-transition calibration.
pub fn locate_zero_field(pts: &[CalibrationPoint], omega_s: f64, tau: f64) -> Result<ZeroFieldFit> {
    if pts.len() < 5 {
        return Err(Error::DegenerateDof { points: pts.len(), params: 3 });
    }
    let k = omega_s * tau;
    if !(k.is_finite() && k != 0.0) {
        return Err(Error::invalid("omega_s", "ω·τ must be finite and nonzero"));
    }
    // the even fringe is c1·cos(k·b) + c2·sin(k·b) + O, linear in (c1, c2, O)
    let (c, _) = project(pts, k).ok_or_else(|| Error::InsufficientData("calibration fields are degenerate".into()))?;
    let (c_sin, c_cos, o) = (c[0], c[1], c[2]);
    let amp = (c_sin * c_sin + c_cos * c_cos).sqrt();
    if amp == 0.0 {
        return Err(Error::InsufficientData("no fringe contrast".into()));
    }
    // of the two extrema per fringe, start from the one nearest the sweep centre
    let centre = 0.5 * (pts[0].b + pts[pts.len() - 1].b);
    let phase0 = c_sin.atan2(c_cos) / k;
    let half = PI / k.abs();
    let shift = ((centre - phase0) / half).round();
    let b0 = phase0 + shift * half;
    let c0 = if (shift as i64) % 2 == 0 { amp } else { -amp };
    let problem = EvenFringe { pts, k };
    let scale = [amp, amp, TAU / k.abs()];
    let out = minimize(&problem, &[o, c0, b0], &scale, &LmConfig::default())?;
    let dof = pts.len() - 3;
    let (cov, _) = covariance(&out.jacobian, &scale);
    let s2 = out.cost / dof as f64;
    Ok(ZeroFieldFit {
        b_zero: out.params[2],
        sigma_b_zero: (s2 * cov[(2, 2)]).sqrt(),
        contrast: out.params[1],
        offset: out.params[0],
        residual_norm_r: out.cost.sqrt(),
        dof_d: dof,
    })
}

/// Evenly spaced constant fields over `[lo, hi]`.
pub fn field_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(Error::invalid("field_grid", format!("need n ≥ 2 and hi > lo, got n = {n}")));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::{mean, std_dev};
    use crate::nvmodel::{NvParams, ReadoutAxis};
    use crate::simulate::NoiseKind;

    const NONE: ShotNoise = ShotNoise { kind: NoiseKind::None, n_ph: 0.1 };

    #[test]
    fn noiseless_calibration_round_trip() {
        let sm = SignalModel { theta: 0.7, ..NvParams::default().signal_model(0.4e-3) };
        let fields = field_grid(-200e-9, 200e-9, 81).unwrap();
        let pts = simulate_calibration(&sm, &fields, 1000, NONE, 0).unwrap();
        let fit = fit_calibration(&pts, sm.tau).unwrap();
        assert!((fit.amp_a / sm.amp_a - 1.0).abs() < 1e-9);
        assert!((fit.omega_s / sm.omega_s - 1.0).abs() < 1e-9);
        assert!((fit.theta - 0.7).abs() < 1e-9);
        assert!((fit.offset_o - sm.offset_o).abs() < 1e-12);
    }

    #[test]
    fn noisy_calibration_within_two_percent() {
        let sm = NvParams::default().signal_model(0.4e-3);
        let fields = field_grid(-200e-9, 200e-9, 81).unwrap();
        let noise = ShotNoise { kind: NoiseKind::Gaussian, n_ph: 0.1 };
        let pts = simulate_calibration(&sm, &fields, 100_000, noise, 11).unwrap();
        let fit = fit_calibration(&pts, sm.tau).unwrap();
        assert!((fit.amp_a / sm.amp_a - 1.0).abs() < 0.02, "{fit:?}");
        assert!((fit.amp_a - sm.amp_a).abs() < 4.0 * fit.sigma[0]);
    }

    fn dual(detuning: f64, axis: ReadoutAxis) -> DualTransitionModel {
        DualTransitionModel {
            detuning,
            base: NvParams::default().signal_model(0.2e-3),
            readout_axis: axis,
        }
    }

    #[test]
    fn zero_field_located_exactly_without_noise() {
        let fields = field_grid(-150e-9, 150e-9, 61).unwrap();
        for det in [0.0, 200.0, 500.0, 3000.0] {
            for b_zero in [0.0, 12e-9] {
                let m = dual(det, ReadoutAxis::SameAxis);
                let pts = simulate_zero_field(&m, &fields, b_zero, 1000, NONE, 0).unwrap();
                let z = locate_zero_field(&pts, m.base.omega_s, m.base.tau).unwrap();
                assert!((z.b_zero - b_zero).abs() < 1e-15, "det {det}: {z:?}");
                assert!((z.contrast - m.base.amp_a * m.contrast_factor()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_field_sigma_is_honest() {
        let m = dual(0.0, ReadoutAxis::SameAxis);
        let fields = field_grid(-150e-9, 150e-9, 61).unwrap();
        let noise = ShotNoise { kind: NoiseKind::Gaussian, n_ph: 0.1 };
        let (mut est, mut sig) = (Vec::new(), Vec::new());
        for s in 0..300 {
            let pts = simulate_zero_field(&m, &fields, 5e-9, 20_000, noise, s).unwrap();
            let z = locate_zero_field(&pts, m.base.omega_s, m.base.tau).unwrap();
            est.push(z.b_zero);
            sig.push(z.sigma_b_zero);
        }
        assert!((mean(&est) - 5e-9).abs() < 4.0 * std_dev(&est) / 300f64.sqrt());
        assert!((std_dev(&est) / mean(&sig) - 1.0).abs() < 0.15);
    }

    #[test]
    fn too_few_points() {
        let sm = NvParams::default().signal_model(0.4e-3);
        let pts = simulate_calibration(&sm, &[0.0, 1e-9, 2e-9], 10, NONE, 0).unwrap();
        assert!(matches!(fit_calibration(&pts, sm.tau), Err(Error::DegenerateDof { .. })));
    }
}
