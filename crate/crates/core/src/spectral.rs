//! Amplitude-calibrated discrete spectra of converted field series and
//! Lorentzian line fits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use nalgebra::DMatrix;
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{covariance, minimize, LeastSquaresProblem, LmConfig};
use crate::simulate::FieldPoint;

/// Relative tolerance on sample spacing.
pub const UNIFORM_TOL: f64 = 1e-9;
/// Amplitude cap relative to the largest in-range bin.
pub const CAP_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    /// Periodic Hann taper with coherent-gain correction 2.
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBin {
    pub f: f64,
    /// T
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub bins: Vec<SpectrumBin>,
    pub window: Window,
    /// Magnitudes read as sinusoid amplitudes at bin centres.
    pub amplitude_calibrated: bool,
    pub n_samples: usize,
}

impl Spectrum {
    /// `(1/N)·Σ_k |X_k|²` over the full two-sided transform, rebuilt from
    /// the one-sided calibrated bins. Equals `Σ x²` for a rectangular
    /// window.
    pub fn parseval_energy(&self) -> f64 {
        let n = self.n_samples as f64;
        let gain = match self.window {
            Window::Rectangular => 1.0,
            Window::Hann => 2.0,
        };
        let mut e = 0.0;
        for (k, b) in self.bins.iter().enumerate() {
            let edge = k == 0 || 2 * k == self.n_samples;
            let raw = if edge { b.magnitude * n } else { b.magnitude * n / 2.0 } / gain;
            e += if edge { raw * raw } else { 2.0 * raw * raw };
        }
        e / n
    }

    pub fn max_in(&self, f_lo: f64, f_hi: f64) -> Option<SpectrumBin> {
        self.bins
            .iter()
            .filter(|b| b.f >= f_lo && b.f <= f_hi)
            .copied()
            .max_by(|a, b| a.magnitude.total_cmp(&b.magnitude))
    }
}

/// One-sided DFT magnitudes scaled so a sinusoid of amplitude `a₀`
/// completing an integer number of periods gives a peak of `a₀`
/// (`2|X_k|/N`; DC and Nyquist `|X_k|/N`).
pub fn scaled_spectrum(series: &[FieldPoint], window: Window) -> Result<Spectrum> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} samples")));
    }
    let dt = (series[n - 1].t - series[0].t) / (n - 1) as f64;
    if !(dt > 0.0) || series.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > UNIFORM_TOL * dt) {
        return Err(Error::NonUniformSampling);
    }
    let (gain, taper): (f64, Vec<f64>) = match window {
        Window::Rectangular => (1.0, vec![1.0; n]),
        Window::Hann => (2.0, (0..n).map(|i| 0.5 * (1.0 - (TAU * i as f64 / n as f64).cos())).collect()),
    };
    let x: Vec<f64> = series.iter().zip(&taper).map(|(p, w)| p.b * w).collect();
    let twiddle: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let a = -TAU * j as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect();
    let fs = 1.0 / dt;
    let bins = (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            let mut idx = 0usize;
            for &v in &x {
                let (c, s) = twiddle[idx];
                re += v * c;
                im += v * s;
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            let edge = k == 0 || 2 * k == n;
            let norm = if edge { 1.0 } else { 2.0 } / n as f64;
            SpectrumBin {
                f: k as f64 * fs / n as f64,
                magnitude: gain * norm * (re * re + im * im).sqrt(),
            }
        })
        .collect();
    Ok(Spectrum {
        bins,
        window,
        amplitude_calibrated: true,
        n_samples: n,
    })
}

/// `L(f) = a·(Γ/2)²/((f − f0)² + (Γ/2)²) + b`.
pub fn lorentzian(f: f64, a: f64, gamma_lw: f64, f0: f64, b: f64) -> f64 {
    let h2 = 0.25 * gamma_lw * gamma_lw;
    a * h2 / ((f - f0) * (f - f0) + h2) + b
}

/// Line width, relative to the bin spacing, below which a peak counts as
/// a single bin.
pub const GAMMA_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// Peak height above the offset (T).
    pub a: f64,
    /// Full width at half maximum (Hz).
    pub gamma_lw: f64,
    pub f0: f64,
    pub b: f64,
    /// Standard errors of `[a, gamma_lw, f0, b]`; zero for a capped `a`,
    /// infinite when the data do not bound the parameter.
    pub sigma: [f64; 4],
    /// `a` pinned at the cap.
    pub capped: bool,
    /// The free fit collapsed onto one bin. Then `Γ` sits at
    /// [`GAMMA_FLOOR`] bins and `f0` at the peak bin, `a` is the smallest
    /// amplitude consistent with the peak, and larger amplitudes (with
    /// narrower, off-bin lines) fit equally well.
    pub single_bin: bool,
    pub residual_norm_r: f64,
    pub dof_d: usize,
}

struct LorentzProblem<'a> {
    f: &'a [f64],
    y: &'a [f64],
    /// Pinned values of `[a, Γ, f0, b]`; the parameter vector holds the rest.
    pinned: [Option<f64>; 4],
}

impl LorentzProblem<'_> {
    fn full(&self, p: &[f64]) -> [f64; 4] {
        let mut it = p.iter();
        core::array::from_fn(|j| self.pinned[j].unwrap_or_else(|| *it.next().expect("one value per free parameter")))
    }

    fn free(&self, x: &[f64; 4]) -> Vec<f64> {
        (0..4).filter(|&j| self.pinned[j].is_none()).map(|j| x[j]).collect()
    }
}

impl LeastSquaresProblem for LorentzProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.f.len()
    }

    fn n_params(&self) -> usize {
        self.pinned.iter().filter(|p| p.is_none()).count()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let [a, g, f0, b] = self.full(p);
        for (i, (&f, &y)) in self.f.iter().zip(self.y).enumerate() {
            out[i] = lorentzian(f, a, g, f0, b) - y;
        }
        Ok(())
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        let [a, g, f0, _] = self.full(p);
        let h2 = 0.25 * g * g;
        for (i, &f) in self.f.iter().enumerate() {
            let d = f - f0;
            let den = d * d + h2;
            let row = [
                h2 / den,
                a * 0.5 * g * d * d / (den * den),
                2.0 * a * h2 * d / (den * den),
                1.0,
            ];
            let mut col = 0;
            for (j, v) in row.iter().enumerate() {
                if self.pinned[j].is_none() {
                    jac[(i, col)] = *v;
                    col += 1;
                }
            }
        }
        Ok(())
    }
}

struct Solved {
    x: [f64; 4],
    sigma: [f64; 4],
    cost: f64,
    dof: usize,
}

fn solve(f: &[f64], y: &[f64], pinned: [Option<f64>; 4], start: &[f64; 4], scale: &[f64; 4]) -> Result<Solved> {
    let problem = LorentzProblem { f, y, pinned };
    let x0 = problem.free(start);
    let sc = problem.free(scale);
    let out = minimize(&problem, &x0, &sc, &LmConfig::default())?;
    let n_free = x0.len();
    let dof = f.len() - n_free;
    let (c, _) = covariance(&out.jacobian, &sc);
    let s2 = out.cost / dof as f64;
    let mut x = problem.full(&out.params);
    x[1] = x[1].abs();
    let mut sigma = [0.0; 4];
    let mut col = 0;
    for (j, s) in sigma.iter_mut().enumerate() {
        if pinned[j].is_none() {
            let v = s2 * c[(col, col)];
            *s = if v.is_finite() && v >= 0.0 { v.sqrt() } else { f64::INFINITY };
            col += 1;
        }
    }
    Ok(Solved { x, sigma, cost: out.cost, dof })
}

/// Fits one Lorentzian to the bins inside `f_range`.
///
/// With `cap_enabled`, `a` is bounded above by [`CAP_FACTOR`] times the
/// largest in-range magnitude, handled as an active set: if the free
/// optimum exceeds the cap, `a` is pinned there and the other parameters
/// are refitted. See [`LorentzianFit::single_bin`] for peaks narrower than
/// one bin.
pub fn fit_lorentzian(spec: &Spectrum, f_range: (f64, f64), cap_enabled: bool) -> Result<LorentzianFit> {
    let (f_lo, f_hi) = f_range;
    let sel: Vec<&SpectrumBin> = spec.bins.iter().filter(|b| b.f >= f_lo && b.f <= f_hi).collect();
    if sel.len() < 5 {
        return Err(Error::InsufficientData(format!("{} bins in range, need at least 5", sel.len())));
    }
    let f: Vec<f64> = sel.iter().map(|b| b.f).collect();
    let y: Vec<f64> = sel.iter().map(|b| b.magnitude).collect();
    let (imax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let df = f[1] - f[0];
    // half-maximum crossing on each side of the peak
    let half = 0.5 * (ymax + ymin);
    let left = (0..imax).rev().find(|&i| y[i] < half).unwrap_or(0);
    let right = (imax..y.len()).find(|&i| y[i] < half).unwrap_or(y.len() - 1);
    let g0 = ((right - left) as f64 * df).max(df);
    let start = [ymax - ymin, g0, f[imax], ymin];
    let span = ymax.abs().max(f64::MIN_POSITIVE);
    let scale = [span, df, df, span];
    let g_min = GAMMA_FLOOR * df;
    let cap = CAP_FACTOR * ymax;

    let free = solve(&f, &y, [None; 4], &start, &scale);
    let single_bin = match &free {
        Err(Error::FitDiverged { .. }) => true,
        Ok(s) => s.x[1] < g_min,
        Err(_) => false,
    };
    let mut pinned: [Option<f64>; 4] = [None; 4];
    let mut sol = if single_bin {
        pinned[1] = Some(g_min);
        pinned[2] = Some(f[imax]);
        solve(&f, &y, pinned, &start, &scale)?
    } else {
        free?
    };
    if cap_enabled && sol.x[0] > cap {
        pinned[0] = Some(cap);
        let from = [cap, sol.x[1], sol.x[2], sol.x[3]];
        sol = solve(&f, &y, pinned, &from, &scale)?;
    }
    if single_bin {
        for j in 0..3 {
            if pinned[0].is_none() || j > 0 {
                sol.sigma[j] = f64::INFINITY;
            }
        }
    }
    Ok(LorentzianFit {
        a: sol.x[0],
        gamma_lw: sol.x[1],
        f0: sol.x[2],
        b: sol.x[3],
        sigma: sol.sigma,
        capped: pinned[0].is_some(),
        single_bin,
        residual_norm_r: sol.cost.sqrt(),
        dof_d: sol.dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(n: usize, periods: usize, a: f64, phi: f64) -> Vec<FieldPoint> {
        let dt = 1e-3;
        let f = periods as f64 / (n as f64 * dt);
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                FieldPoint { t, b: a * (TAU * f * t + phi).sin() }
            })
            .collect()
    }

    #[test]
    fn amplitude_calibration() {
        let s = scaled_spectrum(&sine(200, 1, 3.1e-9, 0.3), Window::Rectangular).unwrap();
        let peak = s.max_in(0.0, 1e9).unwrap();
        assert!((peak.magnitude / 3.1e-9 - 1.0).abs() < 1e-12);
        assert!((peak.f - 5.0).abs() < 1e-9);
        let h = scaled_spectrum(&sine(200, 7, 3.1e-9, 0.3), Window::Hann).unwrap();
        assert!((h.bins[7].magnitude / 3.1e-9 - 1.0).abs() < 1e-12);
        assert!((h.bins[6].magnitude / 1.55e-9 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_field_has_no_ac_content() {
        let pts: Vec<FieldPoint> = (0..128).map(|i| FieldPoint { t: i as f64 * 1e-3, b: 2e-9 }).collect();
        let s = scaled_spectrum(&pts, Window::Rectangular).unwrap();
        assert!((s.bins[0].magnitude - 2e-9).abs() < 1e-21);
        assert!(s.bins[1..].iter().all(|b| b.magnitude < 1e-12 * 2e-9));
    }

    #[test]
    fn rejects_non_uniform_sampling() {
        let mut pts = sine(64, 1, 1.0, 0.0);
        pts[10].t += 1e-7;
        assert_eq!(scaled_spectrum(&pts, Window::Rectangular), Err(Error::NonUniformSampling));
    }

    #[test]
    fn dft_matches_naive_transform() {
        let pts: Vec<FieldPoint> = (0..37).map(|i| FieldPoint { t: i as f64, b: ((i * 7919) % 13) as f64 - 6.0 }).collect();
        let s = scaled_spectrum(&pts, Window::Rectangular).unwrap();
        for (k, bin) in s.bins.iter().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, p) in pts.iter().enumerate() {
                let a = -TAU * (k * j) as f64 / 37.0;
                re += p.b * a.cos();
                im += p.b * a.sin();
            }
            let norm = if k == 0 { 1.0 } else { 2.0 } / 37.0;
            assert!((bin.magnitude - norm * (re * re + im * im).sqrt()).abs() < 1e-12);
        }
    }

    fn lorentz_spectrum(a: f64, g: f64, f0: f64, b: f64) -> Spectrum {
        Spectrum {
            bins: (0..60).map(|k| SpectrumBin { f: k as f64 * 0.5, magnitude: lorentzian(k as f64 * 0.5, a, g, f0, b) }).collect(),
            window: Window::Rectangular,
            amplitude_calibrated: true,
            n_samples: 118,
        }
    }

    #[test]
    fn exact_lorentzian_round_trip() {
        let s = lorentz_spectrum(5e-9, 1.7, 12.3, 0.2e-9);
        let fit = fit_lorentzian(&s, (0.0, 30.0), false).unwrap();
        assert!((fit.a / 5e-9 - 1.0).abs() < 1e-8);
        assert!((fit.gamma_lw / 1.7 - 1.0).abs() < 1e-8);
        assert!((fit.f0 / 12.3 - 1.0).abs() < 1e-8);
        assert!((fit.b / 0.2e-9 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cap_pins_amplitude() {
        // a narrow line between bins: the fitted height exceeds every sample
        let s = lorentz_spectrum(5e-9, 0.2, 12.25, 0.0);
        let free = fit_lorentzian(&s, (0.0, 30.0), false).unwrap();
        let ymax = s.max_in(0.0, 30.0).unwrap().magnitude;
        assert!(free.a > CAP_FACTOR * ymax);
        let capped = fit_lorentzian(&s, (0.0, 30.0), true).unwrap();
        assert!(capped.capped);
        assert_eq!(capped.a, CAP_FACTOR * ymax);
        assert_eq!(capped.sigma[0], 0.0);
        assert!(capped.gamma_lw > 0.0);
    }

    #[test]
    fn single_bin_peak() {
        let mut s = lorentz_spectrum(0.0, 1.0, 0.0, 0.0);
        s.bins[8].magnitude = 3.1e-9;
        let fit = fit_lorentzian(&s, (0.0, 30.0), false).unwrap();
        assert!(fit.single_bin, "{fit:?}");
        assert!(((fit.a + fit.b) / 3.1e-9 - 1.0).abs() < 1e-5, "{fit:?}");
        assert!((fit.a / 3.1e-9 - 1.0).abs() < 1e-3);
        assert_eq!(fit.f0, 4.0);
        assert!(fit.sigma[0].is_infinite());
    }

    #[test]
    fn too_few_bins() {
        let s = lorentz_spectrum(5e-9, 1.7, 12.3, 0.0);
        assert!(matches!(fit_lorentzian(&s, (10.0, 11.0), false), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn parseval(values in proptest::collection::vec(-1.0f64..1.0, 4..80)) {
            let pts: Vec<FieldPoint> = values.iter().enumerate().map(|(i, &b)| FieldPoint { t: i as f64 * 0.01, b }).collect();
            let s = scaled_spectrum(&pts, Window::Rectangular).unwrap();
            let e: f64 = values.iter().map(|v| v * v).sum();
            prop_assert!((s.parseval_energy() - e).abs() <= 1e-9 * e.max(1e-300));
        }

        #[test]
        fn integer_period_calibration(n in 16usize..200, periods in 1usize..7, a in 1e-10f64..1e-6, phi in 0.0f64..TAU) {
            prop_assume!(2 * periods < n);
            let s = scaled_spectrum(&sine(n, periods, a, phi), Window::Rectangular).unwrap();
            prop_assert!((s.bins[periods].magnitude / a - 1.0).abs() < 1e-9);
        }
    }
}
