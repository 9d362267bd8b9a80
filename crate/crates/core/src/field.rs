//! Periodic magnetic-field waveforms and their exact window integrals.
//!
//! Every readout point of a Ramsey subsequence depends on the field
//! integrated over the phase-accumulation window, so the central operation
//! here is [`FieldModel::window_integral`]. Sinusoid, triangular and
//! piecewise-linear sampled waveforms integrate in closed form, as does the
//! decaying multi-tone waveform with a pure exponential envelope. Other
//! envelopes fall back to adaptive Simpson quadrature.
//!
//! All values are SI: tesla, hertz, seconds, radians.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use num_complex::Complex64;
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, DEFAULT_BUDGET, DEFAULT_REL_TOL};

/// One component of a decaying multi-tone field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// Initial amplitude (T).
    pub a: f64,
    /// Frequency (Hz).
    pub f: f64,
    /// Phase at t = 0 (rad).
    pub phi: f64,
}

fn default_decay_power() -> f64 {
    1.0
}

/// A parametric periodic magnetic waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldModel {
    /// `b_ac·sin(2πft + φ) + b_dc`
    Sinusoid { b_ac: f64, f: f64, phi: f64, b_dc: f64 },
    /// `b_dc + Σ a_k·exp(−(t/t2n)^p)·sin(2πf_k t + φ_k)`, defined for t ≥ 0.
    DecayingMultiTone {
        tones: Vec<Tone>,
        t2n: f64,
        #[serde(default = "default_decay_power")]
        decay_power: f64,
        b_dc: f64,
    },
    /// Triangle wave with the same phase convention as the sinusoid: zero
    /// at phase 0, peak `b_ac` at phase π/2.
    Triangular { b_ac: f64, f: f64, phi: f64, b_dc: f64 },
    /// One period of samples, linearly interpolated and wrapped.
    SampledPeriodic { samples: Vec<f64>, period: f64, b_dc: f64 },
}

/// Physical kind of a model parameter; drives internal fit scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Field,
    Frequency,
    Phase,
    Time,
    Dimensionless,
}

/// `x mod m` in `[0, m)`; `f64::rem_euclid` needs std.
fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = x % m;
    if r >= 0.0 {
        r
    } else if r + m < m {
        r + m
    } else {
        0.0
    }
}

/// Unit triangle wave, period 2π.
fn triangle(x: f64) -> f64 {
    let u = rem_euclid(x, TAU);
    if u < 0.5 * PI {
        2.0 * u / PI
    } else if u < 1.5 * PI {
        2.0 - 2.0 * u / PI
    } else {
        2.0 * u / PI - 4.0
    }
}

/// Primitive of the unit triangle wave with zero mean over a period, so
/// `∫_0^x triangle = triangle_primitive(x)` for every x.
fn triangle_primitive(x: f64) -> f64 {
    let u = rem_euclid(x, TAU);
    if u < 0.5 * PI {
        u * u / PI
    } else if u < 1.5 * PI {
        2.0 * u - u * u / PI - 0.5 * PI
    } else {
        u * u / PI - 4.0 * u + 4.0 * PI
    }
}

fn require_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
    }
}

fn require_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite, got {v}")))
    }
}

impl FieldModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldModel::Sinusoid { b_ac, f, phi, b_dc } | FieldModel::Triangular { b_ac, f, phi, b_dc } => {
                require_positive("f", *f)?;
                require_finite("b_ac", *b_ac)?;
                require_finite("phi", *phi)?;
                require_finite("b_dc", *b_dc)
            }
            FieldModel::DecayingMultiTone {
                tones,
                t2n,
                decay_power,
                b_dc,
            } => {
                if tones.is_empty() {
                    return Err(Error::invalid("tones", "at least one tone is required"));
                }
                for t in tones {
                    require_positive("f", t.f)?;
                    require_finite("a", t.a)?;
                    require_finite("phi", t.phi)?;
                }
                require_positive("t2n", *t2n)?;
                if !(decay_power.is_finite() && *decay_power >= 1.0) {
                    return Err(Error::invalid("decay_power", "must be ≥ 1"));
                }
                require_finite("b_dc", *b_dc)
            }
            FieldModel::SampledPeriodic { samples, period, b_dc } => {
                if samples.len() < 2 {
                    return Err(Error::invalid("samples", "need at least two samples"));
                }
                if samples.iter().any(|s| !s.is_finite()) {
                    return Err(Error::invalid("samples", "must be finite"));
                }
                require_positive("period", *period)?;
                require_finite("b_dc", *b_dc)
            }
        }
    }

    /// Constant field offset.
    pub fn b_dc(&self) -> f64 {
        match self {
            FieldModel::Sinusoid { b_dc, .. }
            | FieldModel::Triangular { b_dc, .. }
            | FieldModel::DecayingMultiTone { b_dc, .. }
            | FieldModel::SampledPeriodic { b_dc, .. } => *b_dc,
        }
    }

    /// Field value B(t) in tesla.
    pub fn evaluate(&self, t: f64) -> f64 {
        match self {
            FieldModel::Sinusoid { b_ac, f, phi, b_dc } => b_ac * (TAU * f * t + phi).sin() + b_dc,
            FieldModel::Triangular { b_ac, f, phi, b_dc } => b_ac * triangle(TAU * f * t + phi) + b_dc,
            FieldModel::DecayingMultiTone {
                tones,
                t2n,
                decay_power,
                b_dc,
            } => {
                let env = envelope(t, *t2n, *decay_power);
                b_dc + env * tones.iter().map(|k| k.a * (TAU * k.f * t + k.phi).sin()).sum::<f64>()
            }
            FieldModel::SampledPeriodic { samples, period, b_dc } => {
                let n = samples.len();
                let x = rem_euclid(t / period, 1.0) * n as f64;
                let i = (x.floor() as usize).min(n - 1);
                let frac = x - i as f64;
                let a = samples[i];
                let b = samples[(i + 1) % n];
                a + (b - a) * frac + b_dc
            }
        }
    }

    /// `∫_{t_start}^{t_start+tau} B(t) dt` in tesla·seconds.
    pub fn window_integral(&self, t_start: f64, tau: f64) -> Result<f64> {
        match self {
            FieldModel::Sinusoid { b_ac, f, phi, b_dc } => {
                let center = t_start + 0.5 * tau;
                Ok(b_dc * tau + b_ac * (TAU * f * center + phi).sin() * sinc_window(*f, tau))
            }
            FieldModel::Triangular { b_ac, f, phi, b_dc } => {
                let x0 = TAU * f * t_start + phi;
                let x1 = TAU * f * (t_start + tau) + phi;
                Ok(b_dc * tau + b_ac / (TAU * f) * (triangle_primitive(x1) - triangle_primitive(x0)))
            }
            FieldModel::DecayingMultiTone {
                tones,
                t2n,
                decay_power,
                b_dc,
            } if *decay_power == 1.0 && t_start >= 0.0 => {
                let t1 = t_start + tau;
                let mut acc = b_dc * tau;
                for k in tones {
                    let s = Complex64::new(-1.0 / t2n, TAU * k.f);
                    let rot = Complex64::from_polar(1.0, k.phi);
                    let v = rot * ((s * t1).exp() - (s * t_start).exp()) / s;
                    acc += k.a * v.im;
                }
                Ok(acc)
            }
            FieldModel::SampledPeriodic { samples, period, b_dc } => {
                Ok(b_dc * tau + sampled_primitive(samples, *period, t_start + tau) - sampled_primitive(samples, *period, t_start))
            }
            FieldModel::DecayingMultiTone { .. } => self.integrate_numerically(t_start, tau),
        }
    }

    /// Window integral by adaptive Simpson quadrature, regardless of variant.
    pub fn integrate_numerically(&self, t_start: f64, tau: f64) -> Result<f64> {
        adaptive_simpson(|t| self.evaluate(t), t_start, t_start + tau, DEFAULT_REL_TOL, DEFAULT_BUDGET)
    }

    /// Smallest T > 0 such that the non-decaying part repeats.
    pub fn period(&self) -> Result<f64> {
        match self {
            FieldModel::Sinusoid { f, .. } | FieldModel::Triangular { f, .. } => Ok(1.0 / f),
            FieldModel::SampledPeriodic { period, .. } => Ok(*period),
            FieldModel::DecayingMultiTone { tones, .. } => {
                let freqs: Vec<f64> = tones.iter().map(|t| t.f).collect();
                common_fundamental(&freqs).map(|f0| 1.0 / f0)
            }
        }
    }

    /// Parameter vector in a fixed per-variant order.
    ///
    /// Sinusoid/Triangular: `[b_ac, f, phi, b_dc]`; multi-tone:
    /// `[a_0, f_0, phi_0, …, t2n, decay_power, b_dc]`; sampled:
    /// `[s_0, …, s_{n−1}, b_dc]` (the period is structural, not a parameter).
    pub fn params(&self) -> Vec<f64> {
        match self {
            FieldModel::Sinusoid { b_ac, f, phi, b_dc } | FieldModel::Triangular { b_ac, f, phi, b_dc } => {
                alloc::vec![*b_ac, *f, *phi, *b_dc]
            }
            FieldModel::DecayingMultiTone {
                tones,
                t2n,
                decay_power,
                b_dc,
            } => {
                let mut p = Vec::with_capacity(3 * tones.len() + 3);
                for t in tones {
                    p.extend_from_slice(&[t.a, t.f, t.phi]);
                }
                p.extend_from_slice(&[*t2n, *decay_power, *b_dc]);
                p
            }
            FieldModel::SampledPeriodic { samples, b_dc, .. } => {
                let mut p = samples.clone();
                p.push(*b_dc);
                p
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            FieldModel::Sinusoid { .. } | FieldModel::Triangular { .. } => {
                ["b_ac", "f", "phi", "b_dc"].iter().map(|s| String::from(*s)).collect()
            }
            FieldModel::DecayingMultiTone { tones, .. } => {
                let mut names = Vec::new();
                for k in 0..tones.len() {
                    names.push(format!("a_{k}"));
                    names.push(format!("f_{k}"));
                    names.push(format!("phi_{k}"));
                }
                names.push("t2n".into());
                names.push("decay_power".into());
                names.push("b_dc".into());
                names
            }
            FieldModel::SampledPeriodic { samples, .. } => {
                let mut names: Vec<String> = (0..samples.len()).map(|k| format!("s_{k}")).collect();
                names.push("b_dc".into());
                names
            }
        }
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        use ParamKind::*;
        match self {
            FieldModel::Sinusoid { .. } | FieldModel::Triangular { .. } => alloc::vec![Field, Frequency, Phase, Field],
            FieldModel::DecayingMultiTone { tones, .. } => {
                let mut k = Vec::new();
                for _ in tones {
                    k.extend_from_slice(&[Field, Frequency, Phase]);
                }
                k.extend_from_slice(&[Time, Dimensionless, Field]);
                k
            }
            FieldModel::SampledPeriodic { samples, .. } => {
                let mut k = alloc::vec![Field; samples.len()];
                k.push(Field);
                k
            }
        }
    }

    /// Same variant with parameters replaced; `p` must match [`Self::params`].
    pub fn with_params(&self, p: &[f64]) -> FieldModel {
        match self {
            FieldModel::Sinusoid { .. } => FieldModel::Sinusoid {
                b_ac: p[0],
                f: p[1],
                phi: p[2],
                b_dc: p[3],
            },
            FieldModel::Triangular { .. } => FieldModel::Triangular {
                b_ac: p[0],
                f: p[1],
                phi: p[2],
                b_dc: p[3],
            },
            FieldModel::DecayingMultiTone { tones, .. } => {
                let n = tones.len();
                let tones = (0..n)
                    .map(|k| Tone {
                        a: p[3 * k],
                        f: p[3 * k + 1],
                        phi: p[3 * k + 2],
                    })
                    .collect();
                FieldModel::DecayingMultiTone {
                    tones,
                    t2n: p[3 * n],
                    decay_power: p[3 * n + 1],
                    b_dc: p[3 * n + 2],
                }
            }
            FieldModel::SampledPeriodic { samples, period, .. } => {
                let n = samples.len();
                FieldModel::SampledPeriodic {
                    samples: p[..n].to_vec(),
                    period: *period,
                    b_dc: p[n],
                }
            }
        }
    }

    /// Indices of parameters whose sign is flipped by canonicalization.
    ///
    /// Amplitudes are made non-negative by adding π to the matching phase,
    /// and phases are wrapped to `[−π, π)`. Returns the indices of amplitude
    /// parameters that changed sign, so callers can fix up covariances.
    pub fn canonicalize(&mut self) -> Vec<usize> {
        let mut flipped = Vec::new();
        match self {
            FieldModel::Sinusoid { b_ac, phi, .. } | FieldModel::Triangular { b_ac, phi, .. } => {
                if *b_ac < 0.0 {
                    *b_ac = -*b_ac;
                    *phi += PI;
                    flipped.push(0);
                }
                *phi = wrap_phase(*phi);
            }
            FieldModel::DecayingMultiTone { tones, .. } => {
                for (k, t) in tones.iter_mut().enumerate() {
                    if t.a < 0.0 {
                        t.a = -t.a;
                        t.phi += PI;
                        flipped.push(3 * k);
                    }
                    t.phi = wrap_phase(t.phi);
                }
            }
            FieldModel::SampledPeriodic { .. } => {}
        }
        flipped
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_phase(x: f64) -> f64 {
    rem_euclid(x + PI, TAU) - PI
}

/// `sin(πfτ)/(πf)`: the window integral of a unit sine centred on its peak.
pub fn sinc_window(f: f64, tau: f64) -> f64 {
    let x = PI * f * tau;
    if x.abs() < 1e-8 {
        tau * (1.0 - x * x / 6.0)
    } else {
        x.sin() / (PI * f)
    }
}

fn envelope(t: f64, t2n: f64, power: f64) -> f64 {
    let x = t.max(0.0) / t2n;
    if power == 1.0 {
        (-x).exp()
    } else {
        (-x.powf(power)).exp()
    }
}

/// `∫_0^t` of the interpolated sampled waveform (without the dc term).
fn sampled_primitive(samples: &[f64], period: f64, t: f64) -> f64 {
    let n = samples.len();
    let dt = period / n as f64;
    let per_period: f64 = (0..n).map(|i| 0.5 * (samples[i] + samples[(i + 1) % n]) * dt).sum();
    let cycles = (t / period).floor();
    let rem = t - cycles * period;
    let x = rem / dt;
    let j = (x.floor() as usize).min(n - 1);
    let mut acc: f64 = (0..j).map(|i| 0.5 * (samples[i] + samples[(i + 1) % n]) * dt).sum();
    let h = rem - j as f64 * dt;
    let a = samples[j];
    let b = samples[(j + 1) % n];
    acc += a * h + (b - a) * h * h / (2.0 * dt);
    cycles * per_period + acc
}

/// Best rational approximation `p/q` of `x > 0` with `q ≤ max_den`.
fn rational_approx(x: f64, max_den: u64) -> (u64, u64) {
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut v = x;
    loop {
        let a = v.floor();
        if a > u64::MAX as f64 / 4.0 {
            break;
        }
        let a = a as u64;
        let q2 = a.saturating_mul(q1).saturating_add(q0);
        if q2 > max_den {
            break;
        }
        let p2 = a.saturating_mul(p1).saturating_add(p0);
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = v - a as f64;
        if frac < 1e-15 || ((p1 as f64 / q1 as f64) - x).abs() <= 1e-15 * x {
            break;
        }
        v = 1.0 / frac;
    }
    (p1, q1)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Largest frequency of which all `freqs` are integer multiples, via
/// continued-fraction approximation of each ratio (denominator ≤ 10⁶,
/// relative tolerance 1e-9).
pub fn common_fundamental(freqs: &[f64]) -> Result<f64> {
    const MAX_DEN: u64 = 1_000_000;
    const REL_TOL: f64 = 1e-9;
    let Some(&reference) = freqs.first() else {
        return Err(Error::NoCommonPeriod);
    };
    let mut ratios = Vec::with_capacity(freqs.len());
    let mut lcm: u64 = 1;
    for &f in freqs {
        let r = f / reference;
        let (p, q) = rational_approx(r, MAX_DEN);
        if q == 0 || ((p as f64 / q as f64) - r).abs() > REL_TOL * r {
            return Err(Error::NoCommonPeriod);
        }
        lcm = lcm
            .checked_mul(q / gcd(lcm, q))
            .filter(|&l| l <= MAX_DEN)
            .ok_or(Error::NoCommonPeriod)?;
        ratios.push((p, q));
    }
    let mut g = 0u64;
    for (p, q) in ratios {
        let n = p.checked_mul(lcm / q).ok_or(Error::NoCommonPeriod)?;
        g = gcd(g, n);
    }
    Ok(reference * g as f64 / lcm as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const NT: f64 = 1e-9;

    fn sine(b_ac: f64, f: f64, phi: f64, b_dc: f64) -> FieldModel {
        FieldModel::Sinusoid { b_ac, f, phi, b_dc }
    }

    fn riemann(m: &FieldModel, t0: f64, tau: f64, n: usize) -> f64 {
        let h = tau / n as f64;
        (0..n).map(|i| m.evaluate(t0 + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn sinusoid_quarter_period_peak() {
        let m = sine(3.1 * NT, 50.0, 0.0, 0.0);
        assert!((m.evaluate(5e-3) - 3.1 * NT).abs() < 1e-24);
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let m = sine(0.0, 50.0, 1.2, 7.0 * NT);
        for t in [0.0, 1e-3, 0.37, -2.0] {
            assert_eq!(m.evaluate(t), 7.0 * NT);
        }
        let v = m.window_integral(0.123, 4e-4).unwrap();
        assert!((v - 7.0 * NT * 4e-4).abs() < 1e-27);
    }

    #[test]
    fn decaying_tone_direct_evaluation() {
        let m = FieldModel::DecayingMultiTone {
            tones: vec![Tone { a: 43.7 * NT, f: 7.0, phi: 0.0 }],
            t2n: 0.2,
            decay_power: 1.0,
            b_dc: 0.0,
        };
        let expected = 43.7 * NT * (-1.0f64).exp() * (TAU * 1.4).sin();
        assert!((m.evaluate(0.2) - expected).abs() < 1e-22);
        // cross-check against a dense numerical sampling of the same instant
        let h = 1e-7;
        let avg = riemann(&m, 0.2 - 0.5 * h, h, 64) / h;
        assert!((avg - expected).abs() < 1e-3 * expected.abs());
    }

    #[test]
    fn full_period_sine_integrates_to_dc() {
        let m = sine(3.1 * NT, 50.0, 0.0, 1.0 * NT);
        let v = m.window_integral(0.0, 20e-3).unwrap();
        assert!((v - 2.0e-11).abs() < 1e-11 * 3.1 * NT * 20e-3);
    }

    #[test]
    fn quarter_window_closed_form_matches_riemann() {
        let m = sine(3.1 * NT, 50.0, 0.0, 0.0);
        let tau = 0.4e-3;
        let t0 = 5e-3 - tau / 2.0;
        let closed = m.window_integral(t0, tau).unwrap();
        let textbook = 3.1 * NT / (TAU * 50.0) * ((TAU * 50.0 * t0).cos() - (TAU * 50.0 * (t0 + tau)).cos());
        let sum = riemann(&m, t0, tau, 1_000_000);
        assert!(((closed - textbook) / textbook).abs() < 1e-12);
        assert!(((closed - sum) / sum).abs() < 1e-10);
        let averaged = 3.1 * NT * (PI * 50.0 * tau).sin() / (PI * 50.0 * tau);
        assert!(((closed / tau) / averaged - 1.0).abs() < 1e-12);
        assert!(((closed / tau) / (3.0997 * NT) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn triangle_primitive_matches_quadrature() {
        let m = FieldModel::Triangular { b_ac: 2.0 * NT, f: 13.0, phi: 0.7, b_dc: -0.5 * NT };
        for (t0, tau) in [(0.0, 0.01), (0.013, 0.2), (1.7, 4e-4), (0.05, 1.0 / 13.0)] {
            let a = m.window_integral(t0, tau).unwrap();
            let b = m.integrate_numerically(t0, tau).unwrap();
            assert!((a - b).abs() < 1e-10 * 2.5 * NT * tau, "{t0} {tau}: {a} vs {b}");
        }
    }

    #[test]
    fn triangle_shape() {
        assert_eq!(triangle(0.0), 0.0);
        assert!((triangle(0.5 * PI) - 1.0).abs() < 1e-15);
        assert!((triangle(1.5 * PI) + 1.0).abs() < 1e-15);
        assert!((triangle(PI)).abs() < 1e-15);
    }

    #[test]
    fn sampled_interpolates_and_wraps() {
        let m = FieldModel::SampledPeriodic { samples: vec![0.0, 2.0, -2.0, 0.0], period: 1.0, b_dc: 1.0 };
        assert!((m.evaluate(0.125) - 2.0).abs() < 1e-15);
        assert!((m.evaluate(1.125) - 2.0).abs() < 1e-12);
        assert!((m.evaluate(-0.875) - 2.0).abs() < 1e-12);
        let exact = m.window_integral(0.1, 2.3).unwrap();
        let numeric = riemann(&m, 0.1, 2.3, 2_000_000);
        assert!((exact - numeric).abs() < 1e-9);
    }

    #[test]
    fn exponential_envelope_closed_form_matches_quadrature() {
        let m = FieldModel::DecayingMultiTone {
            tones: vec![
                Tone { a: 9.6 * NT, f: 7.0, phi: 0.3 },
                Tone { a: 19.7 * NT, f: 14.0, phi: -1.0 },
                Tone { a: 13.6 * NT, f: 21.0, phi: 2.0 },
            ],
            t2n: 0.2,
            decay_power: 1.0,
            b_dc: 0.4 * NT,
        };
        for (t0, tau) in [(0.0, 1e-4), (0.31, 1e-4), (0.0, 1.0)] {
            let a = m.window_integral(t0, tau).unwrap();
            let b = m.integrate_numerically(t0, tau).unwrap();
            assert!((a - b).abs() < 1e-11 * 45.0 * NT * tau, "{a} {b}");
        }
    }

    #[test]
    fn stretched_envelope_uses_quadrature() {
        let m = FieldModel::DecayingMultiTone {
            tones: vec![Tone { a: 10.0 * NT, f: 7.0, phi: 0.0 }],
            t2n: 0.2,
            decay_power: 2.0,
            b_dc: 0.0,
        };
        let v = m.window_integral(0.1, 0.05).unwrap();
        let r = riemann(&m, 0.1, 0.05, 1_000_000);
        assert!((v - r).abs() < 1e-9 * r.abs());
    }

    #[test]
    fn periods() {
        assert!((sine(1.0, 50.0, 0.0, 0.0).period().unwrap() - 0.02).abs() < 1e-15);
        let m = FieldModel::SampledPeriodic { samples: vec![0.0, 1.0], period: 1.0, b_dc: 0.0 };
        assert_eq!(m.period().unwrap(), 1.0);
        let tones = [7.0, 14.0, 21.0].iter().map(|&f| Tone { a: 1.0, f, phi: 0.0 }).collect();
        let m = FieldModel::DecayingMultiTone { tones, t2n: 1.0, decay_power: 1.0, b_dc: 0.0 };
        let p = m.period().unwrap();
        assert!((p - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn common_fundamental_of_rational_ratios() {
        assert!((common_fundamental(&[6.0, 10.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!((common_fundamental(&[1.5, 2.5, 3.5]).unwrap() - 0.5).abs() < 1e-12);
        // two tones always admit a convergent within tolerance; three
        // incommensurate ones overflow the denominator bound
        assert!(common_fundamental(&[1.0, core::f64::consts::SQRT_2, 3f64.sqrt()]).is_err());
    }

    #[test]
    fn validation_rejects_bad_models() {
        assert!(sine(1.0, 0.0, 0.0, 0.0).validate().is_err());
        assert!(sine(1.0, -1.0, 0.0, 0.0).validate().is_err());
        let m = FieldModel::DecayingMultiTone { tones: vec![], t2n: 1.0, decay_power: 1.0, b_dc: 0.0 };
        assert!(m.validate().is_err());
        let m = FieldModel::SampledPeriodic { samples: vec![1.0, 2.0], period: 0.0, b_dc: 0.0 };
        assert!(m.validate().is_err());
    }

    #[test]
    fn canonicalize_flips_negative_amplitude() {
        let mut m = sine(-2.0, 5.0, 0.5, 0.0);
        let before: Vec<f64> = (0..10).map(|i| m.evaluate(i as f64 * 0.013)).collect();
        assert_eq!(m.canonicalize(), vec![0]);
        let after: Vec<f64> = (0..10).map(|i| m.evaluate(i as f64 * 0.013)).collect();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-14);
        }
        if let FieldModel::Sinusoid { b_ac, phi, .. } = m {
            assert_eq!(b_ac, 2.0);
            assert!((-PI..PI).contains(&phi));
        }
    }

    #[test]
    fn params_roundtrip_through_with_params() {
        let m = FieldModel::DecayingMultiTone {
            tones: vec![Tone { a: 1.0, f: 2.0, phi: 3.0 }, Tone { a: 4.0, f: 5.0, phi: 6.0 }],
            t2n: 0.2,
            decay_power: 1.5,
            b_dc: 7.0,
        };
        assert_eq!(m.with_params(&m.params()), m);
        assert_eq!(m.param_names().len(), m.params().len());
        assert_eq!(m.param_kinds().len(), m.params().len());
    }
}
