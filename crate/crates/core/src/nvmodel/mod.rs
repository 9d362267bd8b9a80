//! Readout model: accumulated field phase to normalized photon signal.
//!
//! Signals are normalized photon rates. The mid-fringe level is
//! `1 − c0/2` and the fringe amplitude is `(c0/2)·exp(−(τ/T2*)^n)`, so the
//! peak-to-peak fringe at τ → 0 equals the contrast `c0`.

mod fid;

pub use fid::{fit_t2star, simulate_fid, Estimate, T2StarFit};

use core::f64::consts::{FRAC_PI_2, PI, TAU};

use alloc::format;
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electron gyromagnetic ratio gμ_B/ħ in rad·s⁻¹·T⁻¹.
pub const GAMMA_E: f64 = 1.760859e11;

fn default_gamma() -> f64 {
    GAMMA_E
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvParams {
    /// Inhomogeneous dephasing time (s).
    pub t2_star: f64,
    /// Stretch power of the FID envelope.
    pub stretch_n: f64,
    /// Full Ramsey fringe contrast at τ → 0.
    pub contrast_c0: f64,
    /// Mean photons per readout pulse.
    pub n_ph: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl Default for NvParams {
    fn default() -> Self {
        NvParams {
            t2_star: 1.05e-3,
            stretch_n: 2.0,
            contrast_c0: 0.30,
            n_ph: 0.1,
            gamma: GAMMA_E,
        }
    }
}

impl NvParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        pos("t2_star", self.t2_star)?;
        pos("contrast_c0", self.contrast_c0)?;
        pos("n_ph", self.n_ph)?;
        pos("gamma", self.gamma)?;
        if !(self.stretch_n.is_finite() && self.stretch_n >= 1.0) {
            return Err(Error::invalid("stretch_n", format!("must be ≥ 1, got {}", self.stretch_n)));
        }
        if self.contrast_c0 > 1.0 {
            return Err(Error::invalid("contrast_c0", format!("must be ≤ 1, got {}", self.contrast_c0)));
        }
        Ok(())
    }

    /// FID envelope `exp(−(τ/T2*)^n)`.
    pub fn envelope(&self, tau: f64) -> f64 {
        (-(tau / self.t2_star).powf(self.stretch_n)).exp()
    }

    pub fn signal_model(&self, tau: f64) -> SignalModel {
        SignalModel {
            amp_a: 0.5 * self.contrast_c0 * self.envelope(tau),
            omega_s: self.gamma,
            theta: 0.0,
            offset_o: 1.0 - 0.5 * self.contrast_c0,
            tau,
        }
    }

    /// Shot-noise limited per-point standard deviation `1/√(M·N_ph)`.
    pub fn sigma1(&self, m_iter: u64) -> f64 {
        1.0 / (m_iter as f64 * self.n_ph).sqrt()
    }
}

/// Calibration constants `S = A·sin(ω·∫B dt + θ + ρ) + O`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub amp_a: f64,
    /// Multiplies the field integral (rad·T⁻¹·s⁻¹).
    pub omega_s: f64,
    pub theta: f64,
    pub offset_o: f64,
    /// The delay this model was built for (s).
    pub tau: f64,
}

impl SignalModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.amp_a.is_finite() && self.amp_a > 0.0) {
            return Err(Error::invalid("amp_a", format!("must be > 0, got {}", self.amp_a)));
        }
        if !(self.omega_s.is_finite() && self.omega_s != 0.0) {
            return Err(Error::invalid("omega_s", "must be finite and nonzero"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.theta.is_finite() && self.offset_o.is_finite()) {
            return Err(Error::invalid("theta", "theta and offset_o must be finite"));
        }
        Ok(())
    }

    /// Spin phase for a field integral, before θ and the readout phase.
    pub fn phase(&self, field_integral: f64) -> f64 {
        self.omega_s * field_integral
    }

    pub fn expected_signal(&self, field_integral: f64, readout_phase: f64) -> f64 {
        self.amp_a * (self.omega_s * field_integral + self.theta + readout_phase).sin() + self.offset_o
    }

    /// `∂S/∂(∫B dt)`.
    pub fn slope(&self, field_integral: f64, readout_phase: f64) -> f64 {
        self.amp_a * self.omega_s * (self.omega_s * field_integral + self.theta + readout_phase).cos()
    }

    /// Constant field giving one full fringe, `2π/(ω·τ)`.
    pub fn fringe_field(&self) -> f64 {
        TAU / (self.omega_s * self.tau).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutAxis {
    SameAxis,
    OrthogonalAxis,
}

/// Readout at zero bias field, where the MW pulses drive both transitions
/// and the two spin populations precess in opposite directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualTransitionModel {
    /// MW offset from the zero-field transition (Hz).
    pub detuning: f64,
    pub base: SignalModel,
    pub readout_axis: ReadoutAxis,
}

impl DualTransitionModel {
    /// Fringe contrast factor `cos(2π·δ·τ)`.
    pub fn contrast_factor(&self) -> f64 {
        (TAU * self.detuning * self.base.tau).cos()
    }

    /// Readout for a constant field `b`.
    pub fn expected_signal_zero_field(&self, b: f64) -> f64 {
        self.signal_for_integral(b * self.base.tau)
    }

    /// Readout for an arbitrary field integral.
    pub fn signal_for_integral(&self, field_integral: f64) -> f64 {
        let sm = &self.base;
        match self.readout_axis {
            ReadoutAxis::SameAxis => {
                sm.offset_o + sm.amp_a * (sm.omega_s * field_integral).cos() * self.contrast_factor()
            }
            ReadoutAxis::OrthogonalAxis => sm.offset_o,
        }
    }

    /// The same-axis readout written as an ordinary [`SignalModel`]:
    /// `c·A·cos(x) = |c|·A·sin(x + π/2 [+ π if c < 0])`.
    ///
    /// Fails for the orthogonal axis, which carries no field information.
    pub fn effective_signal_model(&self) -> Result<SignalModel> {
        if self.readout_axis == ReadoutAxis::OrthogonalAxis {
            return Err(Error::invalid("readout_axis", "orthogonal-axis readout is field independent"));
        }
        let c = self.contrast_factor();
        if c.abs() < 1e-12 {
            return Err(Error::invalid("detuning", "contrast factor vanishes at this detuning"));
        }
        let mut sm = self.base;
        sm.amp_a = self.base.amp_a * c.abs();
        sm.theta = self.base.theta + FRAC_PI_2 + if c < 0.0 { PI } else { 0.0 };
        Ok(sm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn amplitude_at_paper_delay() {
        let sm = NvParams::default().signal_model(0.4e-3);
        let expected = 0.15 * (-(0.4f64 / 1.05).powi(2)).exp();
        assert!((sm.amp_a - expected).abs() < 1e-15);
        assert!((sm.amp_a - 0.1297).abs() < 1e-4);
        assert!((sm.offset_o - 0.85).abs() < 1e-15);
        assert_eq!(sm.theta, 0.0);
    }

    #[test]
    fn short_delay_limit() {
        let sm = NvParams::default().signal_model(1e-12);
        assert!((sm.amp_a - 0.15).abs() < 1e-12);
    }

    #[test]
    fn fringe_spacing() {
        let sm = NvParams::default().signal_model(0.4e-3);
        assert!((sm.fringe_field() - 89.2e-9).abs() < 0.05e-9);
        // the fringe repeats after one fringe field
        let b = 13e-9;
        let s0 = sm.expected_signal(b * sm.tau, 0.0);
        let s1 = sm.expected_signal((b + sm.fringe_field()) * sm.tau, 0.0);
        assert!((s0 - s1).abs() < 1e-12);
    }

    #[test]
    fn signal_landmarks() {
        let sm = NvParams::default().signal_model(0.4e-3);
        assert_eq!(sm.expected_signal(0.0, 0.0), sm.offset_o);
        let quarter = FRAC_PI_2 / sm.omega_s;
        assert!((sm.expected_signal(quarter, 0.0) - (sm.offset_o + sm.amp_a)).abs() < 1e-15);
    }

    #[test]
    fn detuned_contrast() {
        let base = NvParams::default().signal_model(0.2e-3);
        let dt = DualTransitionModel { detuning: 500.0, base, readout_axis: ReadoutAxis::SameAxis };
        assert!((dt.contrast_factor() - (0.2 * PI).cos()).abs() < 1e-15);
        assert!((dt.contrast_factor() - 0.809).abs() < 1e-3);
        let dt0 = DualTransitionModel { detuning: 0.0, ..dt };
        assert!((dt0.expected_signal_zero_field(0.0) - (base.offset_o + base.amp_a)).abs() < 1e-15);
        let orth = DualTransitionModel { readout_axis: ReadoutAxis::OrthogonalAxis, ..dt };
        assert_eq!(orth.expected_signal_zero_field(37e-9), base.offset_o);
    }

    #[test]
    fn effective_model_reproduces_same_axis_readout() {
        let base = NvParams::default().signal_model(0.2e-3);
        for detuning in [0.0, 300.0, 2000.0, 4000.0] {
            let dt = DualTransitionModel { detuning, base, readout_axis: ReadoutAxis::SameAxis };
            let sm = dt.effective_signal_model().unwrap();
            for b in [-50e-9, 0.0, 12e-9, 30e-9] {
                let i = b * base.tau;
                assert!((sm.expected_signal(i, 0.0) - dt.signal_for_integral(i)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(NvParams { contrast_c0: 0.0, ..NvParams::default() }.validate().is_err());
        assert!(NvParams { contrast_c0: 1.2, ..NvParams::default() }.validate().is_err());
        assert!(NvParams { stretch_n: 0.5, ..NvParams::default() }.validate().is_err());
        assert!(NvParams::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn signal_stays_within_fringe(i in -1e-9f64..1e-9, rho in -10.0f64..10.0, theta in -10.0f64..10.0) {
            let mut sm = NvParams::default().signal_model(0.4e-3);
            sm.theta = theta;
            let s = sm.expected_signal(i, rho);
            prop_assert!(s <= sm.offset_o + sm.amp_a + 1e-15);
            prop_assert!(s >= sm.offset_o - sm.amp_a - 1e-15);
        }

        #[test]
        fn zero_field_readout_is_even(b in -1e-6f64..1e-6, detuning in -5000.0f64..5000.0) {
            let base = NvParams::default().signal_model(0.2e-3);
            let dt = DualTransitionModel { detuning, base, readout_axis: ReadoutAxis::SameAxis };
            prop_assert_eq!(dt.expected_signal_zero_field(b), dt.expected_signal_zero_field(-b));
        }

        #[test]
        fn zero_field_is_the_extremum(b in 1e-10f64..40e-9, detuning in -5000.0f64..5000.0) {
            let base = NvParams::default().signal_model(0.2e-3);
            let dt = DualTransitionModel { detuning, base, readout_axis: ReadoutAxis::SameAxis };
            let c = dt.contrast_factor();
            prop_assume!(c.abs() > 1e-3);
            let centre = dt.expected_signal_zero_field(0.0);
            let off = dt.expected_signal_zero_field(b);
            // within the central fringe lobe the zero-field value is the max (c > 0) or min (c < 0)
            if c > 0.0 { prop_assert!(centre >= off); } else { prop_assert!(centre <= off); }
        }
    }
}
