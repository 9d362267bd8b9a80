//! QScope sequence planning: how many fixed-delay Ramsey windows tile one
//! signal period, and how long the whole acquisition takes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default per-window overhead: laser pulse, waits and MW pulses (s).
pub const DEFAULT_OVERHEAD: f64 = 10e-6;
/// Fewest points per period; one per unknown of a sinusoid.
pub const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePlan {
    /// Delay between the π/2 pulses (s).
    pub tau: f64,
    /// Dead time per window (s).
    pub t_overhead: f64,
    /// Windows per signal period.
    pub n_points: usize,
    pub n_periods: usize,
    /// Accumulations per point.
    pub m_iter: u64,
    /// Readout phases cycled over consecutive points (rad).
    pub readout_phases: Vec<f64>,
}

/// `floor(x)` tolerant to the last-ulp error of a quotient that should be
/// an exact integer.
fn floor_count(x: f64) -> usize {
    (x * (1.0 + 1e-12)).floor() as usize
}

/// Plans a periodic acquisition at design frequency `f`.
///
/// The delay is capped at `tau_max`, but shrinks at high frequency so at
/// least `n_min` windows fit in a period. When only `n_min` windows fit,
/// two periods are recorded so the fit has more points than unknowns.
pub fn plan(f: f64, tau_max: f64, n_min: usize, t_overhead: f64, m_iter: u64) -> Result<SequencePlan> {
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::invalid("f", format!("must be > 0, got {f}")));
    }
    if !(tau_max.is_finite() && tau_max > 0.0) {
        return Err(Error::invalid("tau_max", format!("must be > 0, got {tau_max}")));
    }
    if n_min < MIN_POINTS {
        return Err(Error::invalid("n_min", format!("must be ≥ {MIN_POINTS}, got {n_min}")));
    }
    if !(t_overhead.is_finite() && t_overhead >= 0.0) {
        return Err(Error::invalid("t_overhead", "must be ≥ 0"));
    }
    let slot = 1.0 / (f * n_min as f64);
    if slot <= t_overhead {
        return Err(Error::FrequencyTooHigh { f });
    }
    let tau = tau_max.min(slot - t_overhead);
    let n_points = floor_count(1.0 / (f * (tau + t_overhead))).max(n_min);
    let n_periods = if n_points == n_min { 2 } else { 1 };
    let plan = SequencePlan {
        tau,
        t_overhead,
        n_points,
        n_periods,
        m_iter,
        readout_phases: vec![0.0],
    };
    plan.validate()?;
    Ok(plan)
}

impl SequencePlan {
    /// Plan with exactly `n_points` windows per period; the delay fills the
    /// period, capped at `tau_cap`.
    pub fn for_points(f: f64, n_points: usize, t_overhead: f64, tau_cap: Option<f64>, m_iter: u64) -> Result<Self> {
        if n_points < MIN_POINTS {
            return Err(Error::invalid("n_points", format!("must be ≥ {MIN_POINTS}")));
        }
        let slot = 1.0 / (f * n_points as f64);
        if slot <= t_overhead {
            return Err(Error::FrequencyTooHigh { f });
        }
        let mut tau = slot - t_overhead;
        if let Some(cap) = tau_cap {
            tau = tau.min(cap);
        }
        let plan = SequencePlan {
            tau,
            t_overhead,
            n_points,
            n_periods: if n_points == MIN_POINTS { 2 } else { 1 },
            m_iter,
            readout_phases: vec![0.0],
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan for a synchronized (triggered) signal: as many windows as fit
    /// in `record` seconds after the trigger.
    pub fn synchronized(record: f64, tau: f64, t_overhead: f64, m_iter: u64) -> Result<Self> {
        if !(record.is_finite() && record > 0.0) {
            return Err(Error::invalid("record", "must be > 0"));
        }
        let plan = SequencePlan {
            tau,
            t_overhead,
            n_points: floor_count(record / (tau + t_overhead)),
            n_periods: 1,
            m_iter,
            readout_phases: vec![0.0],
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Alternates the readout phase between `theta` and `theta + π/2`.
    pub fn with_dual_phase(mut self, theta: f64) -> Self {
        self.readout_phases = vec![theta, theta + FRAC_PI_2];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.t_overhead.is_finite() && self.t_overhead >= 0.0) {
            return Err(Error::invalid("t_overhead", "must be ≥ 0"));
        }
        if self.n_points < MIN_POINTS {
            return Err(Error::invalid("n_points", format!("must be ≥ {MIN_POINTS}, got {}", self.n_points)));
        }
        if self.n_periods == 0 {
            return Err(Error::invalid("n_periods", "must be ≥ 1"));
        }
        if self.m_iter == 0 {
            return Err(Error::invalid("m_iter", "must be ≥ 1"));
        }
        if self.readout_phases.is_empty() || self.readout_phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("readout_phases", "need at least one finite phase"));
        }
        Ok(())
    }

    pub fn total_points(&self) -> usize {
        self.n_points * self.n_periods
    }

    /// Duration of one window including overhead.
    pub fn slot(&self) -> f64 {
        self.tau + self.t_overhead
    }

    /// Total acquisition time `M·periods/f`.
    pub fn measurement_time(&self, f: f64) -> f64 {
        self.m_iter as f64 * self.n_periods as f64 / f
    }

    /// Acquisition time of a synchronized record: `M` repetitions of the
    /// windowed record.
    pub fn synchronized_measurement_time(&self) -> f64 {
        self.m_iter as f64 * self.total_points() as f64 * self.slot()
    }

    /// `(t_start, tau)` of each phase-accumulation window.
    ///
    /// With a design frequency, the windows of period `p` start at
    /// `p/f + i·slot`; windows are laid out back to back otherwise.
    pub fn windows(&self, f: Option<f64>) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.total_points());
        for p in 0..self.n_periods {
            let base = match f {
                Some(f) => p as f64 / f,
                None => (p * self.n_points) as f64 * self.slot(),
            };
            for i in 0..self.n_points {
                out.push((base + i as f64 * self.slot(), self.tau));
            }
        }
        out
    }

    pub fn readout_phase(&self, index: usize) -> f64 {
        self.readout_phases[index % self.readout_phases.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fifty_hertz() {
        let p = plan(50.0, 0.4e-3, 4, 10e-6, 1).unwrap();
        assert_eq!(p.tau, 0.4e-3);
        assert_eq!(p.n_points, 48);
        assert_eq!(p.n_periods, 1);
        let span = p.n_points as f64 * p.slot();
        assert!(span <= 1.0 / 50.0);
    }

    #[test]
    fn one_hertz() {
        assert_eq!(plan(1.0, 0.4e-3, 4, 10e-6, 1).unwrap().n_points, 2439);
    }

    #[test]
    fn two_kilohertz_doubles_periods() {
        let p = plan(2000.0, 0.4e-3, 4, 10e-6, 1).unwrap();
        assert!((p.tau - 115e-6).abs() < 1e-18);
        assert_eq!(p.n_points, 4);
        assert_eq!(p.n_periods, 2);
        assert_eq!(p.total_points(), 8);
    }

    #[test]
    fn too_high_frequency() {
        assert_eq!(plan(25_000.0, 0.4e-3, 4, 10e-6, 1), Err(Error::FrequencyTooHigh { f: 25_000.0 }));
    }

    #[test]
    fn measurement_times() {
        let mut p = plan(1.0, 0.4e-3, 4, 10e-6, 1).unwrap();
        assert_eq!(p.measurement_time(1.0), 1.0);
        p = plan(50.0, 0.4e-3, 4, 10e-6, 10_000).unwrap();
        assert!((p.measurement_time(50.0) - 200.0).abs() < 1e-12);
    }

    #[test]
    fn window_starts() {
        let p = SequencePlan {
            tau: 115e-6,
            t_overhead: 10e-6,
            n_points: 4,
            n_periods: 1,
            m_iter: 1,
            readout_phases: vec![0.0],
        };
        let w = p.windows(Some(2000.0));
        let starts: Vec<f64> = w.iter().map(|x| x.0).collect();
        for (s, e) in starts.iter().zip([0.0, 125e-6, 250e-6, 375e-6]) {
            assert!((s - e).abs() < 1e-18);
        }
    }

    #[test]
    fn dual_phase_pattern() {
        let p = plan(50.0, 0.4e-3, 4, 10e-6, 1).unwrap().with_dual_phase(0.3);
        assert_eq!(p.readout_phase(0), 0.3);
        assert_eq!(p.readout_phase(1), 0.3 + FRAC_PI_2);
        assert_eq!(p.readout_phase(2), 0.3);
    }

    #[test]
    fn synchronized_record() {
        let p = SequencePlan::synchronized(1.0, 0.1e-3, 10e-6, 20_000).unwrap();
        assert_eq!(p.n_points, 9090);
        let w = p.windows(None);
        assert!(w.last().unwrap().0 + p.tau <= 1.0);
    }

    proptest! {
        #[test]
        fn plan_invariants(f in 0.5f64..5000.0, tau_max in 50e-6f64..1e-3, oh in 0.0f64..20e-6) {
            let p = match plan(f, tau_max, 4, oh, 1) {
                Ok(p) => p,
                Err(Error::FrequencyTooHigh { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            };
            prop_assert!(p.n_points >= 4);
            prop_assert!(p.tau <= tau_max);
            prop_assert_eq!(p.n_points, floor_count(1.0 / (f * (p.tau + oh))));
            prop_assert!(p.n_points as f64 * p.slot() <= (1.0 / f) * (1.0 + 1e-9));
            let w = p.windows(Some(f));
            prop_assert_eq!(w.len(), p.total_points());
            for pair in w.windows(2) {
                prop_assert!(pair[0].0 + pair[0].1 <= pair[1].0 + 1e-15);
            }
            let end = w.last().unwrap().0 + p.tau;
            prop_assert!(end <= p.n_periods as f64 / f + p.slot());
        }

        #[test]
        fn capped_regime_scales_as_inverse_frequency(f in 1.0f64..600.0) {
            let p = plan(f, 0.4e-3, 4, 10e-6, 1).unwrap();
            prop_assert_eq!(p.tau, 0.4e-3);
            let ideal = 1.0 / (f * 4.1e-4);
            prop_assert!((p.n_points as f64 - ideal).abs() < 1.0);
        }
    }
}
