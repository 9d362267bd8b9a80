//! Synthetic QScope acquisitions: exact window integrals through the
//! readout model, plus shot noise.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::montecarlo::rng_from_seed;
use crate::nvmodel::SignalModel;
use crate::protocol::SequencePlan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Window center (s).
    pub t: f64,
    pub signal: f64,
    pub sigma1: f64,
    pub readout_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub plan: Option<SequencePlan>,
    /// Design frequency; `None` for synchronized records.
    pub f: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub points: Vec<TracePoint>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Start of each phase-accumulation window, given its length.
    pub fn window_start(&self, i: usize, tau: f64) -> f64 {
        self.points[i].t - 0.5 * tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    /// Per-point Gaussian with the aggregated σ₁.
    Gaussian,
    /// Photon counts drawn per point with mean `M·N_ph·S`.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoise {
    pub kind: NoiseKind,
    /// Mean photons per readout pulse.
    pub n_ph: f64,
}

impl ShotNoise {
    pub fn sigma1(&self, m_iter: u64) -> f64 {
        1.0 / (m_iter as f64 * self.n_ph).sqrt()
    }

    /// Draws one accumulated readout with expectation `mean`.
    pub fn sample<R: Rng>(&self, mean: f64, m_iter: u64, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::None => mean,
            NoiseKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                mean + self.sigma1(m_iter) * z
            }
            NoiseKind::Poisson => {
                let photons = m_iter as f64 * self.n_ph;
                let lambda = (photons * mean).max(f64::MIN_POSITIVE);
                let counts: f64 = Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(lambda);
                counts / photons
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_ph.is_finite() && self.n_ph > 0.0) {
            return Err(Error::invalid("n_ph", format!("must be > 0, got {}", self.n_ph)));
        }
        Ok(())
    }
}

/// Simulates a QScope acquisition.
///
/// With a design frequency in `f`, period `p` restarts at `p/f`; with
/// `None` the record is synchronized to t = 0 (every accumulation restarts
/// at the trigger, so decaying fields restart too).
pub fn run_qscope(
    field: &FieldModel,
    sm: &SignalModel,
    plan: &SequencePlan,
    f: Option<f64>,
    noise: ShotNoise,
    seed: u64,
) -> Result<Trace> {
    field.validate()?;
    sm.validate()?;
    plan.validate()?;
    noise.validate()?;
    if (plan.tau - sm.tau).abs() > 1e-12 * sm.tau {
        return Err(Error::invalid("tau", "plan delay differs from the signal model delay"));
    }
    let mut rng = rng_from_seed(seed);
    let sigma1 = noise.sigma1(plan.m_iter);
    let windows = plan.windows(f);
    let mut points = Vec::with_capacity(windows.len());
    for (i, (t0, tau)) in windows.into_iter().enumerate() {
        let rho = plan.readout_phase(i);
        let mean = sm.expected_signal(field.window_integral(t0, tau)?, rho);
        let signal = noise.sample(mean, plan.m_iter, &mut rng);
        points.push(TracePoint {
            t: t0 + 0.5 * tau,
            signal,
            sigma1,
            readout_phase: rho,
        });
    }
    Ok(Trace {
        points,
        meta: TraceMeta {
            plan: Some(plan.clone()),
            f,
            seed,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub t: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    pub points: Vec<FieldPoint>,
    /// Points whose normalized readout fell outside [−1, 1].
    pub clamped: usize,
}

/// Inverts the readout point by point, assuming the linear regime.
///
/// The result is the window-averaged field. Normalized readouts outside
/// [−1, 1] are clamped; more than half clamped means the trace wraps.
pub fn readout_to_field(trace: &Trace, sm: &SignalModel) -> Result<FieldSeries> {
    let (series, clamped) = invert_clamped(trace, sm);
    if 2 * clamped > trace.len() {
        return Err(Error::NotInvertible {
            clamped,
            total: trace.len(),
        });
    }
    Ok(FieldSeries { points: series, clamped })
}

pub(crate) fn invert_clamped(trace: &Trace, sm: &SignalModel) -> (Vec<FieldPoint>, usize) {
    let mut clamped = 0;
    let points = trace
        .points
        .iter()
        .map(|p| {
            let x = (p.signal - sm.offset_o) / sm.amp_a;
            if !(-1.0..=1.0).contains(&x) {
                clamped += 1;
            }
            let phase = x.clamp(-1.0, 1.0).asin() - sm.theta - p.readout_phase;
            FieldPoint {
                t: p.t,
                b: phase / (sm.omega_s * sm.tau),
            }
        })
        .collect();
    (points, clamped)
}
