//! Sensitivity laws: closed forms, the standard-error engine on planned
//! sampling grids, optimized sensitivity-vs-frequency curves and the
//! empirical extraction of η from uncertainty-vs-time series.
//!
//! Sensitivity is `η = σ_coef·√T_meas`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, SQRT_2, TAU};

use nalgebra::Matrix2;
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sinc_window, FieldModel};
use crate::fit::{fit_trace, FitTemplate};
use crate::montecarlo::{derive_seed, linear_regression, std_dev, Executor};
use crate::nvmodel::{Estimate, NvParams};
use crate::protocol::{SequencePlan, MIN_POINTS};
use crate::simulate::{run_qscope, NoiseKind, ShotNoise};

/// Number of signal phases the engine averages over when the sampling
/// grid does not cover whole periods uniformly.
pub const ENGINE_PHASES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Single readout phase at the fringe's maximum gradient.
    Linear,
    /// Readout phase alternating between θ and θ + π/2.
    NonlinearDualPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayRegime {
    OverheadNegligible,
    OverheadDominant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub f: f64,
    pub eta: f64,
    pub tau: f64,
    pub n_points: usize,
    pub regime: Regime,
}

/// One row of an optimized sensitivity-vs-frequency curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub f: f64,
    /// T/√Hz
    pub eta_dc: f64,
    /// T/√Hz
    pub eta_ac: f64,
    pub tau: f64,
    pub n_points: usize,
    pub n_periods: usize,
}

/// `η_dc = √(τ + t_oh)/(A·γτ·√N_ph)`.
pub fn eta_dc_analytic(p: &NvParams, tau: f64, t_overhead: f64) -> f64 {
    let a = p.signal_model(tau).amp_a;
    (tau + t_overhead).sqrt() / (a * p.gamma * tau * p.n_ph.sqrt())
}

/// Effective ac conversion factor: γ times the window integral of a unit
/// sine centred on its crest, `γ·sin(πfτ)/(πf)`.
pub fn omega_ac(gamma: f64, f: f64, tau: f64) -> f64 {
    gamma * sinc_window(f, tau)
}

/// `η_ac = √2·√(τ + t_oh)/(A·ω_ac·√N_ph)`.
pub fn eta_ac_analytic(p: &NvParams, tau: f64, t_overhead: f64, f: f64) -> f64 {
    let a = p.signal_model(tau).amp_a;
    SQRT_2 * (tau + t_overhead).sqrt() / (a * omega_ac(p.gamma, f, tau) * p.n_ph.sqrt())
}

/// Delay minimizing η_dc: `T2*·(1/2n)^{1/n}` when overhead is negligible,
/// `T2*·(1/n)^{1/n}` when it dominates.
pub fn optimal_delay(t2_star: f64, n: f64, regime: DelayRegime) -> f64 {
    let k = match regime {
        DelayRegime::OverheadNegligible => 2.0 * n,
        DelayRegime::OverheadDominant => n,
    };
    t2_star * (1.0 / k).powf(1.0 / n)
}

/// η_dc and η_ac from `(JᵀJ)⁻¹` of a `(b_ac, b_dc)` fit on the exact
/// sampling grid of `plan`, at vanishing amplitude.
///
/// Uses `E[R²] = D·σ₁²`, so `σ_j = σ₁·√C_jj`, and averages `C_jj` over
/// [`ENGINE_PHASES`] signal phases.
pub fn engine_etas(p: &NvParams, plan: &SequencePlan, f: f64, regime: Regime) -> (f64, f64) {
    let sm = p.signal_model(plan.tau);
    let w = sinc_window(f, plan.tau);
    let windows = plan.windows(Some(f));
    let mut c_ac = 0.0;
    let mut c_dc = 0.0;
    for k in 0..ENGINE_PHASES {
        let phi = TAU * k as f64 / ENGINE_PHASES as f64;
        let mut jtj = Matrix2::zeros();
        for (i, (t0, tau)) in windows.iter().enumerate() {
            let rho = match regime {
                Regime::Linear => 0.0,
                Regime::NonlinearDualPhase => {
                    if i % 2 == 0 {
                        0.0
                    } else {
                        FRAC_PI_2
                    }
                }
            };
            let slope = sm.slope(0.0, rho);
            let um = TAU * f * (t0 + 0.5 * tau) + phi;
            let row = [slope * um.sin() * w, slope * tau];
            for a in 0..2 {
                for b in 0..2 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        let c = jtj.try_inverse().unwrap_or_else(|| Matrix2::from_element(f64::INFINITY));
        c_ac += c[(0, 0)];
        c_dc += c[(1, 1)];
    }
    c_ac /= ENGINE_PHASES as f64;
    c_dc /= ENGINE_PHASES as f64;
    // σ₁²·T = (1/(M·N_ph))·(M·periods/f)
    let time_factor = plan.n_periods as f64 / (f * p.n_ph);
    ((c_dc * time_factor).sqrt(), (c_ac * time_factor).sqrt())
}

/// For each frequency, the number of points per period (and hence delay)
/// minimizing the engine's η_ac.
///
/// The delay is `1/(f·N) − t_oh`, capped at `tau_cap`. Without a cap the
/// search stops at delays of T2*/100.
pub fn optimize_curve(
    f_grid: &[f64],
    p: &NvParams,
    t_overhead: f64,
    tau_cap: Option<f64>,
    n_min: usize,
    regime: Regime,
) -> Result<Vec<CurvePoint>> {
    p.validate()?;
    if n_min < MIN_POINTS {
        return Err(Error::invalid("n_min", format!("must be ≥ {MIN_POINTS}")));
    }
    f_grid.iter().map(|&f| optimize_point(f, p, t_overhead, tau_cap, n_min, regime)).collect()
}

fn optimize_point(f: f64, p: &NvParams, t_overhead: f64, tau_cap: Option<f64>, n_min: usize, regime: Regime) -> Result<CurvePoint> {
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::invalid("f", format!("must be > 0, got {f}")));
    }
    if 1.0 / (f * n_min as f64) <= t_overhead {
        return Err(Error::FrequencyTooHigh { f });
    }
    let tau_min = p.t2_star / 100.0;
    let n_lo = match tau_cap {
        Some(cap) => ((1.0 / (f * (cap + t_overhead))).floor() as usize).max(n_min),
        None => n_min,
    };
    let n_hi = ((1.0 / (f * (tau_min + t_overhead))).floor() as usize).max(n_lo);
    let eval = |n: usize| -> Result<(f64, f64, SequencePlan)> {
        let plan = SequencePlan::for_points(f, n, t_overhead, tau_cap, 1)?;
        let (dc, ac) = engine_etas(p, &plan, f, regime);
        Ok((ac, dc, plan))
    };
    let (mut lo, mut hi) = (n_lo, n_hi);
    while hi - lo > 6 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if eval(m1)?.0 <= eval(m2)?.0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mut best: Option<(f64, f64, SequencePlan)> = None;
    for n in lo.saturating_sub(3).max(n_lo)..=(hi + 3).min(n_hi) {
        let cand = eval(n)?;
        if best.as_ref().is_none_or(|b| cand.0 < b.0) {
            best = Some(cand);
        }
    }
    let (ac, dc, plan) = best.expect("non-empty search range");
    Ok(CurvePoint {
        f,
        eta_dc: dc,
        eta_ac: ac,
        tau: plan.tau,
        n_points: plan.n_points,
        n_periods: plan.n_periods,
    })
}

/// Least-squares fit of `σ = η/√T` to `(T_meas, σ)` pairs.
pub fn eta_from_uncertainty_series(points: &[(f64, f64)]) -> Result<Estimate> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points, need at least 3", points.len())));
    }
    if points.iter().any(|&(t, s)| !(t > 0.0 && t.is_finite() && s.is_finite())) {
        return Err(Error::invalid("points", "measurement times must be positive and values finite"));
    }
    let tmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let tmax = points.iter().map(|p| p.0).fold(0.0, f64::max);
    if tmax < 10.0 * tmin * (1.0 - 1e-12) {
        return Err(Error::InsufficientSpan);
    }
    let sxx: f64 = points.iter().map(|p| 1.0 / p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.1 / p.0.sqrt()).sum();
    let eta = sxy / sxx;
    let ss: f64 = points.iter().map(|p| (p.1 - eta / p.0.sqrt()).powi(2)).sum();
    let sigma = (ss / (points.len() - 1) as f64 / sxx).sqrt();
    Ok(Estimate { value: eta, sigma })
}

/// Phase sensitivity `η_φ = η_ac/B_ac`.
pub fn eta_phase(eta_ac: f64, b_ac: f64) -> Result<f64> {
    if !(b_ac > 0.0 && b_ac.is_finite()) {
        return Err(Error::invalid("b_ac", format!("must be > 0, got {b_ac}")));
    }
    Ok(eta_ac / b_ac)
}

/// `Σ t_i²·cos²(2πf·t_i + φ)` over one period sampled at `t_i = i/(fN)`,
/// in the large-N closed form `(N/2f²)·{1/3 + sin2φ/4π + 2cos2φ/(4π)²}`.
pub fn frequency_sum(n: usize, f: f64, phi: f64) -> f64 {
    n as f64 / (2.0 * f * f) * frequency_brace(phi)
}

/// The φ-dependent factor in braces of [`frequency_sum`].
pub fn frequency_brace(phi: f64) -> f64 {
    let q = 4.0 * PI;
    1.0 / 3.0 + (2.0 * phi).sin() / q + 2.0 * (2.0 * phi).cos() / (q * q)
}

/// Loose bounds `1/3 ∓ (1/4π + 2/16π²)` on [`frequency_brace`].
pub fn frequency_brace_bounds() -> (f64, f64) {
    let d = 1.0 / (4.0 * PI) + 2.0 / (16.0 * PI * PI);
    (1.0 / 3.0 - d, 1.0 / 3.0 + d)
}

/// Settings for the Monte Carlo frequency-sensitivity scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyScalingConfig {
    pub nv: NvParams,
    pub b_ac: f64,
    pub phi: f64,
    pub tau: f64,
    pub t_overhead: f64,
    pub m_iter: u64,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyScaling {
    /// Power-law exponent of η_f versus f.
    pub exponent: Estimate,
    /// `(f, η_f)` in Hz and Hz/√Hz.
    pub points: Vec<(f64, f64)>,
}

/// Monte Carlo η_f on single-period synchronized records at a fixed delay,
/// then a log-log power-law fit.
pub fn eta_frequency_scaling<E: Executor>(f_grid: &[f64], cfg: &FrequencyScalingConfig, exec: &E) -> Result<FrequencyScaling> {
    if f_grid.len() < 4 {
        return Err(Error::InsufficientData("need at least 4 frequencies".into()));
    }
    let fmin = f_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = f_grid.iter().cloned().fold(0.0, f64::max);
    if fmax < 10.0 * fmin {
        return Err(Error::InsufficientSpan);
    }
    if cfg.reps < 3 {
        return Err(Error::invalid("reps", "need at least 3 repetitions"));
    }
    let mut points = Vec::with_capacity(f_grid.len());
    for (fi, &f) in f_grid.iter().enumerate() {
        let n = (1.0 / (f * (cfg.tau + cfg.t_overhead)) * (1.0 + 1e-12)).floor() as usize;
        let plan = SequencePlan {
            tau: cfg.tau,
            t_overhead: cfg.t_overhead,
            n_points: n,
            n_periods: 1,
            m_iter: cfg.m_iter,
            readout_phases: alloc::vec![0.0],
        };
        plan.validate()?;
        let sm = cfg.nv.signal_model(cfg.tau);
        let truth = FieldModel::Sinusoid {
            b_ac: cfg.b_ac,
            f,
            phi: cfg.phi,
            b_dc: 0.0,
        };
        let template = FitTemplate::all_free(truth.clone());
        let noise = ShotNoise {
            kind: NoiseKind::Gaussian,
            n_ph: cfg.nv.n_ph,
        };
        let master = derive_seed(cfg.seed, fi as u64);
        let fits: Vec<Result<f64>> = exec.map(cfg.reps, |r| {
            let tr = run_qscope(&truth, &sm, &plan, Some(f), noise, derive_seed(master, r as u64))?;
            let fit = fit_trace(&tr, &sm, &template, Some(&truth.params()))?;
            Ok(fit.coef[1])
        });
        let fs: Vec<f64> = fits.into_iter().collect::<Result<_>>()?;
        let eta_f = std_dev(&fs) * plan.measurement_time(f).sqrt();
        points.push((f, eta_f));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (_, slope, sigma) = linear_regression(&lx, &ly);
    Ok(FrequencyScaling {
        exponent: Estimate { value: slope, sigma },
        points,
    })
}

/// Penalty of optimal pulsed ODMR relative to Ramsey dc sensing, `√(2e)`.
pub fn pulsed_odmr_factor() -> f64 {
    (2.0 * core::f64::consts::E).sqrt()
}

/// Caveat attached to pulsed-ODMR comparison figures.
pub const PULSED_ODMR_NOTE: &str =
    "pulsed ODMR estimate is sqrt(2e) times the Ramsey dc sensitivity; it ignores contrast loss from the longer pi pulses";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::plan;
    use proptest::prelude::*;

    fn paper_nv() -> NvParams {
        NvParams { n_ph: 0.02, ..NvParams::default() }
    }

    #[test]
    fn eta_dc_example() {
        let eta = eta_dc_analytic(&paper_nv(), 0.4e-3, 10e-6);
        let a = 0.15 * (-(0.4f64 / 1.05).powi(2)).exp();
        let by_hand = 4.1e-4f64.sqrt() / (a * 1.760859e11 * 0.4e-3 * 0.02f64.sqrt());
        assert!((eta / by_hand - 1.0).abs() < 1e-12);
        assert!((eta - 1.57e-8).abs() < 0.01e-8);
    }

    #[test]
    fn doubling_photons_divides_eta_by_root_two() {
        let a = eta_dc_analytic(&paper_nv(), 0.4e-3, 10e-6);
        let b = eta_dc_analytic(&NvParams { n_ph: 0.04, ..paper_nv() }, 0.4e-3, 10e-6);
        assert!((a / b - SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn short_delay_scaling() {
        let p = NvParams { t2_star: 1.0, ..paper_nv() };
        let a = eta_dc_analytic(&p, 1e-6, 0.0);
        let b = eta_dc_analytic(&p, 4e-6, 0.0);
        assert!((a / b - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ac_dc_ratio_limit_and_sinc_penalty() {
        let p = paper_nv();
        let r = eta_ac_analytic(&p, 1e-6, 0.0, 1e-3) / eta_dc_analytic(&p, 1e-6, 0.0);
        assert!((r - SQRT_2).abs() < 1e-6);
        let tau = 115e-6;
        let x = PI * 2000.0 * tau;
        let r = eta_ac_analytic(&p, tau, 10e-6, 2000.0) / (SQRT_2 * eta_dc_analytic(&p, tau, 10e-6));
        assert!((r - x / x.sin()).abs() < 1e-12);
        // closed-form window integral against quadrature of the centred window
        let m = FieldModel::Sinusoid { b_ac: 1.0, f: 2000.0, phi: 0.0, b_dc: 0.0 };
        let q = m.integrate_numerically(0.25 / 2000.0 - 0.5 * tau, tau).unwrap();
        assert!((omega_ac(1.0, 2000.0, tau) / q - 1.0).abs() < 1e-10);
    }

    #[test]
    fn optimal_delay_landmarks() {
        assert!((optimal_delay(1.2e-3, 2.0, DelayRegime::OverheadNegligible) - 0.6e-3).abs() < 1e-15);
        assert_eq!(optimal_delay(1e-3, 1.0, DelayRegime::OverheadDominant), 1e-3);
    }

    #[test]
    fn optimal_delay_matches_grid_search() {
        for n in [1.0, 2.0, 3.0] {
            let p = NvParams { stretch_n: n, ..paper_nv() };
            for (regime, oh) in [(DelayRegime::OverheadNegligible, 0.0), (DelayRegime::OverheadDominant, 1e3)] {
                let (lo, hi) = (p.t2_star / 100.0, 3.0 * p.t2_star);
                let grid: Vec<f64> = (0..512).map(|i| lo * (hi / lo).powf(i as f64 / 511.0)).collect();
                let best = grid
                    .iter()
                    .cloned()
                    .min_by(|a, b| eta_dc_analytic(&p, *a, oh).total_cmp(&eta_dc_analytic(&p, *b, oh)))
                    .unwrap();
                let step = (hi / lo).powf(1.0 / 511.0);
                let closed = optimal_delay(p.t2_star, n, regime);
                assert!(best / closed < step && closed / best < step, "n={n} {regime:?}: {best} vs {closed}");
            }
        }
    }

    #[test]
    fn engine_reproduces_closed_forms_on_full_periods() {
        let p = paper_nv();
        // 48 windows tile the period exactly
        let f = 1.0 / (48.0 * 4.1e-4);
        let pl = plan(f, 0.4e-3, 4, 10e-6, 1).unwrap();
        assert_eq!(pl.n_points, 48);
        let (dc, ac) = engine_etas(&p, &pl, f, Regime::Linear);
        assert!((dc / eta_dc_analytic(&p, 0.4e-3, 10e-6) - 1.0).abs() < 1e-9);
        assert!((ac / eta_ac_analytic(&p, 0.4e-3, 10e-6, f) - 1.0).abs() < 1e-9);
        // 50 Hz leaves a 0.32 ms gap; the grid is no longer uniform but close
        let pl = plan(50.0, 0.4e-3, 4, 10e-6, 1).unwrap();
        let (dc, ac) = engine_etas(&p, &pl, 50.0, Regime::Linear);
        assert!((ac / dc - SQRT_2).abs() < 2e-3);
    }

    #[test]
    fn dual_phase_engine_costs_root_two() {
        let p = paper_nv();
        let f = 1.0 / (48.0 * 4.1e-4);
        let pl = plan(f, 0.4e-3, 4, 10e-6, 1).unwrap();
        let (_, lin) = engine_etas(&p, &pl, f, Regime::Linear);
        let (_, dual) = engine_etas(&p, &pl, f, Regime::NonlinearDualPhase);
        assert!((dual / lin - SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn uncapped_curve_has_root_two_gap() {
        let p = NvParams { t2_star: 1.2e-3, ..paper_nv() };
        let curve = optimize_curve(&[1.0, 10.0], &p, 0.0, None, 4, Regime::Linear).unwrap();
        for c in curve {
            assert!((c.eta_ac / c.eta_dc / SQRT_2 - 1.0).abs() < 0.01, "{c:?}");
            let t_opt = optimal_delay(1.2e-3, 2.0, DelayRegime::OverheadNegligible);
            assert!((c.tau / t_opt - 1.0).abs() < 0.05, "{c:?}");
        }
    }

    #[test]
    fn capped_curve_turns_up_at_cap_threshold() {
        let p = paper_nv();
        let threshold = 1.0 / (4.0 * (0.4e-3 + 10e-6));
        let f = [0.98 * threshold, 1.02 * threshold, 1000.0, 2000.0];
        let c = optimize_curve(&f, &p, 10e-6, Some(0.4e-3), 4, Regime::Linear).unwrap();
        assert_eq!(c[0].tau, 0.4e-3);
        assert!(c[1].tau < 0.4e-3);
        assert!(c[1].eta_ac < c[2].eta_ac && c[2].eta_ac < c[3].eta_ac);
        assert!(optimize_curve(&[30_000.0], &p, 10e-6, Some(0.4e-3), 4, Regime::Linear).is_err());
    }

    #[test]
    fn series_recovers_exact_eta() {
        let pts: Vec<(f64, f64)> = [1.0, 3.0, 10.0, 30.0, 100.0].iter().map(|&t| (t, 9.4e-9 / f64::sqrt(t))).collect();
        let e = eta_from_uncertainty_series(&pts).unwrap();
        assert!((e.value / 9.4e-9 - 1.0).abs() < 1e-9);
        assert_eq!(eta_from_uncertainty_series(&pts[..2]), Err(Error::InsufficientData("2 points, need at least 3".into())));
        assert_eq!(eta_from_uncertainty_series(&[(1.0, 1.0), (3.0, 0.6), (9.0, 0.3)]).unwrap_err(), Error::InsufficientSpan);
    }

    #[test]
    fn phase_sensitivity() {
        assert!((eta_phase(9e-9, 3e-9).unwrap() - 3.0).abs() < 1e-12);
        assert!((eta_phase(9e-9, 6e-9).unwrap() - 1.5).abs() < 1e-12);
        assert!(eta_phase(9e-9, 0.0).is_err());
    }

    #[test]
    fn frequency_sum_matches_direct_sum() {
        for phi in [0.0, 0.4, 1.3, 2.9] {
            let (n, f) = (200_000, 7.0);
            let direct: f64 = (0..n)
                .map(|i| {
                    let t = i as f64 / (f * n as f64);
                    (t * (TAU * f * t + phi).cos()).powi(2)
                })
                .sum();
            assert!((direct / frequency_sum(n, f, phi) - 1.0).abs() < 1e-4, "phi={phi}");
        }
        // σ_f ∝ 1/√SUM with N ∝ 1/f gives the f^{3/2} law
        let s1 = frequency_sum(1000, 10.0, 0.3);
        let s2 = frequency_sum(100, 100.0, 0.3);
        assert!(((s1 / s2).sqrt() / 10f64.powf(1.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)] // a literal, independent of the library constant
    fn pulsed_odmr() {
        assert!((pulsed_odmr_factor() - 2.3316).abs() < 1e-4);
        assert_eq!(pulsed_odmr_factor(), (2.0 * 2.718281828459045f64).sqrt());
    }

    proptest! {
        #[test]
        fn brace_within_bounds(phi in -10.0f64..10.0) {
            let (lo, hi) = frequency_brace_bounds();
            let v = frequency_brace(phi);
            prop_assert!(v >= lo && v <= hi);
        }

        #[test]
        fn series_is_scale_equivariant(c in 1e-3f64..1e3, noise in proptest::collection::vec(-0.1f64..0.1, 5)) {
            let pts: Vec<(f64, f64)> = [1.0, 3.0, 10.0, 30.0, 100.0].iter().zip(&noise).map(|(&t, e)| (t, (1.0 + e) / f64::sqrt(t))).collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(t, s)| (t, c * s)).collect();
            let a = eta_from_uncertainty_series(&pts).unwrap().value;
            let b = eta_from_uncertainty_series(&scaled).unwrap().value;
            prop_assert!((b / (c * a) - 1.0).abs() < 1e-12);
        }
    }
}
