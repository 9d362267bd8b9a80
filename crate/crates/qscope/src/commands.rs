//! The six run recipes. Each writes its tables and reports into a run
//! directory and returns a short summary for the terminal.

use qscope_core::calibration::{
    field_grid, fit_calibration, locate_zero_field, simulate_calibration, simulate_zero_field, CalibrationFit, CalibrationPoint,
    ZeroFieldFit,
};
use qscope_core::field::FieldModel;
use qscope_core::fit::{fit_dual_phase, fit_trace, initial_guess, resolve_wraps, FitResult, FitTemplate};
use qscope_core::montecarlo::{derive_seed, std_dev, Executor};
use qscope_core::nvmodel::{fit_t2star, simulate_fid, DualTransitionModel, NvParams, SignalModel, T2StarFit};
use qscope_core::protocol::{plan, SequencePlan};
use qscope_core::sensitivity::{engine_etas, eta_from_uncertainty_series, Regime};
use qscope_core::simulate::{readout_to_field, run_qscope, ShotNoise, Trace};
use qscope_core::spectral::{fit_lorentzian, scaled_spectrum, LorentzianFit, Window};
use serde::Serialize;

use crate::config::{Analysis, ExperimentConfig, Sweep};
use crate::error::CliError;
use crate::output::{RunDir, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Calibrate,
    Qscope,
    Sensitivity,
    ZeroField,
    Fid,
    Spectral,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Qscope => "qscope",
            Command::Sensitivity => "sensitivity",
            Command::ZeroField => "zero-field",
            Command::Fid => "fid",
            Command::Spectral => "spectral",
        }
    }
}

pub type Summary = Vec<(String, String)>;

pub fn run<E: Executor>(cmd: Command, cfg: &ExperimentConfig, exec: &E, dir: &mut RunDir) -> Result<Summary, CliError> {
    match cmd {
        Command::Calibrate => calibrate(cfg, dir),
        Command::Qscope => qscope(cfg, dir),
        Command::Sensitivity => sensitivity(cfg, exec, dir),
        Command::ZeroField => zero_field(cfg, exec, dir),
        Command::Fid => fid(cfg, dir),
        Command::Spectral => spectral(cfg, dir),
    }
}

fn noise(cfg: &ExperimentConfig) -> ShotNoise {
    ShotNoise {
        kind: cfg.noise,
        n_ph: cfg.nv.n_ph,
    }
}

fn wrong(command: &'static str, expected: &'static str, cfg: &ExperimentConfig) -> CliError {
    CliError::WrongAnalysis {
        command,
        expected,
        found: cfg.analysis.kind(),
    }
}

fn sci(x: f64) -> String {
    format!("{x:.4e}")
}

fn template(model: &FieldModel, fixed: &[String]) -> Result<FitTemplate, CliError> {
    let names = model.param_names();
    if let Some(bad) = fixed.iter().find(|f| !names.contains(f)) {
        return Err(qscope_core::Error::InvalidParameter {
            name: "fixed",
            reason: format!("unknown parameter `{bad}`; this field has {names:?}"),
        }
        .into());
    }
    let fixed: Vec<&str> = fixed.iter().map(String::as_str).collect();
    Ok(FitTemplate::fixing(model.clone(), &fixed))
}

pub fn trace_table(trace: &Trace) -> Table {
    let mut t = Table::new(&["t_seconds", "signal", "sigma1", "readout_phase"]);
    for p in &trace.points {
        t.push(vec![p.t, p.signal, p.sigma1, p.readout_phase]);
    }
    t
}

fn calibration_table(pts: &[CalibrationPoint]) -> Table {
    let mut t = Table::new(&["b_tesla", "signal", "sigma"]);
    for p in pts {
        t.push(vec![p.b, p.signal, p.sigma]);
    }
    t
}

fn sweep_fields(s: &Sweep) -> Result<Vec<f64>, CliError> {
    Ok(field_grid(s.lo, s.hi, s.n)?)
}

fn measurement_time(plan: &SequencePlan, f: Option<f64>) -> f64 {
    match f {
        Some(f) => plan.measurement_time(f),
        None => plan.synchronized_measurement_time(),
    }
}

#[derive(Serialize)]
struct Coefficient {
    name: String,
    value: f64,
    sigma: f64,
    truth: f64,
    free: bool,
    /// `sigma·√T` in the coefficient's unit per √Hz.
    eta: f64,
}

#[derive(Serialize)]
struct FitReport<'a> {
    analysis: &'static str,
    /// Plain time fit on a trace whose initial guess calls for a wrap search.
    wrap_suspected: bool,
    plan: &'a SequencePlan,
    signal_model: &'a SignalModel,
    measurement_time: f64,
    coefficients: Vec<Coefficient>,
    fit: &'a FitResult,
}

fn qscope(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Summary, CliError> {
    let mut plan = cfg.sequence_plan(cfg.plan.m_iter)?;
    let start = match &cfg.analysis {
        Analysis::TimeFit { start, .. } => start.clone().unwrap_or_else(|| cfg.field.clone()),
        Analysis::DualPhase { theta, .. } => {
            plan = plan.with_dual_phase(*theta);
            cfg.field.clone()
        }
        Analysis::WrapSearch { .. } => cfg.field.clone(),
        _ => return Err(wrong("qscope", "time_fit, dual_phase or wrap_search", cfg)),
    };
    let fixed = match &cfg.analysis {
        Analysis::TimeFit { fixed, .. } | Analysis::DualPhase { fixed, .. } | Analysis::WrapSearch { fixed, .. } => fixed,
        _ => unreachable!(),
    };
    let t = template(&start, fixed)?;
    let sm = cfg.nv.signal_model(plan.tau);
    let f = cfg.design_frequency();
    let trace = run_qscope(&cfg.field, &sm, &plan, f, noise(cfg), cfg.seed)?;
    let fit = match &cfg.analysis {
        Analysis::DualPhase { .. } => fit_dual_phase(&trace, &sm, &t)?,
        Analysis::WrapSearch { k_max, .. } => resolve_wraps(&trace, &sm, &t, *k_max)?,
        _ => fit_trace(&trace, &sm, &t, None)?,
    };
    let t_meas = measurement_time(&plan, f);
    let truth = cfg.field.params();
    let coefficients: Vec<Coefficient> = fit
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| Coefficient {
            name: name.clone(),
            value: fit.coef[j],
            sigma: fit.sigma_coef[j],
            truth: truth[j],
            free: fit.free[j],
            eta: fit.sigma_coef[j] * t_meas.sqrt(),
        })
        .collect();

    dir.table("trace", &trace_table(&trace))?;
    dir.json("trace.meta", &trace.meta)?;
    let mut summary: Summary = vec![
        ("points".into(), trace.len().to_string()),
        ("tau".into(), format!("{} s", sci(plan.tau))),
        ("measurement time".into(), format!("{} s", sci(t_meas))),
    ];
    for c in coefficients.iter().filter(|c| c.free) {
        summary.push((c.name.clone(), format!("{} ± {} (truth {})", sci(c.value), sci(c.sigma), sci(c.truth))));
    }
    summary.push(("iterations".into(), fit.iterations.to_string()));
    // a plain fit silently settles on the wrong branch of a wrapped trace
    let wrap_suspected = matches!(cfg.analysis, Analysis::TimeFit { .. })
        && matches!(start, FieldModel::Sinusoid { .. })
        && initial_guess(&trace, &sm, f).needs_wrap_search;
    if wrap_suspected {
        summary.push(("warning".into(), "trace looks wrapped; rerun with analysis wrap_search".into()));
    }
    dir.json(
        "fit",
        &FitReport {
            analysis: cfg.analysis.kind(),
            wrap_suspected,
            plan: &plan,
            signal_model: &sm,
            measurement_time: t_meas,
            coefficients,
            fit: &fit,
        },
    )?;
    Ok(summary)
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    truth: &'a SignalModel,
    fit: &'a CalibrationFit,
    relative_error: [f64; 4],
}

#[derive(Serialize)]
struct ZeroFieldReport<'a> {
    model: &'a DualTransitionModel,
    b_zero_configured: f64,
    fit: &'a ZeroFieldFit,
    /// Located minus configured zero, in units of the reported σ.
    deviation_sigmas: f64,
}

fn calibrate(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Summary, CliError> {
    match &cfg.analysis {
        Analysis::Calibration { sweep } => {
            let sm = cfg.nv.signal_model(cfg.plan.tau_max);
            let fields = sweep_fields(sweep)?;
            let pts = simulate_calibration(&sm, &fields, cfg.plan.m_iter, noise(cfg), cfg.seed)?;
            dir.table("calibration", &calibration_table(&pts))?;
            let fit = fit_calibration(&pts, sm.tau)?;
            let rel = |a: f64, b: f64| (a - b) / b;
            let relative_error = [
                rel(fit.amp_a, sm.amp_a),
                rel(fit.omega_s, sm.omega_s),
                fit.theta - sm.theta,
                rel(fit.offset_o, sm.offset_o),
            ];
            dir.json(
                "calibration_fit",
                &CalibrationReport {
                    truth: &sm,
                    fit: &fit,
                    relative_error,
                },
            )?;
            Ok(vec![
                ("A".into(), format!("{:.5} ± {:.1e} (truth {:.5})", fit.amp_a, fit.sigma[0], sm.amp_a)),
                ("omega_S".into(), format!("{} ± {} rad/(T·s)", sci(fit.omega_s), sci(fit.sigma[1]))),
                ("theta".into(), format!("{:.5} ± {:.1e} rad", fit.theta, fit.sigma[2])),
                ("O_S".into(), format!("{:.5} ± {:.1e}", fit.offset_o, fit.sigma[3])),
            ])
        }
        Analysis::ZeroField { .. } => {
            let (_, summary) = zero_field_calibration(cfg, dir)?;
            Ok(summary)
        }
        _ => Err(wrong("calibrate", "calibration or zero_field", cfg)),
    }
}

/// Dual-transition sweep and zero-field location, shared by `calibrate`
/// and `zero-field`.
fn zero_field_calibration(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(DualTransitionModel, Summary), CliError> {
    let Analysis::ZeroField {
        detuning,
        b_zero,
        sweep,
        readout_axis,
        offset_tau,
        contrast_scale,
        ..
    } = &cfg.analysis
    else {
        unreachable!()
    };
    let nv = NvParams {
        contrast_c0: cfg.nv.contrast_c0 * contrast_scale,
        ..cfg.nv
    };
    let model = DualTransitionModel {
        detuning: *detuning,
        base: nv.signal_model(*offset_tau),
        readout_axis: *readout_axis,
    };
    let fields = sweep_fields(sweep)?;
    let pts = simulate_zero_field(&model, &fields, *b_zero, cfg.plan.m_iter, noise(cfg), cfg.seed)?;
    dir.table("calibration", &calibration_table(&pts))?;
    let fit = locate_zero_field(&pts, model.base.omega_s, model.base.tau)?;
    let deviation_sigmas = if fit.sigma_b_zero > 0.0 {
        (fit.b_zero - b_zero) / fit.sigma_b_zero
    } else {
        0.0
    };
    dir.json(
        "zero_field",
        &ZeroFieldReport {
            model: &model,
            b_zero_configured: *b_zero,
            fit: &fit,
            deviation_sigmas,
        },
    )?;
    let summary = vec![
        ("contrast factor".into(), format!("{:.6}", model.contrast_factor())),
        ("zero field".into(), format!("{} ± {} T (configured {})", sci(fit.b_zero), sci(fit.sigma_b_zero), sci(*b_zero))),
    ];
    Ok((model, summary))
}

#[derive(Serialize)]
struct LowFieldReport {
    offset_field: f64,
    eta_ac_low_field: f64,
    eta_ac_high_field: f64,
    /// Low-field over high-field η.
    ratio: f64,
    reps: usize,
}

/// Monte Carlo η_ac = std(b̂_ac)·√T over `reps` seeded runs.
#[allow(clippy::too_many_arguments)]
fn mc_eta_ac<E: Executor>(
    field: &FieldModel,
    sm: &SignalModel,
    plan: &SequencePlan,
    f: f64,
    noise: ShotNoise,
    reps: usize,
    seed: u64,
    exec: &E,
) -> Result<f64, CliError> {
    let t = FitTemplate::fixing(field.clone(), &["f"]);
    let runs = exec.map(reps, |r| {
        let tr = run_qscope(field, sm, plan, Some(f), noise, derive_seed(seed, r as u64))?;
        fit_trace(&tr, sm, &t, None).map(|fit| fit.coef[0])
    });
    let amps = runs.into_iter().collect::<Result<Vec<f64>, _>>()?;
    Ok(std_dev(&amps) * plan.measurement_time(f).sqrt())
}

fn zero_field<E: Executor>(cfg: &ExperimentConfig, exec: &E, dir: &mut RunDir) -> Result<Summary, CliError> {
    let Analysis::ZeroField {
        offset_field, offset_tau, reps, ..
    } = &cfg.analysis
    else {
        return Err(wrong("zero-field", "zero_field", cfg));
    };
    let FieldModel::Sinusoid { b_ac, f, phi, b_dc } = cfg.field else {
        return Err(qscope_core::Error::InvalidParameter {
            name: "field",
            reason: "the low-field measurement uses a sinusoid field".into(),
        }
        .into());
    };
    let (model, mut summary) = zero_field_calibration(cfg, dir)?;

    let low_sm = model.effective_signal_model()?;
    let low_field = FieldModel::Sinusoid {
        b_ac,
        f,
        phi,
        b_dc: b_dc + offset_field,
    };
    let p = &cfg.plan;
    let low_plan = plan(f, *offset_tau, p.n_min, p.t_overhead, p.m_iter)?;
    let trace = run_qscope(&low_field, &low_sm, &low_plan, Some(f), noise(cfg), cfg.seed)?;
    dir.table("trace", &trace_table(&trace))?;
    let eta_low = mc_eta_ac(&low_field, &low_sm, &low_plan, f, noise(cfg), *reps, derive_seed(cfg.seed, 1), exec)?;

    let high_plan = plan(f, p.tau_max, p.n_min, p.t_overhead, p.m_iter)?;
    let high_sm = cfg.nv.signal_model(high_plan.tau);
    let eta_high = mc_eta_ac(&cfg.field, &high_sm, &high_plan, f, noise(cfg), *reps, derive_seed(cfg.seed, 2), exec)?;
    dir.json(
        "low_field",
        &LowFieldReport {
            offset_field: *offset_field,
            eta_ac_low_field: eta_low,
            eta_ac_high_field: eta_high,
            ratio: eta_low / eta_high,
            reps: *reps,
        },
    )?;
    summary.push(("eta_ac low field".into(), format!("{} T/√Hz", sci(eta_low))));
    summary.push(("eta_ac high field".into(), format!("{} T/√Hz", sci(eta_high))));
    summary.push(("ratio".into(), format!("{:.3}", eta_low / eta_high)));
    Ok(summary)
}

#[derive(Serialize)]
struct EtaRow {
    f: f64,
    eta_ac: f64,
    eta_ac_sigma: f64,
    eta_dc: f64,
    eta_dc_sigma: f64,
}

fn sensitivity<E: Executor>(cfg: &ExperimentConfig, exec: &E, dir: &mut RunDir) -> Result<Summary, CliError> {
    let Analysis::SensitivitySweep {
        f_grid,
        m_iter_schedule,
        reps,
        dual_phase,
    } = &cfg.analysis
    else {
        return Err(wrong("sensitivity", "sensitivity_sweep", cfg));
    };
    let FieldModel::Sinusoid { b_ac, phi, b_dc, .. } = cfg.field else {
        unreachable!("validated")
    };
    let regime = if *dual_phase { Regime::NonlinearDualPhase } else { Regime::Linear };
    let p = &cfg.plan;
    let plan_at = |f: f64, m: u64| -> qscope_core::Result<SequencePlan> {
        let pl = plan(f, p.tau_max, p.n_min, p.t_overhead, m)?;
        Ok(if *dual_phase { pl.with_dual_phase(0.0) } else { pl })
    };

    let mut curve = Table::new(&["f_hz", "eta_dc", "eta_ac", "tau", "n_points"]);
    for &f in f_grid {
        let pl = plan_at(f, p.m_iter)?;
        let (dc, ac) = engine_etas(&cfg.nv, &pl, f, regime);
        curve.push(vec![f, dc, ac, pl.tau, pl.n_points as f64]);
    }
    dir.table("curve", &curve)?;

    // one job per (frequency, iteration count, repetition)
    let (nm, nr) = (m_iter_schedule.len(), *reps);
    let runs = exec.map(f_grid.len() * nm * nr, |k| -> qscope_core::Result<(f64, f64)> {
        let (fi, rest) = (k / (nm * nr), k % (nm * nr));
        let mi = rest / nr;
        let f = f_grid[fi];
        let pl = plan_at(f, m_iter_schedule[mi])?;
        let sm = cfg.nv.signal_model(pl.tau);
        let field = FieldModel::Sinusoid { b_ac, f, phi, b_dc };
        let seed = derive_seed(derive_seed(cfg.seed, fi as u64), rest as u64);
        let tr = run_qscope(&field, &sm, &pl, Some(f), noise(cfg), seed)?;
        let t = FitTemplate::fixing(field, &["f"]);
        let fit = if *dual_phase { fit_dual_phase(&tr, &sm, &t)? } else { fit_trace(&tr, &sm, &t, None)? };
        Ok((fit.coef[0], fit.coef[3]))
    });
    let runs = runs.into_iter().collect::<qscope_core::Result<Vec<_>>>()?;

    let mut series = Table::new(&["f_hz", "m_iter", "measurement_time", "sigma_ac", "sigma_dc"]);
    let mut etas = Table::new(&["f_hz", "eta_ac", "eta_ac_sigma", "eta_dc", "eta_dc_sigma", "eta_ac_engine", "eta_dc_engine"]);
    let mut rows = Vec::new();
    for (fi, &f) in f_grid.iter().enumerate() {
        let mut ac = Vec::new();
        let mut dc = Vec::new();
        for (mi, &m) in m_iter_schedule.iter().enumerate() {
            let chunk = &runs[(fi * nm + mi) * nr..(fi * nm + mi + 1) * nr];
            let a: Vec<f64> = chunk.iter().map(|x| x.0).collect();
            let d: Vec<f64> = chunk.iter().map(|x| x.1).collect();
            let t = plan_at(f, m)?.measurement_time(f);
            let (sa, sd) = (std_dev(&a), std_dev(&d));
            series.push(vec![f, m as f64, t, sa, sd]);
            ac.push((t, sa));
            dc.push((t, sd));
        }
        let ea = eta_from_uncertainty_series(&ac)?;
        let ed = eta_from_uncertainty_series(&dc)?;
        etas.push(vec![f, ea.value, ea.sigma, ed.value, ed.sigma, curve.rows[fi][2], curve.rows[fi][1]]);
        rows.push(EtaRow {
            f,
            eta_ac: ea.value,
            eta_ac_sigma: ea.sigma,
            eta_dc: ed.value,
            eta_dc_sigma: ed.sigma,
        });
    }
    dir.table("series", &series)?;
    dir.table("eta", &etas)?;
    Ok(rows
        .iter()
        .zip(&curve.rows)
        .map(|(r, c)| {
            (
                format!("{:.4} Hz", r.f),
                format!(
                    "eta_ac {} ± {} (engine {}), eta_dc {} (engine {}) T/√Hz",
                    sci(r.eta_ac),
                    sci(r.eta_ac_sigma),
                    sci(c[2]),
                    sci(r.eta_dc),
                    sci(c[1])
                ),
            )
        })
        .collect())
}

#[derive(Serialize)]
struct FidReport<'a> {
    truth_t2_star: f64,
    truth_stretch_n: f64,
    detunings: &'a [f64],
    fit: &'a T2StarFit,
}

fn fid(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Summary, CliError> {
    let Analysis::Fid { delays, detunings, fix_n } = &cfg.analysis else {
        return Err(wrong("fid", "fid", cfg));
    };
    let taus = sweep_fields(delays)?;
    let trace = simulate_fid(&cfg.nv, &taus, detunings, cfg.plan.m_iter, noise(cfg), cfg.seed)?;
    let mut t = Table::new(&["tau_seconds", "signal", "sigma1"]);
    for p in &trace.points {
        t.push(vec![p.t, p.signal, p.sigma1]);
    }
    dir.table("fid", &t)?;
    let fit = fit_t2star(&trace, *fix_n)?;
    dir.json(
        "fid_fit",
        &FidReport {
            truth_t2_star: cfg.nv.t2_star,
            truth_stretch_n: cfg.nv.stretch_n,
            detunings,
            fit: &fit,
        },
    )?;
    let mut s = vec![
        ("T2*".into(), format!("{} ± {} s", sci(fit.t2_star.value), sci(fit.t2_star.sigma))),
        ("n".into(), format!("{:.3} ± {:.3}", fit.stretch_n.value, fit.stretch_n.sigma)),
    ];
    if let Some(d) = fit.detuning {
        s.push(("detuning".into(), format!("{:.1} ± {:.1} Hz", d.value, d.sigma)));
    }
    Ok(s)
}

#[derive(Serialize)]
struct LorentzianReport<'a> {
    window: Window,
    n_samples: usize,
    bin_width: f64,
    clamped_points: usize,
    fit: &'a LorentzianFit,
}

fn spectral(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Summary, CliError> {
    let Analysis::Spectral { window, f_range, cap } = &cfg.analysis else {
        return Err(wrong("spectral", "spectral", cfg));
    };
    let plan = cfg.sequence_plan(cfg.plan.m_iter)?;
    let sm = cfg.nv.signal_model(plan.tau);
    let trace = run_qscope(&cfg.field, &sm, &plan, cfg.design_frequency(), noise(cfg), cfg.seed)?;
    dir.table("trace", &trace_table(&trace))?;
    let series = readout_to_field(&trace, &sm)?;
    let mut ft = Table::new(&["t_seconds", "b_tesla"]);
    for p in &series.points {
        ft.push(vec![p.t, p.b]);
    }
    dir.table("field", &ft)?;
    let spec = scaled_spectrum(&series.points, *window)?;
    let mut st = Table::new(&["f_hz", "magnitude_tesla"]);
    for b in &spec.bins {
        st.push(vec![b.f, b.magnitude]);
    }
    dir.table("spectrum", &st)?;
    let fit = fit_lorentzian(&spec, (f_range[0], f_range[1]), *cap)?;
    let bin_width = if spec.bins.len() > 1 { spec.bins[1].f - spec.bins[0].f } else { 0.0 };
    dir.json(
        "lorentzian",
        &LorentzianReport {
            window: *window,
            n_samples: spec.n_samples,
            bin_width,
            clamped_points: series.clamped,
            fit: &fit,
        },
    )?;
    let mut s = vec![
        ("a".into(), format!("{} ± {} T", sci(fit.a), sci(fit.sigma[0]))),
        ("line width".into(), format!("{:.4} ± {:.4} Hz", fit.gamma_lw, fit.sigma[1])),
        ("f0".into(), format!("{:.4} Hz", fit.f0)),
    ];
    if fit.capped {
        s.push(("note".into(), "amplitude pinned at the cap".into()));
    }
    if fit.single_bin {
        s.push(("note".into(), "peak occupies a single bin; a is a lower bound".into()));
    }
    Ok(s)
}
