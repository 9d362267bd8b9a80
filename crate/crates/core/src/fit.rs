//! Fitting readout traces with the integral-aware signal model
//! `S_i = A·sin(ω·∫_{window i} B dt + θ + ρ_i) + O`.
//!
//! Standard errors follow `σ_j = R·√(C_jj/D)` with `C = (JᵀJ)⁻¹`, `R` the
//! residual norm and `D` the degrees of freedom.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, Matrix3, Vector3};
#[allow(unused_imports)] // unused when std is linked and inherent methods win
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sinc_window, wrap_phase, FieldModel, ParamKind};
use crate::lm::{covariance_against, minimize, LeastSquaresProblem, LmConfig};
use crate::nvmodel::SignalModel;
use crate::simulate::{invert_clamped, FieldPoint, Trace};

/// Largest acceptable condition number of the scaled normal matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Clamped-point fraction above which a trace is treated as wrapped.
pub const WRAP_CLAMP_FRACTION: f64 = 0.10;

/// A field model whose parameter values act as defaults, plus a mask of
/// which parameters the fit may move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTemplate {
    pub model: FieldModel,
    pub free: Vec<bool>,
}

impl FitTemplate {
    pub fn all_free(model: FieldModel) -> Self {
        let n = model.params().len();
        FitTemplate { model, free: vec![true; n] }
    }

    /// All parameters free except those named.
    pub fn fixing(model: FieldModel, fixed: &[&str]) -> Self {
        let free = model.param_names().iter().map(|n| !fixed.contains(&n.as_str())).collect();
        FitTemplate { model, free }
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.free.len() != self.model.params().len() {
            return Err(Error::invalid("free", "mask length differs from the parameter count"));
        }
        if self.n_free() == 0 {
            return Err(Error::invalid("free", "no free parameters"));
        }
        Ok(())
    }

    fn design_f(&self) -> Option<f64> {
        match self.model {
            FieldModel::Sinusoid { f, .. } | FieldModel::Triangular { f, .. } => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Zero for parameters held fixed.
    pub sigma_coef: Vec<f64>,
    pub residual_norm_r: f64,
    /// Full-size; rows and columns of fixed parameters are zero.
    pub covariance_c: Vec<Vec<f64>>,
    pub dof_d: usize,
    pub iterations: usize,
    pub converged: bool,
    pub condition_number: f64,
    pub free: Vec<bool>,
    pub model: FieldModel,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coef[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.sigma_coef[i])
    }

    pub fn covariance(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.covariance_c[self.index(a)?][self.index(b)?])
    }
}

/// Internal scale of each parameter: fringe field for fields, the value
/// itself for frequencies and times, 1 for phases.
pub fn param_scales(model: &FieldModel, sm: &SignalModel) -> Vec<f64> {
    let fringe = sm.fringe_field();
    model
        .param_kinds()
        .iter()
        .zip(model.params())
        .map(|(k, v)| match k {
            ParamKind::Field => fringe,
            ParamKind::Phase => 1.0,
            ParamKind::Frequency | ParamKind::Time | ParamKind::Dimensionless => {
                if v.abs() > 0.0 {
                    v.abs()
                } else {
                    1.0
                }
            }
        })
        .collect()
}

/// `∂/∂c_j ∫_{t0}^{t0+τ} B dt` in closed form for a sinusoid
/// `[b_ac, f, phi, b_dc]`; `None` for other variants.
pub fn window_integral_gradient(model: &FieldModel, t0: f64, tau: f64) -> Option<[f64; 4]> {
    let FieldModel::Sinusoid { b_ac, f, phi, .. } = *model else {
        return None;
    };
    let tc = t0 + 0.5 * tau;
    let um = TAU * f * tc + phi;
    let (s, c) = um.sin_cos();
    let w = sinc_window(f, tau);
    let x = PI * f * tau;
    // dW/df
    let dw = if x.abs() < 1e-6 {
        -tau * x * x / (3.0 * f)
    } else {
        x.cos() * tau / f - x.sin() / (PI * f * f)
    };
    Some([s * w, b_ac * (c * TAU * tc * w + s * dw), b_ac * c * w, tau])
}

fn window_integrals(model: &FieldModel, trace: &Trace, tau: f64, out: &mut [f64]) -> Result<()> {
    for (i, o) in out.iter_mut().enumerate() {
        *o = model.window_integral(trace.window_start(i, tau), tau)?;
    }
    Ok(())
}

/// `∂S_i/∂c_j` for every parameter of `model`: analytic for a sinusoid,
/// central differences with step `1e-6·scale` otherwise.
pub fn jacobian(model: &FieldModel, trace: &Trace, sm: &SignalModel) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..model.params().len()).collect();
    let mut jac = DMatrix::zeros(trace.len(), all.len());
    fill_jacobian(model, trace, sm, &all, &param_scales(model, sm), &mut jac)?;
    Ok(jac)
}

/// Central-difference Jacobian regardless of variant.
pub fn jacobian_numeric(model: &FieldModel, trace: &Trace, sm: &SignalModel) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..model.params().len()).collect();
    let mut jac = DMatrix::zeros(trace.len(), all.len());
    fd_jacobian(model, trace, sm, &all, &param_scales(model, sm), &mut jac)?;
    Ok(jac)
}

fn fill_jacobian(
    model: &FieldModel,
    trace: &Trace,
    sm: &SignalModel,
    cols: &[usize],
    scales: &[f64],
    jac: &mut DMatrix<f64>,
) -> Result<()> {
    if !matches!(model, FieldModel::Sinusoid { .. }) {
        return fd_jacobian(model, trace, sm, cols, scales, jac);
    }
    let tau = sm.tau;
    for (i, p) in trace.points.iter().enumerate() {
        let t0 = trace.window_start(i, tau);
        let integral = model.window_integral(t0, tau)?;
        let slope = sm.slope(integral, p.readout_phase);
        let g = window_integral_gradient(model, t0, tau).expect("sinusoid");
        for (c, &j) in cols.iter().enumerate() {
            jac[(i, c)] = slope * g[j];
        }
    }
    Ok(())
}

fn fd_jacobian(
    model: &FieldModel,
    trace: &Trace,
    sm: &SignalModel,
    cols: &[usize],
    scales: &[f64],
    jac: &mut DMatrix<f64>,
) -> Result<()> {
    let tau = sm.tau;
    let base = model.params();
    let n = trace.len();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for (c, &j) in cols.iter().enumerate() {
        let h = 1e-6 * scales[j];
        let mut p = base.clone();
        p[j] = base[j] + h;
        window_integrals(&model.with_params(&p), trace, tau, &mut hi)?;
        p[j] = base[j] - h;
        window_integrals(&model.with_params(&p), trace, tau, &mut lo)?;
        for (i, pt) in trace.points.iter().enumerate() {
            let s_hi = sm.expected_signal(hi[i], pt.readout_phase);
            let s_lo = sm.expected_signal(lo[i], pt.readout_phase);
            jac[(i, c)] = (s_hi - s_lo) / (2.0 * h);
        }
    }
    Ok(())
}

struct QScopeProblem<'a> {
    trace: &'a Trace,
    sm: &'a SignalModel,
    template: &'a FieldModel,
    base: Vec<f64>,
    free_idx: Vec<usize>,
    scales: Vec<f64>,
}

impl QScopeProblem<'_> {
    fn full(&self, p: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (k, &j) in self.free_idx.iter().enumerate() {
            full[j] = p[k];
        }
        full
    }
}

impl LeastSquaresProblem for QScopeProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.trace.len()
    }

    fn n_params(&self) -> usize {
        self.free_idx.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let model = self.template.with_params(&self.full(p));
        let tau = self.sm.tau;
        for (i, pt) in self.trace.points.iter().enumerate() {
            let integral = model.window_integral(self.trace.window_start(i, tau), tau)?;
            out[i] = self.sm.expected_signal(integral, pt.readout_phase) - pt.signal;
        }
        Ok(())
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        let model = self.template.with_params(&self.full(p));
        fill_jacobian(&model, self.trace, self.sm, &self.free_idx, &self.scales, jac)
    }
}

/// Fits `trace` with the template's free parameters.
///
/// Without `init`, sinusoid templates start from [`initial_guess`] and
/// other variants from the template's own parameter values.
pub fn fit_trace(trace: &Trace, sm: &SignalModel, template: &FitTemplate, init: Option<&[f64]>) -> Result<FitResult> {
    template.validate()?;
    sm.validate()?;
    let n_free = template.n_free();
    if trace.len() <= n_free {
        return Err(Error::DegenerateDof {
            points: trace.len(),
            params: n_free,
        });
    }
    let start = match init {
        Some(p) => {
            if p.len() != template.free.len() {
                return Err(Error::invalid("init", "length differs from the parameter count"));
            }
            p.to_vec()
        }
        None => default_start(trace, sm, template),
    };
    fit_from(trace, sm, template, &start)
}

fn default_start(trace: &Trace, sm: &SignalModel, template: &FitTemplate) -> Vec<f64> {
    let mut start = template.model.params();
    if let FieldModel::Sinusoid { .. } = template.model {
        let f_known = if template.free[1] { trace.meta.f.or(template.design_f()) } else { template.design_f() };
        let guess = initial_guess(trace, sm, f_known);
        for (j, v) in guess.params.iter().enumerate() {
            if template.free[j] {
                start[j] = *v;
            }
        }
    }
    start
}

fn fit_from(trace: &Trace, sm: &SignalModel, template: &FitTemplate, start: &[f64]) -> Result<FitResult> {
    let model0 = template.model.with_params(start);
    let scales_full = param_scales(&model0, sm);
    let free_idx: Vec<usize> = (0..start.len()).filter(|&j| template.free[j]).collect();
    let scales: Vec<f64> = free_idx.iter().map(|&j| scales_full[j]).collect();
    let problem = QScopeProblem {
        trace,
        sm,
        template: &template.model,
        base: start.to_vec(),
        free_idx: free_idx.clone(),
        scales: scales_full.clone(),
    };
    let x0: Vec<f64> = free_idx.iter().map(|&j| start[j]).collect();
    let out = minimize(&problem, &x0, &scales, &LmConfig::default())?;
    // a unit-slope readout gives scaled normal entries of order A²·N
    let reference = sm.amp_a * sm.amp_a * trace.len() as f64;
    let (cov, condition) = covariance_against(&out.jacobian, &scales, reference);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }

    let n = start.len();
    let dof = trace.len() - free_idx.len();
    let r = out.cost.sqrt();
    let mut model = template.model.with_params(&problem.full(&out.params));
    let flipped = model.canonicalize();
    let mut full_cov = vec![vec![0.0; n]; n];
    for (a, &i) in free_idx.iter().enumerate() {
        for (b, &j) in free_idx.iter().enumerate() {
            let sign_i = if flipped.contains(&i) { -1.0 } else { 1.0 };
            let sign_j = if flipped.contains(&j) { -1.0 } else { 1.0 };
            full_cov[i][j] = sign_i * sign_j * cov[(a, b)];
        }
    }
    let sigma_coef = (0..n).map(|j| r * (full_cov[j][j] / dof as f64).sqrt()).collect();
    Ok(FitResult {
        names: model.param_names(),
        coef: model.params(),
        sigma_coef,
        residual_norm_r: r,
        covariance_c: full_cov,
        dof_d: dof,
        iterations: out.iterations,
        converged: out.converged,
        condition_number: condition,
        free: template.free.clone(),
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    /// `[b_ac, f, phi, b_dc]`
    pub params: [f64; 4],
    pub clamp_fraction: f64,
    /// Set when more than 10% of points clamp, or the inverted series
    /// departs from a sinusoid by more than the noise allows; use
    /// [`resolve_wraps`].
    pub needs_wrap_search: bool,
}

/// Sinusoid starting values from the point-wise linear inversion.
pub fn initial_guess(trace: &Trace, sm: &SignalModel, f_known: Option<f64>) -> InitialGuess {
    let (series, clamped) = invert_clamped(trace, sm);
    let clamp_fraction = clamped as f64 / trace.len().max(1) as f64;
    let params = project_sinusoid(&series, sm.tau, f_known);
    // a linear-regime trace inverts to a sinusoid up to the noise level
    let gain = sinc_window(params[1], sm.tau) / sm.tau;
    let rms = (series
        .iter()
        .map(|p| {
            let model = params[3] + params[0] * gain * (TAU * params[1] * p.t + params[2]).sin();
            (p.b - model).powi(2)
        })
        .sum::<f64>()
        / series.len().max(1) as f64)
        .sqrt();
    let sigma1 = trace.points.iter().map(|p| p.sigma1).sum::<f64>() / trace.len().max(1) as f64;
    let sigma_b = sigma1 / (sm.amp_a * sm.omega_s.abs() * sm.tau);
    let inconsistent = rms > 3.0 * sigma_b + 1e-6 * sm.fringe_field();
    InitialGuess {
        params,
        clamp_fraction,
        needs_wrap_search: clamp_fraction > WRAP_CLAMP_FRACTION || inconsistent,
    }
}

/// Least-squares projection of window-averaged fields onto
/// `c + a·sin + b·cos` at frequency `f` (estimated when not given).
fn project_sinusoid(series: &[FieldPoint], tau: f64, f_known: Option<f64>) -> [f64; 4] {
    let f = f_known.unwrap_or_else(|| peak_frequency(series));
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in series {
        let (s, c) = (TAU * f * p.t).sin_cos();
        let row = Vector3::new(s, c, 1.0);
        ata += row * row.transpose();
        atb += row * p.b;
    }
    let sol = ata.try_inverse().map(|m| m * atb).unwrap_or_else(Vector3::zeros);
    // window averaging shrinks the amplitude by W/τ
    let gain = sinc_window(f, tau) / tau;
    let amp = (sol[0] * sol[0] + sol[1] * sol[1]).sqrt() / gain;
    [amp, f, sol[1].atan2(sol[0]), sol[2]]
}

/// Frequency of the largest non-DC periodogram peak on a `1/span` grid.
fn peak_frequency(series: &[FieldPoint]) -> f64 {
    let n = series.len();
    let span = (series[n - 1].t - series[0].t) * n as f64 / (n - 1).max(1) as f64;
    let mean = series.iter().map(|p| p.b).sum::<f64>() / n as f64;
    let mut best = (1.0 / span, -1.0);
    for k in 1..=n / 2 {
        let f = k as f64 / span;
        let (mut re, mut im) = (0.0, 0.0);
        for p in series {
            let (s, c) = (TAU * f * p.t).sin_cos();
            re += (p.b - mean) * c;
            im += (p.b - mean) * s;
        }
        let pw = re * re + im * im;
        if pw > best.1 {
            best = (f, pw);
        }
    }
    best.0
}

fn require_sinusoid(template: &FitTemplate) -> Result<()> {
    if matches!(template.model, FieldModel::Sinusoid { .. }) {
        Ok(())
    } else {
        Err(Error::invalid("template", "wrap search needs a sinusoid template"))
    }
}

/// Multi-start fit across fringe-wrap branches.
///
/// The spin phase of window `i` is `ω·W·(α·sin u_i + β·cos u_i) + c₀` with
/// `α = b_ac·cos φ`, `β = b_ac·sin φ` and `c₀ = ω·τ·b_dc`. A grid over
/// `(α, β)` with amplitudes up to `(k_max + 1)·π/(ω·W)` is scanned with
/// `c₀` solved by linear least squares per cell; the best local minima
/// seed full fits. The dc offset is only defined modulo one fringe field
/// and is reported on the branch nearest zero.
pub fn resolve_wraps(trace: &Trace, sm: &SignalModel, template: &FitTemplate, k_max: usize) -> Result<FitResult> {
    template.validate()?;
    require_sinusoid(template)?;
    if k_max == 0 {
        return Err(Error::invalid("k_max", "must be ≥ 1"));
    }
    let guess = initial_guess(trace, sm, template.design_f());
    let f = guess.params[1];
    let fixed = template.model.params();
    let pick = |j: usize, v: f64| if template.free[j] { v } else { fixed[j] };
    let kw = sm.omega_s * sinc_window(f, sm.tau);
    let unit = PI / kw.abs();
    let fringe = sm.fringe_field();

    let mut starts: Vec<[f64; 4]> = vec![[pick(0, guess.params[0]), pick(1, f), pick(2, guess.params[2]), pick(3, guess.params[3])]];
    for (alpha, beta, c0) in wrap_grid_minima(trace, sm, f, kw, (k_max + 1) as f64 * unit, WRAP_STARTS) {
        let b_ac = (alpha * alpha + beta * beta).sqrt();
        let phi = beta.atan2(alpha);
        let b_dc = c0 / (sm.omega_s * sm.tau);
        starts.push([pick(0, b_ac), pick(1, f), pick(2, phi), pick(3, b_dc)]);
    }
    let rho = single_readout_phase(trace);
    let mirror = template.free[2] && template.free[3];
    let mut results: Vec<FitResult> = Vec::new();
    let mut last_err = None;
    for s in &starts {
        match fit_from(trace, sm, template, s) {
            Ok(mut r) => {
                fold_dc(&mut r, fringe);
                if let (Some(rho), true) = (rho, mirror) {
                    unmirror(&mut r, sm, rho);
                }
                results.push(r);
            }
            Err(e) => last_err = Some(e),
        }
    }
    pick_branch(results, unit, sm, trace.len()).ok_or_else(|| last_err.unwrap_or(Error::FitDiverged { iterations: 0 }))?
}

/// Local minima of the wrap grid that seed full fits.
const WRAP_STARTS: usize = 24;
/// Largest spin-phase error between neighbouring grid cells (rad).
const WRAP_GRID_PHASE: f64 = 0.5;

/// Scans `(α, β)` on a square grid of half-width `bound` and returns the
/// `count` best local minima as `(α, β, c₀)`.
fn wrap_grid_minima(trace: &Trace, sm: &SignalModel, f: f64, kw: f64, bound: f64, count: usize) -> Vec<(f64, f64, f64)> {
    let step = WRAP_GRID_PHASE / kw.abs();
    let half = (bound / step).ceil() as i64;
    let side = (2 * half + 1) as usize;
    let su: Vec<(f64, f64)> = trace.points.iter().map(|p| (TAU * f * p.t).sin_cos()).collect();
    let y: Vec<f64> = trace.points.iter().map(|p| (p.signal - sm.offset_o) / sm.amp_a).collect();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let mut cost = vec![0.0; side * side];
    let mut c0 = vec![0.0; side * side];
    for ia in 0..side {
        let alpha = (ia as i64 - half) as f64 * step;
        for ib in 0..side {
            let beta = (ib as i64 - half) as f64 * step;
            let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ((p, &(s, c)), &v) in trace.points.iter().zip(&su).zip(&y) {
                let x = kw * (alpha * s + beta * c) + sm.theta + p.readout_phase;
                let (sx, cx) = x.sin_cos();
                ss += sx * sx;
                sc += sx * cx;
                cc += cx * cx;
                ys += v * sx;
                yc += v * cx;
            }
            // y ≈ p·sin x + q·cos x = r·sin(x + c₀)
            let det = ss * cc - sc * sc;
            let (p, q) = if det > 1e-12 * (ss * cc) { ((ys * cc - yc * sc) / det, (yc * ss - ys * sc) / det) } else { (ys / ss.max(1e-300), 0.0) };
            cost[ia * side + ib] = yy - p * ys - q * yc;
            c0[ia * side + ib] = q.atan2(p);
        }
    }
    let mut minima: Vec<(f64, usize)> = Vec::new();
    for ia in 0..side {
        for ib in 0..side {
            let here = cost[ia * side + ib];
            let mut is_min = true;
            'nb: for da in -1i64..=1 {
                for db in -1i64..=1 {
                    let (ja, jb) = (ia as i64 + da, ib as i64 + db);
                    if (da, db) == (0, 0) || ja < 0 || jb < 0 || ja >= side as i64 || jb >= side as i64 {
                        continue;
                    }
                    if cost[ja as usize * side + jb as usize] < here {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min {
                minima.push((here, ia * side + ib));
            }
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    minima
        .into_iter()
        .take(count)
        .map(|(_, k)| {
            let (ia, ib) = (k / side, k % side);
            ((ia as i64 - half) as f64 * step, (ib as i64 - half) as f64 * step, c0[k])
        })
        .collect()
}

/// Moves `b_dc` to the fringe branch nearest zero; the signal is unchanged
/// because the phase shifts by a multiple of 2π in every window.
fn fold_dc(r: &mut FitResult, fringe: f64) {
    if let FieldModel::Sinusoid { b_ac, f, phi, b_dc } = r.model {
        let folded = b_dc - (b_dc / fringe).round() * fringe;
        r.model = FieldModel::Sinusoid { b_ac, f, phi, b_dc: folded };
        r.coef[3] = folded;
    }
}

/// With one readout phase, `sin(θ+ρ+ψ) = sin(π−θ−ρ−ψ)`: negating the ac
/// field and moving b_dc to `−b_dc + (π − 2(θ+ρ))/(ωτ)` fits identically.
/// Picks whichever of the pair has the (folded) b_dc nearer zero.
fn unmirror(r: &mut FitResult, sm: &SignalModel, rho: f64) {
    let FieldModel::Sinusoid { b_ac, f, phi, b_dc } = r.model else {
        return;
    };
    let fringe = sm.fringe_field();
    let m = -b_dc + (PI - 2.0 * (sm.theta + rho)) / (sm.omega_s * sm.tau);
    let m = m - (m / fringe).round() * fringe;
    if m.abs() >= b_dc.abs() {
        return;
    }
    let phi = wrap_phase(phi + PI);
    r.model = FieldModel::Sinusoid { b_ac, f, phi, b_dc: m };
    r.coef[2] = phi;
    r.coef[3] = m;
    // the map is diag(1, 1, 1, −1) in parameter space
    for j in 0..4 {
        if j != 3 {
            r.covariance_c[3][j] = -r.covariance_c[3][j];
            r.covariance_c[j][3] = -r.covariance_c[j][3];
        }
    }
}

fn single_readout_phase(trace: &Trace) -> Option<f64> {
    let rho = trace.points.first()?.readout_phase;
    trace
        .points
        .iter()
        .all(|p| wrap_phase(p.readout_phase - rho).abs() < 1e-9)
        .then_some(rho)
}

fn pick_branch(mut results: Vec<FitResult>, unit: f64, sm: &SignalModel, n: usize) -> Option<Result<FitResult>> {
    if results.is_empty() {
        return None;
    }
    results.sort_by(|a, b| a.residual_norm_r.total_cmp(&b.residual_norm_r));
    let best = &results[0];
    let b1 = best.coef[0];
    // residuals at the rounding level are indistinguishable
    let floor = 1e-9 * sm.amp_a * (n as f64).sqrt();
    for other in &results[1..] {
        if other.residual_norm_r > 1.01 * best.residual_norm_r + floor {
            break;
        }
        if (other.coef[0] - b1).abs() > 0.25 * unit {
            return Some(Err(Error::Ambiguous {
                first: b1,
                second: other.coef[0],
            }));
        }
    }
    Some(Ok(results.swap_remove(0)))
}

/// Joint fit of a trace whose readout phase alternates between `ρ` and
/// `ρ + π/2`.
///
/// Consecutive point pairs are combined with `atan2` into an unwrapped
/// spin phase to seed the fit, which removes the fringe ambiguity in the
/// nonlinear regime; if the unwrapping is unreliable the wrap search runs.
pub fn fit_dual_phase(trace: &Trace, sm: &SignalModel, template: &FitTemplate) -> Result<FitResult> {
    template.validate()?;
    let (rho0, rho1) = dual_phases(trace)?;
    if !matches!(template.model, FieldModel::Sinusoid { .. }) {
        return fit_trace(trace, sm, template, None);
    }
    let (series, reliable) = dual_phase_field(trace, sm, rho0, rho1);
    if !reliable {
        return resolve_wraps(trace, sm, template, 10);
    }
    let guess = project_sinusoid(&series, sm.tau, template.design_f());
    let mut start = template.model.params();
    for j in 0..4 {
        if template.free[j] {
            start[j] = guess[j];
        }
    }
    if trace.len() <= template.n_free() {
        return Err(Error::DegenerateDof {
            points: trace.len(),
            params: template.n_free(),
        });
    }
    fit_from(trace, sm, template, &start)
}

/// The two readout phases, ordered so that `rho1 = rho0 + π/2 (mod 2π)`.
fn dual_phases(trace: &Trace) -> Result<(f64, f64)> {
    let mut distinct: Vec<f64> = Vec::new();
    for p in &trace.points {
        if !distinct.iter().any(|d| wrap_phase(d - p.readout_phase).abs() < 1e-9) {
            distinct.push(p.readout_phase);
        }
    }
    if distinct.len() != 2 {
        return Err(Error::invalid("readout_phases", "dual-phase fit needs exactly two readout phases"));
    }
    let d = wrap_phase(distinct[1] - distinct[0]);
    if (d - FRAC_PI_2).abs() < 1e-9 {
        Ok((distinct[0], distinct[1]))
    } else if (d + FRAC_PI_2).abs() < 1e-9 {
        Ok((distinct[1], distinct[0]))
    } else {
        Err(Error::invalid("readout_phases", "the two readout phases must be π/2 apart"))
    }
}

fn dual_phase_field(trace: &Trace, sm: &SignalModel, rho0: f64, _rho1: f64) -> (Vec<FieldPoint>, bool) {
    let mut out = Vec::with_capacity(trace.len() / 2);
    let mut prev: Option<f64> = None;
    let mut reliable = true;
    let pts = &trace.points;
    let mut i = 0;
    while i + 1 < pts.len() {
        let (a, b) = (&pts[i], &pts[i + 1]);
        let (p0, p1) = if wrap_phase(a.readout_phase - rho0).abs() < 1e-9 { (a, b) } else { (b, a) };
        let x0 = (p0.signal - sm.offset_o) / sm.amp_a; // sin(ψ + ρ0)
        let x1 = (p1.signal - sm.offset_o) / sm.amp_a; // cos(ψ + ρ0)
        let mut psi = x0.atan2(x1) - rho0 - sm.theta;
        if let Some(q) = prev {
            let k = ((q - psi) / TAU).round();
            psi += k * TAU;
            if (psi - q).abs() > FRAC_PI_2 {
                reliable = false;
            }
        }
        prev = Some(psi);
        out.push(FieldPoint {
            t: 0.5 * (a.t + b.t),
            b: psi / (sm.omega_s * sm.tau),
        });
        i += 2;
    }
    if out.len() < 4 {
        reliable = false;
    }
    (out, reliable)
}
