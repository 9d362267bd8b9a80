use core::f64::consts::PI;

use qscope_core::field::FieldModel;
use qscope_core::fit::{fit_dual_phase, fit_trace, FitTemplate};
use qscope_core::montecarlo::{derive_seed, mean, std_dev};
use qscope_core::nvmodel::NvParams;
use qscope_core::protocol::SequencePlan;
use qscope_core::simulate::{run_qscope, NoiseKind, ShotNoise};

const NT: f64 = 1e-9;
const NOISE: ShotNoise = ShotNoise { kind: NoiseKind::Gaussian, n_ph: 0.1 };

fn truth() -> FieldModel {
    FieldModel::Sinusoid { b_ac: 3.1 * NT, f: 50.0, phi: 0.8, b_dc: 1.2 * NT }
}

#[test]
fn reported_sigmas_match_monte_carlo_spread() {
    // a free frequency needs a few σ of amplitude per point, else f drifts to 0
    let p = SequencePlan::for_points(50.0, 48, 10e-6, Some(0.4e-3), 1_000_000).unwrap();
    let sm = NvParams::default().signal_model(p.tau);
    let template = FitTemplate::all_free(FieldModel::Sinusoid { b_ac: NT, f: 50.0, phi: 0.0, b_dc: 0.0 });
    let reps = 600;
    let mut coef = vec![Vec::new(); 4];
    let mut sigma = vec![Vec::new(); 4];
    for r in 0..reps {
        let tr = run_qscope(&truth(), &sm, &p, Some(50.0), NOISE, derive_seed(2024, r as u64)).unwrap();
        let fit = fit_trace(&tr, &sm, &template, None).unwrap();
        for j in 0..4 {
            coef[j].push(fit.coef[j]);
            sigma[j].push(fit.sigma_coef[j]);
        }
    }
    for j in 0..4 {
        let (emp, rep) = (std_dev(&coef[j]), mean(&sigma[j]));
        assert!((emp / rep - 1.0).abs() < 0.10, "coefficient {j}: empirical {emp} vs reported {rep}");
    }
}

#[test]
fn ac_and_dc_decouple_over_a_full_period() {
    // 48 slots of 0.41 ms tile the period exactly
    let f = 1.0 / (48.0 * 0.41e-3);
    let p = SequencePlan::for_points(f, 48, 10e-6, Some(0.4e-3), 10_000).unwrap();
    let sm = NvParams::default().signal_model(p.tau);
    let truth = FieldModel::Sinusoid { b_ac: 1.0 * NT, f, phi: 0.8, b_dc: 0.2 * NT };
    let template = FitTemplate::fixing(FieldModel::Sinusoid { b_ac: NT, f, phi: 0.0, b_dc: 0.0 }, &["f"]);
    for seed in 0..20 {
        let tr = run_qscope(&truth, &sm, &p, Some(f), NOISE, seed).unwrap();
        let fit = fit_trace(&tr, &sm, &template, None).unwrap();
        let c = fit.covariance("b_ac", "b_dc").unwrap();
        let g = (fit.covariance("b_ac", "b_ac").unwrap() * fit.covariance("b_dc", "b_dc").unwrap()).sqrt();
        assert!(c.abs() < 0.05 * g, "seed {seed}: {c} vs {g}");
    }
}

#[test]
fn dual_phase_sigma_is_independent_of_the_base_phase() {
    let base = SequencePlan::for_points(50.0, 48, 10e-6, Some(0.4e-3), 10_000).unwrap();
    let sm = NvParams::default().signal_model(base.tau);
    let template = FitTemplate::fixing(FieldModel::Sinusoid { b_ac: NT, f: 50.0, phi: 0.0, b_dc: 0.0 }, &["f"]);
    let seeds = 40;
    let mut per_theta = Vec::new();
    for k in 0..8 {
        let theta = 2.0 * PI * k as f64 / 8.0;
        let p = base.clone().with_dual_phase(theta);
        let s: Vec<f64> = (0..seeds)
            .map(|r| {
                let tr = run_qscope(&truth(), &sm, &p, Some(50.0), NOISE, derive_seed(7, r)).unwrap();
                fit_dual_phase(&tr, &sm, &template).unwrap().sigma("b_ac").unwrap()
            })
            .collect();
        per_theta.push(mean(&s));
    }
    let lo = per_theta.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = per_theta.iter().cloned().fold(0.0, f64::max);
    assert!(hi / lo - 1.0 < 0.05, "{per_theta:?}");
}
