//! Experiment configuration: one JSON document per run.

use std::path::Path;

use qscope_core::field::FieldModel;
use qscope_core::nvmodel::{NvParams, ReadoutAxis};
use qscope_core::protocol::{plan, SequencePlan};
use qscope_core::simulate::NoiseKind;
use qscope_core::spectral::Window;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub nv: NvParams,
    pub field: FieldModel,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
    pub analysis: Analysis,
    #[serde(default)]
    pub seed: u64,
    /// Run directory; relative paths resolve against the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// Design frequency (Hz); defaults to the field's own frequency.
    #[serde(default)]
    pub f: Option<f64>,
    /// Triggered acquisition of `record` seconds instead of period tiling.
    #[serde(default)]
    pub synchronized: bool,
    #[serde(default)]
    pub record: Option<f64>,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_overhead")]
    pub t_overhead: f64,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    /// Fixed points per period, overriding the floor rule.
    #[serde(default)]
    pub n_points: Option<usize>,
    #[serde(default = "default_m_iter")]
    pub m_iter: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            f: None,
            synchronized: false,
            record: None,
            tau_max: default_tau_max(),
            t_overhead: default_overhead(),
            n_min: default_n_min(),
            n_points: None,
            m_iter: default_m_iter(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Analysis {
    TimeFit {
        #[serde(default = "default_fixed")]
        fixed: Vec<String>,
        /// Starting model for non-sinusoid fits; defaults to the generating field.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<FieldModel>,
    },
    DualPhase {
        #[serde(default)]
        theta: f64,
        #[serde(default = "default_fixed")]
        fixed: Vec<String>,
    },
    WrapSearch {
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default = "default_fixed")]
        fixed: Vec<String>,
    },
    Spectral {
        #[serde(default = "default_window")]
        window: Window,
        f_range: [f64; 2],
        #[serde(default = "default_true")]
        cap: bool,
    },
    SensitivitySweep {
        f_grid: Vec<f64>,
        m_iter_schedule: Vec<u64>,
        #[serde(default = "default_reps")]
        reps: usize,
        #[serde(default)]
        dual_phase: bool,
    },
    ZeroField {
        #[serde(default)]
        detuning: f64,
        #[serde(default)]
        b_zero: f64,
        sweep: Sweep,
        #[serde(default = "default_axis")]
        readout_axis: ReadoutAxis,
        /// Background field of the follow-up measurement (T).
        #[serde(default = "default_offset_field")]
        offset_field: f64,
        #[serde(default = "default_offset_tau")]
        offset_tau: f64,
        /// Contrast of the single-tone drive relative to the configured one.
        #[serde(default = "default_contrast_scale")]
        contrast_scale: f64,
        #[serde(default = "default_reps")]
        reps: usize,
    },
    Calibration {
        sweep: Sweep,
    },
    Fid {
        delays: Sweep,
        #[serde(default = "default_detunings")]
        detunings: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fix_n: Option<f64>,
    },
}

impl Analysis {
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::TimeFit { .. } => "time_fit",
            Analysis::DualPhase { .. } => "dual_phase",
            Analysis::WrapSearch { .. } => "wrap_search",
            Analysis::Spectral { .. } => "spectral",
            Analysis::SensitivitySweep { .. } => "sensitivity_sweep",
            Analysis::ZeroField { .. } => "zero_field",
            Analysis::Calibration { .. } => "calibration",
            Analysis::Fid { .. } => "fid",
        }
    }
}

fn default_noise() -> NoiseKind {
    NoiseKind::Gaussian
}
fn default_tau_max() -> f64 {
    0.4e-3
}
fn default_overhead() -> f64 {
    10e-6
}
fn default_n_min() -> usize {
    4
}
fn default_m_iter() -> u64 {
    10_000
}
fn default_fixed() -> Vec<String> {
    vec!["f".into()]
}
fn default_k_max() -> usize {
    10
}
fn default_window() -> Window {
    Window::Hann
}
fn default_true() -> bool {
    true
}
fn default_reps() -> usize {
    64
}
fn default_axis() -> ReadoutAxis {
    ReadoutAxis::SameAxis
}
fn default_offset_field() -> f64 {
    30e-9
}
fn default_offset_tau() -> f64 {
    0.2e-3
}
fn default_contrast_scale() -> f64 {
    2.0 / 3.0
}
fn default_detunings() -> Vec<f64> {
    vec![0.0]
}

/// Frequency that one period of `field` spans.
pub fn field_frequency(field: &FieldModel) -> Option<f64> {
    match field {
        FieldModel::Sinusoid { f, .. } | FieldModel::Triangular { f, .. } => Some(*f),
        _ => field.period().ok().map(|p| 1.0 / p),
    }
}

impl ExperimentConfig {
    /// Parses a config, or the `config` member of a run manifest.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::parse(origin, e))?;
        let cfg: ExperimentConfig = match value.get("config") {
            Some(inner) if value.get("tool").is_some() => {
                serde_json::from_value(inner.clone()).map_err(|e| CliError::parse(origin, e))?
            }
            _ => serde_json::from_str(text).map_err(|e| CliError::parse(origin, e))?,
        };
        cfg.validate().map_err(|e| CliError::validation(origin, text, e))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> qscope_core::Result<()> {
        use qscope_core::Error;
        self.nv.validate()?;
        self.field.validate()?;
        let p = &self.plan;
        if p.synchronized && p.record.is_none() {
            return Err(Error::InvalidParameter {
                name: "record",
                reason: "synchronized plans need a record length".into(),
            });
        }
        if p.m_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "m_iter",
                reason: "must be ≥ 1".into(),
            });
        }
        if !p.synchronized && p.f.or(field_frequency(&self.field)).is_none() {
            return Err(Error::InvalidParameter {
                name: "f",
                reason: "field has no period; give plan.f".into(),
            });
        }
        match &self.analysis {
            Analysis::SensitivitySweep { f_grid, m_iter_schedule, reps, .. } => {
                if f_grid.is_empty() || f_grid.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
                    return Err(Error::InvalidParameter {
                        name: "f_grid",
                        reason: "needs positive frequencies".into(),
                    });
                }
                if m_iter_schedule.len() < 3 || m_iter_schedule.contains(&0) {
                    return Err(Error::InvalidParameter {
                        name: "m_iter_schedule",
                        reason: "needs at least three positive entries".into(),
                    });
                }
                if *reps < 2 {
                    return Err(Error::InvalidParameter {
                        name: "reps",
                        reason: "needs at least two repetitions".into(),
                    });
                }
                if !matches!(self.field, FieldModel::Sinusoid { .. }) {
                    return Err(Error::InvalidParameter {
                        name: "field",
                        reason: "sensitivity sweeps use a sinusoid field".into(),
                    });
                }
            }
            Analysis::ZeroField { contrast_scale, reps, .. } => {
                if !(*contrast_scale > 0.0 && *contrast_scale <= 1.0) {
                    return Err(Error::InvalidParameter {
                        name: "contrast_scale",
                        reason: "must be in (0, 1]".into(),
                    });
                }
                if *reps < 2 {
                    return Err(Error::InvalidParameter {
                        name: "reps",
                        reason: "needs at least two repetitions".into(),
                    });
                }
            }
            Analysis::Spectral { f_range, .. } if !(f_range[0] < f_range[1]) => {
                return Err(Error::InvalidParameter {
                    name: "f_range",
                    reason: "lower edge must be below the upper edge".into(),
                });
            }
            _ => {}
        }
        Ok(())
    }

    /// Design frequency for periodic plans; `None` when synchronized.
    pub fn design_frequency(&self) -> Option<f64> {
        if self.plan.synchronized {
            None
        } else {
            self.plan.f.or(field_frequency(&self.field))
        }
    }

    /// Acquisition plan at the configured iteration count.
    pub fn sequence_plan(&self, m_iter: u64) -> qscope_core::Result<SequencePlan> {
        let p = &self.plan;
        match self.design_frequency() {
            None => SequencePlan::synchronized(p.record.unwrap_or(0.0), p.tau_max, p.t_overhead, m_iter),
            Some(f) => match p.n_points {
                Some(n) => SequencePlan::for_points(f, n, p.t_overhead, Some(p.tau_max), m_iter),
                None => plan(f, p.tau_max, p.n_min, p.t_overhead, m_iter),
            },
        }
    }
}
