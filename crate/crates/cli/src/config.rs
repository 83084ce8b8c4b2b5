//! Run configuration: one TOML file per run, every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surrohmc::forward_model::{DomainBox, HelioParams, OracleConstants, N_PARAMS};
use surrohmc::nn::TrainConfig;
use surrohmc::posterior::{PriorBox, SYNTHETIC_NOISE};
use surrohmc::samplers::ChainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub simulate: SimulateConfig,
    pub context: ContextConfig,
    pub prior: PriorConfig,
    pub chain: ChainConfig,
    pub diagnose: DiagnoseConfig,
}

/// Relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub observed: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "dataset.csv".into(),
            model: "model.srhc".into(),
            observed: "observed.csv".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub p_fail: f64,
    pub domain: DomainBox,
    pub oracle: OracleConstants,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_samples: 100_000,
            seed: 1,
            p_fail: 0.02,
            domain: DomainBox::default(),
            oracle: OracleConstants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// True parameters in input order (alpha, i_hmf, v_sw, k0_par, a_par,
    /// b_par, a_perp, b_perp).
    pub truth: [f64; N_PARAMS],
    pub noise: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            truth: [40.0, 5.0, 450.0, 2.0, 0.8, 1.0, 0.7, 1.2],
            noise: SYNTHETIC_NOISE,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub alpha: f64,
    pub i_hmf: f64,
    pub v_sw: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        let t = SimulateConfig::default().truth;
        ContextConfig {
            alpha: t[0],
            i_hmf: t[1],
            v_sw: t[2],
        }
    }
}

/// Box bounds default to the model's training box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub lower: Option<[f64; 5]>,
    pub upper: Option<[f64; 5]>,
    pub plateau_value: f64,
    /// Decay scale as a fraction of each box width.
    pub decay_fraction: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            lower: None,
            upper: None,
            plateau_value: 1e6,
            decay_fraction: 0.02,
        }
    }
}

impl PriorConfig {
    pub fn build(&self, training_box: &DomainBox) -> PriorBox {
        let from_box = PriorBox::from_domain(training_box);
        let lower = self.lower.unwrap_or(from_box.lower);
        let upper = self.upper.unwrap_or(from_box.upper);
        PriorBox {
            lower,
            upper,
            plateau_log_value: self.plateau_value.ln(),
            decay_scale: std::array::from_fn(|i| self.decay_fraction * (upper[i] - lower[i])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub max_lag: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig { max_lag: 200 }
    }
}

fn field(path: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {why}"))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Range checks on every numeric field; messages name the field.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if d.n_samples < 10 {
            return Err(field("data.n_samples", "must be at least 10"));
        }
        if !(0.0..1.0).contains(&d.p_fail) {
            return Err(field("data.p_fail", "must lie in [0, 1)"));
        }
        d.domain.validate().map_err(|e| field("data.domain", e))?;
        let o = &d.oracle;
        for (name, v) in [
            ("lis_norm", o.lis_norm),
            ("lis_index", o.lis_index),
            ("proton_mass", o.proton_mass),
            ("break_rigidity", o.break_rigidity),
            ("phi0", o.phi0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field(&format!("data.oracle.{name}"), "must be positive and finite"));
            }
        }
        for (name, v) in [("par_weight", o.par_weight), ("perp_weight", o.perp_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(&format!("data.oracle.{name}"), "must be non-negative and finite"));
            }
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.simulate;
        if !(s.noise > 0.0 && s.noise < 1.0) {
            return Err(field("simulate.noise", "must lie in (0, 1)"));
        }
        for (i, v) in s.truth.iter().enumerate() {
            if !v.is_finite() {
                return Err(field(&format!("simulate.truth.{}", HelioParams::NAMES[i]), "must be finite"));
            }
        }
        for (name, v) in [("alpha", self.context.alpha), ("i_hmf", self.context.i_hmf), ("v_sw", self.context.v_sw)] {
            if !v.is_finite() {
                return Err(field(&format!("context.{name}"), "must be finite"));
            }
        }
        let p = &self.prior;
        if !(p.plateau_value > 0.0 && p.plateau_value.is_finite()) {
            return Err(field("prior.plateau_value", "must be positive and finite"));
        }
        if !(p.decay_fraction > 0.0 && p.decay_fraction.is_finite()) {
            return Err(field("prior.decay_fraction", "must be positive and finite"));
        }
        if let (Some(lo), Some(hi)) = (p.lower, p.upper) {
            if let Some(i) = (0..5).find(|&i| lo[i].partial_cmp(&hi[i]) != Some(std::cmp::Ordering::Less)) {
                return Err(field(&format!("prior.lower[{i}]"), "must be below prior.upper"));
            }
        }
        self.chain.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.diagnose.max_lag == 0 {
            return Err(field("diagnose.max_lag", "must be positive"));
        }
        Ok(())
    }
}
