//! JSON experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::{fit_step, step_bound, DEFAULT_TARGET_ERROR};
use crate::error::{Error, Result};
use crate::estimate::DEFAULT_ODE_STEP;
use crate::likelihood::{LikelihoodKind, DEFAULT_FISHER_FLOOR};
use crate::mc::{DeltaCoupling, McConfig};
use crate::model::{ModelOptions, ModelRegistry, ModelSpec, Regime, ScaleParams, ThetaDomain};
use crate::torus::{TorusGrid, DEFAULT_GRID_POINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub name: String,
    #[serde(default)]
    pub options: ModelOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleBlock {
    pub epsilon: f64,
    pub delta: f64,
    /// 1, 2 or 3.
    pub regime: u8,
    /// Regime 2 only; defaults to `epsilon / delta`.
    #[serde(default)]
    pub gamma: Option<f64>,
}

/// A single value or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Exact,
    Pseudo,
}

impl From<KindName> for LikelihoodKind {
    fn from(k: KindName) -> Self {
        match k {
            KindName::Exact => LikelihoodKind::Exact,
            KindName::Pseudo => LikelihoodKind::Pseudo,
        }
    }
}

fn default_x0() -> f64 {
    1.0
}
fn default_horizon() -> f64 {
    1.0
}
fn default_target_error() -> f64 {
    DEFAULT_TARGET_ERROR
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_ode_step() -> f64 {
    DEFAULT_ODE_STEP
}
fn default_fisher_floor() -> f64 {
    DEFAULT_FISHER_FLOOR
}
fn default_directory() -> PathBuf {
    PathBuf::from(".")
}
fn default_stride() -> usize {
    1
}
fn default_bins() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub theta_true: Option<OneOrMany>,
    /// Overrides the model's parameter interval.
    #[serde(default)]
    pub theta_domain: Option<[f64; 2]>,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    /// Euler step; derived from `target_error` when absent.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "default_target_error")]
    pub target_error: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "M", default)]
    pub replications: Option<usize>,
    /// Likelihood to maximize; defaults to pseudo with a fast drift, exact
    /// otherwise.
    #[serde(default)]
    pub kind: Option<KindName>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_ode_step")]
    pub ode_step: f64,
    #[serde(default = "default_fisher_floor")]
    pub fisher_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            stride: default_stride(),
            bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    #[serde(default = "one")]
    pub scale: f64,
    pub power: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub epsilons: Vec<f64>,
    pub coupling: CouplingBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub scale: ScaleBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        positive("scale.epsilon", self.scale.epsilon)?;
        positive("scale.delta", self.scale.delta)?;
        if !(1..=3).contains(&self.scale.regime) {
            return Err(Error::config("scale.regime", format!("must be 1, 2 or 3, got {}", self.scale.regime)));
        }
        if let Some(g) = self.scale.gamma {
            positive("scale.gamma", g)?;
        }
        positive("run.T", self.run.horizon)?;
        positive("run.target_error", self.run.target_error)?;
        positive("run.ode_step", self.run.ode_step)?;
        if let Some(step) = self.run.step {
            positive("run.step", step)?;
        }
        if !self.run.x0.is_finite() {
            return Err(Error::config("run.x0", "must be finite"));
        }
        if let Some(t) = &self.run.theta_true {
            let v = t.values();
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("run.theta_true", "needs at least one finite value"));
            }
        }
        if let Some(m) = self.run.replications {
            if m < 2 {
                return Err(Error::config("run.M", format!("needs at least 2 replications, got {m}")));
            }
        }
        if self.output.stride == 0 {
            return Err(Error::config("output.stride", "must be positive"));
        }
        if self.output.bins == 0 {
            return Err(Error::config("output.bins", "must be positive"));
        }
        if let Some(s) = &self.sweep {
            if s.epsilons.is_empty() {
                return Err(Error::config("sweep.epsilons", "must not be empty"));
            }
            for e in &s.epsilons {
                positive("sweep.epsilons", *e)?;
            }
            positive("sweep.coupling.scale", s.coupling.scale)?;
        }
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        match self.scale.regime {
            1 => Regime::Regime1,
            2 => Regime::Regime2 {
                gamma: self.scale.gamma.unwrap_or(self.scale.epsilon / self.scale.delta),
            },
            _ => Regime::Regime3,
        }
    }

    pub fn scale_params(&self) -> Result<ScaleParams> {
        ScaleParams::new(self.scale.epsilon, self.scale.delta, self.regime())
    }

    pub fn model_spec(&self, registry: &ModelRegistry) -> Result<ModelSpec> {
        let model = registry.build(&self.model.name, &self.model.options)?;
        match self.run.theta_domain {
            Some([lo, hi]) => Ok(model.with_theta_domain(
                ThetaDomain::new(lo, hi).map_err(|e| Error::config("run.theta_domain", e.to_string()))?,
            )),
            None => Ok(model),
        }
    }

    pub fn grid(&self, model: &ModelSpec) -> Result<TorusGrid> {
        TorusGrid::new(self.run.grid_points, model.period)
            .map_err(|e| Error::config("run.grid_points", e.to_string()))
    }

    pub fn theta_true(&self) -> Result<Vec<f64>> {
        self.run
            .theta_true
            .as_ref()
            .map(OneOrMany::values)
            .ok_or_else(|| Error::config("run.theta_true", "required for this command"))
    }

    /// The single true parameter, if one is given.
    pub fn single_theta_true(&self) -> Result<Option<f64>> {
        match &self.run.theta_true {
            None => Ok(None),
            Some(t) => match t.values().as_slice() {
                [v] => Ok(Some(*v)),
                _ => Err(Error::config("run.theta_true", "expected a single value for this command")),
            },
        }
    }

    pub fn kind(&self, model: &ModelSpec) -> LikelihoodKind {
        match self.run.kind {
            Some(k) => k.into(),
            None if model.fast_drift_vanishes() => LikelihoodKind::Exact,
            None => LikelihoodKind::Pseudo,
        }
    }

    /// Step used for simulation, with the bound it is checked against.
    pub fn effective_step(&self, scale: &ScaleParams) -> (f64, f64) {
        let bound = step_bound(scale, self.run.target_error);
        let step = self.run.step.unwrap_or_else(|| fit_step(self.run.horizon, bound));
        (step, bound)
    }

    pub fn coupling(&self) -> Result<DeltaCoupling> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::config("sweep", "required for the sweep command"))?;
        Ok(DeltaCoupling {
            scale: s.coupling.scale,
            power: s.coupling.power,
        })
    }

    pub fn mc_config(&self, model: &ModelSpec, theta0: f64, allow_coarse_step: bool) -> Result<McConfig> {
        let mut cfg = McConfig::new(model.clone(), theta0, self.run.seed);
        cfg.x0 = self.run.x0;
        cfg.horizon = self.run.horizon;
        cfg.step = self.run.step;
        cfg.target_error = self.run.target_error;
        cfg.allow_coarse_step = allow_coarse_step;
        cfg.store_stride = self.output.stride;
        cfg.kind = self.kind(model);
        cfg.grid = self.grid(model)?;
        cfg.ode_step = self.run.ode_step;
        cfg.fisher_floor = self.run.fisher_floor;
        Ok(cfg)
    }
}
