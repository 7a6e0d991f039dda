//! Experiment configuration: plain serde data, parsed by the CLI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expr::Expr;
use crate::mechanism::{Criticality, Density, Kind, LevyTriple, Mechanism};
use crate::verify;

pub const DEFAULT_N: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 0xC5BF;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// c·r^{−p}
    Power { c: f64, p: f64 },
    /// c·e^{−r}·r^{−p}
    ExpPower { c: f64, p: f64 },
    /// arithmetic in `r`
    Expr { expr: String },
}

/// `pi = "2*r^-2"` is shorthand for `pi = { kind = "expr", expr = "2*r^-2" }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PiSpec {
    Expr(String),
    Table(DensitySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismSpec {
    Neveu,
    LogShift,
    FellerLogistic,
    StableExplosive { alpha: f64 },
    StableSubcritical { alpha: f64 },
    FiniteVarDelta { d: f64 },
    Triple {
        sigma: f64,
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pi: Option<PiSpec>,
    },
}

fn prefixed(e: Error) -> Error {
    match e {
        Error::Validation { field, reason } => invalid(&format!("mechanism.{field}"), reason),
        other => invalid("mechanism", other.to_string()),
    }
}

impl MechanismSpec {
    pub fn build(&self) -> Result<Mechanism> {
        let m = match self {
            MechanismSpec::Neveu => Ok(Mechanism::neveu()),
            MechanismSpec::LogShift => Ok(Mechanism::log_shift()),
            MechanismSpec::FellerLogistic => Ok(Mechanism::feller_logistic()),
            MechanismSpec::StableExplosive { alpha } => Mechanism::stable_explosive(*alpha),
            MechanismSpec::StableSubcritical { alpha } => Mechanism::stable_subcritical(*alpha),
            MechanismSpec::FiniteVarDelta { d } => Mechanism::finite_var_delta(*d),
            MechanismSpec::Triple { sigma, gamma, pi } => {
                let density = match pi {
                    None => Density::Power { c: 0.0, p: 0.0 },
                    Some(PiSpec::Table(DensitySpec::Power { c, p })) => Density::Power { c: *c, p: *p },
                    Some(PiSpec::Table(DensitySpec::ExpPower { c, p })) => Density::ExpPower { c: *c, p: *p },
                    Some(PiSpec::Expr(expr) | PiSpec::Table(DensitySpec::Expr { expr })) => Density::Expr(Expr::parse(expr)?),
                };
                Mechanism::triple(LevyTriple::new(*sigma, *gamma, density))
            }
        };
        m.map_err(prefixed)
    }

    pub fn from_kind(kind: Kind) -> Self {
        match kind {
            Kind::Neveu => MechanismSpec::Neveu,
            Kind::LogShift => MechanismSpec::LogShift,
            Kind::FellerLogistic => MechanismSpec::FellerLogistic,
            Kind::StableExplosive { alpha } => MechanismSpec::StableExplosive { alpha },
            Kind::StableSubcritical { alpha } => MechanismSpec::StableSubcritical { alpha },
            Kind::FiniteVarDelta { d } => MechanismSpec::FiniteVarDelta { d },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeSpec {
    Supercritical,
    Subcritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// replicas; defaults per experiment (1e5 for most)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    /// final time t
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    /// small-jump cutoff ε
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// flow threshold time s
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub super_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        ExperimentConfig {
            experiment: experiment.to_string(),
            n: None,
            seed: DEFAULT_SEED,
            mechanism: None,
            regime: None,
            lambda0: None,
            horizon: None,
            grid: None,
            x_max: None,
            epsilon: None,
            s_threshold: None,
            z_floor: None,
            super_ratio: None,
            out: None,
        }
    }

    /// Fills experiment-specific defaults left unset.
    pub fn with_defaults(mut self) -> Self {
        if self.n.is_none() {
            self.n = Some(verify::default_replicas(&self.experiment));
        }
        if self.horizon.is_none() {
            self.horizon = verify::default_horizon(&self.experiment);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !verify::EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(Error::UnknownExperiment(self.experiment.clone()));
        }
        if self.n.is_some_and(|n| n < 10) {
            return Err(invalid("n", "need at least 10 replicas"));
        }
        let positive = |field: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(invalid(field, format!("{x} must be positive and finite"))),
            _ => Ok(()),
        };
        positive("horizon", self.horizon)?;
        positive("x_max", self.x_max)?;
        positive("epsilon", self.epsilon)?;
        positive("s_threshold", self.s_threshold)?;
        positive("super_ratio", self.super_ratio)?;
        positive("lambda0", self.lambda0)?;
        if let Some(z) = self.z_floor {
            if !z.is_finite() {
                return Err(invalid("z_floor", "must be finite"));
            }
        }
        if let Some(g) = &self.grid {
            if g.is_empty() || g[0] < 0.0 || g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|t| !t.is_finite()) {
                return Err(invalid("grid", "must be nonempty, finite, ≥ 0 and strictly increasing"));
            }
        }
        if let Some(spec) = &self.mechanism {
            let mech = spec.build()?;
            if let Some(r) = self.regime {
                let sup = mech.classify().criticality == Criticality::Supercritical;
                if sup != (r == RegimeSpec::Supercritical) {
                    return Err(invalid("regime", format!("{r:?} does not match the mechanism")));
                }
            }
        }
        Ok(())
    }
}
