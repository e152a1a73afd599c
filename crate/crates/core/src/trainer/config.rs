use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibrator::DEFAULT_TAU;
use crate::disentangler::DisentangleConfig;
use crate::encoder::HIDDEN_DIM;
use crate::error::{Error, Result};
use crate::gradcore::Real;
use crate::intervenor::InvarianceConfig;

/// Components that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Drop `ℒ_dis` (and skip the critic).
    NoDis,
    /// Drop `ℒ_inv` (and freeze the generator).
    NoInv,
    /// Drop the target pseudo-label term `ℒ_ta`.
    NoSupTarget,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoSupTarget, Ablation::NoInv, Ablation::NoDis];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoDis => "no_dis",
            Ablation::NoInv => "no_inv",
            Ablation::NoSupTarget => "no_sup_target",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "no_dis" => Ok(Ablation::NoDis),
            "no_inv" => Ok(Ablation::NoInv),
            "no_sup_target" | "no_ta" => Ok(Ablation::NoSupTarget),
            other => Err(Error::config(
                "ablate",
                format!("unknown ablation `{other}` (expected no_dis, no_inv or no_sup_target)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: Real,
    pub eta: Real,
    pub tau: Real,
    pub beta: Real,
    pub lr: Real,
    /// Adam learning rate of the mutual-information critic.
    pub critic_lr: Real,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub adapt_epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub causal_dim: usize,
    pub spurious_dim: usize,
    pub no_dis: bool,
    pub no_inv: bool,
    pub no_sup_target: bool,
    pub symmetric_swap: bool,
    pub stop_grad_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.003,
            eta: 0.1,
            tau: DEFAULT_TAU,
            beta: 0.5,
            lr: 0.001,
            critic_lr: 0.01,
            batch_size: 128,
            warmup_epochs: 100,
            adapt_epochs: 30,
            seed: 0,
            hidden: HIDDEN_DIM,
            causal_dim: 64,
            spurious_dim: 64,
            no_dis: false,
            no_inv: false,
            no_sup_target: false,
            symmetric_swap: false,
            stop_grad_target: false,
        }
    }
}

fn non_negative(key: &str, v: Real) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} must be finite and >= 0")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        non_negative("gamma", self.gamma)?;
        non_negative("eta", self.eta)?;
        non_negative("beta", self.beta)?;
        non_negative("lr", self.lr)?;
        non_negative("critic-lr", self.critic_lr)?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", format!("{} outside (0, 1]", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch-size", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be positive"));
        }
        self.disentangle().validate(self.hidden)
    }

    pub fn with_ablation(mut self, ablation: Option<Ablation>) -> Self {
        match ablation {
            Some(Ablation::NoDis) => self.no_dis = true,
            Some(Ablation::NoInv) => self.no_inv = true,
            Some(Ablation::NoSupTarget) => self.no_sup_target = true,
            None => {}
        }
        self
    }

    pub fn disentangle(&self) -> DisentangleConfig {
        DisentangleConfig {
            beta: self.beta,
            causal_dim: self.causal_dim,
            spurious_dim: self.spurious_dim,
        }
    }

    pub fn invariance(&self) -> InvarianceConfig {
        InvarianceConfig {
            symmetric_swap: self.symmetric_swap,
            stop_grad_target: self.stop_grad_target,
        }
    }
}
