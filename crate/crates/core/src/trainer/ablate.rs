use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Ablation, TrainConfig};
use super::eval::evaluate;
use super::train::{adapt, warmup};
use crate::error::{Error, Result};
use crate::gradcore::Real;
use crate::graphdata::Dataset;

/// Target accuracies of one seed's runs. Every adaptation variant starts from
/// the same warmed-up model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub source_only: Real,
    pub full: Real,
    pub no_sup_target: Real,
    pub no_inv: Real,
    pub no_dis: Real,
}

impl AblationRow {
    pub fn get(&self, ablation: Option<Ablation>) -> Real {
        match ablation {
            None => self.full,
            Some(Ablation::NoSupTarget) => self.no_sup_target,
            Some(Ablation::NoInv) => self.no_inv,
            Some(Ablation::NoDis) => self.no_dis,
        }
    }

    fn set(&mut self, ablation: Option<Ablation>, v: Real) {
        match ablation {
            None => self.full = v,
            Some(Ablation::NoSupTarget) => self.no_sup_target = v,
            Some(Ablation::NoInv) => self.no_inv = v,
            Some(Ablation::NoDis) => self.no_dis = v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Column means; `seed` is meaningless here and set to 0.
    pub fn mean(&self) -> AblationRow {
        let n = self.rows.len().max(1) as Real;
        let avg = |f: fn(&AblationRow) -> Real| self.rows.iter().map(f).sum::<Real>() / n;
        AblationRow {
            seed: 0,
            source_only: avg(|r| r.source_only),
            full: avg(|r| r.full),
            no_sup_target: avg(|r| r.no_sup_target),
            no_inv: avg(|r| r.no_inv),
            no_dis: avg(|r| r.no_dis),
        }
    }

    /// Seeds where the full run beats `ablation` strictly.
    pub fn full_wins(&self, ablation: Ablation) -> usize {
        self.rows.iter().filter(|r| r.full > r.get(Some(ablation))).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,source_only,full,no_sup_target,no_inv,no_dis\n");
        let line = |out: &mut String, seed: &str, r: &AblationRow| {
            let _ = writeln!(
                out,
                "{seed},{},{},{},{},{}",
                r.source_only, r.full, r.no_sup_target, r.no_inv, r.no_dis
            );
        };
        for r in &self.rows {
            line(&mut out, &r.seed.to_string(), r);
        }
        line(&mut out, "mean", &self.mean());
        out
    }
}

/// Warm-up once with `cfg.seed`, then the full adaptation and each single
/// ablation from copies of the warmed-up model.
pub fn ablate_seed(source: &Dataset, target: &Dataset, cfg: &TrainConfig) -> Result<AblationRow> {
    if !target.is_labelled() {
        return Err(Error::InvalidInput(format!(
            "ablation needs target labels for scoring; `{}` has none",
            target.name
        )));
    }
    let base = TrainConfig { no_dis: false, no_inv: false, no_sup_target: false, ..cfg.clone() };
    let (warm, _) = warmup(source, &base)?;
    let mut row = AblationRow {
        seed: cfg.seed,
        source_only: evaluate(target, &warm)?.accuracy,
        full: 0.0,
        no_sup_target: 0.0,
        no_inv: 0.0,
        no_dis: 0.0,
    };
    for ablation in std::iter::once(None).chain(Ablation::ALL.map(Some)) {
        let mut model = warm.clone();
        adapt(&mut model, source, target, &base.clone().with_ablation(ablation), &mut ())?;
        row.set(ablation, evaluate(target, &model)?.accuracy);
    }
    Ok(row)
}

/// [`ablate_seed`] for every seed on a fixed domain pair.
pub fn ablate(source: &Dataset, target: &Dataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<AblationTable> {
    let rows = seeds
        .iter()
        .map(|&seed| ablate_seed(source, target, &TrainConfig { seed, ..cfg.clone() }))
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}
