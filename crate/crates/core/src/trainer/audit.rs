use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::model::{streams, Model};
use crate::disentangler::estimate_mi;
use crate::error::{Error, Result};
use crate::gradcore::{Real, Rng, Tape};
use crate::graphdata::{Dataset, Graph};
use crate::intervenor::reconstruction_loss;

/// Quantities of the target-error bound that have no computable estimate.
pub const UNIDENTIFIED_SYMBOLS: [&str; 5] = ["C", "L", "delta", "n_S", "I_c"];

/// Empirical counterparts of the bound's conditions. Diagnostic only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundAudit {
    /// `ε̂_S`: error of the `z^c` classifier on the labelled source.
    pub source_error: Real,
    /// `ε₁` proxy: variational estimate of `I(z^s; y)` on the source.
    pub spurious_label_mi: Real,
    /// `ε₂` proxy: mean `‖z − G(z^c, z^s)‖²` over source and target.
    pub reconstruction_residual: Real,
    /// Only when the target carries (held-out) labels.
    pub target_error: Option<Real>,
    /// Constants reported by name; the bound itself is never evaluated.
    pub unidentified: Vec<String>,
}

pub fn bound_audit(model: &Model, source: &Dataset, target: &Dataset, seed: u64) -> Result<BoundAudit> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("bound audit needs non-empty source and target".into()));
    }
    let source_error = 1.0 - evaluate(source, model)?.accuracy;
    let graphs: Vec<&Graph> = source.graphs().iter().collect();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label.expect("evaluate checked labels")).collect();
    let feats = model.features(&graphs)?;
    let mut rng = Rng::new(seed).stream(streams::AUDIT);
    let spurious_label_mi = if graphs.len() >= 2 {
        estimate_mi(&feats, &labels, &model.spec.critic, &model.critic, &mut rng)?.spurious_label_mi
    } else {
        0.0
    };

    let all: Vec<&Graph> = graphs.iter().copied().chain(target.graphs()).collect();
    let union = model.features(&all)?;
    let tape = Tape::new();
    let generator = model.spec.generator.bind_frozen(&model.generator, &tape)?;
    let reconstruction_residual = reconstruction_loss(&union.constants(&tape), &generator)?.item();

    let target_error = if target.is_labelled() {
        Some(1.0 - evaluate(target, model)?.accuracy)
    } else {
        None
    };
    Ok(BoundAudit {
        source_error,
        spurious_label_mi,
        reconstruction_residual,
        target_error,
        unidentified: UNIDENTIFIED_SYMBOLS.iter().map(|s| s.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::Tensor;
    use crate::graphdata::{gen_synthetic_biased, SynthConfig};
    use crate::trainer::TrainConfig;

    fn setup() -> (Model, Dataset, Dataset) {
        let (s, t) = gen_synthetic_biased(&SynthConfig { n_per_domain: 60, ..SynthConfig::default() }, &mut Rng::new(2)).unwrap();
        let cfg = TrainConfig { hidden: 16, causal_dim: 8, spurious_dim: 8, ..TrainConfig::default() };
        (Model::new(s.feature_dim(), 2, &cfg).unwrap(), s, t)
    }

    fn zero_params(store: &mut crate::gradcore::ParamStore, names: &[&str]) {
        for name in names {
            let shape = store.value(name).unwrap().shape().to_vec();
            store.set_value(name, Tensor::zeros(&shape)).unwrap();
        }
    }

    #[test]
    fn ranges_and_target_error() {
        let (m, s, t) = setup();
        let a = bound_audit(&m, &s, &t, 0).unwrap();
        assert!((0.0..=1.0).contains(&a.source_error));
        assert!(a.reconstruction_residual >= 0.0);
        let te = a.target_error.unwrap();
        assert!((0.0..=1.0).contains(&te));
        assert_eq!(a.unidentified.len(), 5);
        let unlabelled = t.map_labels(|_| None).unwrap();
        assert_eq!(bound_audit(&m, &s, &unlabelled, 0).unwrap().target_error, None);
    }

    #[test]
    fn constant_q_head_gives_zero_label_mi() {
        let (mut m, s, t) = setup();
        zero_params(&mut m.critic, &["critic.q.w", "critic.q.b"]);
        let a = bound_audit(&m, &s, &t, 0).unwrap();
        assert!(a.spurious_label_mi.abs() < 1e-12, "{}", a.spurious_label_mi);
    }

    #[test]
    fn zero_generator_on_zero_features_has_zero_residual() {
        let (mut m, s, t) = setup();
        // Zero encoder output makes z = z^c = z^s = 0; a zero generator reproduces it.
        zero_params(&mut m.net, &["enc.l2.w", "enc.l2.b", "head_c.b", "head_s.b"]);
        zero_params(&mut m.generator, &["gen.l2.w", "gen.l2.b"]);
        assert_eq!(bound_audit(&m, &s, &t, 0).unwrap().reconstruction_residual, 0.0);
    }
}
