use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::calibrator::CausalPredictor;
use crate::disentangler::{split_features, CriticParams, DisentangledFeatures, FeatureSnapshot, ProjectionHeads};
use crate::encoder::{encode, EncoderParams, LinearSpec};
use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Real, Rng, Tape, Tensor, Var};
use crate::graphdata::{make_batch, Graph, GraphBatch};
use crate::intervenor::GeneratorParams;

/// Labels for the independent random streams derived from the run seed.
pub(crate) mod streams {
    pub const INIT_NET: u64 = 1;
    pub const INIT_GEN: u64 = 2;
    pub const INIT_CRITIC: u64 = 3;
    pub const SOURCE_ORDER: u64 = 10;
    pub const TARGET_ORDER: u64 = 11;
    pub const CRITIC: u64 = 12;
    pub const DIS: u64 = 13;
    pub const SWAP: u64 = 14;
    pub const ADAPT: u64 = 15;
    pub const PROBE: u64 = 20;
    pub const AUDIT: u64 = 21;
}

/// Graphs per forward pass when scoring whole datasets.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_dim: usize,
    pub num_classes: usize,
    pub encoder: EncoderParams,
    pub heads: ProjectionHeads,
    /// Classifier `φ` on `z^c`.
    pub classifier: LinearSpec,
    pub generator: GeneratorParams,
    pub critic: CriticParams,
}

impl ModelSpec {
    pub fn new(in_dim: usize, num_classes: usize, cfg: &TrainConfig) -> Self {
        let (h, c, s) = (cfg.hidden, cfg.causal_dim, cfg.spurious_dim);
        Self {
            in_dim,
            num_classes,
            encoder: EncoderParams::new(in_dim, h),
            heads: ProjectionHeads::new(h, c, s),
            classifier: LinearSpec::new("cls", c, num_classes),
            generator: GeneratorParams::new(c, s, h, h),
            critic: CriticParams::new(c, s, h, num_classes),
        }
    }
}

/// All trainable state: the network (encoder, projection heads,
/// classifier), the generator and the critic, each with its own Adam state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub net: ParamStore,
    pub generator: ParamStore,
    pub critic: ParamStore,
    /// Training epochs completed (warm-up and adaptation share one counter).
    pub epochs_done: usize,
}

/// Output of one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct Forward<'t> {
    pub feats: DisentangledFeatures<'t>,
    /// Classifier logits from `z^c`.
    pub logits: Var<'t>,
}

impl Model {
    pub fn new(in_dim: usize, num_classes: usize, cfg: &TrainConfig) -> Result<Self> {
        if in_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "model needs a positive feature width and at least 2 classes, got d={in_dim}, C={num_classes}"
            )));
        }
        let spec = ModelSpec::new(in_dim, num_classes, cfg);
        let root = Rng::new(cfg.seed);
        let mut net = ParamStore::new();
        let mut rng = root.stream(streams::INIT_NET);
        spec.encoder.init(&mut net, &mut rng)?;
        spec.heads.init(&mut net, &mut rng)?;
        spec.classifier.init(&mut net, &mut rng)?;
        let mut generator = ParamStore::new();
        spec.generator.init(&mut generator, &mut root.stream(streams::INIT_GEN))?;
        let mut critic = ParamStore::new();
        spec.critic.init(&mut critic, &mut root.stream(streams::INIT_CRITIC))?;
        Ok(Self { spec, net, generator, critic, epochs_done: 0 })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, batch: &GraphBatch, trainable: bool) -> Result<Forward<'t>> {
        let (enc, heads, cls) = if trainable {
            (
                self.spec.encoder.bind(&self.net, tape)?,
                self.spec.heads.bind(&self.net, tape)?,
                self.spec.classifier.bind(&self.net, tape)?,
            )
        } else {
            (
                self.spec.encoder.bind_frozen(&self.net, tape)?,
                self.spec.heads.bind_frozen(&self.net, tape)?,
                self.spec.classifier.bind_frozen(&self.net, tape)?,
            )
        };
        let z = encode(tape, batch, &enc)?;
        let feats = split_features(z, &heads)?;
        let logits = cls.forward(feats.z_c)?;
        Ok(Forward { feats, logits })
    }

    fn check_graphs(&self, graphs: &[&Graph]) -> Result<()> {
        if graphs.is_empty() {
            return Err(Error::InvalidInput("no graphs to evaluate".into()));
        }
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != self.spec.in_dim) {
            return Err(Error::shape("model input", &[g.feature_dim()], &[self.spec.in_dim]));
        }
        Ok(())
    }

    /// Frozen forward pass in chunks; `f` maps each chunk to a row block.
    fn map_chunks(&self, graphs: &[&Graph], f: impl Fn(&Forward<'_>) -> Result<Vec<Tensor>>) -> Result<Vec<Tensor>> {
        self.check_graphs(graphs)?;
        let mut blocks: Vec<Vec<Real>> = Vec::new();
        let mut widths = Vec::new();
        for chunk in graphs.chunks(EVAL_CHUNK) {
            let batch = make_batch(chunk.iter().copied())?;
            let tape = Tape::new();
            let fwd = self.forward(&tape, &batch, false)?;
            let outs = f(&fwd)?;
            if blocks.is_empty() {
                blocks = vec![Vec::new(); outs.len()];
                widths = outs.iter().map(Tensor::cols).collect();
            }
            for (acc, t) in blocks.iter_mut().zip(outs) {
                acc.extend(t.into_data());
            }
        }
        blocks
            .into_iter()
            .zip(widths)
            .map(|(data, w)| Tensor::new(&[graphs.len(), w], data))
            .collect()
    }

    /// Detached `(z, z^c, z^s)` for `graphs`, one row each.
    pub fn features(&self, graphs: &[&Graph]) -> Result<FeatureSnapshot> {
        let mut out = self.map_chunks(graphs, |fwd| {
            let s = fwd.feats.snapshot();
            Ok(vec![s.z, s.z_c, s.z_s])
        })?;
        let z_s = out.pop().expect("three blocks");
        let z_c = out.pop().expect("three blocks");
        let z = out.pop().expect("three blocks");
        Ok(FeatureSnapshot { z, z_c, z_s })
    }

    /// Class probabilities together with the detached features.
    pub fn predict_with_features(&self, graphs: &[&Graph]) -> Result<(Tensor, FeatureSnapshot)> {
        let mut out = self.map_chunks(graphs, |fwd| {
            let s = fwd.feats.snapshot();
            Ok(vec![fwd.logits.softmax()?.value(), s.z, s.z_c, s.z_s])
        })?;
        let z_s = out.pop().expect("four blocks");
        let z_c = out.pop().expect("four blocks");
        let z = out.pop().expect("four blocks");
        let probs = out.pop().expect("four blocks");
        Ok((probs, FeatureSnapshot { z, z_c, z_s }))
    }

    /// Argmax class per graph, ties to the lowest index.
    pub fn predict(&self, graphs: &[&Graph]) -> Result<Vec<usize>> {
        let probs = self.predict_proba(graphs)?;
        Ok((0..probs.rows())
            .map(|i| {
                let row = probs.row(i);
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.generator.is_finite() && self.critic.is_finite()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl CausalPredictor for Model {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn predict_proba(&self, graphs: &[&Graph]) -> Result<Tensor> {
        let mut out = self.map_chunks(graphs, |fwd| Ok(vec![fwd.logits.softmax()?.value()]))?;
        Ok(out.pop().expect("one block"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{gen_synthetic_biased, SynthConfig};

    fn small_cfg() -> TrainConfig {
        TrainConfig { hidden: 16, causal_dim: 8, spurious_dim: 8, ..TrainConfig::default() }
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::new(4, 2, &small_cfg()).unwrap();
        let b = Model::new(4, 2, &small_cfg()).unwrap();
        assert_eq!(a, b);
        let c = Model::new(4, 2, &TrainConfig { seed: 1, ..small_cfg() }).unwrap();
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn chunked_prediction_matches_single_batch() {
        let cfg = SynthConfig { n_per_domain: 300, ..SynthConfig::default() };
        let (src, _) = gen_synthetic_biased(&cfg, &mut Rng::new(0)).unwrap();
        let model = Model::new(4, 2, &small_cfg()).unwrap();
        let graphs: Vec<&Graph> = src.graphs().iter().collect();
        let probs = model.predict_proba(&graphs).unwrap();
        assert_eq!(probs.shape(), &[300, 2]);
        let tape = Tape::new();
        let fwd = model.forward(&tape, &make_batch(graphs.iter().copied()).unwrap(), false).unwrap();
        let direct = fwd.logits.softmax().unwrap().value();
        assert!(probs.max_abs_diff(&direct) < 1e-12);
        for i in 0..300 {
            assert!((probs.row(i).iter().sum::<Real>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let model = Model::new(4, 3, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), model);
        assert!(matches!(Model::load(dir.path().join("nope.json")), Err(Error::MissingFile(_))));
    }
}
