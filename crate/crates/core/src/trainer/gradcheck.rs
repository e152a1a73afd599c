//! Finite-difference checks of the composite training losses against every
//! trainable parameter of a model.

use serde::Serialize;

use super::config::TrainConfig;
use super::model::Model;
use crate::calibrator::source_loss;
use crate::disentangler::{dis_loss_with, MarginalDraws};
use crate::error::Result;
use crate::gradcore::{max_rel_error, ParamStore, Real, Rng, Tape, Var, FD_STEP};
use crate::graphdata::{gen_synthetic_biased, make_batch, GraphBatch, SynthConfig};
use crate::intervenor::{build_swap_plan, invariance_loss, reconstruction_loss, SwapPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeLoss {
    Source,
    CausalMi,
    SpuriousMi,
    Generation,
    Invariance,
}

impl CompositeLoss {
    pub const ALL: [CompositeLoss; 5] = [
        CompositeLoss::Source,
        CompositeLoss::CausalMi,
        CompositeLoss::SpuriousMi,
        CompositeLoss::Generation,
        CompositeLoss::Invariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompositeLoss::Source => "L_so",
            CompositeLoss::CausalMi => "L_c_MI",
            CompositeLoss::SpuriousMi => "L_s_MI",
            CompositeLoss::Generation => "L_ge",
            CompositeLoss::Invariance => "L_inv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub loss: CompositeLoss,
    pub param: String,
    pub max_rel_error: Real,
    pub passed: bool,
}

/// Fixed inputs shared by every evaluation of a loss.
struct Fixture {
    batch: GraphBatch,
    n_source: usize,
    labels: Vec<usize>,
    draws: MarginalDraws,
    plan: SwapPlan,
    cfg: TrainConfig,
}

#[derive(Clone, Copy)]
enum Store {
    Net,
    Generator,
    Critic,
}

fn store_mut(model: &mut Model, s: Store) -> &mut ParamStore {
    match s {
        Store::Net => &mut model.net,
        Store::Generator => &mut model.generator,
        Store::Critic => &mut model.critic,
    }
}

fn loss<'t>(model: &Model, tape: &'t Tape, fx: &Fixture, which: CompositeLoss) -> Result<Var<'t>> {
    let fwd = model.forward(tape, &fx.batch, true)?;
    let generator = model.spec.generator.bind(&model.generator, tape)?;
    let critic = model.spec.critic.bind(&model.critic, tape)?;
    let ns = fx.n_source;
    let n = fx.batch.num_graphs();
    let src_rows: Vec<usize> = (0..ns).collect();
    let tgt_rows: Vec<usize> = (ns..n).collect();
    match which {
        CompositeLoss::Source => source_loss(fwd.logits.gather_rows(&src_rows)?, &fx.batch.labels[..ns]),
        CompositeLoss::CausalMi => Ok(dis_loss_with(&fwd.feats, &fx.labels, &critic, fx.cfg.beta, &fx.draws)?.causal),
        CompositeLoss::SpuriousMi => {
            Ok(dis_loss_with(&fwd.feats, &fx.labels, &critic, fx.cfg.beta, &fx.draws)?.spurious.loss)
        }
        CompositeLoss::Generation => reconstruction_loss(&fwd.feats, &generator),
        CompositeLoss::Invariance => {
            let src = fwd.feats.gather_rows(&src_rows)?;
            let tgt = fwd.feats.gather_rows(&tgt_rows)?;
            Ok(invariance_loss(&src, &tgt, &fx.plan, &generator, fx.cfg.invariance())?.total)
        }
    }
}

fn value(model: &Model, fx: &Fixture, which: CompositeLoss) -> Result<Real> {
    let tape = Tape::new();
    Ok(loss(model, &tape, fx, which)?.item())
}

/// Checks `ℒ_so`, `ℒ^c_MI`, `ℒ^s_MI`, `ℒ_ge` and `ℒ_inv` on a random batch of
/// `2 * per_domain` synthetic graphs against central differences, one entry
/// per (loss, parameter tensor). Parameters are re-drawn at random so that
/// no gradient vanishes by initialisation.
pub fn composite_gradient_suite(seed: u64, per_domain: usize, tol: Real) -> Result<Vec<ParamCheck>> {
    let mut rng = Rng::new(seed);
    let synth = SynthConfig { n_per_domain: per_domain, ..SynthConfig::default() };
    let (source, target) = gen_synthetic_biased(&synth, &mut rng)?;
    let cfg = TrainConfig { hidden: 6, causal_dim: 3, spurious_dim: 3, symmetric_swap: true, seed, ..TrainConfig::default() };
    let mut model = Model::new(source.feature_dim(), 2, &cfg)?;
    for s in [Store::Net, Store::Generator, Store::Critic] {
        let store = store_mut(&mut model, s);
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            let shape = store.value(&name)?.shape().to_vec();
            store.set_value(&name, rng.normal_tensor(&shape, 0.5))?;
        }
    }
    let batch = make_batch(source.graphs().iter().chain(target.graphs()))?;
    let n = batch.num_graphs();
    let labels: Vec<usize> = (0..n).map(|i| batch.labels[i].unwrap_or(i % 2)).collect();
    let fx = Fixture {
        n_source: per_domain,
        labels,
        draws: MarginalDraws::sample(n, &mut rng)?,
        plan: build_swap_plan(per_domain, n - per_domain, &mut rng)?,
        batch,
        cfg,
    };

    let mut out = Vec::new();
    for which in CompositeLoss::ALL {
        let tape = Tape::new();
        loss(&model, &tape, &fx, which)?.backward()?;
        for s in [Store::Net, Store::Generator, Store::Critic] {
            let mut grads = store_mut(&mut model, s).clone();
            grads.zero_grad();
            grads.collect_grads(&tape);
            let names: Vec<String> = grads.names().map(str::to_string).collect();
            for name in names {
                let param = grads.get(&name)?;
                let numel = param.value.numel();
                let analytic = param.grad.as_ref().map_or_else(|| vec![0.0; numel], |g| g.data().to_vec());
                let mut numeric = vec![0.0; numel];
                for (i, slot) in numeric.iter_mut().enumerate() {
                    let orig = param.value.data()[i];
                    let mut probe = param.value.clone();
                    probe.data_mut()[i] = orig + FD_STEP;
                    store_mut(&mut model, s).set_value(&name, probe.clone())?;
                    let plus = value(&model, &fx, which)?;
                    probe.data_mut()[i] = orig - FD_STEP;
                    store_mut(&mut model, s).set_value(&name, probe)?;
                    let minus = value(&model, &fx, which)?;
                    *slot = (plus - minus) / (2.0 * FD_STEP);
                }
                store_mut(&mut model, s).set_value(&name, param.value.clone())?;
                let err = max_rel_error(&analytic, &numeric);
                out.push(ParamCheck { loss: which, param: name, max_rel_error: err, passed: err < tol });
            }
        }
    }
    Ok(out)
}
