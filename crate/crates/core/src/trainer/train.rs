//! Source warm-up and the adaptation loop.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::evaluate;
use super::model::{streams, Model};
use crate::calibrator::{
    build_thresholds, score_target, select_confident, source_loss, sup_loss, target_loss, ConfidentSet,
    PredictionRecord,
};
use crate::disentangler::{critic_fit_step, dis_loss};
use crate::error::{Error, Result};
use crate::gradcore::{Real, Rng, Tape, Var};
use crate::graphdata::{make_batch, Dataset, Graph};
use crate::intervenor::{build_swap_plan, invariance_loss, reconstruction_loss};

/// Source visiting order for a global epoch index.
pub(crate) fn source_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    Rng::new(seed)
        .stream(streams::SOURCE_ORDER)
        .stream(epoch as u64)
        .permutation(n)
}

fn check_source(source: &Dataset, model: &Model) -> Result<()> {
    if source.is_empty() {
        return Err(Error::InvalidInput(format!("source dataset `{}` is empty", source.name)));
    }
    if !source.is_labelled() {
        return Err(Error::InvalidInput(format!("source dataset `{}` has unlabelled graphs", source.name)));
    }
    if source.feature_dim() != model.spec.in_dim {
        return Err(Error::shape("source features", &[source.feature_dim()], &[model.spec.in_dim]));
    }
    if source.num_classes() > model.spec.num_classes {
        return Err(Error::shape("source classes", &[source.num_classes()], &[model.spec.num_classes]));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupEpoch {
    pub epoch: usize,
    pub l_so: Real,
    pub l_ge: Real,
    pub source_acc: Real,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub epochs: Vec<WarmupEpoch>,
    /// Source training accuracy of the returned model.
    pub source_train_acc: Real,
}

/// Initialises a model and trains it on the labelled source for
/// `cfg.warmup_epochs` epochs.
pub fn warmup(source: &Dataset, cfg: &TrainConfig) -> Result<(Model, WarmupReport)> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::InvalidInput(format!("source dataset `{}` is empty", source.name)));
    }
    let mut model = Model::new(source.feature_dim(), source.num_classes(), cfg)?;
    let report = warmup_epochs(&mut model, source, cfg, cfg.warmup_epochs)?;
    Ok((model, report))
}

/// Continues warm-up training of `model` for `epochs` epochs: the network on
/// `ℒ_so` from `z^c`, the generator on `ℒ_ge` over detached features.
pub fn warmup_epochs(model: &mut Model, source: &Dataset, cfg: &TrainConfig, epochs: usize) -> Result<WarmupReport> {
    check_source(source, model)?;
    let mut report = WarmupReport::default();
    for _ in 0..epochs {
        let order = source_order(cfg.seed, model.epochs_done, source.len());
        let (mut so_sum, mut ge_sum, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(chunk.iter().map(|&i| source.get(i)))?;
            let tape = Tape::new();
            let fwd = model.forward(&tape, &batch, true)?;
            let l_so = source_loss(fwd.logits, &batch.labels)?;
            let generator = model.spec.generator.bind(&model.generator, &tape)?;
            let l_ge = reconstruction_loss(&fwd.feats.snapshot().constants(&tape), &generator)?;
            let total = l_so.add(l_ge)?;
            ensure_finite("warm-up loss", total.item())?;
            total.backward()?;
            model.net.collect_grads(&tape);
            model.generator.collect_grads(&tape);
            model.net.adam_step(cfg.lr)?;
            model.generator.adam_step(cfg.lr)?;
            so_sum += l_so.item();
            ge_sum += l_ge.item();
            steps += 1;
        }
        model.epochs_done += 1;
        report.epochs.push(WarmupEpoch {
            epoch: report.epochs.len() + 1,
            l_so: so_sum / steps as Real,
            l_ge: ge_sum / steps as Real,
            source_acc: evaluate(source, model)?.accuracy,
        });
    }
    report.source_train_acc = match report.epochs.last() {
        Some(e) => e.source_acc,
        None => evaluate(source, model)?.accuracy,
    };
    Ok(report)
}

fn ensure_finite(what: &str, v: Real) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Named loss terms of one adaptation step. Disabled or undefined terms are
/// `None` and contribute 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_so: Real,
    pub l_ta: Option<Real>,
    pub l_sup: Real,
    pub l_c_mi: Option<Real>,
    pub l_s_mi: Option<Real>,
    pub l_dis: Option<Real>,
    /// Reconstruction error of the generator over the batch.
    pub l_ge: Real,
    pub l_inv: Option<Real>,
    pub total: Real,
}

impl LossBreakdown {
    /// `ℒ_sup + γ ℒ_dis + η ℒ_inv` recomputed from the logged terms.
    pub fn recomputed_total(&self, gamma: Real, eta: Real) -> Real {
        self.l_sup + gamma * self.l_dis.unwrap_or(0.0) + eta * self.l_inv.unwrap_or(0.0)
    }
}

/// Per-epoch means of the step breakdowns plus evaluation numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_so: Real,
    pub l_ta: Option<Real>,
    pub l_sup: Real,
    pub l_c_mi: Option<Real>,
    pub l_s_mi: Option<Real>,
    pub l_dis: Option<Real>,
    pub l_ge: Real,
    pub l_inv: Option<Real>,
    pub total: Real,
    pub confident_size: usize,
    pub source_acc: Real,
    /// Only when the target carries labels; never used for training.
    pub target_acc: Option<Real>,
}

fn mean(xs: impl Iterator<Item = Real>) -> Real {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as Real
}

fn mean_opt(steps: &[LossBreakdown], f: impl Fn(&LossBreakdown) -> Option<Real>) -> Option<Real> {
    let vals: Vec<Real> = steps.iter().filter_map(f).collect();
    (!vals.is_empty()).then(|| mean(vals.into_iter()))
}

/// Hooks for emitting artifacts while adapting.
pub trait AdaptObserver {
    fn on_confident(&mut self, _epoch: usize, _records: &[PredictionRecord], _set: &ConfidentSet) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _metrics: &EpochMetrics, _model: &Model) -> Result<()> {
        Ok(())
    }
}

impl AdaptObserver for () {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<LossBreakdown>,
}

/// Endless shuffled pass over `0..n`, reshuffled on each wrap.
struct Cycle {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize, rng: Rng) -> Self {
        Self { rng, order: (0..n).collect(), pos: n }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            let room = (k - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + room]);
            self.pos += room;
        }
        out
    }
}

struct StepRngs {
    critic: Rng,
    dis: Rng,
    swap: Rng,
}

/// Adaptation epochs on `(source, target)`. Target labels are never read
/// except by evaluation.
pub fn adapt(
    model: &mut Model,
    source: &Dataset,
    target: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn AdaptObserver,
) -> Result<AdaptReport> {
    cfg.validate()?;
    check_source(source, model)?;
    if target.is_empty() {
        return Err(Error::InvalidInput(format!("target dataset `{}` is empty", target.name)));
    }
    if target.feature_dim() != model.spec.in_dim {
        return Err(Error::shape("target features", &[target.feature_dim()], &[model.spec.in_dim]));
    }
    let root = Rng::new(cfg.seed)
        .stream(streams::ADAPT)
        .stream(model.epochs_done as u64);
    let mut cycle = Cycle::new(target.len(), root.stream(streams::TARGET_ORDER));
    let mut rngs = StepRngs {
        critic: root.stream(streams::CRITIC),
        dis: root.stream(streams::DIS),
        swap: root.stream(streams::SWAP),
    };
    let mut report = AdaptReport::default();
    let target_graphs: Vec<&Graph> = target.graphs().iter().collect();
    let tgt_batch = cfg.batch_size.min(target.len());

    for epoch in 1..=cfg.adapt_epochs {
        let records = score_target(target, model)?;
        let table = build_thresholds(&records, cfg.tau, model.spec.num_classes)?;
        let confident = select_confident(&records, &table)?;
        observer.on_confident(epoch, &records, &confident)?;
        let pseudo = confident.pseudo_labels(target_graphs.len());

        let order = source_order(cfg.seed, model.epochs_done, source.len());
        let first_step = report.steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            let tgt_idx = cycle.take(tgt_batch);
            let step = adapt_step(model, source, &target_graphs, chunk, &tgt_idx, &pseudo, cfg, &mut rngs)?;
            report.steps.push(step);
        }
        model.epochs_done += 1;

        let steps = &report.steps[first_step..];
        let metrics = EpochMetrics {
            epoch,
            l_so: mean(steps.iter().map(|s| s.l_so)),
            l_ta: mean_opt(steps, |s| s.l_ta),
            l_sup: mean(steps.iter().map(|s| s.l_sup)),
            l_c_mi: mean_opt(steps, |s| s.l_c_mi),
            l_s_mi: mean_opt(steps, |s| s.l_s_mi),
            l_dis: mean_opt(steps, |s| s.l_dis),
            l_ge: mean(steps.iter().map(|s| s.l_ge)),
            l_inv: mean_opt(steps, |s| s.l_inv),
            total: mean(steps.iter().map(|s| s.total)),
            confident_size: confident.len(),
            source_acc: evaluate(source, model)?.accuracy,
            target_acc: if target.is_labelled() { Some(evaluate(target, model)?.accuracy) } else { None },
        };
        observer.on_epoch(&metrics, model)?;
        report.epochs.push(metrics);
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn adapt_step(
    model: &mut Model,
    source: &Dataset,
    target: &[&Graph],
    src_idx: &[usize],
    tgt_idx: &[usize],
    pseudo: &[Option<usize>],
    cfg: &TrainConfig,
    rngs: &mut StepRngs,
) -> Result<LossBreakdown> {
    let (ns, nt) = (src_idx.len(), tgt_idx.len());
    let graphs = src_idx
        .iter()
        .map(|&i| source.get(i))
        .chain(tgt_idx.iter().map(|&k| target[k]));
    let batch = make_batch(graphs)?;
    let tape = Tape::new();
    let fwd = model.forward(&tape, &batch, true)?;

    let src_rows: Vec<usize> = (0..ns).collect();
    let tgt_rows: Vec<usize> = (ns..ns + nt).collect();
    let l_so = source_loss(fwd.logits.gather_rows(&src_rows)?, &batch.labels[..ns])?;

    let (conf_rows, conf_labels): (Vec<usize>, Vec<usize>) = tgt_idx
        .iter()
        .enumerate()
        .filter_map(|(j, &k)| pseudo[k].map(|y| (ns + j, y)))
        .unzip();
    let l_ta = if cfg.no_sup_target {
        None
    } else {
        Some(target_loss(&tape, fwd.logits, &conf_rows, &conf_labels)?)
    };
    let l_sup = match l_ta {
        Some(t) => sup_loss(l_so, t)?,
        None => l_so,
    };

    // Source rows carry true labels, confident target rows their pseudo-labels.
    let labelled: Vec<usize> = src_rows.iter().chain(&conf_rows).copied().collect();
    let labels: Vec<usize> = batch.labels[..ns]
        .iter()
        .map(|y| y.expect("checked source labels"))
        .chain(conf_labels.iter().copied())
        .collect();
    let dis = if !cfg.no_dis && labelled.len() >= 2 {
        let snapshot = fwd.feats.snapshot().select_rows(&labelled)?;
        critic_fit_step(&snapshot, &labels, &model.spec.critic, &mut model.critic, &mut rngs.critic, cfg.critic_lr)?;
        let critic = model.spec.critic.bind_frozen(&model.critic, &tape)?;
        Some(dis_loss(&fwd.feats.gather_rows(&labelled)?, &labels, &critic, &cfg.disentangle(), &mut rngs.dis)?)
    } else {
        None
    };

    let (l_ge, inv) = if cfg.no_inv {
        let generator = model.spec.generator.bind_frozen(&model.generator, &tape)?;
        let l_ge = reconstruction_loss(&fwd.feats.snapshot().constants(&tape), &generator)?.item();
        (l_ge, None)
    } else {
        let generator = model.spec.generator.bind(&model.generator, &tape)?;
        let src = fwd.feats.gather_rows(&src_rows)?;
        let tgt = fwd.feats.gather_rows(&tgt_rows)?;
        let plan = build_swap_plan(ns, nt, &mut rngs.swap)?;
        let terms = invariance_loss(&src, &tgt, &plan, &generator, cfg.invariance())?;
        (terms.reconstruction.item(), Some(terms.total))
    };

    let mut total: Var<'_> = l_sup;
    if let Some(d) = &dis {
        total = total.add(d.total.scale(cfg.gamma)?)?;
    }
    if let Some(i) = inv {
        total = total.add(i.scale(cfg.eta)?)?;
    }
    ensure_finite("adaptation loss", total.item())?;
    total.backward()?;
    model.net.collect_grads(&tape);
    model.net.adam_step(cfg.lr)?;
    if inv.is_some() {
        model.generator.collect_grads(&tape);
        model.generator.adam_step(cfg.lr)?;
    }

    Ok(LossBreakdown {
        l_so: l_so.item(),
        l_ta: l_ta.map(|v| v.item()),
        l_sup: l_sup.item(),
        l_c_mi: dis.map(|d| d.causal.item()),
        l_s_mi: dis.map(|d| d.spurious.loss.item()),
        l_dis: dis.map(|d| d.total.item()),
        l_ge,
        l_inv: inv.map(|v| v.item()),
        total: total.item(),
    })
}
