//! Causal/spurious projections of `z` and the mutual-information objectives
//! built on them.
//!
//! `ℒ^c_MI` is the negated Donsker–Varadhan bound on `I(Y; Z^c)` with the
//! bilinear critic `ξ = z^cᵀ W y`. `ℒ^s_MI = Î(z^s; y) − β Î(z^s; z)` combines
//! a variational upper estimate through `q(y | z^s)` with a bilinear
//! Donsker–Varadhan estimate through `ψ = z^sᵀ W_ψ z`. Product-of-marginals
//! samples come from in-batch permutations drawn from the caller's [`Rng`].
//!
//! The critic (`W`, `W_ψ`, `q`) lives in its own [`ParamStore`] and is fitted
//! on detached features by [`critic_fit_step`]; the model step binds it frozen.

use serde::{Deserialize, Serialize};

use crate::encoder::{BoundLinear, LinearSpec};
use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Real, Rng, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentangleConfig {
    pub beta: Real,
    pub causal_dim: usize,
    pub spurious_dim: usize,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            causal_dim: 64,
            spurious_dim: 64,
        }
    }
}

impl DisentangleConfig {
    pub fn validate(&self, repr_dim: usize) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", format!("{} must be finite and >= 0", self.beta)));
        }
        if self.causal_dim == 0 || self.spurious_dim == 0 {
            return Err(Error::config("causal_dim", "projection widths must be positive"));
        }
        if self.causal_dim + self.spurious_dim > repr_dim {
            return Err(Error::config(
                "causal_dim",
                format!(
                    "{} + {} exceeds representation width {repr_dim}",
                    self.causal_dim, self.spurious_dim
                ),
            ));
        }
        Ok(())
    }
}

/// Parameter layout of the two projection heads, `head_c` and `head_s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionHeads {
    pub causal: LinearSpec,
    pub spurious: LinearSpec,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundHeads<'t> {
    pub causal: BoundLinear<'t>,
    pub spurious: BoundLinear<'t>,
}

impl ProjectionHeads {
    pub fn new(repr_dim: usize, causal_dim: usize, spurious_dim: usize) -> Self {
        Self {
            causal: LinearSpec::new("head_c", repr_dim, causal_dim),
            spurious: LinearSpec::new("head_s", repr_dim, spurious_dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.causal.init(store, rng)?;
        self.spurious.init(store, rng)
    }

    pub fn bind<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundHeads<'t>> {
        Ok(BoundHeads {
            causal: self.causal.bind(store, tape)?,
            spurious: self.spurious.bind(store, tape)?,
        })
    }

    pub fn bind_frozen<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundHeads<'t>> {
        Ok(BoundHeads {
            causal: self.causal.bind_frozen(store, tape)?,
            spurious: self.spurious.bind_frozen(store, tape)?,
        })
    }
}

/// `(z, z^c, z^s)` for a batch, still attached to the tape.
#[derive(Clone, Copy, Debug)]
pub struct DisentangledFeatures<'t> {
    pub z: Var<'t>,
    pub z_c: Var<'t>,
    pub z_s: Var<'t>,
}

/// Detached copy of [`DisentangledFeatures`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSnapshot {
    pub z: Tensor,
    pub z_c: Tensor,
    pub z_s: Tensor,
}

impl<'t> DisentangledFeatures<'t> {
    pub fn rows(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn snapshot(&self) -> FeatureSnapshot {
        FeatureSnapshot {
            z: self.z.value(),
            z_c: self.z_c.value(),
            z_s: self.z_s.value(),
        }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            z: self.z.gather_rows(idx)?,
            z_c: self.z_c.gather_rows(idx)?,
            z_s: self.z_s.gather_rows(idx)?,
        })
    }
}

impl FeatureSnapshot {
    pub fn rows(&self) -> usize {
        self.z.rows()
    }

    /// Places the snapshot on `tape` as constants.
    pub fn constants<'t>(&self, tape: &'t Tape) -> DisentangledFeatures<'t> {
        DisentangledFeatures {
            z: tape.constant(self.z.clone()),
            z_c: tape.constant(self.z_c.clone()),
            z_s: tape.constant(self.z_s.clone()),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            z: self.z.select_rows(idx)?,
            z_c: self.z_c.select_rows(idx)?,
            z_s: self.z_s.select_rows(idx)?,
        })
    }
}

pub fn split_features<'t>(z: Var<'t>, heads: &BoundHeads<'t>) -> Result<DisentangledFeatures<'t>> {
    let (zs, expect) = (z.shape(), heads.causal.in_dim());
    if zs.len() != 2 || zs[1] != expect || heads.spurious.in_dim() != expect {
        return Err(Error::shape("split_features", &zs, &[expect]));
    }
    Ok(DisentangledFeatures {
        z,
        z_c: heads.causal.forward(z)?,
        z_s: heads.spurious.forward(z)?,
    })
}

/// Shapes of the critic: `W` (`causal_dim × C`), `W_ψ`
/// (`spurious_dim × repr_dim`) and the variational head `q`
/// (`spurious_dim → C`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticParams {
    pub causal_dim: usize,
    pub spurious_dim: usize,
    pub repr_dim: usize,
    pub num_classes: usize,
    pub q: LinearSpec,
}

pub const W_CAUSAL: &str = "critic.w_causal";
pub const W_PSI: &str = "critic.w_psi";

#[derive(Clone, Copy, Debug)]
pub struct BoundCritic<'t> {
    pub w_causal: Var<'t>,
    pub w_psi: Var<'t>,
    pub q: BoundLinear<'t>,
}

impl CriticParams {
    pub fn new(causal_dim: usize, spurious_dim: usize, repr_dim: usize, num_classes: usize) -> Self {
        Self {
            causal_dim,
            spurious_dim,
            repr_dim,
            num_classes,
            q: LinearSpec::new("critic.q", spurious_dim, num_classes),
        }
    }

    /// Bilinear matrices start at zero, so both Donsker–Varadhan terms start at
    /// exactly 0; `q` starts Glorot with zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        store.insert(W_CAUSAL, Tensor::zeros(&[self.causal_dim, self.num_classes]))?;
        store.insert(W_PSI, Tensor::zeros(&[self.spurious_dim, self.repr_dim]))?;
        self.q.init(store, rng)
    }

    pub fn bind<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundCritic<'t>> {
        Ok(BoundCritic {
            w_causal: store.bind(tape, W_CAUSAL)?,
            w_psi: store.bind(tape, W_PSI)?,
            q: self.q.bind(store, tape)?,
        })
    }

    pub fn bind_frozen<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundCritic<'t>> {
        Ok(BoundCritic {
            w_causal: store.bind_frozen(tape, W_CAUSAL)?,
            w_psi: store.bind_frozen(tape, W_PSI)?,
            q: self.q.bind_frozen(store, tape)?,
        })
    }
}

/// In-batch permutations used as product-of-marginals samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarginalDraws {
    /// Labels paired with `z^c` in the causal term.
    pub causal_labels: Vec<usize>,
    /// Labels paired with `z^s` in `Î(z^s; y)`.
    pub spurious_labels: Vec<usize>,
    /// Rows of `z` paired with `z^s` in `Î(z^s; z)`.
    pub repr_rows: Vec<usize>,
}

impl MarginalDraws {
    /// Three derangements, drawn in field order.
    pub fn sample(n: usize, rng: &mut Rng) -> Result<Self> {
        require_pairs(n)?;
        Ok(Self {
            causal_labels: rng.derangement(n),
            spurious_labels: rng.derangement(n),
            repr_rows: rng.derangement(n),
        })
    }
}

fn require_pairs(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "mutual-information estimates need a batch of at least 2, got {n}"
        )));
    }
    Ok(())
}

fn check_labels(labels: &[usize], rows: usize, num_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape("labels", &[labels.len()], &[rows]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::IndexOutOfRange { index: bad, len: num_classes });
    }
    Ok(())
}

fn one_hot(labels: impl Iterator<Item = usize>, rows: usize, classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[rows, classes]);
    for (i, y) in labels.enumerate() {
        t.data_mut()[i * classes + y] = 1.0;
    }
    t
}

fn permuted(labels: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&j| labels[j]).collect()
}

/// Donsker–Varadhan value `mean(joint) − log mean exp(neg)`.
fn dv_bound<'t>(joint: Var<'t>, neg: Var<'t>) -> Result<Var<'t>> {
    joint.mean_all()?.sub(neg.log_mean_exp()?)
}

/// `ℒ^c_MI` with explicit negative pairing `y_{perm[i]}`.
pub fn infonce_causal_loss_with<'t>(
    feats: &DisentangledFeatures<'t>,
    labels: &[usize],
    critic: &BoundCritic<'t>,
    perm: &[usize],
) -> Result<Var<'t>> {
    let n = feats.rows();
    require_pairs(n)?;
    let classes = critic.w_causal.shape()[1];
    check_labels(labels, n, classes)?;
    let tape = feats.z.tape();
    let scores = feats.z_c.matmul(critic.w_causal)?;
    let y = tape.constant(one_hot(labels.iter().copied(), n, classes));
    let y_neg = tape.constant(one_hot(permuted(labels, perm).into_iter(), n, classes));
    let joint = scores.mul(y)?.sum(1)?;
    let neg = scores.mul(y_neg)?.sum(1)?;
    dv_bound(joint, neg)?.neg()
}

pub fn infonce_causal_loss<'t>(
    feats: &DisentangledFeatures<'t>,
    labels: &[usize],
    critic: &BoundCritic<'t>,
    rng: &mut Rng,
) -> Result<Var<'t>> {
    require_pairs(feats.rows())?;
    let perm = rng.derangement(feats.rows());
    infonce_causal_loss_with(feats, labels, critic, &perm)
}

#[derive(Clone, Copy, Debug)]
pub struct SpuriousTerms<'t> {
    /// Variational estimate of `I(z^s; y)`.
    pub label_mi: Var<'t>,
    /// Bilinear estimate of `I(z^s; z)`.
    pub repr_mi: Var<'t>,
    /// `label_mi − β · repr_mi`.
    pub loss: Var<'t>,
}

pub fn vib_spurious_loss_with<'t>(
    feats: &DisentangledFeatures<'t>,
    labels: &[usize],
    critic: &BoundCritic<'t>,
    beta: Real,
    draws: &MarginalDraws,
) -> Result<SpuriousTerms<'t>> {
    let n = feats.rows();
    require_pairs(n)?;
    check_labels(labels, n, critic.q.w.shape()[1])?;
    let logits = critic.q.forward(feats.z_s)?;
    // log q(y|z^s) = −nll; the estimate is mean over joint minus mean over shuffled.
    let nll_joint = logits.nll_log_softmax(labels)?.mean_all()?;
    let nll_shuffled = logits
        .nll_log_softmax(&permuted(labels, &draws.spurious_labels))?
        .mean_all()?;
    let label_mi = nll_shuffled.sub(nll_joint)?;

    let proj = feats.z_s.matmul(critic.w_psi)?;
    let joint = proj.mul(feats.z)?.sum(1)?;
    let neg = proj.mul(feats.z.gather_rows(&draws.repr_rows)?)?.sum(1)?;
    let repr_mi = dv_bound(joint, neg)?;

    let loss = label_mi.sub(repr_mi.scale(beta)?)?;
    Ok(SpuriousTerms { label_mi, repr_mi, loss })
}

pub fn vib_spurious_loss<'t>(
    feats: &DisentangledFeatures<'t>,
    labels: &[usize],
    critic: &BoundCritic<'t>,
    cfg: &DisentangleConfig,
    rng: &mut Rng,
) -> Result<SpuriousTerms<'t>> {
    require_pairs(feats.rows())?;
    let draws = MarginalDraws {
        causal_labels: Vec::new(),
        spurious_labels: rng.derangement(feats.rows()),
        repr_rows: rng.derangement(feats.rows()),
    };
    vib_spurious_loss_with(feats, labels, critic, cfg.beta, &draws)
}

#[derive(Clone, Copy, Debug)]
pub struct DisTerms<'t> {
    pub causal: Var<'t>,
    pub spurious: SpuriousTerms<'t>,
    pub total: Var<'t>,
}

pub fn dis_loss_with<'t>(
    feats: &DisentangledFeatures<'t>,
    labels: &[usize],
    critic: &BoundCritic<'t>,
    beta: Real,
    draws: &MarginalDraws,
) -> Result<DisTerms<'t>> {
    let causal = infonce_causal_loss_with(feats, labels, critic, &draws.causal_labels)?;
    let spurious = vib_spurious_loss_with(feats, labels, critic, beta, draws)?;
    let total = causal.add(spurious.loss)?;
    Ok(DisTerms { causal, spurious, total })
}

/// `ℒ_dis = ℒ^c_MI + ℒ^s_MI`, with permutations drawn by
/// [`MarginalDraws::sample`].
pub fn dis_loss<'t>(
    feats: &DisentangledFeatures<'t>,
    labels: &[usize],
    critic: &BoundCritic<'t>,
    cfg: &DisentangleConfig,
    rng: &mut Rng,
) -> Result<DisTerms<'t>> {
    let draws = MarginalDraws::sample(feats.rows(), rng)?;
    dis_loss_with(feats, labels, critic, cfg.beta, &draws)
}

/// Estimator values seen by one critic step, before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticReport {
    /// Donsker–Varadhan lower bound on `I(z^c; y)`.
    pub causal_mi: Real,
    pub spurious_label_mi: Real,
    pub spurious_repr_mi: Real,
    /// Cross-entropy of `q(y | z^s)` on joint pairs.
    pub q_cross_entropy: Real,
}

/// One Adam step on the critic: ascend both Donsker–Varadhan bounds in
/// `W`/`W_ψ` and descend the cross-entropy of `q`. Features are constants.
pub fn critic_fit_step(
    feats: &FeatureSnapshot,
    labels: &[usize],
    spec: &CriticParams,
    store: &mut ParamStore,
    rng: &mut Rng,
    lr: Real,
) -> Result<CriticReport> {
    let n = feats.rows();
    let draws = MarginalDraws::sample(n, rng)?;
    let tape = Tape::new();
    let f = feats.constants(&tape);
    let critic = spec.bind(store, &tape)?;
    let causal = infonce_causal_loss_with(&f, labels, &critic, &draws.causal_labels)?;
    let spurious = vib_spurious_loss_with(&f, labels, &critic, 0.0, &draws)?;
    let q_ce = critic.q.forward(f.z_s)?.nll_log_softmax(labels)?.mean_all()?;
    let objective = causal.sub(spurious.repr_mi)?.add(q_ce)?;
    if !objective.item().is_finite() {
        return Err(Error::NonFinite("critic objective".into()));
    }
    objective.backward()?;
    store.collect_grads(&tape);
    store.adam_step(lr)?;
    Ok(CriticReport {
        causal_mi: -causal.item(),
        spurious_label_mi: spurious.label_mi.item(),
        spurious_repr_mi: spurious.repr_mi.item(),
        q_cross_entropy: q_ce.item(),
    })
}

/// Evaluates the three estimators on `feats` without touching the critic.
pub fn estimate_mi(
    feats: &FeatureSnapshot,
    labels: &[usize],
    spec: &CriticParams,
    store: &ParamStore,
    rng: &mut Rng,
) -> Result<CriticReport> {
    let draws = MarginalDraws::sample(feats.rows(), rng)?;
    let tape = Tape::new();
    let f = feats.constants(&tape);
    let critic = spec.bind_frozen(store, &tape)?;
    let causal = infonce_causal_loss_with(&f, labels, &critic, &draws.causal_labels)?;
    let spurious = vib_spurious_loss_with(&f, labels, &critic, 0.0, &draws)?;
    let q_ce = critic.q.forward(f.z_s)?.nll_log_softmax(labels)?.mean_all()?;
    Ok(CriticReport {
        causal_mi: -causal.item(),
        spurious_label_mi: spurious.label_mi.item(),
        spurious_repr_mi: spurious.repr_mi.item(),
        q_cross_entropy: q_ce.item(),
    })
}

/// Frobenius norm of the population cross-covariance between the columns of
/// `z_c` and `z_s`.
pub fn covariance_diagnostic(z_c: &Tensor, z_s: &Tensor) -> Result<Real> {
    let n = z_c.rows();
    require_pairs(n)?;
    if z_s.rows() != n {
        return Err(Error::shape("covariance_diagnostic", z_c.shape(), z_s.shape()));
    }
    let centred = |t: &Tensor| -> Vec<Real> {
        let m = t.cols();
        let mut mean = vec![0.0; m];
        for r in 0..n {
            for (acc, v) in mean.iter_mut().zip(t.row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as Real);
        t.data()
            .iter()
            .enumerate()
            .map(|(i, v)| v - mean[i % m])
            .collect()
    };
    let (a, b) = (centred(z_c), centred(z_s));
    let (p, q) = (z_c.cols(), z_s.cols());
    let mut cov = vec![0.0 as Real; p * q];
    for r in 0..n {
        let (ar, br) = (&a[r * p..(r + 1) * p], &b[r * q..(r + 1) * q]);
        for (i, &x) in ar.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in br.iter().enumerate() {
                cov[i * q + j] += x * y;
            }
        }
    }
    let scale = 1.0 / n as Real;
    Ok(cov.iter().map(|c| (c * scale).powi(2)).sum::<Real>().sqrt())
}
