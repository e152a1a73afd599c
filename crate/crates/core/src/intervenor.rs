//! Generator `G(z^c, z^s)` and cross-domain spurious swapping.

use serde::{Deserialize, Serialize};

use crate::disentangler::DisentangledFeatures;
use crate::encoder::{BoundLinear, LinearSpec};
use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Real, Rng, Tape, Var};

/// Two-layer perceptron `(causal ‖ spurious) → hidden → repr` with ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub causal_dim: usize,
    pub spurious_dim: usize,
    pub layer1: LinearSpec,
    pub layer2: LinearSpec,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGenerator<'t> {
    pub causal_dim: usize,
    pub spurious_dim: usize,
    pub layer1: BoundLinear<'t>,
    pub layer2: BoundLinear<'t>,
}

impl GeneratorParams {
    pub fn new(causal_dim: usize, spurious_dim: usize, hidden: usize, repr_dim: usize) -> Self {
        Self {
            causal_dim,
            spurious_dim,
            layer1: LinearSpec::new("gen.l1", causal_dim + spurious_dim, hidden),
            layer2: LinearSpec::new("gen.l2", hidden, repr_dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.layer1.init(store, rng)?;
        self.layer2.init(store, rng)
    }

    pub fn bind<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundGenerator<'t>> {
        Ok(BoundGenerator {
            causal_dim: self.causal_dim,
            spurious_dim: self.spurious_dim,
            layer1: self.layer1.bind(store, tape)?,
            layer2: self.layer2.bind(store, tape)?,
        })
    }

    pub fn bind_frozen<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundGenerator<'t>> {
        Ok(BoundGenerator {
            causal_dim: self.causal_dim,
            spurious_dim: self.spurious_dim,
            layer1: self.layer1.bind_frozen(store, tape)?,
            layer2: self.layer2.bind_frozen(store, tape)?,
        })
    }
}

pub fn generate<'t>(z_c: Var<'t>, z_s: Var<'t>, g: &BoundGenerator<'t>) -> Result<Var<'t>> {
    let (cs, ss) = (z_c.shape(), z_s.shape());
    if cs.len() != 2 || ss.len() != 2 || cs[0] != ss[0] || cs[1] != g.causal_dim || ss[1] != g.spurious_dim {
        return Err(Error::shape("generate", &cs, &ss));
    }
    let h = g.layer1.forward(z_c.concat(z_s)?)?.relu()?;
    g.layer2.forward(h)
}

/// `ℒ_ge = mean_i ‖z_i − G(z^c_i, z^s_i)‖²`.
pub fn reconstruction_loss<'t>(feats: &DisentangledFeatures<'t>, g: &BoundGenerator<'t>) -> Result<Var<'t>> {
    let out = generate(feats.z_c, feats.z_s, g)?;
    feats.z.row_sq_dist(out)?.mean_all()
}

/// Pairs `(i, k)`: source row `i` keeps its causal part and takes the
/// spurious part of target row `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapPlan {
    pub pairs: Vec<(usize, usize)>,
}

impl SwapPlan {
    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        for &(i, k) in &self.pairs {
            if i >= n_source {
                return Err(Error::IndexOutOfRange { index: i, len: n_source });
            }
            if k >= n_target {
                return Err(Error::IndexOutOfRange { index: k, len: n_target });
            }
        }
        Ok(())
    }
}

/// Each source index, in order, with a target index drawn uniformly with
/// replacement.
pub fn build_swap_plan(n_source: usize, n_target: usize, rng: &mut Rng) -> Result<SwapPlan> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::InvalidInput(format!(
            "swap plan needs non-empty batches, got {n_source} source and {n_target} target rows"
        )));
    }
    Ok(SwapPlan {
        pairs: (0..n_source).map(|i| (i, rng.below(n_target))).collect(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvarianceConfig {
    /// Also add the target-causal + source-spurious term.
    pub symmetric_swap: bool,
    /// Detach `z_i` when it is the regression target.
    pub stop_grad_target: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct InvarianceTerms<'t> {
    /// `ℒ_re`: reconstruction over the union of both batches.
    pub reconstruction: Var<'t>,
    pub intervention: Var<'t>,
    pub symmetric: Option<Var<'t>>,
    pub total: Var<'t>,
}

fn swap_term<'t>(
    keep: &DisentangledFeatures<'t>,
    donor: &DisentangledFeatures<'t>,
    keep_idx: &[usize],
    donor_idx: &[usize],
    g: &BoundGenerator<'t>,
    stop_grad: bool,
) -> Result<Var<'t>> {
    let out = generate(keep.z_c.gather_rows(keep_idx)?, donor.z_s.gather_rows(donor_idx)?, g)?;
    let mut target = keep.z.gather_rows(keep_idx)?;
    if stop_grad {
        target = target.detach();
    }
    out.row_sq_dist(target)?.mean_all()
}

/// `ℒ_inv = ℒ_re + mean_(i,k) ‖G(z^c_i, z^s_k) − z_i‖²`.
pub fn invariance_loss<'t>(
    src: &DisentangledFeatures<'t>,
    tgt: &DisentangledFeatures<'t>,
    plan: &SwapPlan,
    g: &BoundGenerator<'t>,
    cfg: InvarianceConfig,
) -> Result<InvarianceTerms<'t>> {
    let (ns, nt) = (src.rows(), tgt.rows());
    plan.validate(ns, nt)?;
    if plan.pairs.is_empty() {
        return Err(Error::InvalidInput("empty swap plan".into()));
    }
    let residual_sum = |f: &DisentangledFeatures<'t>| -> Result<Var<'t>> {
        f.z.row_sq_dist(generate(f.z_c, f.z_s, g)?)?.sum_all()
    };
    let reconstruction = residual_sum(src)?
        .add(residual_sum(tgt)?)?
        .scale(1.0 / (ns + nt) as Real)?;
    let (si, tk) = (plan.sources(), plan.targets());
    let intervention = swap_term(src, tgt, &si, &tk, g, cfg.stop_grad_target)?;
    let mut total = reconstruction.add(intervention)?;
    let symmetric = if cfg.symmetric_swap {
        let term = swap_term(tgt, src, &tk, &si, g, cfg.stop_grad_target)?;
        total = total.add(term)?;
        Some(term)
    } else {
        None
    };
    Ok(InvarianceTerms { reconstruction, intervention, symmetric, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{finite_diff_check, Tensor};

    fn zero_generator(tape: &Tape, c: usize, s: usize, h: usize, out: usize) -> BoundGenerator<'_> {
        BoundGenerator {
            causal_dim: c,
            spurious_dim: s,
            layer1: BoundLinear { w: tape.constant(Tensor::zeros(&[c + s, h])), b: tape.constant(Tensor::zeros(&[h])) },
            layer2: BoundLinear { w: tape.constant(Tensor::zeros(&[h, out])), b: tape.constant(Tensor::zeros(&[out])) },
        }
    }

    /// `G(z^c, z^s) = z^c ‖ 0`, insensitive to `z^s`: layer 1 copies `z^c`
    /// through ReLU split into positive and negative parts.
    fn causal_copy_generator(tape: &Tape, c: usize, s: usize) -> BoundGenerator<'_> {
        let h = 2 * c;
        let mut w1 = Tensor::zeros(&[c + s, h]);
        let mut w2 = Tensor::zeros(&[h, c + s]);
        for k in 0..c {
            w1.data_mut()[k * h + k] = 1.0;
            w1.data_mut()[k * h + c + k] = -1.0;
            w2.data_mut()[k * (c + s) + k] = 1.0;
            w2.data_mut()[(c + k) * (c + s) + k] = -1.0;
        }
        BoundGenerator {
            causal_dim: c,
            spurious_dim: s,
            layer1: BoundLinear { w: tape.constant(w1), b: tape.constant(Tensor::zeros(&[h])) },
            layer2: BoundLinear { w: tape.constant(w2), b: tape.constant(Tensor::zeros(&[c + s])) },
        }
    }

    fn feats<'t>(tape: &'t Tape, z: Tensor, z_c: Tensor, z_s: Tensor) -> DisentangledFeatures<'t> {
        DisentangledFeatures { z: tape.constant(z), z_c: tape.constant(z_c), z_s: tape.constant(z_s) }
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let tape = Tape::new();
        let g = zero_generator(&tape, 2, 2, 3, 4);
        let mut rng = Rng::new(0);
        let out = generate(tape.constant(rng.normal_tensor(&[5, 2], 1.0)), tape.constant(rng.normal_tensor(&[5, 2], 1.0)), &g).unwrap();
        assert_eq!(out.shape(), vec![5, 4]);
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generate_is_rowwise() {
        let mut rng = Rng::new(1);
        let tape = Tape::new();
        let g = BoundGenerator {
            causal_dim: 2,
            spurious_dim: 3,
            layer1: BoundLinear { w: tape.constant(rng.glorot(5, 6)), b: tape.constant(rng.normal_tensor(&[6], 0.1)) },
            layer2: BoundLinear { w: tape.constant(rng.glorot(6, 4)), b: tape.constant(rng.normal_tensor(&[4], 0.1)) },
        };
        let (zc, zs) = (rng.normal_tensor(&[4, 2], 1.0), rng.normal_tensor(&[4, 3], 1.0));
        let all = generate(tape.constant(zc.clone()), tape.constant(zs.clone()), &g).unwrap().value();
        let one = generate(
            tape.constant(zc.select_rows(&[1]).unwrap()),
            tape.constant(zs.select_rows(&[1]).unwrap()),
            &g,
        )
        .unwrap()
        .value();
        assert_eq!(one.data(), all.row(1));
        assert!(generate(tape.constant(zc), tape.constant(Tensor::zeros(&[4, 2])), &g).is_err());
    }

    #[test]
    fn reconstruction_of_unit_vector_against_zero_output() {
        let tape = Tape::new();
        let mut z = Tensor::zeros(&[1, 4]);
        z.data_mut()[0] = 1.0;
        let f = feats(&tape, z, Tensor::zeros(&[1, 2]), Tensor::zeros(&[1, 2]));
        let loss = reconstruction_loss(&f, &zero_generator(&tape, 2, 2, 3, 4)).unwrap();
        assert_eq!(loss.item(), 1.0);
    }

    #[test]
    fn perfect_reconstruction_and_identity_swap_are_zero() {
        let tape = Tape::new();
        let mut rng = Rng::new(2);
        let zc = rng.normal_tensor(&[3, 2], 1.0);
        let zs = rng.normal_tensor(&[3, 2], 1.0);
        // z = z^c ‖ 0, which the copy generator reproduces exactly.
        let z = Tensor::from_rows(&zc.to_rows().into_iter().map(|mut r| { r.extend([0.0, 0.0]); r }).collect::<Vec<_>>()).unwrap();
        let f = feats(&tape, z, zc, zs);
        let g = causal_copy_generator(&tape, 2, 2);
        assert_eq!(reconstruction_loss(&f, &g).unwrap().item(), 0.0);
        let plan = SwapPlan { pairs: vec![(0, 0), (1, 1), (2, 2)] };
        let t = invariance_loss(&f, &f, &plan, &g, InvarianceConfig::default()).unwrap();
        assert_eq!(t.total.item(), 0.0);
    }

    #[test]
    fn two_by_two_hand_evaluation() {
        // Zero generator: every term is ‖z_i‖².
        let tape = Tape::new();
        let src = feats(&tape, Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(), Tensor::zeros(&[2, 1]), Tensor::zeros(&[2, 1]));
        let tgt = feats(&tape, Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 0.0]]).unwrap(), Tensor::zeros(&[2, 1]), Tensor::zeros(&[2, 1]));
        let g = zero_generator(&tape, 1, 1, 2, 2);
        let plan = SwapPlan { pairs: vec![(0, 1), (1, 0)] };
        let t = invariance_loss(&src, &tgt, &plan, &g, InvarianceConfig::default()).unwrap();
        // ℒ_re = (1 + 4 + 9 + 0) / 4; intervention = (1 + 4) / 2.
        assert_eq!(t.reconstruction.item(), 3.5);
        assert_eq!(t.intervention.item(), 2.5);
        assert_eq!(t.total.item(), 6.0);
        assert!(t.symmetric.is_none());
        let sym = invariance_loss(&src, &tgt, &plan, &g, InvarianceConfig { symmetric_swap: true, ..Default::default() }).unwrap();
        // Symmetric term regresses onto target rows 1 and 0: (0 + 9) / 2.
        assert_eq!(sym.symmetric.unwrap().item(), 4.5);
    }

    #[test]
    fn spurious_insensitive_generator_matches_source_residual() {
        let tape = Tape::new();
        let mut rng = Rng::new(3);
        let src = feats(&tape, rng.normal_tensor(&[5, 4], 1.0), rng.normal_tensor(&[5, 2], 1.0), rng.normal_tensor(&[5, 2], 1.0));
        let tgt = feats(&tape, rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[3, 2], 1.0), rng.normal_tensor(&[3, 2], 1.0));
        let g = causal_copy_generator(&tape, 2, 2);
        let plan = build_swap_plan(5, 3, &mut rng).unwrap();
        let t = invariance_loss(&src, &tgt, &plan, &g, InvarianceConfig::default()).unwrap();
        let residual = reconstruction_loss(&src, &g).unwrap().item();
        assert!((t.intervention.item() - residual).abs() < 1e-12);
    }

    #[test]
    fn swap_plan_contract() {
        let p = build_swap_plan(4, 1, &mut Rng::new(0)).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert_eq!(build_swap_plan(6, 5, &mut Rng::new(8)).unwrap(), build_swap_plan(6, 5, &mut Rng::new(8)).unwrap());
        assert!(build_swap_plan(0, 3, &mut Rng::new(0)).is_err());
        assert!(build_swap_plan(3, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn invariance_gradient_wrt_generator_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let (zs_src, zc_src, z_src) = (rng.normal_tensor(&[4, 2], 1.0), rng.normal_tensor(&[4, 2], 1.0), rng.normal_tensor(&[4, 3], 1.0));
        let (zs_tgt, zc_tgt, z_tgt) = (rng.normal_tensor(&[3, 2], 1.0), rng.normal_tensor(&[3, 2], 1.0), rng.normal_tensor(&[3, 3], 1.0));
        let plan = build_swap_plan(4, 3, &mut rng).unwrap();
        let w2 = rng.glorot(5, 3);
        let b1 = rng.normal_tensor(&[5], 0.5);
        let w1 = rng.glorot(4, 5);
        let report = finite_diff_check(
            |tape, w1| {
                let g = BoundGenerator {
                    causal_dim: 2,
                    spurious_dim: 2,
                    layer1: BoundLinear { w: w1, b: tape.constant(b1.clone()) },
                    layer2: BoundLinear { w: tape.constant(w2.clone()), b: tape.constant(Tensor::zeros(&[3])) },
                };
                let src = feats(tape, z_src.clone(), zc_src.clone(), zs_src.clone());
                let tgt = feats(tape, z_tgt.clone(), zc_tgt.clone(), zs_tgt.clone());
                Ok(invariance_loss(&src, &tgt, &plan, &g, InvarianceConfig { symmetric_swap: true, stop_grad_target: false })?.total)
            },
            &w1,
            1e-3,
        )
        .unwrap();
        assert!(report.passed, "{}", report.max_rel_error);
    }
}
