use std::rc::Rc;

use serde::Serialize;

use super::ops::{Segments, SparseOperator};
use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::Real;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: Real = 1e-5;

/// Entries where both gradients are smaller than this are compared in
/// absolute rather than relative terms.
const ABS_FLOOR: Real = 1e-5;

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: Real,
    pub passed: bool,
    pub analytic: Tensor,
    pub numeric: Tensor,
}

/// Largest elementwise relative disagreement, absolute below a small floor.
pub fn max_rel_error(analytic: &[Real], numeric: &[Real]) -> Real {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR))
        .fold(0.0, Real::max)
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences at `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, tol: Real) -> Result<FiniteDiffReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let eval = |point: &Tensor| -> Result<Real> {
        let tape = Tape::new();
        let v = f(&tape, tape.constant(point.clone()))?.item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("f(x) = {v}")));
        }
        Ok(v)
    };

    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&tape, leaf)?;
    if !out.item().is_finite() {
        return Err(Error::NonFinite(format!("f(x) = {}", out.item())));
    }
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut numeric = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = (plus - minus) / (2.0 * FD_STEP);
    }

    let max_rel_error = max_rel_error(analytic.data(), numeric.data());
    Ok(FiniteDiffReport {
        max_rel_error,
        passed: max_rel_error < tol,
        analytic,
        numeric,
    })
}

/// Worst finite-difference agreement of one op over several random inputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_error: Real,
    pub passed: bool,
}

/// Random input with every entry at least `margin` away from zero.
fn away_from_zero(rng: &mut Rng, shape: &[usize], margin: Real) -> Tensor {
    let mut t = rng.normal_tensor(shape, 1.0);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin } * 2.0;
        }
    }
    t
}

/// `Σ y ⊙ w` for a fixed random `w`, reducing any op output to a scalar.
fn readout<'t>(y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = Rng::new(seed).normal_tensor(y.shape().as_slice(), 1.0);
    y.mul(y.tape().constant(w))?.sum_all()
}

/// Checks every differentiable op on `trials` random inputs (kept away from
/// ReLU kinks and the domain edge of `log`) against central differences.
pub fn op_gradient_suite(seed: u64, trials: usize, tol: Real) -> Result<Vec<OpCheck>> {
    type Case = fn(&mut Rng, u64, Real) -> Result<FiniteDiffReport>;
    let cases: Vec<(&'static str, Case)> = vec![
        ("matmul_lhs", |rng, s, tol| {
            let (x, b) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[4, 2], 1.0));
            finite_diff_check(|t, x| readout(x.matmul(t.constant(b.clone()))?, s), &x, tol)
        }),
        ("matmul_rhs", |rng, s, tol| {
            let (a, x) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[4, 2], 1.0));
            finite_diff_check(|t, x| readout(t.constant(a.clone()).matmul(x)?, s), &x, tol)
        }),
        ("add", |rng, s, tol| {
            let (x, b) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[3, 4], 1.0));
            finite_diff_check(|t, x| readout(t.constant(b.clone()).add(x)?, s), &x, tol)
        }),
        ("add_row_matrix", |rng, s, tol| {
            let (x, b) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[4], 1.0));
            finite_diff_check(|t, x| readout(x.add(t.constant(b.clone()))?, s), &x, tol)
        }),
        ("add_row_bias", |rng, s, tol| {
            let (a, x) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[4], 1.0));
            finite_diff_check(|t, x| readout(t.constant(a.clone()).add(x)?, s), &x, tol)
        }),
        ("sub", |rng, s, tol| {
            let (x, b) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[3, 4], 1.0));
            finite_diff_check(|t, x| readout(t.constant(b.clone()).sub(x)?, s), &x, tol)
        }),
        ("mul", |rng, s, tol| {
            let (x, b) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[3, 4], 1.0));
            finite_diff_check(|t, x| readout(x.mul(t.constant(b.clone()))?, s), &x, tol)
        }),
        ("scale", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.scale(-1.7)?, s), &x, tol)
        }),
        ("shift", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.shift(0.3)?, s), &x, tol)
        }),
        ("relu", |rng, s, tol| {
            let x = away_from_zero(rng, &[3, 4], 1e-2);
            finite_diff_check(|_, x| readout(x.relu()?, s), &x, tol)
        }),
        ("exp", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.exp()?, s), &x, tol)
        }),
        ("log", |rng, s, tol| {
            let mut x = rng.normal_tensor(&[3, 4], 1.0);
            x.data_mut().iter_mut().for_each(|v| *v = 0.5 + v.abs());
            finite_diff_check(|_, x| readout(x.log()?, s), &x, tol)
        }),
        ("sum_axis0", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.sum(0)?, s), &x, tol)
        }),
        ("sum_axis1", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.sum(1)?, s), &x, tol)
        }),
        ("mean_axis0", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.mean(0)?, s), &x, tol)
        }),
        ("mean_axis1", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.mean(1)?, s), &x, tol)
        }),
        ("mean_all", |rng, _, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| x.mul(x)?.mean_all(), &x, tol)
        }),
        ("concat", |rng, s, tol| {
            let (x, b) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[3, 2], 1.0));
            finite_diff_check(|t, x| readout(t.constant(b.clone()).concat(x)?, s), &x, tol)
        }),
        ("slice", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 5], 1.0);
            finite_diff_check(|_, x| readout(x.slice(1, 4)?, s), &x, tol)
        }),
        ("softmax", |rng, s, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| readout(x.softmax()?, s), &x, tol)
        }),
        ("nll_log_softmax", |rng, s, tol| {
            let x = rng.normal_tensor(&[4, 3], 1.0);
            let targets: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
            finite_diff_check(|_, x| readout(x.nll_log_softmax(&targets)?, s), &x, tol)
        }),
        ("row_sq_dist", |rng, s, tol| {
            let (x, b) = (rng.normal_tensor(&[3, 4], 1.0), rng.normal_tensor(&[3, 4], 1.0));
            finite_diff_check(|t, x| readout(x.row_sq_dist(t.constant(b.clone()))?, s), &x, tol)
        }),
        ("propagate", |rng, s, tol| {
            let n = 5;
            let mut triplets: Vec<(usize, usize, Real)> = (0..n).map(|i| (i, i, rng.uniform())).collect();
            for _ in 0..6 {
                triplets.push((rng.below(n), rng.below(n), rng.normal()));
            }
            let op = Rc::new(SparseOperator::from_triplets(n, triplets)?);
            let x = rng.normal_tensor(&[n, 3], 1.0);
            finite_diff_check(|_, x| readout(x.propagate(&op)?, s), &x, tol)
        }),
        ("segment_mean", |rng, s, tol| {
            let seg = Rc::new(Segments::new(vec![0, 0, 1, 2, 2, 2], 3)?);
            let x = rng.normal_tensor(&[6, 3], 1.0);
            finite_diff_check(|_, x| readout(x.segment_mean(&seg)?, s), &x, tol)
        }),
        ("gather_rows", |rng, s, tol| {
            let x = rng.normal_tensor(&[4, 3], 1.0);
            finite_diff_check(|_, x| readout(x.gather_rows(&[2, 0, 2, 3])?, s), &x, tol)
        }),
        ("log_mean_exp", |rng, _, tol| {
            let x = rng.normal_tensor(&[3, 4], 1.0);
            finite_diff_check(|_, x| x.log_mean_exp(), &x, tol)
        }),
    ];
    let root = Rng::new(seed);
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (op, case))| {
            let mut rng = root.stream(k as u64);
            let mut worst: Real = 0.0;
            for trial in 0..trials {
                let report = case(&mut rng, seed ^ ((k * 1000 + trial) as u64), tol)?;
                worst = worst.max(report.max_rel_error);
            }
            Ok(OpCheck { op, trials, max_rel_error: worst, passed: worst < tol })
        })
        .collect()
}
