//! Operation records and their local derivative rules.

use std::rc::Rc;

use super::kernels;
use super::tensor::Tensor;
use super::Real;
use crate::error::{Error, Result};

/// Constant sparse linear operator in CSR form, applied to the rows of a
/// dense matrix. Used for normalized graph propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<Real>,
}

impl SparseOperator {
    /// Builds an operator from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, Real)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<Real> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::IndexOutOfRange {
                    index: r.max(c),
                    len: n,
                });
            }
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            n,
            indptr,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry lookup; linear in the row length.
    pub fn get(&self, r: usize, c: usize) -> Real {
        (self.indptr[r]..self.indptr[r + 1])
            .find(|&k| self.indices[k] == c)
            .map_or(0.0, |k| self.values[k])
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n, self.n]);
        let n = self.n;
        let data = t.data_mut();
        for r in 0..n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                data[r * n + self.indices[k]] += self.values[k];
            }
        }
        t
    }

    fn apply(&self, x: &[Real], cols: usize) -> Vec<Real> {
        let mut y = vec![0.0; self.n * cols];
        for r in 0..self.n {
            let out = &mut y[r * cols..(r + 1) * cols];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let w = self.values[k];
                let src = &x[self.indices[k] * cols..(self.indices[k] + 1) * cols];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        y
    }

    fn apply_transpose(&self, g: &[Real], cols: usize) -> Vec<Real> {
        let mut y = vec![0.0; self.n * cols];
        for r in 0..self.n {
            let src = &g[r * cols..(r + 1) * cols];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let w = self.values[k];
                let c = self.indices[k];
                for (o, &s) in y[c * cols..(c + 1) * cols].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        y
    }
}

/// Assignment of rows to contiguous-or-not segments, used for per-graph mean
/// pooling over stacked node rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    membership: Vec<usize>,
    counts: Vec<usize>,
}

impl Segments {
    pub fn new(membership: Vec<usize>, num_segments: usize) -> Result<Self> {
        let mut counts = vec![0usize; num_segments];
        for &m in &membership {
            if m >= num_segments {
                return Err(Error::IndexOutOfRange {
                    index: m,
                    len: num_segments,
                });
            }
            counts[m] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidInput(format!("segment {empty} is empty")));
        }
        Ok(Self { membership, counts })
    }

    pub fn num_segments(&self) -> usize {
        self.counts.len()
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, Real),
    Shift(usize, Real),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sum(usize, Option<usize>),
    Mean(usize, Option<usize>),
    Concat(usize, usize),
    Slice(usize, usize, usize),
    Softmax(usize),
    NllLogSoftmax(usize, Rc<[usize]>),
    RowSqDist(usize, usize),
    Propagate(usize, Rc<SparseOperator>),
    SegmentMean(usize, Rc<Segments>),
    GatherRows(usize, Rc<[usize]>),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | AddRow(a, b) | Sub(a, b) | Mul(a, b) | Concat(a, b)
            | RowSqDist(a, b) => vec![a, b],
            Scale(a, _) | Shift(a, _) | Relu(a) | Exp(a) | Log(a) | Sum(a, _) | Mean(a, _)
            | Slice(a, _, _) | Softmax(a) => vec![a],
            NllLogSoftmax(a, _) | Propagate(a, _) | SegmentMean(a, _) | GatherRows(a, _) => {
                vec![a]
            }
        }
    }
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::UnsupportedShape {
            op,
            shape: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(Real, Real) -> Real) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape preserved")
}

fn map(a: &Tensor, f: impl Fn(Real) -> Real) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape(), data).expect("shape preserved")
}

fn reduced_shape(op: &'static str, shape: &[usize], axis: Option<usize>) -> Result<Vec<usize>> {
    match (axis, shape.len()) {
        (None, _) => Ok(vec![]),
        (Some(0), 1) => Ok(vec![]),
        (Some(0), 2) => Ok(vec![shape[1]]),
        (Some(1), 2) => Ok(vec![shape[0]]),
        _ => Err(Error::UnsupportedShape {
            op,
            shape: shape.to_vec(),
        }),
    }
}

fn sum_axis(t: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    let out_shape = reduced_shape("sum", t.shape(), axis)?;
    let data = match (axis, t.rank()) {
        (None, _) | (Some(0), 1) => vec![t.data().iter().sum()],
        (Some(0), _) => {
            let (n, m) = (t.shape()[0], t.shape()[1]);
            let mut out = vec![0.0; m];
            for r in 0..n {
                for (o, v) in out.iter_mut().zip(&t.data()[r * m..(r + 1) * m]) {
                    *o += v;
                }
            }
            out
        }
        _ => (0..t.shape()[0]).map(|r| t.row(r).iter().sum()).collect(),
    };
    Tensor::new(&out_shape, data)
}

fn reduction_count(shape: &[usize], axis: Option<usize>) -> usize {
    match axis {
        None => shape.iter().product(),
        Some(a) => shape[a],
    }
}

/// Broadcasts a reduced gradient back to the input shape.
fn expand_axis(g: &[Real], shape: &[usize], axis: Option<usize>, scale: Real) -> Vec<Real> {
    let numel: usize = shape.iter().product();
    match (axis, shape.len()) {
        (None, _) | (Some(0), 1) => vec![g[0] * scale; numel],
        (Some(0), _) => {
            let m = shape[1];
            (0..numel).map(|i| g[i % m] * scale).collect()
        }
        _ => {
            let m = shape[1];
            (0..numel).map(|i| g[i / m] * scale).collect()
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(x.shape(), out).expect("shape preserved")
}

/// Forward evaluation. `vals` resolves parent node ids to their values.
pub(crate) fn forward<'a>(op: &Op, vals: impl Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    use Op::*;
    match op {
        Leaf => unreachable!("leaves carry their own value"),
        MatMul(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            let (n, k) = require_rank2("matmul", a)?;
            let (k2, m) = require_rank2("matmul", b)?;
            if k != k2 {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            Tensor::new(&[n, m], kernels::matmul(a.data(), b.data(), n, k, m))
        }
        Add(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            same_shape("add", a, b)?;
            Ok(zip_map(a, b, |x, y| x + y))
        }
        AddRow(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            let (_, m) = require_rank2("add_row", a)?;
            if b.numel() != m || b.rank() > 2 || (b.rank() == 2 && b.shape()[0] != 1) {
                return Err(Error::shape("add_row", a.shape(), b.shape()));
            }
            let bias = b.data();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + bias[i % m])
                .collect();
            Tensor::new(a.shape(), data)
        }
        Sub(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            same_shape("sub", a, b)?;
            Ok(zip_map(a, b, |x, y| x - y))
        }
        Mul(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            same_shape("mul", a, b)?;
            Ok(zip_map(a, b, |x, y| x * y))
        }
        Scale(a, k) => Ok(map(vals(*a), |x| x * k)),
        Shift(a, k) => Ok(map(vals(*a), |x| x + k)),
        Relu(a) => Ok(map(vals(*a), |x| if x > 0.0 { x } else { 0.0 })),
        Exp(a) => Ok(map(vals(*a), Real::exp)),
        Log(a) => {
            let a = vals(*a);
            if let Some((i, &v)) = a.data().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::NonPositiveLog {
                    index: i,
                    value: v as f64,
                });
            }
            Ok(map(a, Real::ln))
        }
        Sum(a, axis) => sum_axis(vals(*a), *axis),
        Mean(a, axis) => {
            let a = vals(*a);
            let n = reduction_count(a.shape(), *axis) as Real;
            let s = sum_axis(a, *axis)?;
            Ok(map(&s, |x| x / n))
        }
        Concat(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            if a.rank() != b.rank() || a.rank() == 0 || a.rows() != b.rows() {
                return Err(Error::shape("concat", a.shape(), b.shape()));
            }
            if a.rank() > 2 {
                return Err(Error::UnsupportedShape {
                    op: "concat",
                    shape: a.shape().to_vec(),
                });
            }
            let (ca, cb) = (a.cols(), b.cols());
            let mut data = Vec::with_capacity(a.numel() + b.numel());
            for r in 0..a.rows() {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().expect("rank >= 1") = ca + cb;
            Tensor::new(&shape, data)
        }
        Slice(a, start, end) => {
            let a = vals(*a);
            if a.rank() == 0 || a.rank() > 2 || start >= end || *end > a.cols() {
                return Err(Error::UnsupportedShape {
                    op: "slice",
                    shape: a.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(a.rows() * (end - start));
            for r in 0..a.rows() {
                data.extend_from_slice(&a.row(r)[*start..*end]);
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().expect("rank >= 1") = end - start;
            Tensor::new(&shape, data)
        }
        Softmax(a) => {
            let a = vals(*a);
            if a.rank() == 0 || a.rank() > 2 {
                return Err(Error::UnsupportedShape {
                    op: "softmax",
                    shape: a.shape().to_vec(),
                });
            }
            Ok(softmax_rows(a))
        }
        NllLogSoftmax(a, targets) => {
            let a = vals(*a);
            let (n, c) = require_rank2("nll_log_softmax", a)?;
            if targets.len() != n {
                return Err(Error::shape("nll_log_softmax", a.shape(), &[targets.len()]));
            }
            let mut out = Vec::with_capacity(n);
            for (r, &t) in targets.iter().enumerate() {
                if t >= c {
                    return Err(Error::IndexOutOfRange { index: t, len: c });
                }
                let row = a.row(r);
                let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<Real>().ln();
                out.push(lse - row[t]);
            }
            Ok(Tensor::vector(out))
        }
        RowSqDist(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            same_shape("row_sq_dist", a, b)?;
            let (n, m) = require_rank2("row_sq_dist", a)?;
            let data = (0..n)
                .map(|r| {
                    a.data()[r * m..(r + 1) * m]
                        .iter()
                        .zip(&b.data()[r * m..(r + 1) * m])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum()
                })
                .collect();
            Ok(Tensor::vector(data))
        }
        Propagate(a, sp) => {
            let a = vals(*a);
            let (n, m) = require_rank2("propagate", a)?;
            if n != sp.n {
                return Err(Error::shape("propagate", &[sp.n, sp.n], a.shape()));
            }
            Tensor::new(&[n, m], sp.apply(a.data(), m))
        }
        SegmentMean(a, seg) => {
            let a = vals(*a);
            let (n, m) = require_rank2("segment_mean", a)?;
            if n != seg.membership.len() {
                return Err(Error::shape("segment_mean", a.shape(), &[seg.membership.len()]));
            }
            let mut out = vec![0.0; seg.num_segments() * m];
            for (r, &g) in seg.membership.iter().enumerate() {
                for (o, v) in out[g * m..(g + 1) * m].iter_mut().zip(a.row(r)) {
                    *o += v;
                }
            }
            for (g, &cnt) in seg.counts.iter().enumerate() {
                for o in &mut out[g * m..(g + 1) * m] {
                    *o /= cnt as Real;
                }
            }
            Tensor::new(&[seg.num_segments(), m], out)
        }
        GatherRows(a, idx) => vals(*a).select_rows(idx),
    }
}

/// Local vector-Jacobian products. Returns one gradient contribution per
/// parent in `Op::parents` order; `None` where `needs[i]` is false.
pub(crate) fn backward<'a>(
    op: &Op,
    out: &Tensor,
    g: &[Real],
    vals: impl Fn(usize) -> &'a Tensor,
    needs: &[bool],
) -> Vec<Option<Vec<Real>>> {
    use Op::*;
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match op {
        Leaf => vec![],
        MatMul(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = want(0).then(|| kernels::matmul_nt(g, b.data(), n, m, k));
            let db = want(1).then(|| kernels::matmul_tn(a.data(), g, n, k, m));
            vec![da, db]
        }
        Add(_, _) => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
        AddRow(_, b) => {
            let m = vals(*b).numel();
            let db = want(1).then(|| {
                let mut acc = vec![0.0; m];
                for (i, v) in g.iter().enumerate() {
                    acc[i % m] += v;
                }
                acc
            });
            vec![want(0).then(|| g.to_vec()), db]
        }
        Sub(_, _) => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| g.iter().map(|v| -v).collect()),
        ],
        Mul(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            vec![
                want(0).then(|| g.iter().zip(b.data()).map(|(x, y)| x * y).collect()),
                want(1).then(|| g.iter().zip(a.data()).map(|(x, y)| x * y).collect()),
            ]
        }
        Scale(_, k) => vec![Some(g.iter().map(|v| v * k).collect())],
        Shift(_, _) => vec![Some(g.to_vec())],
        Relu(a) => vec![Some(
            g.iter()
                .zip(vals(*a).data())
                .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                .collect(),
        )],
        Exp(_) => vec![Some(g.iter().zip(out.data()).map(|(x, y)| x * y).collect())],
        Log(a) => vec![Some(g.iter().zip(vals(*a).data()).map(|(x, y)| x / y).collect())],
        Sum(a, axis) => vec![Some(expand_axis(g, vals(*a).shape(), *axis, 1.0))],
        Mean(a, axis) => {
            let shape = vals(*a).shape();
            let n = reduction_count(shape, *axis) as Real;
            vec![Some(expand_axis(g, shape, *axis, 1.0 / n))]
        }
        Concat(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            let (ca, cb) = (a.cols(), b.cols());
            let rows = a.rows();
            let mut ga = Vec::with_capacity(a.numel());
            let mut gb = Vec::with_capacity(b.numel());
            for r in 0..rows {
                let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            vec![want(0).then_some(ga), want(1).then_some(gb)]
        }
        Slice(a, start, end) => {
            let a = vals(*a);
            let c = a.cols();
            let w = end - start;
            let mut ga = vec![0.0; a.numel()];
            for r in 0..a.rows() {
                ga[r * c + start..r * c + end].copy_from_slice(&g[r * w..(r + 1) * w]);
            }
            vec![Some(ga)]
        }
        Softmax(_) => {
            let c = out.cols();
            let mut ga = vec![0.0; out.numel()];
            for ((gr, yr), dr) in g.chunks(c).zip(out.data().chunks(c)).zip(ga.chunks_mut(c)) {
                let dot: Real = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                for ((d, gv), y) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = y * (gv - dot);
                }
            }
            vec![Some(ga)]
        }
        NllLogSoftmax(a, targets) => {
            let a = vals(*a);
            let p = softmax_rows(a);
            let c = a.cols();
            let mut ga = p.into_data();
            for (r, &t) in targets.iter().enumerate() {
                ga[r * c + t] -= 1.0;
                for v in &mut ga[r * c..(r + 1) * c] {
                    *v *= g[r];
                }
            }
            vec![Some(ga)]
        }
        RowSqDist(a, b) => {
            let (a, b) = (vals(*a), vals(*b));
            let m = a.cols();
            let da: Vec<Real> = a
                .data()
                .iter()
                .zip(b.data())
                .enumerate()
                .map(|(i, (x, y))| 2.0 * g[i / m] * (x - y))
                .collect();
            let db = want(1).then(|| da.iter().map(|v| -v).collect());
            vec![want(0).then_some(da), db]
        }
        Propagate(_, sp) => vec![Some(sp.apply_transpose(g, out.cols()))],
        SegmentMean(a, seg) => {
            let a = vals(*a);
            let m = a.cols();
            let mut ga = vec![0.0; a.numel()];
            for (r, &s) in seg.membership.iter().enumerate() {
                let inv = 1.0 / seg.counts[s] as Real;
                for (d, gv) in ga[r * m..(r + 1) * m].iter_mut().zip(&g[s * m..(s + 1) * m]) {
                    *d = gv * inv;
                }
            }
            vec![Some(ga)]
        }
        GatherRows(a, idx) => {
            let a = vals(*a);
            let m = a.cols();
            let mut ga = vec![0.0; a.numel()];
            for (k, &r) in idx.iter().enumerate() {
                for (d, gv) in ga[r * m..(r + 1) * m].iter_mut().zip(&g[k * m..(k + 1) * m]) {
                    *d += gv;
                }
            }
            vec![Some(ga)]
        }
    }
}
