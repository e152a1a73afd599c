//! Two-layer GCN encoder with mean readout, and affine heads.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Real, Rng, Segments, SparseOperator, Tape, Tensor, Var};
use crate::graphdata::GraphBatch;

/// Representation width.
pub const HIDDEN_DIM: usize = 128;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` over the whole batch, where `D̃` holds the
/// degrees of `A + I`. Graphs stay disconnected blocks.
pub fn normalize_adjacency(batch: &GraphBatch) -> Result<SparseOperator> {
    let n = batch.num_nodes();
    let mut deg = vec![1.0 as Real; n];
    for &(u, v) in &batch.edges {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    let mut triplets = Vec::with_capacity(n + 2 * batch.edges.len());
    for (i, &d) in deg.iter().enumerate() {
        triplets.push((i, i, 1.0 / d));
    }
    for &(u, v) in &batch.edges {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    SparseOperator::from_triplets(n, triplets)
}

/// Affine map `x W + b` with parameters `{prefix}.w` and `{prefix}.b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl LinearSpec {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Glorot-uniform weight, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        store.insert(&self.weight_name(), rng.glorot(self.in_dim, self.out_dim))?;
        store.insert(&self.bias_name(), Tensor::zeros(&[self.out_dim]))
    }

    pub fn bind<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundLinear<'t>> {
        Ok(BoundLinear {
            w: store.bind(tape, &self.weight_name())?,
            b: store.bind(tape, &self.bias_name())?,
        })
    }

    pub fn bind_frozen<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundLinear<'t>> {
        Ok(BoundLinear {
            w: store.bind_frozen(tape, &self.weight_name())?,
            b: store.bind_frozen(tape, &self.bias_name())?,
        })
    }
}

impl<'t> BoundLinear<'t> {
    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let (xs, ws) = (x.shape(), self.w.shape());
        if xs.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape("linear", &xs, &ws));
        }
        x.matmul(self.w)?.add(self.b)
    }
}

/// Row-wise class probabilities `softmax(x W + b)`.
pub fn classify<'t>(x: Var<'t>, head: &BoundLinear<'t>) -> Result<Var<'t>> {
    head.forward(x)?.softmax()
}

/// Parameter layout of the GCN encoder: `enc.l1` (`d → h`) and `enc.l2`
/// (`h → h`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layer1: LinearSpec,
    pub layer2: LinearSpec,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundEncoder<'t> {
    pub layer1: BoundLinear<'t>,
    pub layer2: BoundLinear<'t>,
}

impl EncoderParams {
    pub fn new(in_dim: usize, hidden: usize) -> Self {
        Self {
            layer1: LinearSpec::new("enc.l1", in_dim, hidden),
            layer2: LinearSpec::new("enc.l2", hidden, hidden),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layer1.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.layer2.out_dim
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.layer1.init(store, rng)?;
        self.layer2.init(store, rng)
    }

    pub fn bind<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundEncoder<'t>> {
        Ok(BoundEncoder {
            layer1: self.layer1.bind(store, tape)?,
            layer2: self.layer2.bind(store, tape)?,
        })
    }

    pub fn bind_frozen<'t>(&self, store: &ParamStore, tape: &'t Tape) -> Result<BoundEncoder<'t>> {
        Ok(BoundEncoder {
            layer1: self.layer1.bind_frozen(store, tape)?,
            layer2: self.layer2.bind_frozen(store, tape)?,
        })
    }
}

/// Graph representations `z` (one row per graph):
/// `H1 = ReLU(Â X W1 + b1)`, `H2 = ReLU(Â H1 W2 + b2)`, `z_g = mean(H2[g])`.
pub fn encode<'t>(tape: &'t Tape, batch: &GraphBatch, enc: &BoundEncoder<'t>) -> Result<Var<'t>> {
    let d = batch.node_features.cols();
    if d != enc.layer1.in_dim() {
        return Err(Error::shape("encode", &[d], &[enc.layer1.in_dim()]));
    }
    let adj = Rc::new(normalize_adjacency(batch)?);
    let seg = Rc::new(Segments::new(batch.membership.clone(), batch.num_graphs())?);
    let x = tape.constant(batch.node_features.clone());
    let h1 = enc.layer1.forward(x.propagate(&adj)?)?.relu()?;
    let h2 = enc.layer2.forward(h1.propagate(&adj)?)?.relu()?;
    h2.segment_mean(&seg)
}
