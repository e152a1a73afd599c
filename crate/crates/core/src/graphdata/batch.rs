use super::graph::{Domain, Graph};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Several graphs stacked into one block-diagonal graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    /// First stacked node index of each graph.
    pub offsets: Vec<usize>,
    pub graph_sizes: Vec<usize>,
    /// Undirected edges in stacked node indices, each once.
    pub edges: Vec<(usize, usize)>,
    pub node_features: Tensor,
    pub labels: Vec<Option<usize>>,
    pub domains: Vec<Domain>,
    pub ids: Vec<usize>,
    /// Stacked node index → position of its graph in the batch.
    pub membership: Vec<usize>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.graph_sizes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.membership.len()
    }
}

pub fn make_batch<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> Result<GraphBatch> {
    let graphs: Vec<&Graph> = graphs.into_iter().collect();
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot batch zero graphs".into()))?;
    let d = first.feature_dim();
    let total: usize = graphs.iter().map(|g| g.node_count()).sum();
    let mut b = GraphBatch {
        offsets: Vec::with_capacity(graphs.len()),
        graph_sizes: Vec::with_capacity(graphs.len()),
        edges: Vec::new(),
        node_features: Tensor::zeros(&[0, d]),
        labels: Vec::with_capacity(graphs.len()),
        domains: Vec::with_capacity(graphs.len()),
        ids: Vec::with_capacity(graphs.len()),
        membership: Vec::with_capacity(total),
    };
    let mut feats = Vec::with_capacity(total * d);
    let mut offset = 0;
    for (k, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d {
            return Err(Error::shape("make_batch", &[d], &[g.feature_dim()]));
        }
        b.offsets.push(offset);
        b.graph_sizes.push(g.node_count());
        b.edges
            .extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
        feats.extend_from_slice(g.node_features().data());
        b.labels.push(g.label);
        b.domains.push(g.domain);
        b.ids.push(g.id);
        b.membership.extend(std::iter::repeat(k).take(g.node_count()));
        offset += g.node_count();
    }
    b.node_features = Tensor::new(&[total, d], feats)?;
    Ok(b)
}
