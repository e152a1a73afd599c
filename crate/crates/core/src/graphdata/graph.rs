use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

/// Undirected attributed graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub id: usize,
    node_count: usize,
    /// Each undirected edge once, as `(u, v)` with `u < v`, sorted.
    edges: Vec<(usize, usize)>,
    node_features: Tensor,
    pub label: Option<usize>,
    pub domain: Domain,
}

impl Graph {
    /// Validates and normalises the edge list: self-loops are dropped,
    /// duplicates and reversed pairs are merged.
    pub fn new(
        id: usize,
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_features: Tensor,
        label: Option<usize>,
        domain: Domain,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidInput(format!("graph {id} has no nodes")));
        }
        if node_features.rank() != 2 || node_features.shape()[0] != node_count {
            return Err(Error::shape(
                "Graph::new",
                &[node_count],
                node_features.shape(),
            ));
        }
        if !node_features.is_finite() {
            return Err(Error::NonFinite(format!("features of graph {id}")));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::IndexOutOfRange {
                    index: u.max(v),
                    len: node_count,
                });
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        Ok(Self {
            id,
            node_count,
            edges: set.into_iter().collect(),
            node_features,
            label,
            domain,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// `2|E| / (|V|(|V|-1))`, or 0 for a single node.
    pub fn density(&self) -> Real {
        let n = self.node_count as Real;
        if self.node_count < 2 {
            return 0.0;
        }
        2.0 * self.edges.len() as Real / (n * (n - 1.0))
    }

    /// Same graph with nodes relabelled so that old node `i` becomes
    /// `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::shape(
                "permute_nodes",
                &[self.node_count],
                &[perm.len()],
            ));
        }
        let d = self.feature_dim();
        let mut feats = vec![0.0; self.node_count * d];
        for (old, &new) in perm.iter().enumerate() {
            feats[new * d..(new + 1) * d].copy_from_slice(self.node_features.row(old));
        }
        Graph::new(
            self.id,
            self.node_count,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
            Tensor::new(&[self.node_count, d], feats)?,
            self.label,
            self.domain,
        )
    }
}

/// How node features were derived, kept so datasets can be written back to
/// TUDataset files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// Raw node label values, in one-hot column order.
    pub node_label_vocab: Vec<i64>,
    /// Number of continuous attribute columns after the one-hot block.
    pub attribute_dim: usize,
    /// Features are the capped-degree one-hot fallback.
    pub degree_onehot: bool,
}

/// Degree cap for the fallback features; degrees above it share the last bin.
pub const DEGREE_CAP: usize = 10;

/// Collection of graphs sharing a feature space and label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    graphs: Vec<Graph>,
    num_classes: usize,
    feature_dim: usize,
    /// Raw graph label values; index = contiguous class id.
    pub label_vocab: Vec<i64>,
    pub layout: FeatureLayout,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        num_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        for g in &graphs {
            if g.feature_dim() != feature_dim {
                return Err(Error::shape(
                    "Dataset::new",
                    &[feature_dim],
                    &[g.feature_dim()],
                ));
            }
            if let Some(l) = g.label {
                if l >= num_classes {
                    return Err(Error::InvalidInput(format!(
                        "graph {} has label {l} outside 0..{num_classes}",
                        g.id
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            num_classes,
            feature_dim,
            label_vocab: (0..num_classes as i64).collect(),
            layout: FeatureLayout {
                attribute_dim: feature_dim,
                ..FeatureLayout::default()
            },
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn get(&self, i: usize) -> &Graph {
        &self.graphs[i]
    }

    pub fn is_labelled(&self) -> bool {
        self.graphs.iter().all(|g| g.label.is_some())
    }

    /// Sub-dataset made of the listed positions, metadata preserved.
    pub fn subset(&self, name: impl Into<String>, positions: &[usize]) -> Self {
        Self {
            name: name.into(),
            graphs: positions.iter().map(|&i| self.graphs[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            label_vocab: self.label_vocab.clone(),
            layout: self.layout.clone(),
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        for g in &mut self.graphs {
            g.domain = domain;
        }
        self
    }

    /// Same dataset with labels replaced by `f(graph)`.
    pub fn map_labels(&self, mut f: impl FnMut(&Graph) -> Option<usize>) -> Result<Self> {
        let mut out = self.clone();
        for g in &mut out.graphs {
            g.label = f(g);
            if matches!(g.label, Some(l) if l >= self.num_classes) {
                return Err(Error::InvalidInput(format!("label out of range for graph {}", g.id)));
            }
        }
        Ok(out)
    }

    pub fn mean_node_count(&self) -> Real {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(|g| g.node_count() as Real).sum::<Real>() / self.len() as Real
    }

    pub fn mean_edge_count(&self) -> Real {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(|g| g.edge_count() as Real).sum::<Real>() / self.len() as Real
    }

    pub fn mean_density(&self) -> Real {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(Graph::density).sum::<Real>() / self.len() as Real
    }

    pub(crate) fn set_metadata(&mut self, label_vocab: Vec<i64>, layout: FeatureLayout) {
        self.label_vocab = label_vocab;
        self.layout = layout;
    }
}
