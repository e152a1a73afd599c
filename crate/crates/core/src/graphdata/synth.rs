//! Synthetic source/target pair with a planted causal motif and a spurious
//! node feature whose correlation with the label flips between domains.

use serde::{Deserialize, Serialize};

use super::graph::{Dataset, Domain, Graph};
use crate::error::{Error, Result};
use crate::gradcore::{Real, Rng, Tensor};

/// Node feature channels of synthetic graphs.
pub const SYNTH_FEATURE_DIM: usize = 4;
/// Index of the spurious channel.
pub const SPURIOUS_CHANNEL: usize = 2;
const MOTIF_SIZE: usize = 5;
const DEGREE_SCALE: Real = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_domain: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Probability that the spurious bit agrees with the label in the source
    /// domain (and disagrees in the target domain).
    pub rho_s: Real,
    pub label_balance: Real,
    /// Standard deviation of the noise on the motif-membership channel.
    pub membership_noise: Real,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_domain: 500,
            min_nodes: 6,
            max_nodes: 20,
            rho_s: 0.9,
            label_balance: 0.5,
            membership_noise: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_domain == 0 {
            return Err(Error::config("n-per-domain", "must be positive"));
        }
        if self.min_nodes < 6 || self.max_nodes > 20 || self.min_nodes > self.max_nodes {
            return Err(Error::config(
                "nodes",
                format!("node range {}..={} must lie within 6..=20", self.min_nodes, self.max_nodes),
            ));
        }
        if !(0.5..=1.0).contains(&self.rho_s) {
            return Err(Error::config("rho-s", format!("{} outside [0.5, 1]", self.rho_s)));
        }
        if !(self.label_balance > 0.0 && self.label_balance < 1.0) {
            return Err(Error::config("label-balance", format!("{} outside (0, 1)", self.label_balance)));
        }
        if !(self.membership_noise >= 0.0 && self.membership_noise.is_finite()) {
            return Err(Error::config("membership-noise", "must be finite and non-negative"));
        }
        Ok(())
    }
}

fn synth_graph(id: usize, label: usize, spurious: bool, domain: Domain, cfg: &SynthConfig, rng: &mut Rng) -> Result<Graph> {
    let n = rng.range_inclusive(cfg.min_nodes, cfg.max_nodes);
    let mut edges = Vec::with_capacity(n + 1);
    if label == 1 {
        for i in 0..MOTIF_SIZE {
            edges.push((i, (i + 1) % MOTIF_SIZE));
        }
    } else {
        for leaf in 1..MOTIF_SIZE {
            edges.push((0, leaf));
        }
    }
    // The rest forms a random tree hanging off motif node 0 by one bridge.
    for v in MOTIF_SIZE..n {
        let parent = if v == MOTIF_SIZE { 0 } else { MOTIF_SIZE + rng.below(v - MOTIF_SIZE) };
        edges.push((parent, v));
    }

    let perm = rng.permutation(n);
    let mut deg = vec![0usize; n];
    for &(u, v) in &edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let spur = if spurious { 1.0 } else { 0.0 };
    let mut feats = vec![0.0; n * SYNTH_FEATURE_DIM];
    for old in 0..n {
        let row = &mut feats[perm[old] * SYNTH_FEATURE_DIM..(perm[old] + 1) * SYNTH_FEATURE_DIM];
        row[0] = (deg[old] as Real).min(DEGREE_SCALE) / DEGREE_SCALE;
        let member = if old >= MOTIF_SIZE { 0.0 } else if label == 1 { 1.0 } else { -1.0 };
        row[1] = member + cfg.membership_noise * rng.normal();
        row[SPURIOUS_CHANNEL] = spur;
        row[3] = rng.normal();
    }
    Graph::new(
        id,
        n,
        edges.into_iter().map(|(u, v)| (perm[u], perm[v])),
        Tensor::new(&[n, SYNTH_FEATURE_DIM], feats)?,
        Some(label),
        domain,
    )
}

/// Generates `(source, target)`. Label-1 graphs carry a 5-cycle, label-0
/// graphs a 5-node star; the remaining nodes form a random tree bridged to
/// the motif. Node features: normalised degree, signed motif membership (+1
/// on cycle nodes, -1 on star nodes, 0 elsewhere) plus Gaussian noise, the
/// spurious bit and pure noise. Target labels are kept for evaluation only.
pub fn gen_synthetic_biased(cfg: &SynthConfig, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut make = |domain: Domain, id_offset: usize| -> Result<Dataset> {
        let graphs = (0..cfg.n_per_domain)
            .map(|i| {
                let label = usize::from(rng.bernoulli(cfg.label_balance));
                let agrees = rng.bernoulli(cfg.rho_s);
                let spurious = match domain {
                    Domain::Source => agrees == (label == 1),
                    Domain::Target => agrees != (label == 1),
                };
                synth_graph(id_offset + i, label, spurious, domain, cfg, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let name = match domain {
            Domain::Source => "SYNTH_SRC",
            Domain::Target => "SYNTH_TGT",
        };
        Dataset::new(name, graphs, 2, SYNTH_FEATURE_DIM)
    };
    let source = make(Domain::Source, 0)?;
    let target = make(Domain::Target, cfg.n_per_domain)?;
    Ok((source, target))
}
