use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use crate::calibrator::source_loss;
use crate::error::{Error, Result};
use crate::gradcore::{Real, Rng, Tape};
use crate::graphdata::{make_batch, Domain, Graph, SYNTH_FEATURE_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Total node counts per batch.
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub nodes_per_graph: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 200, 400, 800, 1600, 3200],
            repeats: 5,
            nodes_per_graph: 20,
            hidden: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub nodes: usize,
    pub graphs: usize,
    pub edges: usize,
    /// Median forward+backward wall time.
    pub median_secs: Real,
    pub samples_secs: Vec<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub slope: Real,
    pub intercept: Real,
    pub r_squared: Real,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("nodes,graphs,edges,median_secs\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.nodes, r.graphs, r.edges, r.median_secs);
        }
        out
    }
}

/// Ordinary least squares `y ≈ a + b x`; returns `(b, a, R²)`.
pub fn linear_fit(xs: &[Real], ys: &[Real]) -> Result<(Real, Real, Real)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput("linear fit needs at least two paired points".into()));
    }
    let n = xs.len() as Real;
    let mx = xs.iter().sum::<Real>() / n;
    let my = ys.iter().sum::<Real>() / n;
    let sxx: Real = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: Real = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: Real = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: Real = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((slope, intercept, r2))
}

/// Random connected graph: a random tree plus `n / 4` extra edges.
fn random_graph(id: usize, n: usize, rng: &mut Rng) -> Result<Graph> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.below(v), v)).collect();
    for _ in 0..n / 4 {
        edges.push((rng.below(n), rng.below(n)));
    }
    let feats = rng.normal_tensor(&[n, SYNTH_FEATURE_DIM], 1.0);
    Graph::new(id, n, edges, feats, Some(id % 2), Domain::Source)
}

/// Graphs of `per_graph` nodes (the last one takes the remainder) summing to `total`.
fn graphs_with_nodes(total: usize, per_graph: usize, rng: &mut Rng) -> Result<Vec<Graph>> {
    let mut out = Vec::new();
    let mut left = total;
    while left > 0 {
        let n = if left < 2 * per_graph { left } else { per_graph };
        out.push(random_graph(out.len(), n, rng)?);
        left -= n;
    }
    Ok(out)
}

fn median(xs: &mut [Real]) -> Real {
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) }
}

/// Times one forward pass, `ℒ_so` and the backward pass on batches of
/// growing node count and fits time against `|V|`.
pub fn bench_scaling(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.sizes.len() < 2 || cfg.repeats == 0 || cfg.nodes_per_graph == 0 {
        return Err(Error::config("bench", "need two sizes, one repeat and a positive graph size"));
    }
    let train = TrainConfig { hidden: cfg.hidden, seed: cfg.seed, ..TrainConfig::default() };
    let model = Model::new(SYNTH_FEATURE_DIM, 2, &train)?;
    let mut rng = Rng::new(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for &nodes in &cfg.sizes {
        let graphs = graphs_with_nodes(nodes, cfg.nodes_per_graph, &mut rng)?;
        let batch = make_batch(graphs.iter())?;
        let run = || -> Result<Real> {
            let start = Instant::now();
            let tape = Tape::new();
            let fwd = model.forward(&tape, &batch, true)?;
            source_loss(fwd.logits, &batch.labels)?.backward()?;
            Ok(start.elapsed().as_secs_f64() as Real)
        };
        run()?;
        let mut samples = (0..cfg.repeats).map(|_| run()).collect::<Result<Vec<_>>>()?;
        let samples_secs = samples.clone();
        rows.push(BenchRow {
            nodes,
            graphs: graphs.len(),
            edges: graphs.iter().map(Graph::edge_count).sum(),
            median_secs: median(&mut samples),
            samples_secs,
        });
    }
    let xs: Vec<Real> = rows.iter().map(|r| r.nodes as Real).collect();
    let ys: Vec<Real> = rows.iter().map(|r| r.median_secs).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys)?;
    Ok(BenchReport { rows, slope, intercept, r_squared })
}
