//! Run artifacts: `metrics.csv`, `warmup.csv`, feature dumps and
//! confident-set snapshots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::model::Model;
use super::train::{AdaptObserver, EpochMetrics, WarmupEpoch};
use crate::calibrator::{write_confident_snapshot, ConfidentSet, PredictionRecord};
use crate::error::{Error, Result};
use crate::gradcore::Real;
use crate::graphdata::{Dataset, Graph};

pub const METRICS_HEADER: &str =
    "epoch,l_so,l_ta,l_c_mi,l_s_mi,l_ge,l_inv,total,confident_size,source_acc,target_acc";

fn opt(v: Option<Real>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_row(m: &EpochMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        m.epoch,
        m.l_so,
        opt(m.l_ta),
        opt(m.l_c_mi),
        opt(m.l_s_mi),
        m.l_ge,
        opt(m.l_inv),
        m.total,
        m.confident_size,
        m.source_acc,
        opt(m.target_acc)
    )
}

/// Disabled terms and unlabelled target accuracy are empty fields.
pub fn metrics_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in epochs {
        out.push_str(&metrics_row(m));
        out.push('\n');
    }
    out
}

pub fn warmup_csv(epochs: &[WarmupEpoch]) -> String {
    let mut out = String::from("epoch,l_so,l_ge,source_acc\n");
    for e in epochs {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.l_so, e.l_ge, e.source_acc);
    }
    out
}

/// One row per graph: `id,domain,label,zc_0..,zs_0..`; unknown labels are empty.
pub fn features_csv(model: &Model, datasets: &[&Dataset]) -> Result<String> {
    let graphs: Vec<&Graph> = datasets.iter().flat_map(|d| d.graphs()).collect();
    let feats = model.features(&graphs)?;
    let mut out = String::from("id,domain,label");
    for i in 0..feats.z_c.cols() {
        let _ = write!(out, ",zc_{i}");
    }
    for i in 0..feats.z_s.cols() {
        let _ = write!(out, ",zs_{i}");
    }
    out.push('\n');
    for (r, g) in graphs.iter().enumerate() {
        let label = g.label.map(|l| l.to_string()).unwrap_or_default();
        let _ = write!(out, "{},{},{label}", g.id, g.domain);
        for v in feats.z_c.row(r).iter().chain(feats.z_s.row(r)) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

/// Writes a confident-set snapshot per epoch and, every `features_every`
/// epochs, a feature dump, into `dir`.
pub struct ArtifactWriter<'a> {
    pub dir: PathBuf,
    pub datasets: Vec<&'a Dataset>,
    pub features_every: Option<usize>,
    pub written: Vec<PathBuf>,
}

impl<'a> ArtifactWriter<'a> {
    pub fn new(dir: impl Into<PathBuf>, datasets: Vec<&'a Dataset>, features_every: Option<usize>) -> Self {
        Self { dir: dir.into(), datasets, features_every, written: Vec::new() }
    }
}

impl AdaptObserver for ArtifactWriter<'_> {
    fn on_confident(&mut self, epoch: usize, records: &[PredictionRecord], set: &ConfidentSet) -> Result<()> {
        let sub = self.dir.join("confident");
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let path = sub.join(format!("epoch_{epoch:03}.csv"));
        write_confident_snapshot(&path, records, set)?;
        self.written.push(path);
        Ok(())
    }

    fn on_epoch(&mut self, metrics: &EpochMetrics, model: &Model) -> Result<()> {
        if let Some(k) = self.features_every.filter(|&k| k > 0) {
            if metrics.epoch % k == 0 {
                let path = self.dir.join(format!("features_{}.csv", metrics.epoch));
                write_text(&path, &features_csv(model, &self.datasets)?)?;
                self.written.push(path);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;

    fn metrics(l_ta: Option<Real>, target_acc: Option<Real>) -> EpochMetrics {
        EpochMetrics {
            epoch: 1,
            l_so: 0.5,
            l_ta,
            l_sup: 0.5,
            l_c_mi: None,
            l_s_mi: None,
            l_dis: None,
            l_ge: 0.25,
            l_inv: Some(1.0),
            total: 0.6,
            confident_size: 3,
            source_acc: 0.75,
            target_acc,
        }
    }

    #[test]
    fn metrics_columns() {
        let csv = metrics_csv(&[metrics(None, None), metrics(Some(0.1), Some(0.5))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "1,0.5,,,,0.25,1,0.6,3,0.75,");
        assert_eq!(lines[2], "1,0.5,0.1,,,0.25,1,0.6,3,0.75,0.5");
        for l in &lines {
            assert_eq!(l.split(',').count(), 11);
        }
    }

    #[test]
    fn feature_dump_shape() {
        use crate::gradcore::Rng;
        use crate::graphdata::{gen_synthetic_biased, SynthConfig};
        let (s, t) = gen_synthetic_biased(&SynthConfig { n_per_domain: 5, ..SynthConfig::default() }, &mut Rng::new(0)).unwrap();
        let cfg = TrainConfig { hidden: 8, causal_dim: 3, spurious_dim: 2, ..TrainConfig::default() };
        let m = Model::new(s.feature_dim(), 2, &cfg).unwrap();
        let csv = features_csv(&m, &[&s, &t]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "id,domain,label,zc_0,zc_1,zc_2,zs_0,zs_1");
        assert_eq!(lines.len(), 11);
        assert!(lines[1].starts_with("0,source,"));
        assert!(lines[10].starts_with("9,target,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 8));
    }
}
