//! TUDataset text format.
//!
//! A dataset `NAME` is a directory holding
//! `NAME_A.txt` (1-indexed `u, v` node pairs, one per line),
//! `NAME_graph_indicator.txt` (graph id per node, 1-indexed),
//! `NAME_graph_labels.txt` (one label per graph) and optionally
//! `NAME_node_labels.txt` and `NAME_node_attributes.txt`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::graph::{Dataset, Domain, FeatureLayout, Graph, DEGREE_CAP};
use crate::error::{Error, Result};
use crate::gradcore::{Real, Tensor};

struct RawDataset {
    name: String,
    graph_labels: Vec<i64>,
    /// `(first node, node count)` per graph, global 0-indexed.
    spans: Vec<(usize, usize)>,
    edges: Vec<Vec<(usize, usize)>>,
    node_labels: Option<Vec<i64>>,
    node_attributes: Option<Vec<Vec<Real>>>,
}

fn file_path(root: &Path, name: &str, suffix: &str) -> PathBuf {
    root.join(format!("{name}_{suffix}.txt"))
}

fn read_lines(path: &Path, mandatory: bool) -> Result<Option<Vec<(usize, String)>>> {
    if !path.exists() {
        if mandatory {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Some(
        text.lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim().to_string()))
            .filter(|(_, l)| !l.is_empty())
            .collect(),
    ))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_int(path: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|e| parse_err(path, line, format!("`{s}`: {e}")))
}

/// `root` itself, or `root/name` when the files live in a per-dataset
/// directory as in the official archives.
fn dataset_dir(root: &Path, name: &str) -> PathBuf {
    let nested = root.join(name);
    if !file_path(root, name, "A").exists() && file_path(&nested, name, "A").exists() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn read_raw(root: &Path, name: &str) -> Result<RawDataset> {
    let root = &dataset_dir(root, name);
    let a_path = file_path(root, name, "A");
    let ind_path = file_path(root, name, "graph_indicator");
    let gl_path = file_path(root, name, "graph_labels");
    let nl_path = file_path(root, name, "node_labels");
    let na_path = file_path(root, name, "node_attributes");

    let a_lines = read_lines(&a_path, true)?.expect("mandatory");
    let ind_lines = read_lines(&ind_path, true)?.expect("mandatory");
    let gl_lines = read_lines(&gl_path, true)?.expect("mandatory");

    let graph_labels = gl_lines
        .iter()
        .map(|(ln, s)| parse_int(&gl_path, *ln, s))
        .collect::<Result<Vec<_>>>()?;
    let num_graphs = graph_labels.len();

    let mut node_graph = Vec::with_capacity(ind_lines.len());
    let mut prev = 0usize;
    for (ln, s) in &ind_lines {
        let g = parse_int(&ind_path, *ln, s)?;
        if g < 1 || g as usize > num_graphs {
            return Err(parse_err(&ind_path, *ln, format!("graph id {g} outside 1..={num_graphs}")));
        }
        let g = g as usize - 1;
        if g < prev {
            return Err(parse_err(&ind_path, *ln, "graph ids must be non-decreasing"));
        }
        prev = g;
        node_graph.push(g);
    }
    let num_nodes = node_graph.len();

    let mut spans = vec![(0usize, 0usize); num_graphs];
    for (node, &g) in node_graph.iter().enumerate().rev() {
        spans[g].0 = node;
    }
    for &g in &node_graph {
        spans[g].1 += 1;
    }
    if let Some(empty) = spans.iter().position(|s| s.1 == 0) {
        return Err(parse_err(&ind_path, 0, format!("graph {} has no nodes", empty + 1)));
    }

    let mut edges = vec![Vec::new(); num_graphs];
    for (ln, s) in &a_lines {
        let mut parts = s.split(',');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(&a_path, *ln, format!("expected `u, v`, got `{s}`")));
        };
        let (u, v) = (parse_int(&a_path, *ln, u)?, parse_int(&a_path, *ln, v)?);
        for x in [u, v] {
            if x < 1 || x as usize > num_nodes {
                return Err(parse_err(&a_path, *ln, format!("unknown node {x}")));
            }
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        let g = node_graph[u];
        if node_graph[v] != g {
            return Err(parse_err(&a_path, *ln, format!("edge {}-{} spans two graphs", u + 1, v + 1)));
        }
        edges[g].push((u - spans[g].0, v - spans[g].0));
    }

    let node_labels = read_lines(&nl_path, false)?
        .map(|lines| {
            if lines.len() != num_nodes {
                return Err(parse_err(&nl_path, lines.len(), format!("expected {num_nodes} node labels")));
            }
            lines
                .iter()
                .map(|(ln, s)| parse_int(&nl_path, *ln, s.split(',').next().unwrap_or("")))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let node_attributes = read_lines(&na_path, false)?
        .map(|lines| {
            if lines.len() != num_nodes {
                return Err(parse_err(&na_path, lines.len(), format!("expected {num_nodes} attribute rows")));
            }
            let rows = lines
                .iter()
                .map(|(ln, s)| {
                    s.split(',')
                        .map(|v| {
                            v.trim()
                                .parse::<Real>()
                                .map_err(|e| parse_err(&na_path, *ln, format!("`{v}`: {e}")))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let width = rows.first().map_or(0, Vec::len);
            if let Some(bad) = rows.iter().position(|r| r.len() != width) {
                return Err(parse_err(&na_path, lines[bad].0, "inconsistent attribute width"));
            }
            Ok(rows)
        })
        .transpose()?;

    Ok(RawDataset {
        name: name.to_string(),
        graph_labels,
        spans,
        edges,
        node_labels,
        node_attributes,
    })
}

fn build(raw: RawDataset, node_vocab: &[i64], label_vocab: &[i64]) -> Result<Dataset> {
    let use_labels = raw.node_labels.is_some() && !node_vocab.is_empty();
    let attr_dim = raw.node_attributes.as_ref().map_or(0, |a| a.first().map_or(0, Vec::len));
    let degree_onehot = !use_labels && attr_dim == 0;
    let d = if degree_onehot {
        DEGREE_CAP + 1
    } else {
        (if use_labels { node_vocab.len() } else { 0 }) + attr_dim
    };

    let mut graphs = Vec::with_capacity(raw.spans.len());
    for (gi, &(start, n)) in raw.spans.iter().enumerate() {
        let label = label_vocab
            .binary_search(&raw.graph_labels[gi])
            .expect("label vocabulary covers all labels");
        let mut feats = vec![0.0; n * d];
        if degree_onehot {
            let mut deg = vec![0usize; n];
            let uniq: BTreeSet<(usize, usize)> = raw.edges[gi]
                .iter()
                .filter(|(u, v)| u != v)
                .map(|&(u, v)| (u.min(v), u.max(v)))
                .collect();
            for (u, v) in uniq {
                deg[u] += 1;
                deg[v] += 1;
            }
            for (i, dg) in deg.iter().enumerate() {
                feats[i * d + (*dg).min(DEGREE_CAP)] = 1.0;
            }
        } else {
            for i in 0..n {
                let row = &mut feats[i * d..(i + 1) * d];
                let mut off = 0;
                if use_labels {
                    let raw_label = raw.node_labels.as_ref().expect("checked")[start + i];
                    let col = node_vocab
                        .binary_search(&raw_label)
                        .expect("node vocabulary covers all labels");
                    row[col] = 1.0;
                    off = node_vocab.len();
                }
                if let Some(attrs) = &raw.node_attributes {
                    row[off..].copy_from_slice(&attrs[start + i]);
                }
            }
        }
        graphs.push(Graph::new(
            gi,
            n,
            raw.edges[gi].iter().copied(),
            Tensor::new(&[n, d], feats)?,
            Some(label),
            Domain::Source,
        )?);
    }
    let mut ds = Dataset::new(raw.name, graphs, label_vocab.len(), d)?;
    ds.set_metadata(
        label_vocab.to_vec(),
        FeatureLayout {
            node_label_vocab: if use_labels { node_vocab.to_vec() } else { Vec::new() },
            attribute_dim: attr_dim,
            degree_onehot,
        },
    );
    Ok(ds)
}

/// Reads dataset `name` from `root`.
///
/// Node features are the one-hot node labels (followed by node attributes
/// when present), or a one-hot of the degree capped at [`DEGREE_CAP`] when the
/// dataset has neither. Graph labels are remapped to `0..C` in sorted order of
/// their raw values.
pub fn parse_tudataset(root: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    Ok(parse_tudataset_group(root, &[name])?.remove(0))
}

/// Reads several datasets into one shared feature space and label set, as
/// needed for cross-dataset transfer (e.g. the PTC family).
pub fn parse_tudataset_group(root: impl AsRef<Path>, names: &[&str]) -> Result<Vec<Dataset>> {
    let root = root.as_ref();
    let raws = names
        .iter()
        .map(|n| read_raw(root, n))
        .collect::<Result<Vec<_>>>()?;
    let all_have_labels = raws.iter().all(|r| r.node_labels.is_some());
    let node_vocab: Vec<i64> = if all_have_labels {
        raws.iter()
            .flat_map(|r| r.node_labels.iter().flatten().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        Vec::new()
    };
    let label_vocab: Vec<i64> = raws
        .iter()
        .flat_map(|r| r.graph_labels.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let attr_dims: BTreeSet<usize> = raws
        .iter()
        .map(|r| r.node_attributes.as_ref().map_or(0, |a| a.first().map_or(0, Vec::len)))
        .collect();
    if attr_dims.len() > 1 {
        return Err(Error::InvalidInput(format!(
            "datasets {names:?} have different node attribute widths"
        )));
    }
    raws.into_iter()
        .map(|r| build(r, &node_vocab, &label_vocab))
        .collect()
}

/// Writes `ds` as TUDataset files named `name` under `dir` (created if
/// needed). Returns the written paths.
pub fn write_tudataset(ds: &Dataset, dir: impl AsRef<Path>, name: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layout = &ds.layout;
    let n_onehot = layout.node_label_vocab.len();
    if !layout.degree_onehot && n_onehot + layout.attribute_dim != ds.feature_dim() {
        return Err(Error::InvalidInput(format!(
            "feature layout ({n_onehot} one-hot + {} attributes) does not match dimension {}",
            layout.attribute_dim,
            ds.feature_dim()
        )));
    }

    let mut a = String::new();
    let mut ind = String::new();
    let mut gl = String::new();
    let mut nl = String::new();
    let mut na = String::new();
    let mut offset = 0usize;
    for (gi, g) in ds.graphs().iter().enumerate() {
        let label = g
            .label
            .ok_or_else(|| Error::InvalidInput(format!("graph {} has no label", g.id)))?;
        gl.push_str(&format!("{}\n", ds.label_vocab[label]));
        for &(u, v) in g.edges() {
            a.push_str(&format!("{}, {}\n", offset + u + 1, offset + v + 1));
            a.push_str(&format!("{}, {}\n", offset + v + 1, offset + u + 1));
        }
        for i in 0..g.node_count() {
            ind.push_str(&format!("{}\n", gi + 1));
            if layout.degree_onehot {
                continue;
            }
            let row = g.node_features().row(i);
            if n_onehot > 0 {
                let col = row[..n_onehot]
                    .iter()
                    .position(|&v| v == 1.0)
                    .ok_or_else(|| Error::InvalidInput(format!("graph {} node {i} lacks a one-hot label", g.id)))?;
                nl.push_str(&format!("{}\n", layout.node_label_vocab[col]));
            }
            if layout.attribute_dim > 0 {
                let vals: Vec<String> = row[n_onehot..].iter().map(|v| v.to_string()).collect();
                na.push_str(&vals.join(", "));
                na.push('\n');
            }
        }
        offset += g.node_count();
    }

    let mut written = Vec::new();
    let mut put = |suffix: &str, body: &str| -> Result<()> {
        let p = file_path(dir, name, suffix);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    put("A", &a)?;
    put("graph_indicator", &ind)?;
    put("graph_labels", &gl)?;
    if n_onehot > 0 && !layout.degree_onehot {
        put("node_labels", &nl)?;
    }
    if layout.attribute_dim > 0 && !layout.degree_onehot {
        put("node_attributes", &na)?;
    }
    Ok(written)
}
