use super::graph::Dataset;
use crate::error::{Error, Result};

/// Splits `ds` into `parts` sub-datasets of increasing graph density.
///
/// Graphs are ordered by `(density, id)` and cut into contiguous chunks whose
/// sizes differ by at most one, larger chunks first. Chunk `k` is named
/// `{name}_N{k}`.
pub fn density_split(ds: &Dataset, parts: usize) -> Result<Vec<Dataset>> {
    if parts < 2 {
        return Err(Error::config("parts", format!("must be at least 2, got {parts}")));
    }
    if parts > ds.len() {
        return Err(Error::config(
            "parts",
            format!("{parts} parts requested for {} graphs", ds.len()),
        ));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| {
        let (ga, gb) = (ds.get(a), ds.get(b));
        ga.density()
            .total_cmp(&gb.density())
            .then(ga.id.cmp(&gb.id))
    });
    let base = ds.len() / parts;
    let extra = ds.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let size = base + usize::from(k < extra);
        out.push(ds.subset(format!("{}_N{k}", ds.name), &order[start..start + size]));
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{Domain, Graph};
    use crate::gradcore::Tensor;

    /// Graph on 5 nodes with the first `m` edges of a fixed list.
    fn graph_with_edges(id: usize, m: usize) -> Graph {
        let all = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (0, 2), (1, 3), (2, 4), (0, 3), (1, 4)];
        Graph::new(id, 5, all[..m].iter().copied(), Tensor::zeros(&[5, 1]), Some(0), Domain::Source)
            .unwrap()
    }

    fn dataset(edge_counts: &[usize]) -> Dataset {
        let graphs = edge_counts
            .iter()
            .enumerate()
            .map(|(i, &m)| graph_with_edges(i, m))
            .collect();
        Dataset::new("D", graphs, 1, 1).unwrap()
    }

    #[test]
    fn singleton_chunks_in_ascending_order() {
        // Densities 0.1·m for m edges on 5 nodes; stored out of order.
        let ds = dataset(&[3, 1, 4, 2]);
        let chunks = density_split(&ds, 4).unwrap();
        let dens: Vec<_> = chunks.iter().map(|c| c.get(0).density()).collect();
        assert_eq!(dens, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn remainder_goes_to_first_chunks() {
        let ds = dataset(&[1; 10]);
        let sizes: Vec<_> = density_split(&ds, 4).unwrap().iter().map(Dataset::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }

    #[test]
    fn ties_broken_by_id() {
        let ds = dataset(&[2, 2, 2, 2]);
        let ids: Vec<_> = density_split(&ds, 2)
            .unwrap()
            .iter()
            .flat_map(|c| c.graphs().iter().map(|g| g.id).collect::<Vec<_>>())
            .collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_many_parts_rejected() {
        assert!(density_split(&dataset(&[1, 2]), 3).is_err());
        assert!(density_split(&dataset(&[1, 2]), 1).is_err());
    }
}
