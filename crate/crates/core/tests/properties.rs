use proptest::prelude::*;

use slogan::calibrator::{build_thresholds, select_confident, PredictionRecord};
use slogan::disentangler::FeatureSnapshot;
use slogan::encoder::{encode, EncoderParams};
use slogan::gradcore::{ParamStore, Real, Rng, Tape, Tensor};
use slogan::graphdata::{density_split, make_batch, parse_tudataset, write_tudataset, Dataset, Domain, Graph};
use slogan::intervenor::{build_swap_plan, invariance_loss, reconstruction_loss, GeneratorParams, InvarianceConfig};

fn random_graph(id: usize, n: usize, extra: usize, d: usize, rng: &mut Rng) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.below(v), v)).collect();
    for _ in 0..extra {
        let (a, b) = (rng.below(n), rng.below(n));
        if a != b {
            edges.push((a, b));
        }
    }
    let label = Some(rng.below(2));
    Graph::new(id, n, edges, rng.normal_tensor(&[n, d], 1.0), label, Domain::Source).unwrap()
}

fn random_dataset(seed: u64, count: usize, d: usize) -> Dataset {
    let mut rng = Rng::new(seed);
    let graphs = (0..count)
        .map(|i| {
            let n = rng.range_inclusive(1, 9);
            let extra = rng.below(2 * n);
            random_graph(i, n, extra, d, &mut rng)
        })
        .collect();
    Dataset::new("RAND", graphs, 2, d).unwrap()
}

fn encoder(d: usize, h: usize, seed: u64) -> (EncoderParams, ParamStore) {
    let spec = EncoderParams::new(d, h);
    let mut store = ParamStore::new();
    spec.init(&mut store, &mut Rng::new(seed)).unwrap();
    (spec, store)
}

fn encode_graphs(spec: &EncoderParams, store: &ParamStore, graphs: &[&Graph]) -> Tensor {
    let tape = Tape::new();
    let enc = spec.bind_frozen(store, &tape).unwrap();
    encode(&tape, &make_batch(graphs.iter().copied()).unwrap(), &enc).unwrap().value()
}

fn records(rng: &mut Rng, n: usize, classes: usize) -> Vec<PredictionRecord> {
    (0..n)
        .map(|i| {
            let logits: Vec<Real> = (0..classes).map(|_| 2.0 * rng.normal()).collect();
            let m = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let e: Vec<Real> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: Real = e.iter().sum();
            PredictionRecord::from_probs(i, e.iter().map(|v| v / z).collect()).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, scale in 0.1f64..20.0) {
        let x = Rng::new(seed).normal_tensor(&[rows, cols], scale as Real);
        let tape = Tape::new();
        let p = tape.constant(x).softmax().unwrap().value();
        for r in 0..rows {
            let row = p.row(r);
            prop_assert!((row.iter().sum::<Real>() - 1.0).abs() < 1e-9);
            if cols > 1 && scale < 5.0 {
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn adam_with_zero_lr_is_bit_identical(seed in any::<u64>(), steps in 1usize..4) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        store.insert("w", rng.normal_tensor(&[3, 2], 1.0)).unwrap();
        store.insert("b", rng.normal_tensor(&[2], 1.0)).unwrap();
        let before = store.clone();
        for _ in 0..steps {
            let tape = Tape::new();
            let w = store.bind(&tape, "w").unwrap();
            let b = store.bind(&tape, "b").unwrap();
            let x = tape.constant(rng.normal_tensor(&[4, 3], 1.0));
            x.matmul(w).unwrap().add(b).unwrap().relu().unwrap().mean_all().unwrap().backward().unwrap();
            store.collect_grads(&tape);
            store.adam_step(0.0).unwrap();
        }
        for (name, p) in before.iter() {
            let after = &store.get(name).unwrap().value;
            prop_assert!(p.value.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn density_split_is_a_sorted_partition(seed in any::<u64>(), count in 4usize..40, parts in 2usize..5) {
        prop_assume!(parts <= count);
        let ds = random_dataset(seed, count, 2);
        let chunks = density_split(&ds, parts).unwrap();
        prop_assert_eq!(chunks.len(), parts);
        let mut ids: Vec<usize> = chunks.iter().flat_map(|c| c.graphs().iter().map(|g| g.id)).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..count).collect::<Vec<_>>());
        for pair in chunks.windows(2) {
            let hi = pair[0].graphs().iter().map(Graph::density).fold(Real::NEG_INFINITY, Real::max);
            let lo = pair[1].graphs().iter().map(Graph::density).fold(Real::INFINITY, Real::min);
            prop_assert!(hi <= lo);
        }
    }

    #[test]
    fn tudataset_round_trip(seed in any::<u64>(), count in 1usize..12) {
        let ds = random_dataset(seed, count, 3);
        let dir = tempfile::tempdir().unwrap();
        write_tudataset(&ds, dir.path(), "RAND").unwrap();
        let once = parse_tudataset(dir.path(), "RAND").unwrap();
        let again = tempfile::tempdir().unwrap();
        write_tudataset(&once, again.path(), "RAND").unwrap();
        prop_assert_eq!(parse_tudataset(again.path(), "RAND").unwrap(), once);
    }

    #[test]
    fn batch_offsets_and_membership_agree(seed in any::<u64>(), count in 1usize..8) {
        let ds = random_dataset(seed, count, 2);
        let b = make_batch(ds.graphs()).unwrap();
        prop_assert_eq!(b.offsets[0], 0);
        prop_assert!(b.offsets.windows(2).all(|w| w[0] < w[1]));
        for (k, (&off, &size)) in b.offsets.iter().zip(&b.graph_sizes).enumerate() {
            prop_assert!(b.membership[off..off + size].iter().all(|&m| m == k));
        }
        prop_assert_eq!(b.membership.len(), b.num_nodes());
    }

    #[test]
    fn encoding_is_permutation_invariant(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = Rng::new(seed);
        let g = random_graph(0, n, n, 3, &mut rng);
        let perm = rng.permutation(n);
        let (spec, store) = encoder(3, 16, seed);
        let a = encode_graphs(&spec, &store, &[&g]);
        let b = encode_graphs(&spec, &store, &[&g.permute_nodes(&perm).unwrap()]);
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn batch_encoding_equals_per_graph(seed in any::<u64>(), count in 1usize..8) {
        let ds = random_dataset(seed, count, 2);
        let (spec, store) = encoder(2, 16, seed ^ 1);
        let graphs: Vec<&Graph> = ds.graphs().iter().collect();
        let batch = encode_graphs(&spec, &store, &graphs);
        for (i, g) in graphs.iter().enumerate() {
            let single = encode_graphs(&spec, &store, &[g]);
            let diff = single.row(0).iter().zip(batch.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, Real::max);
            prop_assert!(diff < 1e-9);
        }
    }

    #[test]
    fn confident_members_clear_their_threshold(seed in any::<u64>(), n in 1usize..60, classes in 2usize..5, tau in 0.05f64..=1.0) {
        let recs = records(&mut Rng::new(seed), n, classes);
        let table = build_thresholds(&recs, tau as Real, classes).unwrap();
        for (c, &t) in table.class_tau.iter().enumerate() {
            prop_assert!(t <= tau as Real);
            if let Some(m) = table.max_confidence[c] {
                prop_assert!(t <= m);
            }
        }
        for m in select_confident(&recs, &table).unwrap().members {
            prop_assert!(m.confidence > table.class_tau[m.pseudo_label]);
            prop_assert_eq!(m.pseudo_label, recs[m.index].predicted);
        }
    }

    #[test]
    fn lowering_tau_never_shrinks_the_set(seed in any::<u64>(), n in 1usize..60, hi in 0.1f64..=1.0, frac in 0.0f64..1.0) {
        let lo = (hi * frac).max(1e-3);
        let recs = records(&mut Rng::new(seed), n, 3);
        let size = |tau: f64| select_confident(&recs, &build_thresholds(&recs, tau as Real, 3).unwrap()).unwrap().len();
        prop_assert!(size(lo) >= size(hi));
    }

    #[test]
    fn invariance_dominates_reconstruction(seed in any::<u64>(), ns in 1usize..6, nt in 1usize..6, symmetric in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let spec = GeneratorParams::new(3, 2, 8, 5);
        let mut store = ParamStore::new();
        spec.init(&mut store, &mut rng).unwrap();
        let snap = |rng: &mut Rng, n: usize| FeatureSnapshot {
            z: rng.normal_tensor(&[n, 5], 1.0),
            z_c: rng.normal_tensor(&[n, 3], 1.0),
            z_s: rng.normal_tensor(&[n, 2], 1.0),
        };
        let (s, t) = (snap(&mut rng, ns), snap(&mut rng, nt));
        let plan = build_swap_plan(ns, nt, &mut rng).unwrap();
        let tape = Tape::new();
        let g = spec.bind_frozen(&store, &tape).unwrap();
        let cfg = InvarianceConfig { symmetric_swap: symmetric, stop_grad_target: false };
        let terms = invariance_loss(&s.constants(&tape), &t.constants(&tape), &plan, &g, cfg).unwrap();
        let re = terms.reconstruction.item();
        prop_assert!(re >= 0.0);
        prop_assert!(terms.total.item() >= re);
        let own = reconstruction_loss(&s.constants(&tape), &g).unwrap().item();
        prop_assert!(own >= 0.0);
    }
}
