use slogan::gradcore::{Real, Rng};
use slogan::graphdata::{gen_synthetic_biased, Dataset, SynthConfig};
use slogan::trainer::{adapt, evaluate, warmup, warmup_epochs, Model, TrainConfig};

fn data(n: usize, seed: u64) -> (Dataset, Dataset) {
    gen_synthetic_biased(&SynthConfig { n_per_domain: n, ..SynthConfig::default() }, &mut Rng::new(seed)).unwrap()
}

fn small() -> TrainConfig {
    TrainConfig {
        hidden: 16,
        causal_dim: 8,
        spurious_dim: 8,
        batch_size: 32,
        warmup_epochs: 3,
        adapt_epochs: 2,
        tau: 0.7,
        ..TrainConfig::default()
    }
}

fn bits(m: &Model) -> Vec<u64> {
    [&m.net, &m.generator, &m.critic]
        .iter()
        .flat_map(|s| s.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits() as u64)).collect::<Vec<_>>())
        .collect()
}

fn train(source: &Dataset, target: &Dataset, cfg: &TrainConfig) -> Model {
    let (mut m, _) = warmup(source, cfg).unwrap();
    adapt(&mut m, source, target, cfg, &mut ()).unwrap();
    m
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let (s, t) = data(60, 1);
    let cfg = small();
    let (mut a, wa) = warmup(&s, &cfg).unwrap();
    let (mut b, wb) = warmup(&s, &cfg).unwrap();
    assert_eq!(wa, wb);
    let ra = adapt(&mut a, &s, &t, &cfg, &mut ()).unwrap();
    let rb = adapt(&mut b, &s, &t, &cfg, &mut ()).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(bits(&a), bits(&b));
    let other = train(&s, &t, &TrainConfig { seed: 1, ..cfg });
    assert_ne!(bits(&a), bits(&other));
}

#[test]
fn scrambled_target_labels_change_no_parameter() {
    let (s, t) = data(60, 2);
    let mut rng = Rng::new(99);
    let scrambled = t.map_labels(|_| Some(rng.below(2))).unwrap();
    assert_ne!(
        t.graphs().iter().map(|g| g.label).collect::<Vec<_>>(),
        scrambled.graphs().iter().map(|g| g.label).collect::<Vec<_>>()
    );
    let unlabelled = t.map_labels(|_| None).unwrap();
    let cfg = small();
    let reference = bits(&train(&s, &t, &cfg));
    assert_eq!(bits(&train(&s, &scrambled, &cfg)), reference);
    assert_eq!(bits(&train(&s, &unlabelled, &cfg)), reference);
}

#[test]
fn adaptation_without_extra_terms_reduces_to_source_training() {
    let (s, t) = data(70, 3);
    let cfg = TrainConfig { gamma: 0.0, eta: 0.0, tau: 1.0, adapt_epochs: 1, ..small() };
    let (base, _) = warmup(&s, &cfg).unwrap();

    let mut plain = base.clone();
    warmup_epochs(&mut plain, &s, &cfg, 1).unwrap();
    let mut adapted = base;
    let report = adapt(&mut adapted, &s, &t, &cfg, &mut ()).unwrap();

    assert_eq!(report.epochs[0].confident_size, 0);
    for step in &report.steps {
        assert_eq!(step.total.to_bits(), step.l_so.to_bits());
    }
    assert_eq!(plain.epochs_done, adapted.epochs_done);
    for ((name, p), (_, q)) in plain.net.iter().zip(adapted.net.iter()) {
        let same = p.value.data().iter().zip(q.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{name} differs");
    }
}

#[test]
fn logged_total_matches_its_components() {
    let (s, t) = data(60, 4);
    let cfg = TrainConfig { gamma: 0.5, eta: 0.3, ..small() };
    let (mut m, _) = warmup(&s, &cfg).unwrap();
    let report = adapt(&mut m, &s, &t, &cfg, &mut ()).unwrap();
    for step in &report.steps {
        assert!((step.total - step.recomputed_total(cfg.gamma, cfg.eta)).abs() < 1e-9);
    }
}

#[test]
fn evaluation_ignores_dataset_order() {
    let (s, t) = data(80, 5);
    let (m, _) = warmup(&s, &small()).unwrap();
    let perm = Rng::new(3).permutation(t.len());
    let shuffled = t.subset("shuffled", &perm);
    assert_eq!(evaluate(&t, &m).unwrap().accuracy, evaluate(&shuffled, &m).unwrap().accuracy);
}

#[test]
fn warmup_separates_the_synthetic_source() {
    let (s, _) = data(500, 0);
    let (_, report) = warmup(&s, &TrainConfig::default()).unwrap();
    assert!(report.source_train_acc >= 0.95, "{}", report.source_train_acc);
}

#[test]
fn generator_residual_falls_on_average_early_in_adaptation() {
    let (s, t) = data(500, 0);
    let cfg = TrainConfig { adapt_epochs: 10, ..TrainConfig::default() };
    let (mut m, _) = warmup(&s, &cfg).unwrap();
    let report = adapt(&mut m, &s, &t, &cfg, &mut ()).unwrap();
    let l_ge: Vec<Real> = report.epochs.iter().map(|e| e.l_ge).collect();
    let trailing: Vec<Real> = (0..l_ge.len()).map(|i| l_ge[..=i].iter().sum::<Real>() / (i + 1) as Real).collect();
    let falls = trailing.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(trailing[9] < trailing[0], "{l_ge:?}");
    assert!(falls * 2 >= trailing.len() - 1, "{l_ge:?}");
}
