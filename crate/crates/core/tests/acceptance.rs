//! Acceptance criteria, one pass/fail line each.
//!
//! Run with `cargo test --release -p slogan-core --test acceptance`. Pass
//! criterion numbers after `--` to run a subset. Failures are reported but
//! only turn into a non-zero exit status when `SLOGAN_ACCEPTANCE_STRICT` is
//! set. The real-data criterion runs when `SLOGAN_TU_ROOT` holds the PTC
//! files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use slogan::calibrator::{build_thresholds, select_confident, select_fixed, PredictionRecord};
use slogan::cli::{self, DataSpec, RunConfig, SplitSpec};
use slogan::disentangler::{critic_fit_step, estimate_mi, CriticParams, FeatureSnapshot};
use slogan::gradcore::{op_gradient_suite, ParamStore, Real, Rng, Tensor};
use slogan::graphdata::{Dataset, Domain, Graph, SynthConfig, SYNTH_FEATURE_DIM};
use slogan::trainer::{
    ablate_seed, adapt, bench_scaling, composite_gradient_suite, domain_probe, evaluate, warmup, Ablation,
    AblationTable, BenchConfig, Model, TrainConfig,
};

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit_secs: Option<f64>,
    run: fn() -> Check,
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn gradients() -> Check {
    let ops = op_gradient_suite(0, 20, 1e-3)?;
    let losses = composite_gradient_suite(0, 4, 1e-3)?;
    let worst_op = ops.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("ops");
    let worst_loss = losses.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("losses");
    let failed: Vec<String> = ops
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.op.to_string())
        .chain(losses.iter().filter(|c| !c.passed).map(|c| format!("{}/{}", c.loss.name(), c.param)))
        .collect();
    Ok((
        failed.is_empty(),
        format!(
            "{} ops x 20 inputs, {} loss/parameter pairs; worst op {} {:.1e}, worst loss {}/{} {:.1e}{}",
            ops.len(),
            losses.len(),
            worst_op.op,
            worst_op.max_rel_error,
            worst_loss.loss.name(),
            worst_loss.param,
            worst_loss.max_rel_error,
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    ))
}

fn random_graph(id: usize, rng: &mut Rng) -> Result<Graph, slogan::Error> {
    let n = rng.range_inclusive(2, 30);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.below(v), v)).collect();
    for _ in 0..n / 2 {
        let (a, b) = (rng.below(n), rng.below(n));
        if a != b {
            edges.push((a, b));
        }
    }
    Graph::new(id, n, edges, rng.normal_tensor(&[n, SYNTH_FEATURE_DIM], 1.0), Some(id % 2), Domain::Source)
}

fn structural_invariance() -> Check {
    let mut rng = Rng::new(11);
    let graphs = (0..100).map(|i| random_graph(i, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    let model = Model::new(SYNTH_FEATURE_DIM, 2, &TrainConfig::default())?;
    let refs: Vec<&Graph> = graphs.iter().collect();
    let batched = model.features(&refs)?.z;
    let (mut perm_dev, mut batch_dev): (Real, Real) = (0.0, 0.0);
    for (i, g) in graphs.iter().enumerate() {
        let single = model.features(&[g])?.z;
        let permuted = model.features(&[&g.permute_nodes(&rng.permutation(g.node_count()))?])?.z;
        perm_dev = perm_dev.max(single.max_abs_diff(&permuted));
        let row = Tensor::new(&[1, batched.cols()], batched.row(i).to_vec())?;
        batch_dev = batch_dev.max(single.max_abs_diff(&row));
    }
    Ok((
        perm_dev < 1e-5 && batch_dev < 1e-5,
        format!("100 graphs; permutation deviation {perm_dev:.1e}, batch deviation {batch_dev:.1e}"),
    ))
}

fn record(id: usize, class: usize, s: Real) -> Result<PredictionRecord, slogan::Error> {
    let probs = if class == 0 { vec![s, 1.0 - s] } else { vec![1.0 - s, s] };
    PredictionRecord::from_probs(id, probs)
}

fn calibration_algebra() -> Check {
    let recs = vec![record(0, 0, 0.8)?, record(1, 0, 0.6)?, record(2, 1, 0.9)?];
    let table = build_thresholds(&recs, 0.95, 2)?;
    let max_ok = table.max_confidence == vec![Some(0.8), Some(0.9)];
    let tau_ok = (table.class_tau[0] - 0.76).abs() < 1e-12 && (table.class_tau[1] - 0.855).abs() < 1e-12;
    let members: Vec<usize> = select_confident(&recs, &table)?.members.iter().map(|m| m.index).collect();
    let member_ok = members == vec![0, 2];

    let mut rng = Rng::new(3);
    let pool: Vec<PredictionRecord> = (0..200)
        .map(|i| record(i, rng.below(2), rng.uniform_range(0.5, 1.0)))
        .collect::<Result<_, _>>()?;
    let taus = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99];
    let sizes: Vec<usize> = taus
        .iter()
        .map(|&t| Ok(select_confident(&pool, &build_thresholds(&pool, t, 2)?)?.len()))
        .collect::<Result<_, slogan::Error>>()?;
    let monotone = sizes.windows(2).all(|w| w[0] >= w[1]);

    let base = [0.999, 0.99, 0.98, 0.97, 0.96, 0.955, 0.9, 0.85];
    let skewed: Vec<PredictionRecord> = base
        .iter()
        .enumerate()
        .map(|(i, &s)| record(i, 0, s))
        .chain(base.iter().enumerate().map(|(i, &s)| record(100 + i, 1, 0.8 * s)))
        .collect::<Result<_, _>>()?;
    let adaptive = select_confident(&skewed, &build_thresholds(&skewed, 0.95, 2)?)?;
    let fixed = select_fixed(&skewed, 0.95);
    let balance_ok = adaptive.count_class(0) > 0
        && adaptive.count_class(1) > 0
        && fixed.count_class(0) > 0
        && fixed.count_class(1) == 0;

    Ok((
        max_ok && tau_ok && member_ok && monotone && balance_ok,
        format!(
            "tau_c {:?}, members {members:?}, sizes over tau {sizes:?}, adaptive admits {}/{} vs fixed {}/{}",
            table.class_tau,
            adaptive.count_class(0),
            adaptive.count_class(1),
            fixed.count_class(0),
            fixed.count_class(1)
        ),
    ))
}

fn mi_calibration() -> Check {
    let (n, c_dim, s_dim, z_dim) = (512, 4, 4, 8);
    let mut rng = Rng::new(21);
    let toy = |rng: &mut Rng| -> Result<(FeatureSnapshot, Vec<usize>), slogan::Error> {
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let mut z_c = Tensor::zeros(&[n, c_dim]);
        for (i, &y) in labels.iter().enumerate() {
            z_c.data_mut()[i * c_dim + y] = 1.0;
        }
        let feats = FeatureSnapshot {
            z: rng.normal_tensor(&[n, z_dim], 1.0),
            z_c,
            z_s: rng.normal_tensor(&[n, s_dim], 1.0),
        };
        Ok((feats, labels))
    };
    let spec = CriticParams::new(c_dim, s_dim, z_dim, 2);
    let mut store = ParamStore::new();
    spec.init(&mut store, &mut rng)?;
    let lr = TrainConfig::default().critic_lr;
    for _ in 0..200 {
        let (feats, labels) = toy(&mut rng)?;
        critic_fit_step(&feats, &labels, &spec, &mut store, &mut rng, lr)?;
    }
    let (feats, labels) = toy(&mut rng)?;
    let est = estimate_mi(&feats, &labels, &spec, &store, &mut rng)?;
    let threshold = (2.0 as Real).ln() - 0.2;
    Ok((
        est.causal_mi > threshold && est.spurious_label_mi < 0.2,
        format!(
            "I(z^c;y) estimate {:.4} (needs > {threshold:.4}), I(z^s;y) estimate {:.4} (needs < 0.2)",
            est.causal_mi, est.spurious_label_mi
        ),
    ))
}

fn synthetic(seed: u64) -> Result<(Dataset, Dataset), slogan::Error> {
    cli::synthetic_pair(&SynthConfig::default(), seed)
}

fn mean(xs: &[Real]) -> Real {
    xs.iter().sum::<Real>() / xs.len() as Real
}

fn adaptation_gain() -> Check {
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let (s, t) = synthetic(seed)?;
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let (mut m, _) = warmup(&s, &cfg)?;
        before.push(evaluate(&t, &m)?.accuracy);
        adapt(&mut m, &s, &t, &cfg, &mut ())?;
        after.push(evaluate(&t, &m)?.accuracy);
    }
    let gain = mean(&after) - mean(&before);
    Ok((
        gain >= 0.05,
        format!(
            "target acc source-only {:.4} -> adapted {:.4}, gain {:+.2} points (needs >= +5); per seed {:?}",
            mean(&before),
            mean(&after),
            100.0 * gain,
            before.iter().zip(&after).map(|(b, a)| format!("{b:.3}->{a:.3}")).collect::<Vec<_>>()
        ),
    ))
}

fn ablation_ordering() -> Check {
    let rows = SEEDS
        .iter()
        .map(|&seed| {
            let (s, t) = synthetic(seed)?;
            ablate_seed(&s, &t, &TrainConfig { seed, ..TrainConfig::default() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = AblationTable { rows };
    let m = table.mean();
    let ok = Ablation::ALL.iter().all(|&a| m.full >= m.get(Some(a)));
    let wins = table.full_wins(Ablation::NoInv);
    Ok((
        ok,
        format!(
            "mean target acc full {:.4}, no_sup_target {:.4}, no_inv {:.4}, no_dis {:.4} (source-only {:.4}); full beats no_inv on {wins}/5 seeds",
            m.full, m.no_sup_target, m.no_inv, m.no_dis, m.source_only
        ),
    ))
}

fn disentanglement_probe() -> Check {
    let (s, t) = synthetic(0)?;
    let cfg = TrainConfig::default();
    let (mut m, _) = warmup(&s, &cfg)?;
    adapt(&mut m, &s, &t, &cfg, &mut ())?;
    let p = domain_probe(&m, &s, &t, 0)?;
    let gap = p.spurious_acc - p.causal_acc;
    Ok((
        gap >= 0.10,
        format!(
            "domain probe on z^s {:.4}, on z^c {:.4}, gap {:+.2} points (needs >= +10)",
            p.spurious_acc,
            p.causal_acc,
            100.0 * gap
        ),
    ))
}

fn complexity() -> Check {
    let r = bench_scaling(&BenchConfig::default())?;
    let times: Vec<String> = r.rows.iter().map(|row| format!("{}:{:.4}s", row.nodes, row.median_secs)).collect();
    Ok((r.r_squared >= 0.98, format!("R^2 {:.4} (needs >= 0.98); {}", r.r_squared, times.join(" "))))
}

fn run_config(out: &Path, seed: u64) -> RunConfig {
    RunConfig {
        command: cli::Command::Adapt,
        data: Some(DataSpec::Synthetic(SynthConfig { n_per_domain: 120, ..SynthConfig::default() })),
        split: SplitSpec { parts: 4, source_idx: 0, target_idx: 1 },
        train: TrainConfig { seed, warmup_epochs: 10, adapt_epochs: 3, ..TrainConfig::default() },
        ablation: None,
        num_seeds: 1,
        features_every: Some(1),
        out: out.to_path_buf(),
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism_and_canary() -> Check {
    let dir = tempfile::tempdir()?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cli::run(&run_config(&a, 7))?;
    cli::run(&run_config(&b, 7))?;
    let mut compared = 0;
    let mut differing = Vec::new();
    for fa in files(&a) {
        let rel = fa.strip_prefix(&a)?.to_path_buf();
        let (x, y) = (std::fs::read_to_string(&fa)?, std::fs::read_to_string(b.join(&rel))?);
        let strip = |s: &str| s.replace(a.to_str().unwrap_or_default(), "").replace(b.to_str().unwrap_or_default(), "");
        compared += 1;
        if strip(&x) != strip(&y) {
            differing.push(rel.display().to_string());
        }
    }

    let (s, t) = synthetic(3)?;
    let mut rng = Rng::new(5);
    let scrambled = t.map_labels(|_| Some(rng.below(2)))?;
    let cfg = TrainConfig { seed: 3, warmup_epochs: 10, adapt_epochs: 3, ..TrainConfig::default() };
    let train = |target: &Dataset| -> Result<String, slogan::Error> {
        let (mut m, _) = warmup(&s, &cfg)?;
        adapt(&mut m, &s, target, &cfg, &mut ())?;
        Ok(serde_json::to_string(&m)?)
    };
    let canary_ok = train(&t)? == train(&scrambled)?;
    Ok((
        differing.is_empty() && compared > 5 && canary_ok,
        format!(
            "{compared} output files compared, {} differ{}; scrambled target labels leave parameters {}",
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) },
            if canary_ok { "bit-identical" } else { "CHANGED" }
        ),
    ))
}

fn real_data() -> Check {
    let Some(root) = std::env::var_os("SLOGAN_TU_ROOT").map(PathBuf::from) else {
        return Ok((true, "SKIP: SLOGAN_TU_ROOT not set; PTC files not supplied (report-only)".into()));
    };
    let dir = tempfile::tempdir()?;
    let cfg = RunConfig {
        command: cli::Command::Adapt,
        data: Some(DataSpec::TuDataset { root, name: "PTC_MR".into(), target_name: Some("PTC_MM".into()) }),
        split: SplitSpec { parts: 4, source_idx: 0, target_idx: 1 },
        train: TrainConfig::default(),
        ablation: None,
        num_seeds: 1,
        features_every: None,
        out: dir.path().to_path_buf(),
    };
    match cli::run(&cfg) {
        Ok(summary) => Ok((true, format!("report-only: {summary}"))),
        Err(e) => Ok((false, format!("MR->MM did not complete: {e}"))),
    }
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient correctness", limit_secs: Some(120.0), run: gradients },
        Criterion { id: 2, name: "structural invariance", limit_secs: Some(30.0), run: structural_invariance },
        Criterion { id: 3, name: "calibration algebra", limit_secs: Some(5.0), run: calibration_algebra },
        Criterion { id: 4, name: "MI estimator calibration", limit_secs: Some(60.0), run: mi_calibration },
        Criterion { id: 5, name: "directional adaptation gain", limit_secs: Some(900.0), run: adaptation_gain },
        Criterion { id: 6, name: "ablation ordering", limit_secs: Some(2700.0), run: ablation_ordering },
        Criterion { id: 7, name: "disentanglement probe", limit_secs: Some(300.0), run: disentanglement_probe },
        Criterion { id: 8, name: "linear complexity", limit_secs: Some(120.0), run: complexity },
        Criterion { id: 9, name: "determinism and label canary", limit_secs: None, run: determinism_and_canary },
        Criterion { id: 10, name: "real-data run (report-only)", limit_secs: None, run: real_data },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        ran += 1;
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (mut passed, detail) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let timing = match c.limit_secs {
            Some(limit) => {
                if secs > limit {
                    passed = false;
                }
                format!("{secs:.1}s / {limit:.0}s")
            }
            None => format!("{secs:.1}s"),
        };
        println!("[{}] {:>2} {} ({timing}): {detail}", if passed { "PASS" } else { "FAIL" }, c.id, c.name);
        if !passed {
            failed.push(c.id);
        }
    }
    println!("acceptance: {}/{ran} criteria passed{}", ran - failed.len(), if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") });
    if !failed.is_empty() && std::env::var_os("SLOGAN_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
