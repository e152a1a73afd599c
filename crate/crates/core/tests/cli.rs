use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slogan::gradcore::{Rng, Tensor};
use slogan::graphdata::{parse_tudataset, write_tudataset, Dataset, Domain, Graph};

const TINY: &[&str] = &["--synthetic", "--n-per-domain", "24", "--warmup-epochs", "2", "--adapt-epochs", "2", "--batch-size", "16"];

fn slogan(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slogan"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SLOGAN_OUT")
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = slogan(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Graphs whose density grows with their index, 2 node labels, 2 classes.
fn density_fixture(dir: &Path, name: &str, count: usize) {
    let mut rng = Rng::new(5);
    let graphs = (0..count)
        .map(|i| {
            let n = 8;
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
            for _ in 0..(i % 20) {
                edges.push((rng.below(n), rng.below(n)));
            }
            edges.retain(|(a, b)| a != b);
            let mut feats = vec![0.0; n * 2];
            for v in 0..n {
                feats[v * 2 + (v % 2)] = 1.0;
            }
            Graph::new(i, n, edges, Tensor::new(&[n, 2], feats).unwrap(), Some(i % 2), Domain::Source).unwrap()
        })
        .collect();
    let ds = Dataset::new(name, graphs, 2, 2).unwrap();
    write_tudataset(&ds, dir, name).unwrap();
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"gamma": 0.003, "eta": 0.2, "synthetic": true, "n-per-domain": 24, "warmup-epochs": 1, "adapt-epochs": 1}"#).unwrap();
    let out = dir.path().join("run");
    ok(&["adapt", "--config", cfg.to_str().unwrap(), "--gamma", "0.01"], &out);
    let echo = json(out.join("config_echo.json"));
    assert_eq!(echo["gamma"], 0.01);
    assert_eq!(echo["eta"], 0.2);
}

#[test]
fn equal_indices_are_rejected_and_nothing_is_left_behind() {
    let dir = tempfile::tempdir().unwrap();
    density_fixture(dir.path(), "FIX", 40);
    let out = dir.path().join("run");
    let root = dir.path().to_str().unwrap();
    let o = slogan(&["adapt", "--dataset-root", root, "--dataset-name", "FIX", "--source-idx", "1", "--target-idx", "1"], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("target-idx"));
    assert!(!out.exists() || files_under(&out).is_empty());

    let o = slogan(&["adapt", "--dataset-root", root, "--dataset-name", "MISSING"], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("MISSING_A.txt"));
    assert!(files_under(&out).is_empty(), "{:?}", files_under(&out));

    assert!(!slogan(&["adapt", "--bogus"], &out).status.success());
}

#[test]
fn split_writes_density_ordered_sub_datasets() {
    let dir = tempfile::tempdir().unwrap();
    density_fixture(dir.path(), "FIX", 40);
    let out = dir.path().join("split");
    ok(&["split", "--dataset-root", dir.path().to_str().unwrap(), "--dataset-name", "FIX", "--parts", "4"], &out);
    let densities: Vec<f64> = (0..4)
        .map(|k| {
            let name = format!("N{k}");
            assert!(out.join(&name).is_dir());
            parse_tudataset(&out, &name).unwrap().mean_density() as f64
        })
        .collect();
    assert!(densities.windows(2).all(|w| w[0] < w[1]), "{densities:?}");
    let sub = ok(&["adapt", "--dataset-root", out.to_str().unwrap(), "--dataset-name", "N0", "--target-dataset-name", "N3", "--warmup-epochs", "1", "--adapt-epochs", "1"], &dir.path().join("cross"));
    assert!(sub.starts_with("adapt: N0 -> N3"), "{sub}");
}

#[test]
fn adapt_then_eval_reports_accuracies_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut adapt_args = vec!["adapt"];
    adapt_args.extend_from_slice(TINY);
    ok(&adapt_args, &out);
    let mut eval_args = vec!["eval"];
    eval_args.extend_from_slice(TINY);
    let summary = ok(&eval_args, &out);
    assert!(summary.starts_with("eval: source acc"), "{summary}");
    assert_eq!(summary.lines().count(), 1);
    let r = json(out.join("result.json"));
    assert!(r["source_acc"].as_f64().unwrap() >= 0.0);
    assert!(r["target_acc"].as_f64().is_some());
    for key in ["gamma", "eta", "tau", "lr", "batch-size", "seed", "synthetic", "rho-s", "warmup-epochs", "adapt-epochs"] {
        assert!(!r["config"][key].is_null(), "{key} missing");
    }
}

#[test]
fn same_seed_gives_byte_identical_metrics_and_echo_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["adapt", "--seed", "7"];
    args.extend_from_slice(TINY);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&args, &a);
    ok(&args, &b);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());

    ok(&["adapt", "--config", a.join("config_echo.json").to_str().unwrap()], &c);
    for f in ["metrics.csv", "warmup.csv", "model.json", "confident/epoch_001.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap(), "{f}");
    }
    let (mut ra, mut rc) = (json(a.join("result.json")), json(c.join("result.json")));
    ra["config"]["out"] = serde_json::Value::Null;
    rc["config"]["out"] = serde_json::Value::Null;
    assert_eq!(ra, rc);
}

#[test]
fn out_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_slogan"))
        .args(["train-source", "--synthetic", "--n-per-domain", "10", "--warmup-epochs", "1"])
        .env("SLOGAN_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("model.json").exists());
}

#[test]
fn every_csv_has_a_header_and_constant_width() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["adapt", "--features-every", "1"];
    args.extend_from_slice(TINY);
    ok(&args, &out);
    let mut ab = vec!["ablate", "--num-seeds", "2"];
    ab.extend_from_slice(TINY);
    ok(&ab, &out);
    let mut df = vec!["dump-features"];
    df.extend_from_slice(TINY);
    ok(&df, &out);
    let mut audit = vec!["audit-bound"];
    audit.extend_from_slice(TINY);
    ok(&audit, &out);
    let a = json(out.join("audit.json"));
    assert!(a["reconstruction_residual"].as_f64().unwrap() >= 0.0);

    let csvs: Vec<PathBuf> = files_under(&out).into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    assert!(csvs.len() >= 7, "{csvs:?}");
    for path in csvs {
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.chars().next().unwrap().is_ascii_alphabetic(), "{}", path.display());
        let width = header.split(',').count();
        for l in lines {
            assert_eq!(l.split(',').count(), width, "{}: {l}", path.display());
        }
    }
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "seed,source_only,full,no_sup_target,no_inv,no_dis");
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn gen_synth_output_loads_as_a_cross_dataset_pair() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-synth", "--n-per-domain", "16"], &data);
    let src = parse_tudataset(&data, "SYNTH_SRC").unwrap();
    assert_eq!(src.len(), 16);
    let line = ok(
        &["train-source", "--dataset-root", data.to_str().unwrap(), "--dataset-name", "SYNTH_SRC", "--target-dataset-name", "SYNTH_TGT", "--warmup-epochs", "1"],
        &dir.path().join("run"),
    );
    assert!(line.starts_with("train-source:"), "{line}");
}
