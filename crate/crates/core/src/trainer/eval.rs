use serde::{Deserialize, Serialize};

use super::model::{streams, Model};
use crate::encoder::LinearSpec;
use crate::error::{Error, Result};
use crate::gradcore::{ParamStore, Real, Rng, Tape, Tensor};
use crate::graphdata::{Dataset, Domain, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Real,
    /// Accuracy restricted to each true class; `None` when the class is absent.
    pub per_class: Vec<Option<Real>>,
    pub count: usize,
}

/// Argmax accuracy of the `z^c` classifier against true labels.
pub fn evaluate(ds: &Dataset, model: &Model) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::InvalidInput(format!("dataset `{}` is empty", ds.name)));
    }
    if !ds.is_labelled() {
        return Err(Error::InvalidInput(format!("dataset `{}` has unlabelled graphs", ds.name)));
    }
    let graphs: Vec<&Graph> = ds.graphs().iter().collect();
    let predicted = model.predict(&graphs)?;
    let labels: Vec<usize> = graphs.iter().map(|g| g.label.expect("checked")).collect();
    Ok(accuracy_report(&predicted, &labels, model.spec.num_classes))
}

pub fn accuracy_report(predicted: &[usize], labels: &[usize], num_classes: usize) -> EvalReport {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        totals[y] += 1;
        hits[y] += usize::from(p == y);
    }
    EvalReport {
        accuracy: hits.iter().sum::<usize>() as Real / labels.len() as Real,
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as Real / t as Real))
            .collect(),
        count: labels.len(),
    }
}

/// Held-out accuracy of linear domain probes on frozen `z^s` and `z^c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub spurious_acc: Real,
    pub causal_acc: Real,
}

const PROBE_STEPS: usize = 300;
const PROBE_LR: Real = 0.05;

/// Trains a logistic-regression probe for the domain tag on standardised
/// features of half the graphs and scores it on the other half.
pub fn domain_probe(model: &Model, source: &Dataset, target: &Dataset, seed: u64) -> Result<ProbeReport> {
    let graphs: Vec<&Graph> = source.graphs().iter().chain(target.graphs()).collect();
    if graphs.len() < 4 {
        return Err(Error::InvalidInput("domain probe needs at least 4 graphs".into()));
    }
    let domains: Vec<usize> = graphs.iter().map(|g| usize::from(g.domain == Domain::Target)).collect();
    let feats = model.features(&graphs)?;
    let mut rng = Rng::new(seed).stream(streams::PROBE);
    let order = rng.permutation(graphs.len());
    let (train, test) = order.split_at(graphs.len() / 2);
    Ok(ProbeReport {
        spurious_acc: probe_accuracy(&feats.z_s, &domains, train, test, &mut rng)?,
        causal_acc: probe_accuracy(&feats.z_c, &domains, train, test, &mut rng)?,
    })
}

fn standardise(x: &Tensor, fit_rows: &[usize]) -> Tensor {
    let d = x.cols();
    let n = fit_rows.len() as Real;
    let mut mu = vec![0.0; d];
    let mut var = vec![0.0; d];
    for &r in fit_rows {
        for (m, v) in mu.iter_mut().zip(x.row(r)) {
            *m += v / n;
        }
    }
    for &r in fit_rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mu) {
            *s += (v - m).powi(2) / n;
        }
    }
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = i % d;
            let sd = var[c].sqrt();
            if sd > 1e-12 { (v - mu[c]) / sd } else { 0.0 }
        })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Trains a two-class logistic probe on `train` rows and returns accuracy on `test`.
pub fn probe_accuracy(x: &Tensor, y: &[usize], train: &[usize], test: &[usize], rng: &mut Rng) -> Result<Real> {
    let classes = y.iter().max().map_or(1, |m| m + 1).max(2);
    let x = standardise(x, train);
    let xt = x.select_rows(train)?;
    let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let head = LinearSpec::new("probe", x.cols(), classes);
    let mut store = ParamStore::new();
    head.init(&mut store, rng)?;
    for _ in 0..PROBE_STEPS {
        let tape = Tape::new();
        let lin = head.bind(&store, &tape)?;
        let loss = lin.forward(tape.constant(xt.clone()))?.nll_log_softmax(&yt)?.mean_all()?;
        loss.backward()?;
        store.collect_grads(&tape);
        store.adam_step(PROBE_LR)?;
    }
    let tape = Tape::new();
    let lin = head.bind_frozen(&store, &tape)?;
    let logits = lin.forward(tape.constant(x.select_rows(test)?))?.value();
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            let row = logits.row(r);
            let best = (0..classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == y[i]
        })
        .count();
    Ok(correct as Real / test.len() as Real)
}
