//! Baseline representations, k-NN classification and a linear probe.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::average_features;
use crate::error::{Error, Result};
use crate::map_indices;
use crate::optim::{SgdConfig, SgdState};
use crate::store::{EnsembleSet, FeatureMatrix, LabelVector};
use crate::tensor::{cosine_with_norms, norm, Matrix, MIN_NORM};

/// Averaging baseline: normalized sum of the members' features.
pub fn baseline_average(ensemble: &EnsembleSet) -> Result<FeatureMatrix> {
    FeatureMatrix::new(average_features(ensemble)?)
}

/// Concatenation baseline: members joined row-wise in manifest order.
pub fn baseline_concat(ensemble: &EnsembleSet) -> Result<FeatureMatrix> {
    let (n, d, m) = (ensemble.num_rows(), ensemble.dim(), ensemble.num_models());
    let mut out = Matrix::zeros(n, d * m);
    for i in 0..n {
        let row = out.row_mut(i);
        for (j, member) in ensemble.members().iter().enumerate() {
            row[j * d..(j + 1) * d].copy_from_slice(member.row(i));
        }
    }
    FeatureMatrix::new(out)
}

/// Individual baseline: a single member's features.
pub fn baseline_individual(ensemble: &EnsembleSet, model: usize) -> Result<FeatureMatrix> {
    ensemble
        .members()
        .get(model)
        .cloned()
        .ok_or_else(|| Error::InvalidConfig(format!("no model with index {model}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

fn row_norms(m: &Matrix) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(row, r)| {
            let n = norm(r);
            if n < MIN_NORM {
                Err(Error::DegenerateRow { row, norm: n })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Neighbor order: higher similarity first, then lower train index.
#[inline]
fn neighbor_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Plain majority vote over neighbors sorted nearest first. Tied classes go to
/// the one whose nearest member appears first.
pub fn majority_vote(sorted_neighbor_labels: &[u32], num_classes: u32) -> u32 {
    let mut counts = vec![0usize; num_classes as usize];
    for &l in sorted_neighbor_labels {
        counts[l as usize] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    sorted_neighbor_labels
        .iter()
        .copied()
        .find(|&l| counts[l as usize] == best)
        .unwrap_or(0)
}

/// Cosine k-NN: each test row takes the majority label of its `k` most similar
/// train rows.
pub fn knn_classify(
    train: &Matrix,
    train_labels: &LabelVector,
    test: &Matrix,
    cfg: &KnnConfig,
) -> Result<Vec<u32>> {
    if train.cols() != test.cols() {
        return Err(Error::shape("knn feature dimension", train.cols(), test.cols()));
    }
    if train_labels.len() != train.rows() {
        return Err(Error::shape("knn train labels", train.rows(), train_labels.len()));
    }
    if cfg.k == 0 || cfg.k > train.rows() {
        return Err(Error::InvalidConfig(format!(
            "k must be in 1..={}, got {}",
            train.rows(),
            cfg.k
        )));
    }
    let train_norms = row_norms(train)?;
    let test_norms = row_norms(test)?;
    let labels = train_labels.ids();
    let k = cfg.k;

    Ok(map_indices(test.rows(), |i| {
        let q = test.row(i);
        let mut sims: Vec<(f64, usize)> = train
            .iter_rows()
            .zip(&train_norms)
            .enumerate()
            .map(|(j, (r, &nr))| (cosine_with_norms(q, test_norms[i], r, nr), j))
            .collect();
        if k < sims.len() {
            sims.select_nth_unstable_by(k - 1, neighbor_order);
            sims.truncate(k);
        }
        sims.sort_unstable_by(neighbor_order);
        let nearest: Vec<u32> = sims.iter().map(|&(_, j)| labels[j]).collect();
        majority_vote(&nearest, train_labels.num_classes())
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub k: Option<usize>,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Accuracy per class id; `None` where the class has no evaluation rows.
    pub per_class: Vec<Option<f64>>,
    pub config: serde_json::Value,
}

pub fn knn_accuracy(predictions: &[u32], labels: &LabelVector) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions vs labels", labels.len(), predictions.len()));
    }
    let classes = labels
        .num_classes()
        .max(predictions.iter().max().map_or(0, |m| m + 1)) as usize;
    let mut hit = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (&p, &t) in predictions.iter().zip(labels.ids()) {
        seen[t as usize] += 1;
        if p == t {
            hit[t as usize] += 1;
        }
    }
    let correct: usize = hit.iter().sum();
    let total = predictions.len();
    Ok(EvalReport {
        method: String::new(),
        k: None,
        accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        correct,
        total,
        per_class: hit
            .iter()
            .zip(&seen)
            .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
            .collect(),
        config: serde_json::Value::Null,
    })
}

/// k-NN classification and scoring in one call, tagged with `method`.
pub fn knn_evaluate(
    method: &str,
    train: &Matrix,
    train_labels: &LabelVector,
    test: &Matrix,
    test_labels: &LabelVector,
    cfg: &KnnConfig,
) -> Result<EvalReport> {
    let preds = knn_classify(train, train_labels, test, cfg)?;
    let mut report = knn_accuracy(&preds, test_labels)?;
    report.method = method.to_string();
    report.k = Some(cfg.k);
    report.config = serde_json::json!({ "k": cfg.k, "similarity": "cosine" });
    Ok(report)
}

pub const DEFAULT_PROBE_SWEEP: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub sweep: Vec<f64>,
    pub seed: u64,
}

impl Default for ProbeConfig {
    /// Desk-scale defaults; the full-scale protocol is 1000 epochs at batch
    /// 4096 with lr 1.6, of which lr 0.1 at batch 256 is the linear rescaling.
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            lr: 0.1,
            momentum: 0.9,
            sweep: DEFAULT_PROBE_SWEEP.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub report: EvalReport,
    pub selected_lambda: f64,
    /// `(λ, validation accuracy)` in sweep order.
    pub validation: Vec<(f64, f64)>,
    pub n_fit: usize,
    pub n_val: usize,
}

/// Multinomial logistic classifier `softmax(x W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    dim: usize,
    classes: usize,
    /// `dim x classes` weights followed by `classes` biases.
    params: Vec<f64>,
}

impl LinearClassifier {
    fn new(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            params: vec![0.0; dim * classes + classes],
        }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let (w, b) = self.params.split_at(self.dim * self.classes);
        out.copy_from_slice(b);
        for (i, &xi) in x.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[i * self.classes..(i + 1) * self.classes]) {
                *o += xi * wv;
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> u32 {
        let mut z = vec![0.0; self.classes];
        self.logits(x, &mut z);
        let mut best = 0;
        for c in 1..self.classes {
            if z[c] > z[best] {
                best = c;
            }
        }
        best as u32
    }

    /// Mean cross-entropy gradient over `rows`.
    fn gradient(&self, x: &Matrix, labels: &[u32], rows: &[usize], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut z = vec![0.0; self.classes];
        let scale = 1.0 / rows.len() as f64;
        let split = self.dim * self.classes;
        for &r in rows {
            let xr = x.row(r);
            self.logits(xr, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for (c, v) in z.iter_mut().enumerate() {
                *v /= sum;
                if c == labels[r] as usize {
                    *v -= 1.0;
                }
                *v *= scale;
            }
            let (gw, gb) = grad.split_at_mut(split);
            for (i, &xi) in xr.iter().enumerate() {
                for (g, &dz) in gw[i * self.classes..(i + 1) * self.classes].iter_mut().zip(&z) {
                    *g += xi * dz;
                }
            }
            for (g, &dz) in gb.iter_mut().zip(&z) {
                *g += dz;
            }
        }
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[u32], rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = rows
            .iter()
            .filter(|&&r| self.predict(x.row(r)) == labels[r])
            .count();
        hits as f64 / rows.len() as f64
    }
}

fn fit_linear(
    x: &Matrix,
    labels: &[u32],
    rows: &[usize],
    classes: usize,
    lambda: f64,
    cfg: &ProbeConfig,
) -> Result<LinearClassifier> {
    let mut model = LinearClassifier::new(x.cols(), classes);
    let mut opt = SgdState::new(
        model.params.len(),
        SgdConfig {
            lr: cfg.lr,
            momentum: cfg.momentum,
            weight_decay: lambda,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = rows.to_vec();
    let mut grad = vec![0.0; model.params.len()];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            model.gradient(x, labels, batch, &mut grad);
            opt.step(&mut model.params, &grad)?;
        }
    }
    Ok(model)
}

/// Linear evaluation with a weight-decay sweep selected on a held-out 10%.
///
/// The sweep winner is the λ with the best validation accuracy (ties go to
/// the smaller λ); the final classifier is refit on the whole train split.
pub fn linear_probe(
    train: &Matrix,
    train_labels: &LabelVector,
    test: &Matrix,
    test_labels: &LabelVector,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if train.cols() != test.cols() {
        return Err(Error::shape("probe feature dimension", train.cols(), test.cols()));
    }
    if train_labels.len() != train.rows() || test_labels.len() != test.rows() {
        return Err(Error::shape(
            "probe labels",
            format!("{} train, {} test", train.rows(), test.rows()),
            format!("{} train, {} test", train_labels.len(), test_labels.len()),
        ));
    }
    let n = train.rows();
    let classes = train_labels.num_classes();
    if classes < 2 {
        return Err(Error::InvalidConfig("linear probe needs at least 2 classes".into()));
    }
    if n < 10 {
        return Err(Error::InvalidConfig(format!("linear probe needs at least 10 train rows, got {n}")));
    }
    if cfg.sweep.is_empty() {
        return Err(Error::InvalidConfig("weight-decay sweep is empty".into()));
    }
    if let Some((index, &label)) = test_labels.ids().iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: classes,
        });
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_5711));
    let n_val = n / 10;
    let (val, fit) = perm.split_at(n_val);
    let mut present = vec![false; classes as usize];
    for &r in fit {
        present[train_labels.ids()[r] as usize] = true;
    }
    if let Some(class) = present.iter().position(|&p| !p) {
        return Err(Error::DegenerateClass { class: class as u32 });
    }

    let labels = train_labels.ids();
    let mut validation = Vec::with_capacity(cfg.sweep.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &cfg.sweep {
        let model = fit_linear(train, labels, fit, classes as usize, lambda, cfg)?;
        let acc = model.accuracy(train, labels, val);
        validation.push((lambda, acc));
        best = match best {
            Some((bl, ba)) if ba > acc || (ba == acc && bl <= lambda) => Some((bl, ba)),
            _ => Some((lambda, acc)),
        };
    }
    let (selected_lambda, _) = best.expect("non-empty sweep");

    let all: Vec<usize> = (0..n).collect();
    let model = fit_linear(train, labels, &all, classes as usize, selected_lambda, cfg)?;
    let preds: Vec<u32> = test.iter_rows().map(|r| model.predict(r)).collect();
    let mut report = knn_accuracy(&preds, test_labels)?;
    report.method = "linear-probe".into();
    report.config = serde_json::json!({
        "lambda": selected_lambda,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "sweep": cfg.sweep,
        "n_fit": fit.len(),
        "n_val": n_val,
    });
    Ok(ProbeReport {
        report,
        selected_lambda,
        validation,
        n_fit: fit.len(),
        n_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Split;

    #[test]
    fn averaging_and_concat_examples() {
        let a = FeatureMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let e = EnsembleSet::unnamed(vec![a.clone(), b], Split::Train).unwrap();
        let avg = baseline_average(&e).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((avg.row(0)[0] - h).abs() < 1e-12 && (avg.row(0)[1] - h).abs() < 1e-12);
        assert_eq!(baseline_concat(&e).unwrap().row(0), &[1.0, 0.0, 0.0, 1.0]);

        let single = EnsembleSet::unnamed(vec![a.clone()], Split::Train).unwrap();
        assert_eq!(baseline_average(&single).unwrap(), a);
        assert_eq!(baseline_concat(&single).unwrap(), a);
        assert_eq!(baseline_individual(&e, 0).unwrap(), a);
        assert!(baseline_individual(&e, 2).is_err());
    }

    #[test]
    fn knn_small_examples() {
        let train = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let labels = LabelVector::from_ids(vec![0, 1]);
        let q = Matrix::from_rows(&[[0.9, 0.1]]).unwrap();
        assert_eq!(knn_classify(&train, &labels, &q, &KnnConfig { k: 1 }).unwrap(), vec![0]);

        // equidistant query with a tied vote: the class with the nearer member wins,
        // and an exact similarity tie falls to the lower train index
        let eq = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert_eq!(knn_classify(&train, &labels, &eq, &KnnConfig { k: 2 }).unwrap(), vec![0]);
        let swapped = LabelVector::from_ids(vec![1, 0]);
        assert_eq!(knn_classify(&train, &swapped, &eq, &KnnConfig { k: 2 }).unwrap(), vec![1]);

        let near_b = Matrix::from_rows(&[[0.4, 0.6]]).unwrap();
        assert_eq!(knn_classify(&train, &labels, &near_b, &KnnConfig { k: 2 }).unwrap(), vec![1]);

        assert!(knn_classify(&train, &labels, &q, &KnnConfig { k: 3 }).is_err());
        assert!(knn_classify(&train, &labels, &q, &KnnConfig { k: 0 }).is_err());
        let zero = Matrix::zeros(1, 2);
        assert!(matches!(
            knn_classify(&train, &labels, &zero, &KnnConfig { k: 1 }),
            Err(Error::DegenerateRow { .. })
        ));
    }

    #[test]
    fn vote_prefers_count_then_nearest() {
        assert_eq!(majority_vote(&[2, 1, 1], 3), 1);
        assert_eq!(majority_vote(&[2, 1, 1, 2], 3), 2);
        assert_eq!(majority_vote(&[0], 1), 0);
    }

    #[test]
    fn accuracy_examples() {
        let labels = LabelVector::from_ids(vec![0, 1, 1, 2]);
        assert_eq!(knn_accuracy(&[0, 1, 1, 2], &labels).unwrap().accuracy, 1.0);
        assert_eq!(knn_accuracy(&[1, 0, 0, 0], &labels).unwrap().accuracy, 0.0);
        let r = knn_accuracy(&[0, 1, 0, 2], &labels).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class, vec![Some(1.0), Some(0.5), Some(1.0)]);
        assert!(knn_accuracy(&[0, 1], &labels).is_err());
    }

    #[test]
    fn probe_input_checks() {
        let x = Matrix::from_vec(12, 2, (0..24).map(|v| v as f64).collect()).unwrap();
        let one_class = LabelVector::from_ids(vec![0; 12]);
        let cfg = ProbeConfig {
            epochs: 1,
            ..ProbeConfig::default()
        };
        assert!(linear_probe(&x, &one_class, &x, &one_class, &cfg).is_err());

        // three declared classes, only two present
        let ids: Vec<u32> = (0..12).map(|i| (i % 2) as u32).collect();
        let gap = LabelVector::new(ids, 3).unwrap();
        assert!(matches!(
            linear_probe(&x, &gap, &x, &gap, &cfg),
            Err(Error::DegenerateClass { class: 2 })
        ));

        let small = Matrix::zeros(5, 2);
        let l = LabelVector::from_ids(vec![0, 1, 0, 1, 0]);
        assert!(linear_probe(&small, &l, &small, &l, &cfg).is_err());
    }
}
