//! Browser demo: small synthetic experiments exposed to JavaScript.
//!
//! Each entry point takes a JSON settings object (missing keys fall back to
//! defaults) and returns a JSON result for the page to plot. The `*_json`
//! functions carry the logic and are callable from native code and tests.

use repbank::analysis::{median, normalized_max_similarity, spectrum};
use repbank::eval::{baseline_average, baseline_concat, baseline_individual, knn_evaluate, KnnConfig};
use repbank::synth::{generate, SynthCorpus, SynthSpec, ViewMode};
use repbank::{engine::reconstruction_similarity, infer, train, Matrix, TrainConfig};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Settings shared by every demo operation.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoSettings {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub models: usize,
    pub num_classes: usize,
    pub noise: f64,
    pub complementary: bool,
    pub epochs: usize,
    pub infer_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub depth: usize,
    pub k: usize,
    pub seed: u64,
    pub bins: usize,
}

impl Default for DemoSettings {
    fn default() -> Self {
        Self {
            n_train: 400,
            n_test: 150,
            dim: 24,
            models: 3,
            num_classes: 6,
            noise: 2.0,
            complementary: true,
            epochs: 30,
            infer_epochs: 30,
            batch_size: 16,
            lr: 2e-3,
            depth: 2,
            k: 20,
            seed: 0,
            bins: 30,
        }
    }
}

impl DemoSettings {
    fn corpus(&self, models: usize) -> repbank::Result<SynthCorpus> {
        generate(&SynthSpec {
            n_train: self.n_train,
            n_test: self.n_test,
            dim: self.dim,
            models,
            num_classes: self.num_classes,
            noise: self.noise,
            mode: if self.complementary && models > 1 {
                ViewMode::Complementary
            } else {
                ViewMode::Shared
            },
            seed: self.seed,
            ..SynthSpec::default()
        })
    }

    fn train_config(&self, nonneg: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            depth: self.depth,
            infer_epochs: self.infer_epochs,
            nonneg,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

fn parse(settings: &str) -> Result<DemoSettings, String> {
    if settings.trim().is_empty() {
        return Ok(DemoSettings::default());
    }
    serde_json::from_str(settings).map_err(|e| format!("bad settings: {e}"))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("results serialize")
}

#[derive(Debug, Serialize)]
pub struct MethodAccuracy {
    pub method: String,
    pub accuracy: f64,
}

#[derive(Debug, Serialize)]
pub struct EnsembleResult {
    pub train_loss: Vec<f64>,
    pub infer_loss: Vec<f64>,
    pub warmup: usize,
    pub train_cosine: f64,
    pub test_cosine: f64,
    pub accuracies: Vec<MethodAccuracy>,
}

/// Trains on a synthetic ensemble, infers the test split and compares k-NN
/// accuracy of every method.
pub fn run_ensemble_json(settings: &str) -> Result<String, String> {
    let s = parse(settings)?;
    run_ensemble_inner(&s).map(|r| to_json(&r)).map_err(|e| e.to_string())
}

fn run_ensemble_inner(s: &DemoSettings) -> repbank::Result<EnsembleResult> {
    let c = s.corpus(s.models)?;
    let cfg = s.train_config(false);
    let tr = train(&c.train.ensemble, &cfg)?;
    let inf = tr.infer(&c.test.ensemble)?;
    let knn = KnnConfig { k: s.k.min(s.n_train) };
    let acc = |name: &str, a: &Matrix, b: &Matrix| -> repbank::Result<MethodAccuracy> {
        Ok(MethodAccuracy {
            method: name.to_string(),
            accuracy: knn_evaluate(name, a, &c.train.labels, b, &c.test.labels, &knn)?.accuracy,
        })
    };
    let mut accuracies = vec![
        acc("Ours", &tr.bank.reps, &inf.reps)?,
        acc(
            "Averaging",
            baseline_average(&c.train.ensemble)?.matrix(),
            baseline_average(&c.test.ensemble)?.matrix(),
        )?,
        acc(
            "Concatenation",
            baseline_concat(&c.train.ensemble)?.matrix(),
            baseline_concat(&c.test.ensemble)?.matrix(),
        )?,
    ];
    for j in 0..s.models {
        accuracies.push(acc(
            &format!("Model {j}"),
            baseline_individual(&c.train.ensemble, j)?.matrix(),
            baseline_individual(&c.test.ensemble, j)?.matrix(),
        )?);
    }
    Ok(EnsembleResult {
        train_loss: tr.log.iter().map(|e| e.mean_loss).collect(),
        infer_loss: inf.log.iter().map(|e| e.mean_loss).collect(),
        warmup: cfg.warmup(),
        train_cosine: reconstruction_similarity(&tr.decoders, &tr.bank.reps, &c.train.ensemble)?,
        test_cosine: reconstruction_similarity(&tr.decoders, &inf.reps, &c.test.ensemble)?,
        accuracies,
    })
}

#[derive(Debug, Serialize)]
pub struct Spectrum {
    pub label: String,
    pub singular_values: Vec<f64>,
    pub entropy: f64,
}

/// Singular-value spectra of single-model baseline features and of banks
/// trained with and without the non-negative constraint.
pub fn spectrum_compare_json(settings: &str) -> Result<String, String> {
    let s = parse(settings)?;
    spectrum_inner(&s).map(|r| to_json(&r)).map_err(|e| e.to_string())
}

fn spectrum_inner(s: &DemoSettings) -> repbank::Result<Vec<Spectrum>> {
    let c = s.corpus(1)?;
    let entry = |label: &str, m: &Matrix| -> repbank::Result<Spectrum> {
        let r = spectrum(m)?;
        Ok(Spectrum {
            label: label.to_string(),
            singular_values: r.singular_values,
            entropy: r.entropy,
        })
    };
    let free = train(&c.train.ensemble, &s.train_config(false))?;
    let constrained = train(&c.train.ensemble, &s.train_config(true))?;
    Ok(vec![
        entry("Baseline features", baseline_average(&c.train.ensemble)?.matrix())?,
        entry("Bank", &free.bank.reps)?,
        entry("Non-negative bank", &constrained.bank.reps)?,
    ])
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub method: String,
    /// Left edges of equal-width bins spanning `[lo, hi]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub median: f64,
}

#[derive(Debug, Serialize)]
pub struct HistogramResult {
    pub lo: f64,
    pub hi: f64,
    pub histograms: Vec<Histogram>,
}

/// Histograms of each test row's highest train similarity over the mean
/// similarity, for averaged features and learned representations.
pub fn similarity_histogram_json(settings: &str) -> Result<String, String> {
    let s = parse(settings)?;
    similarity_inner(&s).map(|r| to_json(&r)).map_err(|e| e.to_string())
}

fn similarity_inner(s: &DemoSettings) -> repbank::Result<HistogramResult> {
    let c = s.corpus(s.models)?;
    let cfg = s.train_config(false);
    let tr = train(&c.train.ensemble, &cfg)?;
    let test = infer(&tr.decoders, &c.test.ensemble, &cfg)?;
    let avg = normalized_max_similarity(
        baseline_average(&c.train.ensemble)?.matrix(),
        baseline_average(&c.test.ensemble)?.matrix(),
    )?;
    let ours = normalized_max_similarity(&tr.bank.reps, &test.reps)?;
    let all = avg.normalized.iter().chain(&ours.normalized);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = s.bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let histogram = |method: &str, values: &[f64]| {
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram {
            method: method.to_string(),
            edges: (0..bins).map(|b| lo + b as f64 * width).collect(),
            counts,
            median: median(values),
        }
    };
    Ok(HistogramResult {
        lo,
        hi,
        histograms: vec![histogram("Averaging", &avg.normalized), histogram("Ours", &ours.normalized)],
    })
}

/// Default settings as JSON, for the page to fill its form.
#[wasm_bindgen]
pub fn default_settings() -> String {
    let d = DemoSettings::default();
    to_json(&serde_json::json!({
        "n_train": d.n_train, "n_test": d.n_test, "dim": d.dim, "models": d.models,
        "num_classes": d.num_classes, "noise": d.noise, "complementary": d.complementary,
        "epochs": d.epochs, "infer_epochs": d.infer_epochs, "batch_size": d.batch_size,
        "lr": d.lr, "depth": d.depth, "k": d.k, "seed": d.seed, "bins": d.bins,
    }))
}

#[wasm_bindgen]
pub fn run_ensemble(settings: &str) -> Result<String, JsValue> {
    run_ensemble_json(settings).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spectrum_compare(settings: &str) -> Result<String, JsValue> {
    spectrum_compare_json(settings).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn similarity_histogram(settings: &str) -> Result<String, JsValue> {
    similarity_histogram_json(settings).map_err(|e| JsValue::from_str(&e))
}
