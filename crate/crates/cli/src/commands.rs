//! Subcommand bodies. Every command reads its inputs, never writes to them,
//! and produces the same bytes for the same config.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use repbank::analysis::{normalized_max_similarity, spectrum, SimilarityReport, SpectrumReport};
use repbank::engine::{init_decoders, reconstruction_similarity, CheckpointMeta, EpochStats};
use repbank::eval::{baseline_average, baseline_concat, baseline_individual, knn_evaluate, linear_probe};
use repbank::mlp::{decode_stack, encode_stack};
use repbank::optim::scaled_lr;
use repbank::store::{load_ensemble, read_labels, read_matrix};
use repbank::synth::{generate, write_corpus, SynthSpec};
use repbank::{
    infer as infer_reps, train_observed, EnsembleSet, Error, EvalReport, LabelVector, Manifest, Matrix, Mlp, Result,
    Split, TrainConfig,
};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{resolve, train_layer, ExperimentConfig, Mode};
use crate::{
    exit_code, AnalyzeArgs, Axis, EvalArgs, InferArgs, Overrides, RepsArgs, RunArgs, SweepArgs, SynthArgs,
    ValidateArgs,
};

pub const CHECKPOINT_FILE: &str = "decoders.mlpw";
pub const TRAIN_BANK_FILE: &str = "train_bank.fstr";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const SWEEP_FILE: &str = "sweep.jsonl";
pub const SPECTRUM_FILE: &str = "spectrum.json";
pub const SIMILARITY_FILE: &str = "similarity.json";
pub const CONSTRAINED_BANK_FILE: &str = "constrained_bank.fstr";

pub fn reps_file(split: Split) -> String {
    format!("{split}_reps.fstr")
}

pub fn infer_log_file(split: Split) -> String {
    format!("{split}_infer_log.jsonl")
}

/// The JSON sidecar stored next to a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn config(ov: &Overrides, base: Option<Map<String, Value>>) -> Result<ExperimentConfig> {
    resolve(base, ov.config.as_deref(), ov.layer())
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    let out = cfg.out()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<(EnsembleSet, LabelVector)> {
    let manifest = Manifest::load(cfg.manifest()?)?;
    load_ensemble(&manifest, split)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("reports serialize");
    s.push('\n');
    s
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_text(path, &rows.iter().map(to_line).collect::<String>())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    write_text(path, &s)
}

fn final_loss(log: &[EpochStats]) -> Option<f64> {
    log.last().map(|s| s.mean_loss)
}

/// Loads decoders plus the training config recorded beside them, if any.
pub fn load_checkpoint(path: &Path) -> Result<(Vec<Mlp>, Option<CheckpointMeta>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoders = decode_stack(&bytes, path)?;
    let side = sidecar_path(path);
    let meta = match fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str::<CheckpointMeta>(&text).map_err(|e| Error::Manifest {
            path: side.clone(),
            reason: e.to_string(),
        })?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(side, e)),
    };
    if let Some(m) = &meta {
        if m.models != decoders.len() {
            return Err(Error::shape("checkpoint decoders", m.models, decoders.len()));
        }
    }
    Ok((decoders, meta))
}

/// Sidecar config as the lowest config layer, found via `--checkpoint`
/// or the config file's `checkpoint` key.
fn sidecar_layer(ov: &Overrides) -> Result<Option<Map<String, Value>>> {
    let probe = resolve(None, ov.config.as_deref(), ov.layer());
    let checkpoint = match (&ov.checkpoint, probe) {
        (Some(p), _) => Some(p.clone()),
        (None, Ok(cfg)) => cfg.checkpoint,
        (None, Err(_)) => None,
    };
    let Some(path) = checkpoint else { return Ok(None) };
    let side = sidecar_path(&path);
    match fs::read_to_string(&side) {
        Ok(text) => {
            let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Manifest {
                path: side.clone(),
                reason: e.to_string(),
            })?;
            Ok(Some(train_layer(&meta.config)))
        }
        Err(_) => Ok(None),
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let Value::Object(mut merged) = serde_json::to_value(SynthSpec::default()).expect("serializable") else {
        unreachable!("spec serializes to an object")
    };
    let known: Vec<String> = merged.keys().cloned().collect();
    let mut layers = Vec::new();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => layers.push(m),
            Ok(_) => return Err(Error::InvalidConfig(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => return Err(Error::InvalidConfig(format!("{}: {e}", path.display()))),
        }
    }
    layers.push(args.layer());
    for layer in layers {
        for (key, value) in layer {
            if !known.contains(&key) {
                return Err(Error::InvalidConfig(format!("unknown synth key {key:?}")));
            }
            merged.insert(key, value);
        }
    }
    let spec: SynthSpec =
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let corpus = generate(&spec)?;
    let manifest = write_corpus(&corpus, &args.name, &args.out)?;
    println!(
        "wrote {} ({} models, d={}, {} train / {} test rows, {} classes)",
        manifest.display(),
        spec.models,
        spec.dim,
        spec.n_train,
        spec.n_test,
        spec.num_classes
    );
    Ok(())
}

pub fn train(args: &RunArgs) -> Result<()> {
    let cfg = config(&args.cfg, None)?;
    let (ensemble, _) = load_split(&cfg, Split::Train)?;
    let out = out_dir(&cfg)?;
    let tc = cfg.train();
    let decoders = init_decoders(ensemble.num_models(), ensemble.dim(), &tc)?;

    let log_path = out.join(TRAIN_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut log_err = None;
    let trained = train_observed(&ensemble, &tc, decoders, |stats, _, _| {
        if log_err.is_none() {
            if let Err(e) = log.write_all(to_line(stats).as_bytes()).and_then(|_| log.flush()) {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }

    let ckpt = out.join(CHECKPOINT_FILE);
    write_file(&ckpt, &encode_stack(&trained.decoders))?;
    write_json(&sidecar_path(&ckpt), &trained.sidecar())?;
    repbank::store::write_matrix(&trained.bank.reps, out.join(TRAIN_BANK_FILE))?;

    let fidelity = reconstruction_similarity(&trained.decoders, &trained.bank.reps, &ensemble)?;
    println!(
        "trained {} decoders (d={}, depth {}) on {} rows for {} epochs (warmup {})",
        trained.decoders.len(),
        ensemble.dim(),
        tc.depth,
        ensemble.num_rows(),
        tc.epochs,
        tc.warmup()
    );
    if let (Some(first), Some(last)) = (trained.log.first(), trained.log.last()) {
        println!("loss {:.6} -> {:.6}", first.mean_loss, last.mean_loss);
    }
    println!("train reconstruction cosine {fidelity:.6}");
    println!("wrote {}", out.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let cfg = config(&args.cfg, sidecar_layer(&args.cfg)?)?;
    let ckpt = cfg.checkpoint()?;
    let (decoders, _) = load_checkpoint(ckpt)?;
    let split: Split = args.split.into();
    let (ensemble, _) = load_split(&cfg, split)?;
    let out = out_dir(&cfg)?;
    let tc = cfg.train();
    let result = infer_reps(&decoders, &ensemble, &tc)?;
    repbank::store::write_matrix(&result.reps, out.join(reps_file(split)))?;
    write_jsonl(&out.join(infer_log_file(split)), &result.log)?;

    let fidelity = reconstruction_similarity(&decoders, &result.reps, &ensemble)?;
    println!(
        "inferred {} {split} rows for {} epochs (lr {:e})",
        ensemble.num_rows(),
        tc.infer_epochs,
        tc.inference_lr()
    );
    if let Some(l) = final_loss(&result.log) {
        println!("final loss {l:.6}");
    }
    println!("{split} reconstruction cosine {fidelity:.6}");
    Ok(())
}

/// Learned train and test representations named by `reps`.
fn learned_reps(reps: &RepsArgs, mode: Mode) -> Result<(Matrix, Matrix)> {
    let missing = |what: &str| {
        Error::InvalidConfig(format!(
            "no learned {what} representations (give --run or --{what}-reps)"
        ))
    };
    let train_path = match (&reps.train_reps, &reps.run) {
        (Some(p), _) => p.clone(),
        (None, Some(run)) => {
            let bank = run.join(TRAIN_BANK_FILE);
            let inferred = run.join(reps_file(Split::Train));
            let order = if mode == Mode::TransferInfer { [inferred, bank] } else { [bank, inferred] };
            let [first, second] = order;
            if first.exists() {
                first
            } else {
                second
            }
        }
        (None, None) => return Err(missing("train")),
    };
    let test_path = match (&reps.test_reps, &reps.run) {
        (Some(p), _) => p.clone(),
        (None, Some(run)) => run.join(reps_file(Split::Test)),
        (None, None) => return Err(missing("test")),
    };
    Ok((read_matrix(train_path)?, read_matrix(test_path)?))
}

/// One report line: the protocol tag plus the report fields.
#[derive(Debug, Serialize)]
struct EvalRow<'a> {
    protocol: &'static str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

/// The methods compared by `eval`, train and test features for each.
fn methods(
    train: &EnsembleSet,
    test: &EnsembleSet,
    ours: Option<(Matrix, Matrix)>,
) -> Result<Vec<(String, Matrix, Matrix)>> {
    let mut out = Vec::new();
    if let Some((tr, te)) = ours {
        out.push(("Ours".to_string(), tr, te));
    }
    out.push((
        "Averaging".to_string(),
        baseline_average(train)?.into_matrix(),
        baseline_average(test)?.into_matrix(),
    ));
    out.push((
        "Concatenation".to_string(),
        baseline_concat(train)?.into_matrix(),
        baseline_concat(test)?.into_matrix(),
    ));
    for (j, name) in train.names().iter().enumerate() {
        out.push((
            format!("Individual[{name}]"),
            baseline_individual(train, j)?.into_matrix(),
            baseline_individual(test, j)?.into_matrix(),
        ));
    }
    Ok(out)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = config(&args.cfg, None)?;
    let (train, train_labels) = load_split(&cfg, Split::Train)?;
    let (test, test_labels) = load_split(&cfg, Split::Test)?;
    let ours = match cfg.mode {
        Mode::BaselineOnly => None,
        mode => Some(learned_reps(&args.reps, mode)?),
    };
    let out = out_dir(&cfg)?;
    let knn = cfg.knn();
    let mut reports = Vec::new();
    for (name, tr, te) in methods(&train, &test, ours)? {
        let knn_report = knn_evaluate(&name, &tr, &train_labels, &te, &test_labels, &knn)?;
        reports.push(("knn", knn_report));
        if cfg.probe {
            let mut probe = linear_probe(&tr, &train_labels, &te, &test_labels, &cfg.probe_config())?.report;
            probe.method = name;
            reports.push(("linear", probe));
        }
    }
    let rows: Vec<EvalRow> = reports
        .iter()
        .map(|(protocol, report)| EvalRow { protocol, report })
        .collect();
    write_jsonl(&out.join(EVAL_FILE), &rows)?;

    println!("{:<8} {:<24} {:>9}", "protocol", "method", "accuracy");
    for (protocol, r) in &reports {
        println!("{protocol:<8} {:<24} {:>9.4}", r.method, r.accuracy);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SpectrumFile {
    baseline: SpectrumReport,
    constrained: SpectrumReport,
    /// `[baseline, constrained]` singular values, rank by rank, descending.
    paired: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
struct SimilarityRow {
    method: String,
    #[serde(flatten)]
    report: SimilarityReport,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let cfg = config(&args.cfg, None)?;
    let (train, _) = load_split(&cfg, Split::Train)?;
    let (test, _) = load_split(&cfg, Split::Test)?;
    let ours = match (&args.reps.run, &args.reps.train_reps, &args.reps.test_reps) {
        (None, None, None) => None,
        _ => Some(learned_reps(&args.reps, cfg.mode)?),
    };
    let out = out_dir(&cfg)?;

    let tc = TrainConfig {
        nonneg: true,
        ..cfg.train()
    };
    let decoders = init_decoders(train.num_models(), train.dim(), &tc)?;
    let constrained = train_observed(&train, &tc, decoders, |_, _, _| {})?;
    repbank::store::write_matrix(&constrained.bank.reps, out.join(CONSTRAINED_BANK_FILE))?;
    let baseline = spectrum(baseline_average(&train)?.matrix())?;
    let learned = spectrum(&constrained.bank.reps)?;
    let paired = baseline
        .singular_values
        .iter()
        .zip(&learned.singular_values)
        .map(|(&b, &c)| [b, c])
        .collect();
    let (be, ce) = (baseline.entropy, learned.entropy);
    write_json(
        &out.join(SPECTRUM_FILE),
        &SpectrumFile {
            baseline,
            constrained: learned,
            paired,
        },
    )?;

    let mut rows = Vec::new();
    let avg = (baseline_average(&train)?, baseline_average(&test)?);
    rows.push(SimilarityRow {
        method: "Averaging".into(),
        report: normalized_max_similarity(avg.0.matrix(), avg.1.matrix())?,
    });
    let cat = (baseline_concat(&train)?, baseline_concat(&test)?);
    rows.push(SimilarityRow {
        method: "Concatenation".into(),
        report: normalized_max_similarity(cat.0.matrix(), cat.1.matrix())?,
    });
    if let Some((tr, te)) = &ours {
        rows.push(SimilarityRow {
            method: "Ours".into(),
            report: normalized_max_similarity(tr, te)?,
        });
    }
    write_json(&out.join(SIMILARITY_FILE), &json!({ "methods": rows }))?;

    println!("spectral entropy: baseline {be:.6}, constrained bank {ce:.6}");
    for r in &rows {
        println!("median normalized max similarity {:<14} {:.6}", r.method, r.report.median);
    }
    Ok(())
}

/// Outcome of one sweep cycle.
#[derive(Debug, Serialize)]
struct SweepRow {
    axis: &'static str,
    value: Value,
    lr: f64,
    batch_size: usize,
    depth: usize,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exit_code: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    infer_loss: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    results: Vec<EvalReport>,
}

struct CycleOutput {
    train_loss: Option<f64>,
    infer_loss: Option<f64>,
    results: Vec<EvalReport>,
}

struct SweepData {
    train: EnsembleSet,
    train_labels: LabelVector,
    test: EnsembleSet,
    test_labels: LabelVector,
    checkpoint: Option<Vec<Mlp>>,
}

fn cycle(data: &SweepData, cfg: &ExperimentConfig) -> Result<CycleOutput> {
    let tc = cfg.train();
    let (train_reps, train_loss, decoders) = match &data.checkpoint {
        Some(decoders) => {
            let inf = infer_reps(decoders, &data.train, &tc)?;
            (inf.reps, None, decoders.clone())
        }
        None => {
            let decoders = init_decoders(data.train.num_models(), data.train.dim(), &tc)?;
            let trained = train_observed(&data.train, &tc, decoders, |_, _, _| {})?;
            let loss = final_loss(&trained.log);
            (trained.bank.reps, loss, trained.decoders)
        }
    };
    let test = infer_reps(&decoders, &data.test, &tc)?;
    let knn = cfg.knn();
    let avg = (baseline_average(&data.train)?, baseline_average(&data.test)?);
    let results = vec![
        knn_evaluate("Ours", &train_reps, &data.train_labels, &test.reps, &data.test_labels, &knn)?,
        knn_evaluate(
            "Averaging",
            avg.0.matrix(),
            &data.train_labels,
            avg.1.matrix(),
            &data.test_labels,
            &knn,
        )?,
    ];
    Ok(CycleOutput {
        train_loss,
        infer_loss: final_loss(&test.log),
        results,
    })
}

fn parse_values<T: std::str::FromStr>(axis: &str, values: &[String]) -> Result<Vec<T>> {
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {axis} sweep value {v:?}")))
        })
        .collect()
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let values: Vec<&String> = args.values.iter().filter(|v| !v.trim().is_empty()).collect();
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value (--values)".into()));
    }
    let values: Vec<String> = values.into_iter().cloned().collect();
    let cfg = config(&args.cfg, sidecar_layer(&args.cfg)?)?;
    let axis_name = match args.axis {
        Axis::Lr => "lr",
        Axis::Batch => "batch",
        Axis::Depth => "depth",
    };
    match cfg.mode {
        Mode::BaselineOnly => return Err(Error::InvalidConfig("baseline-only mode has nothing to sweep".into())),
        Mode::TransferInfer if args.axis == Axis::Depth => {
            return Err(Error::InvalidConfig("a transferred checkpoint fixes the depth".into()))
        }
        _ => {}
    }
    // Every cycle's config, built before any work so bad values fail fast.
    let cycles: Vec<(Value, ExperimentConfig)> = match args.axis {
        Axis::Lr => parse_values::<f64>(axis_name, &values)?
            .into_iter()
            .map(|lr| {
                let mut c = cfg.clone();
                if c.mode == Mode::TransferInfer {
                    c.infer_lr = Some(lr);
                }
                c.lr = lr;
                (Value::from(lr), c)
            })
            .collect(),
        Axis::Batch => parse_values::<usize>(axis_name, &values)?
            .into_iter()
            .map(|b| {
                let mut c = cfg.clone();
                c.batch_size = b;
                c.lr = scaled_lr(cfg.lr, b, cfg.base_batch);
                if c.mode == Mode::TransferInfer {
                    c.infer_lr = Some(scaled_lr(cfg.train().inference_lr(), b, cfg.base_batch));
                }
                (Value::from(b), c)
            })
            .collect(),
        Axis::Depth => parse_values::<usize>(axis_name, &values)?
            .into_iter()
            .map(|d| {
                let mut c = cfg.clone();
                c.depth = d;
                (Value::from(d), c)
            })
            .collect(),
    };

    let (train, train_labels) = load_split(&cfg, Split::Train)?;
    let (test, test_labels) = load_split(&cfg, Split::Test)?;
    let checkpoint = match cfg.mode {
        Mode::TransferInfer => Some(load_checkpoint(cfg.checkpoint()?)?.0),
        _ => None,
    };
    let data = SweepData {
        train,
        train_labels,
        test,
        test_labels,
        checkpoint,
    };
    let out = out_dir(&cfg)?;

    let mut rows = Vec::new();
    for (value, c) in cycles {
        let mut row = SweepRow {
            axis: axis_name,
            value,
            lr: c.lr,
            batch_size: c.batch_size,
            depth: c.depth,
            status: "ok",
            error: None,
            exit_code: None,
            train_loss: None,
            infer_loss: None,
            results: Vec::new(),
        };
        match c.validate().and_then(|_| cycle(&data, &c)) {
            Ok(o) => {
                row.train_loss = o.train_loss;
                row.infer_loss = o.infer_loss;
                row.results = o.results;
            }
            Err(e) => {
                row.status = "error";
                row.exit_code = Some(exit_code(&e));
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    write_jsonl(&out.join(SWEEP_FILE), &rows)?;

    println!("{:<6} {:>12} {:>10} {:>6} {:>6} {:>9} {:>9}", "axis", "value", "lr", "batch", "depth", "ours", "avg");
    for r in &rows {
        let acc = |m: &str| {
            r.results
                .iter()
                .find(|x| x.method == m)
                .map_or("-".to_string(), |x| format!("{:.4}", x.accuracy))
        };
        println!(
            "{:<6} {:>12} {:>10.3e} {:>6} {:>6} {:>9} {:>9}{}",
            r.axis,
            r.value.to_string(),
            r.lr,
            r.batch_size,
            r.depth,
            acc("Ours"),
            acc("Averaging"),
            r.error.as_ref().map_or(String::new(), |e| format!("  error: {e}"))
        );
    }
    Ok(())
}

fn validate_one(path: &Path) -> Result<String> {
    if path.extension().is_some_and(|e| e == "json") {
        let manifest = Manifest::load(path)?;
        let (train, _) = load_ensemble(&manifest, Split::Train)?;
        let (test, _) = load_ensemble(&manifest, Split::Test)?;
        return Ok(format!(
            "manifest {:?}: {} models, d={}, {} train / {} test rows",
            manifest.corpus,
            manifest.models.len(),
            manifest.dim,
            train.num_rows(),
            test.num_rows()
        ));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(..4) {
        Some(b"FSTR") => {
            let m = repbank::store::decode_features(&bytes, path)?;
            let post_relu = m.as_slice().iter().all(|&x| x >= 0.0);
            let unit = m.iter_rows().all(|r| (repbank::tensor::norm(r) - 1.0).abs() <= 1e-5);
            Ok(format!(
                "features {}x{}, non-negative {post_relu}, unit rows {unit}",
                m.rows(),
                m.cols()
            ))
        }
        Some(b"LBLS") => {
            let l = read_labels(path)?;
            Ok(format!("labels n={}, {} classes", l.len(), l.num_classes()))
        }
        Some(b"MLPW") => {
            let stack = decode_stack(&bytes, path)?;
            let first = stack.first();
            Ok(format!(
                "checkpoint {} decoders, d={}, depth {}",
                stack.len(),
                first.map_or(0, Mlp::dim),
                first.map_or(0, Mlp::depth)
            ))
        }
        _ => Err(Error::InvalidConfig(format!(
            "{}: not an FSTR, LBLS or MLPW file, nor a .json manifest",
            path.display()
        ))),
    }
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    let mut first_err = None;
    for path in &args.files {
        match validate_one(path) {
            Ok(summary) => println!("ok   {}: {summary}", path.display()),
            Err(e) => {
                println!("FAIL {}: {e}", path.display());
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}
