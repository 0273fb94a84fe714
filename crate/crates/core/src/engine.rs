//! Joint training of per-model decoders and a representation bank, and
//! inference-time optimization of new representations against frozen decoders.
//!
//! Training proceeds in epochs over a seeded shuffle of the rows. For a batch
//! `I` every bank row `ψ_i` is fed through each decoder `φ_ℓ` and compared with
//! that model's feature `z_i^ℓ` under a cosine loss averaged over models and
//! rows. Decoders update every batch; bank rows only once the warmup epochs
//! are over. At inference the decoders are frozen and only the fresh bank,
//! initialized at the normalized average feature, is optimized.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_indices;
use crate::mlp::{Mlp, MlpGradients};
use crate::optim::{AdamConfig, AdamState, RowAdam};
use crate::store::EnsembleSet;
use crate::tensor::{dot, norm, Matrix, MIN_NORM};

const SHUFFLE_STREAM_TRAIN: u64 = 1;
const SHUFFLE_STREAM_INFER: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs during which only the decoders learn. `None` means `epochs / 2`.
    pub warmup_epochs: Option<usize>,
    pub depth: usize,
    pub mlp_weight_decay: f64,
    /// Project bank rows onto the non-negative orthant after every update.
    pub nonneg: bool,
    pub seed: u64,
    pub infer_epochs: usize,
    /// `None` reuses `lr`.
    pub infer_lr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr: 3e-4,
            warmup_epochs: None,
            depth: 2,
            mlp_weight_decay: 0.0,
            nonneg: false,
            seed: 0,
            infer_epochs: 50,
            infer_lr: None,
        }
    }
}

impl TrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 2)
    }

    pub fn inference_lr(&self) -> f64 {
        self.infer_lr.unwrap_or(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.warmup() > self.epochs {
            return bad(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup(),
                self.epochs
            ));
        }
        if !(1..=crate::mlp::MAX_DEPTH).contains(&self.depth) {
            return bad(format!("depth must be in 1..=8, got {}", self.depth));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("infer_lr", self.inference_lr()),
            ("mlp_weight_decay", self.mlp_weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Trainable representations, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub reps: Matrix,
    pub frozen: bool,
}

/// Normalized sum of the members' rows; with a single model, its rows unchanged.
pub fn average_features(ensemble: &EnsembleSet) -> Result<Matrix> {
    if !ensemble.is_normalized() {
        return Err(Error::InvalidConfig(
            "ensemble members must be row-normalized before averaging".into(),
        ));
    }
    if ensemble.num_models() == 1 {
        return Ok(ensemble.member(0).matrix().clone());
    }
    let (n, d) = (ensemble.num_rows(), ensemble.dim());
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let row = out.row_mut(i);
        for member in ensemble.members() {
            for (acc, v) in row.iter_mut().zip(member.row(i)) {
                *acc += v;
            }
        }
        let len = norm(row);
        if len < MIN_NORM {
            return Err(Error::DegenerateSum { row: i, norm: len });
        }
        row.iter_mut().for_each(|v| *v /= len);
    }
    Ok(out)
}

pub fn init_bank(ensemble: &EnsembleSet) -> Result<MemoryBank> {
    Ok(MemoryBank {
        reps: average_features(ensemble)?,
        frozen: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineLoss {
    /// Mean over rows of `1 - cos(mapped_i, target_i)`.
    pub loss: f64,
    /// Gradient of `loss` with respect to `mapped`.
    pub grad: Matrix,
    /// Rows of `mapped` with norm below `1e-12`; they count as loss 1 with zero gradient.
    pub degenerate_rows: usize,
}

pub fn cosine_loss(mapped: &Matrix, targets: &Matrix) -> Result<CosineLoss> {
    if mapped.shape() != targets.shape() {
        return Err(Error::shape(
            "cosine_loss",
            format!("{:?}", targets.shape()),
            format!("{:?}", mapped.shape()),
        ));
    }
    let b = mapped.rows();
    let mut grad = Matrix::zeros(b, mapped.cols());
    if b == 0 {
        return Ok(CosineLoss {
            loss: 0.0,
            grad,
            degenerate_rows: 0,
        });
    }
    let scale = 1.0 / b as f64;
    let mut total = 0.0;
    let mut degenerate_rows = 0;
    for i in 0..b {
        let (a, t) = (mapped.row(i), targets.row(i));
        let nt = norm(t);
        if nt < MIN_NORM {
            return Err(Error::DegenerateRow { row: i, norm: nt });
        }
        let na = norm(a);
        if na < MIN_NORM {
            degenerate_rows += 1;
            total += 1.0;
            continue;
        }
        // With â = a/|a|, t̂ = t/|t| and u = t̂ - â:
        //   1 - cos = |u|²/2,  d(1 - cos)/da = -(u - (â·u)â) / |a|.
        // Both vanish exactly when a == t and avoid cancellation near cos = 1.
        let a_hat: Vec<f64> = a.iter().map(|v| v / na).collect();
        let u: Vec<f64> = t.iter().zip(&a_hat).map(|(tv, av)| tv / nt - av).collect();
        total += 0.5 * dot(&u, &u);
        let proj = dot(&a_hat, &u);
        for ((g, &uv), &av) in grad.row_mut(i).iter_mut().zip(&u).zip(&a_hat) {
            *g = -scale * (uv - proj * av) / na;
        }
    }
    Ok(CosineLoss {
        loss: total * scale,
        grad,
        degenerate_rows,
    })
}

/// Loss and gradients for one batch of bank rows across all decoders.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub decoders: Vec<MlpGradients>,
    /// Gradient with respect to the batch of bank rows, summed over decoders.
    pub reps: Matrix,
    /// Decoder outputs that collapsed to zero, summed over decoders.
    pub degenerate_rows: usize,
}

/// Mean over decoders of `cosine_loss(φ_ℓ(reps), targets_ℓ)` with gradients.
pub fn batch_gradients(decoders: &[Mlp], reps: &Matrix, targets: &[Matrix]) -> Result<BatchGradients> {
    if decoders.len() != targets.len() || decoders.is_empty() {
        return Err(Error::shape("batch_gradients decoder count", targets.len(), decoders.len()));
    }
    let weight = 1.0 / decoders.len() as f64;
    let per_model = |l: usize| -> Result<(CosineLoss, MlpGradients)> {
        let (out, tape) = decoders[l].forward(reps)?;
        let mut cl = cosine_loss(&out, &targets[l])?;
        cl.grad.as_mut_slice().iter_mut().for_each(|g| *g *= weight);
        let grads = decoders[l].backward(&tape, &cl.grad)?;
        Ok((cl, grads))
    };
    let results: Vec<Result<(CosineLoss, MlpGradients)>> = map_indices(decoders.len(), per_model);

    let mut loss = 0.0;
    let mut degenerate_rows = 0;
    let mut rep_grad = Matrix::zeros(reps.rows(), reps.cols());
    let mut decoder_grads = Vec::with_capacity(decoders.len());
    for r in results {
        let (cl, g) = r?;
        loss += cl.loss * weight;
        degenerate_rows += cl.degenerate_rows;
        for (acc, v) in rep_grad.as_mut_slice().iter_mut().zip(g.input.as_slice()) {
            *acc += v;
        }
        decoder_grads.push(g);
    }
    Ok(BatchGradients {
        loss,
        decoders: decoder_grads,
        reps: rep_grad,
        degenerate_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub phase: Phase,
    pub epoch: usize,
    /// Batch losses weighted by batch size.
    pub mean_loss: f64,
    pub bank_updated: bool,
    pub degenerate_rows: usize,
}

/// Whether the per-epoch loss never rises over the final quarter of epochs.
pub fn tail_non_increasing(log: &[EpochStats]) -> bool {
    let start = log.len() - log.len() / 4;
    log[start.saturating_sub(1)..]
        .windows(2)
        .all(|w| w[1].mean_loss <= w[0].mean_loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEnsembler {
    pub decoders: Vec<Mlp>,
    pub config: TrainConfig,
    pub bank: MemoryBank,
    pub log: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub reps: Matrix,
    pub log: Vec<EpochStats>,
}

struct DecoderOptimizer {
    states: Vec<Vec<(AdamState, AdamState)>>,
    weight_decay: f64,
}

impl DecoderOptimizer {
    fn new(decoders: &[Mlp], cfg: AdamConfig, weight_decay: f64) -> Self {
        let states = decoders
            .iter()
            .map(|d| {
                d.layers()
                    .iter()
                    .map(|l| {
                        (
                            AdamState::new(l.weight.as_slice().len(), cfg),
                            AdamState::new(l.bias.len(), cfg),
                        )
                    })
                    .collect()
            })
            .collect();
        Self {
            states,
            weight_decay,
        }
    }

    fn step(&mut self, decoders: &mut [Mlp], grads: &mut [MlpGradients]) -> Result<()> {
        for ((mlp, g), states) in decoders.iter_mut().zip(grads).zip(&mut self.states) {
            for (((layer, gw), gb), (sw, sb)) in mlp
                .layers_mut()
                .iter_mut()
                .zip(&mut g.weights)
                .zip(&mut g.biases)
                .zip(states.iter_mut())
            {
                if self.weight_decay != 0.0 {
                    let wd = self.weight_decay;
                    for (g, &p) in gw.as_mut_slice().iter_mut().zip(layer.weight.as_slice()) {
                        *g += wd * p;
                    }
                    for (g, &p) in gb.iter_mut().zip(&layer.bias) {
                        *g += wd * p;
                    }
                }
                sw.step(layer.weight.as_mut_slice(), gw.as_slice())?;
                sb.step(&mut layer.bias, gb)?;
            }
        }
        Ok(())
    }
}

fn clamp_rows_non_negative(reps: &mut Matrix, rows: &[usize]) {
    for &r in rows {
        reps.row_mut(r).iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0;
            }
        });
    }
}

fn check_decoders(decoders: &[Mlp], ensemble: &EnsembleSet) -> Result<()> {
    if decoders.len() != ensemble.num_models() {
        return Err(Error::shape("decoder count vs ensemble size", ensemble.num_models(), decoders.len()));
    }
    for d in decoders {
        if d.dim() != ensemble.dim() {
            return Err(Error::shape("decoder width vs feature dimension", ensemble.dim(), d.dim()));
        }
    }
    Ok(())
}

/// What the shared epoch loop is allowed to change.
struct Learner<'a> {
    decoders: &'a mut [Mlp],
    decoder_opt: Option<&'a mut DecoderOptimizer>,
    bank: &'a mut Matrix,
    bank_opt: &'a mut RowAdam,
}

fn run_epoch(
    learner: &mut Learner<'_>,
    ensemble: &EnsembleSet,
    order: &[usize],
    batch_size: usize,
    update_bank: bool,
    nonneg: bool,
    epoch: usize,
) -> Result<(f64, usize)> {
    let mut weighted = 0.0;
    let mut degenerate = 0;
    for (b, batch) in order.chunks(batch_size).enumerate() {
        let reps = learner.bank.gather_rows(batch);
        let targets: Vec<Matrix> = ensemble
            .members()
            .iter()
            .map(|m| m.matrix().gather_rows(batch))
            .collect();
        let mut grads = batch_gradients(learner.decoders, &reps, &targets)?;
        if !grads.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        weighted += grads.loss * batch.len() as f64;
        if let Some(opt) = learner.decoder_opt.as_deref_mut() {
            opt.step(learner.decoders, &mut grads.decoders)?;
        }
        if update_bank {
            learner.bank_opt.step_rows(learner.bank, batch, &grads.reps)?;
            if nonneg {
                clamp_rows_non_negative(learner.bank, batch);
            }
        }
        degenerate += grads.degenerate_rows;
    }
    Ok((weighted / order.len().max(1) as f64, degenerate))
}

/// The decoders [`train`] starts from: one per model, seeded by `cfg.seed`.
pub fn init_decoders(models: usize, dim: usize, cfg: &TrainConfig) -> Result<Vec<Mlp>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..models).map(|_| Mlp::init(dim, cfg.depth, &mut rng)).collect()
}

/// Trains decoders and the train-split bank jointly.
pub fn train(ensemble: &EnsembleSet, cfg: &TrainConfig) -> Result<TrainedEnsembler> {
    let decoders = init_decoders(ensemble.num_models(), ensemble.dim(), cfg)?;
    train_from(ensemble, cfg, decoders)
}

/// As [`train`], starting from the given decoders.
pub fn train_from(ensemble: &EnsembleSet, cfg: &TrainConfig, decoders: Vec<Mlp>) -> Result<TrainedEnsembler> {
    train_observed(ensemble, cfg, decoders, |_, _, _| {})
}

/// As [`train_from`], calling `observe(stats, bank, decoders)` after every epoch.
pub fn train_observed<F>(
    ensemble: &EnsembleSet,
    cfg: &TrainConfig,
    mut decoders: Vec<Mlp>,
    mut observe: F,
) -> Result<TrainedEnsembler>
where
    F: FnMut(&EpochStats, &Matrix, &[Mlp]),
{
    cfg.validate()?;
    check_decoders(&decoders, ensemble)?;
    let mut bank = init_bank(ensemble)?;
    let n = ensemble.num_rows();
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut decoder_opt = DecoderOptimizer::new(&decoders, adam, cfg.mlp_weight_decay);
    let mut bank_opt = RowAdam::new(n, ensemble.dim(), adam);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(SHUFFLE_STREAM_TRAIN);
    let mut order: Vec<usize> = (0..n).collect();
    let warmup = cfg.warmup();
    let mut log = Vec::with_capacity(cfg.epochs);

    let mut learner = Learner {
        decoders: &mut decoders,
        decoder_opt: Some(&mut decoder_opt),
        bank: &mut bank.reps,
        bank_opt: &mut bank_opt,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let update_bank = epoch >= warmup;
        let (mean_loss, degenerate_rows) =
            run_epoch(&mut learner, ensemble, &order, cfg.batch_size, update_bank, cfg.nonneg, epoch)?;
        let stats = EpochStats {
            phase: Phase::Train,
            epoch,
            mean_loss,
            bank_updated: update_bank,
            degenerate_rows,
        };
        observe(&stats, learner.bank, learner.decoders);
        log.push(stats);
    }
    bank.frozen = true;
    Ok(TrainedEnsembler {
        decoders,
        config: cfg.clone(),
        bank,
        log,
    })
}

/// Learns representations for `ensemble` against frozen `decoders`.
pub fn infer(decoders: &[Mlp], ensemble: &EnsembleSet, cfg: &TrainConfig) -> Result<Inference> {
    cfg.validate()?;
    check_decoders(decoders, ensemble)?;
    let mut reps = init_bank(ensemble)?.reps;
    let n = ensemble.num_rows();
    let mut bank_opt = RowAdam::new(n, ensemble.dim(), AdamConfig::with_lr(cfg.inference_lr()));
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(SHUFFLE_STREAM_INFER);
    let mut order: Vec<usize> = (0..n).collect();
    // The loop takes `&mut [Mlp]`; a private copy keeps the caller's decoders untouched.
    let mut frozen = decoders.to_vec();
    let mut log = Vec::with_capacity(cfg.infer_epochs);

    let mut learner = Learner {
        decoders: &mut frozen,
        decoder_opt: None,
        bank: &mut reps,
        bank_opt: &mut bank_opt,
    };
    for epoch in 0..cfg.infer_epochs {
        order.shuffle(&mut shuffle);
        let (mean_loss, degenerate_rows) =
            run_epoch(&mut learner, ensemble, &order, cfg.batch_size, true, cfg.nonneg, epoch)?;
        log.push(EpochStats {
            phase: Phase::Infer,
            epoch,
            mean_loss,
            bank_updated: true,
            degenerate_rows,
        });
    }
    debug_assert!(frozen.as_slice() == decoders);
    Ok(Inference { reps, log })
}

impl TrainedEnsembler {
    pub fn infer(&self, test: &EnsembleSet) -> Result<Inference> {
        infer(&self.decoders, test, &self.config)
    }

    /// Sidecar metadata describing the decoder checkpoint.
    pub fn sidecar(&self) -> CheckpointMeta {
        CheckpointMeta {
            models: self.decoders.len(),
            dim: self.decoders.first().map_or(0, Mlp::dim),
            depth: self.config.depth,
            seed: self.config.seed,
            config: self.config.clone(),
        }
    }
}

/// JSON sidecar written next to a concatenated `MLPW` checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub models: usize,
    pub dim: usize,
    pub depth: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Mean over decoders and rows of `cos(φ_ℓ(ψ_i), z_i^ℓ)`.
pub fn reconstruction_similarity(decoders: &[Mlp], reps: &Matrix, ensemble: &EnsembleSet) -> Result<f64> {
    check_decoders(decoders, ensemble)?;
    if reps.rows() != ensemble.num_rows() {
        return Err(Error::shape("representation rows", ensemble.num_rows(), reps.rows()));
    }
    let n = reps.rows();
    if n == 0 {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for (d, member) in decoders.iter().zip(ensemble.members()) {
        let out = d.apply(reps)?;
        let cl = cosine_loss(&out, member.matrix())?;
        total += 1.0 - cl.loss;
    }
    Ok(total / decoders.len() as f64)
}
