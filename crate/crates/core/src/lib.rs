//! Feature-level ensembling of frozen feature extractors.
//!
//! Each ensembled model contributes cached, L2-normalized, post-ReLU features.
//! A bank of per-image representations is learned by gradient descent together
//! with one decoder MLP per model, so that every model's feature is
//! recoverable from the representation. New images get representations by
//! the same optimization against the frozen decoders.
//!
//! Module map:
//! - [`store`]: `FSTR`/`LBLS` files, manifests, ensemble loading
//! - [`tensor`]: dense kernels and singular values
//! - [`mlp`]: decoders with hand-written backward passes, `MLPW` checkpoints
//! - [`optim`]: Adam, row-sparse Adam, momentum SGD
//! - [`engine`]: bank initialization, training, inference
//! - [`eval`]: baselines, k-NN, linear probe
//! - [`analysis`]: spectra and normalized max similarity
//! - [`synth`]: synthetic ensembles with known cluster structure

pub mod analysis;
pub mod engine;
pub mod error;
pub mod eval;
pub mod mlp;
pub mod optim;
pub mod store;
pub mod synth;
pub mod tensor;

pub use engine::{infer, init_bank, train, train_observed, Inference, MemoryBank, TrainConfig, TrainedEnsembler};
pub use error::{Error, ErrorKind, Result};
pub use eval::{EvalReport, KnnConfig, ProbeConfig};
pub use mlp::Mlp;
pub use store::{EnsembleSet, FeatureMatrix, LabelVector, Manifest, Split};
pub use tensor::Matrix;

/// Maps `f` over `0..n`, in parallel when enabled. Output order is always `0..n`.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
