//! Deterministic synthetic ensembles with known cluster structure.
//!
//! Images are latent points drawn around class centroids. Each "model" sees a
//! latent through its own random orthonormal map (optionally restricted to a
//! model-specific block of coordinates), plus view noise, a ReLU and an L2
//! normalization, mimicking cached post-ReLU backbone features.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{
    write_features, write_labels, EnsembleSet, FeatureMatrix, LabelVector, Manifest, Split, SplitFiles,
    SplitTable,
};
use crate::tensor::{dot, norm, Matrix, MIN_NORM};

const MAX_RESAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    /// Every model sees the full latent.
    Shared,
    /// Model `j` sees only the `j`-th of `m` contiguous coordinate blocks.
    Complementary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub models: usize,
    pub num_classes: usize,
    /// Std of the per-image offset from its class centroid.
    pub noise: f64,
    /// Std of per-model noise added after the view map.
    pub view_noise: f64,
    pub mode: ViewMode,
    /// Seeds centroids, labels and noise.
    pub seed: u64,
    /// Seeds the per-model view maps. `None` reuses `seed`; corpora sharing a
    /// view seed are "the same models applied to different images".
    pub view_seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 512,
            n_test: 128,
            dim: 32,
            models: 1,
            num_classes: 8,
            noise: 0.5,
            view_noise: 0.0,
            mode: ViewMode::Shared,
            seed: 0,
            view_seed: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 || self.models == 0 || self.num_classes == 0 {
            return bad("dim, models and num_classes must be positive".into());
        }
        if self.num_classes > self.n_train {
            return bad(format!(
                "num_classes ({}) exceeds n_train ({})",
                self.num_classes, self.n_train
            ));
        }
        if !(self.noise >= 0.0 && self.view_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if self.mode == ViewMode::Complementary && self.models > self.dim {
            return bad("complementary mode needs at least one coordinate per model".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplit {
    pub ensemble: EnsembleSet,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: SynthSplit,
    pub test: SynthSplit,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Orthonormalizes the rows of a Gaussian matrix by modified Gram-Schmidt.
pub fn random_orthonormal<R: Rng>(dim: usize, rng: &mut R) -> Matrix {
    loop {
        let mut q = gaussian_matrix(dim, dim, rng);
        let mut ok = true;
        for i in 0..dim {
            for j in 0..i {
                let (head, tail) = q.as_mut_slice().split_at_mut(i * dim);
                let prev = &head[j * dim..(j + 1) * dim];
                let cur = &mut tail[..dim];
                let p = dot(cur, prev);
                cur.iter_mut().zip(prev).for_each(|(c, v)| *c -= p * v);
            }
            let row = q.row_mut(i);
            let n = norm(row);
            if n < 1e-8 {
                ok = false;
                break;
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        if ok {
            return q;
        }
    }
}

struct Views {
    maps: Vec<Matrix>,
    blocks: Vec<std::ops::Range<usize>>,
}

impl Views {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.view_seed.unwrap_or(spec.seed));
        rng.set_stream(7);
        let maps = (0..spec.models)
            .map(|_| random_orthonormal(spec.dim, &mut rng))
            .collect();
        let blocks = (0..spec.models)
            .map(|j| match spec.mode {
                ViewMode::Shared => 0..spec.dim,
                ViewMode::Complementary => {
                    (j * spec.dim / spec.models)..((j + 1) * spec.dim / spec.models)
                }
            })
            .collect();
        Self { maps, blocks }
    }

    /// `relu(Q_j · mask_j(latent) + noise)`, unnormalized.
    fn observe<R: Rng>(&self, j: usize, latent: &[f64], view_noise: f64, rng: &mut R, out: &mut [f64]) {
        let q = &self.maps[j];
        let block = self.blocks[j].clone();
        for (k, o) in out.iter_mut().enumerate() {
            let qr = &q.row(k)[block.clone()];
            let v = dot(qr, &latent[block.clone()]);
            let eps: f64 = StandardNormal.sample(rng);
            *o = (v + view_noise * eps).max(0.0);
        }
    }
}

fn generate_split<R: Rng>(
    spec: &SynthSpec,
    views: &Views,
    centroids: &Matrix,
    n: usize,
    split: Split,
    rng: &mut R,
) -> Result<SynthSplit> {
    let d = spec.dim;
    let mut members: Vec<Matrix> = (0..spec.models).map(|_| Matrix::zeros(n, d)).collect();
    let ids: Vec<u32> = (0..n).map(|i| (i % spec.num_classes) as u32).collect();
    let mut latent = vec![0.0; d];
    let mut obs = vec![0.0; d];
    for (i, &class) in ids.iter().enumerate() {
        let mut attempt = 0;
        'resample: loop {
            let c = centroids.row(class as usize);
            for (l, &cv) in latent.iter_mut().zip(c) {
                let eps: f64 = StandardNormal.sample(rng);
                *l = cv + spec.noise * eps;
            }
            for (j, member) in members.iter_mut().enumerate() {
                views.observe(j, &latent, spec.view_noise, rng, &mut obs);
                let len = norm(&obs);
                if len < MIN_NORM {
                    attempt += 1;
                    if attempt >= MAX_RESAMPLES {
                        return Err(Error::DegenerateRow { row: i, norm: len });
                    }
                    continue 'resample;
                }
                member
                    .row_mut(i)
                    .iter_mut()
                    .zip(&obs)
                    .for_each(|(m, v)| *m = v / len);
            }
            break;
        }
    }
    let members = members
        .into_iter()
        .map(FeatureMatrix::new)
        .collect::<Result<Vec<_>>>()?;
    let names = (0..spec.models).map(|j| format!("view{j}")).collect();
    Ok(SynthSplit {
        ensemble: EnsembleSet::new(members, names, split)?,
        labels: LabelVector::new(ids, spec.num_classes as u32)?,
    })
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let views = Views::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids = gaussian_matrix(spec.num_classes, spec.dim, &mut rng);
    let train = generate_split(spec, &views, &centroids, spec.n_train, Split::Train, &mut rng)?;
    let test = generate_split(spec, &views, &centroids, spec.n_test, Split::Test, &mut rng)?;
    Ok(SynthCorpus { train, test })
}

/// Writes a corpus as `FSTR`/`LBLS` files plus `manifest.json` under `dir`,
/// returning the manifest path.
pub fn write_corpus(corpus: &SynthCorpus, name: &str, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut table = Vec::with_capacity(2);
    for split in [&corpus.train, &corpus.test] {
        let tag = split.ensemble.split().as_str();
        let mut features = Vec::new();
        for (member, model) in split.ensemble.members().iter().zip(split.ensemble.names()) {
            let file = PathBuf::from(format!("{tag}_{model}.fstr"));
            write_features(member, dir.join(&file))?;
            features.push(file);
        }
        let labels = PathBuf::from(format!("{tag}_labels.lbls"));
        write_labels(&split.labels, dir.join(&labels))?;
        table.push(SplitFiles { features, labels });
    }
    let test = table.pop().expect("two splits");
    let train = table.pop().expect("two splits");
    let manifest = Manifest {
        corpus: name.to_string(),
        dim: corpus.train.ensemble.dim(),
        models: corpus.train.ensemble.names().to_vec(),
        splits: SplitTable { train, test },
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
