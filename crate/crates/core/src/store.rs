//! Cached features, labels and experiment manifests.
//!
//! Two little-endian binary formats are defined here:
//!
//! ```text
//! FSTR  magic "FSTR" | version u32 = 1 | dtype u32 = 1 (binary32) | n u64 | d u64 | n*d f32
//! LBLS  magic "LBLS" | version u32 = 1 | n u64 | n u32
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{norm, Matrix};

pub const FEATURE_MAGIC: [u8; 4] = *b"FSTR";
pub const LABEL_MAGIC: [u8; 4] = *b"LBLS";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 28;
pub const LABEL_HEADER_LEN: usize = 16;

/// Loaded rows must have unit norm to within this tolerance.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// One model's features, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    matrix: Matrix,
    post_relu: bool,
    normalized: bool,
}

impl FeatureMatrix {
    /// Wraps a matrix, checking finiteness and deriving the flags from the data.
    pub fn new(matrix: Matrix) -> Result<Self> {
        matrix.check_finite()?;
        let post_relu = matrix.as_slice().iter().all(|&v| v >= 0.0);
        let normalized = matrix.rows() > 0
            && matrix
                .iter_rows()
                .all(|r| (norm(r) - 1.0).abs() <= NORM_TOLERANCE);
        Ok(Self {
            matrix,
            post_relu,
            normalized,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn is_post_relu(&self) -> bool {
        self.post_relu
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Rescales every row to unit norm. Rows with norm below `1e-12` are an error.
    pub fn normalize(&mut self) -> Result<()> {
        self.matrix.normalize_rows()?;
        self.normalized = true;
        Ok(())
    }
}

/// Class ids paired with the rows of a feature matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    ids: Vec<u32>,
    num_classes: u32,
}

impl LabelVector {
    pub fn new(ids: Vec<u32>, num_classes: u32) -> Result<Self> {
        if let Some((index, &label)) = ids.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        Ok(Self { ids, num_classes })
    }

    /// Uses `max id + 1` as the class count.
    pub fn from_ids(ids: Vec<u32>) -> Self {
        let num_classes = ids.iter().max().map_or(0, |m| m + 1);
        Self { ids, num_classes }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    /// Widens the class count, e.g. to align train and test label spaces.
    pub fn with_num_classes(self, num_classes: u32) -> Result<Self> {
        Self::new(self.ids, num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Features from every member of the ensemble for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSet {
    members: Vec<FeatureMatrix>,
    names: Vec<String>,
    split: Split,
}

impl EnsembleSet {
    /// Requires at least one member and a shared `n` and `d` across members.
    pub fn new(members: Vec<FeatureMatrix>, names: Vec<String>, split: Split) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidConfig("an ensemble needs at least one model".into()))?;
        if names.len() != members.len() {
            return Err(Error::shape("EnsembleSet names", members.len(), names.len()));
        }
        let (n, d) = (first.rows(), first.cols());
        for m in &members[1..] {
            if m.cols() != d {
                return Err(Error::shape("ensemble feature dimension", d, m.cols()));
            }
            if m.rows() != n {
                return Err(Error::shape("ensemble row count", n, m.rows()));
            }
        }
        Ok(Self {
            members,
            names,
            split,
        })
    }

    /// Convenience constructor that names members `model0`, `model1`, ...
    pub fn unnamed(members: Vec<FeatureMatrix>, split: Split) -> Result<Self> {
        let names = (0..members.len()).map(|i| format!("model{i}")).collect();
        Self::new(members, names, split)
    }

    pub fn members(&self) -> &[FeatureMatrix] {
        &self.members
    }

    pub fn member(&self, j: usize) -> &FeatureMatrix {
        &self.members[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_models(&self) -> usize {
        self.members.len()
    }

    pub fn num_rows(&self) -> usize {
        self.members[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.members[0].cols()
    }

    pub fn normalize(&mut self) -> Result<()> {
        for m in &mut self.members {
            m.normalize()?;
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        self.members.iter().all(FeatureMatrix::is_normalized)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    /// One feature file per model, in the manifest's model order.
    pub features: Vec<PathBuf>,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTable {
    pub train: SplitFiles,
    pub test: SplitFiles,
}

/// JSON description of a cached-feature corpus.
///
/// Relative paths resolve against the directory holding the manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus: String,
    pub dim: usize,
    pub models: Vec<String>,
    pub splits: SplitTable,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.check(path)?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn check(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        if self.models.is_empty() {
            return Err(bad("model list is empty".into()));
        }
        for (split, files) in [("train", &self.splits.train), ("test", &self.splits.test)] {
            if files.features.len() != self.models.len() {
                return Err(bad(format!(
                    "{split} split lists {} feature files for {} models",
                    files.features.len(),
                    self.models.len()
                )));
            }
        }
        Ok(())
    }

    pub fn split_files(&self, split: Split) -> &SplitFiles {
        match split {
            Split::Train => &self.splits.train,
            Split::Test => &self.splits.test,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Every file the manifest references, resolved.
    pub fn referenced_files(&self) -> Vec<PathBuf> {
        [&self.splits.train, &self.splits.test]
            .into_iter()
            .flat_map(|f| f.features.iter().chain(std::iter::once(&f.labels)))
            .map(|p| self.resolve(p))
            .collect()
    }
}

pub fn encode_features(matrix: &Matrix) -> Result<Vec<u8>> {
    matrix.check_finite()?;
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * matrix.as_slice().len());
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&DTYPE_F32.to_le_bytes());
    buf.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(matrix.cols() as u64).to_le_bytes());
    for &v in matrix.as_slice() {
        let v32 = v as f32;
        if !v32.is_finite() {
            // finite f64 beyond the f32 range
            return Err(Error::NonFinite {
                index: (buf.len() - FEATURE_HEADER_LEN) / 4,
            });
        }
        buf.extend_from_slice(&v32.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut r = Reader::new(bytes, path);
    r.magic(FEATURE_MAGIC)?;
    r.version()?;
    let code = r.u32()?;
    if code != DTYPE_F32 {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            code,
        });
    }
    let n = r.u64()?;
    let d = r.u64()?;
    let count = n.checked_mul(d).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        expected: u64::MAX,
        found: bytes.len() as u64,
    })?;
    let payload = r.payload(count, 4)?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let m = Matrix::from_vec(n as usize, d as usize, data)?;
    m.check_finite()?;
    Ok(m)
}

pub fn write_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix(matrix.matrix(), path)
}

/// Writes any finite matrix in the `FSTR` format.
pub fn write_matrix(matrix: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_features(matrix)?;
    write_file(path.as_ref(), &bytes)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    FeatureMatrix::new(read_matrix(path)?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn encode_labels(labels: &LabelVector) -> Vec<u8> {
    let mut buf = Vec::with_capacity(LABEL_HEADER_LEN + 4 * labels.len());
    buf.extend_from_slice(&LABEL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for &id in labels.ids() {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    buf
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelVector> {
    let mut r = Reader::new(bytes, path);
    r.magic(LABEL_MAGIC)?;
    r.version()?;
    let n = r.u64()?;
    let payload = r.payload(n, 4)?;
    let ids = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LabelVector::from_ids(ids))
}

pub fn write_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_labels(labels))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes, path)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Loads one split of a manifest, cross-checks shapes and L2-normalizes rows.
pub fn load_ensemble(manifest: &Manifest, split: Split) -> Result<(EnsembleSet, LabelVector)> {
    let files = manifest.split_files(split);
    let mut members = Vec::with_capacity(files.features.len());
    for p in &files.features {
        let m = read_features(manifest.resolve(p))?;
        if m.cols() != manifest.dim {
            return Err(Error::shape("feature dimension vs manifest", manifest.dim, m.cols()));
        }
        members.push(m);
    }
    let mut set = EnsembleSet::new(members, manifest.models.clone(), split)?;
    set.normalize()?;
    let labels = read_labels(manifest.resolve(&files.labels))?;
    if labels.len() != set.num_rows() {
        return Err(Error::shape("label count vs feature rows", set.num_rows(), labels.len()));
    }
    Ok((set, labels))
}

/// Sequential little-endian header reader that reports truncation by path.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: end as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: self.path.to_path_buf(),
                version,
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn payload(&mut self, count: u64, width: u64) -> Result<&'a [u8]> {
        let expected = count
            .checked_mul(width)
            .and_then(|b| b.checked_add(self.pos as u64))
            .unwrap_or(u64::MAX);
        if expected > self.bytes.len() as u64 {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected,
                found: self.bytes.len() as u64,
            });
        }
        self.take((count * width) as usize)
    }
}
