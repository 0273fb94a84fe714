//! Feature-space diagnostics: singular-value spectra and normalized
//! nearest-neighbor similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_indices;
use crate::tensor::{cosine_with_norms, norm, singular_values, Matrix, MIN_NORM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub singular_values: Vec<f64>,
    /// Shannon entropy (nats) of `σᵢ² / Σσ²`. Higher means a flatter spectrum.
    pub entropy: f64,
    pub frobenius: f64,
}

/// Entropy of the normalized squared singular values. Zero energy gives zero.
pub fn spectral_entropy(singular_values: &[f64]) -> f64 {
    let energy: f64 = singular_values.iter().map(|s| s * s).sum();
    if energy <= 0.0 {
        return 0.0;
    }
    let h: f64 = singular_values
        .iter()
        .map(|s| s * s / energy)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.max(0.0)
}

pub fn spectrum(feats: &Matrix) -> Result<SpectrumReport> {
    if feats.rows() == 0 {
        return Err(Error::InvalidConfig("spectrum of an empty matrix".into()));
    }
    let sv = singular_values(feats)?;
    Ok(SpectrumReport {
        entropy: spectral_entropy(&sv),
        frobenius: feats.frobenius_norm(),
        singular_values: sv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// Per test row: highest cosine to any train row over `mean_similarity`.
    pub normalized: Vec<f64>,
    /// Per test row: highest cosine to any train row.
    pub max_similarity: Vec<f64>,
    pub median: f64,
    /// Mean cosine over all test × train pairs.
    pub mean_similarity: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn norms(m: &Matrix) -> Result<Vec<f64>> {
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

pub fn normalized_max_similarity(train: &Matrix, test: &Matrix) -> Result<SimilarityReport> {
    if train.cols() != test.cols() {
        return Err(Error::shape("similarity feature dimension", train.cols(), test.cols()));
    }
    if train.rows() == 0 || test.rows() == 0 {
        return Err(Error::InvalidConfig("similarity needs non-empty train and test sets".into()));
    }
    let train_norms = norms(train)?;
    let test_norms = norms(test)?;
    // (max, row sum) per test row
    let per_row: Vec<(f64, f64)> = map_indices(test.rows(), |i| {
        let q = test.row(i);
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for (r, &nr) in train.iter_rows().zip(&train_norms) {
            let c = cosine_with_norms(q, test_norms[i], r, nr);
            max = max.max(c);
            sum += c;
        }
        (max, sum)
    });
    let total: f64 = per_row.iter().map(|&(_, s)| s).sum();
    let mean = total / (train.rows() * test.rows()) as f64;
    if mean.abs() < MIN_NORM {
        return Err(Error::DegenerateVector { norm: mean });
    }
    let max_similarity: Vec<f64> = per_row.iter().map(|&(m, _)| m).collect();
    let normalized: Vec<f64> = max_similarity.iter().map(|m| m / mean).collect();
    Ok(SimilarityReport {
        median: median(&normalized),
        normalized,
        max_similarity,
        mean_similarity: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_examples() {
        let id = Matrix::identity(3);
        let r = spectrum(&id).unwrap();
        assert!(r.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!((r.entropy - 3f64.ln()).abs() < 1e-12);

        let rank1 = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]]).unwrap();
        assert!(spectrum(&rank1).unwrap().entropy.abs() < 1e-9);

        assert!(spectrum(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn similarity_examples() {
        let same = Matrix::from_rows(&[[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]]).unwrap();
        let r = normalized_max_similarity(&same, &same).unwrap();
        assert!(r.normalized.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!((r.mean_similarity - 1.0).abs() < 1e-15);
        assert!((r.median - 1.0).abs() < 1e-15);

        let train = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let test = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let r = normalized_max_similarity(&train, &test).unwrap();
        assert_eq!(r.max_similarity, vec![1.0]);
        assert_eq!(r.mean_similarity, 0.5);
        assert_eq!(r.normalized, vec![2.0]);

        assert!(normalized_max_similarity(&train, &Matrix::zeros(1, 2)).is_err());
        assert!(normalized_max_similarity(&train, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
