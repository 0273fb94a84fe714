//! Library kernels against slow, independent reference implementations.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repbank::analysis::{spectral_entropy, spectrum};
use repbank::eval::{baseline_concat, knn_classify, KnnConfig};
use repbank::store::{EnsembleSet, FeatureMatrix, LabelVector, Split};
use repbank::tensor::singular_values;
use repbank::Matrix;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// One-sided Jacobi (Hestenes): orthogonalize column pairs of `A` directly,
/// then read singular values off the column norms.
#[allow(clippy::needless_range_loop)]
fn hestenes_singular_values(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut cols_v: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m.get(i, j)).collect()).collect();
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = cols_v[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols_v[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols_v[p].iter().zip(&cols_v[q]).map(|(a, b)| a * b).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (a, b) = (cols_v[p][i], cols_v[q][i]);
                    cols_v[p][i] = c * a - s * b;
                    cols_v[q][i] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols_v.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(rows.min(cols));
    sv
}

#[test]
fn singular_values_match_one_sided_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for (rows, cols) in [(20, 8), (8, 20), (13, 13), (30, 5)] {
        let m = random_matrix(rows, cols, &mut rng);
        let ours = singular_values(&m).unwrap();
        let oracle = hestenes_singular_values(&m);
        assert_eq!(ours.len(), oracle.len());
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{rows}x{cols}: {a} vs {b}");
        }
        let entropy = spectrum(&m).unwrap().entropy;
        let energy: f64 = oracle.iter().map(|s| s * s).sum();
        let h: f64 = oracle.iter().map(|s| s * s / energy).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
        assert!((entropy - h).abs() < 1e-8, "entropy {entropy} vs oracle {h}");
    }
}

#[test]
fn singular_values_keep_frobenius_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = random_matrix(40, 12, &mut rng);
    let sv = singular_values(&m).unwrap();
    let energy: f64 = sv.iter().map(|s| s * s).sum();
    let fro = m.frobenius_norm().powi(2);
    assert!((energy - fro).abs() <= 1e-6 * fro);
    assert!(sv.windows(2).all(|w| w[0] >= w[1]) && sv.iter().all(|&s| s >= 0.0));
}

#[test]
fn entropy_of_flat_and_spiked_spectra() {
    assert!((spectral_entropy(&[2.0; 5]) - 5f64.ln()).abs() < 1e-12);
    assert_eq!(spectral_entropy(&[3.0, 0.0, 0.0]), 0.0);
    assert_eq!(spectral_entropy(&[0.0, 0.0]), 0.0);
}

/// Exhaustive scan: every similarity, full sort, plain vote.
fn brute_force_knn(train: &Matrix, labels: &[u32], classes: u32, test: &Matrix, k: usize) -> Vec<u32> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (0..test.rows())
        .map(|i| {
            let q = test.row(i);
            let nq = norm(q);
            let mut all: Vec<(f64, usize)> = (0..train.rows())
                .map(|j| {
                    let r = train.row(j);
                    let dot: f64 = q.iter().zip(r).map(|(a, b)| a * b).sum();
                    ((dot / (nq * norm(r))).clamp(-1.0, 1.0), j)
                })
                .collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let nearest: Vec<u32> = all[..k].iter().map(|&(_, j)| labels[j]).collect();
            let mut counts = vec![0usize; classes as usize];
            for &l in &nearest {
                counts[l as usize] += 1;
            }
            let best = *counts.iter().max().unwrap();
            *nearest.iter().find(|&&l| counts[l as usize] == best).unwrap()
        })
        .collect()
}

#[test]
fn knn_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ks = [1, 5, 20];
    for instance in 0..20 {
        let n = rng.random_range(20..=2000);
        let d = rng.random_range(1..=64);
        let classes = rng.random_range(2..=10u32);
        let n_test = rng.random_range(1..=50);
        // Every fourth instance uses a coarse grid so exact ties are common.
        let coarse = instance % 4 == 0;
        let mut draw = |rows: usize| {
            let data = (0..rows * d)
                .map(|_| {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    if coarse {
                        (v * 2.0).round()
                    } else {
                        v
                    }
                })
                .collect::<Vec<_>>();
            let mut m = Matrix::from_vec(rows, d, data).unwrap();
            for i in 0..rows {
                if m.row(i).iter().all(|&v| v == 0.0) {
                    m.row_mut(i)[0] = 1.0;
                }
            }
            m
        };
        let train = draw(n);
        let test = draw(n_test);
        let ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let labels = LabelVector::new(ids.clone(), classes).unwrap();
        let k = ks[instance % 3];
        let fast = knn_classify(&train, &labels, &test, &KnnConfig { k }).unwrap();
        let slow = brute_force_knn(&train, &ids, classes, &test, k);
        assert_eq!(fast, slow, "instance {instance} (n={n}, d={d}, k={k})");
    }
}

fn unit_nonneg(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..1.0f64).max(0.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[test]
fn concatenated_cosine_is_mean_of_member_cosines() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let m = rng.random_range(1..=5);
        let d = rng.random_range(1..=16);
        let members: Vec<FeatureMatrix> = (0..m)
            .map(|_| FeatureMatrix::from_rows(&[unit_nonneg(d, &mut rng), unit_nonneg(d, &mut rng)]).unwrap())
            .collect();
        let mean: f64 = members
            .iter()
            .map(|f| f.row(0).iter().zip(f.row(1)).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / m as f64;
        let cat = baseline_concat(&EnsembleSet::unnamed(members, Split::Test).unwrap()).unwrap();
        let c = repbank::tensor::cosine(cat.row(0), cat.row(1)).unwrap();
        assert!((c - mean).abs() < 1e-9, "{c} vs {mean}");
    }
}

proptest! {
    #[test]
    fn spectrum_ignores_row_order(seed in 0u64..500, rows in 2usize..12, cols in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(rows, cols, &mut rng);
        let order: Vec<usize> = (0..rows).rev().collect();
        let a = spectrum(&m).unwrap();
        let b = spectrum(&m.gather_rows(&order)).unwrap();
        for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
