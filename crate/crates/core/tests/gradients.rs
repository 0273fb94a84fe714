//! Analytic decoder gradients against central finite differences computed
//! by an independent forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repbank::engine::cosine_loss;
use repbank::mlp::{Layer, Mlp};
use repbank::Matrix;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-6;
const KINK: f64 = 1e-6;
// Below this magnitude the comparison is absolute; central differences at
// h = 1e-5 carry ~1e-11 of rounding noise.
const FLOOR: f64 = 1e-4;

/// Plain-loop forward pass over `theta = [W0, b0, W1, b1, ..., x]`, returning
/// the loss and the smallest |pre-activation|.
fn oracle_loss(theta: &[f64], t: &[f64], depth: usize, b: usize, d: usize) -> (f64, f64) {
    let per_layer = d * d + d;
    let x = &theta[depth * per_layer..];
    let mut min_pre = f64::INFINITY;
    let mut total = 0.0;
    for r in 0..b {
        let mut h: Vec<f64> = x[r * d..(r + 1) * d].to_vec();
        for l in 0..depth {
            let w = &theta[l * per_layer..l * per_layer + d * d];
            let bias = &theta[l * per_layer + d * d..(l + 1) * per_layer];
            let mut next = vec![0.0; d];
            for (o, nv) in next.iter_mut().enumerate() {
                let mut s = bias[o];
                for (i, hv) in h.iter().enumerate() {
                    s += hv * w[i * d + o];
                }
                min_pre = min_pre.min(s.abs());
                *nv = s.max(0.0);
            }
            h = next;
        }
        let tr = &t[r * d..(r + 1) * d];
        let dot: f64 = h.iter().zip(tr).map(|(a, b)| a * b).sum();
        let na = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nt = tr.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += 1.0 - dot / (na * nt);
    }
    (total / b as f64, min_pre)
}

fn close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs()).max(FLOOR);
    (analytic - numeric).abs() <= REL_TOL * scale
}

fn check_depth(depth: usize, seed: u64) -> (usize, usize) {
    let (d, b) = (8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Positive biases keep every layer alive so the check covers real signal.
    let layers: Vec<Layer> = (0..depth)
        .map(|_| Layer {
            weight: Matrix::from_vec(d, d, (0..d * d).map(|_| rng.random_range(-0.6..0.6)).collect()).unwrap(),
            bias: (0..d).map(|_| rng.random_range(0.05..0.3)).collect(),
        })
        .collect();
    let mlp = Mlp::from_layers(layers).unwrap();
    let x = Matrix::from_vec(b, d, (0..b * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let t = Matrix::from_vec(b, d, (0..b * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();

    let (out, tape) = mlp.forward(&x).unwrap();
    let cl = cosine_loss(&out, &t).unwrap();
    let g = mlp.backward(&tape, &cl.grad).unwrap();

    let mut theta = Vec::new();
    let mut analytic = Vec::new();
    for (l, layer) in mlp.layers().iter().enumerate() {
        theta.extend_from_slice(layer.weight.as_slice());
        theta.extend_from_slice(&layer.bias);
        analytic.extend_from_slice(g.weights[l].as_slice());
        analytic.extend_from_slice(&g.biases[l]);
    }
    theta.extend_from_slice(x.as_slice());
    analytic.extend_from_slice(g.input.as_slice());
    let ts = t.as_slice();
    let (base, _) = oracle_loss(&theta, ts, depth, b, d);
    assert!((base - cl.loss).abs() < 1e-12, "oracle loss {base} vs {}", cl.loss);

    let (mut checked, mut skipped) = (0, 0);
    for k in 0..theta.len() {
        let orig = theta[k];
        theta[k] = orig + H;
        let (lp, kp) = oracle_loss(&theta, ts, depth, b, d);
        theta[k] = orig - H;
        let (lm, km) = oracle_loss(&theta, ts, depth, b, d);
        theta[k] = orig;
        if kp.min(km) < KINK {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * H);
        assert!(
            close(analytic[k], numeric),
            "depth {depth} coordinate {k}: analytic {} numeric {numeric}",
            analytic[k]
        );
        checked += 1;
    }
    (checked, skipped)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for depth in 1..=4 {
        for seed in 0..3 {
            let (checked, skipped) = check_depth(depth, seed * 10 + depth as u64);
            let total = checked + skipped;
            assert_eq!(total, depth * (8 * 8 + 8) + 32);
            assert!(skipped * 10 < total, "depth {depth}: {skipped}/{total} coordinates near a kink");
        }
    }
}
