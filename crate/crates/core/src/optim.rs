//! Adam and momentum SGD over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn check_grads(grads: &[f64]) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(Error::NonFiniteGradient { index }),
        None => Ok(()),
    }
}

/// One bias-corrected Adam update, `t` being the 1-based step number.
#[inline]
fn adam_update(
    cfg: &AdamConfig,
    t: u64,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "AdamState::step",
                self.m.len(),
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        check_grads(grads)?;
        self.t += 1;
        adam_update(&self.cfg, self.t, params, grads, &mut self.m, &mut self.v);
        Ok(())
    }
}

/// Adam over the rows of a matrix where each step touches only some rows.
///
/// Every row keeps its own moments and step count, so rows outside a batch
/// are left bit-for-bit untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct RowAdam {
    pub cfg: AdamConfig,
    m: Matrix,
    v: Matrix,
    t: Vec<u64>,
}

impl RowAdam {
    pub fn new(rows: usize, cols: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: vec![0; rows],
        }
    }

    pub fn row_steps(&self, row: usize) -> u64 {
        self.t[row]
    }

    /// Updates `params.row(indices[i])` with `grads.row(i)`.
    pub fn step_rows(&mut self, params: &mut Matrix, indices: &[usize], grads: &Matrix) -> Result<()> {
        if params.shape() != self.m.shape()
            || grads.rows() != indices.len()
            || grads.cols() != params.cols()
        {
            return Err(Error::shape(
                "RowAdam::step_rows",
                format!("{:?} params, {}x{} grads", self.m.shape(), indices.len(), self.m.cols()),
                format!("{:?} params, {:?} grads", params.shape(), grads.shape()),
            ));
        }
        check_grads(grads.as_slice())?;
        for (i, &row) in indices.iter().enumerate() {
            self.t[row] += 1;
            adam_update(
                &self.cfg,
                self.t[row],
                params.row_mut(row),
                grads.row(i),
                self.m.row_mut(row),
                self.v.row_mut(row),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum SGD: `buf = μ·buf + g + λ·p; p -= lr·buf`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub cfg: SgdConfig,
    buf: Vec<f64>,
}

impl SgdState {
    pub fn new(len: usize, cfg: SgdConfig) -> Self {
        Self {
            cfg,
            buf: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.buf.len() || grads.len() != self.buf.len() {
            return Err(Error::shape(
                "SgdState::step",
                self.buf.len(),
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        check_grads(grads)?;
        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.cfg;
        for ((p, &g), b) in params.iter_mut().zip(grads).zip(&mut self.buf) {
            *b = momentum * *b + g + weight_decay * *p;
            *p -= lr * *b;
        }
        Ok(())
    }
}

/// Linear learning-rate scaling: `base_lr · batch / base_batch`.
pub fn scaled_lr(base_lr: f64, batch: usize, base_batch: usize) -> f64 {
    base_lr * batch as f64 / base_batch as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut p = [1.0];
        s.step(&mut p, &[2.0]).unwrap();
        let expected = 1.0 - 3e-4 * (2.0 / (2.0 + 1e-8));
        assert!((p[0] - expected).abs() <= 1e-12);
        assert!((p[0] - 0.9997).abs() < 1e-11);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_param() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = [0.5, -1.25, 3.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [0.5, -1.25, 3.0]);
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = [0.0, 0.0];
        assert!(matches!(
            s.step(&mut p, &[1.0, f64::NAN]),
            Err(Error::NonFiniteGradient { index: 1 })
        ));
        assert!(s.step(&mut p, &[1.0]).is_err());
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn row_adam_only_touches_listed_rows() {
        let mut params = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        let before = params.clone();
        let mut opt = RowAdam::new(3, 2, AdamConfig::default());
        let grads = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        opt.step_rows(&mut params, &[1], &grads).unwrap();
        assert_eq!(params.row(0), before.row(0));
        assert_eq!(params.row(2), before.row(2));
        assert_ne!(params.row(1), before.row(1));
        assert_eq!((opt.row_steps(0), opt.row_steps(1)), (0, 1));

        // a row's first step matches a fresh dense Adam's first step
        let mut dense = AdamState::new(2, AdamConfig::default());
        let mut p = [2.0, 2.0];
        dense.step(&mut p, &[1.0, -1.0]).unwrap();
        assert_eq!(params.row(1), &p);
    }

    #[test]
    fn sgd_examples() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut s = SgdState::new(1, cfg);
        let mut p = [0.0];
        s.step(&mut p, &[1.0]).unwrap();
        assert_eq!(p[0], -0.1);

        let mut s = SgdState::new(
            1,
            SgdConfig {
                lr: 1.0,
                momentum: 0.9,
                weight_decay: 0.0,
            },
        );
        let mut p = [0.0];
        s.step(&mut p, &[1.0]).unwrap();
        s.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 2.9).abs() <= 1e-12);

        let mut s = SgdState::new(
            1,
            SgdConfig {
                lr: 1.0,
                momentum: 0.0,
                weight_decay: 0.01,
            },
        );
        let mut p = [1.0];
        s.step(&mut p, &[0.0]).unwrap();
        assert_eq!(p[0], 0.99);
    }

    #[test]
    fn plain_sgd_is_gradient_descent() {
        let mut s = SgdState::new(
            3,
            SgdConfig {
                lr: 0.05,
                momentum: 0.0,
                weight_decay: 0.0,
            },
        );
        let mut p = [1.0, 2.0, -3.0];
        let g = [0.5, -0.25, 4.0];
        let expected: Vec<f64> = p.iter().zip(&g).map(|(p, g)| p - 0.05 * g).collect();
        s.step(&mut p, &g).unwrap();
        assert_eq!(p.to_vec(), expected);
    }

    #[test]
    fn scaled_lr_examples() {
        assert_eq!(scaled_lr(3e-4, 256, 256), 3e-4);
        assert!((scaled_lr(3e-4, 4096, 256) - 4.8e-3).abs() < 1e-15);
        assert!((scaled_lr(3e-4, 128, 256) - 1.5e-4).abs() < 1e-18);
    }
}
