//! Square fully connected decoders with a ReLU after every layer.
//!
//! Layers act on row-vector batches: `y = relu(x W + b)` with `W` stored
//! `d_in x d_out`. The checkpoint block is
//!
//! ```text
//! MLPW  magic "MLPW" | version u32 = 1 | d u64 | depth u32 | per layer: d*d f32 weights, d f32 bias
//! ```

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{add_bias, matmul, matmul_nt, matmul_tn, Matrix};

pub const MLP_MAGIC: [u8; 4] = *b"MLPW";
pub const MLP_VERSION: u32 = 1;
pub const MLP_HEADER_LEN: usize = 20;
pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dim: usize,
    layers: Vec<Layer>,
}

/// Activations cached by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// Gradient with respect to the batch fed to `forward`.
    pub input: Matrix,
}

fn check_depth(depth: usize) -> Result<()> {
    if !(1..=MAX_DEPTH).contains(&depth) {
        return Err(Error::InvalidConfig(format!(
            "decoder depth must be in 1..={MAX_DEPTH}, got {depth}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Gaussian weights with variance `2 / d`, zero biases. Each output unit's
    /// incoming weights are shifted to sum to zero: inputs are non-negative, so
    /// an uncentered unit has a pre-activation sign shared by most rows and can
    /// start (or quickly become) dead for the whole dataset.
    pub fn init<R: Rng + ?Sized>(dim: usize, depth: usize, rng: &mut R) -> Result<Self> {
        check_depth(depth)?;
        if dim == 0 {
            return Err(Error::InvalidConfig("decoder width must be positive".into()));
        }
        let normal = Normal::new(0.0, (2.0 / dim as f64).sqrt()).expect("valid std");
        let layers = (0..depth)
            .map(|_| {
                let data = (0..dim * dim).map(|_| normal.sample(rng)).collect();
                let mut weight = Matrix::from_vec(dim, dim, data).expect("square");
                center_columns(&mut weight);
                Layer {
                    weight,
                    bias: vec![0.0; dim],
                }
            })
            .collect();
        Ok(Self { dim, layers })
    }

    /// Identity weights and zero biases: transparent on non-negative input.
    pub fn identity(dim: usize, depth: usize) -> Result<Self> {
        check_depth(depth)?;
        let layers = (0..depth)
            .map(|_| Layer {
                weight: Matrix::identity(dim),
                bias: vec![0.0; dim],
            })
            .collect();
        Ok(Self { dim, layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        check_depth(layers.len())?;
        let dim = layers[0].bias.len();
        for l in &layers {
            if l.weight.shape() != (dim, dim) || l.bias.len() != dim {
                return Err(Error::shape(
                    "Mlp layer",
                    format!("{dim}x{dim} weight, {dim} bias"),
                    format!("{:?} weight, {} bias", l.weight.shape(), l.bias.len()),
                ));
            }
            l.weight.check_finite()?;
            if let Some(index) = l.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.len() * (self.dim * self.dim + self.dim)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        if batch.cols() != self.dim {
            return Err(Error::shape("Mlp::forward input width", self.dim, batch.cols()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = matmul(&x, &layer.weight)?;
            add_bias(&mut z, &layer.bias)?;
            let mut a = z.clone();
            crate::tensor::relu_in_place(&mut a);
            inputs.push(x);
            pre_activations.push(z);
            x = a;
        }
        Ok((
            x,
            Tape {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping the tape.
    pub fn apply(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Reverse-mode gradients of `sum(output_grad ⊙ forward(x))`.
    ///
    /// The ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<MlpGradients> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::shape("Mlp::backward tape depth", self.layers.len(), tape.inputs.len()));
        }
        let expected = tape.pre_activations.last().map(Matrix::shape);
        if Some(output_grad.shape()) != expected {
            return Err(Error::shape(
                "Mlp::backward output gradient",
                format!("{expected:?}"),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let depth = self.layers.len();
        let mut weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        let mut g = output_grad.clone();
        for l in (0..depth).rev() {
            let pre = &tape.pre_activations[l];
            for (gv, &z) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if z <= 0.0 {
                    *gv = 0.0;
                }
            }
            weights.push(matmul_tn(&tape.inputs[l], &g)?);
            let mut db = vec![0.0; self.dim];
            for row in g.iter_rows() {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            biases.push(db);
            g = matmul_nt(&g, &self.layers[l].weight)?;
        }
        weights.reverse();
        biases.reverse();
        Ok(MlpGradients {
            weights,
            biases,
            input: g,
        })
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MLP_MAGIC);
        out.extend_from_slice(&MLP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for &v in l.weight.as_slice().iter().chain(&l.bias) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MLP_HEADER_LEN + 4 * self.num_params());
        self.encode(&mut out);
        out
    }

    /// Decodes one block from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<(Self, usize)> {
        let truncated = |expected: usize| Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        };
        if bytes.len() < MLP_HEADER_LEN {
            return Err(truncated(MLP_HEADER_LEN));
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MLP_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: MLP_MAGIC,
                found,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MLP_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let depth = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        check_depth(depth)?;
        let per_layer = dim
            .checked_mul(dim)
            .and_then(|w| w.checked_add(dim))
            .ok_or_else(|| truncated(usize::MAX))?;
        let total = per_layer
            .checked_mul(depth * 4)
            .and_then(|p| p.checked_add(MLP_HEADER_LEN))
            .ok_or_else(|| truncated(usize::MAX))?;
        if bytes.len() < total {
            return Err(truncated(total));
        }
        let mut values = bytes[MLP_HEADER_LEN..total]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let w: Vec<f64> = values.by_ref().take(dim * dim).collect();
            let b: Vec<f64> = values.by_ref().take(dim).collect();
            layers.push(Layer {
                weight: Matrix::from_vec(dim, dim, w)?,
                bias: b,
            });
        }
        Ok((Self::from_layers(layers)?, total))
    }
}

fn center_columns(w: &mut Matrix) {
    let (rows, cols) = w.shape();
    for k in 0..cols {
        let mean = (0..rows).map(|i| w.get(i, k)).sum::<f64>() / rows as f64;
        for i in 0..rows {
            w.set(i, k, w.get(i, k) - mean);
        }
    }
}

/// Concatenated `MLPW` blocks, one per ensemble member.
pub fn encode_stack(mlps: &[Mlp]) -> Vec<u8> {
    let mut out = Vec::new();
    for m in mlps {
        m.encode(&mut out);
    }
    out
}

pub fn decode_stack(bytes: &[u8], path: &Path) -> Result<Vec<Mlp>> {
    let mut mlps = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let (m, used) = Mlp::decode(rest, path)?;
        mlps.push(m);
        rest = &rest[used..];
    }
    Ok(mlps)
}
