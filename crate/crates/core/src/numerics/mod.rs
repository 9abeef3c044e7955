//! Dense linear algebra, activations, initialisation, Adam and a
//! finite-difference gradient oracle.
//!
//! Everything is `f64`. Gradients for the models are derived by hand, and
//! checking them against central differences needs double precision.

mod adam;
pub mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use rng::{Rng, RngSeed};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-15;

/// Standard deviation of the Gaussian weight initialiser.
pub const INIT_STD: f64 = 0.01;

/// Row-major dense matrix.
///
/// Embedding tables are stored with one row per entity, so row `u` of a user
/// table is the latent vector of user `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (values.len(), 1),
            });
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: (rows.len(), cols),
                    right: (1, row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            values,
        })
    }

    /// A `1 x n` matrix holding a vector.
    pub fn row_vector(values: Vec<f64>) -> Self {
        DenseMatrix {
            rows: 1,
            cols: values.len(),
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Row `r`, or an index error naming `kind` when out of range.
    pub fn checked_row(&self, kind: &'static str, r: usize) -> Result<&[f64]> {
        if r >= self.rows {
            return Err(Error::Index {
                kind,
                index: r,
                size: self.rows,
            });
        }
        Ok(self.row(r))
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub(crate) fn ensure_same_shape(&self, other: &DenseMatrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// `weights * input + bias`.
pub fn affine(weights: &DenseMatrix, input: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if weights.cols() != input.len() {
        return Err(Error::Shape {
            op: "affine input",
            left: weights.shape(),
            right: (input.len(), 1),
        });
    }
    if weights.rows() != bias.len() {
        return Err(Error::Shape {
            op: "affine bias",
            left: weights.shape(),
            right: (bias.len(), 1),
        });
    }
    let mut out = vec![0.0; weights.rows()];
    affine_into(weights, input, bias, &mut out);
    Ok(out)
}

/// Unchecked variant of [`affine`] writing into `out`; shapes must agree.
pub(crate) fn affine_into(weights: &DenseMatrix, input: &[f64], bias: &[f64], out: &mut [f64]) {
    debug_assert_eq!(weights.cols(), input.len());
    debug_assert_eq!(weights.rows(), out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(weights.row(r), input) + bias[r];
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamps a probability into `[PROB_EPS, 1 - PROB_EPS]`.
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Matrix of i.i.d. `Normal(0, INIT_STD^2)` entries.
pub fn gaussian_init(rows: usize, cols: usize, seed: RngSeed) -> Result<DenseMatrix> {
    gaussian_init_with_std(rows, cols, INIT_STD, seed)
}

pub fn gaussian_init_with_std(
    rows: usize,
    cols: usize,
    std: f64,
    seed: RngSeed,
) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape {
            op: "gaussian_init",
            left: (rows, cols),
            right: (1, 1),
        });
    }
    let mut rng = seed.rng();
    let values = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Ok(DenseMatrix { rows, cols, values })
}

/// Central-difference gradient of `f` at `point`.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for idx in 0..x.len() {
        let orig = x[idx];
        x[idx] = orig + step;
        let plus = f(&x);
        x[idx] = orig - step;
        let minus = f(&x);
        x[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at coordinate {idx}: {plus} / {minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
