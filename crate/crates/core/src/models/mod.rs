//! NBPR, DNCR and NeuPR: parameters, forward passes, binary cross-entropy,
//! hand-derived gradients and pre-training fusion.
//!
//! All three models score a triplet `(u, i, j)` with `ŷ_uij ∈ (0, 1)`, the
//! probability that `u` prefers `i` to `j`. Gradients are written out by
//! hand per model and verified against central differences in the tests.

mod dncr;
pub mod file;
mod nbpr;
mod neupr;

pub use dncr::{DenseLayer, DncrParams, Tower, TowerShape};
pub use file::{Model, ModelHeader};
pub use nbpr::{degenerate_bpr_forward, NbprParams};
pub use neupr::{fuse_pretrained, FusionConfig, NeuprParams};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LabeledTriplet;
use crate::error::{Error, Result};
use crate::numerics::{clamp_prob, DenseMatrix};
use crate::{ItemId, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    ItemPop,
    Bpr,
    Nbpr,
    Dncr,
    Neupr,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ItemPop => "itempop",
            ModelKind::Bpr => "bpr",
            ModelKind::Nbpr => "nbpr",
            ModelKind::Dncr => "dncr",
            ModelKind::Neupr => "neupr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "itempop" => Ok(ModelKind::ItemPop),
            "bpr" => Ok(ModelKind::Bpr),
            "nbpr" => Ok(ModelKind::Nbpr),
            "dncr" => Ok(ModelKind::Dncr),
            "neupr" => Ok(ModelKind::Neupr),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

/// A model that scores ordered item pairs for a user.
pub trait PairwiseModel: Sync {
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;

    /// `ŷ_uij`: probability that `user` prefers `i` over `j`.
    fn predict(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64>;

    fn check_ids(&self, user: UserId, i: ItemId, j: ItemId) -> Result<()> {
        if user >= self.num_users() {
            return Err(Error::Index {
                kind: "user",
                index: user,
                size: self.num_users(),
            });
        }
        for item in [i, j] {
            if item >= self.num_items() {
                return Err(Error::Index {
                    kind: "item",
                    index: item,
                    size: self.num_items(),
                });
            }
        }
        Ok(())
    }
}

impl<M: PairwiseModel + ?Sized> PairwiseModel for &M {
    fn num_users(&self) -> usize {
        (**self).num_users()
    }
    fn num_items(&self) -> usize {
        (**self).num_items()
    }
    fn predict(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        (**self).predict(user, i, j)
    }
}

/// A pairwise model whose parameters are a fixed list of dense tensors
/// trained by gradient descent on binary cross-entropy.
pub trait Trainable: PairwiseModel + Clone + Send {
    fn kind(&self) -> ModelKind;

    /// Parameter tensors in their fixed serialisation order.
    fn tensors(&self) -> Vec<&DenseMatrix>;
    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix>;
    fn tensor_names(&self) -> Vec<String>;

    /// Adds `scale * ∂loss/∂θ` for one triplet into `grads` and returns the
    /// triplet's (unscaled) loss.
    fn accumulate_gradient(&self, triplet: &LabeledTriplet, scale: f64, grads: &mut Gradients) -> Result<f64>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Gradient tensors aligned with [`Trainable::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<DenseMatrix>);

impl Gradients {
    pub fn zeros_like<M: Trainable>(model: &M) -> Self {
        Gradients(
            model
                .tensors()
                .iter()
                .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
                .collect(),
        )
    }

    pub fn clear(&mut self) {
        self.0.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn tensors(&self) -> &[DenseMatrix] {
        &self.0
    }
}

/// `-[y ln ŷ + (1 - y) ln(1 - ŷ)]` with `ŷ` clamped away from 0 and 1.
pub fn bce_loss(prediction: f64, label: f64) -> f64 {
    let p = clamp_prob(prediction);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Gradients of the mean BCE over `batch`, plus the summed loss.
pub fn backward<M: Trainable>(model: &M, batch: &[LabeledTriplet]) -> Result<(Gradients, f64)> {
    let mut grads = Gradients::zeros_like(model);
    let loss = backward_into(model, batch, &mut grads)?;
    Ok((grads, loss))
}

/// Like [`backward`] but reuses `grads`, which is cleared first.
pub fn backward_into<M: Trainable>(model: &M, batch: &[LabeledTriplet], grads: &mut Gradients) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    grads.clear();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for t in batch {
        loss += model.accumulate_gradient(t, scale, grads)?;
    }
    Ok(loss)
}

/// Mean BCE of the model over `batch`, forward passes only.
pub fn mean_loss<M: PairwiseModel + ?Sized>(model: &M, batch: &[LabeledTriplet]) -> Result<f64> {
    let mut total = 0.0;
    for t in batch {
        total += bce_loss(model.predict(t.user, t.i, t.j)?, t.target());
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
pub(crate) mod testing {
    //! Central-difference gradient oracle shared by the model tests.

    use super::*;
    use crate::numerics::finite_diff_grad;

    /// Max relative error between analytic and numeric gradients of the mean
    /// batch loss over every coordinate of every tensor.
    pub fn max_gradient_error<M: Trainable>(model: &M, batch: &[LabeledTriplet]) -> f64 {
        let (grads, _) = backward(model, batch).unwrap();
        let mut worst = 0.0f64;
        for (t, analytic) in grads.tensors().iter().enumerate() {
            let base = model.tensors()[t].as_slice().to_vec();
            let numeric = finite_diff_grad(
                |x| {
                    let mut probe = model.clone();
                    probe.tensors_mut()[t].as_mut_slice().copy_from_slice(x);
                    mean_loss(&probe, batch).unwrap()
                },
                &base,
                1e-5,
            )
            .unwrap();
            for (a, n) in analytic.as_slice().iter().zip(&numeric) {
                worst = worst.max(relative_error(*a, *n));
            }
        }
        worst
    }

    pub fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }
}
