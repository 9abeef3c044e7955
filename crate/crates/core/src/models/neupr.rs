use serde::{Deserialize, Serialize};

use super::dncr::{concat_input, scatter_input_grad};
use super::nbpr::nbpr_logit;
use super::{DncrParams, Gradients, ModelKind, NbprParams, PairwiseModel, Tower, TowerShape, Trainable};
use crate::data::LabeledTriplet;
use crate::error::{Error, Result};
use crate::numerics::{dot, gaussian_init, sigmoid, DenseMatrix, RngSeed};
use crate::{ItemId, UserId};

/// Neural personalised ranking: an NBPR head and a DNCR tower on separate
/// embeddings, joined by one output weight over `[f^N; f^D]`.
///
/// `f^N = [U^N_u ⊙ V^N_i; −U^N_u ⊙ V^N_j]` is `2k` wide, `f^D` is the top of
/// the tower. The output weight is laid out as `[w_pos; w_neg; w_D]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuprParams {
    pub nbpr_user: DenseMatrix,
    pub nbpr_item: DenseMatrix,
    pub dncr_user: DenseMatrix,
    pub dncr_item: DenseMatrix,
    pub tower: Tower,
    /// `1 x (2k + top)`
    pub output: DenseMatrix,
}

/// Weight given to the NBPR donor when fusing pre-trained models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { alpha: 0.5 }
    }
}

impl FusionConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(FusionConfig { alpha })
    }
}

impl NeuprParams {
    /// `k` is the NBPR embedding size; the DNCR part follows `shape`.
    pub fn zeros(num_users: usize, num_items: usize, k: usize, shape: &TowerShape) -> Self {
        let d = shape.embedding_dim;
        NeuprParams {
            nbpr_user: DenseMatrix::zeros(num_users, k),
            nbpr_item: DenseMatrix::zeros(num_items, k),
            dncr_user: DenseMatrix::zeros(num_users, d),
            dncr_item: DenseMatrix::zeros(num_items, d),
            tower: Tower::zeros(shape.input_width(), &shape.hidden),
            output: DenseMatrix::zeros(1, 2 * k + shape.output_width()),
        }
    }

    /// Random model with `factors` predictive factors in each part: the NBPR
    /// head uses embeddings of size `factors / 2`, the tower ends at
    /// `factors`, so the joint last layer is `2 * factors` wide.
    pub fn random(num_users: usize, num_items: usize, factors: usize, layers: usize, seed: RngSeed) -> Result<Self> {
        if factors == 0 || factors % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "NeuPR needs an even number of predictive factors, got {factors}"
            )));
        }
        let k = factors / 2;
        let shape = TowerShape::for_factors(factors, layers)?;
        let d = shape.embedding_dim;
        Ok(NeuprParams {
            nbpr_user: gaussian_init(num_users, k, seed.derive(0))?,
            nbpr_item: gaussian_init(num_items, k, seed.derive(1))?,
            dncr_user: gaussian_init(num_users, d, seed.derive(2))?,
            dncr_item: gaussian_init(num_items, d, seed.derive(3))?,
            tower: Tower::random(shape.input_width(), &shape.hidden, seed.derive(4))?,
            output: gaussian_init(1, 2 * k + shape.output_width(), seed.derive(5))?,
        })
    }

    pub fn nbpr_dim(&self) -> usize {
        self.nbpr_user.cols()
    }

    pub fn shape(&self) -> TowerShape {
        TowerShape {
            embedding_dim: self.dncr_user.cols(),
            hidden: self.tower.hidden_widths(),
        }
    }

    fn forward(&self, user: UserId, i: ItemId, j: ItemId) -> (f64, Vec<Vec<f64>>) {
        let k = self.nbpr_dim();
        let w = self.output.as_slice();
        let nbpr = nbpr_logit(
            self.nbpr_user.row(user),
            self.nbpr_item.row(i),
            self.nbpr_item.row(j),
            &w[..k],
            &w[k..2 * k],
        );
        let x = concat_input(self.dncr_user.row(user), self.dncr_item.row(i), self.dncr_item.row(j));
        let acts = self.tower.forward(x);
        let deep = dot(&w[2 * k..], acts.last().expect("non-empty"));
        (nbpr + deep, acts)
    }

    pub fn logit(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        self.check_ids(user, i, j)?;
        Ok(self.forward(user, i, j).0)
    }
}

impl PairwiseModel for NeuprParams {
    fn num_users(&self) -> usize {
        self.nbpr_user.rows()
    }

    fn num_items(&self) -> usize {
        self.nbpr_item.rows()
    }

    fn predict(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        Ok(sigmoid(self.logit(user, i, j)?))
    }
}

impl Trainable for NeuprParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Neupr
    }

    fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut v = vec![&self.nbpr_user, &self.nbpr_item, &self.dncr_user, &self.dncr_item];
        v.extend(self.tower.layers.iter().flat_map(|l| [&l.weights, &l.bias]));
        v.push(&self.output);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = vec![&mut self.nbpr_user, &mut self.nbpr_item, &mut self.dncr_user, &mut self.dncr_item];
        v.extend(self.tower.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias]));
        v.push(&mut self.output);
        v
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["nbpr_user", "nbpr_item", "dncr_user", "dncr_item"].map(String::from).to_vec();
        for l in 0..self.tower.layers.len() {
            v.push(format!("dense{l}.weights"));
            v.push(format!("dense{l}.bias"));
        }
        v.push("output".to_string());
        v
    }

    fn accumulate_gradient(&self, t: &LabeledTriplet, scale: f64, grads: &mut Gradients) -> Result<f64> {
        self.check_ids(t.user, t.i, t.j)?;
        let (z, acts) = self.forward(t.user, t.i, t.j);
        let y_hat = sigmoid(z);
        let loss = super::bce_loss(y_hat, t.target());
        let dz = scale * (y_hat - t.target());

        let k = self.nbpr_dim();
        let w = self.output.as_slice();
        let (w1, w2, wd) = (&w[..k], &w[k..2 * k], &w[2 * k..]);
        let u = self.nbpr_user.row(t.user);
        let vi = self.nbpr_item.row(t.i);
        let vj = self.nbpr_item.row(t.j);
        let top = acts.last().expect("non-empty");

        let n = grads.0.len();
        let (emb, rest) = grads.0.split_at_mut(4);
        let (tower_grads, out_grad) = rest.split_at_mut(n - 5);
        let [gnu, gni, gdu, gdi] = emb else {
            unreachable!("four embedding tables")
        };

        let go = out_grad[0].as_mut_slice();
        for c in 0..k {
            gnu.row_mut(t.user)[c] += dz * (w1[c] * vi[c] - w2[c] * vj[c]);
            gni.row_mut(t.i)[c] += dz * w1[c] * u[c];
            gni.row_mut(t.j)[c] -= dz * w2[c] * u[c];
            go[c] += dz * u[c] * vi[c];
            go[k + c] -= dz * u[c] * vj[c];
        }
        for (g, a) in go[2 * k..].iter_mut().zip(top) {
            *g += dz * a;
        }
        let grad_top: Vec<f64> = wd.iter().map(|x| dz * x).collect();
        let grad_in = self.tower.backward(&acts, grad_top, tower_grads);
        scatter_input_grad(&grad_in, t, gdu, gdi);
        Ok(loss)
    }
}

/// Initialises NeuPR from trained NBPR and DNCR donors.
///
/// Embeddings and dense layers are copied; the output weight becomes
/// `[α·w_pos; α·w_neg; (1 − α)·w_D]`.
pub fn fuse_pretrained(nbpr: &NbprParams, dncr: &DncrParams, cfg: FusionConfig) -> Result<NeuprParams> {
    FusionConfig::new(cfg.alpha)?;
    if nbpr.num_users() != dncr.num_users() {
        return Err(Error::InvalidArgument(format!(
            "user embeddings: NBPR has {} users, DNCR has {}",
            nbpr.num_users(),
            dncr.num_users()
        )));
    }
    if nbpr.num_items() != dncr.num_items() {
        return Err(Error::InvalidArgument(format!(
            "item embeddings: NBPR has {} items, DNCR has {}",
            nbpr.num_items(),
            dncr.num_items()
        )));
    }
    let k = nbpr.embedding_dim();
    if nbpr.w_pos.len() != k || nbpr.w_neg.len() != k || nbpr.item_emb.cols() != k {
        return Err(Error::InvalidArgument(format!(
            "NBPR output weights: expected {k} + {k}, got {} + {}",
            nbpr.w_pos.len(),
            nbpr.w_neg.len()
        )));
    }
    let top = dncr.tower.output_width(3 * dncr.user_emb.cols());
    if dncr.output.len() != top {
        return Err(Error::InvalidArgument(format!(
            "DNCR output weight: expected {top} entries, got {}",
            dncr.output.len()
        )));
    }
    let a = cfg.alpha;
    let mut output = Vec::with_capacity(2 * k + top);
    output.extend(nbpr.w_pos.as_slice().iter().map(|w| a * w));
    output.extend(nbpr.w_neg.as_slice().iter().map(|w| a * w));
    output.extend(dncr.output.as_slice().iter().map(|w| (1.0 - a) * w));
    Ok(NeuprParams {
        nbpr_user: nbpr.user_emb.clone(),
        nbpr_item: nbpr.item_emb.clone(),
        dncr_user: dncr.user_emb.clone(),
        dncr_item: dncr.item_emb.clone(),
        tower: dncr.tower.clone(),
        output: DenseMatrix::row_vector(output),
    })
}
