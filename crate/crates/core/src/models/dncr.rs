use serde::{Deserialize, Serialize};

use super::{Gradients, ModelKind, PairwiseModel, Trainable};
use crate::data::LabeledTriplet;
use crate::error::{Error, Result};
use crate::numerics::{affine_into, dot, gaussian_init, sigmoid, DenseMatrix, RngSeed};
use crate::{ItemId, UserId};

/// Embedding size and dense widths of a DNCR tower.
///
/// The concatenation `[U_u; V_i; −V_j]` counts as the first hidden layer.
/// With `H >= 2` hidden layers and `p` predictive factors the embedding size
/// is `p * 2^(H-2)` and the dense widths are `p * 2^(H-2), ..., 2p, p`; for
/// `p = 8, H = 4` this is `96 -> 32 -> 16 -> 8` over embeddings of size 32.
/// With `H = 1` there is no dense layer and the output weight reads the
/// `3p`-wide concatenation of size-`p` embeddings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerShape {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
}

impl TowerShape {
    pub fn for_factors(factors: usize, layers: usize) -> Result<Self> {
        if factors == 0 {
            return Err(Error::InvalidArgument("predictive factors must be >= 1".into()));
        }
        match layers {
            0 => Err(Error::InvalidArgument("DNCR needs at least one hidden layer".into())),
            1 => Ok(TowerShape {
                embedding_dim: factors,
                hidden: Vec::new(),
            }),
            h if h <= 16 => {
                let top = factors << (h - 2);
                Ok(TowerShape {
                    embedding_dim: top,
                    hidden: (0..h - 1).map(|l| top >> l).collect(),
                })
            }
            h => Err(Error::InvalidArgument(format!("{h} hidden layers is too deep"))),
        }
    }

    pub fn input_width(&self) -> usize {
        3 * self.embedding_dim
    }

    /// Width of the last hidden layer (the predictive factors).
    pub fn output_width(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_width())
    }

    /// Hidden-layer count including the concatenation layer.
    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Layer widths from the concatenation upward, e.g. `[96, 32, 16, 8]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width()).chain(self.hidden.iter().copied()).collect()
    }
}

/// `tanh(W x + b)`; `weights` is `out x in`, `bias` is `1 x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: DenseMatrix,
    pub bias: DenseMatrix,
}

/// A stack of tanh dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub layers: Vec<DenseLayer>,
}

impl Tower {
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for &out in hidden {
            layers.push(DenseLayer {
                weights: DenseMatrix::zeros(out, width),
                bias: DenseMatrix::zeros(1, out),
            });
            width = out;
        }
        Tower { layers }
    }

    /// Gaussian weights, zero biases.
    pub fn random(input: usize, hidden: &[usize], seed: RngSeed) -> Result<Self> {
        let mut tower = Tower::zeros(input, hidden);
        for (l, layer) in tower.layers.iter_mut().enumerate() {
            let (r, c) = layer.weights.shape();
            layer.weights = gaussian_init(r, c, seed.derive(l as u64))?;
        }
        Ok(tower)
    }

    pub fn output_width(&self, input: usize) -> usize {
        self.layers.last().map_or(input, |l| l.weights.rows())
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weights.rows()).collect()
    }

    /// Activations of every layer, input first.
    pub fn forward(&self, input: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for layer in &self.layers {
            let x = acts.last().expect("input present");
            let mut out = vec![0.0; layer.weights.rows()];
            affine_into(&layer.weights, x, layer.bias.as_slice(), &mut out);
            out.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(out);
        }
        acts
    }

    /// Backpropagates `grad_top` (loss gradient w.r.t. the last activation)
    /// into `grads` (two tensors per layer, weights then bias) and returns the
    /// gradient w.r.t. the input.
    pub fn backward(&self, acts: &[Vec<f64>], grad_top: Vec<f64>, grads: &mut [DenseMatrix]) -> Vec<f64> {
        let mut delta = grad_top;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &acts[l + 1];
            let input = &acts[l];
            for (d, a) in delta.iter_mut().zip(out) {
                *d *= 1.0 - a * a;
            }
            let (gw, rest) = grads[2 * l..].split_first_mut().expect("weight grad");
            let gb = &mut rest[0];
            let mut next = vec![0.0; input.len()];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let wrow = layer.weights.row(r);
                let grow = gw.row_mut(r);
                for c in 0..input.len() {
                    grow[c] += d * input[c];
                    next[c] += d * wrow[c];
                }
                gb.as_mut_slice()[r] += d;
            }
            delta = next;
        }
        delta
    }

    fn tensors(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseMatrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("{prefix}dense{l}.weights"), format!("{prefix}dense{l}.bias")])
            .collect()
    }
}

/// `[U_u; V_i; −V_j]`
pub(crate) fn concat_input(u: &[f64], vi: &[f64], vj: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * u.len());
    x.extend_from_slice(u);
    x.extend_from_slice(vi);
    x.extend(vj.iter().map(|v| -v));
    x
}

/// Scatters the gradient w.r.t. `[U_u; V_i; −V_j]` into embedding gradients.
pub(crate) fn scatter_input_grad(
    grad: &[f64],
    t: &LabeledTriplet,
    user_grad: &mut DenseMatrix,
    item_grad: &mut DenseMatrix,
) {
    let d = grad.len() / 3;
    for (g, x) in user_grad.row_mut(t.user).iter_mut().zip(&grad[..d]) {
        *g += x;
    }
    for (g, x) in item_grad.row_mut(t.i).iter_mut().zip(&grad[d..2 * d]) {
        *g += x;
    }
    for (g, x) in item_grad.row_mut(t.j).iter_mut().zip(&grad[2 * d..]) {
        *g -= x;
    }
}

/// Deep neural collaborative ranking: a tanh tower over `[U_u; V_i; −V_j]`
/// followed by `σ(w · top)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DncrParams {
    /// `m x d`
    pub user_emb: DenseMatrix,
    /// `n x d`
    pub item_emb: DenseMatrix,
    pub tower: Tower,
    /// `1 x top`
    pub output: DenseMatrix,
}

impl DncrParams {
    pub fn zeros(num_users: usize, num_items: usize, shape: &TowerShape) -> Self {
        let d = shape.embedding_dim;
        DncrParams {
            user_emb: DenseMatrix::zeros(num_users, d),
            item_emb: DenseMatrix::zeros(num_items, d),
            tower: Tower::zeros(shape.input_width(), &shape.hidden),
            output: DenseMatrix::zeros(1, shape.output_width()),
        }
    }

    pub fn random(num_users: usize, num_items: usize, shape: &TowerShape, seed: RngSeed) -> Result<Self> {
        let d = shape.embedding_dim;
        Ok(DncrParams {
            user_emb: gaussian_init(num_users, d, seed.derive(0))?,
            item_emb: gaussian_init(num_items, d, seed.derive(1))?,
            tower: Tower::random(shape.input_width(), &shape.hidden, seed.derive(2))?,
            output: gaussian_init(1, shape.output_width(), seed.derive(3))?,
        })
    }

    pub fn shape(&self) -> TowerShape {
        TowerShape {
            embedding_dim: self.user_emb.cols(),
            hidden: self.tower.hidden_widths(),
        }
    }

    /// Pre-sigmoid score `w · f_N(x_{N-1})`.
    pub fn logit(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        self.check_ids(user, i, j)?;
        let x = concat_input(self.user_emb.row(user), self.item_emb.row(i), self.item_emb.row(j));
        let acts = self.tower.forward(x);
        Ok(dot(self.output.as_slice(), acts.last().expect("non-empty")))
    }
}

impl PairwiseModel for DncrParams {
    fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    fn predict(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        Ok(sigmoid(self.logit(user, i, j)?))
    }
}

impl Trainable for DncrParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Dncr
    }

    fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut v = vec![&self.user_emb, &self.item_emb];
        v.extend(self.tower.tensors());
        v.push(&self.output);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = vec![&mut self.user_emb, &mut self.item_emb];
        v.extend(self.tower.tensors_mut());
        v.push(&mut self.output);
        v
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut v = vec!["user_emb".to_string(), "item_emb".to_string()];
        v.extend(self.tower.tensor_names(""));
        v.push("output".to_string());
        v
    }

    fn accumulate_gradient(&self, t: &LabeledTriplet, scale: f64, grads: &mut Gradients) -> Result<f64> {
        self.check_ids(t.user, t.i, t.j)?;
        let x = concat_input(self.user_emb.row(t.user), self.item_emb.row(t.i), self.item_emb.row(t.j));
        let acts = self.tower.forward(x);
        let top = acts.last().expect("non-empty");
        let w = self.output.as_slice();
        let y_hat = sigmoid(dot(w, top));
        let loss = super::bce_loss(y_hat, t.target());
        let dz = scale * (y_hat - t.target());

        let n = grads.0.len();
        let (emb, rest) = grads.0.split_at_mut(2);
        let (tower_grads, out_grad) = rest.split_at_mut(n - 3);
        for (g, a) in out_grad[0].as_mut_slice().iter_mut().zip(top) {
            *g += dz * a;
        }
        let grad_top: Vec<f64> = w.iter().map(|wc| dz * wc).collect();
        let grad_in = self.tower.backward(&acts, grad_top, tower_grads);
        let (ug, ig) = emb.split_at_mut(1);
        scatter_input_grad(&grad_in, t, &mut ug[0], &mut ig[0]);
        Ok(loss)
    }
}
