use serde::{Deserialize, Serialize};

use super::{Gradients, ModelKind, PairwiseModel, Trainable};
use crate::data::LabeledTriplet;
use crate::error::{Error, Result};
use crate::numerics::{dot, gaussian_init, sigmoid, softplus, DenseMatrix, RngSeed};
use crate::{ItemId, UserId};

/// Neural BPR: `ŷ_uij = σ(w1·(U_u ⊙ V_i) − w2·(U_u ⊙ V_j))`.
///
/// The last hidden layer is `[U_u ⊙ V_i; −U_u ⊙ V_j]`, so `2k` predictive
/// factors need embeddings of size `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbprParams {
    /// `m x k`
    pub user_emb: DenseMatrix,
    /// `n x k`
    pub item_emb: DenseMatrix,
    /// `1 x k`, weights on `U_u ⊙ V_i`
    pub w_pos: DenseMatrix,
    /// `1 x k`, weights on `U_u ⊙ V_j` (entering with a minus sign)
    pub w_neg: DenseMatrix,
}

impl NbprParams {
    pub fn zeros(num_users: usize, num_items: usize, k: usize) -> Self {
        NbprParams {
            user_emb: DenseMatrix::zeros(num_users, k),
            item_emb: DenseMatrix::zeros(num_items, k),
            w_pos: DenseMatrix::zeros(1, k),
            w_neg: DenseMatrix::zeros(1, k),
        }
    }

    /// Gaussian-initialised model with `factors` predictive factors
    /// (embedding size `factors / 2`).
    pub fn random(num_users: usize, num_items: usize, factors: usize, seed: RngSeed) -> Result<Self> {
        if factors == 0 || factors % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "NBPR needs an even number of predictive factors, got {factors}"
            )));
        }
        let k = factors / 2;
        Ok(NbprParams {
            user_emb: gaussian_init(num_users, k, seed.derive(0))?,
            item_emb: gaussian_init(num_items, k, seed.derive(1))?,
            w_pos: gaussian_init(1, k, seed.derive(2))?,
            w_neg: gaussian_init(1, k, seed.derive(3))?,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn factors(&self) -> usize {
        2 * self.embedding_dim()
    }

    /// Pre-activation `w1·(U_u ⊙ V_i) − w2·(U_u ⊙ V_j)`.
    pub fn logit(&self, user: UserId, i: ItemId, j: ItemId) -> Result<f64> {
        self.check_ids(user, i, j)?;
        Ok(nbpr_logit(
            self.user_emb.row(user),
            self.item_emb.row(i),
            self.item_emb.row(j),
            self.w_pos.as_slice(),
            self.w_neg.as_slice(),
        ))
    }
}

pub(crate) fn nbpr_logit(u: &[f64], vi: &[f64], vj: &[f64], w_pos: &[f64], w_neg: &[f64]) -> f64 {
    let mut z = 0.0;
    for c in 0..u.len() {
        z += u[c] * (w_pos[c] * vi[c] - w_neg[c] * vj[c]);
    }
    z
}

impl PairwiseModel for NbprParams {
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

impl Trainable for NbprParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Nbpr
    }

    fn tensors(&self) -> Vec<&DenseMatrix> {
        vec![&self.user_emb, &self.item_emb, &self.w_pos, &self.w_neg]
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.user_emb, &mut self.item_emb, &mut self.w_pos, &mut self.w_neg]
    }

    fn tensor_names(&self) -> Vec<String> {
        ["user_emb", "item_emb", "w_pos", "w_neg"].map(String::from).to_vec()
    }

    fn accumulate_gradient(&self, t: &LabeledTriplet, scale: f64, grads: &mut Gradients) -> Result<f64> {
        let z = self.logit(t.user, t.i, t.j)?;
        let y_hat = sigmoid(z);
        let loss = super::bce_loss(y_hat, t.target());
        let dz = scale * (y_hat - t.target());
        let k = self.embedding_dim();
        let u = self.user_emb.row(t.user);
        let vi = self.item_emb.row(t.i);
        let vj = self.item_emb.row(t.j);
        let w1 = self.w_pos.as_slice();
        let w2 = self.w_neg.as_slice();
        let [gu, gv, gw1, gw2] = &mut grads.0[..] else {
            unreachable!("NBPR has four tensors")
        };
        let gu = gu.row_mut(t.user);
        for c in 0..k {
            gu[c] += dz * (w1[c] * vi[c] - w2[c] * vj[c]);
        }
        // i and j may coincide in hand-built triplets, so accumulate per row
        for c in 0..k {
            let g = gv.row_mut(t.i);
            g[c] += dz * w1[c] * u[c];
        }
        for c in 0..k {
            let g = gv.row_mut(t.j);
            g[c] -= dz * w2[c] * u[c];
        }
        let gw1 = gw1.as_mut_slice();
        let gw2 = gw2.as_mut_slice();
        for c in 0..k {
            gw1[c] += dz * u[c] * vi[c];
            gw2[c] -= dz * u[c] * vj[c];
        }
        Ok(loss)
    }
}

/// BPR-MF recovered as an NCR without hidden layers: all-ones output weight
/// and `a_out(x) = −ln(1 + e^{−x})` on `x̂ = U_u·V_i − U_u·V_j`.
///
/// The result equals `ln σ(x̂)`, the negated per-triplet BPR-OPT term without
/// regularisation. `user_emb` is `m x k` and `item_emb` is `n x k`.
pub fn degenerate_bpr_forward(
    user_emb: &DenseMatrix,
    item_emb: &DenseMatrix,
    user: UserId,
    i: ItemId,
    j: ItemId,
) -> Result<f64> {
    let u = user_emb.checked_row("user", user)?;
    let vi = item_emb.checked_row("item", i)?;
    let vj = item_emb.checked_row("item", j)?;
    if u.len() != vi.len() {
        return Err(Error::Shape {
            op: "degenerate_bpr_forward",
            left: user_emb.shape(),
            right: item_emb.shape(),
        });
    }
    let x = dot(u, vi) - dot(u, vj);
    Ok(-softplus(-x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::max_gradient_error;
    use crate::models::{backward, Gradients};
    use crate::numerics::{gaussian_init_with_std, sigmoid};
    use approx::assert_abs_diff_eq;

    fn hand_model() -> NbprParams {
        // k = 2, one user, two items
        NbprParams {
            user_emb: DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            item_emb: DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap(),
            w_pos: DenseMatrix::row_vector(vec![1.0, 1.0]),
            w_neg: DenseMatrix::row_vector(vec![1.0, 1.0]),
        }
    }

    fn random_model(seed: u64, m: usize, n: usize, k: usize) -> NbprParams {
        let s = RngSeed(seed);
        NbprParams {
            user_emb: gaussian_init_with_std(m, k, 0.7, s.derive(0)).unwrap(),
            item_emb: gaussian_init_with_std(n, k, 0.7, s.derive(1)).unwrap(),
            w_pos: gaussian_init_with_std(1, k, 0.7, s.derive(2)).unwrap(),
            w_neg: gaussian_init_with_std(1, k, 0.7, s.derive(3)).unwrap(),
        }
    }

    #[test]
    fn hand_computed_forward() {
        assert_abs_diff_eq!(hand_model().predict(0, 0, 1).unwrap(), 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(sigmoid(1.0), 0.731059, epsilon = 1e-6);
    }

    #[test]
    fn equal_items_and_weights_give_half() {
        let mut m = random_model(1, 3, 4, 5);
        m.w_neg = m.w_pos.clone();
        let row = m.item_emb.row(1).to_vec();
        m.item_emb.row_mut(2).copy_from_slice(&row);
        assert_eq!(m.predict(0, 1, 2).unwrap(), 0.5);
    }

    #[test]
    fn tied_weights_are_antisymmetric() {
        for seed in 0..20 {
            let mut m = random_model(seed, 4, 6, 3);
            m.w_neg = m.w_pos.clone();
            for u in 0..4 {
                let a = m.predict(u, 1, 4).unwrap();
                let b = m.predict(u, 4, 1).unwrap();
                assert!((a + b - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_ids() {
        let m = hand_model();
        assert!(matches!(m.predict(1, 0, 1), Err(Error::Index { kind: "user", .. })));
        assert!(matches!(m.predict(0, 0, 2), Err(Error::Index { kind: "item", .. })));
    }

    #[test]
    fn odd_factors_rejected() {
        assert!(NbprParams::random(2, 2, 7, RngSeed(1)).is_err());
        let m = NbprParams::random(2, 3, 8, RngSeed(1)).unwrap();
        assert_eq!(m.embedding_dim(), 4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngSeed(99).rng();
        for draw in 0..100 {
            let m = random_model(draw, 3, 5, 4);
            let u = rng.below(3);
            let i = rng.below(5);
            let j = (i + 1 + rng.below(4)) % 5;
            let batch = [LabeledTriplet { user: u, i, j, label: (draw % 2) as u8 }];
            let err = max_gradient_error(&m, &batch);
            assert!(err < 1e-4, "draw {draw}: {err}");
        }
    }

    #[test]
    fn untouched_rows_have_zero_gradient() {
        let m = random_model(3, 4, 6, 3);
        let batch = [LabeledTriplet { user: 1, i: 2, j: 4, label: 1 }];
        let (g, _) = backward(&m, &batch).unwrap();
        for u in [0, 2, 3] {
            assert!(g.0[0].row(u).iter().all(|&v| v == 0.0));
        }
        for i in [0, 1, 3, 5] {
            assert!(g.0[1].row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicate_triplet_doubles_contribution() {
        let m = random_model(4, 3, 5, 2);
        let a = LabeledTriplet { user: 0, i: 1, j: 3, label: 1 };
        let b = LabeledTriplet { user: 2, i: 4, j: 0, label: 0 };
        let mut once = Gradients::zeros_like(&m);
        m.accumulate_gradient(&a, 1.0, &mut once).unwrap();
        let mut single_b = Gradients::zeros_like(&m);
        m.accumulate_gradient(&b, 1.0, &mut single_b).unwrap();
        // mean over [a, a, b] = (2 ga + gb) / 3
        let (g, _) = backward(&m, &[a, a, b]).unwrap();
        for t in 0..4 {
            for ((x, ga), gb) in g.0[t].as_slice().iter().zip(once.0[t].as_slice()).zip(single_b.0[t].as_slice()) {
                assert!((x - (2.0 * ga + gb) / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_forward_examples() {
        let u = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let v = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(degenerate_bpr_forward(&u, &v, 0, 0, 1).unwrap(), -1.313262, epsilon = 1e-6);
        assert_abs_diff_eq!(
            degenerate_bpr_forward(&u, &v, 0, 0, 2).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert!(degenerate_bpr_forward(&u, &v, 1, 0, 1).is_err());
    }
}
