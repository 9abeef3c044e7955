//! Pairwise neural collaborative ranking for implicit feedback.
//!
//! The crate trains three pairwise rankers that score a `(user, item, item)`
//! triplet with a neural network:
//!
//! - **NBPR**: a learned, weighted generalisation of BPR-MF built from the
//!   element-wise product of user and item embeddings.
//! - **DNCR**: a tanh MLP tower over the concatenation `[U_u; V_i; -V_j]`.
//! - **NeuPR**: the two heads above with separate embeddings, joined at the
//!   output layer, optionally initialised from pre-trained donors.
//!
//! Training turns pairwise ranking into binary classification over labelled
//! triplets and minimises binary cross-entropy with Adam. Recommendation uses
//! a tournament that repeatedly scans the candidates with the pairwise
//! predictive rule. Evaluation follows the leave-one-out protocol with 100
//! sampled negatives and reports HR@K and NDCG@K.
//!
//! ItemPop and BPR-MF are provided as reference rankers sharing the same
//! evaluation harness.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod ranking;
pub mod trainer;

pub use error::{Error, Result};

/// Dense internal user index in `0..num_users`.
pub type UserId = usize;
/// Dense internal item index in `0..num_items`.
pub type ItemId = usize;
