//! Binary model container shared by every model kind.
//!
//! Layout: the magic `NCR1`, a little-endian `u32` header length, the JSON
//! header, then every parameter tensor as little-endian `f64` in row-major
//! order, in the order listed by the header. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DncrParams, ModelKind, NbprParams, NeuprParams, PairwiseModel, Trainable, TowerShape};
use crate::baselines::{BprParams, PopularityTable};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::ranking::{top_k, RankedList, Recommender};
use crate::{ItemId, UserId};

const MAGIC: &[u8; 4] = b"NCR1";

/// Any persisted model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    ItemPop(PopularityTable),
    Bpr(BprParams),
    Nbpr(NbprParams),
    Dncr(DncrParams),
    Neupr(NeuprParams),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub num_users: usize,
    pub num_items: usize,
    /// NBPR embedding size (NBPR and NeuPR).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbpr_dim: Option<usize>,
    /// DNCR tower (DNCR and NeuPR).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tower: Option<TowerShape>,
    /// BPR hyperparameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<f64>,
    /// Fingerprint of the split the model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Free-form training metadata, e.g. the effective config.
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::ItemPop(_) => ModelKind::ItemPop,
            Model::Bpr(_) => ModelKind::Bpr,
            Model::Nbpr(_) => ModelKind::Nbpr,
            Model::Dncr(_) => ModelKind::Dncr,
            Model::Neupr(_) => ModelKind::Neupr,
        }
    }

    pub fn num_users(&self) -> Option<usize> {
        match self {
            Model::ItemPop(_) => None,
            Model::Bpr(p) => Some(p.num_users()),
            Model::Nbpr(p) => Some(p.num_users()),
            Model::Dncr(p) => Some(p.num_users()),
            Model::Neupr(p) => Some(p.num_users()),
        }
    }

    pub fn num_items(&self) -> usize {
        match self {
            Model::ItemPop(p) => p.num_items(),
            Model::Bpr(p) => p.num_items(),
            Model::Nbpr(p) => p.num_items(),
            Model::Dncr(p) => p.num_items(),
            Model::Neupr(p) => p.num_items(),
        }
    }

    /// Header describing this model, with no dataset or metadata attached.
    pub fn header(&self) -> ModelHeader {
        let (names, tensors) = self.named_tensors();
        let mut header = ModelHeader {
            kind: self.kind(),
            num_users: self.num_users().unwrap_or(0),
            num_items: self.num_items(),
            nbpr_dim: None,
            tower: None,
            learning_rate: None,
            regularization: None,
            dataset: None,
            metadata: serde_json::Value::Null,
            tensors: names
                .into_iter()
                .zip(&tensors)
                .map(|(name, t)| TensorInfo {
                    name,
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        match self {
            Model::ItemPop(_) => {}
            Model::Bpr(p) => {
                header.learning_rate = Some(p.learning_rate);
                header.regularization = Some(p.regularization);
            }
            Model::Nbpr(p) => header.nbpr_dim = Some(p.embedding_dim()),
            Model::Dncr(p) => header.tower = Some(p.shape()),
            Model::Neupr(p) => {
                header.nbpr_dim = Some(p.nbpr_dim());
                header.tower = Some(p.shape());
            }
        }
        header
    }

    fn named_tensors(&self) -> (Vec<String>, Vec<DenseMatrix>) {
        fn of<M: Trainable>(m: &M) -> (Vec<String>, Vec<DenseMatrix>) {
            (m.tensor_names(), m.tensors().into_iter().cloned().collect())
        }
        match self {
            Model::ItemPop(p) => (
                vec!["counts".into()],
                vec![DenseMatrix::row_vector(p.counts.iter().map(|&c| c as f64).collect())],
            ),
            Model::Bpr(p) => (
                vec!["user_emb".into(), "item_emb".into()],
                vec![p.user_emb.clone(), p.item_emb.clone()],
            ),
            Model::Nbpr(p) => of(p),
            Model::Dncr(p) => of(p),
            Model::Neupr(p) => of(p),
        }
    }

    /// Zero-valued model with the architecture described by `header`.
    fn template(h: &ModelHeader) -> Result<Model> {
        let missing = |what: &str| Error::ModelFormat(format!("{} header lacks {what}", h.kind));
        let (m, n) = (h.num_users, h.num_items);
        Ok(match h.kind {
            ModelKind::ItemPop => Model::ItemPop(PopularityTable { counts: vec![0; n] }),
            ModelKind::Bpr => {
                let k = h.tensors.first().map(|t| t.cols).ok_or_else(|| missing("tensors"))?;
                Model::Bpr(BprParams {
                    user_emb: DenseMatrix::zeros(m, k),
                    item_emb: DenseMatrix::zeros(n, k),
                    learning_rate: h.learning_rate.ok_or_else(|| missing("learning_rate"))?,
                    regularization: h.regularization.ok_or_else(|| missing("regularization"))?,
                })
            }
            ModelKind::Nbpr => Model::Nbpr(NbprParams::zeros(m, n, h.nbpr_dim.ok_or_else(|| missing("nbpr_dim"))?)),
            ModelKind::Dncr => Model::Dncr(DncrParams::zeros(m, n, h.tower.as_ref().ok_or_else(|| missing("tower"))?)),
            ModelKind::Neupr => Model::Neupr(NeuprParams::zeros(
                m,
                n,
                h.nbpr_dim.ok_or_else(|| missing("nbpr_dim"))?,
                h.tower.as_ref().ok_or_else(|| missing("tower"))?,
            )),
        })
    }

    fn fill(&mut self, tensors: Vec<DenseMatrix>) -> Result<()> {
        fn into<M: Trainable>(m: &mut M, tensors: Vec<DenseMatrix>) {
            for (slot, t) in m.tensors_mut().into_iter().zip(tensors) {
                *slot = t;
            }
        }
        match self {
            Model::ItemPop(p) => {
                for (c, &v) in p.counts.iter_mut().zip(tensors[0].as_slice()) {
                    if !(v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53)) {
                        return Err(Error::ModelFormat(format!("invalid popularity count {v}")));
                    }
                    *c = v as usize;
                }
            }
            Model::Bpr(p) => {
                let mut it = tensors.into_iter();
                p.user_emb = it.next().expect("checked count");
                p.item_emb = it.next().expect("checked count");
            }
            Model::Nbpr(p) => into(p, tensors),
            Model::Dncr(p) => into(p, tensors),
            Model::Neupr(p) => into(p, tensors),
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, header: &ModelHeader, mut w: W) -> Result<()> {
        let (_, tensors) = self.named_tensors();
        let mut header = header.clone();
        header.tensors = self.header().tensors;
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::ModelFormat("header too large".into()))?;
        let io = |e| Error::io("<model stream>", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for t in &tensors {
            for v in t.as_slice() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<(ModelHeader, Model)> {
        let io = |e| Error::io("<model stream>", e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::ModelFormat("truncated model file".into()))?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("not a model file (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| Error::ModelFormat("truncated header length".into()))?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(|_| Error::ModelFormat("truncated header".into()))?;
        let header: ModelHeader = serde_json::from_slice(&json)?;
        let mut model = Model::template(&header)?;
        let expected = model.header().tensors;
        if expected.len() != header.tensors.len()
            || expected.iter().zip(&header.tensors).any(|(a, b)| (a.rows, a.cols) != (b.rows, b.cols))
        {
            return Err(Error::ModelFormat(format!(
                "tensor list does not match a {} architecture",
                header.kind
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        let mut buf = [0u8; 8];
        for info in &expected {
            let mut values = Vec::with_capacity(info.rows * info.cols);
            for _ in 0..info.rows * info.cols {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::ModelFormat(format!("truncated tensor {}", info.name)))?;
                values.push(f64::from_le_bytes(buf));
            }
            tensors.push(DenseMatrix::from_vec(info.rows, info.cols, values)?);
        }
        if r.read(&mut buf).map_err(io)? != 0 {
            return Err(Error::ModelFormat("trailing bytes after tensors".into()));
        }
        model.fill(tensors)?;
        Ok((header, model))
    }

    pub fn save(&self, header: &ModelHeader, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(header, BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<(ModelHeader, Model)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Model::read_from(BufReader::new(file))
    }
}

impl Recommender for Model {
    fn recommend(&self, user: UserId, candidates: &[ItemId], k: usize) -> Result<RankedList> {
        match self {
            Model::ItemPop(p) => p.recommend(user, candidates, k),
            Model::Bpr(p) => p.recommend(user, candidates, k),
            Model::Nbpr(p) => top_k(p, user, candidates, k),
            Model::Dncr(p) => top_k(p, user, candidates, k),
            Model::Neupr(p) => top_k(p, user, candidates, k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BprConfig;
    use crate::numerics::RngSeed;
    use proptest::prelude::*;

    fn round_trip(model: &Model) -> (ModelHeader, Model) {
        let mut header = model.header();
        header.dataset = Some("abc123".into());
        header.metadata = serde_json::json!({"seed": 7});
        let mut bytes = Vec::new();
        model.write_to(&header, &mut bytes).unwrap();
        let (h, m) = Model::read_from(&bytes[..]).unwrap();
        assert_eq!(h, header);
        (h, m)
    }

    fn bits(m: &Model) -> Vec<u64> {
        m.named_tensors().1.iter().flat_map(|t| t.as_slice().iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn every_kind_round_trips() {
        let models = [
            Model::ItemPop(PopularityTable { counts: vec![3, 0, 9] }),
            Model::Bpr(BprParams::random(4, 6, 3, &BprConfig::default()).unwrap()),
            Model::Nbpr(NbprParams::random(4, 6, 8, RngSeed(1)).unwrap()),
            Model::Dncr(DncrParams::random(4, 6, &TowerShape::for_factors(8, 4).unwrap(), RngSeed(2)).unwrap()),
            Model::Dncr(DncrParams::random(4, 6, &TowerShape::for_factors(2, 1).unwrap(), RngSeed(2)).unwrap()),
            Model::Neupr(NeuprParams::random(4, 6, 8, 3, RngSeed(3)).unwrap()),
        ];
        for m in &models {
            let (_, back) = round_trip(m);
            assert_eq!(&back, m);
            assert_eq!(bits(&back), bits(m));
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = Model::Nbpr(NbprParams::random(2, 3, 4, RngSeed(1)).unwrap());
        let mut bytes = Vec::new();
        m.write_to(&m.header(), &mut bytes).unwrap();
        assert!(Model::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Model::read_from(&extra[..]).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Model::read_from(&magic[..]), Err(Error::ModelFormat(_))));
    }

    proptest! {
        #[test]
        fn special_values_survive(values in proptest::collection::vec(any::<f64>(), 12)) {
            let mut p = NbprParams::zeros(2, 2, 2);
            let flat: Vec<&mut f64> = p.tensors_mut().into_iter().flat_map(|t| t.as_mut_slice().iter_mut()).collect();
            for (slot, v) in flat.into_iter().zip(&values) {
                *slot = *v;
            }
            let m = Model::Nbpr(p);
            let mut bytes = Vec::new();
            m.write_to(&m.header(), &mut bytes).unwrap();
            let (_, back) = Model::read_from(&bytes[..]).unwrap();
            prop_assert_eq!(bits(&back), bits(&m));
        }
    }
}
