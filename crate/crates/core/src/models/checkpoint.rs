//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "editfollower-checkpoint",
//!   "version": 1,
//!   "architecture": "lstm_idm",
//!   "config": { "arch": "lstm_idm", "conditioned": true, "hidden": 64, ... },
//!   "courtesy": "speed",
//!   "standardizer": { "mean": [5 values], "std": [5 values] },
//!   "split_seed": 7,
//!   "params": [ { "name": "enc0.w", "shape": [256, 69], "data": [...] }, ... ]
//! }
//! ```
//!
//! Parameter data is row-major. Floats are written in shortest round-trip
//! form, so loading a checkpoint restores the exact parameter bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::courtesy::CourtesyKind;
use crate::{Error, Result};

use super::{Architecture, FollowerModel, ModelConfig, ParamSet, Standardizer};

pub const FORMAT: &str = "editfollower-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub config: ModelConfig,
    pub courtesy: Option<CourtesyKind>,
    pub standardizer: Standardizer,
    /// Seed of the event-level split used during training.
    pub split_seed: u64,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &FollowerModel, split_seed: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            architecture: model.config.arch,
            config: model.config,
            courtesy: model.courtesy,
            standardizer: model.standardizer,
            split_seed,
            params: model
                .params
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.into(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<FollowerModel> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        if self.architecture != self.config.arch {
            return Err(Error::Checkpoint("architecture does not match config".into()));
        }
        let expected = super::init_params(&self.config, 0)?;
        let mut entries = Vec::with_capacity(self.params.len());
        for rec in self.params {
            let want = expected
                .get(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {:?}", rec.name)))?;
            if want.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    rec.name,
                    rec.shape,
                    want.shape()
                )));
            }
            entries.push((rec.name, Tensor::new(rec.shape, rec.data)?));
        }
        if entries.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                entries.len()
            )));
        }
        Ok(FollowerModel {
            config: self.config,
            standardizer: self.standardizer,
            params: ParamSet::new(entries),
            courtesy: self.courtesy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            hidden: 8,
            history: 4,
            horizon: 3,
            ..ModelConfig::default()
        };
        let model =
            FollowerModel::new(cfg, Standardizer::default(), Some(CourtesyKind::Speed), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        Checkpoint::from_model(&model, 3).save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.split_seed, 3);
        assert!(ck.into_model().unwrap() == model, "parameters changed on reload");
    }

    #[test]
    fn rejects_wrong_shapes() {
        let cfg = ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        };
        let model =
            FollowerModel::new(cfg, Standardizer::default(), Some(CourtesyKind::Speed), 1).unwrap();
        let mut ck = Checkpoint::from_model(&model, 0);
        ck.params[0].shape = vec![1, 1];
        ck.params[0].data = vec![0.0];
        assert!(matches!(ck.into_model(), Err(Error::Checkpoint(_))));
    }
}
