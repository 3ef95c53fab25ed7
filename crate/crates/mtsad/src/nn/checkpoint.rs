//! Self-describing checkpoint container.
//!
//! Layout: an 8-byte magic, a format-version byte, a little-endian `u64`
//! header length, a JSON header (network config, shape signature, loss
//! history, and the parameter directory with names and shapes), then the
//! raw little-endian `f64` parameter payload in directory order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use super::model::{NetworkConfig, Networks, ShapeSignature};
use super::train::{EpochLoss, TrainedModel};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MTSADCK\0";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    signature: ShapeSignature,
    history: Vec<EpochLoss>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.networks.config.clone(),
            signature: self.networks.signature,
            history: self.history.clone(),
            params: self
                .networks
                .params
                .iter()
                .map(|(name, value)| ParamEntry {
                    name: name.to_string(),
                    shape: value.shape().to_vec(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&[VERSION])?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        for (_, value) in self.networks.params.iter() {
            for v in value.iter() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let mut version = [0u8; 1];
        f.read_exact(&mut version)?;
        if version[0] != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                version[0]
            )));
        }
        let mut len_bytes = [0u8; 8];
        f.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        f.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        // Rebuild the architecture, then overwrite every parameter from the
        // payload, validating the directory as we go.
        let mut networks = Networks::init(&header.config, header.signature, 0)?;
        if networks.params.len() != header.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter tensors, architecture needs {}",
                header.params.len(),
                networks.params.len()
            )));
        }
        let ids: Vec<_> = networks.params.ids().collect();
        for (&id, entry) in ids.iter().zip(&header.params) {
            if networks.params.name(id) != entry.name {
                return Err(Error::Format(format!(
                    "checkpoint parameter '{}' does not match architecture '{}'",
                    entry.name,
                    networks.params.name(id)
                )));
            }
            let expected = networks.params.value(id).shape().to_vec();
            if expected != entry.shape {
                return Err(Error::Format(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    entry.name, entry.shape, expected
                )));
            }
            let mut data = vec![0.0f64; entry.shape.iter().product()];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                f.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            *networks.params.value_mut(id) =
                ndarray::ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
                    .map_err(|e| Error::Format(format!("bad parameter payload: {e}")))?;
        }
        Ok(TrainedModel {
            networks,
            history: header.history,
            wall_secs: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{build_samples, compute_mcm, McmConfig, SeasonalConfig};
    use crate::nn::train::train;
    use crate::series::HolidayCalendar;
    use crate::synth::{gen_seasonal_mts, SeasonalityMode};

    #[test]
    fn checkpoint_roundtrip_preserves_model_and_outputs() {
        let (mts, _) = gen_seasonal_mts(4, 400, SeasonalityMode::Random, 1).unwrap();
        let mcm = compute_mcm(&mts, &McmConfig::default()).unwrap();
        let samples = build_samples(
            &mcm,
            2,
            &SeasonalConfig::default(),
            &HolidayCalendar::none(400),
        )
        .unwrap();
        let config = NetworkConfig {
            batch_size: 8,
            epochs: 1,
            critic_iters: 2,
            ..NetworkConfig::miniature()
        };
        let model = train(&samples, &config, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();

        assert_eq!(loaded.history, model.history);
        assert_eq!(loaded.networks.config, model.networks.config);
        assert_eq!(loaded.networks.signature, model.networks.signature);
        let a = model.reconstruct(&samples[..3]).unwrap();
        let b = loaded.reconstruct(&samples[..3]).unwrap();
        assert_eq!(a, b);

        // Same model saved twice yields identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        model.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(TrainedModel::load(&path).is_err());
    }
}
