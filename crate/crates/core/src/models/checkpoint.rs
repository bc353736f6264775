//! `model.meta.json` (kind, config, parameter table) + `model.f32le`
//! (all parameters and buffers in declaration order).

use std::path::Path;

use sacm_autodiff::ParamStore;
use serde::{Deserialize, Serialize};

use super::{EegNet, EegNetConfig, SeegEncoder, SeegEncoderConfig};
use crate::datamodel::{read_f32le, read_json, write_f32le, write_json};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: Vec<ParamMeta>,
}

fn table(store: &ParamStore<f32>) -> Vec<ParamMeta> {
    store
        .entries()
        .iter()
        .map(|e| ParamMeta {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            trainable: e.trainable,
        })
        .collect()
}

pub fn save_checkpoint<C: Serialize>(
    dir: &Path,
    kind: &str,
    config: &C,
    store: &ParamStore<f32>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let config = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    write_json(
        &dir.join("model.meta.json"),
        &CheckpointMeta {
            kind: kind.into(),
            config,
            params: table(store),
        },
    )?;
    write_f32le(&dir.join("model.f32le"), &store.to_flat())
}

pub fn read_checkpoint(dir: &Path, kind: &str) -> Result<(CheckpointMeta, Vec<f32>)> {
    let meta: CheckpointMeta = read_json(&dir.join("model.meta.json"))?;
    if meta.kind != kind {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model, expected {kind}",
            meta.kind
        )));
    }
    Ok((meta, read_f32le(&dir.join("model.f32le"))?))
}

fn restore(store: &mut ParamStore<f32>, meta: &CheckpointMeta, flat: &[f32]) -> Result<()> {
    if table(store) != meta.params {
        return Err(Error::Config(
            "checkpoint parameter table does not match the configured model".into(),
        ));
    }
    store.load_flat(flat)?;
    Ok(())
}

fn config_of<C: for<'de> Deserialize<'de>>(meta: &CheckpointMeta) -> Result<C> {
    serde_json::from_value(meta.config.clone())
        .map_err(|e| Error::Config(format!("checkpoint config: {e}")))
}

impl SeegEncoder<f32> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, "seeg_encoder", &self.cfg, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, flat) = read_checkpoint(dir, "seeg_encoder")?;
        let cfg: SeegEncoderConfig = config_of(&meta)?;
        let mut m = SeegEncoder::new(cfg, 0)?;
        restore(&mut m.store, &meta, &flat)?;
        Ok(m)
    }
}

impl EegNet<f32> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, "eegnet", &self.cfg, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, flat) = read_checkpoint(dir, "eegnet")?;
        let cfg: EegNetConfig = config_of(&meta)?;
        let mut m = EegNet::new(cfg, 0)?;
        restore(&mut m.store, &meta, &flat)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SeegEncoderConfig {
            hidden: 6,
            ..SeegEncoderConfig::new(3, 4)
        };
        let enc = SeegEncoder::<f32>::new(cfg, 9).unwrap();
        enc.save(dir.path()).unwrap();
        let back = SeegEncoder::load(dir.path()).unwrap();
        assert_eq!(back.cfg, enc.cfg);
        assert_eq!(back.store.to_flat(), enc.store.to_flat());
        assert!(EegNet::load(dir.path()).is_err());
    }

    #[test]
    fn eegnet_round_trips_and_detects_tampered_tables() {
        let dir = tempfile::tempdir().unwrap();
        let net = EegNet::<f32>::new(EegNetConfig::new(4, 64, 64.0), 2).unwrap();
        net.save(dir.path()).unwrap();
        assert_eq!(
            EegNet::load(dir.path()).unwrap().store.to_flat(),
            net.store.to_flat()
        );

        let path = dir.path().join("model.meta.json");
        let mut meta: CheckpointMeta = read_json(&path).unwrap();
        meta.params[0].name = "renamed".into();
        write_json(&path, &meta).unwrap();
        assert!(matches!(EegNet::load(dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = EegNet::<f32>::new(EegNetConfig::new(4, 64, 64.0), 2).unwrap();
        net.save(dir.path()).unwrap();
        let flat = net.store.to_flat();
        write_f32le(&dir.path().join("model.f32le"), &flat[..flat.len() - 1]).unwrap();
        assert!(EegNet::load(dir.path()).is_err());
    }
}
