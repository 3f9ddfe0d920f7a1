//! Checkpoint directory format:
//!
//! - `config.json`   — architecture, stage, and training hyperparameters
//! - `params.bin`    — little-endian f32, slots concatenated in name-sorted order
//! - `manifest.json` — slot name -> element offset and shape
//! - `opt.bin`       — Adam first and second moments (same layout as params, twice)
//! - `state.json`    — step counter and RNG position (training resume)
//! - `loss.csv`      — `step,loss` per optimization step

use super::model::{DiTConfig, ModelBundle};
use super::params::ParamStore;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::inp_tpu::Stage;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    model: DiTConfig,
    stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    total_elements: usize,
    slots: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TrainState {
    pub step: usize,
    pub rng_seed_hex: String,
    pub rng_word_pos: String,
}

pub fn save_model(dir: &Path, model: &ModelBundle, train: Option<&TrainConfig>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfg = ConfigFile {
        model: model.config.clone(),
        stage: model.stage,
        train: train.cloned(),
    };
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;

    let mut manifest = Manifest { total_elements: 0, slots: Vec::new() };
    for (name, arr) in model.params.iter() {
        manifest.slots.push(ManifestEntry {
            name: name.clone(),
            offset: manifest.total_elements,
            shape: arr.shape().to_vec(),
        });
        manifest.total_elements += arr.len();
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    write_f32_bin(&dir.join("params.bin"), &model.params.to_flat())?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<(ModelBundle, Option<TrainConfig>)> {
    let cfg_path = dir.join("config.json");
    if !cfg_path.is_file() {
        return Err(Error::Data(format!("no checkpoint at {}", dir.display())));
    }
    let cfg: ConfigFile = serde_json::from_str(&std::fs::read_to_string(cfg_path)?)?;
    let mut model = ModelBundle::init(cfg.model, cfg.stage, 0)?;
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    for entry in &manifest.slots {
        if !model.params.contains(&entry.name) {
            return Err(Error::Data(format!(
                "checkpoint slot {} not part of this architecture",
                entry.name
            )));
        }
        if model.params.get(&entry.name).shape() != entry.shape.as_slice() {
            return Err(Error::Data(format!(
                "checkpoint slot {} has shape {:?}, expected {:?}",
                entry.name,
                entry.shape,
                model.params.get(&entry.name).shape()
            )));
        }
    }
    let flat = read_f32_bin(&dir.join("params.bin"))?;
    model.params.load_flat(&flat)?;
    if !model.params.all_finite() {
        return Err(Error::NonFinite("checkpoint parameters are not finite".into()));
    }
    Ok((model, cfg.train))
}

pub(crate) fn save_optimizer(dir: &Path, m: &ParamStore<f32>, v: &ParamStore<f32>) -> Result<()> {
    let mut flat = m.to_flat();
    flat.extend(v.to_flat());
    write_f32_bin(&dir.join("opt.bin"), &flat)
}

pub(crate) fn load_optimizer(
    dir: &Path,
    template: &ParamStore<f32>,
) -> Result<(ParamStore<f32>, ParamStore<f32>)> {
    let flat = read_f32_bin(&dir.join("opt.bin"))?;
    let n = template.total_elements();
    if flat.len() != 2 * n {
        return Err(Error::Data("optimizer state size mismatch".into()));
    }
    let mut m = template.zeros_like();
    let mut v = template.zeros_like();
    m.load_flat(&flat[0..n])?;
    v.load_flat(&flat[n..])?;
    Ok((m, v))
}

pub(crate) fn save_state(dir: &Path, state: &TrainState) -> Result<()> {
    std::fs::write(dir.join("state.json"), serde_json::to_string_pretty(state)?)?;
    Ok(())
}

pub(crate) fn load_state(dir: &Path) -> Result<TrainState> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("state.json"))?)?)
}

pub fn write_loss_csv(dir: &Path, losses: &[f32]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    std::fs::write(dir.join("loss.csv"), out)?;
    Ok(())
}

pub fn read_loss_csv(dir: &Path) -> Result<Vec<f32>> {
    let text = std::fs::read_to_string(dir.join("loss.csv"))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let val = line
            .split(',')
            .nth(1)
            .ok_or_else(|| Error::Data("malformed loss.csv row".into()))?;
        out.push(val.parse::<f32>().map_err(|e| Error::Data(format!("loss.csv: {e}")))?);
    }
    Ok(out)
}

fn write_f32_bin(path: &Path, values: &[f32]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

fn read_f32_bin(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!("{} is not a stream of f32", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn seed_to_hex(seed: &[u8; 32]) -> String {
    seed.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn seed_from_hex(hex: &str) -> Result<[u8; 32]> {
    if hex.len() != 64 {
        return Err(Error::Data("rng seed hex must be 64 chars".into()));
    }
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|e| Error::Data(format!("bad seed hex: {e}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::PatchSpec;

    #[test]
    fn model_roundtrip_is_bit_exact() {
        let cfg = DiTConfig {
            depth: 2,
            d_model: 16,
            heads: 2,
            mlp_ratio: 2,
            patch: PatchSpec { t: 1, h: 1, w: 1 },
            max_grid: (4, 4, 4),
            latent_channels: 3,
        };
        let model = ModelBundle::init_random(cfg, Stage::Video, 5, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model, None).unwrap();
        let (loaded, train) = load_model(dir.path()).unwrap();
        assert!(train.is_none());
        assert_eq!(loaded.stage, Stage::Video);
        assert_eq!(loaded.config, model.config);
        for (name, arr) in model.params.iter() {
            assert_eq!(loaded.params.get(name), arr, "slot {name}");
        }
    }

    #[test]
    fn loss_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let losses = vec![1.5f32, 0.75, 0.5];
        write_loss_csv(dir.path(), &losses).unwrap();
        assert_eq!(read_loss_csv(dir.path()).unwrap(), losses);
    }

    #[test]
    fn missing_checkpoint_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Data(_))));
    }
}
