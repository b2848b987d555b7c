//! Checkpoint directories: `params.bin`, `meta.json` and `digest.txt`
//! (hex SHA-256 of `params.bin`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{decode_archive, encode_archive, ParameterSet};
use crate::error::{Error, Result};

pub const META_VERSION: u32 = 1;

const PARAMS_FILE: &str = "params.bin";
const META_FILE: &str = "meta.json";
const DIGEST_FILE: &str = "digest.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Strategy tag, e.g. `"adwe"` or `"full_ft"`.
    pub strategy: String,
    /// Number of completed training epochs.
    pub epoch: u32,
    pub gamma: Option<f64>,
    pub beta_history: Vec<f64>,
    pub train_losses: Vec<f64>,
    pub zero_shot_losses: Vec<f64>,
    pub prompt_digest: Option<String>,
    pub seed: u64,
    /// `"contrastive"` or `"cross_entropy"`; absent for untrained anchors.
    #[serde(default)]
    pub loss_mode: Option<String>,
    /// Interpolation factor of a post-hoc ensemble.
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl CheckpointMeta {
    pub fn new(strategy: impl Into<String>, seed: u64) -> Self {
        Self {
            format_version: META_VERSION,
            strategy: strategy.into(),
            epoch: 0,
            gamma: None,
            beta_history: Vec::new(),
            train_losses: Vec::new(),
            zero_shot_losses: Vec::new(),
            prompt_digest: None,
            seed,
            loss_mode: None,
            alpha: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != META_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                supported: META_VERSION,
            });
        }
        if self.strategy == "adwe" && self.beta_history.len() != self.epoch as usize {
            return Err(Error::InvalidParams(format!(
                "adwe checkpoint at epoch {} carries {} beta values",
                self.epoch,
                self.beta_history.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(params: ParameterSet, meta: CheckpointMeta) -> Result<Self> {
        meta.validate()?;
        Ok(Self { params, meta })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ckpt.meta.validate()?;
    fs::create_dir_all(dir)?;
    let bytes = encode_archive(&ckpt.params);
    let digest = hex::encode(Sha256::digest(&bytes));
    fs::write(dir.join(PARAMS_FILE), &bytes)?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&ckpt.meta)?)?;
    fs::write(dir.join(DIGEST_FILE), format!("{digest}\n"))?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let params_path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&params_path)?;
    let expected = fs::read_to_string(dir.join(DIGEST_FILE))?.trim().to_lowercase();
    let actual = hex::encode(Sha256::digest(&bytes));
    if expected != actual {
        return Err(Error::Integrity {
            path: params_path,
            expected,
            actual,
        });
    }
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    meta.validate()?;
    let params = decode_archive(&bytes)?;
    Ok(Checkpoint { params, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParameterSet::new();
        for i in 0..5 {
            let shape = vec![rng.random_range(1..6), rng.random_range(1..6)];
            let n = shape[0] * shape[1];
            let data = (0..n).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            set = set.with(format!("layer{i}.weight"), Tensor::new(shape, data).unwrap()).unwrap();
        }
        set
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut meta = CheckpointMeta::new("adwe", 17);
        meta.epoch = 3;
        meta.gamma = Some(5.0);
        meta.beta_history = vec![0.4, 0.1 + 0.2, 1.0 / 3.0];
        meta.train_losses = vec![1.2, 0.9, 0.7];
        meta.zero_shot_losses = vec![2.0; 3];
        meta.prompt_digest = Some("abc".into());
        let ckpt = Checkpoint::new(random_set(1), meta).unwrap();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.params.digest(), ckpt.params.digest());
        for ((_, a), (_, b)) in back.params.iter().zip(ckpt.params.iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(back.meta.epoch, 3);
        assert_eq!(back.meta.gamma, Some(5.0));
    }

    #[test]
    fn flipped_byte_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::new(random_set(2), CheckpointMeta::new("full_ft", 0)).unwrap();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn unknown_meta_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::new(random_set(3), CheckpointMeta::new("zero_shot", 0)).unwrap();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let meta_path = dir.path().join(META_FILE);
        let text = fs::read_to_string(&meta_path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&meta_path, text).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn adwe_beta_history_must_match_epochs() {
        let mut meta = CheckpointMeta::new("adwe", 0);
        meta.epoch = 2;
        meta.beta_history = vec![0.3];
        assert!(Checkpoint::new(ParameterSet::new(), meta).is_err());
    }
}
