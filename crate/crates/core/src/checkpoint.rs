//! Versioned JSON checkpoint container.
//!
//! JSON keeps the file human-diffable; serde_json emits the shortest
//! decimal that round-trips each f64, so load(save(x)) is bit-faithful.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{EmaParams, PredictorParams};
use crate::training::{AdamState, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub train_config: TrainConfig,
    pub params: PredictorParams,
    pub ema: EmaParams,
    pub opt_state: AdamState,
    pub step: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint {} has version {}, expected {CHECKPOINT_VERSION}",
                path.display(),
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn make_checkpoint(seed: u64) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = TrainConfig {
            hidden_sizes: vec![8, 8],
            time_embed_dim: 4,
            ..TrainConfig::default()
        };
        let mut params = PredictorParams::init(2, &cfg.hidden_sizes, 4, 50, &mut rng).unwrap();
        // Fill the zero-initialized final layer with awkward values so the
        // round trip is exercised on non-trivial bit patterns.
        let last = params.layers.len() - 1;
        for (i, w) in params.layers[last].weights.iter_mut().enumerate() {
            *w = (i as f64 + 1.0) / 3.0 * 1e-17 + 0.1;
        }
        let ema = EmaParams::new(&params, 0.9999);
        let mut opt = AdamState::new(params.n_params());
        opt.m[3] = 1.0 / 7.0;
        opt.v[5] = f64::MIN_POSITIVE;
        opt.step = 42;
        Checkpoint { version: CHECKPOINT_VERSION, train_config: cfg, params, ema, opt_state: opt, step: 42 }
    }

    #[test]
    fn round_trip_is_bit_faithful() {
        let dir = std::env::temp_dir().join("sa-diffusion-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        let ckpt = make_checkpoint(0);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.params.params_flat(), ckpt.params.params_flat());
        assert_eq!(loaded.ema.shadow.params_flat(), ckpt.ema.shadow.params_flat());
        assert_eq!(loaded.opt_state.m, ckpt.opt_state.m);
        assert_eq!(loaded.opt_state.v, ckpt.opt_state.v);
        assert_eq!(loaded.opt_state.step, ckpt.opt_state.step);
        assert_eq!(loaded.step, 42);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn double_round_trip_is_stable() {
        let dir = std::env::temp_dir().join("sa-diffusion-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let a = dir.join("stable-a.json");
        let b = dir.join("stable-b.json");
        let ckpt = make_checkpoint(1);
        ckpt.save(&a).unwrap();
        Checkpoint::load(&a).unwrap().save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        std::fs::remove_file(&a).unwrap();
        std::fs::remove_file(&b).unwrap();
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = std::env::temp_dir().join("sa-diffusion-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("badversion.json");
        let mut ckpt = make_checkpoint(2);
        ckpt.version = 99;
        let text = serde_json::to_string(&ckpt).unwrap();
        std::fs::write(&path, text).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn missing_file_names_path() {
        let err = Checkpoint::load(Path::new("/nonexistent/ckpt.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.json"));
    }
}
