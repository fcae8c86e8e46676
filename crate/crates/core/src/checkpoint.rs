//! Model checkpoints: little-endian binary, bit-exact round trip.
//!
//! ```text
//! magic   "HAN1"          4 bytes
//! version u32 = 1
//! config  7 x u32: regions_per_side, feature_dim, hidden, layers,
//!                  skip, frames, classes
//! params  raw little-endian f64, flat serialization order
//!         (p1, p2, q1, q2 LSTMs; attention; classifier)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HanModel, ModelConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HAN1";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_BYTES: u64 = 4 + 4 + 7 * 4;

pub fn save_checkpoint(model: &HanModel, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let c = model.config();
    for field in [
        c.regions_per_side,
        c.feature_dim,
        c.hidden,
        c.layers,
        c.skip,
        c.frames,
        c.classes,
    ] {
        w.write_all(&(field as u32).to_le_bytes())?;
    }
    let mut failed = None;
    model.visit_params(&mut |_, data| {
        if failed.is_none() {
            for v in data {
                if let Err(e) = w.write_all(&v.to_le_bytes()) {
                    failed = Some(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = failed {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Loads a checkpoint, validating magic, version and the exact file length
/// implied by the stored configuration before building the model. Either the
/// whole model loads or nothing does.
pub fn load_checkpoint(path: &Path) -> Result<HanModel> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    if file_len < HEADER_BYTES {
        return Err(Error::Truncated {
            expected_bytes: HEADER_BYTES,
            got_bytes: file_len,
        });
    }
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            got: magic,
        });
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: CHECKPOINT_VERSION,
            got: version,
        });
    }
    let config = ModelConfig {
        regions_per_side: read_u32(&mut r)? as usize,
        feature_dim: read_u32(&mut r)? as usize,
        hidden: read_u32(&mut r)? as usize,
        layers: read_u32(&mut r)? as usize,
        skip: read_u32(&mut r)? as usize,
        frames: read_u32(&mut r)? as usize,
        classes: read_u32(&mut r)? as usize,
    };
    config.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("checkpoint header: {msg}")),
        other => other,
    })?;

    let mut model = HanModel::zeros(config)?;
    let expected = HEADER_BYTES + 8 * model.param_count() as u64;
    if file_len < expected {
        return Err(Error::Truncated {
            expected_bytes: expected,
            got_bytes: file_len,
        });
    }
    if file_len > expected {
        return Err(Error::LengthMismatch {
            expected_bytes: expected,
            got_bytes: file_len,
        });
    }

    let mut payload = vec![0u8; 8 * model.param_count()];
    r.read_exact(&mut payload)?;
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            tensor: "checkpoint parameters".to_string(),
        });
    }
    model.set_from_flat(&flat)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::FeatureCube;
    use crate::model::Mode;
    use crate::numerics::{Matrix, Rng};
    use std::path::PathBuf;

    fn tmp_path(name: &str) -> PathBuf {
        static COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        std::env::temp_dir().join(format!("ckpt_test_{}_{}_{}", std::process::id(), n, name))
    }

    fn config() -> ModelConfig {
        ModelConfig {
            regions_per_side: 2,
            feature_dim: 3,
            hidden: 4,
            layers: 2,
            skip: 2,
            frames: 4,
            classes: 3,
        }
    }

    fn cubes(config: &ModelConfig, seed: u64) -> Vec<FeatureCube> {
        let mut rng = Rng::new(seed);
        (0..config.frames)
            .map(|t| {
                let mut m = Matrix::zeros(config.feature_dim, config.region_count());
                for v in m.as_mut_slice() {
                    *v = rng.uniform(-1.0, 1.0);
                }
                FeatureCube::new(m, t)
            })
            .collect()
    }

    #[test]
    fn round_trip_preserves_forward_outputs_bitwise() {
        let config = config();
        let mut rng = Rng::new(1);
        let model = HanModel::init(config, &mut rng).unwrap();
        let path = tmp_path("rt.han");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model.flatten(), loaded.flatten());

        let p = cubes(&config, 2);
        let q = cubes(&config, 3);
        let a = model.forward(&p, &q, Mode::Eval).unwrap();
        let b = loaded.forward(&p, &q, Mode::Eval).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn save_is_deterministic() {
        let config = config();
        let mut rng = Rng::new(5);
        let model = HanModel::init(config, &mut rng).unwrap();
        let path_a = tmp_path("det_a.han");
        let path_b = tmp_path("det_b.han");
        save_checkpoint(&model, &path_a).unwrap();
        save_checkpoint(&model, &path_b).unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());
        std::fs::remove_file(&path_a).unwrap();
        std::fs::remove_file(&path_b).unwrap();
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let config = config();
        let model = HanModel::zeros(config).unwrap();
        let path = tmp_path("magic.han");
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'?';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic { .. })));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn wrong_version_is_rejected() {
        let config = config();
        let model = HanModel::zeros(config).unwrap();
        let path = tmp_path("version.han");
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::UnsupportedVersion { expected: 1, got: 9 })
        ));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let config = config();
        let model = HanModel::zeros(config).unwrap();
        let path = tmp_path("trunc.han");
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Truncated { .. })
        ));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn hidden_size_mismatch_names_both_values() {
        let small = HanModel::zeros(ModelConfig { hidden: 8, ..config() }).unwrap();
        let path = tmp_path("mismatch.han");
        save_checkpoint(&small, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let expected = ModelConfig { hidden: 16, ..config() };
        let err = expected.ensure_matches(loaded.config()).unwrap_err();
        match err {
            Error::ConfigMismatch { field, expected, got } => {
                assert_eq!(field, "hidden");
                assert_eq!(expected, 16);
                assert_eq!(got, 8);
            }
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }
}
