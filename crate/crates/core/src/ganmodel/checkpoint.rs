//! Checkpoint container.
//!
//! Layout: magic `CFCK`, u32 LE format version, u64 LE header length, a JSON
//! header ([`CheckpointMeta`]), then every generator parameter followed by
//! every discriminator parameter as raw little-endian f32, in the order of
//! `params_mut`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DiscriminatorSpec};
use super::generator::{Generator, GeneratorSpec};
use super::layers::Param;
use super::Mode;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CFCK";
const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub mode: Mode,
    /// Hash of the training configuration.
    pub config_hash: String,
    /// Optimisation steps completed.
    pub step: usize,
    /// Epochs completed.
    pub epoch: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    /// Element count of each parameter tensor.
    pub generator_tensors: Vec<usize>,
    pub discriminator_tensors: Vec<usize>,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

fn lengths(params: &[&mut Param]) -> Vec<usize> {
    params.iter().map(|p| p.value.len()).collect()
}

pub fn save_checkpoint(
    path: &Path,
    mode: Mode,
    config_hash: &str,
    step: usize,
    epoch: usize,
    generator: &mut Generator,
    discriminator: &mut Discriminator,
) -> Result<()> {
    let meta = CheckpointMeta {
        mode,
        config_hash: config_hash.to_string(),
        step,
        epoch,
        generator: generator.spec().clone(),
        discriminator: discriminator.spec().clone(),
        generator_tensors: lengths(&generator.params_mut()),
        discriminator_tensors: lengths(&discriminator.params_mut()),
    };
    let header = serde_json::to_vec(&meta)?;
    let mut bytes = Vec::with_capacity(PREFIX_LEN + header.len());
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in generator.params_mut().into_iter().chain(discriminator.params_mut()) {
        for v in &p.value {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < PREFIX_LEN || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "CFCK".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: PREFIX_LEN.saturating_add(header_len),
            found: bytes.len(),
        })?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[PREFIX_LEN..body])?;
    let mut generator = Generator::new(meta.generator.clone(), 0)?;
    let mut discriminator = Discriminator::new(meta.discriminator.clone(), 0)?;
    if lengths(&generator.params_mut()) != meta.generator_tensors
        || lengths(&discriminator.params_mut()) != meta.discriminator_tensors
    {
        return Err(Error::Checkpoint(
            "parameter layout does not match the recorded architecture".into(),
        ));
    }
    let total: usize = meta.generator_tensors.iter().chain(&meta.discriminator_tensors).sum();
    let expected = body + 4 * total;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let mut chunks = bytes[body..].chunks_exact(4);
    for p in generator.params_mut().into_iter().chain(discriminator.params_mut()) {
        for v in p.value.iter_mut() {
            *v = f32::from_le_bytes(chunks.next().expect("length checked").try_into().expect("4 bytes"));
        }
        p.zero_grad();
    }
    Ok(Checkpoint {
        meta,
        generator,
        discriminator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_case, SynthConfig};
    use crate::ganmodel::{predict, train, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_predicts_identically() {
        let cfg = SynthConfig {
            raster_size: 32,
            ..SynthConfig::default()
        };
        let cases: Vec<_> = (0..2).map(|s| synth_case(&cfg, s).unwrap()).collect();
        let tc = TrainConfig {
            epochs: 1,
            ..TrainConfig::for_mode(Mode::HistW)
        };
        let mut out = train(&cases, &tc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cfck");
        save_checkpoint(&path, Mode::HistW, &tc.config_hash(), 2, 1, &mut out.generator, &mut out.discriminator)
            .unwrap();
        let mut ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta.step, 2);
        assert_eq!(ck.meta.config_hash, tc.config_hash());
        let a = predict(&mut out.generator, &cases[0], Mode::HistW, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = predict(&mut ck.generator, &cases[0], Mode::HistW, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })));
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic { .. })));
    }
}
