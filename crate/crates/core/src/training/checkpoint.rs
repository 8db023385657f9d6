//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "VOCADAPT"
//! version    u32
//! header_len u64
//! header     header_len bytes of JSON: kind, step, config snapshot,
//!            optimizer step counters and the ordered list of blocks
//!            (name, length)
//! payload    every block's values as f64, in header order
//! digest     32-byte SHA-256 of everything above
//! ```
//!
//! Block names are `generator/<param>`, `discriminator/<param>`,
//! `optimizer/<g|d>/m` and `optimizer/<g|d>/v`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::OptimizerState;
use crate::config::ExperimentConfig;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::IafGenerator;
use crate::nn::Parameterized;
use crate::rng::derive_rng;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"VOCADAPT";
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Pretrain,
    Adapt,
}

pub type Blocks = Vec<(String, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: ExperimentConfig,
    /// Completed steps of the run that wrote this checkpoint.
    pub step: u64,
    pub generator: Blocks,
    pub discriminator: Option<Blocks>,
    pub opt_g: Option<OptimizerState>,
    pub opt_d: Option<OptimizerState>,
    /// Digest of the generator adaptation started from.
    pub source_digest: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: CheckpointKind,
    step: u64,
    config: ExperimentConfig,
    source_digest: Option<String>,
    optimizer_steps: Vec<(String, u64)>,
    blocks: Vec<(String, usize)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(format!("integrity check failed: {}", msg.into()))
}

impl Checkpoint {
    pub fn from_generator(g: &IafGenerator, config: &ExperimentConfig, step: u64) -> Self {
        Self {
            kind: CheckpointKind::Pretrain,
            config: config.clone(),
            step,
            generator: g.named_blocks(),
            discriminator: None,
            opt_g: None,
            opt_d: None,
            source_digest: None,
        }
    }

    /// Rebuilds the generator described by the config snapshot.
    pub fn generator(&self) -> Result<IafGenerator> {
        let c = &self.config;
        let mut g = IafGenerator::new(
            &c.generator,
            &c.conditioning,
            c.spectral.n_mels,
            c.spectral.hop,
            &mut derive_rng(0, &[]),
        )?;
        g.load_named_blocks(&self.generator)?;
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<Option<Discriminator>> {
        let Some(blocks) = &self.discriminator else {
            return Ok(None);
        };
        let c = &self.config;
        let mut d = Discriminator::new(
            &c.discriminator,
            &c.conditioning,
            c.spectral.n_mels,
            c.spectral.hop,
            &mut derive_rng(0, &[]),
        )?;
        d.load_named_blocks(blocks)?;
        Ok(Some(d))
    }

    /// Fails if any stored block or reference names a teacher model.
    pub fn ensure_teacher_free(&self) -> Result<()> {
        let names = self
            .generator
            .iter()
            .chain(self.discriminator.iter().flatten())
            .map(|(n, _)| n.as_str());
        for name in names {
            if name.to_ascii_lowercase().contains("teacher") {
                return Err(Error::Checkpoint(format!(
                    "checkpoint contains teacher block {name}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blocks: Vec<(String, &[f64])> = Vec::new();
        for (n, v) in &self.generator {
            blocks.push((format!("generator/{n}"), v));
        }
        for (n, v) in self.discriminator.iter().flatten() {
            blocks.push((format!("discriminator/{n}"), v));
        }
        let mut optimizer_steps = Vec::new();
        for (tag, state) in [("g", &self.opt_g), ("d", &self.opt_d)] {
            if let Some(s) = state {
                optimizer_steps.push((tag.to_string(), s.step));
                blocks.push((format!("optimizer/{tag}/m"), &s.m));
                blocks.push((format!("optimizer/{tag}/v"), &s.v));
            }
        }
        let header = Header {
            kind: self.kind,
            step: self.step,
            config: self.config.clone(),
            source_digest: self.source_digest.clone(),
            optimizer_steps,
            blocks: blocks.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, v) in &blocks {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < PREFIX_LEN + DIGEST_LEN {
            return Err(corrupt("file truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("digest mismatch (truncated or modified file)"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = PREFIX_LEN
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&body[PREFIX_LEN..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let payload = &body[header_end..];
        let total: usize = header.blocks.iter().map(|(_, n)| n).sum();
        if payload.len() != total * 8 {
            return Err(corrupt(format!(
                "payload has {} bytes, header describes {}",
                payload.len(),
                total * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut generator = Vec::new();
        let mut discriminator: Option<Blocks> = None;
        let mut moments: Vec<(String, Vec<f64>)> = Vec::new();
        for (name, len) in &header.blocks {
            let v: Vec<f64> = values.by_ref().take(*len).collect();
            if let Some(n) = name.strip_prefix("generator/") {
                generator.push((n.to_string(), v));
            } else if let Some(n) = name.strip_prefix("discriminator/") {
                discriminator
                    .get_or_insert_with(Vec::new)
                    .push((n.to_string(), v));
            } else if let Some(n) = name.strip_prefix("optimizer/") {
                moments.push((n.to_string(), v));
            } else {
                return Err(Error::Checkpoint(format!("unknown block {name}")));
            }
        }
        let mut opt = |tag: &str| -> Result<Option<OptimizerState>> {
            let Some((_, step)) = header.optimizer_steps.iter().find(|(t, _)| t == tag) else {
                return Ok(None);
            };
            let mut take = |suffix: &str| {
                let key = format!("{tag}/{suffix}");
                moments
                    .iter()
                    .position(|(n, _)| *n == key)
                    .map(|i| moments.remove(i).1)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer block {key}")))
            };
            Ok(Some(OptimizerState {
                m: take("m")?,
                v: take("v")?,
                step: *step,
            }))
        };
        let opt_g = opt("g")?;
        let opt_d = opt("d")?;
        Ok(Self {
            kind: header.kind,
            config: header.config,
            step: header.step,
            generator,
            discriminator,
            opt_g,
            opt_d,
            source_digest: header.source_digest,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.generator.channels = 2;
        c.generator.dilations = vec![1, 2];
        c.discriminator.channels = 2;
        c.conditioning.channels = vec![2; 4];
        c
    }

    fn sample() -> Checkpoint {
        let c = small_config();
        let g = IafGenerator::new(
            &c.generator,
            &c.conditioning,
            80,
            64,
            &mut derive_rng(1, &[]),
        )
        .unwrap();
        let d = Discriminator::new(
            &c.discriminator,
            &c.conditioning,
            80,
            64,
            &mut derive_rng(2, &[]),
        )
        .unwrap();
        let mut ck = Checkpoint::from_generator(&g, &c, 7);
        ck.kind = CheckpointKind::Adapt;
        ck.discriminator = Some(d.named_blocks());
        let mut s = OptimizerState::new(g.param_count());
        s.m[0] = 0.125;
        s.step = 3;
        ck.opt_g = Some(s);
        ck.opt_d = Some(OptimizerState::new(d.param_count()));
        ck.source_digest = Some(g.param_digest());
        ck
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let g = back.generator().unwrap();
        assert_eq!(g.named_blocks(), ck.generator);
        assert!(back.discriminator().unwrap().is_some());
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 30, 10] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("integrity"), "{cut}: {err}");
        }
        let mut flipped = bytes.clone();
        let i = flipped.len() - 40;
        flipped[i] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped)
            .unwrap_err()
            .to_string()
            .contains("integrity"));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn teacher_blocks_rejected() {
        let mut ck = sample();
        ck.ensure_teacher_free().unwrap();
        ck.generator.push(("teacher.logits".into(), vec![0.0]));
        assert!(ck.ensure_teacher_free().is_err());
    }
}
