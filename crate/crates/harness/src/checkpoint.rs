//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8  b"HMARLCK\x01"
//! algo    1  algorithm tag
//! hash    8  environment spec hash
//! echo    4 + n   canonical config text, length-prefixed UTF-8
//! count   4  number of parameter segments
//! per segment: 4 + name bytes, 8 (f64 count), count * 8 (f64 bits LE)
//! ```
//!
//! The config echo carries everything needed to rebuild the exact model
//! shapes; the spec hash guards against evaluating a checkpoint in a
//! different environment.

use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::config::{AlgoKind, TrainConfig};
use hmarl_core::algorithm::Segment;

const MAGIC: [u8; 8] = *b"HMARLCK\x01";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub algo: AlgoKind,
    pub env_hash: u64,
    pub config_echo: String,
    pub segments: Vec<Segment>,
}

impl Checkpoint {
    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::from_canonical(&self.config_echo)
            .context("parsing config echo from checkpoint")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(self.algo.tag());
        out.extend_from_slice(&self.env_hash.to_le_bytes());
        let echo = self.config_echo.as_bytes();
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(echo);
        out.extend_from_slice(&(self.segments.len() as u32).to_le_bytes());
        for segment in &self.segments {
            let name = segment.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(segment.values.len() as u64).to_le_bytes());
            for v in &segment.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out)
            .with_context(|| format!("writing checkpoint {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)
            .with_context(|| format!("opening checkpoint {}", path.display()))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut cursor = Cursor {
            bytes: &bytes,
            at: 0,
        };
        let magic = cursor.take(8)?;
        if magic != MAGIC {
            bail!("{}: not a checkpoint (bad magic)", path.display());
        }
        let algo = AlgoKind::from_tag(cursor.take(1)?[0])?;
        let env_hash = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
        let echo_len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
        let config_echo = String::from_utf8(cursor.take(echo_len)?.to_vec())
            .context("config echo is not UTF-8")?;
        let n_segments = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
        let mut segments = Vec::with_capacity(n_segments);
        for _ in 0..n_segments {
            let name_len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cursor.take(name_len)?.to_vec())
                .context("segment name is not UTF-8")?;
            let count = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap()) as usize;
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
            }
            segments.push(Segment { name, values });
        }
        if cursor.at != bytes.len() {
            bail!("{}: trailing bytes after last segment", path.display());
        }
        Ok(Checkpoint {
            algo,
            env_hash,
            config_echo,
            segments,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            bail!("checkpoint truncated at byte {}", self.at);
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            algo: AlgoKind::Mapqn,
            env_hash: 0xdead_beef_cafe_f00d,
            config_echo: "algo = mapqn\nenv = hybrid_climb\n".to_string(),
            segments: vec![
                Segment {
                    name: "agent0.q".to_string(),
                    values: vec![1.0, -2.5, f64::MIN_POSITIVE],
                },
                Segment {
                    name: "mix.w1".to_string(),
                    values: vec![],
                },
            ],
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.algo, ck.algo);
        assert_eq!(loaded.env_hash, ck.env_hash);
        assert_eq!(loaded.config_echo, ck.config_echo);
        assert_eq!(loaded.segments, ck.segments);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOTACKPT").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
