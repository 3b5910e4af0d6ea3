//! Binary policy checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "SURGPOL\0"
//! version      u32      1
//! obs_dim      u32
//! action_dim   u32
//! n_hidden     u32
//! hidden       u32 x n_hidden
//! param_count  u64
//! env_steps    u64      aggregate env steps trained
//! robot        u32 length + UTF-8 bytes
//! task         u32 length + UTF-8 bytes
//! theta        f64 x param_count   actor, log-std, critic
//! obs_center   f64 x obs_dim
//! obs_scale    f64 x obs_dim
//! ```
//!
//! Parameters are always stored as `f64`, whatever precision was trained.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array1;

use super::policy::{Policy, PolicyLayout};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 8] = *b"SURGPOL\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a policy checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint does not fit this setup: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub policy: Policy<T>,
    pub robot: String,
    pub task: String,
    pub env_steps: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let l = &self.policy.layout;
        let mut out = Vec::with_capacity(64 + 8 * (self.policy.theta.len() + 2 * l.obs_dim));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(l.obs_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.action_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.hidden.len() as u32).to_le_bytes());
        for h in &l.hidden {
            out.extend_from_slice(&(*h as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.policy.theta.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.env_steps.to_le_bytes());
        for s in [&self.robot, &self.task] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for arr in [&self.policy.theta, &self.policy.obs_center, &self.policy.obs_scale] {
            for v in arr {
                out.extend_from_slice(&v.f64().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let obs_dim = r.u32()? as usize;
        let action_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(CheckpointError::Corrupt(format!("{n_hidden} hidden layers")));
        }
        let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let layout = PolicyLayout::new(obs_dim, action_dim, &hidden);
        let param_count = r.u64()? as usize;
        if param_count != layout.param_count() {
            return Err(CheckpointError::Corrupt(format!(
                "header shapes imply {} parameters, header says {param_count}",
                layout.param_count()
            )));
        }
        let env_steps = r.u64()?;
        let robot = r.string()?;
        let task = r.string()?;
        let theta = r.f64s::<T>(param_count)?;
        let obs_center = r.f64s::<T>(obs_dim)?;
        let obs_scale = r.f64s::<T>(obs_dim)?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            policy: Policy {
                layout,
                theta,
                obs_center,
                obs_scale,
            },
            robot,
            task,
            env_steps,
        })
    }

    /// Writes via a temporary file and rename, so an interrupted save never
    /// replaces a good checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = std::fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Checks the stored shapes and robot against an environment.
    pub fn check_compatible(&self, robot: &str, obs_dim: usize, action_dim: usize) -> Result<(), CheckpointError> {
        let l = &self.policy.layout;
        if l.obs_dim != obs_dim || l.action_dim != action_dim {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint has obs_dim {} / action_dim {} (robot {}), environment has {obs_dim} / {action_dim} (robot {robot})",
                l.obs_dim, l.action_dim, self.robot
            )));
        }
        if self.robot != robot {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint was trained on robot {}, not {robot}",
                self.robot
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    fn f64s<T: Scalar>(&mut self, n: usize) -> Result<Array1<T>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.bytes.len()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::c(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    fn sample() -> Checkpoint<f64> {
        let mut rng = stream(3, StreamKind::Init, 0);
        let mut policy = Policy::init(PolicyLayout::new(5, 2, &[8, 4]), -1.0, &mut rng);
        policy.set_normalizer(&[0.1, 0.2, 0.3, 0.4, 0.5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        Checkpoint {
            policy,
            robot: "psm".into(),
            task: "target_reaching".into(),
            env_steps: 12345,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::<f64>::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..8], b"SURGPOL\0");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 2);
    }

    #[test]
    fn rejects_damage() {
        let b = sample().to_bytes();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = b.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bad), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(Checkpoint::<f64>::from_bytes(&b[..b.len() - 3]), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn save_load_and_compatibility() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        let back = Checkpoint::<f32>::load(&path).unwrap();
        assert_eq!(back.env_steps, 12345);
        assert!(back.check_compatible("psm", 5, 2).is_ok());
        assert!(matches!(back.check_compatible("psm", 6, 2), Err(CheckpointError::Mismatch(_))));
        assert!(matches!(back.check_compatible("star", 5, 2), Err(CheckpointError::Mismatch(_))));
    }
}
