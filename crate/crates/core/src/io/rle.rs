//! Run-length mask codec.
//!
//! Runs alternate background/foreground and always start with a background
//! run, which is the only run allowed to be zero. An all-background mask of
//! `n` voxels is `[n]`; an all-foreground one is `[0, n]`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub dims: Dims,
    pub runs: Vec<u64>,
}

impl RleMask {
    /// Structural check without materializing the mask.
    pub fn validate(&self) -> Result<()> {
        let expected = self.dims.len() as u64;
        if self.runs.is_empty() {
            return Err(Error::InvalidRuns("no runs".into()));
        }
        if let Some(i) = self.runs.iter().skip(1).position(|r| *r == 0) {
            return Err(Error::InvalidRuns(format!("zero-length run at position {}", i + 1)));
        }
        let actual = self.runs.iter().try_fold(0u64, |acc, r| acc.checked_add(*r));
        match actual {
            Some(actual) if actual == expected => Ok(()),
            Some(actual) => Err(Error::RunSumMismatch { expected, actual }),
            None => Err(Error::RunSumMismatch {
                expected,
                actual: u64::MAX,
            }),
        }
    }

    pub fn foreground_count(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).sum()
    }

    /// Hex SHA-256 over the dims and runs, used as a compact mask identity
    /// in transcripts.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in self.dims.as_array() {
            h.update((d as u64).to_le_bytes());
        }
        for r in &self.runs {
            h.update(r.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn rle_encode(m: &BinaryMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &b in m.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    RleMask {
        dims: m.dims(),
        runs,
    }
}

pub fn rle_decode(r: &RleMask) -> Result<BinaryMask> {
    r.validate()?;
    let mut bits = Vec::with_capacity(r.dims.len());
    let mut value = false;
    for &run in &r.runs {
        bits.extend(std::iter::repeat_n(value, run as usize));
        value = !value;
    }
    BinaryMask::from_bits(r.dims, bits)
}
