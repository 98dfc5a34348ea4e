use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::Parameters;

/// SHA-256 over parameters in definition order, each value as a
/// little-endian `f32`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightDigest(String);

impl WeightDigest {
    pub fn of<P: Parameters + ?Sized>(params: &P) -> Self {
        Self::from_tensors(&params.tensors())
    }

    pub fn from_tensors(tensors: &[&[f32]]) -> Self {
        let mut hasher = Sha256::new();
        for t in tensors {
            for v in t.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        Self(hex::encode(hasher.finalize()))
    }

    pub fn as_hex(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WeightDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
