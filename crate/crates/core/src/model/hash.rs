use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use super::ModelError;

/// 256-bit SHA-256 digest, serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// `H(a ∥ b ∥ ...)` without materializing the concatenation.
pub fn sha256_concat(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

/// Binary Merkle root with left-to-right pairing. An odd level duplicates its
/// last digest; a single leaf is its own root.
pub fn merkle_root(leaves: &[Digest]) -> Result<Digest, ModelError> {
    if leaves.is_empty() {
        return Err(ModelError::EmptyLeaves);
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                sha256_concat(&[&pair[0].0, &right.0])
            })
            .collect();
    }
    Ok(level[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(n: u8) -> Digest {
        sha256(&[n])
    }

    // Reference: hash the literal byte concatenation.
    fn h2(a: &Digest, b: &Digest) -> Digest {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&a.0);
        buf.extend_from_slice(&b.0);
        sha256(&buf)
    }

    #[test]
    fn single_leaf_is_root() {
        assert_eq!(merkle_root(&[leaf(1)]).unwrap(), leaf(1));
    }

    #[test]
    fn two_and_three_leaves() {
        let (a, b, c) = (leaf(1), leaf(2), leaf(3));
        assert_eq!(merkle_root(&[a, b]).unwrap(), h2(&a, &b));
        assert_eq!(
            merkle_root(&[a, b, c]).unwrap(),
            h2(&h2(&a, &b), &h2(&c, &c))
        );
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(merkle_root(&[]), Err(ModelError::EmptyLeaves));
    }

    #[test]
    fn known_sha256_vector() {
        assert_eq!(
            sha256(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hex_round_trip() {
        let d = leaf(9);
        assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
    }
}
