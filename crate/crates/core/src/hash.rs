use std::fmt;

use sha3::{Digest, Sha3_256};

use crate::codec::{Canonical, DecodeError, Reader, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum HashAlgorithm {
    Sha3_256 = 1,
}

/// Content address of a block.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hash {
    pub algorithm: HashAlgorithm,
    pub digest: [u8; 32],
}

impl Hash {
    pub fn of(data: &[u8]) -> Self {
        Self::from_digest(Sha3_256::digest(data).into())
    }

    pub fn from_digest(digest: [u8; 32]) -> Self {
        Self {
            algorithm: HashAlgorithm::Sha3_256,
            digest,
        }
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.digest)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.digest[..4])
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut digest = [0u8; 32];
        hex::decode_to_slice(s, &mut digest).ok()?;
        Some(Self::from_digest(digest))
    }

    /// Number of leading zero bits in the digest.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut n = 0;
        for b in self.digest {
            if b == 0 {
                n += 8;
            } else {
                return n + b.leading_zeros();
            }
        }
        n
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", self.short())
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Canonical for Hash {
    fn encode(&self, w: &mut Writer) {
        w.nested_with(|w| {
            w.tag(self.algorithm as u8);
            w.raw(&self.digest);
        });
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        let raw = r.bytes()?;
        if raw.len() != 33 {
            return Err(DecodeError::BadLength {
                what: "hash",
                len: raw.len(),
                expected: 33,
            });
        }
        if raw[0] != HashAlgorithm::Sha3_256 as u8 {
            return Err(DecodeError::UnknownTag {
                what: "hash algorithm",
                tag: raw[0],
            });
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&raw[1..]);
        Ok(Self::from_digest(digest))
    }
}
