use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::RngCore;

use crate::codec::{Canonical, DecodeError, Reader, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SignatureScheme {
    Ed25519 = 1,
}

/// Public identity of a signer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CryptoId {
    pub scheme: SignatureScheme,
    pub key: [u8; 32],
}

impl CryptoId {
    pub fn verify(&self, message: &[u8], signature: &SignatureBytes) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.key) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify_strict(message, &sig).is_ok()
    }

    pub fn short(&self) -> String {
        hex::encode(&self.key[..4])
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.key)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut key = [0u8; 32];
        hex::decode_to_slice(s, &mut key).ok()?;
        Some(Self {
            scheme: SignatureScheme::Ed25519,
            key,
        })
    }
}

impl fmt::Debug for CryptoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CryptoId({})", self.short())
    }
}

impl fmt::Display for CryptoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Canonical for CryptoId {
    fn encode(&self, w: &mut Writer) {
        w.nested_with(|w| {
            w.tag(self.scheme as u8);
            w.raw(&self.key);
        });
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        let raw = r.bytes()?;
        if raw.len() != 33 {
            return Err(DecodeError::BadLength {
                what: "crypto id",
                len: raw.len(),
                expected: 33,
            });
        }
        if raw[0] != SignatureScheme::Ed25519 as u8 {
            return Err(DecodeError::UnknownTag {
                what: "signature scheme",
                tag: raw[0],
            });
        }
        let mut key = [0u8; 32];
        key.copy_from_slice(&raw[1..]);
        Ok(Self {
            scheme: SignatureScheme::Ed25519,
            key,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignatureBytes(pub [u8; 64]);

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig({})", hex::encode(&self.0[..4]))
    }
}

impl Canonical for SignatureBytes {
    fn encode(&self, w: &mut Writer) {
        w.bytes(&self.0);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self(r.fixed("signature")?))
    }
}

/// Secret signing key together with its public identity.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
    id: CryptoId,
}

impl Keypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        let id = CryptoId {
            scheme: SignatureScheme::Ed25519,
            key: signing.verifying_key().to_bytes(),
        };
        Self { signing, id }
    }

    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn id(&self) -> CryptoId {
        self.id
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        SignatureBytes(self.signing.sign(message).to_bytes())
    }

    /// Parses a key file: 64 hex characters of seed, surrounding whitespace allowed.
    pub fn from_key_file(text: &str) -> Result<Self, String> {
        let t = text.trim();
        let mut seed = [0u8; 32];
        hex::decode_to_slice(t, &mut seed)
            .map_err(|e| format!("key file must hold 64 hex characters: {e}"))?;
        Ok(Self::from_seed(seed))
    }

    pub fn to_key_file(&self) -> String {
        format!("{}\n", hex::encode(self.seed()))
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Keypair({:?})", self.id)
    }
}
