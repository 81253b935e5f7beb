use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::hash::Hash;

/// Deepest nesting of integrity attestation references accepted.
pub const MAX_REFERENCE_DEPTH: usize = 8;

/// A hash pointer to a block, bundled with attestations that vouch for it.
///
/// `==` compares the whole bundle. Use [`Reference::same_target`] to ask
/// whether two references name the same block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Reference {
    pub hash: Hash,
    pub availability: BTreeSet<Hash>,
    integrity: Vec<Reference>,
}

impl Reference {
    /// A reference carrying no attestations.
    pub fn bare(hash: Hash) -> Self {
        Self {
            hash,
            availability: BTreeSet::new(),
            integrity: Vec::new(),
        }
    }

    pub fn same_target(&self, other: &Reference) -> bool {
        self.hash == other.hash
    }

    pub fn stripped(&self) -> Self {
        Self::bare(self.hash)
    }

    pub fn integrity(&self) -> &[Reference] {
        &self.integrity
    }

    pub fn with_availability(mut self, attestation: Hash) -> Self {
        self.availability.insert(attestation);
        self
    }

    /// Adds an integrity attestation reference, refusing bundles nested too deep.
    pub fn with_integrity(mut self, attestation: Reference) -> Result<Self, DecodeError> {
        if attestation.depth() + 1 > MAX_REFERENCE_DEPTH {
            return Err(DecodeError::Invalid(format!(
                "reference nesting exceeds {MAX_REFERENCE_DEPTH}"
            )));
        }
        if let Err(at) = self.integrity.binary_search(&attestation) {
            self.integrity.insert(at, attestation);
        }
        Ok(self)
    }

    /// Nesting depth; a bare reference has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.integrity.iter().map(Reference::depth).max().unwrap_or(0)
    }

    fn decode_at_depth(r: &mut Reader, depth: usize) -> Result<Self, DecodeError> {
        if depth > MAX_REFERENCE_DEPTH {
            return Err(DecodeError::Invalid(format!(
                "reference nesting exceeds {MAX_REFERENCE_DEPTH}"
            )));
        }
        let hash = Hash::decode(r)?;
        let availability = r.set::<Hash>()?.into_iter().collect();
        let mut inner = Reader::new(r.bytes()?);
        let mut integrity = Vec::new();
        let mut prev: Option<bytes::Bytes> = None;
        while !inner.is_done() {
            let raw = inner.bytes()?;
            if prev.as_ref().is_some_and(|p| p >= &raw) {
                return Err(DecodeError::Unsorted);
            }
            let mut item = Reader::new(raw.clone());
            integrity.push(Self::decode_at_depth(&mut item, depth + 1)?);
            item.finish()?;
            prev = Some(raw);
        }
        Ok(Self {
            hash,
            availability,
            integrity,
        })
    }
}

impl Canonical for Reference {
    fn encode(&self, w: &mut Writer) {
        self.hash.encode(w);
        w.set(self.availability.iter());
        w.set(self.integrity.iter());
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Self::decode_at_depth(r, 1)
    }
}

/// Ordered by canonical encoding, which is the order used inside sets.
impl Ord for Reference {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.availability.is_empty()
            && self.integrity.is_empty()
            && other.availability.is_empty()
            && other.integrity.is_empty()
        {
            return self.hash.cmp(&other.hash);
        }
        self.to_canonical_bytes().cmp(&other.to_canonical_bytes())
    }
}

impl PartialOrd for Reference {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<Hash> for Reference {
    fn from(hash: Hash) -> Self {
        Self::bare(hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(n: u8) -> Hash {
        Hash::from_digest([n; 32])
    }

    #[test]
    fn identity_versus_bundle_equality() {
        let a = Reference::bare(h(1));
        let b = Reference::bare(h(1)).with_availability(h(2));
        assert!(a.same_target(&b));
        assert_ne!(a, b);
    }

    #[test]
    fn depth_limit_enforced_on_build_and_decode() {
        let mut r = Reference::bare(h(0));
        for i in 1..MAX_REFERENCE_DEPTH as u8 {
            r = Reference::bare(h(i)).with_integrity(r).unwrap();
        }
        assert_eq!(r.depth(), MAX_REFERENCE_DEPTH);
        assert!(Reference::bare(h(99)).with_integrity(r.clone()).is_err());

        // Hand-build a nine-deep encoding and make sure decoding refuses it.
        let mut w = Writer::new();
        h(99).encode(&mut w);
        w.set::<Hash>([]);
        w.nested_with(|w| w.bytes(&r.to_canonical_bytes()));
        assert!(Reference::from_canonical_bytes(w.into_bytes()).is_err());
        assert_eq!(Reference::from_canonical_bytes(r.to_canonical_bytes()).unwrap(), r);
    }

    #[test]
    fn integrity_set_is_sorted_and_deduplicated() {
        let r = Reference::bare(h(1))
            .with_integrity(Reference::bare(h(5)))
            .unwrap()
            .with_integrity(Reference::bare(h(3)))
            .unwrap()
            .with_integrity(Reference::bare(h(5)))
            .unwrap();
        let hashes: Vec<_> = r.integrity().iter().map(|x| x.hash).collect();
        assert_eq!(hashes, [h(3), h(5)]);
    }
}
