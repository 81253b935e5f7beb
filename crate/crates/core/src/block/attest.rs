//! Signed availability and integrity attestations.

use std::collections::BTreeSet;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::{CryptoId, Keypair, SignatureBytes};
use crate::hash::Hash;
use crate::reference::Reference;

use super::hetcons::{Ballot, Claim, HetconsValue, Phase};
use super::UNSIGNED;

/// Something carrying an issuer signature over the rest of its fields.
pub trait Signed {
    /// Prefix mixed into the signed bytes so one kind cannot pass for another.
    const DOMAIN: &'static str;

    fn issuer(&self) -> &CryptoId;
    fn signature(&self) -> &SignatureBytes;
    fn signature_mut(&mut self) -> &mut SignatureBytes;
    /// Every field except the signature, in declared order.
    fn encode_body(&self, w: &mut Writer);

    fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(Self::DOMAIN.as_bytes());
        self.encode_body(&mut w);
        w.into_bytes()
    }

    fn verify_signature(&self) -> bool {
        self.issuer().verify(&self.signing_bytes(), self.signature())
    }

    /// Fills in the signature; `keys` must match the issuer.
    fn signed_by(mut self, keys: &Keypair) -> Self
    where
        Self: Sized,
    {
        debug_assert_eq!(keys.id(), *self.issuer());
        let sig = keys.sign(&self.signing_bytes());
        *self.signature_mut() = sig;
        self
    }
}

/// Promise by `issuer` to keep `subject` and every `covered` block retrievable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreForever {
    pub subject: Reference,
    pub covered: BTreeSet<Hash>,
    pub issuer: CryptoId,
    pub signature: SignatureBytes,
}

impl StoreForever {
    pub fn new(subject: &Reference, covered: BTreeSet<Hash>, keys: &Keypair) -> Self {
        Self {
            subject: subject.stripped(),
            covered,
            issuer: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    /// All blocks this attestation promises to keep.
    pub fn promised(&self) -> impl Iterator<Item = Hash> + '_ {
        std::iter::once(self.subject.hash).chain(self.covered.iter().copied())
    }

    fn write_body(&self, w: &mut Writer) {
        w.nested(&self.subject);
        w.set(self.covered.iter());
        self.issuer.encode(w);
    }

    fn read(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            subject: r.nested()?,
            covered: r.set::<Hash>()?.into_iter().collect(),
            issuer: CryptoId::decode(r)?,
            signature: SignatureBytes::decode(r)?,
        })
    }
}
signed!(StoreForever, "blockweb/store-forever/v1");

/// Commitment that `block` occupies `slot` of the chain rooted at `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSlotAttestation {
    pub block: Reference,
    pub root: Reference,
    pub slot: u64,
    pub parent: Reference,
    pub issuer: CryptoId,
    pub signature: SignatureBytes,
}

impl ChainSlotAttestation {
    pub fn new(block: &Reference, root: &Reference, slot: u64, parent: &Reference, keys: &Keypair) -> Self {
        Self {
            block: block.stripped(),
            root: root.stripped(),
            slot,
            parent: parent.stripped(),
            issuer: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    fn write_body(&self, w: &mut Writer) {
        w.nested(&self.block);
        w.nested(&self.root);
        w.u64(self.slot);
        w.nested(&self.parent);
        self.issuer.encode(w);
    }

    fn read(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            block: r.nested()?,
            root: r.nested()?,
            slot: r.u64()?,
            parent: r.nested()?,
            issuer: CryptoId::decode(r)?,
            signature: SignatureBytes::decode(r)?,
        })
    }
}
signed!(ChainSlotAttestation, "blockweb/chain-slot/v1");

/// Statement that `subjects` existed by `time` (milliseconds on the issuer's clock).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampAttestation {
    pub subjects: BTreeSet<Reference>,
    pub time: u64,
    pub issuer: CryptoId,
    pub signature: SignatureBytes,
}

impl TimestampAttestation {
    pub fn new(subjects: BTreeSet<Reference>, time: u64, keys: &Keypair) -> Self {
        Self {
            subjects,
            time,
            issuer: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    fn write_body(&self, w: &mut Writer) {
        w.set(self.subjects.iter());
        w.u64(self.time);
        self.issuer.encode(w);
    }

    fn read(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            subjects: r.set::<Reference>()?.into_iter().collect(),
            time: r.u64()?,
            issuer: CryptoId::decode(r)?,
            signature: SignatureBytes::decode(r)?,
        })
    }
}
signed!(TimestampAttestation, "blockweb/timestamp/v1");

/// Proof-of-work link placing `block` after `parent`. Unsigned: the hash of
/// the encoded attestation itself carries the work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NakamotoAttestation {
    pub block: Reference,
    pub parent: Reference,
    pub nonce: u64,
}

impl Canonical for NakamotoAttestation {
    fn encode(&self, w: &mut Writer) {
        w.nested(&self.block);
        w.nested(&self.parent);
        w.u64(self.nonce);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            block: r.nested()?,
            parent: r.nested()?,
            nonce: r.u64()?,
        })
    }
}

/// Statement that `branch` pointed at `commit` as of `time`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GitBranchAttestation {
    pub branch: String,
    pub commit: Reference,
    pub time: u64,
    pub issuer: CryptoId,
    pub signature: SignatureBytes,
}

impl GitBranchAttestation {
    pub fn new(branch: &str, commit: &Reference, time: u64, keys: &Keypair) -> Self {
        Self {
            branch: branch.to_owned(),
            commit: commit.stripped(),
            time,
            issuer: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    fn write_body(&self, w: &mut Writer) {
        w.str(&self.branch);
        w.nested(&self.commit);
        w.u64(self.time);
        self.issuer.encode(w);
    }

    fn read(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            branch: r.str()?,
            commit: r.nested()?,
            time: r.u64()?,
            issuer: CryptoId::decode(r)?,
            signature: SignatureBytes::decode(r)?,
        })
    }
}
signed!(GitBranchAttestation, "blockweb/git-branch/v1");

/// One consensus protocol message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HetconsMessage {
    pub phase: Phase,
    pub ballot: Ballot,
    pub value: HetconsValue,
    /// Earlier messages or blocks this one answers.
    pub justification: BTreeSet<Reference>,
    /// Prior acceptances the sender reports, one per slot it votes in.
    pub claims: Vec<Claim>,
    pub issuer: CryptoId,
    pub signature: SignatureBytes,
}

impl HetconsMessage {
    pub fn new(
        phase: Phase,
        ballot: Ballot,
        value: HetconsValue,
        justification: BTreeSet<Reference>,
        claims: Vec<Claim>,
        keys: &Keypair,
    ) -> Self {
        Self {
            phase,
            ballot,
            value,
            justification,
            claims,
            issuer: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    fn write_body(&self, w: &mut Writer) {
        w.u8(self.phase as u8);
        w.nested(&self.ballot);
        w.nested(&self.value);
        w.set(self.justification.iter());
        w.list(self.claims.iter());
        self.issuer.encode(w);
    }

    fn read(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            phase: Phase::from_tag(r.u8()?)?,
            ballot: r.nested()?,
            value: r.nested()?,
            justification: r.set::<Reference>()?.into_iter().collect(),
            claims: r.list()?,
            issuer: CryptoId::decode(r)?,
            signature: SignatureBytes::decode(r)?,
        })
    }
}
signed!(HetconsMessage, "blockweb/hetcons-message/v1");

/// A consensus outcome, justified by a quorum of phase-2B messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HetconsDecision {
    pub ballot: Ballot,
    pub value: HetconsValue,
    pub quorum: BTreeSet<Reference>,
    pub issuer: CryptoId,
    pub signature: SignatureBytes,
}

impl HetconsDecision {
    pub fn new(ballot: Ballot, value: HetconsValue, quorum: BTreeSet<Reference>, keys: &Keypair) -> Self {
        Self {
            ballot,
            value,
            quorum,
            issuer: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    fn write_body(&self, w: &mut Writer) {
        w.nested(&self.ballot);
        w.nested(&self.value);
        w.set(self.quorum.iter());
        self.issuer.encode(w);
    }

    fn read(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            ballot: r.nested()?,
            value: r.nested()?,
            quorum: r.set::<Reference>()?.into_iter().collect(),
            issuer: CryptoId::decode(r)?,
            signature: SignatureBytes::decode(r)?,
        })
    }
}
signed!(HetconsDecision, "blockweb/hetcons-decision/v1");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampering_breaks_signature() {
        let k = Keypair::from_seed([1; 32]);
        let subject = Reference::bare(Hash::of(b"x"));
        let mut a = ChainSlotAttestation::new(&subject, &subject, 3, &subject, &k);
        assert!(a.verify_signature());
        a.slot = 4;
        assert!(!a.verify_signature());
    }

    #[test]
    fn domains_separate_kinds() {
        assert_ne!(StoreForever::DOMAIN, ChainSlotAttestation::DOMAIN);
        assert_ne!(HetconsMessage::DOMAIN, HetconsDecision::DOMAIN);
    }

    #[test]
    fn attestation_subjects_are_stripped() {
        let k = Keypair::from_seed([1; 32]);
        let bundled = Reference::bare(Hash::of(b"x")).with_availability(Hash::of(b"a"));
        let sf = StoreForever::new(&bundled, BTreeSet::new(), &k);
        assert!(sf.subject.availability.is_empty());
        assert!(sf.verify_signature());
    }
}
