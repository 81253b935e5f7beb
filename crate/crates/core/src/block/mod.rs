//! Blocks and their canonical encoding.

/// Placeholder signature filled in by [`Signed::signed_by`].
pub(crate) const UNSIGNED: crate::crypto::SignatureBytes = crate::crypto::SignatureBytes([0; 64]);


macro_rules! signed {
    ($ty:ty, $domain:literal) => {
        signed!($ty, $domain, issuer);
    };
    ($ty:ty, $domain:literal, $issuer:ident) => {
        impl Signed for $ty {
            const DOMAIN: &'static str = $domain;
            fn issuer(&self) -> &CryptoId {
                &self.$issuer
            }
            fn signature(&self) -> &SignatureBytes {
                &self.signature
            }
            fn signature_mut(&mut self) -> &mut SignatureBytes {
                &mut self.signature
            }
            fn encode_body(&self, w: &mut Writer) {
                self.write_body(w)
            }
        }

        impl Canonical for $ty {
            fn encode(&self, w: &mut Writer) {
                self.write_body(w);
                self.signature.encode(w);
            }
            fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
                Self::read(r)
            }
        }
    };
}

pub mod attest;
pub mod git;
pub mod hetcons;

use bytes::Bytes;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::hash::Hash;
use crate::reference::Reference;

pub use attest::{
    ChainSlotAttestation, GitBranchAttestation, HetconsDecision, HetconsMessage, NakamotoAttestation, Signed,
    StoreForever, TimestampAttestation,
};
pub use git::{CommitBody, GitCommit, ParentDiff};
pub use hetcons::{Ballot, ChainRoot, Claim, HetconsValue, MeetRequest, Phase, QuorumConfig, SlotKey};

/// Arbitrary payload together with references to other blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Data {
    pub payload: Bytes,
    pub references: Vec<Reference>,
}

/// Advisory description of an application block type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDescription {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Block {
    Opaque(Bytes),
    TypeDescription(TypeDescription),
    Data(Data),
    StoreForever(StoreForever),
    ChainSlot(ChainSlotAttestation),
    Timestamp(TimestampAttestation),
    Nakamoto(NakamotoAttestation),
    GitBranch(GitBranchAttestation),
    HetconsMessage(HetconsMessage),
    HetconsDecision(HetconsDecision),
    GitCommit(GitCommit),
    HetconsProposal(MeetRequest),
    QuorumConfig(QuorumConfig),
    ChainRoot(ChainRoot),
}

/// Variant of a [`Block`]; the discriminant is the encoding tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum BlockKind {
    Opaque = 0x01,
    TypeDescription = 0x02,
    Data = 0x03,
    StoreForever = 0x10,
    ChainSlot = 0x21,
    Timestamp = 0x22,
    Nakamoto = 0x23,
    GitBranch = 0x24,
    HetconsMessage = 0x25,
    HetconsDecision = 0x26,
    GitCommit = 0x30,
    HetconsProposal = 0x31,
    QuorumConfig = 0x32,
    ChainRoot = 0x33,
}

impl BlockKind {
    pub const ALL: [BlockKind; 14] = [
        Self::Opaque,
        Self::TypeDescription,
        Self::Data,
        Self::StoreForever,
        Self::ChainSlot,
        Self::Timestamp,
        Self::Nakamoto,
        Self::GitBranch,
        Self::HetconsMessage,
        Self::HetconsDecision,
        Self::GitCommit,
        Self::HetconsProposal,
        Self::QuorumConfig,
        Self::ChainRoot,
    ];

    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Self::ALL
            .into_iter()
            .find(|k| *k as u8 == tag)
            .ok_or(DecodeError::UnknownTag { what: "block", tag })
    }

    pub fn is_availability_attestation(self) -> bool {
        self == Self::StoreForever
    }

    pub fn is_integrity_attestation(self) -> bool {
        (0x20..0x30).contains(&(self as u8))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Opaque => "opaque",
            Self::TypeDescription => "type-description",
            Self::Data => "data",
            Self::StoreForever => "store-forever",
            Self::ChainSlot => "chain-slot",
            Self::Timestamp => "timestamp",
            Self::Nakamoto => "nakamoto",
            Self::GitBranch => "git-branch",
            Self::HetconsMessage => "hetcons-message",
            Self::HetconsDecision => "hetcons-decision",
            Self::GitCommit => "git-commit",
            Self::HetconsProposal => "hetcons-proposal",
            Self::QuorumConfig => "quorum-config",
            Self::ChainRoot => "chain-root",
        }
    }
}

impl Block {
    pub fn opaque(payload: impl Into<Bytes>) -> Self {
        Self::Opaque(payload.into())
    }

    pub fn data(payload: impl Into<Bytes>, references: Vec<Reference>) -> Self {
        Self::Data(Data {
            payload: payload.into(),
            references,
        })
    }

    pub fn kind(&self) -> BlockKind {
        match self {
            Self::Opaque(_) => BlockKind::Opaque,
            Self::TypeDescription(_) => BlockKind::TypeDescription,
            Self::Data(_) => BlockKind::Data,
            Self::StoreForever(_) => BlockKind::StoreForever,
            Self::ChainSlot(_) => BlockKind::ChainSlot,
            Self::Timestamp(_) => BlockKind::Timestamp,
            Self::Nakamoto(_) => BlockKind::Nakamoto,
            Self::GitBranch(_) => BlockKind::GitBranch,
            Self::HetconsMessage(_) => BlockKind::HetconsMessage,
            Self::HetconsDecision(_) => BlockKind::HetconsDecision,
            Self::GitCommit(_) => BlockKind::GitCommit,
            Self::HetconsProposal(_) => BlockKind::HetconsProposal,
            Self::QuorumConfig(_) => BlockKind::QuorumConfig,
            Self::ChainRoot(_) => BlockKind::ChainRoot,
        }
    }

    pub fn hash(&self) -> Hash {
        Hash::of(&self.to_canonical_bytes())
    }

    pub fn reference(&self) -> Reference {
        Reference::bare(self.hash())
    }

    /// Verifies the issuer signature on signed attestations; other blocks pass.
    pub fn verify_signature(&self) -> bool {
        match self {
            Self::StoreForever(a) => a.verify_signature(),
            Self::ChainSlot(a) => a.verify_signature(),
            Self::Timestamp(a) => a.verify_signature(),
            Self::GitBranch(a) => a.verify_signature(),
            Self::HetconsMessage(a) => a.verify_signature(),
            Self::HetconsDecision(a) => a.verify_signature(),
            Self::GitCommit(c) => c.verify_signature(),
            _ => true,
        }
    }

    pub fn issuer(&self) -> Option<crate::crypto::CryptoId> {
        match self {
            Self::StoreForever(a) => Some(a.issuer),
            Self::ChainSlot(a) => Some(a.issuer),
            Self::Timestamp(a) => Some(a.issuer),
            Self::GitBranch(a) => Some(a.issuer),
            Self::HetconsMessage(a) => Some(a.issuer),
            Self::HetconsDecision(a) => Some(a.issuer),
            Self::GitCommit(c) => Some(c.author),
            _ => None,
        }
    }

    /// Every reference held directly in this block, in field order.
    pub fn references(&self) -> Vec<&Reference> {
        match self {
            Self::Opaque(_) | Self::TypeDescription(_) | Self::QuorumConfig(_) => vec![],
            Self::Data(d) => d.references.iter().collect(),
            Self::StoreForever(a) => vec![&a.subject],
            Self::ChainSlot(a) => vec![&a.block, &a.root, &a.parent],
            Self::Timestamp(a) => a.subjects.iter().collect(),
            Self::Nakamoto(a) => vec![&a.block, &a.parent],
            Self::GitBranch(a) => vec![&a.commit],
            Self::HetconsMessage(a) => a.justification.iter().collect(),
            Self::HetconsDecision(a) => a.quorum.iter().collect(),
            Self::GitCommit(c) => c.parents().collect(),
            Self::HetconsProposal(m) => m.chains.iter().map(|(r, _)| r).chain([&m.block]).collect(),
            Self::ChainRoot(c) => vec![&c.config],
        }
    }

    /// Hashes of every block this one points at: referenced blocks, the
    /// attestations bundled in those references, and hash-only links such
    /// as covered sets.
    pub fn linked_hashes(&self) -> Vec<Hash> {
        fn walk(r: &Reference, out: &mut Vec<Hash>) {
            out.push(r.hash);
            out.extend(r.availability.iter().copied());
            for i in r.integrity() {
                walk(i, out);
            }
        }
        let mut out = Vec::new();
        for r in self.references() {
            walk(r, &mut out);
        }
        match self {
            Self::StoreForever(a) => out.extend(a.covered.iter().copied()),
            Self::HetconsMessage(m) => {
                for c in &m.claims {
                    out.extend(c.quorum.iter().copied());
                }
            }
            _ => {}
        }
        out.sort();
        out.dedup();
        out
    }

    /// Attestations bundled in this block's references, at any nesting depth.
    pub fn bundled_attestations(&self) -> Vec<Hash> {
        fn walk(r: &Reference, out: &mut Vec<Hash>) {
            out.extend(r.availability.iter().copied());
            for i in r.integrity() {
                out.push(i.hash);
                walk(i, out);
            }
        }
        let mut out = Vec::new();
        for r in self.references() {
            walk(r, &mut out);
        }
        out.sort();
        out.dedup();
        out
    }

    /// Indexable `(field, value)` pairs used by pattern queries. A field
    /// may appear several times when it is set-valued.
    pub fn fields(&self) -> Vec<(&'static str, Vec<u8>)> {
        let h = |r: &Reference| r.hash.digest.to_vec();
        let n = |v: u64| v.to_be_bytes().to_vec();
        let id = |i: &crate::crypto::CryptoId| i.key.to_vec();
        match self {
            Self::Opaque(_) | Self::QuorumConfig(_) => vec![],
            Self::TypeDescription(t) => vec![("name", t.name.as_bytes().to_vec())],
            Self::Data(d) => d.references.iter().map(|r| ("reference", h(r))).collect(),
            Self::StoreForever(a) => {
                let mut f = vec![("subject", h(&a.subject)), ("issuer", id(&a.issuer))];
                f.extend(a.covered.iter().map(|c| ("covered", c.digest.to_vec())));
                f
            }
            Self::ChainSlot(a) => vec![
                ("block", h(&a.block)),
                ("root", h(&a.root)),
                ("slot", n(a.slot)),
                ("parent", h(&a.parent)),
                ("issuer", id(&a.issuer)),
            ],
            Self::Timestamp(a) => {
                let mut f = vec![("time", n(a.time)), ("issuer", id(&a.issuer))];
                f.extend(a.subjects.iter().map(|s| ("subject", h(s))));
                f
            }
            Self::Nakamoto(a) => vec![("block", h(&a.block)), ("parent", h(&a.parent))],
            Self::GitBranch(a) => vec![
                ("branch", a.branch.as_bytes().to_vec()),
                ("commit", h(&a.commit)),
                ("time", n(a.time)),
                ("issuer", id(&a.issuer)),
            ],
            Self::HetconsMessage(m) => {
                let mut f = vec![
                    ("phase", vec![m.phase as u8]),
                    ("block", m.value.block.digest.to_vec()),
                    ("issuer", id(&m.issuer)),
                ];
                f.extend(m.value.slots.iter().map(|s| ("root", s.root.digest.to_vec())));
                f
            }
            Self::HetconsDecision(d) => {
                let mut f = vec![("block", d.value.block.digest.to_vec()), ("issuer", id(&d.issuer))];
                f.extend(d.value.slots.iter().map(|s| ("root", s.root.digest.to_vec())));
                f
            }
            Self::GitCommit(c) => {
                let mut f = vec![("author", id(&c.author)), ("content", c.content_hash.digest.to_vec())];
                f.extend(c.parents().map(|p| ("parent", h(p))));
                f
            }
            Self::HetconsProposal(m) => {
                let mut f = vec![("block", h(&m.block))];
                f.extend(m.chains.iter().map(|(r, _)| ("root", h(r))));
                f
            }
            Self::ChainRoot(c) => vec![("name", c.name.as_bytes().to_vec()), ("config", h(&c.config))],
        }
    }
}

impl Canonical for Data {
    fn encode(&self, w: &mut Writer) {
        w.bytes(&self.payload);
        w.list(self.references.iter());
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            payload: r.bytes()?,
            references: r.list()?,
        })
    }
}

impl Canonical for TypeDescription {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.name);
        w.str(&self.description);
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            name: r.str()?,
            description: r.str()?,
        })
    }
}

impl Canonical for Block {
    fn encode(&self, w: &mut Writer) {
        w.tag(self.kind() as u8);
        match self {
            Self::Opaque(b) => w.bytes(b),
            Self::TypeDescription(t) => t.encode(w),
            Self::Data(d) => d.encode(w),
            Self::StoreForever(a) => a.encode(w),
            Self::ChainSlot(a) => a.encode(w),
            Self::Timestamp(a) => a.encode(w),
            Self::Nakamoto(a) => a.encode(w),
            Self::GitBranch(a) => a.encode(w),
            Self::HetconsMessage(a) => a.encode(w),
            Self::HetconsDecision(a) => a.encode(w),
            Self::GitCommit(c) => c.encode(w),
            Self::HetconsProposal(m) => m.encode(w),
            Self::QuorumConfig(q) => q.encode(w),
            Self::ChainRoot(c) => c.encode(w),
        }
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(match BlockKind::from_tag(r.tag()?)? {
            BlockKind::Opaque => Self::Opaque(r.bytes()?),
            BlockKind::TypeDescription => Self::TypeDescription(TypeDescription::decode(r)?),
            BlockKind::Data => Self::Data(Data::decode(r)?),
            BlockKind::StoreForever => Self::StoreForever(StoreForever::decode(r)?),
            BlockKind::ChainSlot => Self::ChainSlot(ChainSlotAttestation::decode(r)?),
            BlockKind::Timestamp => Self::Timestamp(TimestampAttestation::decode(r)?),
            BlockKind::Nakamoto => Self::Nakamoto(NakamotoAttestation::decode(r)?),
            BlockKind::GitBranch => Self::GitBranch(GitBranchAttestation::decode(r)?),
            BlockKind::HetconsMessage => Self::HetconsMessage(HetconsMessage::decode(r)?),
            BlockKind::HetconsDecision => Self::HetconsDecision(HetconsDecision::decode(r)?),
            BlockKind::GitCommit => Self::GitCommit(GitCommit::decode(r)?),
            BlockKind::HetconsProposal => Self::HetconsProposal(MeetRequest::decode(r)?),
            BlockKind::QuorumConfig => Self::QuorumConfig(QuorumConfig::decode(r)?),
            BlockKind::ChainRoot => Self::ChainRoot(ChainRoot::decode(r)?),
        })
    }
}

/// True when `reference` names exactly `block`. Bundled attestations play
/// no part.
pub fn verify_reference(reference: &Reference, block: &Block) -> bool {
    reference.hash == block.hash()
}
