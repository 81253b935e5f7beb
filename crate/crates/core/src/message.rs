//! Request and response bodies carried in transport frames.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use bytes::Bytes;

use crate::block::{Block, BlockKind, MeetRequest};
use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::hash::Hash;
use crate::reference::Reference;
use crate::transport::{Exchange, Frame, FrameKind, NodeAddress, TransportError};

/// What a client wants an availability server to promise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityPolicy {
    pub subjects: BTreeSet<Reference>,
    /// Also cover the attestations referenced from inside the subjects.
    pub cover_referenced_attestations: bool,
    /// How long to wait for missing subjects.
    pub wait_ms: u64,
}

impl Canonical for AvailabilityPolicy {
    fn encode(&self, w: &mut Writer) {
        w.set(self.subjects.iter());
        w.bool(self.cover_referenced_attestations);
        w.u64(self.wait_ms);
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        let subjects: BTreeSet<Reference> = r.set()?.into_iter().collect();
        if subjects.is_empty() {
            return Err(DecodeError::Invalid("policy without subjects".into()));
        }
        Ok(Self {
            subjects,
            cover_referenced_attestations: r.bool()?,
            wait_ms: r.u64()?,
        })
    }
}

/// Fill-in-the-blank query: a block kind and the field values it must have.
/// Set-valued fields match when any element equals the given value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub kind: BlockKind,
    pub fields: Vec<(String, Bytes)>,
}

impl Pattern {
    pub fn any(kind: BlockKind) -> Self {
        Self { kind, fields: vec![] }
    }

    pub fn with(mut self, field: &str, value: impl Into<Bytes>) -> Self {
        self.fields.push((field.to_owned(), value.into()));
        self
    }

    /// Matches field `field` against a referenced block's hash.
    pub fn with_hash(self, field: &str, hash: &Hash) -> Self {
        self.with(field, hash.digest.to_vec())
    }

    pub fn matches(&self, block: &Block) -> bool {
        if block.kind() != self.kind {
            return false;
        }
        let have = block.fields();
        self.fields
            .iter()
            .all(|(name, value)| have.iter().any(|(n, v)| n == name && v[..] == value[..]))
    }
}

impl Canonical for Pattern {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.kind as u8);
        w.nested_with(|w| {
            for (name, value) in &self.fields {
                w.str(name);
                w.bytes(value);
            }
        });
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        let kind = BlockKind::from_tag(r.u8()?)?;
        let mut inner = Reader::new(r.bytes()?);
        let mut fields = Vec::new();
        while !inner.is_done() {
            fields.push((inner.str()?, inner.bytes()?));
        }
        Ok(Self { kind, fields })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    /// The block with this hash, waiting up to `wait_ms` for it to arrive.
    Hash { hash: Hash, wait_ms: u64 },
    Pattern(Pattern),
}

impl Canonical for Query {
    fn encode(&self, w: &mut Writer) {
        match self {
            Self::Hash { hash, wait_ms } => {
                w.tag(1);
                hash.encode(w);
                w.u64(*wait_ms);
            }
            Self::Pattern(p) => {
                w.tag(2);
                p.encode(w);
            }
        }
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(match r.tag()? {
            1 => Self::Hash {
                hash: Hash::decode(r)?,
                wait_ms: r.u64()?,
            },
            2 => Self::Pattern(Pattern::decode(r)?),
            tag => return Err(DecodeError::UnknownTag { what: "query", tag }),
        })
    }
}

/// An integrity attestation request: the attestation's fields without the
/// signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntegrityRequest {
    ChainSlot {
        block: Reference,
        root: Reference,
        slot: u64,
        parent: Reference,
    },
    Timestamp {
        subjects: Vec<Reference>,
        /// Sent by a peer fern entangling its batch; does not count toward
        /// the receiver's own batch.
        peer_batch: bool,
    },
    /// Mine `block` onto the miner's best chain.
    Nakamoto {
        block: Reference,
    },
    GitBranch {
        branch: String,
        commit: Reference,
    },
    Hetcons(MeetRequest),
}

impl Canonical for IntegrityRequest {
    fn encode(&self, w: &mut Writer) {
        match self {
            Self::ChainSlot {
                block,
                root,
                slot,
                parent,
            } => {
                w.tag(1);
                w.nested(block);
                w.nested(root);
                w.u64(*slot);
                w.nested(parent);
            }
            Self::Timestamp { subjects, peer_batch } => {
                w.tag(2);
                w.list(subjects.iter());
                w.bool(*peer_batch);
            }
            Self::Nakamoto { block } => {
                w.tag(3);
                w.nested(block);
            }
            Self::GitBranch { branch, commit } => {
                w.tag(4);
                w.str(branch);
                w.nested(commit);
            }
            Self::Hetcons(m) => {
                w.tag(5);
                w.nested(m);
            }
        }
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(match r.tag()? {
            1 => Self::ChainSlot {
                block: r.nested()?,
                root: r.nested()?,
                slot: r.u64()?,
                parent: r.nested()?,
            },
            2 => Self::Timestamp {
                subjects: r.list()?,
                peer_batch: r.bool()?,
            },
            3 => Self::Nakamoto { block: r.nested()? },
            4 => Self::GitBranch {
                branch: r.str()?,
                commit: r.nested()?,
            },
            5 => Self::Hetcons(r.nested()?),
            tag => return Err(DecodeError::UnknownTag { what: "integrity request", tag }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorKind {
    Malformed = 1,
    /// Would contradict an earlier attestation.
    Refused = 2,
    /// Evidence does not meet the server's configuration.
    Policy = 3,
    Timeout = 4,
    /// Needed blocks are missing or invalid.
    Evidence = 5,
    Unsupported = 6,
}

impl ErrorKind {
    fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            1 => Self::Malformed,
            2 => Self::Refused,
            3 => Self::Policy,
            4 => Self::Timeout,
            5 => Self::Evidence,
            6 => Self::Unsupported,
            tag => return Err(DecodeError::UnknownTag { what: "error kind", tag }),
        })
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Malformed => "malformed",
            Self::Refused => "refused",
            Self::Policy => "policy",
            Self::Timeout => "timeout",
            Self::Evidence => "evidence",
            Self::Unsupported => "unsupported",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    /// Closes a block stream: `count` blocks were accepted.
    Ok { count: u64 },
    /// Block at `offset` of a stream was rejected.
    StreamError { offset: u64, message: String },
    /// An attestation, plus blocks needed to check it offline.
    Attestation { attestation: Block, supporting: Vec<Block> },
    Blocks(Vec<Block>),
    Error { kind: ErrorKind, message: String },
    /// Refused because this earlier attestation already decided otherwise.
    Conflict { existing: Block },
}

impl Response {
    pub fn error(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self::Error {
            kind,
            message: message.into(),
        }
    }

    pub fn to_frame(&self, correlation: u64) -> Frame {
        Frame::new(FrameKind::Response, correlation, self.to_canonical_bytes())
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, DecodeError> {
        Self::from_canonical_bytes(frame.payload.clone())
    }
}

impl Canonical for Response {
    fn encode(&self, w: &mut Writer) {
        match self {
            Self::Ok { count } => {
                w.tag(1);
                w.u64(*count);
            }
            Self::StreamError { offset, message } => {
                w.tag(2);
                w.u64(*offset);
                w.str(message);
            }
            Self::Attestation { attestation, supporting } => {
                w.tag(3);
                w.nested(attestation);
                w.list(supporting.iter());
            }
            Self::Blocks(blocks) => {
                w.tag(4);
                w.list(blocks.iter());
            }
            Self::Error { kind, message } => {
                w.tag(5);
                w.u8(*kind as u8);
                w.str(message);
            }
            Self::Conflict { existing } => {
                w.tag(6);
                w.nested(existing);
            }
        }
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(match r.tag()? {
            1 => Self::Ok { count: r.u64()? },
            2 => Self::StreamError {
                offset: r.u64()?,
                message: r.str()?,
            },
            3 => Self::Attestation {
                attestation: r.nested()?,
                supporting: r.list()?,
            },
            4 => Self::Blocks(r.list()?),
            5 => Self::Error {
                kind: ErrorKind::from_tag(r.u8()?)?,
                message: r.str()?,
            },
            6 => Self::Conflict { existing: r.nested()? },
            tag => return Err(DecodeError::UnknownTag { what: "response", tag }),
        })
    }
}

pub fn frame_of<T: Canonical>(kind: FrameKind, correlation: u64, body: &T) -> Frame {
    Frame::new(kind, correlation, body.to_canonical_bytes())
}

/// What one incoming SendBlocks frame amounts to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEvent {
    Block { offset: u64, block: Block },
    Bad { offset: u64, error: DecodeError },
    /// The sender closed the stream after `accepted` good blocks.
    End { accepted: u64 },
}

/// Per-sender stream offsets for SendBlocks.
#[derive(Debug, Default)]
pub struct BlockStreams {
    open: HashMap<(NodeAddress, u64), (u64, u64)>,
}

impl BlockStreams {
    pub fn accept(&mut self, from: &NodeAddress, frame: &Frame) -> StreamEvent {
        let key = (from.clone(), frame.correlation);
        if frame.payload.is_empty() {
            let (_, accepted) = self.open.remove(&key).unwrap_or((0, 0));
            return StreamEvent::End { accepted };
        }
        let entry = self.open.entry(key).or_insert((0, 0));
        let offset = entry.0;
        entry.0 += 1;
        match Block::from_canonical_bytes(frame.payload.clone()) {
            Ok(block) => {
                entry.1 += 1;
                StreamEvent::Block { offset, block }
            }
            Err(error) => StreamEvent::Bad { offset, error },
        }
    }
}

/// Result of a client-side block stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamOutcome {
    pub accepted: u64,
    pub errors: Vec<(u64, String)>,
}

/// Frames for one block stream: each block, then the closing frame.
pub fn stream_frames<'a>(correlation: u64, blocks: impl IntoIterator<Item = &'a Block>) -> Vec<Frame> {
    let mut frames: Vec<Frame> = blocks
        .into_iter()
        .map(|b| frame_of(FrameKind::SendBlocks, correlation, b))
        .collect();
    frames.push(Frame::new(FrameKind::SendBlocks, correlation, Bytes::new()));
    frames
}

/// Streams raw payloads (normally encoded blocks) and waits for the close
/// acknowledgement.
pub fn send_payloads(
    ex: &mut dyn Exchange,
    to: &NodeAddress,
    payloads: Vec<Bytes>,
    timeout_ms: u64,
) -> Result<StreamOutcome, TransportError> {
    let corr = ex.next_correlation();
    for p in payloads {
        if p.is_empty() {
            continue;
        }
        ex.send(to, Frame::new(FrameKind::SendBlocks, corr, p))?;
    }
    ex.send(to, Frame::new(FrameKind::SendBlocks, corr, Bytes::new()))?;
    let deadline = ex.now_ms().saturating_add(timeout_ms);
    let mut out = StreamOutcome::default();
    while let Some((from, f)) = ex.recv_until(deadline) {
        if &from != to || f.correlation != corr || f.kind != FrameKind::Response {
            continue;
        }
        match Response::from_frame(&f) {
            Ok(Response::StreamError { offset, message }) => out.errors.push((offset, message)),
            Ok(Response::Ok { count }) => {
                out.accepted = count;
                return Ok(out);
            }
            Ok(other) => return Err(TransportError::Malformed(format!("unexpected {other:?}"))),
            Err(e) => return Err(TransportError::Malformed(e.to_string())),
        }
    }
    Err(TransportError::Timeout(timeout_ms))
}

/// Streams `blocks` to one server and waits for its acknowledgement.
pub fn send_blocks(
    ex: &mut dyn Exchange,
    to: &NodeAddress,
    blocks: &[Block],
    timeout_ms: u64,
) -> Result<StreamOutcome, TransportError> {
    let payloads = blocks.iter().map(|b| Bytes::from(b.to_canonical_bytes())).collect();
    send_payloads(ex, to, payloads, timeout_ms)
}
