//! Client side of the life of a block: mint it, get availability
//! attestations from Wilburs, get integrity attestations from Ferns, and
//! assemble the reference that bundles both.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;

use crate::block::{verify_reference, Block, MeetRequest};
use crate::codec::Canonical;
use crate::crypto::CryptoId;
use crate::hash::Hash;
use crate::message::{AvailabilityPolicy, IntegrityRequest, Response};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::{Exchange, Frame, FrameKind, NodeAddress, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("availability: wanted {wanted} attestations, got them from {responders:?}")]
    Availability {
        wanted: usize,
        responders: Vec<NodeAddress>,
    },
    #[error("quorum: need {need} attestations, got {got} ({})", errors.join("; "))]
    Quorum {
        need: usize,
        got: usize,
        errors: Vec<String>,
    },
    #[error("refused: {0}")]
    Refused(String),
    /// The slot was decided for another block; carries that decision.
    #[error("slot already decided by {}", .0.hash())]
    Conflict(Box<Block>),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Where an integrity attestation comes from.
#[derive(Debug, Clone)]
pub enum Target {
    /// Agreement ferns, `3f + 1` of them; a quorum is `2f + 1`.
    Agreement {
        ferns: Vec<NodeAddress>,
        f: usize,
        root: Reference,
        slot: u64,
        parent: Reference,
    },
    Timestamp {
        fern: NodeAddress,
    },
    /// Proof-of-work miners; the first answer wins.
    Nakamoto {
        miners: Vec<NodeAddress>,
    },
    Branch {
        fern: NodeAddress,
        branch: String,
    },
    /// A consensus sequencer and the slot wanted in each chain.
    Hetcons {
        sequencer: NodeAddress,
        chains: Vec<(Reference, u64)>,
    },
}

/// A block referencing `parents`, bundles included.
pub fn mint(payload: impl Into<Bytes>, parents: Vec<Reference>) -> Block {
    Block::data(payload, parents)
}

/// The quorum size for `f` tolerated faults.
pub fn quorum(f: usize) -> usize {
    2 * f + 1
}

/// Whether `attestation` vouches for the block `hash` names.
fn attests(attestation: &Block, hash: &Hash) -> bool {
    match attestation {
        Block::ChainSlot(a) => a.block.hash == *hash,
        Block::Timestamp(a) => a.subjects.iter().any(|s| s.hash == *hash),
        Block::Nakamoto(a) => a.block.hash == *hash,
        Block::GitBranch(a) => a.commit.hash == *hash,
        Block::HetconsDecision(a) => a.value.block == *hash,
        _ => false,
    }
}

/// Checks every attestation bundled in `reference` without the network:
/// each must be held in `store`, correctly signed, and about the referenced
/// block. Nested bundles are checked too.
pub fn verify_bundle(reference: &Reference, store: &BlockStore) -> Result<(), String> {
    for h in &reference.availability {
        match store.get(h) {
            Some(b @ Block::StoreForever(_)) if !b.verify_signature() => return Err(format!("bad signature on {h}")),
            Some(Block::StoreForever(a)) if a.promised().any(|p| p == reference.hash) => {}
            Some(_) => return Err(format!("{h} is not a pledge to store {}", reference.hash)),
            None => return Err(format!("availability attestation {h} not held")),
        }
    }
    for i in reference.integrity() {
        let Some(b) = store.get(&i.hash) else {
            return Err(format!("integrity attestation {} not held", i.hash));
        };
        if !verify_reference(i, &b) || !b.kind().is_integrity_attestation() {
            return Err(format!("{} is not an integrity attestation", i.hash));
        }
        if !b.verify_signature() {
            return Err(format!("bad signature on {}", i.hash));
        }
        if !attests(&b, &reference.hash) {
            return Err(format!("{} does not attest {}", i.hash, reference.hash));
        }
        verify_bundle(i, store)?;
    }
    Ok(())
}

pub struct Client {
    store: BlockStore,
    /// Send the attestations bundled in a block's references ahead of the
    /// block, so the receiver holds everything the block points at.
    pub send_everything: bool,
    pub timeout_ms: u64,
    /// How long a Wilbur may wait for a subject that has not arrived.
    pub wait_ms: u64,
}

impl Default for Client {
    fn default() -> Self {
        Self::new()
    }
}

impl Client {
    pub fn new() -> Self {
        Self {
            store: BlockStore::new(),
            send_everything: true,
            timeout_ms: 30_000,
            wait_ms: 0,
        }
    }

    /// Attestations this client has collected, plus anything remembered.
    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn remember(&self, block: Block) {
        let _ = self.store.insert(block);
    }

    /// Held attestation blocks bundled anywhere inside `references`.
    fn bundled<'a>(&self, references: impl IntoIterator<Item = &'a Reference>) -> Vec<Block> {
        fn walk(r: &Reference, out: &mut BTreeSet<Hash>) {
            out.extend(r.availability.iter().copied());
            for i in r.integrity() {
                out.insert(i.hash);
                walk(i, out);
            }
        }
        let mut hashes = BTreeSet::new();
        for r in references {
            walk(r, &mut hashes);
        }
        hashes.iter().filter_map(|h| self.store.get(h)).collect()
    }

    /// What to stream ahead of `block` itself.
    fn companions(&self, block: &Block) -> Vec<Block> {
        if self.send_everything {
            self.bundled(block.references())
        } else {
            vec![]
        }
    }

    /// Streams `blocks` and then sends `request` to every address; returns
    /// the request correlation per address.
    fn fan_out(
        &mut self,
        ex: &mut dyn Exchange,
        to: &[NodeAddress],
        blocks: &[Block],
        kind: FrameKind,
        request: &[u8],
    ) -> Result<BTreeMap<u64, NodeAddress>, ClientError> {
        let mut wanted = BTreeMap::new();
        let mut first_err = None;
        // Encoded once; every destination shares the buffers.
        let payloads: Vec<Bytes> = blocks.iter().map(|b| Bytes::from(b.to_canonical_bytes())).collect();
        for addr in to {
            let result = (|| {
                if !payloads.is_empty() {
                    let corr = ex.next_correlation();
                    for p in &payloads {
                        ex.send(addr, Frame::new(FrameKind::SendBlocks, corr, p.clone()))?;
                    }
                    ex.send(addr, Frame::new(FrameKind::SendBlocks, corr, Bytes::new()))?;
                }
                let corr = ex.next_correlation();
                ex.send(addr, Frame::new(kind, corr, Bytes::copy_from_slice(request)))?;
                Ok::<u64, TransportError>(corr)
            })();
            match result {
                Ok(corr) => {
                    wanted.insert(corr, addr.clone());
                }
                Err(e) => first_err = first_err.or(Some(e)),
            }
        }
        match (wanted.is_empty(), first_err) {
            (true, Some(e)) => Err(e.into()),
            _ => Ok(wanted),
        }
    }

    /// Feeds responses to `wanted` into `on` until it returns true, every server
    /// answered, or the timeout passes.
    fn collect(
        &self,
        ex: &mut dyn Exchange,
        mut wanted: BTreeMap<u64, NodeAddress>,
        mut on: impl FnMut(&NodeAddress, Response) -> bool,
    ) {
        let deadline = ex.now_ms().saturating_add(self.timeout_ms);
        while !wanted.is_empty() {
            let Some((from, f)) = ex.recv_until(deadline) else {
                return;
            };
            if f.kind != FrameKind::Response || wanted.get(&f.correlation) != Some(&from) {
                continue;
            }
            wanted.remove(&f.correlation);
            let r = Response::from_frame(&f).unwrap_or_else(|e| Response::error(crate::message::ErrorKind::Malformed, e.to_string()));
            if on(&from, r) {
                return;
            }
        }
    }

    /// Stores `block` at the given Wilburs and returns the first `t`
    /// availability attestations from distinct issuers.
    pub fn replicate(
        &mut self,
        ex: &mut dyn Exchange,
        block: &Block,
        wilburs: &[NodeAddress],
        t: usize,
    ) -> Result<Vec<Block>, ClientError> {
        let policy = AvailabilityPolicy {
            subjects: [block.reference()].into(),
            cover_referenced_attestations: self.send_everything && !block.bundled_attestations().is_empty(),
            wait_ms: self.wait_ms,
        };
        let mut blocks = self.companions(block);
        blocks.push(block.clone());
        let wanted = self.fan_out(ex, wilburs, &blocks, FrameKind::ReqAvail, &policy.to_canonical_bytes())?;
        let mut got: Vec<Block> = vec![];
        let mut issuers = BTreeSet::new();
        let mut responders = vec![];
        let hash = block.hash();
        self.collect(ex, wanted, |from, r| {
            if let Response::Attestation { attestation, .. } = r {
                let ok = matches!(&attestation, Block::StoreForever(a) if a.promised().any(|p| p == hash))
                    && attestation.verify_signature();
                if ok && issuers.insert(attestation.issuer()) {
                    responders.push(from.clone());
                    got.push(attestation);
                }
            }
            got.len() >= t
        });
        if got.len() < t {
            return Err(ClientError::Availability { wanted: t, responders });
        }
        for a in &got {
            self.remember(a.clone());
        }
        Ok(got)
    }

    /// Sends `request` to every fern and gathers `quorum(f)` valid
    /// attestations from distinct issuers.
    pub fn commit_quorum(
        &mut self,
        ex: &mut dyn Exchange,
        ferns: &[NodeAddress],
        f: usize,
        request: &IntegrityRequest,
        preload: &[Block],
    ) -> Result<Vec<Block>, ClientError> {
        let need = quorum(f);
        let wanted = self.fan_out(ex, ferns, preload, FrameKind::ReqIntegrity, &request.to_canonical_bytes())?;
        let total = wanted.len();
        let mut got: BTreeMap<CryptoId, Block> = BTreeMap::new();
        let mut errors = vec![];
        self.collect(ex, wanted, |from, r| {
            match r {
                Response::Attestation { attestation, .. } if matches_request(&attestation, request) && attestation.verify_signature() => {
                    if let Some(id) = attestation.issuer() {
                        got.entry(id).or_insert(attestation);
                    }
                }
                Response::Error { kind, message } => errors.push(format!("{from}: {kind}: {message}")),
                other => errors.push(format!("{from}: unexpected {other:?}")),
            }
            got.len() >= need
        });
        if got.len() < need {
            let missing = total - got.len() - errors.len();
            if missing > 0 {
                errors.push(format!("{missing} did not answer"));
            }
            return Err(ClientError::Quorum {
                need,
                got: got.len(),
                errors,
            });
        }
        let attestations: Vec<Block> = got.into_values().collect();
        for a in &attestations {
            self.remember(a.clone());
        }
        Ok(attestations)
    }

    fn one(
        &mut self,
        ex: &mut dyn Exchange,
        to: &[NodeAddress],
        request: &IntegrityRequest,
        preload: &[Block],
    ) -> Result<Block, ClientError> {
        let wanted = self.fan_out(ex, to, preload, FrameKind::ReqIntegrity, &request.to_canonical_bytes())?;
        let mut outcome = None;
        let mut errors = vec![];
        self.collect(ex, wanted, |from, r| {
            match r {
                Response::Attestation { attestation, .. } if matches_request(&attestation, request) && attestation.verify_signature() => {
                    outcome = Some(Ok(attestation));
                }
                Response::Conflict { existing } => outcome = Some(Err(ClientError::Conflict(Box::new(existing)))),
                Response::Error { kind, message } => errors.push(format!("{from}: {kind}: {message}")),
                other => errors.push(format!("{from}: unexpected {other:?}")),
            }
            outcome.is_some()
        });
        match outcome {
            Some(Ok(a)) => {
                self.remember(a.clone());
                Ok(a)
            }
            Some(Err(e)) => Err(e),
            None if errors.is_empty() => Err(TransportError::Timeout(self.timeout_ms).into()),
            None => Err(ClientError::Refused(errors.join("; "))),
        }
    }

    /// Gets integrity attestations for `block` from `target` and returns
    /// the reference bundling them with the `availability` attestations.
    pub fn commit(
        &mut self,
        ex: &mut dyn Exchange,
        block: &Block,
        availability: &[Block],
        target: &Target,
    ) -> Result<Reference, ClientError> {
        let mut reference = block.reference();
        for a in availability {
            self.remember(a.clone());
            reference = reference.with_availability(a.hash());
        }
        // Ferns check availability evidence from their own stores, so it
        // travels ahead of the request. Without any, the fern gets the block.
        let mut preload: Vec<Block> = availability.to_vec();
        let body_needed = availability.is_empty() || matches!(target, Target::Branch { .. });
        if body_needed {
            preload.extend(self.companions(block));
            preload.push(block.clone());
        }
        let attestations = match target {
            Target::Agreement {
                ferns,
                f,
                root,
                slot,
                parent,
            } => {
                if self.send_everything {
                    preload.extend(self.bundled([parent]));
                }
                let request = IntegrityRequest::ChainSlot {
                    block: reference.clone(),
                    root: root.clone(),
                    slot: *slot,
                    parent: parent.clone(),
                };
                self.commit_quorum(ex, ferns, *f, &request, &dedup(preload))?
            }
            Target::Timestamp { fern } => {
                let request = IntegrityRequest::Timestamp {
                    subjects: vec![reference.clone()],
                    peer_batch: false,
                };
                vec![self.one(ex, std::slice::from_ref(fern), &request, &dedup(preload))?]
            }
            Target::Nakamoto { miners } => {
                let request = IntegrityRequest::Nakamoto {
                    block: reference.clone(),
                };
                vec![self.one(ex, miners, &request, &dedup(preload))?]
            }
            Target::Branch { fern, branch } => {
                let request = IntegrityRequest::GitBranch {
                    branch: branch.clone(),
                    commit: reference.clone(),
                };
                vec![self.one(ex, std::slice::from_ref(fern), &request, &dedup(preload))?]
            }
            Target::Hetcons { sequencer, chains } => {
                let request = IntegrityRequest::Hetcons(MeetRequest {
                    chains: chains.clone(),
                    block: reference.clone(),
                });
                vec![self.one(ex, std::slice::from_ref(sequencer), &request, &dedup(preload))?]
            }
        };
        for a in &attestations {
            reference = reference
                .with_integrity(Reference::bare(a.hash()))
                .expect("bare attestation references nest one level");
        }
        Ok(reference)
    }
}

fn dedup(blocks: Vec<Block>) -> Vec<Block> {
    let mut seen = BTreeSet::new();
    blocks.into_iter().filter(|b| seen.insert(b.hash())).collect()
}

/// Whether a returned attestation answers `request` rather than something
/// else.
fn matches_request(attestation: &Block, request: &IntegrityRequest) -> bool {
    match (attestation, request) {
        (
            Block::ChainSlot(a),
            IntegrityRequest::ChainSlot {
                block,
                root,
                slot,
                parent,
            },
        ) => a.block.hash == block.hash && a.root.hash == root.hash && a.slot == *slot && a.parent.hash == parent.hash,
        (Block::Timestamp(a), IntegrityRequest::Timestamp { subjects, .. }) => {
            subjects.iter().all(|s| a.subjects.iter().any(|t| t.hash == s.hash))
        }
        (Block::Nakamoto(a), IntegrityRequest::Nakamoto { block }) => a.block.hash == block.hash,
        (Block::GitBranch(a), IntegrityRequest::GitBranch { branch, commit }) => {
            a.branch == *branch && a.commit.hash == commit.hash
        }
        (Block::HetconsDecision(a), IntegrityRequest::Hetcons(m)) => a.value == m.value(),
        _ => false,
    }
}
