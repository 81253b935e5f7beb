//! Integrity servers. Each kind implements [`Integrity`] and runs inside a
//! [`Fern`], which keeps a local block store fed by block streams.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::block::Block;
use crate::codec::Canonical;
use crate::crypto::CryptoId;
use crate::hash::Hash;
use crate::message::{BlockStreams, ErrorKind, IntegrityRequest, Query, Response, StreamEvent};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::{Context, Frame, FrameKind, Node, NodeAddress};

pub mod agreement;
pub mod fault;
pub mod gitsim;
pub mod hetcons;
pub mod nakamoto;
pub mod timestamp;

/// Why a fern declined to attest.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FernError {
    /// Attesting would contradict an earlier attestation.
    #[error("refused: {0}")]
    Refused(String),
    #[error("policy: {0}")]
    Policy(String),
    #[error("evidence: {0}")]
    Evidence(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl FernError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Self::Refused(_) => ErrorKind::Refused,
            Self::Policy(_) => ErrorKind::Policy,
            Self::Evidence(_) => ErrorKind::Evidence,
            Self::Unsupported(_) => ErrorKind::Unsupported,
        }
    }

    pub fn to_response(&self) -> Response {
        let message = match self {
            Self::Refused(m) | Self::Policy(m) | Self::Evidence(m) | Self::Unsupported(m) => m.clone(),
        };
        Response::error(self.kind(), message)
    }
}

pub fn attestation_response(attestation: Block) -> Response {
    Response::Attestation {
        attestation,
        supporting: vec![],
    }
}

/// At least `min` distinct issuers, drawn from `issuers` unless it is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Requirement {
    pub min: usize,
    pub issuers: BTreeSet<CryptoId>,
}

impl Requirement {
    pub fn new(min: usize, issuers: impl IntoIterator<Item = CryptoId>) -> Self {
        Self {
            min,
            issuers: issuers.into_iter().collect(),
        }
    }

    pub fn accepts(&self, issuer: &CryptoId) -> bool {
        self.issuers.is_empty() || self.issuers.contains(issuer)
    }

    /// Checks that enough distinct accepted issuers signed attestations for
    /// which `valid` holds. `what` names the requirement in the error.
    pub fn check<'a>(
        &self,
        what: &str,
        attestations: impl IntoIterator<Item = &'a Block>,
        valid: impl Fn(&Block) -> bool,
    ) -> Result<(), FernError> {
        if self.min == 0 {
            return Ok(());
        }
        let issuers: BTreeSet<CryptoId> = attestations
            .into_iter()
            .filter(|b| valid(b) && b.verify_signature())
            .filter_map(Block::issuer)
            .filter(|i| self.accepts(i))
            .collect();
        if issuers.len() >= self.min {
            Ok(())
        } else {
            Err(FernError::Policy(format!(
                "{what}: need {} accepted attestations, found {}",
                self.min,
                issuers.len()
            )))
        }
    }
}

/// Availability attestations bundled in `r` that are held locally and
/// promise to keep its target.
pub fn availability_evidence(store: &BlockStore, r: &Reference) -> Vec<Block> {
    r.availability
        .iter()
        .filter_map(|h| store.get(h))
        .filter(|b| matches!(b, Block::StoreForever(a) if a.promised().any(|p| p == r.hash)))
        .collect()
}

/// Integrity attestations bundled in `r` that are held locally.
pub fn integrity_evidence(store: &BlockStore, r: &Reference) -> Vec<Block> {
    r.integrity().iter().filter_map(|i| store.get(&i.hash)).collect()
}

/// One kind of integrity service.
pub trait Integrity: Send + 'static {
    fn on_start(&mut self, _ctx: &mut dyn Context, _store: &BlockStore) {}

    /// A block not seen before was stored.
    fn on_block(&mut self, _ctx: &mut dyn Context, _store: &BlockStore, _from: &NodeAddress, _block: &Block) {}

    /// Answers now with `Some`, or later by sending a response frame
    /// carrying `correlation`.
    fn on_request(
        &mut self,
        ctx: &mut dyn Context,
        store: &BlockStore,
        from: &NodeAddress,
        correlation: u64,
        request: IntegrityRequest,
    ) -> Option<Response>;

    fn on_timer(&mut self, _ctx: &mut dyn Context, _store: &BlockStore, _token: u64) {}

    /// A response to something this fern sent.
    fn on_response(&mut self, _ctx: &mut dyn Context, _store: &BlockStore, _from: &NodeAddress, _frame: Frame) {}
}

/// Network adapter around an integrity service.
pub struct Fern<I> {
    store: Arc<BlockStore>,
    streams: BlockStreams,
    pub service: I,
}

impl<I: Integrity> Fern<I> {
    pub fn new(store: Arc<BlockStore>, service: I) -> Self {
        Self {
            store,
            streams: BlockStreams::default(),
            service,
        }
    }

    pub fn store(&self) -> &Arc<BlockStore> {
        &self.store
    }
}

impl<I: Integrity> Node for Fern<I> {
    fn on_start(&mut self, ctx: &mut dyn Context) {
        self.service.on_start(ctx, &self.store);
    }

    fn on_frame(&mut self, ctx: &mut dyn Context, from: &NodeAddress, frame: Frame) {
        let reply = |ctx: &mut dyn Context, r: Response| ctx.send(from, r.to_frame(frame.correlation));
        match frame.kind {
            FrameKind::SendBlocks => match self.streams.accept(from, &frame) {
                StreamEvent::Block { block, .. } => match self.store.insert(block.clone()) {
                    Ok((_, true)) => self.service.on_block(ctx, &self.store, from, &block),
                    Ok(_) => {}
                    Err(e) => log::error!("{}: journal write failed: {e}", ctx.me()),
                },
                StreamEvent::Bad { offset, error } => reply(
                    ctx,
                    Response::StreamError {
                        offset,
                        message: error.to_string(),
                    },
                ),
                StreamEvent::End { accepted } => reply(ctx, Response::Ok { count: accepted }),
            },
            FrameKind::ReqIntegrity => match IntegrityRequest::from_canonical_bytes(frame.payload.clone()) {
                Ok(req) => {
                    if let Some(r) = self.service.on_request(ctx, &self.store, from, frame.correlation, req) {
                        reply(ctx, r);
                    }
                }
                Err(e) => reply(ctx, Response::error(ErrorKind::Malformed, e.to_string())),
            },
            FrameKind::WilburQuery => match Query::from_canonical_bytes(frame.payload.clone()) {
                Ok(Query::Hash { hash, .. }) => reply(ctx, Response::Blocks(self.store.get(&hash).into_iter().collect())),
                Ok(Query::Pattern(p)) => reply(ctx, Response::Blocks(self.store.query(&p))),
                Err(e) => reply(ctx, Response::error(ErrorKind::Malformed, e.to_string())),
            },
            FrameKind::ReqAvail => reply(
                ctx,
                Response::error(ErrorKind::Unsupported, "integrity servers issue no availability attestations"),
            ),
            FrameKind::Response => self.service.on_response(ctx, &self.store, from, frame),
        }
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, token: u64) {
        self.service.on_timer(ctx, &self.store, token);
    }
}

/// Hashes of `store`'s blocks of the given attestation issuer, oldest first.
pub fn issued_by(store: &BlockStore, issuer: &CryptoId) -> Vec<Hash> {
    store
        .snapshot()
        .iter()
        .filter(|b| b.issuer().as_ref() == Some(issuer))
        .map(Block::hash)
        .collect()
}
