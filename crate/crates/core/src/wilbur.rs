//! Availability server: keeps every block it receives, promises to keep
//! them, relays them to its peers and answers lookups.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::block::{Block, StoreForever};
use crate::codec::Canonical;
use crate::crypto::Keypair;
use crate::hash::Hash;
use crate::message::{
    stream_frames, AvailabilityPolicy, BlockStreams, ErrorKind, Pattern, Query, Response, StreamEvent,
};
use crate::transport::{Context, Frame, FrameKind, Node, NodeAddress};

pub use crate::store::BlockStore;

/// Upper bound on any requested wait.
pub const DEFAULT_MAX_WAIT_MS: u64 = 30_000;

#[derive(Debug, Clone)]
pub struct WilburConfig {
    pub peers: Vec<NodeAddress>,
    pub max_wait_ms: u64,
}

impl Default for WilburConfig {
    fn default() -> Self {
        Self {
            peers: vec![],
            max_wait_ms: DEFAULT_MAX_WAIT_MS,
        }
    }
}

enum Wanted {
    Attestation(AvailabilityPolicy),
    Block(Hash),
}

struct Waiter {
    from: NodeAddress,
    correlation: u64,
    wanted: Wanted,
}

pub struct Wilbur {
    keys: Keypair,
    store: Arc<BlockStore>,
    config: WilburConfig,
    streams: BlockStreams,
    waiters: BTreeMap<u64, Waiter>,
    next_waiter: u64,
    next_relay: u64,
    issued: Vec<Hash>,
}

/// Hashes an attestation for `policy` must cover, or the ones still missing.
fn needed(store: &BlockStore, policy: &AvailabilityPolicy) -> Result<BTreeSet<Hash>, BTreeSet<Hash>> {
    let mut need: BTreeSet<Hash> = policy.subjects.iter().map(|r| r.hash).collect();
    let mut missing: BTreeSet<Hash> = need.iter().filter(|h| !store.contains(h)).copied().collect();
    if missing.is_empty() && policy.cover_referenced_attestations {
        for r in &policy.subjects {
            let b = store.get(&r.hash).expect("checked present");
            for a in b.bundled_attestations() {
                if !store.contains(&a) {
                    missing.insert(a);
                }
                need.insert(a);
            }
        }
    }
    if missing.is_empty() {
        Ok(need)
    } else {
        Err(missing)
    }
}

fn list(hashes: &BTreeSet<Hash>) -> String {
    hashes.iter().map(|h| h.to_hex()).collect::<Vec<_>>().join(",")
}

impl Wilbur {
    pub fn new(keys: Keypair, store: Arc<BlockStore>, config: WilburConfig) -> Self {
        Self {
            keys,
            store,
            config,
            streams: BlockStreams::default(),
            waiters: BTreeMap::new(),
            next_waiter: 0,
            next_relay: 0,
            issued: Vec::new(),
        }
    }

    pub fn store(&self) -> &Arc<BlockStore> {
        &self.store
    }

    pub fn id(&self) -> crate::crypto::CryptoId {
        self.keys.id()
    }

    /// Attestations issued so far, oldest first.
    pub fn issued(&self) -> &[Hash] {
        &self.issued
    }

    /// Checks every issued attestation verifies and everything it promises
    /// is still stored.
    pub fn audit(&self) -> Result<(), String> {
        for h in &self.issued {
            let Some(block) = self.store.get(h) else {
                return Err(format!("issued attestation {h} not stored"));
            };
            let Block::StoreForever(a) = &block else {
                return Err(format!("{h} is not an availability attestation"));
            };
            if !block.verify_signature() {
                return Err(format!("attestation {h} does not verify"));
            }
            let lost = a.promised().find(|p| !self.store.contains(p));
            if let Some(lost) = lost {
                return Err(format!("attestation {h} promises missing {lost}"));
            }
        }
        Ok(())
    }

    /// Issues (or re-issues, identically) an attestation for `policy`.
    pub fn attest(&mut self, ctx: &mut dyn Context, policy: &AvailabilityPolicy) -> Result<Block, BTreeSet<Hash>> {
        let mut need = needed(&self.store, policy)?;
        let subject = policy.subjects.iter().next().expect("policy has subjects");
        need.remove(&subject.hash);
        let att = Block::StoreForever(StoreForever::new(subject, need, &self.keys));
        if self.accept(ctx, None, att.clone()) {
            self.issued.push(att.hash());
        }
        Ok(att)
    }

    /// Stores a block; returns whether it was new. New blocks go to every
    /// peer except `from`.
    fn accept(&mut self, ctx: &mut dyn Context, from: Option<&NodeAddress>, block: Block) -> bool {
        let fresh = match self.store.insert(block.clone()) {
            Ok((_, fresh)) => fresh,
            Err(e) => {
                log::error!("{}: journal write failed: {e}", ctx.me());
                return false;
            }
        };
        if fresh {
            for peer in self.config.peers.clone() {
                if Some(&peer) == from {
                    continue;
                }
                self.next_relay += 1;
                for f in stream_frames(self.next_relay, [&block]) {
                    ctx.send(&peer, f);
                }
            }
            self.wake(ctx);
        }
        fresh
    }

    fn wake(&mut self, ctx: &mut dyn Context) {
        let ready: Vec<u64> = self
            .waiters
            .iter()
            .filter(|(_, w)| match &w.wanted {
                Wanted::Block(h) => self.store.contains(h),
                Wanted::Attestation(p) => needed(&self.store, p).is_ok(),
            })
            .map(|(id, _)| *id)
            .collect();
        for id in ready {
            let w = self.waiters.remove(&id).expect("listed");
            let resp = self.answer(ctx, &w.wanted).expect("ready");
            ctx.send(&w.from, resp.to_frame(w.correlation));
        }
    }

    /// `None` while something is still missing.
    fn answer(&mut self, ctx: &mut dyn Context, wanted: &Wanted) -> Option<Response> {
        match wanted {
            Wanted::Block(h) => self.store.get(h).map(|b| Response::Blocks(vec![b])),
            Wanted::Attestation(p) => self.attest(ctx, p).ok().map(|attestation| Response::Attestation {
                attestation,
                supporting: vec![],
            }),
        }
    }

    fn missing_error(&self, wanted: &Wanted) -> Response {
        let missing = match wanted {
            Wanted::Block(h) => [*h].into(),
            Wanted::Attestation(p) => needed(&self.store, p).err().unwrap_or_default(),
        };
        Response::error(ErrorKind::Timeout, format!("missing {}", list(&missing)))
    }

    fn serve_or_wait(&mut self, ctx: &mut dyn Context, from: &NodeAddress, correlation: u64, wanted: Wanted, wait_ms: u64) {
        if let Some(r) = self.answer(ctx, &wanted) {
            ctx.send(from, r.to_frame(correlation));
            return;
        }
        if wait_ms == 0 {
            ctx.send(from, self.missing_error(&wanted).to_frame(correlation));
            return;
        }
        self.next_waiter += 1;
        let id = self.next_waiter;
        self.waiters.insert(
            id,
            Waiter {
                from: from.clone(),
                correlation,
                wanted,
            },
        );
        ctx.set_timer(wait_ms.min(self.config.max_wait_ms), id);
    }
}

impl Node for Wilbur {
    fn on_frame(&mut self, ctx: &mut dyn Context, from: &NodeAddress, frame: Frame) {
        let reply = |ctx: &mut dyn Context, r: Response| ctx.send(from, r.to_frame(frame.correlation));
        match frame.kind {
            FrameKind::SendBlocks => match self.streams.accept(from, &frame) {
                StreamEvent::Block { block, .. } => {
                    self.accept(ctx, Some(from), block);
                }
                StreamEvent::Bad { offset, error } => reply(
                    ctx,
                    Response::StreamError {
                        offset,
                        message: error.to_string(),
                    },
                ),
                StreamEvent::End { accepted } => reply(ctx, Response::Ok { count: accepted }),
            },
            FrameKind::ReqAvail => match AvailabilityPolicy::from_canonical_bytes(frame.payload.clone()) {
                Ok(p) => {
                    let wait = p.wait_ms;
                    self.serve_or_wait(ctx, from, frame.correlation, Wanted::Attestation(p), wait)
                }
                Err(e) => reply(ctx, Response::error(ErrorKind::Malformed, e.to_string())),
            },
            FrameKind::WilburQuery => match Query::from_canonical_bytes(frame.payload.clone()) {
                Ok(Query::Hash { hash, wait_ms }) => {
                    self.serve_or_wait(ctx, from, frame.correlation, Wanted::Block(hash), wait_ms)
                }
                Ok(Query::Pattern(p)) => reply(ctx, Response::Blocks(self.query(&p))),
                Err(e) => reply(ctx, Response::error(ErrorKind::Malformed, e.to_string())),
            },
            FrameKind::ReqIntegrity => reply(
                ctx,
                Response::error(ErrorKind::Unsupported, "availability servers issue no integrity attestations"),
            ),
            FrameKind::Response => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, token: u64) {
        if let Some(w) = self.waiters.remove(&token) {
            ctx.send(&w.from, self.missing_error(&w.wanted).to_frame(w.correlation));
        }
    }
}

impl Wilbur {
    pub fn query(&self, pattern: &Pattern) -> Vec<Block> {
        self.store.query(pattern)
    }
}
