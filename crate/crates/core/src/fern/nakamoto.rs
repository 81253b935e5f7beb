//! Proof-of-work chains. Miners extend the longest chain they know with
//! client blocks and answer once a block is buried `k` deep.

use std::collections::{BTreeSet, HashMap};

use sha3::{Digest, Sha3_256};

use super::{availability_evidence, FernError, Integrity, Requirement};
use crate::block::{Block, NakamotoAttestation};
use crate::codec::Canonical;
use crate::hash::Hash;
use crate::message::{stream_frames, IntegrityRequest, Response};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::{Context, NodeAddress};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowChainConfig {
    pub difficulty_bits: u32,
    /// Confirmation depth: the attestation plus `k - 1` descendants.
    pub k: usize,
    pub required_availability: Requirement,
}

impl Default for PowChainConfig {
    fn default() -> Self {
        Self {
            difficulty_bits: 8,
            k: 1,
            required_availability: Requirement::default(),
        }
    }
}

/// Whether `att` carries at least `bits` leading zero bits of work.
pub fn meets_difficulty(att: &NakamotoAttestation, bits: u32) -> bool {
    Block::Nakamoto(att.clone()).hash().leading_zero_bits() >= bits
}

/// Incremental search for a nonce; can be stopped and resumed at will.
pub struct MiningJob {
    block: Reference,
    parent: Reference,
    bits: u32,
    prefix: Sha3_256,
    next_nonce: u64,
    attempts: u64,
}

impl MiningJob {
    pub fn new(block: &Reference, parent: &Reference, bits: u32, first_nonce: u64) -> Self {
        let att = NakamotoAttestation {
            block: block.stripped(),
            parent: parent.stripped(),
            nonce: 0,
        };
        let bytes = Block::Nakamoto(att.clone()).to_canonical_bytes();
        // The nonce is the final eight bytes of the encoding.
        let prefix = Sha3_256::new_with_prefix(&bytes[..bytes.len() - 8]);
        Self {
            block: att.block,
            parent: att.parent,
            bits,
            prefix,
            next_nonce: first_nonce,
            attempts: 0,
        }
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn block(&self) -> &Reference {
        &self.block
    }

    pub fn parent(&self) -> &Reference {
        &self.parent
    }

    /// Tries up to `budget` nonces.
    pub fn work(&mut self, budget: u64) -> Option<NakamotoAttestation> {
        for _ in 0..budget {
            let nonce = self.next_nonce;
            self.next_nonce = self.next_nonce.wrapping_add(1);
            self.attempts += 1;
            let digest: [u8; 32] = self.prefix.clone().chain_update(nonce.to_be_bytes()).finalize().into();
            if Hash::from_digest(digest).leading_zero_bits() >= self.bits {
                return Some(NakamotoAttestation {
                    block: self.block.clone(),
                    parent: self.parent.clone(),
                    nonce,
                });
            }
        }
        None
    }
}

/// Mines `block` onto `parent`, trying nonces from 0 upward.
pub fn mine(block: &Reference, parent: &Reference, bits: u32) -> NakamotoAttestation {
    MiningJob::new(block, parent, bits, 0)
        .work(u64::MAX)
        .expect("nonce space exhausted")
}

/// Tree of valid proof-of-work attestations hanging off a genesis block.
#[derive(Debug, Clone)]
pub struct PowTree {
    genesis: Hash,
    bits: u32,
    nodes: HashMap<Hash, (NakamotoAttestation, u64)>,
}

impl PowTree {
    pub fn new(genesis: Hash, bits: u32) -> Self {
        Self {
            genesis,
            bits,
            nodes: HashMap::new(),
        }
    }

    /// Adds `att` if it carries enough work and its parent is known.
    /// Returns its height (genesis children have height 1).
    pub fn insert(&mut self, att: &NakamotoAttestation) -> Option<u64> {
        let h = Block::Nakamoto(att.clone()).hash();
        if let Some((_, height)) = self.nodes.get(&h) {
            return Some(*height);
        }
        if h.leading_zero_bits() < self.bits {
            return None;
        }
        let height = 1 + self.height(&att.parent.hash)?;
        self.nodes.insert(h, (att.clone(), height));
        Some(height)
    }

    /// Height of an attestation, or 0 for genesis.
    pub fn height(&self, hash: &Hash) -> Option<u64> {
        if *hash == self.genesis {
            Some(0)
        } else {
            self.nodes.get(hash).map(|(_, h)| *h)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attestations from the genesis child up to `tip`.
    pub fn chain_to(&self, tip: &Hash) -> Vec<(Hash, NakamotoAttestation)> {
        let mut out = vec![];
        let mut at = *tip;
        while let Some((att, _)) = self.nodes.get(&at) {
            out.push((at, att.clone()));
            at = att.parent.hash;
        }
        out.reverse();
        out
    }

    /// Highest tip; ties go to the smallest hash.
    pub fn best_tip(&self) -> Option<Hash> {
        self.nodes
            .iter()
            .max_by(|(ha, (_, a)), (hb, (_, b))| a.cmp(b).then(hb.cmp(ha)))
            .map(|(h, _)| *h)
    }
}

/// The longest chain of valid attestations in `blocks` starting at
/// `genesis`; ties go to the lexicographically smallest tip hash.
pub fn best_chain<'a>(
    blocks: impl IntoIterator<Item = &'a Block>,
    genesis: &Hash,
    bits: u32,
) -> Vec<NakamotoAttestation> {
    let mut pending: Vec<&NakamotoAttestation> = blocks
        .into_iter()
        .filter_map(|b| match b {
            Block::Nakamoto(a) => Some(a),
            _ => None,
        })
        .collect();
    let mut tree = PowTree::new(*genesis, bits);
    // Parents may come after children; repeat until nothing more attaches.
    loop {
        let before = pending.len();
        pending.retain(|a| tree.insert(a).is_none());
        if pending.len() == before {
            break;
        }
    }
    tree.best_tip()
        .map(|t| tree.chain_to(&t).into_iter().map(|(_, a)| a).collect())
        .unwrap_or_default()
}

/// How a simulated miner spends its time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningPace {
    pub hashes_per_ms: u64,
    pub chunk_ms: u64,
}

impl Default for MiningPace {
    fn default() -> Self {
        Self {
            hashes_per_ms: 100,
            chunk_ms: 1,
        }
    }
}

struct Waiter {
    from: NodeAddress,
    correlation: u64,
    block: Hash,
}

pub struct NakamotoFern {
    config: PowChainConfig,
    pace: MiningPace,
    peers: Vec<NodeAddress>,
    tree: PowTree,
    tip: Hash,
    /// Requested blocks in arrival order.
    wanted: Vec<Reference>,
    waiters: Vec<Waiter>,
    job: Option<MiningJob>,
    ticking: bool,
    next_correlation: u64,
    mined: u64,
}

const TICK: u64 = 1;

impl NakamotoFern {
    pub fn new(genesis: Hash, config: PowChainConfig, pace: MiningPace, peers: Vec<NodeAddress>) -> Self {
        assert!(config.k >= 1, "confirmation depth must be at least 1");
        let tree = PowTree::new(genesis, config.difficulty_bits);
        Self {
            config,
            pace,
            peers,
            tree,
            tip: genesis,
            wanted: vec![],
            waiters: vec![],
            job: None,
            ticking: false,
            next_correlation: 0,
            mined: 0,
        }
    }

    /// Attestations this miner found itself.
    pub fn mined(&self) -> u64 {
        self.mined
    }

    pub fn best_chain(&self) -> Vec<(Hash, NakamotoAttestation)> {
        self.tree.chain_to(&self.tip)
    }

    /// Depth of each block on the current best chain; the tip's block has depth 1.
    fn depths(&self) -> HashMap<Hash, usize> {
        let chain = self.best_chain();
        let n = chain.len();
        chain
            .into_iter()
            .enumerate()
            .map(|(i, (_, a))| (a.block.hash, n - i))
            .collect()
    }

    /// Adds an attestation; switches to its chain if strictly longer.
    fn adopt(&mut self, ctx: &mut dyn Context, att: &NakamotoAttestation) -> bool {
        let Some(height) = self.tree.insert(att) else {
            return false;
        };
        let current = self.tree.height(&self.tip).unwrap_or(0);
        if height > current {
            self.tip = Block::Nakamoto(att.clone()).hash();
            self.settle(ctx);
        }
        true
    }

    /// Answers confirmed waiters and picks the next block to mine.
    fn settle(&mut self, ctx: &mut dyn Context) {
        let depths = self.depths();
        let k = self.config.k;
        let mut still = vec![];
        for w in std::mem::take(&mut self.waiters) {
            if depths.get(&w.block).is_some_and(|&d| d >= k) {
                let chain = self.best_chain();
                let (_, att) = chain.iter().find(|(_, a)| a.block.hash == w.block).expect("on chain");
                let r = super::attestation_response(Block::Nakamoto(att.clone()));
                ctx.send(&w.from, r.to_frame(w.correlation));
            } else {
                still.push(w);
            }
        }
        self.waiters = still;
        let waiting: BTreeSet<Hash> = self.waiters.iter().map(|w| w.block).collect();
        self.wanted
            .retain(|r| waiting.contains(&r.hash) || !depths.get(&r.hash).is_some_and(|&d| d >= k));
        let next = self.wanted.iter().find(|r| !depths.contains_key(&r.hash)).cloned();
        // With k > 1 an empty queue still needs blocks to bury the waiters.
        let next = next.or_else(|| {
            (!self.waiters.is_empty()).then(|| Block::opaque(format!("filler {}", self.tip).into_bytes()).reference())
        });
        let current = self.job.take();
        self.job = next.map(|b| match current {
            Some(j) if j.block().hash == b.hash && j.parent().hash == self.tip => j,
            _ => MiningJob::new(&b, &Reference::bare(self.tip), self.config.difficulty_bits, ctx.random_u64()),
        });
        if self.job.is_some() && !self.ticking {
            self.ticking = true;
            ctx.set_timer(self.pace.chunk_ms, TICK);
        }
    }
}

impl Integrity for NakamotoFern {
    fn on_block(&mut self, ctx: &mut dyn Context, _store: &BlockStore, _from: &NodeAddress, block: &Block) {
        if let Block::Nakamoto(att) = block {
            self.adopt(ctx, att);
        }
    }

    fn on_request(
        &mut self,
        ctx: &mut dyn Context,
        store: &BlockStore,
        from: &NodeAddress,
        correlation: u64,
        request: IntegrityRequest,
    ) -> Option<Response> {
        let IntegrityRequest::Nakamoto { block } = request else {
            return Some(FernError::Unsupported("miners attest proof-of-work links only".into()).to_response());
        };
        if let Err(e) = self.config.required_availability.check(
            "block availability",
            &availability_evidence(store, &block),
            |_| true,
        ) {
            return Some(e.to_response());
        }
        if !self.wanted.iter().any(|r| r.hash == block.hash) {
            self.wanted.push(block.clone());
        }
        self.waiters.push(Waiter {
            from: from.clone(),
            correlation,
            block: block.hash,
        });
        self.settle(ctx);
        None
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, store: &BlockStore, token: u64) {
        if token != TICK {
            return;
        }
        self.ticking = false;
        let budget = self.pace.hashes_per_ms * self.pace.chunk_ms;
        let found = self.job.as_mut().and_then(|j| j.work(budget));
        if let Some(att) = found {
            self.mined += 1;
            let block = Block::Nakamoto(att.clone());
            if let Err(e) = store.insert(block.clone()) {
                log::warn!("could not store attestation: {e}");
            }
            for peer in self.peers.clone() {
                self.next_correlation += 1;
                for f in stream_frames(self.next_correlation, [&block]) {
                    ctx.send(&peer, f);
                }
            }
            self.job = None;
            self.adopt(ctx, &att);
            self.settle(ctx);
        } else if self.job.is_some() && !self.ticking {
            self.ticking = true;
            ctx.set_timer(self.pace.chunk_ms, TICK);
        }
    }
}
