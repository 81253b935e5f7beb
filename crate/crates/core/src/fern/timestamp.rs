//! Timestamping with batching and entanglement. Every request is stamped at
//! once; every `batch_size` client requests the fern stamps the batch of
//! its own recent stamps and asks each peer to stamp that batch too.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::{attestation_response, FernError, Integrity};
use crate::block::{Block, TimestampAttestation};
use crate::crypto::{CryptoId, Keypair};
use crate::hash::Hash;
use crate::message::{frame_of, IntegrityRequest, Response};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::{Context, Frame, FrameKind, NodeAddress};

pub const DEFAULT_BATCH_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampConfig {
    pub batch_size: usize,
    pub peers: Vec<NodeAddress>,
    /// Stamp a partial batch once it has waited this long.
    pub flush_after_ms: Option<u64>,
}

impl Default for TimestampConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            peers: vec![],
            flush_after_ms: None,
        }
    }
}

pub struct TimestampFern {
    keys: Keypair,
    config: TimestampConfig,
    last_time: u64,
    pending: Vec<Reference>,
    generation: u64,
    next_correlation: u64,
    batches: Vec<Hash>,
}

impl TimestampFern {
    pub fn new(keys: Keypair, config: TimestampConfig) -> Self {
        assert!(config.batch_size >= 1, "batch size must be at least 1");
        Self {
            keys,
            config,
            last_time: 0,
            pending: vec![],
            generation: 0,
            next_correlation: 0,
            batches: vec![],
        }
    }

    pub fn id(&self) -> CryptoId {
        self.keys.id()
    }

    /// Batch stamps issued so far, oldest first.
    pub fn batches(&self) -> &[Hash] {
        &self.batches
    }

    fn stamp(&mut self, ctx: &mut dyn Context, store: &BlockStore, subjects: BTreeSet<Reference>) -> Block {
        self.last_time = self.last_time.max(ctx.now_ms());
        let b = Block::Timestamp(TimestampAttestation::new(subjects, self.last_time, &self.keys));
        if let Err(e) = store.insert(b.clone()) {
            log::warn!("could not store timestamp: {e}");
        }
        b
    }

    fn flush(&mut self, ctx: &mut dyn Context, store: &BlockStore) {
        let subjects = std::mem::take(&mut self.pending).into_iter().collect();
        self.generation += 1;
        let batch = self.stamp(ctx, store, subjects);
        self.batches.push(batch.hash());
        let request = IntegrityRequest::Timestamp {
            subjects: vec![batch.reference()],
            peer_batch: true,
        };
        for peer in self.config.peers.clone() {
            self.next_correlation += 1;
            ctx.send(&peer, frame_of(FrameKind::ReqIntegrity, self.next_correlation, &request));
        }
    }
}

impl Integrity for TimestampFern {
    fn on_request(
        &mut self,
        ctx: &mut dyn Context,
        store: &BlockStore,
        _from: &NodeAddress,
        _correlation: u64,
        request: IntegrityRequest,
    ) -> Option<Response> {
        let IntegrityRequest::Timestamp { subjects, peer_batch } = request else {
            return Some(FernError::Unsupported("timestamp ferns stamp references only".into()).to_response());
        };
        if subjects.is_empty() {
            return Some(FernError::Policy("nothing to stamp".into()).to_response());
        }
        let att = self.stamp(ctx, store, subjects.into_iter().collect());
        if !peer_batch {
            self.pending.push(att.reference());
            if self.pending.len() >= self.config.batch_size {
                self.flush(ctx, store);
            } else if self.pending.len() == 1 {
                if let Some(ms) = self.config.flush_after_ms {
                    ctx.set_timer(ms, self.generation);
                }
            }
        }
        Some(attestation_response(att))
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, store: &BlockStore, token: u64) {
        if token == self.generation && !self.pending.is_empty() {
            self.flush(ctx, store);
        }
    }

    fn on_response(&mut self, _ctx: &mut dyn Context, _store: &BlockStore, from: &NodeAddress, frame: Frame) {
        if let Ok(Response::Error { kind, message }) = Response::from_frame(&frame) {
            log::warn!("peer {from} did not stamp batch: {kind}: {message}");
        }
    }
}

/// Reverse reference graph of a set of blocks, for coverage queries.
pub struct CoverageIndex {
    referrers: HashMap<Hash, Vec<Hash>>,
    stamps: HashMap<Hash, (CryptoId, u64)>,
}

impl CoverageIndex {
    pub fn new<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> Self {
        let mut referrers: HashMap<Hash, Vec<Hash>> = HashMap::new();
        let mut stamps = HashMap::new();
        for b in blocks {
            let h = b.hash();
            for target in b.linked_hashes() {
                referrers.entry(target).or_default().push(h);
            }
            if let Block::Timestamp(t) = b {
                stamps.insert(h, (t.issuer, t.time));
            }
        }
        Self { referrers, stamps }
    }

    /// Earliest time each issuer stamped something from which `target` is
    /// reachable.
    pub fn coverage(&self, target: &Hash) -> BTreeMap<CryptoId, u64> {
        let mut out: BTreeMap<CryptoId, u64> = BTreeMap::new();
        let mut seen: BTreeSet<Hash> = BTreeSet::new();
        let mut queue: VecDeque<Hash> = VecDeque::from([*target]);
        while let Some(h) = queue.pop_front() {
            for r in self.referrers.get(&h).into_iter().flatten() {
                if !seen.insert(*r) {
                    continue;
                }
                if let Some((issuer, time)) = self.stamps.get(r) {
                    let t = out.entry(*issuer).or_insert(*time);
                    *t = (*t).min(*time);
                }
                queue.push_back(*r);
            }
        }
        out
    }
}

/// For each issuer, the earliest time at which it stamped `target`, directly
/// or through a chain of references. Empty when nothing covers `target`.
pub fn stamp_coverage(target: &Hash, store: &BlockStore) -> BTreeMap<CryptoId, u64> {
    CoverageIndex::new(&store.snapshot()).coverage(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fern::Fern;
    use crate::message::send_blocks;
    use crate::transport::sim::{SimConfig, Simulator};
    use crate::transport::{gather, request};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn keys(i: u8) -> Keypair {
        Keypair::from_seed([i; 32])
    }

    fn ts(subjects: &[&Block], time: u64, issuer: u8) -> Block {
        Block::Timestamp(TimestampAttestation::new(
            subjects.iter().map(|b| b.reference()).collect(),
            time,
            &keys(issuer),
        ))
    }

    #[test]
    fn direct_and_transitive_coverage() {
        let store = BlockStore::new();
        let c = Block::opaque(&b"c"[..]);
        let b = ts(&[&c], 10, 1);
        let a = ts(&[&b], 30, 2);
        let late = ts(&[&c], 50, 2);
        for x in [&c, &b, &a, &late] {
            store.insert(x.clone()).unwrap();
        }
        let cov = stamp_coverage(&c.hash(), &store);
        assert_eq!(cov, BTreeMap::from([(keys(1).id(), 10), (keys(2).id(), 30)]));
        assert!(stamp_coverage(&Block::opaque(&b"absent"[..]).hash(), &store).is_empty());
    }

    /// Brute force: every stamp whose forward closure contains the target.
    fn oracle(blocks: &[Block], edges: &[Vec<usize>], target: usize) -> BTreeMap<CryptoId, u64> {
        let mut out: BTreeMap<CryptoId, u64> = BTreeMap::new();
        for (i, b) in blocks.iter().enumerate() {
            let Block::Timestamp(t) = b else { continue };
            let mut stack = edges[i].clone();
            let mut seen = vec![false; blocks.len()];
            let mut hit = false;
            while let Some(j) = stack.pop() {
                if j == target {
                    hit = true;
                    break;
                }
                if !std::mem::replace(&mut seen[j], true) {
                    stack.extend(edges[j].iter().copied());
                }
            }
            if hit {
                let e = out.entry(t.issuer).or_insert(t.time);
                *e = (*e).min(t.time);
            }
        }
        out
    }

    fn random_dag(seed: u64, n: usize) -> (Vec<Block>, Vec<Vec<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = vec![];
        let mut edges = vec![];
        for i in 0..n {
            if i < 10 || rng.gen_bool(0.2) {
                blocks.push(Block::opaque(format!("leaf {i}").into_bytes()));
                edges.push(vec![]);
            } else {
                let picks: BTreeSet<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..i)).collect();
                let refs: Vec<&Block> = picks.iter().map(|&j| &blocks[j]).collect();
                let b = ts(&refs, rng.gen_range(0..10_000), rng.gen_range(1..=6));
                blocks.push(b);
                edges.push(picks.into_iter().collect());
            }
        }
        (blocks, edges)
    }

    #[test]
    fn coverage_matches_reachability_on_thousand_node_dag() {
        let (blocks, edges) = random_dag(7, 1000);
        let index = CoverageIndex::new(&blocks);
        for target in (0..1000).step_by(7) {
            assert_eq!(index.coverage(&blocks[target].hash()), oracle(&blocks, &edges, target), "target {target}");
        }
    }

    proptest! {
        #[test]
        fn coverage_matches_reachability(seed in any::<u64>(), n in 10usize..120) {
            let (blocks, edges) = random_dag(seed, n);
            let index = CoverageIndex::new(&blocks);
            for target in 0..n {
                prop_assert_eq!(index.coverage(&blocks[target].hash()), oracle(&blocks, &edges, target));
            }
        }
    }

    fn network(n: usize, batch_size: usize, flush_after_ms: Option<u64>) -> (Simulator, Vec<NodeAddress>) {
        let mut sim = Simulator::new(SimConfig::default());
        let names: Vec<NodeAddress> = (0..n).map(|i| NodeAddress::sim(format!("t{i}"))).collect();
        for (i, name) in names.iter().enumerate() {
            let config = TimestampConfig {
                batch_size,
                peers: names.iter().filter(|p| *p != name).cloned().collect(),
                flush_after_ms,
            };
            let fern = TimestampFern::new(keys(i as u8 + 1), config);
            sim.add_node(name.clone(), Box::new(Fern::new(Arc::new(BlockStore::new()), fern)));
        }
        (sim, names)
    }

    #[test]
    fn hundredth_request_issues_batch_sent_to_peers() {
        let (mut sim, names) = network(3, 100, None);
        sim.enable_trace();
        let subjects: Vec<Block> = (0..100u32).map(|i| Block::opaque(i.to_be_bytes().to_vec())).collect();
        let mut ex = sim.exchange(NodeAddress::sim("c"));
        let mut times = vec![];
        for (i, s) in subjects.iter().enumerate() {
            let req = IntegrityRequest::Timestamp {
                subjects: vec![s.reference()],
                peer_batch: false,
            };
            let f = request(
                &mut ex,
                &names[0],
                FrameKind::ReqIntegrity,
                crate::codec::Canonical::to_canonical_bytes(&req).into(),
                1000,
            )
            .unwrap();
            let Response::Attestation {
                attestation: Block::Timestamp(t),
                ..
            } = Response::from_frame(&f).unwrap()
            else {
                panic!()
            };
            times.push(t.time);
            let batches = sim_batches(&mut ex, &names[0]);
            assert_eq!(batches, usize::from(i == 99));
        }
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        drop(ex);
        sim.run_until_idle(10_000);
        let fern = &sim.node::<Fern<TimestampFern>>(&names[0]).unwrap();
        let batch = fern.store().get(&fern.service.batches()[0]).unwrap();
        let Block::Timestamp(t) = &batch else { panic!() };
        assert_eq!(t.subjects.len(), 100);
        for peer in &names[1..] {
            let peer_stamps = sim.trace().iter().filter(|e| &e.to == peer && e.kind == FrameKind::ReqIntegrity);
            assert_eq!(peer_stamps.count(), 1);
            // Peer stamps of a batch do not start a batch at the peer.
            assert!(sim.node::<Fern<TimestampFern>>(peer).unwrap().service.batches().is_empty());
        }
    }

    fn sim_batches(ex: &mut crate::transport::sim::SimExchange<'_>, at: &NodeAddress) -> usize {
        ex.sim.node::<Fern<TimestampFern>>(at).unwrap().service.batches().len()
    }

    #[test]
    fn small_network_reaches_full_coverage() {
        let (mut sim, names) = network(4, 3, Some(1_000));
        let subjects: Vec<Block> = (0..40u32).map(|i| Block::opaque(i.to_be_bytes().to_vec())).collect();
        let mut ex = sim.exchange(NodeAddress::sim("c"));
        send_blocks(&mut ex, &names[0], &subjects, 1000).unwrap();
        let reqs = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let req = IntegrityRequest::Timestamp {
                    subjects: vec![s.reference()],
                    peer_batch: false,
                };
                (names[i % 4].clone(), frame_of(FrameKind::ReqIntegrity, 1000 + i as u64, &req))
            })
            .collect();
        gather(&mut ex, reqs, 5_000, |g| g.len() == 40).unwrap();
        drop(ex);
        sim.run_until(20_000);
        let all: Vec<Block> = names
            .iter()
            .flat_map(|n| sim.node::<Fern<TimestampFern>>(n).unwrap().store().snapshot())
            .collect();
        let index = CoverageIndex::new(&all);
        for s in &subjects {
            assert_eq!(index.coverage(&s.hash()).len(), 4);
        }
    }
}
