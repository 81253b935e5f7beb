//! Heterogeneous consensus. A sequencer proposes one block for a set of
//! chain slots; participants of every chain involved vote in two rounds of
//! broadcast messages, and any fern that sees a quorum of phase-2B votes for
//! each chain issues its own decision attestation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use super::{FernError, Integrity};
use crate::block::{Ballot, Block, Claim, HetconsDecision, HetconsMessage, HetconsValue, MeetRequest, Phase, QuorumConfig, SlotKey};
use crate::crypto::{CryptoId, Keypair};
use crate::hash::Hash;
use crate::message::{stream_frames, ErrorKind, IntegrityRequest, Response};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::{Context, NodeAddress};

/// How a sequencer retries an instance that has not decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base_ms: u64,
    /// Ballots tried per instance before the clients get a timeout.
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_ms: 1000,
            max_attempts: 8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HetconsConfig {
    /// Where to reach each participant and proposer.
    pub directory: BTreeMap<CryptoId, NodeAddress>,
    pub retry: Option<RetryPolicy>,
}

/// Looks up the quorum configuration named by a chain root held in `store`.
pub fn chain_config(store: &BlockStore, root: &Hash) -> Result<QuorumConfig, FernError> {
    match store.get(root) {
        Some(Block::ChainRoot(c)) => match store.get(&c.config.hash) {
            Some(Block::QuorumConfig(q)) => Ok(q),
            _ => Err(FernError::Evidence(format!(
                "configuration {} of chain {root} not held",
                c.config.hash
            ))),
        },
        Some(_) => Err(FernError::Policy(format!("{root} is not a chain root"))),
        None => Err(FernError::Evidence(format!("unknown chain {root}"))),
    }
}

/// Everyone who votes on `value`.
pub fn participants(store: &BlockStore, value: &HetconsValue) -> Result<BTreeSet<CryptoId>, FernError> {
    let mut ids = BTreeSet::new();
    for key in &value.slots {
        ids.extend(chain_config(store, &key.root)?.participants);
    }
    Ok(ids)
}

/// Checks a decision offline: its signature, and a quorum of matching,
/// correctly signed 2B votes for every chain it names. Votes missing from
/// `store` are an evidence error rather than a rejection.
pub fn verify_decision(
    decision: &Block,
    configs: &BTreeMap<Hash, QuorumConfig>,
    store: &BlockStore,
) -> Result<bool, FernError> {
    let Block::HetconsDecision(d) = decision else {
        return Ok(false);
    };
    if !decision.verify_signature() || d.value.slots.is_empty() {
        return Ok(false);
    }
    let mut voters = BTreeSet::new();
    for r in &d.quorum {
        match store.get(&r.hash) {
            None => return Err(FernError::Evidence(format!("vote {} not held", r.hash))),
            Some(b @ Block::HetconsMessage(_)) if b.verify_signature() => {
                let Block::HetconsMessage(m) = b else { unreachable!() };
                if m.phase != Phase::TwoB || m.ballot != d.ballot || m.value != d.value {
                    return Ok(false);
                }
                voters.insert(m.issuer);
            }
            Some(_) => return Ok(false),
        }
    }
    for key in &d.value.slots {
        let config = configs
            .get(&key.root)
            .ok_or_else(|| FernError::Evidence(format!("no configuration for chain {}", key.root)))?;
        if !config.is_quorum(&voters) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Default)]
struct SlotState {
    promised: Option<Ballot>,
    accepted: Option<Claim>,
}

struct Instance {
    /// What the clients asked for.
    wanted: HetconsValue,
    /// What the current ballot proposes; differs from `wanted` only after
    /// recovering a value some quorum may already have accepted.
    value: HetconsValue,
    ballot: Ballot,
    attempt: u32,
    recovered: bool,
    proposal: Block,
    clients: Vec<(NodeAddress, u64)>,
}

struct Pending {
    from: NodeAddress,
    correlation: u64,
    request: MeetRequest,
}

pub struct HetconsFern {
    keys: Keypair,
    config: HetconsConfig,
    configs: HashMap<Hash, QuorumConfig>,
    verified: HashMap<Hash, bool>,
    claim_validity: HashMap<Claim, bool>,
    max_counter: u64,
    next_correlation: u64,
    inbox: VecDeque<Block>,

    // Acceptor.
    slots: HashMap<SlotKey, SlotState>,
    proposals: HashMap<Ballot, (HetconsValue, Hash)>,
    one_bs: HashMap<Ballot, BTreeMap<CryptoId, Hash>>,
    two_bs: HashMap<(Ballot, HetconsValue), BTreeMap<CryptoId, Hash>>,
    sent_one_b: HashSet<Ballot>,
    sent_two_b: HashSet<Ballot>,

    // Learner.
    decisions: HashMap<SlotKey, Block>,
    learned: HashSet<(Ballot, HetconsValue)>,

    // Sequencer.
    instances: BTreeMap<u64, Instance>,
    next_instance: u64,
    busy: HashMap<SlotKey, u64>,
    queue: VecDeque<Pending>,
}

impl HetconsFern {
    pub fn new(keys: Keypair, config: HetconsConfig) -> Self {
        Self {
            keys,
            config,
            configs: HashMap::new(),
            verified: HashMap::new(),
            claim_validity: HashMap::new(),
            max_counter: 0,
            next_correlation: 0,
            inbox: VecDeque::new(),
            slots: HashMap::new(),
            proposals: HashMap::new(),
            one_bs: HashMap::new(),
            two_bs: HashMap::new(),
            sent_one_b: HashSet::new(),
            sent_two_b: HashSet::new(),
            decisions: HashMap::new(),
            learned: HashSet::new(),
            instances: BTreeMap::new(),
            next_instance: 0,
            busy: HashMap::new(),
            queue: VecDeque::new(),
        }
    }

    pub fn id(&self) -> CryptoId {
        self.keys.id()
    }

    /// This fern's own decision attestations, by slot.
    pub fn decisions(&self) -> &HashMap<SlotKey, Block> {
        &self.decisions
    }

    pub fn decided(&self, key: &SlotKey) -> Option<Hash> {
        match self.decisions.get(key) {
            Some(Block::HetconsDecision(d)) => Some(d.value.block),
            _ => None,
        }
    }

    /// Instances the sequencer is running.
    pub fn active(&self) -> usize {
        self.instances.len()
    }

    fn config_of(&mut self, store: &BlockStore, root: &Hash) -> Result<&QuorumConfig, FernError> {
        if !self.configs.contains_key(root) {
            let config = chain_config(store, root)?;
            self.configs.insert(*root, config);
        }
        Ok(&self.configs[root])
    }

    /// Slots of `value` in whose chains this fern votes.
    fn my_slots(&mut self, store: &BlockStore, value: &HetconsValue) -> Option<Vec<SlotKey>> {
        let me = self.keys.id();
        let mut mine = vec![];
        for key in &value.slots {
            if self.config_of(store, &key.root).ok()?.is_participant(&me) {
                mine.push(*key);
            }
        }
        Some(mine)
    }

    /// True when `voters` holds a quorum of every chain of `value`.
    fn covers(&mut self, store: &BlockStore, value: &HetconsValue, voters: &BTreeSet<CryptoId>) -> bool {
        for key in &value.slots {
            match self.config_of(store, &key.root) {
                Ok(c) if c.is_quorum(voters) => {}
                _ => return false,
            }
        }
        !value.slots.is_empty()
    }

    fn targets(&mut self, store: &BlockStore, value: &HetconsValue, proposer: &CryptoId) -> BTreeSet<NodeAddress> {
        let mut ids = BTreeSet::from([*proposer]);
        for key in &value.slots {
            if let Ok(c) = self.config_of(store, &key.root) {
                ids.extend(c.participants.iter().copied());
            }
        }
        ids.remove(&self.keys.id());
        ids.iter()
            .filter_map(|id| {
                let addr = self.config.directory.get(id);
                if addr.is_none() {
                    log::warn!("no address for participant {id}");
                }
                addr.cloned()
            })
            .collect()
    }

    /// Stores and sends `message` (preceded by `extra`), then queues it for
    /// local processing.
    fn emit(&mut self, ctx: &mut dyn Context, store: &BlockStore, extra: Option<&Block>, message: Block, to: BTreeSet<NodeAddress>) {
        for b in extra.into_iter().chain([&message]) {
            if let Err(e) = store.insert(b.clone()) {
                log::error!("{}: journal write failed: {e}", ctx.me());
            }
        }
        self.verified.insert(message.hash(), true);
        for addr in to {
            self.next_correlation += 1;
            for f in stream_frames(self.next_correlation, extra.into_iter().chain([&message])) {
                ctx.send(&addr, f);
            }
        }
        self.inbox.push_back(message);
    }

    fn drain(&mut self, ctx: &mut dyn Context, store: &BlockStore) {
        while let Some(b) = self.inbox.pop_front() {
            self.handle(ctx, store, &b);
        }
    }

    fn message(&mut self, store: &BlockStore, hash: &Hash) -> Option<HetconsMessage> {
        let block = store.get(hash)?;
        let ok = *self.verified.entry(*hash).or_insert_with(|| block.verify_signature());
        match block {
            Block::HetconsMessage(m) if ok => Some(m),
            _ => None,
        }
    }

    /// A claim is valid when its 1B quorum exists and made its value safe.
    fn claim_valid(&mut self, store: &BlockStore, claim: &Claim) -> bool {
        if let Some(&v) = self.claim_validity.get(claim) {
            return v;
        }
        let v = self.check_claim(store, claim);
        self.claim_validity.insert(claim.clone(), v);
        v
    }

    fn check_claim(&mut self, store: &BlockStore, claim: &Claim) -> bool {
        if !claim.value.slots.contains(&claim.slot) {
            return false;
        }
        let mut voters = BTreeSet::new();
        let mut messages = vec![];
        for h in &claim.quorum {
            match self.message(store, h) {
                Some(m) if m.phase == Phase::OneB && m.ballot == claim.ballot => {
                    voters.insert(m.issuer);
                    messages.push(m);
                }
                _ => return false,
            }
        }
        match self.config_of(store, &claim.slot.root) {
            Ok(c) if c.is_quorum(&voters) => {}
            _ => return false,
        }
        match self.highest_claim(store, &claim.slot, &messages, Some(claim.ballot)) {
            Some(c) => c.value == claim.value,
            None => true,
        }
    }

    /// The highest-ballot valid claim for `slot` reported in `messages`,
    /// ignoring claims at or above `below`.
    fn highest_claim(
        &mut self,
        store: &BlockStore,
        slot: &SlotKey,
        messages: &[HetconsMessage],
        below: Option<Ballot>,
    ) -> Option<Claim> {
        let mut best: Option<Claim> = None;
        for m in messages {
            for c in &m.claims {
                if c.slot != *slot
                    || below.is_some_and(|b| c.ballot >= b)
                    || best.as_ref().is_some_and(|b| b.ballot >= c.ballot)
                {
                    continue;
                }
                if self.claim_valid(store, c) {
                    best = Some(c.clone());
                }
            }
        }
        best
    }

    fn one_b_quorum(&mut self, store: &BlockStore, ballot: &Ballot) -> (BTreeSet<Hash>, Vec<HetconsMessage>) {
        let hashes: BTreeSet<Hash> = self.one_bs.get(ballot).map(|v| v.values().copied().collect()).unwrap_or_default();
        let messages = hashes.iter().filter_map(|h| self.message(store, h)).collect();
        (hashes, messages)
    }

    fn handle(&mut self, ctx: &mut dyn Context, store: &BlockStore, block: &Block) {
        let Block::HetconsMessage(m) = block else {
            return;
        };
        let hash = block.hash();
        if !*self.verified.entry(hash).or_insert_with(|| block.verify_signature()) {
            return;
        }
        self.max_counter = self.max_counter.max(m.ballot.counter);
        match m.phase {
            Phase::OneA | Phase::TwoA => {
                if m.issuer != m.ballot.proposer {
                    return;
                }
                if m.phase == Phase::OneA {
                    self.proposals.entry(m.ballot).or_insert((m.value.clone(), hash));
                } else {
                    self.proposals.insert(m.ballot, (m.value.clone(), hash));
                }
                self.promise(ctx, store, m.ballot);
                self.try_accept(ctx, store, m.ballot);
            }
            Phase::OneB => {
                self.one_bs.entry(m.ballot).or_default().entry(m.issuer).or_insert(hash);
                self.try_accept(ctx, store, m.ballot);
                self.recover(ctx, store, m.ballot);
            }
            Phase::TwoB => {
                let key = (m.ballot, m.value.clone());
                self.two_bs.entry(key.clone()).or_default().entry(m.issuer).or_insert(hash);
                self.try_learn(ctx, store, key);
            }
        }
    }

    fn promise(&mut self, ctx: &mut dyn Context, store: &BlockStore, ballot: Ballot) {
        if self.sent_one_b.contains(&ballot) {
            return;
        }
        let Some((value, proposal)) = self.proposals.get(&ballot).cloned() else {
            return;
        };
        let Some(mine) = self.my_slots(store, &value) else {
            return;
        };
        if mine.is_empty()
            || mine
                .iter()
                .any(|k| self.slots.get(k).and_then(|s| s.promised).is_some_and(|p| p >= ballot))
        {
            return;
        }
        let mut claims = vec![];
        for k in &mine {
            let state = self.slots.entry(*k).or_default();
            state.promised = Some(ballot);
            claims.extend(state.accepted.clone());
        }
        self.sent_one_b.insert(ballot);
        let message = HetconsMessage::new(
            Phase::OneB,
            ballot,
            value.clone(),
            BTreeSet::from([Reference::bare(proposal)]),
            claims,
            &self.keys,
        );
        let to = self.targets(store, &value, &ballot.proposer);
        self.emit(ctx, store, None, Block::HetconsMessage(message), to);
    }

    fn try_accept(&mut self, ctx: &mut dyn Context, store: &BlockStore, ballot: Ballot) {
        if self.sent_two_b.contains(&ballot) {
            return;
        }
        let Some((value, _)) = self.proposals.get(&ballot).cloned() else {
            return;
        };
        let Some(mine) = self.my_slots(store, &value) else {
            return;
        };
        if mine.is_empty()
            || mine
                .iter()
                .any(|k| self.slots.get(k).and_then(|s| s.promised).is_some_and(|p| p > ballot))
        {
            return;
        }
        let voters: BTreeSet<CryptoId> = self.one_bs.get(&ballot).map(|v| v.keys().copied().collect()).unwrap_or_default();
        if !self.covers(store, &value, &voters) {
            return;
        }
        let (hashes, messages) = self.one_b_quorum(store, &ballot);
        for key in &value.slots {
            if let Some(c) = self.highest_claim(store, key, &messages, None) {
                if c.value != value {
                    return;
                }
            }
        }
        for k in mine {
            let state = self.slots.entry(k).or_default();
            state.promised = Some(ballot);
            state.accepted = Some(Claim {
                slot: k,
                ballot,
                value: value.clone(),
                quorum: hashes.clone(),
            });
        }
        self.sent_two_b.insert(ballot);
        let message = HetconsMessage::new(
            Phase::TwoB,
            ballot,
            value.clone(),
            hashes.into_iter().map(Reference::bare).collect(),
            vec![],
            &self.keys,
        );
        let to = self.targets(store, &value, &ballot.proposer);
        self.emit(ctx, store, None, Block::HetconsMessage(message), to);
    }

    /// Sequencer side: if the 1B quorum shows some value may already be
    /// chosen, re-propose it in the same ballot.
    fn recover(&mut self, ctx: &mut dyn Context, store: &BlockStore, ballot: Ballot) {
        let Some(id) = self.instance_of(&ballot) else {
            return;
        };
        let inst = &self.instances[&id];
        if inst.recovered {
            return;
        }
        let value = inst.value.clone();
        let voters: BTreeSet<CryptoId> = self.one_bs.get(&ballot).map(|v| v.keys().copied().collect()).unwrap_or_default();
        if !self.covers(store, &value, &voters) {
            return;
        }
        let (hashes, messages) = self.one_b_quorum(store, &ballot);
        let mut found = BTreeSet::new();
        for key in &value.slots {
            match self.highest_claim(store, key, &messages, None) {
                Some(c) => {
                    found.insert(c.value);
                }
                None => return,
            }
        }
        let Some(chosen) = found.pop_first() else {
            return;
        };
        if !found.is_empty() || chosen == value || chosen.slots != value.slots {
            return;
        }
        let inst = self.instances.get_mut(&id).expect("instance");
        inst.recovered = true;
        inst.value = chosen.clone();
        let message = HetconsMessage::new(
            Phase::TwoA,
            ballot,
            chosen.clone(),
            hashes.into_iter().map(Reference::bare).collect(),
            vec![],
            &self.keys,
        );
        let to = self.targets(store, &chosen, &ballot.proposer);
        self.emit(ctx, store, None, Block::HetconsMessage(message), to);
    }

    fn try_learn(&mut self, ctx: &mut dyn Context, store: &BlockStore, key: (Ballot, HetconsValue)) {
        if self.learned.contains(&key) {
            return;
        }
        let votes = self.two_bs[&key].clone();
        let voters: BTreeSet<CryptoId> = votes.keys().copied().collect();
        if !self.covers(store, &key.1, &voters) {
            return;
        }
        let (ballot, value) = key.clone();
        self.learned.insert(key);
        let decision = Block::HetconsDecision(HetconsDecision::new(
            ballot,
            value.clone(),
            votes.values().copied().map(Reference::bare).collect(),
            &self.keys,
        ));
        if let Err(e) = store.insert(decision.clone()) {
            log::error!("{}: journal write failed: {e}", ctx.me());
        }
        for slot in &value.slots {
            match self.decisions.get(slot) {
                Some(Block::HetconsDecision(d)) if d.value != value => {
                    log::error!("conflicting decisions for slot {} of {}", slot.slot, slot.root);
                }
                Some(_) => {}
                None => {
                    self.decisions.insert(*slot, decision.clone());
                }
            }
        }
        let finished: Vec<u64> = self
            .instances
            .iter()
            .filter(|(_, i)| !i.wanted.slots.is_disjoint(&value.slots))
            .map(|(id, _)| *id)
            .collect();
        for id in finished {
            self.finish(ctx, id, &decision);
        }
        self.pump(ctx, store);
    }

    fn instance_of(&self, ballot: &Ballot) -> Option<u64> {
        if ballot.proposer != self.keys.id() {
            return None;
        }
        self.instances.iter().find(|(_, i)| i.ballot == *ballot).map(|(id, _)| *id)
    }

    fn finish(&mut self, ctx: &mut dyn Context, id: u64, decision: &Block) {
        let Some(inst) = self.instances.remove(&id) else {
            return;
        };
        for k in &inst.wanted.slots {
            self.busy.remove(k);
        }
        let Block::HetconsDecision(d) = decision else {
            return;
        };
        let response = if d.value == inst.wanted {
            Response::Attestation {
                attestation: decision.clone(),
                supporting: vec![],
            }
        } else {
            Response::Conflict {
                existing: decision.clone(),
            }
        };
        for (addr, corr) in inst.clients {
            ctx.send(&addr, response.to_frame(corr));
        }
    }

    fn validate(&mut self, store: &BlockStore, request: &MeetRequest) -> Result<(), FernError> {
        if request.chains.is_empty() {
            return Err(FernError::Policy("request names no chain".into()));
        }
        let roots: BTreeSet<Hash> = request.chains.iter().map(|(r, _)| r.hash).collect();
        if roots.len() != request.chains.len() {
            return Err(FernError::Policy("request names a chain twice".into()));
        }
        for (root, slot) in &request.chains {
            if *slot == 0 {
                return Err(FernError::Policy("slot 0 is the chain root".into()));
            }
            self.config_of(store, &root.hash)?.validate().map_err(FernError::Policy)?;
        }
        Ok(())
    }

    /// The answer for `value` if its slots are already decided.
    fn settled(&self, value: &HetconsValue) -> Option<Response> {
        for key in &value.slots {
            if let Some(block @ Block::HetconsDecision(d)) = self.decisions.get(key) {
                return Some(if d.value == *value {
                    Response::Attestation {
                        attestation: block.clone(),
                        supporting: vec![],
                    }
                } else {
                    Response::Conflict {
                        existing: block.clone(),
                    }
                });
            }
        }
        None
    }

    /// Starts queued requests whose slots are free, first come first served
    /// per slot.
    fn pump(&mut self, ctx: &mut dyn Context, store: &BlockStore) {
        let mut blocked = BTreeSet::new();
        let mut i = 0;
        while i < self.queue.len() {
            let value = self.queue[i].request.value();
            if value.slots.iter().any(|k| self.busy.contains_key(k) || blocked.contains(k)) {
                blocked.extend(value.slots);
                i += 1;
                continue;
            }
            let p = self.queue.remove(i).expect("index in range");
            if let Some(r) = self.settled(&value) {
                ctx.send(&p.from, r.to_frame(p.correlation));
                continue;
            }
            self.start(ctx, store, p, value);
        }
    }

    fn start(&mut self, ctx: &mut dyn Context, store: &BlockStore, p: Pending, value: HetconsValue) {
        self.max_counter += 1;
        let ballot = Ballot {
            counter: self.max_counter,
            proposer: self.keys.id(),
        };
        let id = self.next_instance;
        self.next_instance += 1;
        for k in &value.slots {
            self.busy.insert(*k, id);
        }
        self.instances.insert(
            id,
            Instance {
                wanted: value.clone(),
                value,
                ballot,
                attempt: 0,
                recovered: false,
                proposal: Block::HetconsProposal(p.request),
                clients: vec![(p.from, p.correlation)],
            },
        );
        self.propose(ctx, store, id);
        if let Some(retry) = self.config.retry {
            ctx.set_timer(retry.base_ms, id);
        }
    }

    fn propose(&mut self, ctx: &mut dyn Context, store: &BlockStore, id: u64) {
        let inst = &self.instances[&id];
        let proposal = inst.proposal.clone();
        let (ballot, value) = (inst.ballot, inst.value.clone());
        let message = HetconsMessage::new(
            Phase::OneA,
            ballot,
            value.clone(),
            BTreeSet::from([Reference::bare(proposal.hash())]),
            vec![],
            &self.keys,
        );
        let to = self.targets(store, &value, &ballot.proposer);
        self.emit(ctx, store, Some(&proposal), Block::HetconsMessage(message), to);
    }
}

impl Integrity for HetconsFern {
    fn on_block(&mut self, ctx: &mut dyn Context, store: &BlockStore, _from: &NodeAddress, block: &Block) {
        if matches!(block, Block::HetconsMessage(_)) {
            self.inbox.push_back(block.clone());
            self.drain(ctx, store);
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
        let IntegrityRequest::Hetcons(request) = request else {
            return Some(FernError::Unsupported("consensus ferns decide chain slots only".into()).to_response());
        };
        if let Err(e) = self.validate(store, &request) {
            return Some(e.to_response());
        }
        self.queue.push_back(Pending {
            from: from.clone(),
            correlation,
            request,
        });
        self.pump(ctx, store);
        self.drain(ctx, store);
        None
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, store: &BlockStore, token: u64) {
        let Some(retry) = self.config.retry else {
            return;
        };
        let Some(inst) = self.instances.get_mut(&token) else {
            return;
        };
        inst.attempt += 1;
        if inst.attempt >= retry.max_attempts {
            let inst = self.instances.remove(&token).expect("instance");
            for k in &inst.wanted.slots {
                self.busy.remove(k);
            }
            let r = Response::error(
                ErrorKind::Timeout,
                format!("no decision after {} ballots", inst.attempt),
            );
            for (addr, corr) in inst.clients {
                ctx.send(&addr, r.to_frame(corr));
            }
            self.pump(ctx, store);
        } else {
            self.max_counter += 1;
            inst.ballot = Ballot {
                counter: self.max_counter,
                proposer: self.keys.id(),
            };
            inst.value = inst.wanted.clone();
            inst.recovered = false;
            let window = retry.base_ms << inst.attempt.min(16);
            let delay = window + ctx.random_u64() % window.max(1);
            self.propose(ctx, store, token);
            ctx.set_timer(delay, token);
        }
        self.drain(ctx, store);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::ChainRoot;
    use crate::fern::Fern;
    use crate::message::frame_of;
    use crate::transport::sim::{SimConfig, Simulator};
    use crate::transport::{Exchange, FrameKind};
    use std::sync::Arc;

    fn keys(i: u8) -> Keypair {
        Keypair::from_seed([i; 32])
    }

    struct Net {
        sim: Simulator,
        names: Vec<NodeAddress>,
        roots: Vec<Reference>,
        setup: Vec<Block>,
    }

    /// `chains` chains of four participants each; fern 0 is the sequencer
    /// and votes in every chain.
    fn network(chains: usize, jitter: bool) -> Net {
        let n = 1 + 3 * chains;
        let ids: Vec<Keypair> = (0..n).map(|i| keys(i as u8 + 1)).collect();
        let names: Vec<NodeAddress> = (0..n).map(|i| NodeAddress::sim(format!("h{i}"))).collect();
        let mut setup = vec![];
        let mut roots = vec![];
        for c in 0..chains {
            let members = std::iter::once(0).chain(1 + 3 * c..4 + 3 * c).map(|i| ids[i].id()).collect();
            let config = Block::QuorumConfig(QuorumConfig::byzantine(members));
            let root = Block::ChainRoot(ChainRoot {
                name: format!("chain-{c}"),
                config: config.reference(),
            });
            roots.push(root.reference());
            setup.extend([config, root]);
        }
        let directory: BTreeMap<CryptoId, NodeAddress> = ids.iter().map(Keypair::id).zip(names.iter().cloned()).collect();
        let mut sim = Simulator::new(SimConfig {
            jitter,
            ..SimConfig::default()
        });
        for (k, name) in ids.into_iter().zip(&names) {
            let store = Arc::new(BlockStore::new());
            for b in &setup {
                store.insert(b.clone()).unwrap();
            }
            let fern = HetconsFern::new(
                k,
                HetconsConfig {
                    directory: directory.clone(),
                    retry: Some(RetryPolicy::default()),
                },
            );
            sim.add_node(name.clone(), Box::new(Fern::new(store, fern)));
        }
        Net {
            sim,
            names,
            roots,
            setup,
        }
    }

    fn meet(roots: &[&Reference], slot: u64, block: &Block) -> MeetRequest {
        MeetRequest {
            chains: roots.iter().map(|r| ((*r).clone(), slot)).collect(),
            block: block.reference(),
        }
    }

    /// Sends every request at once; returns (latency ms, response) in
    /// arrival order.
    fn ask(net: &mut Net, requests: &[MeetRequest]) -> Vec<(u64, Response)> {
        let to = net.names[0].clone();
        let mut ex = net.sim.exchange(NodeAddress::sim("client"));
        let start = ex.now_ms();
        for m in requests {
            let corr = ex.next_correlation();
            ex.send(&to, frame_of(FrameKind::ReqIntegrity, corr, &IntegrityRequest::Hetcons(m.clone())))
                .unwrap();
        }
        let mut got = vec![];
        while got.len() < requests.len() {
            let Some((_, f)) = ex.recv_until(start + 10_000) else {
                break;
            };
            if f.kind == FrameKind::Response {
                got.push((ex.now_ms() - start, Response::from_frame(&f).unwrap()));
            }
        }
        got
    }

    fn fern(net: &Net, i: usize) -> &HetconsFern {
        &net.sim.node::<Fern<HetconsFern>>(&net.names[i]).unwrap().service
    }

    fn configs(net: &Net) -> BTreeMap<Hash, QuorumConfig> {
        let store = BlockStore::new();
        for b in &net.setup {
            store.insert(b.clone()).unwrap();
        }
        net.roots.iter().map(|r| (r.hash, chain_config(&store, &r.hash).unwrap())).collect()
    }

    fn union_store(net: &Net) -> BlockStore {
        let store = BlockStore::new();
        for name in &net.names {
            for b in net.sim.node::<Fern<HetconsFern>>(name).unwrap().store().snapshot() {
                store.insert(b).unwrap();
            }
        }
        store
    }

    #[test]
    fn single_chain_decides_in_five_delays() {
        let mut net = network(1, false);
        let block = Block::opaque(b"first".to_vec());
        let root = net.roots[0].clone();
        let got = ask(&mut net, &[meet(&[&root], 1, &block)]);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, 500);
        let Response::Attestation { attestation, .. } = &got[0].1 else {
            panic!("{:?}", got[0].1)
        };
        assert!(verify_decision(attestation, &configs(&net), &union_store(&net)).unwrap());
        net.sim.run_until_idle(100_000);
        let key = SlotKey {
            root: root.hash,
            slot: 1,
        };
        for i in 0..4 {
            assert_eq!(fern(&net, i).decided(&key), Some(block.hash()));
        }
    }

    #[test]
    fn meet_needs_a_quorum_of_each_chain() {
        let mut net = network(2, false);
        let block = Block::opaque(b"meet".to_vec());
        let (a, b) = (net.roots[0].clone(), net.roots[1].clone());
        let got = ask(&mut net, &[meet(&[&a, &b], 1, &block)]);
        let Response::Attestation {
            attestation: decision @ Block::HetconsDecision(d),
            ..
        } = &got[0].1
        else {
            panic!("{:?}", got[0].1)
        };
        assert_eq!(got[0].0, 500);
        let store = union_store(&net);
        let voters: BTreeSet<CryptoId> = d.quorum.iter().map(|r| store.get(&r.hash).unwrap().issuer().unwrap()).collect();
        let cfgs = configs(&net);
        assert!(cfgs.values().all(|c| c.is_quorum(&voters)));
        assert!(verify_decision(decision, &cfgs, &store).unwrap());

        // Dropping one chain's configuration or its votes breaks the check.
        let only_a: BTreeMap<_, _> = cfgs.iter().filter(|(k, _)| **k == a.hash).map(|(k, v)| (*k, v.clone())).collect();
        assert!(verify_decision(decision, &only_a, &store).is_err());
        let chain_b = &cfgs[&b.hash];
        let thin: BTreeSet<Reference> = d
            .quorum
            .iter()
            .filter(|r| {
                let id = store.get(&r.hash).unwrap().issuer().unwrap();
                !chain_b.is_participant(&id) || id == keys(1).id()
            })
            .cloned()
            .collect();
        let forged = Block::HetconsDecision(HetconsDecision::new(d.ballot, d.value.clone(), thin, &keys(1)));
        assert!(!verify_decision(&forged, &cfgs, &store).unwrap());
        assert!(verify_decision(&forged, &cfgs, &BlockStore::new()).is_err());

        // Swapping one vote for a vote from another ballot is rejected.
        let other = Ballot {
            counter: d.ballot.counter + 1,
            ..d.ballot
        };
        let stray = Block::HetconsMessage(HetconsMessage::new(Phase::TwoB, other, d.value.clone(), BTreeSet::new(), vec![], &keys(2)));
        store.insert(stray.clone()).unwrap();
        let mut mixed = d.quorum.clone();
        mixed.pop_first();
        mixed.insert(stray.reference());
        let mixed = Block::HetconsDecision(HetconsDecision::new(d.ballot, d.value.clone(), mixed, &keys(1)));
        assert!(!verify_decision(&mixed, &cfgs, &store).unwrap());
    }

    #[test]
    fn conflicting_request_gets_the_earlier_decision() {
        let mut net = network(1, false);
        let root = net.roots[0].clone();
        let (x, y) = (Block::opaque(b"x".to_vec()), Block::opaque(b"y".to_vec()));
        let got = ask(&mut net, &[meet(&[&root], 1, &x), meet(&[&root], 1, &y)]);
        assert_eq!(got.len(), 2);
        let mut won = 0;
        for (_, r) in &got {
            match r {
                Response::Attestation {
                    attestation: Block::HetconsDecision(d),
                    ..
                } => {
                    assert_eq!(d.value.block, x.hash());
                    won += 1;
                }
                Response::Conflict {
                    existing: Block::HetconsDecision(d),
                } => assert_eq!(d.value.block, x.hash()),
                other => panic!("{other:?}"),
            }
        }
        assert_eq!(won, 1);
        // Asking again is idempotent.
        let again = ask(&mut net, &[meet(&[&root], 1, &x)]);
        assert!(matches!(again[0].1, Response::Attestation { .. }));
    }

    #[test]
    fn independent_slots_run_concurrently() {
        let mut net = network(2, false);
        let (a, b) = (net.roots[0].clone(), net.roots[1].clone());
        let reqs: Vec<MeetRequest> = (1..=3)
            .flat_map(|s| {
                [
                    meet(&[&a], s, &Block::opaque(format!("a{s}").into_bytes())),
                    meet(&[&b], s, &Block::opaque(format!("b{s}").into_bytes())),
                ]
            })
            .collect();
        let got = ask(&mut net, &reqs);
        assert_eq!(got.len(), 6);
        assert!(got.iter().all(|(t, r)| *t == 500 && matches!(r, Response::Attestation { .. })));
    }

    #[test]
    fn jittered_latency_stays_near_five_delays() {
        let mut net = network(1, true);
        let root = net.roots[0].clone();
        let mut total = 0;
        for s in 1..=20u64 {
            let got = ask(&mut net, &[meet(&[&root], s, &Block::opaque(s.to_be_bytes().to_vec()))]);
            total += got[0].0;
        }
        let mean = total as f64 / 20.0;
        assert!((450.0..=560.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn bad_requests_rejected() {
        let mut net = network(1, false);
        let root = net.roots[0].clone();
        let block = Block::opaque(b"z".to_vec());
        for (m, kind) in [
            (meet(&[&root], 0, &block), ErrorKind::Policy),
            (meet(&[&root, &root], 1, &block), ErrorKind::Policy),
            (meet(&[&net.setup[0].reference()], 1, &block), ErrorKind::Policy),
            (meet(&[&Block::opaque(b"?".to_vec()).reference()], 1, &block), ErrorKind::Evidence),
            (MeetRequest { chains: vec![], block: block.reference() }, ErrorKind::Policy),
        ] {
            let got = ask(&mut net, &[m]);
            match &got[0].1 {
                Response::Error { kind: k, .. } => assert_eq!(*k, kind),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn crashed_minority_still_decides() {
        let mut net = network(1, false);
        let root = net.roots[0].clone();
        let last = net.names[3].clone();
        net.sim.crash(&last);
        let got = ask(&mut net, &[meet(&[&root], 1, &Block::opaque(b"c".to_vec()))]);
        assert_eq!(got[0].0, 500);
        assert!(matches!(got[0].1, Response::Attestation { .. }));
    }
}
