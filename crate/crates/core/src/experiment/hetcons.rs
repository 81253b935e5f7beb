//! Consensus workloads: independent chains, meets across chains, clients
//! contending for one chain, and a mix of both.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{f3, key, mean, ms, ExperimentError, Metrics, Params};
use crate::block::{Block, ChainRoot, MeetRequest, QuorumConfig, SlotKey};
use crate::crypto::CryptoId;
use crate::fern::hetcons::{HetconsConfig, HetconsFern, RetryPolicy};
use crate::fern::Fern;
use crate::hash::Hash;
use crate::message::{frame_of, IntegrityRequest, Response};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::sim::{SimConfig, Simulator};
use crate::transport::{Context, Frame, FrameKind, Node, NodeAddress};

/// Which chains each appended block goes to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    /// Always these chain indices.
    Fixed(Vec<usize>),
    /// One random chain, or two distinct ones with this probability.
    Mixed { meet_percent: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendRecord {
    pub block: Hash,
    pub slots: BTreeSet<SlotKey>,
    pub submitted_micros: u64,
    pub decided_micros: u64,
    /// Requests sent, including ones refused because the slot was taken.
    pub attempts: u32,
}

struct Pending {
    block: Reference,
    chains: Vec<usize>,
    submitted_micros: u64,
    attempts: u32,
}

const RETRY: u64 = 1;
const RETRY_MS: u64 = 200;

/// A client that appends blocks one at a time through a sequencer. When its
/// slot is taken it learns the next free slot from the refusal and retries.
pub struct Appender {
    label: String,
    sequencer: NodeAddress,
    roots: Vec<Reference>,
    choice: Choice,
    count: usize,
    stop_slot: Option<u64>,
    next_slot: Vec<u64>,
    made: usize,
    correlation: u64,
    pending: Option<Pending>,
    records: Vec<AppendRecord>,
}

impl Appender {
    pub fn new(label: impl Into<String>, sequencer: NodeAddress, roots: Vec<Reference>, count: usize) -> Self {
        let chains = roots.len();
        Self {
            label: label.into(),
            sequencer,
            roots,
            choice: Choice::Fixed(vec![0]),
            count,
            stop_slot: None,
            next_slot: vec![1; chains],
            made: 0,
            correlation: 0,
            pending: None,
            records: vec![],
        }
    }

    pub fn choosing(mut self, choice: Choice) -> Self {
        self.choice = choice;
        self
    }

    /// Gives up once every chain it would use is past `slot`.
    pub fn stopping_after(mut self, slot: u64) -> Self {
        self.stop_slot = Some(slot);
        self
    }

    pub fn records(&self) -> &[AppendRecord] {
        &self.records
    }

    /// Blocks submitted but never decided.
    pub fn unfinished(&self) -> Option<Hash> {
        self.pending.as_ref().map(|p| p.block.hash)
    }

    fn past_stop(&self, chains: &[usize]) -> bool {
        self.stop_slot.is_some_and(|s| chains.iter().any(|&c| self.next_slot[c] > s))
    }

    fn pick(&self, ctx: &mut dyn Context) -> Vec<usize> {
        match &self.choice {
            Choice::Fixed(chains) => chains.clone(),
            Choice::Mixed { meet_percent } => {
                let n = self.roots.len() as u64;
                let first = (ctx.random_u64() % n) as usize;
                if n >= 2 && ctx.random_u64() % 100 < *meet_percent {
                    let second = (first + 1 + (ctx.random_u64() % (n - 1)) as usize) % n as usize;
                    vec![first, second]
                } else {
                    vec![first]
                }
            }
        }
    }

    fn next(&mut self, ctx: &mut dyn Context) {
        if self.made == self.count {
            return;
        }
        let chains = self.pick(ctx);
        if self.past_stop(&chains) {
            return;
        }
        let block = Block::opaque(format!("{}/{}", self.label, self.made).into_bytes()).reference();
        self.made += 1;
        self.pending = Some(Pending {
            block,
            chains,
            submitted_micros: ctx.now_micros(),
            attempts: 0,
        });
        self.submit(ctx);
    }

    fn submit(&mut self, ctx: &mut dyn Context) {
        let Some(p) = self.pending.as_mut() else { return };
        p.attempts += 1;
        let request = MeetRequest {
            chains: p.chains.iter().map(|&c| (self.roots[c].clone(), self.next_slot[c])).collect(),
            block: p.block.clone(),
        };
        self.correlation += 1;
        let frame = frame_of(FrameKind::ReqIntegrity, self.correlation, &IntegrityRequest::Hetcons(request));
        ctx.send(&self.sequencer, frame);
    }

    fn learn(&mut self, decision: &Block) -> Option<(Hash, BTreeSet<SlotKey>)> {
        let Block::HetconsDecision(d) = decision else { return None };
        for k in &d.value.slots {
            if let Some(i) = self.roots.iter().position(|r| r.hash == k.root) {
                self.next_slot[i] = self.next_slot[i].max(k.slot + 1);
            }
        }
        Some((d.value.block, d.value.slots.clone()))
    }
}

impl Node for Appender {
    fn on_start(&mut self, ctx: &mut dyn Context) {
        self.next(ctx);
    }

    fn on_frame(&mut self, ctx: &mut dyn Context, _from: &NodeAddress, frame: Frame) {
        if frame.kind != FrameKind::Response || frame.correlation != self.correlation || self.pending.is_none() {
            return;
        }
        let won = match Response::from_frame(&frame) {
            Ok(Response::Attestation { attestation, .. }) | Ok(Response::Conflict { existing: attestation }) => {
                self.learn(&attestation)
            }
            _ => {
                ctx.set_timer(RETRY_MS, RETRY);
                return;
            }
        };
        let p = self.pending.as_ref().expect("pending");
        match won {
            Some((block, slots)) if block == p.block.hash => {
                let p = self.pending.take().expect("pending");
                self.records.push(AppendRecord {
                    block,
                    slots,
                    submitted_micros: p.submitted_micros,
                    decided_micros: ctx.now_micros(),
                    attempts: p.attempts,
                });
                self.next(ctx);
            }
            _ if self.past_stop(&p.chains) => self.pending = None,
            _ => self.submit(ctx),
        }
    }

    fn on_timer(&mut self, ctx: &mut dyn Context, token: u64) {
        if token == RETRY {
            self.submit(ctx);
        }
    }
}

pub(crate) struct Net {
    pub sim: Simulator,
    pub roots: Vec<Reference>,
    /// Participants of each chain.
    pub chains: Vec<Vec<NodeAddress>>,
    pub sequencers: Vec<NodeAddress>,
}

/// `chains` chains of `per_chain` participants each, plus `sequencers`
/// sequencers that vote nowhere.
pub(crate) fn network(seed: u64, chains: usize, per_chain: usize, sequencers: usize, jitter: bool) -> Net {
    let mut names = vec![];
    let mut keys = vec![];
    let mut setup = vec![];
    let mut roots = vec![];
    let mut members = vec![];
    for c in 0..chains {
        let addrs: Vec<NodeAddress> = (0..per_chain).map(|i| NodeAddress::sim(format!("c{c}f{i}"))).collect();
        let chain_keys: Vec<_> = (0..per_chain).map(|i| key(seed, &format!("chain{c}"), i)).collect();
        let config = Block::QuorumConfig(QuorumConfig::byzantine(chain_keys.iter().map(|k| k.id()).collect()));
        let root = Block::ChainRoot(ChainRoot {
            name: format!("chain {c}"),
            config: config.reference(),
        });
        roots.push(root.reference());
        setup.extend([config, root]);
        names.extend(addrs.iter().cloned());
        keys.extend(chain_keys);
        members.push(addrs);
    }
    let sequencer_names: Vec<NodeAddress> = (0..sequencers).map(|i| NodeAddress::sim(format!("seq{i}"))).collect();
    names.extend(sequencer_names.iter().cloned());
    keys.extend((0..sequencers).map(|i| key(seed, "sequencer", i)));
    let directory: BTreeMap<CryptoId, NodeAddress> = keys.iter().map(|k| k.id()).zip(names.iter().cloned()).collect();

    let mut sim = Simulator::new(SimConfig {
        seed,
        jitter,
        ..SimConfig::default()
    });
    for (k, name) in keys.into_iter().zip(&names) {
        let store = Arc::new(BlockStore::new());
        for b in &setup {
            store.insert(b.clone()).expect("setup block");
        }
        let config = HetconsConfig {
            directory: directory.clone(),
            retry: Some(RetryPolicy::default()),
        };
        sim.add_node(name.clone(), Box::new(Fern::new(store, HetconsFern::new(k, config))));
    }
    Net {
        sim,
        roots,
        chains: members,
        sequencers: sequencer_names,
    }
}

fn records(sim: &Simulator, clients: &[NodeAddress]) -> Vec<Vec<AppendRecord>> {
    clients
        .iter()
        .map(|c| sim.node::<Appender>(c).expect("appender").records().to_vec())
        .collect()
}

fn latency_ms(r: &AppendRecord) -> f64 {
    (r.decided_micros - r.submitted_micros) as f64 / 1000.0
}

/// Blocks per second between the first and last of `records`.
fn throughput(records: &[&AppendRecord]) -> f64 {
    let (Some(first), Some(last)) = (records.iter().map(|r| r.decided_micros).min(), records.iter().map(|r| r.decided_micros).max())
    else {
        return 0.0;
    };
    if last == first {
        return 0.0;
    }
    (records.len() - 1) as f64 / ((last - first) as f64 / 1e6)
}

fn check_settled(sim: &Simulator, clients: &[NodeAddress]) -> Result<(), ExperimentError> {
    for c in clients {
        if let Some(h) = sim.node::<Appender>(c).expect("appender").unfinished() {
            return Err(ExperimentError::Failed(format!("{c}: block {h} never decided")));
        }
    }
    Ok(())
}

pub(crate) fn parallel(p: &mut Params, seed: u64) -> Result<Metrics, ExperimentError> {
    let counts = p.list("chains", "1..4")?;
    let blocks = p.u64("blocks", 100)? as usize;
    let warmup = p.u64("warmup", 20)? as usize;
    let jitter = p.bool("jitter", true)?;
    let mut m = Metrics::new(&["chains", "chain", "index", "latency_ms"]);
    let mut single = None;
    for &n in &counts {
        let n = n as usize;
        let mut net = network(seed, n, 4, n, jitter);
        let clients: Vec<NodeAddress> = (0..n).map(|i| NodeAddress::sim(format!("client{i}"))).collect();
        for (i, c) in clients.iter().enumerate() {
            let a = Appender::new(c.to_string(), net.sequencers[i].clone(), net.roots.clone(), blocks).choosing(Choice::Fixed(vec![i]));
            net.sim.add_node(c.clone(), Box::new(a));
        }
        net.sim.run_until_idle(u64::MAX);
        check_settled(&net.sim, &clients)?;
        let all = records(&net.sim, &clients);
        let mut total = 0.0;
        let mut latencies = vec![];
        for (chain, rs) in all.iter().enumerate() {
            let measured: Vec<&AppendRecord> = rs.iter().skip(warmup).collect();
            for (i, r) in measured.iter().enumerate() {
                m.row(&[&n, &chain, &(i + warmup), &ms(r.decided_micros - r.submitted_micros)]);
                latencies.push(latency_ms(r));
            }
            total += throughput(&measured);
        }
        m.header(&format!("mean_latency_ms.chains{n}"), f3(mean(&latencies)));
        m.header(&format!("throughput.chains{n}"), f3(total));
        if n == 1 {
            single = Some(total);
        }
        if let Some(one) = single {
            m.header(&format!("linearity.chains{n}"), f3(total / (one * n as f64)));
        }
    }
    Ok(m)
}

pub(crate) fn multichain(p: &mut Params, seed: u64) -> Result<Metrics, ExperimentError> {
    let counts = p.list("chains", "1..4")?;
    let blocks = p.u64("blocks", 60)? as usize;
    let warmup = p.u64("warmup", 10)? as usize;
    let jitter = p.bool("jitter", true)?;
    let mut m = Metrics::new(&["chains", "index", "latency_ms"]);
    for &n in &counts {
        let n = n as usize;
        let mut net = network(seed, n, 4, 1, jitter);
        let client = NodeAddress::sim("client");
        let a = Appender::new("client", net.sequencers[0].clone(), net.roots.clone(), blocks).choosing(Choice::Fixed((0..n).collect()));
        net.sim.add_node(client.clone(), Box::new(a));
        net.sim.run_until_idle(u64::MAX);
        check_settled(&net.sim, std::slice::from_ref(&client))?;
        let rs = &records(&net.sim, std::slice::from_ref(&client))[0];
        let mut latencies = vec![];
        for (i, r) in rs.iter().enumerate().skip(warmup) {
            m.row(&[&n, &i, &ms(r.decided_micros - r.submitted_micros)]);
            latencies.push(latency_ms(r));
        }
        m.header(&format!("mean_latency_ms.chains{n}"), f3(mean(&latencies)));
    }
    Ok(m)
}

pub(crate) fn contention(p: &mut Params, seed: u64) -> Result<Metrics, ExperimentError> {
    let counts = p.list("clients", "1,2,4,8")?;
    let from = p.u64("from_slot", 50)?;
    let to = p.u64("to_slot", 150)?;
    let jitter = p.bool("jitter", true)?;
    if from >= to {
        return Err(ExperimentError::Param {
            key: "from_slot".into(),
            message: "must be below to_slot".into(),
        });
    }
    let mut m = Metrics::new(&["clients", "slot", "client", "decided_ms", "attempts"]);
    for &n in &counts {
        let n = n as usize;
        let mut net = network(seed, 1, 4, 1, jitter);
        let clients: Vec<NodeAddress> = (0..n).map(|i| NodeAddress::sim(format!("client{i}"))).collect();
        for c in &clients {
            let a = Appender::new(c.to_string(), net.sequencers[0].clone(), net.roots.clone(), to as usize).stopping_after(to);
            net.sim.add_node(c.clone(), Box::new(a));
        }
        net.sim.run_until_idle(u64::MAX);
        let all = records(&net.sim, &clients);
        let mut by_slot: BTreeMap<u64, (usize, &AppendRecord)> = BTreeMap::new();
        for (i, rs) in all.iter().enumerate() {
            for r in rs {
                let slot = r.slots.first().expect("one slot").slot;
                if by_slot.insert(slot, (i, r)).is_some() {
                    return Err(ExperimentError::Failed(format!("slot {slot} won twice")));
                }
            }
        }
        let window: Vec<&AppendRecord> = by_slot.range(from..=to).map(|(_, (_, r))| *r).collect();
        if window.len() as u64 != to - from + 1 {
            return Err(ExperimentError::Failed(format!("{n} clients filled {} of slots {from}..={to}", window.len())));
        }
        for (slot, (i, r)) in by_slot.range(from..=to) {
            m.row(&[&n, slot, i, &ms(r.decided_micros), &r.attempts]);
        }
        m.header(&format!("throughput.clients{n}"), f3(throughput(&window)));
    }
    Ok(m)
}

/// Per-chain slot ledgers as held by each chain's participants and the
/// sequencers. Returns (meets decided, violations), where a violation is a
/// slot holding two blocks or a meet missing from one of its chains.
pub(crate) fn meet_audit(net: &Net) -> (usize, Vec<String>) {
    let mut holders: Vec<&NodeAddress> = net.chains.iter().flatten().collect();
    holders.extend(&net.sequencers);
    let mut ledger: BTreeMap<SlotKey, BTreeSet<Hash>> = BTreeMap::new();
    let mut meets: BTreeMap<Hash, BTreeSet<SlotKey>> = BTreeMap::new();
    let mut violations = vec![];
    for name in holders {
        let fern = &net.sim.node::<Fern<HetconsFern>>(name).expect("fern").service;
        for (k, d) in fern.decisions() {
            let Block::HetconsDecision(d) = d else { continue };
            if !d.value.slots.contains(k) {
                violations.push(format!("{name} filed slot {} under a value for other slots", k.slot));
            }
            ledger.entry(*k).or_default().insert(d.value.block);
            if d.value.is_meet() {
                meets.insert(d.value.block, d.value.slots.clone());
            }
        }
    }
    for (k, blocks) in &ledger {
        if blocks.len() > 1 {
            violations.push(format!("slot {} of chain {} holds {} blocks", k.slot, k.root, blocks.len()));
        }
    }
    for (block, slots) in &meets {
        for k in slots {
            if !ledger.get(k).is_some_and(|b| b.contains(block)) {
                violations.push(format!("meet {block} missing from chain {} slot {}", k.root, k.slot));
            }
        }
    }
    (meets.len(), violations)
}

pub(crate) struct MixedRun {
    pub commits: usize,
    pub meets: usize,
    pub violations: Vec<String>,
    pub elapsed_micros: u64,
}

pub(crate) fn mixed_run(seed: u64, chains: usize, clients: usize, blocks: usize, meet_percent: u64, jitter: bool) -> MixedRun {
    let mut net = network(seed, chains, 4, 1, jitter);
    let names: Vec<NodeAddress> = (0..clients).map(|i| NodeAddress::sim(format!("client{i}"))).collect();
    for c in &names {
        let a = Appender::new(c.to_string(), net.sequencers[0].clone(), net.roots.clone(), blocks).choosing(Choice::Mixed { meet_percent });
        net.sim.add_node(c.clone(), Box::new(a));
    }
    net.sim.run_until_idle(u64::MAX);
    let all = records(&net.sim, &names);
    let commits = all.iter().map(Vec::len).sum();
    let elapsed_micros = all.iter().flatten().map(|r| r.decided_micros).max().unwrap_or(0);
    let (meets, mut violations) = meet_audit(&net);
    for c in &names {
        if let Some(h) = net.sim.node::<Appender>(c).expect("appender").unfinished() {
            violations.push(format!("{c}: block {h} never decided"));
        }
    }
    MixedRun {
        commits,
        meets,
        violations,
        elapsed_micros,
    }
}

pub(crate) fn mixed(p: &mut Params, seed: u64) -> Result<Metrics, ExperimentError> {
    let chain_counts = p.list("chains", "2,7")?;
    let client_counts = p.list("clients", "2..5")?;
    let blocks = p.u64("blocks", 50)? as usize;
    let meet_percent = p.u64("meet_percent", 10)?;
    let jitter = p.bool("jitter", true)?;
    let mut m = Metrics::new(&["chains", "clients", "commits", "meets", "elapsed_ms", "throughput", "violations"]);
    let mut total_meets = 0;
    let mut total_violations = 0;
    for &c in &chain_counts {
        for &n in &client_counts {
            let run = mixed_run(seed, c as usize, n as usize, blocks, meet_percent, jitter);
            for v in &run.violations {
                log::error!("{c} chains, {n} clients: {v}");
            }
            let rate = run.commits as f64 / (run.elapsed_micros as f64 / 1e6);
            m.row(&[&c, &n, &run.commits, &run.meets, &ms(run.elapsed_micros), &f3(rate), &run.violations.len()]);
            total_meets += run.meets;
            total_violations += run.violations.len();
        }
    }
    m.header("meets", total_meets);
    m.header("violations", total_violations);
    Ok(m)
}
