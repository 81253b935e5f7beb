//! Two proposers race conflicting values through four acceptors, one of them
//! Byzantine, under every assignment of fast and slow links. No two
//! conflicting decisions may ever be derivable from the votes in flight.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use blockweb::block::{ChainRoot, HetconsValue, MeetRequest, Phase, QuorumConfig, SlotKey};
use blockweb::fern::fault::ByzantineAcceptor;
use blockweb::fern::hetcons::{chain_config, verify_decision, HetconsConfig, HetconsFern};
use blockweb::fern::Fern;
use blockweb::message::{frame_of, IntegrityRequest, Response};
use blockweb::store::BlockStore;
use blockweb::transport::sim::{SimConfig, Simulator};
use blockweb::transport::{Exchange, FrameKind, NodeAddress};
use blockweb::{Block, CryptoId, Hash, Keypair, Reference};

const FAST: u64 = 40;
const SLOW: u64 = 300;

struct Scenario {
    sim: Simulator,
    acceptors: Vec<NodeAddress>,
    proposers: Vec<NodeAddress>,
    roots: Vec<Reference>,
    configs: BTreeMap<Hash, QuorumConfig>,
}

/// `chains` chains; chain 0 has acceptors a0..a3 with a3 Byzantine, chain 1
/// (if any) has honest b0..b3. Proposers p0 and p1 vote nowhere.
fn scenario(chains: usize) -> Scenario {
    let mut names = vec![];
    for c in 0..chains {
        let prefix = if c == 0 { "a" } else { "b" };
        names.extend((0..4).map(|i| NodeAddress::sim(format!("{prefix}{i}"))));
    }
    names.extend((0..2).map(|i| NodeAddress::sim(format!("p{i}"))));
    let keys: Vec<Keypair> = (0..names.len()).map(|i| Keypair::from_seed([i as u8 + 40; 32])).collect();
    let directory: BTreeMap<CryptoId, NodeAddress> = keys.iter().map(Keypair::id).zip(names.iter().cloned()).collect();

    let mut setup = vec![];
    let mut roots = vec![];
    for c in 0..chains {
        let config = Block::QuorumConfig(QuorumConfig::byzantine(keys[4 * c..4 * c + 4].iter().map(Keypair::id).collect()));
        let root = Block::ChainRoot(ChainRoot {
            name: format!("c{c}"),
            config: config.reference(),
        });
        roots.push(root.reference());
        setup.extend([config, root]);
    }
    let setup_store = BlockStore::new();
    for b in &setup {
        setup_store.insert(b.clone()).unwrap();
    }
    let configs = roots.iter().map(|r| (r.hash, chain_config(&setup_store, &r.hash).unwrap())).collect();

    let mut sim = Simulator::new(SimConfig::default());
    for (i, (k, name)) in keys.into_iter().zip(&names).enumerate() {
        let store = Arc::new(BlockStore::new());
        for b in &setup {
            store.insert(b.clone()).unwrap();
        }
        if i == 3 {
            sim.add_node(name.clone(), Box::new(Fern::new(store, ByzantineAcceptor::new(k, directory.clone()))));
        } else {
            let config = HetconsConfig {
                directory: directory.clone(),
                retry: None,
            };
            sim.add_node(name.clone(), Box::new(Fern::new(store, HetconsFern::new(k, config))));
        }
    }
    let split = names.len() - 2;
    Scenario {
        sim,
        acceptors: names[..split].to_vec(),
        proposers: names[split..].to_vec(),
        roots,
        configs,
    }
}

/// Values for which some (ballot, value) collected a quorum of 2B votes in
/// every chain it names, from all votes held anywhere.
fn derivable(s: &Scenario) -> BTreeMap<SlotKey, BTreeSet<HetconsValue>> {
    let mut votes: BTreeMap<_, BTreeSet<CryptoId>> = BTreeMap::new();
    for name in s.acceptors.iter().chain(&s.proposers) {
        let store = if name.to_string().ends_with("a3") {
            s.sim.node::<Fern<ByzantineAcceptor>>(name).unwrap().store().snapshot()
        } else {
            s.sim.node::<Fern<HetconsFern>>(name).unwrap().store().snapshot()
        };
        for b in store {
            if let Block::HetconsMessage(m) = &b {
                if m.phase == Phase::TwoB && b.verify_signature() {
                    votes.entry((m.ballot, m.value.clone())).or_default().insert(m.issuer);
                }
            }
        }
    }
    let mut out: BTreeMap<SlotKey, BTreeSet<HetconsValue>> = BTreeMap::new();
    for ((_, value), voters) in votes {
        let decided = value
            .slots
            .iter()
            .all(|k| s.configs.get(&k.root).is_some_and(|c| c.is_quorum(&voters)));
        if decided {
            for k in &value.slots {
                out.entry(*k).or_default().insert(value.clone());
            }
        }
    }
    out
}

fn run(s: &mut Scenario, requests: [MeetRequest; 2]) -> Vec<Response> {
    let mut ex = s.sim.exchange(NodeAddress::sim("client"));
    for (p, m) in s.proposers.clone().iter().zip(requests) {
        let corr = ex.next_correlation();
        ex.send(p, frame_of(FrameKind::ReqIntegrity, corr, &IntegrityRequest::Hetcons(m)))
            .unwrap();
    }
    let mut got = vec![];
    while let Some((_, f)) = ex.recv_until(20_000) {
        if f.kind == FrameKind::Response {
            got.push(Response::from_frame(&f).unwrap());
        }
    }
    s.sim.run_until_idle(1_000_000);
    got
}

fn union_store(s: &Scenario) -> BlockStore {
    let store = BlockStore::new();
    for name in s.acceptors.iter().chain(&s.proposers) {
        let blocks = if name.to_string().ends_with("a3") {
            s.sim.node::<Fern<ByzantineAcceptor>>(name).unwrap().store().snapshot()
        } else {
            s.sim.node::<Fern<HetconsFern>>(name).unwrap().store().snapshot()
        };
        for b in blocks {
            store.insert(b).unwrap();
        }
    }
    store
}

fn check(s: &Scenario, responses: &[Response], schedule: u32) -> usize {
    let derived = derivable(s);
    for (k, values) in &derived {
        assert!(values.len() <= 1, "schedule {schedule:#b}: slot {} decided {values:?}", k.slot);
    }
    // Meets are all or nothing.
    for values in derived.values() {
        for v in values {
            for k in &v.slots {
                assert_eq!(derived.get(k).and_then(|s| s.first()), Some(v), "schedule {schedule:#b}");
            }
        }
    }
    let store = union_store(s);
    let mut decided = 0;
    for r in responses {
        if let Response::Attestation { attestation, .. } = r {
            assert!(verify_decision(attestation, &s.configs, &store).unwrap());
            let Block::HetconsDecision(d) = attestation else { panic!() };
            for k in &d.value.slots {
                assert_eq!(derived[k].first(), Some(&d.value));
            }
            decided += 1;
        }
    }
    for name in &s.acceptors {
        if name.to_string().ends_with("a3") {
            continue;
        }
        let fern = &s.sim.node::<Fern<HetconsFern>>(name).unwrap().service;
        for (k, d) in fern.decisions() {
            let Block::HetconsDecision(d) = d else { panic!() };
            assert_eq!(derived[k].first(), Some(&d.value), "schedule {schedule:#b}");
        }
    }
    decided
}

fn opaque(s: &str) -> Reference {
    Block::opaque(s.as_bytes().to_vec()).reference()
}

/// Every fast/slow assignment for two proposers on one chain; returns the
/// number of decisions delivered.
pub fn single_chain() -> usize {
    let mut decided = 0;
    for schedule in 0u32..1 << 9 {
        let mut s = scenario(1);
        let honest = &s.acceptors[..3].to_vec();
        for (i, p) in s.proposers.clone().iter().enumerate() {
            for (j, a) in honest.iter().enumerate() {
                let slow = schedule >> (3 * i + j) & 1 == 1;
                s.sim.set_link_latency(p, a, if slow { SLOW } else { FAST });
            }
        }
        for (j, a) in honest.iter().enumerate() {
            if schedule >> (6 + j) & 1 == 1 {
                for other in s.acceptors.clone().iter().chain(&s.proposers.clone()) {
                    if other != a {
                        s.sim.set_link_latency(a, other, SLOW);
                    }
                }
            }
        }
        let root = s.roots[0].clone();
        let requests = ["x", "y"].map(|b| MeetRequest {
            chains: vec![(root.clone(), 1)],
            block: opaque(b),
        });
        let responses = run(&mut s, requests);
        decided += check(&s, &responses, schedule);
    }
    decided
}

/// A meet across two chains racing a single-chain block; returns the number
/// of decisions delivered.
pub fn meet_against_single() -> usize {
    let mut decided = 0;
    for schedule in 0u32..1 << 7 {
        let mut s = scenario(2);
        let honest_a = s.acceptors[..3].to_vec();
        for (i, p) in s.proposers.clone().iter().enumerate() {
            for (j, a) in honest_a.iter().enumerate() {
                let slow = schedule >> (3 * i + j) & 1 == 1;
                s.sim.set_link_latency(p, a, if slow { SLOW } else { FAST });
            }
        }
        if schedule >> 6 & 1 == 1 {
            for b in s.acceptors[4..].to_vec() {
                s.sim.set_link_latency(&s.proposers[0].clone(), &b, SLOW);
            }
        }
        let (a, b) = (s.roots[0].clone(), s.roots[1].clone());
        let requests = [
            MeetRequest {
                chains: vec![(a.clone(), 1), (b, 1)],
                block: opaque("meet"),
            },
            MeetRequest {
                chains: vec![(a, 1)],
                block: opaque("solo"),
            },
        ];
        let responses = run(&mut s, requests);
        decided += check(&s, &responses, schedule);
    }
    decided
}
