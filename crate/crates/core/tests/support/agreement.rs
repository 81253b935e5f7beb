//! Three clients race different blocks into one slot through 3f+1 ferns,
//! f of which sign anything. Every honest fern sees every arrival order of
//! the three requests. No two blocks may ever collect a quorum.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use blockweb::client::quorum;
use blockweb::fern::agreement::{AgreementConfig, AgreementCore, AgreementFern, SlotLedger};
use blockweb::fern::fault::Equivocator;
use blockweb::fern::Fern;
use blockweb::message::{frame_of, IntegrityRequest, Response};
use blockweb::store::BlockStore;
use blockweb::transport::sim::{SimConfig, Simulator};
use blockweb::transport::{FrameKind, NodeAddress};
use blockweb::{Block, CryptoId, Hash, Keypair};

const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Runs one schedule; returns the blocks that gathered a quorum of
/// attestations for (root, slot 1), from everything the clients received.
fn schedule(f: usize, orders: &[usize]) -> BTreeSet<Hash> {
    let n = 3 * f + 1;
    let mut sim = Simulator::new(SimConfig::default());
    let ferns: Vec<NodeAddress> = (0..n).map(|i| NodeAddress::sim(format!("a{i}"))).collect();
    for (i, a) in ferns.iter().enumerate() {
        let keys = Keypair::from_seed([i as u8 + 1; 32]);
        // The last f ferns equivocate.
        if i >= n - f {
            sim.add_node(a.clone(), Box::new(Fern::new(Arc::new(BlockStore::new()), Equivocator::new(keys))));
        } else {
            let core = AgreementCore::new(keys, AgreementConfig::default(), SlotLedger::in_memory());
            sim.add_node(a.clone(), Box::new(Fern::new(Arc::new(BlockStore::new()), AgreementFern::new(Arc::new(core)))));
        }
    }
    let clients: Vec<NodeAddress> = (0..3).map(|i| NodeAddress::sim(format!("c{i}"))).collect();
    let root = Block::opaque(&b"root"[..]).reference();
    for (i, fern) in ferns.iter().enumerate().take(n - f) {
        for (rank, &c) in ORDERS[orders[i]].iter().enumerate() {
            sim.set_link_latency(&clients[c], fern, 10 * (rank as u64 + 1));
        }
    }
    for (i, c) in clients.iter().enumerate() {
        sim.add_driver(c.clone());
        let request = IntegrityRequest::ChainSlot {
            block: Block::opaque(format!("block {i}").into_bytes()).reference(),
            root: root.clone(),
            slot: 1,
            parent: root.clone(),
        };
        for a in &ferns {
            sim.send_from(c, a, frame_of(FrameKind::ReqIntegrity, 1, &request)).unwrap();
        }
    }
    sim.run_until_idle(100_000);

    let mut votes: BTreeMap<Hash, BTreeSet<CryptoId>> = BTreeMap::new();
    for c in &clients {
        while let Some((_, frame)) = sim.take_mail(c) {
            if let Ok(Response::Attestation {
                attestation: Block::ChainSlot(a),
                ..
            }) = Response::from_frame(&frame)
            {
                let valid = Block::ChainSlot(a.clone()).verify_signature();
                if valid && a.slot == 1 && a.root.hash == root.hash {
                    votes.entry(a.block.hash).or_default().insert(a.issuer);
                }
            }
        }
    }
    votes
        .into_iter()
        .filter(|(_, v)| v.len() >= quorum(f))
        .map(|(b, _)| b)
        .collect()
}

/// Every schedule for `f`; returns how many committed a block.
pub fn exhaustive(f: usize) -> usize {
    let honest = 2 * f + 1;
    let mut committed = 0;
    let total = 6usize.pow(honest as u32);
    for s in 0..total {
        let orders: Vec<usize> = (0..honest).map(|i| s / 6usize.pow(i as u32) % 6).collect();
        let won = schedule(f, &orders);
        assert!(won.len() <= 1, "f={f} schedule {orders:?}: {} blocks committed", won.len());
        committed += won.len();
    }
    committed
}
