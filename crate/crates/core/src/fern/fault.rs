//! Misbehaving ferns for safety tests.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::hetcons::participants;
use super::{attestation_response, FernError, Integrity};
use crate::block::{Ballot, Block, ChainSlotAttestation, Claim, HetconsMessage, HetconsValue, Phase};
use crate::crypto::{CryptoId, Keypair};
use crate::hash::Hash;
use crate::message::{stream_frames, IntegrityRequest, Response};
use crate::store::BlockStore;
use crate::transport::{Context, NodeAddress};

/// Signs every chain-slot request without checking anything, so it happily
/// attests conflicting blocks for one slot.
pub struct Equivocator {
    keys: Keypair,
}

impl Equivocator {
    pub fn new(keys: Keypair) -> Self {
        Self { keys }
    }
}

impl Integrity for Equivocator {
    fn on_request(
        &mut self,
        _ctx: &mut dyn Context,
        _store: &BlockStore,
        _from: &NodeAddress,
        _correlation: u64,
        request: IntegrityRequest,
    ) -> Option<Response> {
        Some(match request {
            IntegrityRequest::ChainSlot {
                block,
                root,
                slot,
                parent,
            } => attestation_response(Block::ChainSlot(ChainSlotAttestation::new(
                &block, &root, slot, &parent, &self.keys,
            ))),
            _ => FernError::Unsupported("equivocator only signs chain slots".into()).to_response(),
        })
    }
}

/// A consensus participant that casts a 2B vote for every ballot and value
/// it hears of, and answers each 1A with two different 1Bs: an honest-looking
/// one to half its peers and one carrying forged claims to the rest.
pub struct ByzantineAcceptor {
    keys: Keypair,
    directory: BTreeMap<CryptoId, NodeAddress>,
    ballots: BTreeSet<Ballot>,
    values: BTreeSet<HetconsValue>,
    one_bs: Vec<Hash>,
    promised: HashSet<Ballot>,
    voted: HashSet<(Ballot, HetconsValue)>,
    next_correlation: u64,
}

impl ByzantineAcceptor {
    pub fn new(keys: Keypair, directory: BTreeMap<CryptoId, NodeAddress>) -> Self {
        Self {
            keys,
            directory,
            ballots: BTreeSet::new(),
            values: BTreeSet::new(),
            one_bs: vec![],
            promised: HashSet::new(),
            voted: HashSet::new(),
            next_correlation: 0,
        }
    }

    fn addresses(&self, store: &BlockStore, value: &HetconsValue, proposer: &CryptoId) -> Vec<NodeAddress> {
        let mut ids = participants(store, value).unwrap_or_default();
        ids.insert(*proposer);
        ids.remove(&self.keys.id());
        ids.iter().filter_map(|id| self.directory.get(id).cloned()).collect()
    }

    fn send(&mut self, ctx: &mut dyn Context, store: &BlockStore, to: &[NodeAddress], message: HetconsMessage) {
        let block = Block::HetconsMessage(message);
        let _ = store.insert(block.clone());
        for addr in to {
            self.next_correlation += 1;
            for f in stream_frames(self.next_correlation, [&block]) {
                ctx.send(addr, f);
            }
        }
    }

    fn equivocate(&mut self, ctx: &mut dyn Context, store: &BlockStore, m: &HetconsMessage, proposal: Hash) {
        let to = self.addresses(store, &m.value, &m.ballot.proposer);
        let (honest, lied_to) = to.split_at(to.len() / 2);
        let justification = BTreeSet::from([crate::reference::Reference::bare(proposal)]);
        let plain = HetconsMessage::new(Phase::OneB, m.ballot, m.value.clone(), justification.clone(), vec![], &self.keys);
        self.send(ctx, store, honest, plain);
        let other = self.values.iter().find(|v| **v != m.value).cloned().unwrap_or(HetconsValue {
            slots: m.value.slots.clone(),
            block: Hash::of(b"forged"),
        });
        let claims = m
            .value
            .slots
            .iter()
            .map(|slot| Claim {
                slot: *slot,
                ballot: Ballot {
                    counter: m.ballot.counter.saturating_sub(1),
                    proposer: m.ballot.proposer,
                },
                value: other.clone(),
                quorum: self.one_bs.iter().take(3).copied().collect(),
            })
            .collect();
        let forged = HetconsMessage::new(Phase::OneB, m.ballot, m.value.clone(), justification, claims, &self.keys);
        self.send(ctx, store, lied_to, forged);
    }
}

impl Integrity for ByzantineAcceptor {
    fn on_block(&mut self, ctx: &mut dyn Context, store: &BlockStore, _from: &NodeAddress, block: &Block) {
        let Block::HetconsMessage(m) = block else {
            return;
        };
        if !block.verify_signature() {
            return;
        }
        self.values.insert(m.value.clone());
        match m.phase {
            Phase::OneB => self.one_bs.push(block.hash()),
            Phase::OneA | Phase::TwoA if m.issuer == m.ballot.proposer => {
                self.ballots.insert(m.ballot);
                if m.phase == Phase::OneA && self.promised.insert(m.ballot) {
                    self.equivocate(ctx, store, m, block.hash());
                }
            }
            _ => {}
        }
        let combos: Vec<(Ballot, HetconsValue)> = self
            .ballots
            .iter()
            .flat_map(|b| self.values.iter().map(move |v| (*b, v.clone())))
            .filter(|c| !self.voted.contains(c))
            .collect();
        for (ballot, value) in combos {
            self.voted.insert((ballot, value.clone()));
            let to = self.addresses(store, &value, &ballot.proposer);
            let vote = HetconsMessage::new(Phase::TwoB, ballot, value, BTreeSet::new(), vec![], &self.keys);
            self.send(ctx, store, &to, vote);
        }
    }

    fn on_request(
        &mut self,
        _ctx: &mut dyn Context,
        _store: &BlockStore,
        _from: &NodeAddress,
        _correlation: u64,
        _request: IntegrityRequest,
    ) -> Option<Response> {
        Some(FernError::Unsupported("byzantine acceptors take no requests".into()).to_response())
    }
}
