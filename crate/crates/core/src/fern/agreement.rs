//! Chain-slot agreement: a fern attests that a block occupies a slot of a
//! chain and never attests a different block for that slot.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{
    attestation_response, availability_evidence, integrity_evidence, FernError, Integrity, Requirement,
};
use crate::block::{Block, ChainSlotAttestation};
use crate::crypto::Keypair;
use crate::hash::Hash;
use crate::message::{IntegrityRequest, Response};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::{Context, NodeAddress};

/// Smallest quorum of `3f + 1` ferns whose pairwise overlaps hold an honest fern.
pub fn quorum_size(f: usize) -> usize {
    2 * f + 1
}

/// Evidence a request must carry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgreementConfig {
    /// Attestations on the parent for the previous slot.
    pub parent_integrity: Requirement,
    /// Availability attestations on the block.
    pub block_availability: Requirement,
}

/// Write-once map from `(root, slot)` to the attestation issued for it.
#[derive(Default)]
pub struct SlotLedger {
    entries: Mutex<HashMap<(Hash, u64), Block>>,
    journal: Option<BlockStore>,
}

/// Outcome of [`SlotLedger::claim`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Claimed {
    /// The offered attestation was recorded.
    New(Block),
    /// The slot already held this block; the earlier attestation.
    Existing(Block),
    /// The slot holds a different block.
    Conflict(Block),
}

fn slot_of(b: &Block) -> &ChainSlotAttestation {
    match b {
        Block::ChainSlot(a) => a,
        other => panic!("ledger holds only chain-slot attestations, not {:?}", other.kind()),
    }
}

impl SlotLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Reopens a ledger journal, so a restarted fern keeps its promises.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let journal = BlockStore::with_journal(path)?;
        let mut entries = HashMap::new();
        for b in journal.snapshot() {
            if let Block::ChainSlot(a) = &b {
                entries.entry((a.root.hash, a.slot)).or_insert(b);
            }
        }
        Ok(Self {
            entries: Mutex::new(entries),
            journal: Some(journal),
        })
    }

    pub fn get(&self, root: &Hash, slot: u64) -> Option<Block> {
        self.entries.lock().expect("ledger lock").get(&(*root, slot)).cloned()
    }

    /// Atomically records `attestation` unless its slot is already bound.
    /// The journal is flushed before a new entry becomes visible.
    pub fn claim(&self, attestation: Block) -> std::io::Result<Claimed> {
        let a = slot_of(&attestation);
        let key = (a.root.hash, a.slot);
        let mut g = self.entries.lock().expect("ledger lock");
        if let Some(prev) = g.get(&key) {
            return Ok(if slot_of(prev).block.hash == a.block.hash {
                Claimed::Existing(prev.clone())
            } else {
                Claimed::Conflict(prev.clone())
            });
        }
        if let Some(j) = &self.journal {
            j.insert(attestation.clone())?;
        }
        g.insert(key, attestation.clone());
        Ok(Claimed::New(attestation))
    }

    /// Every recorded attestation, in no particular order.
    pub fn entries(&self) -> Vec<Block> {
        self.entries.lock().expect("ledger lock").values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Thread-safe decision logic of one agreement fern.
pub struct AgreementCore {
    keys: Keypair,
    config: AgreementConfig,
    ledger: SlotLedger,
}

impl AgreementCore {
    pub fn new(keys: Keypair, config: AgreementConfig, ledger: SlotLedger) -> Self {
        Self { keys, config, ledger }
    }

    pub fn id(&self) -> crate::crypto::CryptoId {
        self.keys.id()
    }

    pub fn ledger(&self) -> &SlotLedger {
        &self.ledger
    }

    /// Attests `block` at `slot` of the chain rooted at `root`, or says why not.
    /// Evidence attestations are looked up in `store`.
    pub fn request(
        &self,
        store: &BlockStore,
        block: &Reference,
        root: &Reference,
        slot: u64,
        parent: &Reference,
    ) -> Result<Block, FernError> {
        if slot == 0 {
            return Err(FernError::Policy("slots start at 1".into()));
        }
        if let Some(prev) = self.ledger.get(&root.hash, slot) {
            return self.settle(Claimed::Existing(prev), block);
        }
        if slot == 1 {
            if parent.hash != root.hash {
                return Err(FernError::Policy("slot 1 must have the root as parent".into()));
            }
        } else {
            self.config
                .parent_integrity
                .check("parent integrity", &integrity_evidence(store, parent), |b| {
                    matches!(b, Block::ChainSlot(a)
                        if a.block.hash == parent.hash && a.root.hash == root.hash && a.slot == slot - 1)
                })?;
        }
        self.config
            .block_availability
            .check("block availability", &availability_evidence(store, block), |_| true)?;
        let att = Block::ChainSlot(ChainSlotAttestation::new(block, root, slot, parent, &self.keys));
        let claimed = self
            .ledger
            .claim(att)
            .map_err(|e| FernError::Evidence(format!("ledger write failed: {e}")))?;
        self.settle(claimed, block)
    }

    fn settle(&self, claimed: Claimed, block: &Reference) -> Result<Block, FernError> {
        match claimed {
            Claimed::New(b) => Ok(b),
            Claimed::Existing(b) | Claimed::Conflict(b) => {
                let a = slot_of(&b);
                if a.block.hash == block.hash {
                    Ok(b)
                } else {
                    Err(FernError::Refused(format!(
                        "slot {} of {} already holds {}",
                        a.slot, a.root.hash, a.block.hash
                    )))
                }
            }
        }
    }
}

/// Network-facing agreement fern.
pub struct AgreementFern {
    core: Arc<AgreementCore>,
}

impl AgreementFern {
    pub fn new(core: Arc<AgreementCore>) -> Self {
        Self { core }
    }

    pub fn core(&self) -> &Arc<AgreementCore> {
        &self.core
    }
}

impl Integrity for AgreementFern {
    fn on_request(
        &mut self,
        _ctx: &mut dyn Context,
        store: &BlockStore,
        _from: &NodeAddress,
        _correlation: u64,
        request: IntegrityRequest,
    ) -> Option<Response> {
        let IntegrityRequest::ChainSlot {
            block,
            root,
            slot,
            parent,
        } = request
        else {
            return Some(FernError::Unsupported("agreement ferns attest chain slots only".into()).to_response());
        };
        Some(match self.core.request(store, &block, &root, slot, &parent) {
            Ok(att) => {
                if let Err(e) = store.insert(att.clone()) {
                    log::warn!("could not store attestation: {e}");
                }
                attestation_response(att)
            }
            Err(e) => e.to_response(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::StoreForever;
    use crate::codec::Canonical;
    use proptest::prelude::*;

    fn keys(i: u8) -> Keypair {
        Keypair::from_seed([i; 32])
    }

    fn core(i: u8, config: AgreementConfig) -> AgreementCore {
        AgreementCore::new(keys(i), config, SlotLedger::in_memory())
    }

    fn opaque(s: &str) -> Reference {
        Block::opaque(s.as_bytes().to_vec()).reference()
    }

    fn f1_config() -> AgreementConfig {
        AgreementConfig {
            parent_integrity: Requirement::new(3, (1..=4).map(|i| keys(i).id())),
            block_availability: Requirement::default(),
        }
    }

    #[test]
    fn slot_two_needs_parent_quorum() {
        let store = BlockStore::new();
        let ferns: Vec<AgreementCore> = (1..=4).map(|i| core(i, f1_config())).collect();
        let root = opaque("root");
        let b1 = opaque("b1");
        let mut parent = b1.clone();
        for f in &ferns[..3] {
            let a = f.request(&store, &b1, &root, 1, &root).unwrap();
            store.insert(a.clone()).unwrap();
            parent = parent.with_integrity(a.reference()).unwrap();
        }
        let b2 = opaque("b2");
        assert!(ferns[3].request(&store, &b2, &root, 2, &parent).is_ok());

        let thin = parent.integrity()[..2]
            .iter()
            .fold(b1.clone(), |r, i| r.with_integrity(i.clone()).unwrap());
        let err = ferns[0].request(&store, &b2, &root, 2, &thin).unwrap_err();
        assert!(matches!(err, FernError::Policy(m) if m.contains("parent integrity")));
    }

    #[test]
    fn parent_evidence_must_match_slot_and_chain() {
        let store = BlockStore::new();
        let f = core(1, f1_config());
        let others: Vec<AgreementCore> = (2..=4).map(|i| core(i, AgreementConfig::default())).collect();
        let (root, other_root, b1) = (opaque("root"), opaque("elsewhere"), opaque("b1"));
        let mut parent = b1.clone();
        for o in &others {
            let a = o.request(&store, &b1, &other_root, 1, &other_root).unwrap();
            store.insert(a.clone()).unwrap();
            parent = parent.with_integrity(a.reference()).unwrap();
        }
        assert!(f.request(&store, &opaque("b2"), &root, 2, &parent).is_err());
    }

    #[test]
    fn conflicting_block_refused_and_same_block_idempotent() {
        let store = BlockStore::new();
        let f = core(1, AgreementConfig::default());
        let root = opaque("root");
        let a = f.request(&store, &opaque("x"), &root, 1, &root).unwrap();
        let again = f.request(&store, &opaque("x"), &root, 1, &root).unwrap();
        assert_eq!(a.to_canonical_bytes(), again.to_canonical_bytes());
        let err = f.request(&store, &opaque("y"), &root, 1, &root).unwrap_err();
        assert!(matches!(&err, FernError::Refused(m) if m.contains(&opaque("x").hash.to_string())));
    }

    #[test]
    fn availability_threshold() {
        let store = BlockStore::new();
        let wilburs: Vec<Keypair> = (10..12).map(keys).collect();
        let config = AgreementConfig {
            block_availability: Requirement::new(2, wilburs.iter().map(Keypair::id)),
            ..AgreementConfig::default()
        };
        let f = core(1, config);
        let root = opaque("root");
        let b = opaque("b");
        let mut with_one = b.clone();
        let mut with_two = b.clone();
        for (i, w) in wilburs.iter().enumerate() {
            let a = Block::StoreForever(StoreForever::new(&b, Default::default(), w));
            store.insert(a.clone()).unwrap();
            if i == 0 {
                with_one = with_one.with_availability(a.hash());
            }
            with_two = with_two.with_availability(a.hash());
        }
        // Not from an accepted wilbur.
        let stranger = Block::StoreForever(StoreForever::new(&b, Default::default(), &keys(99)));
        store.insert(stranger.clone()).unwrap();
        let padded = with_one.clone().with_availability(stranger.hash());
        let err = f.request(&store, &padded, &root, 1, &root).unwrap_err();
        assert!(matches!(err, FernError::Policy(m) if m.contains("block availability")));
        assert!(f.request(&store, &with_two, &root, 1, &root).is_ok());
    }

    #[test]
    fn restarted_fern_keeps_its_word() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger");
        let store = BlockStore::new();
        let root = opaque("root");
        {
            let f = AgreementCore::new(keys(1), AgreementConfig::default(), SlotLedger::open(&path).unwrap());
            f.request(&store, &opaque("x"), &root, 1, &root).unwrap();
        }
        let f = AgreementCore::new(keys(1), AgreementConfig::default(), SlotLedger::open(&path).unwrap());
        assert!(f.request(&store, &opaque("y"), &root, 1, &root).is_err());
        assert!(f.request(&store, &opaque("x"), &root, 1, &root).is_ok());
    }

    #[test]
    fn concurrent_conflicts_yield_one_winner_per_slot() {
        let store = Arc::new(BlockStore::new());
        let f = Arc::new(core(1, AgreementConfig::default()));
        let parent = opaque("p");
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let (f, store, parent) = (f.clone(), store.clone(), parent.clone());
                std::thread::spawn(move || {
                    (2..200u64)
                        .filter(|&s| f.request(&store, &opaque(&format!("{t}")), &opaque("root"), s, &parent).is_ok())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut slots: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        slots.sort();
        assert_eq!(slots, (2..200).collect::<Vec<_>>());
    }

    proptest! {
        /// No two ledger entries or issued attestations bind one slot to two blocks.
        #[test]
        fn never_equivocates(reqs in prop::collection::vec((0u8..3, 1u64..4, 0u8..4), 1..60)) {
            let store = BlockStore::new();
            let f = core(1, AgreementConfig::default());
            let roots = [opaque("r0"), opaque("r1"), opaque("r2")];
            let mut issued: Vec<Block> = vec![];
            for (r, slot, b) in reqs {
                let root = &roots[r as usize];
                let parent = if slot == 1 { root.clone() } else { opaque("p") };
                if let Ok(a) = f.request(&store, &opaque(&format!("b{b}")), root, slot, &parent) {
                    issued.push(a);
                }
            }
            let mut seen: HashMap<(Hash, u64), Hash> = HashMap::new();
            for a in &issued {
                let a = slot_of(a);
                let prev = seen.insert((a.root.hash, a.slot), a.block.hash);
                prop_assert!(prev.is_none_or(|p| p == a.block.hash));
            }
        }
    }
}
