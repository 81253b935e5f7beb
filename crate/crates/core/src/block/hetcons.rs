//! Value types shared by consensus messages and chain configuration blocks.

use std::collections::BTreeSet;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::CryptoId;
use crate::hash::Hash;
use crate::reference::Reference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Phase {
    OneA = 1,
    OneB = 2,
    TwoA = 3,
    TwoB = 4,
}

impl Phase {
    pub fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        Ok(match tag {
            1 => Self::OneA,
            2 => Self::OneB,
            3 => Self::TwoA,
            4 => Self::TwoB,
            tag => return Err(DecodeError::UnknownTag { what: "phase", tag }),
        })
    }
}

/// Ballots order by counter, then by proposer key bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ballot {
    pub counter: u64,
    pub proposer: CryptoId,
}

impl Canonical for Ballot {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.counter);
        self.proposer.encode(w);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            counter: r.u64()?,
            proposer: CryptoId::decode(r)?,
        })
    }
}

/// A position in one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotKey {
    pub root: Hash,
    pub slot: u64,
}

impl Canonical for SlotKey {
    fn encode(&self, w: &mut Writer) {
        self.root.encode(w);
        w.u64(self.slot);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            root: Hash::decode(r)?,
            slot: r.u64()?,
        })
    }
}

/// What a consensus instance decides: one block for a set of chain slots.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HetconsValue {
    pub slots: BTreeSet<SlotKey>,
    pub block: Hash,
}

impl HetconsValue {
    pub fn is_meet(&self) -> bool {
        self.slots.len() > 1
    }
}

impl Canonical for HetconsValue {
    fn encode(&self, w: &mut Writer) {
        w.set(self.slots.iter());
        self.block.encode(w);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            slots: r.set::<SlotKey>()?.into_iter().collect(),
            block: Hash::decode(r)?,
        })
    }
}

/// "I accepted `value` for `slot` in `ballot`", backed by the phase-1B
/// messages that justified the acceptance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Claim {
    pub slot: SlotKey,
    pub ballot: Ballot,
    pub value: HetconsValue,
    pub quorum: BTreeSet<Hash>,
}

impl Canonical for Claim {
    fn encode(&self, w: &mut Writer) {
        w.nested(&self.slot);
        w.nested(&self.ballot);
        w.nested(&self.value);
        w.set(self.quorum.iter());
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            slot: r.nested()?,
            ballot: r.nested()?,
            value: r.nested()?,
            quorum: r.set::<Hash>()?.into_iter().collect(),
        })
    }
}

/// Participants of a chain and the sets of them that count as quorums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumConfig {
    pub participants: Vec<CryptoId>,
    pub quorums: BTreeSet<BTreeSet<CryptoId>>,
    pub fault_tolerance: u32,
}

struct IdSet(BTreeSet<CryptoId>);

impl Canonical for IdSet {
    fn encode(&self, w: &mut Writer) {
        w.set(self.0.iter());
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self(r.set::<CryptoId>()?.into_iter().collect()))
    }
}

impl QuorumConfig {
    /// Every subset of `size` participants is a quorum.
    pub fn threshold(participants: Vec<CryptoId>, size: usize, fault_tolerance: u32) -> Self {
        let mut quorums = BTreeSet::new();
        let n = participants.len();
        let mut pick: Vec<usize> = (0..size.min(n)).collect();
        if size <= n && size > 0 {
            loop {
                quorums.insert(pick.iter().map(|&i| participants[i]).collect());
                // Advance to the next combination in lexicographic order.
                let mut i = size;
                while i > 0 && pick[i - 1] == n - size + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                pick[i - 1] += 1;
                for j in i..size {
                    pick[j] = pick[j - 1] + 1;
                }
            }
        }
        Self {
            participants,
            quorums,
            fault_tolerance,
        }
    }

    /// The usual 3f+1 participants with quorums of 2f+1.
    pub fn byzantine(participants: Vec<CryptoId>) -> Self {
        let f = (participants.len().saturating_sub(1) / 3) as u32;
        Self::threshold(participants, 2 * f as usize + 1, f)
    }

    pub fn is_participant(&self, id: &CryptoId) -> bool {
        self.participants.contains(id)
    }

    /// True when `voters` contains some declared quorum.
    pub fn is_quorum(&self, voters: &BTreeSet<CryptoId>) -> bool {
        self.quorums.iter().any(|q| q.is_subset(voters))
    }

    /// Checks quorums are drawn from participants and pairwise share more
    /// than `fault_tolerance` members.
    pub fn validate(&self) -> Result<(), String> {
        if self.quorums.is_empty() {
            return Err("no quorums declared".into());
        }
        let members: BTreeSet<_> = self.participants.iter().collect();
        if members.len() != self.participants.len() {
            return Err("duplicate participant".into());
        }
        for q in &self.quorums {
            if q.iter().any(|id| !members.contains(id)) {
                return Err("quorum member is not a participant".into());
            }
        }
        let need = self.fault_tolerance as usize + 1;
        for a in &self.quorums {
            for b in &self.quorums {
                if a.intersection(b).count() < need {
                    return Err(format!("two quorums share fewer than {need} participants"));
                }
            }
        }
        Ok(())
    }
}

impl Canonical for QuorumConfig {
    fn encode(&self, w: &mut Writer) {
        w.list(self.participants.iter());
        let sets: Vec<IdSet> = self.quorums.iter().map(|q| IdSet(q.clone())).collect();
        w.set(sets.iter());
        w.u32(self.fault_tolerance);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            participants: r.list()?,
            quorums: r.set::<IdSet>()?.into_iter().map(|s| s.0).collect(),
            fault_tolerance: r.u32()?,
        })
    }
}

/// First block of a consensus-ordered chain; names its quorum configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainRoot {
    pub name: String,
    pub config: Reference,
}

impl Canonical for ChainRoot {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.name);
        w.nested(&self.config);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            name: r.str()?,
            config: r.nested()?,
        })
    }
}

/// A request to place one block in a slot of each listed chain at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeetRequest {
    pub chains: Vec<(Reference, u64)>,
    pub block: Reference,
}

struct ChainEntry(Reference, u64);

impl Canonical for ChainEntry {
    fn encode(&self, w: &mut Writer) {
        w.nested(&self.0);
        w.u64(self.1);
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self(r.nested()?, r.u64()?))
    }
}

impl MeetRequest {
    pub fn value(&self) -> HetconsValue {
        HetconsValue {
            slots: self
                .chains
                .iter()
                .map(|(root, slot)| SlotKey {
                    root: root.hash,
                    slot: *slot,
                })
                .collect(),
            block: self.block.hash,
        }
    }
}

impl Canonical for MeetRequest {
    fn encode(&self, w: &mut Writer) {
        let entries: Vec<ChainEntry> = self.chains.iter().map(|(r, s)| ChainEntry(r.clone(), *s)).collect();
        w.list(entries.iter());
        w.nested(&self.block);
    }

    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        let entries: Vec<ChainEntry> = r.list()?;
        Ok(Self {
            chains: entries.into_iter().map(|e| (e.0, e.1)).collect(),
            block: r.nested()?,
        })
    }
}
