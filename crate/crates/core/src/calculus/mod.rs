//! Finite models of observer belief.
//!
//! A [`Universe`] is one candidate history: the blocks that exist, a strict
//! order on them, and the subset that is retrievable. A [`Belief`] is the set
//! of universes an observer still considers possible. Everything here
//! enumerates explicitly, so it is meant for small hand-built models and for
//! checking properties exhaustively.

mod interpret;
pub mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

pub use interpret::{AttestationTable, AvailabilityFact, CommitFact};

/// Small-integer block label inside a model.
pub type BlockId = u8;

/// Largest number of distinct blocks a model may name.
pub const MAX_MODEL_BLOCKS: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CalculusError {
    #[error("state is not a member of the data structure")]
    StateNotInAdds,
    #[error("block label {0} outside model range")]
    BlockOutOfRange(usize),
    #[error("order is not strict: {0} precedes itself")]
    CyclicOrder(BlockId),
    #[error("available blocks must exist")]
    AvailNotInExist,
    #[error("model: {0}")]
    Model(String),
}

/// Set of block labels as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BlockSet(pub u128);

impl BlockSet {
    pub const EMPTY: BlockSet = BlockSet(0);

    pub fn singleton(b: BlockId) -> Self {
        Self(1 << b)
    }

    /// The first `n` labels.
    pub fn first(n: usize) -> Self {
        if n >= 128 {
            Self(u128::MAX)
        } else {
            Self((1u128 << n) - 1)
        }
    }

    pub fn contains(self, b: BlockId) -> bool {
        self.0 >> b & 1 == 1
    }

    pub fn insert(&mut self, b: BlockId) {
        self.0 |= 1 << b;
    }

    pub fn is_subset(self, other: BlockSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: BlockSet) -> Self {
        Self(self.0 | other.0)
    }

    pub fn intersection(self, other: BlockSet) -> Self {
        Self(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = BlockId> {
        (0..128u8).filter(move |b| self.contains(*b))
    }

    /// Every subset of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = BlockSet> {
        // Standard submask walk, emitted in ascending numeric order.
        let full = self.0;
        let mut next = Some(0u128);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full { None } else { Some((cur | !full).wrapping_add(1) & full) };
            Some(BlockSet(cur))
        })
    }
}

impl FromIterator<BlockId> for BlockSet {
    fn from_iter<I: IntoIterator<Item = BlockId>>(iter: I) -> Self {
        let mut s = Self::EMPTY;
        for b in iter {
            s.insert(b);
        }
        s
    }
}

impl fmt::Debug for BlockSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// One candidate history.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Universe {
    exist: BlockSet,
    avail: BlockSet,
    /// Strict predecessors of each block, transitively closed.
    preds: BTreeMap<BlockId, BlockSet>,
}

impl Universe {
    /// Builds a universe, closing `before` pairs `(earlier, later)` transitively.
    pub fn new(exist: BlockSet, avail: BlockSet, before: &[(BlockId, BlockId)]) -> Result<Self, CalculusError> {
        if !avail.is_subset(exist) {
            return Err(CalculusError::AvailNotInExist);
        }
        let mut preds: BTreeMap<BlockId, BlockSet> = BTreeMap::new();
        for &(a, b) in before {
            preds.entry(b).or_default().insert(a);
        }
        // Warshall-style closure over the handful of blocks that appear.
        let keys: Vec<BlockId> = preds.keys().copied().collect();
        loop {
            let mut changed = false;
            for &k in &keys {
                let mut acc = preds[&k];
                for p in preds[&k].iter() {
                    if let Some(pp) = preds.get(&p) {
                        acc = acc.union(*pp);
                    }
                }
                if acc != preds[&k] {
                    preds.insert(k, acc);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for (&b, p) in &preds {
            if p.contains(b) {
                return Err(CalculusError::CyclicOrder(b));
            }
        }
        Ok(Self { exist, avail, preds })
    }

    pub fn unordered(exist: BlockSet, avail: BlockSet) -> Self {
        Self {
            exist,
            avail,
            preds: BTreeMap::new(),
        }
    }

    pub fn exist(&self) -> BlockSet {
        self.exist
    }

    pub fn avail(&self) -> BlockSet {
        self.avail
    }

    pub fn predecessors(&self, b: BlockId) -> BlockSet {
        self.preds.get(&b).copied().unwrap_or_default()
    }

    pub fn precedes(&self, a: BlockId, b: BlockId) -> bool {
        self.predecessors(b).contains(a)
    }

    /// Whether an observer who saw `observed`, in that order, could be in this universe.
    pub fn admits(&self, observed: &[BlockId]) -> bool {
        let mut seen = BlockSet::EMPTY;
        for &b in observed {
            if !self.exist.contains(b) || !self.predecessors(b).is_subset(seen) {
                return false;
            }
            seen.insert(b);
        }
        true
    }
}

/// Every universe over `blocks` with the given order restricted to existing blocks.
pub fn all_universes(blocks: BlockSet, before: &[(BlockId, BlockId)]) -> Result<Belief, CalculusError> {
    let mut out = BTreeSet::new();
    for exist in blocks.subsets() {
        let pairs: Vec<_> = before
            .iter()
            .copied()
            .filter(|(a, b)| exist.contains(*a) && exist.contains(*b))
            .collect();
        for avail in exist.subsets() {
            out.insert(Universe::new(exist, avail, &pairs)?);
        }
    }
    Ok(Belief(out))
}

/// A set of universes considered possible.
#[derive(Clone, PartialEq, Eq, Default, Debug)]
pub struct Belief(pub BTreeSet<Universe>);

/// Conditions worth reporting that are not errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    /// No universe survives; every universally quantified predicate holds vacuously.
    DegenerateBelief,
}

impl Belief {
    pub fn new(universes: impl IntoIterator<Item = Universe>) -> Self {
        Self(universes.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        if self.is_empty() {
            vec![Diagnostic::DegenerateBelief]
        } else {
            vec![]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Universe> {
        self.0.iter()
    }

    /// Trusting both stances (availability) or either stance (integrity).
    pub fn intersection(&self, other: &Belief) -> Belief {
        Belief(self.0.intersection(&other.0).cloned().collect())
    }

    /// Trusting either stance (availability) or requiring both (integrity).
    pub fn union(&self, other: &Belief) -> Belief {
        Belief(self.0.union(&other.0).cloned().collect())
    }

    pub fn is_subset(&self, other: &Belief) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Universe) -> bool) -> Belief {
        Belief(self.0.iter().filter(|u| keep(u)).cloned().collect())
    }

    /// Universes still possible after observing `observed` in order.
    pub fn refine(&self, observed: &[BlockId]) -> Belief {
        self.filter(|u| u.admits(observed))
    }

    /// Intersection of all `avail` sets; `None` for the empty belief.
    pub fn common_avail(&self) -> Option<BlockSet> {
        self.0.iter().map(|u| u.avail).reduce(BlockSet::intersection)
    }

    pub fn is_available(&self, blocks: BlockSet) -> bool {
        self.0.iter().all(|u| blocks.is_subset(u.avail))
    }

    /// Whether no possible universe can extend `state` to a conflicting state of `adds`.
    pub fn is_incontrovertible(&self, adds: &Adds, state: BlockSet) -> Result<bool, CalculusError> {
        if !adds.contains(state) {
            return Err(CalculusError::StateNotInAdds);
        }
        Ok(self.0.iter().all(|u| {
            adds.states()
                .all(|other| adds.contains(state.union(other)) || !other.is_subset(u.exist))
        }))
    }

    /// Union of the states of `adds` that are available and that every
    /// possible universe rules all unrelated states out of.
    pub fn view(&self, adds: &Adds) -> BlockSet {
        let avail = self.common_avail();
        let mut out = BlockSet::EMPTY;
        for s in adds.states() {
            if avail.is_some_and(|a| !s.is_subset(a)) {
                continue;
            }
            let settled = self
                .0
                .iter()
                .all(|u| adds.states().all(|other| other.is_subset(s) || !other.is_subset(u.exist)));
            if settled {
                out = out.union(s);
            }
        }
        out
    }

    /// First triple breaking availability monotonicity, reported as `(U, V, W)`.
    ///
    /// The condition over pairs `U, V` reduces to single universes because
    /// both the premise and the conclusion are unions.
    pub fn availability_monotonicity_witness(&self) -> Option<(Universe, Universe, Universe)> {
        for w in &self.0 {
            for u in &self.0 {
                if u.exist.is_subset(w.exist) && !u.avail.is_subset(w.avail) {
                    return Some((u.clone(), u.clone(), w.clone()));
                }
            }
        }
        None
    }
}

/// An abstract data structure: the set of block-sets that are valid states.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Adds(BTreeSet<BlockSet>);

impl Adds {
    pub fn new(states: impl IntoIterator<Item = BlockSet>) -> Self {
        Self(states.into_iter().collect())
    }

    pub fn contains(&self, s: BlockSet) -> bool {
        self.0.contains(&s)
    }

    pub fn states(&self) -> impl Iterator<Item = BlockSet> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `{S ∪ S' | S ∈ self, S' ∈ other}`: states of running both structures.
    pub fn union(&self, other: &Adds) -> Adds {
        Adds(self.states().flat_map(|s| other.states().map(move |t| s.union(t))).collect())
    }

    /// `{S ∩ S' | S ∈ self, S' ∈ other}`.
    pub fn intersection(&self, other: &Adds) -> Adds {
        Adds(self.states().flat_map(|s| other.states().map(move |t| s.intersection(t))).collect())
    }
}

impl fmt::Debug for Adds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.0.iter()).finish()
    }
}

/// Whether refinement shrank from every observation prefix to the full list.
///
/// Returns the first prefix length whose refinement fails to contain the
/// refinement by the whole list.
pub fn prefix_monotonicity_witness(belief: &Belief, observed: &[BlockId]) -> Option<usize> {
    let full = belief.refine(observed);
    (0..observed.len()).find(|&k| !full.is_subset(&belief.refine(&observed[..k])))
}
