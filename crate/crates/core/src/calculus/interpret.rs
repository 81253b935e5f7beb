use super::{Belief, BlockId, BlockSet};

/// `attestation` promises that every block in `covers` stays retrievable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityFact {
    pub attestation: BlockId,
    pub issuer: String,
    pub covers: BlockSet,
}

/// `attestation` commits `subject` to position `slot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitFact {
    pub attestation: BlockId,
    pub issuer: String,
    pub slot: u64,
    pub subject: BlockId,
}

/// What each attestation block in a model says. Interpretation functions
/// turn one issuer's facts into the set of universes consistent with
/// trusting that issuer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttestationTable {
    pub availability: Vec<AvailabilityFact>,
    pub commits: Vec<CommitFact>,
}

impl AttestationTable {
    /// Keeps universes where every existing availability attestation by
    /// `issuer` has its covered blocks available.
    pub fn interpret_store_forever(&self, issuer: &str, universes: &Belief) -> Belief {
        let facts: Vec<_> = self.availability.iter().filter(|f| f.issuer == issuer).collect();
        universes.filter(|u| {
            facts
                .iter()
                .all(|f| !u.exist().contains(f.attestation) || f.covers.is_subset(u.avail()))
        })
    }

    /// Drops universes where `issuer` committed two different blocks to one slot.
    pub fn interpret_exclusive_commit(&self, issuer: &str, universes: &Belief) -> Belief {
        let facts: Vec<_> = self.commits.iter().filter(|f| f.issuer == issuer).collect();
        universes.filter(|u| {
            let live: Vec<_> = facts.iter().filter(|f| u.exist().contains(f.attestation)).collect();
            live.iter().all(|a| {
                live.iter()
                    .all(|b| a.slot != b.slot || a.subject == b.subject)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{all_universes, Adds, BlockSet};
    use super::*;

    const X: BlockId = 0;
    const Y: BlockId = 1;
    const IX: BlockId = 2;
    const IY: BlockId = 3;

    fn set(ids: &[BlockId]) -> BlockSet {
        ids.iter().copied().collect()
    }

    fn table() -> AttestationTable {
        AttestationTable {
            availability: vec![],
            commits: vec![
                CommitFact { attestation: IX, issuer: "bob".into(), slot: 0, subject: X },
                CommitFact { attestation: IY, issuer: "bob".into(), slot: 0, subject: Y },
            ],
        }
    }

    #[test]
    fn exclusive_commit_removes_double_commit_universes() {
        let all = all_universes(BlockSet::first(4), &[]).unwrap();
        let trusted = table().interpret_exclusive_commit("bob", &all);
        assert!(trusted.iter().all(|u| !(u.exist().contains(IX) && u.exist().contains(IY))));
        assert!(trusted.len() < all.len());
        assert_eq!(table().interpret_exclusive_commit("carol", &all), all);
    }

    #[test]
    fn trusting_both_or_either_integrity_stance() {
        let all = all_universes(BlockSet::first(4), &[]).unwrap();
        let mut t = table();
        t.commits.push(CommitFact { attestation: IX, issuer: "carol".into(), slot: 0, subject: X });
        let bob = t.interpret_exclusive_commit("bob", &all);
        let carol = t.interpret_exclusive_commit("carol", &all);
        let either = bob.intersection(&carol);
        let both = bob.union(&carol);
        assert!(either.is_subset(&bob) && bob.is_subset(&both));
        let d = Adds::new([BlockSet::EMPTY, set(&[X, IX]), set(&[Y, IY])]);
        let seen = either.refine(&[IX]);
        assert!(seen.is_incontrovertible(&d, set(&[X, IX])).unwrap());
    }
}
