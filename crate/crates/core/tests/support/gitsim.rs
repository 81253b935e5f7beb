//! A thousand branch moves against a random commit graph, most of them to
//! commits that do not descend from the current head. Accepted moves must
//! form a chain in which each head descends from the one before.

use std::collections::{BTreeMap, BTreeSet};

use blockweb::block::{GitCommit, ParentDiff};
use blockweb::fern::gitsim::{is_ancestor_within, BranchLedger, GitPolicy, GitsimCore};
use blockweb::fern::FernError;
use blockweb::store::BlockStore;
use blockweb::{Block, Hash, Keypair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reflexive ancestor sets by brute-force closure over parent indices.
fn closure(parents: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let mut anc: Vec<BTreeSet<usize>> = vec![];
    for (i, ps) in parents.iter().enumerate() {
        let mut set = BTreeSet::from([i]);
        for &p in ps {
            set.extend(anc[p].iter().copied());
        }
        anc.push(set);
    }
    anc
}

/// A random commit DAG of `n` commits stored in `store`; parents are indices.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, store: &BlockStore) -> (Vec<Block>, Vec<Vec<usize>>) {
    let keys = Keypair::from_seed([5; 32]);
    let mut commits: Vec<Block> = vec![];
    let mut parents: Vec<Vec<usize>> = vec![];
    for i in 0..n {
        let ps: Vec<usize> = if i == 0 || rng.gen_ratio(1, 25) {
            vec![]
        } else {
            let mut ps: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(i.saturating_sub(20)..i)).collect();
            ps.sort();
            ps.dedup();
            ps
        };
        let c = if ps.is_empty() {
            GitCommit::initial(format!("root {i}").into_bytes(), "root", &keys)
        } else {
            let diffs = ps
                .iter()
                .map(|&p| ParentDiff {
                    parent: commits[p].reference(),
                    diff: format!("{p}->{i}").into_bytes().into(),
                })
                .collect();
            GitCommit::child(diffs, Hash::of(format!("content {i}").as_bytes()), &format!("c{i}"), &keys)
        };
        let b = Block::GitCommit(c);
        store.insert(b.clone()).unwrap();
        commits.push(b);
        parents.push(ps);
    }
    (commits, parents)
}

/// Ancestry answers for every ordered pair against the closure oracle.
pub fn ancestry_matches_closure(seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = BlockStore::new();
    let (commits, parents) = random_dag(&mut rng, n, &store);
    let anc = closure(&parents);
    let lookup = |h: &Hash| store.get(h);
    for a in 0..n {
        for d in 0..n {
            let got = is_ancestor_within(&commits[a].hash(), &commits[d].hash(), lookup, n + 1).unwrap();
            assert_eq!(got, anc[d].contains(&a), "seed {seed}: is {a} an ancestor of {d}");
        }
    }
}

/// A thousand moves over three branches; returns (accepted, refused).
pub fn workload(seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = BlockStore::new();
    let (commits, parents) = random_dag(&mut rng, 300, &store);
    let anc = closure(&parents);
    let index: BTreeMap<Hash, usize> = commits.iter().enumerate().map(|(i, b)| (b.hash(), i)).collect();

    let core = GitsimCore::new(Keypair::from_seed([6; 32]), GitPolicy::default(), BranchLedger::in_memory());
    let branches = ["main", "dev", "release"];
    let mut heads: BTreeMap<&str, usize> = BTreeMap::new();
    let mut issued: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let (mut accepted, mut refused) = (0, 0);
    for t in 1..=1000u64 {
        let branch = branches[rng.gen_range(0..branches.len())];
        // Half the time a nearby descendant, otherwise anything at all.
        let near: Vec<usize> = match heads.get(branch) {
            Some(&h) => (h..(h + 30).min(commits.len())).filter(|&c| anc[c].contains(&h)).collect(),
            None => vec![],
        };
        let target = if !near.is_empty() && rng.gen_bool(0.5) {
            near[rng.gen_range(0..near.len())]
        } else {
            rng.gen_range(0..commits.len())
        };
        let expect_ok = heads.get(branch).is_none_or(|&h| anc[target].contains(&h));
        match core.request(&store, branch, &commits[target].reference(), t) {
            Ok(Block::GitBranch(a)) => {
                assert!(expect_ok, "moved {branch} to a non-descendant");
                assert_eq!(a.branch, branch);
                let i = index[&a.commit.hash];
                if heads.get(branch) != Some(&i) {
                    issued.entry(branch).or_default().push(i);
                }
                heads.insert(branch, i);
                accepted += 1;
            }
            Ok(other) => panic!("unexpected {:?}", other.kind()),
            Err(FernError::Refused(_)) => {
                assert!(!expect_ok, "refused a descendant move on {branch}");
                refused += 1;
            }
            Err(e) => panic!("{e}"),
        }
    }
    for (branch, seq) in &issued {
        for w in seq.windows(2) {
            assert!(anc[w[1]].contains(&w[0]), "{branch}: {} does not descend from {}", w[1], w[0]);
        }
        assert_eq!(core.ledger().head(branch), Some(commits[*seq.last().unwrap()].hash()));
    }
    (accepted, refused)
}
