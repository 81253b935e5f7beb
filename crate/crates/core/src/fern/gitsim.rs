//! Branch heads for commit graphs. A branch only ever moves to a descendant
//! of its current head.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{attestation_response, availability_evidence, FernError, Integrity, Requirement};
use crate::block::{Block, GitBranchAttestation, GitCommit};
use crate::crypto::{CryptoId, Keypair};
use crate::hash::Hash;
use crate::message::{IntegrityRequest, Response};
use crate::reference::Reference;
use crate::store::BlockStore;
use crate::transport::{Context, NodeAddress};

pub const DEFAULT_SEARCH_BUDGET: usize = 10_000;

/// Whether `ancestor` is reachable from `descendant` through parent links,
/// visiting at most `budget` commits. Every commit is its own ancestor.
pub fn is_ancestor_within(
    ancestor: &Hash,
    descendant: &Hash,
    lookup: impl Fn(&Hash) -> Option<Block>,
    budget: usize,
) -> Result<bool, FernError> {
    let mut seen: HashSet<Hash> = HashSet::from([*descendant]);
    let mut queue = VecDeque::from([*descendant]);
    let mut missing = None;
    while let Some(h) = queue.pop_front() {
        if h == *ancestor {
            return Ok(true);
        }
        if seen.len() > budget {
            return Err(FernError::Evidence(format!("ancestry search exceeded {budget} commits")));
        }
        match lookup(&h) {
            Some(Block::GitCommit(c)) => {
                for p in c.parents() {
                    if seen.insert(p.hash) {
                        queue.push_back(p.hash);
                    }
                }
            }
            _ => missing = Some(h),
        }
    }
    match missing {
        Some(h) => Err(FernError::Evidence(format!("commit {h} is not available"))),
        None => Ok(false),
    }
}

pub fn is_ancestor(ancestor: &Hash, descendant: &Hash, store: &BlockStore) -> Result<bool, FernError> {
    is_ancestor_within(ancestor, descendant, |h| store.get(h), DEFAULT_SEARCH_BUDGET)
}

/// Durable map from branch name to the attestation of its current head.
#[derive(Default)]
pub struct BranchLedger {
    heads: Mutex<HashMap<String, Block>>,
    journal: Option<BlockStore>,
}

fn branch_of(b: &Block) -> &GitBranchAttestation {
    match b {
        Block::GitBranch(a) => a,
        other => panic!("branch ledger holds only branch attestations, not {:?}", other.kind()),
    }
}

impl BranchLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Reopens a journal; the last attestation per branch is its head.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let journal = BlockStore::with_journal(path)?;
        let mut heads = HashMap::new();
        for b in journal.snapshot() {
            if let Block::GitBranch(a) = &b {
                heads.insert(a.branch.clone(), b.clone());
            }
        }
        Ok(Self {
            heads: Mutex::new(heads),
            journal: Some(journal),
        })
    }

    pub fn head(&self, branch: &str) -> Option<Hash> {
        let g = self.heads.lock().expect("ledger lock");
        g.get(branch).map(|b| branch_of(b).commit.hash)
    }

    pub fn branches(&self) -> BTreeSet<String> {
        self.heads.lock().expect("ledger lock").keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GitPolicy {
    /// Empty means anyone.
    pub allowed_authors: BTreeSet<CryptoId>,
    pub required_availability: Requirement,
    pub search_budget: usize,
}

impl Default for GitPolicy {
    fn default() -> Self {
        Self {
            allowed_authors: BTreeSet::new(),
            required_availability: Requirement::default(),
            search_budget: DEFAULT_SEARCH_BUDGET,
        }
    }
}

pub struct GitsimCore {
    keys: Keypair,
    policy: GitPolicy,
    ledger: BranchLedger,
}

impl GitsimCore {
    pub fn new(keys: Keypair, policy: GitPolicy, ledger: BranchLedger) -> Self {
        Self { keys, policy, ledger }
    }

    pub fn ledger(&self) -> &BranchLedger {
        &self.ledger
    }

    fn commit<'a>(&self, block: &'a Block) -> Result<&'a GitCommit, FernError> {
        match block {
            Block::GitCommit(c) if block.verify_signature() => Ok(c),
            Block::GitCommit(_) => Err(FernError::Evidence("commit signature does not verify".into())),
            other => Err(FernError::Evidence(format!("{} is not a commit", other.kind().name()))),
        }
    }

    /// Moves `branch` to `commit` at `time`, or says why not.
    pub fn request(&self, store: &BlockStore, branch: &str, commit: &Reference, time: u64) -> Result<Block, FernError> {
        let block = store
            .get(&commit.hash)
            .ok_or_else(|| FernError::Evidence(format!("commit {} is not available", commit.hash)))?;
        let c = self.commit(&block)?;
        if !self.policy.allowed_authors.is_empty() && !self.policy.allowed_authors.contains(&c.author) {
            return Err(FernError::Policy(format!("author {} may not move branches", c.author)));
        }
        self.policy
            .required_availability
            .check("commit availability", &availability_evidence(store, commit), |_| true)?;
        let mut heads = self.ledger.heads.lock().expect("ledger lock");
        if let Some(prev) = heads.get(branch) {
            let head = branch_of(prev).commit.hash;
            if head == commit.hash {
                return Ok(prev.clone());
            }
            if !is_ancestor_within(&head, &commit.hash, |h| store.get(h), self.policy.search_budget)? {
                return Err(FernError::Refused(format!(
                    "{} does not descend from {branch} head {head}",
                    commit.hash
                )));
            }
        }
        let att = Block::GitBranch(GitBranchAttestation::new(branch, commit, time, &self.keys));
        if let Some(j) = &self.ledger.journal {
            j.insert(att.clone())
                .map_err(|e| FernError::Evidence(format!("ledger write failed: {e}")))?;
        }
        heads.insert(branch.to_owned(), att.clone());
        Ok(att)
    }
}

pub struct GitsimFern {
    core: Arc<GitsimCore>,
}

impl GitsimFern {
    pub fn new(core: Arc<GitsimCore>) -> Self {
        Self { core }
    }

    pub fn core(&self) -> &Arc<GitsimCore> {
        &self.core
    }
}

impl Integrity for GitsimFern {
    fn on_request(
        &mut self,
        ctx: &mut dyn Context,
        store: &BlockStore,
        _from: &NodeAddress,
        _correlation: u64,
        request: IntegrityRequest,
    ) -> Option<Response> {
        let IntegrityRequest::GitBranch { branch, commit } = request else {
            return Some(FernError::Unsupported("branch servers attest branch heads only".into()).to_response());
        };
        Some(match self.core.request(store, &branch, &commit, ctx.now_ms()) {
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
