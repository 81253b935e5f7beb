//! Server configuration files: `key = value` lines, `#` comments. Paths are
//! relative to the file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::block::Block;
use crate::codec::Canonical;
use crate::crypto::{CryptoId, Keypair};
use crate::fern::agreement::{AgreementConfig, AgreementCore, AgreementFern, SlotLedger};
use crate::fern::gitsim::{BranchLedger, GitPolicy, GitsimCore, GitsimFern};
use crate::fern::hetcons::{HetconsConfig, HetconsFern, RetryPolicy};
use crate::fern::nakamoto::{MiningPace, NakamotoFern, PowChainConfig};
use crate::fern::timestamp::{TimestampConfig, TimestampFern};
use crate::fern::{Fern, Requirement};
use crate::hash::Hash;
use crate::store::BlockStore;
use crate::transport::{Node, NodeAddress};
use crate::wilbur::{Wilbur, WilburConfig};

pub const KINDS: [&str; 6] = ["wilbur", "agreement", "timestamp", "nakamoto", "gitsim", "hetcons"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown server kind {0:?} (known: {known})", known = KINDS.join(", "))]
    Kind(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

fn value_error(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    entries: BTreeMap<String, String>,
    base: PathBuf,
}

impl ServeConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("{} given twice", k.trim()),
                });
            }
        }
        Ok(Self {
            entries,
            base: base.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.into(), e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Sets `key`, replacing any value from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|p| self.base.join(p))
    }

    fn number(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| value_error(key, format!("{v:?} is not a whole number"))),
        }
    }

    fn list(&self, key: &str) -> Vec<&str> {
        self.get(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    fn peers(&self) -> Result<Vec<NodeAddress>, ConfigError> {
        self.list("peers").into_iter().map(|p| p.parse().map_err(|e: String| value_error("peers", e))).collect()
    }

    fn ids(&self, key: &str, text: &str) -> Result<Vec<CryptoId>, ConfigError> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|h| CryptoId::from_hex(h).ok_or_else(|| value_error(key, format!("{h:?} is not a 64-digit hex key"))))
            .collect()
    }

    /// `N of id,id,...`; absent means nothing required.
    fn requirement(&self, key: &str) -> Result<Requirement, ConfigError> {
        let Some(v) = self.get(key) else {
            return Ok(Requirement::default());
        };
        let (min, ids) = v.split_once(" of ").unwrap_or((v, ""));
        let min = min.trim().parse().map_err(|_| value_error(key, "expected `N of id,id,...`"))?;
        Ok(Requirement::new(min, self.ids(key, ids)?))
    }

    pub fn keypair(&self) -> Result<Keypair, ConfigError> {
        let path = self.path("key").ok_or_else(|| value_error("key", "no key file given"))?;
        let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io(path.clone(), e))?;
        Keypair::from_key_file(&text).map_err(|e| value_error("key", format!("{}: {e}", path.display())))
    }

    fn store(&self) -> Result<Arc<BlockStore>, ConfigError> {
        let store = match self.path("journal") {
            Some(p) => BlockStore::with_journal(&p).map_err(|e| ConfigError::Io(p, e))?,
            None => BlockStore::new(),
        };
        // Blocks to preload, one hex-encoded canonical block per line.
        if let Some(p) = self.path("blocks") {
            let text = std::fs::read_to_string(&p).map_err(|e| ConfigError::Io(p.clone(), e))?;
            for (i, line) in text.lines().map(str::trim).enumerate().filter(|(_, l)| !l.is_empty()) {
                let bytes = hex::decode(line).map_err(|e| value_error("blocks", format!("line {}: {e}", i + 1)))?;
                let block = Block::from_canonical_bytes(bytes).map_err(|e| value_error("blocks", format!("line {}: {e}", i + 1)))?;
                store.insert(block).map_err(|e| ConfigError::Io(p.clone(), e))?;
            }
        }
        Ok(Arc::new(store))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        const COMMON: [&str; 4] = ["listen", "key", "journal", "blocks"];
        match self.entries.keys().find(|k| !COMMON.contains(&k.as_str()) && !allowed.contains(&k.as_str())) {
            Some(k) => Err(value_error(k, "not a setting for this server kind")),
            None => Ok(()),
        }
    }

    /// Builds the server node for `kind`.
    pub fn build(&self, kind: &str) -> Result<Box<dyn Node>, ConfigError> {
        let node: Box<dyn Node> = match kind {
            "wilbur" => {
                self.check_keys(&["peers", "max_wait_ms"])?;
                let config = WilburConfig {
                    peers: self.peers()?,
                    max_wait_ms: self.number("max_wait_ms", WilburConfig::default().max_wait_ms)?,
                };
                Box::new(Wilbur::new(self.keypair()?, self.store()?, config))
            }
            "agreement" => {
                self.check_keys(&["parent_integrity", "availability", "ledger"])?;
                let config = AgreementConfig {
                    parent_integrity: self.requirement("parent_integrity")?,
                    block_availability: self.requirement("availability")?,
                };
                let ledger = match self.path("ledger") {
                    Some(p) => SlotLedger::open(&p).map_err(|e| ConfigError::Io(p, e))?,
                    None => SlotLedger::in_memory(),
                };
                let core = AgreementCore::new(self.keypair()?, config, ledger);
                Box::new(Fern::new(self.store()?, AgreementFern::new(Arc::new(core))))
            }
            "timestamp" => {
                self.check_keys(&["peers", "batch_size", "flush_after_ms"])?;
                let batch_size = self.number("batch_size", TimestampConfig::default().batch_size as u64)? as usize;
                if batch_size == 0 {
                    return Err(value_error("batch_size", "must be at least 1"));
                }
                let config = TimestampConfig {
                    batch_size,
                    peers: self.peers()?,
                    flush_after_ms: self.get("flush_after_ms").map(|_| self.number("flush_after_ms", 0)).transpose()?,
                };
                Box::new(Fern::new(self.store()?, TimestampFern::new(self.keypair()?, config)))
            }
            "nakamoto" => {
                self.check_keys(&["peers", "difficulty_bits", "k", "availability", "genesis", "hashes_per_ms"])?;
                let defaults = PowChainConfig::default();
                let config = PowChainConfig {
                    difficulty_bits: self.number("difficulty_bits", defaults.difficulty_bits as u64)? as u32,
                    k: self.number("k", defaults.k as u64)? as usize,
                    required_availability: self.requirement("availability")?,
                };
                if config.k == 0 {
                    return Err(value_error("k", "must be at least 1"));
                }
                let genesis = match self.get("genesis") {
                    Some(h) => Hash::from_hex(h).ok_or_else(|| value_error("genesis", "expected a 64-digit hex hash"))?,
                    None => Hash::of(b"genesis"),
                };
                let pace = MiningPace {
                    hashes_per_ms: self.number("hashes_per_ms", MiningPace::default().hashes_per_ms)?,
                    ..MiningPace::default()
                };
                Box::new(Fern::new(self.store()?, NakamotoFern::new(genesis, config, pace, self.peers()?)))
            }
            "gitsim" => {
                self.check_keys(&["allowed_authors", "availability", "ledger", "search_budget"])?;
                let allowed_authors: BTreeSet<CryptoId> = self.ids("allowed_authors", self.get("allowed_authors").unwrap_or(""))?.into_iter().collect();
                let policy = GitPolicy {
                    allowed_authors,
                    required_availability: self.requirement("availability")?,
                    search_budget: self.number("search_budget", GitPolicy::default().search_budget as u64)? as usize,
                };
                let ledger = match self.path("ledger") {
                    Some(p) => BranchLedger::open(&p).map_err(|e| ConfigError::Io(p, e))?,
                    None => BranchLedger::in_memory(),
                };
                let core = GitsimCore::new(self.keypair()?, policy, ledger);
                Box::new(Fern::new(self.store()?, GitsimFern::new(Arc::new(core))))
            }
            "hetcons" => {
                self.check_keys(&["directory", "retry_base_ms", "max_attempts"])?;
                let mut directory = BTreeMap::new();
                for entry in self.list("directory") {
                    let (id, addr) = entry.split_once('@').ok_or_else(|| value_error("directory", "expected id@host:port"))?;
                    let id = self.ids("directory", id)?.pop().ok_or_else(|| value_error("directory", "missing id"))?;
                    directory.insert(id, addr.parse().map_err(|e: String| value_error("directory", e))?);
                }
                let defaults = RetryPolicy::default();
                let retry = RetryPolicy {
                    base_ms: self.number("retry_base_ms", defaults.base_ms)?,
                    max_attempts: self.number("max_attempts", defaults.max_attempts as u64)? as u32,
                };
                let config = HetconsConfig {
                    directory,
                    retry: (retry.max_attempts > 0).then_some(retry),
                };
                Box::new(Fern::new(self.store()?, HetconsFern::new(self.keypair()?, config)))
            }
            other => return Err(ConfigError::Kind(other.into())),
        };
        Ok(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn every_kind_builds_from_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let k = Keypair::from_seed([3; 32]);
        write(dir.path(), "k", &k.to_key_file());
        let id = k.id().to_hex();
        let cases = [
            ("wilbur", "peers = 127.0.0.1:9002\n".to_string()),
            ("agreement", format!("parent_integrity = 1 of {id}\navailability = 0\nledger = slots\n")),
            ("timestamp", "batch_size = 10\nflush_after_ms = 50\n".into()),
            ("nakamoto", "difficulty_bits = 8\nk = 2\n".into()),
            ("gitsim", format!("allowed_authors = {id}\n")),
            ("hetcons", format!("directory = {id}@127.0.0.1:9100\nretry_base_ms = 500\n")),
        ];
        for (kind, body) in cases {
            let p = write(dir.path(), &format!("{kind}.conf"), &format!("# {kind}\nkey = k\n{body}"));
            let c = ServeConfig::load(&p).unwrap();
            assert!(c.build(kind).is_ok(), "{kind}");
        }
    }

    #[test]
    fn bad_files_are_rejected_with_a_reason() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "bad", "not hex at all\n");
        let c = ServeConfig::parse("key = bad\n", dir.path()).unwrap();
        assert!(matches!(c.build("wilbur"), Err(ConfigError::Value { key, .. }) if key == "key"));
        let c = ServeConfig::parse("key = missing\n", dir.path()).unwrap();
        assert!(matches!(c.build("wilbur"), Err(ConfigError::Io(..))));
        assert!(matches!(ServeConfig::parse("oops\n", dir.path()), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(ServeConfig::parse("a = 1\na = 2\n", dir.path()).is_err());
        let c = ServeConfig::parse("batch_size = 3\n", dir.path()).unwrap();
        assert!(matches!(c.build("wilbur"), Err(ConfigError::Value { key, .. }) if key == "batch_size"));
        assert!(matches!(c.build("paxos"), Err(ConfigError::Kind(_))));
        let c = ServeConfig::parse("parent_integrity = two of x\n", dir.path()).unwrap();
        assert!(c.requirement("parent_integrity").is_err());
    }
}
