//! Insert-only block storage with secondary indexes and an optional
//! append-only journal.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use crate::block::{Block, BlockKind};
use crate::codec::Canonical;
use crate::hash::Hash;
use crate::message::Pattern;

#[derive(Default)]
struct Inner {
    blocks: HashMap<Hash, Block>,
    order: Vec<Hash>,
    by_kind: BTreeMap<BlockKind, Vec<Hash>>,
    by_field: HashMap<(BlockKind, String, Vec<u8>), Vec<Hash>>,
}

/// Thread-safe map from hash to block. Blocks are never removed.
#[derive(Default)]
pub struct BlockStore {
    inner: RwLock<Inner>,
    journal: Option<Mutex<BufWriter<File>>>,
}

impl BlockStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens or creates a journal at `path`, loading any blocks already in it.
    /// Records are a 4-byte big-endian length followed by the block encoding;
    /// a truncated final record is ignored.
    pub fn with_journal(path: &Path) -> std::io::Result<Self> {
        let mut store = Self::new();
        if path.exists() {
            let mut r = BufReader::new(File::open(path)?);
            loop {
                let mut len = [0u8; 4];
                if r.read_exact(&mut len).is_err() {
                    break;
                }
                let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
                if r.read_exact(&mut buf).is_err() {
                    break;
                }
                let block = Block::from_canonical_bytes(buf)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
                store.insert_indexed(block);
            }
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        store.journal = Some(Mutex::new(BufWriter::new(f)));
        Ok(store)
    }

    fn insert_indexed(&self, block: Block) -> (Hash, bool) {
        let hash = block.hash();
        let mut g = self.inner.write().expect("store lock");
        if g.blocks.contains_key(&hash) {
            return (hash, false);
        }
        let kind = block.kind();
        for (name, value) in block.fields() {
            let slot = g.by_field.entry((kind, name.to_owned(), value)).or_default();
            if slot.last() != Some(&hash) {
                slot.push(hash);
            }
        }
        g.by_kind.entry(kind).or_default().push(hash);
        g.order.push(hash);
        g.blocks.insert(hash, block);
        (hash, true)
    }

    /// Stores `block`; returns its hash and whether it was new. The journal
    /// record is flushed before this returns.
    pub fn insert(&self, block: Block) -> std::io::Result<(Hash, bool)> {
        let bytes = self.journal.as_ref().map(|_| block.to_canonical_bytes());
        let (hash, fresh) = self.insert_indexed(block);
        if let (true, Some(j), Some(bytes)) = (fresh, &self.journal, bytes) {
            let mut j = j.lock().expect("journal lock");
            j.write_all(&(bytes.len() as u32).to_be_bytes())?;
            j.write_all(&bytes)?;
            j.flush()?;
        }
        Ok((hash, fresh))
    }

    pub fn get(&self, hash: &Hash) -> Option<Block> {
        self.inner.read().expect("store lock").blocks.get(hash).cloned()
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.inner.read().expect("store lock").blocks.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store lock").order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every block in insertion order.
    pub fn snapshot(&self) -> Vec<Block> {
        let g = self.inner.read().expect("store lock");
        g.order.iter().map(|h| g.blocks[h].clone()).collect()
    }

    /// Blocks matching `pattern`, in insertion order.
    pub fn query(&self, pattern: &Pattern) -> Vec<Block> {
        let g = self.inner.read().expect("store lock");
        // Narrow by the first field through the index, then check the rest.
        let candidates: &[Hash] = match pattern.fields.first() {
            None => g.by_kind.get(&pattern.kind).map(Vec::as_slice).unwrap_or(&[]),
            Some((name, value)) => g
                .by_field
                .get(&(pattern.kind, name.clone(), value.to_vec()))
                .map(Vec::as_slice)
                .unwrap_or(&[]),
        };
        candidates
            .iter()
            .map(|h| &g.blocks[h])
            .filter(|b| pattern.matches(b))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::ChainSlotAttestation;
    use crate::crypto::Keypair;
    use crate::reference::Reference;
    use proptest::prelude::*;

    fn slot(keys: &Keypair, root: &Block, n: u64) -> Block {
        let b = Block::opaque(n.to_be_bytes().to_vec());
        Block::ChainSlot(ChainSlotAttestation::new(
            &b.reference(),
            &root.reference(),
            n,
            &Reference::bare(root.hash()),
            keys,
        ))
    }

    #[test]
    fn insert_is_idempotent() {
        let s = BlockStore::new();
        let b = Block::opaque(&b"x"[..]);
        assert!(s.insert(b.clone()).unwrap().1);
        assert!(!s.insert(b.clone()).unwrap().1);
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(&b.hash()), Some(b));
    }

    #[test]
    fn pattern_by_root() {
        let s = BlockStore::new();
        let k = Keypair::from_seed([1; 32]);
        let (r1, r2) = (Block::opaque(&b"r1"[..]), Block::opaque(&b"r2"[..]));
        for n in 1..=3 {
            s.insert(slot(&k, &r1, n)).unwrap();
        }
        s.insert(slot(&k, &r2, 1)).unwrap();
        let p = Pattern::any(BlockKind::ChainSlot).with_hash("root", &r1.hash());
        assert_eq!(s.query(&p).len(), 3);
        assert_eq!(s.query(&Pattern::any(BlockKind::ChainSlot)).len(), 4);
        assert_eq!(s.query(&Pattern::any(BlockKind::ChainSlot).with("nonsense", vec![1])).len(), 0);
    }

    #[test]
    fn journal_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.journal");
        let b = Block::opaque(&b"persist"[..]);
        {
            let s = BlockStore::with_journal(&path).unwrap();
            s.insert(b.clone()).unwrap();
            s.insert(b.clone()).unwrap();
        }
        let s = BlockStore::with_journal(&path).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.contains(&b.hash()));
    }

    #[test]
    fn concurrent_inserts() {
        let s = std::sync::Arc::new(BlockStore::new());
        let handles: Vec<_> = (0..4u8)
            .map(|t| {
                let s = s.clone();
                std::thread::spawn(move || {
                    for i in 0..250u32 {
                        s.insert(Block::opaque(vec![t, (i % 200) as u8, (i / 200) as u8])).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(s.len(), 1000);
    }

    proptest! {
        /// Indexed query results equal a full scan.
        #[test]
        fn query_equals_scan(n in 1usize..100, pick in 0usize..4, slot_filter in 1u64..5) {
            let s = BlockStore::new();
            let k = Keypair::from_seed([2; 32]);
            let roots: Vec<Block> = (0..4u8).map(|i| Block::opaque(vec![i])).collect();
            for i in 0..n {
                let b = slot(&k, &roots[i % 4], 1 + (i as u64 % 4));
                s.insert(b).unwrap();
                s.insert(Block::opaque(vec![i as u8, 9])).unwrap();
            }
            let patterns = [
                Pattern::any(BlockKind::ChainSlot),
                Pattern::any(BlockKind::ChainSlot).with_hash("root", &roots[pick].hash()),
                Pattern::any(BlockKind::ChainSlot).with("slot", slot_filter.to_be_bytes().to_vec()),
                Pattern::any(BlockKind::ChainSlot)
                    .with("slot", slot_filter.to_be_bytes().to_vec())
                    .with_hash("root", &roots[pick].hash()),
                Pattern::any(BlockKind::Opaque),
            ];
            for p in &patterns {
                let scan: Vec<Block> = s.snapshot().into_iter().filter(|b| p.matches(b)).collect();
                prop_assert_eq!(s.query(p), scan);
            }
        }
    }
}
