//! Version-control commits.

use bytes::Bytes;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::{CryptoId, Keypair, SignatureBytes};
use crate::hash::Hash;
use crate::reference::Reference;

use super::{Signed, UNSIGNED};

/// One parent of a commit and the change relative to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentDiff {
    pub parent: Reference,
    /// Opaque; never applied or checked.
    pub diff: Bytes,
}

impl Canonical for ParentDiff {
    fn encode(&self, w: &mut Writer) {
        w.nested(&self.parent);
        w.bytes(&self.diff);
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        Ok(Self {
            parent: r.nested()?,
            diff: r.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitBody {
    /// Full tracked content of a root commit.
    Initial(Bytes),
    /// At least one parent.
    Parents(Vec<ParentDiff>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GitCommit {
    pub message: String,
    /// Hash of the tracked content after this commit.
    pub content_hash: Hash,
    pub body: CommitBody,
    pub author: CryptoId,
    pub signature: SignatureBytes,
}

impl GitCommit {
    pub fn initial(content: impl Into<Bytes>, message: &str, keys: &Keypair) -> Self {
        let content = content.into();
        Self {
            message: message.to_owned(),
            content_hash: Hash::of(&content),
            body: CommitBody::Initial(content),
            author: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    /// Commit on top of `parents`; panics if `parents` is empty.
    pub fn child(parents: Vec<ParentDiff>, content_hash: Hash, message: &str, keys: &Keypair) -> Self {
        assert!(!parents.is_empty(), "a child commit needs a parent");
        Self {
            message: message.to_owned(),
            content_hash,
            body: CommitBody::Parents(parents),
            author: keys.id(),
            signature: UNSIGNED,
        }
        .signed_by(keys)
    }

    pub fn parents(&self) -> impl Iterator<Item = &Reference> {
        let list: &[ParentDiff] = match &self.body {
            CommitBody::Initial(_) => &[],
            CommitBody::Parents(p) => p,
        };
        list.iter().map(|p| &p.parent)
    }

    pub fn is_initial(&self) -> bool {
        matches!(self.body, CommitBody::Initial(_))
    }

    fn write_body(&self, w: &mut Writer) {
        w.str(&self.message);
        self.content_hash.encode(w);
        w.nested_with(|w| match &self.body {
            CommitBody::Initial(b) => {
                w.tag(1);
                w.bytes(b);
            }
            CommitBody::Parents(p) => {
                w.tag(2);
                w.list(p.iter());
            }
        });
        self.author.encode(w);
    }

    fn read(r: &mut Reader) -> Result<Self, DecodeError> {
        let message = r.str()?;
        let content_hash = Hash::decode(r)?;
        let mut b = Reader::new(r.bytes()?);
        let body = match b.tag()? {
            1 => CommitBody::Initial(b.bytes()?),
            2 => {
                let p: Vec<ParentDiff> = b.list()?;
                if p.is_empty() {
                    return Err(DecodeError::Invalid("non-initial commit without parents".into()));
                }
                CommitBody::Parents(p)
            }
            tag => return Err(DecodeError::UnknownTag { what: "commit body", tag }),
        };
        b.finish()?;
        Ok(Self {
            message,
            content_hash,
            body,
            author: CryptoId::decode(r)?,
            signature: SignatureBytes::decode(r)?,
        })
    }
}
signed!(GitCommit, "blockweb/git-commit/v1", author);
