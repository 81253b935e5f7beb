//! Hash-linked blocks, the servers that vouch for them, and a finite-model
//! toolkit for reasoning about what observers may believe.

pub mod block;
pub mod calculus;
pub mod client;
pub mod codec;
pub mod config;
pub mod crypto;
pub mod experiment;
pub mod fern;
pub mod hash;
pub mod message;
pub mod paygraph;
pub mod reference;
pub mod store;
pub mod transport;
pub mod wilbur;

pub use block::{Block, BlockKind};
pub use codec::{Canonical, DecodeError};
pub use crypto::{CryptoId, Keypair};
pub use hash::Hash;
pub use reference::Reference;
