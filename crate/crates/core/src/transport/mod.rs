//! Node-to-node messaging over a simulated network or TCP.
//!
//! Servers implement [`Node`]: they react to frames and timers through a
//! [`Context`] and never block. Blocking clients talk through an
//! [`Exchange`], which both backends provide.

mod frame;
pub mod sim;
pub mod tcp;

use std::any::Any;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Reader, Writer};

pub use frame::{Frame, FrameKind, FRAME_HEADER_LEN, MAX_FRAME_PAYLOAD};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeAddress {
    Tcp { host: String, port: u16 },
    Sim(String),
}

impl NodeAddress {
    pub fn sim(label: impl Into<String>) -> Self {
        Self::Sim(label.into())
    }

    pub fn tcp(host: impl Into<String>, port: u16) -> Self {
        Self::Tcp {
            host: host.into(),
            port,
        }
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tcp { host, port } if host.contains(':') => write!(f, "tcp://[{host}]:{port}"),
            Self::Tcp { host, port } => write!(f, "tcp://{host}:{port}"),
            Self::Sim(label) => write!(f, "sim:{label}"),
        }
    }
}

impl FromStr for NodeAddress {
    type Err = String;

    /// Accepts `sim:label`, `tcp://host:port` and bare `host:port`.
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(label) = s.strip_prefix("sim:") {
            if label.is_empty() {
                return Err("empty sim label".into());
            }
            return Ok(Self::sim(label));
        }
        let hp = s.strip_prefix("tcp://").unwrap_or(s);
        let (host, port) = hp.rsplit_once(':').ok_or_else(|| format!("{s}: expected host:port"))?;
        let port = port.parse().map_err(|_| format!("{s}: bad port"))?;
        let host = host.trim_start_matches('[').trim_end_matches(']');
        let host = if host.is_empty() { "0.0.0.0" } else { host };
        Ok(Self::tcp(host, port))
    }
}

impl Canonical for NodeAddress {
    fn encode(&self, w: &mut Writer) {
        w.nested_with(|w| match self {
            Self::Tcp { host, port } => {
                w.tag(1);
                w.str(host);
                w.u32(*port as u32);
            }
            Self::Sim(label) => {
                w.tag(2);
                w.str(label);
            }
        });
    }
    fn decode(r: &mut Reader) -> Result<Self, DecodeError> {
        let mut r = Reader::new(r.bytes()?);
        let a = match r.tag()? {
            1 => {
                let host = r.str()?;
                let port = u16::try_from(r.u32()?).map_err(|_| DecodeError::Invalid("port".into()))?;
                Self::Tcp { host, port }
            }
            2 => Self::Sim(r.str()?),
            tag => return Err(DecodeError::UnknownTag { what: "address", tag }),
        };
        r.finish()?;
        Ok(a)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("{0} is unreachable")]
    Unreachable(NodeAddress),
    #[error("connection to {0} lost")]
    ConnectionLost(NodeAddress),
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(String),
}

/// What a node may do while handling an event.
pub trait Context {
    fn me(&self) -> &NodeAddress;
    /// Milliseconds; virtual under simulation, since the Unix epoch on TCP.
    fn now_ms(&self) -> u64 {
        self.now_micros() / 1000
    }
    fn now_micros(&self) -> u64;
    /// Fire-and-forget; delivery failures are not reported to the sender.
    fn send(&mut self, to: &NodeAddress, frame: Frame);
    /// Calls [`Node::on_timer`] with `token` after `delay_ms`.
    fn set_timer(&mut self, delay_ms: u64, token: u64);
    /// Seeded under simulation.
    fn random_u64(&mut self) -> u64;
}

/// A server. Handlers run one at a time per node.
pub trait Node: Any + Send {
    fn on_start(&mut self, _ctx: &mut dyn Context) {}
    fn on_frame(&mut self, ctx: &mut dyn Context, from: &NodeAddress, frame: Frame);
    fn on_timer(&mut self, _ctx: &mut dyn Context, _token: u64) {}
}

/// Blocking request/response access for clients.
pub trait Exchange {
    fn now_ms(&self) -> u64;
    fn send(&mut self, to: &NodeAddress, frame: Frame) -> Result<(), TransportError>;
    /// Next frame addressed to this client, or `None` once `deadline_ms`
    /// passes.
    fn recv_until(&mut self, deadline_ms: u64) -> Option<(NodeAddress, Frame)>;
    /// Fresh correlation id.
    fn next_correlation(&mut self) -> u64;
}

/// Sends `frames` to each destination and collects replies carrying their
/// correlation ids until `done` returns true or the timeout expires.
/// Replies are returned in arrival order; unrelated frames are dropped.
pub fn gather(
    ex: &mut dyn Exchange,
    requests: Vec<(NodeAddress, Frame)>,
    timeout_ms: u64,
    mut done: impl FnMut(&[(NodeAddress, Frame)]) -> bool,
) -> Result<Vec<(NodeAddress, Frame)>, TransportError> {
    let wanted: std::collections::BTreeSet<u64> = requests.iter().map(|(_, f)| f.correlation).collect();
    let mut first_err = None;
    let mut sent = 0;
    for (to, f) in requests {
        match ex.send(&to, f) {
            Ok(()) => sent += 1,
            Err(e) => first_err = first_err.or(Some(e)),
        }
    }
    if sent == 0 {
        if let Some(e) = first_err {
            return Err(e);
        }
    }
    let deadline = ex.now_ms().saturating_add(timeout_ms);
    let mut got = Vec::new();
    while !done(&got) {
        match ex.recv_until(deadline) {
            Some((from, f)) if f.kind == FrameKind::Response && wanted.contains(&f.correlation) => got.push((from, f)),
            Some(_) => {}
            None => break,
        }
    }
    Ok(got)
}

/// One request, one response.
pub fn request(
    ex: &mut dyn Exchange,
    to: &NodeAddress,
    kind: FrameKind,
    payload: bytes::Bytes,
    timeout_ms: u64,
) -> Result<Frame, TransportError> {
    let frame = Frame::new(kind, ex.next_correlation(), payload);
    let got = gather(ex, vec![(to.clone(), frame)], timeout_ms, |g| !g.is_empty())?;
    got.into_iter()
        .next()
        .map(|(_, f)| f)
        .ok_or(TransportError::Timeout(timeout_ms))
}
