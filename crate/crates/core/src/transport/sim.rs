//! Deterministic discrete-event network.
//!
//! Time is virtual and advances only between events. Every frame takes the
//! one-way latency of its link; frames on one link never overtake each
//! other. Identical seeds and inputs replay identically.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Context, Exchange, Frame, FrameKind, Node, NodeAddress, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Default one-way latency of every link.
    pub latency_ms: u64,
    pub seed: u64,
    /// Draw each frame's latency uniformly within ±10% of its link's.
    pub jitter: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            latency_ms: 100,
            seed: 0,
            jitter: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_received: u64,
    pub bytes_received: u64,
}

impl TrafficStats {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }
}

/// One delivered frame, for determinism checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub at_micros: u64,
    pub from: NodeAddress,
    pub to: NodeAddress,
    pub kind: FrameKind,
    pub correlation: u64,
    pub len: usize,
}

enum Event {
    Start(NodeAddress),
    Deliver {
        from: NodeAddress,
        to: NodeAddress,
        frame: Frame,
    },
    Timer {
        node: NodeAddress,
        token: u64,
    },
}

struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Default)]
struct Slot {
    node: Option<Box<dyn Node>>,
    mailbox: Option<VecDeque<(NodeAddress, Frame)>>,
    crashed: bool,
    stats: TrafficStats,
}

pub struct Simulator {
    config: SimConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    nodes: BTreeMap<NodeAddress, Slot>,
    links: HashMap<(NodeAddress, NodeAddress), u64>,
    link_tail: HashMap<(NodeAddress, NodeAddress), u64>,
    rng: ChaCha8Rng,
    trace: Option<Vec<TraceEntry>>,
    dropped: u64,
}

struct SimContext<'a> {
    me: &'a NodeAddress,
    now: u64,
    rng: &'a mut ChaCha8Rng,
    outbox: Vec<(NodeAddress, Frame)>,
    timers: Vec<(u64, u64)>,
}

impl Context for SimContext<'_> {
    fn me(&self) -> &NodeAddress {
        self.me
    }
    fn now_micros(&self) -> u64 {
        self.now
    }
    fn send(&mut self, to: &NodeAddress, frame: Frame) {
        self.outbox.push((to.clone(), frame));
    }
    fn set_timer(&mut self, delay_ms: u64, token: u64) {
        self.timers.push((delay_ms * 1000, token));
    }
    fn random_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Self {
            config,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            links: HashMap::new(),
            link_tail: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            trace: None,
            dropped: 0,
        }
    }

    pub fn config(&self) -> SimConfig {
        self.config
    }

    pub fn now_ms(&self) -> u64 {
        self.now / 1000
    }

    pub fn now_micros(&self) -> u64 {
        self.now
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            event,
        });
    }

    /// Adds a server; its `on_start` runs at the current time.
    pub fn add_node(&mut self, addr: NodeAddress, node: Box<dyn Node>) {
        self.nodes.insert(
            addr.clone(),
            Slot {
                node: Some(node),
                ..Slot::default()
            },
        );
        self.schedule(self.now, Event::Start(addr));
    }

    /// Adds an address whose incoming frames queue up for an [`Exchange`].
    pub fn add_driver(&mut self, addr: NodeAddress) {
        self.nodes.insert(
            addr,
            Slot {
                mailbox: Some(VecDeque::new()),
                ..Slot::default()
            },
        );
    }

    pub fn contains(&self, addr: &NodeAddress) -> bool {
        self.nodes.contains_key(addr)
    }

    /// One-way latency from `from` to `to`.
    pub fn set_link_latency(&mut self, from: &NodeAddress, to: &NodeAddress, ms: u64) {
        self.links.insert((from.clone(), to.clone()), ms * 1000);
    }

    pub fn set_latency_between(&mut self, a: &NodeAddress, b: &NodeAddress, ms: u64) {
        self.set_link_latency(a, b, ms);
        self.set_link_latency(b, a, ms);
    }

    /// The node stops handling frames and timers for good.
    pub fn crash(&mut self, addr: &NodeAddress) {
        if let Some(s) = self.nodes.get_mut(addr) {
            s.crashed = true;
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn stats(&self, addr: &NodeAddress) -> TrafficStats {
        self.nodes.get(addr).map(|s| s.stats).unwrap_or_default()
    }

    /// Frames addressed to unknown or crashed nodes.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn node<T: Node>(&self, addr: &NodeAddress) -> Option<&T> {
        let n: &dyn std::any::Any = self.nodes.get(addr)?.node.as_deref()?;
        n.downcast_ref()
    }

    pub fn node_mut<T: Node>(&mut self, addr: &NodeAddress) -> Option<&mut T> {
        let n: &mut dyn std::any::Any = self.nodes.get_mut(addr)?.node.as_deref_mut()?;
        n.downcast_mut()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &NodeAddress> {
        self.nodes.keys()
    }

    fn transmit(&mut self, from: &NodeAddress, to: NodeAddress, frame: Frame) {
        let len = frame.encoded_len() as u64;
        if let Some(s) = self.nodes.get_mut(from) {
            s.stats.frames_sent += 1;
            s.stats.bytes_sent += len;
        }
        let key = (from.clone(), to.clone());
        let base = self
            .links
            .get(&key)
            .copied()
            .unwrap_or(self.config.latency_ms * 1000);
        let latency = if self.config.jitter && base > 0 {
            let spread = base / 10;
            self.rng.gen_range(base - spread..=base + spread)
        } else {
            base
        };
        let tail = self.link_tail.get(&key).copied().unwrap_or(0);
        let at = (self.now + latency).max(tail);
        self.link_tail.insert(key, at);
        self.schedule(
            at,
            Event::Deliver {
                from: from.clone(),
                to,
                frame,
            },
        );
    }

    /// Sends on behalf of a driver.
    pub fn send_from(&mut self, from: &NodeAddress, to: &NodeAddress, frame: Frame) -> Result<(), TransportError> {
        if !self.nodes.contains_key(to) {
            return Err(TransportError::Unreachable(to.clone()));
        }
        self.transmit(from, to.clone(), frame);
        Ok(())
    }

    pub fn take_mail(&mut self, driver: &NodeAddress) -> Option<(NodeAddress, Frame)> {
        self.nodes.get_mut(driver)?.mailbox.as_mut()?.pop_front()
    }

    pub fn has_mail(&self, driver: &NodeAddress) -> bool {
        self.nodes
            .get(driver)
            .and_then(|s| s.mailbox.as_ref())
            .is_some_and(|m| !m.is_empty())
    }

    /// Time of the next pending event.
    pub fn next_event_micros(&self) -> Option<u64> {
        self.queue.peek().map(|s| s.at)
    }

    fn dispatch(&mut self, addr: &NodeAddress, f: impl FnOnce(&mut dyn Node, &mut dyn Context)) {
        let Some(slot) = self.nodes.get_mut(addr) else {
            return;
        };
        if slot.crashed {
            return;
        }
        let Some(mut node) = slot.node.take() else {
            return;
        };
        let mut ctx = SimContext {
            me: addr,
            now: self.now,
            rng: &mut self.rng,
            outbox: Vec::new(),
            timers: Vec::new(),
        };
        f(node.as_mut(), &mut ctx);
        let SimContext { outbox, timers, .. } = ctx;
        if let Some(slot) = self.nodes.get_mut(addr) {
            slot.node = Some(node);
        }
        for (to, frame) in outbox {
            self.transmit(addr, to, frame);
        }
        for (delay, token) in timers {
            self.schedule(
                self.now + delay,
                Event::Timer {
                    node: addr.clone(),
                    token,
                },
            );
        }
    }

    /// Runs the earliest event. Returns false when nothing is pending.
    pub fn step(&mut self) -> bool {
        let Some(Scheduled { at, event, .. }) = self.queue.pop() else {
            return false;
        };
        self.now = self.now.max(at);
        match event {
            Event::Start(addr) => self.dispatch(&addr, |n, c| n.on_start(c)),
            Event::Timer { node, token } => self.dispatch(&node, |n, c| n.on_timer(c, token)),
            Event::Deliver { from, to, frame } => {
                let Some(slot) = self.nodes.get_mut(&to) else {
                    self.dropped += 1;
                    return true;
                };
                if slot.crashed {
                    self.dropped += 1;
                    return true;
                }
                slot.stats.frames_received += 1;
                slot.stats.bytes_received += frame.encoded_len() as u64;
                if let Some(t) = self.trace.as_mut() {
                    t.push(TraceEntry {
                        at_micros: self.now,
                        from: from.clone(),
                        to: to.clone(),
                        kind: frame.kind,
                        correlation: frame.correlation,
                        len: frame.payload.len(),
                    });
                }
                if let Some(mb) = slot.mailbox.as_mut() {
                    mb.push_back((from, frame));
                } else {
                    self.dispatch(&to, |n, c| n.on_frame(c, &from, frame));
                }
            }
        }
        true
    }

    /// Runs every event scheduled at or before `ms`, then sets the clock to `ms`.
    pub fn run_until(&mut self, ms: u64) {
        let limit = ms * 1000;
        while self.queue.peek().is_some_and(|s| s.at <= limit) {
            self.step();
        }
        self.now = self.now.max(limit);
    }

    /// Runs until no events remain or `max_events` have run.
    pub fn run_until_idle(&mut self, max_events: u64) -> u64 {
        let mut n = 0;
        while n < max_events && self.step() {
            n += 1;
        }
        n
    }

    /// Blocking-client view of this simulator through driver `me`.
    pub fn exchange(&mut self, me: NodeAddress) -> SimExchange<'_> {
        if !self.nodes.contains_key(&me) {
            self.add_driver(me.clone());
        }
        SimExchange {
            sim: self,
            me,
            next_correlation: 0,
        }
    }
}

/// [`Exchange`] that advances the simulation while waiting.
pub struct SimExchange<'a> {
    pub sim: &'a mut Simulator,
    me: NodeAddress,
    next_correlation: u64,
}

impl SimExchange<'_> {
    pub fn address(&self) -> &NodeAddress {
        &self.me
    }

    /// Continues correlation numbering from an earlier exchange.
    pub fn with_correlation_start(mut self, next: u64) -> Self {
        self.next_correlation = next;
        self
    }

    pub fn correlation_cursor(&self) -> u64 {
        self.next_correlation
    }
}

impl Exchange for SimExchange<'_> {
    fn now_ms(&self) -> u64 {
        self.sim.now_ms()
    }

    fn send(&mut self, to: &NodeAddress, frame: Frame) -> Result<(), TransportError> {
        self.sim.send_from(&self.me, to, frame)
    }

    fn recv_until(&mut self, deadline_ms: u64) -> Option<(NodeAddress, Frame)> {
        let limit = deadline_ms.saturating_mul(1000);
        loop {
            if let Some(m) = self.sim.take_mail(&self.me) {
                return Some(m);
            }
            match self.sim.next_event_micros() {
                Some(at) if at <= limit => {
                    self.sim.step();
                }
                _ => {
                    self.sim.now = self.sim.now.max(limit);
                    return None;
                }
            }
        }
    }

    fn next_correlation(&mut self) -> u64 {
        self.next_correlation += 1;
        self.next_correlation
    }
}
