//! TCP backend: one reader thread per connection, one timer thread per
//! server. Replies travel back over the connection a request arrived on.

use std::collections::{BinaryHeap, HashMap};
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::RngCore;

use super::{Context, Exchange, Frame, Node, NodeAddress, TransportError};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

fn epoch_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

fn peer_address(addr: SocketAddr) -> NodeAddress {
    NodeAddress::tcp(addr.ip().to_string(), addr.port())
}

fn connect(to: &NodeAddress) -> Result<TcpStream, TransportError> {
    let NodeAddress::Tcp { host, port } = to else {
        return Err(TransportError::Unreachable(to.clone()));
    };
    let addrs = (host.as_str(), *port)
        .to_socket_addrs()
        .map_err(|_| TransportError::Unreachable(to.clone()))?;
    for a in addrs {
        if let Ok(s) = TcpStream::connect_timeout(&a, CONNECT_TIMEOUT) {
            let _ = s.set_nodelay(true);
            return Ok(s);
        }
    }
    Err(TransportError::Unreachable(to.clone()))
}

type Writers = Mutex<HashMap<NodeAddress, Arc<Mutex<TcpStream>>>>;

struct Shared {
    me: NodeAddress,
    node: Mutex<Box<dyn Node>>,
    writers: Writers,
    timers: Mutex<BinaryHeap<std::cmp::Reverse<(Instant, u64, u64)>>>,
    timer_wake: Condvar,
    timer_seq: Mutex<u64>,
    stop: AtomicBool,
}

struct TcpContext<'a> {
    shared: &'a Arc<Shared>,
    outbox: Vec<(NodeAddress, Frame)>,
    timers: Vec<(u64, u64)>,
}

impl Context for TcpContext<'_> {
    fn me(&self) -> &NodeAddress {
        &self.shared.me
    }
    fn now_micros(&self) -> u64 {
        epoch_micros()
    }
    fn send(&mut self, to: &NodeAddress, frame: Frame) {
        self.outbox.push((to.clone(), frame));
    }
    fn set_timer(&mut self, delay_ms: u64, token: u64) {
        self.timers.push((delay_ms, token));
    }
    fn random_u64(&mut self) -> u64 {
        rand::thread_rng().next_u64()
    }
}

impl Shared {
    fn dispatch(self: &Arc<Self>, f: impl FnOnce(&mut dyn Node, &mut dyn Context)) {
        let mut ctx = TcpContext {
            shared: self,
            outbox: Vec::new(),
            timers: Vec::new(),
        };
        {
            let mut node = self.node.lock().unwrap_or_else(|p| p.into_inner());
            f(node.as_mut(), &mut ctx);
        }
        let TcpContext { outbox, timers, .. } = ctx;
        if !timers.is_empty() {
            let mut heap = self.timers.lock().expect("timer lock");
            let mut seq = self.timer_seq.lock().expect("timer seq");
            for (delay, token) in timers {
                *seq += 1;
                heap.push(std::cmp::Reverse((
                    Instant::now() + Duration::from_millis(delay),
                    *seq,
                    token,
                )));
            }
            self.timer_wake.notify_all();
        }
        for (to, frame) in outbox {
            if let Err(e) = self.send(&to, &frame) {
                log::warn!("{}: send to {to} failed: {e}", self.me);
            }
        }
    }

    fn send(self: &Arc<Self>, to: &NodeAddress, frame: &Frame) -> Result<(), TransportError> {
        let existing = self.writers.lock().expect("writers").get(to).cloned();
        let stream = match existing {
            Some(s) => s,
            None => {
                let s = connect(to)?;
                let reader = s.try_clone().map_err(|e| TransportError::Io(e.to_string()))?;
                let w = Arc::new(Mutex::new(s));
                self.writers.lock().expect("writers").insert(to.clone(), w.clone());
                let shared = self.clone();
                let from = to.clone();
                thread::spawn(move || shared.read_loop(reader, from));
                w
            }
        };
        let mut s = stream.lock().expect("stream");
        frame.write_to(&mut *s).map_err(|_| {
            self.writers.lock().expect("writers").remove(to);
            TransportError::ConnectionLost(to.clone())
        })
    }

    fn read_loop(self: Arc<Self>, stream: TcpStream, from: NodeAddress) {
        let mut r = BufReader::new(stream);
        while !self.stop.load(Ordering::Relaxed) {
            match Frame::read_from(&mut r) {
                Ok(frame) => self.dispatch(|n, c| n.on_frame(c, &from, frame)),
                Err(_) => break,
            }
        }
        self.writers.lock().expect("writers").remove(&from);
    }

    fn timer_loop(self: Arc<Self>) {
        let mut heap = self.timers.lock().expect("timer lock");
        while !self.stop.load(Ordering::Relaxed) {
            let now = Instant::now();
            match heap.peek() {
                Some(std::cmp::Reverse((at, _, _))) if *at <= now => {
                    let std::cmp::Reverse((_, _, token)) = heap.pop().expect("peeked");
                    drop(heap);
                    self.dispatch(|n, c| n.on_timer(c, token));
                    heap = self.timers.lock().expect("timer lock");
                }
                Some(std::cmp::Reverse((at, _, _))) => {
                    let wait = *at - now;
                    heap = self.timer_wake.wait_timeout(heap, wait).expect("timer wait").0;
                }
                None => {
                    heap = self
                        .timer_wake
                        .wait_timeout(heap, Duration::from_millis(200))
                        .expect("timer wait")
                        .0;
                }
            }
        }
    }
}

/// A node served over TCP until dropped or stopped.
pub struct TcpServer {
    local: SocketAddr,
    shared: Arc<Shared>,
}

impl TcpServer {
    /// Binds `listen` (e.g. `127.0.0.1:0`) and starts serving `node`.
    pub fn spawn(listen: &str, node: Box<dyn Node>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(listen)?;
        let local = listener.local_addr()?;
        let shared = Arc::new(Shared {
            me: peer_address(local),
            node: Mutex::new(node),
            writers: Mutex::new(HashMap::new()),
            timers: Mutex::new(BinaryHeap::new()),
            timer_wake: Condvar::new(),
            timer_seq: Mutex::new(0),
            stop: AtomicBool::new(false),
        });
        shared.dispatch(|n, c| n.on_start(c));
        let s = shared.clone();
        thread::spawn(move || s.timer_loop());
        let s = shared.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if s.stop.load(Ordering::Relaxed) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let _ = conn.set_nodelay(true);
                let Ok(peer) = conn.peer_addr() else { continue };
                let from = peer_address(peer);
                let Ok(writer) = conn.try_clone() else { continue };
                s.writers
                    .lock()
                    .expect("writers")
                    .insert(from.clone(), Arc::new(Mutex::new(writer)));
                let s2 = s.clone();
                thread::spawn(move || s2.read_loop(conn, from));
            }
        });
        Ok(Self { local, shared })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn address(&self) -> NodeAddress {
        peer_address(self.local)
    }

    /// Runs `f` against the node while holding its lock.
    pub fn with_node<T: Node, R>(&self, f: impl FnOnce(&mut T) -> R) -> Option<R> {
        let mut guard = self.shared.node.lock().unwrap_or_else(|p| p.into_inner());
        let n: &mut dyn std::any::Any = guard.as_mut();
        n.downcast_mut::<T>().map(f)
    }

    pub fn stop(&self) {
        if self.shared.stop.swap(true, Ordering::Relaxed) {
            return;
        }
        self.shared.timer_wake.notify_all();
        for (_, w) in self.shared.writers.lock().expect("writers").drain() {
            let _ = w.lock().map(|s| s.shutdown(Shutdown::Both));
        }
        // Unblock the accept loop.
        let _ = TcpStream::connect_timeout(&self.local, Duration::from_millis(200));
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Blocking client over TCP.
pub struct TcpExchange {
    writers: HashMap<NodeAddress, TcpStream>,
    tx: Sender<(NodeAddress, Frame)>,
    rx: Receiver<(NodeAddress, Frame)>,
    next: u64,
}

impl Default for TcpExchange {
    fn default() -> Self {
        Self::new()
    }
}

impl TcpExchange {
    pub fn new() -> Self {
        let (tx, rx) = mpsc::channel();
        Self {
            writers: HashMap::new(),
            tx,
            rx,
            next: 0,
        }
    }
}

impl Exchange for TcpExchange {
    fn now_ms(&self) -> u64 {
        epoch_micros() / 1000
    }

    fn send(&mut self, to: &NodeAddress, frame: Frame) -> Result<(), TransportError> {
        if !self.writers.contains_key(to) {
            let s = connect(to)?;
            let reader = s.try_clone().map_err(|e| TransportError::Io(e.to_string()))?;
            let tx = self.tx.clone();
            let from = to.clone();
            thread::spawn(move || {
                let mut r = BufReader::new(reader);
                while let Ok(f) = Frame::read_from(&mut r) {
                    if tx.send((from.clone(), f)).is_err() {
                        break;
                    }
                }
            });
            self.writers.insert(to.clone(), s);
        }
        let s = self.writers.get_mut(to).expect("inserted");
        frame.write_to(s).map_err(|_| {
            self.writers.remove(to);
            TransportError::ConnectionLost(to.clone())
        })
    }

    fn recv_until(&mut self, deadline_ms: u64) -> Option<(NodeAddress, Frame)> {
        let now = self.now_ms();
        let wait = Duration::from_millis(deadline_ms.saturating_sub(now));
        match self.rx.recv_timeout(wait) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    fn next_correlation(&mut self) -> u64 {
        self.next += 1;
        self.next
    }
}
