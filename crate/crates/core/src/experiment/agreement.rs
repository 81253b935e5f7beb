//! A single client appends blocks to an agreement chain, with or without
//! Wilburs holding the blocks.

use std::sync::Arc;
use std::time::Instant;

use super::{Backend, f3, key, ms, percentile, ExperimentError, Metrics, Params};
use crate::block::Block;
use crate::client::{mint, quorum, Client, Target};
use crate::fern::agreement::{AgreementConfig, AgreementCore, AgreementFern, SlotLedger};
use crate::fern::{Fern, Requirement};
use crate::store::BlockStore;
use crate::transport::sim::{SimConfig, Simulator};
use crate::transport::tcp::{TcpExchange, TcpServer};
use crate::transport::{Exchange, Node, NodeAddress};
use crate::wilbur::{Wilbur, WilburConfig};

pub(crate) struct ChainRun {
    /// Commit latency per block, in microseconds, warm-up included.
    pub latencies: Vec<u64>,
    pub client_bytes: u64,
}

type Nodes = Vec<(NodeAddress, Box<dyn Node>)>;

/// Wilburs (none unless `with_wilbur`) and ferns for one chain.
fn deployment(f: usize, with_wilbur: bool, seed: u64) -> (Nodes, Nodes) {
    let wilbur_keys: Vec<_> = (0..f + 1).map(|i| key(seed, "wilbur", i)).collect();
    let fern_keys: Vec<_> = (0..3 * f + 1).map(|i| key(seed, "fern", i)).collect();
    let config = AgreementConfig {
        parent_integrity: Requirement::new(quorum(f), fern_keys.iter().map(|k| k.id())),
        block_availability: if with_wilbur {
            Requirement::new(f + 1, wilbur_keys.iter().map(|k| k.id()))
        } else {
            Requirement::default()
        },
    };
    let mut wilburs: Nodes = vec![];
    if with_wilbur {
        for (i, k) in wilbur_keys.into_iter().enumerate() {
            let node = Wilbur::new(k, Arc::new(BlockStore::new()), WilburConfig::default());
            wilburs.push((NodeAddress::sim(format!("w{i}")), Box::new(node)));
        }
    }
    let mut ferns: Nodes = vec![];
    for (i, k) in fern_keys.into_iter().enumerate() {
        let core = AgreementCore::new(k, config.clone(), SlotLedger::in_memory());
        let node = Fern::new(Arc::new(BlockStore::new()), AgreementFern::new(Arc::new(core)));
        ferns.push((NodeAddress::sim(format!("a{i}")), Box::new(node)));
    }
    (wilburs, ferns)
}

/// Appends `blocks` blocks one after another; returns each commit latency.
#[allow(clippy::too_many_arguments)]
fn append<E: Exchange>(
    ex: &mut E,
    clock: impl Fn(&E) -> u64,
    wilburs: &[NodeAddress],
    ferns: &[NodeAddress],
    f: usize,
    blocks: usize,
    block_bytes: usize,
    seed: u64,
) -> Result<Vec<u64>, ExperimentError> {
    let root = Block::opaque(format!("agreement root {seed}").into_bytes()).reference();
    let mut client = Client::new();
    let mut parent = root.clone();
    let mut latencies = vec![];
    for i in 0..blocks {
        let mut payload = vec![0u8; block_bytes.max(8)];
        payload[..8].copy_from_slice(&(i as u64).to_be_bytes());
        let block = mint(payload, vec![parent.clone()]);
        let start = clock(ex);
        let availability = if wilburs.is_empty() {
            vec![]
        } else {
            client
                .replicate(ex, &block, wilburs, f + 1)
                .map_err(|e| ExperimentError::Failed(format!("block {i}: {e}")))?
        };
        let target = Target::Agreement {
            ferns: ferns.to_vec(),
            f,
            root: root.clone(),
            slot: i as u64 + 1,
            parent: parent.clone(),
        };
        parent = client
            .commit(ex, &block, &availability, &target)
            .map_err(|e| ExperimentError::Failed(format!("block {i}: {e}")))?;
        latencies.push(clock(ex) - start);
    }
    Ok(latencies)
}

pub(crate) fn run_chain(
    f: usize,
    blocks: usize,
    block_bytes: usize,
    with_wilbur: bool,
    seed: u64,
    jitter: bool,
) -> Result<ChainRun, ExperimentError> {
    let mut sim = Simulator::new(SimConfig {
        seed,
        jitter,
        ..SimConfig::default()
    });
    let (wilburs, ferns) = deployment(f, with_wilbur, seed);
    let names = |nodes: &Nodes| nodes.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>();
    let (w, a) = (names(&wilburs), names(&ferns));
    for (addr, node) in wilburs.into_iter().chain(ferns) {
        sim.add_node(addr, node);
    }
    let me = NodeAddress::sim("client");
    let mut ex = sim.exchange(me.clone());
    let latencies = append(&mut ex, |ex| ex.sim.now_micros(), &w, &a, f, blocks, block_bytes, seed)?;
    drop(ex);
    Ok(ChainRun {
        latencies,
        client_bytes: sim.stats(&me).total_bytes(),
    })
}

/// The same workload over loopback TCP in wall-clock time; a smoke test of
/// the real transport rather than a latency measurement.
pub(crate) fn run_chain_tcp(f: usize, blocks: usize, block_bytes: usize, with_wilbur: bool, seed: u64) -> Result<ChainRun, ExperimentError> {
    let (wilburs, ferns) = deployment(f, with_wilbur, seed);
    let spawn = |nodes: Nodes| -> Result<Vec<TcpServer>, ExperimentError> {
        nodes
            .into_iter()
            .map(|(_, n)| TcpServer::spawn("127.0.0.1:0", n).map_err(|e| ExperimentError::Failed(format!("bind: {e}"))))
            .collect()
    };
    let (w, a) = (spawn(wilburs)?, spawn(ferns)?);
    let addrs = |s: &[TcpServer]| s.iter().map(TcpServer::address).collect::<Vec<_>>();
    let epoch = Instant::now();
    let mut ex = TcpExchange::new();
    let latencies = append(&mut ex, |_| epoch.elapsed().as_micros() as u64, &addrs(&w), &addrs(&a), f, blocks, block_bytes, seed)?;
    Ok(ChainRun {
        latencies,
        client_bytes: 0,
    })
}

fn mode(with_wilbur: bool) -> &'static str {
    if with_wilbur {
        "wilbur"
    } else {
        "direct"
    }
}

pub(crate) fn latency(p: &mut Params, seed: u64, backend: Backend) -> Result<Metrics, ExperimentError> {
    let f = p.u64("f", 1)? as usize;
    let blocks = p.u64("blocks", 200)? as usize;
    let warmup = p.u64("warmup", 100)? as usize;
    let block_bytes = p.u64("block_bytes", 10)? as usize;
    let jitter = p.bool("jitter", true)?;
    if warmup >= blocks {
        return Err(ExperimentError::Param {
            key: "warmup".into(),
            message: "must be below blocks".into(),
        });
    }
    let mut m = Metrics::new(&["mode", "index", "latency_ms"]);
    for with_wilbur in [false, true] {
        let run = match backend {
            Backend::Sim => run_chain(f, blocks, block_bytes, with_wilbur, seed, jitter)?,
            Backend::Tcp => run_chain_tcp(f, blocks, block_bytes, with_wilbur, seed)?,
        };
        let mut measured: Vec<f64> = run.latencies[warmup..].iter().map(|&us| us as f64 / 1000.0).collect();
        for (i, us) in run.latencies.iter().enumerate().skip(warmup) {
            m.row(&[&mode(with_wilbur), &i, &ms(*us)]);
        }
        measured.sort_by(f64::total_cmp);
        for (name, q) in [("p1", 1.0), ("median", 50.0), ("p99", 99.0)] {
            m.header(&format!("{name}_ms.{}", mode(with_wilbur)), f3(percentile(&measured, q)));
        }
    }
    Ok(m)
}

pub(crate) fn bandwidth(p: &mut Params, seed: u64) -> Result<Metrics, ExperimentError> {
    let fs = p.list("f", "1..3")?;
    let blocks = p.u64("blocks", 200)? as usize;
    let block_bytes = p.u64("block_bytes", 1_000_000)? as usize;
    let mut m = Metrics::new(&["f", "mode", "client_bytes"]);
    for &f in &fs {
        let mut bytes = [0u64; 2];
        for (slot, with_wilbur) in [false, true].into_iter().enumerate() {
            let run = run_chain(f as usize, blocks, block_bytes, with_wilbur, seed, false)?;
            bytes[slot] = run.client_bytes;
            m.row(&[&f, &mode(with_wilbur), &run.client_bytes]);
        }
        m.header(&format!("ratio.f{f}"), format!("{:.4}", bytes[1] as f64 / bytes[0] as f64));
        m.header(&format!("ideal.f{f}"), format!("{:.4}", (f + 1) as f64 / (3 * f + 1) as f64));
    }
    Ok(m)
}
