//! How quickly timestamps from many ferns accrue on a block when every
//! fern stamps its own batches and asks its peers to stamp them too.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{f3, key, ExperimentError, Metrics, Params};
use crate::block::Block;
use crate::fern::timestamp::{CoverageIndex, TimestampConfig, TimestampFern};
use crate::fern::Fern;
use crate::hash::Hash;
use crate::message::{frame_of, IntegrityRequest};
use crate::transport::sim::{SimConfig, Simulator};
use crate::transport::{Context, Frame, FrameKind, Node, NodeAddress};

const TICK: u64 = 1;

/// Open-loop client: one stamp request every `interval_ms`, round robin
/// over the ferns, whether or not earlier ones were answered.
pub struct Stamper {
    ferns: Vec<NodeAddress>,
    total: usize,
    interval_ms: u64,
    sent: Vec<(Hash, u64)>,
}

impl Stamper {
    pub fn new(ferns: Vec<NodeAddress>, total: usize, interval_ms: u64) -> Self {
        Self {
            ferns,
            total,
            interval_ms,
            sent: vec![],
        }
    }

    /// Each requested block with the time it was sent.
    pub fn sent(&self) -> &[(Hash, u64)] {
        &self.sent
    }

    fn fire(&mut self, ctx: &mut dyn Context) {
        let i = self.sent.len();
        if i == self.total {
            return;
        }
        let block = Block::opaque(format!("request {i}").into_bytes()).reference();
        self.sent.push((block.hash, ctx.now_ms()));
        let request = IntegrityRequest::Timestamp {
            subjects: vec![block],
            peer_batch: false,
        };
        ctx.send(&self.ferns[i % self.ferns.len()], frame_of(FrameKind::ReqIntegrity, i as u64 + 1, &request));
        ctx.set_timer(self.interval_ms, TICK);
    }
}

impl Node for Stamper {
    fn on_start(&mut self, ctx: &mut dyn Context) {
        self.fire(ctx);
    }

    fn on_frame(&mut self, _ctx: &mut dyn Context, _from: &NodeAddress, _frame: Frame) {}

    fn on_timer(&mut self, ctx: &mut dyn Context, token: u64) {
        if token == TICK {
            self.fire(ctx);
        }
    }
}

pub(crate) struct Accrual {
    /// For every request, the delay until the x-th distinct fern covered it.
    pub delays: Vec<Vec<u64>>,
    pub ferns: usize,
}

pub(crate) fn accrual_run(seed: u64, ferns: usize, requests: usize, batch: usize, interval_ms: u64, flush_ms: u64, jitter: bool) -> Accrual {
    let mut sim = Simulator::new(SimConfig {
        seed,
        jitter,
        ..SimConfig::default()
    });
    let names: Vec<NodeAddress> = (0..ferns).map(|i| NodeAddress::sim(format!("t{i}"))).collect();
    for (i, me) in names.iter().enumerate() {
        let config = TimestampConfig {
            batch_size: batch,
            peers: names.iter().filter(|a| *a != me).cloned().collect(),
            flush_after_ms: Some(flush_ms),
        };
        let fern = TimestampFern::new(key(seed, "stamp", i), config);
        sim.add_node(me.clone(), Box::new(Fern::new(Arc::new(Default::default()), fern)));
    }
    let client = NodeAddress::sim("client");
    sim.add_node(client.clone(), Box::new(Stamper::new(names.clone(), requests, interval_ms)));
    sim.run_until_idle(u64::MAX);

    let mut blocks = vec![];
    for n in &names {
        blocks.extend(sim.node::<Fern<TimestampFern>>(n).expect("fern").store().snapshot());
    }
    let index = CoverageIndex::new(&blocks);
    let sent = sim.node::<Stamper>(&client).expect("client").sent().to_vec();
    let delays = sent
        .iter()
        .map(|(h, at)| {
            let mut times: Vec<u64> = index.coverage(h).into_values().collect();
            times.sort_unstable();
            times.into_iter().map(|t| t.saturating_sub(*at)).collect()
        })
        .collect();
    Accrual { delays, ferns }
}

impl Accrual {
    /// Mean delay to the x-th fern over requests that reached x ferns, and
    /// the fraction that did.
    pub fn by_issuers(&self) -> BTreeMap<usize, (f64, f64)> {
        (1..=self.ferns)
            .map(|x| {
                let reached: Vec<u64> = self.delays.iter().filter_map(|d| d.get(x - 1).copied()).collect();
                let mean = reached.iter().sum::<u64>() as f64 / reached.len().max(1) as f64;
                (x, (mean, reached.len() as f64 / self.delays.len() as f64))
            })
            .collect()
    }
}

pub(crate) fn accrual(p: &mut Params, seed: u64) -> Result<Metrics, ExperimentError> {
    let counts = p.list("ferns", "4,8,16")?;
    let requests = p.u64("requests", 10_000)? as usize;
    let batch = p.u64("batch", 10)? as usize;
    let interval_ms = p.u64("interval_ms", 1)?;
    let flush_ms = p.u64("flush_after_ms", 1000)?;
    let jitter = p.bool("jitter", true)?;
    if batch == 0 || counts.contains(&0) {
        return Err(ExperimentError::Param {
            key: "batch".into(),
            message: "batch and fern counts must be positive".into(),
        });
    }
    let mut m = Metrics::new(&["ferns", "issuers", "mean_ms", "fraction_reached"]);
    for &n in &counts {
        let run = accrual_run(seed, n as usize, requests, batch, interval_ms, flush_ms, jitter);
        for (x, (mean, fraction)) in run.by_issuers() {
            m.row(&[&n, &x, &f3(mean), &format!("{fraction:.4}")]);
            if x == n as usize {
                m.header(&format!("full_coverage.ferns{n}"), format!("{fraction:.4}"));
                m.header(&format!("mean_ms_to_all.ferns{n}"), f3(mean));
            }
        }
    }
    Ok(m)
}
