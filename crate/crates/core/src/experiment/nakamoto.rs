//! Commit latency of proof-of-work chains as difficulty and miner count
//! vary. Expected mining time is 2^bits / (miners * rate), so latency should
//! be linear in 2^bits / miners.

use std::sync::Arc;

use super::{f3, linear_fit, mean, ms, ExperimentError, Metrics, Params};
use crate::client::{mint, Client, Target};
use crate::fern::nakamoto::{MiningPace, NakamotoFern, PowChainConfig};
use crate::fern::{Fern, Requirement};
use crate::hash::Hash;
use crate::store::BlockStore;
use crate::transport::sim::{SimConfig, Simulator};
use crate::transport::NodeAddress;

pub(crate) fn scaling(p: &mut Params, seed: u64) -> Result<Metrics, ExperimentError> {
    let bits = p.list("bits", "12..18")?;
    let miner_counts = p.list("miners", "1,2,4")?;
    let blocks = p.u64("blocks", 40)? as usize;
    let rate = p.u64("hashes_per_ms", MiningPace::default().hashes_per_ms)?;
    let mut m = Metrics::new(&["bits", "miners", "index", "latency_ms"]);
    let (mut xs, mut ys) = (vec![], vec![]);
    for &d in &bits {
        for &n in &miner_counts {
            let mut sim = Simulator::new(SimConfig {
                seed: seed ^ (d << 8) ^ n,
                ..SimConfig::default()
            });
            let miners: Vec<NodeAddress> = (0..n).map(|i| NodeAddress::sim(format!("m{i}"))).collect();
            let genesis = Hash::of(format!("genesis {seed} {d} {n}").as_bytes());
            let config = PowChainConfig {
                difficulty_bits: d as u32,
                k: 1,
                required_availability: Requirement::default(),
            };
            let pace = MiningPace {
                hashes_per_ms: rate,
                chunk_ms: 1,
            };
            for me in &miners {
                let peers = miners.iter().filter(|a| *a != me).cloned().collect();
                let fern = NakamotoFern::new(genesis, config.clone(), pace, peers);
                sim.add_node(me.clone(), Box::new(Fern::new(Arc::new(BlockStore::new()), fern)));
            }
            let mut client = Client::new();
            let mut ex = sim.exchange(NodeAddress::sim("client"));
            let mut latencies = vec![];
            for i in 0..blocks {
                let block = mint(format!("{seed}/{d}/{n}/{i}").into_bytes(), vec![]);
                let start = ex.sim.now_micros();
                client
                    .commit(&mut ex, &block, &[], &Target::Nakamoto { miners: miners.clone() })
                    .map_err(|e| ExperimentError::Failed(format!("bits {d}, {n} miners, block {i}: {e}")))?;
                let us = ex.sim.now_micros() - start;
                m.row(&[&d, &n, &i, &ms(us)]);
                latencies.push(us as f64 / 1000.0);
            }
            let avg = mean(&latencies);
            m.header(&format!("mean_ms.bits{d}.miners{n}"), f3(avg));
            xs.push((1u64 << d) as f64 / n as f64);
            ys.push(avg);
        }
    }
    if xs.len() >= 2 {
        let (a, c, r2) = linear_fit(&xs, &ys);
        m.header("fit.intercept_ms", f3(a));
        m.header("fit.ms_per_hash_per_miner", format!("{c:.6}"));
        m.header("fit.r2", format!("{r2:.4}"));
    }
    Ok(m)
}
