use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OutPoint, PaymentGraph, Transaction, TxOut};

/// Random payment graph for benchmarks.
///
/// Every tenth transaction on average mints 50 000 units to a fresh owner.
/// The rest spend one to four unspent outputs, chosen from the 64 most
/// recent, and pay one to four outputs minus a fee of up to 10 units.
/// Identical seeds give identical graphs.
pub fn synthetic_graph(seed: u64, count: usize) -> PaymentGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unspent: Vec<(OutPoint, u64)> = Vec::new();
    let mut txns = Vec::with_capacity(count);
    for n in 0..count {
        let id = format!("s{n}");
        let (inputs, total) = if unspent.is_empty() || rng.gen_ratio(1, 10) {
            (vec![], 50_000)
        } else {
            let want = rng.gen_range(1..=4usize).min(unspent.len());
            let mut ins = Vec::with_capacity(want);
            let mut total = 0;
            for _ in 0..want {
                let window = unspent.len().min(64);
                let pick = unspent.len() - 1 - rng.gen_range(0..window);
                let (o, v) = unspent.swap_remove(pick);
                ins.push(o);
                total += v;
            }
            let fee = rng.gen_range(0..=10u64).min(total);
            (ins, total - fee)
        };
        let outs = rng.gen_range(1..=4usize);
        let mut cuts: Vec<u64> = (0..outs - 1).map(|_| rng.gen_range(0..=total)).collect();
        cuts.sort_unstable();
        cuts.push(total);
        let mut prev = 0;
        let mut outputs = Vec::with_capacity(outs);
        for (j, c) in cuts.into_iter().enumerate() {
            outputs.push(TxOut {
                value: c - prev,
                owner: format!("u{}", rng.gen_range(0..1000u32)),
            });
            unspent.push((
                OutPoint {
                    txid: id.clone(),
                    index: j as u32,
                },
                c - prev,
            ));
            prev = c;
        }
        txns.push(Transaction { id, inputs, outputs });
    }
    PaymentGraph::from_transactions(txns).expect("generator only spends unspent outputs")
}
