//! Rewriting a many-input, many-output transaction as a DAG of
//! transactions with at most two inputs and two outputs each.
//!
//! With `d = ceil(log2(max(inputs, outputs)))` and `n = 2^d`, there are `n`
//! chains of `d` transactions. Transaction `(c, k)` sends one output to
//! `(c, k+1)` and one to `((c + 2^k) mod n, k+1)`. The last transaction of
//! chain `c` pays original outputs `c` and `(c + 2^(d-1)) mod n`. Original
//! input `i` enters at the head of chain `i`. Nodes that no real input
//! reaches, or that reach no real output, are dropped.
//!
//! Every original output is represented by up to two UTXOs, one from each
//! of the two chains that end at it. A downstream transaction that spent
//! the original output spends all of its halves.

use std::collections::{BTreeMap, VecDeque};

use super::{OutPoint, PaygraphError, PaymentGraph, Transaction, TxOut};

/// Result of transforming one transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoAccountDag {
    /// Produced transactions in stage order.
    pub txns: Vec<Transaction>,
    /// `ceil(log2(max(inputs, outputs)))`; zero means unchanged.
    pub depth: usize,
    /// Index into `txns` of the transaction consuming each original input.
    pub input_targets: Vec<usize>,
    /// UTXOs standing for each original output.
    pub output_halves: Vec<Vec<OutPoint>>,
}

impl TwoAccountDag {
    /// Total value reaching each original output.
    pub fn output_values(&self) -> Vec<u64> {
        let by_id: BTreeMap<&str, &Transaction> = self.txns.iter().map(|t| (t.id.as_str(), t)).collect();
        self.output_halves
            .iter()
            .map(|halves| {
                halves
                    .iter()
                    .map(|o| by_id[o.txid.as_str()].outputs[o.index as usize].value)
                    .sum()
            })
            .collect()
    }
}

/// Splits `total` proportionally to `weights` by the largest-remainder
/// method. Ties on the remainder go to the lower index. All-zero weights
/// split evenly.
pub fn apportion(total: u64, weights: &[u64]) -> Vec<u64> {
    if weights.is_empty() {
        return vec![];
    }
    let ones;
    let weights = if weights.iter().all(|&w| w == 0) {
        ones = vec![1u64; weights.len()];
        &ones
    } else {
        weights
    };
    let sum: u128 = weights.iter().map(|&w| w as u128).sum();
    let mut shares: Vec<u64> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let exact = total as u128 * w as u128;
        shares.push((exact / sum) as u64);
        rems.push((exact % sum, i));
    }
    let left = total - shares.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(left as usize) {
        shares[i] += 1;
    }
    shares
}

/// Integer matrix with the given row and column sums, each cell within one
/// of `row[i] * col[j] / total`. Rows and columns must have equal sums.
fn flow_matrix(rows: &[u64], cols: &[u64]) -> Vec<Vec<u64>> {
    let total: u128 = cols.iter().map(|&c| c as u128).sum();
    let mut m = vec![vec![0u64; cols.len()]; rows.len()];
    if total == 0 {
        return m;
    }
    let mut row_need: Vec<u64> = rows.to_vec();
    let mut col_need: Vec<u64> = cols.to_vec();
    let mut fracs = Vec::new();
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let exact = r as u128 * c as u128;
            let base = (exact / total) as u64;
            m[i][j] = base;
            row_need[i] -= base;
            col_need[j] -= base;
            if exact % total != 0 {
                fracs.push((exact % total, i, j));
            }
        }
    }
    // Each fractional cell may take one more unit. Greedy by largest
    // fraction first, then augmenting paths for whatever the greedy pass
    // could not place.
    fracs.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut bumped = vec![vec![false; cols.len()]; rows.len()];
    for &(_, i, j) in &fracs {
        if row_need[i] > 0 && col_need[j] > 0 {
            bumped[i][j] = true;
            row_need[i] -= 1;
            col_need[j] -= 1;
        }
    }
    let allowed: Vec<Vec<bool>> = {
        let mut a = vec![vec![false; cols.len()]; rows.len()];
        for &(_, i, j) in &fracs {
            a[i][j] = true;
        }
        a
    };
    while let Some(start) = row_need.iter().position(|&r| r > 0) {
        // BFS over rows; row -> col via an unbumped allowed cell, col -> row
        // via a bumped cell (undoing it).
        let mut prev_row_of_col: Vec<Option<usize>> = vec![None; cols.len()];
        let mut prev_col_of_row: Vec<Option<usize>> = vec![None; rows.len()];
        let mut seen_row = vec![false; rows.len()];
        seen_row[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut end = None;
        'bfs: while let Some(i) = queue.pop_front() {
            for j in 0..cols.len() {
                if allowed[i][j] && !bumped[i][j] && prev_row_of_col[j].is_none() {
                    prev_row_of_col[j] = Some(i);
                    if col_need[j] > 0 {
                        end = Some(j);
                        break 'bfs;
                    }
                    for (i2, row) in bumped.iter().enumerate() {
                        if row[j] && !seen_row[i2] {
                            seen_row[i2] = true;
                            prev_col_of_row[i2] = Some(j);
                            queue.push_back(i2);
                        }
                    }
                }
            }
        }
        let mut j = end.expect("fractional solution guarantees an integral one");
        col_need[j] -= 1;
        row_need[start] -= 1;
        loop {
            let i = prev_row_of_col[j].expect("on path");
            bumped[i][j] = true;
            match prev_col_of_row[i] {
                None => break,
                Some(j2) => {
                    bumped[i][j2] = false;
                    j = j2;
                }
            }
        }
    }
    for (i, row) in bumped.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            m[i][j] += b as u64;
        }
    }
    m
}

fn ceil_log2(x: usize) -> usize {
    x.next_power_of_two().trailing_zeros() as usize
}

/// Transforms one transaction, splitting its output total across inputs in
/// equal shares.
pub fn two_account_transform(txn: &Transaction) -> Result<TwoAccountDag, PaygraphError> {
    if txn.inputs.is_empty() || txn.outputs.is_empty() {
        return Err(PaygraphError::Degenerate(txn.id.clone()));
    }
    let halves: Vec<Vec<OutPoint>> = txn.inputs.iter().map(|i| vec![i.clone()]).collect();
    Ok(butterfly(&txn.id, &halves, &vec![1; txn.inputs.len()], &txn.outputs))
}

/// Core construction. `inputs[i]` are the UTXOs standing for original input
/// `i`; `weights[i]` its value share. Zero inputs or outputs are treated
/// as one virtual input (a mint) or one virtual output (all fee).
fn butterfly(id: &str, inputs: &[Vec<OutPoint>], weights: &[u64], outputs: &[TxOut]) -> TwoAccountDag {
    let real_in = inputs.len().max(1);
    let real_out = outputs.len().max(1);
    let width = real_in.max(real_out);
    if width == 1 {
        let txn = Transaction {
            id: id.to_owned(),
            inputs: inputs.iter().flatten().cloned().collect(),
            outputs: outputs.to_vec(),
        };
        let output_halves = (0..outputs.len())
            .map(|j| {
                vec![OutPoint {
                    txid: id.to_owned(),
                    index: j as u32,
                }]
            })
            .collect();
        return TwoAccountDag {
            txns: vec![txn],
            depth: 0,
            input_targets: vec![0; inputs.len()],
            output_halves,
        };
    }
    let d = ceil_log2(width);
    let n = 1usize << d;
    let next = |c: usize, k: usize, slot: usize| (c + slot * (1 << k)) % n;

    // Forward reachability from real inputs.
    let mut fwd = vec![vec![false; n]; d];
    for c in 0..real_in {
        fwd[0][c] = true;
    }
    for k in 0..d - 1 {
        for c in 0..n {
            if fwd[k][c] {
                fwd[k + 1][next(c, k, 0)] = true;
                fwd[k + 1][next(c, k, 1)] = true;
            }
        }
    }
    // Backward reachability from real outputs.
    let mut back = vec![vec![false; n]; d];
    for c in 0..n {
        back[d - 1][c] = next(c, d - 1, 0) < real_out || next(c, d - 1, 1) < real_out;
    }
    for k in (0..d - 1).rev() {
        for c in 0..n {
            back[k][c] = back[k + 1][next(c, k, 0)] || back[k + 1][next(c, k, 1)];
        }
    }
    let kept = |k: usize, c: usize| fwd[k][c] && back[k][c];

    // Route each input-output commodity along its unique path.
    let out_values: Vec<u64> = if outputs.is_empty() {
        vec![0]
    } else {
        outputs.iter().map(|o| o.value).collect()
    };
    let total: u64 = out_values.iter().sum();
    let weights = if inputs.is_empty() { vec![1] } else { weights.to_vec() };
    let shares = apportion(total, &weights);
    let flows = flow_matrix(&shares, &out_values);
    let mut edge_value: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    for (i, row) in flows.iter().enumerate() {
        for (j, &amount) in row.iter().enumerate() {
            let delta = (j + n - i) % n;
            let mut c = i;
            for k in 0..d {
                let slot = (delta >> k) & 1;
                *edge_value.entry((k, c, slot)).or_default() += amount;
                c = next(c, k, slot);
            }
            debug_assert_eq!(c, j);
        }
    }

    let name = |c: usize, k: usize| format!("{id}/{c}.{k}");
    let mut txns = Vec::new();
    let mut produced: BTreeMap<(usize, usize, usize), OutPoint> = BTreeMap::new();
    let mut output_halves = vec![Vec::new(); outputs.len()];
    let mut input_targets = vec![0; inputs.len()];
    for k in 0..d {
        for c in 0..n {
            if !kept(k, c) {
                continue;
            }
            let mut ins = Vec::new();
            if k == 0 {
                if let Some(h) = inputs.get(c) {
                    ins.extend(h.iter().cloned());
                    input_targets[c] = txns.len();
                }
            } else {
                let from_same = (c, k - 1, 0);
                let from_jump = ((c + n - (1 << (k - 1))) % n, k - 1, 1);
                for src in [from_same, from_jump] {
                    if let Some(o) = produced.get(&(src.1, src.0, src.2)) {
                        ins.push(o.clone());
                    }
                }
            }
            let txid = name(c, k);
            let mut outs = Vec::new();
            for slot in 0..2 {
                let target = next(c, k, slot);
                let value = edge_value.get(&(k, c, slot)).copied().unwrap_or(0);
                let index = outs.len() as u32;
                if k + 1 < d {
                    if kept(k + 1, target) {
                        outs.push(TxOut {
                            value,
                            owner: name(target, k + 1),
                        });
                        produced.insert((k, c, slot), OutPoint { txid: txid.clone(), index });
                    }
                } else if let Some(o) = outputs.get(target) {
                    outs.push(TxOut {
                        value,
                        owner: o.owner.clone(),
                    });
                    output_halves[target].push(OutPoint { txid: txid.clone(), index });
                }
            }
            txns.push(Transaction {
                id: txid,
                inputs: ins,
                outputs: outs,
            });
        }
    }
    TwoAccountDag {
        txns,
        depth: d,
        input_targets,
        output_halves,
    }
}

/// Transforms every transaction of a graph and reconnects them through the
/// output halves. Inputs spending outputs outside the graph are kept as-is.
pub fn transform_graph(graph: &PaymentGraph) -> Result<PaymentGraph, PaygraphError> {
    let order = graph.topological_order()?;
    let txns = graph.transactions();
    let mut halves: BTreeMap<OutPoint, Vec<OutPoint>> = BTreeMap::new();
    let mut out = Vec::with_capacity(txns.len() * 2);
    for i in order {
        let t = &txns[i];
        let inputs: Vec<Vec<OutPoint>> = t
            .inputs
            .iter()
            .map(|o| halves.remove(o).unwrap_or_else(|| vec![o.clone()]))
            .collect();
        let values: Option<Vec<u64>> = t.inputs.iter().map(|o| graph.output_value(o)).collect();
        let weights = values.unwrap_or_else(|| vec![1; t.inputs.len()]);
        let dag = butterfly(&t.id, &inputs, &weights, &t.outputs);
        for (j, h) in dag.output_halves.into_iter().enumerate() {
            halves.insert(
                OutPoint {
                    txid: t.id.clone(),
                    index: j as u32,
                },
                h,
            );
        }
        out.extend(dag.txns);
    }
    PaymentGraph::from_transactions(out)
}
