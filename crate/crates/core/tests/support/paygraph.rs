//! Longest dependency chain by a memoized depth-first search, written
//! independently of the library's topological pass.

use std::collections::HashMap;

use blockweb::paygraph::PaymentGraph;

/// Longest dependency chain, counted in transactions.
pub fn oracle(g: &PaymentGraph) -> usize {
    let by_id: HashMap<&str, usize> = g.transactions().iter().enumerate().map(|(i, t)| (t.id.as_str(), i)).collect();
    let deps: Vec<Vec<usize>> = g
        .transactions()
        .iter()
        .map(|t| t.inputs.iter().filter_map(|o| by_id.get(o.txid.as_str()).copied()).collect())
        .collect();
    let mut depth: Vec<Option<usize>> = vec![None; deps.len()];
    for start in 0..deps.len() {
        // Explicit stack; a node is finished once all its deps are.
        let mut stack = vec![start];
        while let Some(&n) = stack.last() {
            if depth[n].is_some() {
                stack.pop();
                continue;
            }
            let pending: Vec<usize> = deps[n].iter().copied().filter(|&d| depth[d].is_none()).collect();
            if pending.is_empty() {
                depth[n] = Some(1 + deps[n].iter().map(|&d| depth[d].unwrap()).max().unwrap_or(0));
                stack.pop();
            } else {
                stack.extend(pending);
            }
        }
    }
    depth.into_iter().map(Option::unwrap).max().unwrap_or(0)
}
