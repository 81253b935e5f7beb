//! Payment graphs: transactions as vertices, spent outputs as edges.
//!
//! Text format, one transaction per line:
//!
//! ```text
//! # comment
//! t1 | in= | out=50:alice
//! t2 | in=t1:0 | out=20:bob,29:alice
//! ```
//!
//! An input `txid:index` names output `index` of transaction `txid`.
//! Inputs naming transactions outside the file are external and have no
//! known value. Whitespace around separators is ignored.

mod convert;
mod synthetic;
mod transform;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

pub use convert::csv_to_lines;
pub use synthetic::synthetic_graph;
pub use transform::{apportion, transform_graph, two_account_transform, TwoAccountDag};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaygraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate transaction id {0}")]
    DuplicateId(String),
    #[error("output {outpoint} spent by both {first} and {second}")]
    DoubleSpend {
        outpoint: OutPoint,
        first: String,
        second: String,
    },
    #[error("{txid} spends {outpoint}, which does not exist")]
    MissingOutput { txid: String, outpoint: OutPoint },
    #[error("cycle through transaction {0}")]
    Cycle(String),
    #[error("transaction {0} needs at least one input and one output")]
    Degenerate(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutPoint {
    pub txid: String,
    pub index: u32,
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOut {
    pub value: u64,
    pub owner: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub id: String,
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<TxOut>,
}

impl Transaction {
    pub fn output_total(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }

    pub fn to_line(&self) -> String {
        let ins: Vec<String> = self.inputs.iter().map(|i| i.to_string()).collect();
        let outs: Vec<String> = self.outputs.iter().map(|o| format!("{}:{}", o.value, o.owner)).collect();
        format!("{} | in={} | out={}", self.id, ins.join(","), outs.join(","))
    }
}

/// A validated, acyclic set of transactions.
#[derive(Debug, Clone, Default)]
pub struct PaymentGraph {
    txns: Vec<Transaction>,
    index: HashMap<String, usize>,
    /// Transactions whose outputs exceed their known inputs.
    pub overspends: Vec<String>,
}

fn parse_line(line: usize, text: &str) -> Result<Transaction, PaygraphError> {
    let bad = |message: String| PaygraphError::Parse { line, message };
    let parts: Vec<&str> = text.split('|').map(str::trim).collect();
    let [id, ins, outs] = parts.as_slice() else {
        return Err(bad("expected `id | in=... | out=...`".into()));
    };
    if id.is_empty() || id.contains([':', ',', ' ']) {
        return Err(bad(format!("invalid transaction id {id:?}")));
    }
    let ins = ins
        .strip_prefix("in=")
        .ok_or_else(|| bad("second field must start with in=".into()))?;
    let outs = outs
        .strip_prefix("out=")
        .ok_or_else(|| bad("third field must start with out=".into()))?;
    let mut inputs = Vec::new();
    for r in ins.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (txid, index) = r
            .rsplit_once(':')
            .ok_or_else(|| bad(format!("input {r} must be txid:index")))?;
        let index = index
            .parse()
            .map_err(|_| bad(format!("input {r} has a non-numeric index")))?;
        inputs.push(OutPoint {
            txid: txid.trim().to_owned(),
            index,
        });
    }
    let mut outputs = Vec::new();
    for o in outs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (value, owner) = o
            .split_once(':')
            .ok_or_else(|| bad(format!("output {o} must be value:owner")))?;
        let value = value
            .trim()
            .parse()
            .map_err(|_| bad(format!("output {o} has a non-numeric value")))?;
        outputs.push(TxOut {
            value,
            owner: owner.trim().to_owned(),
        });
    }
    Ok(Transaction {
        id: (*id).to_owned(),
        inputs,
        outputs,
    })
}

impl PaymentGraph {
    pub fn parse(text: &str) -> Result<Self, PaygraphError> {
        let mut txns = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                txns.push(parse_line(i + 1, line)?);
            }
        }
        Self::from_transactions(txns)
    }

    /// Validates ids, single-spend, output existence and acyclicity.
    pub fn from_transactions(txns: Vec<Transaction>) -> Result<Self, PaygraphError> {
        let mut index = HashMap::with_capacity(txns.len());
        for (i, t) in txns.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(PaygraphError::DuplicateId(t.id.clone()));
            }
        }
        let mut spent: HashMap<&OutPoint, &str> = HashMap::new();
        for t in &txns {
            for input in &t.inputs {
                if let Some(&src) = index.get(&input.txid) {
                    if input.index as usize >= txns[src].outputs.len() {
                        return Err(PaygraphError::MissingOutput {
                            txid: t.id.clone(),
                            outpoint: input.clone(),
                        });
                    }
                }
                if let Some(first) = spent.insert(input, &t.id) {
                    return Err(PaygraphError::DoubleSpend {
                        outpoint: input.clone(),
                        first: first.to_owned(),
                        second: t.id.clone(),
                    });
                }
            }
        }
        let mut g = Self {
            txns,
            index,
            overspends: Vec::new(),
        };
        g.topological_order()?;
        g.overspends = g
            .txns
            .iter()
            .filter(|t| {
                let known: Option<u64> = t.inputs.iter().map(|i| g.output_value(i)).sum();
                known.is_some_and(|v| !t.inputs.is_empty() && t.output_total() > v)
            })
            .map(|t| t.id.clone())
            .collect();
        Ok(g)
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txns
    }

    pub fn len(&self) -> usize {
        self.txns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txns.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Transaction> {
        self.index.get(id).map(|&i| &self.txns[i])
    }

    /// Value of an output inside the graph; `None` when external.
    pub fn output_value(&self, o: &OutPoint) -> Option<u64> {
        let t = self.get(&o.txid)?;
        t.outputs.get(o.index as usize).map(|x| x.value)
    }

    /// Indices of transactions that spend outputs of transaction `i`.
    fn successors(&self) -> Vec<BTreeSet<usize>> {
        let mut succ = vec![BTreeSet::new(); self.txns.len()];
        for (i, t) in self.txns.iter().enumerate() {
            for input in &t.inputs {
                if let Some(&src) = self.index.get(&input.txid) {
                    succ[src].insert(i);
                }
            }
        }
        succ
    }

    /// Kahn's algorithm; ties broken by file order.
    pub fn topological_order(&self) -> Result<Vec<usize>, PaygraphError> {
        let succ = self.successors();
        let mut indeg = vec![0usize; self.txns.len()];
        for s in &succ {
            for &j in s {
                indeg[j] += 1;
            }
        }
        let mut ready: BTreeSet<usize> = (0..self.txns.len()).filter(|&i| indeg[i] == 0).collect();
        let mut out = Vec::with_capacity(self.txns.len());
        while let Some(i) = ready.pop_first() {
            out.push(i);
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if out.len() != self.txns.len() {
            let stuck = (0..self.txns.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(PaygraphError::Cycle(self.txns[stuck].id.clone()));
        }
        Ok(out)
    }

    /// Longest spend path, counted in transactions. Among longest paths the
    /// witness is the lexicographically smallest sequence of ids.
    pub fn longest_chain(&self) -> (usize, Vec<String>) {
        if self.txns.is_empty() {
            return (0, vec![]);
        }
        let order = self.topological_order().expect("validated on construction");
        let succ = self.successors();
        // Longest path starting at each vertex, and the next hop of the
        // lexicographically smallest such path (smallest successor id among
        // those achieving the maximum, since ids are unique).
        let mut len = vec![1usize; self.txns.len()];
        let mut next: Vec<Option<usize>> = vec![None; self.txns.len()];
        for &v in order.iter().rev() {
            for &s in &succ[v] {
                let better = len[s] + 1 > len[v]
                    || (len[s] + 1 == len[v] && next[v].is_some_and(|n| self.txns[s].id < self.txns[n].id));
                if better {
                    len[v] = len[s] + 1;
                    next[v] = Some(s);
                }
            }
        }
        let best = (0..self.txns.len())
            .max_by(|&a, &b| len[a].cmp(&len[b]).then_with(|| self.txns[b].id.cmp(&self.txns[a].id)))
            .expect("non-empty");
        let mut path = vec![self.txns[best].id.clone()];
        let mut cur = best;
        while let Some(n) = next[cur] {
            path.push(self.txns[n].id.clone());
            cur = n;
        }
        (len[best], path)
    }

    pub fn report(&self, two_account: bool) -> Result<ParallelizationReport, PaygraphError> {
        let g = if two_account { transform_graph(self)? } else { self.clone() };
        let (parallel, witness) = g.longest_chain();
        Ok(ParallelizationReport {
            transactions: g.len(),
            linearized_rounds: g.len(),
            parallel_rounds: parallel,
            witness,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.txns {
            s.push_str(&t.to_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelizationReport {
    pub transactions: usize,
    /// One consensus round per transaction, no batching.
    pub linearized_rounds: usize,
    /// Rounds when independent transactions proceed together.
    pub parallel_rounds: usize,
    pub witness: Vec<String>,
}

impl ParallelizationReport {
    pub fn speedup(&self) -> f64 {
        if self.parallel_rounds == 0 {
            return 0.0;
        }
        self.linearized_rounds as f64 / self.parallel_rounds as f64
    }

    /// `key=value` lines for the metrics file.
    pub fn metrics(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("transactions", self.transactions.to_string()),
            ("linearized_rounds", self.linearized_rounds.to_string()),
            ("parallel_rounds", self.parallel_rounds.to_string()),
            ("speedup", format!("{:.6}", self.speedup())),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_chain() {
        let g = PaymentGraph::parse(
            "a | in= | out=10:x,5:y\n\
             b | in=a:0 | out=10:z\n\
             c | in=a:1 | out=5:w\n\
             d | in=b:0,c:0 | out=15:v # merge\n",
        )
        .unwrap();
        assert_eq!(g.longest_chain(), (3, vec!["a".into(), "b".into(), "d".into()]));
        assert!(g.overspends.is_empty());
    }

    #[test]
    fn single_transaction() {
        let g = PaymentGraph::parse("t | in=ext:0 | out=1:a").unwrap();
        assert_eq!(g.longest_chain().0, 1);
    }

    #[test]
    fn double_spend_names_both() {
        let e = PaymentGraph::parse("a | in= | out=1:x\nb | in=a:0 | out=1:y\nc | in=a:0 | out=1:z").unwrap_err();
        assert_eq!(
            e,
            PaygraphError::DoubleSpend {
                outpoint: OutPoint { txid: "a".into(), index: 0 },
                first: "b".into(),
                second: "c".into()
            }
        );
    }

    #[test]
    fn cycle_detected() {
        let e = PaymentGraph::parse("a | in=b:0 | out=1:x\nb | in=a:0 | out=1:y").unwrap_err();
        assert!(matches!(e, PaygraphError::Cycle(_)));
    }

    #[test]
    fn missing_output_and_bad_lines() {
        assert!(matches!(
            PaymentGraph::parse("a | in= | out=1:x\nb | in=a:3 | out=1:y"),
            Err(PaygraphError::MissingOutput { .. })
        ));
        assert!(matches!(
            PaymentGraph::parse("a | in= "),
            Err(PaygraphError::Parse { line: 1, .. })
        ));
        assert!(PaymentGraph::parse("a | in= | out=x:y").is_err());
    }

    #[test]
    fn overspend_flagged() {
        let g = PaymentGraph::parse("a | in= | out=5:x\nb | in=a:0 | out=9:y").unwrap();
        assert_eq!(g.overspends, ["b"]);
    }

    #[test]
    fn chain_and_independent_speedups() {
        let mut chain = String::from("t0 | in= | out=1:a\n");
        for i in 1..10 {
            chain.push_str(&format!("t{i} | in=t{}:0 | out=1:a\n", i - 1));
        }
        let r = PaymentGraph::parse(&chain).unwrap().report(false).unwrap();
        assert_eq!((r.linearized_rounds, r.parallel_rounds), (10, 10));
        assert_eq!(r.speedup(), 1.0);

        let indep: String = (0..10).map(|i| format!("t{i} | in=x:{i} | out=1:a\n")).collect();
        let r = PaymentGraph::parse(&indep).unwrap().report(false).unwrap();
        assert_eq!(r.parallel_rounds, 1);
        assert_eq!(r.speedup(), 10.0);
    }

    #[test]
    fn witness_is_lexicographically_smallest() {
        let g = PaymentGraph::parse(
            "z | in= | out=1:a,1:b\n\
             b | in=z:0 | out=1:a\n\
             a | in=z:1 | out=1:a\n\
             y | in= | out=1:a\n\
             c | in=y:0 | out=1:a\n",
        )
        .unwrap();
        assert_eq!(g.longest_chain(), (2, vec!["y".into(), "c".into()]));
    }

    #[test]
    fn text_round_trip() {
        let src = "a | in= | out=10:x,5:y\nb | in=a:0,ext:4 | out=10:z\n";
        let g = PaymentGraph::parse(src).unwrap();
        assert_eq!(g.to_text(), src);
    }
}
