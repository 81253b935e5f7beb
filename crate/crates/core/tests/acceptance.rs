//! Acceptance run: one PASS/FAIL line per criterion, thresholds pinned below.
//!
//! `ACCEPTANCE=1,5` runs only the listed criteria.

#[path = "support/agreement.rs"]
mod agreement;
#[path = "support/gitsim.rs"]
mod gitsim;
#[path = "support/hetcons.rs"]
mod hetcons;
#[path = "support/paygraph.rs"]
mod paygraph;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use blockweb::block::TimestampAttestation;
use blockweb::calculus::model::Model;
use blockweb::calculus::{all_universes, Adds, Belief, BlockSet, Universe};
use blockweb::experiment::{self, Metrics, Params, NAMES};
use blockweb::fern::timestamp::CoverageIndex;
use blockweb::paygraph::{synthetic_graph, two_account_transform, OutPoint, PaymentGraph, Transaction, TxOut};
use blockweb::{Block, CryptoId, Keypair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;

/// Exhaustive schedule suites must finish within this.
const SAFETY_BUDGET: Duration = Duration::from_secs(300);
/// With-Wilbur over direct client bytes may exceed (f+1)/(3f+1) by this fraction.
const BANDWIDTH_MARGIN: f64 = 0.15;
const DIRECT_MEDIAN_MS: (f64, f64) = (200.0, 260.0);
const WILBUR_MEDIAN_MS: (f64, f64) = (400.0, 480.0);
const NAKAMOTO_MIN_R2: f64 = 0.9;
const HETCONS_LATENCY_MS: (f64, f64) = (500.0, 560.0);
const LINEARITY_TOLERANCE: f64 = 0.10;
const CONTENTION_MIN_BLOCKS_PER_S: f64 = 1.7;
const MIN_MEETS: usize = 1000;
/// Link latency of the simulated network.
const ONE_WAY_MS: f64 = 100.0;
/// The first stamp lands within this of one link delay.
const FIRST_STAMP_SLACK_MS: f64 = 50.0;

/// Criteria that fail as stated; the printed line carries the reason.
const UNATTAINABLE: &[u32] = &[1];

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(name: &str, params: &[&str]) -> Result<Metrics, String> {
    let p = Params::parse(params.iter().copied()).map_err(|e| e.to_string())?;
    experiment::run(name, &p, SEED).map_err(|e| format!("{name}: {e}"))
}

fn header(m: &Metrics, key: &str) -> Result<f64, String> {
    m.get_f64(key).ok_or_else(|| format!("missing header {key}"))
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&x)
}

// 1

const GROUND: BlockSet = BlockSet(0b111);

fn adds_of(mask: usize) -> Adds {
    Adds::new((0..8u128).filter(|s| mask >> s & 1 == 1).map(BlockSet))
}

fn index_of(adds: &Adds) -> usize {
    adds.states().fold(0, |m, s| m | 1 << s.0)
}

/// One belief per distinct (exist sets, common available set). `view`
/// reads a belief only through those two, so this covers every belief.
fn representative_beliefs() -> Vec<Belief> {
    let mut out = vec![Belief::default()];
    for e in 1..256usize {
        let exists: Vec<BlockSet> = (0..8u128).filter(|s| e >> s & 1 == 1).map(BlockSet).collect();
        let common = exists.iter().copied().fold(GROUND, BlockSet::intersection);
        for avail in common.subsets() {
            out.push(Belief::new(exists.iter().map(|&x| Universe::unordered(x, avail))));
        }
    }
    out
}

fn representative_of(b: &Belief) -> Belief {
    let Some(avail) = b.common_avail() else { return Belief::default() };
    Belief::new(b.iter().map(|u| Universe::unordered(u.exist(), avail)))
}

fn calculus_theorems() -> Check {
    // The reduction itself, on random beliefs over all 27 universes.
    let all: Vec<Universe> = all_universes(GROUND, &[]).unwrap().iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..500 {
        let pick: u32 = rng.gen();
        let b = Belief::new(all.iter().enumerate().filter(|(i, _)| pick >> i & 1 == 1).map(|(_, u)| u.clone()));
        let r = representative_of(&b);
        for k in 0..256 {
            ensure(b.view(&adds_of(k)) == r.view(&adds_of(k)), || format!("reduction fails for {b:?}"))?;
        }
    }

    let union: Vec<Vec<usize>> = (0..256).map(|i| (0..256).map(|j| index_of(&adds_of(i).union(&adds_of(j)))).collect()).collect();
    let inter: Vec<Vec<usize>> = (0..256)
        .map(|i| (0..256).map(|j| index_of(&adds_of(i).intersection(&adds_of(j)))).collect())
        .collect();
    let beliefs = representative_beliefs();
    let (mut bad_union, mut bad_inter, mut plain, mut first) = (0u64, 0u64, 0u64, None);
    for b in &beliefs {
        let views: Vec<BlockSet> = (0..256).map(|k| b.view(&adds_of(k))).collect();
        for i in 0..256 {
            for j in 0..256 {
                if views[union[i][j]] != views[i].union(views[j]) {
                    bad_union += 1;
                    // Nonempty belief, both structures starting from the empty state.
                    if !b.is_empty() && i & j & 1 == 1 {
                        plain += 1;
                        first.get_or_insert_with(|| format!("{b:?} D={:?} D'={:?}", adds_of(i), adds_of(j)));
                    }
                }
                if views[inter[i][j]] != views[i].intersection(views[j]) {
                    bad_inter += 1;
                }
            }
        }
    }
    let cases = beliefs.len() as u64 * 256 * 256;
    let summary = format!("{} beliefs x 256 x 256 ADDS pairs; counterexamples union={bad_union} intersection={bad_inter}", beliefs.len());
    match first {
        None if bad_union == 0 && bad_inter == 0 => Ok(summary),
        _ => Err(format!(
            "{summary} of {cases}; {plain} union failures with a nonempty belief and rooted ADDSs, e.g. {}",
            first.unwrap_or_default()
        )),
    }
}

// 2

const WALKTHROUGH: &str = "
    blocks x y ix iy ax ay
    universes all
    fact store-forever ax issuer=wilbur covers=x,ix
    fact store-forever ay issuer=wilbur covers=y,iy
    fact commit ix issuer=bob slot=0 subject=x
    fact commit iy issuer=bob slot=0 subject=y
    trust store-forever wilbur
    trust exclusive-commit bob
    adds R {} {x,ix} {y,iy}
    observe ax ix
";

fn walkthrough() -> Check {
    let m = Model::parse(WALKTHROUGH).map_err(|e| e.to_string())?;
    let iy = m.id("iy").unwrap();
    let prior = m.prior();
    let belief = m.belief();
    let view = m.format_set(belief.view(&m.adds[0].1));
    ensure(view == "{x,ix}", || format!("view {view}"))?;
    ensure(prior.iter().any(|u| u.exist().contains(iy)), || "no iy universe before observing".into())?;
    let left = belief.iter().filter(|u| u.exist().contains(iy)).count();
    ensure(left == 0, || format!("{left} iy universes survive"))?;
    ensure(!belief.is_empty(), || "belief is empty".into())?;
    Ok(format!("view {view}; {} of {} universes remain, none with iy", belief.len(), prior.len()))
}

// 3

fn agreement_safety() -> Check {
    let start = Instant::now();
    let one = agreement::exhaustive(1);
    let two = agreement::exhaustive(2);
    let took = start.elapsed();
    ensure(one > 0 && two > 0, || "no schedule committed".into())?;
    ensure(took < SAFETY_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("216 + 7776 schedules, no split slot, {one} + {two} commits, {:.1}s", took.as_secs_f64()))
}

// 4

fn bandwidth() -> Check {
    let m = run("agreement-bandwidth", &["f=1..3", "blocks=200", "block_bytes=1000000"])?;
    let mut parts = vec![];
    for f in 1..=3u32 {
        let ratio = header(&m, &format!("ratio.f{f}"))?;
        let ideal = f64::from(f + 1) / f64::from(3 * f + 1);
        let bound = ideal * (1.0 + BANDWIDTH_MARGIN);
        ensure(ratio <= bound, || format!("f={f}: ratio {ratio:.4} > {bound:.4}"))?;
        parts.push(format!("f={f} {ratio:.4}<={bound:.4}"));
    }
    Ok(parts.join(", "))
}

// 5

fn latency() -> Check {
    let m = run("agreement-latency", &[])?;
    let direct = header(&m, "median_ms.direct")?;
    let wilbur = header(&m, "median_ms.wilbur")?;
    ensure(within(direct, DIRECT_MEDIAN_MS), || format!("direct median {direct} ms"))?;
    ensure(within(wilbur, WILBUR_MEDIAN_MS), || format!("wilbur median {wilbur} ms"))?;
    Ok(format!("median direct {direct:.1} ms, with Wilbur {wilbur:.1} ms"))
}

// 6

fn nakamoto() -> Check {
    let m = run("nakamoto-scaling", &["bits=12..18", "miners=1,2,4"])?;
    let r2 = header(&m, "fit.r2")?;
    let c = header(&m, "fit.ms_per_hash_per_miner")?;
    ensure(r2 >= NAKAMOTO_MIN_R2, || format!("R^2 {r2}"))?;
    ensure(c > 0.0, || format!("slope {c}"))?;
    Ok(format!("R^2 {r2:.4}, {c:.6} ms per hash per miner"))
}

// 7

fn hetcons_suite() -> Check {
    let p = run("hetcons-parallel", &["chains=1..4"])?;
    let single = header(&p, "mean_latency_ms.chains1")?;
    ensure(within(single, HETCONS_LATENCY_MS), || format!("single-chain latency {single} ms"))?;
    let mut worst: f64 = 0.0;
    for n in 2..=4 {
        let l = header(&p, &format!("linearity.chains{n}"))?;
        ensure((l - 1.0).abs() <= LINEARITY_TOLERANCE, || format!("{n} chains at {l:.3} of linear"))?;
        worst = worst.max((l - 1.0).abs());
    }
    let c = run("hetcons-contention", &["clients=8"])?;
    let tput = header(&c, "throughput.clients8")?;
    ensure(tput >= CONTENTION_MIN_BLOCKS_PER_S, || format!("8 clients at {tput} blocks/s"))?;
    let single_decided = hetcons::single_chain();
    let meet_decided = hetcons::meet_against_single();
    ensure(single_decided > 0 && meet_decided > 0, || "safety suite decided nothing".into())?;
    Ok(format!(
        "latency {single:.1} ms, linearity within {:.1}%, 8 clients {tput:.3} blocks/s, safety {single_decided}+{meet_decided} decisions",
        worst * 100.0
    ))
}

// 8

fn meets() -> Check {
    let m = run("hetcons-mixed", &["chains=2", "clients=4", "blocks=500", "meet_percent=60"])?;
    let meets = header(&m, "meets")? as usize;
    let violations = header(&m, "violations")? as usize;
    let commits: usize = m.column("commits").iter().map(|c| c.parse::<usize>().unwrap()).sum();
    ensure(meets >= MIN_MEETS, || format!("{meets} meets"))?;
    ensure(commits > meets, || "no single-chain traffic".into())?;
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("{meets} meets among {commits} commits, 0 violations"))
}

// 9

fn stamp(subjects: &[&Block], time: u64, issuer: u8) -> Block {
    let keys = Keypair::from_seed([issuer; 32]);
    Block::Timestamp(TimestampAttestation::new(subjects.iter().map(|b| b.reference()).collect(), time, &keys))
}

/// Earliest stamp per issuer among blocks that reach `target`, by backward
/// search over reversed edges.
fn reach_oracle(blocks: &[Block], edges: &[Vec<usize>], target: usize) -> BTreeMap<CryptoId, u64> {
    let mut rev = vec![vec![]; blocks.len()];
    for (i, es) in edges.iter().enumerate() {
        for &j in es {
            rev[j].push(i);
        }
    }
    let mut seen = vec![false; blocks.len()];
    let mut queue = rev[target].clone();
    let mut out: BTreeMap<CryptoId, u64> = BTreeMap::new();
    while let Some(i) = queue.pop() {
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        if let Block::Timestamp(t) = &blocks[i] {
            let e = out.entry(t.issuer).or_insert(t.time);
            *e = (*e).min(t.time);
        }
        queue.extend(rev[i].iter().copied());
    }
    out
}

fn coverage_oracle(seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks: Vec<Block> = vec![];
    let mut edges: Vec<Vec<usize>> = vec![];
    for i in 0..n {
        if i < 10 || rng.gen_bool(0.2) {
            blocks.push(Block::opaque(format!("leaf {seed} {i}").into_bytes()));
            edges.push(vec![]);
        } else {
            let picks: BTreeSet<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..i)).collect();
            let refs: Vec<&Block> = picks.iter().map(|&j| &blocks[j]).collect();
            let b = stamp(&refs, rng.gen_range(0..10_000), rng.gen_range(1..=8));
            blocks.push(b);
            edges.push(picks.into_iter().collect());
        }
    }
    let index = CoverageIndex::new(&blocks);
    for target in 0..n {
        ensure(index.coverage(&blocks[target].hash()) == reach_oracle(&blocks, &edges, target), || {
            format!("coverage differs from reachability at node {target} of DAG {seed}")
        })?;
    }
    Ok(())
}

fn timestamp() -> Check {
    let m = run("timestamp-accrual", &["ferns=16", "batch=10", "requests=10000"])?;
    let full = header(&m, "full_coverage.ferns16")?;
    ensure(full == 1.0, || format!("{full} of blocks reached 16 issuers"))?;
    let curve: Vec<f64> = m.column("mean_ms").iter().map(|x| x.parse().unwrap()).collect();
    ensure(curve.len() == 16, || format!("{} curve points", curve.len()))?;
    ensure(curve.windows(2).all(|w| w[0] <= w[1]), || "coverage curve not monotone".into())?;
    let (first, second, last) = (curve[0], curve[1], curve[15]);
    ensure((first - ONE_WAY_MS).abs() <= FIRST_STAMP_SLACK_MS, || format!("first stamp at {first} ms"))?;
    // A wait of at least one link delay, then the rest faster than one.
    ensure(second - first >= ONE_WAY_MS, || format!("no plateau: {first} -> {second} ms"))?;
    ensure(last - second < ONE_WAY_MS, || format!("slow accrual: {second} -> {last} ms"))?;
    for seed in 0..3 {
        coverage_oracle(seed, 1000)?;
    }
    Ok(format!(
        "100% at 16 issuers; 1 stamp {first:.1} ms, 2 at {second:.1} ms, 16 at {last:.1} ms; coverage = reachability on 3 DAGs of 1000"
    ))
}

// 10

fn gitsim_linearity() -> Check {
    let (accepted, refused) = gitsim::workload(10);
    ensure(accepted > 100 && refused > 100, || format!("{accepted} accepted, {refused} refused"))?;
    for seed in 0..3 {
        gitsim::ancestry_matches_closure(seed, 200);
    }
    Ok(format!("1000 moves, {accepted} issued, {refused} refused, heads ordered; ancestry = closure on 3 DAGs of 200"))
}

// 11

fn txn(inputs: usize, outputs: usize) -> Transaction {
    Transaction {
        id: "t".into(),
        inputs: (0..inputs)
            .map(|i| OutPoint {
                txid: "src".into(),
                index: i as u32,
            })
            .collect(),
        outputs: (0..outputs)
            .map(|j| TxOut {
                value: 10 * (j as u64 + 1),
                owner: format!("o{j}"),
            })
            .collect(),
    }
}

fn paygraph_check() -> Check {
    let dag = two_account_transform(&txn(4, 4)).map_err(|e| e.to_string())?;
    ensure(dag.depth == 2 && dag.txns.len() == 8, || format!("4x4: depth {} with {} txns", dag.depth, dag.txns.len()))?;
    // Stage-0 transaction c feeds c and c+1 at stage 1.
    for c in 0..4 {
        let mut next: Vec<&str> = dag
            .txns
            .iter()
            .filter(|t| t.inputs.iter().any(|i| i.txid == format!("t/{c}.0")))
            .map(|t| t.id.as_str())
            .collect();
        next.sort();
        let mut want = [format!("t/{c}.1"), format!("t/{}.1", (c + 1) % 4)];
        want.sort();
        ensure(next == want, || format!("4x4: t/{c}.0 feeds {next:?}"))?;
    }
    for m in 1..=64usize {
        for k in 1..=64usize {
            let dag = two_account_transform(&txn(m, k)).map_err(|e| e.to_string())?;
            let expect = (m.max(k) as f64).log2().ceil() as usize;
            let chain = PaymentGraph::from_transactions(dag.txns.clone()).map_err(|e| e.to_string())?.longest_chain().0;
            ensure(dag.depth == expect && chain == expect.max(1), || format!("{m}x{k}: depth {} chain {chain}", dag.depth))?;
            ensure(dag.txns.iter().all(|t| t.inputs.len() <= 2 && t.outputs.len() <= 2), || format!("{m}x{k} too wide"))?;
        }
    }
    let g = synthetic_graph(SEED, 10_000);
    let report = g.report(false).map_err(|e| e.to_string())?;
    let expect = paygraph::oracle(&g);
    ensure(report.parallel_rounds == expect, || format!("report {} vs oracle {expect}", report.parallel_rounds))?;
    Ok(format!("4x4 depth 2 wired; depth formula for 64x64; 10^4 txns: {expect} rounds match oracle"))
}

// 12

fn small_params(name: &str) -> &'static [&'static str] {
    match name {
        "nakamoto-scaling" => &["bits=8..9", "miners=1,2", "blocks=5"],
        "agreement-latency" => &["blocks=20", "warmup=5"],
        "agreement-bandwidth" => &["f=1,2", "blocks=5", "block_bytes=10000"],
        "hetcons-parallel" => &["chains=1,2", "blocks=10", "warmup=2"],
        "hetcons-multichain" => &["chains=1,2", "blocks=10", "warmup=2"],
        "hetcons-contention" => &["clients=1,3", "from_slot=5", "to_slot=15"],
        "hetcons-mixed" => &["chains=2", "clients=2,3", "blocks=10", "meet_percent=50"],
        "timestamp-accrual" => &["ferns=4", "requests=200"],
        other => panic!("no small parameters for {other}"),
    }
}

fn determinism() -> Check {
    for name in NAMES {
        let a = run(name, small_params(name))?.render();
        let b = run(name, small_params(name))?.render();
        ensure(a == b, || format!("{name} differs between runs"))?;
        ensure(a.lines().any(|l| !l.starts_with('#')), || format!("{name} wrote no rows"))?;
    }
    Ok(format!("{} experiments byte-identical across reruns", NAMES.len()))
}

fn guarded(f: fn() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    })
}

#[test]
fn acceptance() {
    let criteria: [(u32, &str, fn() -> Check); 12] = [
        (1, "calculus view theorems", calculus_theorems),
        (2, "single-slot walkthrough", walkthrough),
        (3, "agreement safety", agreement_safety),
        (4, "bandwidth separation", bandwidth),
        (5, "agreement latency floor", latency),
        (6, "nakamoto scaling", nakamoto),
        (7, "hetcons", hetcons_suite),
        (8, "meet atomicity", meets),
        (9, "timestamp entanglement", timestamp),
        (10, "gitsim linearity", gitsim_linearity),
        (11, "paygraph", paygraph_check),
        (12, "determinism", determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').map(|x| x.trim().parse().expect("ACCEPTANCE lists criterion numbers")).collect());
    let mut unexpected = vec![];
    writeln!(std::io::stdout()).unwrap();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = guarded(f);
        let secs = start.elapsed().as_secs_f64();
        let line = match &result {
            Ok(detail) => format!("PASS {id:>2} {name} ({secs:.1}s): {detail}"),
            Err(detail) => format!("FAIL {id:>2} {name} ({secs:.1}s): {detail}"),
        };
        // Straight to stdout so the table shows without --nocapture.
        writeln!(std::io::stdout(), "{line}").unwrap();
        if result.is_err() && !UNATTAINABLE.contains(&id) {
            unexpected.push(id);
        }
    }
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
