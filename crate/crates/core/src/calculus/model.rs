//! Plain-text model files.
//!
//! ```text
//! # comment
//! blocks x y ix iy ax
//! universes all order=x<ix,y<iy
//! universe exist=x,ix avail=x order=x<ix
//! fact store-forever ax issuer=wilbur covers=x,ix
//! fact commit ix issuer=bob slot=0 subject=x
//! trust store-forever wilbur
//! trust exclusive-commit bob
//! adds R {} {x,ix} {y,iy}
//! observe ax ix
//! ```
//!
//! `universes all` adds every (exist, avail) pair over the declared blocks.
//! Trust lines intersect their interpretations into the starting belief,
//! which `observe` then refines.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{
    all_universes, Adds, AttestationTable, AvailabilityFact, Belief, BlockId, BlockSet, CalculusError, CommitFact,
    Universe, MAX_MODEL_BLOCKS,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trust {
    StoreForever(String),
    ExclusiveCommit(String),
}

#[derive(Debug, Clone, Default)]
pub struct Model {
    pub names: Vec<String>,
    pub universes: Belief,
    pub facts: AttestationTable,
    pub trust: Vec<Trust>,
    pub adds: Vec<(String, Adds)>,
    pub observed: Vec<BlockId>,
}

fn err(line: usize, msg: impl std::fmt::Display) -> CalculusError {
    CalculusError::Model(format!("line {line}: {msg}"))
}

impl Model {
    pub fn id(&self, name: &str) -> Option<BlockId> {
        self.names.iter().position(|n| n == name).map(|i| i as BlockId)
    }

    pub fn format_set(&self, s: BlockSet) -> String {
        let names: Vec<&str> = s.iter().map(|b| self.names[b as usize].as_str()).collect();
        format!("{{{}}}", names.join(","))
    }

    fn set(&self, line: usize, list: &str) -> Result<BlockSet, CalculusError> {
        let list = list.trim().trim_start_matches('{').trim_end_matches('}');
        let mut s = BlockSet::EMPTY;
        for name in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            s.insert(self.id(name).ok_or_else(|| err(line, format!("unknown block {name}")))?);
        }
        Ok(s)
    }

    fn order(&self, line: usize, list: &str) -> Result<Vec<(BlockId, BlockId)>, CalculusError> {
        let mut out = Vec::new();
        for pair in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (a, b) = pair
                .split_once('<')
                .ok_or_else(|| err(line, format!("order pair {pair} needs a<b")))?;
            let a = self.id(a.trim()).ok_or_else(|| err(line, format!("unknown block {a}")))?;
            let b = self.id(b.trim()).ok_or_else(|| err(line, format!("unknown block {b}")))?;
            out.push((a, b));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Model, CalculusError> {
        let mut m = Model::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.split('#').next().unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            let mut words = raw.split_whitespace();
            let head = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            let opts: BTreeMap<&str, &str> = rest.iter().filter_map(|w| w.split_once('=')).collect();
            match head {
                "blocks" => {
                    for name in &rest {
                        if m.id(name).is_some() {
                            return Err(err(line, format!("duplicate block {name}")));
                        }
                        m.names.push((*name).to_owned());
                    }
                    if m.names.len() > MAX_MODEL_BLOCKS {
                        return Err(CalculusError::BlockOutOfRange(m.names.len()));
                    }
                }
                "universes" => {
                    if rest.first() != Some(&"all") {
                        return Err(err(line, "expected `universes all`"));
                    }
                    let order = m.order(line, opts.get("order").unwrap_or(&""))?;
                    let all = all_universes(BlockSet::first(m.names.len()), &order)?;
                    m.universes = m.universes.union(&all);
                }
                "universe" => {
                    let exist = m.set(line, opts.get("exist").unwrap_or(&""))?;
                    let avail = m.set(line, opts.get("avail").unwrap_or(&""))?;
                    let order = m.order(line, opts.get("order").unwrap_or(&""))?;
                    m.universes.0.insert(Universe::new(exist, avail, &order).map_err(|e| err(line, e))?);
                }
                "fact" => {
                    let (kind, att) = match rest.as_slice() {
                        [k, a, ..] => (*k, m.id(a).ok_or_else(|| err(line, format!("unknown block {a}")))?),
                        _ => return Err(err(line, "fact needs a kind and an attestation block")),
                    };
                    let issuer = opts
                        .get("issuer")
                        .ok_or_else(|| err(line, "fact needs issuer="))?
                        .to_string();
                    match kind {
                        "store-forever" => m.facts.availability.push(AvailabilityFact {
                            attestation: att,
                            issuer,
                            covers: m.set(line, opts.get("covers").unwrap_or(&""))?,
                        }),
                        "commit" => {
                            let subject = opts.get("subject").ok_or_else(|| err(line, "commit needs subject="))?;
                            m.facts.commits.push(CommitFact {
                                attestation: att,
                                issuer,
                                slot: opts
                                    .get("slot")
                                    .unwrap_or(&"0")
                                    .parse()
                                    .map_err(|_| err(line, "slot must be an integer"))?,
                                subject: m.id(subject).ok_or_else(|| err(line, format!("unknown block {subject}")))?,
                            })
                        }
                        other => return Err(err(line, format!("unknown fact kind {other}"))),
                    }
                }
                "trust" => match rest.as_slice() {
                    ["store-forever", who] => m.trust.push(Trust::StoreForever((*who).into())),
                    ["exclusive-commit", who] => m.trust.push(Trust::ExclusiveCommit((*who).into())),
                    _ => return Err(err(line, "expected `trust store-forever|exclusive-commit <issuer>`")),
                },
                "adds" => {
                    let (name, states) = rest.split_first().ok_or_else(|| err(line, "adds needs a name"))?;
                    let mut parsed = Vec::new();
                    for s in states {
                        parsed.push(m.set(line, s)?);
                    }
                    m.adds.push(((*name).to_owned(), Adds::new(parsed)));
                }
                "observe" => {
                    for name in &rest {
                        m.observed
                            .push(m.id(name).ok_or_else(|| err(line, format!("unknown block {name}")))?);
                    }
                }
                other => return Err(err(line, format!("unknown directive {other}"))),
            }
        }
        Ok(m)
    }

    /// Universes left after applying every trust stance.
    pub fn prior(&self) -> Belief {
        let mut b = self.universes.clone();
        for t in &self.trust {
            b = match t {
                Trust::StoreForever(who) => self.facts.interpret_store_forever(who, &b),
                Trust::ExclusiveCommit(who) => self.facts.interpret_exclusive_commit(who, &b),
            };
        }
        b
    }

    /// Belief after the trust stances and the observations.
    pub fn belief(&self) -> Belief {
        self.prior().refine(&self.observed)
    }

    /// Human-readable summary used by the command line tool.
    pub fn report(&self) -> String {
        let prior = self.prior();
        let belief = prior.refine(&self.observed);
        let mut out = String::new();
        let _ = writeln!(out, "universes {}", self.universes.len());
        let _ = writeln!(out, "prior {}", prior.len());
        let _ = writeln!(out, "belief {}", belief.len());
        if belief.is_empty() {
            let _ = writeln!(out, "diagnostic degenerate-belief");
        }
        let seen: BlockSet = self.observed.iter().copied().collect();
        let _ = writeln!(
            out,
            "observed {} available={}",
            self.format_set(seen),
            belief.is_available(seen)
        );
        match belief.availability_monotonicity_witness() {
            None => {
                let _ = writeln!(out, "availability-monotone true");
            }
            Some((u, _, w)) => {
                let _ = writeln!(
                    out,
                    "availability-monotone false exist={}/{} avail={}/{}",
                    self.format_set(u.exist()),
                    self.format_set(w.exist()),
                    self.format_set(u.avail()),
                    self.format_set(w.avail())
                );
            }
        }
        for (name, adds) in &self.adds {
            let view = belief.view(adds);
            let _ = writeln!(out, "view {name} {}", self.format_set(view));
            for s in adds.states() {
                let inc = belief.is_incontrovertible(adds, s).unwrap_or(false);
                let _ = writeln!(
                    out,
                    "state {name} {} incontrovertible={inc} available={}",
                    self.format_set(s),
                    belief.is_available(s)
                );
            }
        }
        out
    }
}
