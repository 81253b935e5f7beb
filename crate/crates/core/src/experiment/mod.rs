//! Scaled experiment suite on the simulated network. A run is a pure
//! function of its parameters and seed and yields a [`Metrics`] table.

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};

use crate::crypto::Keypair;
use crate::hash::Hash;

mod agreement;
mod hetcons;
mod nakamoto;
mod timestamp;

pub use hetcons::{AppendRecord, Appender, Choice};
pub use timestamp::Stamper;

pub const SCHEMA: &str = "blockweb-metrics/1";

pub const NAMES: [&str; 8] = [
    "nakamoto-scaling",
    "agreement-latency",
    "agreement-bandwidth",
    "hetcons-parallel",
    "hetcons-multichain",
    "hetcons-contention",
    "hetcons-mixed",
    "timestamp-accrual",
];

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown experiment {0:?} (known: {known})", known = NAMES.join(", "))]
    Unknown(String),
    #[error("parameter {key}: {message}")]
    Param { key: String, message: String },
    #[error("run failed: {0}")]
    Failed(String),
}

fn param_error(key: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Param {
        key: key.into(),
        message: message.into(),
    }
}

/// `key=value` settings. Every lookup records the value used, so a metrics
/// file names its full configuration; keys never looked up are an error.
#[derive(Debug, Clone, Default)]
pub struct Params {
    given: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

impl Params {
    pub fn parse<'a>(pairs: impl IntoIterator<Item = &'a str>) -> Result<Self, ExperimentError> {
        let mut given = BTreeMap::new();
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| param_error(pair, "expected key=value"))?;
            given.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self {
            given,
            used: BTreeMap::new(),
        })
    }

    pub fn set(mut self, key: &str, value: impl Display) -> Self {
        self.given.insert(key.into(), value.to_string());
        self
    }

    fn raw(&mut self, key: &str, default: String) -> String {
        let v = self.given.get(key).cloned().unwrap_or(default);
        self.used.insert(key.into(), v.clone());
        v
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64, ExperimentError> {
        let v = self.raw(key, default.to_string());
        v.parse().map_err(|_| param_error(key, format!("{v:?} is not a whole number")))
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool, ExperimentError> {
        let v = self.raw(key, default.to_string());
        v.parse().map_err(|_| param_error(key, format!("{v:?} is not true or false")))
    }

    /// A comma-separated list whose items may be inclusive ranges `a..b`.
    pub fn list(&mut self, key: &str, default: &str) -> Result<Vec<u64>, ExperimentError> {
        let v = self.raw(key, default.into());
        let bad = || param_error(key, format!("{v:?} is not a list like 1,2,4 or 12..18"));
        let mut out = vec![];
        for item in v.split(',') {
            match item.split_once("..") {
                Some((a, b)) => {
                    let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                    if a > b {
                        return Err(bad());
                    }
                    out.extend(a..=b);
                }
                None => out.push(item.trim().parse().map_err(|_| bad())?),
            }
        }
        Ok(out)
    }

    fn unused(&self) -> Vec<&str> {
        self.given
            .keys()
            .filter(|k| !self.used.contains_key(*k))
            .map(String::as_str)
            .collect()
    }
}

/// Header lines, then one comma-separated record per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    headers: Vec<(String, String)>,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Metrics {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            headers: vec![],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn header(&mut self, key: &str, value: impl Display) {
        self.headers.push((key.into(), value.to_string()));
    }

    pub fn row(&mut self, values: &[&dyn Display]) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(values.iter().map(|v| v.to_string()).collect());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    /// Values of one column, in record order.
    pub fn column(&self, name: &str) -> Vec<&str> {
        match self.columns.iter().position(|c| c == name) {
            Some(i) => self.rows.iter().map(|r| r[i].as_str()).collect(),
            None => vec![],
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.headers {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# columns={}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    /// Reads a rendered table back.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = Metrics::new(&[]);
        for (n, line) in text.lines().enumerate() {
            if let Some(h) = line.strip_prefix("# ") {
                let (k, v) = h.split_once('=').ok_or(format!("line {}: header without '='", n + 1))?;
                if k == "columns" {
                    m.columns = v.split(',').map(str::to_string).collect();
                } else {
                    m.headers.push((k.into(), v.into()));
                }
            } else if !line.is_empty() {
                let row: Vec<String> = line.split(',').map(str::to_string).collect();
                if row.len() != m.columns.len() {
                    return Err(format!("line {}: {} fields for {} columns", n + 1, row.len(), m.columns.len()));
                }
                m.rows.push(row);
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sim,
    /// Loopback sockets in wall-clock time; agreement-latency only.
    Tcp,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(Self::Sim),
            "tcp" => Ok(Self::Tcp),
            _ => Err(format!("unknown backend {s:?} (sim or tcp)")),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sim => "sim",
            Self::Tcp => "tcp",
        })
    }
}

/// Runs experiment `name` on the simulated network.
pub fn run(name: &str, params: &Params, seed: u64) -> Result<Metrics, ExperimentError> {
    run_on(name, params, seed, Backend::Sim)
}

pub fn run_on(name: &str, params: &Params, seed: u64, backend: Backend) -> Result<Metrics, ExperimentError> {
    if !NAMES.contains(&name) {
        return Err(ExperimentError::Unknown(name.into()));
    }
    if backend == Backend::Tcp && name != "agreement-latency" {
        return Err(ExperimentError::Failed(format!("{name} runs on the sim backend only")));
    }
    let mut p = params.clone();
    let mut body = match name {
        "nakamoto-scaling" => nakamoto::scaling(&mut p, seed)?,
        "agreement-latency" => agreement::latency(&mut p, seed, backend)?,
        "agreement-bandwidth" => agreement::bandwidth(&mut p, seed)?,
        "hetcons-parallel" => hetcons::parallel(&mut p, seed)?,
        "hetcons-multichain" => hetcons::multichain(&mut p, seed)?,
        "hetcons-contention" => hetcons::contention(&mut p, seed)?,
        "hetcons-mixed" => hetcons::mixed(&mut p, seed)?,
        "timestamp-accrual" => timestamp::accrual(&mut p, seed)?,
        _ => return Err(ExperimentError::Unknown(name.into())),
    };
    if let Some(k) = p.unused().first() {
        return Err(param_error(k, format!("not a parameter of {name}")));
    }
    let mut m = Metrics::new(&[]);
    m.header("schema", SCHEMA);
    m.header("experiment", name);
    m.header("seed", seed);
    m.header("backend", backend);
    for (k, v) in &p.used {
        m.header(&format!("param.{k}"), v);
    }
    m.headers.append(&mut body.headers);
    m.columns = body.columns;
    m.rows = body.rows;
    Ok(m)
}

/// Deterministic identity for node `i` of group `tag` in run `seed`.
pub(crate) fn key(seed: u64, tag: &str, i: usize) -> Keypair {
    Keypair::from_seed(Hash::of(format!("{seed}/{tag}/{i}").as_bytes()).digest)
}

/// Nearest-rank percentile of sorted values.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Least-squares fit of `y = a + c x`; returns (a, c, R²).
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let c = sxy / sxx;
    let a = my - c * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - c * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (a, c, 1.0 - ss_res / ss_tot)
}

pub(crate) fn ms(micros: u64) -> String {
    format!("{:.3}", micros as f64 / 1000.0)
}

pub(crate) fn f3(v: f64) -> String {
    format!("{v:.3}")
}
