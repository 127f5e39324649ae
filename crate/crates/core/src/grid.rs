//! Network description and PTDF sensitivities.
//!
//! A [`GridCase`] is loaded from the JSON case format and validated once; after
//! that it is treated as immutable. [`PtdfMatrix`] maps nodal injections (MW) to
//! line flows (MW) under the DC approximation.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUS3_JSON: &str = include_str!("../data/bus3.json");
const RTS24_JSON: &str = include_str!("../data/rts24.json");

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("multiple slack buses: {0:?}")]
    MultipleSlack(Vec<usize>),
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error("disconnected network")]
    Disconnected,
    #[error("unknown bundled case '{0}' (expected bus3 or rts24)")]
    UnknownBundled(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    #[serde(default)]
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Per-unit on a 100 MVA base.
    pub reactance: f64,
    /// Thermal limit in MW, applied symmetrically.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub g_min: f64,
    pub g_max: f64,
    /// Linear cost coefficient, $/MWh.
    pub cost: f64,
    /// Per-interval ramp limits, `ramp_down <= 0 <= ramp_up`.
    pub ramp_down: f64,
    pub ramp_up: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindFarm {
    pub bus: usize,
    pub capacity: f64,
    /// Column key into the scenario store (`err_<region>`).
    pub region: String,
    #[serde(default)]
    pub forecast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub demand: f64,
}

fn default_wind_price() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    #[serde(default)]
    pub name: String,
    /// Marginal price of wind energy, $/MWh.
    #[serde(default = "default_wind_price")]
    pub wind_price: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub wind_farms: Vec<WindFarm>,
    pub loads: Vec<Load>,
}

impl GridCase {
    pub fn from_json_str(text: &str) -> Result<Self, GridError> {
        let mut case: GridCase = serde_json::from_str(text).map_err(|e| GridError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        case.validate()?;
        Ok(case)
    }

    /// Returns one of the cases shipped with the crate: `bus3` or `rts24`.
    pub fn bundled(name: &str) -> Result<Self, GridError> {
        match name {
            "bus3" => Self::from_json_str(BUS3_JSON),
            "rts24" => Self::from_json_str(RTS24_JSON),
            other => Err(GridError::UnknownBundled(other.to_string())),
        }
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_wind(&self) -> usize {
        self.wind_farms.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.loads.iter().map(|l| l.demand).sum()
    }

    /// Decision dimension of the scenario program once the two balance
    /// equalities are eliminated: `2 n_g - 2`.
    pub fn decision_dimension(&self) -> usize {
        (2 * self.n_gen()).saturating_sub(2)
    }

    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .find(|b| b.is_slack)
            .map(|b| b.id)
            .expect("validated case has a slack bus")
    }

    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Checks all invariants. Marks the lowest-id bus as slack when none is flagged.
    pub fn validate(&mut self) -> Result<(), GridError> {
        if self.buses.is_empty() {
            return Err(GridError::Invalid("case has no buses".into()));
        }
        let slacks: Vec<usize> = self
            .buses
            .iter()
            .filter(|b| b.is_slack)
            .map(|b| b.id)
            .collect();
        if slacks.len() > 1 {
            return Err(GridError::MultipleSlack(slacks));
        }
        if slacks.is_empty() {
            let lowest = self
                .buses
                .iter_mut()
                .min_by_key(|b| b.id)
                .expect("non-empty");
            lowest.is_slack = true;
        }

        let mut ids: Vec<usize> = self.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        let base = ids[0];
        if base > 1 || ids.iter().enumerate().any(|(k, &id)| id != base + k) {
            return Err(GridError::Invalid(format!(
                "bus ids must be contiguous from 0 or 1, got {ids:?}"
            )));
        }
        let known = |id: usize| id >= base && id < base + ids.len();

        for (k, line) in self.lines.iter().enumerate() {
            if !known(line.from_bus) || !known(line.to_bus) {
                return Err(GridError::Invalid(format!(
                    "line {k} references unknown bus ({} -> {})",
                    line.from_bus, line.to_bus
                )));
            }
            if line.from_bus == line.to_bus {
                return Err(GridError::Invalid(format!(
                    "line {k} connects bus {} to itself",
                    line.from_bus
                )));
            }
            if !(line.reactance > 0.0) {
                return Err(GridError::Invalid(format!(
                    "line {k} reactance must be > 0, got {}",
                    line.reactance
                )));
            }
            if !(line.capacity > 0.0) {
                return Err(GridError::Invalid(format!(
                    "line {k} capacity must be > 0, got {}",
                    line.capacity
                )));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if !known(g.bus) {
                return Err(GridError::Invalid(format!(
                    "generator {k} references unknown bus {}",
                    g.bus
                )));
            }
            if g.g_min > g.g_max {
                return Err(GridError::Invalid(format!(
                    "generator {k}: g_min {} exceeds g_max {}",
                    g.g_min, g.g_max
                )));
            }
            if g.ramp_down > 0.0 || g.ramp_up < 0.0 {
                return Err(GridError::Invalid(format!(
                    "generator {k}: ramps must satisfy ramp_down <= 0 <= ramp_up, got [{}, {}]",
                    g.ramp_down, g.ramp_up
                )));
            }
        }
        for (k, w) in self.wind_farms.iter().enumerate() {
            if !known(w.bus) {
                return Err(GridError::Invalid(format!(
                    "wind farm {k} references unknown bus {}",
                    w.bus
                )));
            }
            if !(w.forecast >= 0.0 && w.forecast <= w.capacity) {
                return Err(GridError::Invalid(format!(
                    "wind farm {k}: forecast {} outside [0, {}]",
                    w.forecast, w.capacity
                )));
            }
        }
        for (k, l) in self.loads.iter().enumerate() {
            if !known(l.bus) {
                return Err(GridError::Invalid(format!(
                    "load {k} references unknown bus {}",
                    l.bus
                )));
            }
            if !(l.demand >= 0.0) {
                return Err(GridError::Invalid(format!(
                    "load {k}: demand must be >= 0, got {}",
                    l.demand
                )));
            }
        }
        if !self.is_connected() {
            return Err(GridError::Disconnected);
        }
        let supply: f64 = self.generators.iter().map(|g| g.g_max).sum::<f64>()
            + self.wind_farms.iter().map(|w| w.capacity).sum::<f64>();
        if supply < self.total_demand() {
            return Err(GridError::Invalid(format!(
                "total capacity {supply} MW is below total demand {} MW",
                self.total_demand()
            )));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.n_bus();
        let index: HashMap<usize, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(k, b)| (b.id, k))
            .collect();
        let mut adj = vec![Vec::new(); n];
        for line in &self.lines {
            let (a, b) = (index[&line.from_bus], index[&line.to_bus]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Same network with the slack flag moved to `bus_id`.
    pub fn with_slack(&self, bus_id: usize) -> Result<Self, GridError> {
        let mut case = self.clone();
        if case.bus_index(bus_id).is_none() {
            return Err(GridError::Invalid(format!("unknown slack bus {bus_id}")));
        }
        for b in &mut case.buses {
            b.is_slack = b.id == bus_id;
        }
        Ok(case)
    }
}

pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, GridError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    GridCase::from_json_str(&text)
}

/// Line-flow sensitivities to nodal injections, with device-sliced views.
#[derive(Debug, Clone)]
pub struct PtdfMatrix {
    /// `n_f x n_bus`, columns in `GridCase::buses` order.
    pub h: DMatrix<f64>,
    pub h_g: DMatrix<f64>,
    pub h_d: DMatrix<f64>,
    pub h_w: DMatrix<f64>,
}

impl PtdfMatrix {
    /// Flows (MW) for a nodal injection vector in bus order.
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        let p = DVector::from_column_slice(injection);
        (&self.h * p).iter().copied().collect()
    }
}

pub fn compute_ptdf(case: &GridCase) -> Result<PtdfMatrix, GridError> {
    let n = case.n_bus();
    let nf = case.n_lines();
    let slack = case
        .bus_index(case.slack_bus())
        .expect("slack bus is a member of the case");

    let idx = |id: usize| case.bus_index(id).expect("validated bus reference");
    let mut b_bus = DMatrix::<f64>::zeros(n, n);
    for line in &case.lines {
        let (f, t) = (idx(line.from_bus), idx(line.to_bus));
        let y = 1.0 / line.reactance;
        b_bus[(f, f)] += y;
        b_bus[(t, t)] += y;
        b_bus[(f, t)] -= y;
        b_bus[(t, f)] -= y;
    }

    // Reduced susceptance: slack row and column removed.
    let keep: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let reduced = DMatrix::from_fn(n - 1, n - 1, |r, c| b_bus[(keep[r], keep[c])]);
    let lu = reduced.lu();
    let x_red = lu
        .try_inverse()
        .ok_or(GridError::Disconnected)?;
    if x_red.iter().any(|v| !v.is_finite()) {
        return Err(GridError::Disconnected);
    }

    // Angle sensitivity with slack angle pinned at zero.
    let mut x_full = DMatrix::<f64>::zeros(n, n);
    for (r, &br) in keep.iter().enumerate() {
        for (c, &bc) in keep.iter().enumerate() {
            x_full[(br, bc)] = x_red[(r, c)];
        }
    }

    let mut h = DMatrix::<f64>::zeros(nf, n);
    for (l, line) in case.lines.iter().enumerate() {
        let (f, t) = (idx(line.from_bus), idx(line.to_bus));
        let y = 1.0 / line.reactance;
        for k in 0..n {
            h[(l, k)] = y * (x_full[(f, k)] - x_full[(t, k)]);
        }
    }

    let slice = |buses: Vec<usize>| {
        DMatrix::from_fn(nf, buses.len(), |r, c| h[(r, idx(buses[c]))])
    };
    let h_g = slice(case.generators.iter().map(|g| g.bus).collect());
    let h_d = slice(case.loads.iter().map(|l| l.bus).collect());
    let h_w = slice(case.wind_farms.iter().map(|w| w.bus).collect());
    Ok(PtdfMatrix { h, h_g, h_d, h_w })
}
