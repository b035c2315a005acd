//! Grid cases and the DC observation model.
//!
//! A [`GridCase`] is parsed from MATPOWER-style `.m` text or from the JSON
//! schema in [`parse`]. [`ObservationMatrix`] is the DC Jacobian that maps the
//! non-reference bus angles to the measurement vector `[P_inj; P_flow]`.

mod observation;
mod parse;

pub use observation::{
    MeasurementIndexSet, MeasurementTag, ObservationMatrix, RANK_TOLERANCE,
};
pub use parse::{parse_case, CaseJson};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("case is not observable: rank {rank} < {expected}")]
    Unobservable { rank: usize, expected: usize },
    #[error("bus {0} is the reference bus and has no state column")]
    ReferenceBus(usize),
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("measurement index {index} out of range (m = {m})")]
    IndexOutOfRange { index: usize, m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Load,
    Generator,
    Reference,
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Active demand, p.u.
    pub pd: f64,
    /// Shunt conductance, p.u. at 1.0 V.
    pub gs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series susceptance used by the DC model, `1 / (x * tap)`.
    pub b: f64,
    /// Phase-shift angle, radians.
    pub shift: f64,
    /// Long-term rating, MVA (0 = unlimited).
    pub rating: f64,
    pub in_service: bool,
}

/// Polynomial generator cost `c2 P^2 + c1 P + c0` with `P` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenCost {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Default for GenCost {
    fn default() -> Self {
        Self { c2: 0.01, c1: 20.0, c0: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// p.u.
    pub pmin: f64,
    /// p.u.
    pub pmax: f64,
    pub cost: GenCost,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub base_mva: f64,
    /// Sorted by ascending id.
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub slack_bus: usize,
    /// Fields that were present in the input but are not used by the DC model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.in_service)
    }

    pub fn n_measurements(&self) -> usize {
        self.n_buses() + self.in_service_branches().count()
    }

    /// Position of `bus` in [`GridCase::buses`].
    pub fn bus_index(&self, bus: usize) -> Option<usize> {
        self.buses.binary_search_by_key(&bus, |b| b.id).ok()
    }

    /// Buses carrying a positive nominal demand, ascending.
    pub fn load_buses(&self) -> Vec<usize> {
        self.buses.iter().filter(|b| b.pd > 0.0).map(|b| b.id).collect()
    }

    pub fn generation_capacity(&self) -> f64 {
        self.generators.iter().filter(|g| g.in_service).map(|g| g.pmax).sum()
    }

    /// Checks the structural invariants: unique bus ids, a known slack bus,
    /// generators on existing buses, finite nonzero susceptances, and a single
    /// connected island over in-service branches.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.buses.is_empty() {
            return Err(GridError::Validation("case has no buses".into()));
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(GridError::Validation(format!("baseMVA must be positive, got {}", self.base_mva)));
        }
        for w in self.buses.windows(2) {
            if w[0].id >= w[1].id {
                return Err(GridError::Validation(format!("duplicate or unsorted bus id {}", w[1].id)));
            }
        }
        if self.bus_index(self.slack_bus).is_none() {
            return Err(GridError::UnknownBus(self.slack_bus));
        }
        for g in &self.generators {
            if self.bus_index(g.bus).is_none() {
                return Err(GridError::Validation(format!("generator references unknown bus {}", g.bus)));
            }
            if g.pmin > g.pmax {
                return Err(GridError::Validation(format!("generator at bus {} has pmin > pmax", g.bus)));
            }
        }
        for (k, br) in self.in_service_branches() {
            for bus in [br.from, br.to] {
                if self.bus_index(bus).is_none() {
                    return Err(GridError::Validation(format!("branch {k} references unknown bus {bus}")));
                }
            }
            if br.from == br.to {
                return Err(GridError::Validation(format!("branch {k} is a self-loop at bus {}", br.from)));
            }
            if !br.b.is_finite() || br.b == 0.0 {
                return Err(GridError::Validation(format!("branch {k} has susceptance {}", br.b)));
            }
        }
        let islands = self.count_islands();
        if islands != 1 {
            return Err(GridError::Validation(format!("network has {islands} islands; expected one")));
        }
        Ok(())
    }

    /// Adjacency over in-service branches, keyed by bus position.
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_buses()];
        for (_, br) in self.in_service_branches() {
            if let (Some(f), Some(t)) = (self.bus_index(br.from), self.bus_index(br.to)) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        adj
    }

    fn count_islands(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n_buses()];
        let mut islands = 0;
        for start in 0..self.n_buses() {
            if seen[start] {
                continue;
            }
            islands += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        islands
    }

    /// Distinct neighbouring bus ids of `bus`.
    pub fn neighbors(&self, bus: usize) -> Result<Vec<usize>, GridError> {
        let idx = self.bus_index(bus).ok_or(GridError::UnknownBus(bus))?;
        let mut out: Vec<usize> = self.adjacency()[idx].iter().map(|&j| self.buses[j].id).collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Generator count per bus id.
    pub fn generators_by_bus(&self) -> BTreeMap<usize, usize> {
        let mut map = BTreeMap::new();
        for g in self.generators.iter().filter(|g| g.in_service) {
            *map.entry(g.bus).or_insert(0) += 1;
        }
        map
    }
}

/// The bundled IEEE 14-bus case (MATPOWER format).
pub const IEEE14_CASE: &str = include_str!("../../data/case14.m");
/// The bundled IEEE 118-bus case (MATPOWER format).
pub const IEEE118_CASE: &str = include_str!("../../data/case118.m");

/// Resolves `ieee14` / `ieee118` to the bundled case text.
pub fn bundled_case(name: &str) -> Option<&'static str> {
    match name.to_ascii_lowercase().as_str() {
        "ieee14" | "case14" => Some(IEEE14_CASE),
        "ieee118" | "case118" => Some(IEEE118_CASE),
        _ => None,
    }
}
