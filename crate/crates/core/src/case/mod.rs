//! Canonical power-system case model: network, market data and the
//! measurement configuration, plus the readers that produce them.
//!
//! Units at this boundary: loads, limits and capacities in MW, reactances
//! in p.u. on `base_mva`, prices in $/MWh.

mod fixtures;
mod matpower;
mod native;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meters::MeterConfig;

pub use fixtures::{ieee118, ieee14, load_case_ref, t3};
pub use matpower::parse_matpower;
pub use native::{CaseDocument, MeasurementSection, ScenarioSection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub load_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    /// Series reactance in p.u.
    pub reactance: f64,
    /// Directional flow limit (from → to). `None` means unlimited.
    pub limit_mw: Option<f64>,
    /// Breaker state: `true` when the line is in service.
    pub closed: bool,
}

impl Branch {
    pub fn label(&self) -> String {
        format!("{}-{}", self.from, self.to)
    }

    pub fn susceptance(&self) -> f64 {
        1.0 / self.reactance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Real-time offer, $/MWh.
    pub offer: f64,
    pub capacity_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchableLoad {
    pub bus: usize,
    /// Real-time bid, $/MWh.
    pub bid: f64,
}

/// Closed interval `[min, max]` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }
}

pub const DEFAULT_BASE_MVA: f64 = 100.0;
pub const DEFAULT_DELTA_MIN_MW: f64 = -2.0;
pub const DEFAULT_DELTA_MAX_MW: f64 = 0.1;
pub const DEFAULT_PRICE_FLOOR: f64 = -100.0;
pub const DEFAULT_PRICE_CEILING: f64 = 500.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerCase {
    pub name: String,
    pub base_mva: f64,
    pub reference_bus: usize,
    /// Sorted by id.
    pub buses: Vec<Bus>,
    /// Sorted by id.
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub dispatchable_loads: Vec<DispatchableLoad>,
}

/// Incremental dispatch bounds and price caps for the ex-post pricing LP.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    /// One entry per generator, same order as `PowerCase::generators`.
    pub generator_bounds: Vec<Bounds>,
    /// One entry per dispatchable load.
    pub load_bounds: Vec<Bounds>,
    pub price_floor: f64,
    pub price_ceiling: f64,
}

impl MarketConfig {
    pub fn with_defaults(case: &PowerCase) -> Self {
        Self {
            generator_bounds: vec![
                Bounds::new(DEFAULT_DELTA_MIN_MW, DEFAULT_DELTA_MAX_MW);
                case.generators.len()
            ],
            load_bounds: vec![Bounds::new(0.0, 0.0); case.dispatchable_loads.len()],
            price_floor: DEFAULT_PRICE_FLOOR,
            price_ceiling: DEFAULT_PRICE_CEILING,
        }
    }

    pub fn clamp(&self, price: f64) -> f64 {
        price.clamp(self.price_floor, self.price_ceiling)
    }

    pub fn validate(&self, case: &PowerCase) -> Result<()> {
        if self.generator_bounds.len() != case.generators.len() {
            return Err(Error::Dimension {
                what: "generator bounds",
                expected: case.generators.len(),
                got: self.generator_bounds.len(),
            });
        }
        if self.load_bounds.len() != case.dispatchable_loads.len() {
            return Err(Error::Dimension {
                what: "dispatchable load bounds",
                expected: case.dispatchable_loads.len(),
                got: self.load_bounds.len(),
            });
        }
        for (g, b) in self.generator_bounds.iter().enumerate() {
            if !(b.min <= b.max) {
                return Err(Error::invalid(
                    format!("generator {} (bus {})", g, case.generators[g].bus),
                    format!("incremental bounds [{}, {}] are inverted", b.min, b.max),
                ));
            }
        }
        for (j, b) in self.load_bounds.iter().enumerate() {
            if !(b.min <= b.max) {
                return Err(Error::invalid(
                    format!("dispatchable load {j}"),
                    format!("incremental bounds [{}, {}] are inverted", b.min, b.max),
                ));
            }
        }
        if !(self.price_floor < self.price_ceiling) {
            return Err(Error::invalid(
                "market",
                format!(
                    "price floor {} must be below ceiling {}",
                    self.price_floor, self.price_ceiling
                ),
            ));
        }
        Ok(())
    }
}

impl PowerCase {
    /// Sorts buses and branches into canonical order and checks every
    /// structural invariant.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        reference_bus: usize,
        mut buses: Vec<Bus>,
        mut branches: Vec<Branch>,
        generators: Vec<Generator>,
        dispatchable_loads: Vec<DispatchableLoad>,
    ) -> Result<Self> {
        buses.sort_by_key(|b| b.id);
        branches.sort_by_key(|b| b.id);
        let case = Self {
            name: name.into(),
            base_mva,
            reference_bus,
            buses,
            branches,
            generators,
            dispatchable_loads,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::invalid("case", "no buses"));
        }
        if !(self.base_mva > 0.0) {
            return Err(Error::invalid("case", "base MVA must be positive"));
        }
        for w in self.buses.windows(2) {
            if w[0].id >= w[1].id {
                return Err(Error::invalid(
                    format!("bus {}", w[1].id),
                    "duplicate or unsorted bus id",
                ));
            }
        }
        for w in self.branches.windows(2) {
            if w[0].id >= w[1].id {
                return Err(Error::invalid(
                    format!("branch {}", w[1].id),
                    "duplicate or unsorted branch id",
                ));
            }
        }
        if self.bus_index(self.reference_bus).is_none() {
            return Err(Error::invalid(
                "reference bus",
                format!("bus {} does not exist", self.reference_bus),
            ));
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if self.bus_index(end).is_none() {
                    return Err(Error::invalid(
                        format!("branch {} ({})", br.id, br.label()),
                        format!("endpoint bus {end} does not exist"),
                    ));
                }
            }
            if br.from == br.to {
                return Err(Error::invalid(
                    format!("branch {}", br.id),
                    "from and to buses coincide",
                ));
            }
            if !(br.reactance > 0.0) || !br.reactance.is_finite() {
                return Err(Error::invalid(
                    format!("branch {} ({})", br.id, br.label()),
                    format!("reactance {} must be positive", br.reactance),
                ));
            }
            if let Some(lim) = br.limit_mw {
                if !lim.is_finite() {
                    return Err(Error::invalid(
                        format!("branch {}", br.id),
                        "flow limit must be finite (omit it for unlimited lines)",
                    ));
                }
            }
        }
        for (g, gen) in self.generators.iter().enumerate() {
            if self.bus_index(gen.bus).is_none() {
                return Err(Error::invalid(
                    format!("generator {g}"),
                    format!("bus {} does not exist", gen.bus),
                ));
            }
            if gen.capacity_mw < 0.0 || !gen.offer.is_finite() {
                return Err(Error::invalid(
                    format!("generator {g} (bus {})", gen.bus),
                    "capacity must be nonnegative and offer finite",
                ));
            }
        }
        for (j, load) in self.dispatchable_loads.iter().enumerate() {
            if self.bus_index(load.bus).is_none() {
                return Err(Error::invalid(
                    format!("dispatchable load {j}"),
                    format!("bus {} does not exist", load.bus),
                ));
            }
        }
        self.check_connected(&BTreeSet::new())
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// State dimension: one phase angle per non-reference bus.
    pub fn state_dim(&self) -> usize {
        self.buses.len() - 1
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn reference_index(&self) -> usize {
        self.bus_index(self.reference_bus)
            .expect("validated case has its reference bus")
    }

    pub fn branch_index(&self, id: usize) -> Option<usize> {
        self.branches.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn branch(&self, id: usize) -> Option<&Branch> {
        self.branch_index(id).map(|k| &self.branches[k])
    }

    /// Column of bus `index` in the reduced state vector, `None` for the
    /// reference bus.
    pub fn state_column(&self, bus_index: usize) -> Option<usize> {
        let r = self.reference_index();
        match bus_index.cmp(&r) {
            std::cmp::Ordering::Less => Some(bus_index),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(bus_index - 1),
        }
    }

    /// Resolves a branch reference: a numeric branch id, or a `from-to`
    /// bus pair in either orientation (must be unambiguous).
    pub fn resolve_branch(&self, label: &str) -> Result<usize> {
        let label = label.trim();
        if let Some((a, b)) = label.split_once('-') {
            let (a, b): (usize, usize) = match (a.trim().parse(), b.trim().parse()) {
                (Ok(a), Ok(b)) => (a, b),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "branch reference '{label}' is not of the form i-j"
                    )))
                }
            };
            let hits: Vec<usize> = self
                .branches
                .iter()
                .filter(|br| (br.from == a && br.to == b) || (br.from == b && br.to == a))
                .map(|br| br.id)
                .collect();
            match hits.as_slice() {
                [id] => Ok(*id),
                [] => Err(Error::InvalidArgument(format!(
                    "no branch between {a} and {b}"
                ))),
                _ => Err(Error::InvalidArgument(format!(
                    "branch {a}-{b} is ambiguous (parallel ids {hits:?}); use a branch id"
                ))),
            }
        } else {
            let id: usize = label.parse().map_err(|_| {
                Error::InvalidArgument(format!("'{label}' is not a branch id or i-j pair"))
            })?;
            self.branch_index(id)
                .map(|_| id)
                .ok_or_else(|| Error::InvalidArgument(format!("branch {id} does not exist")))
        }
    }

    pub fn total_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.load_mw).sum()
    }

    /// Ids of branches whose breakers are closed.
    pub fn closed_branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.closed)
    }

    pub fn limited_branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.limit_mw.is_some())
    }

    /// Checks that the closed-breaker graph, minus `removed`, connects every
    /// bus to the reference bus.
    pub fn check_connected(&self, removed: &BTreeSet<usize>) -> Result<()> {
        let nb = self.buses.len();
        let mut adj = vec![Vec::new(); nb];
        for br in self.closed_branches().filter(|b| !removed.contains(&b.id)) {
            let (Some(i), Some(j)) = (self.bus_index(br.from), self.bus_index(br.to)) else {
                continue;
            };
            adj[i].push(j);
            adj[j].push(i);
        }
        let start = self
            .bus_index(self.reference_bus)
            .ok_or_else(|| Error::invalid("reference bus", "missing"))?;
        let mut seen = vec![false; nb];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Disconnected {
                bus: self.buses[i].id,
            }),
            None => Ok(()),
        }
    }
}

/// Input formats accepted by [`parse_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    /// The structured JSON document (see `docs/case-format.md`).
    Native,
    /// MATPOWER `mpc.bus` / `mpc.gen` / `mpc.branch` / `mpc.gencost` subset.
    Matpower,
}

impl CaseFormat {
    /// Guesses the format from a file name: `.m` means MATPOWER.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("m") => CaseFormat::Matpower,
            _ => CaseFormat::Native,
        }
    }
}

/// Everything a case document carries.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseBundle {
    pub case: PowerCase,
    pub meters: MeterConfig,
    pub market: MarketConfig,
    pub scenario: ScenarioSection,
}

impl CaseBundle {
    /// Serializes to the native JSON format.
    pub fn to_native_json(&self) -> Result<String> {
        let doc = CaseDocument::from_bundle(self);
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Parses a case document. MATPOWER input takes its market data from the
/// `gencost` table and defaults; use [`parse_matpower`] to supply a sidecar.
pub fn parse_case(text: &str, format: CaseFormat) -> Result<CaseBundle> {
    match format {
        CaseFormat::Native => native::parse_native(text),
        CaseFormat::Matpower => parse_matpower(text, None),
    }
}
