use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    Bounds, Branch, Bus, CaseBundle, DispatchableLoad, Generator, MarketConfig, PowerCase,
    DEFAULT_BASE_MVA, DEFAULT_DELTA_MAX_MW, DEFAULT_DELTA_MIN_MW, DEFAULT_PRICE_CEILING,
    DEFAULT_PRICE_FLOOR,
};
use crate::error::{Error, Result};
use crate::meters::{
    build_measurement_model, canonical_meters, Meter, NoiseSpec, SuspectSelector,
    DEFAULT_NOISE_STD_PU,
};

/// Top-level native case document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    #[serde(default)]
    pub name: String,
    pub network: NetworkSection,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub reference_bus: usize,
    pub buses: Vec<Bus>,
    pub branches: Vec<BranchEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    #[serde(default)]
    pub limit_mw: Option<f64>,
    #[serde(default = "yes")]
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(default)]
    pub generators: Vec<GeneratorEntry>,
    #[serde(default)]
    pub dispatchable_loads: Vec<LoadEntry>,
    #[serde(default = "default_floor")]
    pub price_floor: f64,
    #[serde(default = "default_ceiling")]
    pub price_ceiling: f64,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            generators: Vec::new(),
            dispatchable_loads: Vec::new(),
            price_floor: DEFAULT_PRICE_FLOOR,
            price_ceiling: DEFAULT_PRICE_CEILING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub bus: usize,
    pub offer: f64,
    pub capacity_mw: f64,
    #[serde(default = "default_dmin")]
    pub delta_min_mw: f64,
    #[serde(default = "default_dmax")]
    pub delta_max_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub bus: usize,
    pub bid: f64,
    #[serde(default)]
    pub delta_min_mw: f64,
    #[serde(default)]
    pub delta_max_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    #[serde(default = "default_noise")]
    pub noise_std_pu: f64,
    /// Per-meter noise std overrides keyed by meter descriptor.
    #[serde(default)]
    pub noise_overrides: BTreeMap<String, f64>,
    #[serde(default)]
    pub suspects: Vec<Meter>,
}

impl Default for MeasurementSection {
    fn default() -> Self {
        Self {
            noise_std_pu: DEFAULT_NOISE_STD_PU,
            noise_overrides: BTreeMap::new(),
            suspects: Vec::new(),
        }
    }
}

/// State prior used by the Monte Carlo experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Std of each non-reference phase angle, rad.
    #[serde(default = "default_prior_std")]
    pub prior_std_rad: f64,
    /// Prior mean (non-reference phases, rad). `None` means: derive it from
    /// the day-ahead dispatch.
    #[serde(default)]
    pub prior_mean_rad: Option<Vec<f64>>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            prior_std_rad: 0.01,
            prior_mean_rad: None,
        }
    }
}

fn default_base() -> f64 {
    DEFAULT_BASE_MVA
}
fn yes() -> bool {
    true
}
fn default_floor() -> f64 {
    DEFAULT_PRICE_FLOOR
}
fn default_ceiling() -> f64 {
    DEFAULT_PRICE_CEILING
}
fn default_dmin() -> f64 {
    DEFAULT_DELTA_MIN_MW
}
fn default_dmax() -> f64 {
    DEFAULT_DELTA_MAX_MW
}
fn default_noise() -> f64 {
    DEFAULT_NOISE_STD_PU
}
fn default_prior_std() -> f64 {
    0.01
}

pub(crate) fn parse_native(text: &str) -> Result<CaseBundle> {
    let doc: CaseDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        field: "native case".into(),
        message: e.to_string(),
    })?;
    doc.into_bundle()
}

impl CaseDocument {
    pub fn into_bundle(self) -> Result<CaseBundle> {
        let branches = self
            .network
            .branches
            .into_iter()
            .map(|b| Branch {
                id: b.id,
                from: b.from,
                to: b.to,
                reactance: b.reactance,
                limit_mw: b.limit_mw,
                closed: b.closed,
            })
            .collect();
        let generators = self
            .market
            .generators
            .iter()
            .map(|g| Generator {
                bus: g.bus,
                offer: g.offer,
                capacity_mw: g.capacity_mw,
            })
            .collect();
        let loads = self
            .market
            .dispatchable_loads
            .iter()
            .map(|l| DispatchableLoad {
                bus: l.bus,
                bid: l.bid,
            })
            .collect();
        let case = PowerCase::new(
            self.name,
            self.network.base_mva,
            self.network.reference_bus,
            self.network.buses,
            branches,
            generators,
            loads,
        )?;
        let market = MarketConfig {
            generator_bounds: self
                .market
                .generators
                .iter()
                .map(|g| Bounds::new(g.delta_min_mw, g.delta_max_mw))
                .collect(),
            load_bounds: self
                .market
                .dispatchable_loads
                .iter()
                .map(|l| Bounds::new(l.delta_min_mw, l.delta_max_mw))
                .collect(),
            price_floor: self.market.price_floor,
            price_ceiling: self.market.price_ceiling,
        };
        market.validate(&case)?;

        let meters = canonical_meters(&case);
        let mut noise = vec![self.measurement.noise_std_pu; meters.len()];
        for (desc, std) in &self.measurement.noise_overrides {
            let m: Meter = desc.parse()?;
            let i = meters
                .iter()
                .position(|x| *x == m)
                .ok_or_else(|| Error::invalid(format!("noise override {desc}"), "no such meter"))?;
            noise[i] = *std;
        }
        let meters = build_measurement_model(
            &case,
            &NoiseSpec::PerMeter(noise),
            &SuspectSelector::Meters(self.measurement.suspects.clone()),
        )?
        .with_default_std(self.measurement.noise_std_pu);

        if let Some(mean) = &self.scenario.prior_mean_rad {
            if mean.len() != case.state_dim() {
                return Err(Error::Dimension {
                    what: "scenario.prior_mean_rad",
                    expected: case.state_dim(),
                    got: mean.len(),
                });
            }
        }
        if !(self.scenario.prior_std_rad >= 0.0) {
            return Err(Error::invalid(
                "scenario",
                "prior_std_rad must be nonnegative",
            ));
        }
        Ok(CaseBundle {
            case,
            meters,
            market,
            scenario: self.scenario,
        })
    }

    pub fn from_bundle(b: &CaseBundle) -> Self {
        let default_std = b.meters.default_std();
        let noise_overrides = b
            .meters
            .meters()
            .iter()
            .zip(b.meters.noise_std())
            .filter(|(_, s)| **s != default_std)
            .map(|(m, s)| (m.to_string(), *s))
            .collect();
        CaseDocument {
            name: b.case.name.clone(),
            network: NetworkSection {
                base_mva: b.case.base_mva,
                reference_bus: b.case.reference_bus,
                buses: b.case.buses.clone(),
                branches: b
                    .case
                    .branches
                    .iter()
                    .map(|br| BranchEntry {
                        id: br.id,
                        from: br.from,
                        to: br.to,
                        reactance: br.reactance,
                        limit_mw: br.limit_mw,
                        closed: br.closed,
                    })
                    .collect(),
            },
            market: MarketSection {
                generators: b
                    .case
                    .generators
                    .iter()
                    .zip(&b.market.generator_bounds)
                    .map(|(g, bd)| GeneratorEntry {
                        bus: g.bus,
                        offer: g.offer,
                        capacity_mw: g.capacity_mw,
                        delta_min_mw: bd.min,
                        delta_max_mw: bd.max,
                    })
                    .collect(),
                dispatchable_loads: b
                    .case
                    .dispatchable_loads
                    .iter()
                    .zip(&b.market.load_bounds)
                    .map(|(l, bd)| LoadEntry {
                        bus: l.bus,
                        bid: l.bid,
                        delta_min_mw: bd.min,
                        delta_max_mw: bd.max,
                    })
                    .collect(),
                price_floor: b.market.price_floor,
                price_ceiling: b.market.price_ceiling,
            },
            measurement: MeasurementSection {
                noise_std_pu: default_std,
                noise_overrides,
                suspects: b
                    .meters
                    .suspects()
                    .iter()
                    .map(|&i| b.meters.meters()[i])
                    .collect(),
            },
            scenario: b.scenario.clone(),
        }
    }
}
