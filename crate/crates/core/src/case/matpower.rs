//! Reader for the subset of the MATPOWER case format used by the IEEE test
//! systems: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and
//! (optionally) `mpc.gencost`. Market data missing from the matrices comes
//! from a JSON sidecar.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::native::{LoadEntry, MeasurementSection, ScenarioSection};
use super::{
    Bounds, Branch, Bus, CaseBundle, DispatchableLoad, Generator, MarketConfig, PowerCase,
    DEFAULT_DELTA_MAX_MW, DEFAULT_DELTA_MIN_MW, DEFAULT_PRICE_CEILING, DEFAULT_PRICE_FLOOR,
};
use crate::error::{Error, Result};
use crate::meters::{build_measurement_model, canonical_meters, Meter, NoiseSpec, SuspectSelector};

/// Market/measurement data that a MATPOWER file cannot carry.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatpowerSidecar {
    #[serde(default)]
    pub name: Option<String>,
    /// One entry per in-service generator row, in file order.
    #[serde(default)]
    pub generators: Option<Vec<SidecarGenerator>>,
    /// Limit overrides keyed by branch id or `i-j`; `null` clears a limit.
    #[serde(default)]
    pub limits_mw: BTreeMap<String, Option<f64>>,
    #[serde(default)]
    pub dispatchable_loads: Vec<LoadEntry>,
    #[serde(default)]
    pub price_floor: Option<f64>,
    #[serde(default)]
    pub price_ceiling: Option<f64>,
    #[serde(default)]
    pub measurement: Option<MeasurementSection>,
    #[serde(default)]
    pub scenario: Option<ScenarioSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarGenerator {
    pub offer: f64,
    #[serde(default)]
    pub capacity_mw: Option<f64>,
    #[serde(default)]
    pub delta_min_mw: Option<f64>,
    #[serde(default)]
    pub delta_max_mw: Option<f64>,
}

struct Matrix {
    rows: Vec<(usize, Vec<f64>)>,
}

impl Matrix {
    fn col(&self, field: &str, row: &(usize, Vec<f64>), c: usize) -> Result<f64> {
        row.1.get(c).copied().ok_or_else(|| Error::Parse {
            line: row.0,
            column: 0,
            field: field.to_string(),
            message: format!("row has {} columns, need at least {}", row.1.len(), c + 1),
        })
    }
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: 0,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Tokenizes the `mpc.<name> = ...;` assignments. Returns scalars and
/// matrices keyed by name, each row tagged with its 1-based source line.
fn scan(text: &str) -> Result<(BTreeMap<String, (usize, f64)>, BTreeMap<String, Matrix>)> {
    let mut scalars = BTreeMap::new();
    let mut matrices = BTreeMap::new();
    let mut current: Option<(String, Matrix)> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('%').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut body = line;
        if current.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some((name, rhs)) = rest.split_once('=') else {
                return Err(parse_err(line_no, rest, "expected '=' in assignment"));
            };
            let name = name.trim().to_string();
            let rhs = rhs.trim();
            if let Some(inner) = rhs.strip_prefix('[') {
                current = Some((name, Matrix { rows: Vec::new() }));
                body = inner;
            } else {
                let v = rhs.trim_end_matches(';').trim();
                if v.starts_with('\'') || v.starts_with('"') {
                    continue;
                }
                let val: f64 = v
                    .parse()
                    .map_err(|_| parse_err(line_no, &name, format!("bad scalar '{v}'")))?;
                scalars.insert(name, (line_no, val));
                continue;
            }
        }
        let (name, mat) = current.as_mut().expect("inside a matrix");
        let (content, closed) = match body.find(']') {
            Some(p) => (&body[..p], true),
            None => (body, false),
        };
        for row in content.split(';') {
            let vals: Vec<&str> = row
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .collect();
            if vals.is_empty() {
                continue;
            }
            let mut parsed = Vec::with_capacity(vals.len());
            for t in vals {
                let v = match t {
                    "Inf" | "inf" => f64::INFINITY,
                    "-Inf" | "-inf" => f64::NEG_INFINITY,
                    _ => t
                        .parse()
                        .map_err(|_| parse_err(line_no, name, format!("bad number '{t}'")))?,
                };
                parsed.push(v);
            }
            mat.rows.push((line_no, parsed));
        }
        if closed {
            let (name, mat) = current.take().expect("inside a matrix");
            matrices.insert(name, mat);
        }
    }
    if let Some((name, _)) = current {
        return Err(parse_err(
            text.lines().count(),
            &name,
            "unterminated matrix",
        ));
    }
    Ok((scalars, matrices))
}

fn as_id(v: f64, line: usize, field: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(parse_err(
            line,
            field,
            format!("expected a nonnegative integer, got {v}"),
        ))
    }
}

/// Parses MATPOWER text, with an optional JSON sidecar for offers, limit
/// overrides, incremental bounds, measurement and scenario settings.
pub fn parse_matpower(text: &str, sidecar: Option<&str>) -> Result<CaseBundle> {
    let sidecar: MatpowerSidecar = match sidecar {
        Some(s) => serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            field: "matpower sidecar".into(),
            message: e.to_string(),
        })?,
        None => MatpowerSidecar::default(),
    };
    let (scalars, matrices) = scan(text)?;
    let base_mva = scalars.get("baseMVA").map(|s| s.1).unwrap_or(100.0);
    let get = |name: &str| {
        matrices
            .get(name)
            .ok_or_else(|| parse_err(0, name, format!("missing mpc.{name}")))
    };

    let bus_m = get("bus")?;
    let mut buses = Vec::new();
    let mut refs = Vec::new();
    for row in &bus_m.rows {
        let id = as_id(bus_m.col("bus", row, 0)?, row.0, "bus")?;
        let kind = bus_m.col("bus", row, 1)?;
        if kind == 3.0 {
            refs.push(id);
        }
        buses.push(Bus {
            id,
            load_mw: bus_m.col("bus", row, 2)?,
        });
    }
    let reference_bus = match refs.as_slice() {
        [r] => *r,
        [] => return Err(Error::invalid("mpc.bus", "no reference bus (type 3)")),
        _ => {
            return Err(Error::invalid(
                "mpc.bus",
                format!("multiple reference buses {refs:?}"),
            ))
        }
    };

    let br_m = get("branch")?;
    let mut branches = Vec::new();
    for (k, row) in br_m.rows.iter().enumerate() {
        let rate = br_m.col("branch", row, 5)?;
        let status = row.1.get(10).copied().unwrap_or(1.0);
        branches.push(Branch {
            id: k + 1,
            from: as_id(br_m.col("branch", row, 0)?, row.0, "branch")?,
            to: as_id(br_m.col("branch", row, 1)?, row.0, "branch")?,
            reactance: br_m.col("branch", row, 3)?,
            limit_mw: (rate > 0.0).then_some(rate),
            closed: status > 0.0,
        });
    }

    let gen_m = get("gen")?;
    let cost_m = matrices.get("gencost");
    let mut generators = Vec::new();
    let mut bounds = Vec::new();
    let mut online = 0usize;
    for (g, row) in gen_m.rows.iter().enumerate() {
        let status = gen_m.col("gen", row, 7)?;
        if status <= 0.0 {
            continue;
        }
        let side = sidecar
            .generators
            .as_ref()
            .map(|v| {
                v.get(online).cloned().ok_or_else(|| {
                    Error::invalid(
                        "matpower sidecar",
                        format!("no generator entry for in-service generator {}", online + 1),
                    )
                })
            })
            .transpose()?;
        let offer = match (&side, cost_m) {
            (Some(s), _) => s.offer,
            (None, Some(cost)) => linear_offer(cost, g)?,
            (None, None) => {
                return Err(Error::invalid(
                    format!("generator row {}", g + 1),
                    "no offer: provide mpc.gencost or a sidecar",
                ))
            }
        };
        let capacity = side
            .as_ref()
            .and_then(|s| s.capacity_mw)
            .map(Ok)
            .unwrap_or_else(|| gen_m.col("gen", row, 8))?;
        generators.push(Generator {
            bus: as_id(gen_m.col("gen", row, 0)?, row.0, "gen")?,
            offer,
            capacity_mw: capacity,
        });
        bounds.push(Bounds::new(
            side.as_ref()
                .and_then(|s| s.delta_min_mw)
                .unwrap_or(DEFAULT_DELTA_MIN_MW),
            side.as_ref()
                .and_then(|s| s.delta_max_mw)
                .unwrap_or(DEFAULT_DELTA_MAX_MW),
        ));
        online += 1;
    }

    let loads: Vec<DispatchableLoad> = sidecar
        .dispatchable_loads
        .iter()
        .map(|l| DispatchableLoad {
            bus: l.bus,
            bid: l.bid,
        })
        .collect();
    let name = sidecar.name.clone().unwrap_or_else(|| "matpower".into());
    let mut case = PowerCase::new(
        name,
        base_mva,
        reference_bus,
        buses,
        branches,
        generators,
        loads,
    )?;
    for (label, limit) in &sidecar.limits_mw {
        let id = case.resolve_branch(label)?;
        let k = case.branch_index(id).expect("resolved branch");
        case.branches[k].limit_mw = *limit;
    }
    case.validate()?;

    let market = MarketConfig {
        generator_bounds: bounds,
        load_bounds: sidecar
            .dispatchable_loads
            .iter()
            .map(|l| Bounds::new(l.delta_min_mw, l.delta_max_mw))
            .collect(),
        price_floor: sidecar.price_floor.unwrap_or(DEFAULT_PRICE_FLOOR),
        price_ceiling: sidecar.price_ceiling.unwrap_or(DEFAULT_PRICE_CEILING),
    };
    market.validate(&case)?;

    let meas = sidecar.measurement.unwrap_or_default();
    let all = canonical_meters(&case);
    let mut noise = vec![meas.noise_std_pu; all.len()];
    for (desc, std) in &meas.noise_overrides {
        let m: Meter = desc.parse()?;
        let i = all
            .iter()
            .position(|x| *x == m)
            .ok_or_else(|| Error::invalid(format!("noise override {desc}"), "no such meter"))?;
        noise[i] = *std;
    }
    let meters = build_measurement_model(
        &case,
        &NoiseSpec::PerMeter(noise),
        &SuspectSelector::Meters(meas.suspects),
    )?
    .with_default_std(meas.noise_std_pu);

    Ok(CaseBundle {
        case,
        meters,
        market,
        scenario: sidecar.scenario.unwrap_or_default(),
    })
}

/// Marginal cost at zero output from a `gencost` row: the linear
/// coefficient of a polynomial, or the first segment slope of a
/// piecewise-linear curve.
fn linear_offer(cost: &Matrix, g: usize) -> Result<f64> {
    let row = cost
        .rows
        .get(g)
        .ok_or_else(|| Error::invalid("mpc.gencost", format!("no row for generator {}", g + 1)))?;
    let model = cost.col("gencost", row, 0)?;
    let n = as_id(cost.col("gencost", row, 3)?, row.0, "gencost")?;
    match model as i64 {
        2 => {
            if n < 2 {
                Ok(0.0)
            } else {
                // coefficients c(n-1) .. c0 start at column 4; c1 is second to last
                cost.col("gencost", row, 4 + n - 2)
            }
        }
        1 => {
            if n < 2 {
                return Err(parse_err(
                    row.0,
                    "gencost",
                    "piecewise curve needs 2 points",
                ));
            }
            let (x0, y0) = (cost.col("gencost", row, 4)?, cost.col("gencost", row, 5)?);
            let (x1, y1) = (cost.col("gencost", row, 6)?, cost.col("gencost", row, 7)?);
            Ok((y1 - y0) / (x1 - x0))
        }
        m => Err(parse_err(
            row.0,
            "gencost",
            format!("unknown cost model {m}"),
        )),
    }
}
