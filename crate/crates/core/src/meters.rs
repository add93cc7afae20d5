//! Meter set, noise model and the suspect (corruptible) subset.
//!
//! The meter list is a pure function of the case: one injection meter per
//! bus in bus-id order, then a forward and a reverse flow meter per branch
//! in branch-id order. Open branches keep their meters so vectors stay
//! aligned when the topology changes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::case::PowerCase;
use crate::error::{Error, Result};

pub const DEFAULT_NOISE_STD_PU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Meter {
    /// Real power injection at a bus.
    Injection { bus: usize },
    /// Real power flow on a branch, measured at the `from` end (forward)
    /// or the `to` end (reverse).
    Flow { branch: usize, reverse: bool },
}

impl fmt::Display for Meter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Meter::Injection { bus } => write!(f, "inj:{bus}"),
            Meter::Flow {
                branch,
                reverse: false,
            } => write!(f, "flow:{branch}:fwd"),
            Meter::Flow {
                branch,
                reverse: true,
            } => write!(f, "flow:{branch}:rev"),
        }
    }
}

impl FromStr for Meter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad meter descriptor '{s}'"));
        let mut parts = s.trim().split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("inj"), Some(bus), None, None) => Ok(Meter::Injection {
                bus: bus.parse().map_err(|_| bad())?,
            }),
            (Some("flow"), Some(branch), Some(dir), None) => Ok(Meter::Flow {
                branch: branch.parse().map_err(|_| bad())?,
                reverse: match dir {
                    "fwd" => false,
                    "rev" => true,
                    _ => return Err(bad()),
                },
            }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Meter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Meter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Scalar(f64),
    PerMeter(Vec<f64>),
}

/// Which meters may be corrupted.
#[derive(Debug, Clone, PartialEq)]
pub enum SuspectSelector {
    None,
    All,
    Meters(Vec<Meter>),
    /// Both flow meters of each listed branch plus the injection meters at
    /// its two endpoints.
    Lines(Vec<usize>),
    /// Raw 0-based meter indices.
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeterConfig {
    meters: Vec<Meter>,
    noise_std: Vec<f64>,
    default_std: f64,
    suspects: Vec<usize>,
}

/// Canonical meter list of a case.
pub fn canonical_meters(case: &PowerCase) -> Vec<Meter> {
    let mut meters = Vec::with_capacity(case.bus_count() + 2 * case.branch_count());
    meters.extend(case.buses.iter().map(|b| Meter::Injection { bus: b.id }));
    for br in &case.branches {
        meters.push(Meter::Flow {
            branch: br.id,
            reverse: false,
        });
        meters.push(Meter::Flow {
            branch: br.id,
            reverse: true,
        });
    }
    meters
}

/// Builds the meter configuration: canonical meters, diagonal noise and the
/// suspect set.
pub fn build_measurement_model(
    case: &PowerCase,
    noise: &NoiseSpec,
    suspects: &SuspectSelector,
) -> Result<MeterConfig> {
    let meters = canonical_meters(case);
    if meters.is_empty() {
        return Err(Error::invalid("meter set", "empty"));
    }
    let (noise_std, default_std) = match noise {
        NoiseSpec::Scalar(s) => (vec![*s; meters.len()], *s),
        NoiseSpec::PerMeter(v) => {
            if v.len() != meters.len() {
                return Err(Error::Dimension {
                    what: "per-meter noise",
                    expected: meters.len(),
                    got: v.len(),
                });
            }
            (
                v.clone(),
                v.first().copied().unwrap_or(DEFAULT_NOISE_STD_PU),
            )
        }
    };
    if let Some(i) = noise_std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(
            format!("meter {}", meters[i]),
            format!("noise std {} must be positive", noise_std[i]),
        ));
    }
    let mut cfg = MeterConfig {
        meters,
        noise_std,
        default_std,
        suspects: Vec::new(),
    };
    cfg.suspects = cfg.select(case, suspects)?;
    Ok(cfg)
}

impl MeterConfig {
    pub(crate) fn with_default_std(mut self, s: f64) -> Self {
        self.default_std = s;
        self
    }

    /// Number of meters `m`.
    pub fn len(&self) -> usize {
        self.meters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meters.is_empty()
    }

    pub fn meters(&self) -> &[Meter] {
        &self.meters
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    pub fn default_std(&self) -> f64 {
        self.default_std
    }

    /// Diagonal of the noise covariance `R`.
    pub fn variances(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.noise_std.iter().map(|s| s * s))
    }

    /// Sorted 0-based indices of the suspect meters.
    pub fn suspects(&self) -> &[usize] {
        &self.suspects
    }

    pub fn suspect_space(&self) -> SuspectSpace {
        SuspectSpace::new(self.suspects.clone(), self.len())
            .expect("suspects validated at construction")
    }

    pub fn index_of(&self, meter: &Meter) -> Option<usize> {
        self.meters.iter().position(|m| m == meter)
    }

    /// Returns a copy with a different suspect set.
    pub fn with_suspects(&self, case: &PowerCase, sel: &SuspectSelector) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.suspects = self.select(case, sel)?;
        Ok(cfg)
    }

    /// Meter indices touching a branch: forward flow, reverse flow, and the
    /// injections at its from and to buses.
    pub fn line_meters(&self, case: &PowerCase, branch: usize) -> Result<LineMeters> {
        let br = case
            .branch(branch)
            .ok_or_else(|| Error::InvalidArgument(format!("branch {branch} does not exist")))?;
        let find = |m: Meter| {
            self.index_of(&m)
                .ok_or_else(|| Error::invalid(format!("meter {m}"), "not in meter set"))
        };
        Ok(LineMeters {
            forward: find(Meter::Flow {
                branch,
                reverse: false,
            })?,
            reverse: find(Meter::Flow {
                branch,
                reverse: true,
            })?,
            from_injection: find(Meter::Injection { bus: br.from })?,
            to_injection: find(Meter::Injection { bus: br.to })?,
        })
    }

    fn select(&self, case: &PowerCase, sel: &SuspectSelector) -> Result<Vec<usize>> {
        let mut out = BTreeSet::new();
        match sel {
            SuspectSelector::None => {}
            SuspectSelector::All => out.extend(0..self.len()),
            SuspectSelector::Meters(ms) => {
                for m in ms {
                    let i = self.index_of(m).ok_or_else(|| {
                        Error::invalid(format!("suspect meter {m}"), "not in meter set")
                    })?;
                    out.insert(i);
                }
            }
            SuspectSelector::Lines(lines) => {
                for &l in lines {
                    out.extend(self.line_meters(case, l)?.all());
                }
            }
            SuspectSelector::Indices(idx) => {
                for &i in idx {
                    if i >= self.len() {
                        return Err(Error::invalid(
                            "suspect set",
                            format!("index {i} out of range (m = {})", self.len()),
                        ));
                    }
                    out.insert(i);
                }
            }
        }
        Ok(out.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineMeters {
    pub forward: usize,
    pub reverse: usize,
    pub from_injection: usize,
    pub to_injection: usize,
}

impl LineMeters {
    pub fn all(&self) -> [usize; 4] {
        [
            self.forward,
            self.reverse,
            self.from_injection,
            self.to_injection,
        ]
    }
}

/// The subspace of attack vectors supported on the suspect meters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuspectSpace {
    indices: Vec<usize>,
    meter_count: usize,
}

impl SuspectSpace {
    pub fn new(mut indices: Vec<usize>, meter_count: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.iter().find(|&&i| i >= meter_count) {
            return Err(Error::invalid(
                "suspect set",
                format!("index {i} out of range (m = {meter_count})"),
            ));
        }
        Ok(Self {
            indices,
            meter_count,
        })
    }

    pub fn empty(meter_count: usize) -> Self {
        Self {
            indices: Vec::new(),
            meter_count,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Dimension `k = |S|`.
    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn meter_count(&self) -> usize {
        self.meter_count
    }

    pub fn contains(&self, meter: usize) -> bool {
        self.indices.binary_search(&meter).is_ok()
    }

    /// Embeds coordinates on `S` into a full `m`-vector.
    pub fn embed(&self, coords: &DVector<f64>) -> DVector<f64> {
        assert_eq!(coords.len(), self.dim());
        let mut a = DVector::zeros(self.meter_count);
        for (c, &i) in self.indices.iter().enumerate() {
            a[i] = coords[c];
        }
        a
    }

    pub fn union(&self, other: &SuspectSpace) -> SuspectSpace {
        let mut idx = self.indices.clone();
        idx.extend_from_slice(&other.indices);
        SuspectSpace::new(idx, self.meter_count.max(other.meter_count))
            .expect("union of valid spaces")
    }
}
