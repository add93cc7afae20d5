//! Congestion patterns and the polyhedral price regions they define.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::network::DcModel;

/// Slack (MW) that turns the strict side `F_j x < T_j` into a closed set.
pub const STRICT_MARGIN_MW: f64 = 1e-6;
/// Flows within this distance (MW) of a limit count as at the limit.
pub const BOUNDARY_TOL_MW: f64 = 1e-9;
pub const DEFAULT_CANDIDATE_THRESHOLD_MW: f64 = 10.0;
pub const DEFAULT_CANDIDATE_CAP: usize = 12;

/// Set of congested branch ids, ordered lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CongestionPattern(BTreeSet<usize>);

impl CongestionPattern {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: impl IntoIterator<Item = usize>) -> Self {
        Self(ids.into_iter().collect())
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.contains(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &BTreeSet<usize> {
        &self.0
    }

    /// Copy with `id` toggled.
    pub fn flipped(&self, id: usize) -> Self {
        let mut s = self.0.clone();
        if !s.remove(&id) {
            s.insert(id);
        }
        Self(s)
    }
}

impl fmt::Display for CongestionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "}}")
    }
}

/// `C = {k limited : F_k x ≥ T_k}`.
pub fn region_of_state(model: &DcModel, x: &DVector<f64>) -> CongestionPattern {
    let flows = model.branch_flows(x).expect("state dimension");
    pattern_of_flows(model, flows.as_slice())
}

pub fn pattern_of_flows(model: &DcModel, flows_mw: &[f64]) -> CongestionPattern {
    CongestionPattern(
        model
            .limited()
            .filter(|&k| flows_mw[k] >= model.limit_mw(k).expect("limited") - BOUNDARY_TOL_MW)
            .map(|k| model.branch_ids()[k])
            .collect(),
    )
}

/// Smallest distance (MW) from a limited flow to its limit; infinite when
/// nothing is limited.
pub fn boundary_margin(model: &DcModel, x: &DVector<f64>) -> Result<f64> {
    let flows = model.branch_flows(x)?;
    Ok(model
        .limited()
        .map(|k| (flows[k] - model.limit_mw(k).expect("limited")).abs())
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRegion {
    pub pattern: CongestionPattern,
    pub witness: Option<Vec<f64>>,
    pub margin: Option<f64>,
    pub lmp: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionWitness {
    Nonempty { witness: DVector<f64>, margin: f64 },
    Empty,
}

impl RegionWitness {
    pub fn is_nonempty(&self) -> bool {
        matches!(self, RegionWitness::Nonempty { .. })
    }
}

/// Maximizes the uniform slack `β` of the region's halfspaces over
/// `x ∈ [−π, π]^n`. The region is nonempty iff `β* > 0`.
pub fn region_witness(model: &DcModel, pattern: &CongestionPattern) -> Result<RegionWitness> {
    for id in pattern.iter() {
        match model.branch_index(id) {
            Some(k) if model.limit_mw(k).is_some() => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "branch {id} is not a limited branch"
                )))
            }
        }
    }
    let n = model.state_dim();
    let base = model.base_mva();
    let f = model.flow_sensitivity();
    let pi = std::f64::consts::PI;
    // Caps β when no limited line bounds it.
    let beta_cap = 2.0 * pi * base * f.amax().max(1.0) * n.max(1) as f64;
    let mut lp = LinearProgram::new(n + 1);
    let mut c = vec![0.0; n + 1];
    c[n] = -1.0;
    lp.set_objective(c);
    for j in 0..n {
        lp.set_bounds(j, -pi, pi);
    }
    lp.set_bounds(n, f64::NEG_INFINITY, beta_cap);
    for k in model.limited().collect::<Vec<_>>() {
        let limit = model.limit_mw(k).expect("limited");
        let mut row: Vec<f64> = (0..n).map(|j| f[(k, j)] * base).collect();
        if pattern.contains(model.branch_ids()[k]) {
            row.push(-1.0);
            lp.add_row(row, Relation::Ge, limit);
        } else {
            row.push(1.0);
            lp.add_row(row, Relation::Le, limit - STRICT_MARGIN_MW);
        }
    }
    let sol = lp.minimize()?;
    let beta = sol.x[n];
    if beta > 0.0 {
        Ok(RegionWitness::Nonempty {
            witness: DVector::from_column_slice(&sol.x[..n]),
            margin: beta,
        })
    } else {
        Ok(RegionWitness::Empty)
    }
}

/// Limited lines whose flow is within `threshold` of the limit (at most
/// `cap`, nearest first, returned sorted by id) and the lines congested
/// beyond the threshold.
pub fn candidate_lines(
    model: &DcModel,
    flows_mw: &[f64],
    threshold: f64,
    cap: usize,
) -> (Vec<usize>, CongestionPattern) {
    let mut near: Vec<(f64, usize)> = Vec::new();
    let mut always = BTreeSet::new();
    for k in model.limited() {
        let gap = flows_mw[k] - model.limit_mw(k).expect("limited");
        let id = model.branch_ids()[k];
        if gap.abs() <= threshold {
            near.push((gap.abs(), id));
        } else if gap > threshold {
            always.insert(id);
        }
    }
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.truncate(cap);
    let mut ids: Vec<usize> = near.into_iter().map(|(_, id)| id).collect();
    ids.sort_unstable();
    (ids, CongestionPattern(always))
}

/// All subsets of the candidate lines joined with the always-congested
/// lines, in canonical order.
pub fn candidate_patterns(
    model: &DcModel,
    flows_mw: &[f64],
    threshold: f64,
    cap: usize,
) -> Result<Vec<CongestionPattern>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "candidate threshold must be positive, got {threshold}"
        )));
    }
    let (ids, always) = candidate_lines(model, flows_mw, threshold, cap);
    let mut out: Vec<CongestionPattern> = (0..1usize << ids.len())
        .map(|mask| {
            let mut s = always.0.clone();
            for (i, id) in ids.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s.insert(*id);
                }
            }
            CongestionPattern(s)
        })
        .collect();
    out.sort();
    Ok(out)
}
