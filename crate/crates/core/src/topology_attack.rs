//! State-preserving line-removal attacks: breaker flips plus the sparse
//! meter edits that make the data consistent with the reduced topology.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::case::{MarketConfig, PowerCase};
use crate::error::{Error, Result};
use crate::estimation::{EstimateReport, Estimator};
use crate::geometry::CongestionPattern;
use crate::meters::{MeterConfig, SuspectSpace};
use crate::network::{apply_topology, build_dc_model};
use crate::pricing::{relative_perturbation, LmpSolution, PricingContext};

/// Meters and breakers the adversary controls.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackCapabilities {
    pub meters: SuspectSpace,
    pub breakers: BTreeSet<usize>,
}

impl AttackCapabilities {
    /// Full control over the meters and breaker of each listed line.
    pub fn for_lines(case: &PowerCase, meters: &MeterConfig, lines: &[usize]) -> Result<Self> {
        let mut idx = Vec::new();
        for &l in lines {
            idx.extend(meters.line_meters(case, l)?.all());
        }
        Ok(Self {
            meters: SuspectSpace::new(idx, meters.len())?,
            breakers: lines.iter().copied().collect(),
        })
    }

    pub fn none(meters: &MeterConfig) -> Self {
        Self {
            meters: SuspectSpace::empty(meters.len()),
            breakers: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub meters_accessible: bool,
    pub breakers_accessible: bool,
    pub connected: bool,
    pub observable: bool,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.meters_accessible && self.breakers_accessible && self.connected && self.observable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEvaluation {
    pub removed: Vec<usize>,
    pub pattern: Option<CongestionPattern>,
    /// `None` when either price vector is unavailable.
    pub perturbation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyAttackPlan {
    pub removed: Vec<usize>,
    /// Branch ids whose breaker status is flipped.
    pub breaker_flips: Vec<usize>,
    /// Sparse meter edits as `(meter index, delta)`.
    pub a: Vec<(usize, f64)>,
    pub feasibility: Feasibility,
    pub perturbation: Option<f64>,
    pub achieved_arpp: Option<f64>,
    pub targets: Vec<TargetEvaluation>,
}

impl TopologyAttackPlan {
    fn identity() -> Self {
        Self {
            removed: Vec::new(),
            breaker_flips: Vec::new(),
            a: Vec::new(),
            feasibility: Feasibility {
                meters_accessible: true,
                breakers_accessible: true,
                connected: true,
                observable: true,
            },
            perturbation: None,
            achieved_arpp: None,
            targets: Vec::new(),
        }
    }

    /// Dense attack vector of length `m`.
    pub fn dense_attack(&self, m: usize) -> DVector<f64> {
        let mut a = DVector::zeros(m);
        for &(i, v) in &self.a {
            a[i] += v;
        }
        a
    }

    pub fn removed_set(&self) -> BTreeSet<usize> {
        self.removed.iter().copied().collect()
    }
}

/// `m_(i,j)`: +1 at the forward flow and the from-bus injection, −1 at the
/// reverse flow and the to-bus injection.
pub fn incidence_column(
    case: &PowerCase,
    meters: &MeterConfig,
    branch: usize,
) -> Result<DVector<f64>> {
    let lm = meters.line_meters(case, branch)?;
    let mut m = DVector::zeros(meters.len());
    m[lm.forward] = 1.0;
    m[lm.from_injection] = 1.0;
    m[lm.reverse] = -1.0;
    m[lm.to_injection] = -1.0;
    Ok(m)
}

/// Feasibility of removing `removed` with the given capabilities.
pub fn check_target(
    case: &PowerCase,
    meters: &MeterConfig,
    removed: &BTreeSet<usize>,
    caps: &AttackCapabilities,
) -> Result<Feasibility> {
    let mut f = Feasibility {
        meters_accessible: true,
        breakers_accessible: true,
        connected: true,
        observable: true,
    };
    for &l in removed {
        let br = case
            .branch(l)
            .ok_or_else(|| Error::InvalidArgument(format!("branch {l} does not exist")))?;
        if !br.closed {
            return Err(Error::InvalidArgument(format!(
                "branch {l} is already open"
            )));
        }
        if !meters
            .line_meters(case, l)?
            .all()
            .iter()
            .all(|&i| caps.meters.contains(i))
        {
            f.meters_accessible = false;
        }
        if !caps.breakers.contains(&l) {
            f.breakers_accessible = false;
        }
    }
    if case.check_connected(removed).is_err() {
        f.connected = false;
        f.observable = false;
        return Ok(f);
    }
    let claimed = apply_topology(case, removed)?;
    f.observable = match build_dc_model(&claimed) {
        Ok(_) => true,
        Err(Error::Unobservable { .. }) => false,
        Err(e) => return Err(e),
    };
    Ok(f)
}

/// Builds `a = −Σ z_ij m_(i,j)` and the breaker flips for `removed`.
/// An infeasible target yields a plan with an empty `a` and the failing
/// checks recorded.
pub fn line_removal_attack(
    case: &PowerCase,
    meters: &MeterConfig,
    z: &DVector<f64>,
    removed: &BTreeSet<usize>,
    caps: &AttackCapabilities,
) -> Result<TopologyAttackPlan> {
    if z.len() != meters.len() {
        return Err(Error::Dimension {
            what: "measurement vector",
            expected: meters.len(),
            got: z.len(),
        });
    }
    let feasibility = check_target(case, meters, removed, caps)?;
    let mut plan = TopologyAttackPlan {
        removed: removed.iter().copied().collect(),
        feasibility,
        ..TopologyAttackPlan::identity()
    };
    if !feasibility.is_feasible() {
        return Ok(plan);
    }
    let mut a: BTreeMap<usize, f64> = BTreeMap::new();
    for &l in removed {
        let lm = meters.line_meters(case, l)?;
        let fwd = z[lm.forward];
        let rev = z[lm.reverse];
        *a.entry(lm.from_injection).or_default() -= fwd;
        *a.entry(lm.to_injection).or_default() -= rev;
        *a.entry(lm.forward).or_default() -= fwd;
        *a.entry(lm.reverse).or_default() -= rev;
    }
    plan.a = a.into_iter().collect();
    plan.breaker_flips = removed.iter().copied().collect();
    Ok(plan)
}

/// Every subset of at most `max_removals` closed lines that passes all
/// feasibility checks, ordered by size and then lexicographically.
pub fn feasible_targets(
    case: &PowerCase,
    meters: &MeterConfig,
    caps: &AttackCapabilities,
    max_removals: usize,
) -> Result<Vec<BTreeSet<usize>>> {
    if max_removals == 0 {
        return Err(Error::InvalidArgument(
            "max_removals must be at least 1".into(),
        ));
    }
    // Only lines whose breaker and four meters are all accessible can appear.
    let usable: Vec<usize> = case
        .closed_branches()
        .map(|b| b.id)
        .filter(|&l| {
            caps.breakers.contains(&l)
                && meters
                    .line_meters(case, l)
                    .map(|lm| lm.all().iter().all(|&i| caps.meters.contains(i)))
                    .unwrap_or(false)
        })
        .collect();
    let mut out = Vec::new();
    for size in 1..=max_removals.min(usable.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let set: BTreeSet<usize> = idx.iter().map(|&i| usable[i]).collect();
            if check_target(case, meters, &set, caps)?.is_feasible() {
                out.push(set);
            }
            // next combination
            let mut i = size;
            while i > 0 && idx[i - 1] == usable.len() - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Estimator and price cache for one claimed topology.
#[derive(Debug)]
pub struct TopologyView {
    pub case: Arc<PowerCase>,
    pub estimator: Estimator,
    pub pricing: PricingContext,
}

impl TopologyView {
    pub fn estimate(&self, z: &DVector<f64>) -> Result<EstimateReport> {
        self.estimator.estimate(z)
    }

    pub fn lmp(&self, pattern: &CongestionPattern) -> Option<Arc<LmpSolution>> {
        self.pricing.lmp(pattern)
    }
}

/// Shared cache of [`TopologyView`]s keyed by the removed-line set.
#[derive(Debug)]
pub struct TopologyCache {
    case: Arc<PowerCase>,
    market: Arc<MarketConfig>,
    meters: MeterConfig,
    alpha: f64,
    views: RwLock<BTreeMap<BTreeSet<usize>, Arc<TopologyView>>>,
}

impl TopologyCache {
    pub fn new(
        case: Arc<PowerCase>,
        market: Arc<MarketConfig>,
        meters: MeterConfig,
        alpha: f64,
    ) -> Self {
        Self {
            case,
            market,
            meters,
            alpha,
            views: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn case(&self) -> &PowerCase {
        &self.case
    }

    pub fn meters(&self) -> &MeterConfig {
        &self.meters
    }

    pub fn view(&self, removed: &BTreeSet<usize>) -> Result<Arc<TopologyView>> {
        if let Some(v) = self.views.read().expect("cache lock").get(removed) {
            return Ok(Arc::clone(v));
        }
        let claimed = Arc::new(apply_topology(&self.case, removed)?);
        let model = Arc::new(build_dc_model(&claimed)?);
        let estimator = Estimator::new(Arc::clone(&model), &self.meters, self.alpha)?;
        let pricing = PricingContext::new(Arc::clone(&claimed), Arc::clone(&self.market), model);
        let view = Arc::new(TopologyView {
            case: claimed,
            estimator,
            pricing,
        });
        Ok(Arc::clone(
            self.views
                .write()
                .expect("cache lock")
                .entry(removed.clone())
                .or_insert(view),
        ))
    }

    pub fn len(&self) -> usize {
        self.views.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs every feasible target through estimation and pricing and returns
/// the one with the largest relative price perturbation against the
/// unattacked prices of the same snapshot. Ties keep the earlier target.
pub fn worst_topology_attack(
    cache: &TopologyCache,
    z: &DVector<f64>,
    caps: &AttackCapabilities,
    max_removals: usize,
) -> Result<TopologyAttackPlan> {
    let case = cache.case();
    let meters = cache.meters();
    let base_view = cache.view(&BTreeSet::new())?;
    let base = base_view.estimate(z)?;
    let base_lmp = base_view.lmp(&base.pattern);
    let targets = feasible_targets(case, meters, caps, max_removals)?;
    let mut table = Vec::with_capacity(targets.len());
    let mut best: Option<(f64, TopologyAttackPlan)> = None;
    for removed in &targets {
        let plan = line_removal_attack(case, meters, z, removed, caps)?;
        let za = z + plan.dense_attack(z.len());
        let view = cache.view(removed)?;
        let report = view.estimate(&za)?;
        let lmp = view.lmp(&report.pattern);
        let perturbation = match (&base_lmp, &lmp) {
            (Some(b), Some(p)) => Some(relative_perturbation(&b.lmp, &p.lmp)),
            _ => None,
        };
        table.push(TargetEvaluation {
            removed: plan.removed.clone(),
            pattern: Some(report.pattern.clone()),
            perturbation,
        });
        if let Some(v) = perturbation {
            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, plan));
            }
        }
    }
    let mut plan = match best {
        Some((v, mut p)) => {
            p.perturbation = Some(v);
            p
        }
        None => TopologyAttackPlan::identity(),
    };
    plan.targets = table;
    Ok(plan)
}
