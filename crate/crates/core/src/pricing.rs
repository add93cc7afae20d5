//! Ex-post incremental dispatch, real-time LMPs and price-perturbation
//! metrics.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::case::{MarketConfig, PowerCase};
use crate::error::{Error, Result};
use crate::geometry::CongestionPattern;
use crate::lp::{LinearProgram, Relation};
use crate::network::DcModel;

/// Prices with `|λ| <` this are treated as zero when forming relative
/// perturbations.
pub const PRICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmpSolution {
    /// Incremental generation per generator (MW), case order.
    pub delta_p: Vec<f64>,
    /// Incremental dispatchable load per load (MW), case order.
    pub delta_d: Vec<f64>,
    /// Energy (balance) dual ($/MWh).
    pub eta: f64,
    /// Congestion duals by branch id ($/MWh), all ≥ 0.
    pub mu: BTreeMap<usize, f64>,
    /// Per-bus prices after clamping to the caps ($/MWh), bus order.
    pub lmp: Vec<f64>,
    /// Per-bus prices before clamping.
    pub lmp_raw: Vec<f64>,
    /// Incremental cost ($/h).
    pub objective: f64,
    pub degenerate: bool,
}

/// Solves the incremental dispatch LP for `pattern` and forms
/// `λ_i = η − Σ_k A_ki μ_k`.
pub fn solve_expost_lmp(
    case: &PowerCase,
    market: &MarketConfig,
    model: &DcModel,
    pattern: &CongestionPattern,
) -> Result<LmpSolution> {
    solve_expost_lmp_with_load(case, market, model, pattern, None)
}

/// As [`solve_expost_lmp`] with an extra per-bus load change (MW) pushed
/// through the balance and congested-line rows.
pub fn solve_expost_lmp_with_load(
    case: &PowerCase,
    market: &MarketConfig,
    model: &DcModel,
    pattern: &CongestionPattern,
    load_delta_mw: Option<&[f64]>,
) -> Result<LmpSolution> {
    let ng = case.generators.len();
    let nd = case.dispatchable_loads.len();
    if market.generator_bounds.len() != ng || market.load_bounds.len() != nd {
        return Err(Error::Dimension {
            what: "market bounds",
            expected: ng + nd,
            got: market.generator_bounds.len() + market.load_bounds.len(),
        });
    }
    if !market.generator_bounds.iter().any(|b| b.max > b.min) {
        return Err(Error::InvalidArgument(
            "no generator has a nonzero incremental range".into(),
        ));
    }
    let mut rows_k = Vec::with_capacity(pattern.len());
    for id in pattern.iter() {
        let k = model
            .branch_index(id)
            .ok_or_else(|| Error::InvalidArgument(format!("branch {id} does not exist")))?;
        if model.limit_mw(k).is_none() {
            return Err(Error::InvalidArgument(format!(
                "branch {id} has no flow limit and cannot be congested"
            )));
        }
        rows_k.push((id, k));
    }
    let nb = model.bus_count();
    let zeros = vec![0.0; nb];
    let delta = load_delta_mw.unwrap_or(&zeros);
    if delta.len() != nb {
        return Err(Error::Dimension {
            what: "load change vector",
            expected: nb,
            got: delta.len(),
        });
    }

    let gen_bus: Vec<usize> = case
        .generators
        .iter()
        .map(|g| case.bus_index(g.bus).expect("validated"))
        .collect();
    let load_bus: Vec<usize> = case
        .dispatchable_loads
        .iter()
        .map(|l| case.bus_index(l.bus).expect("validated"))
        .collect();

    let mut lp = LinearProgram::new(ng + nd);
    let mut c = Vec::with_capacity(ng + nd);
    c.extend(case.generators.iter().map(|g| g.offer));
    c.extend(case.dispatchable_loads.iter().map(|l| -l.bid));
    lp.set_objective(c);
    for (j, b) in market.generator_bounds.iter().enumerate() {
        lp.set_bounds(j, b.min, b.max);
    }
    for (j, b) in market.load_bounds.iter().enumerate() {
        lp.set_bounds(ng + j, b.min, b.max);
    }
    let mut balance = vec![1.0; ng];
    balance.extend(std::iter::repeat(-1.0).take(nd));
    lp.add_row(balance, Relation::Eq, delta.iter().sum());
    let ptdf = model.ptdf();
    for &(_, k) in &rows_k {
        let mut row = Vec::with_capacity(ng + nd);
        row.extend(gen_bus.iter().map(|&b| ptdf[(k, b)]));
        row.extend(load_bus.iter().map(|&b| -ptdf[(k, b)]));
        let rhs: f64 = (0..nb).map(|b| ptdf[(k, b)] * delta[b]).sum();
        lp.add_row(row, Relation::Le, rhs);
    }
    let sol = lp.minimize()?;

    let eta = sol.duals[0];
    let mut mu = BTreeMap::new();
    let mut lmp_raw = vec![eta; nb];
    for (r, &(id, k)) in rows_k.iter().enumerate() {
        let m = (-sol.duals[1 + r]).max(0.0);
        mu.insert(id, m);
        for (b, l) in lmp_raw.iter_mut().enumerate() {
            *l -= ptdf[(k, b)] * m;
        }
    }
    let lmp = lmp_raw.iter().map(|&l| market.clamp(l)).collect();
    Ok(LmpSolution {
        delta_p: sol.x[..ng].to_vec(),
        delta_d: sol.x[ng..].to_vec(),
        eta,
        mu,
        lmp,
        lmp_raw,
        objective: sol.objective,
        degenerate: sol.degenerate,
    })
}

/// Per-trial relative perturbation `mean_i |λ'_i − λ_i| / |λ_i|` over buses
/// with `|λ_i| ≥` [`PRICE_EPS`]; zero when no bus qualifies.
pub fn relative_perturbation(base: &[f64], perturbed: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (b, p) in base.iter().zip(perturbed) {
        if b.abs() >= PRICE_EPS {
            sum += (p - b).abs() / b.abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceMetrics {
    /// Per-bus RPP; `None` for excluded buses.
    pub rpp: Vec<Option<f64>>,
    pub arpp: f64,
    pub samples: usize,
    /// Bus indices whose base price was zero in every trial.
    pub excluded: Vec<usize>,
}

/// Streaming RPP sums; trials with a zero base price at a bus skip that bus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RppAccumulator {
    sum: Vec<f64>,
    count: Vec<usize>,
    samples: usize,
}

impl RppAccumulator {
    pub fn new(buses: usize) -> Self {
        Self {
            sum: vec![0.0; buses],
            count: vec![0; buses],
            samples: 0,
        }
    }

    pub fn add(&mut self, base: &[f64], perturbed: &[f64]) -> Result<()> {
        if base.len() != self.sum.len() || perturbed.len() != self.sum.len() {
            return Err(Error::Dimension {
                what: "price vector",
                expected: self.sum.len(),
                got: base.len().min(perturbed.len()),
            });
        }
        for i in 0..base.len() {
            if base[i].abs() >= PRICE_EPS {
                self.sum[i] += (perturbed[i] - base[i]).abs() / base[i].abs();
                self.count[i] += 1;
            }
        }
        self.samples += 1;
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn finish(&self) -> PriceMetrics {
        let mut rpp = Vec::with_capacity(self.sum.len());
        let mut excluded = Vec::new();
        for i in 0..self.sum.len() {
            if self.count[i] == 0 {
                rpp.push(None);
                excluded.push(i);
            } else {
                rpp.push(Some(self.sum[i] / self.count[i] as f64));
            }
        }
        let included: Vec<f64> = rpp.iter().flatten().copied().collect();
        let arpp = if included.is_empty() {
            0.0
        } else {
            included.iter().sum::<f64>() / included.len() as f64
        };
        PriceMetrics {
            rpp,
            arpp,
            samples: self.samples,
            excluded,
        }
    }
}

/// RPP per bus and ARPP over paired trials.
pub fn price_metrics(base: &[Vec<f64>], perturbed: &[Vec<f64>]) -> Result<PriceMetrics> {
    if base.is_empty() {
        return Err(Error::InvalidArgument("no trials".into()));
    }
    if base.len() != perturbed.len() {
        return Err(Error::Dimension {
            what: "trial count",
            expected: base.len(),
            got: perturbed.len(),
        });
    }
    let mut acc = RppAccumulator::new(base[0].len());
    for (b, p) in base.iter().zip(perturbed) {
        acc.add(b, p)?;
    }
    Ok(acc.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayAheadDispatch {
    pub generation_mw: Vec<f64>,
    pub injections_mw: Vec<f64>,
    pub flows_mw: Vec<f64>,
    /// Phase angles of the dispatch (rad, reference excluded).
    pub state: Vec<f64>,
    pub cost: f64,
}

/// Least-cost dispatch meeting the fixed loads within generator capacities
/// and both directions of every flow limit.
pub fn day_ahead_dispatch(case: &PowerCase, model: &DcModel) -> Result<DayAheadDispatch> {
    let ng = case.generators.len();
    let nb = case.bus_count();
    let mut lp = LinearProgram::new(ng);
    lp.set_objective(case.generators.iter().map(|g| g.offer).collect());
    for (j, g) in case.generators.iter().enumerate() {
        lp.set_bounds(j, 0.0, g.capacity_mw);
    }
    lp.add_row(vec![1.0; ng], Relation::Eq, case.total_load_mw());
    let gen_bus: Vec<usize> = case
        .generators
        .iter()
        .map(|g| case.bus_index(g.bus).expect("validated"))
        .collect();
    let ptdf = model.ptdf();
    for k in model.limited().collect::<Vec<_>>() {
        let limit = model.limit_mw(k).expect("limited");
        let row: Vec<f64> = gen_bus.iter().map(|&b| ptdf[(k, b)]).collect();
        let load_flow: f64 = case
            .buses
            .iter()
            .enumerate()
            .map(|(b, bus)| ptdf[(k, b)] * bus.load_mw)
            .sum();
        lp.add_row(row.clone(), Relation::Le, limit + load_flow);
        lp.add_row(row, Relation::Ge, -limit + load_flow);
    }
    let sol = lp.minimize()?;
    let mut inj: Vec<f64> = case.buses.iter().map(|b| -b.load_mw).collect();
    for (j, &b) in gen_bus.iter().enumerate() {
        inj[b] += sol.x[j];
    }
    let state = model.state_from_injections(&inj)?;
    let flows = model.branch_flows(&state)?;
    debug_assert_eq!(inj.len(), nb);
    Ok(DayAheadDispatch {
        generation_mw: sol.x,
        injections_mw: inj,
        flows_mw: flows.iter().copied().collect(),
        state: state.iter().copied().collect(),
        cost: sol.objective,
    })
}

/// Memoized ex-post prices per congestion pattern for one topology.
/// Patterns whose LP has no solution are cached as unpriced (`None`).
#[derive(Debug)]
pub struct PricingContext {
    case: Arc<PowerCase>,
    market: Arc<MarketConfig>,
    model: Arc<DcModel>,
    cache: RwLock<BTreeMap<CongestionPattern, Option<Arc<LmpSolution>>>>,
}

impl PricingContext {
    pub fn new(case: Arc<PowerCase>, market: Arc<MarketConfig>, model: Arc<DcModel>) -> Self {
        Self {
            case,
            market,
            model,
            cache: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn model(&self) -> &DcModel {
        &self.model
    }

    pub fn lmp(&self, pattern: &CongestionPattern) -> Option<Arc<LmpSolution>> {
        if let Some(hit) = self.cache.read().expect("cache lock").get(pattern) {
            return hit.clone();
        }
        let solved = solve_expost_lmp(&self.case, &self.market, &self.model, pattern)
            .ok()
            .map(Arc::new);
        self.cache
            .write()
            .expect("cache lock")
            .entry(pattern.clone())
            .or_insert(solved)
            .clone()
    }

    pub fn cached_patterns(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }
}

/// Injection vector (MW) implied by a state.
pub fn injections_of_state(model: &DcModel, x: &DVector<f64>) -> Result<Vec<f64>> {
    let z = model.measure(x)?;
    Ok(z.rows(0, model.bus_count())
        .iter()
        .map(|v| v * model.base_mva())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{ieee118, ieee14, t3};
    use crate::network::build_dc_model;
    use approx::assert_relative_eq;

    fn t3_setup() -> (PowerCase, MarketConfig, DcModel) {
        let b = t3();
        let model = build_dc_model(&b.case).unwrap();
        (b.case, b.market, model)
    }

    /// Vertex enumeration for a two-generator incremental LP with one
    /// balance row and optional congested rows: every vertex has the
    /// balance active plus one more active constraint.
    fn two_gen_oracle(
        offers: [f64; 2],
        bounds: [(f64, f64); 2],
        cong: &[([f64; 2], f64)],
        load: f64,
    ) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut candidates = vec![];
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            for v in [lo, hi] {
                let other = load - v;
                let p = if j == 0 { [v, other] } else { [other, v] };
                candidates.push(p);
            }
        }
        for (a, h) in cong {
            // a0 p0 + a1 p1 = h, p0 + p1 = load
            let det = a[0] - a[1];
            if det.abs() > 1e-12 {
                let p0 = (h - a[1] * load) / det;
                candidates.push([p0, load - p0]);
            }
        }
        for p in candidates {
            let ok = (0..2).all(|j| p[j] >= bounds[j].0 - 1e-9 && p[j] <= bounds[j].1 + 1e-9)
                && cong
                    .iter()
                    .all(|(a, h)| a[0] * p[0] + a[1] * p[1] <= h + 1e-9);
            if ok {
                let v = offers[0] * p[0] + offers[1] * p[1];
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        best
    }

    #[test]
    fn t3_uncongested_prices_flat() {
        let (case, market, model) = t3_setup();
        let s = solve_expost_lmp(&case, &market, &model, &CongestionPattern::empty()).unwrap();
        assert_relative_eq!(s.eta, 20.0, epsilon = 1e-9);
        for l in &s.lmp {
            assert_relative_eq!(*l, 20.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn t3_congested_against_vertex_oracle() {
        let (case, market, model) = t3_setup();
        let id = case.resolve_branch("1-3").unwrap();
        let k = model.branch_index(id).unwrap();
        let pat = CongestionPattern::from_ids([id]);
        let s = solve_expost_lmp(&case, &market, &model, &pat).unwrap();
        assert!(!s.degenerate);

        let offers = [10.0, 20.0];
        let bounds = [(-2.0, 0.1), (-2.0, 0.1)];
        let a = [model.ptdf()[(k, 0)], model.ptdf()[(k, 1)]];
        let h = 1e-3;
        let mut lam = [0.0; 3];
        for (bus, l) in lam.iter_mut().enumerate() {
            let hk = model.ptdf()[(k, bus)] * h;
            let up = two_gen_oracle(offers, bounds, &[(a, hk)], h).unwrap();
            let base = two_gen_oracle(offers, bounds, &[(a, 0.0)], 0.0).unwrap();
            *l = (up - base) / h;
        }
        for bus in 0..3 {
            assert_relative_eq!(s.lmp[bus], lam[bus], epsilon = 1e-6);
        }
        assert_relative_eq!(s.lmp[0], 10.0, epsilon = 1e-9);
        assert_relative_eq!(s.lmp[1], 20.0, epsilon = 1e-9);
        assert_relative_eq!(s.lmp[2], 30.0, epsilon = 1e-9);
        assert!(s.lmp[2] > s.lmp[0]);
        assert_relative_eq!(s.mu[&id], 30.0, epsilon = 1e-9);
    }

    #[test]
    fn ieee14_uncongested_eta_is_marginal_offer() {
        let b = ieee14();
        let model = build_dc_model(&b.case).unwrap();
        let s = solve_expost_lmp(&b.case, &b.market, &model, &CongestionPattern::empty()).unwrap();
        assert!([15.0, 31.0, 30.0, 10.0, 20.0]
            .iter()
            .any(|o| (o - s.eta).abs() < 1e-9));
        assert_relative_eq!(s.eta, 31.0, epsilon = 1e-9);
    }

    #[test]
    fn envelope_matches_lmp() {
        let b = ieee14();
        let model = build_dc_model(&b.case).unwrap();
        let limited: Vec<usize> = b.case.limited_branches().map(|br| br.id).collect();
        let mut checked = 0;
        for mask in 0..(1u32 << limited.len()) {
            let pat = CongestionPattern::from_ids(
                (0..limited.len())
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| limited[i]),
            );
            let Ok(s) = solve_expost_lmp(&b.case, &b.market, &model, &pat) else {
                continue;
            };
            if s.degenerate {
                continue;
            }
            for bus in 0..b.case.bus_count() {
                let mut d = vec![0.0; b.case.bus_count()];
                d[bus] = 1e-3;
                let up =
                    solve_expost_lmp_with_load(&b.case, &b.market, &model, &pat, Some(&d)).unwrap();
                let fd = (up.objective - s.objective) / 1e-3;
                let lam = s.lmp_raw[bus];
                assert!(
                    (fd - lam).abs() <= 0.01 * lam.abs().max(1e-9),
                    "pattern {pat} bus {bus}: {fd} vs {lam}"
                );
            }
            checked += 1;
        }
        assert!(checked >= 1);
    }

    #[test]
    fn generator_order_does_not_change_prices() {
        let b = ieee14();
        let model = build_dc_model(&b.case).unwrap();
        let pat = CongestionPattern::from_ids([b.case.resolve_branch("2-3").unwrap()]);
        let s1 = solve_expost_lmp(&b.case, &b.market, &model, &pat).unwrap();
        let mut case = b.case.clone();
        let mut market = b.market.clone();
        case.generators.reverse();
        market.generator_bounds.reverse();
        let s2 = solve_expost_lmp(&case, &market, &model, &pat).unwrap();
        for (a, c) in s1.lmp.iter().zip(&s2.lmp) {
            assert_relative_eq!(*a, *c, epsilon = 1e-9);
        }
    }

    #[test]
    fn unlimited_branch_in_pattern_rejected() {
        let (case, market, model) = t3_setup();
        let id = case.resolve_branch("1-2").unwrap();
        assert!(
            solve_expost_lmp(&case, &market, &model, &CongestionPattern::from_ids([id])).is_err()
        );
    }

    #[test]
    fn complementary_slackness() {
        let b = ieee14();
        let model = build_dc_model(&b.case).unwrap();
        let pat = CongestionPattern::from_ids([
            b.case.resolve_branch("2-3").unwrap(),
            b.case.resolve_branch("6-11").unwrap(),
        ]);
        let s = solve_expost_lmp(&b.case, &b.market, &model, &pat).unwrap();
        for (&id, &mu) in &s.mu {
            let k = model.branch_index(id).unwrap();
            let mut flow = 0.0;
            for (j, g) in b.case.generators.iter().enumerate() {
                flow += model.ptdf()[(k, b.case.bus_index(g.bus).unwrap())] * s.delta_p[j];
            }
            assert!(flow <= 1e-9);
            assert!(mu * flow.abs() < 1e-7);
        }
    }

    #[test]
    fn metrics_examples() {
        let m = price_metrics(&[vec![20.0, 10.0]], &[vec![20.0, 10.0]]).unwrap();
        assert_eq!(m.arpp, 0.0);
        let m = price_metrics(&[vec![20.0]], &[vec![30.0]]).unwrap();
        assert_relative_eq!(m.arpp, 0.5);
        let m = price_metrics(&[vec![0.0, 20.0]], &[vec![5.0, 30.0]]).unwrap();
        assert_eq!(m.excluded, vec![0]);
        assert_relative_eq!(m.arpp, 0.5);
        assert!(price_metrics(&[], &[]).is_err());
    }

    #[test]
    fn day_ahead_dispatch_respects_limits() {
        let b = t3();
        let model = build_dc_model(&b.case).unwrap();
        let d = day_ahead_dispatch(&b.case, &model).unwrap();
        assert_relative_eq!(d.generation_mw[0], 10.0, epsilon = 1e-9);
        assert_relative_eq!(d.generation_mw[1], 40.0, epsilon = 1e-9);
        let k = model
            .branch_index(b.case.resolve_branch("1-3").unwrap())
            .unwrap();
        assert_relative_eq!(d.flows_mw[k], 20.0, epsilon = 1e-9);

        for bundle in [ieee14(), ieee118()] {
            let model = build_dc_model(&bundle.case).unwrap();
            let d = day_ahead_dispatch(&bundle.case, &model).unwrap();
            for k in model.limited() {
                assert!(d.flows_mw[k].abs() <= model.limit_mw(k).unwrap() + 1e-6);
            }
            let total: f64 = d.generation_mw.iter().sum();
            assert_relative_eq!(total, bundle.case.total_load_mw(), epsilon = 1e-6);
        }
    }

    #[test]
    fn cache_reuses_solutions() {
        let b = t3();
        let model = Arc::new(build_dc_model(&b.case).unwrap());
        let ctx = PricingContext::new(Arc::new(b.case.clone()), Arc::new(b.market), model);
        let p = CongestionPattern::empty();
        let a = ctx.lmp(&p).unwrap();
        let c = ctx.lmp(&p).unwrap();
        assert!(Arc::ptr_eq(&a, &c));
        assert_eq!(ctx.cached_patterns(), 1);
    }
}
