//! Worst-case meter-data attacks under the state-independent (M1),
//! partially adaptive (M2) and fully adaptive (M3) models.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{minimize, BarrierOptions, ConvexProgram};
use crate::error::{Error, Result};
use crate::estimation::EstimatorOperators;
use crate::geometry::{boundary_margin, region_of_state, CongestionPattern, STRICT_MARGIN_MW};
use crate::meters::SuspectSpace;
use crate::network::DcModel;
use crate::pricing::{relative_perturbation, PricingContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackModel {
    M1,
    M2,
    M3,
}

impl fmt::Display for AttackModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackModel::M1 => "m1",
            AttackModel::M2 => "m2",
            AttackModel::M3 => "m3",
        })
    }
}

impl FromStr for AttackModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(AttackModel::M1),
            "m2" => Ok(AttackModel::M2),
            "m3" => Ok(AttackModel::M3),
            _ => Err(Error::InvalidArgument(format!(
                "unknown attack model '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    Exhaustive,
    Greedy,
}

impl FromStr for SearchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exhaustive" => Ok(SearchMethod::Exhaustive),
            "greedy" => Ok(SearchMethod::Greedy),
            _ => Err(Error::InvalidArgument(format!(
                "unknown search method '{s}'"
            ))),
        }
    }
}

/// Gaussian prior on the state: mean and covariance (rad, rad²).
#[derive(Debug, Clone, PartialEq)]
pub struct StatePrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl StatePrior {
    pub fn isotropic(mean: DVector<f64>, std: f64) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::identity(n, n) * (std * std),
        }
    }
}

/// `E[x | z₀] = x₀ + Σ H₀ᵀ (H₀ Σ H₀ᵀ + R₀)⁻¹ (z₀ − H₀ x₀)`.
///
/// `r0` holds the noise variances of the observed meters; pass zeros for
/// the noiseless form.
pub fn mmse_state(
    prior: &StatePrior,
    h0: &DMatrix<f64>,
    z0: &DVector<f64>,
    r0: &DVector<f64>,
) -> Result<DVector<f64>> {
    if h0.nrows() == 0 {
        return Ok(prior.mean.clone());
    }
    if h0.ncols() != prior.mean.len() || z0.len() != h0.nrows() || r0.len() != h0.nrows() {
        return Err(Error::Dimension {
            what: "observation block",
            expected: h0.nrows(),
            got: z0.len(),
        });
    }
    let sh = &prior.cov * h0.transpose();
    let mut innov = h0 * &sh;
    for i in 0..innov.nrows() {
        innov[(i, i)] += r0[i];
    }
    let resid = z0 - h0 * &prior.mean;
    let w = innov
        .cholesky()
        .ok_or(Error::Singular("innovation covariance"))?
        .solve(&resid);
    Ok(&prior.mean + sh * w)
}

#[derive(Debug, Clone, Copy)]
pub struct AttackOptions {
    /// Per-meter bound on attack magnitude (p.u.), keeps the programs bounded.
    pub magnitude_cap: f64,
    /// Upper bound on the margin variable (MW).
    pub margin_cap: f64,
    pub barrier: BarrierOptions,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            magnitude_cap: 5.0,
            margin_cap: 1e4,
            barrier: BarrierOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterAttack {
    pub a: DVector<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct M3Attack {
    pub a: DVector<f64>,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterAttackPlan {
    pub model: AttackModel,
    pub a: Vec<f64>,
    pub target: CongestionPattern,
    pub margin: f64,
    pub budget: f64,
    pub predicted_arpp: f64,
    pub evaluations: usize,
}

/// What the adversary knows when designing the attack.
#[derive(Debug, Clone)]
pub enum AttackInput {
    /// Expected estimate without attack (M1: `x₀`; M2: `K E[z | z₀]`),
    /// with budget `ε` on `aᵀWa`.
    Expected {
        model: AttackModel,
        anchor: DVector<f64>,
        epsilon: f64,
    },
    /// Actual measurements with the detector threshold `τ`.
    Actual { z: DVector<f64>, tau: f64 },
}

/// Precomputed attack geometry for one model, estimator and suspect set.
#[derive(Debug)]
pub struct MeterAttacker<'a> {
    model: &'a DcModel,
    ops: &'a EstimatorOperators,
    suspects: SuspectSpace,
    limited: Vec<usize>,
    limits: Vec<f64>,
    /// MW of limited-line estimated flow per p.u. on each suspect meter.
    flow_gain: DMatrix<f64>,
    /// `SᵀWS`.
    q: DMatrix<f64>,
    opts: AttackOptions,
}

impl<'a> MeterAttacker<'a> {
    pub fn new(
        model: &'a DcModel,
        ops: &'a EstimatorOperators,
        suspects: SuspectSpace,
        opts: AttackOptions,
    ) -> Result<Self> {
        if suspects.meter_count() != model.meter_count() {
            return Err(Error::Dimension {
                what: "suspect space",
                expected: model.meter_count(),
                got: suspects.meter_count(),
            });
        }
        let limited: Vec<usize> = model.limited().collect();
        let limits = limited
            .iter()
            .map(|&k| model.limit_mw(k).expect("limited"))
            .collect();
        let k = suspects.dim();
        let ks = ops.gain().select_columns(suspects.indices());
        let f_lim = model.flow_sensitivity().select_rows(&limited);
        let flow_gain = f_lim * ks * model.base_mva();
        let mut q = DMatrix::zeros(k, k);
        for (c, &s) in suspects.indices().iter().enumerate() {
            let mut e = DVector::zeros(model.meter_count());
            e[s] = 1.0;
            let we = ops.kernel_apply(&e);
            for (r, &t) in suspects.indices().iter().enumerate() {
                q[(r, c)] = we[t];
            }
        }
        let q = (&q + q.transpose()) * 0.5;
        Ok(Self {
            model,
            ops,
            suspects,
            limited,
            limits,
            flow_gain,
            q,
            opts,
        })
    }

    pub fn suspects(&self) -> &SuspectSpace {
        &self.suspects
    }

    /// `SᵀWS` restricted to the suspect coordinates.
    pub fn budget_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn flow_gain(&self) -> &DMatrix<f64> {
        &self.flow_gain
    }

    fn limited_flows(&self, x: &DVector<f64>) -> DVector<f64> {
        let f = self.model.branch_flows(x).expect("state dimension");
        DVector::from_iterator(self.limited.len(), self.limited.iter().map(|&k| f[k]))
    }

    fn check_pattern(&self, pattern: &CongestionPattern) -> bool {
        pattern.iter().all(|id| {
            self.model
                .branch_index(id)
                .is_some_and(|k| self.limited.contains(&k))
        })
    }

    /// Pattern rows `G y (+ β) ≤ h` with sign chosen per side of each limit.
    fn pattern_rows(
        &self,
        f0: &DVector<f64>,
        pattern: &CongestionPattern,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let l = self.limited.len();
        let k = self.suspects.dim();
        let mut g = DMatrix::zeros(l, k);
        let mut h = DVector::zeros(l);
        for (r, &kb) in self.limited.iter().enumerate() {
            let id = self.model.branch_ids()[kb];
            if pattern.contains(id) {
                g.set_row(r, &(-self.flow_gain.row(r)));
                h[r] = f0[r] - self.limits[r];
            } else {
                g.set_row(r, &self.flow_gain.row(r));
                h[r] = self.limits[r] - STRICT_MARGIN_MW - f0[r];
            }
        }
        (g, h)
    }

    /// Maximizes `β` over `y = B u` subject to pattern rows with slack `β`,
    /// the magnitude box and an optional budget `uᵀQ_B u ≤ ε`.
    fn max_margin(
        &self,
        g: &DMatrix<f64>,
        h: &DVector<f64>,
        basis: &DMatrix<f64>,
        quad: Option<(DMatrix<f64>, f64)>,
    ) -> Result<(DVector<f64>, f64)> {
        let r = basis.ncols();
        let k = basis.nrows();
        let l = g.nrows();
        let beta0 = h.iter().copied().fold(f64::INFINITY, f64::min);
        if r == 0 {
            return Ok((DVector::zeros(k), beta0.min(self.opts.margin_cap)));
        }
        let start_beta = if beta0.is_finite() { beta0 - 1.0 } else { 0.0 };
        let cap = self.opts.margin_cap.max(start_beta + 1.0);
        let rows = l + 2 * k + 1;
        let mut a = DMatrix::zeros(rows, r + 1);
        let mut b = DVector::zeros(rows);
        let gb = g * basis;
        for i in 0..l {
            for j in 0..r {
                a[(i, j)] = gb[(i, j)];
            }
            a[(i, r)] = 1.0;
            b[i] = h[i];
        }
        for i in 0..k {
            for j in 0..r {
                a[(l + i, j)] = basis[(i, j)];
                a[(l + k + i, j)] = -basis[(i, j)];
            }
            b[l + i] = self.opts.magnitude_cap;
            b[l + k + i] = self.opts.magnitude_cap;
        }
        a[(rows - 1, r)] = 1.0;
        b[rows - 1] = cap;
        let mut c = DVector::zeros(r + 1);
        c[r] = -1.0;
        let quad = quad.map(|(qb, eps)| {
            let mut full = DMatrix::zeros(r + 1, r + 1);
            full.view_mut((0, 0), (r, r)).copy_from(&qb);
            (full, eps)
        });
        let prog = ConvexProgram {
            p: None,
            c,
            a,
            b,
            quad,
        };
        let mut start = DVector::zeros(r + 1);
        start[r] = start_beta;
        let sol = minimize(&prog, &start, &self.opts.barrier)?;
        let u = sol.v.rows(0, r).into_owned();
        Ok((basis * u, sol.v[r]))
    }

    /// Attack that centers the expected estimate `anchor + K a` in the
    /// region of `pattern` under `aᵀWa ≤ ε`; `None` when no admissible
    /// attack reaches the region.
    pub fn center_attack(
        &self,
        anchor: &DVector<f64>,
        pattern: &CongestionPattern,
        epsilon: f64,
    ) -> Result<Option<CenterAttack>> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "attack budget must be nonnegative, got {epsilon}"
            )));
        }
        if !self.check_pattern(pattern) {
            return Err(Error::InvalidArgument(format!(
                "pattern {pattern} names a branch without a flow limit"
            )));
        }
        let f0 = self.limited_flows(anchor);
        let (g, h) = self.pattern_rows(&f0, pattern);
        let k = self.suspects.dim();
        let (y, beta) = if epsilon == 0.0 || k == 0 {
            let basis = self.null_basis();
            self.max_margin(&g, &h, &basis, None)?
        } else {
            self.max_margin(
                &g,
                &h,
                &DMatrix::identity(k, k),
                Some((self.q.clone(), epsilon)),
            )?
        };
        if beta < 0.0 {
            return Ok(None);
        }
        Ok(Some(CenterAttack {
            a: self.suspects.embed(&y),
            margin: beta,
        }))
    }

    /// Orthonormal basis of the null space of `SᵀWS`.
    fn null_basis(&self) -> DMatrix<f64> {
        let k = self.q.nrows();
        if k == 0 {
            return DMatrix::zeros(0, 0);
        }
        let eig = self.q.clone().symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(1e-300);
        let cols: Vec<DVector<f64>> = (0..k)
            .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(k, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }

    /// Fully adaptive attack: any `a` on the suspects that puts the
    /// estimate from `z + a` in `pattern` with `(z+a)ᵀW(z+a) ≤ τ`.
    /// Minimizes the residual statistic over the region.
    pub fn m3_attack(
        &self,
        z: &DVector<f64>,
        pattern: &CongestionPattern,
        tau: f64,
    ) -> Result<Option<M3Attack>> {
        if !self.check_pattern(pattern) {
            return Err(Error::InvalidArgument(format!(
                "pattern {pattern} names a branch without a flow limit"
            )));
        }
        let j0 = self.ops.statistic(z);
        let x0 = self.ops.estimate_state(z);
        let f0 = self.limited_flows(&x0);
        let (g, h) = self.pattern_rows(&f0, pattern);
        let k = self.suspects.dim();
        if h.iter().all(|v| *v >= 0.0) && j0 <= tau {
            return Ok(Some(M3Attack {
                a: DVector::zeros(z.len()),
                statistic: j0,
            }));
        }
        if k == 0 {
            return Ok(None);
        }
        let (y1, beta) = self.max_margin(&g, &h, &DMatrix::identity(k, k), None)?;
        if beta <= 1e-9 {
            return Ok(None);
        }
        let wz = self.ops.kernel_apply(z);
        let wz_s = DVector::from_iterator(k, self.suspects.indices().iter().map(|&i| wz[i]));
        let l = g.nrows();
        let rows = l + 2 * k;
        let mut a = DMatrix::zeros(rows, k);
        let mut b = DVector::zeros(rows);
        a.view_mut((0, 0), (l, k)).copy_from(&g);
        b.rows_mut(0, l).copy_from(&h);
        for i in 0..k {
            a[(l + i, i)] = 1.0;
            a[(l + k + i, i)] = -1.0;
            b[l + i] = self.opts.magnitude_cap;
            b[l + k + i] = self.opts.magnitude_cap;
        }
        let prog = ConvexProgram {
            p: Some(&self.q * 2.0),
            c: wz_s * 2.0,
            a,
            b,
            quad: None,
        };
        let sol = minimize(&prog, &y1, &self.opts.barrier)?;
        let a_full = self.suspects.embed(&sol.v);
        let stat = self.ops.statistic(&(z + &a_full));
        if stat <= tau {
            Ok(Some(M3Attack {
                a: a_full,
                statistic: stat,
            }))
        } else {
            Ok(None)
        }
    }

    /// Searches the candidate patterns for the feasible attack with the
    /// largest predicted relative price perturbation.
    pub fn worst_attack(
        &self,
        pricing: &PricingContext,
        input: &AttackInput,
        candidates: &[CongestionPattern],
        search: SearchMethod,
    ) -> Result<MeterAttackPlan> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("no candidate patterns".into()));
        }
        let (tag, anchor, budget) = match input {
            AttackInput::Expected {
                model,
                anchor,
                epsilon,
            } => (*model, anchor.clone(), *epsilon),
            AttackInput::Actual { z, tau } => (AttackModel::M3, self.ops.estimate_state(z), *tau),
        };
        let anchor_pattern = region_of_state(self.model, &anchor);
        let zero_plan = |evaluations: usize| MeterAttackPlan {
            model: tag,
            a: vec![0.0; self.model.meter_count()],
            target: anchor_pattern.clone(),
            margin: boundary_margin(self.model, &anchor)
                .unwrap_or(0.0)
                .min(self.opts.margin_cap),
            budget,
            predicted_arpp: 0.0,
            evaluations,
        };
        let Some(base) = pricing.lmp(&anchor_pattern) else {
            return Ok(zero_plan(0));
        };

        let mut memo: BTreeMap<CongestionPattern, Option<(f64, DVector<f64>, f64)>> =
            BTreeMap::new();
        let mut evaluate =
            |pattern: &CongestionPattern| -> Result<Option<(f64, DVector<f64>, f64)>> {
                if let Some(hit) = memo.get(pattern) {
                    return Ok(hit.clone());
                }
                let attack = match input {
                    AttackInput::Expected { epsilon, .. } => self
                        .center_attack(&anchor, pattern, *epsilon)?
                        .map(|c| (c.a, c.margin)),
                    AttackInput::Actual { z, tau } => {
                        self.m3_attack(z, pattern, *tau)?.map(|m| (m.a, 0.0))
                    }
                };
                let out = match (attack, pricing.lmp(pattern)) {
                    (Some((a, margin)), Some(lmp)) => {
                        Some((relative_perturbation(&base.lmp, &lmp.lmp), a, margin))
                    }
                    _ => None,
                };
                memo.insert(pattern.clone(), out.clone());
                Ok(out)
            };

        let best: Option<(CongestionPattern, f64, DVector<f64>, f64)> = match search {
            SearchMethod::Exhaustive => {
                let mut sorted = candidates.to_vec();
                sorted.sort();
                sorted.dedup();
                let mut best: Option<(CongestionPattern, f64, DVector<f64>, f64)> = None;
                for p in &sorted {
                    if let Some((v, a, m)) = evaluate(p)? {
                        if best.as_ref().is_none_or(|b| v > b.1) {
                            best = Some((p.clone(), v, a, m));
                        }
                    }
                }
                best
            }
            SearchMethod::Greedy => {
                let mut all = std::collections::BTreeSet::new();
                let mut common = candidates[0].ids().clone();
                for p in candidates {
                    all.extend(p.iter());
                    common = common.intersection(p.ids()).copied().collect();
                }
                let lines: Vec<usize> = all.difference(&common).copied().collect();
                let mut current = CongestionPattern::from_ids(
                    common
                        .iter()
                        .copied()
                        .chain(anchor_pattern.iter().filter(|id| lines.contains(id))),
                );
                let mut current_best: Option<(CongestionPattern, f64, DVector<f64>, f64)> = None;
                let mut current_value = 0.0;
                loop {
                    let mut step: Option<(CongestionPattern, f64, DVector<f64>, f64)> = None;
                    for &id in &lines {
                        let cand = current.flipped(id);
                        if let Some((v, a, m)) = evaluate(&cand)? {
                            if v > current_value && step.as_ref().is_none_or(|s| v > s.1) {
                                step = Some((cand, v, a, m));
                            }
                        }
                    }
                    match step {
                        Some(s) => {
                            current = s.0.clone();
                            current_value = s.1;
                            current_best = Some(s);
                        }
                        None => break,
                    }
                }
                current_best
            }
        };
        let evaluations = memo.len();
        match best {
            Some((target, value, a, margin)) if value > 0.0 => Ok(MeterAttackPlan {
                model: tag,
                a: a.iter().copied().collect(),
                target,
                margin,
                budget,
                predicted_arpp: value,
                evaluations,
            }),
            _ => Ok(zero_plan(evaluations)),
        }
    }
}

/// Anchor for M2: `K E[z | z₀]` where unobserved meters are replaced by
/// their conditional mean `H E[x | z₀]`.
pub fn m2_anchor(
    model: &DcModel,
    ops: &EstimatorOperators,
    prior: &StatePrior,
    observed: &[usize],
    z: &DVector<f64>,
    noise_var: &DVector<f64>,
) -> Result<DVector<f64>> {
    let h = model.measurement_matrix();
    let h0 = h.select_rows(observed);
    let z0 = DVector::from_iterator(observed.len(), observed.iter().map(|&i| z[i]));
    let r0 = DVector::from_iterator(observed.len(), observed.iter().map(|&i| noise_var[i]));
    let x_cond = mmse_state(prior, &h0, &z0, &r0)?;
    let mut ez = h * &x_cond;
    for &i in observed {
        ez[i] = z[i];
    }
    Ok(ops.estimate_state(&ez))
}

/// Every other meter, starting with the first.
pub fn default_observed_set(meter_count: usize) -> Vec<usize> {
    (0..meter_count).step_by(2).collect()
}
