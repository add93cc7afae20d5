//! Seeded Monte Carlo engine: per-trial state and noise draws, attack
//! construction, estimation, detection and paired price comparison.

mod config;
mod output;

pub use config::{AttackSpec, PipelineModel, ScenarioConfig};
pub use output::{write_curve_csv, write_outputs, write_trials_csv};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ac::AcModel;
use crate::case::{load_case_ref, CaseBundle, PowerCase};
use crate::error::{Error, Result};
use crate::estimation::{DetectorConfig, EstimatorOperators};
use crate::geometry::{candidate_patterns, CongestionPattern};
use crate::meter_attack::{
    default_observed_set, m2_anchor, AttackInput, AttackModel, AttackOptions, MeterAttackPlan,
    MeterAttacker, SearchMethod, StatePrior,
};
use crate::meters::SuspectSpace;
use crate::network::DcModel;
use crate::pricing::{day_ahead_dispatch, relative_perturbation, LmpSolution, RppAccumulator};
use crate::topology_attack::{
    worst_topology_attack, AttackCapabilities, TopologyAttackPlan, TopologyCache,
};

/// One budget point of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: Option<f64>,
    pub trials: usize,
    pub failures: usize,
    pub detected: usize,
    pub detection_probability: f64,
    /// Undetected trials with prices on both sides.
    pub priced: usize,
    pub arpp: f64,
    /// Per-bus RPP in bus order; `None` for excluded buses.
    pub rpp: Vec<Option<f64>>,
    /// Ids of buses whose base price was zero in every priced trial.
    pub excluded_buses: Vec<usize>,
    pub mean_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: ScenarioConfig,
    pub case_name: String,
    pub dof: usize,
    pub threshold: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub budget: Option<f64>,
    pub lines: Vec<usize>,
    pub detected: bool,
    pub statistic: f64,
    pub target: String,
    pub estimated_pattern: String,
    /// Relative price perturbation of this trial, when it counts toward ARPP.
    pub rpp: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub count: usize,
    pub mean_s: f64,
    pub std_s: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            count: n,
            mean_s: mean,
            std_s: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub total_s: f64,
    pub attack_search: TimingStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub result: ExperimentResult,
    pub trials: Vec<TrialRecord>,
    pub timing: TimingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttackPlan {
    Meter(MeterAttackPlan),
    Topology(TopologyAttackPlan),
}

/// The attack designed against one snapshot and what the operator sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotAttack {
    pub budget: Option<f64>,
    pub plan: Option<AttackPlan>,
    pub detected: bool,
    pub statistic: f64,
    pub estimated_pattern: CongestionPattern,
    pub base_pattern: CongestionPattern,
    /// Bus-averaged relative price change, when both sides are priced.
    pub rpp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotReport {
    pub case_name: String,
    pub seed: u64,
    pub trial: u64,
    pub lines: Vec<usize>,
    pub z: Vec<f64>,
    pub attacks: Vec<SnapshotAttack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchComparison {
    pub scenario: ScenarioConfig,
    pub trials: usize,
    /// Fraction of trials where the greedy pattern attains the exhaustive
    /// optimum. Ties are common (distinct patterns with identical prices),
    /// so the worst pattern is a set rather than a single element.
    pub agreement: f64,
    /// Fraction of trials where both searches return the same pattern.
    pub exact_agreement: f64,
    pub exhaustive: TimingStats,
    pub greedy: TimingStats,
    pub mean_exhaustive_evaluations: f64,
    pub mean_greedy_evaluations: f64,
    pub mean_candidates: f64,
}

/// Everything shared by the trials of one scenario.
struct Experiment {
    cfg: ScenarioConfig,
    bundle: CaseBundle,
    model: Arc<DcModel>,
    ops: Arc<EstimatorOperators>,
    detector: DetectorConfig,
    x0: DVector<f64>,
    prior: StatePrior,
    topo: TopologyCache,
    ac: RwLock<BTreeMap<BTreeSet<usize>, Arc<AcModel>>>,
    /// M1 plans only depend on the line set and budget.
    m1_plans: Mutex<BTreeMap<(Vec<usize>, u64), Arc<MeterAttackPlan>>>,
    closed_lines: Vec<usize>,
}

struct Draw {
    lines: Vec<usize>,
    vm: Vec<f64>,
    z: DVector<f64>,
}

/// Estimation outcome for one measurement vector.
struct Observed {
    detected: bool,
    statistic: f64,
    pattern: CongestionPattern,
    lmp: Option<Arc<LmpSolution>>,
}

impl Experiment {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let bundle = load_case_ref(&cfg.case)?;
        let case = Arc::new(bundle.case.clone());
        let market = Arc::new(bundle.market.clone());
        let topo = TopologyCache::new(Arc::clone(&case), market, bundle.meters.clone(), cfg.alpha);
        let base = topo.view(&BTreeSet::new())?;
        let model = Arc::new(base.estimator.model().clone());
        let ops = Arc::new(EstimatorOperators::new(&model, bundle.meters.noise_std())?);
        let detector = *base.estimator.detector();
        let x0 = match &bundle.scenario.prior_mean_rad {
            Some(m) => {
                if m.len() != model.state_dim() {
                    return Err(Error::Dimension {
                        what: "prior mean",
                        expected: model.state_dim(),
                        got: m.len(),
                    });
                }
                DVector::from_column_slice(m)
            }
            None => DVector::from_vec(day_ahead_dispatch(&case, &model)?.state),
        };
        let std = cfg.prior_std_rad.unwrap_or(bundle.scenario.prior_std_rad);
        let prior = StatePrior::isotropic(x0.clone(), std);
        let closed_lines = case.closed_branches().map(|b| b.id).collect();
        if let AttackSpec::Meter { lines: Some(l), .. }
        | AttackSpec::Topology { lines: Some(l), .. } = &cfg.attack
        {
            for id in l {
                if case.branch(*id).is_none_or(|b| !b.closed) {
                    return Err(Error::invalid(
                        "scenario",
                        format!("line {id} is not a closed branch"),
                    ));
                }
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            bundle,
            model,
            ops,
            detector,
            x0,
            prior,
            topo,
            ac: RwLock::new(BTreeMap::new()),
            m1_plans: Mutex::new(BTreeMap::new()),
            closed_lines,
        })
    }

    fn case(&self) -> &PowerCase {
        &self.bundle.case
    }

    fn budgets(&self) -> Vec<Option<f64>> {
        match &self.cfg.attack {
            AttackSpec::Meter { budgets, model, .. } => {
                if budgets.is_empty() && *model == AttackModel::M3 {
                    vec![Some(self.detector.threshold)]
                } else {
                    budgets.iter().map(|b| Some(*b)).collect()
                }
            }
            _ => vec![None],
        }
    }

    fn ac_model(&self, removed: &BTreeSet<usize>) -> Result<Arc<AcModel>> {
        if let Some(m) = self.ac.read().expect("cache lock").get(removed) {
            return Ok(Arc::clone(m));
        }
        let claimed = self.topo.view(removed)?;
        let m = Arc::new(AcModel::new(&claimed.case)?);
        Ok(Arc::clone(
            self.ac
                .write()
                .expect("cache lock")
                .entry(removed.clone())
                .or_insert(m),
        ))
    }

    fn draw(&self, trial: u64) -> Result<Draw> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(trial);
        let lines = match &self.cfg.attack {
            AttackSpec::None => Vec::new(),
            AttackSpec::Meter { lines: Some(l), .. }
            | AttackSpec::Topology { lines: Some(l), .. } => {
                let mut l = l.clone();
                l.sort_unstable();
                l.dedup();
                l
            }
            AttackSpec::Meter {
                lines_per_trial, ..
            }
            | AttackSpec::Topology {
                lines_per_trial, ..
            } => {
                let k = (*lines_per_trial).min(self.closed_lines.len());
                let mut l: Vec<usize> = sample(&mut rng, self.closed_lines.len(), k)
                    .into_iter()
                    .map(|i| self.closed_lines[i])
                    .collect();
                l.sort_unstable();
                l
            }
        };
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let std = self.prior.cov[(0, 0)].sqrt();
        let n = self.model.state_dim();
        let x = DVector::from_fn(n, |i, _| self.x0[i] + std * normal());
        let vm: Vec<f64> = (0..self.model.bus_count())
            .map(|_| 1.0 + self.cfg.magnitude_std * normal())
            .collect();
        let noise = self.bundle.meters.noise_std();
        let w = DVector::from_fn(noise.len(), |i, _| noise[i] * normal());
        let clean = match self.cfg.model {
            PipelineModel::Dc => self.model.measure(&x)?,
            PipelineModel::Ac => self.ac_model(&BTreeSet::new())?.measure(&x, &vm),
        };
        Ok(Draw {
            lines,
            vm,
            z: clean + w,
        })
    }

    /// Estimation, detection and pricing of `z` under the claimed topology.
    fn observe(&self, z: &DVector<f64>, removed: &BTreeSet<usize>, vm: &[f64]) -> Result<Observed> {
        let view = self.topo.view(removed)?;
        match self.cfg.model {
            PipelineModel::Dc => {
                let r = view.estimate(z)?;
                Ok(Observed {
                    detected: r.detected,
                    statistic: r.statistic,
                    lmp: view.lmp(&r.pattern),
                    pattern: r.pattern,
                })
            }
            PipelineModel::Ac => {
                let ac = self.ac_model(removed)?;
                match ac.estimate(z, self.bundle.meters.noise_std(), vm, self.cfg.alpha) {
                    Ok(r) => Ok(Observed {
                        detected: r.detected,
                        statistic: r.statistic,
                        lmp: view.lmp(&r.pattern),
                        pattern: r.pattern,
                    }),
                    // A diverging estimator rejects the snapshot.
                    Err(Error::NotConverged { .. }) => Ok(Observed {
                        detected: true,
                        statistic: f64::INFINITY,
                        pattern: CongestionPattern::empty(),
                        lmp: None,
                    }),
                    Err(e) => Err(e),
                }
            }
        }
    }

    fn suspects(&self, lines: &[usize]) -> Result<SuspectSpace> {
        let mut idx = Vec::new();
        for &l in lines {
            idx.extend(self.bundle.meters.line_meters(self.case(), l)?.all());
        }
        SuspectSpace::new(idx, self.bundle.meters.len())
    }

    /// Anchor state and candidate patterns the attacker works from.
    fn meter_setup(
        &self,
        tag: AttackModel,
        z: &DVector<f64>,
        budget: f64,
    ) -> Result<(AttackInput, Vec<CongestionPattern>)> {
        let (input, anchor) = match tag {
            AttackModel::M1 => (
                AttackInput::Expected {
                    model: tag,
                    anchor: self.x0.clone(),
                    epsilon: budget,
                },
                self.x0.clone(),
            ),
            AttackModel::M2 => {
                let observed = default_observed_set(self.bundle.meters.len());
                let anchor = m2_anchor(
                    &self.model,
                    &self.ops,
                    &self.prior,
                    &observed,
                    z,
                    &self.bundle.meters.variances(),
                )?;
                (
                    AttackInput::Expected {
                        model: tag,
                        anchor: anchor.clone(),
                        epsilon: budget,
                    },
                    anchor,
                )
            }
            AttackModel::M3 => (
                AttackInput::Actual {
                    z: z.clone(),
                    tau: budget,
                },
                self.ops.estimate_state(z),
            ),
        };
        let flows = self.model.branch_flows(&anchor)?;
        let cands = candidate_patterns(
            &self.model,
            flows.as_slice(),
            self.cfg.candidate_threshold_mw,
            self.cfg.candidate_cap,
        )?;
        Ok((input, cands))
    }

    fn meter_plan(
        &self,
        tag: AttackModel,
        search: SearchMethod,
        lines: &[usize],
        z: &DVector<f64>,
        budget: f64,
    ) -> Result<Arc<MeterAttackPlan>> {
        let key = (lines.to_vec(), budget.to_bits());
        if tag == AttackModel::M1 {
            if let Some(p) = self.m1_plans.lock().expect("plan lock").get(&key) {
                return Ok(Arc::clone(p));
            }
        }
        let attacker = MeterAttacker::new(
            &self.model,
            &self.ops,
            self.suspects(lines)?,
            AttackOptions::default(),
        )?;
        let base = self.topo.view(&BTreeSet::new())?;
        let (input, cands) = self.meter_setup(tag, z, budget)?;
        let plan = Arc::new(attacker.worst_attack(&base.pricing, &input, &cands, search)?);
        if tag == AttackModel::M1 {
            self.m1_plans
                .lock()
                .expect("plan lock")
                .entry(key)
                .or_insert_with(|| Arc::clone(&plan));
        }
        Ok(plan)
    }

    /// Runs one trial at every budget point. Returns the records and the
    /// attack search times.
    fn trial(&self, trial: u64) -> (Vec<Outcome>, Vec<f64>) {
        let budgets = self.budgets();
        let draw = match self.draw(trial) {
            Ok(d) => d,
            Err(e) => {
                return (
                    budgets.iter().map(|b| failed(trial, *b, &[], &e)).collect(),
                    Vec::new(),
                )
            }
        };
        let base = match self.observe(&draw.z, &BTreeSet::new(), &draw.vm) {
            Ok(b) => b,
            Err(e) => {
                return (
                    budgets
                        .iter()
                        .map(|b| failed(trial, *b, &draw.lines, &e))
                        .collect(),
                    Vec::new(),
                )
            }
        };
        let mut times = Vec::new();
        let mut out = Vec::with_capacity(budgets.len());
        for budget in budgets {
            let start = Instant::now();
            let attack = self.attack(&draw, budget);
            times.push(start.elapsed().as_secs_f64());
            let rec = attack.and_then(|(a, removed, target)| {
                let za = &draw.z + a;
                let obs = self.observe(&za, &removed, &draw.vm)?;
                let prices = match (&base.lmp, &obs.lmp, obs.detected) {
                    (Some(b), Some(p), false) => Some((Arc::clone(b), Arc::clone(p))),
                    _ => None,
                };
                let rpp = prices
                    .as_ref()
                    .map(|(b, p)| relative_perturbation(&b.lmp, &p.lmp));
                let record = TrialRecord {
                    trial,
                    budget,
                    lines: draw.lines.clone(),
                    detected: obs.detected,
                    statistic: obs.statistic,
                    target,
                    estimated_pattern: obs.pattern.to_string(),
                    rpp,
                    error: if !obs.detected && obs.lmp.is_none() {
                        Some("attacked pattern is unpriced".into())
                    } else if base.lmp.is_none() {
                        Some("base pattern is unpriced".into())
                    } else {
                        None
                    },
                };
                Ok(Outcome { record, prices })
            });
            out.push(rec.unwrap_or_else(|e| failed(trial, budget, &draw.lines, &e)));
        }
        (out, times)
    }

    fn plan(&self, draw: &Draw, budget: Option<f64>) -> Result<Option<AttackPlan>> {
        match &self.cfg.attack {
            AttackSpec::None => Ok(None),
            AttackSpec::Meter { model, search, .. } => {
                let plan = self.meter_plan(
                    *model,
                    *search,
                    &draw.lines,
                    &draw.z,
                    budget.expect("meter budget"),
                )?;
                Ok(Some(AttackPlan::Meter((*plan).clone())))
            }
            AttackSpec::Topology { max_removals, .. } => {
                let caps =
                    AttackCapabilities::for_lines(self.case(), &self.bundle.meters, &draw.lines)?;
                let plan = worst_topology_attack(&self.topo, &draw.z, &caps, *max_removals)?;
                Ok(Some(AttackPlan::Topology(plan)))
            }
        }
    }

    /// Attack vector, claimed removed lines and a target label.
    fn attack(
        &self,
        draw: &Draw,
        budget: Option<f64>,
    ) -> Result<(DVector<f64>, BTreeSet<usize>, String)> {
        Ok(self.realize(self.plan(draw, budget)?.as_ref()))
    }

    fn realize(&self, plan: Option<&AttackPlan>) -> (DVector<f64>, BTreeSet<usize>, String) {
        let m = self.bundle.meters.len();
        match plan {
            None => (DVector::zeros(m), BTreeSet::new(), String::new()),
            Some(AttackPlan::Meter(plan)) => (
                DVector::from_column_slice(&plan.a),
                BTreeSet::new(),
                plan.target.to_string(),
            ),
            Some(AttackPlan::Topology(plan)) => {
                let label = format!(
                    "-{}",
                    CongestionPattern::from_ids(plan.removed.iter().copied())
                );
                (plan.dense_attack(m), plan.removed_set(), label)
            }
        }
    }

    fn run(&self) -> RunOutput {
        let started = Instant::now();
        let per_trial: Vec<(Vec<Outcome>, Vec<f64>)> = (0..self.cfg.trials as u64)
            .into_par_iter()
            .map(|t| self.trial(t))
            .collect();
        let budgets = self.budgets();
        let buses = self.model.bus_count();
        let mut points = Vec::with_capacity(budgets.len());
        for (j, budget) in budgets.iter().enumerate() {
            let mut acc = RppAccumulator::new(buses);
            let (mut detected, mut failures, mut stat_sum, mut stat_n) = (0, 0, 0.0, 0usize);
            for (recs, _) in &per_trial {
                let r = &recs[j].record;
                if r.error.is_some() && r.rpp.is_none() && !r.detected {
                    failures += 1;
                    continue;
                }
                if r.detected {
                    detected += 1;
                }
                if r.statistic.is_finite() {
                    stat_sum += r.statistic;
                    stat_n += 1;
                }
                if let Some((b, p)) = &recs[j].prices {
                    acc.add(&b.lmp, &p.lmp).expect("bus count");
                }
            }
            let metrics = acc.finish();
            let valid = self.cfg.trials - failures;
            points.push(CurvePoint {
                budget: *budget,
                trials: self.cfg.trials,
                failures,
                detected,
                detection_probability: if valid > 0 {
                    detected as f64 / valid as f64
                } else {
                    0.0
                },
                priced: metrics.samples,
                arpp: metrics.arpp,
                rpp: metrics.rpp,
                excluded_buses: metrics
                    .excluded
                    .iter()
                    .map(|&i| self.model.bus_ids()[i])
                    .collect(),
                mean_statistic: if stat_n > 0 {
                    stat_sum / stat_n as f64
                } else {
                    0.0
                },
            });
        }
        let times: Vec<f64> = per_trial
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect();
        let trials = per_trial
            .into_iter()
            .flat_map(|(r, _)| r.into_iter().map(|o| o.record))
            .collect();
        RunOutput {
            result: ExperimentResult {
                scenario: self.cfg.clone(),
                case_name: self.case().name.clone(),
                dof: self.detector.dof,
                threshold: self.detector.threshold,
                points,
            },
            trials,
            timing: TimingReport {
                total_s: started.elapsed().as_secs_f64(),
                attack_search: TimingStats::from_samples(&times),
            },
        }
    }
}

struct Outcome {
    record: TrialRecord,
    prices: Option<(Arc<LmpSolution>, Arc<LmpSolution>)>,
}

fn failed(trial: u64, budget: Option<f64>, lines: &[usize], e: &Error) -> Outcome {
    let record = TrialRecord {
        trial,
        budget,
        lines: lines.to_vec(),
        detected: false,
        statistic: f64::NAN,
        target: String::new(),
        estimated_pattern: String::new(),
        rpp: None,
        error: Some(e.to_string()),
    };
    Outcome {
        record,
        prices: None,
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every trial of the scenario at each budget point.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let exp = Experiment::new(cfg)?;
    with_pool(cfg.threads, || exp.run())
}

/// Runs the scenario over a replacement budget grid.
pub fn sweep_budget(cfg: &ScenarioConfig, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("budget grid is empty".into()));
    }
    let mut cfg = cfg.clone();
    match &mut cfg.attack {
        AttackSpec::Meter { budgets, .. } => *budgets = grid.to_vec(),
        _ => {
            return Err(Error::InvalidArgument(
                "budget sweeps apply to meter attacks only".into(),
            ))
        }
    }
    Ok(run_scenario(&cfg)?.result.points)
}

/// Designs the scenario's attack against the snapshot of `trial` (or
/// against `z` when given) at every budget point.
pub fn plan_attack(cfg: &ScenarioConfig, trial: u64, z: Option<&[f64]>) -> Result<SnapshotReport> {
    let exp = Experiment::new(cfg)?;
    let mut draw = exp.draw(trial)?;
    if let Some(z) = z {
        if z.len() != draw.z.len() {
            return Err(Error::Dimension {
                what: "measurement vector",
                expected: draw.z.len(),
                got: z.len(),
            });
        }
        draw.z = DVector::from_column_slice(z);
    }
    let base = exp.observe(&draw.z, &BTreeSet::new(), &draw.vm)?;
    let mut attacks = Vec::new();
    for budget in exp.budgets() {
        let plan = exp.plan(&draw, budget)?;
        let (a, removed, _) = exp.realize(plan.as_ref());
        let obs = exp.observe(&(&draw.z + a), &removed, &draw.vm)?;
        let rpp = match (&base.lmp, &obs.lmp) {
            (Some(b), Some(p)) => Some(relative_perturbation(&b.lmp, &p.lmp)),
            _ => None,
        };
        attacks.push(SnapshotAttack {
            budget,
            plan,
            detected: obs.detected,
            statistic: obs.statistic,
            estimated_pattern: obs.pattern,
            base_pattern: base.pattern.clone(),
            rpp,
        });
    }
    Ok(SnapshotReport {
        case_name: exp.case().name.clone(),
        seed: cfg.seed,
        trial,
        lines: draw.lines.clone(),
        z: draw.z.iter().copied().collect(),
        attacks,
    })
}

/// Times exhaustive and greedy pattern search on the same trials and
/// reports how often greedy reaches the exhaustive optimum.
pub fn compare_search_methods(cfg: &ScenarioConfig) -> Result<SearchComparison> {
    let AttackSpec::Meter { model, .. } = &cfg.attack else {
        return Err(Error::InvalidArgument(
            "search comparison needs a meter attack scenario".into(),
        ));
    };
    let tag = *model;
    let exp = Experiment::new(cfg)?;
    let budget = exp.budgets()[0].expect("meter budget");
    struct Row {
        optimal: bool,
        exact: bool,
        te: f64,
        tg: f64,
        ee: usize,
        ge: usize,
        cands: usize,
    }
    let rows: Vec<Result<Row>> = with_pool(cfg.threads, || {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| {
                let draw = exp.draw(t)?;
                let attacker = MeterAttacker::new(
                    &exp.model,
                    &exp.ops,
                    exp.suspects(&draw.lines)?,
                    AttackOptions::default(),
                )?;
                let base = exp.topo.view(&BTreeSet::new())?;
                let (input, cands) = exp.meter_setup(tag, &draw.z, budget)?;
                // Warm the shared price cache so both searches time the
                // attack programs rather than the pricing LPs.
                for p in &cands {
                    base.pricing.lmp(p);
                }
                let start = Instant::now();
                let ex = attacker.worst_attack(
                    &base.pricing,
                    &input,
                    &cands,
                    SearchMethod::Exhaustive,
                )?;
                let te = start.elapsed().as_secs_f64();
                let start = Instant::now();
                let gr =
                    attacker.worst_attack(&base.pricing, &input, &cands, SearchMethod::Greedy)?;
                let tg = start.elapsed().as_secs_f64();
                let tol = 1e-9 * ex.predicted_arpp.abs().max(1.0);
                Ok(Row {
                    optimal: gr.predicted_arpp >= ex.predicted_arpp - tol,
                    exact: ex.target == gr.target,
                    te,
                    tg,
                    ee: ex.evaluations,
                    ge: gr.evaluations,
                    cands: cands.len(),
                })
            })
            .collect()
    })?;
    let rows: Vec<Row> = rows.into_iter().flatten().collect();
    let n = rows.len().max(1) as f64;
    let frac = |f: &dyn Fn(&Row) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let mean = |f: &dyn Fn(&Row) -> usize| rows.iter().map(f).sum::<usize>() as f64 / n;
    let te: Vec<f64> = rows.iter().map(|r| r.te).collect();
    let tg: Vec<f64> = rows.iter().map(|r| r.tg).collect();
    Ok(SearchComparison {
        scenario: cfg.clone(),
        trials: rows.len(),
        agreement: frac(&|r| r.optimal),
        exact_agreement: frac(&|r| r.exact),
        exhaustive: TimingStats::from_samples(&te),
        greedy: TimingStats::from_samples(&tg),
        mean_exhaustive_evaluations: mean(&|r| r.ee),
        mean_greedy_evaluations: mean(&|r| r.ge),
        mean_candidates: mean(&|r| r.cands),
    })
}
