//! Real-time LMP manipulation through state-estimation attacks.
//!
//! The crate covers the DC network model, weighted least-squares
//! estimation with a chi-square detector, ex-post LMP computation,
//! the polyhedral geometry of price regions, meter and topology attack
//! construction, an AC reference path and a Monte Carlo harness.

pub mod ac;
pub mod barrier;
pub mod case;
pub mod chi2;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod lp;
pub mod meter_attack;
pub mod meters;
pub mod network;
pub mod pricing;
pub mod topology_attack;

pub use ac::{ac_power_flow, ac_wls_estimate, AcEstimate, AcModel, AcState};
pub use case::{
    load_case_ref, parse_case, Branch, Bus, CaseBundle, CaseFormat, Generator, MarketConfig,
    PowerCase,
};
pub use chi2::detector_threshold;
pub use error::{Error, Result};
pub use estimation::{
    estimate, topo_estimate, DetectorConfig, EstimateReport, Estimator, EstimatorOperators,
};
pub use geometry::{
    boundary_margin, candidate_patterns, region_of_state, region_witness, CongestionPattern,
    PriceRegion, RegionWitness,
};
pub use harness::{
    compare_search_methods, plan_attack, run_scenario, sweep_budget, AttackPlan, AttackSpec,
    ExperimentResult, PipelineModel, ScenarioConfig, SnapshotReport,
};
pub use meter_attack::{
    mmse_state, AttackInput, AttackModel, AttackOptions, MeterAttackPlan, MeterAttacker,
    SearchMethod, StatePrior,
};
pub use meters::{Meter, MeterConfig, NoiseSpec, SuspectSelector, SuspectSpace};
pub use network::{apply_topology, build_dc_model, DcModel};
pub use pricing::{
    day_ahead_dispatch, price_metrics, solve_expost_lmp, LmpSolution, PriceMetrics, PricingContext,
};
pub use topology_attack::{
    feasible_targets, incidence_column, line_removal_attack, worst_topology_attack,
    AttackCapabilities, TopologyAttackPlan, TopologyCache,
};
