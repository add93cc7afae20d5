//! Fixtures shared by the benchmarks in `benches/`.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DVector;
use rtlmp_core::harness::SnapshotReport;
use rtlmp_core::{
    load_case_ref, plan_attack, AttackSpec, CaseBundle, ScenarioConfig, TopologyCache,
};

pub struct Fixture {
    pub bundle: CaseBundle,
    pub z: DVector<f64>,
    pub cache: TopologyCache,
}

/// A case with one seeded noisy snapshot and a warm base view.
pub fn fixture(case: &str, seed: u64) -> Fixture {
    let bundle = load_case_ref(case).expect("case");
    let snap: SnapshotReport = plan_attack(
        &ScenarioConfig::new(case, AttackSpec::None, 1, seed),
        0,
        None,
    )
    .expect("snapshot");
    let cache = TopologyCache::new(
        Arc::new(bundle.case.clone()),
        Arc::new(bundle.market.clone()),
        bundle.meters.clone(),
        0.1,
    );
    cache.view(&BTreeSet::new()).expect("base view");
    Fixture {
        z: DVector::from_vec(snap.z),
        bundle,
        cache,
    }
}
