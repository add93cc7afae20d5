use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use nalgebra::DVector;
use rtlmp_core::geometry::PriceRegion;
use rtlmp_core::harness::{write_curve_csv, write_outputs, SnapshotReport};
use rtlmp_core::{
    ac_wls_estimate, boundary_margin, build_dc_model, compare_search_methods, day_ahead_dispatch,
    line_removal_attack, load_case_ref, plan_attack, region_of_state, region_witness, run_scenario,
    solve_expost_lmp, topo_estimate, AttackCapabilities, AttackModel, AttackSpec, CaseBundle,
    CongestionPattern, PipelineModel, PricingContext, RegionWitness, ScenarioConfig, SearchMethod,
};
use serde::Serialize;

use crate::io::{csv_string, emit, parse_lines, read_vector, to_json, usage};
use crate::{
    AttackCommand, BadDataModel, CaseArgs, Command, CompareArgs, EstimateArgs, Format, LmpArgs,
    MeterArgs, MontecarloArgs, PartitionArgs, Pipeline, Search, Snapshot, TopologyArgs,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Case(a) => case(a),
        Command::Estimate(a) => estimate(a),
        Command::Lmp(a) => lmp(a),
        Command::Partition(a) => partition(a),
        Command::Attack(AttackCommand::Meter(a)) => attack_meter(a),
        Command::Attack(AttackCommand::Topology(a)) => attack_topology(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::CompareSearch(a) => compare(a),
    }
}

fn load(case: &str) -> Result<CaseBundle> {
    load_case_ref(case).with_context(|| format!("loading case '{case}'"))
}

fn json_only(format: Format, what: &str) -> Result<()> {
    match format {
        Format::Json => Ok(()),
        Format::Csv => Err(usage(format!("{what} output is JSON only"))),
    }
}

fn pipeline(p: Pipeline) -> PipelineModel {
    match p {
        Pipeline::Dc => PipelineModel::Dc,
        Pipeline::Ac => PipelineModel::Ac,
    }
}

/// Measurement vector from `--z`, or the seeded snapshot draw.
fn snapshot_z(case: &str, snap: &Snapshot, model: Pipeline, meters: usize) -> Result<Vec<f64>> {
    match &snap.z {
        Some(p) => {
            let z = read_vector(p)?;
            if z.len() != meters {
                anyhow::bail!(
                    "{} holds {} values, the case has {meters} meters",
                    p.display(),
                    z.len()
                );
            }
            Ok(z)
        }
        None => {
            let mut cfg = ScenarioConfig::new(case, AttackSpec::None, 1, snap.seed);
            cfg.model = pipeline(model);
            Ok(plan_attack(&cfg, snap.trial, None)?.z)
        }
    }
}

#[derive(Serialize)]
struct LimitedLine {
    id: usize,
    from: usize,
    to: usize,
    limit_mw: f64,
}

#[derive(Serialize)]
struct CaseSummary {
    name: String,
    buses: usize,
    branches: usize,
    closed_branches: usize,
    generators: usize,
    reference_bus: usize,
    meters: usize,
    active_meters: usize,
    state_dim: usize,
    detector_dof: usize,
    limited: Vec<LimitedLine>,
    total_load_mw: f64,
}

#[derive(Serialize)]
struct BranchRow {
    id: usize,
    from: usize,
    to: usize,
    reactance: f64,
    limit_mw: Option<f64>,
    closed: bool,
}

fn case(a: CaseArgs) -> Result<()> {
    let b = load(&a.case.case)?;
    let c = &b.case;
    let model = build_dc_model(c)?;
    let summary = CaseSummary {
        name: c.name.clone(),
        buses: c.bus_count(),
        branches: c.branch_count(),
        closed_branches: c.closed_branches().count(),
        generators: c.generators.len(),
        reference_bus: c.reference_bus,
        meters: b.meters.len(),
        active_meters: model.active_meter_count(),
        state_dim: model.state_dim(),
        detector_dof: model.active_meter_count().saturating_sub(model.state_dim()),
        limited: c
            .limited_branches()
            .map(|br| LimitedLine {
                id: br.id,
                from: br.from,
                to: br.to,
                limit_mw: br.limit_mw.expect("limited"),
            })
            .collect(),
        total_load_mw: c.total_load_mw(),
    };
    let body = match a.format {
        Format::Json => to_json(&summary)?,
        Format::Csv => csv_string(c.branches.iter().map(|br| BranchRow {
            id: br.id,
            from: br.from,
            to: br.to,
            reactance: br.reactance,
            limit_mw: br.limit_mw,
            closed: br.closed,
        }))?,
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("case.json"), b.to_native_json()? + "\n")?;
        model.export_csv(dir)?;
    }
    print!("{body}");
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    json_only(a.output.format, "estimate")?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(usage(format!("--alpha {} must lie in (0, 1)", a.alpha)));
    }
    let b = load(&a.case.case)?;
    let removed: BTreeSet<usize> = parse_lines(&b.case, &a.remove)?.into_iter().collect();
    let z = snapshot_z(&a.case.case, &a.snapshot, a.model, b.meters.len())?;
    let zv = DVector::from_vec(z);
    let (body, line) = match a.model {
        Pipeline::Dc => {
            let r = topo_estimate(&b.case, &b.meters, &removed, &zv, a.alpha)?;
            let line = verdict(&r.pattern, r.statistic, r.threshold, r.detected);
            (to_json(&r)?, line)
        }
        Pipeline::Ac => {
            let vm = vec![1.0; b.case.bus_count()];
            let r = ac_wls_estimate(&b.case, &removed, &zv, b.meters.noise_std(), &vm, a.alpha)?;
            let line = verdict(&r.pattern, r.statistic, r.threshold, r.detected);
            (to_json(&r)?, line)
        }
    };
    emit(a.output.out.as_deref(), &body, || line)
}

fn verdict(p: &CongestionPattern, stat: f64, tau: f64, detected: bool) -> String {
    format!(
        "pattern {p}  statistic {stat:.4}  threshold {tau:.4}  {}\n",
        if detected { "DETECTED" } else { "passed" }
    )
}

#[derive(Serialize)]
struct LmpReport {
    pattern: CongestionPattern,
    bus_ids: Vec<usize>,
    solution: rtlmp_core::LmpSolution,
}

#[derive(Serialize)]
struct LmpRow {
    bus: usize,
    lmp: f64,
    lmp_raw: f64,
}

fn lmp(a: LmpArgs) -> Result<()> {
    let b = load(&a.case.case)?;
    let pattern = CongestionPattern::from_ids(parse_lines(&b.case, &a.pattern)?);
    let model = build_dc_model(&b.case)?;
    let sol = solve_expost_lmp(&b.case, &b.market, &model, &pattern)
        .with_context(|| format!("pricing pattern {pattern}"))?;
    let bus_ids: Vec<usize> = b.case.buses.iter().map(|x| x.id).collect();
    let rows: Vec<LmpRow> = bus_ids
        .iter()
        .enumerate()
        .map(|(i, &bus)| LmpRow {
            bus,
            lmp: sol.lmp[i],
            lmp_raw: sol.lmp_raw[i],
        })
        .collect();
    let mut table = format!("pattern {pattern}  eta {:.4}\n", sol.eta);
    for (id, mu) in &sol.mu {
        let _ = writeln!(table, "mu[{id}] = {mu:.4}");
    }
    let _ = writeln!(table, "{:>6} {:>12}", "bus", "lmp");
    for r in &rows {
        let _ = writeln!(table, "{:>6} {:>12.4}", r.bus, r.lmp);
    }
    let body = match a.output.format {
        Format::Json => to_json(&LmpReport {
            pattern,
            bus_ids,
            solution: sol,
        })?,
        Format::Csv => csv_string(rows)?,
    };
    emit(a.output.out.as_deref(), &body, || table)
}

#[derive(Serialize)]
struct PartitionReport {
    state: Vec<f64>,
    flows_mw: Vec<f64>,
    pattern: CongestionPattern,
    margin: f64,
    lmp: Option<Vec<f64>>,
    neighbors: Vec<PriceRegion>,
}

#[derive(Serialize)]
struct RegionRow {
    pattern: String,
    kind: &'static str,
    margin: f64,
    lmp: String,
}

fn partition(a: PartitionArgs) -> Result<()> {
    let b = load(&a.case.case)?;
    let model = Arc::new(build_dc_model(&b.case)?);
    let x = match &a.state {
        Some(p) => {
            let v = read_vector(p)?;
            if v.len() != model.state_dim() {
                anyhow::bail!(
                    "{} holds {} angles, the case has {} non-reference buses",
                    p.display(),
                    v.len(),
                    model.state_dim()
                );
            }
            DVector::from_vec(v)
        }
        None => DVector::from_vec(day_ahead_dispatch(&b.case, &model)?.state),
    };
    let pricing = PricingContext::new(
        Arc::new(b.case.clone()),
        Arc::new(b.market.clone()),
        Arc::clone(&model),
    );
    let pattern = region_of_state(&model, &x);
    let margin = boundary_margin(&model, &x)?;
    let mut neighbors = Vec::new();
    for k in model.limited().collect::<Vec<_>>() {
        let p = pattern.flipped(model.branch_ids()[k]);
        if let RegionWitness::Nonempty { witness, margin } = region_witness(&model, &p)? {
            neighbors.push(PriceRegion {
                lmp: pricing.lmp(&p).map(|s| s.lmp.clone()),
                pattern: p,
                witness: Some(witness.iter().copied().collect()),
                margin: Some(margin),
            });
        }
    }
    let report = PartitionReport {
        state: x.iter().copied().collect(),
        flows_mw: model.branch_flows(&x)?.iter().copied().collect(),
        lmp: pricing.lmp(&pattern).map(|s| s.lmp.clone()),
        pattern,
        margin,
        neighbors,
    };
    let fmt_lmp = |l: &Option<Vec<f64>>| match l {
        Some(v) => v
            .iter()
            .map(|p| format!("{p:.4}"))
            .collect::<Vec<_>>()
            .join(" "),
        None => "unpriced".into(),
    };
    let mut summary = format!(
        "pattern {}  margin {:.4} MW\n  lmp {}\n",
        report.pattern,
        report.margin,
        fmt_lmp(&report.lmp)
    );
    for n in &report.neighbors {
        let _ = writeln!(
            summary,
            "neighbor {}  margin {:.4} MW",
            n.pattern,
            n.margin.unwrap_or(0.0)
        );
        let _ = writeln!(summary, "  lmp {}", fmt_lmp(&n.lmp));
    }
    let body = match a.output.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut rows = vec![RegionRow {
                pattern: report.pattern.to_string(),
                kind: "current",
                margin: report.margin,
                lmp: fmt_lmp(&report.lmp),
            }];
            rows.extend(report.neighbors.iter().map(|n| RegionRow {
                pattern: n.pattern.to_string(),
                kind: "neighbor",
                margin: n.margin.unwrap_or(0.0),
                lmp: fmt_lmp(&n.lmp),
            }));
            csv_string(rows)?
        }
    };
    emit(a.output.out.as_deref(), &body, || summary)
}

fn snapshot_summary(r: &SnapshotReport) -> String {
    let mut s = format!(
        "case {}  seed {}  trial {}  lines {:?}\n",
        r.case_name, r.seed, r.trial, r.lines
    );
    for a in &r.attacks {
        let budget = a.budget.map_or("-".to_string(), |b| format!("{b}"));
        let rpp = a.rpp.map_or("unpriced".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "budget {budget}: {} -> {}  statistic {:.4}  {}  rpp {rpp}",
            a.base_pattern,
            a.estimated_pattern,
            a.statistic,
            if a.detected { "DETECTED" } else { "passed" },
        );
    }
    s
}

fn read_z(snap: &Snapshot) -> Result<Option<Vec<f64>>> {
    snap.z.as_deref().map(read_vector).transpose()
}

fn run_snapshot(cfg: &ScenarioConfig, snap: &Snapshot, out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let z = read_z(snap)?;
    let report = plan_attack(cfg, snap.trial, z.as_deref())?;
    emit(out, &to_json(&report)?, || snapshot_summary(&report))
}

fn attack_meter(a: MeterArgs) -> Result<()> {
    json_only(a.output.format, "attack")?;
    if a.model != BadDataModel::M3 && a.epsilon.is_empty() {
        return Err(usage("m1 and m2 need --epsilon"));
    }
    let b = load(&a.case.case)?;
    let lines = a
        .suspects
        .as_deref()
        .map(|s| parse_lines(&b.case, s))
        .transpose()?;
    let model = match a.model {
        BadDataModel::M1 => AttackModel::M1,
        BadDataModel::M2 => AttackModel::M2,
        BadDataModel::M3 => AttackModel::M3,
    };
    let search = match a.search {
        Search::Exhaustive => SearchMethod::Exhaustive,
        Search::Greedy => SearchMethod::Greedy,
    };
    let spec = AttackSpec::Meter {
        model,
        budgets: a.epsilon.clone(),
        search,
        lines_per_trial: a.lines_per_trial,
        lines,
    };
    let mut cfg = ScenarioConfig::new(a.case.case.clone(), spec, 1, a.snapshot.seed);
    cfg.model = pipeline(a.pipeline);
    cfg.alpha = a.alpha;
    cfg.candidate_threshold_mw = a.threshold;
    cfg.candidate_cap = a.candidate_cap;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    run_snapshot(&cfg, &a.snapshot, a.output.out.as_deref())
}

fn attack_topology(a: TopologyArgs) -> Result<()> {
    json_only(a.output.format, "attack")?;
    let b = load(&a.case.case)?;
    if a.remove.trim() == "auto" {
        let lines = a
            .suspects
            .as_deref()
            .map(|s| parse_lines(&b.case, s))
            .transpose()?;
        let spec = AttackSpec::Topology {
            lines_per_trial: a.lines_per_trial,
            max_removals: a.max_removals,
            lines,
        };
        let mut cfg = ScenarioConfig::new(a.case.case.clone(), spec, 1, a.snapshot.seed);
        cfg.model = pipeline(a.model);
        cfg.alpha = a.alpha;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        return run_snapshot(&cfg, &a.snapshot, a.output.out.as_deref());
    }
    if a.suspects.is_some() {
        return Err(usage("--suspects only applies to --remove auto"));
    }
    let removed = parse_lines(&b.case, &a.remove)?;
    if removed.is_empty() {
        return Err(usage("--remove needs at least one line or 'auto'"));
    }
    let z = snapshot_z(&a.case.case, &a.snapshot, a.model, b.meters.len())?;
    let caps = AttackCapabilities::for_lines(&b.case, &b.meters, &removed)?;
    let set: BTreeSet<usize> = removed.iter().copied().collect();
    let plan = line_removal_attack(&b.case, &b.meters, &DVector::from_vec(z), &set, &caps)?;
    let summary = format!(
        "remove {:?}  feasible {}  meters modified {}\n",
        removed,
        plan.feasibility.is_feasible(),
        plan.a.len()
    );
    emit(a.output.out.as_deref(), &to_json(&plan)?, || summary)
}

fn scenario(
    path: &Path,
    seed: Option<u64>,
    case: Option<String>,
    threads: Option<usize>,
) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg =
        ScenarioConfig::from_json(&text).with_context(|| format!("scenario {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(c) = case {
        cfg.case = c;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn montecarlo(a: MontecarloArgs) -> Result<()> {
    let mut cfg = scenario(&a.scenario, a.seed, a.case, a.threads)?;
    if let Some(m) = a.model {
        cfg.model = pipeline(m);
    }
    let run = run_scenario(&cfg)?;
    write_outputs(&a.out, &run)?;
    match a.format {
        Format::Csv => write_curve_csv(std::io::stdout().lock(), &run.result.points)?,
        Format::Json => {
            let r = &run.result;
            println!(
                "{}  {} trials  dof {}  threshold {:.4}  ({:.2} s)",
                r.case_name, cfg.trials, r.dof, r.threshold, run.timing.total_s
            );
            for p in &r.points {
                let budget = p.budget.map_or("-".to_string(), |b| format!("{b}"));
                println!(
                    "budget {budget}: detection {:.4}  arpp {:.4}  priced {}  failures {}",
                    p.detection_probability, p.arpp, p.priced, p.failures
                );
            }
            println!("wrote {}", a.out.display());
        }
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    json_only(a.output.format, "compare-search")?;
    let cfg = scenario(&a.scenario, a.seed, a.case, a.threads)?;
    if !matches!(cfg.attack, AttackSpec::Meter { .. }) {
        anyhow::bail!("compare-search needs a meter attack scenario");
    }
    let r = compare_search_methods(&cfg)?;
    let summary = format!(
        "{} trials  agreement {:.3} (exact {:.3})  exhaustive {:.5} s  greedy {:.5} s\n",
        r.trials, r.agreement, r.exact_agreement, r.exhaustive.mean_s, r.greedy.mean_s
    );
    emit(a.output.out.as_deref(), &to_json(&r)?, || summary)
}
