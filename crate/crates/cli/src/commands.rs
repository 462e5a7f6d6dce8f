use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use minerflex::deployment::{realized_cost, DeploymentSample};
use minerflex::fleet::FleetConfig;
use minerflex::online::{regret_curve, run_online, OgdConfig};
use minerflex::oracle::{compare_strategies, feasible_grid, mc_expected_cost};
use minerflex::program::ProgramsConfig;
use minerflex::regulation::{expected_reg_cost, solve_reg_profile, RegInstance, RegJointModel};
use minerflex::sgd::{self, solve_scenarios, Scenario, SgdConfig};
use minerflex::single_machine::{profile_risk, risk_aware_solve, risk_objective, ProgramStats, RiskConfig};
use minerflex::traces::{
    estimate_stats, load_traces, program_columns, scenarios_by_hour, synthesize_traces, to_rounds, write_traces,
    SynthSpec, TraceSet,
};
use minerflex::{verify, Direction, Profile};

use crate::cli;
use crate::output::{header, num, RunDir};
use crate::settings::{self, pick, Settings, Usage};

/// Raised when verification ran but some suite failed.
#[derive(Debug)]
pub struct SuitesFailed(pub Vec<u32>);

impl std::fmt::Display for SuitesFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed for suite(s) {:?}", self.0)
    }
}

impl std::error::Error for SuitesFailed {}

struct Loaded {
    fleet: FleetConfig,
    programs: ProgramsConfig,
}

fn load_inputs(inputs: &cli::Inputs, s: &Settings, run: &mut RunDir) -> Result<Loaded> {
    let fleet_path = s.required_path(&inputs.fleet, |c| &c.fleet, "fleet.json", "fleet config")?;
    let programs_path = s.required_path(&inputs.programs, |c| &c.programs, "programs.json", "programs config")?;
    let fleet = FleetConfig::load(&fleet_path).with_context(|| format!("loading fleet config {}", fleet_path.display()))?;
    let programs = ProgramsConfig::load(&programs_path)
        .with_context(|| format!("loading programs config {}", programs_path.display()))?;
    run.input("fleet", &fleet_path)?;
    run.input("programs", &programs_path)?;
    Ok(Loaded { fleet, programs })
}

fn trace_paths(t: &cli::Traces, s: &Settings) -> Result<Option<(PathBuf, PathBuf)>> {
    let market = s.optional_path(&t.market, |c| &c.market);
    let program = s.optional_path(&t.program_trace, |c| &c.program_trace);
    match (market, program) {
        (Some(m), Some(p)) => Ok(Some((m, p))),
        (None, None) => Ok(None),
        _ => bail!(Usage("--market and --program-trace must be given together".into())),
    }
}

fn load_trace_files(paths: &(PathBuf, PathBuf), run: &mut RunDir) -> Result<TraceSet> {
    let set = load_traces(&paths.0, &paths.1)?;
    run.input("market", &paths.0)?;
    run.input("program_trace", &paths.1)?;
    Ok(set)
}

fn required_traces(t: &cli::Traces, s: &Settings, run: &mut RunDir) -> Result<TraceSet> {
    match trace_paths(t, s)? {
        Some(p) => load_trace_files(&p, run),
        None => bail!(Usage("this command needs --market and --program-trace".into())),
    }
}

fn clamp(t: &cli::Traces, s: &Settings) -> bool {
    t.clamp_negative || s.file.clamp_negative.unwrap_or(false)
}

fn sgd_config(d: &cli::Descent, s: &Settings) -> Result<SgdConfig> {
    let cfg = SgdConfig {
        iterations: pick(d.iterations, &s.file.iterations, settings::DEFAULT_ITERATIONS),
        batch: pick(d.batch, &s.file.batch, settings::DEFAULT_BATCH),
        seed: pick(d.seed, &s.file.seed, settings::DEFAULT_SEED),
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn market_prices(m: &cli::Market, s: &Settings) -> (f64, f64) {
    (
        pick(m.coin_price, &s.file.coin_price, settings::DEFAULT_COIN_PRICE),
        pick(m.rt_price, &s.file.rt_price, settings::DEFAULT_RT_PRICE),
    )
}

fn profile_cells(p: &Profile) -> Vec<String> {
    p.as_slice().iter().map(|&x| num(x)).collect()
}

fn scenario_mean_cost(pool: &[Scenario], profile: &Profile) -> Result<f64> {
    let mut total = 0.0;
    for s in pool {
        total += realized_cost(&s.fleet, &s.prices, profile, &DeploymentSample::new(s.epsilon.clone())?);
    }
    Ok(total / pool.len() as f64)
}

#[derive(Serialize)]
struct OfflineRow {
    hour: Option<u32>,
    profile: Profile,
    expected_cost: f64,
    std_error: Option<f64>,
    bound: f64,
    slots: Option<usize>,
}

pub fn solve_offline(a: &cli::SolveOffline, s: &Settings, run: &mut RunDir) -> Result<()> {
    let Loaded { fleet, programs } = load_inputs(&a.inputs, s, run)?;
    let cfg = sgd_config(&a.descent, s)?;
    run.seed(cfg.seed);
    let clamp_negative = clamp(&a.traces, s);
    let mut rows = Vec::new();
    match trace_paths(&a.traces, s)? {
        Some(paths) => {
            let traces = load_trace_files(&paths, run)?;
            for (hour, pool) in scenarios_by_hour(&traces, &fleet, &programs, clamp_negative)? {
                let hour_cfg = SgdConfig { seed: cfg.seed.wrapping_add(hour as u64), ..cfg.clone() };
                let res = solve_scenarios(&pool, &hour_cfg)?;
                rows.push(OfflineRow {
                    hour: Some(hour),
                    expected_cost: scenario_mean_cost(&pool, &res.profile)?,
                    profile: res.profile,
                    std_error: None,
                    bound: res.bound,
                    slots: Some(pool.len()),
                });
            }
        }
        None => {
            let (coin, rt) = market_prices(&a.market, s);
            let fleet = fleet.fleet_at(coin, rt, clamp_negative)?;
            let sampler = programs.sampler()?;
            let res = sgd::solve(&fleet, &programs.programs, &sampler, &cfg)?;
            let samples = pick(a.mc_samples, &s.file.mc_samples, settings::DEFAULT_MC_SAMPLES);
            if samples < 2 {
                bail!(Usage("--mc-samples must be at least 2".into()));
            }
            let mc = mc_expected_cost(&fleet, &programs.programs, &sampler, &res.profile, samples, cfg.seed.wrapping_add(1));
            rows.push(OfflineRow {
                hour: None,
                profile: res.profile,
                expected_cost: mc.mean,
                std_error: Some(mc.std_error),
                bound: res.bound,
                slots: None,
            });
        }
    }
    let ids = programs.ids();
    let mut head = vec!["hour".to_string()];
    head.extend(ids.iter().cloned());
    head.extend(header(&["expected_cost", "bound"]));
    run.csv(
        "profile.csv",
        &head,
        rows.iter().map(|r| {
            let mut row = vec![r.hour.map_or("all".into(), |h| h.to_string())];
            row.extend(profile_cells(&r.profile));
            row.push(num(r.expected_cost));
            row.push(num(r.bound));
            row
        }),
    )?;
    run.summary(&json!({
        "command": "solve-offline",
        "programs": ids,
        "iterations": cfg.iterations,
        "batch": cfg.batch,
        "seed": cfg.seed,
        "rows": rows,
    }))
}

fn regulation_instance(fleet: &FleetConfig, programs: &ProgramsConfig, coin: f64, rt: f64) -> Result<(RegInstance, [String; 2])> {
    let Some(reg) = &programs.regulation else {
        bail!(minerflex::Error::InvalidInput("programs config has no regulation pair".into()));
    };
    if programs.programs.len() != 2 {
        bail!(minerflex::Error::InvalidInput(format!(
            "solve-reg takes exactly the regulation pair, found {} programs",
            programs.programs.len()
        )));
    }
    let get = |id: &str| {
        programs
            .index_of(id)
            .map(|i| &programs.programs[i])
            .ok_or_else(|| minerflex::Error::InvalidInput(format!("unknown regulation program {id}")))
    };
    let (up, down) = (get(&reg.up)?, get(&reg.down)?);
    let law = |p: &minerflex::ProgramSpec| {
        p.deployment
            .truncexp()?
            .ok_or_else(|| minerflex::Error::InvalidInput(format!("program {} needs a truncated exponential deployment", p.id)))
    };
    let model = RegJointModel::new(reg.theta, law(up)?, law(down)?)?;
    let fleet = fleet.fleet_at(coin, rt, false)?;
    let inst = RegInstance::from_fleet(&fleet, up.price, down.price, model)?;
    Ok((inst, [up.id.clone(), down.id.clone()]))
}

pub fn solve_reg(a: &cli::SolveReg, s: &Settings, run: &mut RunDir) -> Result<()> {
    let Loaded { fleet, programs } = load_inputs(&a.inputs, s, run)?;
    let (coin, rt) = market_prices(&a.market, s);
    let (inst, ids) = regulation_instance(&fleet, &programs, coin, rt)?;
    let sol = solve_reg_profile(&inst);
    let (cu, cd) = (sol.profile.as_slice()[0], sol.profile.as_slice()[1]);
    let cases = (format!("{:?}", inst.down_case(cd)), format!("{:?}", inst.up_case(cu, cd)));
    run.csv(
        "reg_profile.csv",
        &[ids[0].clone(), ids[1].clone(), "expected_cost".into(), "down_case".into(), "up_case".into()],
        [vec![num(cu), num(cd), num(sol.expected_cost), cases.0.clone(), cases.1.clone()]],
    )?;
    let points = pick(a.surface_points, &s.file.surface_points, 0);
    if points == 1 {
        bail!(Usage("--surface-points must be 0 or at least 2".into()));
    }
    if points >= 2 {
        let mut rows = Vec::new();
        for c in feasible_grid(2, inst.capacity(), points) {
            rows.push(vec![num(c[0]), num(c[1]), num(expected_reg_cost(&inst, c[0], c[1])?)]);
        }
        run.csv("surface.csv", &[ids[0].clone(), ids[1].clone(), "expected_cost".into()], rows)?;
    }
    run.summary(&json!({
        "command": "solve-reg",
        "programs": ids,
        "coin_price": coin,
        "rt_price": rt,
        "theta": inst.model.theta,
        "profile": sol.profile,
        "expected_cost": sol.expected_cost,
        "down_case": cases.0,
        "up_case": cases.1,
    }))
}

/// Moments of the direction-transformed deployment.
fn transformed(stats: ProgramStats, direction: Direction) -> ProgramStats {
    match direction {
        Direction::Up => stats,
        Direction::Down => ProgramStats { mean_eps: 1.0 - stats.mean_eps, ..stats },
    }
}

pub fn solve_risk(a: &cli::SolveRisk, s: &Settings, run: &mut RunDir) -> Result<()> {
    let Loaded { fleet, programs } = load_inputs(&a.inputs, s, run)?;
    let clamp_negative = clamp(&a.traces, s);
    let directions = programs.directions();
    let (coin, rt, stats) = match trace_paths(&a.traces, s)? {
        Some(paths) => {
            let traces = load_trace_files(&paths, run)?;
            if traces.is_empty() {
                bail!(minerflex::Error::InsufficientData("trace set is empty".into()));
            }
            let n = traces.len() as f64;
            let coin = traces.records.iter().map(|r| r.coin_price).sum::<f64>() / n;
            let rt = traces.records.iter().map(|r| r.rt_price).sum::<f64>() / n;
            let cols = program_columns(&traces, &programs)?;
            let stats = cols
                .iter()
                .zip(&directions)
                .map(|(&c, &d)| Ok(transformed(estimate_stats(&traces.records, c)?, d)))
                .collect::<Result<Vec<_>>>()?;
            (coin, rt, stats)
        }
        None => {
            let (coin, rt) = market_prices(&a.market, s);
            let stats = programs
                .programs
                .iter()
                .map(|p| Ok(transformed(ProgramStats::new(p.price, p.deployment.mean()?, p.deployment.variance()?)?, p.direction)))
                .collect::<Result<Vec<_>>>()?;
            (coin, rt, stats)
        }
    };
    let fleet = fleet.fleet_at(coin, rt, clamp_negative)?;
    if fleet.len() != 1 {
        bail!(minerflex::Error::InvalidInput(format!(
            "solve-risk needs a single machine type, the fleet has {} reward levels",
            fleet.len()
        )));
    }
    let (reward, cap) = (fleet.reward(0), fleet.total_capacity());
    let weights = if !a.risk_weights.is_empty() {
        a.risk_weights.clone()
    } else {
        s.file.risk_weights.clone().unwrap_or_else(|| vec![0.0])
    };
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &w in &weights {
        let risk = RiskConfig { risk_weight: w };
        let c = risk_aware_solve(&stats, reward, cap, &risk)?;
        let (mean, var) = profile_risk(&stats, reward, &c);
        let objective = risk_objective(&stats, reward, &risk, &c);
        let mut row = vec![num(w)];
        row.extend(profile_cells(&c));
        row.extend([num(mean), num(var), num(objective)]);
        rows.push(row);
        results.push(json!({"risk_weight": w, "profile": c, "expected_cost": mean, "variance": var, "objective": objective}));
    }
    let mut head = vec!["risk_weight".to_string()];
    head.extend(programs.ids());
    head.extend(header(&["expected_cost", "variance", "objective"]));
    run.csv("risk.csv", &head, rows)?;
    run.summary(&json!({
        "command": "solve-risk",
        "programs": programs.ids(),
        "reward": reward,
        "capacity": cap,
        "stats": stats,
        "results": results,
    }))
}

/// Rounds at which the prefix regret is recomputed. Every round is exact
/// but each needs a hindsight solve, so long or wide runs use day marks.
pub fn regret_checkpoints(rounds: usize, programs: usize) -> Vec<usize> {
    if programs <= 2 && rounds <= 2000 {
        return (1..=rounds).collect();
    }
    let mut marks: Vec<usize> = (1..=rounds / 24).map(|d| 24 * d).collect();
    if marks.last() != Some(&rounds) {
        marks.push(rounds);
    }
    marks
}

pub fn simulate_online(a: &cli::SimulateOnline, s: &Settings, run: &mut RunDir) -> Result<()> {
    let Loaded { fleet, programs } = load_inputs(&a.inputs, s, run)?;
    let traces = required_traces(&a.traces, s, run)?;
    let mut rounds = to_rounds(&traces, &fleet, &programs, clamp(&a.traces, s))?;
    if rounds.is_empty() {
        bail!(minerflex::Error::InsufficientData("trace set is empty".into()));
    }
    let horizon = pick(a.horizon, &s.file.horizon, rounds.len()).min(rounds.len());
    rounds.truncate(horizon);
    let learners = pick(a.learners, &s.file.learners, settings::DEFAULT_LEARNERS);
    let n = programs.programs.len();
    let cap = fleet.total_capacity();
    let max_reward = rounds.iter().map(|r| r.fleet.max_reward()).fold(0.0, f64::max);
    let max_price = rounds.iter().flat_map(|r| r.prices.iter().copied()).fold(0.0, f64::max);
    let cfg = OgdConfig::from_bounds(horizon, n, cap, max_reward, max_price, learners);
    let (outcomes, report) = run_online(&rounds, &cfg)?;

    let ids = programs.ids();
    let mut head = header(&["round", "timestamp", "learner"]);
    head.extend(ids.iter().cloned());
    head.extend(header(&["cost", "cumulative_cost"]));
    let mut cumulative = 0.0;
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            cumulative += o.cost_incurred;
            let mut row = vec![
                (o.round + 1).to_string(),
                traces.records[o.round].timestamp.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
                o.learner.to_string(),
            ];
            row.extend(profile_cells(&o.profile_played));
            row.extend([num(o.cost_incurred), num(cumulative)]);
            row
        })
        .collect();
    run.csv("rounds.csv", &head, rows)?;

    let marks = regret_checkpoints(outcomes.len(), n);
    let curve = regret_curve(&rounds, &outcomes, cap, &marks)?;
    run.csv(
        "regret.csv",
        &header(&["round", "static_regret", "average_regret", "bound"]),
        marks
            .iter()
            .zip(&curve)
            .map(|(&t, &r)| vec![t.to_string(), num(r), num(r / t as f64), num(report.bound)]),
    )?;
    run.summary(&json!({
        "command": "simulate-online",
        "programs": ids,
        "rounds": outcomes.len(),
        "learners": learners,
        "step": {"diameter": cfg.diameter, "grad_bound": cfg.grad_bound},
        "report": report,
    }))
}

pub fn compare(a: &cli::CompareStrategies, s: &Settings, run: &mut RunDir) -> Result<()> {
    let Loaded { fleet, programs } = load_inputs(&a.inputs, s, run)?;
    let traces = required_traces(&a.traces, s, run)?;
    let cfg = sgd_config(&a.descent, s)?;
    run.seed(cfg.seed);
    let start = pick(a.window_start, &s.file.window_start, 0);
    let len = pick(a.window_len, &s.file.window_len, traces.len().saturating_sub(start));
    let report = compare_strategies(&traces, &fleet, &programs, start..start + len, &cfg, clamp(&a.traces, s))?;

    run.csv(
        "strategies.csv",
        &header(&["strategy", "mean_profit"]),
        [
            ("optimized", report.optimized),
            ("fixed_profile", report.fixed_profile),
            ("even_split", report.even_split),
            ("none", report.none),
        ]
        .iter()
        .map(|(k, v)| vec![k.to_string(), num(*v)]),
    )?;
    let mut head = header(&["strategy", "hour"]);
    head.extend(programs.ids());
    let mut rows = Vec::new();
    for (h, p) in &report.hourly_profiles {
        let mut row = vec!["optimized".to_string(), h.to_string()];
        row.extend(profile_cells(p));
        rows.push(row);
    }
    for (name, p) in [("fixed_profile", &report.fixed), ("even_split", &report.even)] {
        let mut row = vec![name.to_string(), "all".to_string()];
        row.extend(profile_cells(p));
        rows.push(row);
    }
    run.csv("profiles.csv", &head, rows)?;
    run.summary(&json!({
        "command": "compare-strategies",
        "window": [start, start + len],
        "iterations": cfg.iterations,
        "batch": cfg.batch,
        "seed": cfg.seed,
        "margin_over_even_split": report.margin_over_even_split(),
        "report": report,
    }))
}

pub fn verify_suites(a: &cli::Verify, s: &Settings, run: &mut RunDir) -> Result<()> {
    let seed = pick(a.seed, &s.file.seed, verify::DEFAULT_SEED);
    run.seed(seed);
    let ids: Vec<u32> = if a.suites.is_empty() { (1..=verify::SUITE_COUNT).collect() } else { a.suites.clone() };
    if let Some(bad) = ids.iter().find(|&&i| verify::suite_name(i).is_none()) {
        bail!(Usage(format!("no suite {bad}; suites are 1 to {}", verify::SUITE_COUNT)));
    }
    let mut reports = Vec::new();
    for id in ids {
        let r = verify::run_suite(id, seed).expect("suite id checked above");
        println!("{}", r.line());
        reports.push(r);
    }
    run.csv(
        "verify.csv",
        &header(&["suite", "name", "passed", "detail"]),
        reports
            .iter()
            .map(|r| vec![r.id.to_string(), r.name.to_string(), r.passed.to_string(), r.detail.clone()]),
    )?;
    let failed: Vec<u32> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    run.summary(&json!({"command": "verify", "seed": seed, "passed": failed.is_empty(), "suites": reports}))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(SuitesFailed(failed).into())
    }
}

pub fn synthesize(a: &cli::Synthesize, s: &Settings, run: &mut RunDir) -> Result<()> {
    let spec = SynthSpec::load(&a.spec).with_context(|| format!("loading synthesis spec {}", a.spec.display()))?;
    run.input("spec", &a.spec)?;
    let seed = pick(a.seed, &s.file.seed, settings::DEFAULT_SEED);
    run.seed(seed);
    let set = synthesize_traces(&spec, seed)?;
    write_traces(&set, &run.path("market.csv"), &run.path("programs.csv"))?;
    run.wrote("market.csv");
    run.wrote("programs.csv");
    run.summary(&json!({
        "command": "synthesize",
        "seed": seed,
        "hours": set.len(),
        "programs": set.program_ids,
    }))
}

