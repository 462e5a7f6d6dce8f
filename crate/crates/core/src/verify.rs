//! Oracle agreement suites.
//!
//! Each suite pits an analytic component against an independent slow path
//! (vertex enumeration, dense grids, Monte Carlo, quadrature) on seeded
//! random instances and reports pass/fail with the worst discrepancy seen.
//! Tolerances and runtime budgets are fixed constants, not knobs.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::deployment::{
    allocate_deployment, allocation_objective, cost_fixed_k, realized_cost, DeploymentSample, Profile,
};
use crate::error::Result;
use crate::fleet::{FleetConfig, FleetSpec};
use crate::online::{ogd_step, play, regret_bound, regret_curve, total_cost, hindsight_optimum, OgdConfig, RoundData};
use crate::oracle::{
    adaptive_simpson, compare_strategies, draw_samples, grid_mc_optimum, lp_deployment_oracle, reg_mc_cost,
    reg_mc_grid,
    sample_mean_cost, GridSpec,
};
use crate::program::{DeploymentModel, Direction, ProgramSpec, ProgramsConfig};
use crate::regulation::{expected_reg_cost, fit_lambda, sample_joint, RegInstance, RegJointModel, TruncatedExponential};
use crate::sgd::{self, SgdConfig};
use crate::single_machine::{best_program, kkt_residuals, profile_risk, risk_aware_solve, risk_objective, ProgramStats, RiskConfig};
use crate::traces::{synthesize_traces, SynthSpec};

pub const DEFAULT_SEED: u64 = 20_220_601;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {:>7.2}s/{:<4}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

pub const SUITE_COUNT: u32 = 9;

pub fn suite_name(id: u32) -> Option<&'static str> {
    Some(match id {
        1 => "greedy-vs-vertex-oracle",
        2 => "piecewise-max-structure",
        3 => "sgd-vs-grid-optimum",
        4 => "regulation-closed-form",
        5 => "single-machine-linear",
        6 => "risk-aware-kkt",
        7 => "online-regret",
        8 => "strategy-dominance",
        9 => "distribution-utilities",
        _ => return None,
    })
}

/// Runs suite `id` with a seed derived from `seed`.
pub fn run_suite(id: u32, seed: u64) -> Option<SuiteReport> {
    let name = suite_name(id)?;
    let seed = seed.wrapping_add(1_000_003 * id as u64);
    let start = Instant::now();
    let (budget, outcome) = match id {
        1 => (10.0, greedy_vs_vertex(seed)),
        2 => (10.0, piecewise_max(seed)),
        3 => (120.0, sgd_vs_grid(seed)),
        4 => (120.0, regulation_closed_form(seed)),
        5 => (30.0, single_machine_linear(seed)),
        6 => (30.0, risk_kkt(seed)),
        7 => (120.0, online_regret(seed)),
        8 => (120.0, strategy_dominance(seed)),
        9 => (60.0, distribution_utilities(seed)),
        _ => unreachable!(),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match outcome {
        Ok(c) => (c.passed, c.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if seconds > budget {
        passed = false;
        detail.push_str(&format!("; over the {budget}s budget"));
    }
    Some(SuiteReport {
        id,
        name,
        passed,
        detail,
        seconds,
        budget_seconds: budget,
    })
}

pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    (1..=SUITE_COUNT).filter_map(|id| run_suite(id, seed)).collect()
}

pub struct Check {
    pub passed: bool,
    pub detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_fleet(rng: &mut impl Rng, max_types: usize) -> Result<FleetSpec> {
    let k = rng.random_range(1..=max_types);
    let pairs: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.random_range(5.0..200.0), rng.random_range(0.0..200.0)))
        .collect();
    FleetSpec::from_pairs(&pairs)
}

/// Random profile with Σ c uniformly spread over [0, cap].
fn random_profile(rng: &mut impl Rng, n: usize, cap: f64) -> Profile {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    let scale = cap * rng.random::<f64>() / total;
    Profile::new(w.iter().map(|x| x * scale).collect())
}

fn random_sample(rng: &mut impl Rng, n: usize) -> Result<DeploymentSample> {
    DeploymentSample::new((0..n).map(|_| rng.random::<f64>()).collect())
}

// 1. Greedy shutdown cost equals the vertex-enumeration minimum.

const GREEDY_INSTANCES: usize = 1000;
const GREEDY_TOL: f64 = 1e-9;

fn greedy_vs_vertex(seed: u64) -> Result<Check> {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..GREEDY_INSTANCES {
        let fleet = random_fleet(&mut rng, 4)?;
        let n = rng.random_range(1..=3);
        let prices: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let c = random_profile(&mut rng, n, fleet.total_capacity());
        let eps = random_sample(&mut rng, n)?;
        let u: f64 = c.as_slice().iter().zip(eps.as_slice()).map(|(a, b)| a * b).sum();
        let greedy = allocation_objective(&fleet, &prices, &c, &allocate_deployment(&fleet, u)?);
        let closed = realized_cost(&fleet, &prices, &c, &eps);
        let oracle = lp_deployment_oracle(&fleet, &prices, &c, &eps)?;
        worst = worst.max((greedy - oracle).abs()).max((closed - oracle).abs());
    }
    Ok(Check {
        passed: worst <= GREEDY_TOL,
        detail: format!("{GREEDY_INSTANCES} instances, max |greedy - oracle| = {worst:.2e} (tol {GREEDY_TOL:.0e})"),
    })
}

// 2. Realized cost is the max of the affine pieces and is convex.

const STRUCTURE_POINTS: usize = 10_000;
const STRUCTURE_TOL: f64 = 1e-9;

fn piecewise_max(seed: u64) -> Result<Check> {
    let mut rng = rng(seed);
    let mut worst_max: f64 = 0.0;
    for _ in 0..STRUCTURE_POINTS {
        let fleet = random_fleet(&mut rng, 4)?;
        let n = rng.random_range(1..=3);
        let prices: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let c = random_profile(&mut rng, n, fleet.total_capacity());
        let eps = random_sample(&mut rng, n)?;
        let mut best = f64::NEG_INFINITY;
        for k in 0..fleet.len() {
            best = best.max(cost_fixed_k(&fleet, &prices, &c, &eps, k)?);
        }
        worst_max = worst_max.max((realized_cost(&fleet, &prices, &c, &eps) - best).abs());
    }
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..STRUCTURE_POINTS {
        let fleet = random_fleet(&mut rng, 4)?;
        let n = rng.random_range(1..=3);
        let prices: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let a = random_profile(&mut rng, n, fleet.total_capacity());
        let b = random_profile(&mut rng, n, fleet.total_capacity());
        let mid = Profile::new(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect());
        let eps = random_sample(&mut rng, n)?;
        let f = |c: &Profile| realized_cost(&fleet, &prices, c, &eps);
        worst_gap = worst_gap.max(f(&mid) - 0.5 * (f(&a) + f(&b)));
    }
    Ok(Check {
        passed: worst_max <= STRUCTURE_TOL && worst_gap <= STRUCTURE_TOL,
        detail: format!(
            "max |cost - max_k piece| = {worst_max:.2e}, worst midpoint excess = {worst_gap:.2e} over {STRUCTURE_POINTS} points/segments"
        ),
    })
}

// 3. SGD lands within its guarantee of the dense-grid Monte Carlo optimum.

const SGD_GRID_POINTS: usize = 200;
const SGD_MC_SAMPLES: usize = 100_000;
const SGD_ITERATIONS: usize = 10_000;
const SGD_BATCH: usize = 10;

/// Two machine sets of 150 MW at 130 MWh/coin and 100 MW at 110 MWh/coin,
/// coin at $20k and electricity at $50/MWh; reg-up style and reserve style
/// up programs.
pub fn sgd_benchmark_instance() -> Result<(FleetSpec, Vec<ProgramSpec>)> {
    let fleet = FleetConfig::from_json(
        r#"{"machines": [{"id": "older", "capacity_mw": 150, "energy_intensity_mwh_per_coin": 130},
                         {"id": "newer", "capacity_mw": 100, "energy_intensity_mwh_per_coin": 110}]}"#,
    )?
    .fleet_at(20_000.0, 50.0, false)?;
    let programs = vec![
        ProgramSpec {
            id: "regup".into(),
            price: 24.0,
            direction: Direction::Up,
            deployment: DeploymentModel::TruncExp { mean: 0.18 },
        },
        ProgramSpec {
            id: "reserve".into(),
            price: 31.0,
            direction: Direction::Up,
            deployment: DeploymentModel::TruncExp { mean: 0.27 },
        },
    ];
    Ok((fleet, programs))
}

fn sgd_vs_grid(seed: u64) -> Result<Check> {
    let (fleet, programs) = sgd_benchmark_instance()?;
    let pc = ProgramsConfig { programs: programs.clone(), regulation: None };
    let sampler = pc.sampler()?;
    let grid = GridSpec {
        points_per_axis: SGD_GRID_POINTS,
        mc_samples: SGD_MC_SAMPLES,
        seed,
    };
    let opt = grid_mc_optimum(&fleet, &programs, &sampler, &grid)?;
    let cfg = SgdConfig {
        iterations: SGD_ITERATIONS,
        batch: SGD_BATCH,
        seed: seed ^ 0x5eed,
        ..Default::default()
    };
    let res = sgd::solve(&fleet, &programs, &sampler, &cfg)?;

    // Same draws as the grid, so the difference has small variance.
    let samples = draw_samples(&sampler, &pc.directions(), SGD_MC_SAMPLES, seed);
    let prices = pc.prices();
    let at_sgd = sample_mean_cost(&fleet, &prices, &res.profile, &samples);
    let diff_se = paired_std_error(&fleet, &prices, &res.profile, &opt.profile, &samples);
    let gap = at_sgd.mean - opt.value;
    let allowed = res.bound + 3.0 * diff_se;
    Ok(Check {
        passed: gap <= allowed,
        detail: format!(
            "sgd {:?} cost {:.3}, grid {:?} cost {:.3}, gap {gap:.3} <= bound {:.3} + 3se {:.3}",
            round2(res.profile.as_slice()),
            at_sgd.mean,
            round2(opt.profile.as_slice()),
            opt.value,
            res.bound,
            3.0 * diff_se
        ),
    })
}

fn round2(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 100.0).round() / 100.0).collect()
}

fn paired_std_error(fleet: &FleetSpec, prices: &[f64], a: &Profile, b: &Profile, samples: &[f64]) -> f64 {
    let n = prices.len();
    let (mut s, mut s2, mut m) = (0.0, 0.0, 0usize);
    for row in samples.chunks_exact(n) {
        let eps = DeploymentSample::new(row.to_vec()).expect("sampled rates lie in [0, 1]");
        let d = realized_cost(fleet, prices, a, &eps) - realized_cost(fleet, prices, b, &eps);
        s += d;
        s2 += d * d;
        m += 1;
    }
    let mean = s / m as f64;
    ((s2 / m as f64 - mean * mean).max(0.0) * m as f64 / (m - 1) as f64 / m as f64).sqrt()
}

// 4. Closed-form regulation cost against Monte Carlo, and branch continuity.

const REG_MC_SAMPLES: usize = 1_000_000;
const REG_THETAS: [f64; 3] = [0.3, 0.5, 0.7];
const REG_MEAN_UP: f64 = 0.18;
const REG_MEAN_DN: f64 = 0.27;
const CONTINUITY_TOL: f64 = 1e-7;

fn regulation_closed_form(seed: u64) -> Result<Check> {
    let mut worst_z: f64 = 0.0;
    let mut worst_cont: f64 = 0.0;
    let mut failures = 0;
    let mut outliers = Vec::new();
    let mut regions = std::collections::BTreeSet::new();
    for (t, &theta) in REG_THETAS.iter().enumerate() {
        let model = RegJointModel::from_means(theta, REG_MEAN_UP, REG_MEAN_DN)?;
        let inst = RegInstance::new([150.0, 100.0], [103.8, 131.8], 14.0, 9.0, model)?;
        let cap = inst.capacity();
        // Rows in c_dn cross the down boundary at 150; columns take a share
        // of the remaining room so the up boundaries are crossed too.
        let mut points = Vec::with_capacity(25);
        for &c_dn in &[0.0, 60.0, 120.0, 180.0, 240.0] {
            for &share in &[0.0, 0.25, 0.5, 0.75, 1.0] {
                points.push((share * (cap - c_dn), c_dn));
            }
        }
        // One Monte Carlo experiment per theta, evaluated on the whole grid.
        let estimates = reg_mc_grid(&inst, &points, REG_MC_SAMPLES, seed + t as u64)?;
        for (&(c_up, c_dn), mc) in points.iter().zip(&estimates) {
            regions.insert(format!("{:?}/{:?}", inst.down_case(c_dn), inst.up_case(c_up, c_dn)));
            let exact = expected_reg_cost(&inst, c_up, c_dn)?;
            let err = (mc.mean - exact).abs();
            // Rounding slack matters only where the cost is identically 0.
            let fp = 1e-9 * (1.0 + exact.abs());
            if err > 3.0 * mc.std_error + fp {
                failures += 1;
                // Diagnostic only: a 20x rerun tells noise from bias.
                let big = reg_mc_cost(&inst, c_up, c_dn, 20 * REG_MC_SAMPLES, !seed)?;
                outliers.push(format!(
                    "theta {theta} ({c_up}, {c_dn}) z {:.2}, z {:.2} at 20x samples",
                    (mc.mean - exact) / mc.std_error,
                    (big.mean - exact) / big.std_error
                ));
            }
            if mc.std_error > 0.0 {
                worst_z = worst_z.max(err / mc.std_error);
            }
        }
        let c1 = inst.first_capacity;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        for q in 0..=20 {
            let room = cap - c1;
            let c_up = room * q as f64 / 20.0;
            worst_cont = worst_cont.max(rel(inst.cost_dn1(c_up, c1), inst.cost_dn2(c_up, c1)));
            worst_cont = worst_cont.max(rel(inst.cost_up2(c_up, c1), inst.cost_up3(c_up, c1)));
            let c_dn = c1 * q as f64 / 20.0;
            worst_cont = worst_cont.max(rel(inst.cost_up1(c1 - c_dn, c_dn), inst.cost_up2(c1 - c_dn, c_dn)));
        }
    }
    Ok(Check {
        passed: failures == 0 && worst_cont <= CONTINUITY_TOL,
        detail: format!(
            "75 points over regions {{{}}}, {failures} outside 3se (max z {worst_z:.2}){}, max boundary jump {worst_cont:.1e}",
            regions.into_iter().collect::<Vec<_>>().join(", "),
            if outliers.is_empty() { String::new() } else { format!(" [{}]", outliers.join("; ")) }
        ),
    })
}

// 5. The single-machine linear solution against an exhaustive grid.

const LINEAR_INSTANCES: usize = 500;
const LINEAR_GRID: usize = 1000;

fn random_stats(rng: &mut impl Rng, with_variance: bool) -> Result<ProgramStats> {
    let m = rng.random_range(0.0..1.0);
    let var = if with_variance && rng.random::<f64>() < 0.85 {
        m * (1.0 - m) * rng.random::<f64>()
    } else {
        0.0
    };
    ProgramStats::new(rng.random_range(0.0..60.0), m, var)
}

/// Minimum of a linear objective over the grid {c = h·k, Σ c ≤ cap}. The
/// last axis is linear for fixed leading coordinates, so only its two end
/// points are scanned.
fn linear_grid_min(unit: &[f64], cap: f64, points: usize) -> f64 {
    let h = cap / (points - 1) as f64;
    fn rec(unit: &[f64], h: f64, left: usize, acc: f64) -> f64 {
        if unit.len() == 1 {
            return acc.min(acc + unit[0] * h * left as f64);
        }
        (0..=left)
            .map(|k| rec(&unit[1..], h, left - k, acc + unit[0] * h * k as f64))
            .fold(f64::INFINITY, f64::min)
    }
    rec(unit, h, points - 1, 0.0)
}

fn single_machine_linear(seed: u64) -> Result<Check> {
    let mut rng = rng(seed);
    let mut worst_ratio: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..LINEAR_INSTANCES {
        let n = rng.random_range(1..=3);
        let progs: Vec<ProgramStats> = (0..n).map(|_| random_stats(&mut rng, false)).collect::<Result<_>>()?;
        let r = rng.random_range(0.0..200.0);
        let cap = rng.random_range(10.0..300.0);
        let unit: Vec<f64> = progs.iter().map(|p| p.unit_cost(r)).collect();
        let c = best_program(&progs, r, cap)?;
        let value: f64 = c.as_slice().iter().zip(&unit).map(|(a, b)| a * b).sum();
        let grid = linear_grid_min(&unit, cap, LINEAR_GRID);
        let scale = r.max(progs.iter().map(|p| p.price).fold(0.0, f64::max));
        let resolution = cap / (LINEAR_GRID - 1) as f64;
        let gap = grid - value;
        // The closed form may not lose to the grid beyond rounding.
        if gap > resolution * scale || gap < -1e-9 * (1.0 + value.abs()) {
            failures += 1;
        }
        if scale > 0.0 {
            worst_ratio = worst_ratio.max(gap.abs() / (resolution * scale));
        }
    }
    Ok(Check {
        passed: failures == 0,
        detail: format!(
            "{LINEAR_INSTANCES} instances, {failures} failures, max |gap| / (h max(r, p)) = {worst_ratio:.2e}"
        ),
    })
}

// 6. KKT conditions of the mean-variance solution, and its trade-off.

const RISK_INSTANCES: usize = 500;
const KKT_TOL: f64 = 1e-8;
const RISK_GRID: usize = 20;

fn risk_kkt(seed: u64) -> Result<Check> {
    let mut rng = rng(seed);
    let mut worst_kkt: f64 = 0.0;
    let mut worst_reduction: f64 = 0.0;
    let mut worst_rise: f64 = 0.0;
    for _ in 0..RISK_INSTANCES {
        let n = rng.random_range(1..=4);
        let progs: Vec<ProgramStats> = (0..n).map(|_| random_stats(&mut rng, true)).collect::<Result<_>>()?;
        let r = rng.random_range(20.0..200.0);
        let cap = rng.random_range(10.0..300.0);
        let risk = RiskConfig {
            risk_weight: 10f64.powf(rng.random_range(-6.0..-2.0)),
        };
        let c = risk_aware_solve(&progs, r, cap, &risk)?;
        worst_kkt = worst_kkt.max(kkt_residuals(&progs, r, cap, &risk, &c).max());

        let neutral = RiskConfig { risk_weight: 0.0 };
        let a = risk_aware_solve(&progs, r, cap, &neutral)?;
        let b = best_program(&progs, r, cap)?;
        let (va, vb) = (risk_objective(&progs, r, &neutral, &a), risk_objective(&progs, r, &neutral, &b));
        worst_reduction = worst_reduction.max((va - vb).abs() / (1.0 + vb.abs()));

        let mut prev = f64::INFINITY;
        for j in 0..RISK_GRID {
            let w = 1e-6 * 10f64.powf(5.0 * j as f64 / (RISK_GRID - 1) as f64);
            let c = risk_aware_solve(&progs, r, cap, &RiskConfig { risk_weight: w })?;
            let (_, var) = profile_risk(&progs, r, &c);
            worst_rise = worst_rise.max((var - prev) / prev.max(1.0));
            prev = var;
        }
    }
    Ok(Check {
        passed: worst_kkt <= KKT_TOL && worst_reduction <= 1e-12 && worst_rise <= 1e-9,
        detail: format!(
            "{RISK_INSTANCES} instances, max KKT residual {worst_kkt:.1e}, risk-neutral mismatch {worst_reduction:.1e}, max variance rise over {RISK_GRID} weights {worst_rise:.1e}"
        ),
    })
}

// 7. Online regret against the worst-case bound, and plateau on stationary
//    sequences.

const ADVERSARIAL_RUNS: usize = 200;
const ONLINE_HORIZON: usize = 500;
const STATIONARY_RUNS: usize = 20;

#[derive(Debug, Clone, Copy)]
enum Adversary {
    Uniform,
    Alternating,
    Regimes,
    Reactive,
}

/// A random bounded sequence. `Reactive` picks each round against the
/// iterate OGD will hold, which is reproducible because OGD is
/// deterministic.
fn adversarial_rounds(rng: &mut impl Rng, kind: Adversary, cfg: &OgdConfig, max_reward: f64, max_price: f64, caps: &[f64]) -> Result<Vec<RoundData>> {
    let n = 2;
    let mut rounds = Vec::with_capacity(cfg.horizon);
    let mut iterate = Profile::zeros(n);
    let mut regime = (0usize, 0usize);
    for t in 0..cfg.horizon {
        let rewards: Vec<f64>;
        let prices: Vec<f64>;
        let eps: Vec<f64>;
        match kind {
            Adversary::Uniform => {
                rewards = caps.iter().map(|_| rng.random_range(0.0..=max_reward)).collect();
                prices = (0..n).map(|_| rng.random_range(0.0..=max_price)).collect();
                eps = (0..n).map(|_| rng.random::<f64>()).collect();
            }
            Adversary::Alternating => {
                let odd = t % 2 == 1;
                rewards = caps.iter().map(|_| if odd { max_reward } else { 0.0 }).collect();
                prices = vec![if odd { 0.0 } else { max_price }; n];
                eps = if odd { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            }
            Adversary::Regimes => {
                if regime.0 == 0 {
                    regime = (rng.random_range(5..80), rng.random_range(0..4));
                }
                regime.0 -= 1;
                let s = regime.1;
                rewards = caps.iter().map(|_| if s & 1 == 1 { max_reward } else { 0.2 * max_reward }).collect();
                prices = if s & 2 == 2 { vec![max_price, 0.1 * max_price] } else { vec![0.1 * max_price, max_price] };
                eps = (0..n).map(|i| if (s + i).is_multiple_of(2) { 1.0 } else { rng.random::<f64>() * 0.2 }).collect();
            }
            Adversary::Reactive => {
                let c = iterate.as_slice();
                let heavy = if c[0] >= c[1] { 0 } else { 1 };
                rewards = caps.iter().map(|_| max_reward).collect();
                prices = (0..n).map(|i| if i == heavy { 0.0 } else { max_price }).collect();
                eps = (0..n).map(|i| if i == heavy { 1.0 } else { 0.0 }).collect();
            }
        }
        let pairs: Vec<(f64, f64)> = caps.iter().copied().zip(rewards).collect();
        let round = RoundData::observed(FleetSpec::from_pairs(&pairs)?, prices, eps, None);
        if let Adversary::Reactive = kind {
            let g = round.subgradient(&iterate);
            iterate = ogd_step(&iterate, &g, t + 1, cfg);
        }
        rounds.push(round);
    }
    Ok(rounds)
}

/// I.i.d. rounds on the benchmark fleet: fixed prices, truncated
/// exponential deployment.
fn stationary_rounds(rng: &mut impl Rng, horizon: usize) -> Result<Vec<RoundData>> {
    let (fleet, _) = sgd_benchmark_instance()?;
    let prices = vec![rng.random_range(10.0..40.0), rng.random_range(10.0..40.0)];
    let laws = [
        TruncatedExponential::with_mean(rng.random_range(0.1..0.35))?,
        TruncatedExponential::with_mean(rng.random_range(0.1..0.35))?,
    ];
    Ok((0..horizon)
        .map(|_| {
            let eps = laws.iter().map(|l| l.sample(rng)).collect();
            RoundData::observed(fleet.clone(), prices.clone(), eps, None)
        })
        .collect())
}

/// Regret of the played sequence at each checkpoint, per stationary run.
pub fn stationary_regret(seed: u64, runs: usize, horizon: usize, checkpoints: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(runs);
    for _ in 0..runs {
        let rounds = stationary_rounds(&mut rng, horizon)?;
        let fleet = &rounds[0].fleet;
        let cfg = OgdConfig::from_bounds(horizon, 2, fleet.total_capacity(), fleet.max_reward(), 40.0, 1);
        let outcomes = play(&rounds, &cfg)?;
        out.push(regret_curve(&rounds, &outcomes, cfg.capacity, checkpoints)?);
    }
    Ok(out)
}

fn online_regret(seed: u64) -> Result<Check> {
    let mut rng = rng(seed);
    let kinds = [Adversary::Uniform, Adversary::Alternating, Adversary::Regimes, Adversary::Reactive];
    let mut violations = 0;
    let mut worst_ratio: f64 = f64::NEG_INFINITY;
    for run in 0..ADVERSARIAL_RUNS {
        let max_reward = rng.random_range(50.0..200.0);
        let max_price = rng.random_range(10.0..80.0);
        let k = rng.random_range(1..=3);
        let caps: Vec<f64> = (0..k).map(|_| rng.random_range(20.0..150.0)).collect();
        let cap: f64 = caps.iter().sum();
        let cfg = OgdConfig::from_bounds(ONLINE_HORIZON, 2, cap, max_reward, max_price, 1);
        let rounds = adversarial_rounds(&mut rng, kinds[run % kinds.len()], &cfg, max_reward, max_price, &caps)?;
        let outcomes = play(&rounds, &cfg)?;
        let played: f64 = outcomes.iter().map(|o| o.cost_incurred).sum();
        let best = hindsight_optimum(&rounds, cap)?;
        let regret = played - total_cost(&rounds, best.as_slice());
        let bound = regret_bound(ONLINE_HORIZON, 2, cap, max_reward, max_price);
        if regret > bound {
            violations += 1;
        }
        worst_ratio = worst_ratio.max(regret / bound);
    }

    let t = ONLINE_HORIZON;
    let curves = stationary_regret(seed ^ 0xa5a5, STATIONARY_RUNS, t, &[t / 4, t * 9 / 10, t])?;
    let mean = |i: usize| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64;
    let (quarter, late, full) = (mean(0), mean(1), mean(2));
    let avg_ratio = (full / t as f64) / (quarter / (t / 4) as f64);
    let tail_share = (full - late) / full;
    Ok(Check {
        passed: violations == 0 && avg_ratio <= 0.5 && tail_share < 0.05,
        detail: format!(
            "{ADVERSARIAL_RUNS} adversarial runs, {violations} over bound (max regret/bound {worst_ratio:.3}); stationary mean regret {quarter:.0} @T/4, {full:.0} @T: avg-regret ratio {avg_ratio:.3} (<= 0.5), last-10% share {:.2}% (< 5%)",
            100.0 * tail_share
        ),
    })
}

// 8. Per-hour profiles against the fixed profile, the even split and
//    staying out.

/// A week of hourly slots with a pronounced daily cycle: cheap nights and
/// afternoon peaks above the price-responsive trigger.
pub const WEEK_SPEC: &str = r#"{
  "start": "2022-07-11T00:00:00Z",
  "hours": 168,
  "rt_price": {
    "mean": [24, 22, 21, 20, 20, 22, 26, 30, 34, 38, 42, 46, 50, 56, 63, 70, 74, 70, 62, 54, 46, 38, 32, 27],
    "std": [4],
    "spike_probability": 0.02,
    "spike_price": 140
  },
  "coin_price": {"mean": [20000], "std": [300]},
  "programs": [
    {"id": "price_responsive",
     "price": {"mean": [28], "std": [2]},
     "deployment": {"kind": "price_responsive", "threshold": 60}},
    {"id": "regup",
     "price": {"mean": [10, 10, 10, 10, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 21, 19, 17, 15, 13, 11, 10], "std": [1.5]},
     "deployment": {"kind": "trunc_exp", "mean": 0.18}}
  ]
}"#;

pub const WEEK_FLEET: &str = r#"{"machines": [
  {"id": "older", "capacity_mw": 150, "energy_intensity_mwh_per_coin": 130},
  {"id": "newer", "capacity_mw": 100, "energy_intensity_mwh_per_coin": 110}]}"#;

pub const WEEK_PROGRAMS: &str = r#"{"programs": [
  {"id": "price_responsive", "price": 0, "deployment": {"kind": "bernoulli", "probability": 0.3}},
  {"id": "regup", "price": 0, "direction": "up", "deployment": {"kind": "trunc_exp", "mean": 0.18}}]}"#;

fn strategy_dominance(seed: u64) -> Result<Check> {
    let traces = synthesize_traces(&SynthSpec::from_json(WEEK_SPEC)?, seed)?;
    let fleet = FleetConfig::from_json(WEEK_FLEET)?;
    let programs = ProgramsConfig::from_json(WEEK_PROGRAMS)?;
    let cfg = SgdConfig { seed, ..Default::default() };
    let r = compare_strategies(&traces, &fleet, &programs, 0..traces.len(), &cfg, false)?;
    let passed = r.optimized >= r.fixed_profile && r.optimized >= r.even_split && r.fixed_profile >= r.none && r.even_split >= r.none;
    Ok(Check {
        passed,
        detail: format!(
            "mean $/h: per-hour {:.1}, fixed {:.1}, even split {:.1}, none {:.1}; margin over even split {}",
            r.optimized,
            r.fixed_profile,
            r.even_split,
            r.none,
            r.margin_over_even_split().map_or("n/a".into(), |m| format!("{:.1}%", 100.0 * m))
        ),
    })
}

// 9. Truncated exponential moments, rate fitting and the joint sampler.

const DIST_TOL: f64 = 1e-9;
const JOINT_DRAWS: usize = 1_000_000;

fn distribution_utilities(seed: u64) -> Result<Check> {
    let mut worst_mean: f64 = 0.0;
    let mut worst_trip: f64 = 0.0;
    let steps = 200;
    for s in 0..=steps {
        let lambda = 1e-4 * (50.0f64 / 1e-4).powf(s as f64 / steps as f64);
        let d = TruncatedExponential::new(lambda)?;
        let quad = adaptive_simpson(&|x| x * d.pdf(x), 0.0, 1.0, 1e-13);
        worst_mean = worst_mean.max((d.mean() - quad).abs());
        let back = fit_lambda(d.mean())?;
        worst_trip = worst_trip.max((back - lambda).abs() / lambda.max(1.0));
        let m = 0.5 * s as f64 / steps as f64;
        if m > 0.0 && m < 0.5 {
            let again = TruncatedExponential::new(fit_lambda(m)?)?.mean();
            worst_trip = worst_trip.max((again - m).abs());
        }
    }

    let mut rng = rng(seed);
    let mut worst_z: f64 = 0.0;
    for &theta in &REG_THETAS {
        let model = RegJointModel::from_means(theta, REG_MEAN_UP, REG_MEAN_DN)?;
        let (mut su, mut su2, mut sd, mut sd2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..JOINT_DRAWS {
            let (u, d) = sample_joint(&model, &mut rng as &mut dyn RngCore);
            su += u;
            su2 += u * u;
            sd += d;
            sd2 += d * d;
        }
        let m = JOINT_DRAWS as f64;
        let z = |s: f64, s2: f64, expect: f64| {
            let mean = s / m;
            let se = ((s2 / m - mean * mean) / (m - 1.0)).sqrt();
            (mean - expect).abs() / se
        };
        worst_z = worst_z
            .max(z(su, su2, (1.0 - theta) * REG_MEAN_UP))
            .max(z(sd, sd2, theta * REG_MEAN_DN));
    }
    Ok(Check {
        passed: worst_mean <= DIST_TOL && worst_trip <= DIST_TOL && worst_z <= 3.0,
        detail: format!(
            "max |mean - quadrature| {worst_mean:.1e}, max round-trip error {worst_trip:.1e}, joint-mean max z {worst_z:.2} at {JOINT_DRAWS} draws"
        ),
    })
}
