//! Slow reference computations used to check the analytic solvers, and the
//! strategy comparison harness.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deployment::{apply_directions, dot, realized_cost, Allocation, DeploymentSample, Profile};
use crate::error::{Error, Result};
use crate::fleet::{FleetConfig, FleetSpec};
use crate::program::{DeploymentSampler, Direction, ProgramSpec, ProgramsConfig};
use crate::regulation::RegInstance;
use crate::sgd::{solve_scenarios, Scenario, SgdConfig};
use crate::traces::{program_columns, to_rounds, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Fills machines in `order` until `total` is covered.
pub fn fill_in_order(fleet: &FleetSpec, total: f64, order: &[usize]) -> Allocation {
    let mut d = vec![0.0; fleet.len()];
    let mut remaining = total.max(0.0);
    for &k in order {
        let take = remaining.min(fleet.capacity(k));
        d[k] = take;
        remaining -= take;
    }
    Allocation { d }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum of Σ r_k d_k − Σ c_i p_i over the vertices of the deployment
/// polytope, each obtained by filling machines in some order.
pub fn lp_deployment_oracle(fleet: &FleetSpec, prices: &[f64], profile: &Profile, sample: &DeploymentSample) -> Result<f64> {
    if fleet.len() > 6 {
        return Err(Error::invalid("vertex enumeration is limited to six machine types"));
    }
    let total = dot(profile.as_slice(), sample.as_slice());
    if total > fleet.total_capacity() * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!("deployment {total} exceeds fleet capacity")));
    }
    let revenue = dot(profile.as_slice(), prices);
    let rewards = fleet.rewards();
    Ok(permutations(fleet.len())
        .iter()
        .map(|order| dot(&rewards, &fill_in_order(fleet, total, order).d) - revenue)
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        Self {
            mean,
            std_error: (var / nf).sqrt(),
        }
    }
}

/// `count` direction-transformed samples, flattened row-major.
pub fn draw_samples(sampler: &dyn DeploymentSampler, directions: &[Direction], count: usize, seed: u64) -> Vec<f64> {
    let n = sampler.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n * count];
    for row in out.chunks_mut(n.max(1)) {
        sampler.sample_into(&mut rng as &mut dyn RngCore, row);
        apply_directions(row, directions);
    }
    out
}

/// Precomputed per-type tables for fast cost evaluation.
struct CostTable {
    cumulative: Vec<f64>,
    offsets: Vec<f64>,
    rewards: Vec<f64>,
}

impl CostTable {
    fn new(fleet: &FleetSpec) -> Self {
        let mut cumulative = Vec::with_capacity(fleet.len());
        let mut acc = 0.0;
        for m in fleet.machines() {
            acc += m.capacity_mw;
            cumulative.push(acc);
        }
        let rewards = fleet.rewards();
        let offsets = (0..fleet.len())
            .map(|k| (0..k).map(|j| (rewards[j] - rewards[k]) * fleet.capacity(j)).sum())
            .collect();
        Self {
            cumulative,
            offsets,
            rewards,
        }
    }

    /// Deployment cost excluding the price term.
    #[inline]
    fn deploy(&self, u: f64) -> f64 {
        let last = self.cumulative.len() - 1;
        let k = self.cumulative.iter().position(|&c| u <= c).unwrap_or(last);
        self.offsets[k] + self.rewards[k] * u
    }
}

/// Mean cost of `profile` over flattened samples, with its standard error.
pub fn sample_mean_cost(fleet: &FleetSpec, prices: &[f64], profile: &Profile, samples: &[f64]) -> McEstimate {
    let table = CostTable::new(fleet);
    let c = profile.as_slice();
    let n = c.len();
    let revenue = dot(c, prices);
    let (mut s, mut s2) = (0.0, 0.0);
    for row in samples.chunks(n) {
        let v = table.deploy(dot(c, row).max(0.0)) - revenue;
        s += v;
        s2 += v * v;
    }
    McEstimate::from_sums(s, s2, samples.len() / n)
}

/// Monte Carlo expected cost of a profile under a program sampler.
pub fn mc_expected_cost(
    fleet: &FleetSpec,
    programs: &[ProgramSpec],
    sampler: &dyn DeploymentSampler,
    profile: &Profile,
    samples: usize,
    seed: u64,
) -> McEstimate {
    let prices: Vec<f64> = programs.iter().map(|p| p.price).collect();
    let directions: Vec<Direction> = programs.iter().map(|p| p.direction).collect();
    let flat = draw_samples(sampler, &directions, samples, seed);
    sample_mean_cost(fleet, &prices, profile, &flat)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOptimum {
    pub profile: Profile,
    pub value: f64,
    pub std_error: f64,
    pub points: usize,
}

/// Feasible lattice points {c = h·k : k ∈ ℕ^n, Σ c ≤ cap} with
/// h = cap/(points − 1), in lexicographic order.
pub fn feasible_grid(n: usize, cap: f64, points: usize) -> Vec<Vec<f64>> {
    let h = cap / (points - 1) as f64;
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        out.push(idx.iter().map(|&i| i as f64 * h).collect());
        // Increment the last coordinate that can grow, resetting the rest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx.iter().sum::<usize>() < points {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Grid minimum of the Monte Carlo expected cost, with one set of samples
/// shared by every grid point. Ties go to the lexicographically smallest
/// profile.
pub fn grid_mc_optimum(
    fleet: &FleetSpec,
    programs: &[ProgramSpec],
    sampler: &dyn DeploymentSampler,
    grid: &GridSpec,
) -> Result<GridOptimum> {
    let n = programs.len();
    if grid.points_per_axis < 2 || grid.mc_samples == 0 {
        return Err(Error::invalid("grid needs at least 2 points per axis and one sample"));
    }
    if n == 0 || n > 3 {
        return Err(Error::invalid(format!("dense grids support 1 to 3 programs, got {n}")));
    }
    let prices: Vec<f64> = programs.iter().map(|p| p.price).collect();
    let directions: Vec<Direction> = programs.iter().map(|p| p.direction).collect();
    let samples = draw_samples(sampler, &directions, grid.mc_samples, grid.seed);
    let table = CostTable::new(fleet);
    let cap = fleet.total_capacity();

    let points = feasible_grid(n, cap, grid.points_per_axis);
    let mut best: Option<(f64, &Vec<f64>)> = None;
    for c in &points {
        let mut s = 0.0;
        for row in samples.chunks_exact(n) {
            s += table.deploy(dot(c, row).max(0.0));
        }
        let v = s / grid.mc_samples as f64 - dot(c, &prices);
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, c));
        }
    }
    let (_, c) = best.expect("grid is nonempty");
    let profile = Profile::new(c.clone());
    let est = sample_mean_cost(fleet, &prices, &profile, &samples);
    Ok(GridOptimum {
        profile,
        value: est.mean,
        std_error: est.std_error,
        points: points.len(),
    })
}

/// Monte Carlo estimate of the regulation cost through the generic model:
/// joint draws, the down-direction transform, and the realized cost.
pub fn reg_mc_cost(instance: &RegInstance, c_up: f64, c_dn: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    Ok(reg_mc_grid(instance, &[(c_up, c_dn)], samples, seed)?.remove(0))
}

/// [`reg_mc_cost`] at several profiles, all charged against one shared set
/// of joint draws.
pub fn reg_mc_grid(instance: &RegInstance, points: &[(f64, f64)], samples: usize, seed: u64) -> Result<Vec<McEstimate>> {
    let fleet = FleetSpec::from_pairs(&[
        (instance.first_capacity, instance.r1),
        (instance.second_capacity, instance.r2),
    ])?;
    let profiles: Vec<Profile> = points.iter().map(|&(u, d)| Profile::new(vec![u, d])).collect();
    for p in &profiles {
        p.validate(fleet.total_capacity())?;
    }
    let prices = [instance.p_up, instance.p_dn];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![(0.0, 0.0); points.len()];
    for _ in 0..samples {
        let (e_up, e_dn) = instance.model.sample(&mut rng);
        let eps = DeploymentSample::new(vec![e_up, 1.0 - e_dn])?;
        for (p, (s, s2)) in profiles.iter().zip(sums.iter_mut()) {
            let v = realized_cost(&fleet, &prices, p, &eps);
            *s += v;
            *s2 += v * v;
        }
    }
    Ok(sums.into_iter().map(|(s, s2)| McEstimate::from_sums(s, s2, samples)).collect())
}

/// Adaptive Simpson quadrature of `f` on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyReport {
    pub slots: usize,
    /// Mean realized profit per hourly slot, $/h.
    pub optimized: f64,
    pub fixed_profile: f64,
    pub even_split: f64,
    pub none: f64,
    pub hourly_profiles: BTreeMap<u32, Profile>,
    pub fixed: Profile,
    pub even: Profile,
}

impl StrategyReport {
    /// Relative profit gain of the per-hour profiles over the even split.
    pub fn margin_over_even_split(&self) -> Option<f64> {
        (self.even_split.abs() > 0.0).then(|| (self.optimized - self.even_split) / self.even_split.abs())
    }
}

/// Profit of four strategies over the slots in `window`, each charged with
/// the revealed deployment of its slot:
/// per-hour profiles optimized on that hour's slots, one profile optimized
/// on all slots, capacity split evenly across programs, and no
/// participation.
pub fn compare_strategies(
    traces: &TraceSet,
    fleet: &FleetConfig,
    programs: &ProgramsConfig,
    window: Range<usize>,
    sgd: &SgdConfig,
    clamp_negative: bool,
) -> Result<StrategyReport> {
    if window.is_empty() || window.end > traces.len() {
        return Err(Error::InsufficientData(format!(
            "window {window:?} not covered by {} trace records",
            traces.len()
        )));
    }
    program_columns(traces, programs)?;
    let sub = TraceSet {
        program_ids: traces.program_ids.clone(),
        records: traces.records[window].to_vec(),
    };
    let rounds = to_rounds(&sub, fleet, programs, clamp_negative)?;
    let scenario = |i: usize| Scenario {
        fleet: rounds[i].fleet.clone(),
        prices: rounds[i].prices.clone(),
        epsilon: rounds[i].epsilon.clone(),
    };
    let hours: Vec<u32> = sub.records.iter().map(|r| r.hour()).collect();

    let mut by_hour: BTreeMap<u32, Vec<Scenario>> = BTreeMap::new();
    for (i, h) in hours.iter().enumerate() {
        by_hour.entry(*h).or_default().push(scenario(i));
    }
    let mut hourly_profiles = BTreeMap::new();
    for (h, pool) in &by_hour {
        let cfg = SgdConfig {
            seed: sgd.seed.wrapping_add(*h as u64),
            record_trajectory: false,
            ..sgd.clone()
        };
        hourly_profiles.insert(*h, solve_scenarios(pool, &cfg)?.profile);
    }
    let pooled: Vec<Scenario> = (0..rounds.len()).map(scenario).collect();
    let fixed = solve_scenarios(&pooled, &SgdConfig { record_trajectory: false, ..sgd.clone() })?.profile;

    let n = programs.programs.len();
    let cap = fleet.total_capacity();
    let even = Profile::new(vec![cap / n as f64; n]);
    let mean_profit = |pick: &dyn Fn(usize) -> Profile| {
        rounds.iter().enumerate().map(|(i, r)| -r.cost(&pick(i))).sum::<f64>() / rounds.len() as f64
    };
    Ok(StrategyReport {
        slots: rounds.len(),
        optimized: mean_profit(&|i| hourly_profiles[&hours[i]].clone()),
        fixed_profile: mean_profit(&|_| fixed.clone()),
        even_split: mean_profit(&|_| even.clone()),
        none: 0.0,
        hourly_profiles,
        fixed,
        even,
    })
}
