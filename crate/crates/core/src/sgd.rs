//! Projected stochastic subgradient descent on the expected slot cost.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deployment::{apply_directions, critical_index, dot, DeploymentSample, Profile};
use crate::error::{Error, Result};
use crate::fleet::FleetSpec;
use crate::program::{DeploymentSampler, Direction, ProgramSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    /// Replaces the default step numerator D/G.
    #[serde(default)]
    pub step_scale: Option<f64>,
    #[serde(default)]
    pub record_trajectory: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch: 10,
            seed: 0,
            step_scale: None,
            record_trajectory: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        if let Some(s) = self.step_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("step scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdResult {
    /// Average of all iterates.
    pub profile: Profile,
    pub trajectory: Option<Vec<Profile>>,
    /// Guaranteed expected suboptimality of `profile`.
    pub bound: f64,
}

/// Batch subgradient (1/M) Σ_m (r_{k_c(m)} ε^(m) − p) of the empirical cost.
///
/// Samples must already be direction-transformed.
pub fn sample_subgradient(
    fleet: &FleetSpec,
    prices: &[f64],
    profile: &Profile,
    samples: &[DeploymentSample],
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("subgradient needs at least one sample"));
    }
    let n = prices.len();
    if profile.len() != n || samples.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("profile, prices and samples disagree in dimension"));
    }
    let mut grad = vec![0.0; n];
    for s in samples {
        accumulate(fleet, prices, profile.as_slice(), s.as_slice(), &mut grad);
    }
    let m = samples.len() as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    Ok(grad)
}

fn accumulate(fleet: &FleetSpec, prices: &[f64], c: &[f64], eps: &[f64], grad: &mut [f64]) {
    let u = dot(c, eps).max(0.0);
    let r = fleet.reward(critical_index(fleet, u));
    for ((g, e), p) in grad.iter_mut().zip(eps).zip(prices) {
        *g += r * e - p;
    }
}

/// Euclidean projection onto {c ≥ 0, Σ c ≤ cap}.
pub fn project_feasible(point: &[f64], cap: f64) -> Profile {
    let clipped: Vec<f64> = point.iter().map(|&x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return Profile::new(clipped);
    }
    if cap <= 0.0 {
        return Profile::zeros(point.len());
    }
    // Onto the face Σ c = cap: find the shift τ with Σ max(x − τ, 0) = cap.
    let mut sorted = point.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut tau = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        prefix += x;
        let t = (prefix - cap) / (j + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    let mut out: Vec<f64> = point.iter().map(|&x| (x - tau).max(0.0)).collect();
    // Rounding can leave the sum a few ulps above cap.
    let total: f64 = out.iter().sum();
    if total > cap {
        let scale = cap / total;
        out.iter_mut().for_each(|x| *x *= scale);
    }
    Profile::new(out)
}

/// Diameter bound of the feasible set.
pub fn diameter(programs: usize, cap: f64) -> f64 {
    if programs <= 1 {
        cap
    } else {
        std::f64::consts::SQRT_2 * cap
    }
}

/// Bound on the subgradient norm, √N · max(r_K, p_max).
pub fn grad_bound(programs: usize, max_reward: f64, max_price: f64) -> f64 {
    (programs as f64).sqrt() * max_reward.max(max_price)
}

/// D / (G √j) for iteration `j ≥ 1`.
pub fn step_size(j: usize, diameter: f64, grad_bound: f64) -> f64 {
    if grad_bound <= 0.0 {
        return 0.0;
    }
    diameter / (grad_bound * (j as f64).sqrt())
}

/// 3 D √N max(r_K, p_max) / (2 √J).
pub fn suboptimality_bound(iterations: usize, programs: usize, max_reward: f64, max_price: f64, cap: f64) -> f64 {
    3.0 * diameter(programs, cap) * grad_bound(programs, max_reward, max_price) / (2.0 * (iterations as f64).sqrt())
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

/// Core loop shared by the sampler and scenario front ends. `draw` adds one
/// sample subgradient at `c` into `grad`.
fn descend(
    n: usize,
    cap: f64,
    max_reward: f64,
    max_price: f64,
    cfg: &SgdConfig,
    mut draw: impl FnMut(&[f64], &mut ChaCha8Rng, &mut [f64]),
) -> Result<SgdResult> {
    cfg.validate()?;
    let d = diameter(n, cap);
    let g = grad_bound(n, max_reward, max_price);
    let numerator = cfg.step_scale.unwrap_or(d);
    let g_eff = if cfg.step_scale.is_some() { 1.0 } else { g };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut c = vec![0.0; n];
    let mut sum = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut trajectory = cfg.record_trajectory.then(|| Vec::with_capacity(cfg.iterations));
    for j in 1..=cfg.iterations {
        for (s, x) in sum.iter_mut().zip(&c) {
            *s += x;
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(Profile::new(c.clone()));
        }
        grad.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..cfg.batch {
            draw(&c, &mut rng, &mut grad);
        }
        let step = step_size(j, numerator, g_eff) / cfg.batch as f64;
        let next: Vec<f64> = c.iter().zip(&grad).map(|(x, gr)| x - step * gr).collect();
        c = project_feasible(&next, cap).into_inner();
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("iterate became non-finite at step {j}")));
        }
    }
    let avg: Vec<f64> = sum.iter().map(|s| s / cfg.iterations as f64).collect();
    Ok(SgdResult {
        profile: project_feasible(&avg, cap),
        trajectory,
        bound: suboptimality_bound(cfg.iterations, n, max_reward, max_price, cap),
    })
}

/// Runs the descent against i.i.d. draws from `sampler`.
pub fn solve(
    fleet: &FleetSpec,
    programs: &[ProgramSpec],
    sampler: &dyn DeploymentSampler,
    cfg: &SgdConfig,
) -> Result<SgdResult> {
    let n = programs.len();
    if n == 0 || sampler.dimension() != n {
        return Err(Error::invalid("sampler dimension must match the program count"));
    }
    let prices: Vec<f64> = programs.iter().map(|p| p.price).collect();
    let directions: Vec<Direction> = programs.iter().map(|p| p.direction).collect();
    let mut eps = vec![0.0; n];
    descend(
        n,
        fleet.total_capacity(),
        fleet.max_reward(),
        max_of(prices.iter().copied()),
        cfg,
        |c, rng, grad| {
            sampler.sample_into(rng as &mut dyn RngCore, &mut eps);
            apply_directions(&mut eps, &directions);
            accumulate(fleet, &prices, c, &eps, grad);
        },
    )
}

/// One historical slot: its fleet rewards, program prices and
/// direction-transformed deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub fleet: FleetSpec,
    pub prices: Vec<f64>,
    pub epsilon: Vec<f64>,
}

/// Runs the descent on bootstrap draws from a pool of historical slots.
///
/// All scenarios must share the program count and the fleet capacity.
pub fn solve_scenarios(scenarios: &[Scenario], cfg: &SgdConfig) -> Result<SgdResult> {
    let first = scenarios
        .first()
        .ok_or_else(|| Error::InsufficientData("no scenarios to optimize over".into()))?;
    let n = first.prices.len();
    let cap = first.fleet.total_capacity();
    for s in scenarios {
        if s.prices.len() != n || s.epsilon.len() != n {
            return Err(Error::invalid("scenarios disagree in program count"));
        }
        if (s.fleet.total_capacity() - cap).abs() > 1e-9 * cap.max(1.0) {
            return Err(Error::invalid("scenarios disagree in fleet capacity"));
        }
    }
    let max_reward = max_of(scenarios.iter().map(|s| s.fleet.max_reward()));
    let max_price = max_of(scenarios.iter().flat_map(|s| s.prices.iter().copied()));
    descend(n, cap, max_reward, max_price, cfg, |c, rng, grad| {
        let s = &scenarios[rng.random_range(0..scenarios.len())];
        accumulate(&s.fleet, &s.prices, c, &s.epsilon, grad);
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deployment::realized_cost;
    use crate::program::{DeploymentModel, FixedSampler};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn program(id: &str, price: f64, deployment: DeploymentModel) -> ProgramSpec {
        ProgramSpec {
            id: id.into(),
            price,
            direction: Direction::Up,
            deployment,
        }
    }

    #[test]
    fn subgradient_examples() {
        let fleet = FleetSpec::from_pairs(&[(150.0, 94.0), (100.0, 150.0)]).unwrap();
        let zero = DeploymentSample::new(vec![0.0, 0.0]).unwrap();
        let g = sample_subgradient(&fleet, &[12.0, 7.0], &Profile::new(vec![10.0, 10.0]), &[zero]).unwrap();
        assert_eq!(g, vec![-12.0, -7.0]);

        let single = FleetSpec::from_pairs(&[(250.0, 150.0)]).unwrap();
        let half = DeploymentSample::new(vec![0.5]).unwrap();
        let g = sample_subgradient(&single, &[20.0], &Profile::new(vec![100.0]), &[half]).unwrap();
        assert_eq!(g, vec![55.0]);

        assert!(sample_subgradient(&single, &[20.0], &Profile::new(vec![100.0]), &[]).is_err());
    }

    #[test]
    fn subgradient_matches_finite_difference() {
        use rand::Rng;
        let fleet = FleetSpec::from_pairs(&[(150.0, 94.0), (60.0, 120.0), (40.0, 150.0)]).unwrap();
        let prices = [20.0, 35.0];
        let cap = fleet.total_capacity();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<DeploymentSample> = (0..10)
            .map(|_| DeploymentSample::new(vec![rng.random(), rng.random()]).unwrap())
            .collect();
        let mean_cost = |c: &[f64]| {
            let p = Profile::new(c.to_vec());
            samples.iter().map(|s| realized_cost(&fleet, &prices, &p, s)).sum::<f64>() / samples.len() as f64
        };
        let c = vec![70.0, 90.0];
        let g = sample_subgradient(&fleet, &prices, &Profile::new(c.clone()), &samples).unwrap();
        let h = 1e-6 * cap;
        for i in 0..2 {
            let (mut hi, mut lo) = (c.clone(), c.clone());
            hi[i] += h;
            lo[i] -= h;
            let fd = (mean_cost(&hi) - mean_cost(&lo)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0), "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_feasible(&[10.0, 20.0], 250.0).into_inner(), vec![10.0, 20.0]);
        assert_eq!(project_feasible(&[300.0, 0.0], 250.0).into_inner(), vec![250.0, 0.0]);
        assert_eq!(project_feasible(&[200.0, 200.0], 250.0).into_inner(), vec![125.0, 125.0]);
        assert_eq!(project_feasible(&[-5.0, 3.0], 250.0).into_inner(), vec![0.0, 3.0]);
    }

    #[test]
    fn projection_matches_grid_search() {
        // Nearest feasible point on a 0.1 grid.
        for &(x, y) in &[(300.0, 0.0), (200.0, 200.0), (260.0, -40.0), (180.0, 120.0)] {
            let p = project_feasible(&[x, y], 250.0).into_inner();
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..=2500 {
                let a = i as f64 * 0.1;
                // For fixed a the best feasible b is the clamp of y.
                let b = y.clamp(0.0, 250.0 - a);
                let d = (a - x).powi(2) + (b - y).powi(2);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
            assert_abs_diff_eq!(p[0], best.1, epsilon = 0.1);
            assert_abs_diff_eq!(p[1], best.2, epsilon = 0.1);
        }
    }

    #[test]
    fn step_and_bound_examples() {
        let d = diameter(2, 250.0);
        let g = grad_bound(2, 200.0, 150.0);
        assert_abs_diff_eq!(step_size(1, d, g), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(step_size(4, d, g), 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(suboptimality_bound(10_000, 2, 200.0, 10.0, 250.0), 1500.0, epsilon = 1e-9);
        let b1 = suboptimality_bound(100, 3, 200.0, 10.0, 250.0);
        let b4 = suboptimality_bound(400, 3, 200.0, 10.0, 250.0);
        assert_abs_diff_eq!(b4, b1 / 2.0, epsilon = 1e-9);
        assert_eq!(diameter(1, 250.0), 250.0);
    }

    #[test]
    fn never_deployed_program_fills_capacity() {
        let fleet = FleetSpec::from_pairs(&[(150.0, 94.0), (100.0, 150.0)]).unwrap();
        let programs = [program("a", 20.0, DeploymentModel::Constant { value: 0.0 })];
        let cfg = SgdConfig {
            iterations: 2000,
            ..Default::default()
        };
        let res = solve(&fleet, &programs, &FixedSampler(vec![0.0]), &cfg).unwrap();
        // Iterates reach the boundary after a handful of steps.
        assert!(res.profile.as_slice()[0] > 245.0);
    }

    #[test]
    fn always_deployed_unprofitable_program_stays_out() {
        let fleet = FleetSpec::from_pairs(&[(250.0, 150.0)]).unwrap();
        let programs = [program("a", 20.0, DeploymentModel::Constant { value: 1.0 })];
        let cfg = SgdConfig {
            iterations: 500,
            ..Default::default()
        };
        let res = solve(&fleet, &programs, &FixedSampler(vec![1.0]), &cfg).unwrap();
        assert_eq!(res.profile.as_slice(), &[0.0]);
    }

    #[test]
    fn identical_seeds_reproduce_trajectories() {
        let fleet = FleetSpec::from_pairs(&[(150.0, 103.8), (100.0, 131.8)]).unwrap();
        let programs = [
            program("up", 30.0, DeploymentModel::TruncExp { mean: 0.18 }),
            program("rrs", 38.0, DeploymentModel::TruncExp { mean: 0.27 }),
        ];
        let sampler = crate::program::ProgramSampler::new(&programs, None).unwrap();
        let cfg = SgdConfig {
            iterations: 300,
            seed: 11,
            record_trajectory: true,
            ..Default::default()
        };
        let a = solve(&fleet, &programs, &sampler, &cfg).unwrap();
        let b = solve(&fleet, &programs, &sampler, &cfg).unwrap();
        assert_eq!(a, b);
        for p in a.trajectory.as_ref().unwrap() {
            assert!(p.is_feasible(250.0, 1e-9));
        }
        let c = solve(&fleet, &programs, &sampler, &SgdConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.profile, c.profile);
    }

    #[test]
    fn deterministic_cost_gap_within_bound() {
        // With a fixed ε the expected cost is the realized cost, and its
        // minimum over a fine grid is a valid reference.
        let fleet = FleetSpec::from_pairs(&[(150.0, 94.0), (100.0, 150.0)]).unwrap();
        let prices = [40.0, 25.0];
        let eps = vec![0.4, 0.1];
        let programs = [
            program("a", prices[0], DeploymentModel::Constant { value: eps[0] }),
            program("b", prices[1], DeploymentModel::Constant { value: eps[1] }),
        ];
        let cfg = SgdConfig {
            iterations: 4000,
            batch: 1,
            ..Default::default()
        };
        let res = solve(&fleet, &programs, &FixedSampler(eps.clone()), &cfg).unwrap();
        let sample = DeploymentSample::new(eps).unwrap();
        let cost = |c: Vec<f64>| realized_cost(&fleet, &prices, &Profile::new(c), &sample);
        let mut best = f64::INFINITY;
        for i in 0..=500 {
            for j in 0..=(500 - i) {
                best = best.min(cost(vec![i as f64 * 0.5, j as f64 * 0.5]));
            }
        }
        assert!(cost(res.profile.into_inner()) - best <= res.bound);
    }

    #[test]
    fn scenario_pool_runs() {
        let fleet = FleetSpec::from_pairs(&[(150.0, 94.0), (100.0, 150.0)]).unwrap();
        let scenarios = vec![
            Scenario { fleet: fleet.clone(), prices: vec![20.0], epsilon: vec![0.0] },
            Scenario { fleet, prices: vec![10.0], epsilon: vec![0.0] },
        ];
        let res = solve_scenarios(&scenarios, &SgdConfig { iterations: 500, ..Default::default() }).unwrap();
        assert!(res.profile.as_slice()[0] > 240.0);
        assert!(solve_scenarios(&[], &SgdConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            x in prop::collection::vec(-300.0f64..400.0, 3),
            y in prop::collection::vec(-300.0f64..400.0, 3),
            cap in 0.0f64..500.0,
        ) {
            let px = project_feasible(&x, cap);
            prop_assert!(px.is_feasible(cap, 1e-9 * cap.max(1.0)));
            let ppx = project_feasible(px.as_slice(), cap);
            for (a, b) in px.as_slice().iter().zip(ppx.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * cap.max(1.0));
            }
            let py = project_feasible(&y, cap);
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dist(px.as_slice(), py.as_slice()) <= dist(&x, &y) + 1e-9);
        }

        #[test]
        fn projection_is_nearest_among_feasible_points(
            x in prop::collection::vec(-100.0f64..300.0, 2),
            z in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let cap = 250.0;
            let px = project_feasible(&x, cap);
            let s = (z.0 + z.1).max(1.0);
            let other = [z.0 / s * cap, z.1 / s * cap];
            let d = |a: &[f64]| a.iter().zip(&x).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
            prop_assert!(d(px.as_slice()) <= d(&other) + 1e-6);
        }
    }
}
