//! Exact solutions when the facility has a single machine type with reward
//! `r`: the expected cost is linear in the profile, and the mean-variance
//! variant adds a separable quadratic penalty.

use serde::{Deserialize, Serialize};

use crate::deployment::Profile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramStats {
    pub price: f64,
    pub mean_eps: f64,
    pub var_eps: f64,
}

impl ProgramStats {
    /// Checks that the moments can belong to a [0, 1] variable.
    pub fn new(price: f64, mean_eps: f64, var_eps: f64) -> Result<Self> {
        let s = Self { price, mean_eps, var_eps };
        s.validate(0.0)?;
        Ok(s)
    }

    /// `slack` is the relative excess over m(1 − m) tolerated in the
    /// variance, e.g. from an unbiased estimator.
    pub fn validate(&self, slack: f64) -> Result<()> {
        if !self.price.is_finite() {
            return Err(Error::invalid("program price must be finite"));
        }
        if !(0.0..=1.0).contains(&self.mean_eps) {
            return Err(Error::invalid(format!("mean deployment {} outside [0, 1]", self.mean_eps)));
        }
        let max_var = self.mean_eps * (1.0 - self.mean_eps) * (1.0 + slack) + 1e-12;
        if !(self.var_eps >= 0.0) || self.var_eps > max_var {
            return Err(Error::invalid(format!(
                "deployment variance {} impossible for mean {}",
                self.var_eps, self.mean_eps
            )));
        }
        Ok(())
    }

    /// Expected cost per committed MW, r·E[ε] − p.
    pub fn unit_cost(&self, reward: f64) -> f64 {
        reward * self.mean_eps - self.price
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub risk_weight: f64,
}

fn check_inputs(programs: &[ProgramStats], reward: f64, cap: f64) -> Result<()> {
    if programs.is_empty() {
        return Err(Error::invalid("no programs"));
    }
    if !(reward >= 0.0) || !reward.is_finite() {
        return Err(Error::ModelViolation(format!("mining reward must be nonnegative, got {reward}")));
    }
    if !(cap >= 0.0) || !cap.is_finite() {
        return Err(Error::invalid(format!("capacity must be nonnegative, got {cap}")));
    }
    programs.iter().try_for_each(|p| p.validate(f64::INFINITY).map(|_| ()))?;
    Ok(())
}

/// Commits everything to the program with the lowest expected unit cost if
/// that cost is nonpositive, and nothing otherwise.
pub fn best_program(programs: &[ProgramStats], reward: f64, cap: f64) -> Result<Profile> {
    check_inputs(programs, reward, cap)?;
    let mut best = 0;
    for (i, p) in programs.iter().enumerate() {
        if p.unit_cost(reward) < programs[best].unit_cost(reward) {
            best = i;
        }
    }
    let mut c = Profile::zeros(programs.len());
    if programs[best].unit_cost(reward) <= 0.0 {
        c.as_mut_slice()[best] = cap;
    }
    Ok(c)
}

/// Σ_i c_i (r E[ε_i] − p_i) + λ c_i² r² Var[ε_i].
pub fn risk_objective(programs: &[ProgramStats], reward: f64, risk: &RiskConfig, profile: &Profile) -> f64 {
    programs
        .iter()
        .zip(profile.as_slice())
        .map(|(p, &c)| c * p.unit_cost(reward) + risk.risk_weight * c * c * reward * reward * p.var_eps)
        .sum()
}

/// Expected cost and variance of the slot cost under independent programs.
pub fn profile_risk(programs: &[ProgramStats], reward: f64, profile: &Profile) -> (f64, f64) {
    programs
        .iter()
        .zip(profile.as_slice())
        .fold((0.0, 0.0), |(m, v), (p, &c)| {
            (m + c * p.unit_cost(reward), v + c * c * reward * reward * p.var_eps)
        })
}

/// Solution of the mean-variance problem together with the multiplier of
/// the capacity constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskSolution {
    pub profile: Profile,
    pub multiplier: f64,
}

/// Exact minimizer of the mean-variance objective over {c ≥ 0, Σ c ≤ cap}.
pub fn risk_aware_solve(programs: &[ProgramStats], reward: f64, cap: f64, risk: &RiskConfig) -> Result<Profile> {
    Ok(risk_aware_solve_kkt(programs, reward, cap, risk)?.profile)
}

pub fn risk_aware_solve_kkt(
    programs: &[ProgramStats],
    reward: f64,
    cap: f64,
    risk: &RiskConfig,
) -> Result<RiskSolution> {
    check_inputs(programs, reward, cap)?;
    if !(risk.risk_weight >= 0.0) || !risk.risk_weight.is_finite() {
        return Err(Error::invalid(format!("risk weight must be nonnegative, got {}", risk.risk_weight)));
    }
    let a: Vec<f64> = programs.iter().map(|p| p.unit_cost(reward)).collect();
    let b: Vec<f64> = programs
        .iter()
        .map(|p| risk.risk_weight * reward * reward * p.var_eps)
        .collect();

    if b.iter().all(|&x| x == 0.0) {
        let profile = best_program(programs, reward, cap)?;
        let multiplier = if profile.total() > 0.0 { -a.iter().cloned().fold(f64::INFINITY, f64::min) } else { 0.0 };
        return Ok(RiskSolution { profile, multiplier: multiplier.max(0.0) });
    }

    let quad: Vec<usize> = (0..a.len()).filter(|&i| b[i] > 0.0).collect();
    let supply = |mu: f64| -> f64 {
        quad.iter().map(|&i| ((-a[i] - mu) / (2.0 * b[i])).max(0.0)).sum()
    };
    // Cheapest linear coordinate, lowest index on ties.
    let linear = (0..a.len())
        .filter(|&i| b[i] == 0.0)
        .fold(None, |best: Option<usize>, i| match best {
            Some(j) if a[j] <= a[i] => Some(j),
            _ => Some(i),
        })
        .filter(|&i| a[i] < 0.0);

    let floor = linear.map_or(0.0, |i| -a[i]);
    let mut c = vec![0.0; a.len()];
    let mu = if supply(floor) <= cap {
        if let Some(i) = linear {
            c[i] = cap - supply(floor);
        }
        floor
    } else {
        capacity_multiplier(&quad, &a, &b, cap)
    };
    for &i in &quad {
        c[i] = ((-a[i] - mu) / (2.0 * b[i])).max(0.0);
    }
    if mu > floor {
        // With a tiny b_i, one ulp of μ moves c_i by ulp/(2 b_i). Hand the
        // capacity residual back to the active set along the same
        // sensitivities, which leaves the gradients equal to within ulps.
        let active: Vec<usize> = quad.iter().copied().filter(|&i| c[i] > 0.0).collect();
        let weight: f64 = active.iter().map(|&i| 1.0 / (2.0 * b[i])).sum();
        let residual = cap - c.iter().sum::<f64>();
        for &i in &active {
            c[i] = (c[i] + residual / (2.0 * b[i] * weight)).max(0.0);
        }
    }
    // The linear remainder can pick up a few ulps of excess.
    let total: f64 = c.iter().sum();
    if total > cap {
        let scale = cap / total;
        c.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(RiskSolution {
        profile: Profile::new(c),
        multiplier: mu,
    })
}

/// The μ > 0 with Σ_i max(0, −(a_i + μ)/(2 b_i)) = cap, solved exactly on
/// the active set found by scanning breakpoints.
fn capacity_multiplier(quad: &[usize], a: &[f64], b: &[f64], cap: f64) -> f64 {
    let mut order: Vec<usize> = quad.to_vec();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let (mut num, mut den) = (0.0, 0.0);
    let mut mu = 0.0;
    for (k, &i) in order.iter().enumerate() {
        num += -a[i] / (2.0 * b[i]);
        den += 1.0 / (2.0 * b[i]);
        mu = (num - cap) / den;
        let next = order.get(k + 1).map_or(f64::NEG_INFINITY, |&j| -a[j]);
        if mu >= next {
            break;
        }
    }
    mu
}

/// Violations of the optimality conditions at `profile`, with the capacity
/// multiplier reconstructed from the profile itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
    pub primal_feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.dual_feasibility)
            .max(self.complementarity)
            .max(self.primal_feasibility)
    }
}

pub fn kkt_residuals(
    programs: &[ProgramStats],
    reward: f64,
    cap: f64,
    risk: &RiskConfig,
    profile: &Profile,
) -> KktResiduals {
    let c = profile.as_slice();
    let grad: Vec<f64> = programs
        .iter()
        .zip(c)
        .map(|(p, &ci)| p.unit_cost(reward) + 2.0 * risk.risk_weight * reward * reward * p.var_eps * ci)
        .collect();
    let positive: Vec<usize> = (0..c.len()).filter(|&i| c[i] > 0.0).collect();
    let mu = if positive.is_empty() {
        0.0
    } else {
        (positive.iter().map(|&i| -grad[i]).sum::<f64>() / positive.len() as f64).max(0.0)
    };
    let total: f64 = c.iter().sum();
    KktResiduals {
        stationarity: positive.iter().map(|&i| (grad[i] + mu).abs()).fold(0.0, f64::max),
        dual_feasibility: (0..c.len())
            .filter(|&i| c[i] <= 0.0)
            .map(|i| (-(grad[i] + mu)).max(0.0))
            .fold(0.0, f64::max),
        complementarity: (mu * (cap - total)).abs(),
        primal_feasibility: c
            .iter()
            .map(|&x| (-x).max(0.0))
            .fold((total - cap).max(0.0), f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(price: f64, mean: f64, var: f64) -> ProgramStats {
        ProgramStats::new(price, mean, var).unwrap()
    }

    /// Linear objective minimized over a grid of the feasible segment.
    fn grid_min_1d(a: f64, cap: f64) -> (f64, f64) {
        (0..=1000)
            .map(|i| i as f64 * cap / 1000.0)
            .map(|c| (a * c, c))
            .fold((f64::INFINITY, 0.0), |best, x| if x.0 < best.0 { x } else { best })
    }

    #[test]
    fn best_program_examples() {
        let c = best_program(&[stats(10.0, 0.18, 0.01)], 150.0, 250.0).unwrap();
        assert_eq!(c.as_slice(), &[0.0]);
        assert_eq!(grid_min_1d(150.0 * 0.18 - 10.0, 250.0).1, 0.0);

        let c = best_program(&[stats(30.0, 0.18, 0.01)], 150.0, 250.0).unwrap();
        assert_eq!(c.as_slice(), &[250.0]);
        assert_eq!(grid_min_1d(150.0 * 0.18 - 30.0, 250.0).1, 250.0);

        let c = best_program(&[stats(27.0, 0.18, 0.01)], 150.0, 250.0).unwrap();
        assert_eq!(c.as_slice(), &[250.0]);
    }

    #[test]
    fn best_program_ties_pick_lowest_index() {
        let p = [stats(30.0, 0.1, 0.0), stats(25.0, 0.2, 0.0), stats(35.0, 0.0, 0.0)];
        // Unit costs with r = 50: −25, −15, −35.
        let c = best_program(&p, 50.0, 100.0).unwrap();
        assert_eq!(c.as_slice(), &[0.0, 0.0, 100.0]);
        let tied = [stats(30.0, 0.1, 0.0), stats(30.0, 0.1, 0.0)];
        assert_eq!(best_program(&tied, 50.0, 100.0).unwrap().as_slice(), &[100.0, 0.0]);
    }

    #[test]
    fn rejects_impossible_moments() {
        assert!(ProgramStats::new(10.0, 0.5, 0.3).is_err());
        assert!(ProgramStats::new(10.0, 1.2, 0.0).is_err());
        assert!(ProgramStats::new(10.0, 0.5, 0.25).is_ok());
        assert!(best_program(&[], 10.0, 10.0).is_err());
        assert!(best_program(&[stats(1.0, 0.1, 0.0)], -1.0, 10.0).is_err());
    }

    #[test]
    fn zero_risk_weight_reduces_to_linear() {
        let p = [stats(30.0, 0.18, 0.02), stats(40.0, 0.27, 0.05)];
        let risk = RiskConfig { risk_weight: 0.0 };
        assert_eq!(
            risk_aware_solve(&p, 150.0, 250.0, &risk).unwrap(),
            best_program(&p, 150.0, 250.0).unwrap()
        );
    }

    #[test]
    fn interior_optimum_example() {
        // p − r·E[ε] = 3.
        let p = [stats(150.0 * 0.2 + 3.0, 0.2, 0.02)];
        let risk = RiskConfig { risk_weight: 1e-4 };
        let c = risk_aware_solve(&p, 150.0, 250.0, &risk).unwrap();
        let expected = 3.0 / (2.0 * 1e-4 * 150.0 * 150.0 * 0.02);
        assert_abs_diff_eq!(c.as_slice()[0], expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, 33.333333333, epsilon = 1e-6);

        // Projected gradient on the same objective.
        let mut x: f64 = 0.0;
        for _ in 0..20_000 {
            let g = p[0].unit_cost(150.0) + 2.0 * 1e-4 * 150.0 * 150.0 * 0.02 * x;
            x = (x - 0.5 * g).clamp(0.0, 250.0);
        }
        assert_abs_diff_eq!(c.as_slice()[0], x, epsilon = 1e-6);
    }

    #[test]
    fn higher_variance_program_gets_less() {
        let p = [stats(30.0, 0.18, 0.01), stats(30.0, 0.18, 0.04)];
        let risk = RiskConfig { risk_weight: 1e-3 };
        let c = risk_aware_solve(&p, 150.0, 250.0, &risk).unwrap();
        assert!(c.as_slice()[1] < c.as_slice()[0]);
    }

    #[test]
    fn zero_variance_program_absorbs_residual() {
        let p = [stats(30.0, 0.18, 0.0), stats(40.0, 0.18, 0.03)];
        let risk = RiskConfig { risk_weight: 1e-3 };
        let sol = risk_aware_solve_kkt(&p, 150.0, 250.0, &risk).unwrap();
        let c = sol.profile.as_slice();
        assert_abs_diff_eq!(c[0] + c[1], 250.0, epsilon = 1e-9);
        assert!(c[0] > 0.0 && c[1] > 0.0);
        assert!(kkt_residuals(&p, 150.0, 250.0, &risk, &sol.profile).max() <= 1e-8);
    }

    #[test]
    fn profile_risk_examples() {
        let p = [stats(30.0, 0.18, 0.02), stats(40.0, 0.27, 0.0)];
        assert_eq!(profile_risk(&p, 150.0, &Profile::zeros(2)), (0.0, 0.0));
        let (_, v) = profile_risk(&[stats(30.0, 0.18, 0.0)], 150.0, &Profile::new(vec![100.0]));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn profile_risk_matches_simulation() {
        // Two independent uniform deployments on [lo, hi].
        let ranges = [(0.0, 0.4), (0.1, 0.5)];
        let p: Vec<ProgramStats> = ranges
            .iter()
            .zip([30.0, 25.0])
            .map(|(&(lo, hi), price)| stats(price, 0.5 * (lo + hi), (hi - lo) * (hi - lo) / 12.0))
            .collect();
        let c = Profile::new(vec![120.0, 80.0]);
        let r = 150.0;
        let (mean, var) = profile_risk(&p, r, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let cost: f64 = ranges
                .iter()
                .zip(&p)
                .zip(c.as_slice())
                .map(|((&(lo, hi), q), &ci)| ci * (r * rng.random_range(lo..hi) - q.price))
                .sum();
            s += cost;
            s2 += cost * cost;
        }
        let nf = n as f64;
        let m = s / nf;
        let v = s2 / nf - m * m;
        assert!((m - mean).abs() <= 3.0 * (v / nf).sqrt());
        // The sample variance has standard error about v·√(2/n) for near-normal sums.
        assert!((v - var).abs() <= 3.0 * var * (2.0 / nf).sqrt() * 1.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn risk_solution_satisfies_kkt_and_beats_vertices(
            raw in prop::collection::vec((0.0f64..60.0, 0.0f64..1.0, 0.0f64..1.0), 1..5),
            r in 0.0f64..200.0,
            lambda in 0.0f64..1e-2,
            cap in 0.0f64..400.0,
        ) {
            let p: Vec<ProgramStats> = raw
                .iter()
                .map(|&(price, m, v)| stats(price, m, v * m * (1.0 - m)))
                .collect();
            let risk = RiskConfig { risk_weight: lambda };
            let c = risk_aware_solve(&p, r, cap, &risk).unwrap();
            prop_assert!(c.is_feasible(cap, 1e-9 * cap.max(1.0)));
            prop_assert!(kkt_residuals(&p, r, cap, &risk, &c).max() <= 1e-8);
            let f = risk_objective(&p, r, &risk, &c);
            let linear = best_program(&p, r, cap).unwrap();
            prop_assert!(f <= risk_objective(&p, r, &risk, &linear) + 1e-9 * (1.0 + f.abs()));
            prop_assert!(f <= 1e-9);
        }
    }
}
