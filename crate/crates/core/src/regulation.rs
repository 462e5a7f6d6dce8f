//! Coupled reg-up / reg-down participation for a two-type fleet.
//!
//! In any slot at most one regulation direction is deployed: reg-down with
//! probability θ, reg-up otherwise, and the deployed share follows a
//! truncated exponential on [0, 1]. The expected cost then has a closed
//! form, assembled here from the per-direction pieces.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::deployment::Profile;
use crate::error::{Error, Result};
use crate::fleet::FleetSpec;
use crate::sgd::project_feasible;

/// Below this rate the mean and density switch to series expansions.
pub const SMALL_RATE: f64 = 1e-4;

/// Density λe^{−λx}/(1 − e^{−λ}) on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedExponential {
    lambda: f64,
}

impl TruncatedExponential {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "truncated exponential rate must be positive, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    /// The distribution whose mean is `mean`, see [`fit_lambda`].
    pub fn with_mean(mean: f64) -> Result<Self> {
        Self::new(fit_lambda(mean)?)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// λ / (1 − e^{−λ}).
    fn scale(&self) -> f64 {
        let l = self.lambda;
        if l < SMALL_RATE {
            1.0 + l / 2.0 + l * l / 12.0
        } else {
            l / -(-l).exp_m1()
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let l = self.lambda;
        if l < SMALL_RATE {
            let z = l * x;
            self.scale() * (1.0 - z + z * z / 2.0)
        } else {
            self.scale() * (-l * x).exp()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        (-self.lambda * x).exp_m1() / (-self.lambda).exp_m1()
    }

    /// Inverse CDF: −ln(1 − u(1 − e^{−λ}))/λ.
    pub fn quantile(&self, u: f64) -> f64 {
        let l = self.lambda;
        (-(u * (-l).exp_m1()).ln_1p() / l).clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// (1 − (λ+1)e^{−λ}) / (λ(1 − e^{−λ})), evaluated as 1/λ − 1/(e^λ − 1).
    pub fn mean(&self) -> f64 {
        let l = self.lambda;
        if l < SMALL_RATE {
            0.5 - l / 12.0 + l * l * l / 720.0
        } else {
            1.0 / l - 1.0 / l.exp_m1()
        }
    }

    /// 1/λ² − e^λ/(e^λ − 1)², with a series below λ = 1e-2 where the
    /// difference cancels.
    pub fn variance(&self) -> f64 {
        let l = self.lambda;
        if l < 1e-2 {
            let l2 = l * l;
            1.0 / 12.0 - l2 / 240.0 + l2 * l2 / 6048.0
        } else {
            let s = (l / 2.0).sinh();
            1.0 / (l * l) - 1.0 / (4.0 * s * s)
        }
    }

    /// ∫_0^a F(x) dx for a ∈ [0, 1].
    fn cdf_integral(&self, a: f64) -> f64 {
        let l = self.lambda;
        let z = l * a;
        // z − (1 − e^{−z}), expanded when the difference cancels.
        let num = if z < 1e-3 {
            z * z * (0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0)
        } else {
            z + (-z).exp_m1()
        };
        num / (l * -(-l).exp_m1())
    }

    /// ∫_b^1 (1 − F(x)) dx for b ∈ [0, 1].
    fn survival_integral(&self, b: f64) -> f64 {
        let l = self.lambda;
        let w = l * (1.0 - b);
        // e^w − 1 − w, expanded when the difference cancels.
        let num = if w < 1e-3 {
            w * w * (0.5 + w / 6.0 + w * w / 24.0 + w * w * w / 120.0)
        } else {
            w.exp_m1() - w
        };
        (-l).exp() * num / (l * -(-l).exp_m1())
    }
}

/// Rate λ whose truncated exponential has the given mean, by bisection.
///
/// The mean falls strictly from 1/2 (λ → 0) to 0, so targets at or above
/// 1/2 are unattainable.
pub fn fit_lambda(target_mean: f64) -> Result<f64> {
    if !(target_mean > 0.0) || !target_mean.is_finite() {
        return Err(Error::invalid(format!(
            "target mean must be in (0, 0.5), got {target_mean}"
        )));
    }
    if target_mean >= 0.5 {
        return Err(Error::Infeasible(format!(
            "a truncated exponential on [0, 1] has mean below 0.5, requested {target_mean}"
        )));
    }
    let mean = |l: f64| TruncatedExponential { lambda: l }.mean();
    // mean(λ) ≥ 1/2 − λ/12 by convexity, and mean(λ) < 1/λ.
    let mut lo = 12.0 * (0.5 - target_mean);
    let mut hi = 1.0 / target_mean;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let m = mean(mid);
        if (m - target_mean).abs() <= 1e-13 || hi - lo <= f64::EPSILON * hi {
            return Ok(mid);
        }
        if m > target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (mean(mid) - target_mean).abs() <= 1e-10 {
        Ok(mid)
    } else {
        Err(Error::Numerical(format!(
            "bisection for mean {target_mean} did not converge"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegJointModel {
    /// Probability that reg-down (rather than reg-up) is deployed.
    pub theta: f64,
    pub up: TruncatedExponential,
    pub down: TruncatedExponential,
}

impl RegJointModel {
    pub fn new(theta: f64, up: TruncatedExponential, down: TruncatedExponential) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::invalid(format!("theta must be in [0, 1], got {theta}")));
        }
        Ok(Self { theta, up, down })
    }

    pub fn from_means(theta: f64, mean_up: f64, mean_down: f64) -> Result<Self> {
        Self::new(
            theta,
            TruncatedExponential::with_mean(mean_up)?,
            TruncatedExponential::with_mean(mean_down)?,
        )
    }

    /// Draws raw `(ε_up, ε_dn)`; exactly one side is deployed.
    pub fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        if rng.random::<f64>() < self.theta {
            (0.0, self.down.sample(rng))
        } else {
            (self.up.sample(rng), 0.0)
        }
    }
}

/// Draws `(ε_up, ε_dn)` from the mixture law.
pub fn sample_joint(model: &RegJointModel, rng: &mut dyn RngCore) -> (f64, f64) {
    model.sample(rng)
}

/// A two-type fleet offering reg-up and reg-down capacity.
///
/// `first_capacity` belongs to the less profitable type (reward `r1 ≤ r2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegInstance {
    pub first_capacity: f64,
    pub second_capacity: f64,
    pub r1: f64,
    pub r2: f64,
    pub p_up: f64,
    pub p_dn: f64,
    pub model: RegJointModel,
}

/// Which closed-form pieces apply at a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownCase {
    /// Reg-down never reaches the second type.
    Within,
    /// Reg-down can spill into the second type.
    Spill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpCase {
    /// Total commitment fits in the first type.
    Within,
    /// Spills only for large reg-up deployment.
    Partial,
    /// Idle reg-down headroom alone fills the first type.
    Always,
}

impl RegInstance {
    pub fn new(
        capacities: [f64; 2],
        rewards: [f64; 2],
        p_up: f64,
        p_dn: f64,
        model: RegJointModel,
    ) -> Result<Self> {
        if capacities.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::invalid("capacities must be nonnegative"));
        }
        if rewards.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::ModelViolation("rewards must be nonnegative".into()));
        }
        if rewards[0] > rewards[1] {
            return Err(Error::invalid("the first machine type must have the lower reward"));
        }
        if !(p_up.is_finite() && p_dn.is_finite()) {
            return Err(Error::invalid("prices must be finite"));
        }
        Ok(Self {
            first_capacity: capacities[0],
            second_capacity: capacities[1],
            r1: rewards[0],
            r2: rewards[1],
            p_up,
            p_dn,
            model,
        })
    }

    pub fn from_fleet(fleet: &FleetSpec, p_up: f64, p_dn: f64, model: RegJointModel) -> Result<Self> {
        if fleet.len() != 2 {
            return Err(Error::invalid(format!(
                "regulation closed form needs exactly two machine types, fleet has {}",
                fleet.len()
            )));
        }
        Self::new(
            [fleet.capacity(0), fleet.capacity(1)],
            [fleet.reward(0), fleet.reward(1)],
            p_up,
            p_dn,
            model,
        )
    }

    pub fn capacity(&self) -> f64 {
        self.first_capacity + self.second_capacity
    }

    pub fn max_price_or_reward(&self) -> f64 {
        self.r2.max(self.p_up).max(self.p_dn)
    }

    pub fn down_case(&self, c_dn: f64) -> DownCase {
        if c_dn <= self.first_capacity {
            DownCase::Within
        } else {
            DownCase::Spill
        }
    }

    pub fn up_case(&self, c_up: f64, c_dn: f64) -> UpCase {
        if c_up + c_dn <= self.first_capacity {
            UpCase::Within
        } else if c_dn < self.first_capacity {
            UpCase::Partial
        } else {
            UpCase::Always
        }
    }

    /// Reg-down slot, commitment within the first type.
    pub fn cost_dn1(&self, c_up: f64, c_dn: f64) -> f64 {
        let idle_share = 1.0 - self.model.down.mean();
        -self.p_up * c_up - self.p_dn * c_dn + c_dn * self.r1 * idle_share
    }

    /// Reg-down slot, idled headroom may exceed the first type.
    ///
    /// The spill term is E[min(c1 − (1 − ε)c_dn, 0)] = −c_dn ∫_0^a F(x) dx
    /// with a = 1 − c1/c_dn.
    pub fn cost_dn2(&self, c_up: f64, c_dn: f64) -> f64 {
        let spill = if c_dn > 0.0 {
            let a = (1.0 - self.first_capacity / c_dn).max(0.0);
            -c_dn * self.model.down.cdf_integral(a)
        } else {
            0.0
        };
        self.cost_dn1(c_up, c_dn) + (self.r1 - self.r2) * spill
    }

    /// Reg-up slot, total commitment within the first type.
    pub fn cost_up1(&self, c_up: f64, c_dn: f64) -> f64 {
        c_up * (self.r1 * self.model.up.mean() - self.p_up) + c_dn * (self.r1 - self.p_dn)
    }

    /// Reg-up slot, spill for ε_up above b = (c1 − c_dn)/c_up.
    ///
    /// The spill term is −c_up ∫_b^1 (1 − F(x)) dx.
    pub fn cost_up2(&self, c_up: f64, c_dn: f64) -> f64 {
        let spill = if c_up > 0.0 {
            let b = ((self.first_capacity - c_dn) / c_up).clamp(0.0, 1.0);
            -c_up * self.model.up.survival_integral(b)
        } else {
            0.0
        };
        self.cost_up1(c_up, c_dn) + (self.r1 - self.r2) * spill
    }

    /// Reg-up slot, the first type is always exhausted.
    pub fn cost_up3(&self, c_up: f64, c_dn: f64) -> f64 {
        let spill = self.first_capacity - c_dn - c_up * self.model.up.mean();
        self.cost_up1(c_up, c_dn) + (self.r1 - self.r2) * spill
    }

    pub fn cost_down(&self, c_up: f64, c_dn: f64) -> f64 {
        match self.down_case(c_dn) {
            DownCase::Within => self.cost_dn1(c_up, c_dn),
            DownCase::Spill => self.cost_dn2(c_up, c_dn),
        }
    }

    pub fn cost_up(&self, c_up: f64, c_dn: f64) -> f64 {
        match self.up_case(c_up, c_dn) {
            UpCase::Within => self.cost_up1(c_up, c_dn),
            UpCase::Partial => self.cost_up2(c_up, c_dn),
            UpCase::Always => self.cost_up3(c_up, c_dn),
        }
    }

    fn value_unchecked(&self, c_up: f64, c_dn: f64) -> f64 {
        let theta = self.model.theta;
        theta * self.cost_down(c_up, c_dn) + (1.0 - theta) * self.cost_up(c_up, c_dn)
    }
}

/// Closed-form expected slot cost of committing `c_up` to reg-up and `c_dn`
/// to reg-down.
pub fn expected_reg_cost(instance: &RegInstance, c_up: f64, c_dn: f64) -> Result<f64> {
    Profile::new(vec![c_up, c_dn]).validate(instance.capacity())?;
    Ok(instance.value_unchecked(c_up.max(0.0), c_dn.max(0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegSolution {
    /// `[c_up, c_dn]`.
    pub profile: Profile,
    pub expected_cost: f64,
}

/// Grid points per axis for the starting point of [`solve_reg_profile`].
pub const SOLVE_GRID: usize = 100;

/// Minimizes the closed-form expected cost over the feasible triangle:
/// best point of a 100×100 grid, refined by projected gradient descent and
/// a shrinking pattern search.
pub fn solve_reg_profile(instance: &RegInstance) -> RegSolution {
    let cap = instance.capacity();
    let f = |c: &[f64]| instance.value_unchecked(c[0].max(0.0), c[1].max(0.0));
    if cap <= 0.0 {
        return RegSolution {
            profile: Profile::zeros(2),
            expected_cost: 0.0,
        };
    }

    let h = cap / (SOLVE_GRID - 1) as f64;
    let mut best = vec![0.0, 0.0];
    let mut best_val = f(&best);
    for i in 0..SOLVE_GRID {
        for j in 0..SOLVE_GRID - i {
            let c = [i as f64 * h, j as f64 * h];
            let v = f(&c);
            if v < best_val {
                best_val = v;
                best = c.to_vec();
            }
        }
    }

    // Projected gradient with finite differences and backtracking.
    let fd = 1e-6 * cap;
    let mut x = best.clone();
    let mut fx = best_val;
    let mut step = h;
    for _ in 0..200 {
        let mut g = [0.0; 2];
        for k in 0..2 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[k] += fd;
            lo[k] = (lo[k] - fd).max(0.0);
            g[k] = (f(&hi) - f(&lo)) / (hi[k] - lo[k]);
        }
        let mut improved = false;
        while step > 1e-12 * cap {
            let trial = project_feasible(&[x[0] - step * g[0], x[1] - step * g[1]], cap).into_inner();
            let ft = f(&trial);
            if ft < fx {
                x = trial;
                fx = ft;
                step *= 2.0;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }

    // Pattern search; the diagonal directions slide along the capacity face.
    let dirs: [[f64; 2]; 6] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
    let mut delta = h;
    while delta > 1e-12 * cap {
        let mut moved = false;
        for d in &dirs {
            let trial = project_feasible(&[x[0] + delta * d[0], x[1] + delta * d[1]], cap).into_inner();
            let ft = f(&trial);
            if ft < fx {
                x = trial;
                fx = ft;
                moved = true;
            }
        }
        if !moved {
            delta *= 0.5;
        }
    }

    RegSolution {
        profile: Profile::new(x),
        expected_cost: fx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson on [a, b] with n (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn instance(theta: f64) -> RegInstance {
        RegInstance::new(
            [150.0, 100.0],
            [103.8, 131.8],
            14.0,
            9.0,
            RegJointModel::from_means(theta, 0.18, 0.27).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn pdf_examples() {
        let d = TruncatedExponential::new(1.0).unwrap();
        assert_eq!(d.pdf(-0.1), 0.0);
        assert_eq!(d.pdf(1.1), 0.0);
        assert_relative_eq!(d.pdf(0.0), 1.0 / (1.0 - (-1.0f64).exp()), max_relative = 1e-14);
        assert_relative_eq!(d.pdf(0.0), 1.5820, max_relative = 1e-4);
        for l in [1e-6, 1e-3, 0.5, 3.0, 40.0] {
            let d = TruncatedExponential::new(l).unwrap();
            assert_abs_diff_eq!(simpson(|x| d.pdf(x), 0.0, 1.0, 20_000), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn mean_examples() {
        // Small-rate limit is the uniform mean.
        assert_abs_diff_eq!(TruncatedExponential::new(1e-9).unwrap().mean(), 0.5, epsilon = 1e-9);
        let d = TruncatedExponential::new(1.0).unwrap();
        let quad = simpson(|x| x * d.pdf(x), 0.0, 1.0, 20_000);
        assert_abs_diff_eq!(d.mean(), quad, epsilon = 1e-10);
        assert_abs_diff_eq!(d.mean(), 0.41802, epsilon = 1e-5);
        let d = TruncatedExponential::new(50.0).unwrap();
        let quad = simpson(|x| x * d.pdf(x), 0.0, 1.0, 200_000);
        assert_relative_eq!(d.mean(), quad, max_relative = 1e-9);
        assert_relative_eq!(d.mean(), 1.0 / 50.0, max_relative = 1e-3);
        // Series and direct branches meet.
        let below = TruncatedExponential::new(SMALL_RATE * (1.0 - 1e-9)).unwrap().mean();
        let above = TruncatedExponential::new(SMALL_RATE).unwrap().mean();
        assert_abs_diff_eq!(below, above, epsilon = 1e-12);
    }

    #[test]
    fn variance_matches_quadrature() {
        for l in [1e-3, 0.009, 0.011, 1.0, 3.7, 25.0] {
            let d = TruncatedExponential::new(l).unwrap();
            let m = d.mean();
            let quad = simpson(|x| (x - m).powi(2) * d.pdf(x), 0.0, 1.0, 100_000);
            assert_abs_diff_eq!(d.variance(), quad, epsilon = 1e-10);
        }
    }

    #[test]
    fn fit_lambda_examples() {
        for m in [0.18, 0.27] {
            let l = fit_lambda(m).unwrap();
            assert_abs_diff_eq!(TruncatedExponential::new(l).unwrap().mean(), m, epsilon = 1e-10);
        }
        assert!(matches!(fit_lambda(0.5), Err(Error::Infeasible(_))));
        assert!(matches!(fit_lambda(0.7), Err(Error::Infeasible(_))));
        assert!(fit_lambda(0.0).is_err());
    }

    #[test]
    fn cdf_integrals_match_quadrature() {
        for l in [1e-5, 0.7, 4.1, 30.0] {
            let d = TruncatedExponential::new(l).unwrap();
            for a in [0.0, 1e-5, 0.3, 0.9, 1.0] {
                let q = simpson(|x| d.cdf(x), 0.0, a, 20_000);
                assert_abs_diff_eq!(d.cdf_integral(a), q, epsilon = 1e-10);
                let q = simpson(|x| 1.0 - d.cdf(x), a, 1.0, 20_000);
                assert_abs_diff_eq!(d.survival_integral(a), q, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_mixtures() {
        let up = TruncatedExponential::with_mean(0.18).unwrap();
        let dn = TruncatedExponential::with_mean(0.27).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let all_down = RegJointModel::new(1.0, up, dn).unwrap();
        let all_up = RegJointModel::new(0.0, up, dn).unwrap();
        for _ in 0..1000 {
            assert_eq!(sample_joint(&all_down, &mut rng).0, 0.0);
            assert_eq!(sample_joint(&all_up, &mut rng).1, 0.0);
        }
        assert!(RegJointModel::new(1.5, up, dn).is_err());
    }

    #[test]
    fn joint_sample_means() {
        let model = RegJointModel::from_means(0.4, 0.18, 0.27).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 200_000;
        let (mut su, mut sd, mut su2, mut sd2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (u, d) = sample_joint(&model, &mut rng);
            su += u;
            sd += d;
            su2 += u * u;
            sd2 += d * d;
        }
        let nf = n as f64;
        let (mu, md) = (su / nf, sd / nf);
        let se_u = ((su2 / nf - mu * mu) / nf).sqrt();
        let se_d = ((sd2 / nf - md * md) / nf).sqrt();
        assert!((mu - 0.6 * 0.18).abs() <= 3.0 * se_u);
        assert!((md - 0.4 * 0.27).abs() <= 3.0 * se_d);
    }

    #[test]
    fn empty_profile_costs_nothing() {
        assert_eq!(expected_reg_cost(&instance(0.5), 0.0, 0.0).unwrap(), 0.0);
        assert!(expected_reg_cost(&instance(0.5), 200.0, 100.0).is_err());
        assert!(expected_reg_cost(&instance(0.5), -1.0, 0.0).is_err());
    }

    #[test]
    fn pure_reg_up_within_first_type() {
        let inst = instance(0.0);
        let (cu, cd) = (60.0, 40.0);
        let m1 = inst.model.up.mean();
        let expected = cu * (inst.r1 * m1 - inst.p_up) + cd * (inst.r1 - inst.p_dn);
        assert_relative_eq!(expected_reg_cost(&inst, cu, cd).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn branch_pieces_agree_on_boundaries() {
        let inst = instance(0.35);
        let c1 = inst.first_capacity;
        // c_dn = c1: down pieces and the Partial/Always up pieces meet.
        for cu in [0.0, 10.0, 60.0, 99.0] {
            let a = inst.cost_dn1(cu, c1);
            let b = inst.cost_dn2(cu, c1);
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
            if cu > 0.0 {
                let a = inst.cost_up2(cu, c1);
                let b = inst.cost_up3(cu, c1);
                assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
            }
        }
        // c_up + c_dn = c1: Within/Partial up pieces meet.
        for cd in [0.0, 30.0, 149.0] {
            let cu = c1 - cd;
            let a = inst.cost_up1(cu, cd);
            let b = inst.cost_up2(cu, cd);
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
        }
    }

    #[test]
    fn equal_rewards_collapse_to_first_piece() {
        let model = RegJointModel::from_means(0.3, 0.18, 0.27).unwrap();
        let inst = RegInstance::new([150.0, 100.0], [120.0, 120.0], 11.0, 7.0, model).unwrap();
        for &(cu, cd) in &[(10.0, 20.0), (100.0, 100.0), (20.0, 200.0), (200.0, 10.0)] {
            let q1 = model.theta * inst.cost_dn1(cu, cd) + (1.0 - model.theta) * inst.cost_up1(cu, cd);
            assert_relative_eq!(expected_reg_cost(&inst, cu, cd).unwrap(), q1, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_prices_mean_no_participation() {
        let model = RegJointModel::from_means(0.6, 0.18, 0.27).unwrap();
        let inst = RegInstance::new([150.0, 100.0], [90.0, 130.0], 0.0, 0.0, model).unwrap();
        let sol = solve_reg_profile(&inst);
        assert_eq!(sol.profile.as_slice(), &[0.0, 0.0]);
        assert_eq!(sol.expected_cost, 0.0);
    }

    #[test]
    fn dominant_up_price_fills_capacity() {
        let model = RegJointModel::from_means(0.5, 0.18, 0.27).unwrap();
        let inst = RegInstance::new([150.0, 100.0], [90.0, 130.0], 400.0, 5.0, model).unwrap();
        let sol = solve_reg_profile(&inst);
        assert_abs_diff_eq!(sol.profile.as_slice()[0], 250.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.profile.as_slice()[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn solver_matches_dense_grid() {
        for theta in [0.2, 0.5, 0.8] {
            for &(pu, pd) in &[(14.0, 9.0), (25.0, 40.0), (3.0, 60.0), (30.0, 70.0)] {
                let model = RegJointModel::from_means(theta, 0.18, 0.27).unwrap();
                let inst = RegInstance::new([150.0, 100.0], [103.8, 131.8], pu, pd, model).unwrap();
                let sol = solve_reg_profile(&inst);
                let cap = inst.capacity();
                let n = 200;
                let h = cap / (n - 1) as f64;
                let mut grid_best = f64::INFINITY;
                for i in 0..n {
                    for j in 0..n - i {
                        grid_best = grid_best.min(expected_reg_cost(&inst, i as f64 * h, j as f64 * h).unwrap());
                    }
                }
                assert!(sol.profile.is_feasible(cap, 1e-9));
                let tol = 1e-6 * cap * inst.max_price_or_reward();
                assert!(sol.expected_cost <= grid_best + tol, "theta {theta} prices {pu},{pd}: {} vs grid {grid_best}", sol.expected_cost);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fit_lambda_round_trips(m in 1e-3f64..0.4999) {
            let l = fit_lambda(m).unwrap();
            prop_assert!((TruncatedExponential::new(l).unwrap().mean() - m).abs() <= 1e-9);
        }

        #[test]
        fn expected_cost_is_midpoint_convex(
            theta in 0.0f64..1.0,
            a in (0.0f64..1.0, 0.0f64..1.0),
            b in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let inst = instance(theta);
            let cap = inst.capacity();
            let to_profile = |(x, y): (f64, f64)| {
                let s = (x + y).max(1.0);
                (x / s * cap, y / s * cap)
            };
            let (pa, pb) = (to_profile(a), to_profile(b));
            let mid = (0.5 * (pa.0 + pb.0), 0.5 * (pa.1 + pb.1));
            let f = |p: (f64, f64)| expected_reg_cost(&inst, p.0, p.1).unwrap();
            prop_assert!(f(mid) <= 0.5 * (f(pa) + f(pb)) + 1e-9 * (1.0 + f(pa).abs() + f(pb).abs()));
        }
    }
}
