//! Per-slot deployment: which machines to idle when the operator calls on
//! committed capacity, and what the slot costs.
//!
//! Costs are signed: lost mining revenue counts positive, capacity payments
//! negative. Machine-type indices are zero-based and refer to the canonical
//! (ascending reward) order of a [`FleetSpec`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::FleetSpec;
use crate::program::Direction;

/// Relative slack within which a total deployment is snapped onto `[0, C^M]`.
pub const TOTAL_GUARD: f64 = 1e-12;

/// One realization of the deployment rates, one entry per program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSample(Vec<f64>);

impl DeploymentSample {
    pub fn new(epsilon: Vec<f64>) -> Result<Self> {
        if let Some((i, e)) = epsilon
            .iter()
            .enumerate()
            .find(|(_, e)| !(0.0..=1.0).contains(*e))
        {
            return Err(Error::invalid(format!(
                "deployment rate {e} for program {i} is outside [0, 1]"
            )));
        }
        Ok(Self(epsilon))
    }

    pub(crate) fn new_unchecked(epsilon: Vec<f64>) -> Self {
        Self(epsilon)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// MW of deployment covered by each machine type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub d: Vec<f64>,
}

impl Allocation {
    pub fn total(&self) -> f64 {
        self.d.iter().sum()
    }
}

/// Committed capacity per program, MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile(Vec<f64>);

impl Profile {
    pub fn new(c: Vec<f64>) -> Self {
        Self(c)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Nonnegative components summing to at most `cap`, up to `tol`.
    pub fn is_feasible(&self, cap: f64, tol: f64) -> bool {
        self.0.iter().all(|&c| c >= -tol && c.is_finite()) && self.total() <= cap + tol
    }

    pub fn validate(&self, cap: f64) -> Result<()> {
        if self.is_feasible(cap, TOTAL_GUARD * cap.max(1.0)) {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "profile {:?} is outside the feasible set (capacity {cap})",
                self.0
            )))
        }
    }
}

/// Maps down-direction rates ε to the shut-down share 1 − ε.
pub fn effective_epsilon(sample: &DeploymentSample, directions: &[Direction]) -> DeploymentSample {
    let mut out = sample.0.clone();
    apply_directions(&mut out, directions);
    DeploymentSample(out)
}

pub(crate) fn apply_directions(epsilon: &mut [f64], directions: &[Direction]) {
    assert_eq!(epsilon.len(), directions.len(), "direction count mismatch");
    for (e, d) in epsilon.iter_mut().zip(directions) {
        if *d == Direction::Down {
            *e = 1.0 - *e;
        }
    }
}

/// Total deployed MW, Σ ε_i c_i.
pub fn total_deployed(profile: &Profile, sample: &DeploymentSample) -> f64 {
    dot(profile.as_slice(), sample.as_slice())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn guard_total(fleet: &FleetSpec, total: f64) -> Result<f64> {
    let cap = fleet.total_capacity();
    let slack = TOTAL_GUARD * cap.max(1.0);
    if total.is_nan() {
        return Err(Error::invalid("total deployment is NaN"));
    }
    if total < -slack {
        return Err(Error::invalid(format!("negative total deployment {total}")));
    }
    if total > cap + slack {
        return Err(Error::Infeasible(format!(
            "total deployment {total} exceeds fleet capacity {cap}"
        )));
    }
    Ok(total.clamp(0.0, cap))
}

/// Shuts down the least profitable machines first.
pub fn allocate_deployment(fleet: &FleetSpec, total_deployed: f64) -> Result<Allocation> {
    let mut remaining = guard_total(fleet, total_deployed)?;
    let d = fleet
        .machines()
        .iter()
        .map(|m| {
            let take = remaining.min(m.capacity_mw);
            remaining -= take;
            take
        })
        .collect();
    Ok(Allocation { d })
}

/// The partially deployed type: the smallest index `q` whose cumulative
/// capacity covers the deployment (boundary inclusive).
pub fn critical_type(fleet: &FleetSpec, total_deployed: f64) -> Result<usize> {
    let total = guard_total(fleet, total_deployed)?;
    Ok(critical_index(fleet, total))
}

/// Unchecked variant for hot loops; totals past capacity map to the last type.
pub(crate) fn critical_index(fleet: &FleetSpec, total: f64) -> usize {
    let mut cumulative = 0.0;
    let last = fleet.len() - 1;
    for (k, m) in fleet.machines().iter().enumerate() {
        cumulative += m.capacity_mw;
        if total <= cumulative {
            return k;
        }
    }
    last
}

/// Σ_{k<k'} (r_k − r_k') c_k^M, the constant term of the k'-th affine piece.
pub(crate) fn piece_offset(fleet: &FleetSpec, k_prime: usize) -> f64 {
    let r = fleet.reward(k_prime);
    fleet.machines()[..k_prime]
        .iter()
        .map(|m| (m.reward - r) * m.capacity_mw)
        .sum()
}

/// Slot cost with the shutdown order resolved in closed form.
///
/// `sample` must already be direction-transformed.
pub fn realized_cost(
    fleet: &FleetSpec,
    prices: &[f64],
    profile: &Profile,
    sample: &DeploymentSample,
) -> f64 {
    let c = profile.as_slice();
    let u = dot(c, sample.as_slice());
    let u = u.max(0.0);
    let kc = critical_index(fleet, u);
    piece_offset(fleet, kc) + fleet.reward(kc) * u - dot(c, prices)
}

/// The affine surrogate obtained by pinning the critical type to `k_prime`.
pub fn cost_fixed_k(
    fleet: &FleetSpec,
    prices: &[f64],
    profile: &Profile,
    sample: &DeploymentSample,
    k_prime: usize,
) -> Result<f64> {
    if k_prime >= fleet.len() {
        return Err(Error::invalid(format!(
            "machine index {k_prime} out of range for {} types",
            fleet.len()
        )));
    }
    let c = profile.as_slice();
    let u = dot(c, sample.as_slice());
    Ok(piece_offset(fleet, k_prime) + fleet.reward(k_prime) * u - dot(c, prices))
}

/// Σ_k r_k d_k − Σ_i c_i p_i for an explicit allocation.
pub fn allocation_objective(
    fleet: &FleetSpec,
    prices: &[f64],
    profile: &Profile,
    allocation: &Allocation,
) -> f64 {
    dot(&fleet.rewards(), &allocation.d) - dot(profile.as_slice(), prices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_types() -> FleetSpec {
        FleetSpec::from_pairs(&[(150.0, 94.0), (100.0, 150.0)]).unwrap()
    }

    #[test]
    fn effective_epsilon_examples() {
        let s = DeploymentSample::new(vec![0.3]).unwrap();
        assert_eq!(effective_epsilon(&s, &[Direction::Up]).as_slice(), &[0.3]);
        assert_abs_diff_eq!(
            effective_epsilon(&s, &[Direction::Down]).as_slice()[0],
            0.7,
            epsilon = 1e-15
        );
        let s = DeploymentSample::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(
            effective_epsilon(&s, &[Direction::Up, Direction::Down]).as_slice(),
            &[0.0, 0.0]
        );
        assert!(DeploymentSample::new(vec![1.2]).is_err());
        assert!(DeploymentSample::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn allocation_examples() {
        let fleet = two_types();
        assert_eq!(allocate_deployment(&fleet, 200.0).unwrap().d, vec![150.0, 50.0]);
        assert_eq!(allocate_deployment(&fleet, 0.0).unwrap().d, vec![0.0, 0.0]);
        let three = FleetSpec::from_pairs(&[(50.0, 1.0), (50.0, 2.0), (50.0, 3.0)]).unwrap();
        assert_eq!(allocate_deployment(&three, 120.0).unwrap().d, vec![50.0, 50.0, 20.0]);
        assert!(matches!(
            allocate_deployment(&fleet, 250.1),
            Err(Error::Infeasible(_))
        ));
        // Floating guard snaps onto the capacity.
        let a = allocate_deployment(&fleet, 250.0 + 1e-11).unwrap();
        assert_eq!(a.total(), 250.0);
    }

    #[test]
    fn critical_type_examples() {
        let fleet = two_types();
        assert_eq!(critical_type(&fleet, 100.0).unwrap(), 0);
        assert_eq!(critical_type(&fleet, 150.0).unwrap(), 0);
        assert_eq!(critical_type(&fleet, 150.5).unwrap(), 1);
        assert!(critical_type(&fleet, 300.0).is_err());
    }

    #[test]
    fn realized_cost_examples() {
        let fleet = two_types();
        let zero = DeploymentSample::new(vec![0.0, 0.0]).unwrap();
        let c = Profile::new(vec![100.0, 50.0]);
        assert_eq!(realized_cost(&fleet, &[10.0, 20.0], &c, &zero), -2000.0);
        let any = DeploymentSample::new(vec![0.4, 0.9]).unwrap();
        assert_eq!(realized_cost(&fleet, &[10.0, 20.0], &Profile::zeros(2), &any), 0.0);

        // Closed form and explicit allocation agree: 94·150 + 150·50 − 250·20.
        let c = Profile::new(vec![250.0]);
        let s = DeploymentSample::new(vec![0.8]).unwrap();
        let closed = realized_cost(&fleet, &[20.0], &c, &s);
        let alloc = allocate_deployment(&fleet, total_deployed(&c, &s)).unwrap();
        let explicit = allocation_objective(&fleet, &[20.0], &c, &alloc);
        assert_abs_diff_eq!(closed, 16600.0, epsilon = 1e-9);
        assert_abs_diff_eq!(explicit, 16600.0, epsilon = 1e-9);
        assert_eq!(critical_type(&fleet, 200.0).unwrap(), 1);
    }

    #[test]
    fn fixed_k_examples() {
        let fleet = two_types();
        let c = Profile::new(vec![250.0]);
        let s = DeploymentSample::new(vec![0.8]).unwrap();
        let kc = critical_type(&fleet, 200.0).unwrap();
        assert_eq!(
            cost_fixed_k(&fleet, &[20.0], &c, &s, kc).unwrap(),
            realized_cost(&fleet, &[20.0], &c, &s)
        );
        assert!(cost_fixed_k(&fleet, &[20.0], &c, &s, 2).is_err());

        let single = FleetSpec::from_pairs(&[(80.0, 40.0)]).unwrap();
        let c = Profile::new(vec![30.0, 20.0]);
        let s = DeploymentSample::new(vec![0.5, 0.25]).unwrap();
        assert_eq!(
            cost_fixed_k(&single, &[3.0, 4.0], &c, &s, 0).unwrap(),
            realized_cost(&single, &[3.0, 4.0], &c, &s)
        );
    }

    /// Minimum of Σ r_k d_k over a grid of feasible allocations; the last
    /// type absorbs the remainder.
    fn grid_lp(fleet: &FleetSpec, total: f64, step: f64) -> f64 {
        let caps = fleet.capacities();
        let rewards = fleet.rewards();
        let k = caps.len();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; k - 1];
        loop {
            let d: Vec<f64> = idx.iter().zip(&caps).map(|(&i, &c)| (i as f64 * step).min(c)).collect();
            let rest = total - d.iter().sum::<f64>();
            if rest >= -1e-12 && rest <= caps[k - 1] + 1e-12 {
                let v: f64 = d.iter().zip(&rewards).map(|(a, b)| a * b).sum::<f64>() + rest * rewards[k - 1];
                best = best.min(v);
            }
            let mut pos = 0;
            loop {
                if pos == k - 1 {
                    return best;
                }
                idx[pos] += 1;
                if (idx[pos] as f64 - 1.0) * step < caps[pos] {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    type Instance = (Vec<(f64, f64)>, Vec<f64>, Vec<f64>, Vec<f64>, f64);

    fn instance() -> impl Strategy<Value = Instance> {
        (1usize..=4, 1usize..=3).prop_flat_map(|(k, n)| {
            (
                prop::collection::vec((1.0f64..200.0, 0.0f64..300.0), k),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.0f64..100.0, n),
                0.0f64..1.0,
            )
        })
    }

    fn feasible_profile(weights: &[f64], scale: f64, cap: f64) -> Profile {
        let s: f64 = weights.iter().sum::<f64>().max(1e-9);
        Profile::new(weights.iter().map(|w| w / s * scale * cap).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn closed_form_matches_grid_lp((pairs, w, eps, prices, scale) in instance()) {
            let fleet = FleetSpec::from_pairs(&pairs).unwrap();
            let cap = fleet.total_capacity();
            let c = feasible_profile(&w, scale, cap);
            let s = DeploymentSample::new(eps).unwrap();
            let u = total_deployed(&c, &s);
            let step = 0.01 * cap;
            let oracle = grid_lp(&fleet, u, step) - dot(c.as_slice(), &prices);
            let closed = realized_cost(&fleet, &prices, &c, &s);
            let rmax = fleet.max_reward();
            prop_assert!(closed <= oracle + 1e-9 * cap * rmax.max(1.0));
            prop_assert!(oracle - closed <= step * rmax + 1e-9 * cap * rmax.max(1.0));
        }

        #[test]
        fn cost_is_max_of_affine_pieces((pairs, w, eps, prices, scale) in instance()) {
            let fleet = FleetSpec::from_pairs(&pairs).unwrap();
            let c = feasible_profile(&w, scale, fleet.total_capacity());
            let s = DeploymentSample::new(eps).unwrap();
            let max = (0..fleet.len())
                .map(|k| cost_fixed_k(&fleet, &prices, &c, &s, k).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((max - realized_cost(&fleet, &prices, &c, &s)).abs() <= 1e-9 * (1.0 + max.abs()));
        }

        #[test]
        fn cost_is_convex_along_segments(
            (pairs, w, eps, prices, scale) in instance(),
            w2 in prop::collection::vec(0.0f64..1.0, 3),
            scale2 in 0.0f64..1.0,
            t in 0.0f64..1.0,
        ) {
            let fleet = FleetSpec::from_pairs(&pairs).unwrap();
            let cap = fleet.total_capacity();
            let a = feasible_profile(&w, scale, cap);
            let b = feasible_profile(&w2[..w.len()], scale2, cap);
            let mid = Profile::new(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| t * x + (1.0 - t) * y).collect());
            let s = DeploymentSample::new(eps).unwrap();
            let f = |p: &Profile| realized_cost(&fleet, &prices, p, &s);
            prop_assert!(f(&mid) <= t * f(&a) + (1.0 - t) * f(&b) + 1e-9 * (1.0 + f(&a).abs() + f(&b).abs()));
        }

        #[test]
        fn allocation_is_monotone(pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..50.0), 1..5), x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let fleet = FleetSpec::from_pairs(&pairs).unwrap();
            let cap = fleet.total_capacity();
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            let a = allocate_deployment(&fleet, lo * cap).unwrap();
            let b = allocate_deployment(&fleet, hi * cap).unwrap();
            prop_assert!(a.d.iter().zip(&b.d).all(|(p, q)| p <= q));
            prop_assert!((b.total() - hi * cap).abs() <= 1e-9);
            prop_assert!(b.d.iter().zip(fleet.capacities()).all(|(d, c)| *d >= 0.0 && *d <= c));
        }
    }
}
