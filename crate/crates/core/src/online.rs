//! Online gradient descent against revealed slot costs, with static-regret
//! accounting.
//!
//! Each round the operator commits a profile, then the slot's deployment,
//! rewards and prices are revealed and the played profile is charged. Rounds
//! are routed to per-hour learners so that each hour of the day keeps its
//! own iterate.

use serde::{Deserialize, Serialize};

use crate::deployment::{critical_index, dot, realized_cost, DeploymentSample, Profile};
use crate::error::{Error, Result};
use crate::fleet::FleetSpec;
use crate::program::Direction;
use crate::sgd::{diameter, grad_bound, project_feasible};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OgdConfig {
    pub horizon: usize,
    pub grad_bound: f64,
    pub diameter: f64,
    pub learners: usize,
    pub capacity: f64,
}

impl OgdConfig {
    /// Step constants from the worst-case reward and price.
    pub fn from_bounds(
        horizon: usize,
        programs: usize,
        capacity: f64,
        max_reward: f64,
        max_price: f64,
        learners: usize,
    ) -> Self {
        Self {
            horizon,
            grad_bound: grad_bound(programs, max_reward, max_price),
            diameter: diameter(programs, capacity),
            learners,
            capacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.learners == 0 {
            return Err(Error::invalid("need at least one learner"));
        }
        if !(self.capacity >= 0.0) || !(self.diameter >= 0.0) || !(self.grad_bound >= 0.0) {
            return Err(Error::invalid("capacity, diameter and gradient bound must be nonnegative"));
        }
        Ok(())
    }

    pub fn step(&self, t: usize) -> f64 {
        if self.grad_bound <= 0.0 {
            return 0.0;
        }
        self.diameter / (self.grad_bound * (t as f64).sqrt())
    }
}

/// What is revealed after a round: the slot's fleet rewards, program prices
/// and deployment rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundData {
    pub fleet: FleetSpec,
    pub prices: Vec<f64>,
    /// Direction-transformed rates; zero where unobserved.
    pub epsilon: Vec<f64>,
    pub observed: Vec<bool>,
    /// Hour of day, if the round carries a timestamp.
    pub hour: Option<u32>,
}

impl RoundData {
    /// `epsilon` holds raw rates; `None` marks a program whose deployment was
    /// not recorded, which is charged as undeployed and gets no gradient.
    pub fn new(
        fleet: FleetSpec,
        prices: Vec<f64>,
        epsilon: &[Option<f64>],
        directions: &[Direction],
        hour: Option<u32>,
    ) -> Result<Self> {
        if prices.len() != epsilon.len() || prices.len() != directions.len() {
            return Err(Error::invalid("round prices, rates and directions disagree in length"));
        }
        let mut eff = Vec::with_capacity(epsilon.len());
        for (e, d) in epsilon.iter().zip(directions) {
            eff.push(match (e, d) {
                (None, _) => 0.0,
                (Some(v), _) if !(0.0..=1.0).contains(v) => {
                    return Err(Error::invalid(format!("deployment rate {v} outside [0, 1]")))
                }
                (Some(v), Direction::Up) => *v,
                (Some(v), Direction::Down) => 1.0 - v,
            });
        }
        Ok(Self {
            fleet,
            observed: epsilon.iter().map(Option::is_some).collect(),
            prices,
            epsilon: eff,
            hour,
        })
    }

    /// Fully observed round from direction-transformed rates.
    pub fn observed(fleet: FleetSpec, prices: Vec<f64>, epsilon: Vec<f64>, hour: Option<u32>) -> Self {
        let observed = vec![true; epsilon.len()];
        Self {
            fleet,
            prices,
            epsilon,
            observed,
            hour,
        }
    }

    pub fn cost(&self, profile: &Profile) -> f64 {
        realized_cost(
            &self.fleet,
            &self.prices,
            profile,
            &DeploymentSample::new_unchecked(self.epsilon.clone()),
        )
    }

    fn cost_slice(&self, c: &[f64]) -> f64 {
        let u = dot(c, &self.epsilon).max(0.0);
        let kc = critical_index(&self.fleet, u);
        crate::deployment::piece_offset(&self.fleet, kc) + self.fleet.reward(kc) * u - dot(c, &self.prices)
    }

    /// Subgradient of this round's cost at `c`, zero on unobserved programs.
    pub fn subgradient(&self, profile: &Profile) -> Vec<f64> {
        let u = dot(profile.as_slice(), &self.epsilon).max(0.0);
        let r = self.fleet.reward(critical_index(&self.fleet, u));
        self.epsilon
            .iter()
            .zip(&self.prices)
            .zip(&self.observed)
            .map(|((e, p), &seen)| if seen { r * e - p } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOutcome {
    pub round: usize,
    pub learner: usize,
    pub profile_played: Profile,
    pub cost_incurred: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub static_regret: f64,
    pub average_regret: f64,
    pub played_cost: f64,
    pub hindsight_cost: f64,
    pub hindsight_profile: Profile,
    pub bound: f64,
}

/// Projected step c − η_t g with η_t = D/(G√t).
pub fn ogd_step(current: &Profile, gradient: &[f64], t: usize, cfg: &OgdConfig) -> Profile {
    let eta = cfg.step(t.max(1));
    let next: Vec<f64> = current
        .as_slice()
        .iter()
        .zip(gradient)
        .map(|(c, g)| c - eta * g)
        .collect();
    project_feasible(&next, cfg.capacity)
}

/// 3 C √(T N / 2) max(r, p) for N ≥ 2, and (3/2) C max(r, p) √T for N = 1.
pub fn regret_bound(horizon: usize, programs: usize, cap: f64, max_reward: f64, max_price: f64) -> f64 {
    1.5 * diameter(programs, cap) * grad_bound(programs, max_reward, max_price) * (horizon as f64).sqrt()
}

fn learner_of(round: &RoundData, index: usize, learners: usize) -> usize {
    match round.hour {
        Some(h) => h as usize % learners,
        None => index % learners,
    }
}

fn check_rounds(rounds: &[RoundData], cap: f64) -> Result<usize> {
    let n = rounds
        .first()
        .ok_or_else(|| Error::InsufficientData("no rounds".into()))?
        .prices
        .len();
    for (t, r) in rounds.iter().enumerate() {
        if r.prices.len() != n || r.epsilon.len() != n || r.observed.len() != n {
            return Err(Error::invalid(format!("round {t} has a different program count")));
        }
        if r.fleet.total_capacity() > cap * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::invalid(format!(
                "round {t} fleet capacity {} exceeds the configured capacity {cap}",
                r.fleet.total_capacity()
            )));
        }
    }
    Ok(n)
}

/// Plays OGD through `rounds` (at most `cfg.horizon` of them).
pub fn play(rounds: &[RoundData], cfg: &OgdConfig) -> Result<Vec<RoundOutcome>> {
    cfg.validate()?;
    let rounds = &rounds[..rounds.len().min(cfg.horizon)];
    let n = check_rounds(rounds, cfg.capacity)?;
    let mut state: Vec<(Profile, usize)> = vec![(Profile::zeros(n), 0); cfg.learners];
    let mut outcomes = Vec::with_capacity(rounds.len());
    for (index, round) in rounds.iter().enumerate() {
        let learner = learner_of(round, index, cfg.learners);
        let (profile, count) = &mut state[learner];
        let cost = round.cost(profile);
        let gradient = round.subgradient(profile);
        if !cost.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite cost or gradient in round {index}")));
        }
        let played = profile.clone();
        *count += 1;
        *profile = ogd_step(profile, &gradient, *count, cfg);
        outcomes.push(RoundOutcome {
            round: index,
            learner,
            profile_played: played,
            cost_incurred: cost,
            gradient,
        });
    }
    Ok(outcomes)
}

/// Plays the rounds and scores them against the best fixed profile in
/// hindsight.
pub fn run_online(rounds: &[RoundData], cfg: &OgdConfig) -> Result<(Vec<RoundOutcome>, RegretReport)> {
    let outcomes = play(rounds, cfg)?;
    let rounds = &rounds[..outcomes.len()];
    let n = rounds[0].prices.len();
    let hindsight = hindsight_optimum(rounds, cfg.capacity)?;
    let hindsight_cost = total_cost(rounds, hindsight.as_slice());
    let played_cost: f64 = outcomes.iter().map(|o| o.cost_incurred).sum();
    let static_regret = played_cost - hindsight_cost;
    let max_reward = rounds.iter().map(|r| r.fleet.max_reward()).fold(0.0, f64::max);
    let max_price = rounds
        .iter()
        .flat_map(|r| r.prices.iter().copied())
        .fold(0.0, f64::max);
    let report = RegretReport {
        static_regret,
        average_regret: static_regret / outcomes.len() as f64,
        played_cost,
        hindsight_cost,
        hindsight_profile: hindsight,
        bound: regret_bound(outcomes.len(), n, cfg.capacity, max_reward, max_price),
    };
    Ok((outcomes, report))
}

/// Cumulative regret against the prefix hindsight optimum after each round
/// in `checkpoints` (1-based round counts).
pub fn regret_curve(rounds: &[RoundData], outcomes: &[RoundOutcome], cap: f64, checkpoints: &[usize]) -> Result<Vec<f64>> {
    let mut played = Vec::with_capacity(outcomes.len() + 1);
    played.push(0.0);
    for o in outcomes {
        played.push(played.last().unwrap() + o.cost_incurred);
    }
    checkpoints
        .iter()
        .map(|&t| {
            if t == 0 || t > outcomes.len() {
                return Err(Error::invalid(format!("checkpoint {t} outside 1..={}", outcomes.len())));
            }
            let best = hindsight_optimum(&rounds[..t], cap)?;
            Ok(played[t] - total_cost(&rounds[..t], best.as_slice()))
        })
        .collect()
}

pub fn total_cost(rounds: &[RoundData], c: &[f64]) -> f64 {
    rounds.iter().map(|r| r.cost_slice(c)).sum()
}

/// Golden-section iterations per nested coordinate; shrinks the bracket
/// below one ulp of the capacity.
const GOLDEN_ITERS: usize = 90;

/// Minimizer of Σ_t cost_t(c) over {c ≥ 0, Σ c ≤ cap}.
///
/// The summed cost is convex and piecewise linear. The last coordinate is
/// minimized exactly by a slope scan over its breakpoints; each leading
/// coordinate is minimized by golden-section search over the partial
/// minimum of the remaining ones, which stays convex.
pub fn hindsight_optimum(rounds: &[RoundData], cap: f64) -> Result<Profile> {
    let n = check_rounds(rounds, cap)?;
    let mut c = vec![0.0; n];
    minimize_from(rounds, cap, 0, &mut c);
    Ok(Profile::new(c))
}

/// Minimizes over coordinates `i..` with the leading ones fixed in `c`,
/// leaving the minimizer in `c` and returning the value.
fn minimize_from(rounds: &[RoundData], cap: f64, i: usize, c: &mut [f64]) -> f64 {
    let used: f64 = c[..i].iter().sum();
    let room = (cap - used).max(0.0);
    if i + 1 == c.len() {
        c[i] = line_minimizer(rounds, c, i, room);
        return total_cost(rounds, c);
    }
    let eval = |x: f64, c: &mut [f64]| {
        c[i] = x;
        c[i + 1..].iter_mut().for_each(|v| *v = 0.0);
        minimize_from(rounds, cap, i + 1, c)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, room);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = eval(x1, c);
    let mut f2 = eval(x2, c);
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = eval(x1, c);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = eval(x2, c);
        }
    }
    // The optimum may sit on an end of the bracket.
    let mut best = (f64::INFINITY, 0.0);
    for x in [0.0, room, x1, x2] {
        let v = eval(x, c);
        if v < best.0 {
            best = (v, x);
        }
    }
    eval(best.1, c)
}

/// Exact minimizer of the summed cost along coordinate `i` over [0, room],
/// other coordinates fixed and `c[i]` ignored.
fn line_minimizer(rounds: &[RoundData], c: &[f64], i: usize, room: f64) -> f64 {
    let mut slope = 0.0;
    let mut events: Vec<(f64, f64)> = Vec::new();
    for r in rounds {
        let e = r.epsilon[i];
        let base: f64 = c
            .iter()
            .zip(&r.epsilon)
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, (x, y))| x * y)
            .sum::<f64>()
            .max(0.0);
        slope -= r.prices[i];
        if e <= 0.0 {
            continue;
        }
        // Type absorbing deployment just above `base`.
        let machines = r.fleet.machines();
        let mut cumulative = 0.0;
        let mut k = machines.len() - 1;
        for (q, m) in machines.iter().enumerate() {
            cumulative += m.capacity_mw;
            if base < cumulative {
                k = q;
                break;
            }
        }
        slope += e * machines[k].reward;
        for q in k..machines.len() - 1 {
            cumulative = machines[..=q].iter().map(|m| m.capacity_mw).sum::<f64>();
            let x = (cumulative - base) / e;
            if x >= room {
                break;
            }
            events.push((x, e * (machines[q + 1].reward - machines[q].reward)));
        }
    }
    if slope >= 0.0 {
        return 0.0;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (x, jump) in events {
        slope += jump;
        if slope >= 0.0 {
            return x.clamp(0.0, room);
        }
    }
    room
}
