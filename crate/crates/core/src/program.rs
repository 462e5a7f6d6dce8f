//! Ancillary-service programs and deployment-rate samplers.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::deployment::DeploymentSample;
use crate::error::{Error, Result};
use crate::regulation::{RegJointModel, TruncatedExponential};

/// Which way the facility moves its load when a program is deployed.
///
/// Down-regulation keeps headroom: the facility idles the committed capacity
/// and deployment *raises* consumption, so the shut-down share is `1 - ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Up,
    Down,
}

/// Marginal law of a program's deployment rate ε ∈ [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeploymentModel {
    Constant { value: f64 },
    /// Truncated exponential on [0, 1] given by its mean (< 0.5).
    TruncExp { mean: f64 },
    /// Truncated exponential on [0, 1] given by its rate.
    TruncExpRate { lambda: f64 },
    /// All-or-nothing deployment, e.g. a price-responsive program.
    Bernoulli { probability: f64 },
    Uniform { low: f64, high: f64 },
}

impl DeploymentModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DeploymentModel::Constant { value } => (0.0..=1.0).contains(&value),
            DeploymentModel::TruncExp { mean } => mean > 0.0 && mean < 0.5,
            DeploymentModel::TruncExpRate { lambda } => lambda > 0.0 && lambda.is_finite(),
            DeploymentModel::Bernoulli { probability } => (0.0..=1.0).contains(&probability),
            DeploymentModel::Uniform { low, high } => 0.0 <= low && low <= high && high <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid deployment model {self:?}")))
        }
    }

    /// The truncated exponential behind this model, if it is one.
    pub fn truncexp(&self) -> Result<Option<TruncatedExponential>> {
        match *self {
            DeploymentModel::TruncExp { mean } => Ok(Some(TruncatedExponential::with_mean(mean)?)),
            DeploymentModel::TruncExpRate { lambda } => Ok(Some(TruncatedExponential::new(lambda)?)),
            _ => Ok(None),
        }
    }

    pub fn mean(&self) -> Result<f64> {
        Ok(match *self {
            DeploymentModel::Constant { value } => value,
            DeploymentModel::TruncExp { mean } => mean,
            DeploymentModel::TruncExpRate { lambda } => TruncatedExponential::new(lambda)?.mean(),
            DeploymentModel::Bernoulli { probability } => probability,
            DeploymentModel::Uniform { low, high } => 0.5 * (low + high),
        })
    }

    pub fn variance(&self) -> Result<f64> {
        Ok(match *self {
            DeploymentModel::Constant { .. } => 0.0,
            DeploymentModel::TruncExp { .. } | DeploymentModel::TruncExpRate { .. } => {
                self.truncexp()?.expect("truncexp variant").variance()
            }
            DeploymentModel::Bernoulli { probability } => probability * (1.0 - probability),
            DeploymentModel::Uniform { low, high } => (high - low).powi(2) / 12.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpec {
    pub id: String,
    /// Capacity price, $/MWh.
    pub price: f64,
    #[serde(default)]
    pub direction: Direction,
    pub deployment: DeploymentModel,
}

/// Couples one up and one down program through the mixture law where at
/// most one of them is deployed in a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRegulation {
    pub up: String,
    pub down: String,
    /// Probability that the slot is a reg-down slot.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramsConfig {
    pub programs: Vec<ProgramSpec>,
    #[serde(default)]
    pub regulation: Option<JointRegulation>,
}

impl ProgramsConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ProgramsConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.programs.is_empty() {
            return Err(Error::invalid("no programs configured"));
        }
        for (i, p) in self.programs.iter().enumerate() {
            if !(p.price >= 0.0) || !p.price.is_finite() {
                return Err(Error::invalid(format!(
                    "program {}: price must be nonnegative",
                    p.id
                )));
            }
            p.deployment.validate()?;
            if self.programs[..i].iter().any(|q| q.id == p.id) {
                return Err(Error::invalid(format!("duplicate program id {}", p.id)));
            }
        }
        if self.regulation.is_some() {
            self.sampler()?;
        }
        Ok(())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.programs.iter().position(|p| p.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.programs.iter().map(|p| p.id.clone()).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.programs.iter().map(|p| p.price).collect()
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.programs.iter().map(|p| p.direction).collect()
    }

    pub fn sampler(&self) -> Result<ProgramSampler> {
        ProgramSampler::new(&self.programs, self.regulation.as_ref())
    }
}

/// Draws raw (not direction-transformed) deployment vectors.
pub trait DeploymentSampler {
    fn dimension(&self) -> usize;

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    fn sample(&self, rng: &mut dyn RngCore) -> DeploymentSample {
        let mut v = vec![0.0; self.dimension()];
        self.sample_into(rng, &mut v);
        DeploymentSample::new_unchecked(v)
    }
}

#[derive(Debug, Clone)]
enum Marginal {
    Constant(f64),
    TruncExp(TruncatedExponential),
    Bernoulli(f64),
    Uniform(f64, f64),
}

impl Marginal {
    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            Marginal::Constant(v) => v,
            Marginal::TruncExp(d) => d.sample(rng),
            Marginal::Bernoulli(p) => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Marginal::Uniform(lo, hi) => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Sampler for a configured program list: independent marginals, except for
/// an optional coupled reg-up/reg-down pair.
#[derive(Debug, Clone)]
pub struct ProgramSampler {
    marginals: Vec<Marginal>,
    joint: Option<(usize, usize, RegJointModel)>,
}

impl ProgramSampler {
    pub fn new(programs: &[ProgramSpec], joint: Option<&JointRegulation>) -> Result<Self> {
        let mut marginals = Vec::with_capacity(programs.len());
        for p in programs {
            p.deployment.validate()?;
            marginals.push(match p.deployment {
                DeploymentModel::Constant { value } => Marginal::Constant(value),
                DeploymentModel::TruncExp { .. } | DeploymentModel::TruncExpRate { .. } => {
                    Marginal::TruncExp(p.deployment.truncexp()?.expect("truncexp variant"))
                }
                DeploymentModel::Bernoulli { probability } => Marginal::Bernoulli(probability),
                DeploymentModel::Uniform { low, high } => Marginal::Uniform(low, high),
            });
        }
        let joint = match joint {
            None => None,
            Some(j) => {
                let find = |id: &str| {
                    programs
                        .iter()
                        .position(|p| p.id == id)
                        .ok_or_else(|| Error::invalid(format!("regulation references unknown program {id}")))
                };
                let (up, down) = (find(&j.up)?, find(&j.down)?);
                if up == down {
                    return Err(Error::invalid("regulation up and down programs must differ"));
                }
                if programs[up].direction != Direction::Up || programs[down].direction != Direction::Down {
                    return Err(Error::invalid(
                        "regulation pair must be one up-direction and one down-direction program",
                    ));
                }
                let dist = |i: usize| {
                    programs[i].deployment.truncexp()?.ok_or_else(|| {
                        Error::invalid(format!(
                            "program {} in the regulation pair needs a truncated-exponential deployment",
                            programs[i].id
                        ))
                    })
                };
                let model = RegJointModel::new(j.theta, dist(up)?, dist(down)?)?;
                Some((up, down, model))
            }
        };
        Ok(Self { marginals, joint })
    }
}

impl DeploymentSampler for ProgramSampler {
    fn dimension(&self) -> usize {
        self.marginals.len()
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (i, m) in self.marginals.iter().enumerate() {
            if let Some((up, down, _)) = self.joint {
                if i == up || i == down {
                    continue;
                }
            }
            out[i] = m.draw(rng);
        }
        if let Some((up, down, ref model)) = self.joint {
            let (e_up, e_dn) = model.sample(rng);
            out[up] = e_up;
            out[down] = e_dn;
        }
    }
}

/// Always returns the same vector.
#[derive(Debug, Clone)]
pub struct FixedSampler(pub Vec<f64>);

impl DeploymentSampler for FixedSampler {
    fn dimension(&self) -> usize {
        self.0.len()
    }

    fn sample_into(&self, _rng: &mut dyn RngCore, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Bootstraps uniformly from a finite pool of observed vectors.
#[derive(Debug, Clone)]
pub struct EmpiricalSampler {
    pool: Vec<Vec<f64>>,
}

impl EmpiricalSampler {
    pub fn new(pool: Vec<Vec<f64>>) -> Result<Self> {
        let dim = pool
            .first()
            .ok_or_else(|| Error::InsufficientData("empty deployment pool".into()))?
            .len();
        if pool.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("deployment pool has mixed dimensions"));
        }
        Ok(Self { pool })
    }
}

impl DeploymentSampler for EmpiricalSampler {
    fn dimension(&self) -> usize {
        self.pool[0].len()
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let idx = rng.random_range(0..self.pool.len());
        out.copy_from_slice(&self.pool[idx]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_parses_and_samples_joint_pair() {
        let cfg = ProgramsConfig::from_json(
            r#"{
              "programs": [
                {"id": "regup", "price": 12.0, "direction": "up", "deployment": {"kind": "trunc_exp", "mean": 0.18}},
                {"id": "regdn", "price": 8.0, "direction": "down", "deployment": {"kind": "trunc_exp", "mean": 0.27}},
                {"id": "pr", "price": 5.0, "deployment": {"kind": "bernoulli", "probability": 0.1}}
              ],
              "regulation": {"up": "regup", "down": "regdn", "theta": 0.4}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.directions(), vec![Direction::Up, Direction::Down, Direction::Up]);
        let sampler = cfg.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = sampler.sample(&mut rng);
            let e = s.as_slice();
            assert!(e[0] == 0.0 || e[1] == 0.0, "coupled pair deployed together: {e:?}");
            assert!(e[2] == 0.0 || e[2] == 1.0);
        }
    }

    #[test]
    fn regulation_pair_must_be_truncexp() {
        let err = ProgramsConfig::from_json(
            r#"{
              "programs": [
                {"id": "u", "price": 1.0, "direction": "up", "deployment": {"kind": "constant", "value": 0.2}},
                {"id": "d", "price": 1.0, "direction": "down", "deployment": {"kind": "trunc_exp", "mean": 0.2}}
              ],
              "regulation": {"up": "u", "down": "d", "theta": 0.5}
            }"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_bad_models() {
        assert!(DeploymentModel::TruncExp { mean: 0.6 }.validate().is_err());
        assert!(DeploymentModel::Constant { value: 1.5 }.validate().is_err());
        assert!(DeploymentModel::Uniform { low: 0.5, high: 0.2 }.validate().is_err());
    }

    #[test]
    fn empirical_sampler_draws_from_pool() {
        let s = EmpiricalSampler::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let v = s.sample(&mut rng);
            assert!(v.as_slice() == [0.1, 0.2] || v.as_slice() == [0.3, 0.4]);
        }
        assert!(EmpiricalSampler::new(vec![]).is_err());
    }
}
