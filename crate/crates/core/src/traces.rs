//! Market traces: CSV ingestion and export, a seeded synthetic generator,
//! and helpers that turn records into per-slot fleets and optimizer inputs.
//!
//! Two files describe a trace. The market file holds one row per hour,
//! `timestamp,rt_price,coin_price`. The program file is long-format,
//! `timestamp,program_id,price,epsilon`, with `epsilon` left empty when the
//! deployment of that slot is unknown.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{FleetConfig, FleetSpec};
use crate::online::RoundData;
use crate::program::{Direction, ProgramsConfig};
use crate::regulation::{RegJointModel, TruncatedExponential};
use crate::sgd::Scenario;
use crate::single_machine::ProgramStats;

pub const MARKET_HEADER: [&str; 3] = ["timestamp", "rt_price", "coin_price"];
pub const PROGRAM_HEADER: [&str; 4] = ["timestamp", "program_id", "price", "epsilon"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub timestamp: DateTime<Utc>,
    pub rt_price: f64,
    pub coin_price: f64,
    /// Indexed like [`TraceSet::program_ids`].
    pub as_prices: Vec<f64>,
    pub deployment: Vec<Option<f64>>,
}

impl TraceRecord {
    pub fn hour(&self) -> u32 {
        self.timestamp.hour()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSet {
    pub program_ids: Vec<String>,
    pub records: Vec<TraceRecord>,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn program_index(&self, id: &str) -> Option<usize> {
        self.program_ids.iter().position(|p| p == id)
    }
}

/// Deploys fully when the real-time price strictly exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceResponsiveModel {
    pub threshold: f64,
}

pub fn price_responsive_eps(model: &PriceResponsiveModel, rt_price: f64) -> f64 {
    if rt_price > model.threshold {
        1.0
    } else {
        0.0
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        ));
    }
    Ok(rdr)
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, path: &Path, line: u64) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing field `{name}`")))
}

fn parse_f64(raw: &str, name: &str, path: &Path, line: u64) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(path, line, format!("field `{name}`: cannot parse `{raw}` as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("field `{name}`: value must be finite")));
    }
    Ok(v)
}

fn parse_time(raw: &str, path: &Path, line: u64) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| parse_err(path, line, format!("field `timestamp`: {e}")))
}

fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Loads and joins a market file and a program file.
pub fn load_traces(market_path: &Path, program_path: &Path) -> Result<TraceSet> {
    let mut market: Vec<(DateTime<Utc>, f64, f64, u64)> = Vec::new();
    let mut rdr = open_csv(market_path, &MARKET_HEADER)?;
    for row in rdr.records() {
        let rec = row?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = parse_time(field(&rec, 0, "timestamp", market_path, line)?, market_path, line)?;
        let rt = parse_f64(field(&rec, 1, "rt_price", market_path, line)?, "rt_price", market_path, line)?;
        let coin = parse_f64(field(&rec, 2, "coin_price", market_path, line)?, "coin_price", market_path, line)?;
        if coin < 0.0 {
            return Err(parse_err(market_path, line, "field `coin_price`: must be nonnegative"));
        }
        market.push((t, rt, coin, line));
    }
    if market.windows(2).any(|w| w[1].0 < w[0].0) {
        log::warn!("{}: timestamps out of order, sorting", market_path.display());
        market.sort_by_key(|m| m.0);
    }
    if let Some(w) = market.windows(2).find(|w| w[1].0 == w[0].0) {
        return Err(parse_err(
            market_path,
            w[1].3,
            format!("duplicate timestamp {}", format_time(&w[1].0)),
        ));
    }

    let mut program_ids: Vec<String> = Vec::new();
    let mut entries: BTreeMap<(DateTime<Utc>, usize), (f64, Option<f64>)> = BTreeMap::new();
    let mut rdr = open_csv(program_path, &PROGRAM_HEADER)?;
    let mut last: Option<DateTime<Utc>> = None;
    let mut warned = false;
    for row in rdr.records() {
        let rec = row?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = parse_time(field(&rec, 0, "timestamp", program_path, line)?, program_path, line)?;
        let id = field(&rec, 1, "program_id", program_path, line)?;
        if id.is_empty() {
            return Err(parse_err(program_path, line, "field `program_id`: empty"));
        }
        let price = parse_f64(field(&rec, 2, "price", program_path, line)?, "price", program_path, line)?;
        let raw_eps = rec.get(3).unwrap_or("");
        let eps = if raw_eps.is_empty() {
            None
        } else {
            let e = parse_f64(raw_eps, "epsilon", program_path, line)?;
            if !(0.0..=1.0).contains(&e) {
                return Err(parse_err(
                    program_path,
                    line,
                    format!("field `epsilon`: {e} outside [0, 1]"),
                ));
            }
            Some(e)
        };
        if !warned && last.is_some_and(|l| t < l) {
            log::warn!("{}: timestamps out of order, sorting", program_path.display());
            warned = true;
        }
        last = Some(t);
        let idx = match program_ids.iter().position(|p| p == id) {
            Some(i) => i,
            None => {
                program_ids.push(id.to_owned());
                program_ids.len() - 1
            }
        };
        if entries.insert((t, idx), (price, eps)).is_some() {
            return Err(parse_err(
                program_path,
                line,
                format!("duplicate row for program {id} at {}", format_time(&t)),
            ));
        }
    }

    let mut records = Vec::with_capacity(market.len());
    for (t, rt, coin, line) in market {
        let mut as_prices = Vec::with_capacity(program_ids.len());
        let mut deployment = Vec::with_capacity(program_ids.len());
        for (i, id) in program_ids.iter().enumerate() {
            let (p, e) = entries.remove(&(t, i)).ok_or_else(|| {
                parse_err(
                    market_path,
                    line,
                    format!("no row for program {id} at {} in {}", format_time(&t), program_path.display()),
                )
            })?;
            as_prices.push(p);
            deployment.push(e);
        }
        records.push(TraceRecord {
            timestamp: t,
            rt_price: rt,
            coin_price: coin,
            as_prices,
            deployment,
        });
    }
    if let Some(((t, i), _)) = entries.into_iter().next() {
        return Err(Error::invalid(format!(
            "{}: program {} has a row at {} with no market row",
            program_path.display(),
            program_ids[i],
            format_time(&t)
        )));
    }
    Ok(TraceSet { program_ids, records })
}

/// Writes the pair of files read by [`load_traces`].
pub fn write_traces(set: &TraceSet, market_path: &Path, program_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(market_path)?;
    w.write_record(MARKET_HEADER)?;
    for r in &set.records {
        w.write_record([format_time(&r.timestamp), r.rt_price.to_string(), r.coin_price.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(program_path)?;
    w.write_record(PROGRAM_HEADER)?;
    for r in &set.records {
        let t = format_time(&r.timestamp);
        for (i, id) in set.program_ids.iter().enumerate() {
            let eps = r.deployment[i].map(|e| e.to_string()).unwrap_or_default();
            w.write_record([t.clone(), id.clone(), r.as_prices[i].to_string(), eps])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A normal distribution whose parameters may vary by hour of day: one
/// value applies to every hour, 24 values give one per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyNormal {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub std: Vec<f64>,
}

impl HourlyNormal {
    pub fn constant(mean: f64) -> Self {
        Self {
            mean: vec![mean],
            std: vec![],
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok_len = |n: usize| n == 1 || n == 24;
        if !ok_len(self.mean.len()) || !(self.std.is_empty() || ok_len(self.std.len())) {
            return Err(Error::invalid(format!("{what}: give 1 or 24 values per parameter")));
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid(format!("{what}: means must be finite and deviations nonnegative")));
        }
        Ok(())
    }

    fn at(v: &[f64], hour: u32) -> f64 {
        match v.len() {
            0 => 0.0,
            1 => v[0],
            _ => v[hour as usize % 24],
        }
    }

    pub fn mean_at(&self, hour: u32) -> f64 {
        Self::at(&self.mean, hour)
    }

    pub fn std_at(&self, hour: u32) -> f64 {
        Self::at(&self.std, hour)
    }

    fn draw<R: Rng + ?Sized>(&self, hour: u32, rng: &mut R) -> f64 {
        let (m, s) = (self.mean_at(hour), self.std_at(hour));
        if s == 0.0 {
            return m;
        }
        Normal::new(m, s).expect("validated deviation").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtPriceSpec {
    #[serde(flatten)]
    pub base: HourlyNormal,
    #[serde(default)]
    pub spike_probability: f64,
    #[serde(default)]
    pub spike_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthDeployment {
    Constant { value: f64 },
    TruncExp { mean: f64 },
    Bernoulli { probability: f64 },
    Uniform { low: f64, high: f64 },
    PriceResponsive { threshold: f64 },
    /// Deployment never recorded.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProgram {
    pub id: String,
    pub price: HourlyNormal,
    pub deployment: SynthDeployment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRegulation {
    pub up: String,
    pub down: String,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub start: DateTime<Utc>,
    pub hours: usize,
    pub rt_price: RtPriceSpec,
    pub coin_price: HourlyNormal,
    pub programs: Vec<SynthProgram>,
    #[serde(default)]
    pub regulation: Option<SynthRegulation>,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.rt_price.base.validate("rt_price")?;
        self.coin_price.validate("coin_price")?;
        if !(0.0..=1.0).contains(&self.rt_price.spike_probability) || !self.rt_price.spike_price.is_finite() {
            return Err(Error::invalid("rt_price spike probability must be in [0, 1]"));
        }
        if self.programs.is_empty() {
            return Err(Error::invalid("synthesis spec has no programs"));
        }
        for (i, p) in self.programs.iter().enumerate() {
            p.price.validate(&format!("program {} price", p.id))?;
            if self.programs[..i].iter().any(|q| q.id == p.id) {
                return Err(Error::invalid(format!("duplicate program id {}", p.id)));
            }
            let bad = match p.deployment {
                SynthDeployment::Constant { value } => !(0.0..=1.0).contains(&value),
                SynthDeployment::TruncExp { mean } => TruncatedExponential::with_mean(mean).is_err(),
                SynthDeployment::Bernoulli { probability } => !(0.0..=1.0).contains(&probability),
                SynthDeployment::Uniform { low, high } => !(0.0 <= low && low <= high && high <= 1.0),
                SynthDeployment::PriceResponsive { threshold } => !threshold.is_finite(),
                SynthDeployment::Missing => false,
            };
            if bad {
                return Err(Error::invalid(format!("program {}: invalid deployment model", p.id)));
            }
        }
        self.joint()?;
        Ok(())
    }

    fn joint(&self) -> Result<Option<(usize, usize, RegJointModel)>> {
        let Some(reg) = &self.regulation else {
            return Ok(None);
        };
        let find = |id: &str| {
            self.programs
                .iter()
                .position(|p| p.id == id)
                .ok_or_else(|| Error::invalid(format!("regulation references unknown program {id}")))
        };
        let (up, down) = (find(&reg.up)?, find(&reg.down)?);
        if up == down {
            return Err(Error::invalid("regulation up and down programs must differ"));
        }
        let dist = |i: usize| match self.programs[i].deployment {
            SynthDeployment::TruncExp { mean } => TruncatedExponential::with_mean(mean),
            _ => Err(Error::invalid(format!(
                "program {} in the regulation pair needs a trunc_exp deployment",
                self.programs[i].id
            ))),
        };
        Ok(Some((up, down, RegJointModel::new(reg.theta, dist(up)?, dist(down)?)?)))
    }
}

/// Draws `spec.hours` hourly records. The output depends only on
/// `(spec, seed)`.
pub fn synthesize_traces(spec: &SynthSpec, seed: u64) -> Result<TraceSet> {
    spec.validate()?;
    let joint = spec.joint()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(spec.hours);
    for h in 0..spec.hours {
        let timestamp = spec.start + Duration::hours(h as i64);
        let hour = timestamp.hour();
        let coin_price = spec.coin_price.draw(hour, &mut rng).max(0.0);
        let mut rt_price = spec.rt_price.base.draw(hour, &mut rng);
        if spec.rt_price.spike_probability > 0.0 && rng.random::<f64>() < spec.rt_price.spike_probability {
            rt_price = spec.rt_price.spike_price;
        }
        let as_prices: Vec<f64> = spec
            .programs
            .iter()
            .map(|p| p.price.draw(hour, &mut rng).max(0.0))
            .collect();
        let mut deployment = vec![None; spec.programs.len()];
        for (i, p) in spec.programs.iter().enumerate() {
            if let Some((up, down, model)) = joint {
                if i == down {
                    continue;
                }
                if i == up {
                    let (e_up, e_dn) = model.sample(&mut rng);
                    deployment[up] = Some(e_up);
                    deployment[down] = Some(e_dn);
                    continue;
                }
            }
            deployment[i] = match p.deployment {
                SynthDeployment::Constant { value } => Some(value),
                SynthDeployment::TruncExp { mean } => Some(TruncatedExponential::with_mean(mean)?.sample(&mut rng)),
                SynthDeployment::Bernoulli { probability } => {
                    Some(if rng.random::<f64>() < probability { 1.0 } else { 0.0 })
                }
                SynthDeployment::Uniform { low, high } => Some(low + (high - low) * rng.random::<f64>()),
                SynthDeployment::PriceResponsive { threshold } => {
                    Some(price_responsive_eps(&PriceResponsiveModel { threshold }, rt_price))
                }
                SynthDeployment::Missing => None,
            };
        }
        records.push(TraceRecord {
            timestamp,
            rt_price,
            coin_price,
            as_prices,
            deployment,
        });
    }
    Ok(TraceSet {
        program_ids: spec.programs.iter().map(|p| p.id.clone()).collect(),
        records,
    })
}

/// Sample mean and unbiased variance of a program's recorded deployment,
/// and its mean price over all records.
///
/// The unbiased variance may exceed m(1 − m) by the factor n/(n − 1).
pub fn estimate_stats(records: &[TraceRecord], program_index: usize) -> Result<ProgramStats> {
    if records.iter().any(|r| program_index >= r.as_prices.len()) {
        return Err(Error::invalid(format!("program index {program_index} out of range")));
    }
    let eps: Vec<f64> = records.iter().filter_map(|r| r.deployment[program_index]).collect();
    if eps.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 recorded deployments for program {program_index}, found {}",
            eps.len()
        )));
    }
    let n = eps.len() as f64;
    let mean = eps.iter().sum::<f64>() / n;
    let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let price = records.iter().map(|r| r.as_prices[program_index]).sum::<f64>() / records.len() as f64;
    Ok(ProgramStats {
        price,
        mean_eps: mean,
        var_eps: var,
    })
}

/// The slot's canonical fleet at its coin and electricity prices.
pub fn per_slot_rewards(record: &TraceRecord, fleet: &FleetConfig, clamp_negative: bool) -> Result<FleetSpec> {
    fleet.fleet_at(record.coin_price, record.rt_price, clamp_negative)
}

/// Column of each configured program in the trace.
pub fn program_columns(set: &TraceSet, programs: &ProgramsConfig) -> Result<Vec<usize>> {
    programs
        .programs
        .iter()
        .map(|p| {
            set.program_index(&p.id)
                .ok_or_else(|| Error::invalid(format!("program {} not present in the traces", p.id)))
        })
        .collect()
}

/// Online rounds, one per record, keyed to their hour of day.
pub fn to_rounds(
    set: &TraceSet,
    fleet: &FleetConfig,
    programs: &ProgramsConfig,
    clamp_negative: bool,
) -> Result<Vec<RoundData>> {
    let cols = program_columns(set, programs)?;
    let directions: Vec<Direction> = programs.directions();
    set.records
        .iter()
        .map(|r| {
            let prices = cols.iter().map(|&i| r.as_prices[i]).collect();
            let eps: Vec<Option<f64>> = cols.iter().map(|&i| r.deployment[i]).collect();
            RoundData::new(per_slot_rewards(r, fleet, clamp_negative)?, prices, &eps, &directions, Some(r.hour()))
        })
        .collect()
}

/// Historical slots grouped by hour of day, as optimizer scenarios.
/// Unrecorded deployments count as undeployed.
pub fn scenarios_by_hour(
    set: &TraceSet,
    fleet: &FleetConfig,
    programs: &ProgramsConfig,
    clamp_negative: bool,
) -> Result<BTreeMap<u32, Vec<Scenario>>> {
    let mut out: BTreeMap<u32, Vec<Scenario>> = BTreeMap::new();
    for (rec, round) in set.records.iter().zip(to_rounds(set, fleet, programs, clamp_negative)?) {
        out.entry(rec.hour()).or_default().push(Scenario {
            fleet: round.fleet,
            prices: round.prices,
            epsilon: round.epsilon,
        });
    }
    Ok(out)
}
