//! Scenario files, experiment sweeps and report emission.
//!
//! A [`Scenario`] is read from JSON (unknown fields are rejected), expanded
//! into one job per `(sweep value, algorithm, seed)`, and every job runs the
//! slot decision followed by all minislots. Reports are written as CSV with
//! every float in `{:.8e}` form (9 significant digits); rows are sorted by
//! job key, so identical inputs give byte-identical files.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::TopologyParams;
use crate::error::{config, Error, Result};
use crate::phy::{self, EmbbSliceRequest, SystemParams, UrllcSliceRequest};
use crate::queueing::{self, BlockingScenario, BlockingSlice};
use crate::slicing::{
    run_minislots, run_slot, sample_count, validate_slot, AcceptancePolicy, Algorithm, Instance, MinislotDecision, Mode,
    SlicingConfig, SlotDecision, SlotRun,
};
use crate::solver::{SnrCase, SolverOptions};

/// Relative tolerance of the independent constraint re-check on every row.
const RECHECK_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    /// Multiplies every URLLC deadline.
    #[serde(rename = "deadline", alias = "D_s")]
    Deadline,
    /// Multiplies every eMBB rate requirement.
    #[serde(rename = "rate", alias = "R_s")]
    Rate,
    /// Sets η.
    #[serde(rename = "eta")]
    Eta,
    /// Sets the system bandwidth W in Hz.
    #[serde(rename = "bandwidth", alias = "W")]
    Bandwidth,
    #[serde(rename = "mode")]
    Mode,
    #[serde(rename = "snr_case")]
    SnrCase,
    /// Sets the UE count of every slice.
    #[serde(rename = "ue_count")]
    UeCount,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Deadline => "deadline",
            SweepParam::Rate => "rate",
            SweepParam::Eta => "eta",
            SweepParam::Bandwidth => "bandwidth",
            SweepParam::Mode => "mode",
            SweepParam::SnrCase => "snr_case",
            SweepParam::UeCount => "ue_count",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "deadline" | "D_s" => SweepParam::Deadline,
            "rate" | "R_s" => SweepParam::Rate,
            "eta" => SweepParam::Eta,
            "bandwidth" | "W" => SweepParam::Bandwidth,
            "mode" => SweepParam::Mode,
            "snr_case" => SweepParam::SnrCase,
            "ue_count" => SweepParam::UeCount,
            _ => return Err(config(format!("unknown sweep parameter '{s}'"))),
        })
    }
}

/// One grid value: a number, or a word for `mode` and `snr_case`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    Text(String),
}

impl GridValue {
    /// Parses a command-line token: numbers first, words otherwise.
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        s.parse::<f64>().map(GridValue::Number).unwrap_or_else(|_| GridValue::Text(s.to_string()))
    }

    fn number(&self, param: SweepParam) -> Result<f64> {
        match self {
            GridValue::Number(x) if x.is_finite() => Ok(*x),
            _ => Err(config(format!("sweep over {} needs numeric grid values, got {self}", param.name()))),
        }
    }
}

impl fmt::Display for GridValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridValue::Number(x) => write!(f, "{x}"),
            GridValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub grid: Vec<GridValue>,
}

/// Inputs of the `blocking` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockingJob {
    /// Loss system to analyze; derived from the URLLC requests when absent.
    pub system: Option<BlockingScenario>,
    pub mc_arrivals: u64,
    pub seed: u64,
    /// Narrowing factors checked for every slice.
    pub scaling_factors: Vec<u32>,
}

impl Default for BlockingJob {
    fn default() -> Self {
        Self { system: None, mc_arrivals: 1_000_000, seed: 1, scaling_factors: vec![2, 4] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub topology: TopologyParams,
    pub system: SystemParams,
    pub embb: Vec<EmbbSliceRequest>,
    pub urllc: Vec<UrllcSliceRequest>,
    pub algorithms: Vec<Algorithm>,
    pub snr_case: SnrCase,
    pub mode: Mode,
    pub acceptance: AcceptancePolicy,
    pub seeds: Vec<u64>,
    /// Overrides the sample count `M`.
    pub samples: Option<usize>,
    /// Upper bound on `M` when it comes from the sample-size formula.
    pub sample_cap: usize,
    /// Overrides `T` from the system parameters.
    pub minislots: Option<usize>,
    /// Fresh samples used to re-check every restored slot decision.
    pub validation_samples: usize,
    pub solver: SolverOptions,
    pub sweep: Option<SweepSpec>,
    pub blocking: Option<BlockingJob>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            topology: TopologyParams::default(),
            system: SystemParams::default(),
            embb: phy::default_embb_requests(),
            urllc: phy::default_urllc_requests(),
            algorithms: Algorithm::ALL.to_vec(),
            snr_case: SnrCase::Enforced,
            mode: Mode::Multicast,
            acceptance: AcceptancePolicy::Utility,
            seeds: vec![1],
            samples: None,
            sample_cap: 50,
            minislots: None,
            validation_samples: 0,
            solver: SolverOptions::default(),
            sweep: None,
            blocking: None,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| config(format!("scenario JSON: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.system.validate()?;
        for r in &self.embb {
            r.validate()?;
        }
        for r in &self.urllc {
            r.validate()?;
            if r.load() >= 1.0 {
                return Err(config(format!("URLLC load λ·D = {} must stay below 1", r.load())));
            }
        }
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(config("need at least one algorithm and one seed"));
        }
        if self.samples == Some(0) || self.sample_cap == 0 || self.minislots == Some(0) {
            return Err(config("sample and minislot counts must be positive"));
        }
        if let Some(sw) = &self.sweep {
            if sw.grid.is_empty() {
                return Err(config("sweep grid is empty"));
            }
            for v in &sw.grid {
                self.with_value(sw.param, v)?;
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical scenario JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `(M★, M)`: the sample-size bound and the count actually used.
    pub fn sample_sizes(&self) -> Result<(Option<u64>, usize)> {
        let n_embb: usize = self.embb.iter().map(|r| r.num_ues).sum();
        let n_urllc: usize = self.urllc.iter().map(|r| r.num_ues).sum();
        let bound = sample_count(
            n_embb,
            n_urllc,
            self.topology.num_bs,
            self.topology.antennas_per_bs,
            self.system.outage_prob,
            self.system.sample_confidence,
        )
        .ok();
        let used = match (self.samples, bound) {
            (Some(m), _) => m,
            (None, Some(b)) => (b as usize).min(self.sample_cap),
            (None, None) => 1,
        };
        Ok((bound, used))
    }

    /// A copy of the scenario with one sweep parameter applied.
    pub fn with_value(&self, param: SweepParam, value: &GridValue) -> Result<Self> {
        let mut s = self.clone();
        s.sweep = None;
        match param {
            SweepParam::Deadline => {
                let f = value.number(param)?;
                for r in &mut s.urllc {
                    r.deadline_s *= f;
                }
            }
            SweepParam::Rate => {
                let f = value.number(param)?;
                for r in &mut s.embb {
                    r.min_rate_bps *= f;
                }
            }
            SweepParam::Eta => s.system.efficiency_coeff = value.number(param)?,
            SweepParam::Bandwidth => s.system.total_bandwidth_hz = value.number(param)?,
            SweepParam::UeCount => {
                let n = value.number(param)?;
                if n < 1.0 || n.fract() != 0.0 {
                    return Err(config(format!("ue_count must be a positive integer, got {n}")));
                }
                for r in &mut s.embb {
                    r.num_ues = n as usize;
                }
                for r in &mut s.urllc {
                    r.num_ues = n as usize;
                }
            }
            SweepParam::Mode => {
                s.mode = match value {
                    GridValue::Text(t) if t == "multicast" => Mode::Multicast,
                    GridValue::Text(t) if t == "unicast" => Mode::Unicast,
                    _ => return Err(config(format!("mode must be 'multicast' or 'unicast', got {value}"))),
                }
            }
            SweepParam::SnrCase => {
                s.snr_case = match value {
                    GridValue::Text(t) if t == "I" => SnrCase::Enforced,
                    GridValue::Text(t) if t == "II" => SnrCase::Relaxed,
                    _ => return Err(config(format!("snr_case must be 'I' or 'II', got {value}"))),
                }
            }
        }
        s.system.validate()?;
        for r in &s.urllc {
            r.validate()?;
        }
        Ok(s)
    }

    fn slicing_config(&self, algorithm: Algorithm, samples: usize) -> SlicingConfig {
        let mut cfg = SlicingConfig::new(algorithm, samples, self.minislots.unwrap_or(self.system.minislots_per_slot));
        cfg.snr_case = self.snr_case;
        cfg.acceptance = self.acceptance;
        cfg.solver = self.solver;
        cfg
    }
}

/// Metrics of one `(sweep value, algorithm, seed)` job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub param: String,
    pub value: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub samples: usize,
    pub sample_bound: Option<u64>,
    pub minislots: usize,
    /// `Σ_t (eMBB + ρ̂·URLLC)` utility over the slot.
    pub total_utility: f64,
    pub embb_utility: f64,
    pub urllc_utility: f64,
    pub total_power_w: f64,
    pub embb_power_w: f64,
    pub urllc_power_w: f64,
    pub acceptance: Vec<bool>,
    pub served_embb_ues: usize,
    pub embb_bandwidth_hz: f64,
    /// Mean reserved URLLC bandwidth over the minislots.
    pub urllc_bandwidth_hz: f64,
    pub urllc_active_mean: f64,
    pub declined: usize,
    pub max_tightness: f64,
    pub randomized: usize,
    pub iterations_mean: f64,
    pub iterations_max: usize,
    pub failed_samples: usize,
    pub minislot_violations: usize,
    pub qos_failures: usize,
    pub constraint_violations: usize,
    pub validation_feasible: Option<f64>,
    /// Wall-clock time; kept out of the CSV so reports stay reproducible.
    #[serde(skip)]
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub param: String,
    pub value: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub decision: SlotDecision,
    pub minislots: Vec<MinislotDecision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_hash: String,
    pub rows: Vec<RunRow>,
    pub jobs: Vec<JobRecord>,
}

pub const RUN_COLUMNS: [&str; 30] = [
    "scenario_hash",
    "param",
    "value",
    "algorithm",
    "seed",
    "samples",
    "sample_bound",
    "minislots",
    "total_utility",
    "embb_utility",
    "urllc_utility",
    "total_power_w",
    "embb_power_w",
    "urllc_power_w",
    "accepted_embb",
    "acceptance",
    "served_embb_ues",
    "embb_bandwidth_hz",
    "urllc_bandwidth_hz",
    "urllc_active_mean",
    "declined",
    "max_tightness",
    "randomized",
    "iterations_mean",
    "iterations_max",
    "failed_samples",
    "minislot_violations",
    "qos_failures",
    "constraint_violations",
    "validation_feasible",
];

pub const MINISLOT_COLUMNS: [&str; 16] = [
    "scenario_hash",
    "param",
    "value",
    "algorithm",
    "seed",
    "t",
    "mask",
    "total_utility",
    "embb_utility",
    "urllc_utility",
    "total_power_w",
    "embb_power_w",
    "urllc_power_w",
    "urllc_bandwidth_hz",
    "qos_met",
    "violation",
];

/// Fixed float format used in every CSV: 9 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn bits(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

impl RunReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RUN_COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            let rec = vec![
                self.scenario_hash.clone(),
                r.param.clone(),
                r.value.clone(),
                r.algorithm.name().to_string(),
                r.seed.to_string(),
                r.samples.to_string(),
                r.sample_bound.map(|b| b.to_string()).unwrap_or_default(),
                r.minislots.to_string(),
                fmt_float(r.total_utility),
                fmt_float(r.embb_utility),
                fmt_float(r.urllc_utility),
                fmt_float(r.total_power_w),
                fmt_float(r.embb_power_w),
                fmt_float(r.urllc_power_w),
                r.acceptance.iter().filter(|&&b| b).count().to_string(),
                bits(&r.acceptance),
                r.served_embb_ues.to_string(),
                fmt_float(r.embb_bandwidth_hz),
                fmt_float(r.urllc_bandwidth_hz),
                fmt_float(r.urllc_active_mean),
                r.declined.to_string(),
                fmt_float(r.max_tightness),
                r.randomized.to_string(),
                fmt_float(r.iterations_mean),
                r.iterations_max.to_string(),
                r.failed_samples.to_string(),
                r.minislot_violations.to_string(),
                r.qos_failures.to_string(),
                r.constraint_violations.to_string(),
                r.validation_feasible.map(fmt_float).unwrap_or_default(),
            ];
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Numerical(format!("CSV write: {e}")))?;
        Ok(())
    }

    pub fn write_minislot_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MINISLOT_COLUMNS).map_err(csv_err)?;
        for j in &self.jobs {
            for d in &j.minislots {
                let rec = vec![
                    self.scenario_hash.clone(),
                    j.param.clone(),
                    j.value.clone(),
                    j.algorithm.name().to_string(),
                    j.seed.to_string(),
                    d.t.to_string(),
                    bits(&d.mask),
                    fmt_float(d.total_utility),
                    fmt_float(d.embb_utility.iter().sum()),
                    fmt_float(d.urllc_utility.iter().sum()),
                    fmt_float(d.bs_power_w.iter().sum()),
                    fmt_float(d.embb_power_w),
                    fmt_float(d.urllc_power_w),
                    fmt_float(d.urllc_bandwidth_hz),
                    d.qos_met.to_string(),
                    d.violation.clone().unwrap_or_default(),
                ];
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Numerical(format!("CSV write: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("CSV write: {e}"))
}

struct Job {
    order: (usize, usize, usize),
    param: String,
    value: String,
    scenario: Scenario,
    algorithm: Algorithm,
    seed: u64,
}

/// Runs one scenario (expanding its sweep, if any).
pub fn run(scenario: &Scenario) -> Result<RunReport> {
    match &scenario.sweep {
        Some(sw) => sweep(scenario, sw.param, &sw.grid),
        None => execute(scenario, None),
    }
}

/// Runs `scenario` once per grid value of `param`.
pub fn sweep(scenario: &Scenario, param: SweepParam, grid: &[GridValue]) -> Result<RunReport> {
    if grid.is_empty() {
        return Err(config("sweep grid is empty"));
    }
    execute(scenario, Some((param, grid)))
}

fn execute(scenario: &Scenario, sweep: Option<(SweepParam, &[GridValue])>) -> Result<RunReport> {
    scenario.validate()?;
    let hash = scenario.hash();
    let points: Vec<(String, String, Scenario)> = match sweep {
        None => vec![(String::new(), String::new(), scenario.clone())],
        Some((p, grid)) => grid
            .iter()
            .map(|v| Ok((p.name().to_string(), v.to_string(), scenario.with_value(p, v)?)))
            .collect::<Result<_>>()?,
    };
    let mut jobs = Vec::new();
    for (vi, (param, value, sc)) in points.iter().enumerate() {
        for (ai, &alg) in sc.algorithms.iter().enumerate() {
            for (si, &seed) in sc.seeds.iter().enumerate() {
                jobs.push(Job {
                    order: (vi, ai, si),
                    param: param.clone(),
                    value: value.clone(),
                    scenario: sc.clone(),
                    algorithm: alg,
                    seed,
                });
            }
        }
    }
    let mut done: Vec<((usize, usize, usize), RunRow, JobRecord)> = jobs
        .par_iter()
        .map(|job| {
            run_job(job).map(|(row, rec)| (job.order, row, rec)).map_err(|e| {
                log::error!("{}={} {} seed {}: {e}", job.param, job.value, job.algorithm.name(), job.seed);
                e
            })
        })
        .collect::<Result<_>>()?;
    done.sort_by_key(|(k, _, _)| *k);
    let (rows, records) = done.into_iter().map(|(_, r, j)| (r, j)).unzip();
    Ok(RunReport { scenario_hash: hash, rows, jobs: records })
}

fn run_job(job: &Job) -> Result<(RunRow, JobRecord)> {
    let start = std::time::Instant::now();
    let sc = &job.scenario;
    let (bound, samples) = sc.sample_sizes()?;
    if let Some(b) = bound {
        if (b as usize) > samples {
            log::info!("using M = {samples} samples; the sample-size bound is {b}");
        }
    }
    let inst = Instance::new(&sc.topology, &sc.system, &sc.embb, &sc.urllc, sc.mode, job.seed)?;
    let cfg = sc.slicing_config(job.algorithm, samples);
    let slot: SlotRun = run_slot(&inst, &cfg)?;
    let minislots = run_minislots(&inst, &cfg, &slot.decision)?;
    let validation_feasible =
        (sc.validation_samples > 0).then(|| validate_slot(&inst, &cfg, &slot.decision, sc.validation_samples));

    let d = &slot.decision;
    let w = sc.system.total_bandwidth_hz;
    let e = sc.system.bs_power_budget_w;
    let embb_bw = d.embb_bandwidth_hz();
    let t = minislots.len().max(1) as f64;
    let constraint_violations = minislots
        .iter()
        .filter(|m| {
            embb_bw + m.urllc_bandwidth_hz > w * (1.0 + RECHECK_TOLERANCE)
                || m.bs_power_w.iter().any(|&p| p > e * (1.0 + RECHECK_TOLERANCE))
        })
        .count();
    let iterations: Vec<usize> = slot.outcomes.iter().map(|o| o.iterations).collect();
    let row = RunRow {
        param: job.param.clone(),
        value: job.value.clone(),
        algorithm: job.algorithm,
        seed: job.seed,
        samples,
        sample_bound: bound,
        minislots: minislots.len(),
        total_utility: minislots.iter().map(|m| m.total_utility).sum(),
        embb_utility: minislots.iter().map(|m| m.embb_utility.iter().sum::<f64>()).sum(),
        urllc_utility: minislots.iter().map(|m| m.urllc_utility.iter().sum::<f64>()).sum(),
        total_power_w: minislots.iter().map(|m| m.bs_power_w.iter().sum::<f64>()).sum(),
        embb_power_w: minislots.iter().map(|m| m.embb_power_w).sum(),
        urllc_power_w: minislots.iter().map(|m| m.urllc_power_w).sum(),
        acceptance: d.accepted.clone(),
        served_embb_ues: (0..inst.num_embb()).filter(|&s| d.accepted[s]).map(|s| inst.embb_group_size(s)).sum(),
        embb_bandwidth_hz: embb_bw,
        urllc_bandwidth_hz: minislots.iter().map(|m| m.urllc_bandwidth_hz).sum::<f64>() / t,
        urllc_active_mean: minislots.iter().map(|m| m.mask.iter().filter(|&&b| b).count() as f64).sum::<f64>() / t,
        declined: d.declined.len(),
        max_tightness: minislots.iter().map(|m| m.max_tightness).fold(0.0, f64::max),
        randomized: minislots.iter().map(|m| m.randomized).sum(),
        iterations_mean: iterations.iter().sum::<usize>() as f64 / iterations.len().max(1) as f64,
        iterations_max: iterations.iter().copied().max().unwrap_or(0),
        failed_samples: slot.failed.len(),
        minislot_violations: minislots.iter().filter(|m| m.violation.is_some()).count(),
        qos_failures: minislots.iter().filter(|m| !m.qos_met).count(),
        constraint_violations,
        validation_feasible,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    let record = JobRecord {
        param: job.param.clone(),
        value: job.value.clone(),
        algorithm: job.algorithm,
        seed: job.seed,
        decision: slot.decision,
        minislots,
    };
    Ok((row, record))
}

/// One line of the blocking report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockingRow {
    pub record: String,
    pub slice: usize,
    pub q: Option<u32>,
    pub states: Option<u128>,
    pub p_before: Option<f64>,
    pub p_after: Option<f64>,
    pub p_mc: Option<f64>,
    pub mc_half_width: Option<f64>,
    /// Narrowed slice not worse off.
    pub own_holds: Option<bool>,
    /// No slice worse off.
    pub holds: Option<bool>,
}

pub const BLOCKING_COLUMNS: [&str; 10] =
    ["record", "slice", "q", "states", "p_before", "p_after", "p_mc", "mc_half_width", "own_holds", "holds"];

/// Loss system implied by the URLLC requests: every UE transmits for its
/// full deadline on the bandwidth needed at the minimum SNR, and the pool is
/// sized by square-root staffing.
pub fn derived_blocking_scenario(scenario: &Scenario) -> Result<BlockingScenario> {
    if scenario.urllc.is_empty() {
        return Err(config("no URLLC slices to analyze"));
    }
    let kappa = scenario.system.numerology_constant;
    let mut slices = Vec::new();
    let (mut mask, mut lambda, mut r, mut deadline) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for req in &scenario.urllc {
        let ri = phy::channel_uses(req.packet_bits, phy::MIN_URLLC_SNR, req.decode_error)?;
        let omega = ri / (kappa * req.deadline_s);
        slices.push(BlockingSlice {
            bandwidths_hz: vec![omega; req.num_ues],
            duration_s: req.deadline_s,
            arrival_rates: vec![req.arrival_rate; req.num_ues],
            deadline_s: Some(req.deadline_s),
        });
        for _ in 0..req.num_ues {
            mask.push(true);
            lambda.push(req.arrival_rate);
            r.push(ri);
            deadline.push(req.deadline_s);
        }
    }
    let beta = scenario.urllc.iter().map(|q| q.blocking_target).fold(f64::INFINITY, f64::min);
    let reserved = phy::staffed_bandwidth(&mask, &lambda, &r, kappa, &deadline, beta)?;
    Ok(BlockingScenario { reserved_bandwidth_hz: reserved, slices })
}

/// Exact and simulated blocking per slice, plus the narrowing check for
/// every slice and factor.
pub fn blocking_report(scenario: &Scenario) -> Result<Vec<BlockingRow>> {
    let job = scenario.blocking.clone().unwrap_or_default();
    let sys = match &job.system {
        Some(s) => s.clone(),
        None => derived_blocking_scenario(scenario)?,
    };
    sys.validate()?;
    let states = queueing::state_space_size(&sys);
    let exact = match queueing::blocking_all_exact(&sys) {
        Ok(p) => Some(p),
        Err(Error::StateSpaceTooLarge { .. }) => None,
        Err(e) => return Err(e),
    };
    let mc = queueing::blocking_all_mc(&sys, job.mc_arrivals, job.seed)?;
    let mut rows = Vec::new();
    for (s, est) in mc.iter().enumerate() {
        rows.push(BlockingRow {
            record: "blocking".into(),
            slice: s,
            q: None,
            states,
            p_before: exact.as_ref().map(|p| p[s]),
            p_after: None,
            p_mc: Some(est.estimate),
            mc_half_width: Some(est.half_width),
            own_holds: None,
            holds: None,
        });
    }
    for s in 0..sys.slices.len() {
        for &q in &job.scaling_factors {
            match queueing::scaling_check(&sys, s, q, job.mc_arrivals, job.seed) {
                Ok(c) => rows.push(BlockingRow {
                    record: "scaling".into(),
                    slice: s,
                    q: Some(q),
                    states: queueing::state_space_size(&sys.narrowed(s, q)),
                    p_before: Some(c.before[s]),
                    p_after: Some(c.after[s]),
                    p_mc: None,
                    mc_half_width: None,
                    own_holds: Some(c.own_holds),
                    holds: Some(c.holds),
                }),
                Err(Error::Domain(msg)) => log::warn!("slice {s}, q = {q}: {msg}"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

pub fn write_blocking_csv<W: Write>(rows: &[BlockingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BLOCKING_COLUMNS).map_err(csv_err)?;
    for r in rows {
        let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
        w.write_record([
            r.record.clone(),
            r.slice.to_string(),
            r.q.map(|q| q.to_string()).unwrap_or_default(),
            r.states.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.p_before),
            opt(r.p_after),
            opt(r.p_mc),
            opt(r.mc_half_width),
            r.own_holds.map(|h| h.to_string()).unwrap_or_default(),
            r.holds.map(|h| h.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Numerical(format!("CSV write: {e}")))?;
    Ok(())
}
