//! Baselines, parameter sweeps and convergence statistics.

mod config;
mod output;

pub use config::{parse_config, ExperimentConfig};
pub use output::{write_complexity, write_convergence, write_meta, write_sweep};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{circular_gaussian, draw_channels, ChannelSet, SystemConfig};
use crate::error::{Error, Result};
use crate::estimation::{estimate_channels, CompletionOptions};
use crate::manifold::{BeamMatrix, PhaseVector, ProductPoint};
use crate::power::{evaluate_point, mrt_beams, rcg_jo, required_power, JoOptions, Qos, SolveReport};

/// Random phases with matched-filter receivers.
pub fn baseline_random_phase_mrt(ch: &ChannelSet, qos: &Qos, seed: u64) -> Result<SolveReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = PhaseVector::random(ch.n(), &mut rng);
    let w = mrt_beams(ch, &theta)?;
    evaluate_point(ch, ProductPoint::new(theta, w), qos, seed)
}

/// Direct links only, with random unit-norm receive beams.
pub fn baseline_no_ris(ch: &ChannelSet, qos: &Qos, seed: u64) -> Result<SolveReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(ch.m(), ch.k(), |_, _| circular_gaussian(&mut rng));
    no_ris_with_beams(ch, BeamMatrix::normalized(raw)?, qos, seed)
}

/// The no-RIS system evaluated at given receive beams.
pub fn no_ris_with_beams(ch: &ChannelSet, w: BeamMatrix, qos: &Qos, seed: u64) -> Result<SolveReport> {
    let direct = ch.without_ris();
    evaluate_point(&direct, ProductPoint::new(PhaseVector::ones(ch.n()), w), qos, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComplexityMethod {
    RcgJo,
    Sdr,
}

/// Dominant-term flop counts with unit constants:
/// `K^2 N^2 M + K^3 + K^2 N^3 + K^2 M^2` for RCG-JO and
/// `K^2 N^2 M + N^6 + K^6 M^6` for SDR-based alternating optimization.
pub fn complexity_estimate(method: ComplexityMethod, k: usize, m: usize, n: usize) -> Result<f64> {
    if k == 0 || m == 0 || n == 0 {
        return Err(Error::Domain("complexity needs K, M, N >= 1".into()));
    }
    let (k, m, n) = (k as f64, m as f64, n as f64);
    Ok(match method {
        ComplexityMethod::RcgJo => {
            k * k * n * n * m + k.powi(3) + k * k * n.powi(3) + k * k * m * m
        }
        ComplexityMethod::Sdr => k * k * n * n * m + n.powi(6) + k.powi(6) * m.powi(6),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    RcgJo,
    RandomPhaseMrt,
    NoRis,
    RcgJoEstimatedCsi,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::RcgJo,
        Method::RandomPhaseMrt,
        Method::NoRis,
        Method::RcgJoEstimatedCsi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RcgJo => "rcg_jo",
            Method::RandomPhaseMrt => "random_phase_mrt",
            Method::NoRis => "no_ris",
            Method::RcgJoEstimatedCsi => "rcg_jo_estimated_csi",
        }
    }

    /// Independent random stream per method, so adding a method to a sweep
    /// does not perturb the others.
    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    NElements,
    RateMin,
    HorizDistance,
    NoisePower,
    KDevices,
    SampleFraction,
}

impl SweepVariable {
    pub const ALL: [SweepVariable; 6] = [
        SweepVariable::NElements,
        SweepVariable::RateMin,
        SweepVariable::HorizDistance,
        SweepVariable::NoisePower,
        SweepVariable::KDevices,
        SweepVariable::SampleFraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::NElements => "n_elements",
            SweepVariable::RateMin => "rate_min",
            SweepVariable::HorizDistance => "horiz_distance",
            SweepVariable::NoisePower => "noise_power",
            SweepVariable::KDevices => "k_devices",
            SweepVariable::SampleFraction => "sample_fraction",
        }
    }

    fn check(self, value: f64) -> Result<()> {
        let integral = value >= 1.0 && value.fract() == 0.0;
        let ok = match self {
            SweepVariable::NElements | SweepVariable::KDevices => integral,
            SweepVariable::RateMin | SweepVariable::HorizDistance | SweepVariable::NoisePower => {
                value > 0.0 && value.is_finite()
            }
            SweepVariable::SampleFraction => value > 0.0 && value <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{} cannot take the value {value}", self.name())))
        }
    }

    /// The scenario at one sweep point, plus the sampling fraction to use.
    fn apply(self, base: &SystemConfig, base_fraction: f64, value: f64) -> Result<(SystemConfig, f64)> {
        self.check(value)?;
        let mut cfg = base.clone();
        let mut fraction = base_fraction;
        match self {
            SweepVariable::NElements => cfg.set_n_elements(value as usize)?,
            SweepVariable::RateMin => cfg.rate_min = value,
            SweepVariable::HorizDistance => cfg.horiz_distance = value,
            SweepVariable::NoisePower => cfg.noise_power = value,
            SweepVariable::KDevices => cfg.k_devices = value as usize,
            SweepVariable::SampleFraction => fraction = value,
        }
        cfg.validate()?;
        Ok((cfg, fraction))
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepVariable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep variable `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub realizations: usize,
    pub methods: Vec<Method>,
    pub base: SystemConfig,
    /// Active-element fraction for estimated CSI when it is not the swept variable.
    pub sample_fraction: f64,
    pub jobs: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("sweep needs at least one method".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sample_fraction {} not in (0, 1]",
                self.sample_fraction
            )));
        }
        self.base.validate().map_err(|e| Error::Config(e.to_string()))?;
        for &v in &self.values {
            self.variable
                .apply(&self.base, self.sample_fraction, v)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// One method on one channel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub variable: SweepVariable,
    pub value: f64,
    pub realization: usize,
    pub seed: u64,
    pub channel_hash: u64,
    pub total_power_w: f64,
    /// Power needed without the per-device cap (infinite if unreachable).
    pub required_power_w: f64,
    pub feasible: bool,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Set when the run failed outright; the sweep carries on.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub variable: SweepVariable,
    pub value: f64,
    pub runs: usize,
    pub feasible_runs: usize,
    pub feasibility_rate: f64,
    /// Over feasible runs only; NaN when there are none.
    pub mean_total_power_w: f64,
    pub std_error_w: f64,
    pub mean_outer_iters: f64,
    pub mean_inner_iters: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn row(&self, method: Method, value: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.value == value)
    }
}

fn method_rng_seed(seed: u64, method: Method) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(method.stream());
    rand::Rng::random(&mut rng)
}

/// Runs one method on one channel draw.
pub fn run_method(
    method: Method,
    truth: &ChannelSet,
    cfg: &SystemConfig,
    sample_fraction: f64,
    seed: u64,
) -> Result<SolveReport> {
    let qos = Qos::from_config(cfg);
    let opts = JoOptions::from_config(cfg);
    let mseed = method_rng_seed(seed, method);
    match method {
        Method::RcgJo => rcg_jo(truth, &qos, &opts, mseed),
        Method::RandomPhaseMrt => baseline_random_phase_mrt(truth, &qos, mseed),
        Method::NoRis => baseline_no_ris(truth, &qos, mseed),
        Method::RcgJoEstimatedCsi => {
            let mut rng = ChaCha8Rng::seed_from_u64(mseed);
            let estimate = estimate_channels(truth, cfg, sample_fraction, &CompletionOptions::default(), &mut rng)?;
            let on_estimate = rcg_jo(&estimate, &qos, &opts, mseed)?;
            // Rates are what the true channels deliver at the chosen (theta, W).
            let mut report = evaluate_point(truth, on_estimate.point, &qos, mseed)?;
            report.outer_iterations = on_estimate.outer_iterations;
            report.inner_traces = on_estimate.inner_traces;
            report.power_history = on_estimate.power_history;
            Ok(report)
        }
    }
}

/// Relative Frobenius errors of an estimate, for `G` and for the stacked
/// device-RIS channels.
pub fn csi_errors(truth: &ChannelSet, estimate: &ChannelSet) -> Result<(f64, f64)> {
    if truth.m() != estimate.m() || truth.n() != estimate.n() || truth.k() != estimate.k() {
        return Err(Error::Dimension("estimate and truth differ in shape".into()));
    }
    let rel = |num: f64, den: f64| if den > 0.0 { num.sqrt() / den.sqrt() } else { num.sqrt() };
    let g = rel((&estimate.ris_bs - &truth.ris_bs).norm_squared(), truth.ris_bs.norm_squared());
    let (mut num, mut den) = (0.0, 0.0);
    for (e, t) in estimate.device_ris.iter().zip(&truth.device_ris) {
        num += (e - t).norm_squared();
        den += t.norm_squared();
    }
    Ok((g, rel(num, den)))
}

/// Draws one realization and estimates it from `sample_fraction` of the
/// elements. Returns `(truth, estimate)`.
pub fn estimate_realization(
    cfg: &SystemConfig,
    sample_fraction: f64,
    seed: u64,
) -> Result<(ChannelSet, ChannelSet)> {
    let truth = realization_channels(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(method_rng_seed(seed, Method::RcgJoEstimatedCsi));
    let estimate = estimate_channels(&truth, cfg, sample_fraction, &CompletionOptions::default(), &mut rng)?;
    Ok((truth, estimate))
}

/// Channel draw for one realization; the same for every method.
pub fn realization_channels(cfg: &SystemConfig, seed: u64) -> Result<ChannelSet> {
    draw_channels(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn solve_and_require(
    method: Method,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    fraction: f64,
    seed: u64,
) -> Result<(SolveReport, f64)> {
    let report = run_method(method, ch, cfg, fraction, seed)?;
    let seen = if method == Method::NoRis { ch.without_ris() } else { ch.clone() };
    let required = required_power(&seen, &report.point, &Qos::from_config(cfg))?;
    Ok((report, required))
}

fn run_cell(spec: &SweepSpec, value: f64, realization: usize) -> Vec<RunRecord> {
    let seed = spec.base.rng_seed.wrapping_add(realization as u64);
    let setup = spec
        .variable
        .apply(&spec.base, spec.sample_fraction, value)
        .and_then(|(cfg, fraction)| Ok((realization_channels(&cfg, seed)?, cfg, fraction)));
    spec.methods
        .iter()
        .map(|&method| {
            let mut rec = RunRecord {
                method,
                variable: spec.variable,
                value,
                realization,
                seed,
                channel_hash: 0,
                total_power_w: f64::NAN,
                required_power_w: f64::NAN,
                feasible: false,
                outer_iters: 0,
                inner_iters: 0,
                error: None,
            };
            let outcome = setup.as_ref().map_err(|e| e.to_string()).and_then(|(ch, cfg, fraction)| {
                rec.channel_hash = ch.fingerprint();
                solve_and_require(method, ch, cfg, *fraction, seed).map_err(|e| e.to_string())
            });
            match outcome {
                Ok((report, required)) => {
                    rec.required_power_w = required;
                    rec.total_power_w = report.total_power;
                    rec.feasible = report.feasible;
                    rec.outer_iters = report.outer_iterations;
                    rec.inner_iters = report.max_inner_iterations();
                }
                Err(e) => rec.error = Some(e),
            }
            rec
        })
        .collect()
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Aggregates records per (method, value), in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, SweepVariable, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|&(m, _, v)| m == r.method && v == r.value) {
            keys.push((r.method, r.variable, r.value));
        }
    }
    keys.into_iter()
        .map(|(method, variable, value)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.method == method && r.value == value)
                .collect();
            let feasible: Vec<&RunRecord> = group.iter().copied().filter(|r| r.feasible).collect();
            let powers: Vec<f64> = feasible.iter().map(|r| r.total_power_w).collect();
            let (mean, se) = mean_and_stderr(&powers);
            let mean_of = |f: fn(&RunRecord) -> usize| {
                if feasible.is_empty() {
                    f64::NAN
                } else {
                    feasible.iter().map(|r| f(r) as f64).sum::<f64>() / feasible.len() as f64
                }
            };
            SummaryRow {
                method,
                variable,
                value,
                runs: group.len(),
                feasible_runs: feasible.len(),
                feasibility_rate: feasible.len() as f64 / group.len() as f64,
                mean_total_power_w: mean,
                std_error_w: se,
                mean_outer_iters: mean_of(|r| r.outer_iters),
                mean_inner_iters: mean_of(|r| r.inner_iters),
            }
        })
        .collect()
}

/// Runs every method on every (value, realization) draw. Results come back
/// in (value, realization, method) order regardless of `jobs`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let cells: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.realizations).map(move |r| (v, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(v, r)| run_cell(spec, v, r))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let summary = summarize(&records);
    Ok(SweepResult { records, summary })
}

/// Empirical CDFs of outer and inner iteration counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    /// `(iterations, fraction of runs with outer count <= iterations)`.
    pub outer: Vec<(usize, f64)>,
    pub inner: Vec<(usize, f64)>,
}

impl ConvergenceTable {
    pub fn fraction_outer_within(&self, n: usize) -> f64 {
        cdf_at(&self.outer, n)
    }

    pub fn fraction_inner_within(&self, n: usize) -> f64 {
        cdf_at(&self.inner, n)
    }

    /// Fraction of runs meeting both bounds at once.
    pub fn joint_fraction(counts: &[(usize, usize)], outer: usize, inner: usize) -> f64 {
        if counts.is_empty() {
            return f64::NAN;
        }
        counts.iter().filter(|&&(o, i)| o <= outer && i <= inner).count() as f64 / counts.len() as f64
    }
}

fn cdf_at(cdf: &[(usize, f64)], n: usize) -> f64 {
    cdf.iter().take_while(|(x, _)| *x <= n).last().map_or(0.0, |&(_, f)| f)
}

fn empirical_cdf(mut xs: Vec<usize>) -> Vec<(usize, f64)> {
    xs.sort_unstable();
    let n = xs.len() as f64;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    out
}

/// CDFs over runs of the outer iteration count and of the largest inner
/// RCG iteration count.
pub fn convergence_stats(reports: &[SolveReport]) -> Result<ConvergenceTable> {
    let counts: Vec<(usize, usize)> = reports
        .iter()
        .map(|r| (r.outer_iterations, r.max_inner_iterations()))
        .collect();
    convergence_from_counts(&counts)
}

pub fn convergence_from_counts(counts: &[(usize, usize)]) -> Result<ConvergenceTable> {
    if counts.is_empty() {
        return Err(Error::Domain("no runs to summarize".into()));
    }
    Ok(ConvergenceTable {
        outer: empirical_cdf(counts.iter().map(|c| c.0).collect()),
        inner: empirical_cdf(counts.iter().map(|c| c.1).collect()),
    })
}

/// Runs `rcg_jo` on `realizations` draws of `cfg` and returns
/// `(outer, inner)` iteration counts per run, in realization order.
pub fn convergence_runs(cfg: &SystemConfig, realizations: usize, jobs: usize) -> Result<Vec<(usize, usize)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..realizations)
            .into_par_iter()
            .map(|r| {
                let seed = cfg.rng_seed.wrapping_add(r as u64);
                let ch = realization_channels(cfg, seed)?;
                let report = run_method(Method::RcgJo, &ch, cfg, 1.0, seed)?;
                Ok((report.outer_iterations, report.max_inner_iterations()))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests;
