//! Purity and fine-structure tests for outcome time series.
//!
//! [`purity_test`] asks whether repeated runs, and rich sub-ensembles inside
//! each run, look like draws from one statistical population.
//! [`fine_structure`] looks for temporal structure inside a single run that
//! symbol frequencies cannot see. [`homogeneity_guard`] is a cheap drift
//! check whose failure marks downstream significance tests as unreliable.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::CouplingReport;
use crate::rng::{splitmix64, Substreams};
use crate::stats::{chi_square_sf, contingency_chi_square, ks_two_sample, normal_quantile, normal_two_sided_p};

const DOMAIN_SUBENSEMBLE: u64 = 0x5355_4245;
const DOMAIN_JITTER: u64 = 0x4A49_5454;
const DOMAIN_CALIBRATION: u64 = 0x4341_4C49;

/// Smallest sub-ensemble, and its share of the run.
pub const SUBENSEMBLE_MIN: usize = 500;
pub const SUBENSEMBLE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSeries {
    pub run_id: usize,
    pub outcomes: Vec<i64>,
    /// Sorted, distinct symbols.
    pub alphabet: Vec<i64>,
    pub experiment: String,
    pub system: String,
}

impl RunSeries {
    /// A ±1 series.
    pub fn new(run_id: usize, outcomes: Vec<i64>) -> Result<Self> {
        Self::with_alphabet(run_id, outcomes, vec![-1, 1])
    }

    pub fn with_alphabet(run_id: usize, outcomes: Vec<i64>, mut alphabet: Vec<i64>) -> Result<Self> {
        alphabet.sort_unstable();
        alphabet.dedup();
        if alphabet.len() < 2 {
            return Err(Error::input("alphabet needs at least two symbols"));
        }
        if outcomes.is_empty() {
            return Err(Error::input(format!("run {run_id} is empty")));
        }
        if let Some(o) = outcomes.iter().find(|o| alphabet.binary_search(o).is_err()) {
            return Err(Error::input(format!("run {run_id}: outcome {o} not in alphabet {alphabet:?}")));
        }
        Ok(RunSeries {
            run_id,
            outcomes,
            alphabet,
            experiment: String::new(),
            system: String::new(),
        })
    }

    pub fn from_bools(run_id: usize, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        Self::new(run_id, bits.into_iter().map(|b| if b { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    fn symbol_indices(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .map(|o| self.alphabet.binary_search(o).expect("validated"))
            .collect()
    }

    /// Relative frequency of each alphabet symbol.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut c = vec![0u64; self.alphabet.len()];
        for i in self.symbol_indices() {
            c[i] += 1;
        }
        c.iter().map(|&k| k as f64 / self.len() as f64).collect()
    }
}

/// Chi-square on a table whose columns are first put in a label-free order,
/// so that renaming symbols cannot change a single bit of the result.
fn canonical_chi_square(rows: &[Vec<u64>]) -> (f64, usize, f64) {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut cols: Vec<Vec<u64>> = (0..ncols).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    cols.sort();
    let table: Vec<Vec<u64>> = (0..rows.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    contingency_chi_square(&table)
}

/// Cauchy combination of possibly dependent p-values.
pub fn cauchy_combination(ps: &[f64]) -> f64 {
    if ps.is_empty() {
        return 1.0;
    }
    let t: f64 = ps
        .iter()
        .map(|&p| {
            let p = p.clamp(0.0, 1.0);
            if p < 1e-15 {
                1.0 / (p.max(f64::MIN_POSITIVE) * PI)
            } else {
                ((0.5 - p.min(1.0 - 1e-15)) * PI).tan()
            }
        })
        .sum::<f64>()
        / ps.len() as f64;
    if t > 1e15 {
        return (1.0 / (t * PI)).clamp(0.0, 1.0);
    }
    (0.5 - t.atan() / PI).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PurityConfig {
    pub block_length: usize,
    /// Sub-ensembles drawn per run.
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for PurityConfig {
    fn default() -> Self {
        PurityConfig {
            block_length: 2,
            resamples: 20,
            alpha: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubEnsembleResult {
    pub run_id: usize,
    pub size: usize,
    pub starts: Vec<usize>,
    pub p_values: Vec<f64>,
    pub combined_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurityReport {
    pub alpha: f64,
    /// Symbol frequencies, m-block frequencies, sub-ensembles, waiting times.
    pub tests: Vec<TestResult>,
    pub subensembles: Vec<SubEnsembleResult>,
    pub resamples: usize,
    pub subensemble_size: Vec<usize>,
    /// Every test at Bonferroni level `alpha / tests.len()`.
    pub pure: bool,
}

impl PurityReport {
    pub fn test(&self, name: &str) -> Option<&TestResult> {
        self.tests.iter().find(|t| t.name == name)
    }
}

pub const TEST_SYMBOLS: &str = "symbol-frequency";
pub const TEST_BLOCKS: &str = "block-frequency";
pub const TEST_SUBENSEMBLE: &str = "sub-ensemble";
pub const TEST_WAITING: &str = "waiting-time-ks";

fn check_runs(runs: &[RunSeries], min_len: usize) -> Result<()> {
    if runs.len() < 2 {
        return Err(Error::statistical("purity tests need at least two runs", 2));
    }
    let alphabet = &runs[0].alphabet;
    if runs.iter().any(|r| &r.alphabet != alphabet) {
        return Err(Error::input("runs declare different alphabets"));
    }
    if let Some(r) = runs.iter().find(|r| r.len() < min_len) {
        return Err(Error::statistical(
            format!("run {} has only {} outcomes", r.run_id, r.len()),
            min_len,
        ));
    }
    Ok(())
}

pub fn subensemble_size(n: usize) -> usize {
    let rich = (SUBENSEMBLE_FRACTION * n as f64).ceil() as usize;
    rich.max(SUBENSEMBLE_MIN.min(n / 2))
}

/// Lengths of maximal constant stretches: waiting times between changes of
/// outcome. Each gets a uniform jitter keyed by its end position, which
/// makes the distribution continuous and does not depend on symbol names.
fn jittered_waiting_times(series: &[usize], key: u64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut len = 1u64;
    for t in 1..series.len() {
        if series[t] == series[t - 1] {
            len += 1;
        } else {
            let h = splitmix64(key ^ splitmix64(t as u64));
            let u = (h >> 11) as f64 / (1u64 << 53) as f64;
            out.push(len as f64 + u);
            len = 1;
        }
    }
    out
}

pub fn purity_test(runs: &[RunSeries], config: &PurityConfig) -> Result<PurityReport> {
    let m = config.block_length;
    if m == 0 {
        return Err(Error::config("block length must be at least 1"));
    }
    if config.resamples == 0 {
        return Err(Error::config("at least one sub-ensemble resample is required"));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::config("alpha must lie in (0, 1)"));
    }
    check_runs(runs, 100 * m)?;
    let k = runs[0].alphabet.len();
    let indexed: Vec<Vec<usize>> = runs.iter().map(RunSeries::symbol_indices).collect();

    let symbol_rows: Vec<Vec<u64>> = indexed
        .iter()
        .map(|s| {
            let mut c = vec![0u64; k];
            for &i in s {
                c[i] += 1;
            }
            c
        })
        .collect();
    let (x2, df, p) = canonical_chi_square(&symbol_rows);
    let mut tests = vec![TestResult {
        name: TEST_SYMBOLS.into(),
        statistic: x2,
        df,
        p_value: p,
    }];

    let patterns = k.checked_pow(m as u32).filter(|&p| p <= 1 << 20).ok_or_else(|| {
        Error::config(format!("{k}^{m} block patterns is too many"))
    })?;
    let block_rows: Vec<Vec<u64>> = indexed
        .iter()
        .map(|s| {
            let mut c = vec![0u64; patterns];
            for b in s.chunks_exact(m) {
                c[b.iter().fold(0, |acc, &i| acc * k + i)] += 1;
            }
            c
        })
        .collect();
    let (x2, df, p) = canonical_chi_square(&block_rows);
    tests.push(TestResult {
        name: TEST_BLOCKS.into(),
        statistic: x2,
        df,
        p_value: p,
    });

    let streams = Substreams::new(config.seed);
    let subensembles: Vec<SubEnsembleResult> = indexed
        .par_iter()
        .enumerate()
        .map(|(r, s)| {
            let n = s.len();
            let size = subensemble_size(n);
            let mut prefix = vec![vec![0u64; k]; n + 1];
            for (t, &i) in s.iter().enumerate() {
                let (head, tail) = prefix.split_at_mut(t + 1);
                tail[0].copy_from_slice(&head[t]);
                tail[0][i] += 1;
            }
            let mut rng = streams.stream(DOMAIN_SUBENSEMBLE, r as u64);
            let mut starts = Vec::with_capacity(config.resamples);
            let mut p_values = Vec::with_capacity(config.resamples);
            for _ in 0..config.resamples {
                let start = rng.random_range(0..=n - size);
                let inside: Vec<u64> = (0..k).map(|j| prefix[start + size][j] - prefix[start][j]).collect();
                let outside: Vec<u64> = (0..k).map(|j| prefix[n][j] - inside[j]).collect();
                starts.push(start);
                p_values.push(canonical_chi_square(&[inside, outside]).2);
            }
            SubEnsembleResult {
                run_id: runs[r].run_id,
                size,
                combined_p: cauchy_combination(&p_values),
                starts,
                p_values,
            }
        })
        .collect();
    let per_run: Vec<f64> = subensembles.iter().map(|s| s.combined_p).collect();
    tests.push(TestResult {
        name: TEST_SUBENSEMBLE.into(),
        statistic: f64::NAN,
        df: 0,
        p_value: cauchy_combination(&per_run),
    });

    let waits: Vec<Vec<f64>> = indexed
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let key = streams.child(DOMAIN_JITTER, r as u64).seed();
            jittered_waiting_times(s, key)
        })
        .collect();
    let mut ks_p = Vec::new();
    let mut ks_d: f64 = 0.0;
    for i in 0..waits.len() {
        for j in i + 1..waits.len() {
            let (d, p) = ks_two_sample(&waits[i], &waits[j]);
            ks_d = ks_d.max(d);
            ks_p.push(p);
        }
    }
    let pairs = ks_p.len() as f64;
    tests.push(TestResult {
        name: TEST_WAITING.into(),
        statistic: ks_d,
        df: 0,
        p_value: (ks_p.iter().cloned().fold(1.0, f64::min) * pairs).min(1.0),
    });

    let level = config.alpha / tests.len() as f64;
    Ok(PurityReport {
        alpha: config.alpha,
        pure: tests.iter().all(|t| t.p_value > level),
        subensemble_size: subensembles.iter().map(|s| s.size).collect(),
        tests,
        subensembles,
        resamples: config.resamples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Autocorrelation {
    /// Lags `0..=L`; lag 0 is exactly 1.
    pub values: Vec<f64>,
    /// Half-width of the white-noise band, `z_{1−α/2}/√n`.
    pub band: f64,
    pub flagged_lags: Vec<usize>,
    pub ljung_box: f64,
    pub ljung_box_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Periodogram {
    /// `(frequency in cycles per trial, ordinate)` over Fourier frequencies
    /// strictly between 0 and 1/2.
    pub ordinates: Vec<(f64, f64)>,
    pub peak_frequency: f64,
    pub peak: f64,
    /// Ordinate the maximum must exceed to be significant at `alpha`.
    pub threshold: f64,
    pub max_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunsTest {
    pub runs: usize,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FineStructure {
    Analysed {
        autocorrelation: Autocorrelation,
        periodogram: Periodogram,
        runs: RunsTest,
    },
    /// Constant series: autocorrelation is undefined.
    Degenerate { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineStructureReport {
    pub run_id: usize,
    pub n: usize,
    pub max_lag: usize,
    pub alpha: f64,
    /// Relative frequency of each alphabet symbol.
    pub symbol_frequencies: Vec<f64>,
    pub result: FineStructure,
    /// Ljung–Box, periodogram maximum or runs test significant at
    /// Bonferroni level `alpha / 3`.
    pub structure_detected: bool,
}

impl FineStructureReport {
    pub fn autocorrelation(&self) -> Option<&Autocorrelation> {
        match &self.result {
            FineStructure::Analysed { autocorrelation, .. } => Some(autocorrelation),
            FineStructure::Degenerate { .. } => None,
        }
    }

    pub fn periodogram(&self) -> Option<&Periodogram> {
        match &self.result {
            FineStructure::Analysed { periodogram, .. } => Some(periodogram),
            FineStructure::Degenerate { .. } => None,
        }
    }

    pub fn runs(&self) -> Option<&RunsTest> {
        match &self.result {
            FineStructure::Analysed { runs, .. } => Some(runs),
            FineStructure::Degenerate { .. } => None,
        }
    }
}

/// Sample autocorrelation with lag-`k` covariance averaged over its `n − k`
/// products, so a perfectly alternating zero-mean series gives `(−1)^k`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0.is_nan() || c0 <= 0.0 {
        return None;
    }
    let mut out = vec![1.0];
    for k in 1..=max_lag.min(n - 1) {
        let ck = d.iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / (n - k) as f64;
        out.push(ck / c0);
    }
    Some(out)
}

fn periodogram(x: &[f64], alpha: f64) -> Periodogram {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let top = (n - 1) / 2;
    let ordinates: Vec<(f64, f64)> = (1..=top)
        .map(|j| (j as f64 / n as f64, buf[j].norm_sqr() / n as f64))
        .collect();
    let (peak_frequency, peak) = ordinates
        .iter()
        .cloned()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, o| if o.1 > acc.1 { o } else { acc });
    let m = ordinates.len() as f64;
    // ordinates / σ² are approximately independent unit exponentials
    let max_p = if ordinates.is_empty() {
        1.0
    } else {
        -(m * (-(-peak / var).exp()).ln_1p()).exp_m1()
    };
    let threshold = -var * (-((1.0 - alpha).ln() / m).exp_m1()).ln();
    Periodogram {
        ordinates,
        peak_frequency,
        peak,
        threshold,
        max_p: max_p.clamp(0.0, 1.0),
    }
}

/// Wald–Wolfowitz runs test on the dichotomy `x > mean`.
fn runs_test(x: &[f64]) -> RunsTest {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let above: Vec<bool> = x.iter().map(|&v| v > mean).collect();
    let n1 = above.iter().filter(|&&a| a).count() as f64;
    let n2 = x.len() as f64 - n1;
    let runs = 1 + above.windows(2).filter(|w| w[0] != w[1]).count();
    let n = n1 + n2;
    let mu = 2.0 * n1 * n2 / n + 1.0;
    let var = (mu - 1.0) * (mu - 2.0) / (n - 1.0);
    let z = if var > 0.0 { (runs as f64 - mu) / var.sqrt() } else { 0.0 };
    RunsTest {
        runs,
        z,
        p_value: if var > 0.0 { normal_two_sided_p(z) } else { 1.0 },
    }
}

pub fn fine_structure(series: &RunSeries, max_lag: usize, alpha: f64) -> Result<FineStructureReport> {
    if max_lag == 0 {
        return Err(Error::config("maximum lag must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha must lie in (0, 1)"));
    }
    let n = series.len();
    if n < 10 * max_lag {
        return Err(Error::statistical(
            format!("series of length {n} is too short for {max_lag} lags"),
            10 * max_lag,
        ));
    }
    let x: Vec<f64> = series.outcomes.iter().map(|&o| o as f64).collect();
    let mut report = FineStructureReport {
        run_id: series.run_id,
        n,
        max_lag,
        alpha,
        symbol_frequencies: series.frequencies(),
        result: FineStructure::Degenerate {
            reason: "series is constant; autocorrelation is undefined".into(),
        },
        structure_detected: false,
    };
    let Some(values) = autocorrelation(&x, max_lag) else {
        return Ok(report);
    };
    let nf = n as f64;
    let band = normal_quantile(1.0 - alpha / 2.0) / nf.sqrt();
    let flagged_lags = (1..values.len()).filter(|&k| values[k].abs() > band).collect();
    // Ljung–Box uses the conventional n-normalised coefficients.
    let q = nf
        * (nf + 2.0)
        * (1..values.len())
            .map(|k| {
                let r = values[k] * (n - k) as f64 / nf;
                r * r / (nf - k as f64)
            })
            .sum::<f64>();
    let autocorrelation = Autocorrelation {
        band,
        flagged_lags,
        ljung_box: q,
        ljung_box_p: chi_square_sf(q, max_lag as f64),
        values,
    };
    let periodogram = periodogram(&x, alpha);
    let runs = runs_test(&x);
    let level = alpha / 3.0;
    report.structure_detected = autocorrelation.ljung_box_p < level || periodogram.max_p < level || runs.p_value < level;
    report.result = FineStructure::Analysed {
        autocorrelation,
        periodogram,
        runs,
    };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardReport {
    pub chunks_per_run: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub passed: bool,
}

impl GuardReport {
    /// Marks a coupling report as unreliable when the guard failed.
    pub fn annotate(&self, report: &mut CouplingReport) {
        if !self.passed {
            report.annotate_unreliable(format!(
                "sample homogeneity guard failed (chi-square {:.3} on {} df, p = {:.3e})",
                self.statistic, self.df, self.p_value
            ));
        }
    }
}

pub const GUARD_CHUNKS: usize = 10;

/// Frequency chi-square across consecutive chunks of every run, which sees
/// drift within runs as well as differences between them.
pub fn homogeneity_guard(runs: &[RunSeries], alpha: f64) -> Result<GuardReport> {
    homogeneity_guard_with_chunks(runs, alpha, GUARD_CHUNKS)
}

pub fn homogeneity_guard_with_chunks(runs: &[RunSeries], alpha: f64, chunks: usize) -> Result<GuardReport> {
    if chunks == 0 {
        return Err(Error::config("chunk count must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha must lie in (0, 1)"));
    }
    check_runs(runs, 100.max(10 * chunks))?;
    let k = runs[0].alphabet.len();
    let mut rows = Vec::new();
    for r in runs {
        let s = r.symbol_indices();
        let n = s.len();
        for c in 0..chunks {
            let mut row = vec![0u64; k];
            for &i in &s[c * n / chunks..(c + 1) * n / chunks] {
                row[i] += 1;
            }
            rows.push(row);
        }
    }
    let (statistic, df, p_value) = canonical_chi_square(&rows);
    Ok(GuardReport {
        chunks_per_run: chunks,
        statistic,
        df,
        p_value,
        alpha,
        passed: p_value >= alpha,
    })
}

const DOMAIN_SIMULATION: u64 = 0x5349_4D55;

/// Independent ±1 runs of length `n`; run `i` shows `+1` with probability
/// `p_plus[i]`.
pub fn bernoulli_runs(p_plus: &[f64], n: usize, seed: u64) -> Result<Vec<RunSeries>> {
    if let Some(p) = p_plus.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::config(format!("probability {p} outside [0, 1]")));
    }
    let streams = Substreams::new(seed);
    p_plus
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut rng = streams.stream(DOMAIN_SIMULATION, i as u64);
            RunSeries::from_bools(i, (0..n).map(|_| rng.random_bool(p)))
        })
        .collect()
}

/// A square wave of the given period (first half `+1`), each entry flipped
/// independently with probability `flip`.
pub fn periodic_series(n: usize, period: usize, flip: f64, seed: u64) -> Result<RunSeries> {
    if period < 2 {
        return Err(Error::config("period must be at least 2"));
    }
    if !(0.0..=1.0).contains(&flip) {
        return Err(Error::config(format!("flip probability {flip} outside [0, 1]")));
    }
    let mut rng = Substreams::new(seed).stream(DOMAIN_SIMULATION, u64::MAX);
    RunSeries::from_bools(0, (0..n).map(|t| ((t % period) < period / 2) != rng.random_bool(flip)))
}

pub fn alternating_series(n: usize) -> Result<RunSeries> {
    RunSeries::from_bools(0, (0..n).map(|t| t % 2 == 0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRate {
    pub test: String,
    pub rejections: usize,
    pub replications: usize,
    pub rate: f64,
}

/// Rejection rates of every purity and fine-structure test on pairs of
/// i.i.d. fair ±1 runs of length `n`, each test at level `alpha`.
pub fn null_calibration(n: usize, replications: usize, alpha: f64, seed: u64) -> Result<Vec<RejectionRate>> {
    let streams = Substreams::new(seed);
    let names = [
        TEST_SYMBOLS,
        TEST_BLOCKS,
        TEST_SUBENSEMBLE,
        TEST_WAITING,
        "ljung-box",
        "periodogram-max",
        "runs",
        "homogeneity-guard",
    ];
    let rejected: Vec<Vec<bool>> = (0..replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<bool>> {
            let runs = bernoulli_runs(&[0.5, 0.5], n, streams.child(DOMAIN_SIMULATION, rep as u64).seed())?;
            let cfg = PurityConfig {
                alpha,
                seed: streams.child(DOMAIN_CALIBRATION, rep as u64).seed(),
                ..PurityConfig::default()
            };
            let purity = purity_test(&runs, &cfg)?;
            let fine = fine_structure(&runs[0], 20, alpha)?;
            let guard = homogeneity_guard(&runs, alpha)?;
            let mut out: Vec<bool> = purity.tests.iter().map(|t| t.p_value < alpha).collect();
            let ac = fine.autocorrelation().expect("random series is not constant");
            out.push(ac.ljung_box_p < alpha);
            out.push(fine.periodogram().is_some_and(|p| p.max_p < alpha));
            out.push(fine.runs().is_some_and(|r| r.p_value < alpha));
            out.push(!guard.passed);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let rejections = rejected.iter().filter(|r| r[i]).count();
            RejectionRate {
                test: name.to_string(),
                rejections,
                replications,
                rate: rejections as f64 / replications.max(1) as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use rand::SeedableRng;

    fn bernoulli(id: usize, p: f64, n: usize, seed: u64) -> RunSeries {
        let mut rng = Stream::seed_from_u64(seed);
        RunSeries::from_bools(id, (0..n).map(|_| rng.random_bool(p))).unwrap()
    }

    fn alternating(n: usize) -> RunSeries {
        alternating_series(n).unwrap()
    }

    #[test]
    fn alternating_series_flagged() {
        let s = alternating(10_000);
        let r = fine_structure(&s, 50, 0.01).unwrap();
        assert_eq!(r.symbol_frequencies, vec![0.5, 0.5]);
        let ac = r.autocorrelation().unwrap();
        assert_eq!(ac.values[0], 1.0);
        for k in 1..=50 {
            assert_eq!(ac.values[k], if k % 2 == 0 { 1.0 } else { -1.0 });
        }
        assert!(ac.flagged_lags.contains(&1));
        assert!(r.structure_detected);
        assert_eq!(r.runs().unwrap().runs, 10_000);
    }

    #[test]
    fn alternating_exact_for_all_small_lags() {
        let n = 1000;
        let ac = autocorrelation(&alternating(n).outcomes.iter().map(|&o| o as f64).collect::<Vec<_>>(), n / 10 - 1)
            .unwrap();
        for (k, v) in ac.iter().enumerate() {
            assert_eq!(*v, if k % 2 == 0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = RunSeries::new(0, vec![1; 500]).unwrap();
        let r = fine_structure(&s, 10, 0.01).unwrap();
        assert!(matches!(r.result, FineStructure::Degenerate { .. }));
        assert!(r.autocorrelation().is_none());
    }

    #[test]
    fn too_short_inputs() {
        let s = bernoulli(0, 0.5, 99, 1);
        assert!(matches!(
            fine_structure(&s, 10, 0.01),
            Err(Error::Statistical { required: 100, .. })
        ));
        let runs = [bernoulli(0, 0.5, 150, 1), bernoulli(1, 0.5, 1000, 2)];
        assert!(matches!(
            purity_test(&runs, &PurityConfig::default()),
            Err(Error::Statistical { required: 200, .. })
        ));
        assert!(purity_test(&runs[..1], &PurityConfig::default()).is_err());
    }

    #[test]
    fn planted_period_found() {
        let s = periodic_series(8192, 8, 0.3, 77).unwrap();
        let clean = periodic_series(16, 8, 0.0, 1).unwrap();
        assert_eq!(clean.outcomes[..8], [1, 1, 1, 1, -1, -1, -1, -1]);
        let r = fine_structure(&s, 20, 0.01).unwrap();
        let p = r.periodogram().unwrap();
        assert_eq!(p.peak_frequency, 0.125);
        assert!(p.peak > p.threshold);
        assert!(p.max_p < 1e-10);
    }

    #[test]
    fn mixture_runs_rejected() {
        let runs = [bernoulli(0, 0.3, 10_000, 3), bernoulli(1, 0.7, 10_000, 4)];
        let r = purity_test(&runs, &PurityConfig::default()).unwrap();
        assert!(!r.pure);
        assert!(r.test(TEST_SYMBOLS).unwrap().p_value < 1e-100);
    }

    #[test]
    fn concatenated_halves_rejected_by_subensembles() {
        let mut mixed = bernoulli(0, 0.4, 5000, 5).outcomes;
        mixed.extend(bernoulli(0, 0.6, 5000, 6).outcomes);
        let mut other = bernoulli(1, 0.4, 5000, 7).outcomes;
        other.extend(bernoulli(1, 0.6, 5000, 8).outcomes);
        let runs = [RunSeries::new(0, mixed).unwrap(), RunSeries::new(1, other).unwrap()];
        let r = purity_test(&runs, &PurityConfig::default()).unwrap();
        // both runs carry the same mixture, so only the sub-ensembles see it
        assert!(r.test(TEST_SYMBOLS).unwrap().p_value > 0.01);
        assert!(r.test(TEST_SUBENSEMBLE).unwrap().p_value < 1e-6);
        assert!(!r.pure);
    }

    #[test]
    fn relabelling_leaves_p_values_unchanged() {
        let runs = [bernoulli(0, 0.5, 4000, 9), bernoulli(1, 0.45, 4000, 10)];
        let swapped: Vec<RunSeries> = runs
            .iter()
            .map(|r| RunSeries::new(r.run_id, r.outcomes.iter().map(|o| -o).collect()).unwrap())
            .collect();
        let cfg = PurityConfig {
            seed: 4,
            ..PurityConfig::default()
        };
        let a = purity_test(&runs, &cfg).unwrap();
        let b = purity_test(&swapped, &cfg).unwrap();
        for (x, y) in a.tests.iter().zip(&b.tests) {
            assert_eq!(x.p_value.to_bits(), y.p_value.to_bits(), "{}", x.name);
        }
        let mut c = runs.to_vec();
        for r in c.iter_mut() {
            r.alphabet = vec![3, 7];
            r.outcomes = r.outcomes.iter().map(|&o| if o == 1 { 3 } else { 7 }).collect();
        }
        let c = purity_test(&c, &cfg).unwrap();
        for (x, y) in a.tests.iter().zip(&c.tests) {
            assert_eq!(x.p_value.to_bits(), y.p_value.to_bits(), "{}", x.name);
        }
    }

    #[test]
    fn guard_catches_drift_and_annotates() {
        let mut rng = Stream::seed_from_u64(13);
        let n = 10_000;
        let drift = |id, rng: &mut Stream| {
            RunSeries::from_bools(id, (0..n).map(|t| rng.random_bool(0.4 + 0.2 * t as f64 / n as f64))).unwrap()
        };
        let runs = [drift(0, &mut rng), drift(1, &mut rng)];
        let g = homogeneity_guard(&runs, 0.01).unwrap();
        assert!(!g.passed);
        let flat = [bernoulli(0, 0.5, n, 14), bernoulli(1, 0.5, n, 15)];
        assert!(homogeneity_guard(&flat, 0.01).unwrap().passed);

        let mut report = CouplingReport {
            alpha: 0.01,
            tests: Vec::new(),
            passed: true,
            unreliable: None,
        };
        g.annotate(&mut report);
        assert!(report.unreliable.unwrap().contains("homogeneity"));
    }

    #[test]
    fn cauchy_combination_basics() {
        assert!((cauchy_combination(&[0.3]) - 0.3).abs() < 1e-12);
        assert!((cauchy_combination(&[0.02, 0.02, 0.02]) - 0.02).abs() < 1e-12);
        assert!(cauchy_combination(&[0.0, 0.5]) < 1e-10);
        assert!(cauchy_combination(&[1.0, 1.0]) > 0.999);
    }

    #[test]
    fn rough_null_calibration() {
        let rates = null_calibration(2000, 100, 0.05, 1).unwrap();
        for r in rates {
            assert!(r.rate <= 0.15, "{r:?}");
        }
    }
}
