//! Simulated Bell-test protocols and the CHSH estimators built on them.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::chsh::{chsh_combination, ChshReport, Design, SettingPair};
use crate::error::{Error, Result};
use crate::models::{Family, ModelSpec, PreparedTrial, TrialOutcome};
use crate::rng::{Substreams, BLOCK_SIZE};
use crate::stats::{normal_quantile, normal_two_sided_p, wilson_interval};

const DOMAIN_PAIR_TRIALS: u64 = 0x5041_4952;
const DOMAIN_QUADRUPLES: u64 = 0x5155_4144;
const DOMAIN_REPLICATION: u64 = 0x5245_504C;
const DOMAIN_BOOTSTRAP: u64 = 0x424F_4F54;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairRow {
    pub trial: u64,
    pub a: i8,
    pub b: i8,
}

/// Outcomes recorded under one setting pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSheet {
    pub pair: SettingPair,
    /// `(θ_x, θ_y)` when known; external sheets may not carry angles.
    pub angles: Option<(f64, f64)>,
    pub rows: Vec<PairRow>,
}

impl PairSheet {
    pub fn new(pair: SettingPair, angles: Option<(f64, f64)>, rows: Vec<PairRow>) -> Result<Self> {
        if rows.iter().any(|r| r.a.abs() != 1 || r.b.abs() != 1) {
            return Err(Error::input("pair sheet entries must be +1 or -1"));
        }
        Ok(PairSheet { pair, angles, rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn product_sum(&self) -> i64 {
        self.rows.iter().map(|r| i64::from(r.a * r.b)).sum()
    }

    pub fn mean_a(&self) -> f64 {
        self.rows.iter().map(|r| f64::from(r.a)).sum::<f64>() / self.n() as f64
    }

    pub fn mean_b(&self) -> f64 {
        self.rows.iter().map(|r| f64::from(r.b)).sum::<f64>() / self.n() as f64
    }

    /// `[[n(+,+), n(+,−)], [n(−,+), n(−,−)]]`.
    pub fn counts(&self) -> [[u64; 2]; 2] {
        let mut c = [[0u64; 2]; 2];
        for r in &self.rows {
            c[usize::from(r.a < 0)][usize::from(r.b < 0)] += 1;
        }
        c
    }
}

/// N × 4 table of `(a, a', b, b')`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadrupleSheet {
    pub design: Option<Design>,
    pub rows: Vec<[i8; 4]>,
}

impl QuadrupleSheet {
    pub fn new(design: Option<Design>, rows: Vec<[i8; 4]>) -> Result<Self> {
        if rows.iter().flatten().any(|v| v.abs() != 1) {
            return Err(Error::input("quadruple entries must be +1 or -1"));
        }
        Ok(QuadrupleSheet { design, rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// The column pair observed under `pair`, as a pair sheet.
    pub fn project(&self, pair: SettingPair) -> PairSheet {
        let (xi, yi) = (pair.x_index(), 2 + pair.y_index());
        PairSheet {
            pair,
            angles: self.design.map(|d| d.angles(pair)),
            rows: self
                .rows
                .iter()
                .enumerate()
                .map(|(t, q)| PairRow {
                    trial: t as u64,
                    a: q[xi],
                    b: q[yi],
                })
                .collect(),
        }
    }
}

/// 2×2 outcome counts for each setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CountTable {
    /// `counts[pair][a == −1][b == −1]`.
    pub counts: [[[u64; 2]; 2]; 4],
}

impl CountTable {
    pub fn from_sheets(sheets: &[PairSheet; 4]) -> Result<Self> {
        check_distinct(sheets)?;
        let mut counts = [[[0u64; 2]; 2]; 4];
        for s in sheets {
            counts[s.pair.index()] = s.counts();
        }
        Ok(CountTable { counts })
    }

    pub fn from_quadruples(sheet: &QuadrupleSheet) -> Self {
        CountTable {
            counts: SettingPair::ALL.map(|p| sheet.project(p).counts()),
        }
    }

    pub fn total(&self, pair: SettingPair) -> u64 {
        self.counts[pair.index()].iter().flatten().sum()
    }

    /// `N · Ê` for `pair`: agreements minus disagreements.
    pub fn correlation_count(&self, pair: SettingPair) -> i64 {
        let c = self.counts[pair.index()];
        c[0][0] as i64 + c[1][1] as i64 - c[0][1] as i64 - c[1][0] as i64
    }
}

fn check_distinct(sheets: &[PairSheet; 4]) -> Result<()> {
    let mut seen = [false; 4];
    for s in sheets {
        if std::mem::replace(&mut seen[s.pair.index()], true) {
            return Err(Error::input(format!("setting pair {} appears twice", s.pair)));
        }
    }
    Ok(())
}

/// Orders four sheets by setting pair.
pub fn order_sheets(sheets: Vec<PairSheet>) -> Result<[PairSheet; 4]> {
    if sheets.len() != 4 {
        return Err(Error::input(format!(
            "expected sheets for 4 setting pairs, got {}",
            sheets.len()
        )));
    }
    let mut slots: [Option<PairSheet>; 4] = Default::default();
    for s in sheets {
        let i = s.pair.index();
        if slots[i].replace(s).is_some() {
            return Err(Error::input(format!(
                "setting pair {} appears twice",
                SettingPair::from_index(i)
            )));
        }
    }
    Ok(slots.map(|s| s.expect("four distinct pairs fill every slot")))
}

/// Runs the four-pair protocol: each trial draws the `x` and `y` labels by
/// independent fair coins and is routed to its setting pair's sheet until
/// every sheet holds `n_per_pair` rows. Trials are generated in fixed-size
/// blocks on counter-based substreams and routed in block order.
pub fn run_pair_experiments(
    model: &ModelSpec,
    design: &Design,
    n_per_pair: usize,
    seed: u64,
) -> Result<[PairSheet; 4]> {
    run_pair_experiments_on(model, design, n_per_pair, &Substreams::new(seed))
}

fn run_pair_experiments_on(
    model: &ModelSpec,
    design: &Design,
    n_per_pair: usize,
    streams: &Substreams,
) -> Result<[PairSheet; 4]> {
    if n_per_pair == 0 {
        return Err(Error::input("n_per_pair must be at least 1"));
    }
    model.validate()?;
    let prepared: Vec<PreparedTrial<'_>> = SettingPair::ALL
        .iter()
        .map(|&p| model.prepare(design.context(p)))
        .collect::<Result<_>>()?;

    let mut rows: [Vec<PairRow>; 4] = Default::default();
    for r in rows.iter_mut() {
        r.reserve(n_per_pair);
    }
    let mut next_block = 0u64;
    let mut trial = 0u64;
    loop {
        let missing: usize = rows.iter().map(|r| n_per_pair - r.len()).sum();
        if missing == 0 {
            break;
        }
        let want = (missing * 4 + 64).div_ceil(BLOCK_SIZE).max(1) as u64;
        let batch: Vec<Vec<(SettingPair, TrialOutcome)>> = (next_block..next_block + want)
            .into_par_iter()
            .map(|b| -> Result<_> {
                let mut rng = streams.stream(DOMAIN_PAIR_TRIALS, b);
                let len = BLOCK_SIZE.min(missing * 4 + 64);
                let mut out = Vec::with_capacity(len);
                for _ in 0..len {
                    let xi = usize::from(rng.random::<bool>());
                    let yi = usize::from(rng.random::<bool>());
                    let pair = SettingPair::from_parts(xi, yi);
                    out.push((pair, prepared[pair.index()].sample(&mut rng, false)?));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        next_block += want;
        'route: for block in batch {
            for (pair, t) in block {
                let sheet = &mut rows[pair.index()];
                if sheet.len() < n_per_pair {
                    sheet.push(PairRow {
                        trial,
                        a: t.a,
                        b: t.b,
                    });
                }
                trial += 1;
                if rows.iter().all(|r| r.len() == n_per_pair) {
                    break 'route;
                }
            }
        }
    }
    let mut it = rows.into_iter();
    Ok(SettingPair::ALL.map(|pair| PairSheet {
        pair,
        angles: Some(design.angles(pair)),
        rows: it.next().expect("four sheets"),
    }))
}

const DOMAIN_TRACED: u64 = 0x5452_4143;

/// `n` trials with fair-coin settings, keeping each trial's hidden values.
/// Quantum trials carry no hidden values and are rejected.
pub fn traced_trials(
    model: &ModelSpec,
    design: &Design,
    n: usize,
    seed: u64,
) -> Result<Vec<(u64, SettingPair, TrialOutcome)>> {
    if model.family() == Family::Quantum {
        return Err(Error::Contract("the quantum model has no hidden variables to trace".into()));
    }
    model.validate()?;
    let prepared: Vec<PreparedTrial<'_>> = SettingPair::ALL
        .iter()
        .map(|&p| model.prepare(design.context(p)))
        .collect::<Result<_>>()?;
    let streams = Substreams::new(seed);
    let blocks: Vec<Vec<(u64, SettingPair, TrialOutcome)>> = crate::rng::blocks(n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(b, (start, len))| {
            let mut rng = streams.stream(DOMAIN_TRACED, b as u64);
            (0..len)
                .map(|k| {
                    let xi = usize::from(rng.random::<bool>());
                    let yi = usize::from(rng.random::<bool>());
                    let pair = SettingPair::from_parts(xi, yi);
                    let t = prepared[pair.index()].sample(&mut rng, true)?;
                    Ok(((start + k) as u64, pair, t))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

/// One λ per row, all four setting outcomes evaluated on it. Only defined for
/// counterfactually definite models.
pub fn run_counterfactual_experiment(
    model: &ModelSpec,
    design: &Design,
    n: usize,
    seed: u64,
) -> Result<QuadrupleSheet> {
    if !model.counterfactually_definite() {
        return Err(Error::Contract(format!(
            "quadruples undefined for this family ({})",
            model.family().name()
        )));
    }
    if n == 0 {
        return Err(Error::input("n must be at least 1"));
    }
    let streams = Substreams::new(seed);
    let blocks: Vec<Vec<[i8; 4]>> = crate::rng::blocks(n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(b, (_, len))| {
            let mut rng = streams.stream(DOMAIN_QUADRUPLES, b as u64);
            (0..len)
                .map(|_| lrhvm_quadruple(rng.random::<f64>() * std::f64::consts::TAU, design))
                .collect()
        })
        .collect();
    QuadrupleSheet::new(Some(*design), blocks.concat())
}

/// `(A_x(λ), A_x'(λ), B_y(λ), B_y'(λ))` for the sign model.
pub fn lrhvm_quadruple(lambda: f64, design: &Design) -> [i8; 4] {
    use crate::models::{lrhvm_outcomes, Arm};
    [
        lrhvm_outcomes(lambda, design.a, Arm::A),
        lrhvm_outcomes(lambda, design.a_prime, Arm::A),
        lrhvm_outcomes(lambda, design.b, Arm::B),
        lrhvm_outcomes(lambda, design.b_prime, Arm::B),
    ]
}

/// Per-row CHSH value `ab − ab' + a'b + a'b' = a(b − b') + a'(b + b')`.
pub fn row_chsh(q: [i8; 4]) -> i64 {
    let [a, ap, b, bp] = q.map(i64::from);
    a * (b - bp) + ap * (b + bp)
}

/// All four correlations from the same rows; `|S| ≤ 2` always.
pub fn chsh_from_quadruples(sheet: &QuadrupleSheet) -> Result<ChshReport> {
    if sheet.n() == 0 {
        return Err(Error::input("quadruple sheet is empty"));
    }
    let n = sheet.n();
    let sums = SettingPair::ALL.map(|p| (n, sheet.project(p).product_sum()));
    let mut report = ChshReport::from_sums(sums)?;
    // S is the mean of per-row values in {−2, 2}; evaluate it that way so
    // rounding cannot push |S| past 2.
    let total: i64 = sheet.rows.iter().map(|&q| row_chsh(q)).sum();
    report.s = total as f64 / n as f64;
    Ok(report)
}

/// Each correlation from its own sheet.
pub fn chsh_from_pairs(sheets: &[PairSheet; 4]) -> Result<ChshReport> {
    check_distinct(sheets)?;
    let mut sums = [(0usize, 0i64); 4];
    for s in sheets {
        if s.n() == 0 {
            return Err(Error::input(format!("sheet {} is empty", s.pair)));
        }
        sums[s.pair.index()] = (s.n(), s.product_sum());
    }
    ChshReport::from_sums(sums)
}

/// Bootstrap standard error of `Ŝ` from `resamples` row resamplings of each
/// sheet. `Ŝ` depends on a sheet only through its count of `ab = +1` rows, so
/// a resampled sheet is a binomial draw on that count.
pub fn bootstrap_se(sheets: &[PairSheet; 4], resamples: usize, seed: u64) -> Result<f64> {
    if resamples < 2 {
        return Err(Error::input("bootstrap needs at least 2 resamples"));
    }
    let ordered = order_sheets(sheets.to_vec())?;
    let parts: Vec<(u64, f64)> = ordered
        .iter()
        .map(|s| {
            let n = s.n() as u64;
            let agree = (s.n() as i64 + s.product_sum()) / 2;
            (n, agree as f64 / n as f64)
        })
        .collect();
    let streams = Substreams::new(seed);
    let values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.stream(DOMAIN_BOOTSTRAP, r as u64);
            let e = [0, 1, 2, 3].map(|i| {
                let (n, p) = parts[i];
                let k = Binomial::new(n, p).expect("probability in [0, 1]").sample(&mut rng);
                (2 * k as i64 - n as i64) as f64 / n as f64
            });
            chsh_combination(e)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / resamples as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationFrequency {
    pub replications: usize,
    pub violations: usize,
    pub fraction: f64,
    /// 95% Wilson interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_s: f64,
    pub mean_se_s: f64,
}

/// Fraction of `replications` independent four-sheet experiments whose
/// pair-sheet estimate has `|Ŝ| > 2`.
pub fn violation_frequency(
    model: &ModelSpec,
    design: &Design,
    n_per_pair: usize,
    replications: usize,
    seed: u64,
) -> Result<ViolationFrequency> {
    if replications < 100 {
        return Err(Error::input("violation frequency needs at least 100 replications"));
    }
    let root = Substreams::new(seed);
    let reports: Vec<ChshReport> = (0..replications)
        .into_par_iter()
        .map(|m| {
            let streams = root.child(DOMAIN_REPLICATION, m as u64);
            let sheets = run_pair_experiments_on(model, design, n_per_pair, &streams)?;
            chsh_from_pairs(&sheets)
        })
        .collect::<Result<_>>()?;
    let violations = reports.iter().filter(|r| r.violated).count();
    let (ci_low, ci_high) = wilson_interval(violations as u64, replications as u64, 0.95);
    Ok(ViolationFrequency {
        replications,
        violations,
        fraction: violations as f64 / replications as f64,
        ci_low,
        ci_high,
        mean_s: reports.iter().map(|r| r.s).sum::<f64>() / replications as f64,
        mean_se_s: reports.iter().map(|r| r.se_s).sum::<f64>() / replications as f64,
    })
}

/// Model values a coupling is tested against, per setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingTarget {
    pub mean_a: f64,
    pub mean_b: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualityTest {
    /// e.g. `E(A'_xy) = E(A_x)` or `E(A_xy) = E(A_xy')`.
    pub equality: String,
    pub pair: SettingPair,
    pub observed: f64,
    pub reference: f64,
    pub z: f64,
    pub p_value: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    pub alpha: f64,
    /// Twelve model equalities (two single-arm means and the pairwise
    /// expectation per pair) followed by four cross-context marginal
    /// equalities.
    pub tests: Vec<EqualityTest>,
    /// Verdict at Bonferroni level `alpha / tests.len()`.
    pub passed: bool,
    /// Set when a sample-homogeneity guard failed upstream.
    pub unreliable: Option<String>,
}

impl CouplingReport {
    pub fn failures(&self) -> impl Iterator<Item = &EqualityTest> {
        self.tests.iter().filter(|t| t.failed)
    }

    pub fn annotate_unreliable(&mut self, reason: impl Into<String>) {
        self.unreliable = Some(reason.into());
    }
}

/// Coupling targets from the model: closed forms where available, otherwise
/// a Monte Carlo estimate with `mc_trials` trials per pair.
pub fn coupling_targets(
    model: &ModelSpec,
    design: &Design,
    mc_trials: usize,
    seed: u64,
) -> Result<[CouplingTarget; 4]> {
    let streams = Substreams::new(seed);
    let mut out = [CouplingTarget {
        mean_a: 0.0,
        mean_b: 0.0,
        correlation: 0.0,
    }; 4];
    for pair in SettingPair::ALL {
        let (tx, ty) = design.angles(pair);
        let analytic = model.analytic_expectation(tx, ty);
        let target = match (model, analytic) {
            // reference instances all have unbiased marginals
            (ModelSpec::Lrhvm | ModelSpec::Shvm | ModelSpec::RotChvm(_) | ModelSpec::Quantum(_), Some(e)) => {
                CouplingTarget {
                    mean_a: 0.0,
                    mean_b: 0.0,
                    correlation: e,
                }
            }
            _ => {
                let p = model.prepare(design.context(pair))?;
                let mut rng = streams.stream(0xC0, pair.index() as u64);
                let (mut sa, mut sb, mut sab) = (0i64, 0i64, 0i64);
                for _ in 0..mc_trials {
                    let t = p.sample(&mut rng, false)?;
                    sa += i64::from(t.a);
                    sb += i64::from(t.b);
                    sab += i64::from(t.a * t.b);
                }
                let n = mc_trials as f64;
                CouplingTarget {
                    mean_a: sa as f64 / n,
                    mean_b: sb as f64 / n,
                    correlation: sab as f64 / n,
                }
            }
        };
        out[pair.index()] = target;
    }
    Ok(out)
}

/// Tests whether `model` is a probabilistic coupling for the four sheets:
/// per pair, the single-arm means and pairwise expectation must match the
/// model; across pairs, sheets sharing a setting must agree on that
/// setting's single-arm mean.
pub fn coupling_check(
    model: &ModelSpec,
    design: &Design,
    sheets: &[PairSheet; 4],
    alpha: f64,
    seed: u64,
) -> Result<CouplingReport> {
    check_distinct(sheets)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input("alpha must lie in (0, 1)"));
    }
    let n_tests = 16;
    let z_needed = normal_quantile(1.0 - alpha / (2.0 * n_tests as f64));
    let min_n = sheets.iter().map(PairSheet::n).min().unwrap_or(0);
    let required = ((z_needed * z_needed).ceil() as usize).max(30);
    if min_n < required {
        return Err(Error::statistical(
            format!("sheets with {min_n} rows cannot resolve alpha = {alpha}"),
            required,
        ));
    }
    let targets = coupling_targets(model, design, 1_000_000, seed)?;

    let one_sample = |name: String, pair: SettingPair, observed: f64, reference: f64, n: usize| {
        let var = (1.0 - reference * reference).max(0.0) / n as f64;
        let (z, p) = if var == 0.0 {
            if (observed - reference).abs() < 1e-12 {
                (0.0, 1.0)
            } else {
                (f64::INFINITY, 0.0)
            }
        } else {
            let z = (observed - reference) / var.sqrt();
            (z, normal_two_sided_p(z))
        };
        EqualityTest {
            equality: name,
            pair,
            observed,
            reference,
            z,
            p_value: p,
            failed: p < alpha,
        }
    };

    let mut ordered: [Option<&PairSheet>; 4] = [None; 4];
    for s in sheets {
        ordered[s.pair.index()] = Some(s);
    }
    let ordered = ordered.map(|s| s.expect("distinct pairs"));

    let mut tests = Vec::with_capacity(n_tests);
    for s in ordered {
        let t = targets[s.pair.index()];
        let p = s.pair;
        tests.push(one_sample(format!("E(A_{p}) = E(A'_{p})"), p, s.mean_a(), t.mean_a, s.n()));
        tests.push(one_sample(format!("E(B_{p}) = E(B'_{p})"), p, s.mean_b(), t.mean_b, s.n()));
        let e = s.product_sum() as f64 / s.n() as f64;
        tests.push(one_sample(
            format!("E(A_{p}B_{p}) = E(A'_{p}B'_{p})"),
            p,
            e,
            t.correlation,
            s.n(),
        ));
    }
    // cross-context marginals: (x shared) xy vs xy', x'y vs x'y'; (y shared) xy vs x'y, xy' vs x'y'
    let cross = [
        (SettingPair::XY, SettingPair::XYp, true),
        (SettingPair::XpY, SettingPair::XpYp, true),
        (SettingPair::XY, SettingPair::XpY, false),
        (SettingPair::XYp, SettingPair::XpYp, false),
    ];
    for (p1, p2, arm_a) in cross {
        let (s1, s2) = (ordered[p1.index()], ordered[p2.index()]);
        let (m1, m2) = if arm_a {
            (s1.mean_a(), s2.mean_a())
        } else {
            (s1.mean_b(), s2.mean_b())
        };
        let var = (1.0 - m1 * m1).max(0.0) / s1.n() as f64 + (1.0 - m2 * m2).max(0.0) / s2.n() as f64;
        let (z, p) = if var == 0.0 {
            if m1 == m2 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) }
        } else {
            let z = (m1 - m2) / var.sqrt();
            (z, normal_two_sided_p(z))
        };
        let arm = if arm_a { "A" } else { "B" };
        tests.push(EqualityTest {
            equality: format!("E({arm}_{p1}) = E({arm}_{p2})"),
            pair: p1,
            observed: m1,
            reference: m2,
            z,
            p_value: p,
            failed: p < alpha,
        });
    }
    let passed = tests.iter().all(|t| t.p_value >= alpha / n_tests as f64);
    Ok(CouplingReport {
        alpha,
        tests,
        passed,
        unreliable: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadruple_identity_enumeration() {
        for bits in 0..16u8 {
            let q = [0, 1, 2, 3].map(|k| if bits >> k & 1 == 1 { 1 } else { -1 });
            assert_eq!(row_chsh(q).abs(), 2, "{q:?}");
        }
        let sheet = QuadrupleSheet::new(None, vec![[1, 1, 1, 1]]).unwrap();
        assert_eq!(chsh_from_quadruples(&sheet).unwrap().s, 2.0);
        assert!(chsh_from_quadruples(&QuadrupleSheet::new(None, vec![]).unwrap()).is_err());
        assert!(QuadrupleSheet::new(None, vec![[1, 0, 1, 1]]).is_err());
    }

    proptest! {
        #[test]
        fn quadruple_chsh_never_exceeds_two(rows in proptest::collection::vec(
            proptest::array::uniform4(prop_oneof![Just(1i8), Just(-1i8)]), 1..200)) {
            let sheet = QuadrupleSheet::new(None, rows).unwrap();
            let r = chsh_from_quadruples(&sheet).unwrap();
            prop_assert!(r.s.abs() <= 2.0);
            prop_assert!(!r.violated);
            let combo = crate::chsh::chsh_combination(r.estimates.map(|e| e.e));
            prop_assert!((combo - r.s).abs() <= 1e-12);
            // the same counts read as four pair sheets give the same S
            let pairs = SettingPair::ALL.map(|p| sheet.project(p));
            let rp = chsh_from_pairs(&pairs).unwrap();
            prop_assert!((rp.s - r.s).abs() <= 1e-12);
        }
    }

    #[test]
    fn crafted_pair_sheets_reach_four() {
        let rows = |a, b| vec![PairRow { trial: 0, a, b }];
        let sheets = [
            PairSheet::new(SettingPair::XY, None, rows(1, 1)).unwrap(),
            PairSheet::new(SettingPair::XYp, None, rows(1, -1)).unwrap(),
            PairSheet::new(SettingPair::XpY, None, rows(1, 1)).unwrap(),
            PairSheet::new(SettingPair::XpYp, None, rows(1, 1)).unwrap(),
        ];
        let r = chsh_from_pairs(&sheets).unwrap();
        assert_eq!(r.s, 4.0);
        assert!(r.violated);
        let mut dup = sheets.clone();
        dup[1].pair = SettingPair::XY;
        assert!(chsh_from_pairs(&dup).is_err());
    }

    #[test]
    fn counterfactual_contract() {
        let d = Design::standard();
        assert!(matches!(
            run_counterfactual_experiment(&ModelSpec::Shvm, &d, 10, 1),
            Err(Error::Contract(_))
        ));
        let sheet = run_counterfactual_experiment(&ModelSpec::Lrhvm, &d, 5000, 1).unwrap();
        assert_eq!(sheet.n(), 5000);
        assert!(chsh_from_quadruples(&sheet).unwrap().s.abs() <= 2.0);
        // λ = 0 at the standard angles: cos(0)=1, cos(−π/2)≈0⁺, B: −sign cos(−π/4), −sign cos(−3π/4)
        assert_eq!(lrhvm_quadruple(0.0, &d), [1, 1, -1, 1]);
    }

    #[test]
    fn pair_experiment_is_deterministic_and_complete() {
        let d = Design::standard();
        let s1 = run_pair_experiments(&ModelSpec::Lrhvm, &d, 3000, 9).unwrap();
        let s2 = run_pair_experiments(&ModelSpec::Lrhvm, &d, 3000, 9).unwrap();
        assert_eq!(s1, s2);
        for s in &s1 {
            assert_eq!(s.n(), 3000);
        }
        let s3 = run_pair_experiments(&ModelSpec::Lrhvm, &d, 3000, 10).unwrap();
        assert_ne!(s1, s3);
        assert!(run_pair_experiments(&ModelSpec::Lrhvm, &d, 0, 9).is_err());
    }

    #[test]
    fn quantum_equal_settings_anticorrelated() {
        let d = Design::new(0.3, 1.0, 0.3, 2.0).unwrap();
        let sheets = run_pair_experiments(&ModelSpec::quantum_singlet(), &d, 20_000, 2).unwrap();
        assert!(sheets[0].rows.iter().all(|r| r.b == -r.a));
    }

    #[test]
    fn violation_frequency_needs_replications() {
        assert!(violation_frequency(&ModelSpec::Lrhvm, &Design::standard(), 10, 50, 1).is_err());
    }

    #[test]
    fn coupling_self_consistency_and_planted_bias() {
        let d = Design::standard();
        let sheets = run_pair_experiments(&ModelSpec::quantum_singlet(), &d, 20_000, 11).unwrap();
        let r = coupling_check(&ModelSpec::quantum_singlet(), &d, &sheets, 0.01, 1).unwrap();
        assert_eq!(r.tests.len(), 16);
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());

        let mut biased = sheets.clone();
        for row in biased[1].rows.iter_mut().take(3000) {
            row.a = 1;
        }
        let r = coupling_check(&ModelSpec::quantum_singlet(), &d, &biased, 0.01, 1).unwrap();
        assert!(!r.passed);
        assert!(r.failures().any(|t| t.equality == "E(A_xy) = E(A_xy')"));

        let tiny = run_pair_experiments(&ModelSpec::Lrhvm, &d, 5, 1).unwrap();
        assert!(matches!(
            coupling_check(&ModelSpec::Lrhvm, &d, &tiny, 0.01, 1),
            Err(Error::Statistical { .. })
        ));
    }

    #[test]
    fn bootstrap_matches_plug_in_error() {
        let sheets = run_pair_experiments(&ModelSpec::quantum_singlet(), &Design::standard(), 4000, 3).unwrap();
        let r = chsh_from_pairs(&sheets).unwrap();
        let b = bootstrap_se(&sheets, 2000, 9).unwrap();
        assert!((b / r.se_s - 1.0).abs() < 0.1, "{b} vs {}", r.se_s);
        assert_eq!(b, bootstrap_se(&sheets, 2000, 9).unwrap());
        assert!(bootstrap_se(&sheets, 1, 9).is_err());
    }
}
