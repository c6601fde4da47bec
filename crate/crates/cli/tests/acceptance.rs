//! End-to-end acceptance run: every criterion prints one PASS/FAIL line and
//! the process exits non-zero if any criterion fails. Criteria run one after
//! another so the wall-clock budgets are measured without interference.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2, TAU};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bell_lab::bertrand::{analytic_probability, hit_probability, ratio_to_f64, ChordProtocol, ChordVariant};
use bell_lab::coincidence::{coincidence_chsh_scan, DelayModel, WindowMode, REFERENCE_WINDOW};
use bell_lab::completeness::{
    alternating_series, bernoulli_runs, fine_structure, null_calibration, purity_test, PurityConfig,
};
use bell_lab::experiment::{
    chsh_from_pairs, chsh_from_quadruples, row_chsh, run_pair_experiments, violation_frequency, CountTable,
    QuadrupleSheet,
};
use bell_lab::models::statistical_independence_check;
use bell_lab::quantum::{chsh_quantum, correlation, singlet_state, smeared_correlation, AngleSmearing};
use bell_lab::reshuffle::{quadruple_from_index, reshuffle_feasibility, Feasibility};
use bell_lab::rng::{Stream, Substreams};
use bell_lab::{Design, ModelSpec, SettingPair};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> Stream {
    Substreams::new(seed).stream(0xACCE, 0)
}

fn within_budget(out: Outcome, elapsed: Duration, budget: Option<Duration>) -> Outcome {
    match budget {
        Some(b) if elapsed > b => check(false, format!("{}; took {elapsed:.2?} > {b:?}", out.detail)),
        _ => out,
    }
}

fn singlet_correlation() -> Outcome {
    let state = singlet_state();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let tx = TAU * i as f64 / 10.0;
            let ty = PI * j as f64 / 10.0 - 0.3;
            let e = correlation(&state, tx, ty).expect("two-qubit state");
            worst = worst.max((e + (tx - ty).cos()).abs());
        }
    }
    check(worst < 1e-12, format!("max |E + cos| = {worst:.2e} over 100 angle pairs"))
}

fn tsirelson() -> Outcome {
    let mut r = rng(2);
    let mut max_s: f64 = 0.0;
    for _ in 0..10_000 {
        let a = [0; 4].map(|_| r.random::<f64>() * TAU);
        max_s = max_s.max(chsh_quantum(a[0], a[1], a[2], a[3]).unwrap().abs());
    }
    let d = Design::standard();
    let s = chsh_quantum(d.a, d.a_prime, d.b, d.b_prime).unwrap();
    let bound = 2.0 * SQRT_2;
    check(
        max_s <= bound + 1e-9 && (s.abs() - bound).abs() <= 1e-9,
        format!("max |S| = {max_s:.12}, standard angles S = {s:.12}"),
    )
}

fn spreadsheet_identity() -> Outcome {
    let all_two = (0..16).all(|i| row_chsh(quadruple_from_index(i)).abs() == 2);
    let mut r = rng(3);
    let mut max_s: f64 = 0.0;
    for _ in 0..10_000 {
        // skewed distribution over the 16 rows so |S| gets close to 2
        let weights: Vec<f64> = (0..16).map(|_| r.random::<f64>().powi(8)).collect();
        let total: f64 = weights.iter().sum();
        let rows: Vec<[i8; 4]> = (0..1000)
            .map(|_| {
                let mut u = r.random::<f64>() * total;
                let mut k = 0;
                while k < 15 && u >= weights[k] {
                    u -= weights[k];
                    k += 1;
                }
                quadruple_from_index(k)
            })
            .collect();
        let sheet = QuadrupleSheet::new(None, rows).unwrap();
        max_s = max_s.max(chsh_from_quadruples(&sheet).unwrap().s.abs());
    }
    check(
        all_two && max_s <= 2.0,
        format!("16 rows all |s| = 2: {all_two}; max |S| over 10^4 sheets = {max_s:.4}"),
    )
}

fn violation_fraction() -> Outcome {
    let boundary = violation_frequency(&ModelSpec::Lrhvm, &Design::standard(), 1000, 2000, 4).unwrap();
    let interior_design = Design::new(0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4).unwrap();
    let interior = violation_frequency(&ModelSpec::Lrhvm, &interior_design, 10_000, 1000, 5).unwrap();
    check(
        (boundary.fraction - 0.5).abs() <= 0.05 && interior.fraction < 0.01,
        format!(
            "boundary fraction {:.4} (mean S {:.4}), interior fraction {:.4} (mean S {:.4})",
            boundary.fraction, boundary.mean_s, interior.fraction, interior.mean_s
        ),
    )
}

type Cells = [[[u64; 2]; 2]; 4];

fn reachable(n: u64) -> HashSet<Cells> {
    fn rec(i: usize, left: u64, counts: &mut [u64; 16], out: &mut HashSet<Cells>) {
        if i == 15 {
            counts[15] = left;
            let mut cells = [[[0u64; 2]; 2]; 4];
            for (q, &c) in counts.iter().enumerate() {
                let v = |k: usize| (q >> k) & 1;
                cells[0][v(0)][v(2)] += c;
                cells[1][v(0)][v(3)] += c;
                cells[2][v(1)][v(2)] += c;
                cells[3][v(1)][v(3)] += c;
            }
            out.insert(cells);
            return;
        }
        for c in 0..=left {
            counts[i] = c;
            rec(i + 1, left - c, counts, out);
        }
        counts[i] = 0;
    }
    let mut out = HashSet::new();
    rec(0, n, &mut [0; 16], &mut out);
    out
}

fn random_table(r: &mut Stream, n: u64) -> CountTable {
    let cell = |r: &mut Stream| {
        let mut c = [0u64; 4];
        for _ in 0..n {
            c[r.random_range(0..4)] += 1;
        }
        [[c[0], c[1]], [c[2], c[3]]]
    };
    let counts = if r.random::<bool>() {
        [0; 4].map(|_| cell(r))
    } else {
        // consistent marginals, random correlations
        let m: [u64; 4] = [0; 4].map(|_| r.random_range(0..=n));
        let mut t = [[[0u64; 2]; 2]; 4];
        for p in SettingPair::ALL {
            let (rp, cp) = (m[p.x_index()], m[2 + p.y_index()]);
            let pp = r.random_range((rp + cp).saturating_sub(n)..=rp.min(cp));
            t[p.index()] = [[pp, rp - pp], [cp - pp, n + pp - rp - cp]];
        }
        t
    };
    CountTable { counts }
}

fn reshuffle() -> Outcome {
    let oracle: Vec<HashSet<Cells>> = (0..=6).map(reachable).collect();
    let mut r = rng(5);
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let n = r.random_range(1..=6u64);
        let t = random_table(&mut r, n);
        let feasible = reshuffle_feasibility(&t).unwrap().outcome.is_feasible();
        if feasible != oracle[n as usize].contains(&t.counts) {
            disagreements += 1;
        }
    }

    let mut crafted = CountTable { counts: [[[0; 2]; 2]; 4] };
    for (i, (a, b)) in [(0, 0), (0, 1), (0, 0), (0, 0)].into_iter().enumerate() {
        crafted.counts[i][a][b] = 1;
    }
    let crafted_infeasible = !reshuffle_feasibility(&crafted).unwrap().outcome.is_feasible();

    let mut derived_ok = true;
    for _ in 0..200 {
        let n = r.random_range(1..=2000);
        let rows = (0..n).map(|_| quadruple_from_index(r.random_range(0..16))).collect();
        let t = CountTable::from_quadruples(&QuadrupleSheet::new(None, rows).unwrap());
        match reshuffle_feasibility(&t).unwrap().outcome {
            Feasibility::Feasible { witness } => derived_ok &= witness.pair_marginals() == t,
            Feasibility::Infeasible { .. } => derived_ok = false,
        }
    }

    let quantum = ModelSpec::quantum_singlet();
    let infeasible_seeds = (0..50)
        .filter(|&seed| {
            let sheets = run_pair_experiments(&quantum, &Design::standard(), 10_000, seed).unwrap();
            let t = CountTable::from_sheets(&sheets).unwrap();
            !reshuffle_feasibility(&t).unwrap().outcome.is_feasible()
        })
        .count();
    check(
        disagreements == 0 && crafted_infeasible && derived_ok && infeasible_seeds == 50,
        format!(
            "oracle disagreements {disagreements}/10000, crafted infeasible {crafted_infeasible}, \
             quadruple-derived feasible {derived_ok}, quantum infeasible {infeasible_seeds}/50"
        ),
    )
}

fn model_oracles() -> Outcome {
    let n = 100_000;
    let tol = 4.0 / (n as f64).sqrt();
    let mut r = rng(6);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut seed = 0;
    for model in [ModelSpec::Lrhvm, ModelSpec::Shvm, ModelSpec::rot_chvm()] {
        let mut w: f64 = 0.0;
        for _ in 0..20 {
            let (tx, ty) = (r.random::<f64>() * TAU, r.random::<f64>() * TAU);
            let design = Design::new(tx, tx + 1.0, ty, ty + 1.0).unwrap();
            let prepared = model.prepare(design.context(SettingPair::XY)).unwrap();
            let mut s = Substreams::new(seed).stream(0x0AC1, 0);
            seed += 1;
            let sum: i64 = (0..n)
                .map(|_| {
                    let t = prepared.sample(&mut s, false).unwrap();
                    i64::from(t.a * t.b)
                })
                .sum();
            let e = sum as f64 / n as f64;
            w = w.max((e - model.analytic_expectation(tx, ty).unwrap()).abs());
        }
        worst.push((model.family().name().to_string(), w));
    }
    let ok = worst.iter().all(|(_, w)| *w <= tol);
    let detail = worst
        .iter()
        .map(|(m, w)| format!("{m} {w:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(ok, format!("max |Ê − E| vs tolerance {tol:.4}: {detail}"))
}

fn contextual_model() -> Outcome {
    let design = Design::standard();
    let sheets = run_pair_experiments(&ModelSpec::rot_chvm(), &design, 250_000, 7).unwrap();
    let s = chsh_from_pairs(&sheets).unwrap();
    let rot = statistical_independence_check(&ModelSpec::rot_chvm(), &design, 20_000, 10, 0.01, 8).unwrap();
    let lr = statistical_independence_check(&ModelSpec::Lrhvm, &design, 20_000, 10, 0.01, 9).unwrap();
    check(
        s.s.abs() > 2.7 && rot.setting_recovery_accuracy == Some(1.0) && lr.measurement_independent,
        format!(
            "S = {:.4} ± {:.4} at N = 10^6, setting recovery {:?}, LRHVM setting-independent {}",
            s.s, s.se_s, rot.setting_recovery_accuracy, lr.measurement_independent
        ),
    )
}

const WINDOW_GRID: [f64; 13] = [
    1e-6, 2e-6, 5e-6, 1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 5e-4, 1e-3, 1e-2, 1.0, 1e3,
];

fn coincidence() -> Outcome {
    let design = Design::standard();
    let n = 200_000;
    let reference = coincidence_chsh_scan(
        &DelayModel::reference(),
        &design,
        n,
        &[REFERENCE_WINDOW, 1e3],
        WindowMode::NearestNeighbor,
        10,
    )
    .unwrap();
    let (shipped, wide) = (&reference[0], &reference[1]);
    let independent = coincidence_chsh_scan(
        &DelayModel::setting_independent(),
        &design,
        n,
        &WINDOW_GRID,
        WindowMode::NearestNeighbor,
        11,
    )
    .unwrap();
    let worst = independent
        .iter()
        .map(|p| (p.s.abs() - 2.0) / p.se)
        .fold(f64::NEG_INFINITY, f64::max);
    let independent_ok = independent.iter().all(|p| p.s.is_finite() && p.s.abs() <= 2.0 + 5.0 * p.se);
    check(
        shipped.s.abs() > 2.2 && wide.s.abs() <= 2.0 + 4.0 * wide.se && independent_ok,
        format!(
            "shipped window S = {:.4} (retained {:.3}), W = 1e3 S = {:.4} ± {:.4}, \
             setting-independent max (|S| − 2)/se = {worst:.2}",
            shipped.s, shipped.retained_fraction, wide.s, wide.se
        ),
    )
}

fn bertrand() -> Outcome {
    let n = 1_000_000;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, v) in ChordVariant::ALL.into_iter().enumerate() {
        let est = hit_probability(&ChordProtocol::unit(v), n, 12 + i as u64).unwrap();
        let p = ratio_to_f64(analytic_probability(v));
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let z = (est.estimate - p) / se;
        ok &= z.abs() <= 4.0;
        parts.push(format!("{} {:.5} (z = {z:.2})", v.name(), est.estimate));
    }
    check(ok, parts.join(", "))
}

fn smearing() -> Outcome {
    let state = singlet_state();
    let pairs = [(0.0, FRAC_PI_4), (0.3, 2.1), (FRAC_PI_2, 3.0 * FRAC_PI_4), (1.0, 1.0)];
    let mut small: f64 = 0.0;
    let mut uniform: f64 = 0.0;
    for &(tx, ty) in &pairs {
        let exact = correlation(&state, tx, ty).unwrap();
        let q = smeared_correlation(
            &AngleSmearing::uniform(tx, 1e-4).unwrap(),
            &AngleSmearing::uniform(ty, 1e-4).unwrap(),
        );
        small = small.max((q.value - exact).abs());
        for delta in [0.05, 0.3, 1.0, 2.0] {
            let q = smeared_correlation(
                &AngleSmearing::uniform(tx, delta).unwrap(),
                &AngleSmearing::uniform(ty, delta).unwrap(),
            );
            let attenuation = (f64::sin(delta) / delta).powi(2);
            uniform = uniform.max((q.value - exact * attenuation).abs());
        }
    }
    check(
        small < 1e-6 && uniform < 1e-8,
        format!("δ = 1e-4 max difference {small:.2e}; uniform attenuation max difference {uniform:.2e}"),
    )
}

fn completeness() -> Outcome {
    let rates = null_calibration(10_000, 500, 0.01, 20_261_018).unwrap();
    let calibrated = rates.iter().all(|r| (0.005..=0.02).contains(&r.rate));
    let listing = rates
        .iter()
        .map(|r| format!("{} {:.3}", r.test, r.rate))
        .collect::<Vec<_>>()
        .join(", ");

    let alt = alternating_series(10_000).unwrap();
    let report = fine_structure(&alt, 20, 0.01).unwrap();
    let lag1 = report.autocorrelation().map(|a| a.values[1]);
    let freq = report.symbol_frequencies.clone();
    let alternating_ok = lag1 == Some(-1.0) && freq == vec![0.5, 0.5] && report.structure_detected;

    let power_reps = 200;
    let mut rejected = 0;
    for rep in 0..power_reps {
        // one run from each source, so the ensemble is a 0.3/0.7 mixture
        let mixed = bernoulli_runs(&[0.3, 0.7], 10_000, 1000 + rep).unwrap();
        let config = PurityConfig {
            seed: rep,
            ..PurityConfig::default()
        };
        if !purity_test(&mixed, &config).unwrap().pure {
            rejected += 1;
        }
    }
    let power = rejected as f64 / power_reps as f64;
    check(
        calibrated && alternating_ok && power > 0.99,
        format!(
            "null rejection rates [{listing}]; alternating lag-1 {lag1:?} with frequencies {freq:?}; \
             mixture power {power:.3} at n = 10^4"
        ),
    )
}

fn run_cli(dir: &Path, workers: usize, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_bell-lab"))
        .args(args)
        .args(["--seed", "17", "--workers", &workers.to_string(), "--out-dir"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)));
    }
    Ok(())
}

fn determinism() -> Outcome {
    let runs: [&[&str]; 11] = [
        &["chsh", "--n", "20000", "--bootstrap", "200"],
        &["chsh", "--model", "rot-chvm", "--n", "5000", "--trace"],
        &["quadruples", "--n", "20000"],
        &["violation-freq", "--n", "500", "--replications", "200"],
        &["coupling", "--n", "20000"],
        &["reshuffle", "--n", "20000"],
        &["coincidence", "--n", "40000", "--events"],
        &["coincidence", "--n", "40000", "--mode", "bins", "--delay", "independent"],
        &["bertrand", "--n", "200000"],
        &["purity", "--runs", "3", "--n", "5000", "--format", "jsonl"],
        &["fine-structure", "--pattern", "periodic", "--flip", "0.1", "--n", "5000"],
    ];
    let root = tempfile::tempdir().expect("temp dir");
    let mut compared = 0;
    for (i, args) in runs.iter().enumerate() {
        let one = root.path().join(format!("{i}-w1"));
        let four = root.path().join(format!("{i}-w4"));
        if let Err(e) = run_cli(&one, 1, args).and_then(|_| run_cli(&four, 4, args)) {
            return check(false, e);
        }
        let mut names: Vec<_> = std::fs::read_dir(&one)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        let other: HashSet<_> = std::fs::read_dir(&four).unwrap().map(|e| e.unwrap().file_name()).collect();
        if names.len() != other.len() {
            return check(false, format!("{args:?}: different file sets"));
        }
        for name in names {
            let a = std::fs::read(one.join(&name)).unwrap();
            let b = std::fs::read(four.join(&name)).map_err(|_| ());
            if b.as_deref() != Ok(&a[..]) {
                return check(false, format!("{args:?}: {} differs between 1 and 4 workers", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    check(true, format!("{compared} output files byte-identical across 1 and 4 workers, 11 invocations"))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let s = Duration::from_secs;
    let criteria: [Criterion; 12] = [
        (1, "singlet correlation", singlet_correlation, Some(s(1))),
        (2, "Tsirelson bound", tsirelson, Some(s(5))),
        (3, "spreadsheet identity", spreadsheet_identity, Some(s(10))),
        (4, "finite-sample violation frequency", violation_fraction, Some(s(60))),
        (5, "reshuffle feasibility", reshuffle, Some(s(60))),
        (6, "hidden-variable model oracles", model_oracles, Some(s(30))),
        (7, "contextual model", contextual_model, Some(s(60))),
        (8, "coincidence loophole", coincidence, Some(s(120))),
        (9, "Bertrand chords", bertrand, Some(s(10))),
        (10, "smearing consistency", smearing, Some(s(5))),
        (11, "completeness-lab calibration", completeness, Some(s(120))),
        (12, "determinism across workers", determinism, None),
    ];
    let mut failed = Vec::new();
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let out = within_budget(out, elapsed, budget);
        let tag = if out.passed { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id:>2} ({name}, {elapsed:.2?}): {}", out.detail);
        if !out.passed {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
