use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use bell_lab::bertrand::{analytic_probability, hit_probability, ChordProtocol, ChordVariant};
use bell_lab::chsh::chsh_combination;
use bell_lab::coincidence::{
    coincidence_chsh_scan, generate_event_streams, DelayModel, DelayShape, Schedule, WindowMode,
    REFERENCE_DELAY_AMPLITUDE, REFERENCE_DELAY_EXPONENT, REFERENCE_EMISSION_RATE,
};
use bell_lab::completeness::{
    alternating_series, bernoulli_runs, fine_structure, homogeneity_guard, periodic_series, purity_test,
    FineStructure, PurityConfig, RunSeries,
};
use bell_lab::experiment::{
    bootstrap_se, chsh_from_pairs, chsh_from_quadruples, coupling_check, run_counterfactual_experiment,
    run_pair_experiments, traced_trials, violation_frequency, CountTable,
};
use bell_lab::io;
use bell_lab::reshuffle::{reshuffle_feasibility, Feasibility, Violation};
use bell_lab::{ChshReport, Design, ModelSpec, SettingPair};
use clap::{Args, Subcommand};
use serde_json::Value;

use crate::emit::{Emitter, Field, Table};
use crate::settings::Resolver;
use crate::{CliError, Context};

const DEFAULT_WINDOWS: [f64; 13] = [
    1e-6, 2e-6, 5e-6, 1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 5e-4, 1e-3, 1e-2, 1.0, 1e3,
];

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Four-sheet CHSH experiment with one setting pair per trial
    Chsh(ChshArgs),
    /// Counterfactual experiment: all four outcomes per trial
    Quadruples(QuadruplesArgs),
    /// Fraction of replicated experiments whose estimate exceeds |S| = 2
    ViolationFreq(ViolationArgs),
    /// Test whether a model is a probabilistic coupling for four sheets
    Coupling(CouplingArgs),
    /// Decide whether four sheets can be rearranged into one quadruple sheet
    Reshuffle(ReshuffleArgs),
    /// CHSH estimate against the coincidence window
    Coincidence(CoincidenceArgs),
    /// Chord hit probability under the three classic chord protocols
    Bertrand(BertrandArgs),
    /// Purity tests for repeated outcome series
    Purity(PurityArgs),
    /// Autocorrelation, periodogram and runs test for one outcome series
    FineStructure(FineStructureArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// quantum, lrhvm, shvm, chvm or rot-chvm
    #[arg(long)]
    model: Option<String>,
    /// a,a',b,b' in radians; a `deg` suffix marks degrees
    #[arg(long, allow_hyphen_values = true)]
    angles: Option<String>,
}

#[derive(Debug, Args)]
pub struct ChshArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Trials per setting pair
    #[arg(long)]
    n: Option<usize>,
    /// Also export hidden values of 4n fair-coin trials
    #[arg(long)]
    trace: bool,
    /// Bootstrap resamples for an extra standard error of S
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QuadruplesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ViolationArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Trials per setting pair in each replication
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CouplingArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Pair sheets to test; simulated from `--source` when absent
    #[arg(long)]
    input: Option<PathBuf>,
    /// Model generating the sheets when no input is given
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Outcome series checked for homogeneity before trusting the verdict
    #[arg(long, num_args = 1..)]
    guard_series: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReshuffleArgs {
    /// Pair sheets, quadruple sheet or count table; simulated when absent
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CoincidenceArgs {
    #[arg(long, allow_hyphen_values = true)]
    angles: Option<String>,
    /// reference, independent or zero
    #[arg(long)]
    delay: Option<String>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    exponent: Option<f64>,
    /// Emissions per second
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    max_delay: Option<f64>,
    /// Emitted pairs
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated window widths in seconds
    #[arg(long)]
    windows: Option<String>,
    /// nearest or bins
    #[arg(long)]
    mode: Option<String>,
    /// Also write the raw detection events
    #[arg(long)]
    events: bool,
}

#[derive(Debug, Args)]
pub struct BertrandArgs {
    /// parallel, endpoints, midpoint or all
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PurityArgs {
    /// `trial,outcome` files, one per run; runs are simulated when absent
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Simulated runs
    #[arg(long)]
    runs: Option<usize>,
    /// Length of each simulated run
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated P(+1) per simulated run
    #[arg(long)]
    bias: Option<String>,
    #[arg(long)]
    block_length: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FineStructureArgs {
    /// `trial,outcome` file; a pattern is simulated when absent
    #[arg(long)]
    input: Option<PathBuf>,
    /// iid, alternating or periodic
    #[arg(long)]
    pattern: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// P(+1) of the iid pattern
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long)]
    period: Option<usize>,
    /// Flip probability applied to the periodic pattern
    #[arg(long)]
    flip: Option<f64>,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

pub fn execute(command: Command, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    match command {
        Command::Chsh(a) => chsh(a, ctx),
        Command::Quadruples(a) => quadruples(a, ctx),
        Command::ViolationFreq(a) => violation_freq(a, ctx),
        Command::Coupling(a) => coupling(a, ctx),
        Command::Reshuffle(a) => reshuffle(a, ctx),
        Command::Coincidence(a) => coincidence(a, ctx),
        Command::Bertrand(a) => bertrand(a, ctx),
        Command::Purity(a) => purity(a, ctx),
        Command::FineStructure(a) => fine(a, ctx),
    }
}

impl Context {
    fn emitter(&self, command: &str, config: Value) -> Result<Emitter, CliError> {
        Emitter::new(&self.out_dir, command, self.seed, &config, self.format)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::file(path, e))
}

fn exact_s(model: &ModelSpec, design: &Design) -> Option<f64> {
    let e: Option<Vec<f64>> = SettingPair::ALL
        .iter()
        .map(|&p| {
            let (x, y) = design.angles(p);
            model.analytic_expectation(x, y)
        })
        .collect();
    e.map(|e| chsh_combination([e[0], e[1], e[2], e[3]]))
}

fn opt(x: Option<f64>) -> Field {
    x.map_or(Field::Empty, Field::Num)
}

fn chsh_table(report: &ChshReport, design: Option<&Design>, model: Option<&ModelSpec>, bootstrap: Option<f64>) -> Table {
    let mut t = Table::new(&[
        "quantity", "theta_x", "theta_y", "n", "estimate", "se", "se_bootstrap", "exact", "violated",
    ]);
    for est in &report.estimates {
        let (tx, ty) = design.map(|d| d.angles(est.pair)).unzip();
        let exact = match (model, tx, ty) {
            (Some(m), Some(x), Some(y)) => m.analytic_expectation(x, y),
            _ => None,
        };
        t.push(vec![
            format!("E({})", est.pair).into(),
            opt(tx),
            opt(ty),
            est.n.into(),
            est.e.into(),
            est.se.into(),
            Field::Empty,
            opt(exact),
            Field::Empty,
        ]);
    }
    let exact = match (model, design) {
        (Some(m), Some(d)) => exact_s(m, d),
        _ => None,
    };
    t.push(vec![
        "S".into(),
        Field::Empty,
        Field::Empty,
        report.estimates.iter().map(|e| e.n).sum::<usize>().into(),
        report.s.into(),
        report.se_s.into(),
        opt(bootstrap),
        opt(exact),
        report.violated.into(),
    ]);
    t
}

fn chsh(a: ChshArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "chsh");
    let model = r.model(a.model.model, "quantum")?;
    let design = r.design(a.model.angles)?;
    let n = r.value("n", a.n, 10_000usize)?;
    let trace = r.value("trace", a.trace.then_some(true), false)?;
    let resamples = r.optional("bootstrap", a.bootstrap)?;
    let mut out = ctx.emitter("chsh", r.finish())?;

    let sheets = run_pair_experiments(&model, &design, n, ctx.seed)?;
    let report = chsh_from_pairs(&sheets)?;
    let boot = resamples.map(|b| bootstrap_se(&sheets, b, ctx.seed)).transpose()?;
    out.report("chsh", &chsh_table(&report, Some(&design), Some(&model), boot))?;
    out.data("sheets.csv", |w| io::write_pair_sheets(w, &sheets))?;
    if trace {
        let rows: Vec<_> = traced_trials(&model, &design, 4 * n, ctx.seed)?
            .into_iter()
            .filter_map(|(i, p, t)| t.trace.map(|h| (i, p, h)))
            .collect();
        out.data("traces.csv", |w| io::write_hidden_traces(w, &rows))?;
    }
    Ok(out.written().to_vec())
}

fn quadruples(a: QuadruplesArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "quadruples");
    let model = r.model(a.model.model, "lrhvm")?;
    let design = r.design(a.model.angles)?;
    let n = r.value("n", a.n, 10_000usize)?;
    let mut out = ctx.emitter("quadruples", r.finish())?;

    let sheet = run_counterfactual_experiment(&model, &design, n, ctx.seed)?;
    let report = chsh_from_quadruples(&sheet)?;
    out.report("chsh", &chsh_table(&report, Some(&design), Some(&model), None))?;
    out.data("quadruples.csv", |w| io::write_quadruple_sheet(w, &sheet))?;
    Ok(out.written().to_vec())
}

fn violation_freq(a: ViolationArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "violation-freq");
    let model = r.model(a.model.model, "lrhvm")?;
    let design = r.design(a.model.angles)?;
    let n = r.value("n", a.n, 1000usize)?;
    let reps = r.value("replications", a.replications, 2000usize)?;
    let mut out = ctx.emitter("violation-freq", r.finish())?;

    let v = violation_frequency(&model, &design, n, reps, ctx.seed)?;
    let mut t = Table::new(&[
        "replications", "violations", "fraction", "ci_low", "ci_high", "mean_S", "mean_se_S", "exact_S",
    ]);
    t.push(vec![
        v.replications.into(),
        v.violations.into(),
        v.fraction.into(),
        v.ci_low.into(),
        v.ci_high.into(),
        v.mean_s.into(),
        v.mean_se_s.into(),
        opt(exact_s(&model, &design)),
    ]);
    out.report("violation-freq", &t)?;
    Ok(out.written().to_vec())
}

/// Union of the observed symbols, widened to ±1 for binary data.
fn alphabet_of(series: &[Vec<i64>]) -> Vec<i64> {
    let mut symbols: Vec<i64> = series.iter().flatten().copied().collect();
    symbols.sort_unstable();
    symbols.dedup();
    if symbols.iter().all(|s| *s == 1 || *s == -1) {
        return vec![-1, 1];
    }
    symbols
}

fn read_series(paths: &[PathBuf]) -> Result<Vec<RunSeries>, CliError> {
    let raw: Vec<Vec<i64>> = paths
        .iter()
        .map(|p| Ok(io::read_outcomes(open(p)?)?))
        .collect::<Result<_, CliError>>()?;
    let alphabet = alphabet_of(&raw);
    raw.into_iter()
        .enumerate()
        .map(|(i, o)| Ok(RunSeries::with_alphabet(i, o, alphabet.clone())?))
        .collect()
}

fn coupling(a: CouplingArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "coupling");
    let model = r.model(a.model.model, "lrhvm")?;
    let design = r.design(a.model.angles)?;
    let alpha = r.value("alpha", a.alpha, 0.01)?;
    let input = r.optional("input", a.input)?;
    let guard_paths: Vec<PathBuf> = if a.guard_series.is_empty() {
        r.value("guard_series", None, Vec::new())?
    } else {
        r.value("guard_series", Some(a.guard_series), Vec::new())?
    };
    let sheets = match &input {
        Some(path) => io::read_pair_sheets(open(path)?)?,
        None => {
            let source = r.value("source", a.source, "quantum".to_string())?;
            let n = r.value("n", a.n, 10_000usize)?;
            let source = Resolver::new(&ctx.file, "coupling").model(Some(source), "quantum")?;
            run_pair_experiments(&source, &design, n, ctx.seed)?
        }
    };
    let mut out = ctx.emitter("coupling", r.finish())?;

    let mut report = coupling_check(&model, &design, &sheets, alpha, ctx.seed)?;
    let guard = if guard_paths.is_empty() {
        None
    } else {
        let g = homogeneity_guard(&read_series(&guard_paths)?, alpha)?;
        g.annotate(&mut report);
        Some(g)
    };
    let mut t = Table::new(&["equality", "pair", "observed", "reference", "z", "p_value", "failed"]);
    for e in &report.tests {
        t.push(vec![
            e.equality.clone().into(),
            e.pair.to_string().into(),
            e.observed.into(),
            e.reference.into(),
            e.z.into(),
            e.p_value.into(),
            e.failed.into(),
        ]);
    }
    out.report("coupling", &t)?;
    let mut verdict = format!(
        "alpha = {}\nbonferroni tests = {}\ncoupling = {}\n",
        report.alpha,
        report.tests.len(),
        if report.passed { "not rejected" } else { "rejected" }
    );
    if let Some(g) = guard {
        verdict += &format!(
            "homogeneity guard: chi2 = {} df = {} p = {} ({})\n",
            g.statistic,
            g.df,
            g.p_value,
            if g.passed { "passed" } else { "failed" }
        );
    }
    if let Some(u) = &report.unreliable {
        verdict += &format!("unreliable: {u}\n");
    }
    out.text("verdict.txt", &verdict)?;
    Ok(out.written().to_vec())
}

fn first_data_line(path: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("")
        .to_string())
}

fn load_table(path: &Path) -> Result<CountTable, CliError> {
    let header = first_data_line(path)?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields == io::PAIR_HEADER {
        Ok(CountTable::from_sheets(&io::read_pair_sheets(open(path)?)?)?)
    } else if fields == io::QUADRUPLE_HEADER {
        Ok(CountTable::from_quadruples(&io::read_quadruple_sheet(open(path)?)?))
    } else if fields == io::COUNT_HEADER {
        Ok(io::read_count_table(open(path)?)?)
    } else {
        Err(bell_lab::Error::Input(format!(
            "{}: unrecognised header {header:?}; expected pair sheets, a quadruple sheet or a count table",
            path.display()
        ))
        .into())
    }
}

fn describe(v: &Violation) -> String {
    match v {
        Violation::Marginal {
            setting,
            first,
            second,
            first_count,
            second_count,
        } => format!(
            "setting {setting} has {first_count} +1 outcomes in {first} but {second_count} in {second}"
        ),
        Violation::ChshCount {
            flipped,
            sign,
            value,
            bound,
        } => format!("CHSH count with {flipped} negated (sign {sign}) is {value} > {bound}"),
        Violation::IntegerGap => "count inequalities hold but no integer arrangement exists".into(),
    }
}

fn reshuffle(a: ReshuffleArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "reshuffle");
    let input = r.optional("input", a.input)?;
    let table = match &input {
        Some(path) => load_table(path)?,
        None => {
            let model = r.model(a.model.model, "quantum")?;
            let design = r.design(a.model.angles)?;
            let n = r.value("n", a.n, 10_000usize)?;
            CountTable::from_sheets(&run_pair_experiments(&model, &design, n, ctx.seed)?)?
        }
    };
    let mut out = ctx.emitter("reshuffle", r.finish())?;

    let report = reshuffle_feasibility(&table)?;
    let mut t = Table::new(&["n", "outcome", "reason", "max_chsh_slack"]);
    let (outcome, reason) = match &report.outcome {
        Feasibility::Feasible { .. } => ("feasible", String::new()),
        Feasibility::Infeasible { violation } => ("infeasible", describe(violation)),
    };
    t.push(vec![report.n.into(), outcome.into(), reason.into(), report.max_chsh_slack.into()]);
    out.report("reshuffle", &t)?;
    out.data("counts.csv", |w| io::write_count_table(w, &table))?;
    if let Feasibility::Feasible { witness } = &report.outcome {
        out.data("witness.csv", |w| io::write_quadruple_sheet(w, &witness.to_sheet()))?;
    }
    eprintln!("{outcome}");
    Ok(out.written().to_vec())
}

fn parse_mode(s: &str) -> Result<WindowMode, CliError> {
    match s {
        "nearest" | "nearest-neighbor" | "nearest-neighbour" => Ok(WindowMode::NearestNeighbor),
        "bins" | "fixed" | "fixed-bins" => Ok(WindowMode::FixedBins),
        other => Err(CliError::Usage(format!("unknown window mode {other:?} (expected nearest or bins)"))),
    }
}

fn coincidence(a: CoincidenceArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "coincidence");
    let design = r.design(a.angles)?;
    let delay = r.value("delay", a.delay, "reference".to_string())?;
    let rate = r.value("rate", a.rate, REFERENCE_EMISSION_RATE)?;
    let amplitude = r.value("amplitude", a.amplitude, REFERENCE_DELAY_AMPLITUDE)?;
    let shape = match delay.as_str() {
        "reference" | "setting-dependent" => DelayShape::SettingDependent {
            amplitude,
            exponent: r.value("exponent", a.exponent, REFERENCE_DELAY_EXPONENT)?,
        },
        "independent" | "setting-independent" => DelayShape::SettingIndependent { amplitude },
        "zero" | "none" => DelayShape::Zero,
        other => {
            return Err(CliError::Usage(format!(
                "unknown delay model {other:?} (expected reference, independent or zero)"
            )))
        }
    };
    let default_max = if shape == DelayShape::Zero { 0.0 } else { amplitude };
    let max_delay = r.value("max_delay", a.max_delay, default_max)?;
    let model = DelayModel::new(rate, shape, max_delay)?;
    let n = r.value("n", a.n, 200_000usize)?;
    let windows = r.numbers("windows", a.windows, &DEFAULT_WINDOWS)?;
    let mode = parse_mode(&r.value("mode", a.mode, "nearest".to_string())?)?;
    let events = r.value("events", a.events.then_some(true), false)?;
    let mut out = ctx.emitter("coincidence", r.finish())?;

    let curve = coincidence_chsh_scan(&model, &design, n, &windows, mode, ctx.seed)?;
    let mut t = Table::new(&["window", "retained_fraction", "S", "se"]);
    let mut discards = String::new();
    for p in &curve {
        t.push(vec![p.window.into(), p.retained_fraction.into(), p.s.into(), p.se.into()]);
        discards += &format!("window = {}\n{}\n", p.window, p.discards.to_text());
    }
    out.report("curve", &t)?;
    out.text("discards.txt", &discards)?;
    if events {
        let streams = generate_event_streams(&model, &design, &Schedule::Random, n, ctx.seed)?;
        out.data("events.csv", |w| io::write_event_streams(w, &streams))?;
    }
    Ok(out.written().to_vec())
}

fn bertrand(a: BertrandArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "bertrand");
    let protocol = r.value("protocol", a.protocol, "all".to_string())?;
    let n = r.value("n", a.n, 1_000_000u64)?;
    let radius = r.value("radius", a.radius, 1.0)?;
    let variants = if protocol == "all" {
        ChordVariant::ALL.to_vec()
    } else {
        vec![protocol.parse::<ChordVariant>()?]
    };
    let mut out = ctx.emitter("bertrand", r.finish())?;

    let mut t = Table::new(&["protocol", "n", "estimate", "se", "exact"]);
    for v in variants {
        let est = hit_probability(&ChordProtocol::new(v, radius)?, n, ctx.seed)?;
        let exact = analytic_probability(v);
        t.push(vec![
            v.name().into(),
            est.n.into(),
            est.estimate.into(),
            est.se.into(),
            format!("{}/{}", exact.numer(), exact.denom()).into(),
        ]);
    }
    out.report("bertrand", &t)?;
    Ok(out.written().to_vec())
}

fn purity(a: PurityArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "purity");
    let inputs: Vec<PathBuf> = if a.input.is_empty() {
        r.value("input", None, Vec::new())?
    } else {
        r.value("input", Some(a.input), Vec::new())?
    };
    let runs = if inputs.is_empty() {
        let count = r.value("runs", a.runs, 4usize)?;
        let n = r.value("n", a.n, 10_000usize)?;
        let mut bias = r.numbers("bias", a.bias, &[0.5])?;
        if bias.len() == 1 {
            bias = vec![bias[0]; count];
        } else if bias.len() != count {
            return Err(CliError::Usage(format!("{} biases given for {count} runs", bias.len())));
        }
        bernoulli_runs(&bias, n, ctx.seed)?
    } else {
        read_series(&inputs)?
    };
    let config = PurityConfig {
        block_length: r.value("block_length", a.block_length, 2usize)?,
        resamples: r.value("resamples", a.resamples, 20usize)?,
        alpha: r.value("alpha", a.alpha, 0.01)?,
        seed: ctx.seed,
    };
    let mut out = ctx.emitter("purity", r.finish())?;

    let report = purity_test(&runs, &config)?;
    let guard = homogeneity_guard(&runs, config.alpha)?;
    let mut t = Table::new(&["test", "statistic", "df", "p_value", "rejected"]);
    let level = config.alpha / report.tests.len() as f64;
    for test in &report.tests {
        t.push(vec![
            test.name.clone().into(),
            test.statistic.into(),
            test.df.into(),
            test.p_value.into(),
            (test.p_value < level).into(),
        ]);
    }
    t.push(vec![
        "homogeneity-guard".into(),
        guard.statistic.into(),
        guard.df.into(),
        guard.p_value.into(),
        (!guard.passed).into(),
    ]);
    t.push(vec!["pure".into(), Field::Empty, Field::Empty, Field::Empty, (!report.pure).into()]);
    out.report("purity", &t)?;
    let mut s = Table::new(&["run_id", "size", "start", "p_value", "combined_p"]);
    for e in &report.subensembles {
        for (start, p) in e.starts.iter().zip(&e.p_values) {
            s.push(vec![e.run_id.into(), e.size.into(), (*start).into(), (*p).into(), e.combined_p.into()]);
        }
    }
    out.report("subensembles", &s)?;
    Ok(out.written().to_vec())
}

fn fine(a: FineStructureArgs, ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut r = Resolver::new(&ctx.file, "fine-structure");
    let input = r.optional("input", a.input)?;
    let series = match &input {
        Some(path) => read_series(std::slice::from_ref(path))?.remove(0),
        None => {
            let pattern = r.value("pattern", a.pattern, "iid".to_string())?;
            let n = r.value("n", a.n, 10_000usize)?;
            match pattern.as_str() {
                "iid" => {
                    let bias = r.value("bias", a.bias, 0.5)?;
                    bernoulli_runs(&[bias], n, ctx.seed)?.remove(0)
                }
                "alternating" => alternating_series(n)?,
                "periodic" => {
                    let period = r.value("period", a.period, 8usize)?;
                    let flip = r.value("flip", a.flip, 0.0)?;
                    periodic_series(n, period, flip, ctx.seed)?
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown pattern {other:?} (expected iid, alternating or periodic)"
                    )))
                }
            }
        }
    };
    let max_lag = r.value("max_lag", a.max_lag, 20usize)?;
    let alpha = r.value("alpha", a.alpha, 0.01)?;
    let mut out = ctx.emitter("fine-structure", r.finish())?;

    let report = fine_structure(&series, max_lag, alpha)?;
    let mut t = Table::new(&["quantity", "value"]);
    let mut row = |k: &str, v: Field| t.push(vec![k.to_string().into(), v]);
    row("n", report.n.into());
    row("max_lag", report.max_lag.into());
    row("alpha", report.alpha.into());
    for (symbol, f) in series.alphabet.iter().zip(&report.symbol_frequencies) {
        row(&format!("frequency({symbol})"), (*f).into());
    }
    match &report.result {
        FineStructure::Analysed {
            autocorrelation,
            periodogram,
            runs,
        } => {
            row("acf_lag1", opt(autocorrelation.values.get(1).copied()));
            row("acf_band", autocorrelation.band.into());
            let flagged: Vec<String> = autocorrelation.flagged_lags.iter().map(|l| l.to_string()).collect();
            row("acf_flagged_lags", flagged.join(" ").into());
            row("ljung_box", autocorrelation.ljung_box.into());
            row("ljung_box_p", autocorrelation.ljung_box_p.into());
            row("peak_frequency", periodogram.peak_frequency.into());
            row("peak", periodogram.peak.into());
            row("peak_threshold", periodogram.threshold.into());
            row("periodogram_p", periodogram.max_p.into());
            row("runs", runs.runs.into());
            row("runs_z", runs.z.into());
            row("runs_p", runs.p_value.into());
        }
        FineStructure::Degenerate { reason } => row("degenerate", reason.clone().into()),
    }
    row("structure_detected", report.structure_detected.into());
    out.report("fine-structure", &t)?;
    if let Some(acf) = report.autocorrelation() {
        let mut t = Table::new(&["lag", "acf", "band"]);
        for (k, v) in acf.values.iter().enumerate() {
            t.push(vec![k.into(), (*v).into(), acf.band.into()]);
        }
        out.report("acf", &t)?;
    }
    if let Some(pg) = report.periodogram() {
        let mut t = Table::new(&["frequency", "power"]);
        for (f, p) in &pg.ordinates {
            t.push(vec![(*f).into(), (*p).into()]);
        }
        out.report("periodogram", &t)?;
    }
    Ok(out.written().to_vec())
}
