//! Generative hidden-variable models and the quantum sampler.
//!
//! Reference instances, each with a closed-form correlation:
//!
//! * local realistic (LRHVM): `A = sign cos(θ − λ)`, `B = −sign cos(θ − λ)`,
//!   λ uniform on `[0, 2π)`; correlation is the saw-tooth `−1 + 2|θ_xy|/π`.
//! * stochastic (SHVM): `P(+|θ, λ) = cos²(θ − λ)` on arm A and `sin²(θ − λ)` on
//!   arm B, outcomes independent given λ; correlation `−cos(2θ_xy)/2`.
//! * rotational contextual (ROT_CHVM): shared λ, instrument variables
//!   `μ_x = (θ_x, u, v)` and `μ_y = (θ_y, f(u, v, cos θ_xy))`;
//!   `a = sign(u − ½)`, `b = −a` if `v < (1 + cos θ_xy)/2` else `a`. The
//!   correlation is `−cos θ_xy`. This kernel is our own construction.
//!
//! `sign(0)` is taken as `+1`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::chsh::{Design, SettingContext, SettingPair};
use crate::error::{Error, Result};
use crate::quantum::{joint_probabilities, singlet_state, QuantumState};
use crate::rng::{Stream, Substreams};
use crate::stats::contingency_chi_square;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Lrhvm,
    Shvm,
    Chvm,
    RotChvm,
    Quantum,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Lrhvm => "lrhvm",
            Family::Shvm => "shvm",
            Family::Chvm => "chvm",
            Family::RotChvm => "rot-chvm",
            Family::Quantum => "quantum",
        }
    }
}

/// Hidden values behind one trial. Every instrument vector starts with the
/// instrument's own setting angle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HiddenTrace {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub a: i8,
    pub b: i8,
    pub trace: Option<HiddenTrace>,
}

pub fn sign(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// Deterministic outcome of the reference local realistic model.
pub fn lrhvm_outcomes(lambda: f64, theta: f64, arm: Arm) -> i8 {
    let s = sign((theta - lambda).cos());
    match arm {
        Arm::A => s,
        Arm::B => -s,
    }
}

/// Probability of `+1` in the reference stochastic model (Malus law).
pub fn shvm_outcome_probability(lambda: f64, theta: f64, arm: Arm) -> f64 {
    let c = (theta - lambda).cos();
    match arm {
        Arm::A => c * c,
        Arm::B => 1.0 - c * c,
    }
}

/// Saw-tooth correlation of the reference local realistic model.
pub fn sawtooth(theta_xy: f64) -> f64 {
    let mut t = theta_xy.abs() % TAU;
    if t > PI {
        t = TAU - t;
    }
    -1.0 + 2.0 * t / PI
}

/// A finite joint distribution of two real variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteJoint {
    pub points: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl DiscreteJoint {
    pub fn point(a: f64, b: f64) -> Self {
        DiscreteJoint {
            points: vec![(a, b)],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.weights.len() {
            return Err(Error::config(
                "discrete distribution needs one weight per support point",
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("distribution weights must be finite and >= 0"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "distribution weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut Stream) -> (f64, f64) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *p;
            }
        }
        *self.points.last().expect("validated non-empty")
    }
}

/// Source distribution `P(λ₁, λ₂)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SourceDistribution {
    /// `λ₁ = λ₂ = λ`, λ uniform on `[0, 2π)`.
    SharedUniform,
    /// Independent uniforms on `[0, 2π)`.
    IndependentUniform,
    Discrete(DiscreteJoint),
}

impl SourceDistribution {
    fn validate(&self) -> Result<()> {
        match self {
            SourceDistribution::Discrete(d) => d.validate(),
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut Stream) -> (f64, f64) {
        match self {
            SourceDistribution::SharedUniform => {
                let l = rng.random::<f64>() * TAU;
                (l, l)
            }
            SourceDistribution::IndependentUniform => {
                (rng.random::<f64>() * TAU, rng.random::<f64>() * TAU)
            }
            SourceDistribution::Discrete(d) => d.sample(rng),
        }
    }
}

/// General contextual model: setting-independent source variables plus
/// instrument variables drawn from a per-setting-pair distribution.
/// Outcomes are `A' = sign cos(θ_x − λ₁ − μ_x)`, `B' = −sign cos(θ_y − λ₂ − μ_y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chvm {
    pub source: SourceDistribution,
    /// `P_xy(μ_x, μ_y)` in [`SettingPair::ALL`] order.
    pub instruments: [DiscreteJoint; 4],
}

impl Chvm {
    /// Instruments fixed at zero for every pair: reduces to the local
    /// realistic model.
    pub fn degenerate() -> Self {
        Chvm {
            source: SourceDistribution::SharedUniform,
            instruments: std::array::from_fn(|_| DiscreteJoint::point(0.0, 0.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.instruments.iter().try_for_each(DiscreteJoint::validate)
    }
}

/// Instrument kernel `μ_y = f(μ_x, cos θ_xy)` acting on `((u, v), c)`.
pub type RotKernelFn = Arc<dyn Fn([f64; 2], f64) -> [f64; 3] + Send + Sync>;

#[derive(Clone, Default)]
pub enum RotKernel {
    /// `f((u, v), c) = (u, v, c)`.
    #[default]
    Reference,
    Custom(RotKernelFn),
}

impl fmt::Debug for RotKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotKernel::Reference => f.write_str("Reference"),
            RotKernel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RotChvm {
    pub kernel: RotKernel,
}

impl RotChvm {
    fn apply(&self, uv: [f64; 2], c: f64) -> Result<[f64; 3]> {
        let out = match &self.kernel {
            RotKernel::Reference => [uv[0], uv[1], c],
            RotKernel::Custom(f) => f(uv, c),
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(out[0]) || !unit(out[1]) || !(-1.0..=1.0).contains(&out[2]) {
            return Err(Error::config(format!(
                "rotational kernel returned {out:?}, outside [0,1]x[0,1]x[-1,1]"
            )));
        }
        Ok(out)
    }
}

/// A generative model for one EPR-B trial.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Lrhvm,
    Shvm,
    Chvm(Chvm),
    RotChvm(RotChvm),
    Quantum(QuantumState),
}

impl ModelSpec {
    pub fn quantum_singlet() -> Self {
        ModelSpec::Quantum(singlet_state())
    }

    pub fn rot_chvm() -> Self {
        ModelSpec::RotChvm(RotChvm::default())
    }

    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Lrhvm => Family::Lrhvm,
            ModelSpec::Shvm => Family::Shvm,
            ModelSpec::Chvm(_) => Family::Chvm,
            ModelSpec::RotChvm(_) => Family::RotChvm,
            ModelSpec::Quantum(_) => Family::Quantum,
        }
    }

    /// Only the local realistic family assigns values to all four settings at once.
    pub fn counterfactually_definite(&self) -> bool {
        matches!(self, ModelSpec::Lrhvm)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Chvm(c) => c.validate(),
            ModelSpec::Quantum(s) if s.dim() != 4 => {
                Err(Error::config("quantum model needs a two-qubit state"))
            }
            _ => Ok(()),
        }
    }

    /// Closed-form correlation for reference instances, `None` otherwise.
    pub fn analytic_expectation(&self, theta_x: f64, theta_y: f64) -> Option<f64> {
        let d = theta_x - theta_y;
        match self {
            ModelSpec::Lrhvm => Some(sawtooth(d)),
            ModelSpec::Shvm => Some(-(2.0 * d).cos() / 2.0),
            ModelSpec::RotChvm(RotChvm {
                kernel: RotKernel::Reference,
            }) => Some(-d.cos()),
            ModelSpec::Quantum(s) => crate::quantum::correlation(s, theta_x, theta_y).ok(),
            _ => None,
        }
    }

    /// Precomputes whatever the model needs for one setting pair.
    pub fn prepare(&self, ctx: SettingContext) -> Result<PreparedTrial<'_>> {
        self.validate()?;
        let quantum = match self {
            ModelSpec::Quantum(state) => {
                let mut t = joint_probabilities(state, ctx.theta_x, ctx.theta_y)?;
                for v in t.iter_mut().flatten() {
                    if *v < 1e-15 {
                        *v = 0.0;
                    }
                }
                Some(t)
            }
            _ => None,
        };
        Ok(PreparedTrial {
            model: self,
            ctx,
            quantum,
        })
    }

    pub fn sample_trial(
        &self,
        ctx: SettingContext,
        rng: &mut Stream,
        trace: bool,
    ) -> Result<TrialOutcome> {
        self.prepare(ctx)?.sample(rng, trace)
    }
}

/// A model bound to one setting pair.
#[derive(Debug, Clone)]
pub struct PreparedTrial<'a> {
    model: &'a ModelSpec,
    ctx: SettingContext,
    quantum: Option<[[f64; 2]; 2]>,
}

impl PreparedTrial<'_> {
    pub fn sample(&self, rng: &mut Stream, trace: bool) -> Result<TrialOutcome> {
        let SettingContext {
            theta_x, theta_y, ..
        } = self.ctx;
        let out = match self.model {
            ModelSpec::Lrhvm => {
                let l = rng.random::<f64>() * TAU;
                TrialOutcome {
                    a: lrhvm_outcomes(l, theta_x, Arm::A),
                    b: lrhvm_outcomes(l, theta_y, Arm::B),
                    trace: trace.then(|| HiddenTrace {
                        lambda1: l,
                        lambda2: l,
                        mu_x: vec![],
                        mu_y: vec![],
                    }),
                }
            }
            ModelSpec::Shvm => {
                let l = rng.random::<f64>() * TAU;
                let pa = shvm_outcome_probability(l, theta_x, Arm::A);
                let pb = shvm_outcome_probability(l, theta_y, Arm::B);
                let a = if rng.random::<f64>() < pa { 1 } else { -1 };
                let b = if rng.random::<f64>() < pb { 1 } else { -1 };
                TrialOutcome {
                    a,
                    b,
                    trace: trace.then(|| HiddenTrace {
                        lambda1: l,
                        lambda2: l,
                        mu_x: vec![],
                        mu_y: vec![],
                    }),
                }
            }
            ModelSpec::Chvm(c) => chvm_sample(c, self.ctx, rng, trace),
            ModelSpec::RotChvm(r) => rot_sample(r, self.ctx, rng, trace)?,
            ModelSpec::Quantum(_) => {
                let t = self.quantum.expect("prepared quantum table");
                let u: f64 = rng.random();
                let (a, b) = if u < t[0][0] {
                    (1, 1)
                } else if u < t[0][0] + t[0][1] {
                    (1, -1)
                } else if u < t[0][0] + t[0][1] + t[1][0] {
                    (-1, 1)
                } else {
                    (-1, -1)
                };
                TrialOutcome { a, b, trace: None }
            }
        };
        Ok(out)
    }
}

fn chvm_sample(c: &Chvm, ctx: SettingContext, rng: &mut Stream, trace: bool) -> TrialOutcome {
    let (l1, l2) = c.source.sample(rng);
    let (mx, my) = c.instruments[ctx.pair.index()].sample(rng);
    TrialOutcome {
        a: sign((ctx.theta_x - l1 - mx).cos()),
        b: -sign((ctx.theta_y - l2 - my).cos()),
        trace: trace.then(|| HiddenTrace {
            lambda1: l1,
            lambda2: l2,
            mu_x: vec![ctx.theta_x, mx],
            mu_y: vec![ctx.theta_y, my],
        }),
    }
}

fn rot_sample(
    r: &RotChvm,
    ctx: SettingContext,
    rng: &mut Stream,
    trace: bool,
) -> Result<TrialOutcome> {
    let lambda = rng.random::<f64>() * TAU;
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let c = (ctx.theta_x - ctx.theta_y).cos();
    let [uy, vy, cy] = r.apply([u, v], c)?;
    // each outcome reads only its own instrument state
    let a = sign(u - 0.5);
    let ay = sign(uy - 0.5);
    let b = if vy < 0.5 * (1.0 + cy) { -ay } else { ay };
    Ok(TrialOutcome {
        a,
        b,
        trace: trace.then(|| HiddenTrace {
            lambda1: lambda,
            lambda2: lambda,
            mu_x: vec![ctx.theta_x, u, v],
            mu_y: vec![ctx.theta_y, uy, vy, cy],
        }),
    })
}

/// One contextual trial (general instance).
pub fn chvm_trial(
    spec: &ModelSpec,
    ctx: SettingContext,
    rng: &mut Stream,
) -> Result<TrialOutcome> {
    match spec {
        ModelSpec::Chvm(c) => {
            c.validate()?;
            Ok(chvm_sample(c, ctx, rng, true))
        }
        other => Err(Error::Contract(format!(
            "chvm_trial needs a chvm model, got {}",
            other.family().name()
        ))),
    }
}

/// One rotationally symmetric contextual trial.
pub fn rotational_chvm_trial(
    spec: &ModelSpec,
    ctx: SettingContext,
    rng: &mut Stream,
) -> Result<TrialOutcome> {
    match spec {
        ModelSpec::RotChvm(r) => rot_sample(r, ctx, rng, true),
        other => Err(Error::Contract(format!(
            "rotational_chvm_trial needs a rot-chvm model, got {}",
            other.family().name()
        ))),
    }
}

/// Dependence of one hidden variable on the setting pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableDivergence {
    pub variable: String,
    pub chi_square: f64,
    pub df: usize,
    pub p_value: f64,
    /// Largest total-variation distance between two pairs' binned histograms.
    pub max_tv_distance: f64,
    pub setting_dependent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceReport {
    pub family: Family,
    pub n_per_pair: usize,
    pub bins: usize,
    pub alpha: f64,
    pub variables: Vec<VariableDivergence>,
    /// `P(λ | x, y) = P(λ)` not rejected for any source variable.
    pub measurement_independent: bool,
    /// Fraction of trials whose setting pair is recovered from the instrument
    /// descriptors in `(μ_x, μ_y)`; `None` when the model has no instrument variables.
    pub setting_recovery_accuracy: Option<f64>,
}

/// Samples `n_per_pair` traced trials for each setting pair and tests whether
/// each hidden variable's distribution depends on the pair.
pub fn statistical_independence_check(
    spec: &ModelSpec,
    design: &Design,
    n_per_pair: usize,
    bins: usize,
    alpha: f64,
    seed: u64,
) -> Result<IndependenceReport> {
    let bins = bins.max(2);
    let required = 5 * bins * 4;
    if n_per_pair < required {
        return Err(Error::statistical(
            format!("{n_per_pair} trials per setting pair is too few for {bins} bins"),
            required,
        ));
    }
    if matches!(spec, ModelSpec::Quantum(_)) {
        return Err(Error::Contract(
            "the quantum model exposes no hidden trace".into(),
        ));
    }
    let streams = Substreams::new(seed);
    let mut traces: Vec<Vec<HiddenTrace>> = Vec::with_capacity(4);
    for pair in SettingPair::ALL {
        let prepared = spec.prepare(design.context(pair))?;
        let mut rng = streams.stream(0x1D, pair.index() as u64);
        let mut v = Vec::with_capacity(n_per_pair);
        for _ in 0..n_per_pair {
            let t = prepared.sample(&mut rng, true)?;
            v.push(t.trace.expect("trace requested"));
        }
        traces.push(v);
    }

    let mut variables = Vec::new();
    let mut test = |name: String, get: &dyn Fn(&HiddenTrace) -> Option<f64>| {
        let per_pair: Vec<Vec<f64>> = traces
            .iter()
            .map(|ts| ts.iter().filter_map(get).collect())
            .collect();
        if per_pair.iter().any(|v| v.is_empty()) {
            return;
        }
        variables.push(divergence(name, &per_pair, bins, alpha));
    };
    test("lambda1".into(), &|t| Some(t.lambda1));
    test("lambda2".into(), &|t| Some(t.lambda2));
    let mx = traces[0][0].mu_x.len();
    let my = traces[0][0].mu_y.len();
    for k in 0..mx {
        test(format!("mu_x[{k}]"), &|t| t.mu_x.get(k).copied());
    }
    for k in 0..my {
        test(format!("mu_y[{k}]"), &|t| t.mu_y.get(k).copied());
    }
    let measurement_independent = variables
        .iter()
        .filter(|v| v.variable.starts_with("lambda"))
        .all(|v| !v.setting_dependent);

    let setting_recovery_accuracy = (mx > 0 && my > 0).then(|| {
        // descriptor = instrument angles; majority vote per descriptor
        let mut groups: std::collections::BTreeMap<(u64, u64), [usize; 4]> = Default::default();
        for (i, ts) in traces.iter().enumerate() {
            for t in ts {
                groups.entry((t.mu_x[0].to_bits(), t.mu_y[0].to_bits())).or_default()[i] += 1;
            }
        }
        let correct: usize = groups.values().map(|c| *c.iter().max().unwrap()).sum();
        correct as f64 / (4 * n_per_pair) as f64
    });

    Ok(IndependenceReport {
        family: spec.family(),
        n_per_pair,
        bins,
        alpha,
        variables,
        measurement_independent,
        setting_recovery_accuracy,
    })
}

fn divergence(variable: String, per_pair: &[Vec<f64>], bins: usize, alpha: f64) -> VariableDivergence {
    let lo = per_pair.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = per_pair.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    let hist: Vec<Vec<u64>> = per_pair
        .iter()
        .map(|vals| {
            let mut h = vec![0u64; bins];
            for &x in vals {
                let b = if width > 0.0 {
                    (((x - lo) / width) * bins as f64) as usize
                } else {
                    0
                };
                h[b.min(bins - 1)] += 1;
            }
            h
        })
        .collect();
    let (chi_square, df, p_value) = contingency_chi_square(&hist);
    let mut max_tv: f64 = 0.0;
    for i in 0..hist.len() {
        for j in (i + 1)..hist.len() {
            let (ni, nj) = (per_pair[i].len() as f64, per_pair[j].len() as f64);
            let tv: f64 = hist[i]
                .iter()
                .zip(&hist[j])
                .map(|(&a, &b)| (a as f64 / ni - b as f64 / nj).abs())
                .sum::<f64>()
                * 0.5;
            max_tv = max_tv.max(tv);
        }
    }
    VariableDivergence {
        variable,
        chi_square,
        df,
        p_value,
        max_tv_distance: max_tv,
        setting_dependent: p_value < alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    fn ctx(tx: f64, ty: f64) -> SettingContext {
        SettingContext {
            pair: SettingPair::XY,
            theta_x: tx,
            theta_y: ty,
        }
    }

    fn mc_mean(spec: &ModelSpec, tx: f64, ty: f64, n: usize, seed: u64) -> f64 {
        let p = spec.prepare(ctx(tx, ty)).unwrap();
        let mut rng = Substreams::new(seed).stream(9, 0);
        let sum: i64 = (0..n)
            .map(|_| {
                let t = p.sample(&mut rng, false).unwrap();
                i64::from(t.a * t.b)
            })
            .sum();
        sum as f64 / n as f64
    }

    /// Oracle for the saw-tooth: average of the sign products over a fine
    /// midpoint grid of λ.
    fn sawtooth_grid_oracle(tx: f64, ty: f64) -> f64 {
        let m = 200_000;
        let s: i64 = (0..m)
            .map(|k| {
                let l = (k as f64 + 0.5) * TAU / m as f64;
                i64::from(lrhvm_outcomes(l, tx, Arm::A) * lrhvm_outcomes(l, ty, Arm::B))
            })
            .sum();
        s as f64 / m as f64
    }

    #[test]
    fn lrhvm_examples() {
        assert_eq!(lrhvm_outcomes(0.0, 0.0, Arm::A), 1);
        assert_eq!(lrhvm_outcomes(0.0, 0.0, Arm::A) * lrhvm_outcomes(0.0, 0.0, Arm::B), -1);
        // cos(π/2 − 0) rounds to a tiny positive value; exact zero → +1
        assert_eq!(sign(0.0), 1);
        for &(tx, ty) in &[(0.0, 0.3), (1.0, -1.0), (0.2, 2.9), (5.0, 0.1)] {
            assert_abs_diff_eq!(sawtooth(tx - ty), sawtooth_grid_oracle(tx, ty), epsilon = 1e-4);
        }
        assert_abs_diff_eq!(sawtooth(FRAC_PI_2), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn shvm_examples() {
        assert_abs_diff_eq!(shvm_outcome_probability(0.4, 0.4, Arm::A), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(shvm_outcome_probability(0.4, 0.4, Arm::B), 0.0, epsilon = 1e-15);
        assert_eq!(ModelSpec::Shvm.analytic_expectation(0.0, 0.0), Some(-0.5));
        // quadrature oracle of ∫ cos2(θx−λ)·(−cos2(θy−λ)) dλ/2π
        let (tx, ty) = (0.3, 1.1);
        let m = 100_000;
        let q: f64 = (0..m)
            .map(|k| {
                let l = (k as f64 + 0.5) * TAU / m as f64;
                (2.0 * (tx - l)).cos() * -(2.0 * (ty - l)).cos()
            })
            .sum::<f64>()
            / m as f64;
        assert_abs_diff_eq!(ModelSpec::Shvm.analytic_expectation(tx, ty).unwrap(), q, epsilon = 1e-10);
    }

    #[test]
    fn analytic_values() {
        assert_abs_diff_eq!(ModelSpec::Lrhvm.analytic_expectation(FRAC_PI_2, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            ModelSpec::rot_chvm().analytic_expectation(FRAC_PI_3, 0.0).unwrap(),
            -0.5,
            epsilon = 1e-15
        );
        assert_eq!(ModelSpec::Chvm(Chvm::degenerate()).analytic_expectation(0.0, 0.0), None);
        let custom = ModelSpec::RotChvm(RotChvm {
            kernel: RotKernel::Custom(Arc::new(|uv, c| [uv[0], uv[1], c])),
        });
        assert_eq!(custom.analytic_expectation(0.0, 0.0), None);
    }

    #[test]
    fn monte_carlo_matches_closed_forms() {
        let n = 100_000;
        let tol = 4.0 / (n as f64).sqrt();
        let models = [ModelSpec::Lrhvm, ModelSpec::Shvm, ModelSpec::rot_chvm()];
        for (mi, m) in models.iter().enumerate() {
            for (k, &(tx, ty)) in [(0.0, 0.7), (1.3, 0.2), (2.0, -1.5)].iter().enumerate() {
                let e = mc_mean(m, tx, ty, n, (mi * 10 + k) as u64);
                let exact = m.analytic_expectation(tx, ty).unwrap();
                assert!((e - exact).abs() < tol, "{:?} {tx} {ty}: {e} vs {exact}", m.family());
            }
        }
    }

    #[test]
    fn rotational_kernel_limits() {
        let spec = ModelSpec::rot_chvm();
        let mut rng = Substreams::new(5).stream(0, 0);
        for _ in 0..1000 {
            let t = rotational_chvm_trial(&spec, ctx(0.4, 0.4), &mut rng).unwrap();
            assert_eq!(t.b, -t.a);
            let t = rotational_chvm_trial(&spec, ctx(0.4 + PI, 0.4), &mut rng).unwrap();
            assert_eq!(t.b, t.a);
            let tr = t.trace.unwrap();
            assert_eq!(tr.lambda1, tr.lambda2);
            assert_eq!(tr.mu_y[1], tr.mu_x[1]);
        }
        let e = mc_mean(&spec, FRAC_PI_2, 0.0, 1_000_000, 77);
        assert!(e.abs() < 4.0 / 1000.0);
    }

    #[test]
    fn rotational_kernel_domain_checked() {
        let bad = ModelSpec::RotChvm(RotChvm {
            kernel: RotKernel::Custom(Arc::new(|uv, c| [uv[0] + 2.0, uv[1], c])),
        });
        let mut rng = Substreams::new(1).stream(0, 0);
        assert!(matches!(
            rotational_chvm_trial(&bad, ctx(0.0, 0.0), &mut rng),
            Err(Error::Config(_))
        ));
        assert!(rotational_chvm_trial(&ModelSpec::Lrhvm, ctx(0.0, 0.0), &mut rng).is_err());
    }

    #[test]
    fn degenerate_chvm_reproduces_lrhvm() {
        let spec = ModelSpec::Chvm(Chvm::degenerate());
        let mut r1 = Substreams::new(3).stream(0, 0);
        let mut r2 = Substreams::new(3).stream(0, 0);
        for k in 0..500 {
            let c = ctx(0.01 * k as f64, 1.0 - 0.02 * k as f64);
            let t = chvm_trial(&spec, c, &mut r1).unwrap();
            let l = r2.random::<f64>() * TAU;
            let _instrument_draw: f64 = r2.random();
            assert_eq!(t.a, lrhvm_outcomes(l, c.theta_x, Arm::A));
            assert_eq!(t.b, lrhvm_outcomes(l, c.theta_y, Arm::B));
            let tr = t.trace.unwrap();
            assert_eq!(tr.lambda1, l);
        }
    }

    #[test]
    fn chvm_rejects_unnormalized_instruments() {
        let mut c = Chvm::degenerate();
        c.instruments[2].weights = vec![0.7];
        let spec = ModelSpec::Chvm(c);
        let mut rng = Substreams::new(1).stream(0, 0);
        assert!(matches!(chvm_trial(&spec, ctx(0.0, 0.0), &mut rng), Err(Error::Config(_))));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn chvm_sampling_order_uses_pair_distribution() {
        // instrument shift π on x'y' only: flips A on that pair
        let mut c = Chvm::degenerate();
        c.instruments[3] = DiscreteJoint::point(PI, 0.0);
        let spec = ModelSpec::Chvm(c);
        let d = Design::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let mut rng = Substreams::new(2).stream(0, 0);
        for pair in SettingPair::ALL {
            let t = chvm_trial(&spec, d.context(pair), &mut rng).unwrap();
            let expected = if pair == SettingPair::XpYp { 1 } else { -1 };
            assert_eq!(t.a * t.b, expected);
        }
    }

    #[test]
    fn counterfactual_flag() {
        assert!(ModelSpec::Lrhvm.counterfactually_definite());
        for m in [ModelSpec::Shvm, ModelSpec::rot_chvm(), ModelSpec::quantum_singlet()] {
            assert!(!m.counterfactually_definite());
        }
    }

    #[test]
    fn independence_check_separates_families() {
        let d = Design::standard();
        let lr = statistical_independence_check(&ModelSpec::Lrhvm, &d, 20_000, 10, 0.001, 4).unwrap();
        assert!(lr.measurement_independent);
        assert!(lr.setting_recovery_accuracy.is_none());
        assert!(lr.variables.iter().all(|v| v.max_tv_distance < 0.03));

        let rot = statistical_independence_check(&ModelSpec::rot_chvm(), &d, 100_000, 10, 0.001, 4)
            .unwrap();
        assert!(rot.measurement_independent);
        assert_eq!(rot.setting_recovery_accuracy, Some(1.0));
        let cos_var = rot.variables.iter().find(|v| v.variable == "mu_y[3]").unwrap();
        assert!(cos_var.setting_dependent && cos_var.max_tv_distance > 0.5);

        assert!(matches!(
            statistical_independence_check(&ModelSpec::Lrhvm, &d, 10, 10, 0.01, 4),
            Err(Error::Statistical { required: 200, .. })
        ));
    }
}
