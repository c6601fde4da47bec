//! Timestamped two-arm event streams and coincidence-window pairing.
//!
//! A local source emits one particle per arm at a common time. Each arm's
//! detector answers with the local sign model and registers the click after a
//! delay that may depend on the hidden variable, the local setting and the
//! outcome. Pairing clicks by a time window then post-selects trials, and
//! with setting-dependent delays the selected sub-ensemble can show
//! `|S| > 2` although every click comes from a local model.
//!
//! Two events are coincident when `|t_A − t_B| ≤ W/2`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::chsh::{ChshReport, Design, SettingPair};
use crate::error::{Error, Result};
use crate::experiment::{chsh_from_pairs, PairRow, PairSheet};
use crate::models::{lrhvm_outcomes, Arm, Family};
use crate::rng::{blocks, Substreams};

const DOMAIN_EMISSIONS: u64 = 0x454D_4954;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionEvent {
    pub t: f64,
    #[serde(serialize_with = "ser_arm")]
    pub arm: Arm,
    /// 0 for the unprimed setting of the arm, 1 for the primed one.
    pub setting: usize,
    pub angle: f64,
    pub outcome: i8,
    pub trial_id: u64,
}

fn ser_arm<S: serde::Serializer>(arm: &Arm, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match arm {
        Arm::A => "A",
        Arm::B => "B",
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EventStreams {
    pub a: Vec<DetectionEvent>,
    pub b: Vec<DetectionEvent>,
}

impl EventStreams {
    pub fn is_sorted(&self) -> bool {
        let ok = |v: &[DetectionEvent]| v.windows(2).all(|w| w[0].t <= w[1].t);
        ok(&self.a) && ok(&self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WindowMode {
    /// The time axis is cut into bins `[kW, (k+1)W)`; inside a bin, A and B
    /// clicks are paired in time order.
    FixedBins,
    /// Earliest-first sweep: the earliest unpaired A and B clicks are paired
    /// when `|Δt| ≤ W/2`, otherwise the earlier of the two is discarded.
    NearestNeighbor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowPolicy {
    pub mode: WindowMode,
    pub window: f64,
}

impl WindowPolicy {
    pub fn new(mode: WindowMode, window: f64) -> Result<Self> {
        if window.is_nan() || window <= 0.0 {
            return Err(Error::config(format!("window must be positive, got {window}")));
        }
        Ok(WindowPolicy { mode, window })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DelayShape {
    Zero,
    /// `Δ·|sin(θ − λ)|^k`: long delays for particles whose hidden direction
    /// is far from the local setting.
    SettingDependent { amplitude: f64, exponent: f64 },
    /// `Δ·U` with `U` uniform on `[0, 1)`, drawn independently per click.
    SettingIndependent { amplitude: f64 },
}

/// A local delay model on top of the sign-function local realistic source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayModel {
    /// Mean emissions per second; inter-emission gaps are exponential.
    pub emission_rate: f64,
    pub shape: DelayShape,
    pub max_delay: f64,
}

pub const REFERENCE_EMISSION_RATE: f64 = 100.0;
pub const REFERENCE_DELAY_AMPLITUDE: f64 = 1e-4;
pub const REFERENCE_DELAY_EXPONENT: f64 = 4.0;
/// Window at which the reference model shows its post-selection boost.
pub const REFERENCE_WINDOW: f64 = 1e-5;

impl DelayModel {
    pub fn new(emission_rate: f64, shape: DelayShape, max_delay: f64) -> Result<Self> {
        if !(emission_rate.is_finite() && emission_rate > 0.0) {
            return Err(Error::config("emission rate must be positive and finite"));
        }
        if !(max_delay.is_finite() && max_delay >= 0.0) {
            return Err(Error::config("maximum delay must be finite and non-negative"));
        }
        match shape {
            DelayShape::Zero => {}
            DelayShape::SettingDependent { amplitude, exponent } => {
                if !(amplitude.is_finite() && amplitude >= 0.0 && exponent.is_finite() && exponent > 0.0) {
                    return Err(Error::config("delay amplitude must be ≥ 0 and exponent > 0"));
                }
            }
            DelayShape::SettingIndependent { amplitude } => {
                if !(amplitude.is_finite() && amplitude >= 0.0) {
                    return Err(Error::config("delay amplitude must be ≥ 0"));
                }
            }
        }
        Ok(DelayModel {
            emission_rate,
            shape,
            max_delay,
        })
    }

    pub fn zero() -> Self {
        DelayModel {
            emission_rate: REFERENCE_EMISSION_RATE,
            shape: DelayShape::Zero,
            max_delay: 0.0,
        }
    }

    pub fn reference() -> Self {
        DelayModel {
            emission_rate: REFERENCE_EMISSION_RATE,
            shape: DelayShape::SettingDependent {
                amplitude: REFERENCE_DELAY_AMPLITUDE,
                exponent: REFERENCE_DELAY_EXPONENT,
            },
            max_delay: REFERENCE_DELAY_AMPLITUDE,
        }
    }

    pub fn setting_independent() -> Self {
        DelayModel {
            emission_rate: REFERENCE_EMISSION_RATE,
            shape: DelayShape::SettingIndependent {
                amplitude: REFERENCE_DELAY_AMPLITUDE,
            },
            max_delay: REFERENCE_DELAY_AMPLITUDE,
        }
    }

    /// The hidden-variable family producing the outcomes.
    pub fn family(&self) -> Family {
        Family::Lrhvm
    }

    /// `d(λ, θ, outcome)`; `u` is the click's private uniform draw.
    pub fn delay(&self, lambda: f64, theta: f64, _outcome: i8, u: f64) -> f64 {
        match self.shape {
            DelayShape::Zero => 0.0,
            DelayShape::SettingDependent { amplitude, exponent } => {
                amplitude * (theta - lambda).sin().abs().powf(exponent)
            }
            DelayShape::SettingIndependent { amplitude } => amplitude * u,
        }
    }
}

/// Where the per-trial setting pairs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Independent fair coins on each arm.
    Random,
    /// Cycled if shorter than the number of trials.
    Fixed(Vec<SettingPair>),
}

struct Click {
    t: f64,
    setting: usize,
    angle: f64,
    outcome: i8,
}

pub fn generate_event_streams(
    model: &DelayModel,
    design: &Design,
    schedule: &Schedule,
    n_trials: usize,
    seed: u64,
) -> Result<EventStreams> {
    if n_trials == 0 {
        return Err(Error::input("n_trials must be at least 1"));
    }
    if let Schedule::Fixed(v) = schedule {
        if v.is_empty() {
            return Err(Error::input("fixed schedule is empty"));
        }
    }
    let model = DelayModel::new(model.emission_rate, model.shape, model.max_delay)?;
    let streams = Substreams::new(seed);
    let gap = Exp::new(model.emission_rate).map_err(|e| Error::config(e.to_string()))?;
    let block_list: Vec<(usize, usize)> = blocks(n_trials).collect();

    // Per block: relative emission offsets and the two clicks of each trial.
    type Block = (f64, Vec<(f64, Click, Click)>);
    let generated: Vec<Block> = block_list
        .par_iter()
        .enumerate()
        .map(|(b, &(start, len))| -> Result<Block> {
            let mut rng = streams.stream(DOMAIN_EMISSIONS, b as u64);
            let mut clock = 0.0;
            let mut out = Vec::with_capacity(len);
            for k in 0..len {
                clock += gap.sample(&mut rng);
                let pair = match schedule {
                    Schedule::Random => {
                        let xi = usize::from(rng.random::<bool>());
                        let yi = usize::from(rng.random::<bool>());
                        SettingPair::from_parts(xi, yi)
                    }
                    Schedule::Fixed(v) => v[(start + k) % v.len()],
                };
                let lambda = rng.random_range(0.0..std::f64::consts::TAU);
                let (ua, ub): (f64, f64) = (rng.random(), rng.random());
                let (tx, ty) = design.angles(pair);
                let a = lrhvm_outcomes(lambda, tx, Arm::A);
                let bo = lrhvm_outcomes(lambda, ty, Arm::B);
                let da = model.delay(lambda, tx, a, ua);
                let db = model.delay(lambda, ty, bo, ub);
                for d in [da, db] {
                    if !(d >= 0.0 && d <= model.max_delay) {
                        return Err(Error::config(format!(
                            "delay {d} exceeds the declared maximum {}",
                            model.max_delay
                        )));
                    }
                }
                out.push((
                    clock,
                    Click {
                        t: da,
                        setting: pair.x_index(),
                        angle: tx,
                        outcome: a,
                    },
                    Click {
                        t: db,
                        setting: pair.y_index(),
                        angle: ty,
                        outcome: bo,
                    },
                ));
            }
            Ok((clock, out))
        })
        .collect::<Result<_>>()?;

    let mut result = EventStreams {
        a: Vec::with_capacity(n_trials),
        b: Vec::with_capacity(n_trials),
    };
    let mut offset = 0.0;
    for ((start, _), (span, trials)) in block_list.iter().zip(generated) {
        for (k, (emit, ca, cb)) in trials.into_iter().enumerate() {
            let trial_id = (start + k) as u64;
            let t0 = offset + emit;
            for (arm, c, dst) in [(Arm::A, ca, &mut result.a), (Arm::B, cb, &mut result.b)] {
                dst.push(DetectionEvent {
                    t: t0 + c.t,
                    arm,
                    setting: c.setting,
                    angle: c.angle,
                    outcome: c.outcome,
                    trial_id,
                });
            }
        }
        offset += span;
    }
    for v in [&mut result.a, &mut result.b] {
        v.sort_by(|x, y| x.t.total_cmp(&y.t).then(x.trial_id.cmp(&y.trial_id)));
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscardReport {
    pub events_a: usize,
    pub events_b: usize,
    pub coincidences: usize,
    /// Unpaired clicks, indexed `[arm][setting]` with arm A first.
    pub unpaired: [[usize; 2]; 2],
}

impl DiscardReport {
    pub fn unpaired_total(&self, arm: Arm) -> usize {
        let i = usize::from(arm == Arm::B);
        self.unpaired[i].iter().sum()
    }

    pub fn to_text(&self) -> String {
        format!(
            "events A: {}\nevents B: {}\ncoincidences: {}\nunpaired A (x, x'): {}, {}\nunpaired B (y, y'): {}, {}\n",
            self.events_a,
            self.events_b,
            self.coincidences,
            self.unpaired[0][0],
            self.unpaired[0][1],
            self.unpaired[1][0],
            self.unpaired[1][1],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coincidences {
    /// Matched `(index in A, index in B)`.
    pub matches: Vec<(usize, usize)>,
    pub sheets: [PairSheet; 4],
    pub report: DiscardReport,
}

fn check_sorted(v: &[DetectionEvent], name: &str) -> Result<()> {
    if let Some(i) = v.windows(2).position(|w| w[0].t.partial_cmp(&w[1].t).is_none_or(|o| o.is_gt())) {
        return Err(Error::input(format!(
            "stream {name} is not sorted by time at position {}",
            i + 1
        )));
    }
    if v.iter().any(|e| !e.t.is_finite()) {
        return Err(Error::input(format!("stream {name} has a non-finite time")));
    }
    Ok(())
}

fn nearest_neighbor(a: &[DetectionEvent], b: &[DetectionEvent], w: f64) -> Vec<(usize, usize)> {
    let half = w / 2.0;
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let dt = a[i].t - b[j].t;
        if dt.abs() <= half {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if dt < 0.0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn fixed_bins(a: &[DetectionEvent], b: &[DetectionEvent], w: f64) -> Vec<(usize, usize)> {
    let bin = |t: f64| (t / w).floor();
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let (ka, kb) = (bin(a[i].t), bin(b[j].t));
        if ka < kb {
            i += 1;
        } else if kb < ka {
            j += 1;
        } else {
            let (mut ie, mut je) = (i, j);
            while ie < a.len() && bin(a[ie].t) == ka {
                ie += 1;
            }
            while je < b.len() && bin(b[je].t) == ka {
                je += 1;
            }
            out.extend((i..ie).zip(j..je));
            i = ie;
            j = je;
        }
    }
    out
}

/// Pairs the streams under `policy`. Each click is used at most once; every
/// coincidence becomes one row of the sheet of its setting pair, tagged with
/// the A click's trial id.
pub fn pair_coincidences(streams: &EventStreams, policy: &WindowPolicy) -> Result<Coincidences> {
    let policy = WindowPolicy::new(policy.mode, policy.window)?;
    check_sorted(&streams.a, "A")?;
    check_sorted(&streams.b, "B")?;
    let (a, b) = (&streams.a, &streams.b);
    let matches = match policy.mode {
        WindowMode::NearestNeighbor => nearest_neighbor(a, b, policy.window),
        WindowMode::FixedBins => fixed_bins(a, b, policy.window),
    };

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut rows: [Vec<PairRow>; 4] = Default::default();
    let mut angles: [Option<(f64, f64)>; 4] = [None; 4];
    for &(i, j) in &matches {
        if std::mem::replace(&mut used_a[i], true) || std::mem::replace(&mut used_b[j], true) {
            return Err(Error::Invariant("a click was paired twice".into()));
        }
        let pair = SettingPair::from_parts(a[i].setting, b[j].setting);
        angles[pair.index()].get_or_insert((a[i].angle, b[j].angle));
        rows[pair.index()].push(PairRow {
            trial: a[i].trial_id,
            a: a[i].outcome,
            b: b[j].outcome,
        });
    }
    let mut unpaired = [[0usize; 2]; 2];
    for (e, _) in a.iter().zip(&used_a).filter(|(_, u)| !**u) {
        unpaired[0][e.setting & 1] += 1;
    }
    for (e, _) in b.iter().zip(&used_b).filter(|(_, u)| !**u) {
        unpaired[1][e.setting & 1] += 1;
    }
    let mut it = rows.into_iter();
    let sheets = SettingPair::ALL.map(|pair| PairSheet {
        pair,
        angles: angles[pair.index()],
        rows: it.next().expect("four sheets"),
    });
    Ok(Coincidences {
        report: DiscardReport {
            events_a: a.len(),
            events_b: b.len(),
            coincidences: matches.len(),
            unpaired,
        },
        matches,
        sheets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub window: f64,
    pub retained_fraction: f64,
    /// NaN when some setting pair retained no coincidences.
    pub s: f64,
    pub se: f64,
    pub discards: DiscardReport,
}

/// Generates the streams once and pairs them at every window of the grid.
pub fn coincidence_chsh_scan(
    model: &DelayModel,
    design: &Design,
    n_trials: usize,
    windows: &[f64],
    mode: WindowMode,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if windows.is_empty() {
        return Err(Error::input("window grid is empty"));
    }
    let policies: Vec<WindowPolicy> = windows
        .iter()
        .map(|&w| WindowPolicy::new(mode, w))
        .collect::<Result<_>>()?;
    let streams = generate_event_streams(model, design, &Schedule::Random, n_trials, seed)?;
    policies
        .iter()
        .map(|p| {
            let c = pair_coincidences(&streams, p)?;
            let (s, se) = match c.sheets.iter().all(|s| s.n() > 0) {
                true => {
                    let r: ChshReport = chsh_from_pairs(&c.sheets)?;
                    (r.s, r.se_s)
                }
                false => (f64::NAN, f64::NAN),
            };
            Ok(CurvePoint {
                window: p.window,
                retained_fraction: c.report.coincidences as f64 / n_trials as f64,
                s,
                se,
                discards: c.report,
            })
        })
        .collect()
}
