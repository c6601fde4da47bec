//! Bertrand's chord paradox in its concentric-circles form: a random chord of
//! the circle of radius `R` either meets the inner circle of radius `R/2` or
//! not. Meeting the inner circle is the same event as the chord being longer
//! than the side of the inscribed equilateral triangle, whose apothem is
//! `R/2`. Each sampling protocol gives a different probability.
//!
//! Tangent chords (distance exactly `R/2`) count as misses.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{blocks, Stream, Substreams};

const DOMAIN_CHORDS: u64 = 0x4348_4F52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ChordVariant {
    /// Signed distance from the centre uniform on `[−R, R]`, fixed direction.
    ParallelChords,
    /// Two independent uniform points on the circumference.
    RandomEndpoints,
    /// Midpoint uniform on the disk, chord perpendicular to its radius.
    RandomMidpoint,
}

impl ChordVariant {
    pub const ALL: [ChordVariant; 3] = [
        ChordVariant::ParallelChords,
        ChordVariant::RandomEndpoints,
        ChordVariant::RandomMidpoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChordVariant::ParallelChords => "parallel",
            ChordVariant::RandomEndpoints => "endpoints",
            ChordVariant::RandomMidpoint => "midpoint",
        }
    }
}

impl fmt::Display for ChordVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChordVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parallel" | "parallel-chords" | "parallelchords" => Ok(ChordVariant::ParallelChords),
            "endpoints" | "random-endpoints" | "randomendpoints" => Ok(ChordVariant::RandomEndpoints),
            "midpoint" | "random-midpoint" | "randommidpoint" => Ok(ChordVariant::RandomMidpoint),
            other => Err(Error::input(format!(
                "unknown chord protocol {other:?} (expected parallel, endpoints or midpoint)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChordProtocol {
    pub variant: ChordVariant,
    pub radius: f64,
}

impl ChordProtocol {
    pub fn new(variant: ChordVariant, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::config(format!("outer radius must be positive, got {radius}")));
        }
        Ok(ChordProtocol { variant, radius })
    }

    pub fn unit(variant: ChordVariant) -> Self {
        ChordProtocol { variant, radius: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChordSample {
    pub endpoints: [[f64; 2]; 2],
    pub hits_inner: bool,
}

impl ChordSample {
    /// Distance from the centre to the chord's line.
    pub fn distance(&self) -> f64 {
        let [p, q] = self.endpoints;
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = dx.hypot(dy);
        if len == 0.0 {
            return p[0].hypot(p[1]);
        }
        (p[0] * q[1] - p[1] * q[0]).abs() / len
    }
}

/// A chord on the unit circle, described by the direction `phi` of its
/// normal and its signed distance `d` from the centre.
fn unit_chord(phi: f64, d: f64) -> ([[f64; 2]; 2], bool) {
    let d = d.clamp(-1.0, 1.0);
    let half = (1.0 - d * d).max(0.0).sqrt();
    let (s, c) = phi.sin_cos();
    let mid = [d * c, d * s];
    let dir = [-s, c];
    (
        [
            [mid[0] + half * dir[0], mid[1] + half * dir[1]],
            [mid[0] - half * dir[0], mid[1] - half * dir[1]],
        ],
        d.abs() < 0.5,
    )
}

fn draw_unit(variant: ChordVariant, rng: &mut Stream) -> ([[f64; 2]; 2], bool) {
    match variant {
        ChordVariant::ParallelChords => {
            let d = rng.random_range(-1.0..=1.0);
            unit_chord(0.0, d)
        }
        ChordVariant::RandomEndpoints => {
            let t1 = rng.random_range(0.0..TAU);
            let t2 = rng.random_range(0.0..TAU);
            let p = [t1.cos(), t1.sin()];
            let q = [t2.cos(), t2.sin()];
            // the normal bisects the two endpoint angles
            let d = ((t1 - t2) / 2.0).cos().abs();
            ([p, q], d < 0.5)
        }
        ChordVariant::RandomMidpoint => {
            let r = rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..TAU);
            unit_chord(phi, r)
        }
    }
}

/// Draws one chord. The hit decision is made on the unit circle before
/// scaling, so the hit sequence for a given stream does not depend on `R`.
pub fn sample_chord(protocol: &ChordProtocol, rng: &mut Stream) -> ChordSample {
    let (ends, hits_inner) = draw_unit(protocol.variant, rng);
    let r = protocol.radius;
    ChordSample {
        endpoints: ends.map(|p| [p[0] * r, p[1] * r]),
        hits_inner,
    }
}

/// Does the segment between the endpoints cross the circle of radius
/// `inner` about the origin? Solves `|p + t(q − p)|² = inner²` directly.
pub fn segment_meets_circle(endpoints: [[f64; 2]; 2], inner: f64) -> bool {
    let [p, q] = endpoints;
    let v = [q[0] - p[0], q[1] - p[1]];
    let a = v[0] * v[0] + v[1] * v[1];
    if a == 0.0 {
        return false;
    }
    let b = 2.0 * (p[0] * v[0] + p[1] * v[1]);
    let c = p[0] * p[0] + p[1] * p[1] - inner * inner;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return false;
    }
    let sq = disc.sqrt();
    let t1 = (-b - sq) / (2.0 * a);
    let t2 = (-b + sq) / (2.0 * a);
    (0.0..=1.0).contains(&t1) || (0.0..=1.0).contains(&t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitEstimate {
    pub protocol: ChordVariant,
    pub n: u64,
    pub hits: u64,
    pub estimate: f64,
    pub se: f64,
}

pub fn hit_probability(protocol: &ChordProtocol, n: u64, seed: u64) -> Result<HitEstimate> {
    if n == 0 {
        return Err(Error::input("n must be at least 1"));
    }
    let streams = Substreams::new(seed);
    let n_usize = usize::try_from(n).map_err(|_| Error::input("n too large"))?;
    let hits: u64 = blocks(n_usize)
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(b, (_, len))| {
            let mut rng = streams.stream(DOMAIN_CHORDS, b as u64);
            (0..len)
                .filter(|_| sample_chord(protocol, &mut rng).hits_inner)
                .count() as u64
        })
        .sum();
    let p = hits as f64 / n as f64;
    Ok(HitEstimate {
        protocol: protocol.variant,
        n,
        hits,
        estimate: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
    })
}

/// The hit indicators in sampling order, for reproducibility checks.
pub fn hit_sequence(protocol: &ChordProtocol, n: usize, seed: u64) -> Vec<bool> {
    let streams = Substreams::new(seed);
    blocks(n)
        .enumerate()
        .flat_map(|(b, (_, len))| {
            let mut rng = streams.stream(DOMAIN_CHORDS, b as u64);
            (0..len)
                .map(|_| sample_chord(protocol, &mut rng).hits_inner)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Exact probabilities: distance ratio `(R/2)/R`, arc fraction `(2π/3)/(2π)`
/// and area ratio `(R/2)²/R²`.
pub fn analytic_probability(variant: ChordVariant) -> Ratio<u64> {
    match variant {
        ChordVariant::ParallelChords => Ratio::new(1, 2),
        ChordVariant::RandomEndpoints => Ratio::new(1, 3),
        ChordVariant::RandomMidpoint => Ratio::new(1, 4),
    }
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
