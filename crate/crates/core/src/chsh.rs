//! Setting labels, experiment designs and the CHSH combination shared by
//! every module.
//!
//! The four setting pairs are ordered `(x,y), (x,y'), (x',y), (x',y')` and the
//! CHSH statistic is
//!
//! ```text
//! S = E(x,y) − E(x,y') + E(x',y) + E(x',y')
//! ```
//!
//! With `(a, a', b, b') = (0, π/2, π/4, 3π/4)` the singlet reaches
//! `|S| = 2√2` under this sign pattern. Any jointly distributed ±1 quadruple
//! satisfies `|S| ≤ 2`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHSH_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];

pub fn chsh_combination(e: [f64; 4]) -> f64 {
    e[0] - e[1] + e[2] + e[3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SettingPair {
    XY,
    XYp,
    XpY,
    XpYp,
}

impl SettingPair {
    pub const ALL: [SettingPair; 4] = [
        SettingPair::XY,
        SettingPair::XYp,
        SettingPair::XpY,
        SettingPair::XpYp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> SettingPair {
        Self::ALL[i]
    }

    /// 0 for `x`, 1 for `x'`.
    pub fn x_index(self) -> usize {
        self.index() / 2
    }

    /// 0 for `y`, 1 for `y'`.
    pub fn y_index(self) -> usize {
        self.index() % 2
    }

    pub fn from_parts(x_index: usize, y_index: usize) -> SettingPair {
        Self::from_index(2 * (x_index & 1) + (y_index & 1))
    }

    pub fn x_label(self) -> &'static str {
        X_LABELS[self.x_index()]
    }

    pub fn y_label(self) -> &'static str {
        Y_LABELS[self.y_index()]
    }

    pub fn label(self) -> &'static str {
        ["xy", "xy'", "x'y", "x'y'"][self.index()]
    }

    pub fn parse(label: &str) -> Result<SettingPair> {
        Self::ALL
            .into_iter()
            .find(|p| p.label() == label.trim())
            .ok_or_else(|| Error::input(format!("unknown setting pair label {label:?}")))
    }

    pub fn from_labels(x: &str, y: &str) -> Result<SettingPair> {
        let xi = X_LABELS
            .iter()
            .position(|l| *l == x.trim())
            .ok_or_else(|| Error::input(format!("unknown x setting label {x:?}")))?;
        let yi = Y_LABELS
            .iter()
            .position(|l| *l == y.trim())
            .ok_or_else(|| Error::input(format!("unknown y setting label {y:?}")))?;
        Ok(Self::from_parts(xi, yi))
    }
}

impl fmt::Display for SettingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const X_LABELS: [&str; 2] = ["x", "x'"];
pub const Y_LABELS: [&str; 2] = ["y", "y'"];

/// Angles (radians) of the two settings on each arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Design {
    pub fn new(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Result<Self> {
        let d = Design {
            a,
            a_prime,
            b,
            b_prime,
        };
        if d.as_array().iter().any(|t| !t.is_finite()) {
            return Err(Error::input("design angles must be finite"));
        }
        Ok(d)
    }

    /// `(0, π/2, π/4, 3π/4)`: maximal singlet violation, and the boundary
    /// `|S| = 2` for the sign-function local model.
    pub fn standard() -> Self {
        Design {
            a: 0.0,
            a_prime: FRAC_PI_2,
            b: FRAC_PI_4,
            b_prime: 3.0 * FRAC_PI_4,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.a_prime, self.b, self.b_prime]
    }

    pub fn x_angle(&self, x_index: usize) -> f64 {
        if x_index == 0 {
            self.a
        } else {
            self.a_prime
        }
    }

    pub fn y_angle(&self, y_index: usize) -> f64 {
        if y_index == 0 {
            self.b
        } else {
            self.b_prime
        }
    }

    pub fn angles(&self, pair: SettingPair) -> (f64, f64) {
        (self.x_angle(pair.x_index()), self.y_angle(pair.y_index()))
    }

    pub fn context(&self, pair: SettingPair) -> SettingContext {
        let (theta_x, theta_y) = self.angles(pair);
        SettingContext {
            pair,
            theta_x,
            theta_y,
        }
    }
}

/// The setting pair of one trial together with its angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettingContext {
    pub pair: SettingPair,
    pub theta_x: f64,
    pub theta_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairEstimate {
    pub pair: SettingPair,
    pub n: usize,
    pub e: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChshReport {
    pub estimates: [PairEstimate; 4],
    pub s: f64,
    pub se_s: f64,
    pub violated: bool,
}

impl ChshReport {
    /// Builds the report from per-pair `(n, Σ ab)` sums. `violated` is decided
    /// in exact integer arithmetic so ties at `|S| = 2` never count.
    pub fn from_sums(sums: [(usize, i64); 4]) -> Result<Self> {
        let mut estimates = [PairEstimate {
            pair: SettingPair::XY,
            n: 0,
            e: 0.0,
            se: 0.0,
        }; 4];
        for (i, &(n, sum)) in sums.iter().enumerate() {
            if n == 0 {
                return Err(Error::input(format!(
                    "no rows for setting pair {}",
                    SettingPair::from_index(i)
                )));
            }
            let e = sum as f64 / n as f64;
            estimates[i] = PairEstimate {
                pair: SettingPair::from_index(i),
                n,
                e,
                se: ((1.0 - e * e).max(0.0) / n as f64).sqrt(),
            };
        }
        let s = chsh_combination(estimates.map(|p| p.e));
        let se_s = estimates.iter().map(|p| p.se * p.se).sum::<f64>().sqrt();
        Ok(ChshReport {
            estimates,
            s,
            se_s,
            violated: exceeds_two(sums),
        })
    }
}

/// `|Σ± sum_i / n_i| > 2`, evaluated with integers.
fn exceeds_two(sums: [(usize, i64); 4]) -> bool {
    let n: [i128; 4] = sums.map(|(n, _)| n as i128);
    let prod: i128 = n.iter().product();
    let numer: i128 = (0..4)
        .map(|i| {
            let others: i128 = (0..4).filter(|&j| j != i).map(|j| n[j]).product();
            CHSH_SIGNS[i] as i128 * sums[i].1 as i128 * others
        })
        .sum();
    numer.abs() > 2 * prod
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for p in SettingPair::ALL {
            assert_eq!(SettingPair::parse(p.label()).unwrap(), p);
            assert_eq!(SettingPair::from_labels(p.x_label(), p.y_label()).unwrap(), p);
            assert_eq!(SettingPair::from_parts(p.x_index(), p.y_index()), p);
        }
        assert!(SettingPair::parse("zz").is_err());
    }

    #[test]
    fn exact_violation_flag() {
        // S = 1 − (−1) + 1 + 1 = 4 with n = 1 everywhere
        let r = ChshReport::from_sums([(1, 1), (1, -1), (1, 1), (1, 1)]).unwrap();
        assert_eq!(r.s, 4.0);
        assert!(r.violated);
        // S = 2 exactly is not a violation
        let r = ChshReport::from_sums([(3, 3), (3, 3), (3, 3), (3, 3)]).unwrap();
        assert_eq!(r.s, 2.0);
        assert!(!r.violated);
        // mixed denominators: 7/7 − (−5/5) + 1/3 + (−1/3) = 2
        let r = ChshReport::from_sums([(7, 7), (5, -5), (3, 1), (3, -1)]).unwrap();
        assert!(!r.violated);
        assert!(ChshReport::from_sums([(0, 0), (1, 1), (1, 1), (1, 1)]).is_err());
    }
}
