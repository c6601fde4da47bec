//! Can four N-row pair sheets be rearranged into one N × 4 quadruple sheet?
//!
//! We need non-negative integer counts `n(a, a', b, b')` over the 16
//! quadruple types whose four pair marginals equal the observed 2×2 tables.
//!
//! Group the quadruples by `(a, a')`. Within a group, `b` and `b'` enter
//! different marginals only, so any integer coupling of the group's `b`
//! counts with its `b'` counts works. The problem therefore reduces to
//!
//! 1. a 2×2 table `m(a, a')` with margins `n_a`, `n_a'` (one free integer `s`),
//! 2. per group, the number `x(a, a')` of `b = +1` rows: a capacitated 2×2
//!    transportation problem with margins from the `(x,y)` and `(x',y)`
//!    tables (one free integer),
//! 3. the same for `b'` from the `(x,y')` and `(x',y')` tables.
//!
//! For each `s` the feasible range of the free integers in 2 and 3 is an
//! interval, so scanning `s` decides feasibility exactly in O(N).
//! When infeasible, the report names a violated single-arm consistency
//! equality or CHSH count inequality.

use serde::Serialize;

use crate::chsh::SettingPair;
use crate::error::{Error, Result};
use crate::experiment::{CountTable, QuadrupleSheet};

/// Index of quadruple `(a, a', b, b')`: bit k set when entry k is `−1`.
pub fn quadruple_index(q: [i8; 4]) -> usize {
    q.iter()
        .enumerate()
        .map(|(k, &v)| usize::from(v < 0) << k)
        .sum()
}

pub fn quadruple_from_index(i: usize) -> [i8; 4] {
    [0, 1, 2, 3].map(|k| if i >> k & 1 == 1 { -1 } else { 1 })
}

/// Counts of the 16 quadruple types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuadrupleCounts(pub [u64; 16]);

impl QuadrupleCounts {
    pub fn from_sheet(sheet: &QuadrupleSheet) -> Self {
        let mut c = [0u64; 16];
        for &q in &sheet.rows {
            c[quadruple_index(q)] += 1;
        }
        QuadrupleCounts(c)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn pair_marginals(&self) -> CountTable {
        let mut counts = [[[0u64; 2]; 2]; 4];
        for (i, &c) in self.0.iter().enumerate() {
            let q = quadruple_from_index(i);
            for p in SettingPair::ALL {
                let a = q[p.x_index()];
                let b = q[2 + p.y_index()];
                counts[p.index()][usize::from(a < 0)][usize::from(b < 0)] += c;
            }
        }
        CountTable { counts }
    }

    /// Expands the counts into rows in quadruple-index order.
    pub fn to_sheet(&self) -> QuadrupleSheet {
        let rows = self
            .0
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(quadruple_from_index(i), c as usize))
            .collect();
        QuadrupleSheet { design: None, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    /// Two sheets sharing a setting disagree on its `+1` count.
    Marginal {
        setting: &'static str,
        first: SettingPair,
        second: SettingPair,
        first_count: u64,
        second_count: u64,
    },
    /// `sign · Σ_k s_k (N·Ê_k)` with the term at `flipped` negated exceeds `2N`.
    ChshCount {
        flipped: SettingPair,
        sign: i8,
        value: i64,
        bound: i64,
    },
    /// Count inequalities hold but no integer witness exists.
    IntegerGap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Feasibility {
    Feasible { witness: QuadrupleCounts },
    Infeasible { violation: Violation },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeasibilityReport {
    pub n: u64,
    pub outcome: Feasibility,
    /// `max over the eight count inequalities of (value − 2N)`; positive
    /// means violated.
    pub max_chsh_slack: i64,
}

/// The eight CHSH count values: for each choice of the single negated term,
/// `± Σ_k s_k · (N·Ê_k)`. Each must stay `≤ 2N` for a quadruple sheet to exist.
/// The standard pattern is the entry with the minus on `xy'` and sign `+1`.
pub fn chsh_count_values(table: &CountTable) -> [(SettingPair, i8, i64); 8] {
    let c = SettingPair::ALL.map(|p| table.correlation_count(p));
    let mut out = [(SettingPair::XY, 1i8, 0i64); 8];
    for (k, flipped) in SettingPair::ALL.into_iter().enumerate() {
        let v: i64 = (0..4)
            .map(|i| if i == flipped.index() { -c[i] } else { c[i] })
            .sum();
        out[2 * k] = (flipped, 1, v);
        out[2 * k + 1] = (flipped, -1, -v);
    }
    out
}

pub fn reshuffle_feasibility(table: &CountTable) -> Result<FeasibilityReport> {
    let n = table.total(SettingPair::XY);
    if SettingPair::ALL.iter().any(|&p| table.total(p) != n) {
        return Err(Error::input(
            "reshuffling needs four sheets with the same number of rows",
        ));
    }
    let bound = 2 * n as i64;
    let values = chsh_count_values(table);
    let max_chsh_slack = values.iter().map(|v| v.2 - bound).max().unwrap_or(0);

    let outcome = match marginal_violation(table) {
        Some(v) => Feasibility::Infeasible { violation: v },
        None => match construct_witness(table) {
            Some(witness) => Feasibility::Feasible { witness },
            None => {
                let violation = values
                    .iter()
                    .find(|v| v.2 > bound)
                    .map(|&(flipped, sign, value)| Violation::ChshCount {
                        flipped,
                        sign,
                        value,
                        bound,
                    })
                    .unwrap_or(Violation::IntegerGap);
                Feasibility::Infeasible { violation }
            }
        },
    };
    Ok(FeasibilityReport {
        n,
        outcome,
        max_chsh_slack,
    })
}

fn plus_a(table: &CountTable, p: SettingPair) -> u64 {
    let c = table.counts[p.index()];
    c[0][0] + c[0][1]
}

fn plus_b(table: &CountTable, p: SettingPair) -> u64 {
    let c = table.counts[p.index()];
    c[0][0] + c[1][0]
}

type PlusCount = fn(&CountTable, SettingPair) -> u64;

fn marginal_violation(table: &CountTable) -> Option<Violation> {
    use SettingPair::*;
    let checks: [(&'static str, SettingPair, SettingPair, PlusCount); 4] = [
        ("x", XY, XYp, plus_a),
        ("x'", XpY, XpYp, plus_a),
        ("y", XY, XpY, plus_b),
        ("y'", XYp, XpYp, plus_b),
    ];
    checks.into_iter().find_map(|(setting, first, second, f)| {
        let (c1, c2) = (f(table, first), f(table, second));
        (c1 != c2).then_some(Violation::Marginal {
            setting,
            first,
            second,
            first_count: c1,
            second_count: c2,
        })
    })
}

/// Range of `t` for the capacitated 2×2 problem
/// `x++ = t, x+− = r+ − t, x−+ = c+ − t, x−− = r− − c+ + t`,
/// `0 ≤ x ≤ cap`, where `r±` are counts per `a` value and `c+` per `a'`.
fn transport_range(row_plus: i64, row_minus: i64, col_plus: i64, cap: [i64; 4]) -> Option<(i64, i64)> {
    // each cell is (offset + coef * t) bounded to [0, cap]
    let cells = [
        (0, 1, cap[0]),
        (row_plus, -1, cap[1]),
        (col_plus, -1, cap[2]),
        (row_minus - col_plus, 1, cap[3]),
    ];
    let (mut lo, mut hi) = (i64::MIN, i64::MAX);
    for (off, coef, c) in cells {
        let (l, h) = if coef > 0 { (-off, c - off) } else { (off - c, off) };
        lo = lo.max(l);
        hi = hi.min(h);
    }
    (lo <= hi).then_some((lo, hi))
}

fn construct_witness(table: &CountTable) -> Option<QuadrupleCounts> {
    use SettingPair::*;
    let n = table.total(XY) as i64;
    let na = plus_a(table, XY) as i64;
    let nap = plus_a(table, XpY) as i64;
    let cell = |p: SettingPair, a: usize, b: usize| table.counts[p.index()][a][b] as i64;

    // b = +1 counts split by a (from xy) and by a' (from x'y); same for b'
    let (bx_plus, bx_minus, bxp_plus) = (cell(XY, 0, 0), cell(XY, 1, 0), cell(XpY, 0, 0));
    let (px_plus, px_minus, pxp_plus) = (cell(XYp, 0, 0), cell(XYp, 1, 0), cell(XpYp, 0, 0));

    let s_lo = 0.max(na + nap - n);
    let s_hi = na.min(nap);
    for s in s_lo..=s_hi {
        // m indexed [a][a'] in ++, +−, −+, −− order
        let m = [s, na - s, nap - s, n - na - nap + s];
        let Some((xl, _)) = transport_range(bx_plus, bx_minus, bxp_plus, m) else {
            continue;
        };
        let Some((yl, _)) = transport_range(px_plus, px_minus, pxp_plus, m) else {
            continue;
        };
        let x = [xl, bx_plus - xl, bxp_plus - xl, bx_minus - bxp_plus + xl];
        let y = [yl, px_plus - yl, pxp_plus - yl, px_minus - pxp_plus + yl];
        let mut counts = [0u64; 16];
        for g in 0..4 {
            let (a, ap) = (if g < 2 { 1 } else { -1 }, if g % 2 == 0 { 1 } else { -1 });
            // northwest-corner coupling of b (x[g] plus) with b' (y[g] plus)
            let pp = x[g].min(y[g]);
            let pm = x[g] - pp;
            let mp = y[g] - pp;
            let mm = m[g] - pp - pm - mp;
            for (b, bp, c) in [(1, 1, pp), (1, -1, pm), (-1, 1, mp), (-1, -1, mm)] {
                debug_assert!(c >= 0);
                counts[quadruple_index([a, ap, b, bp])] += c as u64;
            }
        }
        return Some(QuadrupleCounts(counts));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::PairRow;
    use crate::experiment::PairSheet;

    fn table_from_pairs(rows: [[i8; 2]; 4]) -> CountTable {
        let sheets = SettingPair::ALL.map(|p| {
            let [a, b] = rows[p.index()];
            PairSheet::new(p, None, vec![PairRow { trial: 0, a, b }]).unwrap()
        });
        CountTable::from_sheets(&sheets).unwrap()
    }

    #[test]
    fn index_round_trip() {
        for i in 0..16 {
            assert_eq!(quadruple_index(quadruple_from_index(i)), i);
        }
    }

    #[test]
    fn crafted_s_four_instance_is_infeasible() {
        let t = table_from_pairs([[1, 1], [1, -1], [1, 1], [1, 1]]);
        let r = reshuffle_feasibility(&t).unwrap();
        assert!(!r.outcome.is_feasible());
        assert!(matches!(
            r.outcome,
            Feasibility::Infeasible {
                violation: Violation::Marginal { setting: "y'", .. }
            }
        ));
        assert_eq!(r.max_chsh_slack, 2);
    }

    #[test]
    fn self_witness() {
        let rows = vec![[1, 1, -1, 1], [-1, 1, 1, 1], [1, -1, -1, -1], [1, 1, 1, 1], [-1, -1, 1, -1]];
        let sheet = QuadrupleSheet::new(None, rows).unwrap();
        let t = CountTable::from_quadruples(&sheet);
        let r = reshuffle_feasibility(&t).unwrap();
        let Feasibility::Feasible { witness } = r.outcome else {
            panic!("quadruple-derived tables must be feasible");
        };
        assert_eq!(witness.pair_marginals(), t);
        assert_eq!(witness.total(), 5);
        assert!(r.max_chsh_slack <= 0);
    }

    #[test]
    fn unequal_totals_rejected() {
        let mut t = table_from_pairs([[1, 1]; 4]);
        t.counts[2][0][0] += 1;
        assert!(reshuffle_feasibility(&t).is_err());
    }

    #[test]
    fn chsh_values_cover_standard_pattern() {
        // E = (1, −1, 1, 1): standard S = 4 appears as the flip-at-xy' entry
        let t = table_from_pairs([[1, 1], [1, -1], [1, 1], [1, 1]]);
        let vals = chsh_count_values(&t);
        assert!(vals.contains(&(SettingPair::XYp, 1, 4)));
        assert_eq!(vals.iter().map(|v| v.2).max(), Some(4));
    }
}
