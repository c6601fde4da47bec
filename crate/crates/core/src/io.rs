//! CSV formats for sheets, count tables, event streams, hidden traces and run
//! series. Readers skip lines starting with `#`, so files carrying a comment
//! header round-trip.

use std::io::{Read, Write};

use crate::chsh::{Design, SettingPair};
use crate::coincidence::{DetectionEvent, EventStreams};
use crate::completeness::RunSeries;
use crate::error::{Error, Result};
use crate::experiment::{order_sheets, CountTable, PairRow, PairSheet, QuadrupleSheet};
use crate::models::{Arm, HiddenTrace};

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers()?;
    let got: Vec<&str> = h.iter().collect();
    if got != expected {
        return Err(Error::input(format!(
            "expected CSV header {}, got {}",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::input(format!("cannot parse {what} from {field:?}")))
}

fn parse_pm1(field: &str) -> Result<i8> {
    match parse::<i8>(field, "outcome")? {
        v @ (1 | -1) => Ok(v),
        v => Err(Error::input(format!("outcome {v} is not +1 or -1"))),
    }
}

pub const PAIR_HEADER: [&str; 5] = ["trial", "setting_x", "setting_y", "a", "b"];
pub const QUADRUPLE_HEADER: [&str; 5] = ["trial", "a", "a_prime", "b", "b_prime"];
pub const COUNT_HEADER: [&str; 4] = ["setting_pair", "a", "b", "count"];
pub const EVENT_HEADER: [&str; 5] = ["t", "arm", "setting", "outcome", "trial_id"];
pub const TRACE_HEADER: [&str; 7] = ["trial", "setting_x", "setting_y", "lambda1", "lambda2", "mu_x", "mu_y"];
pub const SERIES_HEADER: [&str; 2] = ["trial", "outcome"];

/// Writes the four sheets as one CSV, rows ordered by trial index.
pub fn write_pair_sheets<W: Write>(w: W, sheets: &[PairSheet]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PAIR_HEADER)?;
    let mut rows: Vec<(u64, SettingPair, i8, i8)> = sheets
        .iter()
        .flat_map(|s| s.rows.iter().map(move |r| (r.trial, s.pair, r.a, r.b)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    for (t, p, a, b) in rows {
        wtr.write_record([
            t.to_string(),
            p.x_label().to_string(),
            p.y_label().to_string(),
            a.to_string(),
            b.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_pair_sheets<R: Read>(r: R) -> Result<[PairSheet; 4]> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &PAIR_HEADER)?;
    let mut rows: [Vec<PairRow>; 4] = Default::default();
    for rec in rdr.records() {
        let rec = rec?;
        let pair = SettingPair::from_labels(&rec[1], &rec[2])?;
        rows[pair.index()].push(PairRow {
            trial: parse(&rec[0], "trial")?,
            a: parse_pm1(&rec[3])?,
            b: parse_pm1(&rec[4])?,
        });
    }
    let mut sheets = Vec::with_capacity(4);
    for (i, r) in rows.into_iter().enumerate() {
        let pair = SettingPair::from_index(i);
        if r.is_empty() {
            return Err(Error::input(format!("no rows for setting pair {pair}")));
        }
        sheets.push(PairSheet::new(pair, None, r)?);
    }
    order_sheets(sheets)
}

pub fn write_quadruple_sheet<W: Write>(w: W, sheet: &QuadrupleSheet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(QUADRUPLE_HEADER)?;
    for (t, q) in sheet.rows.iter().enumerate() {
        wtr.write_record([
            t.to_string(),
            q[0].to_string(),
            q[1].to_string(),
            q[2].to_string(),
            q[3].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_quadruple_sheet<R: Read>(r: R) -> Result<QuadrupleSheet> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &QUADRUPLE_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push([
            parse_pm1(&rec[1])?,
            parse_pm1(&rec[2])?,
            parse_pm1(&rec[3])?,
            parse_pm1(&rec[4])?,
        ]);
    }
    QuadrupleSheet::new(None, rows)
}

pub fn write_count_table<W: Write>(w: W, table: &CountTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COUNT_HEADER)?;
    for p in SettingPair::ALL {
        for (i, a) in ["1", "-1"].iter().enumerate() {
            for (j, b) in ["1", "-1"].iter().enumerate() {
                wtr.write_record([p.label(), a, b, &table.counts[p.index()][i][j].to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_count_table<R: Read>(r: R) -> Result<CountTable> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &COUNT_HEADER)?;
    let mut counts = [[[0u64; 2]; 2]; 4];
    for rec in rdr.records() {
        let rec = rec?;
        let p = SettingPair::parse(&rec[0])?;
        let a = usize::from(parse_pm1(&rec[1])? < 0);
        let b = usize::from(parse_pm1(&rec[2])? < 0);
        counts[p.index()][a][b] += parse::<u64>(&rec[3], "count")?;
    }
    Ok(CountTable { counts })
}

/// Both arms' events merged in time order (ties: arm A first).
pub fn write_event_streams<W: Write>(w: W, streams: &EventStreams) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(EVENT_HEADER)?;
    let mut all: Vec<&DetectionEvent> = streams.a.iter().chain(&streams.b).collect();
    all.sort_by(|x, y| {
        x.t.total_cmp(&y.t)
            .then((x.arm == Arm::B).cmp(&(y.arm == Arm::B)))
            .then(x.trial_id.cmp(&y.trial_id))
    });
    for e in all {
        let (arm, setting) = match e.arm {
            Arm::A => ("A", crate::chsh::X_LABELS[e.setting]),
            Arm::B => ("B", crate::chsh::Y_LABELS[e.setting]),
        };
        wtr.write_record([
            format!("{:.17e}", e.t),
            arm.to_string(),
            setting.to_string(),
            e.outcome.to_string(),
            e.trial_id.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Angles are filled from `design` when given, NaN otherwise.
pub fn read_event_streams<R: Read>(r: R, design: Option<&Design>) -> Result<EventStreams> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &EVENT_HEADER)?;
    let mut out = EventStreams::default();
    for rec in rdr.records() {
        let rec = rec?;
        let t: f64 = parse(&rec[0], "time")?;
        let (arm, labels) = match &rec[1] {
            "A" => (Arm::A, crate::chsh::X_LABELS),
            "B" => (Arm::B, crate::chsh::Y_LABELS),
            other => return Err(Error::input(format!("unknown arm {other:?}"))),
        };
        let setting = labels
            .iter()
            .position(|l| *l == &rec[2])
            .ok_or_else(|| Error::input(format!("unknown setting {:?}", &rec[2])))?;
        let angle = design.map_or(f64::NAN, |d| match arm {
            Arm::A => d.x_angle(setting),
            Arm::B => d.y_angle(setting),
        });
        let e = DetectionEvent {
            t,
            arm,
            setting,
            angle,
            outcome: parse_pm1(&rec[3])?,
            trial_id: parse(&rec[4], "trial_id")?,
        };
        match arm {
            Arm::A => out.a.push(e),
            Arm::B => out.b.push(e),
        }
    }
    Ok(out)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(";")
}

/// Hidden traces, one row per trial. Vector-valued instrument states are
/// `;`-separated.
pub fn write_hidden_traces<W: Write>(w: W, rows: &[(u64, SettingPair, HiddenTrace)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRACE_HEADER)?;
    for (t, p, h) in rows {
        wtr.write_record([
            t.to_string(),
            p.x_label().to_string(),
            p.y_label().to_string(),
            format!("{:.17e}", h.lambda1),
            format!("{:.17e}", h.lambda2),
            join(&h.mu_x),
            join(&h.mu_y),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_run_series<W: Write>(w: W, series: &RunSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SERIES_HEADER)?;
    for (t, o) in series.outcomes.iter().enumerate() {
        wtr.write_record([t.to_string(), o.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Raw outcome column of a `trial,outcome` file.
pub fn read_outcomes<R: Read>(r: R) -> Result<Vec<i64>> {
    let mut rdr = reader(r);
    check_header(&mut rdr, &SERIES_HEADER)?;
    let mut outcomes = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        outcomes.push(parse::<i64>(&rec[1], "outcome")?);
    }
    Ok(outcomes)
}

pub fn read_run_series<R: Read>(r: R, run_id: usize, alphabet: &[i64]) -> Result<RunSeries> {
    RunSeries::with_alphabet(run_id, read_outcomes(r)?, alphabet.to_vec())
}
