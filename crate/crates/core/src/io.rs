//! Plain CSV formats for matrices, parameters, targets and results.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! value read back is bit-identical to the value written. Lines and columns
//! in parse errors are 1-based.

use std::fmt::Write as _;

use crate::calibrate::PdTargets;
use crate::error::{Error, Result};
use crate::lie::basis_index_map;
use crate::matrix::SquareMatrix;
use crate::sde::{MeasureChange, MeasureKind, SdeParams};
use crate::ssa::RatingPath;
use crate::xva::{DefaultCounts, XvaResult};

/// Trailing column holding cohort withdrawal rates; ignored when reading.
pub const WITHDRAWAL_COLUMN: &str = "w_t";

struct Record {
    line: usize,
    fields: Vec<String>,
}

fn records(text: &str) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, 1, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push(Record {
            line,
            fields: rec.iter().map(str::to_string).collect(),
        });
    }
    Ok(out)
}

impl Record {
    fn number(&self, col: usize) -> Result<f64> {
        let s = self
            .fields
            .get(col)
            .ok_or_else(|| Error::parse(self.line, col + 1, "missing field"))?;
        s.parse::<f64>()
            .map_err(|_| Error::parse(self.line, col + 1, format!("'{s}' is not a number")))
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if self.fields.len() != n {
            let col = self.fields.len().min(n) + 1;
            return Err(Error::parse(
                self.line,
                col,
                format!("expected {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }

    fn expect_header(&self, want: &[&str]) -> Result<()> {
        self.expect_len(want.len())?;
        for (c, (got, w)) in self.fields.iter().zip(want).enumerate() {
            if !got.eq_ignore_ascii_case(w) {
                return Err(Error::parse(self.line, c + 1, format!("expected header '{w}', found '{got}'")));
            }
        }
        Ok(())
    }
}

fn header(it: &mut impl Iterator<Item = Record>) -> Result<Record> {
    it.next().ok_or_else(|| Error::parse(1, 1, "empty input"))
}

/// A labelled square matrix as read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledMatrix {
    pub labels: Vec<String>,
    pub matrix: SquareMatrix,
}

/// `from,<labels>` header, one row per rating. With `withdrawals` a trailing
/// `w_t` column is appended.
pub fn write_rating_matrix(labels: &[String], m: &SquareMatrix, withdrawals: Option<&[f64]>) -> Result<String> {
    let k = m.dim();
    if labels.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: labels.len(),
        });
    }
    if let Some(w) = withdrawals {
        if w.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: w.len(),
            });
        }
    }
    let mut s = String::from("from");
    for l in labels {
        write!(s, ",{l}").unwrap();
    }
    if withdrawals.is_some() {
        write!(s, ",{WITHDRAWAL_COLUMN}").unwrap();
    }
    s.push('\n');
    for i in 0..k {
        s.push_str(&labels[i]);
        for v in m.row(i) {
            write!(s, ",{v}").unwrap();
        }
        if let Some(w) = withdrawals {
            write!(s, ",{}", w[i]).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn read_rating_matrix(text: &str) -> Result<LabelledMatrix> {
    let mut it = records(text)?.into_iter();
    let head = header(&mut it)?;
    if !head.fields[0].eq_ignore_ascii_case("from") {
        return Err(Error::parse(head.line, 1, "expected header 'from'"));
    }
    let mut labels: Vec<String> = head.fields[1..].iter().map(|s| s.to_string()).collect();
    let extra = labels.last().is_some_and(|l| l.eq_ignore_ascii_case(WITHDRAWAL_COLUMN));
    if extra {
        labels.pop();
    }
    let k = labels.len();
    if k < 2 {
        return Err(Error::parse(head.line, 2, "need at least two rating columns"));
    }
    let width = 1 + k + usize::from(extra);
    let mut data = Vec::with_capacity(k * k);
    let mut rows = 0;
    for rec in it {
        if rows == k {
            return Err(Error::parse(rec.line, 1, format!("more than {k} rows")));
        }
        rec.expect_len(width)?;
        if rec.fields[0] != labels[rows] {
            return Err(Error::parse(
                rec.line,
                1,
                format!("expected row '{}', found '{}'", labels[rows], rec.fields[0]),
            ));
        }
        for c in 1..=k {
            data.push(rec.number(c)?);
        }
        rows += 1;
    }
    if rows != k {
        return Err(Error::parse(
            text.lines().count().max(1),
            1,
            format!("expected {k} rows, found {rows}"),
        ));
    }
    Ok(LabelledMatrix {
        labels,
        matrix: SquareMatrix::from_row_major(k, data)?,
    })
}

/// `from-to,a,b,sigma`, one row per generator coordinate.
pub fn write_sde_params(p: &SdeParams) -> String {
    let map = basis_index_map(p.k()).expect("valid params have K >= 2");
    let mut s = String::from("from-to,a,b,sigma\n");
    for i in 0..p.n_coords() {
        writeln!(s, "{},{},{},{}", map.label(i), p.a[i], p.b[i], p.sigma[i]).unwrap();
    }
    s
}

pub fn read_sde_params(text: &str, k: usize) -> Result<SdeParams> {
    let map = basis_index_map(k)?;
    let mut it = records(text)?.into_iter();
    header(&mut it)?.expect_header(&["from-to", "a", "b", "sigma"])?;
    let (mut a, mut b, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    let mut last_line = 1;
    for rec in it {
        let i = a.len();
        last_line = rec.line;
        if i == map.len() {
            return Err(Error::parse(rec.line, 1, format!("more than {} coordinates", map.len())));
        }
        rec.expect_len(4)?;
        if rec.fields[0] != map.label(i) {
            return Err(Error::parse(
                rec.line,
                1,
                format!("expected '{}', found '{}'", map.label(i), rec.fields[0]),
            ));
        }
        a.push(rec.number(1)?);
        b.push(rec.number(2)?);
        sigma.push(rec.number(3)?);
    }
    if a.len() != map.len() {
        return Err(Error::parse(
            last_line,
            1,
            format!("expected {} coordinates, found {}", map.len(), a.len()),
        ));
    }
    SdeParams::new(k, a, b, sigma)
}

/// `rating,pd`.
pub fn write_pd_targets(labels: &[String], pd: &PdTargets) -> Result<String> {
    write_vector("pd", labels, pd.as_slice())
}

pub fn read_pd_targets(text: &str) -> Result<(Vec<String>, PdTargets)> {
    let (labels, v) = read_vector(text, "pd")?;
    Ok((labels, PdTargets::new(v)?))
}

/// `rating,h`; the kind is carried separately.
pub fn write_measure(labels: &[String], m: &MeasureChange) -> Result<String> {
    write_vector("h", labels, m.h())
}

pub fn read_measure(text: &str, kind: MeasureKind) -> Result<(Vec<String>, MeasureChange)> {
    let (labels, v) = read_vector(text, "h")?;
    Ok((labels, MeasureChange::new(kind, v)?))
}

fn write_vector(name: &str, labels: &[String], v: &[f64]) -> Result<String> {
    if labels.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            found: labels.len(),
        });
    }
    let mut s = format!("rating,{name}\n");
    for (l, x) in labels.iter().zip(v) {
        writeln!(s, "{l},{x}").unwrap();
    }
    Ok(s)
}

fn read_vector(text: &str, name: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut it = records(text)?.into_iter();
    header(&mut it)?.expect_header(&["rating", name])?;
    let mut labels = Vec::new();
    let mut v = Vec::new();
    for rec in it {
        rec.expect_len(2)?;
        labels.push(rec.fields[0].to_string());
        v.push(rec.number(1)?);
    }
    Ok((labels, v))
}

/// `trajectory,time,rating` events; each path contributes its initial state
/// at time 0 followed by its jumps. Ratings are written as labels.
pub fn write_path_dump<'a>(labels: &[String], paths: impl IntoIterator<Item = &'a RatingPath>) -> String {
    let mut s = String::from("trajectory,time,rating\n");
    for (id, p) in paths.into_iter().enumerate() {
        writeln!(s, "{id},0,{}", labels[p.initial()]).unwrap();
        for (t, r) in p.events() {
            writeln!(s, "{id},{t},{}", labels[r]).unwrap();
        }
    }
    s
}

/// Parsed path dump: per trajectory, `(time, rating index)` in file order.
pub fn read_path_dump(text: &str, labels: &[String]) -> Result<Vec<Vec<(f64, usize)>>> {
    let mut it = records(text)?.into_iter();
    header(&mut it)?.expect_header(&["trajectory", "time", "rating"])?;
    let mut out: Vec<Vec<(f64, usize)>> = Vec::new();
    for rec in it {
        rec.expect_len(3)?;
        let id: usize = rec.fields[0]
            .parse()
            .map_err(|_| Error::parse(rec.line, 1, format!("'{}' is not a trajectory id", rec.fields[0])))?;
        if id > out.len() || id + 1 < out.len() {
            return Err(Error::parse(rec.line, 1, "trajectory ids must be consecutive"));
        }
        if id == out.len() {
            out.push(Vec::new());
        }
        let t = rec.number(1)?;
        let r = labels
            .iter()
            .position(|l| *l == rec.fields[2])
            .ok_or_else(|| Error::parse(rec.line, 3, format!("unknown rating '{}'", rec.fields[2])))?;
        out[id].push((t, r));
    }
    Ok(out)
}

pub const XVA_HEADER: [&str; 12] = [
    "regime",
    "cva",
    "dva",
    "bva",
    "cva_se",
    "dva_se",
    "bva_se",
    "bank_first",
    "counterparty_first",
    "simultaneous",
    "no_default",
    "paths",
];

pub fn write_xva_report(results: &[XvaResult]) -> String {
    let mut s = XVA_HEADER.join(",");
    s.push('\n');
    for r in results {
        let c = &r.counts;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.regime,
            r.cva,
            r.dva,
            r.bva,
            r.cva_se,
            r.dva_se,
            r.bva_se,
            c.bank_first,
            c.counterparty_first,
            c.simultaneous,
            c.none,
            r.paths
        )
        .unwrap();
    }
    s
}

pub fn read_xva_report(text: &str) -> Result<Vec<XvaResult>> {
    let mut it = records(text)?.into_iter();
    header(&mut it)?.expect_header(&XVA_HEADER)?;
    let mut out = Vec::new();
    for rec in it {
        rec.expect_len(XVA_HEADER.len())?;
        let count = |c: usize| -> Result<usize> {
            rec.fields[c]
                .parse()
                .map_err(|_| Error::parse(rec.line, c + 1, format!("'{}' is not a count", rec.fields[c])))
        };
        out.push(XvaResult {
            regime: rec.fields[0].to_string(),
            cva: rec.number(1)?,
            dva: rec.number(2)?,
            bva: rec.number(3)?,
            cva_se: rec.number(4)?,
            dva_se: rec.number(5)?,
            bva_se: rec.number(6)?,
            counts: DefaultCounts {
                bank_first: count(7)?,
                counterparty_first: count(8)?,
                simultaneous: count(9)?,
                none: count(10)?,
            },
            paths: count(11)?,
        });
    }
    Ok(out)
}
