//! Human-readable summary of a run directory.

use crate::error::{AppError, AppResult};
use std::fmt::Write;
use std::path::Path;

/// Report sections and the artifact each one is built from.
pub const SECTIONS: [(&str, &str); 6] = [
    ("Reconstruction", "distance.csv"),
    ("Historical calibration", "calibration_hist.csv"),
    ("Risk-neutral calibration", "calibration_rn.csv"),
    ("Rating properties", "properties.csv"),
    ("Nested SSA error", "ssa_error.csv"),
    ("XVA", "xva.csv"),
];

fn read(dir: &Path, name: &str) -> AppResult<Option<String>> {
    let path = dir.join(name);
    match std::fs::read_to_string(&path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(AppError::io(&path, e)),
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|f| f.trim().to_string()).collect())
        .collect()
}

/// Renders rows as an aligned text table.
fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().enumerate().map(|(c, v)| format!("{v:>w$}", w = widths[c])).collect();
        writeln!(s, "  {}", cells.join("  ")).unwrap();
    }
    s
}

/// Property rows pivoted to one line per property, one column per checkpoint.
fn property_table(text: &str) -> String {
    let rows = csv_rows(text);
    let mut times: Vec<String> = Vec::new();
    let mut props: Vec<(String, Vec<String>)> = Vec::new();
    for r in rows.iter().skip(1).filter(|r| r.len() >= 4) {
        if !times.contains(&r[1]) {
            times.push(r[1].clone());
        }
        match props.iter_mut().find(|(p, _)| *p == r[0]) {
            Some((_, v)) => v.push(format!("{} ({})", r[3], r[2])),
            None => props.push((r[0].clone(), vec![format!("{} ({})", r[3], r[2])])),
        }
    }
    let mut out = vec![std::iter::once("property \\ t".to_string()).chain(times).collect::<Vec<_>>()];
    out.extend(props.into_iter().map(|(p, v)| std::iter::once(p).chain(v).collect()));
    format!("{}  cells: violating fraction (count)\n", table(&out))
}

/// Builds the report for `dir`. Errors when no artifact is present.
pub fn build_report(dir: &Path) -> AppResult<String> {
    let mut found = Vec::new();
    for (title, file) in SECTIONS {
        found.push((title, file, read(dir, file)?));
    }
    if found.iter().all(|(_, _, t)| t.is_none()) {
        let names: Vec<&str> = SECTIONS.iter().map(|(_, f)| *f).collect();
        return Err(AppError::validation(format!(
            "{} contains no run artifacts; expected any of: {}",
            dir.display(),
            names.join(", ")
        )));
    }
    let mut s = String::from("Run report\n");
    for (title, file, text) in found {
        writeln!(s, "\n== {title} ==").unwrap();
        let Some(text) = text else {
            writeln!(s, "  absent (missing {file})").unwrap();
            continue;
        };
        let body = match file {
            "properties.csv" => property_table(&text),
            "xva.csv" => {
                let rows = csv_rows(&text);
                let keep = [0, 1, 2, 3, 4, 5, 6, 11];
                table(
                    &rows
                        .iter()
                        .map(|r| keep.iter().filter_map(|&c| r.get(c).cloned()).collect())
                        .collect::<Vec<_>>(),
                )
            }
            "distance.csv" => format!("  distance matrix |R_rec - R_cohort|:\n{}", table(&csv_rows(&text))),
            _ => table(&csv_rows(&text)),
        };
        s.push_str(&body);
    }
    Ok(s)
}
