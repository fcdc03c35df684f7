//! CSV outputs: regret table, deployed schedules and optimizer traces.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::HarnessError;
use crate::sweep::SweepResult;

pub const REGRET_TABLE: &str = "regret_table.csv";
pub const SCHEDULES: &str = "schedules.csv";
pub const CONVERGENCE: &str = "convergence.csv";

/// Rounds to 6 significant digits and prints the shortest representation.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// One row of `regret_table.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub strategy: String,
    pub items: usize,
    pub scale: usize,
    pub pattern: String,
    pub mean_regret: f64,
    pub se: f64,
}

/// Table rows in output order: every cell, then best-in-hindsight rows.
/// Values are rounded the way they are written.
pub fn table_rows(result: &SweepResult) -> Vec<TableRow> {
    let round = |v: f64| sig6(v).parse::<f64>().expect("rounded float parses");
    let cells = result.cells.iter().map(|c| (&c.key, c.regret));
    let best = result.best.iter().map(|b| (&b.key, b.regret));
    cells
        .chain(best)
        .map(|(k, r)| TableRow {
            strategy: k.strategy.clone(),
            items: k.items,
            scale: k.scale,
            pattern: k.pattern.clone(),
            mean_regret: round(r.mean),
            se: round(r.se),
        })
        .collect()
}

pub fn parse_regret_table(text: &str) -> Result<Vec<TableRow>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64, HarnessError> {
            field(i).parse().map_err(|_| HarnessError::Config {
                path: format!("{REGRET_TABLE}:{}", rows.len() + 2),
                message: format!("bad number {:?}", field(i)),
            })
        };
        rows.push(TableRow {
            strategy: field(0).to_string(),
            items: num(1)? as usize,
            scale: num(2)? as usize,
            pattern: field(3).to_string(),
            mean_regret: num(4)?,
            se: num(5)?,
        });
    }
    Ok(rows)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn finish(path: &Path, wtr: csv::Writer<Vec<u8>>) -> Result<PathBuf, HarnessError> {
    let bytes = wtr.into_inner().map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    fs::write(path, bytes).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

/// Writes the three report files into `dir`, creating it if needed.
pub fn emit_reports(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["strategy", "K", "N", "pattern", "mean_regret", "se"])?;
    for r in table_rows(result) {
        wtr.write_record([
            r.strategy,
            r.items.to_string(),
            r.scale.to_string(),
            r.pattern,
            sig6(r.mean_regret),
            sig6(r.se),
        ])?;
    }
    written.push(finish(&dir.join(REGRET_TABLE), wtr)?);

    // Horizons differ across patterns, so rows carry exactly their own T.
    let width = result
        .cells
        .iter()
        .flat_map(|c| c.schedules.iter().map(|(_, s)| s.len()))
        .max()
        .unwrap_or(0);
    let mut wtr = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    let mut header: Vec<String> = ["strategy", "K", "N", "pattern", "replication"]
        .map(String::from)
        .to_vec();
    header.extend((1..=width).map(|t| format!("eps_{t}")));
    wtr.write_record(&header)?;
    for c in &result.cells {
        for (rep, rates) in &c.schedules {
            let mut row = vec![
                c.key.strategy.clone(),
                c.key.items.to_string(),
                c.key.scale.to_string(),
                c.key.pattern.clone(),
                rep.to_string(),
            ];
            row.extend(rates.iter().map(|v| sig6(*v)));
            wtr.write_record(&row)?;
        }
    }
    written.push(finish(&dir.join(SCHEDULES), wtr)?);

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "strategy",
        "K",
        "N",
        "pattern",
        "replication",
        "solve_period",
        "step",
        "objective",
    ])?;
    for c in &result.cells {
        for t in &c.traces {
            wtr.write_record([
                c.key.strategy.clone(),
                c.key.items.to_string(),
                c.key.scale.to_string(),
                c.key.pattern.clone(),
                t.replication.to_string(),
                t.solve_period.to_string(),
                t.step.to_string(),
                sig6(t.objective),
            ])?;
        }
    }
    written.push(finish(&dir.join(CONVERGENCE), wtr)?);
    Ok(written)
}
