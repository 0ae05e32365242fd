use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::backtest::WindowRecord;
use super::metrics::Metrics;
use crate::config::{Mode, RunConfig};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YearRow {
    /// One-based test year.
    pub year: usize,
    pub windows: usize,
    pub points: usize,
    pub model: Metrics,
    pub naive: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub model: Metrics,
    pub naive: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub index: String,
    pub years: Vec<YearRow>,
    /// Arithmetic mean of the yearly rows (R over years where it is defined).
    pub average: Averages,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    /// Number of (window, index, fitted statistic) stamps checked.
    pub checked: usize,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub config_hash: String,
    pub indexes: Vec<IndexReport>,
    pub audit: LeakageAudit,
    pub windows: Vec<WindowRecord>,
}

fn mean_metrics(rows: &[&Metrics]) -> Metrics {
    let n = rows.len() as f64;
    let rs: Vec<f64> = rows.iter().filter_map(|m| m.r).collect();
    Metrics {
        mape: rows.iter().map(|m| m.mape).sum::<f64>() / n,
        r: if rs.is_empty() {
            None
        } else {
            Some(rs.iter().sum::<f64>() / rs.len() as f64)
        },
        theil_u: rows.iter().map(|m| m.theil_u).sum::<f64>() / n,
    }
}

fn audit(records: &[WindowRecord]) -> LeakageAudit {
    let mut checked = 0;
    let mut violations = Vec::new();
    for r in records {
        for s in &r.stamps {
            checked += 1;
            if s.last >= r.test_start {
                violations.push(format!(
                    "{} window {}: {} fitted on data through {} but testing starts {}",
                    r.index, r.window, s.component, s.last, r.test_start
                ));
            }
        }
    }
    LeakageAudit {
        checked,
        violations,
    }
}

pub(crate) fn assemble_report(cfg: &RunConfig, records: Vec<WindowRecord>) -> Result<EvalReport> {
    let mut indexes: Vec<IndexReport> = Vec::new();
    let mut names: Vec<&str> = Vec::new();
    for r in &records {
        if !names.contains(&r.index.as_str()) {
            names.push(&r.index);
        }
    }
    for name in names {
        let mine: Vec<&WindowRecord> = records.iter().filter(|r| r.index == name).collect();
        let last_year = mine.iter().map(|r| r.year).max().unwrap_or(0);
        let mut years = Vec::new();
        for year in 0..=last_year {
            let ws: Vec<&&WindowRecord> = mine.iter().filter(|r| r.year == year).collect();
            if ws.is_empty() {
                continue;
            }
            let pts: Vec<_> = ws.iter().flat_map(|r| r.points.iter()).collect();
            let actual: Vec<f64> = pts.iter().map(|p| p.actual).collect();
            let pred: Vec<f64> = pts.iter().map(|p| p.predicted).collect();
            let naive: Vec<f64> = pts.iter().map(|p| p.naive).collect();
            years.push(YearRow {
                year: year + 1,
                windows: ws.len(),
                points: pts.len(),
                model: Metrics::compute(&actual, &pred)?,
                naive: Metrics::compute(&actual, &naive)?,
            });
        }
        let average = Averages {
            model: mean_metrics(&years.iter().map(|y| &y.model).collect::<Vec<_>>()),
            naive: mean_metrics(&years.iter().map(|y| &y.naive).collect::<Vec<_>>()),
        };
        indexes.push(IndexReport {
            index: name.to_string(),
            years,
            average,
        });
    }
    Ok(EvalReport {
        mode: cfg.mode,
        config_hash: cfg.hash(),
        indexes,
        audit: audit(&records),
        windows: records,
    })
}

/// Writes floats as 17 significant digits in exponent form.
struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Canonical JSON: struct field order, floats with 17 significant digits.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits);
    value.serialize(&mut ser).expect("report serializes");
    out.push(b'\n');
    out
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl EvalReport {
    pub fn to_json(&self) -> Vec<u8> {
        to_canonical_json(self)
    }

    /// `index,year,model,metric,value`; the year column holds `average` for
    /// the averages row and R is left empty where undefined.
    pub fn write_metrics_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "index,year,model,metric,value")?;
        for idx in &self.indexes {
            let rows = idx
                .years
                .iter()
                .map(|y| (y.year.to_string(), &y.model, &y.naive))
                .chain(std::iter::once((
                    "average".to_string(),
                    &idx.average.model,
                    &idx.average.naive,
                )));
            for (year, model, naive) in rows {
                for (label, m) in [("cgboost", model), ("naive", naive)] {
                    writeln!(w, "{},{year},{label},mape,{}", idx.index, fmt17(m.mape))?;
                    writeln!(
                        w,
                        "{},{year},{label},r,{}",
                        idx.index,
                        m.r.map(fmt17).unwrap_or_default()
                    )?;
                    writeln!(
                        w,
                        "{},{year},{label},theil_u,{}",
                        idx.index,
                        fmt17(m.theil_u)
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Predicted-vs-actual curves, one row per forecast day.
    pub fn write_curves_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(
            w,
            "index,window,year,date,close_today,actual,predicted,naive"
        )?;
        for r in &self.windows {
            for p in &r.points {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    r.index,
                    r.window,
                    r.year + 1,
                    p.date,
                    fmt17(p.close_today),
                    fmt17(p.actual),
                    fmt17(p.predicted),
                    fmt17(p.naive)
                )?;
            }
        }
        Ok(())
    }
}
