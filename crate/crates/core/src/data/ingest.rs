use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::features::{Bar, SeriesFrame};

/// Leading columns every input file must carry, in this order.
pub const REQUIRED_COLUMNS: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

/// A parsed frame plus anything worth telling the user about.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub frame: SeriesFrame,
    pub warnings: Vec<String>,
}

/// Reads a CSV file; the index name is the file stem.
pub fn ingest(path: &Path) -> Result<Ingested> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Data(format!("cannot derive index name from {}", path.display())))?
        .to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).context(path.display()))?;
    ingest_reader(&name, file).map_err(|e| e.context(path.display()))
}

/// Parses `date,open,high,low,close,volume[,macro...]` with ISO-8601 dates.
///
/// Unsorted rows are sorted (with a warning); duplicate dates are rejected.
pub fn ingest_reader(index_name: &str, reader: impl Read) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if header.len() < REQUIRED_COLUMNS.len() || header[..6] != REQUIRED_COLUMNS {
        return Err(Error::Data(format!(
            "header must start with {}, got {}",
            REQUIRED_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let macro_names: Vec<String> = header[6..].to_vec();
    let mut warnings = Vec::new();
    if macro_names.is_empty() {
        warnings.push(format!(
            "{index_name}: no macro columns; features use prices and indicators only"
        ));
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "line {line}: expected {} fields, got {}",
                header.len(),
                rec.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("line {line}: bad date `{}`: {e}", &rec[0])))?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "line {line}: column `{}` is not a number: `{}`",
                    header[i], &rec[i]
                ))
            })
        };
        rows.push(Bar {
            date,
            open: num(1)?,
            high: num(2)?,
            low: num(3)?,
            close: num(4)?,
            volume: num(5)?,
            macros: (6..header.len()).map(num).collect::<Result<_>>()?,
        });
    }
    if rows.windows(2).any(|w| w[1].date < w[0].date) {
        warnings.push(format!(
            "{index_name}: rows were not in date order and have been sorted"
        ));
        rows.sort_by_key(|b| b.date);
    }
    if let Some(w) = rows.windows(2).find(|w| w[1].date == w[0].date) {
        return Err(Error::Data(format!(
            "{index_name}: duplicate date {}",
            w[0].date
        )));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let frame = SeriesFrame::new(index_name, macro_names, rows)?;
    Ok(Ingested { frame, warnings })
}

/// Writes a frame in the ingest schema. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_frame(frame: &SeriesFrame, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(frame.macro_names().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for b in frame.rows() {
        let mut rec = vec![
            b.date.format("%Y-%m-%d").to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ];
        rec.extend(b.macros.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "date,open,high,low,close,volume,rate\n\
        2020-01-02,10,11,9,10.5,100,1.2\n\
        2020-01-03,10.5,11,10,10.8,120,1.3\n\
        2020-01-06,10.8,11.5,10.1,11.2,90,1.25\n";

    #[test]
    fn reads_well_formed_file() {
        let ing = ingest_reader("idx", GOOD.as_bytes()).unwrap();
        assert_eq!(ing.frame.len(), 3);
        assert_eq!(ing.frame.macro_names(), &["rate".to_string()]);
        assert!(ing.warnings.is_empty());
    }

    #[test]
    fn rejects_high_below_low_naming_date() {
        let bad = GOOD.replace("2020-01-03,10.5,11,10,10.8", "2020-01-03,10.5,9,10,10.8");
        let err = ingest_reader("idx", bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("2020-01-03"), "{err}");
    }

    #[test]
    fn sorts_unsorted_rows_with_warning() {
        let lines: Vec<&str> = GOOD.lines().collect();
        let shuffled = format!("{}\n{}\n{}\n{}\n", lines[0], lines[3], lines[1], lines[2]);
        let ing = ingest_reader("idx", shuffled.as_bytes()).unwrap();
        assert_eq!(ing.warnings.len(), 1);
        let dates: Vec<_> = ing
            .frame
            .rows()
            .iter()
            .map(|b| b.date.to_string())
            .collect();
        assert_eq!(dates, ["2020-01-02", "2020-01-03", "2020-01-06"]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = GOOD.replace("10.8,120", "abc,120");
        let err = ingest_reader("idx", bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let bad = GOOD.replace("2020-01-06", "06/01/2020");
        assert!(ingest_reader("idx", bad.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("line 4"));
    }

    #[test]
    fn duplicates_and_bad_header() {
        let dup = format!("{GOOD}2020-01-06,10.8,11.5,10.1,11.2,90,1.25\n");
        assert!(ingest_reader("idx", dup.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        assert!(ingest_reader("idx", "date,close\n2020-01-01,1\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_macros_warns() {
        let s = "date,open,high,low,close,volume\n2020-01-02,10,11,9,10.5,100\n";
        let ing = ingest_reader("idx", s.as_bytes()).unwrap();
        assert_eq!(ing.warnings.len(), 1);
    }
}
