//! File formats: price CSV and JSON Lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::PriceBar;

pub const PRICE_HEADER: [&str; 7] = ["stock_id", "date", "open", "high", "low", "close", "volume"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Deserialize)]
struct PriceRow {
    stock_id: String,
    date: String,
    open: String,
    high: String,
    low: String,
    close: String,
    volume: String,
}

/// Read `stock_id,date,open,high,low,close,volume` rows. Prices are decimal
/// strings converted to `f64` once here. Bars are validated; ordering is not.
pub fn read_prices_from<R: Read>(reader: R, name: &str) -> Result<Vec<PriceBar>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(name, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != PRICE_HEADER {
        return Err(parse_err(
            name,
            1,
            format!("expected header {:?}, got {:?}", PRICE_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut bars = Vec::new();
    for (i, row) in rdr.deserialize::<PriceRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(name, line, e.to_string()))?;
        let num = |field: &str, v: &str| -> Result<f64> {
            crate::parsing::parse_number(v)
                .filter(|_| !v.contains('%'))
                .ok_or_else(|| parse_err(name, line, format!("{field} is not a decimal number: {v:?}")))
        };
        let bar = PriceBar {
            date: NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
                .map_err(|e| parse_err(name, line, format!("bad date {:?}: {e}", row.date)))?,
            open: num("open", &row.open)?,
            high: num("high", &row.high)?,
            low: num("low", &row.low)?,
            close: num("close", &row.close)?,
            volume: num("volume", &row.volume)?,
            stock_id: row.stock_id,
        };
        bar.validate().map_err(|e| parse_err(name, line, e.to_string()))?;
        bars.push(bar);
    }
    Ok(bars)
}

pub fn read_prices(path: &Path) -> Result<Vec<PriceBar>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_prices_from(file, &path.display().to_string())
}

/// Prices are written with their shortest round-trip decimal form.
pub fn write_prices<W: Write>(writer: W, bars: &[PriceBar]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    };
    w.write_record(PRICE_HEADER).map_err(to_io)?;
    for b in bars {
        w.write_record([
            b.stock_id.clone(),
            b.date.to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

fn parse_err(path: &str, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message,
    }
}

/// Parse JSON Lines. Blank lines are skipped; errors carry `name:line`.
pub fn read_jsonl_from<T: DeserializeOwned, R: BufRead>(reader: R, name: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(name, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_jsonl_from(BufReader::new(file), &path.display().to_string())
}

pub fn write_jsonl_to<T: Serialize, W: Write>(mut writer: W, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, &item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl_to(BufWriter::new(file), items).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(std::io::Error::other)
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_csv_round_trip() {
        let csv = "stock_id,date,open,high,low,close,volume\nA,2024-01-02,10.5,11,10,10.75,1200\nA,2024-01-03,10.9,11.2,10.8,11.1,900\n";
        let bars = read_prices_from(csv.as_bytes(), "t.csv").unwrap();
        assert_eq!(bars.len(), 2);
        assert_eq!(bars[0].open, 10.5);
        let mut out = Vec::new();
        write_prices(&mut out, &bars).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), csv);
    }

    #[test]
    fn price_csv_errors_carry_line() {
        let csv = "stock_id,date,open,high,low,close,volume\nA,2024-01-02,10.5,11,10,10.75,1200\nA,2024-13-03,1,1,1,1,1\n";
        let err = read_prices_from(csv.as_bytes(), "t.csv").unwrap_err().to_string();
        assert!(err.starts_with("t.csv:3:"), "{err}");

        let bad_header = "id,date,open,high,low,close,volume\n";
        assert!(read_prices_from(bad_header.as_bytes(), "t.csv").is_err());

        let thousands = "stock_id,date,open,high,low,close,volume\nA,2024-01-02,\"1,000\",1,1,1,1\n";
        assert!(read_prices_from(thousands.as_bytes(), "t.csv").is_err());
    }

    #[test]
    fn jsonl_line_numbers() {
        let text = "{\"a\":1}\n\n{\"a\":\n";
        #[derive(Deserialize)]
        #[allow(dead_code)]
        struct A {
            a: u32,
        }
        let err = read_jsonl_from::<A, _>(text.as_bytes(), "x.jsonl").err().unwrap().to_string();
        assert!(err.starts_with("x.jsonl:3:"), "{err}");
    }
}
