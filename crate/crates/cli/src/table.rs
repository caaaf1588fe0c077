//! Result tables and their CSV / JSON encodings.
//!
//! Floats are written with 17 significant digits in exponent notation, so a
//! table read back from its CSV compares equal to the one written.

use std::fmt;

use catalyst_core::{Error, Result};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.16e}")
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Float(x) => f.write_str(&format_float(*x)),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl Cell {
    /// Integers first, then floats, otherwise text.
    pub fn parse(field: &str) -> Cell {
        if let Ok(i) = field.parse::<i64>() {
            Cell::Int(i)
        } else if let Ok(x) = field.parse::<f64>() {
            Cell::Float(x)
        } else {
            Cell::Text(field.to_string())
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            Cell::Float(x) if x.is_finite() => Value::from(*x),
            Cell::Float(x) => Value::from(format_float(*x)),
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rejects NaN anywhere in the table.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if matches!(cell, Cell::Float(x) if x.is_nan()) {
                    return Err(Error::NonFinite(format!("table {} row {i} column {}", self.name, self.columns[c])));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string())).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self.columns.iter().cloned().zip(row.iter().map(Cell::to_json)).collect();
                Value::Object(obj)
            })
            .collect();
        let mut out = serde_json::to_vec_pretty(&rows)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn encode(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn from_csv(name: &str, bytes: &[u8]) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let parse = |e: csv::Error| Error::Parse(e.to_string());
        let columns: Vec<String> = r.headers().map_err(parse)?.iter().map(String::from).collect();
        if columns.is_empty() || (columns.len() == 1 && columns[0].is_empty()) {
            return Err(Error::Parse("missing header row".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(parse)?;
            rows.push(rec.iter().map(Cell::parse).collect());
        }
        Ok(Table { name: name.into(), columns, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Table {
        let mut t = Table::new("t", &["i", "x", "label"]);
        t.push(vec![1usize.into(), 0.1f64.into(), "a".into()]);
        t.push(vec![2usize.into(), (1.0f64 / 3.0).into(), "with, comma".into()]);
        t.push(vec![3usize.into(), f64::NEG_INFINITY.into(), "".into()]);
        t
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("t", &["a", "b"]);
        assert_eq!(t.to_csv().unwrap(), b"a,b\n");
        assert_eq!(Table::from_csv("t", b"a,b\n").unwrap(), t);
    }

    #[test]
    fn nan_is_rejected() {
        let mut t = Table::new("t", &["x"]);
        t.push(vec![f64::NAN.into()]);
        let err = t.to_csv().unwrap_err().to_string();
        assert!(err.contains("row 0 column x"), "{err}");
        assert!(t.to_json().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let bytes = t.to_csv().unwrap();
        assert!(String::from_utf8(bytes.clone()).unwrap().contains("3.3333333333333331e-1"));
        assert_eq!(Table::from_csv("t", &bytes).unwrap(), t);
    }

    #[test]
    fn json_mirrors_csv() {
        let v: Value = serde_json::from_slice(&sample().to_json().unwrap()).unwrap();
        assert_eq!(v[1]["x"].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(v[2]["x"], "-inf");
        assert_eq!(v[0]["label"], "a");
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(Table::from_csv("t", b"").is_err());
        assert!(Table::from_csv("t", b"a,b\n1\n").is_err());
    }

    proptest! {
        #[test]
        fn floats_survive_round_trip(xs in proptest::collection::vec(any::<f64>().prop_filter("nan", |x| !x.is_nan()), 0..20)) {
            let mut t = Table::new("t", &["x"]);
            for x in &xs {
                t.push(vec![(*x).into()]);
            }
            let back = Table::from_csv("t", &t.to_csv().unwrap()).unwrap();
            for (row, x) in back.rows.iter().zip(&xs) {
                prop_assert_eq!(&row[0], &Cell::Float(*x));
            }
        }
    }
}
