//! Plain CSV tables with bit-faithful floats.

use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    /// 17 significant digits, enough to round-trip every `f64`.
    pub fn render(&self) -> String {
        match self {
            Cell::Num(x) => format_float(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(x.to_string())
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

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(invalid(
                "row",
                format!(
                    "has {} cells, table has {} columns",
                    row.len(),
                    self.headers.len()
                ),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// RFC 4180 CSV with a header line.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("writing to memory");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .expect("writing to memory");
        }
        w.into_inner().expect("flushing to memory")
    }

    /// Reads a CSV produced by `to_csv`. Cells that parse as numbers become
    /// `Num`, everything else `Text`.
    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let headers = r
            .headers()
            .map_err(|e| invalid("csv", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut table = Table {
            headers,
            rows: Vec::new(),
        };
        for rec in r.records() {
            let rec = rec.map_err(|e| invalid("csv", e.to_string()))?;
            let row = rec
                .iter()
                .map(|s| match s.parse::<f64>() {
                    Ok(x) if s.contains(['.', 'e', 'n', 'N']) => Cell::Num(x),
                    _ => match s.parse::<i64>() {
                        Ok(i) => Cell::Int(i),
                        Err(_) => Cell::Text(s.to_string()),
                    },
                })
                .collect();
            table.push(row)?;
        }
        Ok(table)
    }
}
