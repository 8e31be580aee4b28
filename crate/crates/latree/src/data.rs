//! Weighted categorical records with missing entries, read and written as
//! CSV. The first row names the variables; cells are integer state indices;
//! an empty cell is a missing value; an optional `_weight` column carries
//! positive row weights.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const WEIGHT_COLUMN: &str = "_weight";

#[derive(Debug, Clone)]
pub struct DataSet {
    variables: Vec<String>,
    records: Vec<Vec<Option<u32>>>,
    weights: Vec<f64>,
}

impl DataSet {
    pub fn from_records(
        variables: Vec<String>,
        records: Vec<Vec<Option<u32>>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let weights = weights.unwrap_or_else(|| vec![1.0; records.len()]);
        if weights.len() != records.len() {
            return Err(Error::InvalidConfig(
                "weights and records length mismatch".into(),
            ));
        }
        for (i, r) in records.iter().enumerate() {
            if r.len() != variables.len() {
                return Err(Error::InvalidConfig(format!(
                    "record {i} has {} cells, expected {}",
                    r.len(),
                    variables.len()
                )));
            }
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("weights must be positive".into()));
        }
        Ok(DataSet {
            variables,
            records,
            weights,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn records(&self) -> &[Vec<Option<u32>>] {
        &self.records
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total weight N.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Smallest cardinality consistent with the observed values, at least 2.
    pub fn inferred_cardinalities(&self) -> Vec<usize> {
        let mut cards = vec![2usize; self.variables.len()];
        for rec in &self.records {
            for (j, cell) in rec.iter().enumerate() {
                if let Some(v) = cell {
                    cards[j] = cards[j].max(*v as usize + 1);
                }
            }
        }
        cards
    }

    /// Merge identical rows, summing weights; first-occurrence order is kept.
    pub fn deduped(&self) -> DataSet {
        let mut index: HashMap<&[Option<u32>], usize> = HashMap::new();
        let mut records = Vec::new();
        let mut weights = Vec::new();
        for (rec, &w) in self.records.iter().zip(&self.weights) {
            match index.get(rec.as_slice()) {
                Some(&i) => weights[i] += w,
                None => {
                    index.insert(rec.as_slice(), records.len());
                    records.push(rec.clone());
                    weights.push(w);
                }
            }
        }
        DataSet {
            variables: self.variables.clone(),
            records,
            weights,
        }
    }

    /// Keep only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<DataSet> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            cols.push(
                self.column_index(n)
                    .ok_or_else(|| Error::UnknownVariable(n.clone()))?,
            );
        }
        let records = self
            .records
            .iter()
            .map(|r| cols.iter().map(|&c| r[c]).collect())
            .collect();
        DataSet::from_records(names.to_vec(), records, Some(self.weights.clone()))
    }

    pub fn read_csv(path: &Path, dedupe: bool) -> Result<DataSet> {
        let text = std::fs::read_to_string(path)?;
        let ds = Self::parse_csv(&text, &path.display().to_string())?;
        Ok(if dedupe { ds.deduped() } else { ds })
    }

    pub fn parse_csv(text: &str, path: &str) -> Result<DataSet> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::DataFormat {
                path: path.to_string(),
                line: 1,
                msg: e.to_string(),
            })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut seen = HashMap::new();
        for h in &headers {
            if seen.insert(h.clone(), ()).is_some() {
                return Err(Error::DataFormat {
                    path: path.to_string(),
                    line: 1,
                    msg: format!("duplicate header name `{h}`"),
                });
            }
        }
        let weight_col = headers.iter().position(|h| h == WEIGHT_COLUMN);
        let variables: Vec<String> = headers
            .iter()
            .filter(|h| h.as_str() != WEIGHT_COLUMN)
            .cloned()
            .collect();
        let mut records = Vec::new();
        let mut weights = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| Error::DataFormat {
                path: path.to_string(),
                line,
                msg: e.to_string(),
            })?;
            if row.len() != headers.len() {
                return Err(Error::DataFormat {
                    path: path.to_string(),
                    line,
                    msg: format!("row has {} cells, expected {}", row.len(), headers.len()),
                });
            }
            let mut rec = Vec::with_capacity(variables.len());
            let mut weight = 1.0;
            for (j, cell) in row.iter().enumerate() {
                let cell = cell.trim();
                if Some(j) == weight_col {
                    weight = cell.parse::<f64>().map_err(|_| Error::DataFormat {
                        path: path.to_string(),
                        line,
                        msg: format!("weight `{cell}` is not a number"),
                    })?;
                    if !(weight > 0.0) || !weight.is_finite() {
                        return Err(Error::DataFormat {
                            path: path.to_string(),
                            line,
                            msg: format!("weight {weight} must be positive"),
                        });
                    }
                    continue;
                }
                if cell.is_empty() {
                    rec.push(None);
                } else {
                    let v = cell.parse::<u32>().map_err(|_| Error::DataFormat {
                        path: path.to_string(),
                        line,
                        msg: format!("cell `{cell}` is not a nonnegative integer"),
                    })?;
                    rec.push(Some(v));
                }
            }
            records.push(rec);
            weights.push(weight);
        }
        if records.is_empty() {
            return Err(Error::DataFormat {
                path: path.to_string(),
                line: 1,
                msg: "no records".into(),
            });
        }
        DataSet::from_records(variables, records, Some(weights))
    }

    pub fn to_csv_string(&self) -> String {
        let all_unit = self.weights.iter().all(|&w| w == 1.0);
        let mut out = String::new();
        out.push_str(&self.variables.join(","));
        if !all_unit {
            out.push(',');
            out.push_str(WEIGHT_COLUMN);
        }
        out.push('\n');
        for (rec, w) in self.records.iter().zip(&self.weights) {
            let cells: Vec<String> = rec
                .iter()
                .map(|c| c.map(|v| v.to_string()).unwrap_or_default())
                .collect();
            out.push_str(&cells.join(","));
            if !all_unit {
                out.push(',');
                out.push_str(&format_weight(*w));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn format_weight(w: f64) -> String {
    if w == w.trunc() && w.abs() < 1e15 {
        format!("{}", w as i64)
    } else {
        format!("{w}")
    }
}
