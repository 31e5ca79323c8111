//! Reading observed summaries and sample tables from CSV.
//!
//! An observed dataset may be laid out as a single row, a single column, or
//! a two-column `(index, value)` table such as `day,area_mm2`. A leading row
//! with any non-numeric field is taken as a header. Blank lines and lines
//! starting with `#` are skipped.

use std::path::Path;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObservedError {
    #[error("no numeric rows")]
    Empty,
    #[error("line {line}: field {field} is not a finite number: {text:?}")]
    NonNumeric { line: usize, field: usize, text: String },
    #[error("line {line} has {got} fields, expected {expected}")]
    Ragged { line: usize, expected: usize, got: usize },
    #[error("{rows} rows of {cols} columns is not a summary vector layout")]
    Shape { rows: usize, cols: usize },
    #[error("{0}")]
    Io(String),
}

/// A numeric table with an optional header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_table(text: &str) -> Result<Table, ObservedError> {
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        if rows.is_empty() && header.is_none() && f.iter().any(|s| number(s).is_none()) {
            header = Some(f.iter().map(|s| s.to_string()).collect::<Vec<_>>());
            width = Some(f.len());
            continue;
        }
        let expected = *width.get_or_insert(f.len());
        if f.len() != expected {
            return Err(ObservedError::Ragged {
                line: k + 1,
                expected,
                got: f.len(),
            });
        }
        let row = f
            .iter()
            .enumerate()
            .map(|(j, s)| {
                number(s).ok_or_else(|| ObservedError::NonNumeric {
                    line: k + 1,
                    field: j + 1,
                    text: s.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ObservedError::Empty);
    }
    Ok(Table { header, rows })
}

pub fn parse_observed(text: &str) -> Result<Vec<f64>, ObservedError> {
    let t = parse_table(text)?;
    let (rows, cols) = (t.rows.len(), t.rows[0].len());
    match (rows, cols) {
        (1, _) => Ok(t.rows.into_iter().next().expect("one row")),
        (_, 1) => Ok(t.rows.into_iter().map(|r| r[0]).collect()),
        (_, 2) => Ok(t.rows.into_iter().map(|r| r[1]).collect()),
        _ => Err(ObservedError::Shape { rows, cols }),
    }
}

pub fn read_observed(path: &Path) -> Result<Vec<f64>, ObservedError> {
    let text = std::fs::read_to_string(path).map_err(|e| ObservedError::Io(e.to_string()))?;
    parse_observed(&text)
}

/// Reads the `theta_*` columns of a samples file.
pub fn read_samples(path: &Path) -> Result<Vec<Vec<f64>>, ObservedError> {
    let text = std::fs::read_to_string(path).map_err(|e| ObservedError::Io(e.to_string()))?;
    let t = parse_table(&text)?;
    let cols: Vec<usize> = match &t.header {
        Some(h) => h
            .iter()
            .enumerate()
            .filter(|(_, name)| name.starts_with("theta_"))
            .map(|(j, _)| j)
            .collect(),
        None => (0..t.rows[0].len()).collect(),
    };
    if cols.is_empty() {
        return Err(ObservedError::Shape {
            rows: t.rows.len(),
            cols: 0,
        });
    }
    Ok(t.rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        assert_eq!(parse_observed("1.5, 2, 3\n").unwrap(), vec![1.5, 2.0, 3.0]);
        assert_eq!(parse_observed("s0,s1\n4,5\n").unwrap(), vec![4.0, 5.0]);
        assert_eq!(parse_observed("# note\n1\n\n2\n3\n").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_observed("day,area_mm2\n0,100\n1,120\n").unwrap(), vec![100.0, 120.0]);
    }

    #[test]
    fn failures() {
        assert_eq!(parse_observed(""), Err(ObservedError::Empty));
        assert_eq!(parse_observed("a,b\n"), Err(ObservedError::Empty));
        assert!(matches!(parse_observed("1,2\n3\n"), Err(ObservedError::Ragged { line: 2, .. })));
        assert!(matches!(parse_observed("1,2\nx,3\n"), Err(ObservedError::NonNumeric { line: 2, field: 1, .. })));
        assert!(matches!(parse_observed("1,2,3\n4,5,6\n"), Err(ObservedError::Shape { rows: 2, cols: 3 })));
        assert!(matches!(parse_observed("1,NaN\n"), Err(ObservedError::Empty)));
        assert!(matches!(parse_observed("1,2\n1,inf\n"), Err(ObservedError::NonNumeric { .. })));
    }
}
