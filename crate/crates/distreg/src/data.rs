//! Tabular data ingestion: named columns of equal length, numeric or
//! categorical, read from and written to CSV. This is the engine's only
//! data type; formulas and design construction consume it.

use std::path::Path;

use crate::error::{Error, Result};

/// One column of a [`DataTable`].
///
/// Numeric columns store missing values as `NaN`; categorical columns as
/// `None`. CSV ingestion treats the tokens `""`, `"NA"`, `"NaN"` and
/// `"nan"` as missing.
#[derive(Debug, Clone)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<Option<String>>),
}

impl PartialEq for Column {
    /// Equality with missing-aware semantics: two missing numeric entries
    /// (both `NaN`) compare equal.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Column::Numeric(a), Column::Numeric(b)) => {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x == y || (x.is_nan() && y.is_nan()))
            }
            (Column::Categorical(a), Column::Categorical(b)) => a == b,
            _ => false,
        }
    }
}

impl Column {
    /// Number of entries.
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    /// True when the column holds no entries.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the entry at `i` is missing.
    pub fn is_missing(&self, i: usize) -> bool {
        match self {
            Column::Numeric(v) => v[i].is_nan(),
            Column::Categorical(v) => v[i].is_none(),
        }
    }

    /// Sorted unique levels of a categorical column.
    pub fn levels(&self) -> Vec<String> {
        match self {
            Column::Numeric(_) => Vec::new(),
            Column::Categorical(v) => {
                let mut levels: Vec<String> = Vec::new();
                for value in v.iter().flatten() {
                    if !levels.iter().any(|l| l == value) {
                        levels.push(value.clone());
                    }
                }
                levels.sort();
                levels
            }
        }
    }
}

/// Named columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl DataTable {
    /// Builds a table from (name, column) pairs, validating equal lengths
    /// and unique names.
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let n_rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        let mut names = Vec::with_capacity(columns.len());
        let mut cols = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n_rows {
                return Err(Error::Data(format!(
                    "column `{name}` has {} entries, expected {n_rows}",
                    col.len()
                )));
            }
            if names.contains(&name) {
                return Err(Error::Data(format!("duplicate column name `{name}`")));
            }
            names.push(name);
            cols.push(col);
        }
        Ok(Self { names, columns: cols, n_rows })
    }

    /// Number of rows.
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Column names in table order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Looks a column up by name.
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    /// Returns the numeric values of a column, erroring for categorical or
    /// unknown columns.
    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name) {
            Some(Column::Numeric(v)) => Ok(v),
            Some(Column::Categorical(_)) => Err(Error::Data(format!(
                "column `{name}` is categorical, expected numeric"
            ))),
            None => Err(Error::Data(format!("unknown column `{name}`"))),
        }
    }

    /// Copies the rows flagged `true` into a new table.
    pub fn filter_rows(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.n_rows, "filter_rows: mask length mismatch");
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                Column::Numeric(v) => Column::Numeric(
                    v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect(),
                ),
                Column::Categorical(v) => Column::Categorical(
                    v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| x.clone()).collect(),
                ),
            })
            .collect();
        Self {
            names: self.names.clone(),
            columns,
            n_rows: keep.iter().filter(|&&k| k).count(),
        }
    }

    /// Reads a CSV file with a header row. Column types are inferred: a
    /// column where every non-missing cell parses as a number becomes
    /// numeric, anything else categorical.
    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Data(format!("cannot open `{}`: {e}", path.display()))
        })?;
        Self::from_csv_reader(file)
    }

    /// Reads CSV content from any reader; see [`DataTable::from_csv_path`].
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = csv
            .headers()
            .map_err(|e| Error::Data(format!("invalid CSV header: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.is_empty() {
            return Err(Error::Data("CSV has no columns".into()));
        }
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (row_idx, record) in csv.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("invalid CSV record: {e}")))?;
            if record.len() != headers.len() {
                return Err(Error::Data(format!(
                    "row {} has {} fields, expected {}",
                    row_idx + 2,
                    record.len(),
                    headers.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                cells[j].push(field.trim().to_string());
            }
        }
        let columns = headers
            .into_iter()
            .zip(cells)
            .map(|(name, raw)| (name, infer_column(raw)))
            .collect();
        Self::new(columns)
    }

    /// Writes the table as CSV with a header row. Missing entries are
    /// emitted as `NA`.
    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())
            .map_err(|e| Error::Data(format!("cannot write `{}`: {e}", path.as_ref().display())))?;
        w.write_record(&self.names)
            .map_err(|e| Error::Data(format!("CSV write failed: {e}")))?;
        for i in 0..self.n_rows {
            let record: Vec<String> = self
                .columns
                .iter()
                .map(|col| match col {
                    Column::Numeric(v) if v[i].is_nan() => "NA".to_string(),
                    Column::Numeric(v) => format!("{}", v[i]),
                    Column::Categorical(v) => v[i].clone().unwrap_or_else(|| "NA".to_string()),
                })
                .collect();
            w.write_record(&record)
                .map_err(|e| Error::Data(format!("CSV write failed: {e}")))?;
        }
        w.flush().map_err(|e| Error::Data(format!("CSV write failed: {e}")))?;
        Ok(())
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA" || s == "NaN" || s == "nan"
}

fn infer_column(raw: Vec<String>) -> Column {
    let numeric = raw
        .iter()
        .all(|s| is_missing_token(s) || s.parse::<f64>().is_ok());
    if numeric {
        Column::Numeric(
            raw.iter()
                .map(|s| if is_missing_token(s) { f64::NAN } else { s.parse().unwrap() })
                .collect(),
        )
    } else {
        Column::Categorical(
            raw.into_iter()
                .map(|s| if is_missing_token(&s) { None } else { Some(s) })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> &'static str {
        "y,x,group\n1.5,2,a\n2.5,NA,b\n3.5,4,\n"
    }

    #[test]
    fn csv_ingestion_infers_types_and_missing_values() {
        let t = DataTable::from_csv_reader(sample_csv().as_bytes()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.names(), ["y", "x", "group"]);
        let x = t.numeric("x").unwrap();
        assert_eq!(x[0], 2.0);
        assert!(x[1].is_nan());
        match t.column("group").unwrap() {
            Column::Categorical(v) => {
                assert_eq!(v[0].as_deref(), Some("a"));
                assert_eq!(v[2], None);
            }
            _ => panic!("group should be categorical"),
        }
    }

    #[test]
    fn numeric_accessor_reports_type_mismatch() {
        let t = DataTable::from_csv_reader(sample_csv().as_bytes()).unwrap();
        assert!(t.numeric("group").is_err());
        assert!(t.numeric("nope").is_err());
    }

    #[test]
    fn filter_rows_keeps_selected_rows() {
        let t = DataTable::from_csv_reader(sample_csv().as_bytes()).unwrap();
        let f = t.filter_rows(&[true, false, true]);
        assert_eq!(f.n_rows(), 2);
        assert_eq!(f.numeric("y").unwrap(), &[1.5, 3.5]);
    }

    #[test]
    fn levels_are_sorted_and_unique() {
        let col = Column::Categorical(vec![
            Some("yes".into()),
            Some("no".into()),
            Some("yes".into()),
            None,
        ]);
        assert_eq!(col.levels(), ["no", "yes"]);
    }

    #[test]
    fn csv_round_trip_preserves_content() {
        let t = DataTable::from_csv_reader(sample_csv().as_bytes()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.to_csv_path(&path).unwrap();
        let back = DataTable::from_csv_path(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn mismatched_row_length_is_an_error() {
        let r = DataTable::from_csv_reader("a,b\n1,2\n3\n".as_bytes());
        assert!(r.is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let r = DataTable::new(vec![
            ("x".into(), Column::Numeric(vec![1.0])),
            ("x".into(), Column::Numeric(vec![2.0])),
        ]);
        assert!(r.is_err());
    }
}
