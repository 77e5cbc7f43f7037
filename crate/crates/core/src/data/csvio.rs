//! Dataset CSV format: one row per sample, feature columns then an integer
//! label column. No header.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{real, Scalar};

/// Write samples as `f_0,...,f_{d-1},label` rows.
pub fn write_dataset_csv<S: Scalar>(path: &Path, x: &Matrix<S>, y: &[usize]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::shape("csv dataset", x.rows(), y.len()));
    }
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for (row, &label) in x.iter_rows().zip(y) {
        let mut record: Vec<String> = row.iter().map(|v| format!("{}", v.to_f64().unwrap())).collect();
        record.push(label.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`] (or any headerless CSV
/// with `d` numeric feature columns followed by an integer label).
pub fn read_dataset_csv<S: Scalar>(path: &Path) -> Result<(Matrix<S>, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Csv(format!("row {i}: need at least one feature and a label")));
        }
        let mut row = Vec::with_capacity(record.len() - 1);
        for field in record.iter().take(record.len() - 1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Csv(format!("row {i}: bad feature value {field:?}")))?;
            row.push(real::<S>(v));
        }
        let label_field = record.get(record.len() - 1).unwrap();
        let label: usize = label_field
            .trim()
            .parse()
            .map_err(|_| Error::Csv(format!("row {i}: bad label {label_field:?}")))?;
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Csv("dataset file has no rows".into()));
    }
    Ok((Matrix::from_rows(&rows)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values() {
        let dir = std::env::temp_dir().join("qkt_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        let x = Matrix::from_vec(2, 3, vec![0.25, -1.5, 3.0, 0.1, 0.2, 0.3]).unwrap();
        let y = vec![1, 0];
        write_dataset_csv(&path, &x, &y).unwrap();
        let (rx, ry) = read_dataset_csv::<f64>(&path).unwrap();
        assert_eq!(rx.data(), x.data());
        assert_eq!(ry, y);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn malformed_rows_are_reported_with_row_index() {
        let dir = std::env::temp_dir().join("qkt_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "0.5,0.5,1\n0.2,oops,0\n").unwrap();
        let err = read_dataset_csv::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        std::fs::remove_file(&path).ok();
    }
}
