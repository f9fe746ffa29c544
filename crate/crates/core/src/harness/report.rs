//! CSV and JSON output of experiment runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunReport;
use crate::error::Result;

pub const RAW_CSV: &str = "mca_raw.csv";
pub const AGGREGATE_CSV: &str = "mca_aggregate.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub variant: String,
    pub size: usize,
    pub seed: u64,
    pub mca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub size: usize,
    pub mca_mean: f64,
    pub mca_std: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_raw_csv(path: impl AsRef<Path>) -> Result<Vec<RawRow>> {
    read_csv(path.as_ref())
}

pub fn read_aggregate_csv(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    read_csv(path.as_ref())
}

impl RunReport {
    /// Writes `mca_raw.csv`, `mca_aggregate.csv` and `diagnostics.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(RAW_CSV), &self.raw_rows())?;
        write_csv(&dir.join(AGGREGATE_CSV), &self.aggregate())?;
        fs::write(dir.join(DIAGNOSTICS_JSON), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn csv_round_trip() {
        let corpus = gaussian_clusters(&SyntheticSpec { size: 40, classes: 2, dim: 2, ..Default::default() }).unwrap();
        let cfg = ExperimentConfig {
            session: SessionConfig { batch_size: 4, k: 3, ..Default::default() },
            sizes: vec![40],
            seeds: vec![0, 1],
            ..Default::default()
        };
        let report = run_experiment(&corpus, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        assert_eq!(read_raw_csv(dir.path().join(RAW_CSV)).unwrap(), report.raw_rows());
        assert_eq!(read_aggregate_csv(dir.path().join(AGGREGATE_CSV)).unwrap(), report.aggregate());
        let header = std::fs::read_to_string(dir.path().join(AGGREGATE_CSV)).unwrap();
        assert!(header.starts_with("variant,size,mca_mean,mca_std\n"));
        let diag: RunReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(DIAGNOSTICS_JSON)).unwrap()).unwrap();
        assert_eq!(diag, report);
    }
}
