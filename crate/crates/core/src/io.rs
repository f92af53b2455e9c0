//! CSV and JSON persistence for datasets and fitted reports.
//!
//! A dataset `foo.csv` has header `x_0..x_{d-1},xp_0..xp_{d-1}` and an
//! optional sidecar `foo.csv.meta.json` holding seed, layout, size and the
//! generating system when known.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, ReportRecord};
use crate::sim::{Layout, SystemParams, TransitionDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    /// Row-major `A`.
    pub a: Vec<f64>,
    /// Row-major `Σ`.
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub layout: Layout,
    pub d: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthRecord>,
}

impl DatasetMeta {
    pub fn of(data: &TransitionDataset) -> Self {
        Self {
            seed: data.seed(),
            layout: data.layout(),
            d: data.dim(),
            n: data.len(),
            truth: data.truth().map(|t| TruthRecord {
                a: row_major(t.a()),
                sigma: row_major(t.sigma()),
            }),
        }
    }

    pub fn truth_params(&self) -> Result<Option<SystemParams>> {
        let Some(t) = &self.truth else { return Ok(None) };
        let d = self.d;
        if t.a.len() != d * d || t.sigma.len() != d * d {
            return Err(Error::Config(format!("sidecar truth matrices must have {} entries", d * d)));
        }
        SystemParams::new(DMatrix::from_row_slice(d, d, &t.a), DMatrix::from_row_slice(d, d, &t.sigma)).map(Some)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn dataset_header(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x_{j}")).chain((0..d).map(|j| format!("xp_{j}"))).collect()
}

/// Writes the CSV and its sidecar. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_dataset(path: &Path, data: &TransitionDataset) -> Result<()> {
    let d = data.dim();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(dataset_header(d))?;
    let mut row = Vec::with_capacity(2 * d);
    for i in 0..data.len() {
        row.clear();
        row.extend(data.states().row(i).iter().map(|v| v.to_string()));
        row.extend(data.next_states().row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    write_json(&sidecar_path(path), &DatasetMeta::of(data))
}

/// Reads a dataset; without a sidecar the pairs are treated as
/// multi-trajectory data of unknown origin.
pub fn read_dataset(path: &Path) -> Result<TransitionDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.len() % 2 != 0 {
        return Err(Error::Config(format!("{}: header must list x_j then xp_j columns", path.display())));
    }
    let d = header.len() / 2;
    if header != dataset_header(d) {
        return Err(Error::Config(format!(
            "{}: expected header {}, got {}",
            path.display(),
            dataset_header(d).join(","),
            header.join(",")
        )));
    }
    let mut values = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{}: row {}: `{field}` is not a number", path.display(), line + 1)))?;
            values.push(v);
        }
    }
    let n = values.len() / (2 * d);
    let all = DMatrix::from_row_slice(n, 2 * d, &values);
    let states = all.columns(0, d).into_owned();
    let next = all.columns(d, d).into_owned();

    let meta_path = sidecar_path(path);
    if !meta_path.exists() {
        return TransitionDataset::new(states, next, Layout::MultiTrajectory, None, None);
    }
    let meta: DatasetMeta = read_json(&meta_path)?;
    if meta.d != d || meta.n != n {
        return Err(Error::Config(format!(
            "{}: sidecar says d={} N={}, file has d={d} N={n}",
            meta_path.display(),
            meta.d,
            meta.n
        )));
    }
    let truth = meta.truth_params()?;
    TransitionDataset::new(states, next, meta.layout, meta.seed, truth)
}

pub fn write_report(path: &Path, report: &EstimateReport) -> Result<()> {
    write_json(path, &report.to_record())
}

pub fn read_report(path: &Path) -> Result<ReportRecord> {
    read_json(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::BaseDensity;
    use crate::estimators::ols_fit;
    use crate::sim::{benchmark_2d_system, simulate_trajectory};
    use nalgebra::DVector;

    #[test]
    fn dataset_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let truth = benchmark_2d_system();
        let dens = BaseDensity::student_t(2, 5.0).unwrap();
        let data = simulate_trajectory(&truth, &dens, &DVector::zeros(2), 50, 3).unwrap();
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.states(), data.states());
        assert_eq!(back.next_states(), data.next_states());
        assert_eq!(back.layout(), Layout::SingleTrajectory);
        assert_eq!(back.seed(), Some(3));
        assert_eq!(back.truth().unwrap().a(), truth.a());
    }

    #[test]
    fn missing_sidecar_defaults_to_unknown_origin() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "x_0,xp_0\n1,1\n1,3\n").unwrap();
        let data = read_dataset(&path).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.seed(), None);
        assert!(data.truth().is_none());
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,b\n1,1\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Config(_))));
    }

    #[test]
    fn report_record_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let data = TransitionDataset::new(
            DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 1.0]),
            DMatrix::from_row_slice(3, 1, &[1.0, 3.0, 2.0]),
            Layout::MultiTrajectory,
            None,
            None,
        )
        .unwrap();
        let rep = ols_fit(&data).unwrap();
        write_report(&path, &rep).unwrap();
        let rec = read_report(&path).unwrap();
        assert_eq!(rec, rep.to_record());
        let (a, s) = rec.matrices().unwrap();
        assert_eq!(a, rep.a);
        assert_eq!(s, rep.sigma);
    }
}
