//! Reading and writing region series, manifests and behavioral tables, plus
//! per-series standardization and voxel-to-region averaging.
//!
//! Series files are headerless CSV with one row per time point and one column
//! per region. A manifest is a JSON object mapping condition name to an object
//! mapping subject id to series path, with an optional `"rest_condition"` key.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::types::Dataset;

/// Read a headerless series CSV (rows = time, columns = regions) as N×T.
pub fn read_series_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (t, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(n, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    Error::parse(path, format!("non-numeric cell '{cell}' at row {}, column {}", t + 1, n + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    format!("row {} has {} columns, expected {}", t + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::parse(path, "a series needs at least 2 time points"));
    }
    let (t_len, n) = (rows.len(), rows[0].len());
    if n == 0 {
        return Err(Error::parse(path, "no columns"));
    }
    Ok(Array2::from_shape_fn((n, t_len), |(i, t)| rows[t][i]))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// Write an N×T series as T rows of N comma-separated values.
pub fn write_series_csv(path: &Path, series: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 20);
    for t in 0..series.ncols() {
        for i in 0..series.nrows() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", series[[i, t]]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parsed manifest: conditions in listed order (rest first when present).
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub conditions: Vec<String>,
    pub subjects: Vec<String>,
    /// `paths[g][s]`, already resolved against the manifest directory.
    pub paths: Vec<Vec<PathBuf>>,
    pub has_rest: bool,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse(path, "manifest must be a JSON object"))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let rest = match obj.get("rest_condition") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(Error::parse(path, "rest_condition must be a string")),
    };
    let mut entries: Vec<(String, &Map<String, Value>)> = Vec::new();
    for (name, v) in obj {
        if name == "rest_condition" {
            continue;
        }
        let m = v
            .as_object()
            .ok_or_else(|| Error::parse(path, format!("condition '{name}' must map subject ids to paths")))?;
        entries.push((name.clone(), m));
    }
    if let Some(r) = &rest {
        let pos = entries
            .iter()
            .position(|(n, _)| n == r)
            .ok_or_else(|| Error::validation(format!("rest condition '{r}' is not listed")))?;
        let e = entries.remove(pos);
        entries.insert(0, e);
    }
    let total: usize = entries.iter().map(|(_, m)| m.len()).sum();
    if total == 0 {
        return Err(Error::validation("no series listed"));
    }
    let subjects: Vec<String> = entries[0].1.keys().cloned().collect();
    let mut paths = Vec::with_capacity(entries.len());
    for (name, m) in &entries {
        let mut row = Vec::with_capacity(subjects.len());
        if m.len() != subjects.len() {
            return Err(Error::validation(format!(
                "condition '{name}' lists {} subjects, expected {}",
                m.len(),
                subjects.len()
            )));
        }
        for sid in &subjects {
            let p = m
                .get(sid)
                .and_then(Value::as_str)
                .ok_or_else(|| Error::validation(format!("condition '{name}' has no series for subject '{sid}'")))?;
            let p = Path::new(p);
            row.push(if p.is_absolute() { p.to_path_buf() } else { base.join(p) });
        }
        paths.push(row);
    }
    Ok(Manifest {
        conditions: entries.into_iter().map(|(n, _)| n).collect(),
        subjects,
        paths,
        has_rest: rest.is_some(),
    })
}

/// Load every series listed by a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let m = read_manifest(manifest_path)?;
    let mut series = Vec::with_capacity(m.paths.len());
    for row in &m.paths {
        for p in row {
            if !p.exists() {
                return Err(Error::validation(format!("missing file {}", p.display())));
            }
        }
        series.push(row.iter().map(|p| read_series_csv(p)).collect::<Result<Vec<_>>>()?);
    }
    let ds = Dataset {
        series,
        condition_names: m.conditions,
        subject_ids: m.subjects,
        has_rest: m.has_rest,
    };
    ds.check()?;
    Ok(ds)
}

/// Write every series of a dataset as `{condition}_{subject}.csv` and a
/// manifest referencing them by relative path.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut root = Map::new();
    for (g, cond) in data.condition_names.iter().enumerate() {
        let mut subj = Map::new();
        for (s, sid) in data.subject_ids.iter().enumerate() {
            let file = format!("{cond}_{sid}.csv");
            write_series_csv(&dir.join(&file), data.y(g, s))?;
            subj.insert(sid.clone(), Value::String(file));
        }
        root.insert(cond.clone(), Value::Object(subj));
    }
    if data.has_rest {
        root.insert(
            "rest_condition".into(),
            Value::String(data.condition_names[0].clone()),
        );
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&Value::Object(root)).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Subtract each row's mean and divide by its sample standard deviation.
pub fn center_scale(series: &Array2<f64>) -> Result<Array2<f64>> {
    let t = series.ncols();
    if t < 2 {
        return Err(Error::validation("standardization needs at least 2 time points"));
    }
    let mut out = series.clone();
    for (n, mut row) in out.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / t as f64;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / (t - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::validation(format!("region {n} has a constant series")));
        }
        let sd = var.sqrt();
        row.mapv_inplace(|v| v / sd);
    }
    Ok(out)
}

/// Standardize every (condition, subject) series.
pub fn center_scale_dataset(data: &Dataset) -> Result<Dataset> {
    let mut out = data.clone();
    for (g, cond) in out.series.iter_mut().enumerate() {
        for (s, y) in cond.iter_mut().enumerate() {
            *y = center_scale(y).map_err(|e| {
                Error::validation(format!(
                    "condition '{}', subject '{}': {e}",
                    data.condition_names[g], data.subject_ids[s]
                ))
            })?;
        }
    }
    Ok(out)
}

/// Average voxel rows into regions; `membership[v]` is the region of voxel `v`.
pub fn aggregate_rois(voxels: &Array2<f64>, membership: &[usize], regions: usize) -> Result<Array2<f64>> {
    if membership.len() != voxels.nrows() {
        return Err(Error::Dimension(format!(
            "{} voxels but {} membership labels",
            voxels.nrows(),
            membership.len()
        )));
    }
    let mut out = Array2::zeros((regions, voxels.ncols()));
    let mut counts = vec![0usize; regions];
    for (v, &r) in membership.iter().enumerate() {
        if r >= regions {
            return Err(Error::validation(format!("voxel {v} maps to region {r}, only {regions} regions")));
        }
        counts[r] += 1;
        let mut row = out.row_mut(r);
        row += &voxels.row(v);
    }
    for (r, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::validation(format!("region {r} has no voxels")));
        }
        out.row_mut(r).mapv_inplace(|x| x / c as f64);
    }
    Ok(out)
}

/// Behavioral measures per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTable {
    pub subjects: Vec<String>,
    pub measures: Vec<String>,
    /// S×M.
    pub values: Array2<f64>,
}

impl BehaviorTable {
    /// One measure, ordered like `subject_ids`.
    pub fn measure_for(&self, measure: &str, subject_ids: &[String]) -> Result<Vec<f64>> {
        let m = self
            .measures
            .iter()
            .position(|x| x == measure)
            .ok_or_else(|| Error::validation(format!("behavioral measure '{measure}' not found")))?;
        subject_ids
            .iter()
            .map(|sid| {
                self.subjects
                    .iter()
                    .position(|x| x == sid)
                    .map(|s| self.values[[s, m]])
                    .ok_or_else(|| Error::validation(format!("no behavioral row for subject '{sid}'")))
            })
            .collect()
    }
}

/// Read a CSV with header `subject,<measure1>,...`.
pub fn read_behavior_csv(path: &Path) -> Result<BehaviorTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("subject") || header.len() < 2 {
        return Err(Error::parse(path, "header must be 'subject,<measure>,...'"));
    }
    let measures: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut subjects = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        subjects.push(rec.get(0).unwrap_or_default().to_string());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            values.push(cell.parse::<f64>().map_err(|_| {
                Error::parse(path, format!("non-numeric cell '{cell}' at row {}, column {}", r + 2, c + 2))
            })?);
        }
    }
    let s = subjects.len();
    let values = Array2::from_shape_vec((s, measures.len()), values)
        .map_err(|_| Error::parse(path, "ragged behavioral table"))?;
    Ok(BehaviorTable {
        subjects,
        measures,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_scale_examples() {
        let out = center_scale(&array![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(out, array![[-1.0, 0.0, 1.0]]);
        let again = center_scale(&out).unwrap();
        assert!((&again - &out).iter().all(|d| d.abs() < 1e-12));
        let err = center_scale(&array![[1.0, 2.0], [3.0, 3.0]]).unwrap_err();
        assert!(err.to_string().contains("region 1"));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((6, 100), |_| rng.random_range(-5.0..5.0));
        let z = center_scale(&x).unwrap();
        for row in z.rows() {
            let m = row.sum() / 100.0;
            let sd = (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 99.0).sqrt();
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn center_scale_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 12)) {
            let x = Array2::from_shape_vec((2, 6), v).unwrap();
            if let Ok(a) = center_scale(&x) {
                let b = center_scale(&a).unwrap();
                for (p, q) in a.iter().zip(b.iter()) {
                    prop_assert!((p - q).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn aggregate_examples() {
        let v = array![[1.0, 2.0], [1.0, 2.0], [0.0, 4.0], [2.0, 6.0]];
        let r = aggregate_rois(&v, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(r, array![[1.0, 2.0], [1.0, 5.0]]);
        assert!(aggregate_rois(&v, &[0, 0, 0, 0], 2).is_err());
    }

    #[test]
    fn manifest_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let series: Vec<Vec<Array2<f64>>> = (0..2)
            .map(|_| (0..2).map(|_| Array2::from_shape_fn((6, 10), |_| rng.random_range(-1.0..1.0))).collect())
            .collect();
        let ds = Dataset::from_series(series, true).unwrap();
        let path = write_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!((back.subjects(), back.series.len(), back.regions()), (2, 2, 6));

        // Ragged region count.
        write_series_csv(&dir.path().join("task1_s2.csv"), &Array2::zeros((5, 10))).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("region count mismatch"), "{err}");

        let empty = dir.path().join("empty.json");
        fs::write(&empty, "{}").unwrap();
        assert!(load_dataset(&empty).unwrap_err().to_string().contains("no series listed"));

        let missing = dir.path().join("missing.json");
        fs::write(&missing, r#"{"rest": {"a": "nope.csv"}, "rest_condition": "rest"}"#).unwrap();
        assert!(load_dataset(&missing).unwrap_err().to_string().contains("missing file"));

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "1,2\n3,x\n").unwrap();
        assert!(read_series_csv(&bad).unwrap_err().to_string().contains("non-numeric"));
    }

    #[test]
    fn behavior_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        fs::write(&p, "subject,story,math\ns2,1.5,2\ns1,0.5,3\n").unwrap();
        let t = read_behavior_csv(&p).unwrap();
        let ids = vec!["s1".to_string(), "s2".to_string()];
        assert_eq!(t.measure_for("story", &ids).unwrap(), vec![0.5, 1.5]);
        assert!(t.measure_for("reading", &ids).is_err());
    }
}
