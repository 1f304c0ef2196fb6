//! Artifact formats: pretty JSON, dataset and prediction CSVs, file hashes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{FeatureRow, PreferenceVector};

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Reads JSON, reporting the file on failure. Parse errors are validation
/// errors: the artifact does not match its schema.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

/// Writes rows as `user_id,agg_days,f_0..f_{F-1},y_0..y_{D-1}`.
pub fn write_dataset_csv<W: Write>(out: W, rows: &[FeatureRow]) -> Result<()> {
    let (f, d) = rows.first().map_or((0, 0), |r| (r.features.len(), r.label.len()));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id".to_string(), "agg_days".to_string()];
    header.extend((0..f).map(|j| format!("f_{j}")));
    header.extend((0..d).map(|j| format!("y_{j}")));
    w.write_record(&header)?;
    for r in rows {
        if r.features.len() != f || r.label.len() != d {
            return Err(Error::validation(format!("user {}: row width differs from the first row", r.user_id)));
        }
        let mut rec = vec![r.user_id.to_string(), r.agg_days.to_string()];
        rec.extend(r.features.iter().map(|v| v.to_string()));
        rec.extend(r.label.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, line: u64) -> Result<f64> {
    s.parse().map_err(|_| Error::validation(format!("line {line}: '{s}' is not a number")))
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("user_id") || header.get(1) != Some("agg_days") {
        return Err(Error::validation("dataset header must start with user_id,agg_days"));
    }
    let f = header.iter().filter(|h| h.starts_with("f_")).count();
    let d = header.iter().filter(|h| h.starts_with("y_")).count();
    let expected: Vec<String> = ["user_id".to_string(), "agg_days".to_string()]
        .into_iter()
        .chain((0..f).map(|j| format!("f_{j}")))
        .chain((0..d).map(|j| format!("y_{j}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) || d == 0 {
        return Err(Error::validation("dataset header must be user_id,agg_days,f_0..,y_0.."));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let user_id = rec[0].parse().map_err(|_| Error::validation(format!("line {line}: bad user_id")))?;
        let agg_days = rec[1].parse().map_err(|_| Error::validation(format!("line {line}: bad agg_days")))?;
        let features = (2..2 + f).map(|j| parse_f64(&rec[j], line)).collect::<Result<Vec<_>>>()?;
        let label = (2 + f..2 + f + d).map(|j| parse_f64(&rec[j], line)).collect::<Result<Vec<_>>>()?;
        let label = PreferenceVector::new(label).map_err(|e| Error::validation(format!("line {line}: {e}")))?;
        rows.push(FeatureRow { user_id, features, agg_days, label });
    }
    Ok(rows)
}

/// Writes present predictions as `user_id,p_0..p_{D-1}`.
pub fn write_predictions_csv<W: Write>(out: W, predictions: &[Option<PreferenceVector>]) -> Result<()> {
    let d = predictions.iter().flatten().next().map_or(0, |p| p.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id".to_string()];
    header.extend((0..d).map(|j| format!("p_{j}")));
    w.write_record(&header)?;
    for (u, p) in predictions.iter().enumerate() {
        if let Some(p) = p {
            let mut rec = vec![u.to_string()];
            rec.extend(p.values().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads predictions for a population of `n_users`; absent users are `None`.
pub fn read_predictions_csv<R: Read>(input: R, n_users: usize) -> Result<Vec<Option<PreferenceVector>>> {
    let mut r = csv::Reader::from_reader(input);
    let d = r.headers()?.len().saturating_sub(1);
    if d == 0 {
        return Err(Error::validation("predictions header must be user_id,p_0.."));
    }
    let mut out = vec![None; n_users];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let u: usize = rec[0].parse().map_err(|_| Error::validation(format!("line {line}: bad user_id")))?;
        if u >= n_users {
            return Err(Error::validation(format!("line {line}: user {u} outside the population")));
        }
        let p = (1..=d).map(|j| parse_f64(&rec[j], line)).collect::<Result<Vec<_>>>()?;
        out[u] = Some(PreferenceVector::new(p).map_err(|e| Error::validation(format!("line {line}: {e}")))?);
    }
    Ok(out)
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<FeatureRow> {
        vec![
            FeatureRow { user_id: 3, features: vec![0.5, -1.25], agg_days: 30, label: PreferenceVector::new(vec![1.0, 0.0, 2.0]).unwrap() },
            FeatureRow { user_id: 7, features: vec![1e-9, 3.0], agg_days: 12, label: PreferenceVector::new(vec![0.0, 4.0, 1.0]).unwrap() },
        ]
    }

    #[test]
    fn dataset_round_trip() {
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &rows()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,agg_days,f_0,f_1,y_0,y_1,y_2\n"));
        assert_eq!(read_dataset_csv(buf.as_slice()).unwrap(), rows());
    }

    #[test]
    fn dataset_schema_is_checked() {
        assert!(read_dataset_csv("id,agg_days,f_0,y_0\n1,1,0,1\n".as_bytes()).is_err());
        assert!(read_dataset_csv("user_id,agg_days,f_0,y_0\n1,1,0,-1\n".as_bytes()).is_err());
        let e = read_dataset_csv("user_id,agg_days,f_0,y_0\n1,1,x,1\n".as_bytes()).unwrap_err();
        assert!(e.is_validation());
    }

    #[test]
    fn predictions_round_trip() {
        let p = vec![Some(PreferenceVector::new(vec![0.25, 1.0]).unwrap()), None, Some(PreferenceVector::new(vec![1.0, 0.0]).unwrap())];
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &p).unwrap();
        assert_eq!(read_predictions_csv(buf.as_slice(), 3).unwrap(), p);
        assert!(read_predictions_csv(buf.as_slice(), 2).is_err());
    }

    #[test]
    fn json_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_text(&path, "{\"a\": 1}").unwrap();
        let e = read_json::<Vec<u32>>(&path).unwrap_err();
        assert!(e.is_validation() && e.to_string().contains("x.json"));
        write_json(&path, &vec![1u32, 2]).unwrap();
        assert_eq!(read_json::<Vec<u32>>(&path).unwrap(), vec![1, 2]);
        assert_eq!(sha256_file(&path).unwrap().len(), 64);
    }
}
