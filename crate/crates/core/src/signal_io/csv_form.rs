//! One-record-per-file CSV form with an optional `.fid` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use super::{EcgRecord, SignalError};

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("fid")
}

/// Writes `<dir>/<id>.csv` (and `<id>.fid` when fiducials are present),
/// returning the CSV path.
pub fn write_record_csv(record: &EcgRecord, dir: impl AsRef<Path>) -> Result<PathBuf, SignalError> {
    let path = dir.as_ref().join(format!("{}.csv", record.id()));
    let mut w = csv::Writer::from_path(&path).map_err(|e| SignalError::Csv { path: path.clone(), line: 0, message: e.to_string() })?;
    let csv_err = |e: csv::Error| SignalError::Csv { path: path.clone(), line: 0, message: e.to_string() };
    let mut header = vec!["time_s".to_string()];
    header.extend(record.leads().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let fs = record.sample_rate_hz();
    for i in 0..record.num_samples() {
        let mut row = vec![format!("{}", i as f64 / fs)];
        row.extend((0..record.num_leads()).map(|l| format!("{}", record.lead(l)[i])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| SignalError::io(&path, e))?;
    if let Some(f) = record.fiducials() {
        let text: String = f.iter().map(|i| format!("{i}\n")).collect();
        fs::write(sidecar(&path), text).map_err(|e| SignalError::io(&sidecar(&path), e))?;
    }
    Ok(path)
}

/// Reads a record written by [`write_record_csv`]. The id is the file stem;
/// the sample rate is recovered from the time column.
pub fn read_record_csv(path: impl AsRef<Path>) -> Result<EcgRecord, SignalError> {
    let path = path.as_ref().to_path_buf();
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let err = |line: u64, message: String| SignalError::Csv { path: path.clone(), line, message };
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| err(0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.get(0) != Some("time_s") || header.len() < 2 {
        return Err(err(1, "header must be `time_s,<lead1>,...`".into()));
    }
    let leads: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut rows = vec![Vec::new(); leads.len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != leads.len() + 1 {
            return Err(err(line, format!("expected {} fields, found {}", leads.len() + 1, rec.len())));
        }
        let t: f64 = rec[0].trim().parse().map_err(|_| err(line, format!("bad time value {:?}", &rec[0])))?;
        times.push(t);
        for (row, field) in rows.iter_mut().zip(rec.iter().skip(1)) {
            let v: f32 = field.trim().parse().map_err(|_| err(line, format!("bad sample {field:?}")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite sample in record {id}")));
            }
            row.push(v);
        }
    }
    if times.len() < 2 {
        return Err(err(0, "need at least two samples to infer the sample rate".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let fs = ((1.0 / dt) * 1e6).round() / 1e6;
    let fid_path = sidecar(&path);
    let fiducials = if fid_path.exists() {
        let text = fs::read_to_string(&fid_path).map_err(|e| SignalError::io(&fid_path, e))?;
        let mut out = Vec::new();
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            out.push(l.trim().parse::<usize>().map_err(|_| SignalError::Csv {
                path: fid_path.clone(),
                line: i as u64 + 1,
                message: format!("bad fiducial {l:?}"),
            })?);
        }
        Some(out)
    } else {
        None
    };
    EcgRecord::new(id, fs, leads, rows, fiducials)
}
