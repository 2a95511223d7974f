//! CSV emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::scenarios::{DistanceRow, ResultRow, RunOutput, SnapshotRow};
use crate::HarnessError;

pub const RESULT_COLUMNS: [&str; 8] = [
    "trial",
    "step",
    "time",
    "estimator",
    "mse_mean",
    "mse_cov",
    "effective_ratio",
    "resampled",
];

/// `trial,step,…,resampled,mean_0,…,mean_{width−1}`
pub fn result_header(width: usize) -> Vec<String> {
    RESULT_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain((0..width).map(|i| format!("mean_{i}")))
        .collect()
}

/// Rows with fewer mean components than `width` leave the rest empty.
pub fn write_results<W: Write>(sink: W, rows: &[ResultRow], width: usize) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(result_header(width))?;
    let mut record = Vec::with_capacity(RESULT_COLUMNS.len() + width);
    for r in rows {
        record.clear();
        record.extend([
            r.trial.to_string(),
            r.step.to_string(),
            r.time.to_string(),
            r.estimator.clone(),
            r.mse_mean.to_string(),
            r.mse_cov.to_string(),
            r.effective_ratio.to_string(),
            u8::from(r.resampled).to_string(),
        ]);
        record.extend((0..width).map(|i| r.mean.get(i).map_or_else(String::new, |v| v.to_string())));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: PathBuf::from("<results>"), source: e })?;
    Ok(())
}

pub fn write_snapshots<W: Write>(sink: W, rows: &[SnapshotRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["time", "x", "density", "source"])?;
    for r in rows {
        w.write_record([r.time.to_string(), r.x.to_string(), r.density.to_string(), r.source.clone()])?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: PathBuf::from("<snapshots>"), source: e })?;
    Ok(())
}

pub fn write_distances<W: Write>(sink: W, rows: &[DistanceRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["trial", "time", "estimator", "l1"])?;
    for r in rows {
        w.write_record([r.trial.to_string(), r.time.to_string(), r.estimator.clone(), r.l1.to_string()])?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: PathBuf::from("<distances>"), source: e })?;
    Ok(())
}

/// `dir/name.csv` → `dir/name_<suffix>.csv`
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}{ext}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.to_path_buf(), source: e })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })
}

/// Writes the result file and, when present, the `_snapshots` and
/// `_distances` siblings. Returns every path written.
pub fn write_run(out: &RunOutput, path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = vec![path.to_path_buf()];
    write_results(create(path)?, &out.rows, out.mean_width())?;
    if !out.snapshots.is_empty() {
        let p = sibling(path, "snapshots");
        write_snapshots(create(&p)?, &out.snapshots)?;
        written.push(p);
    }
    if !out.distances.is_empty() {
        let p = sibling(path, "distances");
        write_distances(create(&p)?, &out.distances)?;
        written.push(p);
    }
    Ok(written)
}

/// The result CSV as bytes.
pub fn results_bytes(out: &RunOutput) -> Result<Vec<u8>, HarnessError> {
    let mut buf = Vec::new();
    write_results(&mut buf, &out.rows, out.mean_width())?;
    Ok(buf)
}
