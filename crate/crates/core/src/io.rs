//! CSV and JSON-lines readers and writers for every artifact the library produces.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a file back
//! reproduces the values bit for bit and repeated runs produce identical bytes.
//! Every writer stages the full file in memory and renames it into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dense_gp::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::particles::TrajectoryEnsemble;
use crate::sparse_cg::KernelEstimate;
use crate::state_space::PointPrediction;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Row-oriented CSV built in memory.
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
    width: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header.iter().map(|s| s.as_ref()))?;
        Ok(CsvTable {
            writer,
            width: header.len(),
        })
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        if fields.len() != self.width {
            return Err(Error::Dimension(format!("row has {} fields, header has {}", fields.len(), self.width)));
        }
        self.writer.write_record(fields.iter().map(|s| s.as_ref()))?;
        Ok(())
    }

    pub fn numeric_row(&mut self, fields: &[f64]) -> Result<()> {
        let f: Vec<String> = fields.iter().map(|&v| fmt(v)).collect();
        self.row(&f)
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        self.writer
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn save(self, path: &Path) -> Result<()> {
        atomic_write(path, &self.into_bytes()?)
    }
}

/// Formats a value for a table cell; `None` becomes an empty field.
pub fn cell(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn parse_f64(s: &str, line: usize, col: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("line {line}, column {}: {s:?} is not a number", col + 1)))
}

fn read_records(path: &Path, has_header: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = if has_header {
        rdr.headers()?.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 1 + has_header as usize;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, s)| parse_f64(s, line, c))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(Error::Dimension(format!("line {line} has {} fields, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Training data with a header: `p` input columns followed by one output column.
pub fn read_training_csv(path: &Path) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (header, rows) = read_records(path, true)?;
    if header.len() < 2 {
        return Err(Error::Dimension("training CSV needs at least one input and one output column".into()));
    }
    let p = header.len() - 1;
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[p]));
    Ok((x, y))
}

/// Test inputs with a header: every column is an input coordinate.
pub fn read_inputs_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (header, rows) = read_records(path, true)?;
    Ok(DMatrix::from_fn(rows.len(), header.len(), |i, j| rows[i][j]))
}

/// `x1..xp, mean, variance, df`; `df` is empty for Gaussian predictions.
pub fn write_predictions_csv(path: &Path, x_star: &DMatrix<f64>, pred: &PredictiveDistribution) -> Result<()> {
    if pred.mean.len() != x_star.nrows() || pred.variance.len() != x_star.nrows() {
        return Err(Error::Dimension("prediction length differs from the number of test inputs".into()));
    }
    let mut header: Vec<String> = (1..=x_star.ncols()).map(|j| format!("x{j}")).collect();
    header.extend(["mean", "variance", "df"].map(String::from));
    let mut t = CsvTable::new(&header)?;
    let df = pred.dof.map(|k| k.to_string()).unwrap_or_default();
    for i in 0..x_star.nrows() {
        let mut row: Vec<String> = x_star.row(i).iter().map(|&v| fmt(v)).collect();
        row.push(fmt(pred.mean[i]));
        row.push(fmt(pred.variance[i]));
        row.push(df.clone());
        t.row(&row)?;
    }
    t.save(path)
}

/// One-dimensional `(x, y)` data with a header.
pub fn read_xy_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (x, y) = read_training_csv(path)?;
    if x.ncols() != 1 {
        return Err(Error::Dimension(format!("expected columns x,y but found {} inputs", x.ncols())));
    }
    Ok((x.column(0).iter().copied().collect(), y.iter().copied().collect()))
}

/// `x_star, mean, variance`.
pub fn write_point_predictions_csv(path: &Path, x_star: &[f64], pred: &[PointPrediction]) -> Result<()> {
    if x_star.len() != pred.len() {
        return Err(Error::Dimension("prediction length differs from the number of test inputs".into()));
    }
    let mut t = CsvTable::new(&["x_star", "mean", "variance"])?;
    for (x, p) in x_star.iter().zip(pred) {
        t.numeric_row(&[*x, p.mean, p.variance])?;
    }
    t.save(path)
}

/// Trajectory file: `m, l, i, t, x1..xD, v1..vD`, one row per particle per frame.
pub fn trajectories_to_bytes(traj: &TrajectoryEnsemble) -> Result<Vec<u8>> {
    let d = traj.dim;
    let mut header: Vec<String> = ["m", "l", "i", "t"].map(String::from).to_vec();
    header.extend((1..=d).map(|j| format!("x{j}")));
    header.extend((1..=d).map(|j| format!("v{j}")));
    let mut t = CsvTable::new(&header)?;
    for m in 0..traj.num_sims {
        for l in 0..traj.num_frames {
            let x = traj.position(m, l);
            let v = traj.velocity(m, l);
            for i in 0..traj.n {
                let mut row = vec![m.to_string(), l.to_string(), i.to_string(), fmt(l as f64 * traj.dt)];
                row.extend((0..d).map(|j| fmt(x[(i, j)])));
                row.extend((0..d).map(|j| fmt(v[(i, j)])));
                t.row(&row)?;
            }
        }
    }
    t.into_bytes()
}

pub fn write_trajectories_csv(path: &Path, traj: &TrajectoryEnsemble) -> Result<()> {
    atomic_write(path, &trajectories_to_bytes(traj)?)
}

/// Reads a trajectory file. Rows may come in any order but the `(m, l, i)` grid must be
/// complete. `dt` is recovered from the `t` column (zero for single-frame files) and the
/// noise variance, which the file does not record, is set to zero.
pub fn read_trajectories_csv(path: &Path) -> Result<TrajectoryEnsemble> {
    let (header, rows) = read_records(path, true)?;
    let w = header.len();
    if w < 6 || (w - 4) % 2 != 0 || header[..4] != ["m", "l", "i", "t"] {
        return Err(Error::Config("trajectory CSV must have columns m,l,i,t,x1..xD,v1..vD".into()));
    }
    let dim = (w - 4) / 2;
    let as_index = |v: f64, what: &str| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Config(format!("{what} index {v} is not a non-negative integer")))
        }
    };
    let mut triples = Vec::with_capacity(rows.len());
    let (mut sims, mut frames, mut n) = (0, 0, 0);
    for r in &rows {
        let (m, l, i) = (as_index(r[0], "m")?, as_index(r[1], "l")?, as_index(r[2], "i")?);
        sims = sims.max(m + 1);
        frames = frames.max(l + 1);
        n = n.max(i + 1);
        triples.push((m, l, i));
    }
    if rows.is_empty() || sims * frames * n != rows.len() {
        return Err(Error::Dimension(format!(
            "{} rows do not form a complete grid of {sims} simulations × {frames} frames × {n} particles",
            rows.len()
        )));
    }
    let mut positions = vec![DMatrix::from_element(n, dim, f64::NAN); sims * frames];
    let mut velocities = positions.clone();
    let mut seen = vec![false; rows.len()];
    let mut dt = 0.0;
    for (r, &(m, l, i)) in rows.iter().zip(&triples) {
        let f = m * frames + l;
        let slot = f * n + i;
        if seen[slot] {
            return Err(Error::Config(format!("duplicate row for m={m}, l={l}, i={i}")));
        }
        seen[slot] = true;
        if l == 1 {
            dt = r[3];
        }
        for j in 0..dim {
            positions[f][(i, j)] = r[4 + j];
            velocities[f][(i, j)] = r[4 + dim + j];
        }
    }
    Ok(TrajectoryEnsemble {
        n,
        dim,
        num_sims: sims,
        num_frames: frames,
        dt,
        noise_var: 0.0,
        positions,
        velocities,
    })
}

/// `d_star, mean, variance`; variance is empty when it was not computed.
pub fn write_kernel_estimate_csv(path: &Path, est: &KernelEstimate) -> Result<()> {
    let mut t = CsvTable::new(&["d_star", "mean", "variance"])?;
    for (k, (&d, &m)) in est.d_star.iter().zip(&est.mean).enumerate() {
        let var = est.variance.as_ref().map(|v| v[k]);
        t.row(&[fmt(d), fmt(m), cell(var)])?;
    }
    t.save(path)
}

/// Headerless numeric matrix, one CSV row per matrix row.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (_, rows) = read_records(path, false)?;
    if rows.is_empty() {
        return Err(Error::Dimension("matrix file is empty".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

pub fn matrix_to_bytes(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&v| fmt(v)))?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    atomic_write(path, &matrix_to_bytes(m)?)
}

/// Serializes each record as one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}
