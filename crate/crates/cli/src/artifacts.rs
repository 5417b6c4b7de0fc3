//! On-disk artifact formats: file layout inside a run directory, the
//! checkpoint and metrics JSON documents, and the plot-ready CSV tables.
//! Every CSV written here can be read back bit for bit by its reader.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigwgan_core::generator::Generator;
use sigwgan_core::training::{SigRegression, TrainReport};
use sigwgan_core::{Error, Result};

use crate::config::RunConfig;

pub fn dataset_csv_path(out: &Path) -> PathBuf {
    out.join("dataset.csv")
}

pub fn dataset_meta_path(out: &Path) -> PathBuf {
    out.join("dataset_meta.json")
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoint.json")
}

pub fn loss_trace_path(out: &Path) -> PathBuf {
    out.join("loss_trace.csv")
}

pub fn metrics_path(out: &Path) -> PathBuf {
    out.join("metrics.json")
}

pub fn trajectory_path(out: &Path, index: usize) -> PathBuf {
    out.join(format!("trajectory_{index}.csv"))
}

pub fn comparison_path(out: &Path) -> PathBuf {
    out.join("comparison.csv")
}

/// A trained run: everything needed to evaluate or resume analysis later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub generator: Generator,
    pub regression: SigRegression,
    pub report: TrainReport,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            Error::Invalid(format!(
                "cannot open checkpoint {} ({e}); run `sigwgan train` first",
                path.display()
            ))
        })?;
        let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        checkpoint.config.validate()?;
        Ok(checkpoint)
    }
}

/// Evaluation summary over the held-out test set. `mse_at_s` and
/// `correlation_at_s` compare the generator mean to the filter mean at the
/// conditioning time; `mse_horizon` averages the squared gap over the whole
/// prediction window; `baseline_mse` is what predicting the across-trajectory
/// average would score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse_at_s: f64,
    pub mse_horizon: f64,
    pub correlation_at_s: f64,
    pub baseline_mse: f64,
    pub n_test: usize,
    pub seed: u64,
}

impl Metrics {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// One test trajectory prepared for plotting: the observation and hidden
/// signal on the full grid, the filter mean and variance (filtered before
/// the conditioning knot, predicted from it afterwards), and the generator
/// mean plus individual sample paths on the prediction window. Generator
/// columns are empty before `tail_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub kalman_mean: Vec<f64>,
    pub kalman_var: Vec<f64>,
    /// Index of the conditioning knot; generator columns start here.
    pub tail_start: usize,
    pub gen_mean: Vec<f64>,
    /// One row per sample path, each aligned with `gen_mean`.
    pub gen_samples: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    fn check(&self) -> Result<()> {
        let n = self.times.len();
        if self.y.len() != n
            || self.x.len() != n
            || self.kalman_mean.len() != n
            || self.kalman_var.len() != n
        {
            return Err(Error::Shape("trajectory table columns disagree on length".into()));
        }
        if self.tail_start >= n {
            return Err(Error::Shape(format!(
                "tail_start {} out of range for {} knots",
                self.tail_start, n
            )));
        }
        let tail = n - self.tail_start;
        if self.gen_mean.len() != tail || self.gen_samples.iter().any(|s| s.len() != tail) {
            return Err(Error::Shape(format!(
                "generator columns must cover the {tail}-knot prediction window"
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.check()?;
        let mut w = BufWriter::new(File::create(path)?);
        let mut header = vec![
            "t".to_string(),
            "y".to_string(),
            "x".to_string(),
            "kalman_mean".to_string(),
            "kalman_var".to_string(),
            "gen_mean".to_string(),
        ];
        header.extend((1..=self.gen_samples.len()).map(|i| format!("gen_sample_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = format!(
                "{},{},{},{},{}",
                self.times[k], self.y[k], self.x[k], self.kalman_mean[k], self.kalman_var[k]
            );
            if k >= self.tail_start {
                let i = k - self.tail_start;
                row.push_str(&format!(",{}", self.gen_mean[i]));
                for sample in &self.gen_samples {
                    row.push_str(&format!(",{}", sample[i]));
                }
            } else {
                for _ in 0..=self.gen_samples.len() {
                    row.push(',');
                }
            }
            writeln!(w, "{row}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(File::open(path)?));
        let n_samples = {
            let header: Vec<&str> = rdr.headers()?.iter().collect();
            let fixed = ["t", "y", "x", "kalman_mean", "kalman_var", "gen_mean"];
            if header.len() < fixed.len() || header[..fixed.len()] != fixed {
                return Err(Error::Format(format!(
                    "unexpected trajectory header start {:?}",
                    &header[..header.len().min(6)]
                )));
            }
            for (i, name) in header[fixed.len()..].iter().enumerate() {
                if *name != format!("gen_sample_{}", i + 1) {
                    return Err(Error::Format(format!(
                        "unexpected sample column {name:?} at position {}",
                        fixed.len() + i
                    )));
                }
            }
            header.len() - fixed.len()
        };

        let parse = |field: &str, what: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad {what} value {field:?}")))
        };

        let mut table = TrajectoryTable {
            times: Vec::new(),
            y: Vec::new(),
            x: Vec::new(),
            kalman_mean: Vec::new(),
            kalman_var: Vec::new(),
            tail_start: 0,
            gen_mean: Vec::new(),
            gen_samples: vec![Vec::new(); n_samples],
        };
        let mut in_tail = false;
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 6 + n_samples {
                return Err(Error::Format(format!(
                    "trajectory row {row_idx} has {} fields, want {}",
                    record.len(),
                    6 + n_samples
                )));
            }
            table.times.push(parse(&record[0], "t")?);
            table.y.push(parse(&record[1], "y")?);
            table.x.push(parse(&record[2], "x")?);
            table.kalman_mean.push(parse(&record[3], "kalman_mean")?);
            table.kalman_var.push(parse(&record[4], "kalman_var")?);
            if record[5].is_empty() {
                if in_tail {
                    return Err(Error::Format(format!(
                        "trajectory row {row_idx}: generator column empty after the window began"
                    )));
                }
                table.tail_start = row_idx + 1;
            } else {
                in_tail = true;
                table.gen_mean.push(parse(&record[5], "gen_mean")?);
                for (i, sample) in table.gen_samples.iter_mut().enumerate() {
                    sample.push(parse(&record[6 + i], format!("gen_sample_{}", i + 1).as_str())?);
                }
            }
        }
        table.check()?;
        Ok(table)
    }
}

/// One row of the side-by-side comparison table: filter versus generator at
/// the conditioning time and at the end of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub traj_id: usize,
    pub kalman_mean_s: f64,
    pub gen_mean_s: f64,
    pub sq_err_s: f64,
    pub kalman_mean_end: f64,
    pub gen_mean_end: f64,
    pub sq_err_end: f64,
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "traj_id,kalman_mean_s,gen_mean_s,sq_err_s,kalman_mean_end,gen_mean_end,sq_err_end"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.traj_id,
            r.kalman_mean_s,
            r.gen_mean_s,
            r.sq_err_s,
            r.kalman_mean_end,
            r.gen_mean_end,
            r.sq_err_end
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    {
        let header: Vec<&str> = rdr.headers()?.iter().collect();
        let want = [
            "traj_id",
            "kalman_mean_s",
            "gen_mean_s",
            "sq_err_s",
            "kalman_mean_end",
            "gen_mean_end",
            "sq_err_end",
        ];
        if header != want {
            return Err(Error::Format(format!("unexpected comparison header {header:?}")));
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 7 {
            return Err(Error::Format(format!(
                "comparison row has {} fields, want 7",
                record.len()
            )));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad {what} value {:?}", &record[i])))
        };
        rows.push(ComparisonRow {
            traj_id: record[0]
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad traj_id {:?}", &record[0])))?,
            kalman_mean_s: num(1, "kalman_mean_s")?,
            gen_mean_s: num(2, "gen_mean_s")?,
            sq_err_s: num(3, "sq_err_s")?,
            kalman_mean_end: num(4, "kalman_mean_end")?,
            gen_mean_end: num(5, "gen_mean_end")?,
            sq_err_end: num(6, "sq_err_end")?,
        });
    }
    Ok(rows)
}

/// Serializes a value as pretty JSON with a trailing newline. Field order
/// follows the struct declaration, so identical values produce identical
/// bytes.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
