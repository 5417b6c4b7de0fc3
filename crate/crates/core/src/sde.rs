//! Euler-Maruyama simulation of the signal/observation system.
//!
//! The simulated pair follows
//!
//! ```text
//!   dX_t = b(t, X_t, Y_t) dt + sigma(t, X_t, Y_t) dW_t + rho(t, X_t, Y_t) dV_t
//!   dY_t = h(t, X_t, Y_t) dt + dW_t
//! ```
//!
//! with independent Brownian motions W (dim_y) and V (dim_v). The SAME W
//! increments drive both lines, which couples the observation noise into the
//! signal through sigma; setting sigma to zero decouples them.
//!
//! One Euler step over [t_k, t_k+1] with dt = t_k+1 - t_k draws
//! dW ~ N(0, dt I) and dV ~ N(0, dt I) and updates
//!
//! ```text
//!   X_k+1 = X_k + b dt + sigma dW + rho dV
//!   Y_k+1 = Y_k + h dt + dW
//! ```
//!
//! with all coefficients evaluated at the left endpoint. Per trajectory the
//! draw order is fixed: first the initial condition (X_0 then Y_0), then per
//! step the dW components followed by the dV components. Tests and substream
//! replay rely on that order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{Partition, PiecewiseLinearPath};
use crate::rng::{purpose, substream};

/// States whose sup-norm exceeds this are treated as a blown-up simulation.
pub const BLOW_UP_LIMIT: f64 = 1e8;

/// A drift or diffusion coefficient: writes its value at (t, x, y) into `out`.
/// Drifts fill a vector (dim_x or dim_y); diffusion loadings fill a row-major
/// matrix (dim_x rows, noise dimension columns).
pub type Coefficient = Box<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Draws (X_0, Y_0).
pub type InitSampler = Box<dyn Fn(&mut dyn RngCore) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// The coefficient functions and dimensions of one signal/observation system.
pub struct SdeSystem {
    /// Identifier recorded in dataset metadata.
    pub name: String,
    /// Signal dimension d.
    pub dim_x: usize,
    /// Observation dimension, also the dimension of the shared noise W.
    pub dim_y: usize,
    /// Dimension of the signal-only noise V.
    pub dim_v: usize,
    /// Signal drift b(t, x, y), dim_x values.
    pub drift: Coefficient,
    /// Observation drift h(t, x, y), dim_y values.
    pub obs_drift: Coefficient,
    /// Shared-noise loading sigma(t, x, y), dim_x x dim_y row-major.
    pub sigma: Coefficient,
    /// Signal-noise loading rho(t, x, y), dim_x x dim_v row-major.
    pub rho: Coefficient,
    /// Initial-condition sampler.
    pub init: InitSampler,
}

impl SdeSystem {
    fn validate(&self) -> Result<()> {
        if self.dim_x < 1 || self.dim_y < 1 {
            return Err(Error::Invalid(
                "sde system needs dim_x >= 1 and dim_y >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// The scalar linear benchmark system behind the built-in presets:
/// dX = 0.1 (1 + t) X dt + dV, dY = 0.2 X dt + dW, with X_0 and Y_0 drawn
/// independently from N(0, 1). The signal never sees W (sigma = 0), and the
/// observation gain is weak, which is what makes filtering non-trivial.
pub fn benchmark_system() -> SdeSystem {
    SdeSystem {
        name: "eq14".into(),
        dim_x: 1,
        dim_y: 1,
        dim_v: 1,
        drift: Box::new(|t, x, _y, out| out[0] = 0.1 * (1.0 + t) * x[0]),
        obs_drift: Box::new(|_t, x, _y, out| out[0] = 0.2 * x[0]),
        sigma: Box::new(|_t, _x, _y, out| out[0] = 0.0),
        rho: Box::new(|_t, _x, _y, out| out[0] = 1.0),
        init: Box::new(|rng| {
            let x0: f64 = rng.sample(StandardNormal);
            let y0: f64 = rng.sample(StandardNormal);
            (vec![x0], vec![y0])
        }),
    }
}

/// One simulated trajectory: the hidden signal and its observation record on
/// a shared partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: PiecewiseLinearPath,
    pub y: PiecewiseLinearPath,
}

/// Euler-Maruyama simulation of one trajectory on the given partition.
pub fn simulate(system: &SdeSystem, partition: &Partition, rng: &mut dyn RngCore) -> Result<Trajectory> {
    system.validate()?;
    let (dx, dy, dv) = (system.dim_x, system.dim_y, system.dim_v);
    let (x0, y0) = (system.init)(rng);
    if x0.len() != dx || y0.len() != dy {
        return Err(Error::Shape(format!(
            "init sampler returned dims ({}, {}), system has ({}, {})",
            x0.len(),
            y0.len(),
            dx,
            dy
        )));
    }

    let times = partition.times();
    let n = times.len();
    let mut xs = Vec::with_capacity(n * dx);
    let mut ys = Vec::with_capacity(n * dy);
    xs.extend_from_slice(&x0);
    ys.extend_from_slice(&y0);

    let mut x = x0;
    let mut y = y0;
    let mut b = vec![0.0; dx];
    let mut h = vec![0.0; dy];
    let mut sig = vec![0.0; dx * dy];
    let mut rho = vec![0.0; dx * dv];
    let mut dw = vec![0.0; dy];
    let mut dvn = vec![0.0; dv];

    for k in 0..n - 1 {
        let t = times[k];
        let dt = times[k + 1] - times[k];
        let sd = dt.sqrt();
        for w in dw.iter_mut() {
            *w = sd * rng.sample::<f64, _>(StandardNormal);
        }
        for v in dvn.iter_mut() {
            *v = sd * rng.sample::<f64, _>(StandardNormal);
        }

        (system.drift)(t, &x, &y, &mut b);
        (system.obs_drift)(t, &x, &y, &mut h);
        (system.sigma)(t, &x, &y, &mut sig);
        (system.rho)(t, &x, &y, &mut rho);

        for i in 0..dx {
            let mut inc = b[i] * dt;
            for j in 0..dy {
                inc += sig[i * dy + j] * dw[j];
            }
            for j in 0..dv {
                inc += rho[i * dv + j] * dvn[j];
            }
            x[i] += inc;
        }
        for i in 0..dy {
            y[i] += h[i] * dt + dw[i];
        }

        let sup = x
            .iter()
            .chain(y.iter())
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        if !sup.is_finite() || sup > BLOW_UP_LIMIT {
            return Err(Error::Numerical(format!(
                "simulation blew up at t = {:.6}: |state| = {:.3e} exceeds {:.0e}",
                times[k + 1],
                sup,
                BLOW_UP_LIMIT
            )));
        }

        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
    }

    Ok(Trajectory {
        x: PiecewiseLinearPath::from_flat(partition.clone(), dx, xs)?,
        y: PiecewiseLinearPath::from_flat(partition.clone(), dy, ys)?,
    })
}

/// Sidecar metadata stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub seed: u64,
    pub m: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub times: Vec<f64>,
}

/// A batch of simulated trajectories plus the metadata describing how they
/// were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

/// Simulates m trajectories. Trajectory j draws from the RNG substream
/// (seed, TRAJECTORY, j), so the dataset is reproducible bit for bit and
/// trajectories are independent regardless of processing order. Evaluation
/// code reserves stream ids >= m for held-out data.
pub fn generate_dataset(
    system: &SdeSystem,
    partition: &Partition,
    m: usize,
    seed: u64,
) -> Result<Dataset> {
    system.validate()?;
    if m < 1 {
        return Err(Error::Invalid("dataset needs m >= 1 trajectories".into()));
    }
    if partition.t0().abs() > 1e-12 {
        return Err(Error::Invalid(
            "dataset partitions start at time 0".into(),
        ));
    }
    let mut trajectories = Vec::with_capacity(m);
    for j in 0..m {
        let mut rng = substream(seed, &[purpose::TRAJECTORY, j as u64]);
        trajectories.push(simulate(system, partition, &mut rng)?);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            system: system.name.clone(),
            seed,
            m,
            dim_x: system.dim_x,
            dim_y: system.dim_y,
            times: partition.times().to_vec(),
        },
        trajectories,
    })
}

impl Dataset {
    pub fn partition(&self) -> Result<Partition> {
        Partition::new(self.meta.times.clone())
    }

    /// Writes the trajectory table and its metadata sidecar.
    ///
    /// The CSV has columns traj_id, t, x_1..x_d, y_1..y_d' with one row per
    /// (trajectory, knot); floats are printed in shortest round-trip form, so
    /// reading the file back reproduces the values bit for bit.
    pub fn write(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let file = File::create(csv_path)?;
        let mut w = BufWriter::new(file);
        let (dx, dy) = (self.meta.dim_x, self.meta.dim_y);
        let mut header = vec!["traj_id".to_string(), "t".to_string()];
        header.extend((1..=dx).map(|i| format!("x_{i}")));
        header.extend((1..=dy).map(|i| format!("y_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (j, traj) in self.trajectories.iter().enumerate() {
            for (k, &t) in self.meta.times.iter().enumerate() {
                let mut row = String::new();
                row.push_str(&format!("{j},{t}"));
                for v in traj.x.knot_value(k) {
                    row.push_str(&format!(",{v}"));
                }
                for v in traj.y.knot_value(k) {
                    row.push_str(&format!(",{v}"));
                }
                writeln!(w, "{row}")?;
            }
        }
        w.flush()?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(meta_path)?), &self.meta)?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::write`], checking the header and
    /// the row count against the sidecar.
    pub fn read(csv_path: &Path, meta_path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(meta_path)?))?;
        let partition = Partition::new(meta.times.clone())?;
        let (dx, dy) = (meta.dim_x, meta.dim_y);
        let n = meta.times.len();

        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(File::open(csv_path)?));
        {
            let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
            let mut want = vec!["traj_id".to_string(), "t".to_string()];
            want.extend((1..=dx).map(|i| format!("x_{i}")));
            want.extend((1..=dy).map(|i| format!("y_{i}")));
            if got != want {
                return Err(Error::Format(format!(
                    "dataset header {:?} does not match metadata (want {:?})",
                    got, want
                )));
            }
        }

        let parse = |field: &str, what: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad {what} value: {field:?}")))
        };

        let mut trajectories = Vec::with_capacity(meta.m);
        let mut xs: Vec<f64> = Vec::with_capacity(n * dx);
        let mut ys: Vec<f64> = Vec::with_capacity(n * dy);
        let mut row_in_traj = 0usize;
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 + dx + dy {
                return Err(Error::Format(format!(
                    "dataset row {row_idx}: {} fields, want {}",
                    record.len(),
                    2 + dx + dy
                )));
            }
            let traj_id: usize = record[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad traj_id: {:?}", &record[0])))?;
            if traj_id != trajectories.len() {
                return Err(Error::Format(format!(
                    "dataset row {row_idx}: traj_id {traj_id} out of order (expected {})",
                    trajectories.len()
                )));
            }
            let t = parse(&record[1], "time")?;
            if (t - meta.times[row_in_traj]).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "dataset row {row_idx}: time {t} does not match partition knot {}",
                    meta.times[row_in_traj]
                )));
            }
            for i in 0..dx {
                xs.push(parse(&record[2 + i], "x")?);
            }
            for i in 0..dy {
                ys.push(parse(&record[2 + dx + i], "y")?);
            }
            row_in_traj += 1;
            if row_in_traj == n {
                trajectories.push(Trajectory {
                    x: PiecewiseLinearPath::from_flat(partition.clone(), dx, std::mem::take(&mut xs))?,
                    y: PiecewiseLinearPath::from_flat(partition.clone(), dy, std::mem::take(&mut ys))?,
                });
                row_in_traj = 0;
                xs.reserve(n * dx);
                ys.reserve(n * dy);
            }
        }
        if row_in_traj != 0 {
            return Err(Error::Format(
                "dataset ends mid-trajectory (truncated file?)".into(),
            ));
        }
        if trajectories.len() != meta.m {
            return Err(Error::Format(format!(
                "dataset has {} trajectories, metadata says {}",
                trajectories.len(),
                meta.m
            )));
        }
        Ok(Self { meta, trajectories })
    }
}
