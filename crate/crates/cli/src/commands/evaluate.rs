//! `sigwgan evaluate`: score a trained checkpoint against the closed-form
//! filter on freshly simulated held-out trajectories, writing a metrics JSON
//! and plot-ready per-trajectory CSVs.

use sigwgan_core::rng::{purpose, substream};
use sigwgan_core::sde::simulate;
use sigwgan_core::{Error, Result};

use crate::artifacts::{
    checkpoint_path, metrics_path, trajectory_path, Checkpoint, Metrics, TrajectoryTable,
};
use crate::config::{Run, RunConfig};

/// Per-trajectory endpoints kept for the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub kalman_s: f64,
    pub gen_s: f64,
    pub kalman_end: f64,
    pub gen_end: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub per_trajectory: Vec<TrajectorySummary>,
}

pub fn run(run: &Run) -> Result<Metrics> {
    let evaluation = evaluate(run)?;
    let m = &evaluation.metrics;
    println!(
        "evaluated {} held-out trajectories: correlation at s {:.4}, \
         mse at s {:.5} (baseline {:.5}), horizon mse {:.5}",
        m.n_test, m.correlation_at_s, m.mse_at_s, m.baseline_mse, m.mse_horizon
    );
    println!("wrote {}", metrics_path(&run.out).display());
    Ok(evaluation.metrics)
}

/// Simulates the test set, runs filter and generator side by side, writes
/// metrics plus the first `n_plot` trajectory tables, and returns both the
/// metrics and the per-trajectory endpoint summaries.
pub fn evaluate(run: &Run) -> Result<Evaluation> {
    std::fs::create_dir_all(&run.out)?;
    let config = &run.config;
    let checkpoint = Checkpoint::load(&checkpoint_path(&run.out))?;
    check_checkpoint(&checkpoint.config, config)?;

    let system = config.sde_system()?;
    let oracle = config.kalman_oracle()?;
    let partition = config.partition()?;
    let times = partition.times().to_vec();
    let idx_s = partition
        .index_of(config.s)
        .ok_or_else(|| Error::Invalid(format!("s = {} not on the grid", config.s)))?;
    let generator = &checkpoint.generator;

    let mut gen_at_s = Vec::with_capacity(config.n_test);
    let mut kalman_at_s = Vec::with_capacity(config.n_test);
    let mut per_trajectory = Vec::with_capacity(config.n_test);
    let mut horizon_sum = 0.0;

    for j in 0..config.n_test {
        // Test stream ids start at m, so training never saw these paths.
        let mut rng = substream(config.seed, &[purpose::TRAJECTORY, (config.m + j) as u64]);
        let trajectory = simulate(&system, &partition, &mut rng)?;

        let filtered = oracle.filter(&trajectory.y)?;
        let predicted = oracle.predict_grid(&filtered[idx_s], &times[idx_s..])?;

        let encoded = generator.encode(&trajectory.y)?;
        let mut mc_rng = substream(config.seed, &[purpose::EVAL_MC, j as u64]);
        let samples = generator.sample_paths(&encoded, config.eval_mc_samples, &mut mc_rng)?;
        // Knot-wise average in draw order, matching the library's mean path.
        let n_tail = times.len() - idx_s;
        let mut gen_mean = vec![0.0; n_tail];
        for sample in &samples {
            for (acc, k) in gen_mean.iter_mut().zip(0..n_tail) {
                *acc += sample.knot_value(k)[0];
            }
        }
        for acc in gen_mean.iter_mut() {
            *acc /= samples.len() as f64;
        }

        let horizon: f64 = gen_mean
            .iter()
            .zip(&predicted)
            .map(|(g, p)| (g - p.mean) * (g - p.mean))
            .sum::<f64>()
            / n_tail as f64;
        horizon_sum += horizon;
        gen_at_s.push(gen_mean[0]);
        kalman_at_s.push(predicted[0].mean);
        per_trajectory.push(TrajectorySummary {
            kalman_s: predicted[0].mean,
            gen_s: gen_mean[0],
            kalman_end: predicted[n_tail - 1].mean,
            gen_end: gen_mean[n_tail - 1],
        });

        if j < config.n_plot {
            let table = TrajectoryTable {
                times: times.clone(),
                y: (0..times.len()).map(|k| trajectory.y.knot_value(k)[0]).collect(),
                x: (0..times.len()).map(|k| trajectory.x.knot_value(k)[0]).collect(),
                kalman_mean: (0..times.len())
                    .map(|k| if k < idx_s { filtered[k].mean } else { predicted[k - idx_s].mean })
                    .collect(),
                kalman_var: (0..times.len())
                    .map(|k| if k < idx_s { filtered[k].var } else { predicted[k - idx_s].var })
                    .collect(),
                tail_start: idx_s,
                gen_mean: gen_mean.clone(),
                gen_samples: samples
                    .iter()
                    .map(|sample| (0..n_tail).map(|k| sample.knot_value(k)[0]).collect())
                    .collect(),
            };
            table.write(&trajectory_path(&run.out, j))?;
        }
    }

    let horizon_mse = horizon_sum / config.n_test as f64;
    let metrics = compute_metrics(&gen_at_s, &kalman_at_s, horizon_mse, config.seed)?;
    metrics.save(&metrics_path(&run.out))?;
    Ok(Evaluation { metrics, per_trajectory })
}

/// Assembles the summary metrics from the at-s endpoints and the averaged
/// horizon error. Split out so the arithmetic can be pinned down directly:
/// feeding the filter means as the generator means gives zero MSE and
/// correlation one, and the baseline equals the population variance of the
/// filter means.
pub fn compute_metrics(
    gen_at_s: &[f64],
    kalman_at_s: &[f64],
    mse_horizon: f64,
    seed: u64,
) -> Result<Metrics> {
    let n = gen_at_s.len();
    if n != kalman_at_s.len() {
        return Err(Error::Shape(format!(
            "{} generator means vs {} filter means",
            n,
            kalman_at_s.len()
        )));
    }
    if n < 2 {
        return Err(Error::Invalid(
            "metrics need at least two test trajectories".into(),
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gen_mean = mean(gen_at_s);
    let kalman_mean = mean(kalman_at_s);

    let mse_at_s = gen_at_s
        .iter()
        .zip(kalman_at_s)
        .map(|(g, k)| (g - k) * (g - k))
        .sum::<f64>()
        / n as f64;
    let baseline_mse = kalman_at_s
        .iter()
        .map(|k| (k - kalman_mean) * (k - kalman_mean))
        .sum::<f64>()
        / n as f64;

    let cov = gen_at_s
        .iter()
        .zip(kalman_at_s)
        .map(|(g, k)| (g - gen_mean) * (k - kalman_mean))
        .sum::<f64>()
        / n as f64;
    let gen_var =
        gen_at_s.iter().map(|g| (g - gen_mean) * (g - gen_mean)).sum::<f64>() / n as f64;
    if gen_var <= 0.0 || baseline_mse <= 0.0 {
        return Err(Error::Numerical(
            "degenerate test set: constant means leave the correlation undefined".into(),
        ));
    }
    let correlation_at_s = cov / (gen_var * baseline_mse).sqrt();

    Ok(Metrics {
        mse_at_s,
        mse_horizon,
        correlation_at_s,
        baseline_mse,
        n_test: n,
        seed,
    })
}

/// The checkpoint must describe the same experiment the flags resolved to;
/// training-only knobs may differ without changing what evaluation sees.
fn check_checkpoint(trained: &RunConfig, requested: &RunConfig) -> Result<()> {
    let mut mismatches = Vec::new();
    if trained.system != requested.system {
        mismatches.push(format!("system {:?} vs {:?}", trained.system, requested.system));
    }
    if trained.t_end != requested.t_end {
        mismatches.push(format!("t_end {} vs {}", trained.t_end, requested.t_end));
    }
    if trained.knots != requested.knots {
        mismatches.push(format!("knots {} vs {}", trained.knots, requested.knots));
    }
    if trained.s != requested.s {
        mismatches.push(format!("s {} vs {}", trained.s, requested.s));
    }
    if trained.m != requested.m {
        mismatches.push(format!("m {} vs {}", trained.m, requested.m));
    }
    if trained.seed != requested.seed {
        mismatches.push(format!("seed {} vs {}", trained.seed, requested.seed));
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "checkpoint does not match the requested config ({}); \
             re-run train or adjust the flags",
            mismatches.join("; ")
        )))
    }
}
