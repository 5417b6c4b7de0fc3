//! `sigwgan compare`: evaluate, then add a side-by-side table of filter and
//! generator means per test trajectory.

use sigwgan_core::Result;

use crate::artifacts::{comparison_path, write_comparison, ComparisonRow, Metrics};
use crate::config::Run;

use super::evaluate;

pub fn run(run: &Run) -> Result<Metrics> {
    let evaluation = evaluate::evaluate(run)?;
    let rows: Vec<ComparisonRow> = evaluation
        .per_trajectory
        .iter()
        .enumerate()
        .map(|(j, t)| ComparisonRow {
            traj_id: j,
            kalman_mean_s: t.kalman_s,
            gen_mean_s: t.gen_s,
            sq_err_s: (t.gen_s - t.kalman_s) * (t.gen_s - t.kalman_s),
            kalman_mean_end: t.kalman_end,
            gen_mean_end: t.gen_end,
            sq_err_end: (t.gen_end - t.kalman_end) * (t.gen_end - t.kalman_end),
        })
        .collect();
    let path = comparison_path(&run.out);
    write_comparison(&path, &rows)?;

    let m = &evaluation.metrics;
    println!(
        "compared {} trajectories: correlation at s {:.4}, mse at s {:.5} \
         (baseline {:.5})",
        m.n_test, m.correlation_at_s, m.mse_at_s, m.baseline_mse
    );
    println!("wrote {}", path.display());
    Ok(evaluation.metrics)
}
