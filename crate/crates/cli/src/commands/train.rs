//! `sigwgan train`: fit the feature regression and descend the generator's
//! moment-matching loss, writing a checkpoint and a loss trace.

use sigwgan_core::generator::Generator;
use sigwgan_core::sde::{Dataset, DatasetMeta};
use sigwgan_core::training::{train, write_loss_trace};
use sigwgan_core::{Error, Result};

use crate::artifacts::{
    checkpoint_path, dataset_csv_path, dataset_meta_path, loss_trace_path, Checkpoint,
};
use crate::config::{Run, RunConfig};

use super::simulate;

pub fn run(run: &Run) -> Result<Checkpoint> {
    std::fs::create_dir_all(&run.out)?;
    let config = &run.config;
    let dataset = ensure_dataset(run)?;

    let generator = Generator::init(config.generator_config()?, config.seed)?;
    log::info!(
        "training {} parameters for {} epochs on {} trajectories",
        generator.flat_params().len(),
        config.epochs,
        config.m
    );
    let output = train(generator, &dataset, &config.train_config())?;

    write_loss_trace(&loss_trace_path(&run.out), &output.report)?;
    let checkpoint = Checkpoint {
        config: config.clone(),
        generator: output.generator,
        regression: output.regression,
        report: output.report,
    };
    let path = checkpoint_path(&run.out);
    checkpoint.save(&path)?;

    let report = &checkpoint.report;
    if report.early_stop {
        log::warn!("training stopped early; the checkpoint holds the last finished epoch");
    }
    match (report.epoch_losses.first(), report.epoch_losses.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} epochs ({} steps): loss {first:.4} -> {last:.4}, \
             validation residual {:.4}",
            report.epochs_run, report.steps, report.val_residual
        ),
        _ => println!(
            "no descent epochs requested; wrote the initial checkpoint \
             (validation residual {:.4})",
            report.val_residual
        ),
    }
    println!("wrote {}", path.display());
    Ok(checkpoint)
}

/// Loads the run's dataset, generating and persisting it first if the files
/// are absent. A present dataset that disagrees with the config is an error
/// rather than a silent regeneration.
fn ensure_dataset(run: &Run) -> Result<Dataset> {
    let csv_path = dataset_csv_path(&run.out);
    let meta_path = dataset_meta_path(&run.out);
    if !csv_path.exists() || !meta_path.exists() {
        return simulate::run(run);
    }
    let dataset = Dataset::read(&csv_path, &meta_path)?;
    check_dataset(&dataset.meta, &run.config)?;
    log::info!("reusing dataset at {}", csv_path.display());
    Ok(dataset)
}

fn check_dataset(meta: &DatasetMeta, config: &RunConfig) -> Result<()> {
    let mut mismatches = Vec::new();
    if meta.system != config.system {
        mismatches.push(format!("system {:?} vs {:?}", meta.system, config.system));
    }
    if meta.seed != config.seed {
        mismatches.push(format!("seed {} vs {}", meta.seed, config.seed));
    }
    if meta.m != config.m {
        mismatches.push(format!("m {} vs {}", meta.m, config.m));
    }
    if meta.times != config.partition()?.times() {
        mismatches.push(format!(
            "grid ({} knots ending at {:?}) vs ({} knots ending at {})",
            meta.times.len(),
            meta.times.last(),
            config.knots,
            config.t_end
        ));
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "existing dataset does not match the config ({}); \
             delete it or point --out elsewhere",
            mismatches.join("; ")
        )))
    }
}
