//! `sigwgan simulate`: write the training dataset and its metadata sidecar.

use sigwgan_core::sde::{generate_dataset, Dataset};
use sigwgan_core::Result;

use crate::artifacts::{dataset_csv_path, dataset_meta_path};
use crate::config::Run;

pub fn run(run: &Run) -> Result<Dataset> {
    std::fs::create_dir_all(&run.out)?;
    let config = &run.config;
    let dataset =
        generate_dataset(&config.sde_system()?, &config.partition()?, config.m, config.seed)?;
    let csv_path = dataset_csv_path(&run.out);
    dataset.write(&csv_path, &dataset_meta_path(&run.out))?;
    log::info!("simulated {} trajectories with seed {}", config.m, config.seed);
    println!("wrote {} trajectories to {}", config.m, csv_path.display());
    Ok(dataset)
}
