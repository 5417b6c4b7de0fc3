//! Training the generator against signature moments of the data.
//!
//! The procedure has two stages. First a ridge regression learns, from
//! simulated pairs (Y, X), the linear map sending the truncated signature of
//! the observed path on [0, s] to the expected truncated signature of the
//! hidden path on [s, T]; this turns conditional expectation estimation into
//! one linear solve. Second, the generator is fitted so that the Monte Carlo
//! average of its sample-path signatures matches the regression's prediction
//! for each observed path, by descending the Euclidean distance between the
//! two signature vectors (a Wasserstein-style moment matching objective).
//!
//! Signatures of hidden-path segments are anchored: the segment is given an
//! artificial starting knot one grid step before s with value zero, so the
//! signature sees the absolute level at s and not just increments. Without
//! the anchor, any constant shift of the generated paths would leave the
//! loss unchanged and the level at s would be unlearnable.
//!
//! The loss is built twice, once on the tape for gradients and once as plain
//! arithmetic; both run identical operations in identical order, so their
//! values agree bit for bit. Training is deterministic given the seed: data
//! splits, minibatch shuffles, and latent draws all come from tagged
//! substreams.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, NodeId, Optimizer, Tape};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorNodes};
use crate::paths::{PiecewiseLinearPath, TIME_TOL};
use crate::rng::{purpose, substream};
use crate::sde::Dataset;
use crate::signature::{expected_signature, path_signature};
use crate::tensor_algebra::{algebra_len, TruncatedTensor};

/// Truncated signature of the observed path restricted to [t0, s], after
/// time augmentation. This is the regression's feature vector; its leading
/// coefficient is the constant 1, which acts as the intercept.
pub fn observation_features(y: &PiecewiseLinearPath, s: f64, depth: usize) -> Result<Vec<f64>> {
    let restricted = y.restrict(y.partition().t0(), s)?;
    let augmented = restricted.time_augment();
    Ok(path_signature(&augmented, depth)?.coeffs().to_vec())
}

/// Truncated signature of the hidden path restricted to [s, t_end], anchored
/// at a zero-valued knot `basepoint_step` before s and then time-augmented.
/// The anchor makes the signature sensitive to the level at s.
pub fn target_signature(
    x: &PiecewiseLinearPath,
    s: f64,
    basepoint_step: f64,
    depth: usize,
) -> Result<Vec<f64>> {
    let tail = x.restrict(s, x.partition().t_end())?;
    let anchored = tail.with_basepoint(basepoint_step)?;
    let augmented = anchored.time_augment();
    Ok(path_signature(&augmented, depth)?.coeffs().to_vec())
}

/// Linear map from observation-signature features to expected hidden-path
/// signatures, fitted by ridge regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigRegression {
    pub obs_dim: usize,
    pub sample_dim: usize,
    pub depth: usize,
    pub s: f64,
    pub basepoint_step: f64,
    /// Ridge strength actually used in the normal equations.
    pub ridge: f64,
    /// Row-major (target_dim x feature_dim) weights.
    pub weights: Vec<f64>,
}

impl SigRegression {
    pub fn feature_dim(&self) -> usize {
        algebra_len(1 + self.obs_dim, self.depth)
    }

    pub fn target_dim(&self) -> usize {
        algebra_len(1 + self.sample_dim, self.depth)
    }

    /// Fits the map on (observed, hidden) path pairs. `ridge` of None picks
    /// 1e-6 tr(Phi' Phi) / feature_dim, scaling with the features.
    pub fn fit(
        pairs: &[(&PiecewiseLinearPath, &PiecewiseLinearPath)],
        s: f64,
        depth: usize,
        ridge: Option<f64>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid("regression needs at least one path pair".into()));
        }
        let (y0, x0) = pairs[0];
        let obs_dim = y0.dim();
        let sample_dim = x0.dim();
        let idx = x0.partition().index_of(s).ok_or_else(|| {
            Error::Invalid(format!("conditioning time {s} is not a knot of the hidden path"))
        })?;
        if idx + 1 >= x0.partition().len() {
            return Err(Error::Invalid(
                "conditioning time must leave at least one step to predict".into(),
            ));
        }
        let basepoint_step = x0.partition().times()[idx + 1] - x0.partition().times()[idx];

        let mf = algebra_len(1 + obs_dim, depth);
        let mt = algebra_len(1 + sample_dim, depth);
        // Accumulate the normal equations G = Phi' Phi and C = Phi' Psi.
        let mut gram = vec![0.0; mf * mf];
        let mut cross = vec![0.0; mf * mt];
        for (y, x) in pairs {
            let phi = observation_features(y, s, depth)?;
            let psi = target_signature(x, s, basepoint_step, depth)?;
            if phi.len() != mf || psi.len() != mt {
                return Err(Error::Shape(
                    "path pair dimensions differ from the first pair".into(),
                ));
            }
            for i in 0..mf {
                let phi_i = phi[i];
                for j in 0..mf {
                    gram[i * mf + j] += phi_i * phi[j];
                }
                for t in 0..mt {
                    cross[i * mt + t] += phi_i * psi[t];
                }
            }
        }
        let ridge = ridge.unwrap_or_else(|| {
            let trace: f64 = (0..mf).map(|i| gram[i * mf + i]).sum();
            1e-6 * trace / mf as f64
        });
        for i in 0..mf {
            gram[i * mf + i] += ridge;
        }
        cholesky_solve_in_place(&mut gram, mf, &mut cross, mt)?;
        // cross now holds W transposed (feature_dim x target_dim).
        let mut weights = vec![0.0; mt * mf];
        for f in 0..mf {
            for t in 0..mt {
                weights[t * mf + f] = cross[f * mt + t];
            }
        }
        Ok(Self { obs_dim, sample_dim, depth, s, basepoint_step, ridge, weights })
    }

    /// Applies the map to precomputed features. The leading coefficient is
    /// pinned to 1, the exact value every true signature has there.
    pub fn predict_from_features(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let mf = self.feature_dim();
        if phi.len() != mf {
            return Err(Error::Shape(format!(
                "expected {mf} features, got {}",
                phi.len()
            )));
        }
        let mt = self.target_dim();
        let mut out = vec![0.0; mt];
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.weights[t * mf..(t + 1) * mf]
                .iter()
                .zip(phi)
                .map(|(w, p)| w * p)
                .sum();
        }
        out[0] = 1.0;
        Ok(out)
    }

    /// Predicted expected hidden-path signature given an observed path.
    pub fn predict(&self, y: &PiecewiseLinearPath) -> Result<Vec<f64>> {
        let phi = observation_features(y, self.s, self.depth)?;
        self.predict_from_features(&phi)
    }

    /// Mean Euclidean distance between predictions and realized target
    /// signatures over the given pairs.
    pub fn mean_l2_residual(
        &self,
        pairs: &[(&PiecewiseLinearPath, &PiecewiseLinearPath)],
    ) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Invalid("residual over an empty set of pairs".into()));
        }
        let mut total = 0.0;
        for (y, x) in pairs {
            let pred = self.predict(y)?;
            let psi = target_signature(x, self.s, self.basepoint_step, self.depth)?;
            let dist: f64 = pred
                .iter()
                .zip(&psi)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            total += dist;
        }
        Ok(total / pairs.len() as f64)
    }
}

/// Solves (G) X = B in place with G symmetric positive definite (m x m,
/// row-major) and B an m x k right-hand side; X overwrites B. Fails when G
/// is not positive definite, which for normal equations means the ridge is
/// too small for the feature Gram matrix.
fn cholesky_solve_in_place(g: &mut [f64], m: usize, b: &mut [f64], k: usize) -> Result<()> {
    // Factor G = L L' (lower triangle of g becomes L).
    for i in 0..m {
        for j in 0..=i {
            let mut sum = g[i * m + j];
            for p in 0..j {
                sum -= g[i * m + p] * g[j * m + p];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numerical(
                        "normal equations are not positive definite; raise the ridge parameter"
                            .into(),
                    ));
                }
                g[i * m + i] = sum.sqrt();
            } else {
                g[i * m + j] = sum / g[j * m + j];
            }
        }
    }
    // Forward substitution L Z = B.
    for i in 0..m {
        for c in 0..k {
            let mut sum = b[i * k + c];
            for p in 0..i {
                sum -= g[i * m + p] * b[p * k + c];
            }
            b[i * k + c] = sum / g[i * m + i];
        }
    }
    // Back substitution L' X = Z.
    for i in (0..m).rev() {
        for c in 0..k {
            let mut sum = b[i * k + c];
            for p in i + 1..m {
                sum -= g[p * m + i] * b[p * k + c];
            }
            b[i * k + c] = sum / g[i * m + i];
        }
    }
    Ok(())
}

/// Which optimizer updates the generator parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerSpec {
    Adam(AdamConfig),
    Sgd { lr: f64 },
}

impl OptimizerSpec {
    fn build(&self, n_params: usize) -> Optimizer {
        match *self {
            OptimizerSpec::Adam(cfg) => Optimizer::adam(n_params, cfg),
            OptimizerSpec::Sgd { lr } => Optimizer::sgd(lr),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Substream seed for splits, shuffles, and latent draws.
    pub seed: u64,
    /// Signature truncation depth for features, targets, and the loss.
    pub depth: usize,
    /// Conditioning time; must match the generator's.
    pub s: f64,
    /// Descent epochs; zero fits the regression but leaves the generator at
    /// its initial parameters.
    pub epochs: usize,
    pub batch_size: usize,
    /// Latent draws per loss evaluation.
    pub mc_samples: usize,
    /// Fraction of trajectories held out from the regression fit.
    pub val_fraction: f64,
    /// Ridge strength; None picks a scale-aware default.
    pub ridge: Option<f64>,
    pub optimizer: OptimizerSpec,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Invalid("signature depth must be at least 1".into()));
        }
        if self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::Invalid(
                "batch size and Monte Carlo samples must be positive".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// What happened during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub steps: usize,
    /// Mean training loss per epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Regression residual on the held-out split (constant across epochs).
    pub val_residual: f64,
    /// True when a non-finite loss or parameter forced an early stop; the
    /// parameters are rolled back to the last finished epoch.
    pub early_stop: bool,
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub generator: Generator,
    pub regression: SigRegression,
    pub report: TrainReport,
}

/// Builds the anchored, time-augmented signature of a generated path whose
/// knot values live on the tape. Mirrors [`target_signature`] exactly.
fn generated_signature_on_tape(
    tape: &mut Tape,
    knots: &[NodeId],
    tail_times: &[f64],
    basepoint_step: f64,
    depth: usize,
) -> NodeId {
    let dim = tape.value(knots[0]).len() + 1;
    // Anchor increment from the zero knot one grid step before s. The step
    // is recomputed as a time difference so it matches the off-tape path
    // arithmetic bit for bit.
    let anchor_time = tail_times[0] - basepoint_step;
    let dt0 = tail_times[0] - anchor_time;
    let dt0_leaf = tape.leaf(&[dt0]);
    let first_inc = tape.concat2(dt0_leaf, knots[0]);
    let mut sig = tape.tensor_exp(first_inc, depth);
    for k in 0..knots.len() - 1 {
        let dt = tail_times[k + 1] - tail_times[k];
        let dt_leaf = tape.leaf(&[dt]);
        let dx = tape.sub(knots[k + 1], knots[k]);
        let inc = tape.concat2(dt_leaf, dx);
        let seg = tape.tensor_exp(inc, depth);
        sig = tape.tensor_mul(sig, seg, dim, depth);
    }
    sig
}

/// Builds the moment-matching loss for one observed path on the tape:
/// the Euclidean distance between the Monte Carlo mean of generated-path
/// signatures (one per latent draw) and the target signature.
pub fn sig_w1_loss_on_tape(
    tape: &mut Tape,
    generator: &Generator,
    nodes: &GeneratorNodes,
    y: &PiecewiseLinearPath,
    target: &[f64],
    z_draws: &[Vec<f64>],
    depth: usize,
) -> Result<NodeId> {
    if z_draws.is_empty() {
        return Err(Error::Invalid("the loss needs at least one latent draw".into()));
    }
    let expect_len = algebra_len(1 + generator.config().sample_dim, depth);
    if target.len() != expect_len {
        return Err(Error::Shape(format!(
            "target signature has length {}, expected {expect_len}",
            target.len()
        )));
    }
    let tail = generator.config().tail_partition()?;
    let tail_times = tail.times().to_vec();
    let basepoint_step = tail.resolution();

    let encoded = generator.encode_on_tape(tape, nodes, y)?;
    let mut acc: Option<NodeId> = None;
    for z in z_draws {
        let knots = generator.sample_path_on_tape(tape, nodes, encoded, z)?;
        let sig = generated_signature_on_tape(tape, &knots, &tail_times, basepoint_step, depth);
        acc = Some(match acc {
            None => sig,
            Some(a) => tape.add(a, sig),
        });
    }
    let mean = tape.scale(acc.unwrap(), 1.0 / z_draws.len() as f64);
    let target_leaf = tape.leaf(target);
    let diff = tape.sub(mean, target_leaf);
    Ok(tape.l2_norm(diff))
}

/// Off-tape value of [`sig_w1_loss_on_tape`] for the same latent draws;
/// agrees with the tape bit for bit.
pub fn sig_w1_loss_value(
    generator: &Generator,
    y: &PiecewiseLinearPath,
    target: &[f64],
    z_draws: &[Vec<f64>],
    depth: usize,
) -> Result<f64> {
    if z_draws.is_empty() {
        return Err(Error::Invalid("the loss needs at least one latent draw".into()));
    }
    let basepoint_step = generator.config().tail_partition()?.resolution();
    let encoded = generator.encode(y)?;
    let mut sigs = Vec::with_capacity(z_draws.len());
    for z in z_draws {
        let path = generator.sample_path(&encoded, z)?;
        let anchored = path.with_basepoint(basepoint_step)?;
        sigs.push(anchored.time_augment());
    }
    let mean = expected_signature(&sigs, depth)?;
    let target = TruncatedTensor::from_coeffs(
        1 + generator.config().sample_dim,
        depth,
        target.to_vec(),
    )?;
    mean.l2_distance(&target)
}

fn draw_latents(n: usize, dim: usize, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Fits the regression on the training split and descends the generator's
/// moment-matching loss over minibatches. Deterministic given the seed.
pub fn train(generator: Generator, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut generator = generator;
    let gen_cfg = generator.config().clone();
    if (gen_cfg.s - config.s).abs() > TIME_TOL {
        return Err(Error::Invalid(format!(
            "generator conditions at {} but training at {}",
            gen_cfg.s, config.s
        )));
    }
    let trajectories = &dataset.trajectories;
    if trajectories.is_empty() {
        return Err(Error::Invalid("dataset has no trajectories".into()));
    }
    if trajectories[0].y.partition() != &gen_cfg.partition {
        return Err(Error::Invalid(
            "dataset partition differs from the generator's".into(),
        ));
    }

    // Seeded split into training and validation trajectories.
    let n = trajectories.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(config.seed, &[purpose::SHUFFLE, 0]));
    let n_val = ((n as f64 * config.val_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let train_pairs: Vec<_> =
        train_idx.iter().map(|&i| (&trajectories[i].y, &trajectories[i].x)).collect();
    let val_pairs: Vec<_> =
        val_idx.iter().map(|&i| (&trajectories[i].y, &trajectories[i].x)).collect();
    let regression = SigRegression::fit(&train_pairs, config.s, config.depth, config.ridge)?;
    let val_residual = regression.mean_l2_residual(&val_pairs)?;

    // The regression is fixed from here on, so each training trajectory's
    // target signature can be computed once.
    let targets: Vec<Vec<f64>> = train_pairs
        .iter()
        .map(|(y, _)| regression.predict(y))
        .collect::<Result<_>>()?;

    let mut params = generator.flat_params();
    let mut opt = config.optimizer.build(params.len());
    let mut tape = Tape::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;
    let mut early_stop = false;

    let mut batch_grad = vec![0.0; params.len()];
    let mut item_grad = Vec::with_capacity(params.len());
    let mut positions: Vec<usize> = (0..train_idx.len()).collect();

    'epochs: for epoch in 0..config.epochs {
        let snapshot = params.clone();
        positions.shuffle(&mut substream(config.seed, &[purpose::SHUFFLE, 1 + epoch as u64]));
        let mut z_rng = substream(config.seed, &[purpose::TRAIN_MC, epoch as u64]);
        let mut loss_sum = 0.0;
        let mut items = 0usize;
        for batch in positions.chunks(config.batch_size) {
            batch_grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &pos in batch {
                let (y, _) = train_pairs[pos];
                let z_draws = draw_latents(config.mc_samples, gen_cfg.latent_dim, &mut z_rng);
                tape.clear();
                let nodes = generator.register(&mut tape);
                let loss_node = sig_w1_loss_on_tape(
                    &mut tape,
                    &generator,
                    &nodes,
                    y,
                    &targets[pos],
                    &z_draws,
                    config.depth,
                )?;
                let loss = tape.value(loss_node)[0];
                if !loss.is_finite() {
                    log::warn!(
                        "non-finite loss in epoch {epoch}; rolling back to the last epoch"
                    );
                    params = snapshot;
                    generator.set_flat_params(&params)?;
                    early_stop = true;
                    break 'epochs;
                }
                tape.backward(loss_node)?;
                item_grad.clear();
                generator.append_grads(&tape, &nodes, &mut item_grad)?;
                for (bg, g) in batch_grad.iter_mut().zip(&item_grad) {
                    *bg += g;
                }
                batch_loss += loss;
            }
            let inv = 1.0 / batch.len() as f64;
            batch_grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut params, &batch_grad)?;
            generator.set_flat_params(&params)?;
            steps += 1;
            loss_sum += batch_loss;
            items += batch.len();
        }
        if params.iter().any(|p| !p.is_finite()) {
            log::warn!("non-finite parameters after epoch {epoch}; rolling back");
            params = snapshot;
            generator.set_flat_params(&params)?;
            early_stop = true;
            break;
        }
        epoch_losses.push(loss_sum / items as f64);
    }

    let report = TrainReport {
        epochs_run: epoch_losses.len(),
        steps,
        epoch_losses,
        val_residual,
        early_stop,
    };
    Ok(TrainOutput { generator, regression, report })
}

/// Writes the per-epoch loss trace as CSV: epoch, mean_loss, val_residual.
pub fn write_loss_trace(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_loss", "val_residual"])?;
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        w.write_record([
            (e + 1).to_string(),
            loss.to_string(),
            report.val_residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a loss trace written by [`write_loss_trace`]. Returns one
/// (epoch, mean_loss, val_residual) triple per row.
pub fn read_loss_trace(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    {
        let got: Vec<&str> = rdr.headers()?.iter().collect();
        if got != ["epoch", "mean_loss", "val_residual"] {
            return Err(Error::Format(format!("unexpected loss trace header {got:?}")));
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Format(format!(
                "loss trace row has {} fields, want 3",
                record.len()
            )));
        }
        let epoch = record[0]
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("bad epoch {:?}", &record[0])))?;
        let loss = record[1]
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("bad mean_loss {:?}", &record[1])))?;
        let val = record[2]
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("bad val_residual {:?}", &record[2])))?;
        rows.push((epoch, loss, val));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, Layer, Mlp};
    use crate::generator::{GeneratorConfig, OdeStateCoupling};
    use crate::paths::Partition;
    use crate::rng::{purpose, substream};
    use crate::sde::{benchmark_system, generate_dataset};
    use rand::Rng;

    fn small_partition() -> Partition {
        Partition::equidistant(0.0, 1.0, 11).unwrap()
    }

    /// Random scalar observation paths plus a hidden tail built by `make_x`
    /// from (Y_s - Y_0) and the tail times.
    fn synthetic_pairs(
        n: usize,
        make_x: impl Fn(f64, &[f64]) -> Vec<f64>,
    ) -> Vec<(PiecewiseLinearPath, PiecewiseLinearPath)> {
        let part = small_partition();
        let s = 0.5;
        let idx = part.index_of(s).unwrap();
        let mut rng = substream(23, &[purpose::TEST, 1]);
        (0..n)
            .map(|_| {
                let mut y = vec![0.0; part.len()];
                y[0] = rng.gen_range(-1.0..1.0);
                for k in 1..part.len() {
                    y[k] = y[k - 1] + rng.gen_range(-0.3..0.3);
                }
                let dy_s = y[idx] - y[0];
                let x = make_x(dy_s, part.times());
                let y = PiecewiseLinearPath::from_flat(part.clone(), 1, y).unwrap();
                let x = PiecewiseLinearPath::from_flat(part.clone(), 1, x).unwrap();
                (y, x)
            })
            .collect()
    }

    fn as_ref_pairs(
        pairs: &[(PiecewiseLinearPath, PiecewiseLinearPath)],
    ) -> Vec<(&PiecewiseLinearPath, &PiecewiseLinearPath)> {
        pairs.iter().map(|(y, x)| (y, x)).collect()
    }

    #[test]
    fn features_start_with_the_constant_one() {
        let pairs = synthetic_pairs(1, |_, times| times.to_vec());
        let phi = observation_features(&pairs[0].0, 0.5, 3).unwrap();
        assert_eq!(phi.len(), algebra_len(2, 3));
        assert_eq!(phi[0], 1.0);
        let psi = target_signature(&pairs[0].1, 0.5, 0.1, 3).unwrap();
        assert_eq!(psi.len(), algebra_len(2, 3));
        assert_eq!(psi[0], 1.0);
    }

    #[test]
    fn anchored_signature_sees_the_level() {
        // Two constant hidden paths at different levels must have different
        // anchored signatures, though their increments are identical.
        let part = small_partition();
        let a = PiecewiseLinearPath::from_flat(part.clone(), 1, vec![1.0; 11]).unwrap();
        let b = PiecewiseLinearPath::from_flat(part, 1, vec![2.0; 11]).unwrap();
        let sig_a = target_signature(&a, 0.5, 0.1, 3).unwrap();
        let sig_b = target_signature(&b, 0.5, 0.1, 3).unwrap();
        let dist: f64 =
            sig_a.iter().zip(&sig_b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!(dist > 0.5, "anchored signatures too close: {dist}");
    }

    #[test]
    fn constant_targets_are_fit_exactly() {
        // Every trajectory shares one hidden tail, so the intercept column
        // alone must reproduce it.
        let pairs = synthetic_pairs(40, |_, times| times.iter().map(|t| 1.0 + 0.5 * t).collect());
        let refs = as_ref_pairs(&pairs);
        let reg = SigRegression::fit(&refs, 0.5, 3, Some(1e-10)).unwrap();
        let resid = reg.mean_l2_residual(&refs).unwrap();
        assert!(resid < 1e-8, "residual {resid}");
    }

    #[test]
    fn ramp_targets_are_inside_the_feature_span() {
        // Hidden tails are ramps with slope and level linear in Y_s - Y_0.
        // Their signature coefficients are polynomials of degree <= depth in
        // that increment, which depth-4 observation signatures span exactly.
        let pairs = synthetic_pairs(60, |dy, times| {
            times.iter().map(|&t| 0.3 * dy + (0.5 + 0.8 * dy) * (t - 0.5)).collect()
        });
        let refs = as_ref_pairs(&pairs);
        let reg = SigRegression::fit(&refs, 0.5, 4, Some(1e-12)).unwrap();
        let resid = reg.mean_l2_residual(&refs).unwrap();
        assert!(resid < 1e-6, "residual {resid}");
    }

    #[test]
    fn normal_equations_are_stationary_at_the_fit() {
        // At the ridge optimum, Phi'(Phi W' - Psi) + ridge W' = 0; verify the
        // assembled residual of the normal equations is tiny.
        let pairs = synthetic_pairs(30, |dy, times| {
            times.iter().map(|&t| dy + t * t).collect()
        });
        let refs = as_ref_pairs(&pairs);
        let depth = 3;
        let reg = SigRegression::fit(&refs, 0.5, depth, Some(1e-4)).unwrap();
        let mf = reg.feature_dim();
        let mt = reg.target_dim();
        let mut gram = vec![0.0; mf * mf];
        let mut cross = vec![0.0; mf * mt];
        for (y, x) in &refs {
            let phi = observation_features(y, 0.5, depth).unwrap();
            let psi = target_signature(x, 0.5, reg.basepoint_step, depth).unwrap();
            for i in 0..mf {
                for j in 0..mf {
                    gram[i * mf + j] += phi[i] * phi[j];
                }
                for t in 0..mt {
                    cross[i * mt + t] += phi[i] * psi[t];
                }
            }
        }
        let mut max_err: f64 = 0.0;
        for f in 0..mf {
            for t in 0..mt {
                let mut lhs = reg.ridge * reg.weights[t * mf + f];
                for j in 0..mf {
                    lhs += gram[f * mf + j] * reg.weights[t * mf + j];
                }
                max_err = max_err.max((lhs - cross[f * mt + t]).abs());
            }
        }
        assert!(max_err < 1e-8, "normal equation residual {max_err}");
    }

    #[test]
    fn singular_normal_equations_are_reported() {
        // One trajectory cannot determine dozens of weights; with no ridge
        // the Gram matrix is rank deficient.
        let pairs = synthetic_pairs(1, |_, times| times.to_vec());
        let refs = as_ref_pairs(&pairs);
        let err = SigRegression::fit(&refs, 0.5, 3, Some(0.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ridge"), "unhelpful error: {msg}");
    }

    #[test]
    fn predictions_pin_the_leading_coefficient() {
        let pairs = synthetic_pairs(20, |dy, times| times.iter().map(|&t| dy * t).collect());
        let refs = as_ref_pairs(&pairs);
        let reg = SigRegression::fit(&refs, 0.5, 3, None).unwrap();
        let pred = reg.predict(&pairs[0].0).unwrap();
        assert_eq!(pred[0], 1.0);
        assert!(reg.ridge > 0.0);
    }

    fn tiny_generator() -> Generator {
        let config = GeneratorConfig {
            obs_dim: 1,
            state_dim: 3,
            sample_dim: 1,
            latent_dim: 1,
            s: 0.5,
            partition: Partition::equidistant(0.0, 1.0, 5).unwrap(),
            enc_init_hidden: vec![4],
            enc_field_hidden: vec![4],
            dec_init_hidden: vec![4],
            dec_field_hidden: vec![4],
            coupling: OdeStateCoupling::CurrentState,
        };
        Generator::init(config, 31).unwrap()
    }

    fn tiny_observation(tag: u64) -> PiecewiseLinearPath {
        let part = Partition::equidistant(0.0, 1.0, 5).unwrap();
        let mut rng = substream(23, &[purpose::TEST, 2, tag]);
        let values: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        PiecewiseLinearPath::from_flat(part, 1, values).unwrap()
    }

    #[test]
    fn tape_and_plain_loss_agree_bitwise() {
        let gen = tiny_generator();
        let y = tiny_observation(1);
        let depth = 2;
        let target = vec![1.0; algebra_len(2, depth)];
        let mut rng = substream(23, &[purpose::TEST, 3]);
        let z_draws = draw_latents(3, 1, &mut rng);

        let mut tape = Tape::new();
        let nodes = gen.register(&mut tape);
        let node =
            sig_w1_loss_on_tape(&mut tape, &gen, &nodes, &y, &target, &z_draws, depth).unwrap();
        let on_tape = tape.value(node)[0];
        let plain = sig_w1_loss_value(&gen, &y, &target, &z_draws, depth).unwrap();
        assert_eq!(on_tape.to_bits(), plain.to_bits());
    }

    #[test]
    fn loss_gradients_match_finite_differences_end_to_end() {
        let mut gen = tiny_generator();
        let y = tiny_observation(2);
        let depth = 2;
        let target = vec![0.5; algebra_len(2, depth)];
        let mut rng = substream(23, &[purpose::TEST, 4]);
        let z_draws = draw_latents(2, 1, &mut rng);

        let mut tape = Tape::new();
        let nodes = gen.register(&mut tape);
        let node =
            sig_w1_loss_on_tape(&mut tape, &gen, &nodes, &y, &target, &z_draws, depth).unwrap();
        tape.backward(node).unwrap();
        let mut ad = Vec::new();
        gen.append_grads(&tape, &nodes, &mut ad).unwrap();

        let mut flat = gen.flat_params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            gen.set_flat_params(&flat).unwrap();
            let fp = sig_w1_loss_value(&gen, &y, &target, &z_draws, depth).unwrap();
            flat[i] = orig - h;
            gen.set_flat_params(&flat).unwrap();
            let fm = sig_w1_loss_value(&gen, &y, &target, &z_draws, depth).unwrap();
            flat[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let err = (ad[i] - fd).abs() / ad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
        gen.set_flat_params(&flat).unwrap();
        assert!(worst < 1e-4, "worst relative gradient error {worst:e}");
    }

    #[test]
    fn crafted_weights_reach_exactly_zero_loss() {
        // Make the generator fully deterministic (decoder ignores z and
        // produces a constant path) and set the target to that path's
        // anchored signature; the loss must vanish identically.
        let mut gen = tiny_generator();
        let dec_init = Mlp::from_layers(vec![Layer::new(
            1,
            4,
            vec![0.0; 4],
            vec![0.7],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let dec_field = Mlp::from_layers(vec![Layer::new(
            1,
            2,
            vec![0.0; 2],
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        gen = Generator::from_parts(
            gen.config().clone(),
            gen.enc_init.clone(),
            gen.enc_field.clone(),
            dec_init,
            dec_field,
        )
        .unwrap();

        let y = tiny_observation(3);
        let depth = 2;
        let encoded = gen.encode(&y).unwrap();
        let path = gen.sample_path(&encoded, &[9.9]).unwrap();
        let step = gen.config().tail_partition().unwrap().resolution();
        let target = target_signature(&path, 0.5, step, depth).unwrap();

        let mut rng = substream(23, &[purpose::TEST, 5]);
        let z_draws = draw_latents(4, 1, &mut rng);
        let loss = sig_w1_loss_value(&gen, &y, &target, &z_draws, depth).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn mc_averaging_shrinks_the_estimator_variance() {
        // The variance of the mean signature over N draws scales like 1/N;
        // check the ratio between N = 8 and N = 64 is roughly 8.
        let gen = tiny_generator();
        let y = tiny_observation(4);
        let depth = 2;
        let encoded = gen.encode(&y).unwrap();
        let step = gen.config().tail_partition().unwrap().resolution();
        let reps = 200;

        let var_for = |n_mc: usize| {
            let mut rng = substream(23, &[purpose::TEST, 6, n_mc as u64]);
            let mut sums = Vec::with_capacity(reps);
            for _ in 0..reps {
                let paths = gen.sample_paths(&encoded, n_mc, &mut rng).unwrap();
                let sigs: Vec<_> = paths
                    .iter()
                    .map(|p| p.with_basepoint(step).unwrap().time_augment())
                    .collect();
                let mean = expected_signature(&sigs, depth).unwrap();
                sums.push(mean.coeffs().iter().sum::<f64>());
            }
            let m = sums.iter().sum::<f64>() / reps as f64;
            sums.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (reps - 1) as f64
        };

        let v8 = var_for(8);
        let v64 = var_for(64);
        let ratio = v8 / v64;
        assert!(
            (3.0..20.0).contains(&ratio),
            "variance ratio {ratio} far from the expected 8"
        );
    }

    #[test]
    fn training_on_the_benchmark_reduces_the_loss() {
        let part = Partition::equidistant(0.0, 1.0, 101).unwrap();
        let dataset = generate_dataset(&benchmark_system(), &part, 160, 41).unwrap();
        let gen_cfg = GeneratorConfig {
            state_dim: 6,
            enc_field_hidden: vec![32],
            dec_field_hidden: vec![32],
            ..GeneratorConfig::benchmark(part, 0.5)
        };
        let generator = Generator::init(gen_cfg, 41).unwrap();
        let config = TrainConfig {
            seed: 41,
            depth: 3,
            s: 0.5,
            epochs: 3,
            batch_size: 32,
            mc_samples: 8,
            val_fraction: 0.1,
            ridge: None,
            optimizer: OptimizerSpec::Adam(AdamConfig { lr: 3e-3, ..AdamConfig::default() }),
        };
        let out = train(generator, &dataset, &config).unwrap();
        assert_eq!(out.report.epochs_run, 3);
        assert!(!out.report.early_stop);
        assert!(out.report.val_residual.is_finite());
        let first = out.report.epoch_losses[0];
        let last = *out.report.epoch_losses.last().unwrap();
        assert!(
            last < 0.9 * first,
            "loss did not drop: first {first}, last {last}"
        );
    }

    #[test]
    fn training_is_deterministic_given_the_seed() {
        let part = Partition::equidistant(0.0, 1.0, 21).unwrap();
        let dataset = generate_dataset(&benchmark_system(), &part, 30, 43).unwrap();
        let gen_cfg = GeneratorConfig {
            state_dim: 3,
            enc_init_hidden: vec![4],
            enc_field_hidden: vec![8],
            dec_init_hidden: vec![4],
            dec_field_hidden: vec![8],
            ..GeneratorConfig::benchmark(part, 0.5)
        };
        let config = TrainConfig {
            seed: 43,
            depth: 2,
            s: 0.5,
            epochs: 2,
            batch_size: 8,
            mc_samples: 4,
            val_fraction: 0.1,
            ridge: None,
            optimizer: OptimizerSpec::Adam(AdamConfig::default()),
        };
        let a = train(Generator::init(gen_cfg.clone(), 43).unwrap(), &dataset, &config).unwrap();
        let b = train(Generator::init(gen_cfg, 43).unwrap(), &dataset, &config).unwrap();
        assert_eq!(a.report.epoch_losses, b.report.epoch_losses);
        assert_eq!(a.generator.flat_params(), b.generator.flat_params());
    }

    #[test]
    fn loss_trace_round_trips_through_csv() {
        let report = TrainReport {
            epochs_run: 2,
            steps: 10,
            epoch_losses: vec![1.5, 0.75],
            val_residual: 0.125,
            early_stop: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_trace(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,mean_loss,val_residual");
        assert_eq!(lines.next().unwrap(), "1,1.5,0.125");
        assert_eq!(lines.next().unwrap(), "2,0.75,0.125");
        let rows = read_loss_trace(&path).unwrap();
        assert_eq!(rows, vec![(1, 1.5, 0.125), (2, 0.75, 0.125)]);
    }

    #[test]
    fn zero_epochs_leaves_the_initial_parameters() {
        let part = Partition::equidistant(0.0, 1.0, 21).unwrap();
        let dataset = generate_dataset(&benchmark_system(), &part, 20, 44).unwrap();
        let gen_cfg = GeneratorConfig {
            state_dim: 3,
            enc_init_hidden: vec![4],
            enc_field_hidden: vec![8],
            dec_init_hidden: vec![4],
            dec_field_hidden: vec![8],
            ..GeneratorConfig::benchmark(part, 0.5)
        };
        let generator = Generator::init(gen_cfg, 44).unwrap();
        let initial = generator.flat_params();
        let config = TrainConfig {
            seed: 44,
            depth: 2,
            s: 0.5,
            epochs: 0,
            batch_size: 8,
            mc_samples: 4,
            val_fraction: 0.1,
            ridge: None,
            optimizer: OptimizerSpec::Sgd { lr: 1e-2 },
        };
        let out = train(generator, &dataset, &config).unwrap();
        assert_eq!(out.report.epochs_run, 0);
        assert_eq!(out.report.steps, 0);
        assert!(out.report.epoch_losses.is_empty());
        assert!(out.report.val_residual.is_finite());
        assert_eq!(out.generator.flat_params(), initial);
    }

    #[test]
    fn config_validation_rejects_degenerate_settings() {
        let part = Partition::equidistant(0.0, 1.0, 21).unwrap();
        let dataset = generate_dataset(&benchmark_system(), &part, 10, 47).unwrap();
        let gen_cfg = GeneratorConfig {
            state_dim: 3,
            enc_init_hidden: vec![4],
            enc_field_hidden: vec![4],
            dec_init_hidden: vec![4],
            dec_field_hidden: vec![4],
            ..GeneratorConfig::benchmark(part, 0.5)
        };
        let ok = TrainConfig {
            seed: 1,
            depth: 2,
            s: 0.5,
            epochs: 1,
            batch_size: 4,
            mc_samples: 2,
            val_fraction: 0.2,
            ridge: None,
            optimizer: OptimizerSpec::Sgd { lr: 1e-3 },
        };
        for bad in [
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { mc_samples: 0, ..ok.clone() },
            TrainConfig { depth: 0, ..ok.clone() },
            TrainConfig { val_fraction: 0.0, ..ok.clone() },
            TrainConfig { s: 0.47, ..ok.clone() },
        ] {
            let gen = Generator::init(gen_cfg.clone(), 1).unwrap();
            assert!(train(gen, &dataset, &bad).is_err());
        }
    }
}
