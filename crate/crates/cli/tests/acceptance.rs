//! Acceptance gates for the shipped artifact. Each test checks one gate and
//! prints a single PASS or FAIL line (visible with `--nocapture`, or on
//! failure); tolerances are pinned inline next to the checks. The two
//! desk-scale gates share one trained run through a process-wide fixture, so
//! the whole file performs exactly two full trainings.

use std::fs;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use sigwgan_cli::args::run_from;
use sigwgan_cli::artifacts::{checkpoint_path, loss_trace_path, metrics_path, Checkpoint, Metrics};
use sigwgan_core::autodiff::{NodeId, Tape};
use sigwgan_core::generator::{Generator, GeneratorConfig, OdeStateCoupling};
use sigwgan_core::kalman::{Drift, KalmanState, LinearSystem};
use sigwgan_core::paths::{Partition, PiecewiseLinearPath};
use sigwgan_core::rng::{purpose, substream};
use sigwgan_core::sde::{benchmark_system, simulate};
use sigwgan_core::signature::path_signature;
use sigwgan_core::tensor_algebra::{algebra_len, level_offset};
use sigwgan_core::training::{
    observation_features, sig_w1_loss_on_tape, sig_w1_loss_value, target_signature, SigRegression,
    TrainReport,
};

fn report(index: usize, name: &str, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {index} {status}: {name} ({detail})");
    assert!(pass, "gate {index} {name}: {detail}");
}

fn random_path(
    rng: &mut impl Rng,
    dim: usize,
    n_knots: usize,
    partition: Partition,
) -> PiecewiseLinearPath {
    let values: Vec<f64> = (0..n_knots * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PiecewiseLinearPath::from_flat(partition, dim, values).unwrap()
}

/// The straight-line signature built directly from its series: level n is
/// the n-fold outer power of the increment divided by n factorial.
fn segment_signature_series(increment: &[f64], depth: usize) -> Vec<f64> {
    let dim = increment.len();
    let mut coeffs = vec![0.0; algebra_len(dim, depth)];
    coeffs[0] = 1.0;
    let mut prev = vec![1.0];
    for n in 1..=depth {
        let mut next = vec![0.0; prev.len() * dim];
        for (u, pv) in prev.iter().enumerate() {
            for (i, di) in increment.iter().enumerate() {
                next[u * dim + i] = pv * di / n as f64;
            }
        }
        let ofs = level_offset(dim, n);
        coeffs[ofs..ofs + next.len()].copy_from_slice(&next);
        prev = next;
    }
    coeffs
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn gate_1_signature_algebra() {
    let start = Instant::now();
    let mut rng = substream(1001, &[purpose::TEST, 1]);

    // Concatenation identity on 500 random paths: the signature of the whole
    // path equals the tensor product of the segment signatures.
    let mut max_concat = 0.0f64;
    for _ in 0..500 {
        let dim = rng.gen_range(1..=3);
        let depth = rng.gen_range(1..=5);
        let n_knots = rng.gen_range(3..=20);
        let partition = Partition::equidistant(0.0, 1.0, n_knots).unwrap();
        let path = random_path(&mut rng, dim, n_knots, partition.clone());
        let split = partition.times()[rng.gen_range(1..n_knots - 1)];
        let left = path.restrict(0.0, split).unwrap();
        let right = path.restrict(split, 1.0).unwrap();
        let whole = path_signature(&path, depth).unwrap();
        let product = path_signature(&left, depth)
            .unwrap()
            .tensor_mul(&path_signature(&right, depth).unwrap())
            .unwrap();
        max_concat = max_concat.max(max_abs_diff(whole.coeffs(), product.coeffs()));
    }

    // Single segment against the explicit series.
    let mut max_segment = 0.0f64;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=3);
        let depth = rng.gen_range(1..=5);
        let partition = Partition::equidistant(0.0, 1.0, 2).unwrap();
        let path = random_path(&mut rng, dim, 2, partition);
        let increment: Vec<f64> = path
            .knot_value(1)
            .iter()
            .zip(path.knot_value(0))
            .map(|(b, a)| b - a)
            .collect();
        let sig = path_signature(&path, depth).unwrap();
        max_segment =
            max_segment.max(max_abs_diff(sig.coeffs(), &segment_signature_series(&increment, depth)));
    }

    // Reparametrization invariance: the signature depends on the knot values
    // only, not on when they are visited.
    let mut max_reparam = 0.0f64;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=3);
        let depth = rng.gen_range(1..=5);
        let n_knots = rng.gen_range(2..=20);
        let even = Partition::equidistant(0.0, 1.0, n_knots).unwrap();
        let mut warped: Vec<f64> = (0..n_knots - 1).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = warped.iter().sum();
        let mut times = vec![0.0];
        let mut acc = 0.0;
        for w in warped.drain(..) {
            acc += w / total;
            times.push(acc);
        }
        let warped = Partition::new(times).unwrap();
        let values: Vec<f64> = (0..n_knots * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = PiecewiseLinearPath::from_flat(even, dim, values.clone()).unwrap();
        let b = PiecewiseLinearPath::from_flat(warped, dim, values).unwrap();
        let sig_a = path_signature(&a, depth).unwrap();
        let sig_b = path_signature(&b, depth).unwrap();
        max_reparam = max_reparam.max(max_abs_diff(sig_a.coeffs(), sig_b.coeffs()));
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass =
        max_concat < 1e-10 && max_segment < 1e-12 && max_reparam < 1e-12 && elapsed < 30.0;
    report(
        1,
        "signature algebra identities",
        pass,
        format!(
            "concatenation {max_concat:.2e} < 1e-10, segment series {max_segment:.2e} < 1e-12, \
             reparametrization {max_reparam:.2e} < 1e-12, {elapsed:.1}s < 30s"
        ),
    );
}

/// Central finite differences against the tape for a scalar loss built from
/// leaves; returns the worst relative error over every input coordinate.
fn fd_max_rel_err(
    inputs: &[Vec<f64>],
    build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId,
) -> f64 {
    let eval = |xs: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = xs.iter().map(|v| tape.leaf(v)).collect();
        let node = build(&mut tape, &leaves);
        tape.value(node)[0]
    };

    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|v| tape.leaf(v)).collect();
    let loss = build(&mut tape, &leaves);
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> =
        leaves.iter().map(|&l| tape.grad(l).unwrap().to_vec()).collect();

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut perturbed: Vec<Vec<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            perturbed[i][k] = input[k] + h;
            let up = eval(&perturbed);
            perturbed[i][k] = input[k] - h;
            let down = eval(&perturbed);
            perturbed[i][k] = input[k];
            let fd = (up - down) / (2.0 * h);
            let an = grads[i][k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gate_2_gradients_match_finite_differences() {
    let start = Instant::now();

    type Build = Box<dyn Fn(&mut Tape, &[NodeId]) -> NodeId>;
    let cases: Vec<(&str, Vec<Vec<f64>>, Build)> = vec![
        (
            "add",
            vec![vec![0.3, -0.7, 1.1], vec![0.9, 0.2, -0.4]],
            Box::new(|t, l| {
                let r = t.add(l[0], l[1]);
                t.l2_norm(r)
            }),
        ),
        (
            "sub",
            vec![vec![0.5, -0.2, 0.8], vec![-0.3, 0.6, 0.1]],
            Box::new(|t, l| {
                let r = t.sub(l[0], l[1]);
                t.l2_norm(r)
            }),
        ),
        (
            "mul",
            vec![vec![0.7, -1.2, 0.4], vec![0.3, 0.5, -0.9]],
            Box::new(|t, l| {
                let r = t.mul(l[0], l[1]);
                t.l2_norm(r)
            }),
        ),
        (
            "scale",
            vec![vec![0.6, -0.8, 1.3]],
            Box::new(|t, l| {
                let r = t.scale(l[0], 1.7);
                t.l2_norm(r)
            }),
        ),
        (
            "sum",
            vec![vec![0.2, -0.5, 0.9, 1.4]],
            Box::new(|t, l| t.sum(l[0])),
        ),
        (
            "dot",
            vec![vec![0.4, -0.6, 0.2], vec![1.1, 0.3, -0.7]],
            Box::new(|t, l| t.dot(l[0], l[1])),
        ),
        (
            "matvec",
            vec![vec![0.2, -0.4, 0.6, 0.1, 0.9, -0.3], vec![0.5, -0.2, 0.8]],
            Box::new(|t, l| {
                let r = t.matvec(l[0], l[1]);
                t.l2_norm(r)
            }),
        ),
        (
            "affine",
            vec![
                vec![0.2, -0.4, 0.6, 0.1, 0.9, -0.3],
                vec![0.05, -0.15],
                vec![0.5, -0.2, 0.8],
            ],
            Box::new(|t, l| {
                let r = t.affine(l[0], l[1], l[2]);
                t.l2_norm(r)
            }),
        ),
        (
            "tanh",
            vec![vec![0.3, -1.1, 0.7]],
            Box::new(|t, l| {
                let r = t.tanh(l[0]);
                t.l2_norm(r)
            }),
        ),
        (
            "relu",
            vec![vec![0.8, -0.6, 1.2]],
            Box::new(|t, l| {
                let r = t.relu(l[0]);
                t.l2_norm(r)
            }),
        ),
        (
            "concat2",
            vec![vec![0.4, -0.9], vec![0.2, 0.7, -0.5]],
            Box::new(|t, l| {
                let r = t.concat2(l[0], l[1]);
                t.l2_norm(r)
            }),
        ),
        (
            "tensor_exp",
            vec![vec![0.6, -0.35]],
            Box::new(|t, l| {
                let r = t.tensor_exp(l[0], 3);
                t.l2_norm(r)
            }),
        ),
        (
            "tensor_mul",
            vec![vec![0.5, -0.25], vec![-0.4, 0.3]],
            Box::new(|t, l| {
                let a = t.tensor_exp(l[0], 3);
                let b = t.tensor_exp(l[1], 3);
                let r = t.tensor_mul(a, b, 2, 3);
                t.l2_norm(r)
            }),
        ),
        (
            "l2_norm",
            vec![vec![0.9, -0.4, 0.3, 0.7]],
            Box::new(|t, l| t.l2_norm(l[0])),
        ),
    ];

    let mut worst_primitive = 0.0f64;
    let mut worst_name = "";
    for (name, inputs, build) in &cases {
        let err = fd_max_rel_err(inputs, build.as_ref());
        if err > worst_primitive {
            worst_primitive = err;
            worst_name = name;
        }
    }

    // End-to-end: the full loss on a deliberately tiny generator.
    let partition = Partition::equidistant(0.0, 1.0, 4).unwrap();
    let s = partition.times()[2];
    let depth = 2;
    let config = GeneratorConfig {
        obs_dim: 1,
        state_dim: 2,
        sample_dim: 1,
        latent_dim: 1,
        s,
        partition: partition.clone(),
        enc_init_hidden: vec![3],
        enc_field_hidden: vec![3],
        dec_init_hidden: vec![3],
        dec_field_hidden: vec![3],
        coupling: OdeStateCoupling::CurrentState,
    };
    let generator = Generator::init(config, 77).unwrap();
    let mut rng = substream(1002, &[purpose::TEST, 2]);
    let y = random_path(&mut rng, 1, 4, partition);
    let target: Vec<f64> = (0..algebra_len(2, depth))
        .map(|i| if i == 0 { 1.0 } else { rng.gen_range(-0.5..0.5) })
        .collect();
    let z_draws: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();

    let mut tape = Tape::new();
    let nodes = generator.register(&mut tape);
    let loss_node =
        sig_w1_loss_on_tape(&mut tape, &generator, &nodes, &y, &target, &z_draws, depth).unwrap();
    tape.backward(loss_node).unwrap();
    let mut analytic = Vec::new();
    generator.append_grads(&tape, &nodes, &mut analytic).unwrap();

    let params = generator.flat_params();
    let h = 1e-5;
    let mut worst_end = 0.0f64;
    for i in 0..params.len() {
        let mut plus = generator.clone();
        let mut bumped = params.clone();
        bumped[i] += h;
        plus.set_flat_params(&bumped).unwrap();
        let up = sig_w1_loss_value(&plus, &y, &target, &z_draws, depth).unwrap();
        let mut minus = generator.clone();
        bumped[i] = params[i] - h;
        minus.set_flat_params(&bumped).unwrap();
        let down = sig_w1_loss_value(&minus, &y, &target, &z_draws, depth).unwrap();
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
        worst_end = worst_end.max(rel);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_primitive < 1e-4 && worst_end < 1e-3 && elapsed < 60.0;
    report(
        2,
        "gradients match finite differences",
        pass,
        format!(
            "worst primitive {worst_primitive:.2e} < 1e-4 ({worst_name}), \
             end-to-end {worst_end:.2e} < 1e-3 over {} parameters, {elapsed:.1}s < 60s",
            params.len()
        ),
    );
}

#[test]
fn gate_3_kalman_oracle_properties() {
    let start = Instant::now();

    // Constant-coefficient Riccati flow settles at its algebraic fixed
    // point: 2aP + q - P^2 c^2 / r = 0 gives P* = 1 for a=0, q=c=r=1.
    let steady = LinearSystem {
        drift: Drift::Linear { c0: 0.0, c1: 0.0 },
        obs_gain: 1.0,
        signal_noise: 1.0,
        obs_noise: 1.0,
        prior_mean: 0.0,
        prior_var: 5.0,
        resolution: 1e-3,
    };
    let n_knots = 20_001;
    let grid = Partition::equidistant(0.0, 20.0, n_knots).unwrap();
    let flat_obs = PiecewiseLinearPath::from_flat(grid, 1, vec![0.0; n_knots]).unwrap();
    let states = steady.filter(&flat_obs).unwrap();
    let riccati_err = (states.last().unwrap().var - 1.0).abs();

    // Predicting in two hops lands exactly where one hop does, and the
    // one-hop mean matches the closed-form growth factor.
    let oracle = LinearSystem::benchmark(0.01);
    let partition = Partition::equidistant(0.0, 1.0, 101).unwrap();
    let mut rng = substream(1003, &[purpose::TEST, 3]);
    let trajectory = simulate(&benchmark_system(), &partition, &mut rng).unwrap();
    let at_s = oracle.filter_to(&trajectory.y, 0.5).unwrap();
    let direct = oracle.predict(&at_s, 1.0).unwrap();
    let hop = oracle.predict(&at_s, 0.75).unwrap();
    let two_hop = oracle.predict(&hop, 1.0).unwrap();
    let semigroup_err =
        (direct.mean - two_hop.mean).abs().max((direct.var - two_hop.var).abs());

    let unit = KalmanState { time: 0.5, mean: 1.0, var: 1.0 };
    let grown = oracle.predict(&unit, 1.0).unwrap();
    // Drift gain 0.1(1+t) integrates to 0.0875 over [0.5, 1].
    let closed_form_err = (grown.mean - (0.0875f64).exp()).abs();

    // Monte Carlo consistency: the filter's variance matches the actual
    // squared estimation error, time-averaged across the grid.
    let n_paths = 1000;
    let mut sq_err_sum = 0.0;
    let mut var_sum = 0.0;
    for j in 0..n_paths {
        let mut rng = substream(1003, &[purpose::TEST, 4, j]);
        let trajectory = simulate(&benchmark_system(), &partition, &mut rng).unwrap();
        let states = oracle.filter(&trajectory.y).unwrap();
        for (k, state) in states.iter().enumerate() {
            let x = trajectory.x.knot_value(k)[0];
            sq_err_sum += (x - state.mean) * (x - state.mean);
            var_sum += state.var;
        }
    }
    let mc_ratio = sq_err_sum / var_sum;

    let elapsed = start.elapsed().as_secs_f64();
    let pass = riccati_err < 1e-3
        && semigroup_err < 1e-9
        && closed_form_err < 1e-9
        && (mc_ratio - 1.0).abs() < 0.10
        && elapsed < 60.0;
    report(
        3,
        "closed-form filter properties",
        pass,
        format!(
            "riccati fixed point {riccati_err:.2e} < 1e-3, semigroup {semigroup_err:.2e} < 1e-9, \
             mean growth {closed_form_err:.2e} < 1e-9, error/variance ratio {mc_ratio:.3} \
             within 10%, {elapsed:.1}s < 60s"
        ),
    );
}

#[test]
fn gate_4_regression_recovers_deterministic_targets() {
    let depth = 3;
    let s = 0.5;
    let ridge = 1e-8;
    let partition = Partition::equidistant(0.0, 1.0, 11).unwrap();
    let idx_s = partition.index_of(s).unwrap();
    let mut rng = substream(1004, &[purpose::TEST, 5]);

    // Observations start at zero so the features see the level at s; the
    // hidden path is a deterministic function of it.
    let mut build_pairs = |make_x: &dyn Fn(f64, &[f64]) -> Vec<f64>| {
        (0..80)
            .map(|_| {
                let mut y = vec![0.0; partition.len()];
                for k in 1..partition.len() {
                    y[k] = y[k - 1] + rng.gen_range(-0.3..0.3);
                }
                let x = make_x(y[idx_s], partition.times());
                (
                    PiecewiseLinearPath::from_flat(partition.clone(), 1, y).unwrap(),
                    PiecewiseLinearPath::from_flat(partition.clone(), 1, x).unwrap(),
                )
            })
            .collect::<Vec<_>>()
    };
    fn as_refs(
        pairs: &[(PiecewiseLinearPath, PiecewiseLinearPath)],
    ) -> Vec<(&PiecewiseLinearPath, &PiecewiseLinearPath)> {
        pairs.iter().map(|(y, x)| (y, x)).collect()
    }

    // A hidden path frozen at a linear function of the observed level.
    let frozen = build_pairs(&|y_s, times| vec![0.7 + 0.4 * y_s; times.len()]);
    let frozen_refs = as_refs(&frozen);
    let fit = SigRegression::fit(&frozen_refs, s, depth, Some(ridge)).unwrap();
    let frozen_residual = fit.mean_l2_residual(&frozen_refs).unwrap();

    // A ramp whose level and slope both depend linearly on it.
    let ramp = build_pairs(&|y_s, times| {
        times.iter().map(|t| (0.3 + 0.5 * y_s) * (1.0 + 0.5 * t)).collect()
    });
    let ramp_refs = as_refs(&ramp);
    let ramp_fit = SigRegression::fit(&ramp_refs, s, depth, Some(ridge)).unwrap();
    let ramp_residual = ramp_fit.mean_l2_residual(&ramp_refs).unwrap();

    // The fitted weights are stationary for the ridge objective: the normal
    // equations hold to solver precision.
    let features: Vec<Vec<f64>> = frozen
        .iter()
        .map(|(y, _)| observation_features(y, s, depth).unwrap())
        .collect();
    let targets: Vec<Vec<f64>> = frozen
        .iter()
        .map(|(_, x)| target_signature(x, s, fit.basepoint_step, depth).unwrap())
        .collect();
    let n_features = features[0].len();
    let n_targets = targets[0].len();
    let mut normal_residual = 0.0f64;
    for a in 0..n_features {
        for b in 0..n_targets {
            // (Phi^T Psi)[a][b] minus ((Phi^T Phi + ridge I) W^T)[a][b].
            let mut lhs = 0.0;
            for (phi, psi) in features.iter().zip(&targets) {
                lhs += phi[a] * psi[b];
            }
            let mut rhs = 0.0;
            for c in 0..n_features {
                let mut gram = 0.0;
                for phi in &features {
                    gram += phi[a] * phi[c];
                }
                if a == c {
                    gram += fit.ridge;
                }
                rhs += gram * fit.weights[b * n_features + c];
            }
            normal_residual = normal_residual.max((lhs - rhs).abs());
        }
    }

    let pass = frozen_residual < 1e-6 && ramp_residual < 1e-6 && normal_residual < 1e-8;
    report(
        4,
        "feature regression recovers deterministic targets",
        pass,
        format!(
            "frozen-level residual {frozen_residual:.2e} < 1e-6, ramp residual \
             {ramp_residual:.2e} < 1e-6, normal equations {normal_residual:.2e} < 1e-8"
        ),
    );
}

/// One desk-scale training plus evaluation, shared by the gates below. Runs
/// through the public command surface, exactly as a user would.
struct DeskRun {
    _dir: tempfile::TempDir,
    checkpoint_bytes: Vec<u8>,
    trace_bytes: Vec<u8>,
    report: TrainReport,
    metrics: Metrics,
    elapsed_secs: f64,
}

static DESK: OnceLock<DeskRun> = OnceLock::new();

fn desk_run() -> &'static DeskRun {
    DESK.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("desk");
        let out_str = out.to_str().unwrap().to_string();
        let start = Instant::now();
        let train = ["sigwgan", "train", "--preset", "eq14-desk", "--seed", "7", "--out"];
        run_from(train.iter().copied().chain([out_str.as_str()])).unwrap();
        let eval = ["sigwgan", "evaluate", "--preset", "eq14-desk", "--seed", "7", "--out"];
        run_from(eval.iter().copied().chain([out_str.as_str()])).unwrap();
        let elapsed_secs = start.elapsed().as_secs_f64();
        let checkpoint_bytes = fs::read(checkpoint_path(&out)).unwrap();
        let trace_bytes = fs::read(loss_trace_path(&out)).unwrap();
        let report = Checkpoint::load(&checkpoint_path(&out)).unwrap().report;
        let metrics = Metrics::load(&metrics_path(&out)).unwrap();
        DeskRun { _dir: dir, checkpoint_bytes, trace_bytes, report, metrics, elapsed_secs }
    })
}

#[test]
fn gate_5_desk_scale_run_tracks_the_filter() {
    let desk = desk_run();
    let first = *desk.report.epoch_losses.first().unwrap();
    let last = *desk.report.epoch_losses.last().unwrap();
    let m = &desk.metrics;

    let loss_ok = last <= 0.5 * first;
    let corr_ok = m.correlation_at_s >= 0.8 && m.n_test >= 500;
    let mse_ok = m.mse_at_s <= 0.5 * m.baseline_mse;
    let horizon_ok = m.mse_horizon <= 2.0 * m.mse_at_s;
    let time_ok = desk.elapsed_secs < 900.0;

    let pass = loss_ok && corr_ok && mse_ok && horizon_ok && time_ok;
    report(
        5,
        "desk-scale run tracks the closed-form filter",
        pass,
        format!(
            "loss {first:.3} -> {last:.3} (needs <= {:.3}), correlation {:.3} >= 0.8 on {} \
             held-out paths, mse {:.4} <= 0.5 x baseline {:.4}, horizon mse {:.4} <= 2 x at-s, \
             {:.0}s < 900s",
            0.5 * first,
            m.correlation_at_s,
            m.n_test,
            m.mse_at_s,
            m.baseline_mse,
            m.mse_horizon,
            desk.elapsed_secs
        ),
    );
}

#[test]
fn gate_6_mc_estimator_variance_scales_inversely() {
    let partition = Partition::equidistant(0.0, 1.0, 11).unwrap();
    let config = GeneratorConfig {
        obs_dim: 1,
        state_dim: 3,
        sample_dim: 1,
        latent_dim: 1,
        s: 0.5,
        partition: partition.clone(),
        enc_init_hidden: vec![4],
        enc_field_hidden: vec![8],
        dec_init_hidden: vec![4],
        dec_field_hidden: vec![8],
        coupling: OdeStateCoupling::CurrentState,
    };
    let generator = Generator::init(config, 55).unwrap();
    let mut rng = substream(1006, &[purpose::TEST, 6]);
    let y = random_path(&mut rng, 1, 11, partition);
    let encoded = generator.encode(&y).unwrap();

    let sample_counts = [8usize, 32, 128, 512];
    let reps = 256;
    let mut log_points = Vec::with_capacity(sample_counts.len());
    for &n_mc in &sample_counts {
        let mut estimates = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut mc_rng = substream(1006, &[purpose::TEST, 7, n_mc as u64, r as u64]);
            let paths = generator.sample_paths(&encoded, n_mc, &mut mc_rng).unwrap();
            let mean_at_end = paths
                .iter()
                .map(|p| p.knot_value(p.n_knots() - 1)[0])
                .sum::<f64>()
                / n_mc as f64;
            estimates.push(mean_at_end);
        }
        let mean = estimates.iter().sum::<f64>() / reps as f64;
        let var =
            estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / reps as f64;
        log_points.push(((n_mc as f64).ln(), var.ln()));
    }

    // Least-squares slope of log variance against log sample count.
    let n = log_points.len() as f64;
    let mean_x = log_points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = log_points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let cov: f64 = log_points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let var_x: f64 = log_points.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    let slope = cov / var_x;

    let pass = (slope + 1.0).abs() <= 0.2;
    report(
        6,
        "Monte Carlo estimator variance scales inversely with draws",
        pass,
        format!("log-log slope {slope:.3} within -1 +/- 0.2 over draws {sample_counts:?}"),
    );
}

#[test]
fn gate_7_training_runs_are_byte_identical() {
    let desk = desk_run();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again");
    let out_str = out.to_str().unwrap().to_string();
    let train = ["sigwgan", "train", "--preset", "eq14-desk", "--seed", "7", "--out"];
    run_from(train.iter().copied().chain([out_str.as_str()])).unwrap();

    let checkpoint_same = fs::read(checkpoint_path(&out)).unwrap() == desk.checkpoint_bytes;
    let trace_same = fs::read(loss_trace_path(&out)).unwrap() == desk.trace_bytes;

    let pass = checkpoint_same && trace_same;
    report(
        7,
        "repeated training runs are byte-identical",
        pass,
        format!(
            "checkpoint bytes equal: {checkpoint_same} ({} bytes), loss trace bytes equal: \
             {trace_same} ({} bytes)",
            desk.checkpoint_bytes.len(),
            desk.trace_bytes.len()
        ),
    );
}
