//! The conditional path generator: an observation encoder feeding a
//! latent-seeded ODE decoder.
//!
//! The generator consumes an observed path on [0, s] and produces random
//! continuations of the hidden signal on [s, T] in two stages:
//!
//! 1. Encoding. A hidden state starts at `enc_init(Y_0)` and is updated
//!    across each observation step by `enc_field(t_k, state) * dY_k`, a
//!    controlled Euler recursion driven by the observed increments. Only
//!    knots up to the conditioning time s enter, so the encoding is adapted
//!    to the information available at s.
//! 2. Decoding. Given the encoded state and a latent draw z ~ N(0, I), an
//!    initial sample value `dec_init(state, z)` evolves through the ODE
//!    x' = dec_field(t, x) integrated with Euler steps on the remaining
//!    knots. Randomness enters only through z, so each draw yields a smooth
//!    path and Monte Carlo averages over z estimate conditional expectations.
//!
//! Every network evaluation exists in an off-tape form (plain `Mlp::eval`)
//! and an on-tape form for training; both run the identical arithmetic, so
//! their outputs agree bit for bit.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mlp, MlpNodes, NodeId, Tape};
use crate::error::{Error, Result};
use crate::paths::{Partition, PiecewiseLinearPath};
use crate::rng::{purpose, substream};

/// Which state the decoder field sees during ODE integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeStateCoupling {
    /// The field is evaluated at the initial sample value for every step.
    FrozenInitialState,
    /// The field follows the evolving sample value.
    CurrentState,
}

/// Architecture and discretization of a [`Generator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Dimension of the observed path.
    pub obs_dim: usize,
    /// Dimension of the encoder's hidden state.
    pub state_dim: usize,
    /// Dimension of the generated sample path.
    pub sample_dim: usize,
    /// Dimension of the latent draw consumed by the decoder.
    pub latent_dim: usize,
    /// Conditioning time; must be an interior knot of the partition.
    pub s: f64,
    /// Knot grid shared by observations and generated paths.
    pub partition: Partition,
    /// Hidden widths of the four networks.
    pub enc_init_hidden: Vec<usize>,
    pub enc_field_hidden: Vec<usize>,
    pub dec_init_hidden: Vec<usize>,
    pub dec_field_hidden: Vec<usize>,
    pub coupling: OdeStateCoupling,
}

impl GeneratorConfig {
    /// The configuration used for the scalar benchmark problem.
    pub fn benchmark(partition: Partition, s: f64) -> Self {
        Self {
            obs_dim: 1,
            state_dim: 10,
            sample_dim: 1,
            latent_dim: 1,
            s,
            partition,
            enc_init_hidden: vec![20],
            enc_field_hidden: vec![128],
            dec_init_hidden: vec![20],
            dec_field_hidden: vec![128],
            coupling: OdeStateCoupling::CurrentState,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.state_dim == 0 || self.sample_dim == 0 || self.latent_dim == 0
        {
            return Err(Error::Invalid("generator dimensions must be positive".into()));
        }
        let idx = self.split_index()?;
        if idx == 0 || idx + 1 >= self.partition.len() {
            return Err(Error::Invalid(format!(
                "conditioning time {} must be an interior knot of the partition",
                self.s
            )));
        }
        Ok(())
    }

    /// Knot index of the conditioning time.
    pub fn split_index(&self) -> Result<usize> {
        self.partition.index_of(self.s).ok_or_else(|| {
            Error::Invalid(format!("conditioning time {} is not a partition knot", self.s))
        })
    }

    /// The knots from the conditioning time onward, as their own partition.
    pub fn tail_partition(&self) -> Result<Partition> {
        let idx = self.split_index()?;
        Partition::new(self.partition.times()[idx..].to_vec())
    }
}

/// Tape handles for one registered [`Generator`].
#[derive(Debug, Clone)]
pub struct GeneratorNodes {
    pub enc_init: MlpNodes,
    pub enc_field: MlpNodes,
    pub dec_init: MlpNodes,
    pub dec_field: MlpNodes,
}

/// The two-stage generator with its four networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    config: GeneratorConfig,
    pub enc_init: Mlp,
    pub enc_field: Mlp,
    pub dec_init: Mlp,
    pub dec_field: Mlp,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

impl Generator {
    /// Randomly initializes all four networks from per-block substreams of
    /// `seed`, so the same seed always builds the same generator.
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let enc_init = Mlp::init(
            &widths(config.obs_dim, &config.enc_init_hidden, config.state_dim),
            Activation::Relu,
            &mut substream(seed, &[purpose::INIT, 0]),
        )?;
        let enc_field = Mlp::init(
            &widths(
                1 + config.state_dim,
                &config.enc_field_hidden,
                config.state_dim * config.obs_dim,
            ),
            Activation::Tanh,
            &mut substream(seed, &[purpose::INIT, 1]),
        )?;
        let dec_init = Mlp::init(
            &widths(config.state_dim + config.latent_dim, &config.dec_init_hidden, config.sample_dim),
            Activation::Relu,
            &mut substream(seed, &[purpose::INIT, 2]),
        )?;
        let dec_field = Mlp::init(
            &widths(1 + config.sample_dim, &config.dec_field_hidden, config.sample_dim),
            Activation::Tanh,
            &mut substream(seed, &[purpose::INIT, 3]),
        )?;
        Self::from_parts(config, enc_init, enc_field, dec_init, dec_field)
    }

    /// Assembles a generator from explicit networks, checking every
    /// input/output width against the configuration.
    pub fn from_parts(
        config: GeneratorConfig,
        enc_init: Mlp,
        enc_field: Mlp,
        dec_init: Mlp,
        dec_field: Mlp,
    ) -> Result<Self> {
        config.validate()?;
        let expect = [
            ("enc_init", &enc_init, config.obs_dim, config.state_dim),
            ("enc_field", &enc_field, 1 + config.state_dim, config.state_dim * config.obs_dim),
            ("dec_init", &dec_init, config.state_dim + config.latent_dim, config.sample_dim),
            ("dec_field", &dec_field, 1 + config.sample_dim, config.sample_dim),
        ];
        for (name, mlp, want_in, want_out) in expect {
            if mlp.in_dim() != want_in || mlp.out_dim() != want_out {
                return Err(Error::Shape(format!(
                    "{name} must map {want_in} -> {want_out}, got {} -> {}",
                    mlp.in_dim(),
                    mlp.out_dim()
                )));
            }
        }
        Ok(Self { config, enc_init, enc_field, dec_init, dec_field })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.enc_init.param_count()
            + self.enc_field.param_count()
            + self.dec_init.param_count()
            + self.dec_field.param_count()
    }

    /// All parameters as one flat vector (block order: enc_init, enc_field,
    /// dec_init, dec_field).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.enc_init.append_params(&mut out);
        self.enc_field.append_params(&mut out);
        self.dec_init.append_params(&mut out);
        self.dec_field.append_params(&mut out);
        out
    }

    /// Restores parameters from [`Generator::flat_params`] order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "generator has {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut src = flat;
        self.enc_init.consume_params(&mut src)?;
        self.enc_field.consume_params(&mut src)?;
        self.dec_init.consume_params(&mut src)?;
        self.dec_field.consume_params(&mut src)?;
        Ok(())
    }

    fn check_observation(&self, y: &PiecewiseLinearPath) -> Result<usize> {
        if y.dim() != self.config.obs_dim {
            return Err(Error::Shape(format!(
                "observed path has dimension {}, generator expects {}",
                y.dim(),
                self.config.obs_dim
            )));
        }
        if y.partition() != &self.config.partition {
            return Err(Error::Invalid(
                "observed path lives on a different partition than the generator".into(),
            ));
        }
        self.config.split_index()
    }

    /// Runs the encoder over the observations up to the conditioning time.
    /// Knots after s never enter, so the result is unchanged by anything the
    /// path does later.
    pub fn encode(&self, y: &PiecewiseLinearPath) -> Result<Vec<f64>> {
        let idx = self.check_observation(y)?;
        let times = self.config.partition.times();
        let mut state = self.enc_init.eval(y.knot_value(0))?;
        let mut field_in = vec![0.0; 1 + self.config.state_dim];
        let (sd, od) = (self.config.state_dim, self.config.obs_dim);
        for (k, &time) in times.iter().enumerate().take(idx) {
            field_in[0] = time;
            field_in[1..].copy_from_slice(&state);
            let gain = self.enc_field.eval(&field_in)?;
            let prev = y.knot_value(k);
            let next = y.knot_value(k + 1);
            // Apply the (state_dim x obs_dim) gain to the increment, then add,
            // mirroring the on-tape matvec/add node pair exactly.
            for r in 0..sd {
                let mut delta = 0.0;
                for c in 0..od {
                    delta += gain[r * od + c] * (next[c] - prev[c]);
                }
                state[r] += delta;
            }
        }
        Ok(state)
    }

    fn check_latents(&self, encoded: &[f64], z: &[f64]) -> Result<()> {
        if encoded.len() != self.config.state_dim {
            return Err(Error::Shape(format!(
                "encoded state has length {}, expected {}",
                encoded.len(),
                self.config.state_dim
            )));
        }
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent draw has length {}, expected {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        Ok(())
    }

    /// Decodes one sample path on [s, T] from an encoded state and a latent
    /// draw.
    pub fn sample_path(&self, encoded: &[f64], z: &[f64]) -> Result<PiecewiseLinearPath> {
        self.check_latents(encoded, z)?;
        let idx = self.config.split_index()?;
        let times = self.config.partition.times();
        let dim = self.config.sample_dim;

        let mut input = Vec::with_capacity(encoded.len() + z.len());
        input.extend_from_slice(encoded);
        input.extend_from_slice(z);
        let mut x = self.dec_init.eval(&input)?;
        let frozen = x.clone();

        let mut values = Vec::with_capacity((times.len() - idx) * dim);
        values.extend_from_slice(&x);
        let mut field_in = vec![0.0; 1 + dim];
        for k in idx..times.len() - 1 {
            let dt = times[k + 1] - times[k];
            field_in[0] = times[k];
            field_in[1..].copy_from_slice(match self.config.coupling {
                OdeStateCoupling::FrozenInitialState => &frozen,
                OdeStateCoupling::CurrentState => &x,
            });
            let velocity = self.dec_field.eval(&field_in)?;
            for j in 0..dim {
                x[j] += dt * velocity[j];
            }
            values.extend_from_slice(&x);
        }
        PiecewiseLinearPath::from_flat(self.config.tail_partition()?, dim, values)
    }

    /// Draws `n` latent vectors from `rng` in order and decodes one path per
    /// draw.
    pub fn sample_paths(
        &self,
        encoded: &[f64],
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<PiecewiseLinearPath>> {
        let mut out = Vec::with_capacity(n);
        let mut z = vec![0.0; self.config.latent_dim];
        for _ in 0..n {
            for zj in z.iter_mut() {
                *zj = StandardNormal.sample(rng);
            }
            out.push(self.sample_path(encoded, &z)?);
        }
        Ok(out)
    }

    /// Monte Carlo estimate of the conditional mean path: the knot-wise
    /// average of `n` sample paths, accumulated in draw order.
    pub fn mc_mean_path(
        &self,
        encoded: &[f64],
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<PiecewiseLinearPath> {
        if n == 0 {
            return Err(Error::Invalid("mean path needs at least one sample".into()));
        }
        let paths = self.sample_paths(encoded, n, rng)?;
        let mut acc = paths[0].values_flat().to_vec();
        for p in &paths[1..] {
            for (a, v) in acc.iter_mut().zip(p.values_flat()) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= n as f64;
        }
        PiecewiseLinearPath::from_flat(self.config.tail_partition()?, self.config.sample_dim, acc)
    }

    /// Registers all four networks' parameters on a tape.
    pub fn register(&self, tape: &mut Tape) -> GeneratorNodes {
        GeneratorNodes {
            enc_init: self.enc_init.register(tape),
            enc_field: self.enc_field.register(tape),
            dec_init: self.dec_init.register(tape),
            dec_field: self.dec_field.register(tape),
        }
    }

    /// On-tape mirror of [`Generator::encode`]; observation values enter as
    /// constants, parameters through `nodes`.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        nodes: &GeneratorNodes,
        y: &PiecewiseLinearPath,
    ) -> Result<NodeId> {
        let idx = self.check_observation(y)?;
        let times = self.config.partition.times();
        let y0 = tape.leaf(y.knot_value(0));
        let mut state = self.enc_init.forward_on_tape(tape, &nodes.enc_init, y0);
        let od = self.config.obs_dim;
        let mut dy = vec![0.0; od];
        for (k, &time) in times.iter().enumerate().take(idx) {
            let u = tape.leaf(&[time]);
            let field_in = tape.concat2(u, state);
            let gain = self.enc_field.forward_on_tape(tape, &nodes.enc_field, field_in);
            let prev = y.knot_value(k);
            let next = y.knot_value(k + 1);
            for c in 0..od {
                dy[c] = next[c] - prev[c];
            }
            let dy_leaf = tape.leaf(&dy);
            let delta = tape.matvec(gain, dy_leaf);
            state = tape.add(state, delta);
        }
        Ok(state)
    }

    /// On-tape mirror of [`Generator::sample_path`]. Returns one node per
    /// knot of the tail partition holding the sample value there.
    pub fn sample_path_on_tape(
        &self,
        tape: &mut Tape,
        nodes: &GeneratorNodes,
        encoded: NodeId,
        z: &[f64],
    ) -> Result<Vec<NodeId>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent draw has length {}, expected {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let idx = self.config.split_index()?;
        let times = self.config.partition.times();
        let z_leaf = tape.leaf(z);
        let input = tape.concat2(encoded, z_leaf);
        let mut x = self.dec_init.forward_on_tape(tape, &nodes.dec_init, input);
        let frozen = x;
        let mut knots = Vec::with_capacity(times.len() - idx);
        knots.push(x);
        for k in idx..times.len() - 1 {
            let dt = times[k + 1] - times[k];
            let u = tape.leaf(&[times[k]]);
            let coupled = match self.config.coupling {
                OdeStateCoupling::FrozenInitialState => frozen,
                OdeStateCoupling::CurrentState => x,
            };
            let field_in = tape.concat2(u, coupled);
            let velocity = self.dec_field.forward_on_tape(tape, &nodes.dec_field, field_in);
            let step = tape.scale(velocity, dt);
            x = tape.add(x, step);
            knots.push(x);
        }
        Ok(knots)
    }

    /// Appends all parameter gradients in [`Generator::flat_params`] order.
    pub fn append_grads(
        &self,
        tape: &Tape,
        nodes: &GeneratorNodes,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        self.enc_init.append_grads(tape, &nodes.enc_init, out)?;
        self.enc_field.append_grads(tape, &nodes.enc_field, out)?;
        self.dec_init.append_grads(tape, &nodes.dec_init, out)?;
        self.dec_field.append_grads(tape, &nodes.dec_field, out)?;
        Ok(())
    }
}
