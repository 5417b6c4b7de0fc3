//! Small dense feedforward networks with tape-based differentiation.
//!
//! An [`Mlp`] owns its parameters as plain vectors so it can be serialized
//! into checkpoints, evaluated off-tape for cheap inference, or registered on
//! a [`Tape`] when gradients are needed. Initialization follows the usual
//! fan-based recipes: He for rectifier layers, Glorot for tanh and linear
//! ones, zero biases.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

/// One dense layer: row-major weights (rows x cols), bias, activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("layer must be non-degenerate, got {rows}x{cols}")));
        }
        if weights.len() != rows * cols {
            return Err(Error::Shape(format!(
                "layer {rows}x{cols} needs {} weights, got {}",
                rows * cols,
                weights.len()
            )));
        }
        if bias.len() != rows {
            return Err(Error::Shape(format!(
                "layer with {rows} rows needs {rows} biases, got {}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters must be finite".into()));
        }
        Ok(Self { rows, cols, weights, bias, activation })
    }

    fn apply_activation(&self, out: &mut [f64]) {
        match self.activation {
            Activation::Identity => {}
            Activation::Relu => {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            Activation::Tanh => {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
    }
}

/// Dense feedforward network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Tape handles for one registered [`Mlp`]: a (weights, bias) leaf pair per
/// layer, in layer order.
#[derive(Debug, Clone)]
pub struct MlpNodes {
    pub layers: Vec<(NodeId, NodeId)>,
}

impl Mlp {
    /// Random initialization for the layer widths `dims` (input width first).
    /// Hidden layers use `hidden` as activation, the output layer is linear.
    /// Rectifier layers draw weights from N(0, 2/fan_in), tanh and linear
    /// layers from N(0, 2/(fan_in + fan_out)); biases start at zero.
    pub fn init(dims: &[usize], hidden: Activation, rng: &mut dyn RngCore) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Invalid(format!(
                "an mlp needs at least input and output widths, got {dims:?}"
            )));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (cols, rows) = (dims[l], dims[l + 1]);
            let activation = if l + 2 == dims.len() { Activation::Identity } else { hidden };
            let std = match activation {
                Activation::Relu => (2.0 / cols as f64).sqrt(),
                Activation::Tanh | Activation::Identity => (2.0 / (cols + rows) as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::Invalid(format!("weight distribution: {e}")))?;
            let weights: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
            layers.push(Layer::new(rows, cols, weights, vec![0.0; rows], activation)?);
        }
        Ok(Self { layers })
    }

    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("an mlp needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    l,
                    pair[0].rows,
                    l + 1,
                    pair[1].cols
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Appends all parameters (weights then bias, per layer) to `out`.
    pub fn append_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters back in [`Mlp::append_params`] order, consuming the
    /// front of `src`.
    pub fn consume_params(&mut self, src: &mut &[f64]) -> Result<()> {
        for l in &mut self.layers {
            let nw = l.weights.len();
            let need = nw + l.bias.len();
            if src.len() < need {
                return Err(Error::Shape(format!(
                    "parameter vector too short: layer needs {need}, {} left",
                    src.len()
                )));
            }
            l.weights.copy_from_slice(&src[..nw]);
            l.bias.copy_from_slice(&src[nw..need]);
            *src = &src[need..];
        }
        Ok(())
    }

    /// Off-tape forward pass.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "mlp expects {} inputs, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            next.clear();
            next.resize(l.rows, 0.0);
            for (r, out) in next.iter_mut().enumerate() {
                let row = &l.weights[r * l.cols..(r + 1) * l.cols];
                *out = row.iter().zip(&cur).map(|(w, v)| w * v).sum::<f64>() + l.bias[r];
            }
            l.apply_activation(&mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Puts the parameters on the tape as leaves so gradients can reach them.
    pub fn register(&self, tape: &mut Tape) -> MlpNodes {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(&l.weights), tape.leaf(&l.bias)))
            .collect();
        MlpNodes { layers }
    }

    /// On-tape forward pass through previously registered parameters.
    pub fn forward_on_tape(&self, tape: &mut Tape, nodes: &MlpNodes, x: NodeId) -> NodeId {
        assert_eq!(nodes.layers.len(), self.layers.len(), "nodes from a different mlp");
        let mut cur = x;
        for (l, &(w, b)) in self.layers.iter().zip(&nodes.layers) {
            let pre = tape.affine(w, b, cur);
            cur = match l.activation {
                Activation::Identity => pre,
                Activation::Relu => tape.relu(pre),
                Activation::Tanh => tape.tanh(pre),
            };
        }
        cur
    }

    /// Appends the gradients of all parameters (same order as
    /// [`Mlp::append_params`]) after a backward pass.
    pub fn append_grads(&self, tape: &Tape, nodes: &MlpNodes, out: &mut Vec<f64>) -> Result<()> {
        for &(w, b) in &nodes.layers {
            out.extend_from_slice(tape.grad(w)?);
            out.extend_from_slice(tape.grad(b)?);
        }
        Ok(())
    }
}
