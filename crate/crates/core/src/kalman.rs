//! Exact filtering and prediction for scalar linear-Gaussian systems.
//!
//! For signals of the form dX = a(t) X dt + noise observed through
//! dY = c X dt + dW, the conditional law of X given the observed path is
//! Gaussian, and its mean and variance follow the Kalman-Bucy equations. This
//! module integrates them on the observation grid and propagates them past
//! the end of the observations, which gives a ground-truth answer to compare
//! learned predictors against.
//!
//! Prediction integrates the variance (and, for non-polynomial gains, the
//! mean) with Euler steps anchored at integer multiples of
//! [`LinearSystem::resolution`], so predicting in one hop or in several hops
//! through aligned intermediate times runs the exact same step sequence.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::paths::{PiecewiseLinearPath, TIME_TOL};

/// Time-varying gain a(t) of the signal drift a(t) x.
#[derive(Clone)]
pub enum Drift {
    /// a(t) = c0 + c1 t; the mean propagator has a closed form.
    Linear { c0: f64, c1: f64 },
    /// Arbitrary continuous gain, integrated numerically.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Drift {
    pub fn gain_at(&self, t: f64) -> f64 {
        match self {
            Drift::Linear { c0, c1 } => c0 + c1 * t,
            Drift::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Linear { c0, c1 } => write!(f, "Drift::Linear {{ c0: {c0}, c1: {c1} }}"),
            Drift::Custom(_) => write!(f, "Drift::Custom(..)"),
        }
    }
}

/// A scalar linear-Gaussian filtering problem.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// Signal drift gain a(t).
    pub drift: Drift,
    /// Observation gain c in dY = c X dt + dW.
    pub obs_gain: f64,
    /// Variance rate q of the signal noise.
    pub signal_noise: f64,
    /// Variance rate r of the observation noise; must be positive.
    pub obs_noise: f64,
    /// Mean of X at the start of the observations.
    pub prior_mean: f64,
    /// Variance of X at the start of the observations; must be non-negative.
    pub prior_var: f64,
    /// Euler step for prediction; grid points sit at integer multiples.
    pub resolution: f64,
}

/// Conditional mean and variance of the signal at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub time: f64,
    pub mean: f64,
    pub var: f64,
}

impl LinearSystem {
    /// The filtering problem matching [`crate::sde::benchmark_system`]:
    /// dX = 0.1 (1 + t) X dt + dV, dY = 0.2 X dt + dW, X0 ~ N(0, 1).
    pub fn benchmark(resolution: f64) -> Self {
        Self {
            drift: Drift::Linear { c0: 0.1, c1: 0.1 },
            obs_gain: 0.2,
            signal_noise: 1.0,
            obs_noise: 1.0,
            prior_mean: 0.0,
            prior_var: 1.0,
            resolution,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.obs_noise <= 0.0 || self.obs_noise.is_nan() {
            return Err(Error::Invalid(format!(
                "observation noise rate must be positive, got {}",
                self.obs_noise
            )));
        }
        if self.signal_noise < 0.0 || self.prior_var < 0.0 {
            return Err(Error::Invalid(
                "signal noise rate and prior variance must be non-negative".into(),
            ));
        }
        if self.resolution <= 0.0 || self.resolution.is_nan() {
            return Err(Error::Invalid(format!(
                "prediction resolution must be positive, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Runs the filter along an observed path (one channel), returning the
    /// conditional state at every knot. The state at the first knot is the
    /// prior: observations enter only through their increments, so the
    /// initial level of Y carries no information.
    pub fn filter(&self, y: &PiecewiseLinearPath) -> Result<Vec<KalmanState>> {
        self.validate()?;
        if y.dim() != 1 {
            return Err(Error::Shape(format!(
                "the filter handles scalar observations, path has dimension {}",
                y.dim()
            )));
        }
        let times = y.partition().times();
        let mut states = Vec::with_capacity(times.len());
        let mut mean = self.prior_mean;
        let mut var = self.prior_var;
        states.push(KalmanState { time: times[0], mean, var });
        let (c, q, r) = (self.obs_gain, self.signal_noise, self.obs_noise);
        for k in 0..times.len() - 1 {
            let dt = times[k + 1] - times[k];
            let dy = y.knot_value(k + 1)[0] - y.knot_value(k)[0];
            let a = self.drift.gain_at(times[k]);
            let innovation = dy - c * mean * dt;
            let next_mean = mean + a * mean * dt + (var * c / r) * innovation;
            let next_var = (var + (2.0 * a * var + q - var * var * c * c / r) * dt).max(0.0);
            mean = next_mean;
            var = next_var;
            states.push(KalmanState { time: times[k + 1], mean, var });
        }
        Ok(states)
    }

    /// Runs the filter and returns the state at time `s`, which must be a
    /// knot of the observed path.
    pub fn filter_to(&self, y: &PiecewiseLinearPath, s: f64) -> Result<KalmanState> {
        let idx = y.partition().index_of(s).ok_or_else(|| {
            Error::Invalid(format!("time {s} is not a knot of the observed path"))
        })?;
        Ok(self.filter(y)?[idx])
    }

    /// Integral of the drift gain over [from, to] for the closed-form mean.
    fn gain_integral(c0: f64, c1: f64, from: f64, to: f64) -> f64 {
        c0 * (to - from) + 0.5 * c1 * (to * to - from * from)
    }

    /// Euler grid from `from` to `to`: interior points are the integer
    /// multiples of the resolution strictly inside the interval.
    fn grid_times(&self, from: f64, to: f64) -> Vec<f64> {
        let h = self.resolution;
        let mut times = vec![from];
        let mut k = (from / h).floor() as i64 + 1;
        while (k as f64) * h < from + TIME_TOL {
            k += 1;
        }
        while (k as f64) * h < to - TIME_TOL {
            times.push(k as f64 * h);
            k += 1;
        }
        times.push(to);
        times
    }

    /// Propagates a conditional state forward to time `t` with no further
    /// observations: the mean follows dm = a(t) m dt and the variance
    /// dP = (2 a(t) P + q) dt.
    pub fn predict(&self, state: &KalmanState, t: f64) -> Result<KalmanState> {
        self.validate()?;
        if t < state.time - TIME_TOL {
            return Err(Error::Invalid(format!(
                "cannot predict backwards from {} to {t}",
                state.time
            )));
        }
        if (t - state.time).abs() <= TIME_TOL {
            return Ok(*state);
        }
        let grid = self.grid_times(state.time, t);
        let mut var = state.var;
        for pair in grid.windows(2) {
            let a = self.drift.gain_at(pair[0]);
            var += (2.0 * a * var + self.signal_noise) * (pair[1] - pair[0]);
        }
        let mean = match self.drift {
            Drift::Linear { c0, c1 } => {
                state.mean * Self::gain_integral(c0, c1, state.time, t).exp()
            }
            Drift::Custom(_) => {
                let mut mean = state.mean;
                for pair in grid.windows(2) {
                    mean += self.drift.gain_at(pair[0]) * mean * (pair[1] - pair[0]);
                }
                mean
            }
        };
        Ok(KalmanState { time: t, mean, var })
    }

    /// Predicts the state at each time in `times`, which must be
    /// non-decreasing and start at or after the state's time.
    pub fn predict_grid(&self, state: &KalmanState, times: &[f64]) -> Result<Vec<KalmanState>> {
        let mut out = Vec::with_capacity(times.len());
        let mut cur = *state;
        for &t in times {
            cur = self.predict(&cur, t)?;
            out.push(cur);
        }
        Ok(out)
    }
}
