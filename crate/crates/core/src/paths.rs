//! Piecewise-linear paths on a time partition.
//!
//! A path is a finite list of knots (t_i, x_i) with strictly increasing times,
//! read as the continuous path that interpolates linearly between consecutive
//! knots. Discretized diffusions, observation records, and generated sample
//! paths all use this representation, and the signature of such a path is
//! computed exactly by folding segment exponentials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used to match knot times against query times.
pub const TIME_TOL: f64 = 1e-9;

/// Tolerance for the junction check in [`PiecewiseLinearPath::concat`].
pub const JUNCTION_TOL: f64 = 1e-12;

/// A strictly increasing grid of time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Partition {
    times: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Partition {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::new(times)
    }
}

impl From<Partition> for Vec<f64> {
    fn from(p: Partition) -> Self {
        p.times
    }
}

impl Partition {
    /// Wraps an explicit grid. Requires at least two strictly increasing,
    /// finite time points.
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Invalid(
                "partition needs at least two time points".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("partition times".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(
                "partition times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    /// An equidistant grid of `knots` points covering [t0, t1].
    pub fn equidistant(t0: f64, t1: f64, knots: usize) -> Result<Self> {
        if knots < 2 {
            return Err(Error::Invalid("equidistant partition needs >= 2 knots".into()));
        }
        if t1 <= t0 || t1.is_nan() || t0.is_nan() {
            return Err(Error::Invalid("equidistant partition needs t1 > t0".into()));
        }
        let n = knots - 1;
        let times = (0..knots)
            .map(|i| t0 + (t1 - t0) * i as f64 / n as f64)
            .collect();
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of knots. A partition is never empty by construction.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Width of the first step; for equidistant grids this is the resolution.
    pub fn resolution(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Index of the knot matching `t` within [`TIME_TOL`], if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i,
        };
        [i.wrapping_sub(1), i, i + 1]
            .into_iter()
            .find(|&j| j < self.times.len() && (self.times[j] - t).abs() <= TIME_TOL)
    }

    /// Index of the last knot with time <= t + TIME_TOL, clamped to a segment
    /// start, so `times[i] <= t < times[i+1]` for interior queries.
    fn segment_index(&self, t: f64) -> usize {
        let mut i = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i + 1 >= self.times.len() {
            i = self.times.len() - 2;
        }
        i
    }
}

/// A piecewise-linear path with values in R^dim.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearPath {
    partition: Partition,
    dim: usize,
    /// Knot values, knot-major: values[i * dim .. (i + 1) * dim] is x_i.
    values: Vec<f64>,
}

impl PiecewiseLinearPath {
    /// Builds a path from one sample vector per knot.
    pub fn from_samples(partition: Partition, samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() != partition.len() {
            return Err(Error::Shape(format!(
                "path samples: got {} vectors for {} knots",
                samples.len(),
                partition.len()
            )));
        }
        let dim = samples[0].len();
        if dim == 0 {
            return Err(Error::Invalid("path samples must be non-empty vectors".into()));
        }
        let mut values = Vec::with_capacity(dim * samples.len());
        for s in &samples {
            if s.len() != dim {
                return Err(Error::Shape(
                    "path samples must all have the same dimension".into(),
                ));
            }
            values.extend_from_slice(s);
        }
        Self::from_flat(partition, dim, values)
    }

    /// Builds a path from a flat knot-major value array.
    pub fn from_flat(partition: Partition, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("path dimension must be >= 1".into()));
        }
        if values.len() != dim * partition.len() {
            return Err(Error::Shape(format!(
                "path values: got {} floats, want {} ({} knots x dim {})",
                values.len(),
                dim * partition.len(),
                partition.len(),
                dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path values".into()));
        }
        Ok(Self {
            partition,
            dim,
            values,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_knots(&self) -> usize {
        self.partition.len()
    }

    /// The value vector at knot i.
    pub fn knot_value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values_flat(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the path at time t in [t0, t_end] (within [`TIME_TOL`]).
    /// Queries at knot times return the stored sample exactly.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let p = &self.partition;
        if t < p.t0() - TIME_TOL || t > p.t_end() + TIME_TOL {
            return Err(Error::Invalid(format!(
                "eval at t = {t} outside [{}, {}]",
                p.t0(),
                p.t_end()
            )));
        }
        if let Some(i) = p.index_of(t) {
            return Ok(self.knot_value(i).to_vec());
        }
        let i = p.segment_index(t);
        let (t0, t1) = (p.times()[i], p.times()[i + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(self
            .knot_value(i)
            .iter()
            .zip(self.knot_value(i + 1))
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }

    /// Prepends the running time as channel 0, turning x_i into (t_i, x_i).
    ///
    /// Augmenting an already augmented path is allowed (it prepends a second
    /// time channel) but is usually a bug, so it logs a warning.
    pub fn time_augment(&self) -> Self {
        let already = (0..self.n_knots())
            .all(|i| self.knot_value(i)[0] == self.partition.times()[i]);
        if already {
            log::warn!("time_augment: channel 0 already equals the knot times; augmenting again");
        }
        let dim = self.dim + 1;
        let mut values = Vec::with_capacity(dim * self.n_knots());
        for i in 0..self.n_knots() {
            values.push(self.partition.times()[i]);
            values.extend_from_slice(self.knot_value(i));
        }
        Self {
            partition: self.partition.clone(),
            dim,
            values,
        }
    }

    /// The restriction of the path to [a, b]. Knot values are kept; when a or
    /// b falls strictly inside a segment an interpolated knot is inserted.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self> {
        if a >= b || a.is_nan() || b.is_nan() {
            return Err(Error::Invalid(format!("restrict: need a < b, got [{a}, {b}]")));
        }
        let p = &self.partition;
        if a < p.t0() - TIME_TOL || b > p.t_end() + TIME_TOL {
            return Err(Error::Invalid(format!(
                "restrict: [{a}, {b}] outside [{}, {}]",
                p.t0(),
                p.t_end()
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut push = |t: f64, v: Vec<f64>| {
            times.push(t);
            values.extend_from_slice(&v);
        };
        push(a, self.eval(a)?);
        for (i, &t) in p.times().iter().enumerate() {
            if t > a + TIME_TOL && t < b - TIME_TOL {
                push(t, self.knot_value(i).to_vec());
            }
        }
        push(b, self.eval(b)?);
        Self::from_flat(Partition::new(times)?, self.dim, values)
    }

    /// Concatenates two paths whose junction matches in time and value to
    /// within [`JUNCTION_TOL`].
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!(
                "concat: dim {} vs {}",
                self.dim, other.dim
            )));
        }
        let dt = (other.partition.t0() - self.partition.t_end()).abs();
        if dt > JUNCTION_TOL {
            return Err(Error::Invalid(format!(
                "concat: junction times differ by {dt:e}"
            )));
        }
        let left = self.knot_value(self.n_knots() - 1);
        let right = other.knot_value(0);
        for (a, b) in left.iter().zip(right) {
            if (a - b).abs() > JUNCTION_TOL {
                return Err(Error::Invalid(format!(
                    "concat: junction values differ by {:e}",
                    (a - b).abs()
                )));
            }
        }
        let mut times = self.partition.times().to_vec();
        times.extend_from_slice(&other.partition.times()[1..]);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values[self.dim..]);
        Self::from_flat(Partition::new(times)?, self.dim, values)
    }

    /// Prepends a knot with value 0 at time t0 - step. The first segment of
    /// the result then carries the initial value of the path as an increment,
    /// which makes signatures of the result sensitive to the path's level and
    /// not only to its increments.
    pub fn with_basepoint(&self, step: f64) -> Result<Self> {
        if step <= 0.0 || !step.is_finite() {
            return Err(Error::Invalid("basepoint step must be positive".into()));
        }
        let mut times = Vec::with_capacity(self.n_knots() + 1);
        times.push(self.partition.t0() - step);
        times.extend_from_slice(self.partition.times());
        let mut values = vec![0.0; self.dim];
        values.extend_from_slice(&self.values);
        Self::from_flat(Partition::new(times)?, self.dim, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_path(times: Vec<f64>, values: Vec<f64>) -> PiecewiseLinearPath {
        PiecewiseLinearPath::from_flat(Partition::new(times).unwrap(), 1, values).unwrap()
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![0.0]).is_err());
        assert!(Partition::new(vec![0.0, 0.0]).is_err());
        assert!(Partition::new(vec![0.0, -1.0]).is_err());
        assert!(Partition::new(vec![0.0, f64::NAN]).is_err());
        let p = Partition::equidistant(0.0, 1.0, 101).unwrap();
        assert_eq!(p.len(), 101);
        assert_eq!(p.t0(), 0.0);
        assert_eq!(p.t_end(), 1.0);
        assert!((p.resolution() - 0.01).abs() < 1e-15);
        assert_eq!(p.index_of(0.5), Some(50));
        assert_eq!(p.index_of(0.505), None);
    }

    #[test]
    fn eval_interpolates() {
        let p = scalar_path(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]);
        assert_eq!(p.eval(0.5).unwrap(), vec![1.0]);
        assert_eq!(p.eval(1.5).unwrap(), vec![1.5]);
        assert_eq!(p.eval(0.0).unwrap(), vec![0.0]);
        assert_eq!(p.eval(1.0).unwrap(), vec![2.0]);
        assert_eq!(p.eval(2.0).unwrap(), vec![1.0]);
        assert!(p.eval(-0.1).is_err());
        assert!(p.eval(2.1).is_err());
    }

    #[test]
    fn construction_errors() {
        let part = Partition::new(vec![0.0, 1.0]).unwrap();
        assert!(PiecewiseLinearPath::from_samples(part.clone(), vec![vec![0.0]]).is_err());
        assert!(
            PiecewiseLinearPath::from_samples(part.clone(), vec![vec![0.0], vec![0.0, 1.0]])
                .is_err()
        );
        assert!(PiecewiseLinearPath::from_flat(part, 1, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn time_augment_prepends_time() {
        let p = scalar_path(vec![0.0, 0.5, 1.0], vec![3.0, 4.0, 5.0]);
        let a = p.time_augment();
        assert_eq!(a.dim(), 2);
        assert_eq!(a.knot_value(1), &[0.5, 4.0]);
        assert_eq!(a.eval(0.25).unwrap(), vec![0.25, 3.5]);
        // Augmenting twice is allowed and prepends a second time channel.
        let b = a.time_augment();
        assert_eq!(b.dim(), 3);
        assert_eq!(b.knot_value(2), &[1.0, 1.0, 5.0]);
    }

    #[test]
    fn restrict_inserts_interpolated_knots() {
        let p = scalar_path(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]);
        let r = p.restrict(0.5, 1.5).unwrap();
        assert_eq!(r.partition().times(), &[0.5, 1.0, 1.5]);
        assert_eq!(r.values_flat(), &[1.0, 2.0, 1.5]);
        assert!(p.restrict(1.5, 0.5).is_err());
        assert!(p.restrict(-0.5, 1.0).is_err());
    }

    #[test]
    fn restrict_full_interval_is_identity() {
        let p = scalar_path(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]);
        assert_eq!(p.restrict(0.0, 2.0).unwrap(), p);
    }

    #[test]
    fn restrict_matches_eval() {
        let p = scalar_path(vec![0.0, 0.3, 0.7, 1.0], vec![1.0, -0.5, 0.25, 2.0]);
        let r = p.restrict(0.1, 0.9).unwrap();
        for &t in &[0.1, 0.2, 0.3, 0.55, 0.7, 0.9] {
            assert!((r.eval(t).unwrap()[0] - p.eval(t).unwrap()[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_reproduces_line() {
        let p = scalar_path(vec![0.0, 1.0], vec![0.0, 1.0]);
        let q = scalar_path(vec![1.0, 2.0], vec![1.0, 2.0]);
        let c = p.concat(&q).unwrap();
        assert_eq!(c.partition().times(), &[0.0, 1.0, 2.0]);
        assert_eq!(c.values_flat(), &[0.0, 1.0, 2.0]);
        assert_eq!(c.eval(1.7).unwrap(), vec![1.7]);
    }

    #[test]
    fn concat_rejects_junction_mismatch() {
        let p = scalar_path(vec![0.0, 1.0], vec![0.0, 1.0]);
        let far = scalar_path(vec![1.001, 2.0], vec![1.0, 2.0]);
        let off = scalar_path(vec![1.0, 2.0], vec![1.0 + 1e-6, 2.0]);
        assert!(p.concat(&far).is_err());
        assert!(p.concat(&off).is_err());
    }

    #[test]
    fn split_then_concat_round_trips() {
        let p = scalar_path(vec![0.0, 0.4, 1.0], vec![0.0, 1.0, -1.0]);
        // Splitting at a knot preserves the knot set exactly.
        let glued = p
            .restrict(0.0, 0.4)
            .unwrap()
            .concat(&p.restrict(0.4, 1.0).unwrap())
            .unwrap();
        assert_eq!(glued, p);
        // Splitting inside a segment inserts a collinear knot; the glued path
        // is the same function even though the knot sets differ.
        let glued = p
            .restrict(0.0, 0.7)
            .unwrap()
            .concat(&p.restrict(0.7, 1.0).unwrap())
            .unwrap();
        for &t in &[0.0, 0.2, 0.4, 0.7, 0.85, 1.0] {
            assert!((glued.eval(t).unwrap()[0] - p.eval(t).unwrap()[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn basepoint_prepends_zero_knot() {
        let p = scalar_path(vec![0.5, 1.0], vec![3.0, 4.0]);
        let b = p.with_basepoint(0.01).unwrap();
        assert_eq!(b.n_knots(), 3);
        assert!((b.partition().t0() - 0.49).abs() < 1e-12);
        assert_eq!(b.knot_value(0), &[0.0]);
        assert_eq!(b.knot_value(1), &[3.0]);
        assert!(p.with_basepoint(0.0).is_err());
    }
}
