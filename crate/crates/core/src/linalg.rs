//! Small dense matrix utilities for Markov jump processes.
//!
//! State counts in this crate stay in single digits, so everything here is
//! dense, row-major and allocation-light.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on intensity-matrix row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on stochastic-matrix row sums.
pub const STOCHASTIC_TOL: f64 = 1e-10;

/// Truncation order of the series applied to the scaled matrix.
const SERIES_ORDER: usize = 18;
/// Largest exit rate (times the scaled duration) the series is applied to.
const MAX_SCALED_RATE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("matrix must have at least one state")]
    Empty,
    #[error("negative rate {value} at ({row}, {col})")]
    NegativeRate { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 0")]
    RowSumNonzero { row: usize, sum: f64 },
    #[error("state {state} is absorbing (exit rate 0)")]
    AbsorbingState { state: usize },
    #[error("rate must be positive, got {0}")]
    NonpositiveRate(f64),
    #[error("duration must be finite and nonnegative, got {0}")]
    NegativeDuration(f64),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        if n == 0 {
            return Err(LinalgError::Empty);
        }
        let mut data = Vec::with_capacity(n * n);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(LinalgError::NotSquare {
                    rows: n,
                    row,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rate matrix of a Markov jump process: nonnegative off-diagonal rates,
/// diagonal entries equal to minus the exit rate of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct IntensityMatrix(SquareMatrix);

impl IntensityMatrix {
    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    /// Exit rate q_i of state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.0.get(i, i)
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    /// Builds a matrix from its off-diagonal rates, filling the diagonal.
    pub fn from_off_diagonal(rates: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let mut m = SquareMatrix::from_rows(rates)?;
        for i in 0..m.n {
            let exit: f64 = (0..m.n).filter(|&j| j != i).map(|j| m.get(i, j)).sum();
            m.set(i, i, -exit);
        }
        validate_intensity(&m)
    }
}

impl TryFrom<Vec<Vec<f64>>> for IntensityMatrix {
    type Error = LinalgError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        validate_intensity(&SquareMatrix::from_rows(&rows)?)
    }
}

impl From<IntensityMatrix> for Vec<Vec<f64>> {
    fn from(m: IntensityMatrix) -> Self {
        m.0.rows()
    }
}

/// Row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix(SquareMatrix);

impl StochasticMatrix {
    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0.matmul(&other.0))
    }
}

pub fn validate_intensity(m: &SquareMatrix) -> Result<IntensityMatrix, LinalgError> {
    if m.n == 0 {
        return Err(LinalgError::Empty);
    }
    for i in 0..m.n {
        let mut sum = 0.0;
        for j in 0..m.n {
            let v = m.get(i, j);
            if !v.is_finite() {
                return Err(LinalgError::NonFinite { row: i, col: j });
            }
            if i != j && v < 0.0 {
                return Err(LinalgError::NegativeRate {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if sum.abs() > ROW_SUM_TOL {
            return Err(LinalgError::RowSumNonzero { row: i, sum });
        }
    }
    Ok(IntensityMatrix(m.clone()))
}

/// Transition matrix `exp(Q * dt)` of the process over a duration `dt`.
///
/// Scaling and squaring: the duration is halved until every scaled exit
/// rate is at most 0.5, a fixed-order truncated series is summed on the
/// scaled matrix, and the result is squared back up. Round-off negatives
/// are clamped and rows renormalized.
pub fn matrix_exp(q: &IntensityMatrix, dt: f64) -> Result<StochasticMatrix, LinalgError> {
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(LinalgError::NegativeDuration(dt));
    }
    let n = q.n();
    let rate = q.max_exit_rate() * dt;
    if rate == 0.0 {
        return Ok(StochasticMatrix(SquareMatrix::identity(n)));
    }
    let mut squarings = 0u32;
    let mut scaled_rate = rate;
    while scaled_rate > MAX_SCALED_RATE {
        scaled_rate *= 0.5;
        squarings += 1;
    }
    let a = q.0.scaled(dt / f64::from(2u32).powi(squarings as i32));

    // Horner form of the truncated series: I + A(I + A/2(I + A/3(...)))
    let mut acc = SquareMatrix::identity(n);
    for k in (1..=SERIES_ORDER).rev() {
        acc = a.matmul(&acc).scaled(1.0 / k as f64);
        acc.add_assign(&SquareMatrix::identity(n));
    }
    for _ in 0..squarings {
        acc = acc.matmul(&acc);
    }
    Ok(StochasticMatrix(clamp_rows(acc)))
}

fn clamp_rows(mut m: SquareMatrix) -> SquareMatrix {
    let n = m.n;
    for i in 0..n {
        let row = &mut m.data[i * n..(i + 1) * n];
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    m
}

/// Jump-chain probabilities `q_ij / q_i`, zero on the diagonal.
pub fn embedded_transitions(q: &IntensityMatrix) -> Result<StochasticMatrix, LinalgError> {
    let n = q.n();
    let mut out = SquareMatrix::zeros(n);
    for i in 0..n {
        let exit: f64 = (0..n).filter(|&j| j != i).map(|j| q.rate(i, j)).sum();
        if exit <= 0.0 {
            return Err(LinalgError::AbsorbingState { state: i });
        }
        for j in (0..n).filter(|&j| j != i) {
            out.set(i, j, q.rate(i, j) / exit);
        }
    }
    Ok(StochasticMatrix(out))
}

/// Draws a sojourn time from the exponential density `q e^{-q t}`.
pub fn sample_sojourn<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, LinalgError> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(LinalgError::NonpositiveRate(rate));
    }
    let exp = Exp::new(rate).map_err(|_| LinalgError::NonpositiveRate(rate))?;
    Ok(exp.sample(rng))
}
