//! Soft-to-hard scalar quantization, entropy estimation and rate control.
//!
//! During training a code value `x_i` is softly assigned to the learnable bin
//! centers through `P = softmax(alpha * S)` with `S_ij = -|x_i - mu_j|`, and the
//! decoder receives the convex combination `sum_j P_ij mu_j`. At inference the
//! assignment hardens to the nearest center. Raising `alpha` closes the gap
//! between the two.
//!
//! Bin usage `p_j` is the mean of `P[:, j]` over every code value in a batch,
//! and `-sum p_j log2 p_j` (bits per code value) is the rate proxy that the
//! [`LambdaController`] steers toward a target.

use crate::autodiff::{self, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 32;
pub const MAX_BINS: usize = 64;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_ANNEAL_RATE: f64 = 0.3;
pub const DEFAULT_LAMBDA_GAIN: f64 = 0.01;

/// Learnable scalar codebook with a softmax hardness `alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftQuantizer {
    centers: Tensor,
    alpha: f64,
}

impl SoftQuantizer {
    /// `bins` centers on a uniform grid over `[-1, 1]`.
    pub fn new(bins: usize, alpha: f64) -> Result<Self> {
        check_bins(bins)?;
        let step = 2.0 / (bins - 1) as f64;
        let centers = (0..bins).map(|j| -1.0 + j as f64 * step).collect();
        Self::with_centers(centers, alpha)
    }

    pub fn with_centers(centers: Vec<f64>, alpha: f64) -> Result<Self> {
        check_bins(centers.len())?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(SoftQuantizer { centers: Tensor::vector(centers), alpha })
    }

    pub fn bins(&self) -> usize {
        self.centers.numel()
    }

    /// Fixed-length code size, `ceil(log2 J)`.
    pub fn code_bits(&self) -> u32 {
        (self.bins() as u32).next_power_of_two().trailing_zeros()
    }

    pub fn centers(&self) -> &[f64] {
        self.centers.data()
    }

    pub fn centers_tensor(&self) -> &Tensor {
        &self.centers
    }

    pub fn centers_tensor_mut(&mut self) -> &mut Tensor {
        &mut self.centers
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(())
    }

    /// Epoch-boundary annealing step: `alpha += rate` (negative rates are ignored).
    pub fn anneal(&mut self, rate: f64) -> f64 {
        self.alpha += rate.max(0.0);
        self.alpha
    }

    pub fn hard_assign(&self, x: &[f64]) -> Vec<u8> {
        hard_assign(x, self.centers())
    }

    pub fn hard_dequantize(&self, indices: &[u8]) -> Result<Vec<f64>> {
        hard_dequantize(indices, self.centers())
    }

    /// Soft reconstruction `P mu` without recording gradients.
    pub fn soft_quantize(&self, x: &[f64]) -> Vec<f64> {
        let p = soft_assign(&similarity(x, self.centers()), self.alpha);
        p.data().chunks_exact(self.bins()).map(|row| row.iter().zip(self.centers()).map(|(a, m)| a * m).sum()).collect()
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if !(2..=MAX_BINS).contains(&bins) {
        return Err(Error::config(format!("bin count {bins} outside 2..={MAX_BINS}")));
    }
    Ok(())
}

/// `S[i, j] = -|x_i - mu_j|`, shape `[N, J]`.
pub fn similarity(x: &[f64], centers: &[f64]) -> Tensor {
    autodiff::similarity_matrix(x, centers)
}

/// Row-stochastic `softmax(alpha S)`.
pub fn soft_assign(s: &Tensor, alpha: f64) -> Tensor {
    let j = s.shape()[1];
    let mut data: Vec<f64> = s.data().iter().map(|v| v * alpha).collect();
    for row in data.chunks_exact_mut(j) {
        autodiff::softmax_in_place(row);
    }
    Tensor::new(s.shape().to_vec(), data).unwrap()
}

/// Nearest-center index per value; exact ties go to the lower index.
pub fn hard_assign(x: &[f64], centers: &[f64]) -> Vec<u8> {
    x.iter()
        .map(|&v| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &m) in centers.iter().enumerate() {
                let d = (v - m).abs();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best as u8
        })
        .collect()
}

pub fn hard_dequantize(indices: &[u8], centers: &[f64]) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            centers
                .get(usize::from(i))
                .copied()
                .ok_or_else(|| Error::corrupt(format!("code index {i} outside codebook of {}", centers.len())))
        })
        .collect()
}

/// Estimated bin usage and its entropy in bits.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub usage: Vec<f64>,
    pub bits: f64,
}

impl EntropyEstimate {
    pub fn from_usage(usage: Vec<f64>) -> Self {
        let bits = autodiff::entropy_bits(&usage);
        EntropyEstimate { usage, bits }
    }

    /// Empirical estimate from a hard-assignment histogram.
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let usage = counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect();
        Self::from_usage(usage)
    }
}

/// Usage `p_j = mean_i P[i, j]` over the rows of a soft-assignment batch.
pub fn estimate_entropy(assignments: &Tensor) -> EntropyEstimate {
    let j = assignments.shape()[1];
    let n = assignments.shape()[0].max(1) as f64;
    let mut usage = vec![0.0; j];
    for row in assignments.data().chunks_exact(j) {
        for (u, p) in usage.iter_mut().zip(row) {
            *u += p;
        }
    }
    usage.iter_mut().for_each(|u| *u /= n);
    EntropyEstimate::from_usage(usage)
}

/// Histogram of hard indices over `bins` symbols.
pub fn histogram(indices: &[u8], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &i in indices {
        if let Some(c) = counts.get_mut(usize::from(i)) {
            *c += 1;
        }
    }
    counts
}

/// Differentiable soft quantization recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct SoftPath {
    /// `P mu`, shaped like the input.
    pub quantized: Var,
    /// Soft assignments `P`, `[N, J]`.
    pub assignment: Var,
    /// Column means of `P`, `[J]`.
    pub usage: Var,
    /// Entropy of `usage` in bits.
    pub entropy: Var,
}

pub fn soft_quantize_on(tape: &mut Tape, x: Var, centers: Var, alpha: f64) -> Result<SoftPath> {
    let shape = tape.value(x).shape().to_vec();
    let s = tape.similarity(x, centers);
    let logits = tape.scale(s, alpha);
    let assignment = tape.softmax_rows(logits)?;
    let flat = tape.rows_dot(assignment, centers)?;
    let quantized = tape.reshape(flat, &shape)?;
    let usage = tape.col_mean(assignment)?;
    let entropy = tape.entropy_bits(usage);
    Ok(SoftPath { quantized, assignment, usage, entropy })
}

/// Proportional controller for the entropy weight `lambda`.
///
/// `lambda <- max(0, lambda + gain * (measured - target))`: raised while the
/// measured entropy exceeds the target, lowered otherwise, never negative.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaController {
    lambda: f64,
    target: f64,
    gain: f64,
    history: Vec<f64>,
}

impl LambdaController {
    pub fn new(lambda: f64, target: f64, gain: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("initial lambda must be >= 0, got {lambda}")));
        }
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::config(format!("target entropy must be positive, got {target}")));
        }
        if !(gain >= 0.0 && gain.is_finite()) {
            return Err(Error::config(format!("lambda gain must be >= 0, got {gain}")));
        }
        Ok(LambdaController { lambda, target, gain, history: Vec::new() })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn update(&mut self, measured: f64) -> f64 {
        self.history.push(measured);
        self.lambda = (self.lambda + self.gain * (measured - self.target)).max(0.0);
        self.lambda
    }
}
