//! Linear prediction: autocorrelation, Levinson-Durbin, analysis and synthesis
//! filters, and reflection-coefficient quantization.
//!
//! Coefficients follow the predictor convention `x[n] ~ sum_i a_i x[n - i]`,
//! so the residual is `e[n] = x[n] - sum_i a_i x[n - i]`.

use crate::error::{Error, Result};

/// Residual amplitude multiplier applied before the neural coder.
pub const DEFAULT_RESIDUAL_SCALE: f64 = 100.0;
pub const DEFAULT_ORDER: usize = 16;
pub const DEFAULT_COEFF_BITS: u8 = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AnalysisWindow {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpcConfig {
    pub order: usize,
    pub coeff_bits: u8,
    pub residual_scale: f64,
    pub window: AnalysisWindow,
}

impl Default for LpcConfig {
    fn default() -> Self {
        LpcConfig {
            order: DEFAULT_ORDER,
            coeff_bits: DEFAULT_COEFF_BITS,
            residual_scale: DEFAULT_RESIDUAL_SCALE,
            window: AnalysisWindow::Rectangular,
        }
    }
}

impl LpcConfig {
    pub fn validate(&self, frame_size: usize) -> Result<()> {
        if !(2..=32).contains(&self.order) {
            return Err(Error::config(format!("lpc order {} outside 2..=32", self.order)));
        }
        if frame_size < self.order + 1 {
            return Err(Error::config(format!("frame size {frame_size} too short for lpc order {}", self.order)));
        }
        if !(1..=16).contains(&self.coeff_bits) {
            return Err(Error::config(format!("coefficient bits {} outside 1..=16", self.coeff_bits)));
        }
        if !(self.residual_scale.is_finite() && self.residual_scale > 0.0) {
            return Err(Error::config("residual scale must be positive"));
        }
        Ok(())
    }
}

/// `r[tau] = sum_n x[n] x[n - tau]` for `tau = 0..=order`.
pub fn autocorrelation(frame: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|lag| if lag >= frame.len() { 0.0 } else { frame[lag..].iter().zip(frame).map(|(a, b)| a * b).sum() })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpcSolution {
    /// Predictor coefficients `a[1..=p]`.
    pub coeffs: Vec<f64>,
    /// Reflection coefficients `k[1..=p]`.
    pub reflection: Vec<f64>,
    /// Final prediction error energy.
    pub error: f64,
    /// Prediction error after each order, starting with `r[0]`.
    pub error_trace: Vec<f64>,
}

/// Solve the Toeplitz normal equations for the predictor of order `r.len() - 1`.
///
/// If the recursion reaches a singular point (error energy exhausted) the
/// remaining reflection coefficients are zero.
pub fn levinson_durbin(r: &[f64]) -> Result<LpcSolution> {
    let order = r.len().saturating_sub(1);
    if r.is_empty() || r[0] <= 0.0 || !r[0].is_finite() {
        return Err(Error::DegenerateFrame);
    }
    let mut a = vec![0.0; order];
    let mut k = vec![0.0; order];
    let mut err = r[0];
    let mut trace = vec![err];
    let floor = r[0] * 1e-12;
    for i in 0..order {
        if err <= floor {
            trace.push(err);
            continue;
        }
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let ki = ((r[i + 1] - acc) / err).clamp(-1.0, 1.0);
        let prev = a.clone();
        for j in 0..i {
            a[j] = prev[j] - ki * prev[i - 1 - j];
        }
        a[i] = ki;
        k[i] = ki;
        err *= 1.0 - ki * ki;
        trace.push(err);
    }
    Ok(LpcSolution { coeffs: a, reflection: k, error: err, error_trace: trace })
}

/// Step-up recursion: reflection coefficients to predictor coefficients.
pub fn reflection_to_coeffs(k: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(k.len());
    for (i, &ki) in k.iter().enumerate() {
        let prev = a.clone();
        for j in 0..i {
            a[j] = prev[j] - ki * prev[i - 1 - j];
        }
        a.push(ki);
    }
    a
}

/// Step-down recursion: predictor coefficients to reflection coefficients.
///
/// Fails with [`Error::UnstableFilter`] when any `|k_i| >= 1`.
pub fn coeffs_to_reflection(a: &[f64]) -> Result<Vec<f64>> {
    let mut cur = a.to_vec();
    let mut k = vec![0.0; a.len()];
    for i in (0..a.len()).rev() {
        let ki = cur[i];
        if ki.is_nan() || ki.abs() >= 1.0 {
            return Err(Error::UnstableFilter { index: i, value: ki });
        }
        k[i] = ki;
        let denom = 1.0 - ki * ki;
        let prev: Vec<f64> = (0..i).map(|j| (cur[j] + ki * cur[i - 1 - j]) / denom).collect();
        cur.truncate(i);
        cur.copy_from_slice(&prev);
    }
    Ok(k)
}

/// FIR prediction-error filter with zero initial state.
pub fn lpc_analysis(frame: &[f64], a: &[f64]) -> Vec<f64> {
    (0..frame.len())
        .map(|n| {
            let pred: f64 = a.iter().enumerate().take(n).map(|(i, &ai)| ai * frame[n - 1 - i]).sum();
            frame[n] - pred
        })
        .collect()
}

/// IIR synthesis filter with zero initial state; inverse of [`lpc_analysis`].
pub fn lpc_synthesis(residual: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    coeffs_to_reflection(a)?;
    let mut out: Vec<f64> = Vec::with_capacity(residual.len());
    for (n, &e) in residual.iter().enumerate() {
        let pred: f64 = a.iter().enumerate().take(n).map(|(i, &ai)| ai * out[n - 1 - i]).sum();
        out.push(e + pred);
    }
    Ok(out)
}

/// Uniform mid-rise quantizer over `(-1, 1)` for reflection coefficients.
///
/// Bin `i` covers `[-1 + i step, -1 + (i + 1) step)` with `step = 2 / 2^bits`
/// and reconstructs to its center, which always lies strictly inside `(-1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReflectionQuantizer {
    bits: u8,
}

impl ReflectionQuantizer {
    pub fn new(bits: u8) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::config(format!("coefficient bits {bits} outside 1..=16")));
        }
        Ok(ReflectionQuantizer { bits })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    pub fn step(&self) -> f64 {
        2.0 / self.levels() as f64
    }

    pub fn quantize(&self, k: &[f64]) -> Vec<u16> {
        let top = self.levels() - 1;
        k.iter()
            .map(|&v| {
                let idx = ((v + 1.0) / self.step()).floor();
                idx.clamp(0.0, top as f64) as u16
            })
            .collect()
    }

    pub fn dequantize(&self, indices: &[u16]) -> Result<Vec<f64>> {
        indices
            .iter()
            .map(|&i| {
                if u32::from(i) >= self.levels() {
                    Err(Error::corrupt(format!("reflection index {i} out of range")))
                } else {
                    Ok(-1.0 + (f64::from(i) + 0.5) * self.step())
                }
            })
            .collect()
    }
}

pub fn scale_residual(residual: &[f64], factor: f64) -> Vec<f64> {
    residual.iter().map(|v| v * factor).collect()
}

pub fn unscale_residual(scaled: &[f64], factor: f64) -> Vec<f64> {
    scaled.iter().map(|v| v / factor).collect()
}

/// One analysed frame: quantized predictor and the scaled residual it leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct LpcFrame {
    /// Predictor coefficients rebuilt from the quantized reflection coefficients.
    pub coeffs: Vec<f64>,
    /// Dequantized reflection coefficients.
    pub reflection: Vec<f64>,
    pub quantized_indices: Vec<u16>,
    /// Residual multiplied by `scale`.
    pub residual: Vec<f64>,
    pub scale: f64,
}

fn hann(frame: &[f64]) -> Vec<f64> {
    let n = frame.len() as f64;
    frame
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n).cos()))
        .collect()
}

/// Closed-loop analysis: the residual is computed with the *quantized*
/// coefficients so a decoder holding only the indices inverts it exactly.
/// Silent frames fall back to all-zero reflection coefficients.
pub fn analyze_frame(frame: &[f64], cfg: &LpcConfig) -> Result<LpcFrame> {
    let windowed;
    let source = match cfg.window {
        AnalysisWindow::Rectangular => frame,
        AnalysisWindow::Hann => {
            windowed = hann(frame);
            &windowed
        }
    };
    let r = autocorrelation(source, cfg.order);
    let k = match levinson_durbin(&r) {
        Ok(sol) => sol.reflection,
        Err(Error::DegenerateFrame) => vec![0.0; cfg.order],
        Err(e) => return Err(e),
    };
    let quantizer = ReflectionQuantizer::new(cfg.coeff_bits)?;
    let indices = quantizer.quantize(&k);
    let reflection = quantizer.dequantize(&indices)?;
    let coeffs = reflection_to_coeffs(&reflection);
    let residual = scale_residual(&lpc_analysis(frame, &coeffs), cfg.residual_scale);
    Ok(LpcFrame { coeffs, reflection, quantized_indices: indices, residual, scale: cfg.residual_scale })
}

/// Inverse of [`analyze_frame`] given the transmitted indices and a (possibly
/// lossy) scaled residual.
pub fn synthesize_frame(indices: &[u16], scaled_residual: &[f64], cfg: &LpcConfig) -> Result<Vec<f64>> {
    let quantizer = ReflectionQuantizer::new(cfg.coeff_bits)?;
    let coeffs = reflection_to_coeffs(&quantizer.dequantize(indices)?);
    lpc_synthesis(&unscale_residual(scaled_residual, cfg.residual_scale), &coeffs)
}
