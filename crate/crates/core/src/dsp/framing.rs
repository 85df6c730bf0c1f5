//! Fixed-size framing and cross-faded overlap-add.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FramingConfig {
    pub frame_size: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
}

impl FramingConfig {
    pub fn new(frame_size: usize, hop_size: usize, sample_rate: u32) -> Result<Self> {
        let cfg = FramingConfig { frame_size, hop_size, sample_rate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_size == 0 {
            return Err(Error::config("hop_size must be at least 1"));
        }
        if self.hop_size > self.frame_size {
            return Err(Error::config(format!("hop_size {} exceeds frame_size {}", self.hop_size, self.frame_size)));
        }
        Ok(())
    }

    /// Number of frames needed to cover `len` samples (at least one).
    pub fn frame_count(&self, len: usize) -> usize {
        let tail = len.saturating_sub(self.frame_size);
        tail.div_ceil(self.hop_size) + 1
    }

    /// Samples spanned by `frames` frames.
    pub fn covered_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_size + self.frame_size
        }
    }
}

/// Split `signal` into frames of `frame_size` at stride `hop_size`, zero-padding the tail.
pub fn frame_signal(signal: &[f64], cfg: &FramingConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(Error::config("cannot frame an empty signal"));
    }
    let n = cfg.frame_count(signal.len());
    let frames = (0..n)
        .map(|f| {
            let start = f * cfg.hop_size;
            let mut frame = vec![0.0; cfg.frame_size];
            if start < signal.len() {
                let end = (start + cfg.frame_size).min(signal.len());
                frame[..end - start].copy_from_slice(&signal[start..end]);
            }
            frame
        })
        .collect();
    Ok(frames)
}

/// Strictly positive triangular cross-fade window.
///
/// At 50% overlap adjacent windows sum to exactly one; other geometries are
/// handled by normalizing with the accumulated window weight.
pub fn crossfade_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 - ((2 * i + 1) as f64 / n as f64 - 1.0).abs()).collect()
}

/// Weighted overlap-add of `frames`, truncated to `len` samples.
pub fn overlap_add(frames: &[Vec<f64>], cfg: &FramingConfig, len: usize) -> Vec<f64> {
    let window = crossfade_window(cfg.frame_size);
    let total = cfg.covered_len(frames.len()).max(len);
    let mut out = vec![0.0; total];
    let mut weight = vec![0.0; total];
    for (f, frame) in frames.iter().enumerate() {
        let start = f * cfg.hop_size;
        for ((o, w), (&s, &win)) in out[start..].iter_mut().zip(&mut weight[start..]).zip(frame.iter().zip(&window)) {
            *o += win * s;
            *w += win;
        }
    }
    for (o, &w) in out.iter_mut().zip(&weight) {
        if w > 0.0 {
            *o /= w;
        }
    }
    out.truncate(len);
    out
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn ten_samples_frame_four_hop_four() {
        let sig: Vec<f64> = (1..=10).map(f64::from).collect();
        let cfg = FramingConfig::new(4, 4, 16_000).unwrap();
        let frames = frame_signal(&sig, &cfg).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[2], vec![9.0, 10.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_fit_is_single_frame() {
        let sig = vec![0.5, -0.25, 1.0, 2.0];
        let cfg = FramingConfig::new(4, 4, 16_000).unwrap();
        assert_eq!(frame_signal(&sig, &cfg).unwrap(), vec![sig]);
    }

    #[test]
    fn zero_hop_rejected() {
        let cfg = FramingConfig { frame_size: 4, hop_size: 0, sample_rate: 8000 };
        assert!(matches!(frame_signal(&[1.0], &cfg), Err(Error::Config(_))));
        assert!(FramingConfig::new(4, 5, 8000).is_err());
    }

    #[test]
    fn half_overlap_windows_sum_to_one() {
        let w = crossfade_window(8);
        for i in 0..4 {
            assert!((w[i] + w[i + 4] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn overlap_add_round_trip_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (frame, hop) in [(1024, 512), (256, 32), (64, 64), (100, 37)] {
            let sig: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cfg = FramingConfig::new(frame, hop, 16_000).unwrap();
            let frames = frame_signal(&sig, &cfg).unwrap();
            let out = overlap_add(&frames, &cfg, sig.len());
            let rms = (out.iter().zip(&sig).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sig.len() as f64).sqrt();
            assert!(rms < 1e-10, "frame {frame} hop {hop}: rms {rms}");
        }
    }
}
