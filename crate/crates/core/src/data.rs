//! Datasets: seeded synthetic clips and WAV directories.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::analyze_signal;
use crate::dsp::wav::read_wav;
use crate::dsp::Audio;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::HarpNetModel;

pub const TOY_SAMPLE_RATE: u32 = 16_000;

fn sines(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..=3))
        .map(|_| (rng.gen_range(80.0..2000.0), rng.gen_range(0.2..1.0), rng.gen_range(0.0..TAU)))
        .collect();
    (0..n).map(|i| parts.iter().map(|(f, a, p)| a * (TAU * f * i as f64 / sr + p).sin()).sum()).collect()
}

fn sawtooth_sweep(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let (f0, f1) = (rng.gen_range(60.0..400.0), rng.gen_range(200.0..1200.0));
    let mut phase = rng.gen_range(0.0..1.0);
    (0..n)
        .map(|i| {
            let f = f0 + (f1 - f0) * i as f64 / n as f64;
            phase = (phase + f / sr).fract();
            2.0 * phase - 1.0
        })
        .collect()
}

/// White noise through a random one-pole low-pass or resonant two-pole filter.
fn filtered_noise(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let resonant = rng.gen_bool(0.5);
    let (mut y1, mut y2) = (0.0, 0.0);
    let pole = rng.gen_range(0.8..0.98);
    let theta = TAU * rng.gen_range(200.0..3000.0) / sr;
    (0..n)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            let y = if resonant {
                w * (1.0 - pole) + 2.0 * pole * theta.cos() * y1 - pole * pole * y2
            } else {
                w * (1.0 - pole) + pole * y1
            };
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// One synthetic clip: a random mixture of tones, sweeps and coloured noise,
/// normalized to a peak of 0.5.
pub fn toy_clip(rng: &mut ChaCha8Rng, samples: usize, sample_rate: u32) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let mut out = vec![0.0; samples];
    let kinds = rng.gen_range(1u8..8);
    for (bit, gen) in [sines, sawtooth_sweep, filtered_noise].iter().enumerate() {
        if kinds & (1 << bit) != 0 {
            let gain = rng.gen_range(0.3..1.0);
            for (o, v) in out.iter_mut().zip(gen(rng, samples, sr)) {
                *o += gain * v;
            }
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

pub fn toy_dataset(seed: u64, clips: usize, seconds: f64, sample_rate: u32) -> Vec<(String, Audio)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * f64::from(sample_rate)).round() as usize;
    (0..clips)
        .map(|i| (format!("toy_{i:03}"), Audio { samples: toy_clip(&mut rng, n, sample_rate), sample_rate }))
        .collect()
}

/// Every `.wav` in `dir`, sorted by file name.
pub fn load_wav_dir(dir: impl AsRef<Path>, downmix: bool) -> Result<Vec<(String, Audio)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!("no .wav files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            Ok((name, read_wav(p, downmix)?))
        })
        .collect()
}

/// Scaled LPC residual frames of every clip, in clip then frame order.
pub fn residual_frames(model: &HarpNetModel, clips: &[(String, Audio)], exec: Exec) -> Result<Vec<Vec<f64>>> {
    let per_clip = exec.try_map(clips, |(_, a)| analyze_signal(model, &a.samples, a.sample_rate, Exec::Sequential))?;
    let frames: Vec<Vec<f64>> = per_clip.into_iter().flatten().map(|f| f.residual).collect();
    if frames.is_empty() {
        return Err(Error::EmptyDataset("no training frames".into()));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_data_is_seeded_and_bounded() {
        let a = toy_dataset(7, 4, 0.25, TOY_SAMPLE_RATE);
        assert_eq!(a, toy_dataset(7, 4, 0.25, TOY_SAMPLE_RATE));
        assert_ne!(a, toy_dataset(8, 4, 0.25, TOY_SAMPLE_RATE));
        for (_, clip) in &a {
            assert_eq!(clip.samples.len(), 4000);
            let peak = clip.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_wav_dir(dir.path(), false), Err(Error::EmptyDataset(_))));
    }
}
