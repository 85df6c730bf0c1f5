//! Objective evaluation: waveform SNR and measured bitrate per clip.

use log::warn;

use crate::bitstream::{measure_bitrate, BitrateReport};
use crate::codec::{decode_stream, encode_audio};
use crate::dsp::Audio;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::HarpNetModel;

/// Reported for a perfect reconstruction.
pub const SNR_CAP_DB: f64 = 99.0;

/// `10 log10(sum x^2 / sum (x - y)^2)`, capped at [`SNR_CAP_DB`].
/// `None` for a silent reference.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> Option<f64> {
    let signal: f64 = reference.iter().map(|x| x * x).sum();
    if signal == 0.0 {
        return None;
    }
    let noise: f64 = reference.iter().zip(estimate).map(|(x, y)| (x - y).powi(2)).sum();
    if noise == 0.0 {
        return Some(SNR_CAP_DB);
    }
    Some((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipResult {
    pub name: String,
    pub snr_db: f64,
    pub bitrate: BitrateReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub clips: Vec<ClipResult>,
}

impl EvalReport {
    pub fn mean_snr(&self) -> f64 {
        self.clips.iter().map(|c| c.snr_db).sum::<f64>() / self.clips.len() as f64
    }

    pub fn mean_kbps(&self) -> f64 {
        self.clips.iter().map(|c| c.bitrate.total_kbps()).sum::<f64>() / self.clips.len() as f64
    }

    /// Tab-separated table, one row per clip plus a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("clip\tsnr_db\ttotal_kbps\tneural_kbps\tlpc_kbps\toverhead_kbps\n");
        for c in &self.clips {
            let b = &c.bitrate;
            s.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                c.name,
                c.snr_db,
                b.total_kbps(),
                b.neural_kbps(),
                b.lpc_kbps(),
                b.overhead_kbps()
            ));
        }
        let mean = |f: fn(&BitrateReport) -> f64| {
            self.clips.iter().map(|c| f(&c.bitrate)).sum::<f64>() / self.clips.len() as f64
        };
        s.push_str(&format!(
            "mean\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            self.mean_snr(),
            self.mean_kbps(),
            mean(BitrateReport::neural_kbps),
            mean(BitrateReport::lpc_kbps),
            mean(BitrateReport::overhead_kbps)
        ));
        s
    }
}

/// Full hard-quantized pipeline on each clip. Silent clips are skipped.
pub fn evaluate(model: &HarpNetModel, clips: &[(String, Audio)], exec: Exec) -> Result<EvalReport> {
    let results = exec.try_map(clips, |(name, audio)| {
        let stream = encode_audio(model, audio, Exec::Sequential)?;
        let bitrate = measure_bitrate(&stream, audio.duration_secs())?;
        let decoded = decode_stream(model, &stream, Exec::Sequential)?;
        Ok::<_, Error>(snr_db(&audio.samples, &decoded.samples).map(|snr_db| ClipResult {
            name: name.clone(),
            snr_db,
            bitrate,
        }))
    })?;
    let mut out = Vec::new();
    for ((name, _), r) in clips.iter().zip(results) {
        match r {
            Some(c) => out.push(c),
            None => warn!("skipping silent clip {name}"),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("no non-silent clips to evaluate".into()));
    }
    Ok(EvalReport { clips: out })
}

/// Mean test SNR in dB.
pub fn evaluate_snr(model: &HarpNetModel, clips: &[(String, Audio)], exec: Exec) -> Result<f64> {
    evaluate(model, clips, exec).map(|r| r.mean_snr())
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    #[test]
    fn snr_definition() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(snr_db(&x, &x), Some(99.0));
        assert_abs_diff_eq!(snr_db(&x, &vec![0.0; 1000]).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(snr_db(&[0.0; 4], &[1.0; 4]), None);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p_x: f64 = x.iter().map(|v| v * v).sum();
        let p_n: f64 = noise.iter().map(|v| v * v).sum();
        let g = (p_x / 10.0 / p_n).sqrt();
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, n)| a + g * n).collect();
        assert_abs_diff_eq!(snr_db(&x, &y).unwrap(), 10.0, epsilon = 1e-9);
    }
}
