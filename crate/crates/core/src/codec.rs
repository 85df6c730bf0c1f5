//! End-to-end pipeline: framing, LPC, neural codes, Huffman, `.hrp` stream.

use crate::bitstream::{
    build_codebook_from_counts, BitReader, EncodedStream, FrameRecord, HuffmanCodebook, LayerTable, Payload,
    StreamHeader,
};
use crate::dsp::{analyze_frame, frame_signal, overlap_add, synthesize_frame, Audio, FramingConfig, LpcFrame};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{HarpNetModel, LayerCodes};
use crate::quant::histogram;

pub fn framing(model: &HarpNetModel, sample_rate: u32) -> FramingConfig {
    FramingConfig { frame_size: model.config.frame_size, hop_size: model.config.hop_size, sample_rate }
}

/// Frame `signal` and run closed-loop LPC analysis on every frame.
pub fn analyze_signal(model: &HarpNetModel, signal: &[f64], sample_rate: u32, exec: Exec) -> Result<Vec<LpcFrame>> {
    let frames = frame_signal(signal, &framing(model, sample_rate))?;
    exec.try_map(&frames, |f| analyze_frame(f, &model.config.lpc))
}

/// Deployment codebooks from hard-assignment histograms of `codes`.
///
/// Every layer gets a table even if its histogram is empty (uniform fallback).
pub fn codebooks_from_codes(model: &HarpNetModel, codes: &[LayerCodes]) -> Result<Vec<HuffmanCodebook>> {
    let bins = model.config.bins;
    (0..model.code_layers())
        .map(|m| {
            let mut counts = vec![0u64; bins];
            for c in codes {
                for (acc, n) in counts.iter_mut().zip(histogram(&c.layers[m], bins)) {
                    *acc += n;
                }
            }
            if counts.iter().all(|&n| n == 0) {
                counts.fill(1);
            }
            build_codebook_from_counts(&counts)
        })
        .collect()
}

/// Encode mono audio into a self-contained stream.
///
/// Huffman tables come from the model when it carries them, otherwise from
/// the signal's own code histograms.
pub fn encode_audio(model: &HarpNetModel, audio: &Audio, exec: Exec) -> Result<EncodedStream> {
    if audio.samples.is_empty() {
        return Err(Error::config("cannot encode an empty signal"));
    }
    let lpc = analyze_signal(model, &audio.samples, audio.sample_rate, exec)?;
    let codes = exec.try_map(&lpc, |f| model.encode(&f.residual))?;
    let books = match &model.codebooks {
        Some(b) => b.clone(),
        None => codebooks_from_codes(model, &codes)?,
    };
    let frames = exec.try_map(&lpc.iter().zip(&codes).collect::<Vec<_>>(), |(f, c)| {
        let payloads = c
            .layers
            .iter()
            .zip(&books)
            .map(|(idx, book)| {
                let (bytes, bits) = book.encode_to_vec(idx)?;
                let bit_len = u32::try_from(bits).map_err(|_| Error::corrupt("payload exceeds 4 GiB"))?;
                Ok(Payload { bit_len, bytes })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>(FrameRecord { lpc_indices: f.quantized_indices.clone(), payloads })
    })?;
    let c = &model.config;
    let header = StreamHeader {
        sample_rate: audio.sample_rate,
        num_samples: audio.samples.len() as u64,
        frame_size: c.frame_size as u32,
        hop_size: c.hop_size as u32,
        lpc_order: c.lpc.order as u8,
        lpc_bits: c.lpc.coeff_bits,
        residual_scale: c.lpc.residual_scale,
        skip_aes: c.skip_aes as u8,
        bins: c.bins as u8,
        layers: model
            .quantizers()
            .iter()
            .zip(books)
            .map(|(q, codebook)| LayerTable { centers: q.centers().to_vec(), codebook })
            .collect(),
    };
    Ok(EncodedStream { header, frames })
}

/// Reject streams whose layout the model cannot decode.
pub fn check_compatible(model: &HarpNetModel, h: &StreamHeader) -> Result<()> {
    let c = &model.config;
    let mismatches: Vec<String> = [
        ("skip autoencoders", usize::from(h.skip_aes), c.skip_aes),
        ("bins", usize::from(h.bins), c.bins),
        ("frame size", h.frame_size as usize, c.frame_size),
        ("hop size", h.hop_size as usize, c.hop_size),
        ("lpc order", usize::from(h.lpc_order), c.lpc.order),
        ("lpc bits", usize::from(h.lpc_bits), usize::from(c.lpc.coeff_bits)),
    ]
    .iter()
    .filter(|(_, s, m)| s != m)
    .map(|(what, s, m)| format!("{what}: stream {s}, model {m}"))
    .collect();
    if !mismatches.is_empty() {
        return Err(Error::ModelMismatch(mismatches.join("; ")));
    }
    if h.residual_scale.to_bits() != c.lpc.residual_scale.to_bits() {
        return Err(Error::ModelMismatch(format!(
            "residual scale: stream {}, model {}",
            h.residual_scale, c.lpc.residual_scale
        )));
    }
    Ok(())
}

/// Huffman-decode one frame's code layers.
pub fn decode_codes(header: &StreamHeader, frame: &FrameRecord) -> Result<LayerCodes> {
    let n = header.frame_size as usize;
    let layers = frame
        .payloads
        .iter()
        .zip(&header.layers)
        .map(|(p, t)| {
            let mut r = BitReader::new(&p.bytes, u64::from(p.bit_len))?;
            let idx = t.codebook.decode(&mut r, n)?;
            if r.remaining() != 0 {
                return Err(Error::corrupt(format!("{} unused payload bits", r.remaining())));
            }
            Ok(idx)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerCodes { layers })
}

pub fn decode_stream(model: &HarpNetModel, stream: &EncodedStream, exec: Exec) -> Result<Audio> {
    let h = &stream.header;
    check_compatible(model, h)?;
    let len = usize::try_from(h.num_samples).map_err(|_| Error::corrupt("sample count overflows"))?;
    let cfg =
        FramingConfig { frame_size: h.frame_size as usize, hop_size: h.hop_size as usize, sample_rate: h.sample_rate };
    if len > 0 && stream.frames.len() != cfg.frame_count(len) {
        return Err(Error::corrupt(format!(
            "{} frames for {len} samples, expected {}",
            stream.frames.len(),
            cfg.frame_count(len)
        )));
    }
    let centers: Vec<Vec<f64>> = h.layers.iter().map(|t| t.centers.clone()).collect();
    let frames = exec.try_map(&stream.frames, |f| {
        let codes = decode_codes(h, f)?;
        let residual = model.decode_with_centers(&codes, &centers)?;
        synthesize_frame(&f.lpc_indices, &residual, &model.config.lpc)
    })?;
    Ok(Audio { samples: overlap_add(&frames, &cfg, len), sample_rate: h.sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::{measure_bitrate, read_stream, write_stream};
    use crate::model::ModelConfig;

    fn audio(n: usize) -> Audio {
        let samples = (0..n).map(|i| 0.5 * (i as f64 * 0.05).sin() + 0.1 * (i as f64 * 0.31).cos()).collect();
        Audio { samples, sample_rate: 16_000 }
    }

    fn model(m: usize) -> HarpNetModel {
        let cfg = ModelConfig { frame_size: 256, hop_size: 128, ..ModelConfig::toy(m) };
        HarpNetModel::new(cfg, 2).unwrap()
    }

    #[test]
    fn round_trip_preserves_duration_and_is_deterministic() {
        let m = model(2);
        let a = audio(1000);
        let s1 = write_stream(&encode_audio(&m, &a, Exec::Parallel).unwrap()).unwrap();
        let s2 = write_stream(&encode_audio(&m, &a, Exec::Sequential).unwrap()).unwrap();
        assert_eq!(s1, s2);
        let stream = read_stream(&s1).unwrap();
        let d1 = decode_stream(&m, &stream, Exec::Parallel).unwrap();
        let d2 = decode_stream(&m, &stream, Exec::Sequential).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.samples.len(), 1000);
        assert_eq!(d1.sample_rate, 16_000);
        assert!(d1.samples.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn silence_encodes_at_minimum_rate() {
        let m = model(1);
        let a = Audio { samples: vec![0.0; 16_000], sample_rate: 16_000 };
        let stream = encode_audio(&m, &a, Exec::Parallel).unwrap();
        let rate = measure_bitrate(&stream, 1.0).unwrap();
        // One symbol per layer -> one bit per coded sample.
        let coded = stream.frames.len() as u64 * 256 * 2;
        assert_eq!(rate.neural_bits, coded);
        let back = decode_stream(&m, &stream, Exec::Parallel).unwrap();
        assert_eq!(back.samples.len(), 16_000);
    }

    #[test]
    fn mismatched_model_rejected() {
        let stream = encode_audio(&model(2), &audio(600), Exec::Sequential).unwrap();
        assert!(matches!(decode_stream(&model(1), &stream, Exec::Sequential), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn model_codebooks_are_used_and_echoed() {
        let mut m = model(0);
        let a = audio(800);
        let lpc = analyze_signal(&m, &a.samples, 16_000, Exec::Sequential).unwrap();
        let codes: Vec<_> = lpc.iter().map(|f| m.encode(&f.residual).unwrap()).collect();
        let books = codebooks_from_codes(&m, &codes).unwrap();
        m.codebooks = Some(books.clone());
        let stream = encode_audio(&m, &a, Exec::Sequential).unwrap();
        assert_eq!(stream.header.layers[0].codebook, books[0]);
    }
}
