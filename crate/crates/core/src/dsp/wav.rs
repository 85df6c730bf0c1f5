//! Mono WAV input and output (16-bit integer and 32-bit float PCM).

use std::io::{Cursor, Read, Seek};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PcmFormat {
    Int16,
    #[default]
    Float32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

pub fn read_wav(path: impl AsRef<Path>, downmix: bool) -> Result<Audio> {
    let reader = WavReader::open(path)?;
    decode_reader(reader, downmix)
}

pub fn read_wav_bytes(bytes: &[u8], downmix: bool) -> Result<Audio> {
    decode_reader(WavReader::new(Cursor::new(bytes))?, downmix)
}

fn decode_reader<R: Read>(mut reader: WavReader<R>, downmix: bool) -> Result<Audio> {
    let fmt = reader.spec();
    let channels = usize::from(fmt.channels);
    if channels != 1 && !downmix {
        return Err(Error::UnsupportedFormat(format!(
            "{channels}-channel input; only mono is supported (use downmix)"
        )));
    }
    let interleaved: Vec<f64> = match (fmt.sample_format, fmt.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
        (SampleFormat::Int, bits @ 8..=32) => {
            let norm = (1u64 << (bits - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| f64::from(v) / norm)).collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(channels).map(|c| c.iter().sum::<f64>() / channels as f64).collect()
    };
    Ok(Audio { samples, sample_rate: fmt.sample_rate })
}

/// Serialize mono audio to an in-memory WAV file.
pub fn encode_wav(audio: &Audio, format: PcmFormat) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    write_to(&mut cursor, audio, format)?;
    Ok(cursor.into_inner())
}

fn write_to<W: std::io::Write + Seek>(w: &mut W, audio: &Audio, format: PcmFormat) -> Result<()> {
    let header = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: match format {
            PcmFormat::Int16 => 16,
            PcmFormat::Float32 => 32,
        },
        sample_format: match format {
            PcmFormat::Int16 => SampleFormat::Int,
            PcmFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::new(w, header)?;
    for &s in &audio.samples {
        match format {
            PcmFormat::Int16 => writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
            PcmFormat::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let audio = Audio { samples: vec![0.0, 0.5, -0.25, 0.125], sample_rate: 22_050 };
        let bytes = encode_wav(&audio, PcmFormat::Float32).unwrap();
        assert_eq!(read_wav_bytes(&bytes, false).unwrap(), audio);
    }

    #[test]
    fn int16_round_trip_within_quantization() {
        let audio = Audio { samples: vec![0.0, 0.5, -0.5, 0.999], sample_rate: 8000 };
        let back = read_wav_bytes(&encode_wav(&audio, PcmFormat::Int16).unwrap(), false).unwrap();
        assert_eq!(back.sample_rate, 8000);
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn stereo_requires_downmix() {
        let header = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut cursor, header).unwrap();
            for s in [16384i16, 0, -16384, -16384] {
                w.write_sample(s).unwrap();
            }
            w.finalize().unwrap();
        }
        let bytes = cursor.into_inner();
        assert!(matches!(read_wav_bytes(&bytes, false), Err(Error::UnsupportedFormat(_))));
        let mono = read_wav_bytes(&bytes, true).unwrap();
        assert_eq!(mono.samples, vec![0.25, -0.5]);
    }
}
