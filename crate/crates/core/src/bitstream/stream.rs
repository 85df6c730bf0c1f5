//! The `.hrp` container.
//!
//! All integers little-endian. Layout:
//!
//! ```text
//! magic            4  b"HRPS"
//! version          u16
//! sample_rate      u32
//! num_samples      u64
//! frame_size       u32
//! hop_size         u32
//! lpc_order        u8
//! lpc_bits         u8
//! residual_scale   f64
//! skip_aes (M)     u8
//! bins (J)         u8
//! M+1 layer tables, main bottleneck first:
//!     centers      J x f64
//!     codebook     J x u8 code lengths (0 = escaped), u8 escape length
//! frame records:
//!     lpc indices  ceil(order * lpc_bits / 8) bytes, MSB-first
//!     M+1 payloads u32 bit length, ceil(bits / 8) bytes, MSB-first
//! frame_count      u32
//! crc32            u32 over every byte after the magic
//! ```

use super::bits::{BitReader, BitWriter};
use super::huffman::HuffmanCodebook;
use crate::error::{Error, Result};

pub const STREAM_MAGIC: [u8; 4] = *b"HRPS";
pub const STREAM_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTable {
    pub centers: Vec<f64>,
    pub codebook: HuffmanCodebook,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub num_samples: u64,
    pub frame_size: u32,
    pub hop_size: u32,
    pub lpc_order: u8,
    pub lpc_bits: u8,
    pub residual_scale: f64,
    pub skip_aes: u8,
    pub bins: u8,
    /// Main bottleneck first, then skip taps nearest the bottleneck outward.
    pub layers: Vec<LayerTable>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    pub bit_len: u32,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub lpc_indices: Vec<u16>,
    pub payloads: Vec<Payload>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedStream {
    pub header: StreamHeader,
    pub frames: Vec<FrameRecord>,
}

impl StreamHeader {
    pub fn code_layers(&self) -> usize {
        usize::from(self.skip_aes) + 1
    }

    fn lpc_bytes(&self) -> usize {
        (usize::from(self.lpc_order) * usize::from(self.lpc_bits)).div_ceil(8)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.len() != self.code_layers() {
            return Err(Error::corrupt(format!(
                "{} layer tables for {} code layers",
                self.layers.len(),
                self.code_layers()
            )));
        }
        for t in &self.layers {
            if t.centers.len() != usize::from(self.bins) || t.codebook.symbols() != usize::from(self.bins) {
                return Err(Error::corrupt("layer table size disagrees with bin count"));
            }
        }
        if self.hop_size == 0 || self.hop_size > self.frame_size {
            return Err(Error::corrupt("invalid frame geometry"));
        }
        if !(1..=16).contains(&self.lpc_bits) {
            return Err(Error::corrupt("invalid lpc coefficient width"));
        }
        Ok(())
    }
}

/// Cursor over a byte slice with little-endian readers.
struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::corrupt("unexpected end of stream"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_stream(stream: &EncodedStream) -> Result<Vec<u8>> {
    let h = &stream.header;
    h.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(&STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&h.sample_rate.to_le_bytes());
    out.extend_from_slice(&h.num_samples.to_le_bytes());
    out.extend_from_slice(&h.frame_size.to_le_bytes());
    out.extend_from_slice(&h.hop_size.to_le_bytes());
    out.extend_from_slice(&[h.lpc_order, h.lpc_bits]);
    out.extend_from_slice(&h.residual_scale.to_le_bytes());
    out.extend_from_slice(&[h.skip_aes, h.bins]);
    for t in &h.layers {
        for c in &t.centers {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&t.codebook.to_bytes());
    }
    for (f, frame) in stream.frames.iter().enumerate() {
        if frame.lpc_indices.len() != usize::from(h.lpc_order) || frame.payloads.len() != h.code_layers() {
            return Err(Error::corrupt(format!("frame {f} does not match the header layout")));
        }
        let mut w = BitWriter::new();
        for &i in &frame.lpc_indices {
            w.write_bits(u64::from(i), u32::from(h.lpc_bits));
        }
        out.extend_from_slice(&w.into_bytes());
        for p in &frame.payloads {
            if p.bytes.len() != (p.bit_len as usize).div_ceil(8) {
                return Err(Error::corrupt(format!("frame {f}: payload size disagrees with bit length")));
            }
            out.extend_from_slice(&p.bit_len.to_le_bytes());
            out.extend_from_slice(&p.bytes);
        }
    }
    let count = u32::try_from(stream.frames.len()).map_err(|_| Error::corrupt("too many frames"))?;
    out.extend_from_slice(&count.to_le_bytes());
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn read_stream(bytes: &[u8]) -> Result<EncodedStream> {
    if bytes.len() < 4 {
        return Err(Error::corrupt("stream shorter than its magic"));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != STREAM_MAGIC {
        return Err(Error::BadMagic { expected: STREAM_MAGIC, found });
    }
    if bytes.len() < 4 + 2 + 8 {
        return Err(Error::corrupt("stream too short"));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&body[4..]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = ByteReader { data: body, pos: 4 };
    let version = r.u16()?;
    if version != STREAM_VERSION {
        return Err(Error::VersionMismatch { expected: STREAM_VERSION, found: version });
    }
    let sample_rate = r.u32()?;
    let num_samples = r.u64()?;
    let frame_size = r.u32()?;
    let hop_size = r.u32()?;
    let lpc_order = r.u8()?;
    let lpc_bits = r.u8()?;
    let residual_scale = r.f64()?;
    let skip_aes = r.u8()?;
    let bins = r.u8()?;
    let mut layers = Vec::with_capacity(usize::from(skip_aes) + 1);
    for _ in 0..=skip_aes {
        let centers = (0..bins).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let codebook = HuffmanCodebook::from_bytes(r.take(usize::from(bins) + 1)?)?;
        layers.push(LayerTable { centers, codebook });
    }
    let header = StreamHeader {
        sample_rate,
        num_samples,
        frame_size,
        hop_size,
        lpc_order,
        lpc_bits,
        residual_scale,
        skip_aes,
        bins,
        layers,
    };
    header.validate()?;

    let count_at = body.len().checked_sub(4).ok_or_else(|| Error::corrupt("missing trailer"))?;
    let frame_count = u32::from_le_bytes(body[count_at..].try_into().unwrap()) as usize;
    let mut frames = Vec::with_capacity(frame_count.min(1 << 16));
    let frame_data = ByteReader { data: &body[..count_at], pos: r.pos };
    let mut r = frame_data;
    for _ in 0..frame_count {
        let lpc = r.take(header.lpc_bytes())?;
        let mut br = BitReader::new(lpc, u64::from(lpc_order) * u64::from(lpc_bits))?;
        let lpc_indices =
            (0..lpc_order).map(|_| br.read_bits(u32::from(lpc_bits)).map(|v| v as u16)).collect::<Result<Vec<_>>>()?;
        let mut payloads = Vec::with_capacity(header.code_layers());
        for _ in 0..header.code_layers() {
            let bit_len = r.u32()?;
            let bytes = r.take((bit_len as usize).div_ceil(8))?.to_vec();
            payloads.push(Payload { bit_len, bytes });
        }
        frames.push(FrameRecord { lpc_indices, payloads });
    }
    if r.pos != count_at {
        return Err(Error::corrupt(format!("{} trailing bytes after frames", count_at - r.pos)));
    }
    Ok(EncodedStream { header, frames })
}

/// Itemized bitrate of an encoded file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitrateReport {
    pub duration_secs: f64,
    /// Huffman payload bits, excluding byte padding.
    pub neural_bits: u64,
    /// Reflection-coefficient side information, including its byte padding.
    pub lpc_bits: u64,
    /// Header, length fields, payload padding and trailer.
    pub overhead_bits: u64,
    pub total_bits: u64,
}

impl BitrateReport {
    fn kbps(&self, bits: u64) -> f64 {
        bits as f64 / self.duration_secs / 1000.0
    }

    pub fn neural_kbps(&self) -> f64 {
        self.kbps(self.neural_bits)
    }

    pub fn lpc_kbps(&self) -> f64 {
        self.kbps(self.lpc_bits)
    }

    pub fn overhead_kbps(&self) -> f64 {
        self.kbps(self.overhead_bits)
    }

    pub fn total_kbps(&self) -> f64 {
        self.kbps(self.total_bits)
    }
}

/// Bitrate of `stream` as serialized, over `duration_secs` of audio.
pub fn measure_bitrate(stream: &EncodedStream, duration_secs: f64) -> Result<BitrateReport> {
    if duration_secs.is_nan() || duration_secs <= 0.0 {
        return Err(Error::config("duration must be positive"));
    }
    let total_bits = write_stream(stream)?.len() as u64 * 8;
    let lpc_per_frame = stream.header.lpc_bytes() as u64 * 8;
    let lpc_bits = lpc_per_frame * stream.frames.len() as u64;
    let neural_bits: u64 = stream.frames.iter().flat_map(|f| &f.payloads).map(|p| u64::from(p.bit_len)).sum();
    Ok(BitrateReport {
        duration_secs,
        neural_bits,
        lpc_bits,
        overhead_bits: total_bits - lpc_bits - neural_bits,
        total_bits,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::bitstream::huffman::build_codebook_from_counts;

    fn header(skip_aes: u8, bins: u8) -> StreamHeader {
        let layers = (0..=skip_aes)
            .map(|l| LayerTable {
                centers: (0..bins).map(|j| f64::from(j) * 0.1 - f64::from(l)).collect(),
                codebook: build_codebook_from_counts(
                    &(0..bins).map(|j| u64::from(j % 3) * 5 + u64::from(l)).collect::<Vec<_>>(),
                )
                .unwrap(),
            })
            .collect();
        StreamHeader {
            sample_rate: 16_000,
            num_samples: 0,
            frame_size: 64,
            hop_size: 32,
            lpc_order: 4,
            lpc_bits: 6,
            residual_scale: 100.0,
            skip_aes,
            bins,
            layers,
        }
    }

    fn frame(h: &StreamHeader, seed: u8) -> FrameRecord {
        FrameRecord {
            lpc_indices: (0..h.lpc_order).map(|i| u16::from(i.wrapping_mul(seed)) % 64).collect(),
            payloads: h
                .layers
                .iter()
                .map(|t| {
                    let syms: Vec<u8> =
                        (0..20u32).map(|i| ((i * 7 + u32::from(seed)) % u32::from(h.bins)) as u8).collect();
                    let (bytes, bits) = t.codebook.encode_to_vec(&syms).unwrap();
                    Payload { bit_len: bits as u32, bytes }
                })
                .collect(),
        }
    }

    #[test]
    fn empty_stream_round_trips() {
        let s = EncodedStream { header: header(0, 4), frames: vec![] };
        let bytes = write_stream(&s).unwrap();
        assert_eq!(read_stream(&bytes).unwrap(), s);
    }

    #[test]
    fn errors_are_distinct() {
        let h = header(2, 8);
        let s = EncodedStream { frames: vec![frame(&h, 3), frame(&h, 5)], header: h };
        let bytes = write_stream(&s).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_stream(&bad), Err(Error::BadMagic { .. })));

        let mut tampered = bytes.clone();
        let n = tampered.len();
        tampered[n - 20] ^= 0x10;
        assert!(matches!(read_stream(&tampered), Err(Error::ChecksumMismatch { .. })));

        let mut future = bytes.clone();
        future[4] = 9;
        let crc = crc32fast::hash(&future[4..future.len() - 4]);
        let n = future.len();
        future[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(read_stream(&future), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn bitrate_arithmetic() {
        let h = header(1, 8);
        let one = EncodedStream { frames: vec![frame(&h, 1)], header: h.clone() };
        let two = EncodedStream { frames: vec![frame(&h, 1), frame(&h, 1)], header: h };
        let a = measure_bitrate(&one, 1.0).unwrap();
        let b = measure_bitrate(&two, 1.0).unwrap();
        assert_eq!(b.neural_bits, 2 * a.neural_bits);
        assert_eq!(a.neural_bits + a.lpc_bits + a.overhead_bits, a.total_bits);
        assert!((a.total_kbps() - a.total_bits as f64 / 1000.0).abs() < 1e-12);
        assert!(measure_bitrate(&one, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn any_stream_round_trips_and_detects_bit_flips(
            m in 0u8..4,
            seeds in prop::collection::vec(any::<u8>(), 0..6),
            flip in any::<prop::sample::Index>(),
            bit in 0u8..8,
        ) {
            let h = header(m, 16);
            let s = EncodedStream { frames: seeds.iter().map(|&sd| frame(&h, sd)).collect(), header: h };
            let bytes = write_stream(&s).unwrap();
            prop_assert_eq!(&read_stream(&bytes).unwrap(), &s);
            prop_assert_eq!(write_stream(&read_stream(&bytes).unwrap()).unwrap(), bytes.clone());

            let mut corrupt = bytes.clone();
            let pos = 4 + flip.index(bytes.len() - 4);
            corrupt[pos] ^= 1 << bit;
            prop_assert!(read_stream(&corrupt).is_err());
        }
    }
}
