//! Model file: magic `HARP`, u16 version, config block, alphas, parameter
//! tensors in canonical order (u8 rank, u32 dims, f64 data), optional Huffman
//! tables, CRC32 over every byte after the magic. Little-endian throughout.

use std::path::Path;

use super::{HarpNetModel, ModelConfig};
use crate::bitstream::HuffmanCodebook;
use crate::dsp::{AnalysisWindow, LpcConfig};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"HARP";
pub const MODEL_VERSION: u16 = 1;

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::ModelMismatch("model file truncated".into()));
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn small(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::config(format!("{what} {v} too large for the model format")))
}

pub fn write_model(model: &HarpNetModel) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for (v, what) in [
        (c.enc_layers, "encoder depth"),
        (c.filters, "filter count"),
        (c.kernel, "kernel size"),
        (c.skip_aes, "skip count"),
        (c.skip_hidden, "skip depth"),
        (c.skip_filters, "skip filter count"),
        (c.bins, "bin count"),
    ] {
        out.extend_from_slice(&small(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&c.leaky_slope.to_le_bytes());
    out.extend_from_slice(&(c.frame_size as u32).to_le_bytes());
    out.extend_from_slice(&(c.hop_size as u32).to_le_bytes());
    out.push(c.lpc.order as u8);
    out.push(c.lpc.coeff_bits);
    out.extend_from_slice(&c.lpc.residual_scale.to_le_bytes());
    out.push(match c.lpc.window {
        AnalysisWindow::Rectangular => 0,
        AnalysisWindow::Hann => 1,
    });
    for q in model.quantizers() {
        out.extend_from_slice(&q.alpha().to_le_bytes());
    }
    let params = model.parameters();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for t in params {
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &model.codebooks {
        None => out.push(0),
        Some(books) => {
            out.push(1);
            for b in books {
                out.extend_from_slice(&b.to_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn read_model(bytes: &[u8]) -> Result<HarpNetModel> {
    if bytes.len() < 10 {
        return Err(Error::ModelMismatch("model file truncated".into()));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: MODEL_MAGIC, found });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(&body[4..]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { data: body, pos: 4 };
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch { expected: MODEL_VERSION, found: version });
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = usize::from(r.u16()?);
    }
    let [enc_layers, filters, kernel, skip_aes, skip_hidden, skip_filters, bins] = dims;
    let leaky_slope = r.f64()?;
    let frame_size = r.u32()? as usize;
    let hop_size = r.u32()? as usize;
    let order = usize::from(r.u8()?);
    let coeff_bits = r.u8()?;
    let residual_scale = r.f64()?;
    let window = match r.u8()? {
        0 => AnalysisWindow::Rectangular,
        1 => AnalysisWindow::Hann,
        w => return Err(Error::ModelMismatch(format!("unknown analysis window {w}"))),
    };
    let config = ModelConfig {
        enc_layers,
        filters,
        kernel,
        skip_aes,
        skip_hidden,
        skip_filters,
        bins,
        leaky_slope,
        frame_size,
        hop_size,
        lpc: LpcConfig { order, coeff_bits, residual_scale, window },
    };
    let mut model = HarpNetModel::new(config, 0)?;
    for q in model.quantizers_mut() {
        q.set_alpha(r.f64()?)?;
    }
    let count = r.u32()? as usize;
    let mut params = model.parameters_mut();
    if count != params.len() {
        return Err(Error::ModelMismatch(format!("{count} tensors stored, topology needs {}", params.len())));
    }
    for (i, t) in params.iter_mut().enumerate() {
        let rank = usize::from(r.u8()?);
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != t.shape() {
            return Err(Error::ModelMismatch(format!("tensor {i} has shape {shape:?}, expected {:?}", t.shape())));
        }
        for v in t.data_mut() {
            *v = r.f64()?;
        }
    }
    drop(params);
    model.codebooks = match r.u8()? {
        0 => None,
        1 => Some(
            (0..model.code_layers())
                .map(|_| HuffmanCodebook::from_bytes(r.take(bins + 1)?))
                .collect::<Result<Vec<_>>>()?,
        ),
        f => return Err(Error::ModelMismatch(format!("unknown codebook flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(Error::ModelMismatch("trailing bytes in model file".into()));
    }
    Ok(model)
}

pub fn save_model(model: &HarpNetModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HarpNetModel> {
    read_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::build_codebook_from_counts;

    #[test]
    fn round_trip_with_and_without_codebooks() {
        let mut m = HarpNetModel::new(ModelConfig::toy(2), 17).unwrap();
        m.set_alpha(7.5).unwrap();
        let bytes = write_model(&m).unwrap();
        assert_eq!(&bytes[..4], b"HARP");
        assert_eq!(read_model(&bytes).unwrap(), m);

        let counts: Vec<u64> = (0..32).map(|j| j % 5).collect();
        m.codebooks = Some(vec![build_codebook_from_counts(&counts).unwrap(); 3]);
        let bytes = write_model(&m).unwrap();
        assert_eq!(read_model(&bytes).unwrap(), m);
        assert_eq!(write_model(&read_model(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let m = HarpNetModel::new(ModelConfig::toy(0), 1).unwrap();
        let bytes = write_model(&m).unwrap();
        let mut bad = bytes.clone();
        bad[100] ^= 4;
        assert!(matches!(read_model(&bad), Err(Error::ChecksumMismatch { .. })));
        let mut magic = bytes.clone();
        magic[1] = b'X';
        assert!(matches!(read_model(&magic), Err(Error::BadMagic { .. })));
        assert!(read_model(&bytes[..bytes.len() - 9]).is_err());
    }
}
