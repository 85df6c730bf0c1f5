//! MSB-first bit packing.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Write the low `n` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 64);
        for shift in (0..n).rev() {
            let bit = ((value >> shift) & 1) as u8;
            let offset = (self.bits % 8) as u8;
            if offset == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
            }
            self.bits += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    /// Bytes written so far; the final byte is zero-padded.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reads at most `limit` bits from a byte slice.
#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
    limit: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8], limit: u64) -> Result<Self> {
        if limit > data.len() as u64 * 8 {
            return Err(Error::corrupt(format!("declared {limit} bits but only {} bytes present", data.len())));
        }
        Ok(BitReader { data, pos: 0, limit })
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.pos
    }

    pub fn read_bit(&mut self) -> Result<u8> {
        if self.pos >= self.limit {
            return Err(Error::corrupt("payload truncated"));
        }
        let byte = self.data[(self.pos / 8) as usize];
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, n: u32) -> Result<u64> {
        if u64::from(n) > self.remaining() {
            return Err(Error::corrupt("payload truncated"));
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_layout() {
        let mut w = BitWriter::new();
        w.write_bits(0b101, 3);
        w.write_bits(0b1, 1);
        w.write_bits(0b1_1110_0001, 9);
        assert_eq!(w.bit_len(), 13);
        assert_eq!(w.into_bytes(), vec![0b1011_1111, 0b0000_1000]);
    }

    #[test]
    fn reader_respects_limit() {
        let bytes = [0b1010_0000];
        let mut r = BitReader::new(&bytes, 3).unwrap();
        assert_eq!(r.read_bits(3).unwrap(), 0b101);
        assert!(matches!(r.read_bit(), Err(Error::CorruptStream(_))));
        assert!(BitReader::new(&bytes, 9).is_err());
    }
}
