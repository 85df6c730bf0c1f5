//! Canonical Huffman codes over quantizer indices.
//!
//! Symbols with zero frequency are not given codewords of their own. When any
//! exist, a zero-weight escape pseudo-symbol joins the merge, which splits the
//! least probable leaf; an escaped symbol is sent as the escape codeword
//! followed by its rank among the escaped symbols in `ceil(log2 n)` bits.
//! Unseen indices therefore stay decodable while seen ones keep their
//! optimal lengths (up to the single split leaf).

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

/// Longest codeword the decoder accepts.
pub const MAX_CODE_LEN: u8 = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HuffmanCodebook {
    /// Code length per symbol; 0 marks an escaped symbol.
    lengths: Vec<u8>,
    /// Length of the escape codeword, 0 when no symbol is escaped.
    escape_len: u8,
    codes: Vec<u64>,
    escape_code: u64,
    /// Escaped symbols in ascending order.
    escaped: Vec<u8>,
    escape_bits: u32,
    // Canonical decoding tables, indexed by code length.
    first_code: Vec<u64>,
    count: Vec<u64>,
    offset: Vec<usize>,
    /// Symbols in canonical order; `None` is the escape.
    sorted: Vec<Option<u8>>,
}

struct MergeNode {
    weight: f64,
    key: usize,
    leaves: Vec<usize>,
}

/// Optimal prefix code for `freqs` via pairwise merging of the two lightest
/// subtrees (ties broken by the smallest symbol index they contain).
pub fn build_codebook(freqs: &[f64]) -> Result<HuffmanCodebook> {
    let j = freqs.len();
    if j == 0 || j > 255 {
        return Err(Error::config(format!("alphabet size {j} outside 1..=255")));
    }
    if freqs.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::config("symbol frequencies must be finite and non-negative"));
    }
    if freqs.iter().all(|&f| f == 0.0) {
        return Err(Error::config("all symbol frequencies are zero"));
    }
    let has_escape = freqs.contains(&0.0);
    // Leaf ids: symbols 0..j, escape = j.
    let mut nodes: Vec<MergeNode> = freqs
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0.0)
        .map(|(s, &f)| MergeNode { weight: f, key: s, leaves: vec![s] })
        .collect();
    if has_escape {
        nodes.push(MergeNode { weight: 0.0, key: j, leaves: vec![j] });
    }
    let mut depth = vec![0u32; j + 1];
    if nodes.len() == 1 {
        depth[nodes[0].key] = 1;
    }
    while nodes.len() > 1 {
        nodes.sort_by(|a, b| a.weight.total_cmp(&b.weight).then(a.key.cmp(&b.key)));
        let a = nodes.remove(0);
        let b = nodes.remove(0);
        for &leaf in a.leaves.iter().chain(&b.leaves) {
            depth[leaf] += 1;
        }
        let mut leaves = a.leaves;
        leaves.extend(b.leaves);
        nodes.push(MergeNode { weight: a.weight + b.weight, key: a.key.min(b.key), leaves });
    }
    if depth.iter().any(|&d| d > u32::from(MAX_CODE_LEN)) {
        return Err(Error::config("code length exceeds the 64-bit limit"));
    }
    let lengths = (0..j).map(|s| if freqs[s] > 0.0 { depth[s] as u8 } else { 0 }).collect();
    let escape_len = if has_escape { depth[j] as u8 } else { 0 };
    HuffmanCodebook::from_lengths(lengths, escape_len)
}

/// [`build_codebook`] from integer counts.
pub fn build_codebook_from_counts(counts: &[u64]) -> Result<HuffmanCodebook> {
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    build_codebook(&freqs)
}

impl HuffmanCodebook {
    /// Rebuild the canonical code from per-symbol lengths.
    pub fn from_lengths(lengths: Vec<u8>, escape_len: u8) -> Result<Self> {
        let escaped: Vec<u8> = lengths.iter().enumerate().filter(|(_, &l)| l == 0).map(|(s, _)| s as u8).collect();
        if escaped.is_empty() != (escape_len == 0) {
            return Err(Error::corrupt("escape length inconsistent with escaped symbols"));
        }
        let mut entries: Vec<(u8, Option<u8>)> =
            lengths.iter().enumerate().filter(|(_, &l)| l > 0).map(|(s, &l)| (l, Some(s as u8))).collect();
        if escape_len > 0 {
            entries.push((escape_len, None));
        }
        if entries.iter().any(|&(l, _)| l > MAX_CODE_LEN) {
            return Err(Error::corrupt("code length exceeds 64 bits"));
        }
        // Kraft: a complete code, or a single 1-bit codeword.
        let kraft: u128 = entries.iter().map(|&(l, _)| 1u128 << (MAX_CODE_LEN - l)).sum();
        let full = 1u128 << MAX_CODE_LEN;
        if !(kraft == full || (entries.len() == 1 && entries[0].0 == 1)) {
            return Err(Error::corrupt("code lengths violate the Kraft equality"));
        }
        // Canonical order: by length, then symbol, escape last within its length.
        entries.sort_by_key(|&(l, s)| (l, s.map_or(256, u16::from)));

        let max_len = usize::from(entries.last().map_or(0, |e| e.0));
        let mut codes = vec![0u64; lengths.len()];
        let mut escape_code = 0;
        let mut first_code = vec![0u64; max_len + 1];
        let mut count = vec![0u64; max_len + 1];
        let mut offset = vec![0usize; max_len + 1];
        let mut code = 0u64;
        let mut prev_len = 0u8;
        for (i, &(l, s)) in entries.iter().enumerate() {
            if l != prev_len {
                code = if i == 0 { 0 } else { code << (l - prev_len) };
                first_code[usize::from(l)] = code;
                offset[usize::from(l)] = i;
                prev_len = l;
            }
            count[usize::from(l)] += 1;
            match s {
                Some(sym) => codes[usize::from(sym)] = code,
                None => escape_code = code,
            }
            code += 1;
        }
        let escape_bits = if escaped.len() > 1 { usize::BITS - (escaped.len() - 1).leading_zeros() } else { 0 };
        Ok(HuffmanCodebook {
            lengths,
            escape_len,
            codes,
            escape_code,
            escaped,
            escape_bits,
            first_code,
            count,
            offset,
            sorted: entries.iter().map(|&(_, s)| s).collect(),
        })
    }

    pub fn symbols(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    pub fn escape_len(&self) -> u8 {
        self.escape_len
    }

    pub fn has_escape(&self) -> bool {
        self.escape_len > 0
    }

    /// Total bits spent on `symbol`, including any escape suffix.
    pub fn code_len(&self, symbol: u8) -> u32 {
        match self.lengths.get(usize::from(symbol)) {
            Some(&0) => u32::from(self.escape_len) + self.escape_bits,
            Some(&l) => u32::from(l),
            None => 0,
        }
    }

    pub fn expected_length(&self, probs: &[f64]) -> f64 {
        probs.iter().enumerate().map(|(s, p)| p * f64::from(self.code_len(s as u8))).sum()
    }

    pub fn encode(&self, symbols: &[u8], writer: &mut BitWriter) -> Result<()> {
        for &s in symbols {
            let sym = usize::from(s);
            match self.lengths.get(sym) {
                None => return Err(Error::corrupt(format!("symbol {s} outside alphabet of {}", self.symbols()))),
                Some(&0) => {
                    writer.write_bits(self.escape_code, u32::from(self.escape_len));
                    let rank = self.escaped.binary_search(&s).expect("escaped symbol") as u64;
                    writer.write_bits(rank, self.escape_bits);
                }
                Some(&l) => writer.write_bits(self.codes[sym], u32::from(l)),
            }
        }
        Ok(())
    }

    /// Encode into a fresh buffer; returns `(bytes, bit_len)`.
    pub fn encode_to_vec(&self, symbols: &[u8]) -> Result<(Vec<u8>, u64)> {
        let mut w = BitWriter::new();
        self.encode(symbols, &mut w)?;
        let bits = w.bit_len();
        Ok((w.into_bytes(), bits))
    }

    pub fn decode(&self, reader: &mut BitReader<'_>, n: usize) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.decode_one(reader)?);
        }
        Ok(out)
    }

    fn decode_one(&self, reader: &mut BitReader<'_>) -> Result<u8> {
        let mut code = 0u64;
        for len in 1..self.first_code.len() {
            code = (code << 1) | u64::from(reader.read_bit()?);
            let c = self.count[len];
            if c > 0 && code >= self.first_code[len] && code - self.first_code[len] < c {
                let idx = self.offset[len] + (code - self.first_code[len]) as usize;
                return match self.sorted[idx] {
                    Some(sym) => Ok(sym),
                    None => {
                        let rank = reader.read_bits(self.escape_bits)? as usize;
                        self.escaped.get(rank).copied().ok_or_else(|| Error::corrupt("escape rank out of range"))
                    }
                };
            }
        }
        Err(Error::corrupt("invalid Huffman codeword"))
    }

    /// `J` length bytes followed by the escape length.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.lengths.clone();
        out.push(self.escape_len);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (&escape, lengths) = bytes.split_last().ok_or_else(|| Error::corrupt("empty codebook"))?;
        Self::from_lengths(lengths.to_vec(), escape)
    }
}
