//! Lossless back end: bit packing, canonical Huffman codes and the `.hrp` file format.

pub mod bits;
pub mod huffman;
pub mod stream;

pub use bits::{BitReader, BitWriter};
pub use huffman::{build_codebook, build_codebook_from_counts, HuffmanCodebook};
pub use stream::{
    measure_bitrate, read_stream, write_stream, BitrateReport, EncodedStream, FrameRecord, LayerTable, Payload,
    StreamHeader,
};
