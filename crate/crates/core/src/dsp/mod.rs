//! Signal front end: framing, linear prediction and WAV I/O.

pub mod framing;
pub mod lpc;
pub mod wav;

pub use framing::{crossfade_window, frame_signal, overlap_add, FramingConfig};
pub use lpc::{
    analyze_frame, autocorrelation, levinson_durbin, lpc_analysis, lpc_synthesis, synthesize_frame, AnalysisWindow,
    LpcConfig, LpcFrame, LpcSolution, ReflectionQuantizer,
};
pub use wav::{Audio, PcmFormat};
