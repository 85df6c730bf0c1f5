//! `key = value` run configuration for training.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors that
//! name the key.

use std::path::{Path, PathBuf};

use crate::data::TOY_SAMPLE_RATE;
use crate::dsp::AnalysisWindow;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{RateControl, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Every `.wav` in a directory.
    Dir(PathBuf),
    /// Seeded synthetic clips.
    Toy { clips: usize, seconds: f64, seed: u64, sample_rate: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    /// Neural-code bitrate target in kbps; overrides `target_entropy` when set.
    pub target_kbps: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataSource::Toy { clips: 4, seconds: 1.0, seed: 0, sample_rate: TOY_SAMPLE_RATE },
            target_kbps: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("invalid value {value:?} for key `{key}`")))
}

impl RunConfig {
    /// Parse config text; relative `data_dir` paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let (mut clips, mut seconds, mut toy_seed, mut rate) = (4usize, 1.0f64, 0u64, TOY_SAMPLE_RATE);
        let mut dir = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}: expected `key = value`", n + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            let m = &mut cfg.model;
            let t = &mut cfg.train;
            match key {
                "enc_layers" => m.enc_layers = parse(key, value)?,
                "filters" => m.filters = parse(key, value)?,
                "kernel" => m.kernel = parse(key, value)?,
                "skip_aes" => m.skip_aes = parse(key, value)?,
                "skip_hidden" => m.skip_hidden = parse(key, value)?,
                "skip_filters" => m.skip_filters = parse(key, value)?,
                "bins" => m.bins = parse(key, value)?,
                "leaky_slope" => m.leaky_slope = parse(key, value)?,
                "frame_size" => m.frame_size = parse(key, value)?,
                "hop_size" => m.hop_size = parse(key, value)?,
                "lpc_order" => m.lpc.order = parse(key, value)?,
                "lpc_bits" => m.lpc.coeff_bits = parse(key, value)?,
                "residual_scale" => m.lpc.residual_scale = parse(key, value)?,
                "lpc_window" => {
                    m.lpc.window = match value {
                        "rectangular" => AnalysisWindow::Rectangular,
                        "hann" => AnalysisWindow::Hann,
                        _ => return Err(Error::config(format!("invalid value {value:?} for key `{key}`"))),
                    }
                }
                "warmup_epochs" => t.warmup_epochs = parse(key, value)?,
                "total_epochs" => t.total_epochs = parse(key, value)?,
                "anneal_rate" => t.anneal_rate = parse(key, value)?,
                "alpha_init" => t.alpha_init = parse(key, value)?,
                "target_entropy" => t.target_entropy = parse(key, value)?,
                "target_bitrate" => cfg.target_kbps = Some(parse(key, value)?),
                "rate_control" => {
                    t.rate_control = match value {
                        "total" => RateControl::Total,
                        "per_layer" => RateControl::PerLayer,
                        _ => return Err(Error::config(format!("invalid value {value:?} for key `{key}`"))),
                    }
                }
                "lambda_init" => t.lambda_init = parse(key, value)?,
                "lambda_gain" => t.lambda_gain = parse(key, value)?,
                "batch_size" => t.batch_size = parse(key, value)?,
                "learning_rate" => t.learning_rate = parse(key, value)?,
                "seed" => t.seed = parse(key, value)?,
                "data_dir" => dir = Some(base.join(value)),
                "toy_clips" => clips = parse(key, value)?,
                "toy_seconds" => seconds = parse(key, value)?,
                "toy_seed" => toy_seed = parse(key, value)?,
                "sample_rate" => rate = parse(key, value)?,
                _ => return Err(Error::config(format!("unknown config key `{key}`"))),
            }
        }
        cfg.data = match dir {
            Some(d) => DataSource::Dir(d),
            None => DataSource::Toy { clips, seconds, seed: toy_seed, sample_rate: rate },
        };
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Summed per-sample entropy that yields `kbps` of neural payload.
    ///
    /// Each sample is coded `frame_size / hop_size` times by overlapping frames.
    pub fn entropy_for_kbps(&self, kbps: f64, sample_rate: u32) -> f64 {
        let m = &self.model;
        kbps * 1000.0 * m.hop_size as f64 / (m.frame_size as f64 * f64::from(sample_rate))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(self.model.code_layers(), self.model.bins)
    }
}
