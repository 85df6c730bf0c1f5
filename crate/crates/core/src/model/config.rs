use crate::dsp::LpcConfig;
use crate::error::{Error, Result};
use crate::quant::{DEFAULT_BINS, MAX_BINS};

/// Parameters of a `cin -> cout` convolution with kernel `k`.
pub const fn conv_param_count(cin: usize, cout: usize, k: usize) -> usize {
    k * cin * cout + cout
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder depth L, including the channel-collapse bottleneck layer.
    pub enc_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    /// Number of skip autoencoders M, tapped at encoder layers L-1 down to L-M.
    pub skip_aes: usize,
    /// Hidden layers in each skip encoder (the collapse layer is extra).
    pub skip_hidden: usize,
    pub skip_filters: usize,
    pub bins: usize,
    pub leaky_slope: f64,
    pub frame_size: usize,
    pub hop_size: usize,
    pub lpc: LpcConfig,
}

impl Default for ModelConfig {
    /// Desk-scale geometry with the full-width layers.
    fn default() -> Self {
        ModelConfig {
            enc_layers: 6,
            filters: 24,
            kernel: 15,
            skip_aes: 3,
            skip_hidden: 3,
            skip_filters: 24,
            bins: DEFAULT_BINS,
            leaky_slope: 0.2,
            frame_size: 1024,
            hop_size: 512,
            lpc: LpcConfig::default(),
        }
    }
}

impl ModelConfig {
    /// The 12-layer, 24-filter, K=15 topology with `skip_aes` skip autoencoders.
    pub fn full_scale(skip_aes: usize) -> Self {
        ModelConfig { skip_aes, ..Self::default() }
    }

    /// Small topology used for quick experiments and the test suite.
    pub fn toy(skip_aes: usize) -> Self {
        ModelConfig {
            enc_layers: 4,
            filters: 8,
            kernel: 9,
            skip_aes,
            skip_hidden: 2,
            skip_filters: 8,
            ..Self::default()
        }
    }

    pub fn code_layers(&self) -> usize {
        self.skip_aes + 1
    }

    /// Encoder layer indices (1-based) carrying a skip autoencoder, nearest the bottleneck first.
    pub fn taps(&self) -> Vec<usize> {
        (1..=self.skip_aes).map(|m| self.enc_layers - m).collect()
    }

    pub fn is_tap(&self, layer: usize) -> bool {
        layer < self.enc_layers && layer + self.skip_aes >= self.enc_layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_layers < 2 {
            return Err(Error::config("encoder needs at least 2 layers"));
        }
        if self.skip_aes > self.enc_layers - 1 {
            return Err(Error::config(format!(
                "{} skip autoencoders exceed the {} available taps",
                self.skip_aes,
                self.enc_layers - 1
            )));
        }
        if self.filters == 0 || self.skip_filters == 0 {
            return Err(Error::config("filter counts must be positive"));
        }
        if self.skip_hidden == 0 {
            return Err(Error::config("skip autoencoders need at least one hidden layer"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size {} must be odd", self.kernel)));
        }
        if !(2..=MAX_BINS).contains(&self.bins) {
            return Err(Error::config(format!("bin count {} outside 2..={MAX_BINS}", self.bins)));
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return Err(Error::config("leaky slope must lie in [0, 1)"));
        }
        if self.hop_size == 0 || self.hop_size > self.frame_size {
            return Err(Error::config(format!("hop {} must lie in 1..={}", self.hop_size, self.frame_size)));
        }
        self.lpc.validate(self.frame_size)
    }

    pub fn encoder_param_count(&self) -> usize {
        let (f, k) = (self.filters, self.kernel);
        conv_param_count(1, f, k) + (self.enc_layers - 2) * conv_param_count(f, f, k) + conv_param_count(f, 1, k)
    }

    pub fn decoder_param_count(&self) -> usize {
        let (f, k) = (self.filters, self.kernel);
        (1..=self.enc_layers)
            .map(|l| {
                let cin = if l == self.enc_layers { 1 } else { f } * if self.is_tap(l) { 2 } else { 1 };
                let cout = if l == 1 { 1 } else { f };
                conv_param_count(cin, cout, k)
            })
            .sum()
    }

    /// One skip autoencoder, including its bin centers.
    pub fn skip_param_count(&self) -> usize {
        let (f, s, k, h) = (self.filters, self.skip_filters, self.kernel, self.skip_hidden);
        let enc = conv_param_count(f, s, k) + (h - 1) * conv_param_count(s, s, k) + conv_param_count(s, 1, k);
        let dec = conv_param_count(1, s, k) + (h - 1) * conv_param_count(s, s, k) + conv_param_count(s, f, k);
        enc + dec + self.bins
    }

    /// Closed-form parameter count; equals `HarpNetModel::count_params` for a built model.
    pub fn param_count(&self) -> usize {
        self.encoder_param_count() + self.decoder_param_count() + self.skip_aes * self.skip_param_count() + self.bins
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_layer_counts() {
        assert_eq!(conv_param_count(24, 24, 15), 8664);
        assert_eq!(conv_param_count(24, 1, 15), 361);
    }

    #[test]
    fn full_scale_breakdown() {
        let c = ModelConfig::full_scale(3);
        assert_eq!(c.encoder_param_count(), 35_401);
        assert_eq!(c.decoder_param_count(), 61_321);
        assert_eq!(c.skip_param_count(), 52_761);
        assert_eq!(c.param_count(), 255_037);
    }

    #[test]
    fn taps_and_validation() {
        let c = ModelConfig::full_scale(3);
        assert_eq!(c.taps(), vec![5, 4, 3]);
        assert!(c.is_tap(3) && !c.is_tap(2) && !c.is_tap(6));
        assert!(ModelConfig::full_scale(5).validate().is_ok());
        assert!(ModelConfig::full_scale(6).validate().is_err());
        assert!(ModelConfig { kernel: 4, ..ModelConfig::toy(0) }.validate().is_err());
    }
}
