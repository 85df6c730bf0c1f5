//! Mirrored convolutional autoencoder with layer-wise skip autoencoders.
//!
//! Encoder layer `l` (1-based) maps `x^(l-1) -> x^(l)`; layer `L` collapses to a
//! single tanh channel, the main bottleneck. A skip autoencoder at tap `l`
//! compresses `x^(l)` to its own single-channel code and reconstructs it; the
//! decoder layer `l` then consumes the channel concatenation of that
//! reconstruction and its regular input.

mod config;
mod io;

pub use config::{conv_param_count, ModelConfig};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::bitstream::HuffmanCodebook;
use crate::error::{Error, Result};
use crate::quant::{hard_dequantize, soft_quantize_on, SoftPath, SoftQuantizer, DEFAULT_ALPHA};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[C_out, C_in, K]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl ConvLayer {
    /// Fan-in scaled uniform weights, zero bias.
    fn init(cin: usize, cout: usize, k: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = (3.0 / (cin * k) as f64).sqrt();
        let w = (0..cout * cin * k).map(|_| rng.gen_range(-bound..bound)).collect();
        ConvLayer { weight: Tensor::new(vec![cout, cin, k], w).unwrap(), bias: Tensor::zeros(&[cout]), activation }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipAutoencoder {
    /// Encoder layer whose output this autoencoder compresses.
    pub tap: usize,
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    pub quantizer: SoftQuantizer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarpNetModel {
    pub config: ModelConfig,
    pub encoder: Vec<ConvLayer>,
    /// Execution order: entry `i` is decoder layer `L - i`.
    pub decoder: Vec<ConvLayer>,
    /// Nearest the bottleneck first.
    pub skips: Vec<SkipAutoencoder>,
    pub quantizer: SoftQuantizer,
    /// Deployment Huffman tables, main bottleneck first.
    pub codebooks: Option<Vec<HuffmanCodebook>>,
}

/// Hard indices per code layer: main bottleneck, then taps `L-1, L-2, ...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCodes {
    pub layers: Vec<Vec<u8>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Bottlenecks pass through unquantized. Soft statistics are still recorded.
    Bypass,
    /// Soft-to-hard relaxation `x~ = P mu`.
    Soft,
}

#[derive(Clone, Copy, Debug)]
struct BoundLayer {
    weight: Var,
    bias: Var,
    activation: Activation,
}

#[derive(Clone, Debug)]
struct BoundSkip {
    encoder: Vec<BoundLayer>,
    decoder: Vec<BoundLayer>,
    centers: Var,
    alpha: f64,
}

/// A model whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    encoder: Vec<BoundLayer>,
    decoder: Vec<BoundLayer>,
    skips: Vec<BoundSkip>,
    centers: Var,
    alpha: f64,
    slope: f64,
    taps: Vec<usize>,
    /// Every parameter in canonical order.
    pub params: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Reconstruction, `[1, T]`.
    pub output: Var,
    /// Unquantized bottleneck codes, main first.
    pub bottlenecks: Vec<Var>,
    /// Soft quantization statistics per code layer, main first.
    pub soft: Vec<SoftPath>,
}

impl HarpNetModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, f, k) = (config.enc_layers, config.filters, config.kernel);
        let mut encoder = Vec::with_capacity(l);
        for i in 1..=l {
            let cin = if i == 1 { 1 } else { f };
            encoder.push(if i == l {
                ConvLayer::init(cin, 1, k, Activation::Tanh, &mut rng)
            } else {
                ConvLayer::init(cin, f, k, Activation::LeakyRelu, &mut rng)
            });
        }
        let mut decoder = Vec::with_capacity(l);
        for i in (1..=l).rev() {
            let cin = if i == l { 1 } else { f } * if config.is_tap(i) { 2 } else { 1 };
            decoder.push(if i == 1 {
                ConvLayer::init(cin, 1, k, Activation::Linear, &mut rng)
            } else {
                ConvLayer::init(cin, f, k, Activation::LeakyRelu, &mut rng)
            });
        }
        let mut skips = Vec::with_capacity(config.skip_aes);
        for tap in config.taps() {
            let s = config.skip_filters;
            let mut enc = Vec::new();
            let mut dec = Vec::new();
            for h in 0..config.skip_hidden {
                enc.push(ConvLayer::init(if h == 0 { f } else { s }, s, k, Activation::LeakyRelu, &mut rng));
            }
            enc.push(ConvLayer::init(s, 1, k, Activation::Tanh, &mut rng));
            dec.push(ConvLayer::init(1, s, k, Activation::LeakyRelu, &mut rng));
            for _ in 1..config.skip_hidden {
                dec.push(ConvLayer::init(s, s, k, Activation::LeakyRelu, &mut rng));
            }
            dec.push(ConvLayer::init(s, f, k, Activation::Linear, &mut rng));
            skips.push(SkipAutoencoder {
                tap,
                encoder: enc,
                decoder: dec,
                quantizer: SoftQuantizer::new(config.bins, DEFAULT_ALPHA)?,
            });
        }
        Ok(HarpNetModel {
            config,
            encoder,
            decoder,
            skips,
            quantizer: SoftQuantizer::new(config.bins, DEFAULT_ALPHA)?,
            codebooks: None,
        })
    }

    pub fn code_layers(&self) -> usize {
        self.skips.len() + 1
    }

    /// Quantizers in code-layer order.
    pub fn quantizers(&self) -> Vec<&SoftQuantizer> {
        std::iter::once(&self.quantizer).chain(self.skips.iter().map(|s| &s.quantizer)).collect()
    }

    pub fn quantizers_mut(&mut self) -> Vec<&mut SoftQuantizer> {
        std::iter::once(&mut self.quantizer).chain(self.skips.iter_mut().map(|s| &mut s.quantizer)).collect()
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        for q in self.quantizers_mut() {
            q.set_alpha(alpha)?;
        }
        Ok(())
    }

    /// Every parameter tensor in canonical order: encoder, decoder, each
    /// skip autoencoder (encoder, decoder, centers), main centers.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        fn layers<'a>(ls: &'a [ConvLayer], out: &mut Vec<&'a Tensor>) {
            for l in ls {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        layers(&self.encoder, &mut out);
        layers(&self.decoder, &mut out);
        for s in &self.skips {
            layers(&s.encoder, &mut out);
            layers(&s.decoder, &mut out);
            out.push(s.quantizer.centers_tensor());
        }
        out.push(self.quantizer.centers_tensor());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        fn layers<'a>(ls: &'a mut [ConvLayer], out: &mut Vec<&'a mut Tensor>) {
            for l in ls {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        layers(&mut self.encoder, &mut out);
        layers(&mut self.decoder, &mut out);
        for s in &mut self.skips {
            layers(&mut s.encoder, &mut out);
            layers(&mut s.decoder, &mut out);
            out.push(s.quantizer.centers_tensor_mut());
        }
        out.push(self.quantizer.centers_tensor_mut());
        out
    }

    /// Conv weights, biases and bin centers.
    pub fn count_params(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// Place the parameters on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut b = Binder { tape, trainable, params: Vec::new() };
        let encoder = b.layers(&self.encoder);
        let decoder = b.layers(&self.decoder);
        let skips = self
            .skips
            .iter()
            .map(|s| BoundSkip {
                encoder: b.layers(&s.encoder),
                decoder: b.layers(&s.decoder),
                centers: b.leaf(s.quantizer.centers_tensor()),
                alpha: s.quantizer.alpha(),
            })
            .collect();
        let centers = b.leaf(self.quantizer.centers_tensor());
        BoundModel {
            encoder,
            decoder,
            skips,
            centers,
            alpha: self.quantizer.alpha(),
            slope: self.config.leaky_slope,
            taps: self.config.taps(),
            params: b.params,
        }
    }

    fn check_frame(&self, frame: &[f64]) -> Result<()> {
        if frame.is_empty() {
            return Err(Error::shape("empty frame"));
        }
        Ok(())
    }

    /// Hard-quantized codes for one frame.
    pub fn encode(&self, frame: &[f64]) -> Result<LayerCodes> {
        self.check_frame(frame)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let input = tape.constant(Tensor::signal(frame.to_vec()));
        let (bottlenecks, _) = bound.encode(&mut tape, input)?;
        let layers =
            bottlenecks.iter().zip(self.quantizers()).map(|(&b, q)| q.hard_assign(tape.value(b).data())).collect();
        Ok(LayerCodes { layers })
    }

    pub fn decode(&self, codes: &LayerCodes) -> Result<Vec<f64>> {
        let centers: Vec<Vec<f64>> = self.quantizers().iter().map(|q| q.centers().to_vec()).collect();
        self.decode_with_centers(codes, &centers)
    }

    /// Decode with externally supplied bin centers (e.g. from a stream header).
    pub fn decode_with_centers(&self, codes: &LayerCodes, centers: &[Vec<f64>]) -> Result<Vec<f64>> {
        if codes.layers.len() != self.code_layers() || centers.len() != self.code_layers() {
            return Err(Error::corrupt(format!(
                "{} code layers for a model with {}",
                codes.layers.len(),
                self.code_layers()
            )));
        }
        let t = codes.layers[0].len();
        if t == 0 || codes.layers.iter().any(|c| c.len() != t) {
            return Err(Error::corrupt("code layers differ in length"));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let mut bars = Vec::with_capacity(codes.layers.len());
        for (idx, mu) in codes.layers.iter().zip(centers) {
            if mu.len() != self.config.bins {
                return Err(Error::corrupt("bin center table has the wrong size"));
            }
            bars.push(tape.constant(Tensor::signal(hard_dequantize(idx, mu)?)));
        }
        let out = bound.decode(&mut tape, &bars)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `decode(encode(frame))` without building intermediate code vectors.
    pub fn reconstruct(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(frame)?)
    }
}

struct Binder<'t> {
    tape: &'t mut Tape,
    trainable: bool,
    params: Vec<Var>,
}

impl Binder<'_> {
    fn leaf(&mut self, t: &Tensor) -> Var {
        let v = if self.trainable { self.tape.param(t.clone()) } else { self.tape.constant(t.clone()) };
        self.params.push(v);
        v
    }

    fn layers(&mut self, ls: &[ConvLayer]) -> Vec<BoundLayer> {
        ls.iter()
            .map(|l| BoundLayer { weight: self.leaf(&l.weight), bias: self.leaf(&l.bias), activation: l.activation })
            .collect()
    }
}

fn apply(tape: &mut Tape, x: Var, layer: &BoundLayer, slope: f64) -> Result<Var> {
    let y = tape.conv1d_same(x, layer.weight, layer.bias)?;
    Ok(match layer.activation {
        Activation::LeakyRelu => tape.leaky_relu(y, slope),
        Activation::Tanh => tape.tanh(y),
        Activation::Linear => y,
    })
}

fn run(tape: &mut Tape, mut x: Var, layers: &[BoundLayer], slope: f64) -> Result<Var> {
    for l in layers {
        x = apply(tape, x, l, slope)?;
    }
    Ok(x)
}

impl BoundModel {
    pub fn main_centers(&self) -> Var {
        self.centers
    }

    /// Bottleneck codes (main first) and the encoder activations `x^(1..=L)`.
    fn encode(&self, tape: &mut Tape, input: Var) -> Result<(Vec<Var>, Vec<Var>)> {
        let mut hidden = Vec::with_capacity(self.encoder.len());
        let mut x = input;
        for l in &self.encoder {
            x = apply(tape, x, l, self.slope)?;
            hidden.push(x);
        }
        let mut bottlenecks = vec![x];
        for (s, &tap) in self.skips.iter().zip(&self.taps) {
            bottlenecks.push(run(tape, hidden[tap - 1], &s.encoder, self.slope)?);
        }
        Ok((bottlenecks, hidden))
    }

    /// Decoder path from (de)quantized codes, main first.
    fn decode(&self, tape: &mut Tape, bars: &[Var]) -> Result<Var> {
        let mut skip_out = Vec::with_capacity(self.skips.len());
        for (s, &b) in self.skips.iter().zip(&bars[1..]) {
            skip_out.push(run(tape, b, &s.decoder, self.slope)?);
        }
        let depth = self.encoder.len();
        let mut x = bars[0];
        for (i, layer) in self.decoder.iter().enumerate() {
            let l = depth - i;
            if let Some(pos) = self.taps.iter().position(|&t| t == l) {
                x = tape.concat_channels(skip_out[pos], x)?;
            }
            x = apply(tape, x, layer, self.slope)?;
        }
        Ok(x)
    }

    /// Differentiable forward pass on a `[1, T]` input.
    pub fn forward(&self, tape: &mut Tape, input: Var, mode: QuantMode) -> Result<ForwardOutput> {
        let (bottlenecks, _) = self.encode(tape, input)?;
        let quantizers =
            std::iter::once((self.centers, self.alpha)).chain(self.skips.iter().map(|s| (s.centers, s.alpha)));
        let mut soft = Vec::with_capacity(bottlenecks.len());
        let mut bars = Vec::with_capacity(bottlenecks.len());
        for (&b, (centers, alpha)) in bottlenecks.iter().zip(quantizers) {
            let path = soft_quantize_on(tape, b, centers, alpha)?;
            bars.push(match mode {
                QuantMode::Bypass => b,
                QuantMode::Soft => path.quantized,
            });
            soft.push(path);
        }
        let output = self.decode(tape, &bars)?;
        Ok(ForwardOutput { output, bottlenecks, soft })
    }
}

/// Skip-free configuration whose parameter count lies within 3% of `budget`.
///
/// Searches encoder depth and filter count; kernel, bins and geometry come
/// from `template`. Among admissible candidates the depth nearest the
/// template's wins, then a count at or above the budget, then the closest count.
pub fn baseline_config(budget: usize, template: &ModelConfig) -> Result<ModelConfig> {
    let slack = budget * 3 / 100;
    let mut best: Option<((usize, bool, usize), ModelConfig)> = None;
    for enc_layers in 2..=12 {
        for filters in 1..=256 {
            let cfg = ModelConfig { enc_layers, filters, skip_aes: 0, ..*template };
            let n = cfg.param_count();
            if n > budget + slack {
                break;
            }
            if n + slack < budget {
                continue;
            }
            let key = (enc_layers.abs_diff(template.enc_layers), n < budget, n.abs_diff(budget));
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, cfg));
            }
        }
    }
    best.map(|(_, c)| c).ok_or_else(|| Error::InfeasibleBudget {
        budget,
        detail: "no skip-free topology lands within 3% of the budget".into(),
    })
}

pub fn build_baseline(budget: usize, template: &ModelConfig, seed: u64) -> Result<HarpNetModel> {
    HarpNetModel::new(baseline_config(budget, template)?, seed)
}
