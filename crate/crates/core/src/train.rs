//! Two-stage training: a quantizer-free warmup, then soft-to-hard
//! quantization with annealed hardness and an entropy-targeting weight.

use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{entropy_bits, entropy_grad, Tape, Var};
use crate::codec::codebooks_from_codes;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{HarpNetModel, QuantMode};
use crate::quant::{EntropyEstimate, LambdaController, DEFAULT_ALPHA, DEFAULT_ANNEAL_RATE, DEFAULT_LAMBDA_GAIN};
use crate::tensor::Tensor;

/// How the entropy target is enforced across code layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RateControl {
    /// One weight shared by all layers, steered by the summed entropy.
    /// The model chooses how to spend bits across layers.
    #[default]
    Total,
    /// One weight per layer, each aiming at an equal share of the target.
    PerLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub anneal_rate: f64,
    /// Hardness when quantization is introduced.
    pub alpha_init: f64,
    /// Summed over all code layers, bits per sample.
    pub target_entropy: f64,
    pub rate_control: RateControl,
    pub lambda_init: f64,
    pub lambda_gain: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_epochs: 8,
            total_epochs: 60,
            anneal_rate: DEFAULT_ANNEAL_RATE,
            alpha_init: DEFAULT_ALPHA,
            target_entropy: 2.0,
            rate_control: RateControl::default(),
            lambda_init: 0.0,
            lambda_gain: DEFAULT_LAMBDA_GAIN,
            batch_size: 8,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Target seen by each controller.
    pub fn controller_target(&self, code_layers: usize) -> f64 {
        match self.rate_control {
            RateControl::Total => self.target_entropy,
            RateControl::PerLayer => self.target_entropy / code_layers as f64,
        }
    }

    fn controllers(&self, code_layers: usize) -> Result<Vec<LambdaController>> {
        let n = match self.rate_control {
            RateControl::Total => 1,
            RateControl::PerLayer => code_layers,
        };
        let c = LambdaController::new(self.lambda_init, self.controller_target(code_layers), self.lambda_gain)?;
        Ok(vec![c; n])
    }

    pub fn validate(&self, code_layers: usize, bins: usize) -> Result<()> {
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::config(format!(
                "warmup_epochs ({}) must be below total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        let ceiling = code_layers as f64 * (bins as f64).log2();
        if !(self.target_entropy > 0.0 && self.target_entropy <= ceiling) {
            return Err(Error::config(format!("target_entropy {} outside (0, {ceiling}]", self.target_entropy)));
        }
        if !(self.alpha_init > 0.0 && self.alpha_init.is_finite()) {
            return Err(Error::config("alpha_init must be positive"));
        }
        if !(self.anneal_rate >= 0.0 && self.anneal_rate.is_finite()) {
            return Err(Error::config("anneal_rate must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        self.controllers(code_layers).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Warmup,
    Quantized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean batch loss `SSE / frame + sum_m lambda_m H_m`.
    pub loss: f64,
    /// Mean per-frame squared error.
    pub sse: f64,
    /// Mean batch soft entropy per code layer, main first.
    pub entropies: Vec<f64>,
    /// Entropy weights in effect during the epoch, one per code layer.
    pub lambdas: Vec<f64>,
    pub alpha: f64,
}

impl EpochRecord {
    pub fn total_entropy(&self) -> f64 {
        self.entropies.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Hard-histogram entropy per code layer over the training frames after training.
    pub hard_entropies: Vec<f64>,
    /// Residual-domain SNR of the hard-quantized model on the training frames.
    pub final_snr_db: f64,
}

impl TrainReport {
    /// Soft entropy sum of the last epoch.
    pub fn final_soft_entropy(&self) -> f64 {
        self.epochs.last().map_or(0.0, EpochRecord::total_entropy)
    }

    pub fn hard_entropy(&self) -> f64 {
        self.hard_entropies.iter().sum()
    }

    /// Tab-separated rows, one per epoch, with a header line.
    pub fn to_tsv(&self) -> String {
        let layers = self.epochs.first().map_or(0, |e| e.entropies.len());
        let mut s = String::from("epoch\tstage\tloss\tsse");
        for m in 0..layers {
            let _ = write!(s, "\tH{m}");
        }
        s.push_str("\tH_total");
        for m in 0..layers {
            let _ = write!(s, "\tlambda{m}");
        }
        s.push_str("\talpha\n");
        for e in &self.epochs {
            let stage = match e.stage {
                Stage::Warmup => "warmup",
                Stage::Quantized => "quantized",
            };
            let _ = write!(s, "{}\t{stage}\t{:.9e}\t{:.9e}", e.epoch, e.loss, e.sse);
            for h in &e.entropies {
                let _ = write!(s, "\t{h:.6}");
            }
            let _ = write!(s, "\t{:.6}", e.total_entropy());
            for l in &e.lambdas {
                let _ = write!(s, "\t{l:.9e}");
            }
            let _ = writeln!(s, "\t{:.4}", e.alpha);
        }
        s
    }
}

/// Adaptive moment estimation over the model's canonical parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &HarpNetModel, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.parameters().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, model: &mut HarpNetModel, grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in model.parameters_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// `SSE(x, x_hat) + sum_m lambda_m H_m` on a tape.
pub fn composite_loss(tape: &mut Tape, x: Var, x_hat: Var, entropies: &[Var], lambdas: &[f64]) -> Result<Var> {
    if entropies.len() != lambdas.len() {
        return Err(Error::shape(format!("{} entropies for {} weights", entropies.len(), lambdas.len())));
    }
    let mut loss = tape.sum_squared_error(x_hat, x)?;
    for (&h, &lambda) in entropies.iter().zip(lambdas) {
        let weighted = tape.scale(h, lambda);
        loss = tape.add(loss, weighted)?;
    }
    Ok(loss)
}

/// Single-frame training loss with trainable parameters bound to `tape`.
/// Returns the loss and the parameter leaves in canonical order.
pub fn frame_loss(
    model: &HarpNetModel,
    tape: &mut Tape,
    frame: &[f64],
    mode: QuantMode,
    lambdas: &[f64],
) -> Result<(Var, Vec<Var>)> {
    let bound = model.bind(tape, true);
    let x = tape.constant(Tensor::signal(frame.to_vec()));
    let out = bound.forward(tape, x, mode)?;
    let entropies: Vec<Var> = out.soft.iter().map(|s| s.entropy).collect();
    let loss = composite_loss(tape, x, out.output, &entropies, lambdas)?;
    Ok((loss, bound.params))
}

struct FramePass {
    tape: Tape,
    sse: Var,
    usage: Vec<Var>,
    params: Vec<Var>,
}

fn forward_frame(model: &HarpNetModel, frame: &[f64], mode: QuantMode) -> Result<FramePass> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let x = tape.constant(Tensor::signal(frame.to_vec()));
    let out = bound.forward(&mut tape, x, mode)?;
    let sse = tape.sum_squared_error(out.output, x)?;
    Ok(FramePass { usage: out.soft.iter().map(|s| s.usage).collect(), tape, sse, params: bound.params })
}

struct BatchResult {
    sse: f64,
    entropies: Vec<f64>,
    grads: Vec<Tensor>,
}

/// One minibatch: per-frame tapes, batch-level entropy, gradients reduced in frame order.
///
/// Loss is `mean_f SSE_f + sum_m lambda_m H(mean_f usage_{f,m})`.
fn batch_step(
    model: &HarpNetModel,
    frames: &[&Vec<f64>],
    mode: QuantMode,
    lambdas: &[f64],
    exec: Exec,
) -> Result<BatchResult> {
    let passes = exec.try_map(frames, |f| forward_frame(model, f, mode))?;
    let b = frames.len() as f64;
    let layers = model.code_layers();
    let bins = model.config.bins;
    let mut usage = vec![vec![0.0; bins]; layers];
    for p in &passes {
        for (acc, &u) in usage.iter_mut().zip(&p.usage) {
            for (a, v) in acc.iter_mut().zip(p.tape.value(u).data()) {
                *a += v / b;
            }
        }
    }
    let entropies: Vec<f64> = usage.iter().map(|p| entropy_bits(p)).collect();
    let usage_seeds: Vec<Tensor> = usage
        .iter()
        .zip(lambdas)
        .map(|(p, &lambda)| Tensor::vector(p.iter().map(|&q| lambda * entropy_grad(q) / b).collect()))
        .collect();
    let per_frame = exec.try_map(&passes, |p| {
        let mut seeds = vec![(p.sse, Tensor::scalar(1.0 / b))];
        for ((&u, seed), &lambda) in p.usage.iter().zip(&usage_seeds).zip(lambdas) {
            if lambda > 0.0 {
                seeds.push((u, seed.clone()));
            }
        }
        let mut g = p.tape.backward_seeded(&seeds)?;
        let grads: Vec<Tensor> =
            p.params.iter().map(|&v| g.take(v).unwrap_or_else(|| Tensor::zeros(p.tape.value(v).shape()))).collect();
        Ok::<_, Error>((p.tape.value(p.sse).item(), grads))
    })?;
    let mut sse = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for (s, g) in per_frame {
        sse += s / b;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| a.add_assign(x)),
        }
    }
    Ok(BatchResult { sse, entropies, grads: grads.unwrap_or_default() })
}

/// Train `model` in place on scaled residual frames.
///
/// Epochs before `warmup_epochs` bypass the quantizers with zero entropy
/// weight. Afterwards quantization is soft with hardness `alpha_init + rate * k`
/// in the k-th quantized epoch. Entropy weights follow proportional
/// controllers (see [`RateControl`]) updated from epoch-mean soft entropy. Deployment Huffman tables are
/// built from hard histograms over `frames` at the end.
pub fn train(model: &mut HarpNetModel, frames: &[Vec<f64>], cfg: &TrainConfig, exec: Exec) -> Result<TrainReport> {
    cfg.validate(model.code_layers(), model.config.bins)?;
    if frames.is_empty() {
        return Err(Error::EmptyDataset("no training frames".into()));
    }
    if let Some(f) = frames.iter().find(|f| f.len() != model.config.frame_size) {
        return Err(Error::shape(format!(
            "training frame of {} samples, model expects {}",
            f.len(),
            model.config.frame_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model, cfg.learning_rate);
    let layers = model.code_layers();
    let mut controllers = cfg.controllers(layers)?;
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.total_epochs);

    for epoch in 0..cfg.total_epochs {
        let (stage, mode, lambdas, alpha) = if epoch < cfg.warmup_epochs {
            (Stage::Warmup, QuantMode::Bypass, vec![0.0; layers], cfg.alpha_init)
        } else {
            let k = (epoch - cfg.warmup_epochs) as f64;
            let lambdas = match cfg.rate_control {
                RateControl::Total => vec![controllers[0].lambda(); layers],
                RateControl::PerLayer => controllers.iter().map(LambdaController::lambda).collect(),
            };
            (Stage::Quantized, QuantMode::Soft, lambdas, cfg.alpha_init + cfg.anneal_rate * k)
        };
        model.set_alpha(alpha)?;
        order.shuffle(&mut rng);
        let (mut sse, mut ent, mut batches) = (0.0, vec![0.0; layers], 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Vec<f64>> = chunk.iter().map(|&i| &frames[i]).collect();
            let r = batch_step(model, &batch, mode, &lambdas, exec)?;
            if !r.sse.is_finite() || r.grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss or gradient (batch sse {})", r.sse),
                });
            }
            adam.step(model, &r.grads);
            sse += r.sse;
            ent.iter_mut().zip(&r.entropies).for_each(|(a, h)| *a += h);
            batches += 1;
        }
        let n = batches as f64;
        sse /= n;
        ent.iter_mut().for_each(|h| *h /= n);
        let loss = sse + ent.iter().zip(&lambdas).map(|(h, l)| h * l).sum::<f64>();
        let record = EpochRecord { epoch, stage, loss, sse, entropies: ent, lambdas, alpha };
        info!(
            "epoch {epoch:3} {stage:?} loss {loss:.5e} sse {sse:.5e} H {:.3} {:?} alpha {alpha:.2}",
            record.total_entropy(),
            record.entropies
        );
        if stage == Stage::Quantized {
            match cfg.rate_control {
                RateControl::Total => {
                    controllers[0].update(record.total_entropy());
                }
                RateControl::PerLayer => {
                    for (c, &h) in controllers.iter_mut().zip(&record.entropies) {
                        c.update(h);
                    }
                }
            }
        }
        epochs.push(record);
    }

    let codes = exec.try_map(frames, |f| model.encode(f))?;
    let hard_entropies = (0..layers)
        .map(|m| {
            let mut counts = vec![0u64; model.config.bins];
            for c in &codes {
                for &i in &c.layers[m] {
                    counts[usize::from(i)] += 1;
                }
            }
            EntropyEstimate::from_counts(&counts).bits
        })
        .collect();
    model.codebooks = Some(codebooks_from_codes(model, &codes)?);
    let recon = exec.try_map(&codes, |c| model.decode(c))?;
    let signal: f64 = frames.iter().flatten().map(|v| v * v).sum();
    let noise: f64 = frames.iter().flatten().zip(recon.iter().flatten()).map(|(a, b)| (a - b).powi(2)).sum();
    let final_snr_db = if noise == 0.0 { 99.0 } else { (10.0 * (signal / noise).log10()).min(99.0) };
    Ok(TrainReport { epochs, hard_entropies, final_snr_db })
}
