//! `harpnet`: train, encode, decode, evaluate and compare.
//!
//! Exit codes: 0 success, 2 bad input (missing data, config, unsupported
//! audio), 3 training divergence, 4 stream/model mismatch, 5 corrupt stream.

mod compare;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

use harpnet::bitstream::{measure_bitrate, read_stream, write_stream};
use harpnet::codec::{decode_stream, encode_audio};
use harpnet::config::{DataSource, RunConfig};
use harpnet::data::{load_wav_dir, residual_frames, toy_dataset};
use harpnet::dsp::wav::{encode_wav, read_wav, PcmFormat};
use harpnet::eval::evaluate;
use harpnet::exec::{with_jobs, Exec};
use harpnet::model::{load_model, write_model, HarpNetModel};
use harpnet::train::train;
use harpnet::Error;

#[derive(Parser)]
#[command(name = "harpnet", version, about = "Neural audio codec with skip autoencoders")]
struct Cli {
    /// Worker threads for frame-parallel work (0 = all cores).
    #[arg(long, global = true, env = "HARPNET_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key = value config file.
    Train {
        #[arg(long, env = "HARPNET_CONFIG")]
        config: PathBuf,
        /// Output model file.
        #[arg(long, env = "HARPNET_MODEL")]
        model: PathBuf,
        /// Training report (TSV); defaults to the model path with a `.tsv` extension.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Neural-code bitrate target in kbps.
        #[arg(long, env = "HARPNET_TARGET_BITRATE")]
        target_bitrate: Option<f64>,
        #[arg(long, env = "HARPNET_SKIP_AES")]
        skip_aes: Option<usize>,
        #[arg(long, env = "HARPNET_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "HARPNET_DOWNMIX")]
        downmix: bool,
    },
    /// Encode a WAV file into a `.hrp` stream.
    Encode {
        #[arg(long, env = "HARPNET_MODEL")]
        model: PathBuf,
        #[arg(long, env = "HARPNET_DOWNMIX")]
        downmix: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decode a `.hrp` stream into a WAV file.
    Decode {
        #[arg(long, env = "HARPNET_MODEL")]
        model: PathBuf,
        /// Write 16-bit PCM instead of 32-bit float.
        #[arg(long)]
        pcm16: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// Per-clip SNR and bitrate over a directory of WAV files.
    Eval {
        #[arg(long, env = "HARPNET_MODEL")]
        model: PathBuf,
        #[arg(long, env = "HARPNET_DOWNMIX")]
        downmix: bool,
        /// Model label for `compare`; defaults to the model file stem.
        #[arg(long)]
        name: Option<String>,
        /// Bitrate group label for `compare`; defaults to the rounded mean kbps.
        #[arg(long)]
        bitrate: Option<String>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        dir: PathBuf,
    },
    /// Group eval outputs by bitrate and model.
    Compare {
        /// Plot-ready TSV (model, bitrate, mean, std).
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = err.chain().find_map(|e| e.downcast_ref::<Error>()).map_or(2, exit_code);
        Failure { code, err }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } => 3,
        Error::ModelMismatch(_) => 4,
        Error::CorruptStream(_)
        | Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::ChecksumMismatch { .. }
        | Error::UnstableFilter { .. } => 5,
        _ => 2,
    }
}

/// Model files are inputs, not streams: any load failure is a bad-input error.
fn open_model(path: &Path) -> Result<HarpNetModel, Failure> {
    load_model(path)
        .with_context(|| format!("loading model {}", path.display()))
        .map_err(|err| Failure { code: 2, err })
}

/// Write via a temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = Exec::from_jobs(cli.jobs);
    match cli.command {
        Command::Train { config, model, report, target_bitrate, skip_aes, seed, downmix } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("reading config {}", config.display()))?;
            if let Some(m) = skip_aes {
                cfg.model.skip_aes = m;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if target_bitrate.is_some() {
                cfg.target_kbps = target_bitrate;
            }
            let clips = match &cfg.data {
                DataSource::Dir(dir) => {
                    load_wav_dir(dir, downmix).with_context(|| format!("loading {}", dir.display()))?
                }
                DataSource::Toy { clips, seconds, seed, sample_rate } => {
                    toy_dataset(*seed, *clips, *seconds, *sample_rate)
                }
            };
            if let Some(kbps) = cfg.target_kbps {
                let rate = clips.first().map_or(16_000, |(_, a)| a.sample_rate);
                cfg.train.target_entropy = cfg.entropy_for_kbps(kbps, rate);
                info!("target {kbps} kbps -> {:.4} bits per sample", cfg.train.target_entropy);
            }
            cfg.validate()?;
            let mut net = HarpNetModel::new(cfg.model, cfg.train.seed)?;
            let frames = residual_frames(&net, &clips, exec)?;
            info!("training on {} frames from {} clips", frames.len(), clips.len());
            let rep = train(&mut net, &frames, &cfg.train, exec)?;
            write_atomic(&model, &write_model(&net)?)?;
            let report = report.unwrap_or_else(|| model.with_extension("tsv"));
            write_atomic(&report, rep.to_tsv().as_bytes())?;
            println!(
                "trained {} params: hard entropy {:.3} bits/sample, residual SNR {:.2} dB",
                net.count_params(),
                rep.hard_entropy(),
                rep.final_snr_db
            );
        }
        Command::Encode { model, downmix, input, output } => {
            let net = open_model(&model)?;
            let audio = read_wav(&input, downmix).with_context(|| format!("reading {}", input.display()))?;
            let stream = encode_audio(&net, &audio, exec)?;
            let bytes = write_stream(&stream)?;
            let rate = measure_bitrate(&stream, audio.duration_secs())?;
            write_atomic(&output, &bytes)?;
            println!(
                "neural {:.3} kbps, lpc {:.3} kbps, overhead {:.3} kbps, total {:.3} kbps",
                rate.neural_kbps(),
                rate.lpc_kbps(),
                rate.overhead_kbps(),
                rate.total_kbps()
            );
        }
        Command::Decode { model, pcm16, input, output } => {
            let net = open_model(&model)?;
            let bytes = std::fs::read(&input)
                .with_context(|| format!("reading {}", input.display()))
                .map_err(|err| Failure { code: 2, err })?;
            let stream = read_stream(&bytes)?;
            let audio = decode_stream(&net, &stream, exec)?;
            let format = if pcm16 { PcmFormat::Int16 } else { PcmFormat::Float32 };
            write_atomic(&output, &encode_wav(&audio, format)?)?;
        }
        Command::Eval { model, downmix, name, bitrate, out, dir } => {
            let net = open_model(&model)?;
            let clips = load_wav_dir(&dir, downmix).with_context(|| format!("loading {}", dir.display()))?;
            let rep = evaluate(&net, &clips, exec)?;
            let name = name.unwrap_or_else(|| {
                model.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
            });
            let bitrate = bitrate.unwrap_or_else(|| format!("{:.0}", rep.mean_kbps()));
            let text = compare::eval_preamble(&name, &bitrate) + &rep.to_tsv();
            match out {
                Some(path) => write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Compare { plot_data, inputs } => {
            let tables = inputs
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    compare::parse_eval(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let cmp = compare::compare(tables)?;
            for b in &cmp.incomplete {
                eprintln!("warning: bitrate group {b} does not contain every model");
            }
            print!("{}", cmp.text_table());
            if let Some(path) = plot_data {
                write_atomic(&path, cmp.plot_data().as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = cli.jobs;
    match with_jobs(jobs, move || run(cli).map_err(|f| (f.code, format!("{:#}", f.err)))) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            if code == 3 {
                eprintln!("hint: lower learning_rate or lambda_gain, or lengthen warmup_epochs");
            }
            ExitCode::from(code)
        }
    }
}
