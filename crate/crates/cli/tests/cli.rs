use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TOY: &str = "\
enc_layers = 3
filters = 4
kernel = 5
skip_aes = 1
skip_hidden = 1
skip_filters = 4
bins = 8
frame_size = 128
hop_size = 64
lpc_order = 8
total_epochs = 2
warmup_epochs = 1
alpha_init = 5
toy_clips = 2
toy_seconds = 0.1
";

fn harpnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harpnet")).args(args).current_dir(dir).env_remove("RUST_LOG").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 16-bit PCM WAV with `channels` interleaved channels of a sine.
fn write_wav(path: &Path, channels: u16, frames: usize) {
    let mut data = Vec::new();
    for i in 0..frames {
        let v = (8000.0 * (i as f64 * 0.07).sin()) as i16;
        for _ in 0..channels {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let rate = 16_000u32;
    let block = 2 * channels;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&channels.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    b.extend_from_slice(&(rate * u32::from(block)).to_le_bytes());
    b.extend_from_slice(&block.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(data.len() as u32).to_le_bytes());
    b.extend_from_slice(&data);
    fs::write(path, b).unwrap();
}

/// Temp dir with `toy.cfg`, a trained `m.hrpm` and `clips/a.wav`.
fn trained() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_path_buf();
    fs::write(d.join("toy.cfg"), TOY).unwrap();
    let out = harpnet(&d, &["train", "--config", "toy.cfg", "--model", "m.hrpm"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    fs::create_dir(d.join("clips")).unwrap();
    write_wav(&d.join("clips/a.wav"), 1, 3000);
    (tmp, d)
}

#[test]
fn train_writes_model_and_report_deterministically() {
    let (_tmp, d) = trained();
    let report = fs::read_to_string(d.join("m.tsv")).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("epoch\tstage\tloss"));
    assert!(rows[2].starts_with("1\tquantized\t"));

    let out = harpnet(&d, &["train", "--config", "toy.cfg", "--model", "again.hrpm"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(d.join("m.hrpm")).unwrap(), fs::read(d.join("again.hrpm")).unwrap());
}

#[test]
fn env_overrides_apply() {
    let (_tmp, d) = trained();
    let out = Command::new(env!("CARGO_BIN_EXE_harpnet"))
        .args(["train", "--config", "toy.cfg", "--model", "m0.hrpm"])
        .env("HARPNET_SKIP_AES", "0")
        .env("HARPNET_SEED", "9")
        .current_dir(&d)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(d.join("m0.tsv")).unwrap();
    // One code layer only.
    assert!(report.starts_with("epoch\tstage\tloss\tsse\tH0\tH_total\tlambda0\talpha"));
}

#[test]
fn bad_config_and_missing_data_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.cfg"), "filters = 4\nfilterz = 3\n").unwrap();
    let out = harpnet(d, &["train", "--config", "bad.cfg", "--model", "m.hrpm"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`filterz`"));
    assert!(!d.join("m.hrpm").exists());

    fs::write(d.join("dir.cfg"), format!("{TOY}data_dir = nowhere\n")).unwrap();
    assert_eq!(code(&harpnet(d, &["train", "--config", "dir.cfg", "--model", "m.hrpm"])), 2);
    assert_eq!(code(&harpnet(d, &["train", "--config", "absent.cfg", "--model", "m.hrpm"])), 2);
}

#[test]
fn encode_decode_round_trip() {
    let (_tmp, d) = trained();
    let out = harpnet(&d, &["encode", "--model", "m.hrpm", "clips/a.wav", "a.hrp"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = String::from_utf8(out.stdout).unwrap();
    let total: f64 = line.trim().rsplit("total ").next().unwrap().trim_end_matches(" kbps").parse().unwrap();
    // Rate honesty: reported kbps is bits on disk over duration.
    let bits = fs::metadata(d.join("a.hrp")).unwrap().len() as f64 * 8.0;
    assert!((total - bits / (3000.0 / 16_000.0) / 1000.0).abs() < 1e-3, "{line}");

    assert_eq!(code(&harpnet(&d, &["encode", "--model", "m.hrpm", "clips/a.wav", "b.hrp"])), 0);
    assert_eq!(fs::read(d.join("a.hrp")).unwrap(), fs::read(d.join("b.hrp")).unwrap());

    assert_eq!(code(&harpnet(&d, &["decode", "--model", "m.hrpm", "a.hrp", "x.wav"])), 0);
    assert_eq!(code(&harpnet(&d, &["decode", "--model", "m.hrpm", "a.hrp", "y.wav"])), 0);
    let x = fs::read(d.join("x.wav")).unwrap();
    assert_eq!(x, fs::read(d.join("y.wav")).unwrap());
    // 44-byte header plus 3000 f32 samples, same duration as the input.
    let samples = u32::from_le_bytes(x[x.len() - 4 * 3000 - 4..x.len() - 4 * 3000].try_into().unwrap());
    assert_eq!(samples, 4 * 3000);
}

#[test]
fn stereo_needs_downmix() {
    let (_tmp, d) = trained();
    write_wav(&d.join("st.wav"), 2, 1000);
    let out = harpnet(&d, &["encode", "--model", "m.hrpm", "st.wav", "s.hrp"]);
    assert_eq!(code(&out), 2);
    assert!(!d.join("s.hrp").exists());
    assert_eq!(code(&harpnet(&d, &["encode", "--model", "m.hrpm", "--downmix", "st.wav", "s.hrp"])), 0);
}

#[test]
fn tampered_stream_exits_5_without_output() {
    let (_tmp, d) = trained();
    assert_eq!(code(&harpnet(&d, &["encode", "--model", "m.hrpm", "clips/a.wav", "a.hrp"])), 0);
    let mut bytes = fs::read(d.join("a.hrp")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(d.join("t.hrp"), &bytes).unwrap();
    let out = harpnet(&d, &["decode", "--model", "m.hrpm", "t.hrp", "t.wav"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(!d.join("t.wav").exists());

    fs::write(d.join("junk.hrp"), b"not a stream").unwrap();
    assert_eq!(code(&harpnet(&d, &["decode", "--model", "m.hrpm", "junk.hrp", "j.wav"])), 5);
}

#[test]
fn mismatched_model_exits_4() {
    let (_tmp, d) = trained();
    assert_eq!(code(&harpnet(&d, &["encode", "--model", "m.hrpm", "clips/a.wav", "a.hrp"])), 0);
    let out = harpnet(&d, &["train", "--config", "toy.cfg", "--model", "m0.hrpm", "--skip-aes", "0"]);
    assert_eq!(code(&out), 0);
    let out = harpnet(&d, &["decode", "--model", "m0.hrpm", "a.hrp", "x.wav"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("skip autoencoders"));
}

#[test]
fn eval_and_compare() {
    let (_tmp, d) = trained();
    let out = harpnet(&d, &["eval", "--model", "m.hrpm", "--bitrate", "64", "--out", "m.eval", "clips"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(d.join("m.eval")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "# model\tm");
    assert_eq!(rows[1], "# bitrate\t64");
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[3].split('\t').nth(1), rows[4].split('\t').nth(1));

    let out = harpnet(&d, &["train", "--config", "toy.cfg", "--model", "plain.hrpm", "--skip-aes", "0"]);
    assert_eq!(code(&out), 0);
    let out = harpnet(&d, &["eval", "--model", "plain.hrpm", "--bitrate", "64", "--out", "p.eval", "clips"]);
    assert_eq!(code(&out), 0);
    let out = harpnet(&d, &["compare", "--plot-data", "plot.tsv", "p.eval", "m.eval"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["bitrate", "m", "plain"]);
    let plot = fs::read_to_string(d.join("plot.tsv")).unwrap();
    let rows: Vec<&str> = plot.lines().collect();
    assert_eq!(rows[0], "model\tbitrate\tmean_snr_db\tstd_snr_db");
    assert!(rows[1].starts_with("m\t64\t"));
    assert!(rows[2].starts_with("plain\t64\t"));

    fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(code(&harpnet(&d, &["eval", "--model", "m.hrpm", "empty"])), 2);
    assert_eq!(code(&harpnet(&d, &["compare", "m.eval"])), 2);
}
