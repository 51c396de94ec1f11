#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nbn_core::features::{ControlCurve, CurveRate, FeatureKind, NormRange};
use nbn_core::model::{ModelConfig, ModelParams};
use noisebandnet::formats::checkpoint::{save_checkpoint, Backend, Checkpoint, ControlKind, ControlSpec};
use noisebandnet::formats::curve::save_curve;
use noisebandnet::formats::wav::write_wav;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TOY_FS: u32 = 8000;

pub fn nbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbn")).args(args).output().expect("nbn runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Decaying noise bursts every 2000 samples.
pub fn impacts(len: usize) -> Vec<f64> {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    (0..len)
        .map(|i| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let white = (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            0.8 * white * (-((i % 2000) as f64) / 150.0).exp()
        })
        .collect()
}

pub fn write_clip(path: &Path, len: usize) {
    write_wav(path, &[&impacts(len)], TOY_FS).unwrap();
}

pub fn write_curve(path: &Path, values: Vec<f64>, rate: CurveRate) {
    let curve = ControlCurve::new("drawn", values, rate, NormRange { min: 0.0, max: 1.0 }).unwrap();
    save_curve(&curve, path).unwrap();
}

/// An untrained single-control checkpoint driving the FIR-noise backend.
pub fn fir_checkpoint(path: &Path, taps: usize, seed: u64) -> PathBuf {
    let config = nbn_core::baseline::baseline_model_config(1, 4, 1, taps);
    write_checkpoint(path, config, Backend::FirNoise { taps }, seed)
}

pub fn write_checkpoint(path: &Path, config: ModelConfig, backend: Backend, seed: u64) -> PathBuf {
    let params = ModelParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let ck = Checkpoint {
        params,
        backend,
        w: 32,
        sample_rate: TOY_FS as f64,
        controls: vec![ControlSpec {
            name: "loudness".into(),
            kind: ControlKind::Feature(FeatureKind::Loudness),
            norm: NormRange { min: -60.0, max: 0.0 },
        }],
        bank_hash: [0; 32],
        bank_seed: 0,
        step: 0,
    };
    save_checkpoint(&ck, path).unwrap();
    path.to_path_buf()
}
