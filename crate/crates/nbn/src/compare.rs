//! Trains several synthesiser backends with one trunk configuration and step
//! budget, then scores their reconstructions of the training audio.

use std::path::Path;

use nbn_core::baseline::{baseline_model_config, FirNoise};
use nbn_core::features::resample_curve;
use nbn_core::loss::{stft_mag, Mrstft, MrstftConfig};
use nbn_core::model::{ModelConfig, ModelParams};
use nbn_core::noise_bank::NoiseBandBank;
use nbn_core::training::{smooth, Dataset, Renderer, TrainConfig, Trainer, SMOOTHING_WINDOW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::checkpoint::Backend;

/// Parses `filterbank`, `baseline` and `baseline:<taps>` entries.
pub fn parse_backends(list: &str, default_taps: usize) -> Result<Vec<Backend>> {
    let parsed = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| match item.split_once(':') {
            None if item == "filterbank" => Ok(Backend::NoiseBands),
            None if item == "baseline" => Ok(Backend::FirNoise { taps: default_taps }),
            Some(("baseline", taps)) => match taps.parse::<usize>() {
                Ok(t) if t >= 2 && t % 2 == 0 => Ok(Backend::FirNoise { taps: t }),
                _ => Err(Error::Usage(format!("`{taps}` is not an even FIR length"))),
            },
            _ => Err(Error::Usage(format!(
                "unknown backend `{item}` (expected filterbank, baseline or baseline:<taps>)"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    if parsed.is_empty() {
        return Err(Error::Usage("no backends given".into()));
    }
    Ok(parsed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub hidden: usize,
    pub out_mlp_depth: usize,
    pub train: TrainConfig,
    pub steps: usize,
    /// Renders averaged per score, each with its own variation.
    pub renders: usize,
}

/// Audio to reconstruct and its internal-rate controls.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTarget {
    pub audio: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
}

impl EvalTarget {
    /// The first `len` samples of the dataset, before any tiling.
    pub fn from_dataset(ds: &Dataset, len: usize, w: usize) -> Self {
        let len = len.min(ds.len());
        let frames = len.div_ceil(w).max(1);
        Self {
            audio: ds.audio[..len].to_vec(),
            controls: ds.controls.iter().map(|c| resample_curve(&c.values[..len], frames)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendReport {
    pub backend: String,
    pub outputs: usize,
    pub params: usize,
    pub steps: usize,
    pub final_train_loss: f64,
    pub mrstft: f64,
    pub envelope_error_db: f64,
    pub spectral_error_db: f64,
}

pub fn model_config(backend: Backend, num_controls: usize, hidden: usize, depth: usize, bands: usize) -> ModelConfig {
    match backend {
        Backend::NoiseBands => ModelConfig { num_controls, hidden, num_bands: bands, out_mlp_depth: depth },
        Backend::FirNoise { taps } => baseline_model_config(num_controls, hidden, depth, taps),
    }
}

pub fn train_and_evaluate(
    ds: &Dataset,
    target: &EvalTarget,
    backend: Backend,
    bank: Option<&NoiseBandBank>,
    cfg: &CompareConfig,
) -> Result<(ModelParams, BackendReport)> {
    match backend {
        Backend::NoiseBands => {
            let bank = bank.ok_or_else(|| Error::Usage("the filterbank backend needs --bank".into()))?;
            run(ds, target, backend, bank, cfg)
        }
        Backend::FirNoise { taps } => run(ds, target, backend, &FirNoise::new(taps)?, cfg),
    }
}

fn run<R: Renderer>(
    ds: &Dataset,
    target: &EvalTarget,
    backend: Backend,
    renderer: &R,
    cfg: &CompareConfig,
) -> Result<(ModelParams, BackendReport)> {
    let model = model_config(backend, ds.controls.len(), cfg.hidden, cfg.out_mlp_depth, renderer.num_outputs());
    // the trunk blocks precede the output layer, so every backend starts
    // from the same trunk weights
    let params = ModelParams::init(model, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let loss = Mrstft::new(&MrstftConfig::default())?;
    let mut trainer = Trainer::new(params, cfg.train, loss.clone())?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        losses.push(trainer.step(ds, renderer)?.loss);
    }
    let final_train_loss = smooth(&losses, SMOOTHING_WINDOW).last().copied().unwrap_or(f64::NAN);
    let scores = evaluate(&trainer.params, renderer, target, cfg.train.w, cfg.train.seed, cfg.renders, &loss)?;
    let report = BackendReport {
        backend: backend.label(),
        outputs: model.num_bands,
        params: model.param_count(),
        steps: cfg.steps,
        final_train_loss,
        mrstft: scores.0,
        envelope_error_db: scores.1,
        spectral_error_db: scores.2,
    };
    Ok((trainer.params, report))
}

/// Mean MRSTFT, envelope error and spectral error over `renders` variations.
pub fn evaluate<R: Renderer>(
    params: &ModelParams,
    renderer: &R,
    target: &EvalTarget,
    w: usize,
    seed: u64,
    renders: usize,
    loss: &Mrstft,
) -> Result<(f64, f64, f64)> {
    let amps = params.forward(&target.controls)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let n = renders.max(1);
    let mut acc = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let variation = renderer.draw_variation(&mut rng);
        let mut out = renderer.render(&amps, w, variation)?;
        out.truncate(target.audio.len());
        acc.0 += loss.loss(&target.audio, &out)?;
        acc.1 += envelope_error_db(&target.audio, &out, w);
        acc.2 += spectral_error_db(&target.audio, &out)?;
    }
    Ok((acc.0 / n as f64, acc.1 / n as f64, acc.2 / n as f64))
}

const POWER_FLOOR_DB: f64 = -80.0;

fn db(power: f64) -> f64 {
    (10.0 * power.log10()).max(POWER_FLOOR_DB)
}

/// Mean absolute difference, in dB, of the mean power over consecutive
/// `w`-sample blocks.
pub fn envelope_error_db(target: &[f64], estimate: &[f64], w: usize) -> f64 {
    let env = |x: &[f64]| -> Vec<f64> {
        x.chunks(w.max(1)).map(|c| db(c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)).collect()
    };
    let (a, b) = (env(target), env(estimate));
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().min(b.len()).max(1) as f64
}

pub const SPECTRUM_FFT: usize = 2048;

/// Mean absolute difference, in dB, of the long-term average power
/// spectra (Hann, 2048-point frames, 75% overlap).
pub fn spectral_error_db(target: &[f64], estimate: &[f64]) -> Result<f64> {
    let average = |x: &[f64]| -> Result<Vec<f64>> {
        let s = stft_mag(x, SPECTRUM_FFT, SPECTRUM_FFT / 4, SPECTRUM_FFT)?;
        let mut power = vec![0.0; s.bins];
        for row in s.values.chunks(s.bins) {
            power.iter_mut().zip(row).for_each(|(p, m)| *p += m * m / s.frames as f64);
        }
        Ok(power.into_iter().map(db).collect())
    };
    let (a, b) = (average(target)?, average(estimate)?);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn write_report(path: &Path, reports: &[BackendReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    crate::formats::atomic_write(path, |out| out.write_all(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_lists() {
        assert_eq!(
            parse_backends("filterbank, baseline:512,baseline", 1024).unwrap(),
            vec![Backend::NoiseBands, Backend::FirNoise { taps: 512 }, Backend::FirNoise { taps: 1024 }]
        );
        assert!(matches!(parse_backends("ddsp", 1024), Err(Error::Usage(_))));
        assert!(matches!(parse_backends("baseline:511", 1024), Err(Error::Usage(_))));
        assert!(matches!(parse_backends("", 1024), Err(Error::Usage(_))));
    }

    #[test]
    fn error_metrics_vanish_on_identical_signals() {
        let x: Vec<f64> = (0..5000).map(|i| ((i * 37 % 101) as f64 / 50.0 - 1.0) * 0.3).collect();
        assert_eq!(envelope_error_db(&x, &x, 32), 0.0);
        assert_eq!(spectral_error_db(&x, &x).unwrap(), 0.0);
        let half: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let e = envelope_error_db(&x, &half, 32);
        assert!((e - 20.0 * 2f64.log10()).abs() < 1e-9, "{e}");
        assert!((spectral_error_db(&x, &half).unwrap() - e).abs() < 0.5);
    }
}
