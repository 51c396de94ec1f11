//! Loaded models and rendering shared by the CLI and the service.

use std::path::Path;
use std::sync::Arc;

use nbn_core::baseline::FirNoise;
use nbn_core::creative::{render_variation, Randomization};
use nbn_core::features::{resample_curve, ControlCurve, CurveRate};
use nbn_core::model::AmplitudeFrameMatrix;
use nbn_core::noise_bank::NoiseBandBank;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats::checkpoint::{load_checkpoint, Backend, Checkpoint, ControlKind};

/// The synthesiser a checkpoint drives.
#[derive(Debug, Clone)]
pub enum Synth {
    Bank(Arc<NoiseBandBank>),
    Fir(FirNoise),
}

impl Synth {
    pub fn render(
        &self,
        amps: &AmplitudeFrameMatrix,
        schemes: &[Randomization],
        w: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        Ok(match self {
            Synth::Bank(bank) => render_variation(amps, schemes, bank.as_ref(), w, seed)?,
            Synth::Fir(fir) => render_variation(amps, schemes, fir, w, seed)?,
        })
    }
}

/// Per-channel seeds for a render. Mono uses `seed` itself.
pub fn channel_seeds(seed: u64, stereo: bool) -> Vec<u64> {
    if !stereo {
        return vec![seed];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    vec![rng.next_u64(), rng.next_u64()]
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub id: String,
    pub checkpoint: Checkpoint,
    pub synth: Synth,
    /// Set when a bank mismatch was explicitly allowed.
    pub warning: Option<String>,
}

pub fn load_model(path: &Path, bank: Option<Arc<NoiseBandBank>>, allow_bank_mismatch: bool) -> Result<LoadedModel> {
    let checkpoint = load_checkpoint(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (synth, warning) = match checkpoint.backend {
        Backend::NoiseBands => {
            let bank = bank.ok_or_else(|| {
                Error::Usage(format!("{} uses the filterbank backend; pass --bank", path.display()))
            })?;
            if bank.num_bands() != checkpoint.params.config().num_bands {
                return Err(Error::Mismatch(format!(
                    "{} predicts {} bands but the bank has {}",
                    path.display(),
                    checkpoint.params.config().num_bands,
                    bank.num_bands()
                )));
            }
            let warning = checkpoint.check_bank(&bank, allow_bank_mismatch)?;
            (Synth::Bank(bank), warning)
        }
        Backend::FirNoise { taps } => (Synth::Fir(FirNoise::new(taps)?), None),
    };
    Ok(LoadedModel { id, checkpoint, synth, warning })
}

/// Randomisation and channel options of one render.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderOptions {
    pub schemes: Vec<Randomization>,
    pub stereo: bool,
    pub seed: u64,
}

impl LoadedModel {
    pub fn w(&self) -> usize {
        self.checkpoint.w
    }

    pub fn num_controls(&self) -> usize {
        self.checkpoint.params.config().num_controls
    }

    /// Internal-rate controls from one curve per control. Audio-rate
    /// curves are reduced to `ceil(len / W)` frames; `frames` overrides the
    /// length taken from the first curve.
    pub fn controls_from_curves(&self, curves: &[ControlCurve], frames: Option<usize>) -> Result<Vec<Vec<f64>>> {
        if curves.len() != self.num_controls() {
            return Err(Error::Usage(format!(
                "model `{}` takes {} control curve(s), got {}",
                self.id,
                self.num_controls(),
                curves.len()
            )));
        }
        let natural = |c: &ControlCurve| match c.rate {
            CurveRate::Internal => c.len(),
            CurveRate::Audio => c.len().div_ceil(self.w()),
        };
        let target = frames.unwrap_or_else(|| natural(&curves[0]));
        if target == 0 || curves.iter().any(|c| c.is_empty()) {
            return Err(Error::Usage("control curves must not be empty".into()));
        }
        Ok(curves
            .iter()
            .map(|c| {
                let own = resample_curve(&c.values, natural(c));
                resample_curve(&own, target)
            })
            .collect())
    }

    /// Controls extracted from audio with the training normalisation.
    pub fn controls_from_audio(&self, audio: &[f64], sample_rate: f64) -> Result<Vec<Vec<f64>>> {
        if sample_rate != self.checkpoint.sample_rate {
            return Err(Error::Mismatch(format!(
                "audio is at {sample_rate} Hz, model `{}` was trained at {} Hz",
                self.id, self.checkpoint.sample_rate
            )));
        }
        let frames = audio.len().div_ceil(self.w()).max(1);
        self.checkpoint
            .controls
            .iter()
            .map(|spec| match spec.kind {
                ControlKind::Feature(kind) => {
                    let raw = resample_curve(&kind.extract(audio, sample_rate)?, audio.len());
                    let unit: Vec<f64> = raw.iter().map(|&v| spec.norm.normalize(v)).collect();
                    Ok(resample_curve(&unit, frames))
                }
                ControlKind::Curve => Err(Error::Usage(format!(
                    "control `{}` was a drawn curve and cannot be extracted from audio; pass --curve",
                    spec.name
                ))),
            })
            .collect()
    }

    /// One channel per seed, each exactly `frames · W` samples long.
    pub fn synthesize(&self, controls: &[Vec<f64>], opts: &RenderOptions) -> Result<Vec<Vec<f64>>> {
        let amps = self.checkpoint.params.forward(controls)?;
        channel_seeds(opts.seed, opts.stereo)
            .into_iter()
            .map(|seed| self.synth.render(&amps, &opts.schemes, self.w(), seed))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stereo_seeds_differ_and_are_reproducible() {
        let a = channel_seeds(5, true);
        assert_eq!(a, channel_seeds(5, true));
        assert_ne!(a[0], a[1]);
        assert_eq!(channel_seeds(5, false), vec![5]);
    }
}
