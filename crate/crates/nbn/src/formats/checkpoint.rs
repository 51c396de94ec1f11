//! `.nbck` model checkpoints.
//!
//! Header: magic `NBCK`, version, the model configuration (C, hidden, output
//! count, output MLP depth), synthesiser backend tag and FIR length, W, the
//! sample rate, one record per control (name, kind, normalisation range),
//! the noise-bank configuration hash and seed, and the training step. The
//! payload is the flat parameter vector as 32-bit floats, in the block order
//! of [`nbn_core::model::ParamLayout`].

use std::path::Path;

use nbn_core::features::{FeatureKind, NormRange};
use nbn_core::model::{ModelConfig, ModelParams};
use nbn_core::noise_bank::NoiseBandBank;

use super::bank::hex;
use super::{atomic_write, put_f32s, put_f64, put_str, put_u32, put_u64, put_u8, Decoder};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NBCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    NoiseBands,
    FirNoise { taps: usize },
}

impl Backend {
    pub fn label(&self) -> String {
        match self {
            Backend::NoiseBands => "filterbank".into(),
            Backend::FirNoise { taps } => format!("baseline:{taps}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    Feature(FeatureKind),
    /// Supplied as a curve file at training time.
    Curve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    pub name: String,
    pub kind: ControlKind,
    pub norm: NormRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub backend: Backend,
    pub w: usize,
    pub sample_rate: f64,
    pub controls: Vec<ControlSpec>,
    /// Zeroed for backends without a bank.
    pub bank_hash: [u8; 32],
    pub bank_seed: u64,
    pub step: u64,
}

impl Checkpoint {
    /// Accepts `bank` if it matches the one used in training. A mismatch is
    /// an error unless `allow_mismatch`, in which case a warning is returned.
    pub fn check_bank(&self, bank: &NoiseBandBank, allow_mismatch: bool) -> Result<Option<String>> {
        if bank.config_hash == self.bank_hash && bank.seed == self.bank_seed {
            return Ok(None);
        }
        let msg = format!(
            "bank {} (seed {}) differs from the training bank {} (seed {})",
            &hex(&bank.config_hash)[..12],
            bank.seed,
            &hex(&self.bank_hash)[..12],
            self.bank_seed
        );
        if allow_mismatch {
            Ok(Some(msg))
        } else {
            Err(Error::Mismatch(format!("{msg}; pass --allow-bank-mismatch to synthesise anyway")))
        }
    }
}

fn kind_tag(kind: ControlKind) -> u8 {
    match kind {
        ControlKind::Feature(FeatureKind::Loudness) => 0,
        ControlKind::Feature(FeatureKind::Centroid) => 1,
        ControlKind::Curve => 2,
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let cfg = ck.params.config();
    if ck.controls.len() != cfg.num_controls {
        return Err(Error::Config(format!(
            "{} control records for a model with {} controls",
            ck.controls.len(),
            cfg.num_controls
        )));
    }
    atomic_write(path, |out| {
        out.write_all(MAGIC)?;
        put_u32(out, VERSION)?;
        for v in [cfg.num_controls, cfg.hidden, cfg.num_bands, cfg.out_mlp_depth] {
            put_u32(out, v as u32)?;
        }
        match ck.backend {
            Backend::NoiseBands => {
                put_u8(out, 0)?;
                put_u32(out, 0)?;
            }
            Backend::FirNoise { taps } => {
                put_u8(out, 1)?;
                put_u32(out, taps as u32)?;
            }
        }
        put_u32(out, ck.w as u32)?;
        put_f64(out, ck.sample_rate)?;
        for c in &ck.controls {
            put_str(out, &c.name)?;
            put_u8(out, kind_tag(c.kind))?;
            put_f64(out, c.norm.min)?;
            put_f64(out, c.norm.max)?;
        }
        out.write_all(&ck.bank_hash)?;
        put_u64(out, ck.bank_seed)?;
        put_u64(out, ck.step)?;
        put_u64(out, ck.params.flat().len() as u64)?;
        put_f32s(out, ck.params.flat().iter().map(|&v| v as f32))
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut d = Decoder::open(path)?;
    d.magic(MAGIC)?;
    d.version(VERSION)?;
    let mut dims = [0usize; 4];
    for (i, slot) in dims.iter_mut().enumerate() {
        *slot = d.u32(["the control count", "the hidden size", "the output count", "the MLP depth"][i])? as usize;
    }
    let config = ModelConfig { num_controls: dims[0], hidden: dims[1], num_bands: dims[2], out_mlp_depth: dims[3] };
    config.validate().map_err(|e| d.corrupt(e.to_string()))?;
    let backend = match (d.u8("the backend tag")?, d.u32("the FIR length")? as usize) {
        (0, _) => Backend::NoiseBands,
        (1, taps) if taps >= 2 && taps % 2 == 0 && taps / 2 + 1 == config.num_bands => Backend::FirNoise { taps },
        (tag, taps) => return Err(d.corrupt(format!("unknown backend {tag} with {taps} taps"))),
    };
    let w = d.u32("the synthesis window")? as usize;
    let sample_rate = d.f64("the sample rate")?;
    if w == 0 || !(sample_rate > 0.0) {
        return Err(d.corrupt("synthesis window and sample rate must be positive"));
    }
    let mut controls = Vec::with_capacity(config.num_controls);
    for _ in 0..config.num_controls {
        let name = d.string("a control name")?;
        let kind = match d.u8("a control kind")? {
            0 => ControlKind::Feature(FeatureKind::Loudness),
            1 => ControlKind::Feature(FeatureKind::Centroid),
            2 => ControlKind::Curve,
            t => return Err(d.corrupt(format!("unknown control kind {t}"))),
        };
        let norm = NormRange { min: d.f64("norm_min")?, max: d.f64("norm_max")? };
        controls.push(ControlSpec { name, kind, norm });
    }
    let bank_hash = d.bytes::<32>("the bank hash")?;
    let bank_seed = d.u64("the bank seed")?;
    let step = d.u64("the training step")?;
    let count = d.u64("the parameter count")? as usize;
    if count != config.param_count() {
        return Err(d.corrupt(format!("{count} parameters stored, the configuration needs {}", config.param_count())));
    }
    let values: Vec<f64> = d.f32s(count, "the parameters")?.into_iter().map(f64::from).collect();
    d.finish()?;
    let params = ModelParams::from_flat(config, values).map_err(|e| Error::corrupt(path, e.to_string()))?;
    Ok(Checkpoint { params, backend, w, sample_rate, controls, bank_hash, bank_seed, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn sample() -> Checkpoint {
        let config = ModelConfig { num_controls: 2, hidden: 8, num_bands: 16, out_mlp_depth: 2 };
        let init = ModelParams::init(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        let rounded = init.flat().iter().map(|&v| v as f32 as f64).collect();
        Checkpoint {
            params: ModelParams::from_flat(config, rounded).unwrap(),
            backend: Backend::NoiseBands,
            w: 32,
            sample_rate: 8000.0,
            controls: vec![
                ControlSpec {
                    name: "loudness".into(),
                    kind: ControlKind::Feature(FeatureKind::Loudness),
                    norm: NormRange { min: -60.0, max: -3.0 },
                },
                ControlSpec { name: "drawn".into(), kind: ControlKind::Curve, norm: NormRange { min: 0.0, max: 1.0 } },
            ],
            bank_hash: [7; 32],
            bank_seed: 9,
            step: 120,
        }
    }

    #[test]
    fn round_trip_and_identical_forward() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nbck");
        let ck = sample();
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let controls = vec![vec![0.1, 0.5, 0.9, 0.2], vec![0.0, 0.3, 0.3, 1.0]];
        assert_eq!(back.params.forward(&controls).unwrap(), ck.params.forward(&controls).unwrap());
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nbck");
        save_checkpoint(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Version { found: 2, expected: 1, .. })));
    }

    #[test]
    fn truncation_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nbck");
        save_checkpoint(&sample(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt { .. })));
    }
}
