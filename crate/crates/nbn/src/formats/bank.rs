//! `.nbnb` noise-band cache.
//!
//! Header: magic `NBNB`, version, phase-generator id, the filterbank
//! configuration (Fs, M, f_min, transition fraction, attenuation, linear
//! fraction), padded band length, global seed, `a_max`, and the SHA-256 of
//! the configuration. The payload is `M · L` 32-bit floats, band after band.

use std::path::Path;

use nbn_core::filter_design::FilterbankConfig;
use nbn_core::noise_bank::{NoiseBandBank, PHASE_GENERATOR_ID};

use super::{atomic_write, put_f32s, put_f64, put_u32, put_u64, Decoder};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NBNB";
pub const VERSION: u32 = 1;

pub fn save_bank(bank: &NoiseBandBank, path: &Path) -> Result<()> {
    atomic_write(path, |out| {
        out.write_all(MAGIC)?;
        put_u32(out, VERSION)?;
        put_u32(out, bank.generator_id)?;
        out.write_all(&bank.config.to_bytes())?;
        put_u64(out, bank.band_len() as u64)?;
        put_u64(out, bank.seed)?;
        put_f64(out, bank.a_max)?;
        out.write_all(&bank.config_hash)?;
        put_f32s(out, bank.samples().iter().copied())
    })
}

/// Header fields, readable without loading the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct BankHeader {
    pub generator_id: u32,
    pub config: FilterbankConfig,
    pub band_len: usize,
    pub seed: u64,
    pub a_max: f64,
    pub config_hash: [u8; 32],
}

fn read_header(d: &mut Decoder) -> Result<BankHeader> {
    d.magic(MAGIC)?;
    d.version(VERSION)?;
    let generator_id = d.u32("the generator id")?;
    let config = FilterbankConfig {
        sample_rate: d.f64("the sample rate")?,
        num_filters: d.u64("the band count")? as usize,
        f_min: d.f64("f_min")?,
        transition_fraction: d.f64("the transition fraction")?,
        stopband_attenuation_db: d.f64("the stopband attenuation")?,
        linear_fraction: d.f64("the linear fraction")?,
    };
    let band_len = d.u64("the band length")? as usize;
    let seed = d.u64("the seed")?;
    let a_max = d.f64("a_max")?;
    let config_hash = d.bytes::<32>("the configuration hash")?;
    if config.hash() != config_hash {
        return Err(d.corrupt("configuration hash does not match the stored configuration"));
    }
    if config.validate().is_err() || band_len == 0 || !band_len.is_power_of_two() {
        return Err(d.corrupt("header describes an invalid filterbank"));
    }
    if generator_id != PHASE_GENERATOR_ID {
        return Err(Error::Mismatch(format!(
            "{}: baked with phase generator {generator_id}, this build uses {PHASE_GENERATOR_ID}",
            d.path().display()
        )));
    }
    Ok(BankHeader { generator_id, config, band_len, seed, a_max, config_hash })
}

pub fn read_bank_header(path: &Path) -> Result<BankHeader> {
    read_header(&mut Decoder::open(path)?)
}

pub fn load_bank(path: &Path) -> Result<NoiseBandBank> {
    let mut d = Decoder::open(path)?;
    let h = read_header(&mut d)?;
    let count = h
        .config
        .num_filters
        .checked_mul(h.band_len)
        .ok_or_else(|| d.corrupt("payload size overflows"))?;
    let samples = d.f32s(count, "the band payload")?;
    d.finish()?;
    Ok(NoiseBandBank::from_parts(h.config, h.seed, h.a_max, h.band_len, samples)?)
}

/// Loads a bank and rejects it unless it was baked from `config_hash` with
/// `seed`.
pub fn load_bank_expecting(path: &Path, config_hash: &[u8; 32], seed: u64) -> Result<NoiseBandBank> {
    let header = read_bank_header(path)?;
    if &header.config_hash != config_hash {
        return Err(Error::Mismatch(format!(
            "{}: filterbank configuration hash {} differs from the expected {}",
            path.display(),
            hex(&header.config_hash),
            hex(config_hash)
        )));
    }
    if header.seed != seed {
        return Err(Error::Mismatch(format!(
            "{}: baked with seed {}, expected {seed}",
            path.display(),
            header.seed
        )));
    }
    load_bank(path)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
