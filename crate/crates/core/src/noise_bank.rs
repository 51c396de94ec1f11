//! Deterministic, loopable noise bands.
//!
//! Each band is the inverse FFT of its filter's magnitude response with a
//! uniformly random phase. The spectrum is built on the circular grid of the
//! padded filter length, so a band concatenated with itself has no seam.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::filter_design::{Filterbank, FilterbankConfig};

/// Identifier of the phase generator: ChaCha8 keyed by the global seed, one
/// stream per band. Bump when the phase derivation changes.
pub const PHASE_GENERATOR_ID: u32 = 1;

/// Phase generator for one band.
pub fn band_rng(seed: u64, band_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(band_index);
    rng
}

/// Bakes one band from a padded impulse response.
pub fn bake_band(padded_ir: &[f64], seed: u64, band_index: u64) -> Result<Vec<f64>> {
    let n = padded_ir.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "impulse response length {n} is not a power of two"
        )));
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let mut input = padded_ir.to_vec();
    let mut spectrum = forward.make_output_vec();
    forward
        .process(&mut input, &mut spectrum)
        .expect("buffer sizes come from the plan");

    let mut rng = band_rng(seed, band_index);
    let last = spectrum.len() - 1;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        let mag = bin.norm();
        *bin = if k == 0 || k == last {
            Complex64::new(mag, 0.0)
        } else {
            Complex64::from_polar(mag, rng.gen_range(-PI..=PI))
        };
    }

    let mut band = inverse.make_output_vec();
    inverse
        .process(&mut spectrum, &mut band)
        .expect("buffer sizes come from the plan");
    let scale = 1.0 / n as f64;
    band.iter_mut().for_each(|x| *x *= scale);
    Ok(band)
}

/// `M` equal-length loopable bands scaled by one global factor.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBandBank {
    num_bands: usize,
    band_len: usize,
    /// Band-major samples, `num_bands * band_len` values.
    samples: Vec<f32>,
    pub a_max: f64,
    pub seed: u64,
    pub config: FilterbankConfig,
    pub config_hash: [u8; 32],
    pub generator_id: u32,
}

impl NoiseBandBank {
    /// Assembles a bank from already-scaled samples, checking the layout.
    pub fn from_parts(
        config: FilterbankConfig,
        seed: u64,
        a_max: f64,
        band_len: usize,
        samples: Vec<f32>,
    ) -> Result<Self> {
        if band_len == 0 || samples.len() % band_len != 0 {
            return Err(Error::Dimension(format!(
                "{} samples do not split into bands of {band_len}",
                samples.len()
            )));
        }
        let num_bands = samples.len() / band_len;
        if num_bands != config.num_filters {
            return Err(Error::Dimension(format!(
                "{num_bands} bands for a {}-filter configuration",
                config.num_filters
            )));
        }
        Ok(Self {
            num_bands,
            band_len,
            samples,
            a_max,
            seed,
            config_hash: config.hash(),
            config,
            generator_id: PHASE_GENERATOR_ID,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn band_len(&self) -> usize {
        self.band_len
    }

    pub fn band(&self, m: usize) -> Result<&[f32]> {
        if m >= self.num_bands {
            return Err(Error::BandIndex { index: m, bands: self.num_bands });
        }
        Ok(&self.samples[m * self.band_len..(m + 1) * self.band_len])
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    /// Payload size in bytes at 32 bits per sample.
    pub fn payload_bytes(&self) -> usize {
        self.samples.len() * std::mem::size_of::<f32>()
    }

    /// Sample `n` of band `m` after rolling the band by `shift`; any `n`
    /// is valid because bands loop.
    pub fn band_sample(&self, m: usize, n: usize, shift: usize) -> Result<f32> {
        let band = self.band(m)?;
        Ok(band[(n % self.band_len + shift % self.band_len) % self.band_len])
    }

    pub fn max_abs(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |acc, x| acc.max(x.abs()))
    }
}

/// Bakes every band of `fb`, then divides all bands by the largest absolute
/// sample across the bank.
pub fn bake_bank(fb: &Filterbank, seed: u64) -> Result<NoiseBandBank> {
    let baked = fb.map_padded(|m, ir| -> Result<(Vec<f32>, f64)> {
        let band = bake_band(&ir, seed, m as u64)?;
        let peak = band.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        Ok((band.into_iter().map(|x| x as f32).collect(), peak))
    });
    let mut a_max = 0.0f64;
    let mut samples = Vec::with_capacity(fb.len() * fb.padded_len);
    let mut bands = Vec::with_capacity(fb.len());
    for item in baked {
        let (band, peak) = item?;
        a_max = a_max.max(peak);
        bands.push(band);
    }
    if !(a_max > 0.0) {
        return Err(Error::InvalidInput("every baked band is silent".into()));
    }
    for band in bands {
        samples.extend(band.into_iter().map(|x| (x as f64 / a_max) as f32));
    }
    NoiseBandBank::from_parts(fb.config, seed, a_max, fb.padded_len, samples)
}
