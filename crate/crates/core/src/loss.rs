//! Multi-resolution STFT loss and its gradient.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dsp::Stft;
use crate::error::{Error, Result};

pub const LOG_CLAMP: f64 = 1e-7;
/// Lower bound on the target norm in the spectral-convergence ratio, so a
/// silent target yields a finite loss.
pub const SC_DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub fft_size: usize,
    pub hop: usize,
    pub window_len: usize,
}

impl Resolution {
    /// Full-length window with 75% overlap.
    pub fn new(fft_size: usize) -> Self {
        Self { fft_size, hop: (fft_size / 4).max(1), window_len: fft_size }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrstftConfig {
    pub resolutions: Vec<Resolution>,
}

impl Default for MrstftConfig {
    fn default() -> Self {
        Self::from_fft_sizes(&[8192, 4096, 2048, 1024, 512, 128, 32])
    }
}

impl MrstftConfig {
    pub fn from_fft_sizes(sizes: &[usize]) -> Self {
        Self { resolutions: sizes.iter().map(|&n| Resolution::new(n)).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::Config("at least one STFT resolution is required".into()));
        }
        for r in &self.resolutions {
            if r.hop == 0 || r.window_len == 0 || r.window_len > r.fft_size || r.fft_size < 2 {
                return Err(Error::Config(format!("invalid STFT resolution {r:?}")));
            }
        }
        Ok(())
    }
}

/// Magnitude frames of a centered, Hann-windowed STFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major (frame, bin).
    pub values: Vec<f64>,
}

pub fn stft_mag(audio: &[f64], fft_size: usize, hop: usize, window_len: usize) -> Result<Spectrogram> {
    if audio.is_empty() {
        return Err(Error::InvalidInput("empty audio".into()));
    }
    let stft = Stft::new(fft_size, hop, window_len)?;
    let frames = stft.num_frames(audio.len());
    let values = stft.spectra(audio, frames).iter().map(|c| c.norm()).collect();
    Ok(Spectrogram { frames, bins: stft.bins(), values })
}

/// Loss with cached FFT plans for every resolution.
#[derive(Debug, Clone)]
pub struct Mrstft {
    stfts: Vec<Stft>,
}

struct Term {
    value: f64,
    grad: Option<Vec<f64>>,
}

impl Mrstft {
    pub fn new(config: &MrstftConfig) -> Result<Self> {
        config.validate()?;
        let stfts = config
            .resolutions
            .iter()
            .map(|r| Stft::new(r.fft_size, r.hop, r.window_len))
            .collect::<Result<_>>()?;
        Ok(Self { stfts })
    }

    fn check(x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("target has {} samples, estimate {}", x.len(), y.len())));
        }
        if x.is_empty() {
            return Err(Error::InvalidInput("empty audio".into()));
        }
        Ok(())
    }

    /// Mean over resolutions of spectral convergence plus mean absolute
    /// log-magnitude difference; `x` is the target.
    pub fn loss(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Self::check(x, y)?;
        let terms: Vec<Term> = self.stfts.par_iter().map(|s| term(s, x, y, false)).collect();
        Ok(terms.iter().map(|t| t.value).sum::<f64>() / terms.len() as f64)
    }

    /// Loss and its gradient with respect to `y`.
    pub fn loss_and_grad(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        Self::check(x, y)?;
        let terms: Vec<Term> = self.stfts.par_iter().map(|s| term(s, x, y, true)).collect();
        let scale = 1.0 / terms.len() as f64;
        let mut grad = vec![0.0; y.len()];
        let mut value = 0.0;
        for t in terms {
            value += t.value;
            for (g, v) in grad.iter_mut().zip(t.grad.expect("requested")) {
                *g += v * scale;
            }
        }
        Ok((value * scale, grad))
    }
}

fn term(stft: &Stft, x: &[f64], y: &[f64], with_grad: bool) -> Term {
    let frames = stft.num_frames(x.len());
    let sx = stft.spectra(x, frames);
    let sy = stft.spectra(y, frames);
    let k = sx.len() as f64;
    let (mut diff_sq, mut target_sq, mut log_sum) = (0.0, 0.0, 0.0);
    let mut mags = Vec::with_capacity(sx.len());
    for (a, b) in sx.iter().zip(&sy) {
        let (ma, mb) = (a.norm(), b.norm());
        diff_sq += (ma - mb) * (ma - mb);
        target_sq += ma * ma;
        log_sum += (ma.max(LOG_CLAMP).ln() - mb.max(LOG_CLAMP).ln()).abs();
        mags.push((ma, mb));
    }
    let denom = target_sq.sqrt().max(SC_DENOMINATOR_FLOOR);
    let diff = diff_sq.sqrt();
    let value = diff / denom + log_sum / k;
    if !with_grad {
        return Term { value, grad: None };
    }
    let grad_spec: Vec<Complex64> = sy
        .iter()
        .zip(&mags)
        .map(|(b, &(ma, mb))| {
            if mb == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let mut d_mag = 0.0;
            if diff > 0.0 {
                d_mag -= (ma - mb) / (diff * denom);
            }
            if mb > LOG_CLAMP {
                let gap = ma.max(LOG_CLAMP).ln() - mb.ln();
                if gap != 0.0 {
                    d_mag -= gap.signum() / (k * mb);
                }
            }
            b * (d_mag / mb)
        })
        .collect();
    Term { value, grad: Some(stft.spectra_adjoint(&grad_spec, y.len())) }
}

/// One-shot convenience wrapper around [`Mrstft::loss`].
pub fn mrstft(x: &[f64], y: &[f64], config: &MrstftConfig) -> Result<f64> {
    Mrstft::new(config)?.loss(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dc_sits_in_bin_zero() {
        let s = stft_mag(&vec![1.0; 4096], 512, 128, 512).unwrap();
        for row in s.values.chunks(s.bins) {
            let total: f64 = row.iter().sum();
            assert!(row[0] + row[1] > 0.99 * total);
            assert!(row[0] > row[1]);
        }
    }

    #[test]
    fn bin_centred_sine_leakage() {
        let n = 256;
        let bin = 20.0;
        let x: Vec<f64> = (0..8192).map(|i| (2.0 * PI * bin * i as f64 / n as f64).sin()).collect();
        let s = stft_mag(&x, n, 64, n).unwrap();
        let row = &s.values[10 * s.bins..11 * s.bins];
        let peak = row[20];
        assert!(row.iter().all(|&v| v <= peak));
        for (k, v) in row.iter().enumerate() {
            if (k as isize - 20).abs() > 1 {
                assert!(20.0 * (v / peak).log10() <= -31.0, "bin {k}");
            }
        }
    }

    #[test]
    fn windowed_parseval() {
        let x = noise(65_536, 1);
        let (n, hop) = (1024, 256);
        let stft = Stft::new(n, hop, n).unwrap();
        let spec = stft.spectra(&x, stft.num_frames(x.len()));
        let bins = stft.bins();
        let spectral: f64 = spec
            .chunks(bins)
            .flat_map(|row| row.iter().enumerate())
            .map(|(k, c)| if k == 0 || k == bins - 1 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
            .sum();
        let window_energy: f64 = stft.window().iter().map(|w| w * w).sum();
        let estimate = spectral * hop as f64 / (n as f64 * window_energy);
        let energy: f64 = x.iter().map(|v| v * v).sum();
        assert!((estimate / energy - 1.0).abs() < 0.01, "{estimate} vs {energy}");
    }

    #[test]
    fn identical_signals_have_zero_loss() {
        let x = noise(3000, 2);
        assert_eq!(mrstft(&x, &x, &MrstftConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn silent_estimate_has_unit_convergence_term() {
        let x = noise(4096, 3);
        let y = vec![0.0; 4096];
        let cfg = MrstftConfig::from_fft_sizes(&[512]);
        let total = mrstft(&x, &y, &cfg).unwrap();
        let s = stft_mag(&x, 512, 128, 512).unwrap();
        let log_term: f64 =
            s.values.iter().map(|m| (m.max(LOG_CLAMP).ln() - LOG_CLAMP.ln()).abs()).sum::<f64>() / s.values.len() as f64;
        assert!((total - 1.0 - log_term).abs() < 1e-9);
        assert!(log_term > 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(mrstft(&[0.0; 10], &[0.0; 11], &MrstftConfig::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = noise(1024, 4);
        let y: Vec<f64> = noise(1024, 5).iter().map(|v| 0.3 * v).collect();
        let loss = Mrstft::new(&MrstftConfig::default()).unwrap();
        let (value, grad) = loss.loss_and_grad(&x, &y).unwrap();
        assert!((value - loss.loss(&x, &y).unwrap()).abs() < 1e-12);
        let eps = 1e-6;
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let mut probe = y.clone();
        for i in (0..1024).step_by(7) {
            probe[i] = y[i] + eps;
            let up = loss.loss(&x, &probe).unwrap();
            probe[i] = y[i] - eps;
            let down = loss.loss(&x, &probe).unwrap();
            probe[i] = y[i];
            let fd = (up - down) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3 * scale);
            assert!(err < 1e-3, "sample {i}: {} vs {fd}", grad[i]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn loss_is_nonnegative(seed in 0u64..10_000, gain in 0.0f64..3.0, len in 64usize..600) {
            let x = noise(len, seed);
            let y: Vec<f64> = noise(len, seed + 1).iter().map(|v| v * gain).collect();
            let cfg = MrstftConfig::from_fft_sizes(&[256, 64, 32]);
            prop_assert!(mrstft(&x, &y, &cfg).unwrap() >= 0.0);
            prop_assert_eq!(mrstft(&y, &y, &cfg).unwrap(), 0.0);
        }
    }
}
