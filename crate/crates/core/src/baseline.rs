//! Comparison synthesiser: a time-varying FIR filter predicted per frame
//! and applied to white noise with overlap-add.
//!
//! The network trunk is the one of [`crate::model`] with `taps/2 + 1`
//! outputs, read as a magnitude response per frame. Each response becomes a
//! zero-phase impulse response, is rotated to be causal and Hann-windowed,
//! and filters that frame's `hop` samples of uniform noise. The filter
//! delay of `taps/2` samples is removed before cropping to `frames·hop`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::dsp::hann_periodic;
use crate::error::{Error, Result};
use crate::model::{AmplitudeFrameMatrix, ModelConfig};
use crate::training::Renderer;

/// Trunk configuration predicting `taps/2 + 1` magnitudes.
pub fn baseline_model_config(num_controls: usize, hidden: usize, out_mlp_depth: usize, taps: usize) -> ModelConfig {
    ModelConfig { num_controls, hidden, num_bands: taps / 2 + 1, out_mlp_depth }
}

/// Uniform `[-1, 1]` noise for a render.
pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

#[derive(Clone)]
pub struct FirNoise {
    taps: usize,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for FirNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FirNoise").field("taps", &self.taps).finish_non_exhaustive()
    }
}

impl FirNoise {
    pub fn new(taps: usize) -> Result<Self> {
        if taps < 2 || taps % 2 != 0 {
            return Err(Error::Config(format!("FIR length {taps} must be even and at least 2")));
        }
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            taps,
            window: hann_periodic(taps),
            forward: planner.plan_fft_forward(taps),
            inverse: planner.plan_fft_inverse(taps),
        })
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Windowed causal impulse response for every frame (frame-major).
    pub fn impulse_responses(&self, mags: &AmplitudeFrameMatrix) -> Result<Vec<f64>> {
        self.check(mags)?;
        let (n, t) = (self.taps, mags.frames());
        let bins = n / 2 + 1;
        let inverse = &self.inverse;
        let mut out = vec![0.0; t * n];
        let mut spec = inverse.make_input_vec();
        let mut time = inverse.make_output_vec();
        for (f, ir) in out.chunks_exact_mut(n).enumerate() {
            for (k, bin) in spec.iter_mut().enumerate().take(bins) {
                bin.re = mags.get(k, f);
                bin.im = 0.0;
            }
            inverse.process(&mut spec, &mut time).expect("buffer sizes come from the plan");
            for (i, slot) in ir.iter_mut().enumerate() {
                *slot = time[(i + n - n / 2) % n] / n as f64 * self.window[i];
            }
        }
        Ok(out)
    }

    fn check(&self, mags: &AmplitudeFrameMatrix) -> Result<()> {
        if mags.num_bands() != self.taps / 2 + 1 {
            return Err(Error::Dimension(format!(
                "{} magnitudes per frame for a {}-tap filter",
                mags.num_bands(),
                self.taps
            )));
        }
        if mags.frames() == 0 {
            return Err(Error::InvalidInput("no frames to render".into()));
        }
        Ok(())
    }

    /// Full overlap-added signal of `frames·hop + taps − 1` samples.
    pub fn render_full(&self, mags: &AmplitudeFrameMatrix, hop: usize, noise: &[f64]) -> Result<Vec<f64>> {
        let irs = self.impulse_responses(mags)?;
        let (n, t) = (self.taps, mags.frames());
        if noise.len() != t * hop {
            return Err(Error::Dimension(format!("{} noise samples for {t} frames of {hop}", noise.len())));
        }
        let mut out = vec![0.0; t * hop + n - 1];
        for f in 0..t {
            let ir = &irs[f * n..(f + 1) * n];
            for (i, &s) in noise[f * hop..(f + 1) * hop].iter().enumerate() {
                let dest = &mut out[f * hop + i..f * hop + i + n];
                dest.iter_mut().zip(ir).for_each(|(o, h)| *o += s * h);
            }
        }
        Ok(out)
    }
}

/// Renders magnitudes with `hop`-sample frames and noise drawn from `rng`;
/// the result has `frames·hop` samples after delay compensation.
pub fn render_baseline<R: Rng + ?Sized>(
    mags: &AmplitudeFrameMatrix,
    taps: usize,
    hop: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let fir = FirNoise::new(taps)?;
    fir.render(mags, hop, rng.gen())
}

impl Renderer for FirNoise {
    /// Seed of the white noise.
    type Variation = u64;

    fn num_outputs(&self) -> usize {
        self.taps / 2 + 1
    }

    fn draw_variation(&self, rng: &mut ChaCha8Rng) -> u64 {
        rng.gen()
    }

    fn render(&self, mags: &AmplitudeFrameMatrix, hop: usize, seed: u64) -> Result<Vec<f64>> {
        let len = mags.frames() * hop;
        let full = self.render_full(mags, hop, &white_noise(len, seed))?;
        let delay = self.taps / 2;
        Ok(full[delay..delay + len].to_vec())
    }

    fn backward(&self, mags: &AmplitudeFrameMatrix, hop: usize, seed: u64, d_audio: &[f64]) -> Result<Vec<f64>> {
        self.check(mags)?;
        let (n, t) = (self.taps, mags.frames());
        let len = t * hop;
        if d_audio.len() != len {
            return Err(Error::Dimension(format!("audio gradient of {} for {len} samples", d_audio.len())));
        }
        let noise = white_noise(len, seed);
        let delay = n / 2;
        let mut g = vec![0.0; len + n - 1];
        g[delay..delay + len].copy_from_slice(d_audio);
        let bins = n / 2 + 1;
        let per_frame: Vec<Vec<f64>> = (0..t)
            .into_par_iter()
            .map(|f| {
                // gradient with respect to the windowed impulse response
                let mut d_ir = vec![0.0; n];
                for (i, &s) in noise[f * hop..(f + 1) * hop].iter().enumerate() {
                    let src = &g[f * hop + i..f * hop + i + n];
                    d_ir.iter_mut().zip(src).for_each(|(d, v)| *d += s * v);
                }
                // undo the window and the rotation
                let mut d_zero_phase = vec![0.0; n];
                for (i, d) in d_ir.iter().enumerate() {
                    d_zero_phase[(i + n - n / 2) % n] = d * self.window[i];
                }
                let mut spec = self.forward.make_output_vec();
                self.forward.process(&mut d_zero_phase, &mut spec).expect("buffer sizes come from the plan");
                (0..bins)
                    .map(|k| {
                        let c = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
                        c * spec[k].re / n as f64
                    })
                    .collect()
            })
            .collect();
        let mut grad = vec![0.0; bins * t];
        for (f, frame) in per_frame.iter().enumerate() {
            for (k, v) in frame.iter().enumerate() {
                grad[k * t + f] = *v;
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{param_count, ModelParams};

    fn mags(taps: usize, t: usize, seed: u64) -> AmplitudeFrameMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins = taps / 2 + 1;
        AmplitudeFrameMatrix::new(bins, t, (0..bins * t).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn flat_response_passes_noise_through() {
        let fir = FirNoise::new(64).unwrap();
        let flat = AmplitudeFrameMatrix::filled(33, 20, 1.0);
        let out = fir.render(&flat, 32, 5).unwrap();
        assert_eq!(out.len(), 640);
        let noise = white_noise(640, 5);
        for (a, b) in out.iter().zip(&noise) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_length_contract() {
        let fir = FirNoise::new(256).unwrap();
        let m = mags(256, 10, 1);
        assert_eq!(fir.render_full(&m, 32, &white_noise(320, 0)).unwrap().len(), 320 + 255);
        assert_eq!(render_baseline(&m, 256, 32, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().len(), 320);
        assert!(FirNoise::new(255).is_err());
        assert!(matches!(fir.render(&mags(128, 10, 1), 32, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let fir = FirNoise::new(128).unwrap();
        let m = mags(128, 12, 2);
        assert_eq!(fir.render(&m, 32, 9).unwrap(), fir.render(&m, 32, 9).unwrap());
        assert_ne!(fir.render(&m, 32, 9).unwrap(), fir.render(&m, 32, 10).unwrap());
    }

    #[test]
    fn backward_is_the_adjoint() {
        let fir = FirNoise::new(64).unwrap();
        let m = mags(64, 9, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<f64> = (0..9 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = fir.render(&m, 32, 17).unwrap();
        let lhs: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
        let dm = fir.backward(&m, 32, 17, &g).unwrap();
        let rhs: f64 = m.values().iter().zip(&dm).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn parameter_count_is_linear_in_taps() {
        let count = |taps| param_count(&baseline_model_config(2, 128, 3, taps));
        let step = count(512) - count(256);
        assert_eq!(step, 128 * 129);
        assert_eq!(count(1024) - count(512), 2 * step);
        assert_eq!(count(4096) - count(1024), 12 * step);
    }

    #[test]
    fn trunk_drives_the_renderer() {
        let cfg = baseline_model_config(1, 8, 1, 256);
        let params = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let control = vec![(0..16).map(|i| i as f64 / 15.0).collect::<Vec<_>>()];
        let a = params.forward(&control).unwrap();
        assert_eq!(a.num_bands(), 129);
        assert_eq!(a, params.forward(&control).unwrap());
        let fir = FirNoise::new(256).unwrap();
        assert_eq!(fir.render(&a, 32, 0).unwrap().len(), 512);
    }
}
