//! Small signal-processing helpers shared by the feature extractors, the
//! spectral loss and the filter measurements.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

/// Periodic Hann window (the spectral-analysis convention).
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Maps an index of a reflect-padded signal back into `0..len`.
///
/// Reflection is applied repeatedly, so padding longer than the signal is
/// valid (the signal is mirrored as many times as needed).
#[inline]
pub fn reflect_index(pos: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = pos.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

pub fn next_power_of_two(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Magnitude response of an FIR filter on a `grid_len`-point DFT grid
/// (bins `0..=grid_len/2`).
pub fn magnitude_response(taps: &[f64], grid_len: usize) -> Result<Vec<f64>> {
    if taps.len() > grid_len {
        return Err(Error::InvalidInput(format!(
            "{} taps do not fit a {grid_len}-point grid",
            taps.len()
        )));
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(grid_len);
    let mut input = fft.make_input_vec();
    input[..taps.len()].copy_from_slice(taps);
    let mut spectrum = fft.make_output_vec();
    fft.process(&mut input, &mut spectrum)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(spectrum.iter().map(|c| c.norm()).collect())
}

/// Real-input spectrum of a whole signal.
pub fn rfft(signal: &[f64]) -> Vec<Complex64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(signal.len());
    let mut input = signal.to_vec();
    let mut spectrum = fft.make_output_vec();
    fft.process(&mut input, &mut spectrum)
        .expect("buffer sizes come from the plan");
    spectrum
}

/// Centered short-time Fourier transform with cached FFT plans.
///
/// Frame `i` is centered on sample `i * hop` of the reflect-padded input.
#[derive(Clone)]
pub struct Stft {
    fft_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    /// Hann-windowed STFT; a window shorter than the FFT is zero-padded on
    /// both sides.
    pub fn new(fft_size: usize, hop: usize, window_len: usize) -> Result<Self> {
        if fft_size < 2 || hop == 0 || window_len == 0 || window_len > fft_size {
            return Err(Error::Config(format!(
                "invalid STFT resolution fft={fft_size} hop={hop} window={window_len}"
            )));
        }
        let mut window = vec![0.0; fft_size];
        let left = (fft_size - window_len) / 2;
        window[left..left + window_len].copy_from_slice(&hann_periodic(window_len));
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            fft_size,
            hop,
            window,
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Frame count of a centered STFT: `1 + len / hop`.
    pub fn num_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Complex spectra of `num_frames` frames, row-major (frame, bin).
    pub fn spectra(&self, audio: &[f64], num_frames: usize) -> Vec<Complex64> {
        let n = self.fft_size;
        let half = (n / 2) as isize;
        let bins = self.bins();
        let mut out = vec![Complex64::new(0.0, 0.0); num_frames * bins];
        let mut frame = self.forward.make_input_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for (f, spec) in out.chunks_exact_mut(bins).enumerate() {
            let start = (f * self.hop) as isize - half;
            for (j, slot) in frame.iter_mut().enumerate() {
                let src = reflect_index(start + j as isize, audio.len());
                *slot = audio[src] * self.window[j];
            }
            self.forward
                .process_with_scratch(&mut frame, spec, &mut scratch)
                .expect("buffer sizes come from the plan");
        }
        out
    }

    /// Adjoint of [`Stft::spectra`]: maps a gradient with respect to the
    /// real and imaginary parts of every bin (packed as `re + i*im`) back
    /// onto the `len` input samples.
    pub fn spectra_adjoint(&self, grad: &[Complex64], len: usize) -> Vec<f64> {
        let n = self.fft_size;
        let bins = self.bins();
        let half = (n / 2) as isize;
        let mut out = vec![0.0; len];
        let mut spec = self.inverse.make_input_vec();
        let mut time = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        for (f, g) in grad.chunks_exact(bins).enumerate() {
            // d/dx_n = Re sum_k G_k e^{+i 2 pi k n / N}; the inverse real FFT
            // doubles the interior bins and ignores the imaginary part of the
            // DC and Nyquist bins, whose spectra are real anyway.
            spec[0] = Complex64::new(g[0].re, 0.0);
            for k in 1..bins - 1 {
                spec[k] = g[k] * 0.5;
            }
            spec[bins - 1] = Complex64::new(g[bins - 1].re, 0.0);
            self.inverse
                .process_with_scratch(&mut spec, &mut time, &mut scratch)
                .expect("buffer sizes come from the plan");
            let start = (f * self.hop) as isize - half;
            for (j, v) in time.iter().enumerate() {
                let w = self.window[j];
                if w != 0.0 {
                    out[reflect_index(start + j as isize, len)] += v * w;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(5) from standard tables
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_44).abs() < 1e-11);
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let idx: Vec<usize> = (-3..7).map(|p| reflect_index(p, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-10, 1), 0);
    }

    #[test]
    fn stft_adjoint_matches_inner_product() {
        let stft = Stft::new(16, 4, 12).unwrap();
        let x: Vec<f64> = (0..23).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let frames = stft.num_frames(x.len());
        let spec = stft.spectra(&x, frames);
        let g: Vec<Complex64> = (0..spec.len())
            .map(|i| Complex64::new(((i * 3) % 5) as f64 - 2.0, ((i * 5) % 7) as f64 - 3.0))
            .collect();
        // <A x, g> over real/imag parts equals <x, A^T g>
        let lhs: f64 = spec.iter().zip(&g).map(|(s, g)| s.re * g.re + s.im * g.im).sum();
        let back = stft.spectra_adjoint(&g, x.len());
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
