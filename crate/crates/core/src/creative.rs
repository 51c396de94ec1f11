//! Variations of an amplitude matrix and loudness transfer.
//!
//! Both randomisations operate on internal-rate amplitudes before
//! upsampling, splitting the time axis into frames of `frame_len` values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{extract_loudness, resample_curve, NormRange};
use crate::model::{AmplitudeFrameMatrix, ModelParams};
use crate::training::Renderer;

fn frames(t: usize, frame_len: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let step = frame_len.max(1);
    (0..t).step_by(step).map(move |s| s..(s + step).min(t))
}

/// Per frame, multiplies every value of the `k` most energetic bands by one
/// draw from `[lo, hi]` per band. Other values are untouched.
pub fn randomize_topk<R: Rng + ?Sized>(
    amps: &AmplitudeFrameMatrix,
    frame_len: usize,
    k: usize,
    (lo, hi): (f64, f64),
    rng: &mut R,
) -> Result<AmplitudeFrameMatrix> {
    let m = amps.num_bands();
    if k == 0 || k > m {
        return Err(Error::InvalidInput(format!("k = {k} must lie in 1..={m}")));
    }
    if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("multiplier range [{lo}, {hi}] is invalid")));
    }
    if frame_len == 0 {
        return Err(Error::InvalidInput("frame length must be positive".into()));
    }
    let t = amps.frames();
    let mut out = amps.clone();
    for range in frames(t, frame_len) {
        let mut order: Vec<(f64, usize)> =
            (0..m).map(|b| (amps.row(b)[range.clone()].iter().sum::<f64>(), b)).collect();
        // energy descending, ties broken by band index
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, band) in &order[..k] {
            let factor = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            let row = &mut out.values_mut()[band * t..(band + 1) * t];
            row[range.clone()].iter_mut().for_each(|v| *v *= factor);
        }
    }
    Ok(out)
}

/// Rolls the band axis by a random walk: an initial roll uniform in
/// `[-f_init, f_init]` for the first frame, then a step in
/// `[-f_shift, f_shift]` per following frame. Positive rolls move energy to
/// higher band indices; rolls wrap modulo `M`.
pub fn randomize_shift<R: Rng + ?Sized>(
    amps: &AmplitudeFrameMatrix,
    frame_len: usize,
    f_init: i64,
    f_shift: i64,
    rng: &mut R,
) -> Result<AmplitudeFrameMatrix> {
    if frame_len == 0 || f_init < 0 || f_shift < 0 {
        return Err(Error::InvalidInput("frame length must be positive and shift bounds nonnegative".into()));
    }
    let (m, t) = (amps.num_bands(), amps.frames());
    let mut out = amps.clone();
    let mut roll = rng.gen_range(-f_init..=f_init);
    for (i, range) in frames(t, frame_len).enumerate() {
        if i > 0 {
            roll += rng.gen_range(-f_shift..=f_shift);
        }
        let r = roll.rem_euclid(m as i64) as usize;
        for band in 0..m {
            let dest = (band + r) % m;
            for s in range.clone() {
                out.values_mut()[dest * t + s] = amps.get(band, s);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Randomization {
    TopK { frame_len: usize, k: usize, lo: f64, hi: f64 },
    Shift { frame_len: usize, f_init: i64, f_shift: i64 },
}

/// Applies `schemes` in order.
pub fn apply_randomizations<R: Rng + ?Sized>(
    amps: &AmplitudeFrameMatrix,
    schemes: &[Randomization],
    rng: &mut R,
) -> Result<AmplitudeFrameMatrix> {
    let mut out = amps.clone();
    for scheme in schemes {
        out = match *scheme {
            Randomization::TopK { frame_len, k, lo, hi } => randomize_topk(&out, frame_len, k, (lo, hi), rng)?,
            Randomization::Shift { frame_len, f_init, f_shift } => {
                randomize_shift(&out, frame_len, f_init, f_shift, rng)?
            }
        };
    }
    Ok(out)
}

/// One randomised rendering per seed: the schemes are applied with a
/// generator seeded by `seed`, which then draws the renderer variation.
pub fn render_variation<R: Renderer>(
    amps: &AmplitudeFrameMatrix,
    schemes: &[Randomization],
    renderer: &R,
    w: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let varied = apply_randomizations(amps, schemes, &mut rng)?;
    let variation = renderer.draw_variation(&mut rng);
    renderer.render(&varied, w, variation)
}

/// Left and right channels from independent randomisations.
pub fn stereo_variation<R: Renderer>(
    amps: &AmplitudeFrameMatrix,
    schemes: &[Randomization],
    renderer: &R,
    w: usize,
    (left_seed, right_seed): (u64, u64),
) -> Result<(Vec<f64>, Vec<f64>)> {
    let left = render_variation(amps, schemes, renderer, w, left_seed)?;
    let right = render_variation(amps, schemes, renderer, w, right_seed)?;
    Ok((left, right))
}

/// Loudness control of `source` normalised with its own range, shifted by
/// `offset`, clamped to `[0, 1]` and sampled at `ceil(len / W)` frames.
pub fn transfer_control(source: &[f64], sample_rate: f64, offset: f64, w: usize) -> Result<Vec<f64>> {
    if w == 0 {
        return Err(Error::Config("synthesis window must be positive".into()));
    }
    let loudness = extract_loudness(source, sample_rate)?;
    let norm = NormRange::of("loudness", loudness.iter().copied())?;
    let shifted: Vec<f64> = loudness.iter().map(|&v| (norm.normalize(v) + offset).clamp(0.0, 1.0)).collect();
    let at_audio_rate = resample_curve(&shifted, source.len());
    Ok(resample_curve(&at_audio_rate, source.len().div_ceil(w).max(1)))
}

/// Drives a loudness-only model with the loudness envelope of `source`.
/// The output has `ceil(len / W)·W` samples.
pub fn loudness_transfer<R: Renderer>(
    params: &ModelParams,
    renderer: &R,
    source: &[f64],
    sample_rate: f64,
    offset: f64,
    w: usize,
    variation: R::Variation,
) -> Result<Vec<f64>> {
    if params.config().num_controls != 1 {
        return Err(Error::Config(format!(
            "loudness transfer needs a model with one control, this one has {}",
            params.config().num_controls
        )));
    }
    let control = transfer_control(source, sample_rate, offset, w)?;
    let amps = params.forward(&[control])?;
    renderer.render(&amps, w, variation)
}

/// Pearson correlation coefficient over the common prefix of `a` and `b`.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let n = len as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
