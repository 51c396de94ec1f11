//! Amplitude upsampling and noise-band mixing.
//!
//! Frame `t` of an amplitude row anchors audio sample `t·W`; samples between
//! anchors are linearly interpolated and the last frame is held for its `W`
//! samples. Mixing never materialises the upsampled matrix: the output is
//! produced in time blocks, and inside a block the bands are summed by a
//! fixed pairwise tree so the result does not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AmplitudeFrameMatrix, ModelParams};
use crate::noise_bank::NoiseBandBank;

const BLOCK_LEN: usize = 4096;
const BAND_GROUP: usize = 64;

/// Per band, piecewise-linear upsampling by `w` (band-major output).
pub fn upsample(amps: &AmplitudeFrameMatrix, w: usize) -> Vec<f64> {
    let t = amps.frames();
    let mut out = vec![0.0; amps.num_bands() * t * w];
    for (m, row) in out.chunks_exact_mut(t * w).enumerate() {
        upsample_row(amps.row(m), None, w, 0, row);
    }
    out
}

/// Writes samples `start..start + out.len()` of one upsampled row; `next` is
/// the frame after the row, used instead of holding the last value.
fn upsample_row(frames: &[f64], next: Option<f64>, w: usize, start: usize, out: &mut [f64]) {
    let inv = 1.0 / w as f64;
    let t_len = frames.len();
    for (i, slot) in out.iter_mut().enumerate() {
        let n = start + i;
        let (t, j) = (n / w, n % w);
        let a0 = frames[t];
        let a1 = if t + 1 < t_len { frames[t + 1] } else { next.unwrap_or(a0) };
        *slot = a0 + (a1 - a0) * (j as f64 * inv);
    }
}

fn check_bank(amps: &AmplitudeFrameMatrix, bank: &NoiseBandBank, w: usize) -> Result<()> {
    if amps.num_bands() != bank.num_bands() {
        return Err(Error::Dimension(format!(
            "{} amplitude rows for a bank of {} bands",
            amps.num_bands(),
            bank.num_bands()
        )));
    }
    if w == 0 {
        return Err(Error::Config("synthesis window must be positive".into()));
    }
    if amps.frames() == 0 {
        return Err(Error::InvalidInput("amplitude matrix has no frames".into()));
    }
    Ok(())
}

/// `out[n] = Σ_m A_m[n]·band_m[(n + shift) mod L]` over `T·W` samples.
pub fn render(amps: &AmplitudeFrameMatrix, bank: &NoiseBandBank, w: usize, shift: usize) -> Result<Vec<f64>> {
    render_segment(amps, None, bank, w, shift, 0)
}

/// Renders `amps` as the segment starting at absolute sample `origin` of a
/// longer signal. `next` holds the frame following the segment (one value
/// per band) so the final ramp matches an unsegmented render.
pub fn render_segment(
    amps: &AmplitudeFrameMatrix,
    next: Option<&[f64]>,
    bank: &NoiseBandBank,
    w: usize,
    shift: usize,
    origin: usize,
) -> Result<Vec<f64>> {
    check_bank(amps, bank, w)?;
    if let Some(n) = next {
        if n.len() != amps.num_bands() {
            return Err(Error::Dimension("lookahead frame width differs from band count".into()));
        }
    }
    let len = amps.frames() * w;
    let mut out = vec![0.0; len];
    out.par_chunks_mut(BLOCK_LEN).enumerate().for_each(|(b, block)| {
        let start = b * BLOCK_LEN;
        let mixed = mix_bands(amps, next, bank, w, shift, origin, start, block.len(), 0, amps.num_bands());
        block.copy_from_slice(&mixed);
    });
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn mix_bands(
    amps: &AmplitudeFrameMatrix,
    next: Option<&[f64]>,
    bank: &NoiseBandBank,
    w: usize,
    shift: usize,
    origin: usize,
    start: usize,
    len: usize,
    lo: usize,
    hi: usize,
) -> Vec<f64> {
    if hi - lo > BAND_GROUP {
        let mid = lo + (hi - lo) / 2;
        let (mut left, right) = rayon::join(
            || mix_bands(amps, next, bank, w, shift, origin, start, len, lo, mid),
            || mix_bands(amps, next, bank, w, shift, origin, start, len, mid, hi),
        );
        left.iter_mut().zip(&right).for_each(|(a, b)| *a += b);
        return left;
    }
    let mut acc = vec![0.0; len];
    let mut gain = vec![0.0; len];
    let band_len = bank.band_len();
    for m in lo..hi {
        upsample_row(amps.row(m), next.map(|n| n[m]), w, start, &mut gain);
        let band = bank.band(m).expect("band count checked");
        let mut pos = (origin + start + shift) % band_len;
        let mut done = 0;
        while done < len {
            let run = (len - done).min(band_len - pos);
            let src = &band[pos..pos + run];
            for ((o, g), s) in acc[done..done + run].iter_mut().zip(&gain[done..done + run]).zip(src) {
                *o += g * *s as f64;
            }
            done += run;
            pos = 0;
        }
    }
    acc
}

/// Gradient of a scalar loss with respect to the amplitudes, given its
/// gradient with respect to the rendered audio.
pub fn render_backward(
    amps: &AmplitudeFrameMatrix,
    bank: &NoiseBandBank,
    w: usize,
    shift: usize,
    d_out: &[f64],
) -> Result<Vec<f64>> {
    check_bank(amps, bank, w)?;
    let t_len = amps.frames();
    if d_out.len() != t_len * w {
        return Err(Error::Dimension(format!("audio gradient of {} for {} samples", d_out.len(), t_len * w)));
    }
    let band_len = bank.band_len();
    let inv = 1.0 / w as f64;
    let mut grad = vec![0.0; amps.num_bands() * t_len];
    grad.par_chunks_mut(t_len).enumerate().for_each(|(m, row)| {
        let band = bank.band(m).expect("band count checked");
        for t in 0..t_len {
            let last = t + 1 == t_len;
            let (mut own, mut ahead) = (0.0, 0.0);
            for j in 0..w {
                let n = t * w + j;
                let v = d_out[n] * band[(n + shift) % band_len] as f64;
                if last {
                    own += v;
                } else {
                    let frac = j as f64 * inv;
                    own += v * (1.0 - frac);
                    ahead += v * frac;
                }
            }
            row[t] += own;
            if !last {
                row[t + 1] += ahead;
            }
        }
    });
    Ok(grad)
}

/// Streams the model and the mixer over `chunk_frames`-frame pieces while
/// carrying the recurrent state. `controls` are at the internal rate; the
/// result has exactly `total_len` samples (controls are linearly resampled
/// to `ceil(total_len / W)` frames when their length differs).
pub fn render_long(
    params: &ModelParams,
    controls: &[Vec<f64>],
    bank: &NoiseBandBank,
    w: usize,
    shift: usize,
    chunk_frames: usize,
    total_len: usize,
) -> Result<Vec<f64>> {
    if total_len == 0 || chunk_frames == 0 || w == 0 {
        return Err(Error::InvalidInput("render length, chunk size and window must be positive".into()));
    }
    let frames = total_len.div_ceil(w);
    let controls: Vec<Vec<f64>> = controls
        .iter()
        .map(|c| {
            if c.len() == frames {
                c.clone()
            } else {
                crate::features::resample_curve(c, frames)
            }
        })
        .collect();
    let mut out = Vec::with_capacity(frames * w);
    let mut state: Option<Vec<f64>> = None;
    let mut pending: Option<(AmplitudeFrameMatrix, usize)> = None;
    let mut start = 0;
    while start < frames {
        let end = (start + chunk_frames).min(frames);
        let piece: Vec<Vec<f64>> = controls.iter().map(|c| c[start..end].to_vec()).collect();
        let (amps, new_state) = params.forward_with_state(&piece, state.as_deref())?;
        if let Some((prev, origin)) = pending.take() {
            let lookahead: Vec<f64> = (0..amps.num_bands()).map(|m| amps.get(m, 0)).collect();
            out.extend(render_segment(&prev, Some(&lookahead), bank, w, shift, origin)?);
        }
        pending = Some((amps, start * w));
        state = Some(new_state);
        start = end;
    }
    if let Some((prev, origin)) = pending {
        out.extend(render_segment(&prev, None, bank, w, shift, origin)?);
    }
    out.truncate(total_len);
    Ok(out)
}
