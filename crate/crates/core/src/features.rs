//! Control features (loudness, spectral centroid), dataset-relative
//! normalisation and curve resampling.

use crate::dsp::Stft;
use crate::error::{Error, Result};

pub const LOUDNESS_FFT: usize = 128;
pub const LOUDNESS_HOP: usize = 32;
pub const CENTROID_FFT: usize = 512;
pub const CENTROID_HOP: usize = 128;
pub const LOUDNESS_FLOOR_DB: f64 = -80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveRate {
    Audio,
    Internal,
}

/// Min-max range used to map a raw feature onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRange {
    pub min: f64,
    pub max: f64,
}

impl NormRange {
    pub fn of(name: &str, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("feature `{name}`")));
            }
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            return Err(Error::DegenerateRange(name.to_string()));
        }
        Ok(Self { min, max })
    }

    /// Maps into `[0, 1]`, clamping values outside the range.
    pub fn normalize(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlCurve {
    pub name: String,
    pub values: Vec<f64>,
    pub rate: CurveRate,
    pub norm: NormRange,
}

impl ControlCurve {
    pub fn new(name: impl Into<String>, values: Vec<f64>, rate: CurveRate, norm: NormRange) -> Result<Self> {
        let name = name.into();
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("curve `{name}` value {v} outside [0, 1]")));
        }
        if !(norm.max > norm.min) {
            return Err(Error::DegenerateRange(name));
        }
        Ok(Self { name, values, rate, norm })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Loudness,
    Centroid,
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Loudness => "loudness",
            FeatureKind::Centroid => "centroid",
        }
    }

    pub fn hop(&self) -> usize {
        match self {
            FeatureKind::Loudness => LOUDNESS_HOP,
            FeatureKind::Centroid => CENTROID_HOP,
        }
    }

    /// Frame-rate feature series in raw units (dB or Hz).
    pub fn extract(&self, audio: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
        match self {
            FeatureKind::Loudness => extract_loudness(audio, sample_rate),
            FeatureKind::Centroid => extract_centroid(audio, sample_rate),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loudness" => Ok(FeatureKind::Loudness),
            "centroid" => Ok(FeatureKind::Centroid),
            other => Err(Error::InvalidInput(format!("unknown feature `{other}`"))),
        }
    }
}

/// A-weighting as a power gain (IEC 61672 curve, 0 dB at 1 kHz).
pub fn a_weighting_power(f: f64) -> f64 {
    let f2 = f * f;
    let num = 12194.0f64.powi(2) * f2 * f2;
    let den = (f2 + 20.6f64.powi(2))
        * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
        * (f2 + 12194.0f64.powi(2));
    let ra = num / den;
    ra * ra * 10f64.powf(0.2)
}

fn frames_for(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

fn check_audio(audio: &[f64]) -> Result<()> {
    if audio.is_empty() {
        return Err(Error::InvalidInput("empty audio".into()));
    }
    if audio.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("audio".into()));
    }
    Ok(())
}

/// A-weighted frame power in dB (FFT 128, hop 32, Hann, centered frames),
/// floored at -80 dB. A sine of amplitude `a` reads about `20 log10(a) - 3`.
pub fn extract_loudness(audio: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    check_audio(audio)?;
    let stft = Stft::new(LOUDNESS_FFT, LOUDNESS_HOP, LOUDNESS_FFT)?;
    let n = LOUDNESS_FFT as f64;
    let energy: f64 = stft.window().iter().map(|w| w * w).sum();
    let bins = stft.bins();
    let weights: Vec<f64> = (0..bins)
        .map(|k| {
            let doubling = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            doubling * a_weighting_power(k as f64 * sample_rate / n) / (n * energy)
        })
        .collect();
    let frames = frames_for(audio.len(), LOUDNESS_HOP);
    let spectra = stft.spectra(audio, frames);
    Ok(spectra
        .chunks_exact(bins)
        .map(|spec| {
            let power: f64 = spec.iter().zip(&weights).map(|(c, w)| c.norm_sqr() * w).sum();
            if power > 0.0 {
                (10.0 * power.log10()).max(LOUDNESS_FLOOR_DB)
            } else {
                LOUDNESS_FLOOR_DB
            }
        })
        .collect())
}

/// Magnitude-weighted mean frequency per frame (FFT 512, hop 128, Hann).
/// Frames with total magnitude below 1e-8 repeat the previous value (0 for
/// a leading silent frame).
pub fn extract_centroid(audio: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    check_audio(audio)?;
    let stft = Stft::new(CENTROID_FFT, CENTROID_HOP, CENTROID_FFT)?;
    let bins = stft.bins();
    let hz_per_bin = sample_rate / CENTROID_FFT as f64;
    let frames = frames_for(audio.len(), CENTROID_HOP);
    let spectra = stft.spectra(audio, frames);
    let mut previous = 0.0;
    Ok(spectra
        .chunks_exact(bins)
        .map(|spec| {
            let (mut total, mut weighted) = (0.0, 0.0);
            for (k, c) in spec.iter().enumerate() {
                let m = c.norm();
                total += m;
                weighted += m * k as f64 * hz_per_bin;
            }
            if total >= 1e-8 {
                previous = weighted / total;
            }
            previous
        })
        .collect())
}

/// Normalises every curve of one feature with the min and max taken over the
/// whole dataset.
pub fn normalize_dataset(name: &str, raw: &[Vec<f64>], rate: CurveRate) -> Result<Vec<ControlCurve>> {
    let norm = NormRange::of(name, raw.iter().flatten().copied())?;
    raw.iter()
        .map(|curve| {
            let values = curve.iter().map(|&v| norm.normalize(v)).collect();
            ControlCurve::new(name, values, rate, norm)
        })
        .collect()
}

/// Linear interpolation onto `target_len` points spanning the same extent
/// (first and last points are kept).
pub fn resample_curve(values: &[f64], target_len: usize) -> Vec<f64> {
    match (values.len(), target_len) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; target_len],
        (1, _) => vec![values[0]; target_len],
        (n, t) if n == t => values.to_vec(),
        (_, 1) => vec![values[0]],
        (n, t) => {
            let step = (n - 1) as f64 / (t - 1) as f64;
            (0..t)
                .map(|i| {
                    let pos = i as f64 * step;
                    let lo = (pos.floor() as usize).min(n - 1);
                    let hi = (lo + 1).min(n - 1);
                    let frac = pos - lo as f64;
                    values[lo] + (values[hi] - values[lo]) * frac
                })
                .collect()
        }
    }
}
