//! Band-edge layout and Kaiser-window FIR design for the noise filterbank.
//!
//! The lower part of the spectrum, `[0, Fs/8]`, is covered by a lowpass
//! filter at `f_min` followed by equal-width bandpass filters. The upper
//! part, `[Fs/8, Fs/2]`, uses bandpass filters with geometrically spaced
//! edges and ends with a highpass filter, so adjacent filters always share
//! one edge and the union of all bands is `[0, Fs/2]`.

use std::f64::consts::PI;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dsp::{bessel_i0, next_power_of_two};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterbankConfig {
    pub sample_rate: f64,
    pub num_filters: usize,
    pub f_min: f64,
    /// Transition width as a fraction of each filter's bandwidth.
    pub transition_fraction: f64,
    pub stopband_attenuation_db: f64,
    /// Fraction of the filters (lowpass included) below `Fs/8`.
    pub linear_fraction: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100.0,
            num_filters: 2048,
            f_min: 20.0,
            transition_fraction: 0.2,
            stopband_attenuation_db: 50.0,
            linear_fraction: 0.5,
        }
    }
}

impl FilterbankConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !(c.sample_rate.is_finite() && c.sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate {} must be positive", c.sample_rate)));
        }
        if c.num_filters < 2 {
            return Err(Error::Config(format!("need at least 2 filters, got {}", c.num_filters)));
        }
        if !(c.f_min > 0.0 && c.f_min < c.sample_rate / 8.0) {
            return Err(Error::Layout(format!(
                "f_min {} must lie in (0, Fs/8 = {})",
                c.f_min,
                c.sample_rate / 8.0
            )));
        }
        if !(c.transition_fraction > 0.0 && c.transition_fraction < 1.0) {
            return Err(Error::Config(format!(
                "transition fraction {} must lie in (0, 1)",
                c.transition_fraction
            )));
        }
        if !(c.stopband_attenuation_db > 0.0) {
            return Err(Error::Config(format!(
                "stopband attenuation {} dB must be positive",
                c.stopband_attenuation_db
            )));
        }
        if !(c.linear_fraction > 0.0 && c.linear_fraction < 1.0) {
            return Err(Error::Config(format!(
                "linear fraction {} must lie in (0, 1)",
                c.linear_fraction
            )));
        }
        Ok(())
    }

    /// Canonical byte encoding used for hashing and file headers.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48);
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.num_filters as u64).to_le_bytes());
        out.extend_from_slice(&self.f_min.to_le_bytes());
        out.extend_from_slice(&self.transition_fraction.to_le_bytes());
        out.extend_from_slice(&self.stopband_attenuation_db.to_le_bytes());
        out.extend_from_slice(&self.linear_fraction.to_le_bytes());
        out
    }

    /// SHA-256 of [`FilterbankConfig::to_bytes`].
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    /// Kaiser shape parameter for the configured stopband attenuation.
    pub fn kaiser_beta(&self) -> f64 {
        kaiser_beta(self.stopband_attenuation_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    Lowpass,
    Bandpass,
    Highpass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandEdges {
    pub low: f64,
    pub high: f64,
    pub kind: BandKind,
}

impl BandEdges {
    pub fn bandwidth(&self) -> f64 {
        self.high - self.low
    }

    pub fn transition_width(&self, config: &FilterbankConfig) -> f64 {
        config.transition_fraction * self.bandwidth()
    }
}

/// Standard Kaiser β for a stopband attenuation in dB.
///
/// 50 dB falls in the `21 < A <= 50` branch.
pub fn kaiser_beta(attenuation_db: f64) -> f64 {
    let a = attenuation_db;
    if a > 50.0 {
        0.1102 * (a - 8.7)
    } else if a > 21.0 {
        0.5842 * (a - 21.0).powf(0.4) + 0.07886 * (a - 21.0)
    } else {
        0.0
    }
}

/// Odd Kaiser filter length for a transition width given in Hz.
pub fn kaiser_length(transition_hz: f64, config: &FilterbankConfig) -> Result<usize> {
    if !(transition_hz > 0.0) {
        return Err(Error::Design(format!("transition width {transition_hz} Hz must be positive")));
    }
    let delta_omega = 2.0 * PI * transition_hz / config.sample_rate;
    let n = ((config.stopband_attenuation_db - 7.95) / (2.285 * delta_omega)).ceil();
    let n = (n.max(1.0)) as usize;
    Ok(if n % 2 == 0 { n + 1 } else { n })
}

pub fn layout_band_edges(config: &FilterbankConfig) -> Result<Vec<BandEdges>> {
    config.validate()?;
    let m = config.num_filters;
    let linear_f = config.linear_fraction * m as f64;
    if (linear_f - linear_f.round()).abs() > 1e-9 {
        return Err(Error::Layout(format!(
            "{m} filters cannot be split with linear fraction {}",
            config.linear_fraction
        )));
    }
    let n_linear = linear_f.round() as usize;
    if n_linear == 0 || n_linear >= m {
        return Err(Error::Layout("both spectral regions need at least one filter".into()));
    }
    let n_log = m - n_linear;
    let linear_bandpass = n_linear - 1;
    let log_bandpass = n_log - 1;
    if linear_bandpass == 0 && log_bandpass > 0 {
        return Err(Error::Layout(
            "the linear region needs bandpass filters when the upper region has any".into(),
        ));
    }

    let fs = config.sample_rate;
    let nyquist = fs / 2.0;
    let split = fs / 8.0;
    let mut edges = Vec::with_capacity(m);
    edges.push(BandEdges { low: 0.0, high: config.f_min, kind: BandKind::Lowpass });

    let width = (split - config.f_min) / linear_bandpass.max(1) as f64;
    for i in 0..linear_bandpass {
        let low = config.f_min + i as f64 * width;
        let high = if i + 1 == linear_bandpass { split } else { config.f_min + (i + 1) as f64 * width };
        edges.push(BandEdges { low, high, kind: BandKind::Bandpass });
    }

    let ratio = 4f64.powf(1.0 / n_log as f64);
    for j in 0..log_bandpass {
        let low = split * ratio.powi(j as i32);
        let high = split * ratio.powi(j as i32 + 1);
        edges.push(BandEdges { low, high, kind: BandKind::Bandpass });
    }

    let last = edges.last().expect("lowpass is always present").high;
    edges.push(BandEdges { low: last, high: nyquist, kind: BandKind::Highpass });
    debug_assert_eq!(edges.len(), m);
    Ok(edges)
}

/// Symmetric Kaiser window of odd length `n`.
#[derive(Debug, Clone)]
pub struct KaiserWindow {
    values: Vec<f64>,
}

impl KaiserWindow {
    pub fn new(n: usize, beta: f64) -> Self {
        let denom = bessel_i0(beta);
        let mid = (n - 1) as f64 / 2.0;
        let mut values = vec![0.0; n];
        // symmetric: fill the first half and mirror
        for i in 0..n.div_ceil(2) {
            let r = if mid > 0.0 { (i as f64 - mid) / mid } else { 0.0 };
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom;
            values[i] = w;
            values[n - 1 - i] = w;
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Windowed ideal response, given a precomputed window whose length is the
/// filter length.
pub fn design_with_window(edges: &BandEdges, config: &FilterbankConfig, window: &KaiserWindow) -> Vec<f64> {
    let n = window.len();
    let c = (n / 2) as isize;
    let fs = config.sample_rate;
    let nyquist = fs / 2.0;
    let w_low = 2.0 * PI * edges.low / fs;
    let w_high = 2.0 * PI * edges.high.min(nyquist) / fs;
    // lowpass(w) at offset k: sin(w k) / (pi k), w / pi at k = 0
    let lowpass = |w: f64, k: f64| if k == 0.0 { w / PI } else { (w * k).sin() / (PI * k) };
    let mut taps = vec![0.0; n];
    for i in 0..=c as usize {
        let k = (c - i as isize) as f64;
        let ideal = match edges.kind {
            BandKind::Lowpass => lowpass(w_high, k),
            BandKind::Bandpass => lowpass(w_high, k) - lowpass(w_low, k),
            BandKind::Highpass => {
                let delta = if k == 0.0 { 1.0 } else { 0.0 };
                delta - lowpass(w_low, k)
            }
        };
        let v = ideal * window.values()[i];
        taps[i] = v;
        taps[n - 1 - i] = v;
    }
    taps
}

/// Designs one linear-phase FIR for `edges` by the Kaiser window method.
pub fn kaiser_design(edges: &BandEdges, config: &FilterbankConfig) -> Result<Vec<f64>> {
    validate_edges(edges, config)?;
    let n = kaiser_length(edges.transition_width(config), config)?;
    let window = KaiserWindow::new(n, config.kaiser_beta());
    Ok(design_with_window(edges, config, &window))
}

fn validate_edges(edges: &BandEdges, config: &FilterbankConfig) -> Result<()> {
    let nyquist = config.sample_rate / 2.0;
    if !(edges.high > edges.low) {
        return Err(Error::Design(format!(
            "band [{}, {}] has no positive bandwidth",
            edges.low, edges.high
        )));
    }
    if edges.low < 0.0 || edges.high > nyquist + 1e-9 {
        return Err(Error::Design(format!(
            "band [{}, {}] lies outside [0, {nyquist}]",
            edges.low, edges.high
        )));
    }
    Ok(())
}

/// Band layout and filter lengths of a filterbank.
///
/// Impulse responses are re-derived on demand: the default 2048-filter bank
/// holds roughly 170 million taps, so they are streamed rather than kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub config: FilterbankConfig,
    pub edges: Vec<BandEdges>,
    pub tap_counts: Vec<usize>,
    pub padded_len: usize,
}

pub fn build_filterbank(config: &FilterbankConfig) -> Result<Filterbank> {
    let edges = layout_band_edges(config)?;
    let tap_counts = edges
        .iter()
        .map(|e| {
            validate_edges(e, config)?;
            kaiser_length(e.transition_width(config), config)
        })
        .collect::<Result<Vec<_>>>()?;
    let longest = tap_counts.iter().copied().max().unwrap_or(1);
    Ok(Filterbank { config: *config, edges, tap_counts, padded_len: next_power_of_two(longest) })
}

impl Filterbank {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn longest_filter(&self) -> usize {
        self.tap_counts.iter().copied().max().unwrap_or(0)
    }

    pub fn impulse_response(&self, m: usize) -> Result<Vec<f64>> {
        let edges = self.edges.get(m).ok_or(Error::BandIndex { index: m, bands: self.len() })?;
        let window = KaiserWindow::new(self.tap_counts[m], self.config.kaiser_beta());
        Ok(design_with_window(edges, &self.config, &window))
    }

    /// Impulse response zero-padded to `padded_len`.
    pub fn padded_impulse_response(&self, m: usize) -> Result<Vec<f64>> {
        let mut taps = self.impulse_response(m)?;
        taps.resize(self.padded_len, 0.0);
        Ok(taps)
    }

    /// Designs every filter in parallel and hands each padded impulse
    /// response to `f`, collecting the results in band order.
    ///
    /// Consecutive filters of equal length reuse one Kaiser window.
    pub fn map_padded<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, Vec<f64>) -> T + Sync + Send,
    {
        let beta = self.config.kaiser_beta();
        (0..self.len())
            .into_par_iter()
            .map_init(
                || None::<KaiserWindow>,
                |cache, m| {
                    let n = self.tap_counts[m];
                    if cache.as_ref().map(|w| w.len()) != Some(n) {
                        *cache = Some(KaiserWindow::new(n, beta));
                    }
                    let window = cache.as_ref().expect("window was just cached");
                    let mut taps = design_with_window(&self.edges[m], &self.config, window);
                    taps.resize(self.padded_len, 0.0);
                    f(m, taps)
                },
            )
            .collect()
    }
}

/// Measured response of one designed filter on a DFT grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterMeasurement {
    pub peak: f64,
    /// Largest stopband magnitude relative to the peak, in dB.
    pub stopband_leakage_db: f64,
}

/// Measures stopband leakage of `magnitudes` (bins `0..=grid/2`). The
/// stopband starts half a transition width outside each band edge.
pub fn measure_filter(magnitudes: &[f64], edges: &BandEdges, config: &FilterbankConfig) -> FilterMeasurement {
    let grid = 2 * (magnitudes.len() - 1);
    let hz_per_bin = config.sample_rate / grid as f64;
    let half_transition = 0.5 * edges.transition_width(config);
    let stop_below = edges.low - half_transition;
    let stop_above = edges.high + half_transition;
    let mut peak = 0.0f64;
    let mut stop = 0.0f64;
    for (k, &h) in magnitudes.iter().enumerate() {
        let f = k as f64 * hz_per_bin;
        peak = peak.max(h);
        if f < stop_below || f > stop_above {
            stop = stop.max(h);
        }
    }
    FilterMeasurement { peak, stopband_leakage_db: 20.0 * (stop.max(1e-300) / peak).log10() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::magnitude_response;

    fn toy() -> FilterbankConfig {
        FilterbankConfig { sample_rate: 8000.0, num_filters: 16, ..Default::default() }
    }

    #[test]
    fn paper_layout_bandwidths() {
        let edges = layout_band_edges(&FilterbankConfig::default()).unwrap();
        assert_eq!(edges.len(), 2048);
        let linear = edges[1].bandwidth();
        assert!((linear - 5.4).abs() < 0.1, "linear bandwidth {linear}");
        for e in &edges[1..1024] {
            assert!((e.bandwidth() - linear).abs() < 1e-9);
        }
        let last = edges[2047].bandwidth();
        // 22050 * (1 - 4^(-1/1024))
        let expected = 22050.0 * (1.0 - 4f64.powf(-1.0 / 1024.0));
        assert!((last - expected).abs() < 1e-6);
        assert!((last - 30.0).abs() < 1.0, "highpass bandwidth {last}");
    }

    #[test]
    fn two_filter_layout() {
        let cfg = FilterbankConfig { num_filters: 2, ..Default::default() };
        let edges = layout_band_edges(&cfg).unwrap();
        assert_eq!(
            edges,
            vec![
                BandEdges { low: 0.0, high: 20.0, kind: BandKind::Lowpass },
                BandEdges { low: 20.0, high: 22050.0, kind: BandKind::Highpass },
            ]
        );
    }

    #[test]
    fn layout_errors() {
        let odd = FilterbankConfig { num_filters: 7, ..Default::default() };
        assert!(matches!(layout_band_edges(&odd), Err(Error::Layout(_))));
        let high_fmin = FilterbankConfig { f_min: 6000.0, ..Default::default() };
        assert!(matches!(layout_band_edges(&high_fmin), Err(Error::Layout(_))));
    }

    #[test]
    fn longest_filter_and_padding_for_paper_config() {
        let fb = build_filterbank(&FilterbankConfig::default()).unwrap();
        let longest = fb.longest_filter() as f64;
        assert!((longest - 120_287.0).abs() / 120_287.0 < 0.003, "longest {longest}");
        assert_eq!(fb.padded_len, 131_072);
    }

    #[test]
    fn toy_padding_is_next_power_of_two_of_kaiser_length() {
        let cfg = toy();
        let fb = build_filterbank(&cfg).unwrap();
        // narrowest band: linear region (1000 - 20) / 7 = 140 Hz wide
        let width = (1000.0 - 20.0) / 7.0;
        let dw = 2.0 * PI * 0.2 * width / 8000.0;
        let mut n = ((50.0 - 7.95) / (2.285 * dw)).ceil() as usize;
        if n % 2 == 0 {
            n += 1;
        }
        // the lowpass (20 Hz wide) is narrower still
        let dw_lp = 2.0 * PI * 0.2 * 20.0 / 8000.0;
        let mut n_lp = ((50.0 - 7.95) / (2.285 * dw_lp)).ceil() as usize;
        if n_lp % 2 == 0 {
            n_lp += 1;
        }
        assert_eq!(fb.longest_filter(), n.max(n_lp));
        assert_eq!(fb.padded_len, n.max(n_lp).next_power_of_two());
    }

    #[test]
    fn full_band_lowpass_is_all_pass() {
        let cfg = FilterbankConfig::default();
        let edges = BandEdges { low: 0.0, high: 22050.0, kind: BandKind::Lowpass };
        let taps = kaiser_design(&edges, &cfg).unwrap();
        assert!(taps.len() < 64);
        let mag = magnitude_response(&taps, 1024).unwrap();
        for m in &mag[..512] {
            assert!((m - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_bandwidth_is_rejected() {
        let cfg = FilterbankConfig::default();
        let edges = BandEdges { low: 100.0, high: 100.0, kind: BandKind::Bandpass };
        assert!(matches!(kaiser_design(&edges, &cfg), Err(Error::Design(_))));
    }

    #[test]
    fn design_is_deterministic() {
        let fb = build_filterbank(&toy()).unwrap();
        let a = fb.map_padded(|_, t| t);
        let b = fb.map_padded(|_, t| t);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(a[3], fb.padded_impulse_response(3).unwrap());
    }

    #[test]
    fn half_power_points_sit_near_nominal_edges() {
        let cfg = toy();
        let fb = build_filterbank(&cfg).unwrap();
        let grid = 1 << 18;
        let hz_per_bin = cfg.sample_rate / grid as f64;
        for m in 0..fb.len() {
            let e = fb.edges[m];
            let mag = magnitude_response(&fb.impulse_response(m).unwrap(), grid).unwrap();
            let tol = e.transition_width(&cfg);
            let half = |f: f64| mag[(f / hz_per_bin).round() as usize];
            // magnitude crosses 0.5 within the transition band of each interior edge
            for edge in [e.low, e.high] {
                if edge <= 0.0 || edge >= cfg.sample_rate / 2.0 {
                    continue;
                }
                let inside = if edge == e.low { edge + tol } else { edge - tol };
                let outside = if edge == e.low { edge - tol } else { edge + tol };
                assert!(half(inside) > 0.5, "band {m} edge {edge}: inside {}", half(inside));
                assert!(half(outside) < 0.5, "band {m} edge {edge}: outside {}", half(outside));
                assert!((half(edge) - 0.5).abs() < 0.02, "band {m} edge {edge}: {}", half(edge));
            }
        }
    }

    #[test]
    fn tap_counts_decrease_with_bandwidth() {
        let fb = build_filterbank(&FilterbankConfig::default()).unwrap();
        let mut pairs: Vec<(f64, usize)> =
            fb.edges.iter().zip(&fb.tap_counts).map(|(e, &n)| (e.bandwidth(), n)).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[1].1 <= w[0].1, "{:?} then {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn summed_power_stays_near_unity() {
        let cfg = toy();
        let fb = build_filterbank(&cfg).unwrap();
        let grid = 1 << 18;
        let hz_per_bin = cfg.sample_rate / grid as f64;
        let mut power = vec![0.0; grid / 2 + 1];
        for m in 0..fb.len() {
            let mag = magnitude_response(&fb.impulse_response(m).unwrap(), grid).unwrap();
            for (p, h) in power.iter_mut().zip(&mag) {
                *p += h * h;
            }
        }
        let top = cfg.sample_rate / 2.0 - fb.edges.last().unwrap().bandwidth();
        for (k, p) in power.iter().enumerate() {
            let f = k as f64 * hz_per_bin;
            if f < cfg.f_min || f > top {
                continue;
            }
            let db = 10.0 * p.log10();
            assert!((-6.0..=3.0).contains(&db), "{f} Hz: {db} dB");
        }
    }
}
