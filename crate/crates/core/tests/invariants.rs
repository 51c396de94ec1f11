//! Cross-module invariants over randomised inputs.

use nbn_core::creative::{randomize_shift, randomize_topk};
use nbn_core::features::FeatureKind;
use nbn_core::filter_design::{build_filterbank, layout_band_edges, BandKind, FilterbankConfig};
use nbn_core::model::{AmplitudeFrameMatrix, ModelConfig, ModelParams};
use nbn_core::noise_bank::{bake_bank, NoiseBandBank};
use nbn_core::synthesis::render;
use nbn_core::training::{prepare_dataset, sample_batch, ControlSource, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn small_bank() -> &'static NoiseBandBank {
    static BANK: OnceLock<NoiseBandBank> = OnceLock::new();
    BANK.get_or_init(|| {
        let cfg = FilterbankConfig { sample_rate: 8000.0, num_filters: 8, f_min: 100.0, ..FilterbankConfig::default() };
        bake_bank(&build_filterbank(&cfg).unwrap(), 4).unwrap()
    })
}

fn amps_strategy(bands: usize) -> impl Strategy<Value = AmplitudeFrameMatrix> {
    (1usize..12).prop_flat_map(move |frames| {
        prop::collection::vec(0.0f64..2.0, bands * frames)
            .prop_map(move |v| AmplitudeFrameMatrix::new(bands, frames, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bands_tile_zero_to_nyquist(
        fs in prop::sample::select(vec![8000.0, 16_000.0, 22_050.0, 44_100.0, 48_000.0]),
        half in 2usize..300,
        f_min_frac in 0.01f64..0.9,
    ) {
        let cfg = FilterbankConfig {
            sample_rate: fs,
            num_filters: 2 * half,
            f_min: f_min_frac * fs / 8.0,
            ..FilterbankConfig::default()
        };
        let edges = layout_band_edges(&cfg).unwrap();
        prop_assert_eq!(edges.len(), cfg.num_filters);
        prop_assert_eq!(edges[0].kind, BandKind::Lowpass);
        prop_assert_eq!(edges[0].low, 0.0);
        prop_assert_eq!(edges.last().unwrap().kind, BandKind::Highpass);
        prop_assert_eq!(edges.last().unwrap().high, fs / 2.0);
        for pair in edges.windows(2) {
            prop_assert_eq!(pair[0].high, pair[1].low);
            prop_assert!(pair[0].high > pair[0].low);
        }
        // the linear region has equal widths and ends at Fs/8
        let linear = &edges[1..half];
        prop_assert!((linear.last().unwrap().high - fs / 8.0).abs() < 1e-9 * fs);
        for e in linear {
            prop_assert!((e.bandwidth() - linear[0].bandwidth()).abs() < 1e-9 * fs);
        }
        // upper bands grow geometrically
        let upper = &edges[half..edges.len() - 1];
        for pair in upper.windows(2) {
            prop_assert!(((pair[1].high / pair[1].low) - (pair[0].high / pair[0].low)).abs() < 1e-9);
        }
    }

    #[test]
    fn batches_stay_inside_the_dataset(
        clip_lens in prop::collection::vec(200usize..3000, 1..4),
        chunk_pow in 7u32..12,
        batch in 1usize..6,
        seed in any::<u64>(),
    ) {
        let clips: Vec<Vec<f64>> = clip_lens
            .iter()
            .enumerate()
            .map(|(c, &len)| (0..len).map(|i| ((i * 7 + c * 13) % 29) as f64 / 29.0 - 0.5).collect())
            .collect();
        let chunk_len = 1usize << chunk_pow;
        let ds = prepare_dataset(&clips, 8000.0, &[ControlSource::Feature(FeatureKind::Loudness)], chunk_len).unwrap();
        prop_assert!(ds.len() >= chunk_len);
        prop_assert_eq!(ds.controls[0].values.len(), ds.len());
        let cfg = TrainConfig { chunk_len, batch, lr: 1e-3, epochs: 1, seed, w: 32 };
        let items = sample_batch(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(items.len(), batch);
        for item in items {
            prop_assert!(item.offset + chunk_len <= ds.len());
            prop_assert_eq!(&item.audio[..], &ds.audio[item.offset..item.offset + chunk_len]);
            prop_assert_eq!(item.controls.len(), 1);
            prop_assert_eq!(item.controls[0].len(), chunk_len / 32);
            prop_assert!(item.controls[0].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn render_length_is_frames_times_w(amps in amps_strategy(8), w in 1usize..64, shift in 0usize..100_000) {
        let out = render(&amps, small_bank(), w, shift).unwrap();
        prop_assert_eq!(out.len(), amps.frames() * w);
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn render_is_periodic_in_the_shift(amps in amps_strategy(8), shift in 0usize..20_000) {
        let bank = small_bank();
        let a = render(&amps, bank, 16, shift).unwrap();
        let b = render(&amps, bank, 16, shift + bank.band_len()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn render_is_linear_in_the_amplitudes(
        a in amps_strategy(8),
        gain in 0.1f64..4.0,
        shift in 0usize..20_000,
    ) {
        let bank = small_bank();
        let scaled = AmplitudeFrameMatrix::new(8, a.frames(), a.values().iter().map(|v| v * gain).collect()).unwrap();
        let x = render(&a, bank, 16, shift).unwrap();
        let y = render(&scaled, bank, 16, shift).unwrap();
        let peak = x.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (p, q) in x.iter().zip(&y) {
            prop_assert!((p * gain - q).abs() <= 1e-12 * gain * peak.max(1.0));
        }
    }

    #[test]
    fn creative_edits_keep_the_matrix_shape(
        a in amps_strategy(16),
        frame_len in 1usize..20,
        k in 1usize..=16,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topk = randomize_topk(&a, frame_len, k, (0.5, 1.5), &mut rng).unwrap();
        prop_assert_eq!((topk.num_bands(), topk.frames()), (a.num_bands(), a.frames()));
        for (x, y) in a.values().iter().zip(topk.values()) {
            prop_assert!(*y >= 0.5 * x - 1e-15 && *y <= 1.5 * x + 1e-15);
        }
        let shifted = randomize_shift(&a, frame_len, 4, 1, &mut rng).unwrap();
        prop_assert_eq!((shifted.num_bands(), shifted.frames()), (a.num_bands(), a.frames()));
    }
}

#[test]
fn model_output_feeds_the_renderer() {
    let cfg = ModelConfig { num_controls: 2, hidden: 8, num_bands: 8, out_mlp_depth: 2 };
    let params = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let controls = vec![vec![0.2; 40], vec![0.7; 40]];
    let amps = params.forward(&controls).unwrap();
    assert_eq!((amps.num_bands(), amps.frames()), (8, 40));
    assert!(amps.values().iter().all(|&v| v > 0.0 && v < 2.0 + 1e-12));
    let audio = render(&amps, small_bank(), 32, 17).unwrap();
    assert_eq!(audio.len(), 40 * 32);
}
