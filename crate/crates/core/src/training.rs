//! Dataset preparation, random-chunk batching and the optimisation loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{normalize_dataset, resample_curve, ControlCurve, CurveRate, FeatureKind};
use crate::loss::Mrstft;
use crate::model::{AmplitudeFrameMatrix, ModelParams};
use crate::noise_bank::NoiseBandBank;
use crate::synthesis;

/// Window used when smoothing reported losses.
pub const SMOOTHING_WINDOW: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub chunk_len: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub w: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { chunk_len: 65_536, batch: 16, lr: 1e-3, epochs: 10_000, seed: 0, w: 32 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.chunk_len == 0 || self.chunk_len % self.w != 0 {
            return Err(Error::Config(format!(
                "chunk length {} must be a positive multiple of the window {}",
                self.chunk_len, self.w
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn frames_per_chunk(&self) -> usize {
        self.chunk_len / self.w
    }

    /// One epoch is `ceil(dataset_len / chunk_len)` random-chunk steps.
    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.chunk_len).max(1)
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.epochs * self.steps_per_epoch(dataset_len)
    }
}

/// Where one control curve comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSource {
    Feature(FeatureKind),
    /// A user-provided curve covering the whole concatenated dataset; it is
    /// interpolated to the audio length.
    Curve(ControlCurve),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_rate: f64,
    pub audio: Vec<f64>,
    /// One curve per control, each at audio rate with `audio.len()` values.
    pub controls: Vec<ControlCurve>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }
}

/// Concatenates `clips`, derives controls and tiles everything until the
/// buffer holds at least `chunk_len` samples. Features are extracted per
/// clip, interpolated to the clip length and normalised over all clips.
pub fn prepare_dataset(
    clips: &[Vec<f64>],
    sample_rate: f64,
    sources: &[ControlSource],
    chunk_len: usize,
) -> Result<Dataset> {
    if clips.is_empty() || clips.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidInput("dataset needs at least one non-empty clip".into()));
    }
    if sources.is_empty() {
        return Err(Error::InvalidInput("at least one control is required".into()));
    }
    let mut audio: Vec<f64> = clips.concat();
    if audio.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training audio".into()));
    }
    let mut controls = Vec::with_capacity(sources.len());
    for source in sources {
        let curve = match source {
            ControlSource::Feature(kind) => {
                let raw = clips
                    .iter()
                    .map(|clip| Ok(resample_curve(&kind.extract(clip, sample_rate)?, clip.len())))
                    .collect::<Result<Vec<_>>>()?;
                let joined = vec![raw.concat()];
                normalize_dataset(kind.name(), &joined, CurveRate::Audio)?.remove(0)
            }
            ControlSource::Curve(curve) => {
                if curve.is_empty() {
                    return Err(Error::InvalidInput(format!("curve `{}` is empty", curve.name)));
                }
                ControlCurve::new(curve.name.clone(), resample_curve(&curve.values, audio.len()), CurveRate::Audio, curve.norm)?
            }
        };
        controls.push(curve);
    }
    let single = audio.len();
    if single < chunk_len {
        let copies = chunk_len.div_ceil(single);
        audio = audio.repeat(copies);
        for c in &mut controls {
            c.values = c.values.repeat(copies);
        }
    }
    Ok(Dataset { sample_rate, audio, controls })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub offset: usize,
    pub audio: Vec<f64>,
    /// `C` rows of `chunk_len / W` internal-rate values.
    pub controls: Vec<Vec<f64>>,
}

/// Draws `batch` chunks at offsets uniform in `[0, len − chunk_len]`.
pub fn sample_batch(dataset: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<BatchItem>> {
    cfg.validate()?;
    if dataset.len() < cfg.chunk_len {
        return Err(Error::InvalidInput(format!(
            "dataset of {} samples is shorter than the chunk length {}",
            dataset.len(),
            cfg.chunk_len
        )));
    }
    let max_offset = dataset.len() - cfg.chunk_len;
    let frames = cfg.frames_per_chunk();
    Ok((0..cfg.batch)
        .map(|_| {
            let offset = rng.gen_range(0..=max_offset);
            let range = offset..offset + cfg.chunk_len;
            BatchItem {
                offset,
                audio: dataset.audio[range.clone()].to_vec(),
                controls: dataset.controls.iter().map(|c| resample_curve(&c.values[range.clone()], frames)).collect(),
            }
        })
        .collect())
}

/// A differentiable synthesiser driven by model outputs.
pub trait Renderer: Sync {
    /// Per-render randomness (a band shift, a noise seed).
    type Variation: Copy + Send + Sync + std::fmt::Debug;

    /// Width of the amplitude matrix this renderer expects.
    fn num_outputs(&self) -> usize;

    fn draw_variation(&self, rng: &mut ChaCha8Rng) -> Self::Variation;

    fn render(&self, amps: &AmplitudeFrameMatrix, w: usize, variation: Self::Variation) -> Result<Vec<f64>>;

    /// Gradient with respect to `amps` given the gradient with respect to
    /// the rendered audio.
    fn backward(
        &self,
        amps: &AmplitudeFrameMatrix,
        w: usize,
        variation: Self::Variation,
        d_audio: &[f64],
    ) -> Result<Vec<f64>>;
}

impl Renderer for NoiseBandBank {
    type Variation = usize;

    fn num_outputs(&self) -> usize {
        self.num_bands()
    }

    /// Band shift uniform in `[0, L]`.
    fn draw_variation(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..=self.band_len())
    }

    fn render(&self, amps: &AmplitudeFrameMatrix, w: usize, shift: usize) -> Result<Vec<f64>> {
        synthesis::render(amps, self, w, shift)
    }

    fn backward(&self, amps: &AmplitudeFrameMatrix, w: usize, shift: usize, d_audio: &[f64]) -> Result<Vec<f64>> {
        synthesis::render_backward(amps, self, w, shift, d_audio)
    }
}

/// Mean loss and mean parameter gradient of `model → renderer → MRSTFT`
/// over a batch. Items run in parallel; gradients are summed in batch order.
pub fn batch_loss_and_grad<R: Renderer>(
    params: &ModelParams,
    renderer: &R,
    loss: &Mrstft,
    batch: &[BatchItem],
    w: usize,
    variation: R::Variation,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let per_item: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|item| {
            let (amps, tape) = params.forward_tape(&item.controls, None)?;
            let audio = renderer.render(&amps, w, variation)?;
            let (value, d_audio) = loss.loss_and_grad(&item.audio, &audio)?;
            let d_amps = renderer.backward(&amps, w, variation, &d_audio)?;
            Ok((value, params.backward(&tape, &d_amps)?))
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; params.flat().len()];
    for item in per_item {
        let (value, g) = item?;
        total += value;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

/// Loss of the model on one fixed chunk.
pub fn evaluate<R: Renderer>(
    params: &ModelParams,
    renderer: &R,
    loss: &Mrstft,
    item: &BatchItem,
    w: usize,
    variation: R::Variation,
) -> Result<f64> {
    let amps = params.forward(&item.controls)?;
    let audio = renderer.render(&amps, w, variation)?;
    loss.loss(&item.audio, &audio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<V> {
    pub step: u64,
    pub loss: f64,
    pub variation: V,
}

/// Mutable training state: parameters, optimiser and the step RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    pub config: TrainConfig,
    optimizer: Adam,
    loss: Mrstft,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig, loss: Mrstft) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let optimizer = Adam::new(params.flat().len(), config.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self { params, config, optimizer, loss, rng })
    }

    pub fn loss_fn(&self) -> &Mrstft {
        &self.loss
    }

    /// One optimisation step: sample a batch, draw one variation, and
    /// apply an Adam update.
    pub fn step<R: Renderer>(&mut self, dataset: &Dataset, renderer: &R) -> Result<StepReport<R::Variation>> {
        if renderer.num_outputs() != self.params.config().num_bands {
            return Err(Error::Dimension(format!(
                "renderer expects {} outputs, model produces {}",
                renderer.num_outputs(),
                self.params.config().num_bands
            )));
        }
        if dataset.controls.len() != self.params.config().num_controls {
            return Err(Error::Dimension(format!(
                "dataset has {} controls, model expects {}",
                dataset.controls.len(),
                self.params.config().num_controls
            )));
        }
        let batch = sample_batch(dataset, &self.config, &mut self.rng)?;
        let variation = renderer.draw_variation(&mut self.rng);
        let (value, grad) =
            batch_loss_and_grad(&self.params, renderer, &self.loss, &batch, self.config.w, variation)?;
        if !value.is_finite() {
            let offsets: Vec<usize> = batch.iter().map(|b| b.offset).collect();
            return Err(Error::NonFinite(format!(
                "loss at step {} (offsets {offsets:?}, variation {variation:?})",
                self.optimizer.steps() + 1
            )));
        }
        self.optimizer.step(self.params.flat_mut(), &grad);
        Ok(StepReport { step: self.optimizer.steps(), loss: value, variation })
    }
}

/// Trailing moving average over `window` values.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
