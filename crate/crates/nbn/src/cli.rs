//! Command-line definitions and command implementations.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nbn_core::creative::{transfer_control, Randomization};
use nbn_core::filter_design::{build_filterbank, FilterbankConfig};
use nbn_core::loss::{Mrstft, MrstftConfig};
use nbn_core::model::ModelParams;
use nbn_core::noise_bank::bake_bank;
use nbn_core::training::{prepare_dataset, Renderer, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compare::{self, CompareConfig, EvalTarget};
use crate::config::{BankOverlay, ModelOverlay, Overlay, Settings, SynthOverlay, TrainOverlay};
use crate::dataset::{collect_wavs, control_specs, load_clips, parse_controls};
use crate::engine::{load_model, LoadedModel, RenderOptions};
use crate::error::{Error, Result};
use crate::formats::bank::{load_bank, save_bank};
use crate::formats::checkpoint::{save_checkpoint, Backend, Checkpoint};
use crate::formats::curve::load_curve;
use crate::formats::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "nbn", version, about = "Filterbank noise-band synthesis of sound effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design the filterbank and bake its noise bands to a .nbnb file
    Bake(BakeArgs),
    /// Train a model on WAV clips and write a run directory
    Train(TrainArgs),
    /// Render audio from a checkpoint and control curves or source audio
    Synth(SynthArgs),
    /// Drive a loudness model with the loudness of another sound
    Transfer(TransferArgs),
    /// Render several randomised variations
    Randomise(RandomiseArgs),
    /// Train several backends with one budget and report their scores as CSV
    Compare(CompareArgs),
    /// Serve the HTTP API used by the curve editor
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// TOML settings file; flags take precedence over it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the resolved settings as TOML and exit
    #[arg(long)]
    pub print_config: bool,
    /// Seed for every random draw of the command
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct BankFlags {
    /// Sample rate in Hz
    #[arg(long)]
    pub fs: Option<f64>,
    /// Number of filters M
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub f_min: Option<f64>,
    /// Transition width as a fraction of the bandwidth
    #[arg(long)]
    pub transition: Option<f64>,
    /// Stopband attenuation in dB
    #[arg(long)]
    pub attenuation: Option<f64>,
    #[arg(long)]
    pub linear_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Depth of the output MLP
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainFlags {
    /// `filterbank` or `baseline`
    #[arg(long)]
    pub backend: Option<String>,
    /// FIR length of the baseline backend
    #[arg(long)]
    pub taps: Option<usize>,
    /// Samples per training chunk
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Step budget, overriding the one derived from --epochs
    #[arg(long)]
    pub steps: Option<usize>,
    /// Samples per amplitude frame
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BakeArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// Overwrite an existing file
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub bank: BankFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// WAV files or directories of WAV files
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated: loudness, centroid, curve:<file.nbcv>
    #[arg(long, default_value = "loudness,centroid")]
    pub controls: String,
    /// Run directory
    #[arg(long, short)]
    pub out: PathBuf,
    /// Noise-band cache for the filterbank backend
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Reuse a non-empty run directory
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct RenderFlags {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Synthesise even if the bank differs from the training bank
    #[arg(long)]
    pub allow_bank_mismatch: bool,
    #[arg(long)]
    pub stereo: bool,
    /// Top-k randomisation `k,lo,hi`
    #[arg(long, value_name = "K,LO,HI")]
    pub topk: Option<String>,
    #[arg(long)]
    pub topk_frame: Option<usize>,
    /// Band-shift randomisation `f_init,f_shift`
    #[arg(long, value_name = "INIT,STEP")]
    pub shift: Option<String>,
    #[arg(long)]
    pub shift_frame: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Control curve per model control, in order
    #[arg(long = "curve")]
    pub curves: Vec<PathBuf>,
    /// Extract the controls from this WAV instead
    #[arg(long, conflicts_with = "curves")]
    pub from_audio: Option<PathBuf>,
    /// Internal-rate frames to render; output has frames·W samples
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub render: RenderFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    /// Sound whose loudness drives the model
    #[arg(long)]
    pub source: PathBuf,
    /// Added to the normalised loudness before clamping to [0, 1]
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub render: RenderFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct RandomiseArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Number of variations; file `i` is written as `<out>_<i>.wav`
    #[arg(long, default_value_t = 4)]
    pub count: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "loudness")]
    pub controls: String,
    /// Comma-separated: filterbank, baseline, baseline:<taps>
    #[arg(long, default_value = "filterbank,baseline:512,baseline:1024")]
    pub backends: String,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Renders averaged per score
    #[arg(long, default_value_t = 4)]
    pub renders: usize,
    /// CSV report
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Project directory holding clip.wav, curves/ and models/
    #[arg(long)]
    pub project: PathBuf,
    /// Extra checkpoints to serve besides <project>/models/*.nbck
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub allow_bank_mismatch: bool,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[command(flatten)]
    pub common: Common,
}

impl BankFlags {
    fn overlay(&self) -> BankOverlay {
        BankOverlay {
            sample_rate: self.fs,
            filters: self.filters,
            f_min: self.f_min,
            transition_fraction: self.transition,
            stopband_attenuation_db: self.attenuation,
            linear_fraction: self.linear_fraction,
        }
    }
}

impl ModelFlags {
    fn overlay(&self) -> ModelOverlay {
        ModelOverlay { hidden: self.hidden, out_mlp_depth: self.depth }
    }
}

impl TrainFlags {
    fn overlay(&self) -> TrainOverlay {
        TrainOverlay {
            backend: self.backend.clone(),
            taps: self.taps,
            chunk_len: self.chunk,
            batch: self.batch,
            lr: self.lr,
            epochs: self.epochs,
            steps: self.steps.map(Some),
            w: self.w,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

impl RenderFlags {
    fn overlay(&self) -> SynthOverlay {
        SynthOverlay { topk_frame: self.topk_frame, shift_frame: self.shift_frame }
    }
}

/// Resolves settings; returns `None` after printing them if asked to.
fn settings(common: &Common, fill: impl FnOnce(&mut Overlay)) -> Result<Option<Settings>> {
    let mut flags = Overlay { seed: common.seed, ..Overlay::default() };
    fill(&mut flags);
    let s = Settings::resolve(common.config.as_deref(), &flags)?;
    if common.print_config {
        print!("{}", s.to_toml());
        return Ok(None);
    }
    Ok(Some(s))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bake(a) => bake(&a),
        Command::Train(a) => train(&a),
        Command::Synth(a) => synth(&a),
        Command::Transfer(a) => transfer(&a),
        Command::Randomise(a) => randomise(&a),
        Command::Compare(a) => compare_cmd(&a),
        Command::Serve(a) => serve(&a),
    }
}

pub fn filterbank_config(s: &Settings) -> FilterbankConfig {
    FilterbankConfig {
        sample_rate: s.bank.sample_rate,
        num_filters: s.bank.filters,
        f_min: s.bank.f_min,
        transition_fraction: s.bank.transition_fraction,
        stopband_attenuation_db: s.bank.stopband_attenuation_db,
        linear_fraction: s.bank.linear_fraction,
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists { path: path.to_path_buf() });
    }
    Ok(())
}

fn bake(a: &BakeArgs) -> Result<()> {
    let Some(s) = settings(&a.common, |o| o.bank = a.bank.overlay())? else { return Ok(()) };
    refuse_overwrite(&a.out, a.force)?;
    let fb = build_filterbank(&filterbank_config(&s))?;
    let bank = bake_bank(&fb, s.seed)?;
    save_bank(&bank, &a.out)?;
    eprintln!(
        "baked {} bands of {} samples (seed {}, a_max {:.6e}, {} bytes of payload) to {}",
        bank.num_bands(),
        bank.band_len(),
        bank.seed,
        bank.a_max,
        bank.payload_bytes(),
        a.out.display()
    );
    Ok(())
}

fn backend_of(s: &Settings) -> Result<Backend> {
    match s.train.backend.as_str() {
        "filterbank" => Ok(Backend::NoiseBands),
        "baseline" => Ok(Backend::FirNoise { taps: s.train.taps }),
        other => Err(Error::Usage(format!("unknown backend `{other}` (filterbank or baseline)"))),
    }
}

fn train_config(s: &Settings) -> TrainConfig {
    TrainConfig {
        chunk_len: s.train.chunk_len,
        batch: s.train.batch,
        lr: s.train.lr,
        epochs: s.train.epochs,
        seed: s.seed,
        w: s.train.w,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn train(a: &TrainArgs) -> Result<()> {
    let Some(s) = settings(&a.common, |o| {
        o.model = a.model.overlay();
        o.train = a.train.overlay();
    })?
    else {
        return Ok(());
    };
    let backend = backend_of(&s)?;
    let bank = match backend {
        Backend::NoiseBands => {
            let path = a.bank.as_ref().ok_or_else(|| Error::Usage("the filterbank backend needs --bank".into()))?;
            Some(load_bank(path)?)
        }
        Backend::FirNoise { .. } => None,
    };
    let paths = collect_wavs(&a.inputs)?;
    let (clips, rate) = load_clips(&paths)?;
    if let Some(bank) = &bank {
        if bank.config.sample_rate != rate as f64 {
            return Err(Error::Mismatch(format!(
                "clips are at {rate} Hz, the bank at {} Hz",
                bank.config.sample_rate
            )));
        }
    }
    let sources = parse_controls(&a.controls, Path::new("."))?;
    let cfg = train_config(&s);
    cfg.validate()?;
    let ds = prepare_dataset(&clips, rate as f64, &sources, cfg.chunk_len)?;
    let outputs = match backend {
        Backend::NoiseBands => bank.as_ref().expect("loaded above").num_bands(),
        Backend::FirNoise { taps } => taps / 2 + 1,
    };
    let model = compare::model_config(backend, sources.len(), s.model.hidden, s.model.out_mlp_depth, outputs);
    let params = ModelParams::init(model, &mut ChaCha8Rng::seed_from_u64(s.seed))?;

    let dir = &a.out;
    if dir.exists() && std::fs::read_dir(dir).map_err(io_err(dir))?.next().is_some() && !a.force {
        return Err(Error::Exists { path: dir.clone() });
    }
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(dir))?;
    let inputs: Vec<String> = paths.iter().map(|p| format!("#   {}", p.display())).collect();
    let snapshot = format!("# controls: {}\n# inputs:\n{}\n{}", a.controls, inputs.join("\n"), s.to_toml());
    crate::formats::atomic_write(&dir.join("config.toml"), |o| o.write_all(snapshot.as_bytes()))?;

    let per_epoch = cfg.steps_per_epoch(ds.len());
    let steps = s.train.steps.unwrap_or(cfg.total_steps(ds.len()));
    let mut log = std::fs::File::create(dir.join("run.log")).map_err(io_err(dir))?;
    let budget_note = match s.train.steps {
        Some(n) => format!("step budget set to {n} (≈ {:.2} epochs)", n as f64 / per_epoch as f64),
        None => format!("{} epochs map to {steps} steps", cfg.epochs),
    };
    writeln!(
        log,
        "dataset: {} clips, {} samples at {rate} Hz after tiling\none epoch = ceil(dataset / chunk) = {per_epoch} \
         random-chunk steps; {budget_note}\nbackend {}, {} outputs, {} parameters, seed {}",
        clips.len(),
        ds.len(),
        backend.label(),
        model.num_bands,
        model.param_count(),
        s.seed
    )
    .map_err(io_err(dir))?;

    let specs = control_specs(&sources, &ds);
    let (bank_hash, bank_seed) = bank.as_ref().map(|b| (b.config_hash, b.seed)).unwrap_or(([0; 32], 0));
    let save = |params: &ModelParams, step: u64, path: &Path| {
        save_checkpoint(
            &Checkpoint {
                params: params.clone(),
                backend,
                w: cfg.w,
                sample_rate: rate as f64,
                controls: specs.clone(),
                bank_hash,
                bank_seed,
                step,
            },
            path,
        )
    };
    let mut trainer = Trainer::new(params, cfg, Mrstft::new(&MrstftConfig::default())?)?;
    let mut csv = csv::Writer::from_path(dir.join("loss.csv")).map_err(|e| Error::Config(e.to_string()))?;
    csv.write_record(["step", "loss"]).map_err(|e| Error::Config(e.to_string()))?;
    let fir = match backend {
        Backend::FirNoise { taps } => Some(nbn_core::baseline::FirNoise::new(taps)?),
        Backend::NoiseBands => None,
    };
    for _ in 0..steps {
        let (step, loss) = match (&bank, &fir) {
            (Some(b), _) => step_once(&mut trainer, &ds, b)?,
            (None, Some(f)) => step_once(&mut trainer, &ds, f)?,
            (None, None) => unreachable!("one renderer is always present"),
        };
        csv.write_record([step.to_string(), format!("{loss:.8}")]).map_err(|e| Error::Config(e.to_string()))?;
        if s.train.checkpoint_every > 0 && step % s.train.checkpoint_every as u64 == 0 {
            csv.flush().map_err(io_err(dir))?;
            save(&trainer.params, step, &dir.join("checkpoints").join(format!("step_{step:08}.nbck")))?;
            eprintln!("step {step}/{steps}: loss {loss:.4}");
        }
    }
    csv.flush().map_err(io_err(dir))?;
    save(&trainer.params, steps as u64, &dir.join("model.nbck"))?;
    writeln!(log, "finished {steps} steps").map_err(io_err(dir))?;
    eprintln!("wrote {}", dir.join("model.nbck").display());
    Ok(())
}

fn step_once<R: Renderer>(t: &mut Trainer, ds: &nbn_core::training::Dataset, r: &R) -> Result<(u64, f64)> {
    let report = t.step(ds, r)?;
    Ok((report.step, report.loss))
}

fn parse_list<const N: usize>(flag: &str, text: &str) -> Result<[f64; N]> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("--{flag} expects {N} comma-separated numbers, got `{text}`")))?;
    values.try_into().map_err(|_| Error::Usage(format!("--{flag} expects {N} comma-separated numbers, got `{text}`")))
}

fn integral(flag: &str, v: f64) -> Result<i64> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(Error::Usage(format!("--{flag} needs nonnegative integers")));
    }
    Ok(v as i64)
}

/// Randomisation schemes from `--topk` and `--shift`, applied in that order.
pub fn schemes(render: &RenderFlags, s: &Settings) -> Result<Vec<Randomization>> {
    let mut out = Vec::new();
    if let Some(text) = &render.topk {
        let [k, lo, hi] = parse_list::<3>("topk", text)?;
        out.push(Randomization::TopK { frame_len: s.synth.topk_frame, k: integral("topk", k)? as usize, lo, hi });
    }
    if let Some(text) = &render.shift {
        let [f_init, f_shift] = parse_list::<2>("shift", text)?;
        out.push(Randomization::Shift {
            frame_len: s.synth.shift_frame,
            f_init: integral("shift", f_init)?,
            f_shift: integral("shift", f_shift)?,
        });
    }
    Ok(out)
}

fn open_model(render: &RenderFlags) -> Result<LoadedModel> {
    let bank = render.bank.as_deref().map(load_bank).transpose()?.map(Arc::new);
    let model = load_model(&render.checkpoint, bank, render.allow_bank_mismatch)?;
    if let Some(w) = &model.warning {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn synth_controls(a: &SynthArgs, model: &LoadedModel) -> Result<Vec<Vec<f64>>> {
    match &a.from_audio {
        Some(path) => {
            let audio = read_wav(path)?;
            let controls = model.controls_from_audio(&audio.samples, audio.sample_rate as f64)?;
            Ok(match a.frames {
                Some(f) => controls.iter().map(|c| nbn_core::features::resample_curve(c, f)).collect(),
                None => controls,
            })
        }
        None => {
            if a.curves.is_empty() {
                return Err(Error::Usage("give --curve once per control, or --from-audio".into()));
            }
            let curves = a.curves.iter().map(|p| load_curve(p)).collect::<Result<Vec<_>>>()?;
            model.controls_from_curves(&curves, a.frames)
        }
    }
}

fn write_channels(path: &Path, channels: &[Vec<f64>], sample_rate: f64) -> Result<()> {
    let refs: Vec<&[f64]> = channels.iter().map(|c| c.as_slice()).collect();
    write_wav(path, &refs, sample_rate.round() as u32)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let Some(s) = settings(&a.common, |o| o.synth = a.render.overlay())? else { return Ok(()) };
    let model = open_model(&a.render)?;
    let controls = synth_controls(a, &model)?;
    let opts = RenderOptions { schemes: schemes(&a.render, &s)?, stereo: a.render.stereo, seed: s.seed };
    let channels = model.synthesize(&controls, &opts)?;
    write_channels(&a.out, &channels, model.checkpoint.sample_rate)?;
    eprintln!(
        "wrote {} channel(s) of {} samples to {} (seed {})",
        channels.len(),
        channels[0].len(),
        a.out.display(),
        s.seed
    );
    Ok(())
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let Some(s) = settings(&a.common, |o| o.synth = a.render.overlay())? else { return Ok(()) };
    let model = open_model(&a.render)?;
    if model.num_controls() != 1 {
        return Err(Error::Usage(format!(
            "loudness transfer needs a single-control model, `{}` has {}",
            model.id,
            model.num_controls()
        )));
    }
    let source = read_wav(&a.source)?;
    if source.sample_rate as f64 != model.checkpoint.sample_rate {
        return Err(Error::Mismatch(format!(
            "source is at {} Hz, the model at {} Hz",
            source.sample_rate, model.checkpoint.sample_rate
        )));
    }
    let control = transfer_control(&source.samples, source.sample_rate as f64, a.offset, model.w())?;
    let opts = RenderOptions { schemes: schemes(&a.render, &s)?, stereo: a.render.stereo, seed: s.seed };
    let channels = model.synthesize(&[control], &opts)?;
    write_channels(&a.out, &channels, model.checkpoint.sample_rate)?;
    eprintln!("wrote {} (seed {})", a.out.display(), s.seed);
    Ok(())
}

fn randomise(a: &RandomiseArgs) -> Result<()> {
    let Some(s) = settings(&a.synth.common, |o| o.synth = a.synth.render.overlay())? else { return Ok(()) };
    let model = open_model(&a.synth.render)?;
    let controls = synth_controls(&a.synth, &model)?;
    let mut schemes = schemes(&a.synth.render, &s)?;
    if schemes.is_empty() {
        let k = 100.min(model.checkpoint.params.config().num_bands);
        schemes.push(Randomization::TopK { frame_len: s.synth.topk_frame, k, lo: 0.0, hi: 1.0 });
    }
    let stem = a.synth.out.with_extension("");
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    for i in 0..a.count {
        let seed = rand::RngCore::next_u64(&mut rng);
        let opts = RenderOptions { schemes: schemes.clone(), stereo: a.synth.render.stereo, seed };
        let channels = model.synthesize(&controls, &opts)?;
        let path = PathBuf::from(format!("{}_{i}.wav", stem.display()));
        write_channels(&path, &channels, model.checkpoint.sample_rate)?;
        eprintln!("wrote {} (seed {seed})", path.display());
    }
    Ok(())
}

fn compare_cmd(a: &CompareArgs) -> Result<()> {
    let backends = compare::parse_backends(&a.backends, a.train.taps.unwrap_or(1024))?;
    let Some(s) = settings(&a.common, |o| {
        o.model = a.model.overlay();
        o.train = a.train.overlay();
    })?
    else {
        return Ok(());
    };
    let needs_bank = backends.contains(&Backend::NoiseBands);
    let bank = match (&a.bank, needs_bank) {
        (Some(p), true) => Some(load_bank(p)?),
        (None, true) => return Err(Error::Usage("the filterbank backend needs --bank".into())),
        _ => None,
    };
    let paths = collect_wavs(&a.inputs)?;
    let (clips, rate) = load_clips(&paths)?;
    let sources = parse_controls(&a.controls, Path::new("."))?;
    let cfg = train_config(&s);
    cfg.validate()?;
    let ds = prepare_dataset(&clips, rate as f64, &sources, cfg.chunk_len)?;
    let total: usize = clips.iter().map(Vec::len).sum();
    let target = EvalTarget::from_dataset(&ds, total, cfg.w);
    let steps = s.train.steps.unwrap_or(cfg.total_steps(ds.len()));
    let cc = CompareConfig {
        hidden: s.model.hidden,
        out_mlp_depth: s.model.out_mlp_depth,
        train: cfg,
        steps,
        renders: a.renders,
    };
    let mut reports = Vec::new();
    for b in backends {
        eprintln!("training {} for {steps} steps", b.label());
        let (_, report) = compare::train_and_evaluate(&ds, &target, b, bank.as_ref(), &cc)?;
        eprintln!("  mrstft {:.4}", report.mrstft);
        reports.push(report);
    }
    compare::write_report(&a.out, &reports)
}

fn serve(a: &ServeArgs) -> Result<()> {
    let Some(s) = settings(&a.common, |o| {
        o.serve.host = a.host.clone();
        o.serve.port = a.port;
    })?
    else {
        return Ok(());
    };
    let bank = a.bank.as_deref().map(load_bank).transpose()?.map(Arc::new);
    let state = crate::service::AppState::open(&a.project, &a.checkpoints, bank, a.allow_bank_mismatch, s.seed)?;
    crate::service::serve_blocking(state, &s.serve.host, s.serve.port)
}
