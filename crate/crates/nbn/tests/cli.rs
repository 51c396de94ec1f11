mod common;

use common::*;
use nbn_core::features::CurveRate;
use noisebandnet::formats::wav::read_wav;

const TOY_BANK: &[&str] = &["--fs", "8000", "--filters", "16", "--f-min", "100"];

fn bake(out: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["bake", "--out", p(out)];
    args.extend_from_slice(TOY_BANK);
    args.extend_from_slice(extra);
    nbn(&args)
}

fn assert_error(out: &std::process::Output, code: &str, exit: i32) {
    assert_eq!(out.status.code(), Some(exit), "{}", stderr(out));
    let err = stderr(out);
    let first = err.lines().next().unwrap_or_default();
    assert!(first.starts_with(&format!("error[{code}]: ")), "{err}");
}

#[test]
fn bake_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy.nbnb");
    assert!(bake(&out, &[]).status.success());
    let before = std::fs::read(&out).unwrap();
    assert_error(&bake(&out, &["--seed", "9"]), "E_EXISTS", 1);
    assert_eq!(std::fs::read(&out).unwrap(), before);
    assert!(bake(&out, &["--seed", "9", "--force"]).status.success());
    assert_ne!(std::fs::read(&out).unwrap(), before);
}

#[test]
fn print_config_applies_flags_over_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("settings.toml");
    std::fs::write(&file, "seed = 7\n[bank]\nfilters = 32\nf_min = 50.0\n").unwrap();
    let out = nbn(&["bake", "--out", "unused.nbnb", "--config", p(&file), "--filters", "16", "--print-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let resolved: toml::Value = text.parse().unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(7));
    assert_eq!(resolved["bank"]["filters"].as_integer(), Some(16));
    assert_eq!(resolved["bank"]["f_min"].as_float(), Some(50.0));
    assert_eq!(resolved["bank"]["sample_rate"].as_float(), Some(44100.0));
    assert!(!std::path::Path::new("unused.nbnb").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("settings.toml");
    std::fs::write(&file, "[bank]\nfilterz = 32\n").unwrap();
    let out = nbn(&["bake", "--out", p(&dir.path().join("b.nbnb")), "--config", p(&file)]);
    assert_error(&out, "E_CONFIG", 1);
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_error(&nbn(&["bake"]), "E_USAGE", 2);
    assert_error(&nbn(&["synthesize"]), "E_USAGE", 2);
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip.wav");
    write_clip(&clip, 4000);
    let out = nbn(&["compare", p(&clip), "--backends", "filterbank,ddsp", "--out", p(&dir.path().join("r.csv"))]);
    assert_error(&out, "E_USAGE", 2);
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("c.nbcv");
    write_curve(&curve, vec![0.5; 8], CurveRate::Internal);
    let out = nbn(&[
        "synth",
        "--checkpoint",
        p(&dir.path().join("nope.nbck")),
        "--curve",
        p(&curve),
        "--out",
        p(&dir.path().join("o.wav")),
    ]);
    assert_error(&out, "E_NOT_FOUND", 1);
}

#[test]
fn synth_length_follows_frames_times_w() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fir_checkpoint(&dir.path().join("fir.nbck"), 16, 1);
    let curve = dir.path().join("ramp.nbcv");
    let frames = 1usize << 14;
    write_curve(&curve, (0..frames).map(|i| i as f64 / (frames - 1) as f64).collect(), CurveRate::Internal);
    let wav = dir.path().join("out.wav");
    let out = nbn(&["synth", "--checkpoint", p(&ck), "--curve", p(&curve), "--out", p(&wav), "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let audio = read_wav(&wav).unwrap();
    assert_eq!(audio.samples.len(), 524_288);
    assert_eq!(audio.sample_rate, TOY_FS);

    let reader = hound::WavReader::open(&wav).unwrap();
    assert_eq!(reader.spec().channels, 1);
}

#[test]
fn stereo_topk_writes_two_channels_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fir_checkpoint(&dir.path().join("fir.nbck"), 16, 1);
    let curve = dir.path().join("c.nbcv");
    write_curve(&curve, vec![0.2, 0.9, 0.4], CurveRate::Internal);
    let render = |name: &str, seed: &str| {
        let wav = dir.path().join(name);
        let out = nbn(&[
            "synth", "--checkpoint", p(&ck), "--curve", p(&curve), "--frames", "100", "--stereo", "--topk", "5,0,1",
            "--seed", seed, "--out", p(&wav),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(&wav).unwrap()
    };
    let a = render("a.wav", "4");
    assert_eq!(a, render("b.wav", "4"));
    assert_ne!(a, render("c.wav", "5"));
    let reader = hound::WavReader::open(dir.path().join("a.wav")).unwrap();
    assert_eq!(reader.spec().channels, 2);
    assert_eq!(reader.duration(), 100 * 32);
}

#[test]
fn malformed_randomisation_flags() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fir_checkpoint(&dir.path().join("fir.nbck"), 16, 1);
    let curve = dir.path().join("c.nbcv");
    write_curve(&curve, vec![0.5; 4], CurveRate::Internal);
    let out = nbn(&[
        "synth", "--checkpoint", p(&ck), "--curve", p(&curve), "--topk", "5,0", "--out", p(&dir.path().join("o.wav")),
    ]);
    assert_error(&out, "E_USAGE", 2);
}

#[test]
fn train_synth_transfer_randomise_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("toy.nbnb");
    assert!(bake(&bank, &[]).status.success());
    let clip = dir.path().join("clip.wav");
    write_clip(&clip, 6000);
    let run = dir.path().join("run");
    let train = |extra: &[&str]| {
        let mut args = vec![
            "train", p(&clip), "--controls", "loudness", "--bank", p(&bank), "--out", p(&run), "--hidden", "4", "--depth",
            "1", "--chunk", "2048", "--batch", "1", "--steps", "4", "--checkpoint-every", "2",
        ];
        args.extend_from_slice(extra);
        nbn(&args)
    };
    let out = train(&[]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["config.toml", "run.log", "loss.csv", "model.nbck", "checkpoints/step_00000002.nbck"] {
        assert!(run.join(name).exists(), "{name} missing");
    }
    let losses = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("step,loss"));
    assert_eq!(losses.lines().count(), 5);
    assert_error(&train(&[]), "E_EXISTS", 1);
    let again = train(&["--force"]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(std::fs::read_to_string(run.join("loss.csv")).unwrap(), losses, "training is seeded");

    let model = run.join("model.nbck");
    let wav = dir.path().join("resynth.wav");
    let out = nbn(&["synth", "--checkpoint", p(&model), "--bank", p(&bank), "--from-audio", p(&clip), "--out", p(&wav)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_wav(&wav).unwrap().samples.len(), 6000usize.div_ceil(32) * 32);

    let no_bank = nbn(&["synth", "--checkpoint", p(&model), "--from-audio", p(&clip), "--out", p(&wav)]);
    assert_error(&no_bank, "E_USAGE", 2);
    let other = dir.path().join("other.nbnb");
    assert!(bake(&other, &["--seed", "99"]).status.success());
    let mismatch = nbn(&["synth", "--checkpoint", p(&model), "--bank", p(&other), "--from-audio", p(&clip), "--out", p(&wav)]);
    assert_error(&mismatch, "E_MISMATCH", 1);
    let allowed = nbn(&[
        "synth", "--checkpoint", p(&model), "--bank", p(&other), "--allow-bank-mismatch", "--from-audio", p(&clip), "--out",
        p(&wav),
    ]);
    assert!(allowed.status.success(), "{}", stderr(&allowed));
    assert!(stderr(&allowed).contains("warning"));

    let moved = dir.path().join("moved.wav");
    let out = nbn(&[
        "transfer", "--checkpoint", p(&model), "--bank", p(&bank), "--source", p(&clip), "--offset", "-0.1", "--out", p(&moved),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_wav(&moved).unwrap().samples.len(), 6000usize.div_ceil(32) * 32);

    let stem = dir.path().join("var.wav");
    let out = nbn(&[
        "randomise", "--checkpoint", p(&model), "--bank", p(&bank), "--from-audio", p(&clip), "--count", "3", "--out", p(&stem),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let variations: Vec<Vec<u8>> = (0..3).map(|i| std::fs::read(dir.path().join(format!("var_{i}.wav"))).unwrap()).collect();
    assert_ne!(variations[0], variations[1]);
    assert_ne!(variations[1], variations[2]);
}

#[test]
fn compare_reports_every_backend_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("toy.nbnb");
    assert!(bake(&bank, &[]).status.success());
    let clip = dir.path().join("clip.wav");
    write_clip(&clip, 4000);
    let report = |name: &str| {
        let out_path = dir.path().join(name);
        let out = nbn(&[
            "compare", p(&clip), "--bank", p(&bank), "--backends", "filterbank,baseline:64,baseline:64", "--hidden", "4",
            "--depth", "1", "--chunk", "2048", "--batch", "1", "--steps", "3", "--renders", "2", "--out", p(&out_path),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read_to_string(out_path).unwrap()
    };
    let text = report("a.csv");
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    assert!(header.iter().any(|h| h == "mrstft"));
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][0], "filterbank");
    assert_eq!(rows[1], rows[2], "identical backends score identically");
    let mrstft = header.iter().position(|h| h == "mrstft").unwrap();
    assert!(rows.iter().all(|r| r[mrstft].parse::<f64>().unwrap().is_finite()));
    assert_eq!(text, report("b.csv"));
}

#[test]
fn bake_writes_a_loadable_bank_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.nbnb"), dir.path().join("b.nbnb"));
    assert!(bake(&a, &["--seed", "5"]).status.success());
    assert!(bake(&b, &["--seed", "5"]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let bank = noisebandnet::formats::bank::load_bank(&a).unwrap();
    assert_eq!(bank.num_bands(), 16);
    assert_eq!(bank.seed, 5);
}
