//! Training inputs: WAV discovery and control specifications.

use std::path::{Path, PathBuf};

use nbn_core::features::FeatureKind;
use nbn_core::training::ControlSource;

use crate::error::{Error, Result};
use crate::formats::checkpoint::{ControlKind, ControlSpec};
use crate::formats::curve::load_curve;
use crate::formats::wav::read_wav;

/// Expands directories to their `.wav` files (sorted) and keeps files as
/// given.
pub fn collect_wavs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("no WAV files found in the given inputs".into()));
    }
    Ok(out)
}

/// Reads every clip, requiring one shared sample rate.
pub fn load_clips(paths: &[PathBuf]) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut rate = None;
    let mut clips = Vec::with_capacity(paths.len());
    for path in paths {
        let audio = read_wav(path)?;
        match rate {
            None => rate = Some(audio.sample_rate),
            Some(r) if r != audio.sample_rate => {
                return Err(Error::Mismatch(format!(
                    "{} is at {} Hz, earlier clips are at {r} Hz",
                    path.display(),
                    audio.sample_rate
                )))
            }
            _ => {}
        }
        if audio.samples.is_empty() {
            return Err(Error::Usage(format!("{} holds no samples", path.display())));
        }
        clips.push(audio.samples);
    }
    Ok((clips, rate.expect("at least one clip")))
}

/// Parses `loudness`, `centroid` and `curve:<file.nbcv>` entries.
pub fn parse_controls(spec: &str, base: &Path) -> Result<Vec<ControlSource>> {
    let sources = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| match item.split_once(':') {
            Some(("curve", file)) => {
                let path = base.join(file);
                Ok(ControlSource::Curve(load_curve(&path)?))
            }
            _ => item
                .parse::<FeatureKind>()
                .map(ControlSource::Feature)
                .map_err(|_| Error::Usage(format!("unknown control `{item}` (loudness, centroid or curve:<file>)"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if sources.is_empty() {
        return Err(Error::Usage("at least one control is required".into()));
    }
    Ok(sources)
}

/// Checkpoint records for the prepared controls.
pub fn control_specs(sources: &[ControlSource], ds: &nbn_core::training::Dataset) -> Vec<ControlSpec> {
    sources
        .iter()
        .zip(&ds.controls)
        .map(|(source, curve)| ControlSpec {
            name: curve.name.clone(),
            kind: match source {
                ControlSource::Feature(k) => ControlKind::Feature(*k),
                ControlSource::Curve(_) => ControlKind::Curve,
            },
            norm: curve.norm,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nbn_core::features::{ControlCurve, CurveRate, NormRange};

    #[test]
    fn control_lists() {
        let dir = tempfile::tempdir().unwrap();
        let curve = ControlCurve::new("hand", vec![0.0, 1.0], CurveRate::Audio, NormRange { min: 0.0, max: 1.0 }).unwrap();
        crate::formats::curve::save_curve(&curve, &dir.path().join("c.nbcv")).unwrap();
        let parsed = parse_controls("loudness, curve:c.nbcv", dir.path()).unwrap();
        assert_eq!(parsed, vec![ControlSource::Feature(FeatureKind::Loudness), ControlSource::Curve(curve)]);
        assert!(matches!(parse_controls("pitch", dir.path()), Err(Error::Usage(_))));
        assert!(matches!(parse_controls("curve:missing.nbcv", dir.path()), Err(Error::NotFound { .. })));
    }

    #[test]
    fn directories_expand_to_sorted_wavs() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.wav", "a.WAV", "notes.txt"] {
            std::fs::write(dir.path().join(name), b"").unwrap();
        }
        let found = collect_wavs(&[dir.path().to_path_buf()]).unwrap();
        let names: Vec<_> = found.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, ["a.WAV", "b.wav"]);
    }
}
