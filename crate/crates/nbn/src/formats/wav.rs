//! WAV input (any PCM or float layout, mixed to mono) and 32-bit float
//! output.

use std::io::{Cursor, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::atomic_write;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(std::io::BufReader::new(file)).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader.into_samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect()
        }
    }
    .map_err(|e| wav_error(path, e))?;
    let channels = spec.channels.max(1) as usize;
    let samples = interleaved.chunks_exact(channels).map(|f| f.iter().sum::<f64>() / channels as f64).collect();
    Ok(Audio { sample_rate: spec.sample_rate, samples })
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav { path: path.to_path_buf(), source: other },
    }
}

fn encode<W: Write + Seek>(sink: W, channels: &[&[f64]], sample_rate: u32) -> hound::Result<()> {
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::new(sink, spec)?;
    let frames = channels.iter().map(|c| c.len()).min().unwrap_or(0);
    for i in 0..frames {
        for c in channels {
            writer.write_sample(c[i] as f32)?;
        }
    }
    writer.finalize()
}

/// Encodes equal-length channels as an in-memory WAV file.
pub fn wav_bytes(channels: &[&[f64]], sample_rate: u32) -> Result<Vec<u8>> {
    check_channels(channels)?;
    let mut cursor = Cursor::new(Vec::new());
    encode(&mut cursor, channels, sample_rate)
        .map_err(|e| Error::Wav { path: "<memory>".into(), source: e })?;
    Ok(cursor.into_inner())
}

pub fn write_wav(path: &Path, channels: &[&[f64]], sample_rate: u32) -> Result<()> {
    let bytes = wav_bytes(channels, sample_rate)?;
    atomic_write(path, |out| out.write_all(&bytes))
}

fn check_channels(channels: &[&[f64]]) -> Result<()> {
    if channels.is_empty() || channels.iter().any(|c| c.len() != channels[0].len()) {
        return Err(Error::Usage("WAV output needs one or more channels of equal length".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_and_stereo_mixdown() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let left = [0.5, -0.25, 0.0];
        let right = [0.25, 0.25, 1.0];
        write_wav(&path, &[&left, &right], 8000).unwrap();
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.sample_rate, 8000);
        assert_eq!(audio.samples, vec![0.375, 0.0, 0.5]);
    }

    #[test]
    fn integer_input_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.wav");
        let spec = WavSpec { channels: 1, sample_rate: 100, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [16384i16, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&path).unwrap().samples, vec![0.5, -1.0]);
    }

    #[test]
    fn missing_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_wav(&dir.path().join("none.wav")), Err(Error::NotFound { .. })));
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav file at all").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav { .. })));
    }
}
