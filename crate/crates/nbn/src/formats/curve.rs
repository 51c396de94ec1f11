//! `.nbcv` control curves: magic `NBCV`, version, name, rate tag
//! (0 audio, 1 internal), length, normalisation range, then 32-bit values.

use std::path::Path;

use nbn_core::features::{ControlCurve, CurveRate, NormRange};

use super::{atomic_write, put_f32s, put_f64, put_str, put_u32, put_u64, put_u8, Decoder};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NBCV";
pub const VERSION: u32 = 1;

pub fn save_curve(curve: &ControlCurve, path: &Path) -> Result<()> {
    atomic_write(path, |out| {
        out.write_all(MAGIC)?;
        put_u32(out, VERSION)?;
        put_str(out, &curve.name)?;
        put_u8(out, rate_tag(curve.rate))?;
        put_u64(out, curve.values.len() as u64)?;
        put_f64(out, curve.norm.min)?;
        put_f64(out, curve.norm.max)?;
        put_f32s(out, curve.values.iter().map(|&v| v as f32))
    })
}

fn rate_tag(rate: CurveRate) -> u8 {
    match rate {
        CurveRate::Audio => 0,
        CurveRate::Internal => 1,
    }
}

pub fn load_curve(path: &Path) -> Result<ControlCurve> {
    let mut d = Decoder::open(path)?;
    d.magic(MAGIC)?;
    d.version(VERSION)?;
    let name = d.string("the curve name")?;
    let rate = match d.u8("the rate tag")? {
        0 => CurveRate::Audio,
        1 => CurveRate::Internal,
        t => return Err(d.corrupt(format!("unknown rate tag {t}"))),
    };
    let len = d.u64("the curve length")? as usize;
    let norm = NormRange { min: d.f64("norm_min")?, max: d.f64("norm_max")? };
    if !(norm.min < norm.max) {
        return Err(d.corrupt(format!("normalisation range [{}, {}] is empty", norm.min, norm.max)));
    }
    let values: Vec<f64> = d.f32s(len, "the curve values")?.into_iter().map(f64::from).collect();
    d.finish()?;
    ControlCurve::new(name, values, rate, norm).map_err(|e| Error::corrupt(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.nbcv");
        let values: Vec<f64> = (0..100).map(|i| (i as f64 / 99.0) as f32 as f64).collect();
        let curve =
            ControlCurve::new("ramp", values, CurveRate::Internal, NormRange { min: -80.0, max: -3.5 }).unwrap();
        save_curve(&curve, &path).unwrap();
        assert_eq!(load_curve(&path).unwrap(), curve);
    }

    #[test]
    fn rejects_values_outside_the_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.nbcv");
        let curve = ControlCurve::new("x", vec![0.5; 4], CurveRate::Audio, NormRange { min: 0.0, max: 1.0 }).unwrap();
        save_curve(&curve, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_curve(&path), Err(Error::Corrupt { .. })));
    }
}
