//! Layered settings: built-in defaults, then a TOML file, then flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declares a resolved settings section, its all-optional overlay and the
/// overlay application.
macro_rules! layered {
    ($name:ident / $partial:ident { $($field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(pub $field: $ty),*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $($field: $default),* }
            }
        }

        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $partial {
            $(pub $field: Option<$ty>),*
        }

        impl $name {
            pub fn apply(&mut self, overlay: &$partial) {
                $(if let Some(v) = &overlay.$field {
                    self.$field = v.clone();
                })*
            }
        }
    };
}

layered!(BankSettings / BankOverlay {
    sample_rate: f64 = 44_100.0,
    filters: usize = 2048,
    f_min: f64 = 20.0,
    transition_fraction: f64 = 0.2,
    stopband_attenuation_db: f64 = 50.0,
    linear_fraction: f64 = 0.5,
});

layered!(ModelSettings / ModelOverlay {
    hidden: usize = 128,
    out_mlp_depth: usize = 3,
});

layered!(TrainSettings / TrainOverlay {
    backend: String = "filterbank".into(),
    taps: usize = 1024,
    chunk_len: usize = 65_536,
    batch: usize = 16,
    lr: f64 = 1e-3,
    epochs: usize = 10_000,
    // overrides the epoch-derived step budget when set
    steps: Option<usize> = None,
    w: usize = 32,
    checkpoint_every: usize = 1000,
});

layered!(SynthSettings / SynthOverlay {
    topk_frame: usize = 430,
    shift_frame: usize = 645,
});

layered!(ServeSettings / ServeOverlay {
    host: String = "127.0.0.1".into(),
    port: u16 = 8733,
});

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub bank: BankSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub synth: SynthSettings,
    pub serve: ServeSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overlay {
    pub seed: Option<u64>,
    pub bank: BankOverlay,
    pub model: ModelOverlay,
    pub train: TrainOverlay,
    pub synth: SynthOverlay,
    pub serve: ServeOverlay,
}

impl Settings {
    pub fn apply(&mut self, o: &Overlay) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.bank.apply(&o.bank);
        self.model.apply(&o.model);
        self.train.apply(&o.train);
        self.synth.apply(&o.synth);
        self.serve.apply(&o.serve);
    }

    /// Defaults, overridden by `file` if given, overridden by `flags`.
    pub fn resolve(file: Option<&Path>, flags: &Overlay) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            s.apply(&read_overlay(path)?);
        }
        s.apply(flags);
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings are plain data")
    }
}

pub fn read_overlay(path: &Path) -> Result<Overlay> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_overlay(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn parse_overlay(text: &str) -> std::result::Result<Overlay, String> {
    toml::from_str(text).map_err(|e| e.message().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 4\n[bank]\nfilters = 64\nsample_rate = 8000.0\n[train]\nlr = 0.01\n").unwrap();
        let mut flags = Overlay::default();
        flags.bank.filters = Some(32);
        let s = Settings::resolve(Some(&path), &flags).unwrap();
        assert_eq!(s.bank.filters, 32);
        assert_eq!(s.bank.sample_rate, 8000.0);
        assert_eq!(s.train.lr, 0.01);
        assert_eq!(s.seed, 4);
        assert_eq!(s.train.batch, 16);
    }

    #[test]
    fn printed_config_reloads_to_the_same_settings() {
        let mut s = Settings::default();
        s.train.steps = Some(500);
        s.serve.port = 9000;
        let overlay = parse_overlay(&s.to_toml()).unwrap();
        let mut back = Settings::default();
        back.apply(&overlay);
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_overlay("[bank]\nfilterz = 3\n").is_err());
    }
}
