//! Run configuration shared by the command line tool.
//!
//! A config file is TOML: a few top-level keys plus `[optimization]`,
//! `[gibberish]`, `[ensemble]` and `[photos]` sections. Every key is
//! optional; command line flags override whatever the file sets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BridgeBackend, EmbeddingBackend, SyntheticBackend};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::evaluation::GibberishKind;
use crate::features::OptimizationConfig;
use crate::gibberish::{self, GibberishConfig, SyllableLexicon};

pub const SEED_ENV: &str = "TUNI_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibberishOptions {
    pub kind: GibberishKind,
    /// Number of gibberish texts (ℓ).
    pub count: usize,
    pub length: usize,
    /// Alphabet for random gibberish; printable ASCII when unset.
    pub charset: Option<String>,
    /// Syllable lexicon for covert names; the embedded one when unset.
    pub lexicon: Option<PathBuf>,
    /// Extra real names the covert generator must avoid.
    pub names: Option<PathBuf>,
}

impl Default for GibberishOptions {
    fn default() -> Self {
        Self {
            kind: GibberishKind::Random,
            count: 50,
            length: 10,
            charset: None,
            lexicon: None,
            names: None,
        }
    }
}

impl GibberishOptions {
    pub fn generate(&self, seed: u64) -> Result<Vec<String>> {
        match self.kind {
            GibberishKind::Random => {
                let mut config = GibberishConfig {
                    count: self.count,
                    length: self.length,
                    seed,
                    ..Default::default()
                };
                if let Some(cs) = &self.charset {
                    config.charset = cs.chars().collect();
                }
                gibberish::generate_random_gibberish(&config)
            }
            GibberishKind::Covert => {
                let mut blocklist = gibberish::real_names();
                if let Some(path) = &self.names {
                    blocklist.extend(gibberish::load_name_list(path)?);
                }
                let lexicon = match &self.lexicon {
                    Some(path) => SyllableLexicon::load(path, blocklist)?,
                    None if self.names.is_none() => SyllableLexicon::default(),
                    None => SyllableLexicon::new(
                        SyllableLexicon::default().initial().to_vec(),
                        SyllableLexicon::default().finals().to_vec(),
                        blocklist,
                    )?,
                };
                gibberish::generate_covert_names(self.count, &lexicon, seed)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotoOptions {
    /// Real photos used per identity (c); 0 disables enhancement.
    pub count: usize,
    /// Optimized images compared per text (k); all epochs when unset.
    pub images: Option<usize>,
    /// Directory written by `save_photo_sets`.
    pub dir: Option<PathBuf>,
    /// Face extractor file.
    pub face: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `--seed` and then `TUNI_SEED` take over when unset.
    pub seed: Option<u64>,
    /// `synthetic:PATH`, `bridge:COMMAND LINE`, or a plain backend file path.
    pub backend: Option<String>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub optimization: OptimizationConfig,
    pub gibberish: GibberishOptions,
    pub ensemble: EnsembleConfig,
    pub photos: PhotoOptions,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.optimization.validate()?;
        self.ensemble.validate()?;
        if self.gibberish.count < 2 {
            return Err(Error::invalid("at least two gibberish texts are needed"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("--workers must be at least 1"));
        }
        if self.photos.images == Some(0) {
            return Err(Error::invalid("photo images must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    ConfigFile,
    Env,
    Default,
}

impl SeedSource {
    pub fn describe(self) -> &'static str {
        match self {
            SeedSource::Flag => "--seed",
            SeedSource::ConfigFile => "config file",
            SeedSource::Env => SEED_ENV,
            SeedSource::Default => "default",
        }
    }
}

/// Flag, then config file, then `TUNI_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(s) = file {
        return Ok((s, SeedSource::ConfigFile));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(|s| (s, SeedSource::Env))
            .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok((0, SeedSource::Default)),
    }
}

/// Opens a backend from its spec string.
pub fn open_backend(spec: &str) -> Result<Box<dyn EmbeddingBackend>> {
    if let Some(cmd) = spec.strip_prefix("bridge:") {
        return Ok(Box::new(BridgeBackend::spawn(cmd)?));
    }
    let path = spec.strip_prefix("synthetic:").unwrap_or(spec);
    let backend = SyntheticBackend::load(path).map_err(|e| match e {
        Error::Io(io) => Error::BackendUnavailable(format!("cannot read backend {path}: {io}")),
        other => other,
    })?;
    Ok(Box::new(backend))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let c = RunConfig::parse(
            "seed = 7\nbackend = \"synthetic:b.bin\"\n[optimization]\nepochs = 5\n[ensemble]\nthreshold = 2\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.optimization.epochs, 5);
        assert_eq!(c.optimization.iterations, 1000);
        assert_eq!(c.ensemble.threshold, 2);
        assert!(RunConfig::parse("[optimization]\nepoch = 5\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            seed: Some(3),
            ..Default::default()
        };
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn flag_beats_file() {
        assert_eq!(
            resolve_seed(Some(1), Some(2)).unwrap(),
            (1, SeedSource::Flag)
        );
        assert_eq!(
            resolve_seed(None, Some(2)).unwrap(),
            (2, SeedSource::ConfigFile)
        );
    }
}
