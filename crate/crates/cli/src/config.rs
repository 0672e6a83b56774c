//! Run configuration: one TOML file, overridden by command-line flags.
//!
//! ```toml
//! seed = 0
//! alpha = 0.5
//! normalize = true
//! ablations = false
//!
//! [paths]
//! corpus_dir = "corpus"
//! registry_dir = "registry"
//! report_dir = "reports"
//!
//! [synth]
//! preset = "separable"
//! repetitions = 3          # any SynthSpec field overrides the preset
//!
//! [acoustic]
//! n_mixtures = 3
//!
//! [prosodic]
//! n_mixtures = 3
//! ```
//!
//! Relative paths in a config file are taken relative to the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sphmm_sid::corpus::{Preset, SynthSpec, MANIFEST_FILE};
use sphmm_sid::hmm::TrainingConfig;
use sphmm_sid::pipeline::RegistryConfig;
use sphmm_sid::sphmm::{Alpha, Fusion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    /// Defaults to `<corpus_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    pub registry_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            manifest: None,
            registry_dir: "registry".into(),
            report_dir: "reports".into(),
        }
    }
}

impl Paths {
    pub fn manifest(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.corpus_dir.join(MANIFEST_FILE))
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_dir);
        fix(&mut self.registry_dir);
        fix(&mut self.report_dir);
        if let Some(m) = self.manifest.as_mut() {
            fix(m);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    pub preset: Preset,
    /// SynthSpec fields replacing the preset's values.
    #[serde(flatten)]
    pub overrides: toml::Table,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            overrides: toml::Table::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub alpha: f64,
    pub normalize: bool,
    /// Also train the pooled models needed by the ablation approaches.
    pub ablations: bool,
    pub paths: Paths,
    pub synth: SynthSection,
    pub acoustic: TrainingConfig,
    pub prosodic: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: Alpha::BALANCED.value(),
            normalize: true,
            ablations: false,
            paths: Paths::default(),
            synth: SynthSection::default(),
            acoustic: TrainingConfig::default(),
            prosodic: TrainingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(dir) = path.parent() {
            cfg.paths.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn fusion(&self) -> anyhow::Result<Fusion> {
        Ok(Fusion::new(Alpha::new(self.alpha)?, self.normalize))
    }

    pub fn synth_spec(&self) -> anyhow::Result<SynthSpec> {
        let base = SynthSpec {
            rng_seed: self.seed,
            ..SynthSpec::preset(self.synth.preset)
        };
        let mut table = toml::Table::try_from(&base)?;
        for (k, v) in &self.synth.overrides {
            if !table.contains_key(k) {
                bail!("unknown synth field {k:?}");
            }
            table.insert(k.clone(), v.clone());
        }
        let spec: SynthSpec = table.try_into()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn registry_config(&self) -> anyhow::Result<RegistryConfig> {
        let cfg = RegistryConfig {
            acoustic: self.acoustic.clone(),
            prosodic: self.prosodic.clone(),
            ablations: self.ablations,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn synth_overrides_apply() {
        let cfg = RunConfig::parse(
            "seed = 9\n[synth]\npreset = \"separable\"\nrepetitions = 2\n",
        )
        .unwrap();
        let spec = cfg.synth_spec().unwrap();
        assert_eq!(spec.repetitions, 2);
        assert_eq!(spec.n_speakers, 4);
        assert_eq!(spec.rng_seed, 9);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::parse("alpah = 0.3").is_err());
        let cfg = RunConfig::parse("[synth]\npreset = \"desk\"\nspeakers = 2\n").unwrap();
        assert!(cfg.synth_spec().is_err());
    }

    #[test]
    fn alpha_out_of_range() {
        let cfg = RunConfig::parse("alpha = 1.5").unwrap();
        assert!(cfg.fusion().is_err());
    }

    #[test]
    fn relative_paths_follow_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[paths]\ncorpus_dir = \"c\"\nreport_dir = \"/abs\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.corpus_dir, dir.path().join("c"));
        assert_eq!(cfg.paths.report_dir, PathBuf::from("/abs"));
        assert_eq!(cfg.paths.manifest(), dir.path().join("c").join("manifest.csv"));
    }
}
