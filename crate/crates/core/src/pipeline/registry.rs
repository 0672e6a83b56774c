use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hmm::{train, GmmHmm, TrainingConfig};
use crate::labels::{Emotion, Gender, Label};
use crate::seed::derive_seed;
use crate::sphmm::{train_sphmm, Sphmm, ACOUSTIC_STATES};

use super::Utterance;

/// Speakers per gender and the emotion inventory, in fixed emotion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryDims {
    pub n_speakers: u32,
    pub emotions: Vec<Emotion>,
}

impl RegistryDims {
    pub fn new(n_speakers: u32, mut emotions: Vec<Emotion>) -> Result<Self> {
        emotions.sort();
        emotions.dedup();
        if n_speakers == 0 || emotions.is_empty() {
            return Err(Error::InvalidConfig(
                "a registry needs at least one speaker and one emotion".into(),
            ));
        }
        Ok(Self {
            n_speakers,
            emotions,
        })
    }

    pub fn n_emotions(&self) -> usize {
        self.emotions.len()
    }

    pub fn speakers(&self) -> impl Iterator<Item = u32> + Clone {
        1..=self.n_speakers
    }

    pub fn emotion_index(&self, e: Emotion) -> Option<usize> {
        self.emotions.iter().position(|x| *x == e)
    }

    /// Keys of every model a complete registry holds.
    pub fn model_keys(&self, ablations: bool) -> Vec<ModelKey> {
        let mut keys = Vec::new();
        for g in Gender::ALL {
            keys.push(ModelKey::Gender(g));
            for &e in &self.emotions {
                keys.push(ModelKey::Emotion(g, e));
                for s in self.speakers() {
                    keys.push(ModelKey::Speaker(g, e, s));
                    keys.push(ModelKey::OneStage(g, s, e));
                }
            }
            if ablations {
                for s in self.speakers() {
                    keys.push(ModelKey::PooledSpeaker(g, s));
                }
            }
        }
        if ablations {
            for &e in &self.emotions {
                keys.push(ModelKey::PooledEmotion(e));
            }
        }
        keys.sort();
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKey {
    /// Gender model over MFCCs, all speakers and emotions pooled.
    Gender(Gender),
    /// Gender-dependent emotion SPHMM, speakers pooled.
    Emotion(Gender, Emotion),
    /// Gender- and emotion-dependent speaker model over MFCCs.
    Speaker(Gender, Emotion, u32),
    /// One SPHMM per (gender, speaker, emotion).
    OneStage(Gender, u32, Emotion),
    /// Speaker SPHMM with emotions pooled (ablation set).
    PooledSpeaker(Gender, u32),
    /// Emotion SPHMM with genders and speakers pooled (ablation set).
    PooledEmotion(Emotion),
}

impl ModelKey {
    pub fn is_ablation(&self) -> bool {
        matches!(self, ModelKey::PooledSpeaker(..) | ModelKey::PooledEmotion(_))
    }

    /// Gender and speaker models are plain HMMs; everything else pairs an
    /// acoustic and a prosodic model.
    pub fn is_sphmm(&self) -> bool {
        !matches!(self, ModelKey::Gender(_) | ModelKey::Speaker(..))
    }

    fn matches(&self, l: &Label) -> bool {
        match *self {
            ModelKey::Gender(g) => l.gender == g,
            ModelKey::Emotion(g, e) => l.gender == g && l.emotion == e,
            ModelKey::Speaker(g, e, s) | ModelKey::OneStage(g, s, e) => {
                l.gender == g && l.emotion == e && l.speaker == s
            }
            ModelKey::PooledSpeaker(g, s) => l.gender == g && l.speaker == s,
            ModelKey::PooledEmotion(e) => l.emotion == e,
        }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKey::Gender(g) => write!(f, "gender-{g}"),
            ModelKey::Emotion(g, e) => write!(f, "emotion-{g}-{e}"),
            ModelKey::Speaker(g, e, s) => write!(f, "speaker-{g}-{e}-{s:02}"),
            ModelKey::OneStage(g, s, e) => write!(f, "onestage-{g}-{s:02}-{e}"),
            ModelKey::PooledSpeaker(g, s) => write!(f, "pooled-speaker-{g}-{s:02}"),
            ModelKey::PooledEmotion(e) => write!(f, "pooled-emotion-{e}"),
        }
    }
}

/// Which training utterances go into which model. Built from labels alone,
/// so the bookkeeping can be checked without any audio.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    dims: RegistryDims,
    ablations: bool,
    entries: BTreeMap<ModelKey, Vec<usize>>,
}

impl TrainingPlan {
    /// Infers the dimensions from the labels and fails with `MissingCell`
    /// unless every (gender, emotion, speaker) combination has data.
    pub fn new(labels: &[Label], ablations: bool) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InsufficientData("no training utterances".into()));
        }
        if let Some(bad) = labels.iter().find(|l| l.speaker == 0) {
            return Err(Error::UnknownLabel(format!(
                "speaker ids start at 1, got {bad}"
            )));
        }
        let n = labels.iter().map(|l| l.speaker).max().unwrap_or(0);
        let emotions: BTreeSet<Emotion> = labels.iter().map(|l| l.emotion).collect();
        let dims = RegistryDims::new(n, emotions.into_iter().collect())?;

        let present: BTreeSet<(Gender, Emotion, u32)> =
            labels.iter().map(|l| (l.gender, l.emotion, l.speaker)).collect();
        for g in Gender::ALL {
            for &e in &dims.emotions {
                for s in dims.speakers() {
                    if !present.contains(&(g, e, s)) {
                        return Err(Error::MissingCell(format!("{g}{s:02}/{e}")));
                    }
                }
            }
        }

        let entries = dims
            .model_keys(ablations)
            .into_iter()
            .map(|key| {
                let idx = (0..labels.len()).filter(|&i| key.matches(&labels[i])).collect();
                (key, idx)
            })
            .collect();
        Ok(Self {
            dims,
            ablations,
            entries,
        })
    }

    pub fn dims(&self) -> &RegistryDims {
        &self.dims
    }

    pub fn ablations(&self) -> bool {
        self.ablations
    }

    pub fn entries(&self) -> &BTreeMap<ModelKey, Vec<usize>> {
        &self.entries
    }

    pub fn counts(&self) -> RegistryCounts {
        RegistryCounts::from_keys(self.entries.keys())
    }
}

/// Number of models of each kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryCounts {
    pub gender: usize,
    pub emotion: usize,
    pub speaker: usize,
    pub one_stage: usize,
    pub pooled_speaker: usize,
    pub pooled_emotion: usize,
}

impl RegistryCounts {
    fn from_keys<'a>(keys: impl Iterator<Item = &'a ModelKey>) -> Self {
        let mut c = Self::default();
        for k in keys {
            match k {
                ModelKey::Gender(_) => c.gender += 1,
                ModelKey::Emotion(..) => c.emotion += 1,
                ModelKey::Speaker(..) => c.speaker += 1,
                ModelKey::OneStage(..) => c.one_stage += 1,
                ModelKey::PooledSpeaker(..) => c.pooled_speaker += 1,
                ModelKey::PooledEmotion(_) => c.pooled_emotion += 1,
            }
        }
        c
    }
}

impl fmt::Display for RegistryCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} gender, {} emotion, {} speaker, {} one-stage",
            self.gender, self.emotion, self.speaker, self.one_stage
        )?;
        if self.pooled_speaker + self.pooled_emotion > 0 {
            write!(
                f,
                ", {} pooled-speaker, {} pooled-emotion",
                self.pooled_speaker, self.pooled_emotion
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistryConfig {
    /// Used for the 9-state acoustic models (gender, speaker, and the
    /// acoustic half of every SPHMM).
    pub acoustic: TrainingConfig,
    /// Used for the 3-state prosodic half of every SPHMM.
    pub prosodic: TrainingConfig,
    pub ablations: bool,
    /// Master seed; each model derives its own seed from this and its key.
    pub seed: u64,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            acoustic: TrainingConfig::default(),
            prosodic: TrainingConfig::default(),
            ablations: false,
            seed: 0,
        }
    }
}

impl RegistryConfig {
    pub fn validate(&self) -> Result<()> {
        self.acoustic.validate()?;
        self.prosodic.validate()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Hmm(GmmHmm),
    Sphmm(Sphmm),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct AblationModels {
    pub(crate) pooled_speaker: BTreeMap<(Gender, u32), Sphmm>,
    pub(crate) pooled_emotion: BTreeMap<Emotion, Sphmm>,
}

/// Every trained model needed by the recognizers. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry {
    pub(crate) dims: RegistryDims,
    pub(crate) config: RegistryConfig,
    pub(crate) gender: BTreeMap<Gender, GmmHmm>,
    pub(crate) emotion: BTreeMap<(Gender, Emotion), Sphmm>,
    pub(crate) speaker: BTreeMap<(Gender, Emotion, u32), GmmHmm>,
    pub(crate) one_stage: BTreeMap<(Gender, u32, Emotion), Sphmm>,
    pub(crate) ablation: Option<AblationModels>,
    pub(crate) training_counts: BTreeMap<ModelKey, usize>,
}

impl ModelRegistry {
    /// Assembles a registry from trained models, checking that exactly the
    /// keys of `dims` are present with the right model kind. Ablation sets
    /// are all-or-nothing.
    pub fn from_models(
        dims: RegistryDims,
        config: RegistryConfig,
        models: impl IntoIterator<Item = (ModelKey, Model, usize)>,
    ) -> Result<Self> {
        let mut reg = ModelRegistry {
            dims,
            config,
            gender: BTreeMap::new(),
            emotion: BTreeMap::new(),
            speaker: BTreeMap::new(),
            one_stage: BTreeMap::new(),
            ablation: None,
            training_counts: BTreeMap::new(),
        };
        let mut ablation = AblationModels::default();
        for (key, model, count) in models {
            let dup = match (key, model) {
                (ModelKey::Gender(g), Model::Hmm(m)) => reg.gender.insert(g, m).is_some(),
                (ModelKey::Speaker(g, e, s), Model::Hmm(m)) => {
                    reg.speaker.insert((g, e, s), m).is_some()
                }
                (ModelKey::Emotion(g, e), Model::Sphmm(m)) => {
                    reg.emotion.insert((g, e), m).is_some()
                }
                (ModelKey::OneStage(g, s, e), Model::Sphmm(m)) => {
                    reg.one_stage.insert((g, s, e), m).is_some()
                }
                (ModelKey::PooledSpeaker(g, s), Model::Sphmm(m)) => {
                    ablation.pooled_speaker.insert((g, s), m).is_some()
                }
                (ModelKey::PooledEmotion(e), Model::Sphmm(m)) => {
                    ablation.pooled_emotion.insert(e, m).is_some()
                }
                (key, _) => {
                    return Err(Error::InvalidModel(format!("wrong model kind for {key}")))
                }
            };
            if dup {
                return Err(Error::InvalidModel(format!("duplicate model {key}")));
            }
            reg.training_counts.insert(key, count);
        }
        let has_ablation = !ablation.pooled_speaker.is_empty() || !ablation.pooled_emotion.is_empty();
        if has_ablation {
            reg.ablation = Some(ablation);
        }

        let expected = reg.dims.model_keys(has_ablation);
        let found: Vec<ModelKey> = reg.training_counts.keys().copied().collect();
        if expected != found {
            let missing = expected.iter().find(|k| !reg.training_counts.contains_key(k));
            return Err(match missing {
                Some(k) => Error::MissingCell(k.to_string()),
                None => Error::InvalidModel("registry holds models outside its dimensions".into()),
            });
        }
        reg.check_dims()?;
        Ok(reg)
    }

    fn check_dims(&self) -> Result<()> {
        let dim = self.gender[&Gender::Male].feature_dim();
        let acoustic = self
            .gender
            .values()
            .chain(self.speaker.values())
            .chain(self.sphmms().map(|m| m.acoustic()));
        for m in acoustic {
            if m.feature_dim() != dim || m.n_states() != ACOUSTIC_STATES {
                return Err(Error::InvalidModel(
                    "acoustic models disagree on shape".into(),
                ));
            }
        }
        let pdim = self.emotion.values().next().map(|m| m.suprasegmental().feature_dim());
        if self.sphmms().any(|m| Some(m.suprasegmental().feature_dim()) != pdim) {
            return Err(Error::InvalidModel(
                "prosodic models disagree on dimension".into(),
            ));
        }
        Ok(())
    }

    fn sphmms(&self) -> impl Iterator<Item = &Sphmm> {
        let abl = self.ablation.iter().flat_map(|a| {
            a.pooled_speaker.values().chain(a.pooled_emotion.values())
        });
        self.emotion.values().chain(self.one_stage.values()).chain(abl)
    }

    pub fn dims(&self) -> &RegistryDims {
        &self.dims
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn has_ablations(&self) -> bool {
        self.ablation.is_some()
    }

    pub fn counts(&self) -> RegistryCounts {
        RegistryCounts::from_keys(self.training_counts.keys())
    }

    /// Number of utterances each model was trained on.
    pub fn training_counts(&self) -> &BTreeMap<ModelKey, usize> {
        &self.training_counts
    }

    pub fn model(&self, key: ModelKey) -> Option<Model> {
        let abl = self.ablation.as_ref();
        match key {
            ModelKey::Gender(g) => self.gender.get(&g).cloned().map(Model::Hmm),
            ModelKey::Speaker(g, e, s) => self.speaker.get(&(g, e, s)).cloned().map(Model::Hmm),
            ModelKey::Emotion(g, e) => self.emotion.get(&(g, e)).cloned().map(Model::Sphmm),
            ModelKey::OneStage(g, s, e) => {
                self.one_stage.get(&(g, s, e)).cloned().map(Model::Sphmm)
            }
            ModelKey::PooledSpeaker(g, s) => abl
                .and_then(|a| a.pooled_speaker.get(&(g, s)))
                .cloned()
                .map(Model::Sphmm),
            ModelKey::PooledEmotion(e) => abl
                .and_then(|a| a.pooled_emotion.get(&e))
                .cloned()
                .map(Model::Sphmm),
        }
    }

    pub fn gender_model(&self, g: Gender) -> &GmmHmm {
        &self.gender[&g]
    }

    pub fn emotion_model(&self, g: Gender, e: Emotion) -> Result<&Sphmm> {
        self.emotion
            .get(&(g, e))
            .ok_or_else(|| Error::UnknownLabel(format!("emotion {e}")))
    }

    pub fn speaker_model(&self, g: Gender, e: Emotion, s: u32) -> Result<&GmmHmm> {
        self.speaker
            .get(&(g, e, s))
            .ok_or_else(|| Error::UnknownLabel(format!("{g}{s:02}/{e}")))
    }

    pub fn one_stage_model(&self, g: Gender, s: u32, e: Emotion) -> Result<&Sphmm> {
        self.one_stage
            .get(&(g, s, e))
            .ok_or_else(|| Error::UnknownLabel(format!("{g}{s:02}/{e}")))
    }

    pub fn pooled_speaker_model(&self, g: Gender, s: u32) -> Result<&Sphmm> {
        let a = self.ablation.as_ref().ok_or(Error::AblationModelsMissing)?;
        a.pooled_speaker
            .get(&(g, s))
            .ok_or_else(|| Error::UnknownLabel(format!("{g}{s:02}")))
    }

    pub fn pooled_emotion_model(&self, e: Emotion) -> Result<&Sphmm> {
        let a = self.ablation.as_ref().ok_or(Error::AblationModelsMissing)?;
        a.pooled_emotion
            .get(&e)
            .ok_or_else(|| Error::UnknownLabel(format!("emotion {e}")))
    }
}

/// Trains every model of the plan in parallel. Gender, emotion, speaker and
/// one-stage models always see ground-truth partitions of the training set.
pub fn train_registry(
    utterances: &[Utterance],
    labels: &[Label],
    config: &RegistryConfig,
) -> Result<ModelRegistry> {
    if utterances.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} utterances but {} labels",
            utterances.len(),
            labels.len()
        )));
    }
    config.validate()?;
    let plan = TrainingPlan::new(labels, config.ablations)?;
    let trained = plan
        .entries()
        .par_iter()
        .map(|(key, idx)| {
            let tag = key.to_string();
            let acoustic_cfg = config.acoustic.with_seed(derive_seed(config.seed, &format!("{tag}/acoustic")));
            let model = if key.is_sphmm() {
                let prosodic_cfg =
                    config.prosodic.with_seed(derive_seed(config.seed, &format!("{tag}/prosodic")));
                let pairs: Vec<_> = idx
                    .iter()
                    .map(|&i| (&utterances[i].features, &utterances[i].prosody))
                    .collect();
                Model::Sphmm(train_sphmm(&pairs, &acoustic_cfg, &prosodic_cfg)?)
            } else {
                let obs: Vec<&[Vec<f64>]> =
                    idx.iter().map(|&i| utterances[i].features.frames()).collect();
                Model::Hmm(train::train(&obs, ACOUSTIC_STATES, &acoustic_cfg)?)
            };
            Ok((*key, model, idx.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelRegistry::from_models(plan.dims().clone(), config.clone(), trained)
}
