//! Recognizers over a trained [`ModelRegistry`]: one-stage, the
//! gender → emotion → speaker cascade, and the pooled ablation variants.
//!
//! Every stage is an argmax with ties going to the lowest candidate index
//! (male before female, emotions in [`Emotion::ALL`](crate::labels::Emotion::ALL)
//! order, lower speaker ids first). Each utterance is decided on its own.

mod identify;
mod registry;
mod store;

pub use identify::{
    Approach, IdentificationResult, LiveScores, Overrides, Prediction, Recognizer, ScoreSource,
    ScoreTable, Stage, StageScores,
};
pub use registry::{
    train_registry, Model, ModelKey, ModelRegistry, RegistryConfig, RegistryCounts,
    RegistryDims, TrainingPlan,
};
pub use store::REGISTRY_FORMAT_VERSION;

use rayon::prelude::*;

use crate::corpus::{ingest_wav, CorpusManifest, Split};
use crate::dsp::{AudioBuffer, FeatureExtractor, FeatureSequence};
use crate::error::Result;
use crate::labels::Label;
use crate::prosody::{suprasegmental_observations, SuprasegmentalSequence};

/// Both observation streams of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: FeatureSequence,
    pub prosody: SuprasegmentalSequence,
}

impl Utterance {
    pub fn new(features: FeatureSequence, prosody: SuprasegmentalSequence) -> Self {
        Self { features, prosody }
    }

    pub fn from_audio(extractor: &FeatureExtractor, audio: &AudioBuffer) -> Result<Self> {
        Ok(Self {
            features: extractor.extract(audio)?,
            prosody: suprasegmental_observations(audio)?,
        })
    }
}

/// Reads and analyses every utterance of one split, in manifest order.
pub fn load_split(
    manifest: &CorpusManifest,
    split: Split,
    extractor: &FeatureExtractor,
) -> Result<(Vec<Utterance>, Vec<Label>)> {
    let records: Vec<_> = manifest.split(split).collect();
    let utterances = records
        .par_iter()
        .map(|r| Utterance::from_audio(extractor, &ingest_wav(&manifest.resolve(r))?))
        .collect::<Result<Vec<_>>>()?;
    Ok((utterances, records.iter().map(|r| r.label()).collect()))
}
