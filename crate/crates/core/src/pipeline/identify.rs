use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Emotion, Gender, Label};
use crate::math::argmax;
use crate::sphmm::{Fusion, SphmmScores};

use super::registry::{ModelRegistry, RegistryDims};
use super::Utterance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// Argmax over all (gender, speaker, emotion) SPHMMs.
    OneStage,
    /// Gender, then emotion, then speaker.
    ThreeStage,
    /// Gender, then emotion-pooled speaker models.
    Exp1,
    /// Gender-pooled emotion, then speaker models of that emotion.
    Exp2,
    /// Speaker models pooled over gender and emotion.
    Exp3,
}

impl Approach {
    pub fn tag(self) -> &'static str {
        match self {
            Approach::OneStage => "one-stage",
            Approach::ThreeStage => "three-stage",
            Approach::Exp1 => "exp1",
            Approach::Exp2 => "exp2",
            Approach::Exp3 => "exp3",
        }
    }

    pub fn needs_ablations(self) -> bool {
        matches!(self, Approach::Exp1 | Approach::Exp2 | Approach::Exp3)
    }

    /// Whether the approach predicts an emotion at all.
    pub fn predicts_emotion(self) -> bool {
        !matches!(self, Approach::Exp1 | Approach::Exp3)
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-stage" => Ok(Approach::OneStage),
            "three-stage" => Ok(Approach::ThreeStage),
            "exp1" => Ok(Approach::Exp1),
            "exp2" => Ok(Approach::Exp2),
            "exp3" => Ok(Approach::Exp3),
            _ => Err(Error::Parse(format!("unknown approach {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gender,
    Emotion,
    Speaker,
    /// Joint speaker/emotion decision of the one-stage and pooled approaches.
    Joint,
}

/// One stage's candidates (in tie-break order), their scores and the winner.
/// For a forced stage `winner` is the forced candidate, not the argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageScores {
    pub stage: Stage,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
    pub winner: usize,
    pub forced: bool,
}

impl StageScores {
    fn decide(stage: Stage, candidates: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        let winner = argmax(&scores).ok_or_else(|| {
            Error::NumericalFailure(format!("no finite score among {} candidates", scores.len()))
        })?;
        Ok(Self {
            stage,
            candidates,
            scores,
            winner,
            forced: false,
        })
    }

    fn forced(stage: Stage, candidates: Vec<String>, scores: Vec<f64>, winner: usize) -> Self {
        Self {
            stage,
            candidates,
            scores,
            winner,
            forced: true,
        }
    }

    pub fn winner_label(&self) -> &str {
        &self.candidates[self.winner]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub gender: Gender,
    /// `None` for approaches without an emotion decision.
    pub emotion: Option<Emotion>,
    pub speaker: u32,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.gender, self.speaker)?;
        if let Some(e) = self.emotion {
            write!(f, "/{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub approach: Approach,
    pub predicted: Prediction,
    pub stages: Vec<StageScores>,
}

impl IdentificationResult {
    pub fn stage(&self, stage: Stage) -> Option<&StageScores> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

/// Labels fed to later stages instead of the earlier stages' decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    pub gender: Option<Gender>,
    pub emotion: Option<Emotion>,
}

impl Overrides {
    pub fn truth(label: &Label) -> Self {
        Self {
            gender: Some(label.gender),
            emotion: Some(label.emotion),
        }
    }
}

/// Raw model scores for one utterance. `LiveScores` computes them on demand;
/// `ScoreTable` holds all of them so that any fusion can be replayed.
pub trait ScoreSource {
    fn gender(&self, g: Gender) -> Result<f64>;
    fn emotion(&self, g: Gender, e: Emotion) -> Result<SphmmScores>;
    fn speaker(&self, g: Gender, e: Emotion, s: u32) -> Result<f64>;
    fn one_stage(&self, g: Gender, s: u32, e: Emotion) -> Result<SphmmScores>;
    fn pooled_speaker(&self, g: Gender, s: u32) -> Result<SphmmScores>;
    fn pooled_emotion(&self, e: Emotion) -> Result<SphmmScores>;
}

pub struct LiveScores<'a> {
    registry: &'a ModelRegistry,
    utterance: &'a Utterance,
}

impl<'a> LiveScores<'a> {
    pub fn new(registry: &'a ModelRegistry, utterance: &'a Utterance) -> Self {
        Self {
            registry,
            utterance,
        }
    }
}

impl ScoreSource for LiveScores<'_> {
    fn gender(&self, g: Gender) -> Result<f64> {
        self.registry
            .gender_model(g)
            .log_forward(self.utterance.features.frames())
    }

    fn emotion(&self, g: Gender, e: Emotion) -> Result<SphmmScores> {
        let u = self.utterance;
        self.registry.emotion_model(g, e)?.scores(&u.features, &u.prosody)
    }

    fn speaker(&self, g: Gender, e: Emotion, s: u32) -> Result<f64> {
        self.registry
            .speaker_model(g, e, s)?
            .log_forward(self.utterance.features.frames())
    }

    fn one_stage(&self, g: Gender, s: u32, e: Emotion) -> Result<SphmmScores> {
        let u = self.utterance;
        self.registry.one_stage_model(g, s, e)?.scores(&u.features, &u.prosody)
    }

    fn pooled_speaker(&self, g: Gender, s: u32) -> Result<SphmmScores> {
        let u = self.utterance;
        self.registry.pooled_speaker_model(g, s)?.scores(&u.features, &u.prosody)
    }

    fn pooled_emotion(&self, e: Emotion) -> Result<SphmmScores> {
        let u = self.utterance;
        self.registry.pooled_emotion_model(e)?.scores(&u.features, &u.prosody)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    gender: BTreeMap<Gender, f64>,
    emotion: BTreeMap<(Gender, Emotion), SphmmScores>,
    speaker: BTreeMap<(Gender, Emotion, u32), f64>,
    one_stage: BTreeMap<(Gender, u32, Emotion), SphmmScores>,
    pooled_speaker: BTreeMap<(Gender, u32), SphmmScores>,
    pooled_emotion: BTreeMap<Emotion, SphmmScores>,
}

impl ScoreTable {
    /// Scores the utterance against every model in the registry.
    pub fn compute(registry: &ModelRegistry, utterance: &Utterance) -> Result<Self> {
        let live = LiveScores::new(registry, utterance);
        let dims = registry.dims();
        let mut t = ScoreTable::default();
        for g in Gender::ALL {
            t.gender.insert(g, live.gender(g)?);
            for &e in &dims.emotions {
                t.emotion.insert((g, e), live.emotion(g, e)?);
                for s in dims.speakers() {
                    t.speaker.insert((g, e, s), live.speaker(g, e, s)?);
                    t.one_stage.insert((g, s, e), live.one_stage(g, s, e)?);
                }
            }
            if registry.has_ablations() {
                for s in dims.speakers() {
                    t.pooled_speaker.insert((g, s), live.pooled_speaker(g, s)?);
                }
            }
        }
        if registry.has_ablations() {
            for &e in &dims.emotions {
                t.pooled_emotion.insert(e, live.pooled_emotion(e)?);
            }
        }
        Ok(t)
    }
}

fn lookup<K: Ord + fmt::Debug, V: Copy>(map: &BTreeMap<K, V>, k: K) -> Result<V> {
    map.get(&k)
        .copied()
        .ok_or_else(|| Error::UnknownLabel(format!("{k:?}")))
}

impl ScoreSource for ScoreTable {
    fn gender(&self, g: Gender) -> Result<f64> {
        lookup(&self.gender, g)
    }

    fn emotion(&self, g: Gender, e: Emotion) -> Result<SphmmScores> {
        lookup(&self.emotion, (g, e))
    }

    fn speaker(&self, g: Gender, e: Emotion, s: u32) -> Result<f64> {
        lookup(&self.speaker, (g, e, s))
    }

    fn one_stage(&self, g: Gender, s: u32, e: Emotion) -> Result<SphmmScores> {
        lookup(&self.one_stage, (g, s, e))
    }

    fn pooled_speaker(&self, g: Gender, s: u32) -> Result<SphmmScores> {
        if self.pooled_speaker.is_empty() {
            return Err(Error::AblationModelsMissing);
        }
        lookup(&self.pooled_speaker, (g, s))
    }

    fn pooled_emotion(&self, e: Emotion) -> Result<SphmmScores> {
        if self.pooled_emotion.is_empty() {
            return Err(Error::AblationModelsMissing);
        }
        lookup(&self.pooled_emotion, e)
    }
}

/// The decision logic of every approach, over any score source.
pub struct Recognizer<'a, S> {
    dims: &'a RegistryDims,
    ablations: bool,
    scores: S,
}

impl<'a, S: ScoreSource> Recognizer<'a, S> {
    pub fn new(dims: &'a RegistryDims, ablations: bool, scores: S) -> Self {
        Self {
            dims,
            ablations,
            scores,
        }
    }

    fn check_emotion(&self, e: Emotion) -> Result<usize> {
        self.dims
            .emotion_index(e)
            .ok_or_else(|| Error::UnknownLabel(format!("emotion {e} is not in the registry")))
    }

    fn gender_stage(&self, forced: Option<Gender>) -> Result<(Gender, StageScores)> {
        let candidates = Gender::ALL.iter().map(|g| g.to_string()).collect();
        let scores = Gender::ALL
            .iter()
            .map(|&g| self.scores.gender(g))
            .collect::<Result<Vec<_>>>()?;
        let stage = match forced {
            Some(g) => {
                let i = Gender::ALL.iter().position(|x| *x == g).expect("gender in ALL");
                StageScores::forced(Stage::Gender, candidates, scores, i)
            }
            None => StageScores::decide(Stage::Gender, candidates, scores)?,
        };
        Ok((Gender::ALL[stage.winner], stage))
    }

    fn emotion_stage(
        &self,
        forced: Option<Emotion>,
        fusion: Fusion,
        score: impl Fn(Emotion) -> Result<SphmmScores>,
    ) -> Result<(Emotion, StageScores)> {
        let emotions = &self.dims.emotions;
        let candidates = emotions.iter().map(|e| e.to_string()).collect();
        let scores = emotions
            .iter()
            .map(|&e| Ok(score(e)?.fuse(fusion)))
            .collect::<Result<Vec<_>>>()?;
        let stage = match forced {
            Some(e) => {
                let i = self.check_emotion(e)?;
                StageScores::forced(Stage::Emotion, candidates, scores, i)
            }
            None => StageScores::decide(Stage::Emotion, candidates, scores)?,
        };
        Ok((emotions[stage.winner], stage))
    }

    /// Both gender models scored; ties go to male.
    pub fn identify_gender(&self) -> Result<(Gender, StageScores)> {
        self.gender_stage(None)
    }

    /// Gender-specific emotion decision; ties go to the earlier emotion.
    pub fn identify_emotion(&self, gender: Gender, fusion: Fusion) -> Result<(Emotion, StageScores)> {
        self.emotion_stage(None, fusion, |e| self.scores.emotion(gender, e))
    }

    /// Gender- and emotion-specific speaker decision; ties go to the lower id.
    pub fn identify_speaker(&self, gender: Gender, emotion: Emotion) -> Result<(u32, StageScores)> {
        self.check_emotion(emotion)?;
        let speakers: Vec<u32> = self.dims.speakers().collect();
        let candidates = speakers.iter().map(|s| format!("{s:02}")).collect();
        let scores = speakers
            .iter()
            .map(|&s| self.scores.speaker(gender, emotion, s))
            .collect::<Result<Vec<_>>>()?;
        let stage = StageScores::decide(Stage::Speaker, candidates, scores)?;
        Ok((speakers[stage.winner], stage))
    }

    pub fn identify_one_stage(&self, fusion: Fusion) -> Result<IdentificationResult> {
        let mut keys = Vec::new();
        for g in Gender::ALL {
            for s in self.dims.speakers() {
                for &e in &self.dims.emotions {
                    keys.push((g, s, e));
                }
            }
        }
        let candidates = keys
            .iter()
            .map(|&(g, s, e)| Label::new(g, e, s).to_string())
            .collect();
        let scores = keys
            .iter()
            .map(|&(g, s, e)| Ok(self.scores.one_stage(g, s, e)?.fuse(fusion)))
            .collect::<Result<Vec<_>>>()?;
        let stage = StageScores::decide(Stage::Joint, candidates, scores)?;
        let (gender, speaker, emotion) = keys[stage.winner];
        Ok(IdentificationResult {
            approach: Approach::OneStage,
            predicted: Prediction {
                gender,
                emotion: Some(emotion),
                speaker,
            },
            stages: vec![stage],
        })
    }

    pub fn identify_three_stage(
        &self,
        fusion: Fusion,
        overrides: Overrides,
    ) -> Result<IdentificationResult> {
        if let Some(e) = overrides.emotion {
            self.check_emotion(e)?;
        }
        let (gender, g_stage) = self.gender_stage(overrides.gender)?;
        let (emotion, e_stage) =
            self.emotion_stage(overrides.emotion, fusion, |e| self.scores.emotion(gender, e))?;
        let (speaker, s_stage) = self.identify_speaker(gender, emotion)?;
        Ok(IdentificationResult {
            approach: Approach::ThreeStage,
            predicted: Prediction {
                gender,
                emotion: Some(emotion),
                speaker,
            },
            stages: vec![g_stage, e_stage, s_stage],
        })
    }

    /// Ablation approaches. Overrides apply to whichever of the gender or
    /// emotion stages the approach has.
    pub fn identify_ablation(
        &self,
        approach: Approach,
        fusion: Fusion,
        overrides: Overrides,
    ) -> Result<IdentificationResult> {
        if !self.ablations {
            return Err(Error::AblationModelsMissing);
        }
        let speakers: Vec<u32> = self.dims.speakers().collect();
        match approach {
            Approach::Exp1 => {
                let (gender, g_stage) = self.gender_stage(overrides.gender)?;
                let candidates = speakers.iter().map(|s| format!("{gender}{s:02}")).collect();
                let scores = speakers
                    .iter()
                    .map(|&s| Ok(self.scores.pooled_speaker(gender, s)?.fuse(fusion)))
                    .collect::<Result<Vec<_>>>()?;
                let stage = StageScores::decide(Stage::Speaker, candidates, scores)?;
                Ok(IdentificationResult {
                    approach,
                    predicted: Prediction {
                        gender,
                        emotion: None,
                        speaker: speakers[stage.winner],
                    },
                    stages: vec![g_stage, stage],
                })
            }
            Approach::Exp2 => {
                let (emotion, e_stage) =
                    self.emotion_stage(overrides.emotion, fusion, |e| self.scores.pooled_emotion(e))?;
                let keys: Vec<(Gender, u32)> = Gender::ALL
                    .iter()
                    .flat_map(|&g| speakers.iter().map(move |&s| (g, s)))
                    .collect();
                let candidates = keys.iter().map(|(g, s)| format!("{g}{s:02}")).collect();
                let scores = keys
                    .iter()
                    .map(|&(g, s)| Ok(self.scores.one_stage(g, s, emotion)?.fuse(fusion)))
                    .collect::<Result<Vec<_>>>()?;
                let stage = StageScores::decide(Stage::Speaker, candidates, scores)?;
                let (gender, speaker) = keys[stage.winner];
                Ok(IdentificationResult {
                    approach,
                    predicted: Prediction {
                        gender,
                        emotion: Some(emotion),
                        speaker,
                    },
                    stages: vec![e_stage, stage],
                })
            }
            Approach::Exp3 => {
                let keys: Vec<(Gender, u32)> = Gender::ALL
                    .iter()
                    .flat_map(|&g| speakers.iter().map(move |&s| (g, s)))
                    .collect();
                let candidates = keys.iter().map(|(g, s)| format!("{g}{s:02}")).collect();
                let scores = keys
                    .iter()
                    .map(|&(g, s)| Ok(self.scores.pooled_speaker(g, s)?.fuse(fusion)))
                    .collect::<Result<Vec<_>>>()?;
                let stage = StageScores::decide(Stage::Joint, candidates, scores)?;
                let (gender, speaker) = keys[stage.winner];
                Ok(IdentificationResult {
                    approach,
                    predicted: Prediction {
                        gender,
                        emotion: None,
                        speaker,
                    },
                    stages: vec![stage],
                })
            }
            other => Err(Error::InvalidConfig(format!("{other} is not an ablation approach"))),
        }
    }

    /// Dispatches on the approach. Overrides are ignored by one-stage.
    pub fn identify(
        &self,
        approach: Approach,
        fusion: Fusion,
        overrides: Overrides,
    ) -> Result<IdentificationResult> {
        match approach {
            Approach::OneStage => self.identify_one_stage(fusion),
            Approach::ThreeStage => self.identify_three_stage(fusion, overrides),
            _ => self.identify_ablation(approach, fusion, overrides),
        }
    }
}

impl ModelRegistry {
    pub fn recognizer<'a>(&'a self, utterance: &'a Utterance) -> Recognizer<'a, LiveScores<'a>> {
        Recognizer::new(self.dims(), self.has_ablations(), LiveScores::new(self, utterance))
    }

    /// Scores every model once; replay decisions with [`ModelRegistry::replay`].
    pub fn score_table(&self, utterance: &Utterance) -> Result<ScoreTable> {
        ScoreTable::compute(self, utterance)
    }

    pub fn replay<'a>(&'a self, table: &'a ScoreTable) -> Recognizer<'a, &'a ScoreTable> {
        Recognizer::new(self.dims(), self.has_ablations(), table)
    }

    pub fn identify(
        &self,
        utterance: &Utterance,
        approach: Approach,
        fusion: Fusion,
        overrides: Overrides,
    ) -> Result<IdentificationResult> {
        self.recognizer(utterance).identify(approach, fusion, overrides)
    }
}

impl<T: ScoreSource + ?Sized> ScoreSource for &T {
    fn gender(&self, g: Gender) -> Result<f64> {
        (**self).gender(g)
    }

    fn emotion(&self, g: Gender, e: Emotion) -> Result<SphmmScores> {
        (**self).emotion(g, e)
    }

    fn speaker(&self, g: Gender, e: Emotion, s: u32) -> Result<f64> {
        (**self).speaker(g, e, s)
    }

    fn one_stage(&self, g: Gender, s: u32, e: Emotion) -> Result<SphmmScores> {
        (**self).one_stage(g, s, e)
    }

    fn pooled_speaker(&self, g: Gender, s: u32) -> Result<SphmmScores> {
        (**self).pooled_speaker(g, s)
    }

    fn pooled_emotion(&self, e: Emotion) -> Result<SphmmScores> {
        (**self).pooled_emotion(e)
    }
}
