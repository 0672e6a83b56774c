//! Evaluation: performance tables, confusion matrices, t tests, alpha
//! sweeps and the worst-case (false-label) run.

mod report;
mod stats;

pub use report::{
    confusion_csv, confusion_text, performance_csv, performance_text, read_performance_csv,
    sweep_csv, sweep_text, ttest_csv, ttest_text,
};
pub use stats::{
    mean_and_sd, students_t, SampleSummary, TTestMethod, TTestResult, T_CRITICAL_0_05,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Emotion, Gender, Label};
use crate::pipeline::{
    Approach, IdentificationResult, ModelRegistry, Overrides, RegistryDims, ScoreTable, Stage,
    Utterance,
};
use crate::sphmm::{Alpha, Fusion};

/// An identification result next to the ground truth it should match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledResult {
    pub truth: Label,
    pub result: IdentificationResult,
}

impl LabeledResult {
    /// Speaker id match only, as scored in the performance tables.
    pub fn speaker_correct(&self) -> bool {
        self.result.predicted.speaker == self.truth.speaker
    }

    /// Gender and speaker id both right.
    pub fn identity_correct(&self) -> bool {
        self.speaker_correct() && self.result.predicted.gender == self.truth.gender
    }
}

/// Which downstream labels the cascade is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Each stage uses the previous stage's decision.
    Cascade,
    /// Ground-truth gender and emotion are forced.
    Oracle,
    /// The wrong gender and a deranged emotion are forced.
    WorstCase,
}

impl Conditioning {
    pub fn tag(self) -> &'static str {
        match self {
            Conditioning::Cascade => "cascade",
            Conditioning::Oracle => "oracle",
            Conditioning::WorstCase => "worst_case",
        }
    }
}

/// Fixed cyclic derangement: emotion `i` maps to emotion `i + 1 (mod m)` in
/// the registry's emotion order. With one emotion it is the identity.
pub fn deranged_emotion(dims: &RegistryDims, e: Emotion) -> Result<Emotion> {
    let i = dims
        .emotion_index(e)
        .ok_or_else(|| Error::UnknownLabel(format!("emotion {e} is not in the registry")))?;
    Ok(dims.emotions[(i + 1) % dims.n_emotions()])
}

pub fn overrides_for(dims: &RegistryDims, truth: &Label, conditioning: Conditioning) -> Result<Overrides> {
    Ok(match conditioning {
        Conditioning::Cascade => Overrides::default(),
        Conditioning::Oracle => Overrides::truth(truth),
        Conditioning::WorstCase => Overrides {
            gender: Some(truth.gender.other()),
            emotion: Some(deranged_emotion(dims, truth.emotion)?),
        },
    })
}

/// Scores every utterance against every model, in parallel.
pub fn score_tables(registry: &ModelRegistry, utterances: &[Utterance]) -> Result<Vec<ScoreTable>> {
    utterances
        .par_iter()
        .map(|u| registry.score_table(u))
        .collect()
}

/// Decides every utterance from precomputed scores.
pub fn evaluate_tables(
    registry: &ModelRegistry,
    tables: &[ScoreTable],
    labels: &[Label],
    approach: Approach,
    fusion: Fusion,
    conditioning: Conditioning,
) -> Result<Vec<LabeledResult>> {
    if tables.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} score tables but {} labels",
            tables.len(),
            labels.len()
        )));
    }
    tables
        .par_iter()
        .zip(labels)
        .map(|(t, l)| {
            let overrides = overrides_for(registry.dims(), l, conditioning)?;
            Ok(LabeledResult {
                truth: *l,
                result: registry.replay(t).identify(approach, fusion, overrides)?,
            })
        })
        .collect()
}

/// Scores and decides every utterance.
pub fn evaluate(
    registry: &ModelRegistry,
    utterances: &[Utterance],
    labels: &[Label],
    approach: Approach,
    fusion: Fusion,
    conditioning: Conditioning,
) -> Result<Vec<LabeledResult>> {
    if utterances.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} utterances but {} labels",
            utterances.len(),
            labels.len()
        )));
    }
    utterances
        .par_iter()
        .zip(labels)
        .map(|(u, l)| {
            let overrides = overrides_for(registry.dims(), l, conditioning)?;
            Ok(LabeledResult {
                truth: *l,
                result: registry.identify(u, approach, fusion, overrides)?,
            })
        })
        .collect()
}

/// Three-stage speaker accuracy with false gender and emotion forced on
/// every utterance.
pub fn worst_case_eval(
    registry: &ModelRegistry,
    utterances: &[Utterance],
    labels: &[Label],
    fusion: Fusion,
) -> Result<PerformanceTable> {
    let results = evaluate(
        registry,
        utterances,
        labels,
        Approach::ThreeStage,
        fusion,
        Conditioning::WorstCase,
    )?;
    PerformanceTable::from_results(&results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub emotion: Emotion,
    pub male: f64,
    pub female: f64,
    pub average: f64,
}

/// Speaker identification accuracy (%) per emotion and gender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTable {
    pub rows: Vec<PerformanceRow>,
    pub grand_average: f64,
}

impl PerformanceTable {
    /// Builds a table from per-emotion (male %, female %) cells.
    pub fn from_cells(cells: &[(Emotion, f64, f64)]) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        if cells
            .iter()
            .any(|c| !(0.0..=100.0).contains(&c.1) || !(0.0..=100.0).contains(&c.2))
        {
            return Err(Error::InvalidConfig("percentages must lie in [0, 100]".into()));
        }
        let rows: Vec<PerformanceRow> = cells
            .iter()
            .map(|&(emotion, male, female)| PerformanceRow {
                emotion,
                male,
                female,
                average: (male + female) / 2.0,
            })
            .collect();
        let grand_average = rows.iter().map(|r| r.average).sum::<f64>() / rows.len() as f64;
        Ok(Self {
            rows,
            grand_average,
        })
    }

    /// Percentage of utterances whose predicted speaker id matches, per
    /// (emotion, gender) of the ground truth.
    pub fn from_results(results: &[LabeledResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let mut emotions: Vec<Emotion> = results.iter().map(|r| r.truth.emotion).collect();
        emotions.sort();
        emotions.dedup();
        let cell = |e: Emotion, g: Gender| -> Result<f64> {
            let (hit, n) = results
                .iter()
                .filter(|r| r.truth.emotion == e && r.truth.gender == g)
                .fold((0usize, 0usize), |(h, n), r| (h + r.speaker_correct() as usize, n + 1));
            if n == 0 {
                return Err(Error::MissingCell(format!("no {g} test utterances for {e}")));
            }
            Ok(100.0 * hit as f64 / n as f64)
        };
        let cells = emotions
            .iter()
            .map(|&e| Ok((e, cell(e, Gender::Male)?, cell(e, Gender::Female)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_cells(&cells)
    }

    /// Mean and sample SD of the per-emotion averages, with `n` the number
    /// of (emotion, gender) cells. This is the summary the t test consumes.
    pub fn summary(&self) -> SampleSummary {
        let avgs: Vec<f64> = self.rows.iter().map(|r| r.average).collect();
        let (mean, sd) = mean_and_sd(&avgs);
        SampleSummary {
            mean,
            sd,
            n: 2 * self.rows.len(),
        }
    }

    /// Mean and sample SD over the individual cells.
    pub fn cell_summary(&self) -> (f64, f64) {
        let cells: Vec<f64> = self.rows.iter().flat_map(|r| [r.male, r.female]).collect();
        mean_and_sd(&cells)
    }
}

/// Fraction (%) of results whose stage decision matches the ground truth.
/// Forced stages count as whatever they were forced to.
pub fn stage_accuracy(results: &[LabeledResult], stage: Stage) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut hit = 0usize;
    for r in results {
        let p = &r.result.predicted;
        let ok = match stage {
            Stage::Gender => p.gender == r.truth.gender,
            Stage::Emotion => p.emotion == Some(r.truth.emotion),
            Stage::Speaker | Stage::Joint => r.speaker_correct(),
        };
        hit += ok as usize;
    }
    Ok(100.0 * hit as f64 / results.len() as f64)
}

/// Which decision a confusion matrix tabulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionStage {
    Gender,
    Emotion,
}

/// Rows are predicted classes, columns true classes; each column is
/// normalized to 100%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `percent[predicted][true]`
    pub percent: Vec<Vec<f64>>,
    pub column_totals: Vec<usize>,
}

impl ConfusionMatrix {
    /// From (true index, predicted index) pairs.
    pub fn from_pairs(classes: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let k = classes.len();
        let mut counts = vec![vec![0usize; k]; k];
        for &(t, p) in pairs {
            if t >= k || p >= k {
                return Err(Error::UnknownLabel(format!("class index {} out of {k}", t.max(p))));
            }
            counts[p][t] += 1;
        }
        let column_totals: Vec<usize> = (0..k).map(|t| (0..k).map(|p| counts[p][t]).sum()).collect();
        if let Some(t) = column_totals.iter().position(|&n| n == 0) {
            return Err(Error::UndefinedColumn(classes[t].clone()));
        }
        let percent = (0..k)
            .map(|p| {
                (0..k)
                    .map(|t| 100.0 * counts[p][t] as f64 / column_totals[t] as f64)
                    .collect()
            })
            .collect();
        Ok(Self {
            classes,
            percent,
            column_totals,
        })
    }

    pub fn column_sum(&self, t: usize) -> f64 {
        self.percent.iter().map(|row| row[t]).sum()
    }
}

/// Confusion of the gender or emotion decision, optionally restricted to
/// utterances of one true gender.
pub fn confusion_matrix(
    results: &[LabeledResult],
    stage: ConfusionStage,
    gender: Option<Gender>,
) -> Result<ConfusionMatrix> {
    let selected: Vec<&LabeledResult> = results
        .iter()
        .filter(|r| gender.is_none_or(|g| r.truth.gender == g))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    match stage {
        ConfusionStage::Gender => {
            let idx = |g: Gender| Gender::ALL.iter().position(|x| *x == g).expect("gender in ALL");
            let pairs: Vec<_> = selected
                .iter()
                .map(|r| (idx(r.truth.gender), idx(r.result.predicted.gender)))
                .collect();
            let classes = Gender::ALL.iter().map(|g| g.to_string()).collect();
            ConfusionMatrix::from_pairs(classes, &pairs)
        }
        ConfusionStage::Emotion => {
            let mut emotions: Vec<Emotion> = selected.iter().map(|r| r.truth.emotion).collect();
            emotions.sort();
            emotions.dedup();
            let idx = |e: Emotion| emotions.iter().position(|x| *x == e);
            let pairs = selected
                .iter()
                .map(|r| {
                    let p = r.result.predicted.emotion.ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "{} makes no emotion decision",
                            r.result.approach
                        ))
                    })?;
                    let p = idx(p).ok_or_else(|| Error::UnknownLabel(p.to_string()))?;
                    Ok((idx(r.truth.emotion).expect("collected above"), p))
                })
                .collect::<Result<Vec<_>>>()?;
            let classes = emotions.iter().map(|e| e.to_string()).collect();
            ConfusionMatrix::from_pairs(classes, &pairs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub per_emotion: Vec<(Emotion, f64)>,
    pub average: f64,
    /// Emotion-stage accuracy, for approaches that decide emotion.
    pub emotion_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub approach: Approach,
    pub points: Vec<SweepPoint>,
}

/// Re-decides the scored test set at each alpha of the grid. Nothing is
/// retrained: alpha only enters the fusion of already computed scores.
pub fn alpha_sweep(
    registry: &ModelRegistry,
    tables: &[ScoreTable],
    labels: &[Label],
    approach: Approach,
    grid: &[Alpha],
    normalize: bool,
) -> Result<AlphaSweep> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("alpha grid must be strictly increasing".into()));
    }
    let points = grid
        .iter()
        .map(|&alpha| {
            let results = evaluate_tables(
                registry,
                tables,
                labels,
                approach,
                Fusion::new(alpha, normalize),
                Conditioning::Cascade,
            )?;
            let table = PerformanceTable::from_results(&results)?;
            let emotion_accuracy = if approach.predicts_emotion() {
                Some(stage_accuracy(&results, Stage::Emotion)?)
            } else {
                None
            };
            Ok(SweepPoint {
                alpha: alpha.value(),
                per_emotion: table.rows.iter().map(|r| (r.emotion, r.average)).collect(),
                average: table.grand_average,
                emotion_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlphaSweep { approach, points })
}
