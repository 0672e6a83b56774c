//! Parametric source-filter corpus generator.
//!
//! Each utterance is a sequence of sustained vowels: a Rosenberg glottal
//! pulse train (differentiated for lip radiation) passes through a one-pole
//! spectral-tilt filter and a cascade of three formant resonators. Speakers
//! differ in base pitch and a formant scale factor; emotions change pitch
//! level, contour and wobble, loudness, speaking rate, tilt and F1.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusDims, CorpusManifest, Split, UtteranceRecord, CSD_DIMS};
use super::wav::write_wav;
use crate::dsp::SAMPLE_RATE_HZ;
use crate::error::{Error, Result};
use crate::labels::{Emotion, Gender};
use crate::seed::derive_seed;

/// F1-F3 (Hz) of the vowels /a/, /i/, /u/, /e/, /o/ for an adult male voice.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];
const BANDWIDTHS_HZ: [f64; 3] = [70.0, 100.0, 140.0];
const EDGE_SILENCE_S: f64 = 0.08;
const RAMP_S: f64 = 0.025;

/// Per-emotion modulation of the neutral voice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmotionStyle {
    pub emotion: Emotion,
    /// Multiplies the speaker's base pitch.
    pub pitch_factor: f64,
    /// Depth of a slow sinusoidal pitch wobble, relative to the pitch.
    pub pitch_variability: f64,
    pub energy_db: f64,
    /// Speaking-rate factor; durations are divided by it.
    pub rate: f64,
    /// Relative pitch change from start to end of the utterance.
    pub contour_slope: f64,
    /// Coefficient of the one-pole low-pass on the source, in [0, 1).
    pub tilt: f64,
    /// Multiplies F1.
    pub formant_shift: f64,
}

impl Default for EmotionStyle {
    fn default() -> Self {
        Self::stereotype(Emotion::Neutral)
    }
}

impl EmotionStyle {
    /// Coarse prosodic stereotypes: aroused emotions are higher, louder,
    /// faster and brighter; sadness the opposite.
    pub fn stereotype(emotion: Emotion) -> Self {
        let (pitch_factor, pitch_variability, energy_db, rate, contour_slope, tilt, formant_shift) =
            match emotion {
                Emotion::Neutral => (1.0, 0.04, 0.0, 1.0, -0.08, 0.5, 1.0),
                Emotion::Anger => (1.12, 0.08, 6.0, 1.2, -0.15, 0.15, 1.08),
                Emotion::Sadness => (0.9, 0.02, -6.0, 0.8, -0.05, 0.75, 0.95),
                Emotion::Happiness => (1.15, 0.12, 3.0, 1.1, 0.1, 0.3, 1.04),
                Emotion::Disgust => (0.95, 0.05, -2.0, 0.85, -0.2, 0.55, 0.97),
                Emotion::Fear => (1.2, 0.1, -1.0, 1.15, 0.05, 0.4, 1.0),
            };
        Self {
            emotion,
            pitch_factor,
            pitch_variability,
            energy_db,
            rate,
            contour_slope,
            tilt,
            formant_shift,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.pitch_factor, self.rate, self.formant_shift];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(0.0..1.0).contains(&self.tilt)
            || !(0.0..0.5).contains(&self.pitch_variability)
            || !(self.contour_slope.abs() < 1.0)
            || !self.energy_db.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "invalid style for {}: {self:?}",
                self.emotion
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-size layout: 25 speakers per gender, 6 emotions, 8 sentences,
    /// 9 repetitions.
    CsdShape,
    /// 3 speakers per gender, 3 emotions, 4 sentences, 3 repetitions.
    Desk,
    /// 4 speakers per gender, 3 emotions, 4 sentences, 5 repetitions, with
    /// disjoint gender pitch ranges.
    Separable,
    /// Like `Separable`, but emotions differ only in pitch contour.
    ProsodyOnly,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::CsdShape,
        Preset::Desk,
        Preset::Separable,
        Preset::ProsodyOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CsdShape => "csd-shape",
            Preset::Desk => "desk",
            Preset::Separable => "separable",
            Preset::ProsodyOnly => "prosody-only",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_speakers: u32,
    pub emotions: Vec<Emotion>,
    pub sentences: u32,
    pub repetitions: u32,
    pub rng_seed: u64,
    pub male_pitch_hz: [f64; 2],
    pub female_pitch_hz: [f64; 2],
    /// Keep the instantaneous pitch inside the gender's range.
    pub clamp_pitch: bool,
    /// Fraction of the gender pitch range, centred, that speakers' base
    /// pitches are spread over.
    pub speaker_pitch_span: f64,
    pub female_formant_scale: f64,
    /// Speakers' formant scales spread evenly over `1 ± spread`.
    pub speaker_formant_spread: f64,
    /// Neutral-rate voiced duration range, drawn per sentence.
    pub duration_s: [f64; 2],
    pub vowels_per_sentence: usize,
    /// Relative size of the per-repetition random perturbations.
    pub jitter: f64,
    /// RMS of the voiced part at 0 dB emotion energy, in dB re full scale.
    pub level_db: f64,
    /// Background noise RMS in dB re full scale.
    pub noise_db: f64,
    /// Style per emotion; emotions without an entry use the stereotype.
    pub styles: Vec<EmotionStyle>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl SynthSpec {
    pub fn preset(preset: Preset) -> Self {
        let base = SynthSpec {
            n_speakers: 3,
            emotions: Emotion::ALL[..3].to_vec(),
            sentences: 4,
            repetitions: 3,
            rng_seed: 0,
            male_pitch_hz: [85.0, 155.0],
            female_pitch_hz: [165.0, 255.0],
            clamp_pitch: false,
            speaker_pitch_span: 0.6,
            female_formant_scale: 1.17,
            speaker_formant_spread: 0.12,
            duration_s: [1.0, 1.4],
            vowels_per_sentence: 5,
            jitter: 0.03,
            level_db: -26.0,
            noise_db: -60.0,
            styles: Vec::new(),
        };
        match preset {
            Preset::CsdShape => SynthSpec {
                n_speakers: CSD_DIMS.0,
                emotions: Emotion::ALL.to_vec(),
                sentences: CSD_DIMS.2,
                repetitions: CSD_DIMS.3,
                ..base
            },
            Preset::Desk => base,
            Preset::Separable => {
                let mild = |emotion, pitch_factor, energy_db, rate| EmotionStyle {
                    pitch_factor,
                    energy_db,
                    rate,
                    ..EmotionStyle::stereotype(emotion)
                };
                SynthSpec {
                    n_speakers: 4,
                    repetitions: 5,
                    male_pitch_hz: [90.0, 140.0],
                    female_pitch_hz: [180.0, 260.0],
                    clamp_pitch: true,
                    speaker_pitch_span: 0.4,
                    duration_s: [1.15, 1.25],
                    styles: vec![
                        mild(Emotion::Neutral, 1.0, 0.0, 1.0),
                        mild(Emotion::Anger, 1.08, 8.0, 1.3),
                        mild(Emotion::Sadness, 0.93, -8.0, 0.75),
                    ],
                    ..base
                }
            }
            Preset::ProsodyOnly => {
                let flat = |emotion, contour_slope| EmotionStyle {
                    emotion,
                    pitch_factor: 1.0,
                    pitch_variability: 0.03,
                    energy_db: 0.0,
                    rate: 1.0,
                    contour_slope,
                    tilt: 0.5,
                    formant_shift: 1.0,
                };
                SynthSpec {
                    n_speakers: 3,
                    repetitions: 5,
                    male_pitch_hz: [90.0, 140.0],
                    female_pitch_hz: [180.0, 260.0],
                    clamp_pitch: true,
                    speaker_pitch_span: 0.4,
                    styles: vec![
                        flat(Emotion::Neutral, 0.0),
                        flat(Emotion::Anger, 0.35),
                        flat(Emotion::Sadness, -0.35),
                    ],
                    ..base
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.n_speakers == 0 || self.emotions.is_empty() || self.repetitions == 0 {
            return bad("need at least one speaker, emotion and repetition");
        }
        if self.sentences < 2 {
            return bad("need at least two sentences to form train and test splits");
        }
        let mut e = self.emotions.clone();
        e.sort();
        e.dedup();
        if e.len() != self.emotions.len() {
            return bad("duplicate emotions");
        }
        for r in [self.male_pitch_hz, self.female_pitch_hz] {
            if !(r[0] > 0.0 && r[0] < r[1]) {
                return bad("pitch ranges must be increasing and positive");
            }
        }
        if self.clamp_pitch && self.male_pitch_hz[1] >= self.female_pitch_hz[0] {
            return bad("clamped pitch ranges must be disjoint, male below female");
        }
        if !(self.duration_s[0] > 0.0 && self.duration_s[0] <= self.duration_s[1]) {
            return bad("duration range must be increasing and positive");
        }
        if !(self.female_formant_scale > 0.0)
            || !(0.0..0.5).contains(&self.speaker_formant_spread)
            || !(0.0..0.2).contains(&self.jitter)
            || !(0.0..=1.0).contains(&self.speaker_pitch_span)
            || self.vowels_per_sentence == 0
        {
            return bad("formant scale, spread, jitter or vowel count out of range");
        }
        for s in &self.styles {
            s.validate()?;
        }
        Ok(())
    }

    pub fn dims(&self) -> CorpusDims {
        let mut emotions = self.emotions.clone();
        emotions.sort();
        let shape = (self.n_speakers, emotions.len(), self.sentences, self.repetitions);
        CorpusDims {
            n_speakers: self.n_speakers,
            emotions,
            sentences: self.sentences,
            repetitions: self.repetitions,
            csd_shaped: shape == CSD_DIMS,
        }
    }

    pub fn style(&self, emotion: Emotion) -> EmotionStyle {
        self.styles
            .iter()
            .find(|s| s.emotion == emotion)
            .cloned()
            .unwrap_or_else(|| EmotionStyle::stereotype(emotion))
    }

    pub fn pitch_range(&self, gender: Gender) -> [f64; 2] {
        match gender {
            Gender::Male => self.male_pitch_hz,
            Gender::Female => self.female_pitch_hz,
        }
    }

    fn position(&self, speaker: u32) -> f64 {
        if self.n_speakers == 1 {
            0.5
        } else {
            (speaker - 1) as f64 / (self.n_speakers - 1) as f64
        }
    }

    /// Base pitch of a speaker, evenly spaced over the centred
    /// `speaker_pitch_span` of the gender range.
    pub fn base_pitch(&self, gender: Gender, speaker: u32) -> f64 {
        let [lo, hi] = self.pitch_range(gender);
        let span = self.speaker_pitch_span;
        lo + (hi - lo) * ((1.0 - span) / 2.0 + span * self.position(speaker))
    }

    pub fn formant_scale(&self, gender: Gender, speaker: u32) -> f64 {
        let g = match gender {
            Gender::Male => 1.0,
            Gender::Female => self.female_formant_scale,
        };
        g * (1.0 + self.speaker_formant_spread * (2.0 * self.position(speaker) - 1.0))
    }

    /// Every record of the corpus, in (gender, speaker, emotion, sentence,
    /// repetition) order.
    pub fn records(&self) -> Vec<UtteranceRecord> {
        let dims = self.dims();
        let mut out = Vec::with_capacity(dims.n_records());
        for g in Gender::ALL {
            for s in 1..=self.n_speakers {
                for &e in &dims.emotions {
                    for sent in 1..=self.sentences {
                        for rep in 1..=self.repetitions {
                            out.push(UtteranceRecord {
                                file_path: PathBuf::from(format!(
                                    "wav/{g}{s:02}_{e}_s{sent}_r{rep}.wav"
                                )),
                                speaker_id: s,
                                gender: g,
                                emotion: e,
                                sentence_id: sent,
                                repetition: rep,
                                split: Split::for_sentence(sent, self.sentences),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

struct Sentence {
    vowels: Vec<usize>,
    duration_s: f64,
}

fn sentence(spec: &SynthSpec, id: u32) -> Sentence {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, &format!("sentence-{id}")));
    let mut order: Vec<usize> = (0..VOWELS.len()).collect();
    order.shuffle(&mut rng);
    let vowels = (0..spec.vowels_per_sentence)
        .map(|i| order[i % order.len()])
        .collect();
    let [lo, hi] = spec.duration_s;
    let duration_s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Sentence { vowels, duration_s }
}

/// Klatt-style two-pole resonator with unity gain at DC.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64) -> f64 {
        let t = 1.0 / SAMPLE_RATE_HZ as f64;
        let c = -(-2.0 * PI * bw * t).exp();
        let b = 2.0 * (-PI * bw * t).exp() * (2.0 * PI * freq * t).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Rosenberg glottal flow over one period, `phase` in [0, 1).
fn glottal_flow(phase: f64) -> f64 {
    const RISE: f64 = 0.4;
    const FALL: f64 = 0.16;
    if phase < RISE {
        0.5 * (1.0 - (PI * phase / RISE).cos())
    } else if phase < RISE + FALL {
        (0.5 * PI * (phase - RISE) / FALL).cos()
    } else {
        0.0
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn record_tag(r: &UtteranceRecord) -> String {
    format!(
        "{}{:02}-{}-{}-{}",
        r.gender, r.speaker_id, r.emotion, r.sentence_id, r.repetition
    )
}

/// Renders one utterance. Deterministic in the synthesis settings and the record key.
pub fn render_utterance(spec: &SynthSpec, record: &UtteranceRecord) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, &record_tag(record)));
    let mut jit = |scale: f64| 1.0 + scale * spec.jitter * rng.random_range(-1.0..1.0);
    let style = spec.style(record.emotion);
    let sent = sentence(spec, record.sentence_id);

    let fs = SAMPLE_RATE_HZ as f64;
    let body_s = sent.duration_s / style.rate * jit(1.0);
    let pitch = spec.base_pitch(record.gender, record.speaker_id) * style.pitch_factor * jit(0.5);
    let formant_jitter = [jit(0.5), jit(0.5), jit(0.5)];
    let wobble_hz = 3.0 + 2.0 * rng.random::<f64>();
    let wobble_phase = 2.0 * PI * rng.random::<f64>();
    let scale = spec.formant_scale(record.gender, record.speaker_id);
    let [p_lo, p_hi] = spec.pitch_range(record.gender);

    let edge = (EDGE_SILENCE_S * fs) as usize;
    let body = (body_s * fs) as usize;
    let n_vowels = sent.vowels.len();
    let mut signal = vec![0.0; 2 * edge + body];

    let mut phase = 0.0;
    let mut prev_flow = 0.0;
    let mut tilted = 0.0;
    let mut resonators: [Resonator; 3] = Default::default();
    for i in 0..body {
        let t = i as f64 / fs;
        let u = i as f64 / body as f64;
        let mut f0 = pitch
            * (1.0 + style.contour_slope * (u - 0.5))
            * (1.0 + style.pitch_variability * (2.0 * PI * wobble_hz * t + wobble_phase).sin());
        if spec.clamp_pitch {
            f0 = f0.clamp(p_lo, p_hi);
        }
        phase = (phase + f0 / fs).fract();
        let flow = glottal_flow(phase);
        let source = flow - prev_flow;
        prev_flow = flow;
        tilted = (1.0 - style.tilt) * source + style.tilt * tilted;

        let pos = u * n_vowels as f64;
        let idx = (pos as usize).min(n_vowels - 1);
        let frac = pos - idx as f64;
        let next = sent.vowels[(idx + 1).min(n_vowels - 1)];
        let blend = smoothstep((frac - 0.7) / 0.3);
        let mut y = tilted;
        for k in 0..3 {
            let target = VOWELS[sent.vowels[idx]][k] * (1.0 - blend) + VOWELS[next][k] * blend;
            let shift = if k == 0 { style.formant_shift } else { 1.0 };
            let freq = (target * scale * shift * formant_jitter[k]).min(0.45 * fs);
            y = resonators[k].step(y, freq, BANDWIDTHS_HZ[k]);
        }

        let dip = 1.0 - 0.5 * (PI * frac).cos().powi(8);
        let ramp = smoothstep(t / RAMP_S) * smoothstep((body_s - t) / RAMP_S);
        signal[edge + i] = y * dip * ramp;
    }

    let voiced = &signal[edge..edge + body];
    let rms = (voiced.iter().map(|x| x * x).sum::<f64>() / body.max(1) as f64).sqrt();
    let target = 10f64.powf((spec.level_db + style.energy_db) / 20.0);
    let gain = if rms > 0.0 { target / rms } else { 0.0 };
    let noise = 10f64.powf(spec.noise_db / 20.0);
    for x in signal.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *x = *x * gain + noise * n;
    }
    let peak = signal.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.99 {
        let k = 0.99 / peak;
        signal.iter_mut().for_each(|x| *x *= k);
    }
    signal
}

/// Renders every record into `out_dir/wav/` and writes
/// `out_dir/manifest.csv`. Parallel and serial runs give identical output.
pub fn synthesize_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    let records = spec.records();
    fs::create_dir_all(out_dir.join("wav"))?;
    records
        .par_iter()
        .map(|r| write_wav(&out_dir.join(&r.file_path), &render_utterance(spec, r)))
        .collect::<Result<()>>()?;
    let manifest = CorpusManifest::new(spec.dims(), records, out_dir.to_path_buf())?;
    manifest.save(&out_dir.join(super::MANIFEST_FILE))?;
    Ok(manifest)
}
