//! Suprasegmental HMMs: a 9-state acoustic model paired with a 3-state
//! prosodic model, scored jointly as
//!
//! ```text
//! (1 - alpha) * log P(acoustic) + alpha * log P(prosodic)
//! ```
//!
//! With length normalization on (the default) each term is divided by its
//! own observation count first, so 140 acoustic frames and 3 prosodic
//! segments contribute on the same per-observation scale. Turning it off
//! gives the raw sum.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};
use crate::hmm::{train, GmmHmm, TrainingConfig};
use crate::prosody::SuprasegmentalSequence;

pub const ACOUSTIC_STATES: usize = 9;
pub const SUPRASEGMENTAL_STATES: usize = 3;
pub const SPHMM_FORMAT_VERSION: u32 = 1;

/// Acoustic state `i` is summarized by suprasegmental state `GROUPING[i]`.
pub const GROUPING: [usize; ACOUSTIC_STATES] = [0, 0, 0, 1, 1, 1, 2, 2, 2];

/// Fusion weight in `[0, 1]`; 0 is acoustic-only, 1 prosodic-only.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub const ACOUSTIC: Alpha = Alpha(0.0);
    pub const BALANCED: Alpha = Alpha(0.5);
    pub const PROSODIC: Alpha = Alpha(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidConfig(format!("alpha {value} is outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The grid 0.0, 0.1, ..., 1.0.
    pub fn sweep_grid() -> Vec<Alpha> {
        (0..=10).map(|i| Alpha(i as f64 / 10.0)).collect()
    }
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha::BALANCED
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// How the two log-likelihoods are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub alpha: Alpha,
    pub normalize: bool,
}

impl Default for Fusion {
    fn default() -> Self {
        Self {
            alpha: Alpha::BALANCED,
            normalize: true,
        }
    }
}

impl Fusion {
    pub fn new(alpha: Alpha, normalize: bool) -> Self {
        Self { alpha, normalize }
    }
}

/// Raw sub-model scores for one utterance, kept so that any fusion can be
/// applied later without rescoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphmmScores {
    pub acoustic: f64,
    pub suprasegmental: f64,
    pub acoustic_len: usize,
    pub suprasegmental_len: usize,
}

impl SphmmScores {
    pub fn fuse(&self, fusion: Fusion) -> f64 {
        let (a, s) = if fusion.normalize {
            (
                self.acoustic / self.acoustic_len as f64,
                self.suprasegmental / self.suprasegmental_len as f64,
            )
        } else {
            (self.acoustic, self.suprasegmental)
        };
        fuse(a, s, fusion.alpha)
    }
}

/// `(1 - alpha) * acoustic + alpha * suprasegmental`, returning the exact
/// endpoint term at alpha 0 and 1.
pub fn fuse(acoustic: f64, suprasegmental: f64, alpha: Alpha) -> f64 {
    let a = alpha.value();
    if a == 0.0 {
        acoustic
    } else if a == 1.0 {
        suprasegmental
    } else {
        (1.0 - a) * acoustic + a * suprasegmental
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SphmmFile", into = "SphmmFile")]
pub struct Sphmm {
    acoustic: GmmHmm,
    suprasegmental: GmmHmm,
}

#[derive(Serialize, Deserialize)]
struct SphmmFile {
    format_version: u32,
    grouping: Vec<usize>,
    acoustic: GmmHmm,
    suprasegmental: GmmHmm,
}

impl TryFrom<SphmmFile> for Sphmm {
    type Error = Error;

    fn try_from(f: SphmmFile) -> Result<Self> {
        if f.format_version != SPHMM_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                expected: SPHMM_FORMAT_VERSION,
                found: f.format_version,
            });
        }
        if f.grouping != GROUPING {
            return Err(Error::InvalidModel(format!(
                "unsupported state grouping {:?}",
                f.grouping
            )));
        }
        Sphmm::new(f.acoustic, f.suprasegmental)
    }
}

impl From<Sphmm> for SphmmFile {
    fn from(m: Sphmm) -> Self {
        SphmmFile {
            format_version: SPHMM_FORMAT_VERSION,
            grouping: GROUPING.to_vec(),
            acoustic: m.acoustic,
            suprasegmental: m.suprasegmental,
        }
    }
}

impl Sphmm {
    pub fn new(acoustic: GmmHmm, suprasegmental: GmmHmm) -> Result<Self> {
        if acoustic.n_states() != ACOUSTIC_STATES
            || suprasegmental.n_states() != SUPRASEGMENTAL_STATES
        {
            return Err(Error::InvalidModel(format!(
                "expected {ACOUSTIC_STATES}+{SUPRASEGMENTAL_STATES} states, got {}+{}",
                acoustic.n_states(),
                suprasegmental.n_states()
            )));
        }
        Ok(Self {
            acoustic,
            suprasegmental,
        })
    }

    pub fn acoustic(&self) -> &GmmHmm {
        &self.acoustic
    }

    pub fn suprasegmental(&self) -> &GmmHmm {
        &self.suprasegmental
    }

    pub fn grouping(&self) -> &[usize; ACOUSTIC_STATES] {
        &GROUPING
    }

    pub fn scores(
        &self,
        acoustic_obs: &FeatureSequence,
        pros_obs: &SuprasegmentalSequence,
    ) -> Result<SphmmScores> {
        Ok(SphmmScores {
            acoustic: self.acoustic.log_forward(acoustic_obs.frames())?,
            suprasegmental: self.suprasegmental.log_forward(pros_obs.observations())?,
            acoustic_len: acoustic_obs.frame_count(),
            suprasegmental_len: pros_obs.len(),
        })
    }

    pub fn combined_log_prob(
        &self,
        acoustic_obs: &FeatureSequence,
        pros_obs: &SuprasegmentalSequence,
        fusion: Fusion,
    ) -> Result<f64> {
        Ok(self.scores(acoustic_obs, pros_obs)?.fuse(fusion))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Trains the acoustic model on the MFCC streams, then the prosodic model
/// on the segment streams of the same utterances.
pub fn train_sphmm(
    utterances: &[(&FeatureSequence, &SuprasegmentalSequence)],
    acoustic_config: &TrainingConfig,
    suprasegmental_config: &TrainingConfig,
) -> Result<Sphmm> {
    if utterances.is_empty() {
        return Err(Error::InsufficientData("no training utterances".into()));
    }
    let acoustic_obs: Vec<&[Vec<f64>]> = utterances.iter().map(|u| u.0.frames()).collect();
    let pros_obs: Vec<&[Vec<f64>]> = utterances.iter().map(|u| u.1.observations()).collect();
    let acoustic = train::train(&acoustic_obs, ACOUSTIC_STATES, acoustic_config)?;
    let suprasegmental = train::train(&pros_obs, SUPRASEGMENTAL_STATES, suprasegmental_config)?;
    Sphmm::new(acoustic, suprasegmental)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prosody::ProsodicVector;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_bounds() {
        assert!(Alpha::new(-0.01).is_err());
        assert!(Alpha::new(1.01).is_err());
        assert!(Alpha::new(f64::NAN).is_err());
        let grid = Alpha::sweep_grid();
        assert_eq!(grid.len(), 11);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(grid[10].value(), 1.0);
        assert!(serde_json::from_str::<Alpha>("1.5").is_err());
    }

    #[test]
    fn fusion_arithmetic() {
        assert_eq!(fuse(-100.0, -80.0, Alpha::new(0.5).unwrap()), -90.0);
        assert_eq!(fuse(-100.0, -80.0, Alpha::ACOUSTIC), -100.0);
        assert_eq!(fuse(-100.0, -80.0, Alpha::PROSODIC), -80.0);
        let s = SphmmScores {
            acoustic: -1400.0,
            suprasegmental: -60.0,
            acoustic_len: 140,
            suprasegmental_len: 3,
        };
        assert_eq!(s.fuse(Fusion::new(Alpha::ACOUSTIC, true)), -10.0);
        assert_eq!(s.fuse(Fusion::new(Alpha::PROSODIC, true)), -20.0);
        assert_eq!(s.fuse(Fusion::new(Alpha::new(0.5).unwrap(), true)), -15.0);
        assert_eq!(s.fuse(Fusion::new(Alpha::new(0.5).unwrap(), false)), -730.0);
    }

    #[test]
    fn fusion_is_affine_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = rng.random_range(-5000.0..100.0);
            let s = rng.random_range(-500.0..50.0);
            let f = |x: f64| fuse(a, s, Alpha::new(x).unwrap());
            assert_abs_diff_eq!(f(0.5), (f(0.0) + f(1.0)) / 2.0, epsilon = 1e-12 * (1.0 + a.abs()));
            let (x0, x1, x2) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            let slope = s - a;
            assert_abs_diff_eq!(f(x2) - f(x0), slope * (x2 - x0), epsilon = 1e-9);
            assert_abs_diff_eq!(f(x1) - f(x0), slope * (x1 - x0), epsilon = 1e-9);
        }
    }

    fn synthetic_utterance(rng: &mut ChaCha8Rng, frames: usize) -> (FeatureSequence, SuprasegmentalSequence) {
        let feats = (0..frames)
            .map(|t| (0..16).map(|d| ((t + d) as f64 * 0.3).sin() + rng.random_range(-0.3..0.3)).collect())
            .collect();
        let segs = (0..3)
            .map(|s| ProsodicVector {
                pitch_mean: 120.0 + 10.0 * s as f64 + rng.random_range(-3.0..3.0),
                pitch_slope: rng.random_range(-20.0..20.0),
                pitch_range: 15.0 + rng.random_range(0.0..5.0),
                energy_mean: -25.0 + rng.random_range(-1.0..1.0),
                energy_range: 12.0 + rng.random_range(-1.0..1.0),
                voiced_fraction: rng.random_range(0.7..1.0),
                log_duration: (0.3f64 + rng.random_range(-0.02..0.02)).ln(),
            })
            .collect();
        (
            FeatureSequence::new(feats).unwrap(),
            SuprasegmentalSequence::new(segs).unwrap(),
        )
    }

    fn quick_config(seed: u64) -> TrainingConfig {
        TrainingConfig {
            max_iterations: 8,
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<_> = (0..6).map(|_| synthetic_utterance(&mut rng, 60)).collect();
        let refs: Vec<_> = data.iter().map(|(a, b)| (a, b)).collect();
        let a = train_sphmm(&refs, &quick_config(1), &quick_config(2)).unwrap();
        let b = train_sphmm(&refs, &quick_config(1), &quick_config(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.acoustic().n_states(), 9);
        assert_eq!(a.suprasegmental().n_states(), 3);

        let back = Sphmm::from_json(&a.to_json().unwrap()).unwrap();
        let (f, p) = &data[0];
        let fusion = Fusion::default();
        assert_eq!(
            a.combined_log_prob(f, p, fusion).unwrap().to_bits(),
            back.combined_log_prob(f, p, fusion).unwrap().to_bits()
        );

        let s = a.scores(f, p).unwrap();
        assert_eq!(
            a.combined_log_prob(f, p, Fusion::new(Alpha::ACOUSTIC, false)).unwrap(),
            s.acoustic
        );
        assert_eq!(
            a.combined_log_prob(f, p, Fusion::new(Alpha::PROSODIC, false)).unwrap(),
            s.suprasegmental
        );
    }

    #[test]
    fn normalization_makes_scores_length_stable() {
        let s = SphmmScores {
            acoustic: -1234.5,
            suprasegmental: -61.25,
            acoustic_len: 90,
            suprasegmental_len: 3,
        };
        let doubled = SphmmScores {
            acoustic: 2.0 * s.acoustic,
            suprasegmental: 2.0 * s.suprasegmental,
            acoustic_len: 2 * s.acoustic_len,
            suprasegmental_len: 2 * s.suprasegmental_len,
        };
        for alpha in Alpha::sweep_grid() {
            assert_eq!(doubled.fuse(Fusion::new(alpha, true)), s.fuse(Fusion::new(alpha, true)));
            assert_abs_diff_eq!(
                doubled.fuse(Fusion::new(alpha, false)),
                2.0 * s.fuse(Fusion::new(alpha, false)),
                epsilon = 1e-9
            );
        }

        // On a trained model the acoustic average barely moves with length.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data: Vec<_> = (0..6).map(|_| synthetic_utterance(&mut rng, 60)).collect();
        let refs: Vec<_> = data.iter().map(|(a, b)| (a, b)).collect();
        let m = train_sphmm(&refs, &quick_config(5), &quick_config(6)).unwrap();
        let (f, p) = synthetic_utterance(&mut rng, 60);
        let f2 = FeatureSequence::new([f.frames(), f.frames()].concat()).unwrap();
        let once = m.scores(&f, &p).unwrap();
        let twice = m.scores(&f2, &p).unwrap();
        let per_frame = |x: &SphmmScores| x.acoustic / x.acoustic_len as f64;
        assert!(((per_frame(&twice) - per_frame(&once)) / per_frame(&once)).abs() < 0.1, "{once:?} {twice:?}");
        assert!((1.8..2.2).contains(&(twice.acoustic / once.acoustic)));
    }

    #[test]
    fn empty_training_set() {
        assert!(matches!(
            train_sphmm(&[], &quick_config(0), &quick_config(0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn identical_utterances_pin_prosodic_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (f, p) = synthetic_utterance(&mut rng, 50);
        let refs: Vec<_> = (0..8).map(|_| (&f, &p)).collect();
        let m = train_sphmm(&refs, &quick_config(3), &quick_config(4)).unwrap();
        let distinct: Vec<Vec<f64>> = p.observations().to_vec();
        for e in m.suprasegmental().emissions() {
            for (w, mean) in e.weights().iter().zip(e.means()) {
                if *w < 1e-3 {
                    continue;
                }
                let closest = distinct
                    .iter()
                    .map(|v| v.iter().zip(mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                    .fold(f64::INFINITY, f64::min);
                assert!(closest < 1e-6, "component mean {mean:?} matches no segment");
            }
        }
    }

    #[test]
    fn rejects_wrong_topology() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data: Vec<_> = (0..4).map(|_| synthetic_utterance(&mut rng, 40)).collect();
        let obs: Vec<&[Vec<f64>]> = data.iter().map(|d| d.0.frames()).collect();
        let small = train::train(&obs, 3, &quick_config(0)).unwrap();
        assert!(Sphmm::new(small.clone(), small).is_err());
    }
}
