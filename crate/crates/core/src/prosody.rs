//! Suprasegmental observations: per-segment pitch, energy and duration.
//!
//! An utterance is framed on the acoustic hop grid, each frame gets a pitch
//! estimate and an energy in dB, and the frame sequence is split into three
//! contiguous segments. Each segment is summarized by one [`ProsodicVector`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, AudioBuffer, Frame, FRAME_LEN, HOP_LEN, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const PROSODIC_DIM: usize = 7;
pub const N_SEGMENTS: usize = 3;
pub const MIN_PITCH_HZ: f64 = 60.0;
pub const MAX_PITCH_HZ: f64 = 400.0;
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Mean-square floor added before taking dB.
pub const POWER_FLOOR: f64 = 1e-10;
/// Frames quieter than this are never voiced.
pub const SILENCE_DB: f64 = -50.0;
/// Pitch is analyzed over this many samples starting at each frame, so
/// that two periods of a 62.5 Hz voice fit in the window.
pub const PITCH_WINDOW: usize = 2 * FRAME_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodicVector {
    pub pitch_mean: f64,
    pub pitch_slope: f64,
    pub pitch_range: f64,
    pub energy_mean: f64,
    pub energy_range: f64,
    pub voiced_fraction: f64,
    pub log_duration: f64,
}

impl ProsodicVector {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.pitch_mean,
            self.pitch_slope,
            self.pitch_range,
            self.energy_mean,
            self.energy_range,
            self.voiced_fraction,
            self.log_duration,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuprasegmentalSequence {
    segments: Vec<ProsodicVector>,
    observations: Vec<Vec<f64>>,
}

impl SuprasegmentalSequence {
    pub fn new(segments: Vec<ProsodicVector>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::EmptyObservation);
        }
        let observations = segments.iter().map(ProsodicVector::to_vec).collect();
        Ok(Self {
            segments,
            observations,
        })
    }

    pub fn segments(&self) -> &[ProsodicVector] {
        &self.segments
    }

    /// The segments as plain vectors, the form the HMM engine consumes.
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Autocorrelation pitch estimate of a single 256-sample frame.
///
/// The lag search is limited to half the frame, so this sees 125-400 Hz.
pub fn estimate_pitch(frame: &Frame) -> Option<f64> {
    estimate_pitch_window(frame.samples())
}

/// Autocorrelation pitch estimate over an arbitrary window.
///
/// Lags cover 60-400 Hz, capped at half the window length so at least two
/// periods are always compared. Each lag is scored with the correlation
/// coefficient of the overlapping parts; the smallest-lag local maximum
/// within 90% of the best score wins, which avoids subharmonic picks.
/// Returns `None` (unvoiced) when the window is silent or the best score is
/// below [`VOICING_THRESHOLD`].
pub fn estimate_pitch_window(samples: &[f64]) -> Option<f64> {
    let n = samples.len();
    if n < 4 || energy_db(samples) < SILENCE_DB {
        return None;
    }
    let sr = SAMPLE_RATE_HZ as f64;
    let min_lag = (sr / MAX_PITCH_HZ).floor() as usize;
    let max_lag = ((sr / MIN_PITCH_HZ).ceil() as usize).min(n / 2);
    if max_lag < min_lag + 2 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = samples.iter().map(|s| s - mean).collect();

    // One extra lag on each side so every candidate has two neighbours.
    let lo = min_lag - 1;
    let scores: Vec<f64> = (lo..=max_lag + 1)
        .map(|lag| {
            let (a, b) = (&x[..n - lag], &x[lag..]);
            let ab: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let aa: f64 = a.iter().map(|p| p * p).sum();
            let bb: f64 = b.iter().map(|q| q * q).sum();
            let denom = (aa * bb).sqrt();
            if denom > 0.0 {
                ab / denom
            } else {
                0.0
            }
        })
        .collect();

    let peaks: Vec<usize> = (1..scores.len() - 1)
        .filter(|&i| scores[i] > scores[i - 1] && scores[i] >= scores[i + 1])
        .collect();
    let best = peaks.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    let i = *peaks.iter().find(|&&i| scores[i] >= 0.9 * best)?;

    // Parabolic refinement around the chosen lag.
    let (l, c, r) = (scores[i - 1], scores[i], scores[i + 1]);
    let curvature = l - 2.0 * c + r;
    let offset = if curvature < 0.0 {
        (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(sr / ((lo + i) as f64 + offset))
}

/// `10 log10(mean square + floor)`.
pub fn frame_energy_db(frame: &Frame) -> f64 {
    energy_db(frame.samples())
}

fn energy_db(samples: &[f64]) -> f64 {
    let ms = samples.iter().map(|x| x * x).sum::<f64>() / samples.len().max(1) as f64;
    10.0 * (ms + POWER_FLOOR).log10()
}

/// Splits `0..n_frames` into `n_segments` contiguous ranges; the remainder
/// goes one frame each to the earliest segments.
pub fn segment_utterance(n_frames: usize, n_segments: usize) -> Result<Vec<Range<usize>>> {
    if n_segments == 0 || n_frames < n_segments {
        return Err(Error::TooFewFrames {
            n_frames,
            n_segments,
        });
    }
    let (base, extra) = (n_frames / n_segments, n_frames % n_segments);
    let mut start = 0;
    Ok((0..n_segments)
        .map(|s| {
            let len = base + usize::from(s < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Per-frame pitch (Hz, `None` if unvoiced) and energy (dB) tracks.
pub fn frame_tracks(audio: &AudioBuffer) -> Result<(Vec<Option<f64>>, Vec<f64>)> {
    let samples = audio.samples();
    let frames = dsp::frame_signal(audio)?;
    let pitch = (0..frames.len())
        .map(|k| {
            let start = k * HOP_LEN;
            let end = (start + PITCH_WINDOW).min(samples.len());
            estimate_pitch_window(&samples[start..end])
        })
        .collect();
    let energy = frames.iter().map(frame_energy_db).collect();
    Ok((pitch, energy))
}

pub fn frame_time_secs(k: usize) -> f64 {
    (k * HOP_LEN + FRAME_LEN / 2) as f64 / SAMPLE_RATE_HZ as f64
}

fn pool_segment(range: Range<usize>, pitch: &[Option<f64>], energy: &[f64]) -> ProsodicVector {
    let n = range.len();
    let voiced: Vec<(f64, f64)> = range
        .clone()
        .filter_map(|k| pitch[k].map(|f0| (frame_time_secs(k), f0)))
        .collect();
    let energies = &energy[range];

    let (pitch_mean, pitch_slope, pitch_range) = if voiced.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let nv = voiced.len() as f64;
        let t_mean = voiced.iter().map(|v| v.0).sum::<f64>() / nv;
        let f_mean = voiced.iter().map(|v| v.1).sum::<f64>() / nv;
        let sxx: f64 = voiced.iter().map(|v| (v.0 - t_mean).powi(2)).sum();
        let sxy: f64 = voiced
            .iter()
            .map(|v| (v.0 - t_mean) * (v.1 - f_mean))
            .sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let (lo, hi) = voiced
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v.1), hi.max(v.1))
            });
        (f_mean, slope, hi - lo)
    };
    let (e_lo, e_hi) = energies
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        });

    ProsodicVector {
        pitch_mean,
        pitch_slope,
        pitch_range,
        energy_mean: energies.iter().sum::<f64>() / n as f64,
        energy_range: e_hi - e_lo,
        voiced_fraction: voiced.len() as f64 / n as f64,
        log_duration: (n as f64 * HOP_LEN as f64 / SAMPLE_RATE_HZ as f64).ln(),
    }
}

pub fn suprasegmental_observations(audio: &AudioBuffer) -> Result<SuprasegmentalSequence> {
    let (pitch, energy) = frame_tracks(audio)?;
    let ranges = segment_utterance(pitch.len(), N_SEGMENTS)?;
    SuprasegmentalSequence::new(
        ranges
            .into_iter()
            .map(|r| pool_segment(r, &pitch, &energy))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
            .collect()
    }

    fn audio(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(samples, SAMPLE_RATE_HZ).unwrap()
    }

    #[test]
    fn pitch_of_pure_tone() {
        let f = estimate_pitch(&Frame::new(tone(200.0, 0.5, FRAME_LEN)).unwrap()).unwrap();
        assert!((f - 200.0).abs() <= 3.0, "{f}");
        // the 80-sample lag is where the oracle puts the period
        assert_eq!((16_000.0 / f).round(), 80.0);
    }

    #[test]
    fn low_pitch_needs_long_window() {
        let f = estimate_pitch_window(&tone(90.0, 0.5, PITCH_WINDOW)).unwrap();
        assert!((f - 90.0).abs() < 1.5, "{f}");
    }

    #[test]
    fn silence_is_unvoiced() {
        assert_eq!(estimate_pitch(&Frame::new(vec![0.0; FRAME_LEN]).unwrap()), None);
    }

    #[test]
    fn white_noise_is_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 400;
        let voiced = (0..trials)
            .filter(|_| {
                let x: Vec<f64> = (0..FRAME_LEN).map(|_| rng.random_range(-0.5..0.5)).collect();
                estimate_pitch(&Frame::new(x).unwrap()).is_some()
            })
            .count();
        assert!(voiced as f64 / trials as f64 <= 0.02, "{voiced} of {trials} voiced");
    }

    #[test]
    fn energy_db_cases() {
        assert_abs_diff_eq!(
            frame_energy_db(&Frame::new(vec![0.0; FRAME_LEN]).unwrap()),
            10.0 * POWER_FLOOR.log10()
        );
        assert_abs_diff_eq!(
            frame_energy_db(&Frame::new(vec![1.0; FRAME_LEN]).unwrap()),
            0.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            frame_energy_db(&Frame::new(vec![0.5; FRAME_LEN]).unwrap()),
            -6.0206,
            epsilon = 1e-4
        );
    }

    #[test]
    fn segmentation_cases() {
        assert_eq!(segment_utterance(9, 3).unwrap(), vec![0..3, 3..6, 6..9]);
        let sizes: Vec<usize> = segment_utterance(10, 3).unwrap().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(matches!(
            segment_utterance(2, 3),
            Err(Error::TooFewFrames { .. })
        ));
    }

    proptest! {
        #[test]
        fn segmentation_partitions(n_frames in 1usize..500, n_segments in 1usize..10) {
            prop_assume!(n_frames >= n_segments);
            let ranges = segment_utterance(n_frames, n_segments).unwrap();
            prop_assert_eq!(ranges.len(), n_segments);
            prop_assert_eq!(ranges[0].start, 0);
            prop_assert_eq!(ranges.last().unwrap().end, n_frames);
            for w in ranges.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert!(w[0].len() >= w[1].len());
                prop_assert!(w[0].len() - w[1].len() <= 1);
            }
        }
    }

    #[test]
    fn steady_tone_segments() {
        let seq = suprasegmental_observations(&audio(tone(200.0, 0.5, 16_000))).unwrap();
        assert_eq!(seq.len(), 3);
        for s in seq.segments() {
            assert!((s.pitch_mean - 200.0).abs() < 2.0, "{s:?}");
            assert!(s.pitch_slope.abs() < 5.0, "{s:?}");
            assert!(s.voiced_fraction > 0.95, "{s:?}");
        }
    }

    #[test]
    fn silent_segments() {
        let seq = suprasegmental_observations(&audio(vec![0.0; 16_000])).unwrap();
        for s in seq.segments() {
            assert_eq!(s.voiced_fraction, 0.0);
            assert_eq!((s.pitch_mean, s.pitch_slope, s.pitch_range), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn rising_glide_slope() {
        // f(t) = 150 + 100 t, phase = 2 pi (150 t + 50 t^2)
        let x: Vec<f64> = (0..16_000)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                0.5 * (2.0 * PI * (150.0 * t + 50.0 * t * t)).sin()
            })
            .collect();
        let seq = suprasegmental_observations(&audio(x)).unwrap();
        for s in seq.segments() {
            assert!((s.pitch_slope - 100.0).abs() <= 20.0, "{s:?}");
        }
    }

    #[test]
    fn pitch_is_gain_invariant() {
        let x = tone(180.0, 0.8, 12_000);
        let a = suprasegmental_observations(&audio(x.clone())).unwrap();
        for gain in [0.5, 0.75] {
            let b = suprasegmental_observations(&audio(x.iter().map(|v| v * gain).collect())).unwrap();
            for (p, q) in a.segments().iter().zip(b.segments()) {
                assert!((p.pitch_mean - q.pitch_mean).abs() < 1.0);
                assert_abs_diff_eq!(
                    q.energy_mean - p.energy_mean,
                    20.0 * gain.log10(),
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn too_short_for_segments() {
        assert!(matches!(
            suprasegmental_observations(&audio(vec![0.1; 300])),
            Err(Error::TooFewFrames { .. })
        ));
        assert!(matches!(
            suprasegmental_observations(&audio(vec![0.1; 100])),
            Err(Error::AudioTooShort { .. })
        ));
    }
}
