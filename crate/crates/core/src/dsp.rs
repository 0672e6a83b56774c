//! Acoustic front end: pre-emphasis, framing, mel filterbank and cepstra.
//!
//! Audio at 16 kHz is cut into 256-sample (16 ms) frames with a 112-sample
//! hop (9 ms overlap). Each frame is Hamming-windowed, zero-padded to 512
//! points, and passed through a bank of triangular mel filters. The log
//! filterbank outputs are projected onto the cosine basis
//!
//! ```text
//! C(n) = sum_{m=1..M} log Y(m) * cos(pi * n / M * (m - 1/2)),  n = 1..8
//! ```
//!
//! and regression deltas are appended, giving 16 values per frame.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const FRAME_LEN: usize = 256;
pub const HOP_LEN: usize = 112;
pub const FFT_LEN: usize = 512;
pub const N_STATIC: usize = 8;
pub const FEATURE_DIM: usize = 2 * N_STATIC;
pub const ENERGY_FLOOR: f64 = 1e-10;

/// Mono PCM audio normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::InvalidAudio(format!(
                "sample rate {sample_rate_hz} Hz is not supported (expected {SAMPLE_RATE_HZ})"
            )));
        }
        if let Some((i, x)) = samples
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || x.abs() > 1.0)
        {
            return Err(Error::InvalidAudio(format!(
                "sample {i} = {x} is outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// A fixed 256-sample analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    samples: Vec<f64>,
}

impl Frame {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() != FRAME_LEN {
            return Err(Error::DimensionMismatch {
                expected: FRAME_LEN,
                found: samples.len(),
            });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn scaled(&self, gain: f64) -> Frame {
        Frame {
            samples: self.samples.iter().map(|x| x * gain).collect(),
        }
    }
}

/// Mel filterbank outputs, each at or above [`ENERGY_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankEnergies {
    values: Vec<f64>,
}

impl FilterbankEnergies {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("filterbank has no channels".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_channels(&self) -> usize {
        self.values.len()
    }
}

/// Per-frame observation vectors, `[C(1)..C(8) | deltas]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyObservation);
        }
        if let Some(bad) = frames.iter().find(|f| f.len() != FEATURE_DIM) {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                found: bad.len(),
            });
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub pre_emphasis: f64,
    pub n_channels: usize,
    pub delta_window: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            pre_emphasis: 0.97,
            n_channels: 24,
            delta_window: 2,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::InvalidConfig(format!(
                "pre-emphasis coefficient {} is outside [0, 1)",
                self.pre_emphasis
            )));
        }
        if self.n_channels <= N_STATIC {
            return Err(Error::InvalidConfig(format!(
                "{} mel channels cannot carry {N_STATIC} cepstra",
                self.n_channels
            )));
        }
        if self.delta_window == 0 {
            return Err(Error::InvalidConfig("delta window must be positive".into()));
        }
        Ok(())
    }
}

/// First-order pre-emphasis `y[i] = x[i] - coeff * x[i-1]`, `y[0] = x[0]`.
///
/// The output is not clipped back into `[-1, 1]`, so it is returned as a
/// plain sample vector rather than an [`AudioBuffer`].
pub fn pre_emphasize(audio: &AudioBuffer, coeff: f64) -> Result<Vec<f64>> {
    pre_emphasize_samples(audio.samples(), coeff)
}

pub fn pre_emphasize_samples(samples: &[f64], coeff: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let mut out = Vec::with_capacity(samples.len());
    out.push(samples[0]);
    out.extend(samples.windows(2).map(|w| w[1] - coeff * w[0]));
    Ok(out)
}

pub fn frame_count(n_samples: usize) -> Option<usize> {
    (n_samples >= FRAME_LEN).then(|| (n_samples - FRAME_LEN) / HOP_LEN + 1)
}

/// Cuts the signal into full frames; a trailing partial frame is dropped.
pub fn frame_signal(audio: &AudioBuffer) -> Result<Vec<Frame>> {
    frame_samples(audio.samples())
}

pub fn frame_samples(samples: &[f64]) -> Result<Vec<Frame>> {
    let count = frame_count(samples.len()).ok_or(Error::AudioTooShort {
        len: samples.len(),
        needed: FRAME_LEN,
    })?;
    Ok((0..count)
        .map(|k| Frame {
            samples: samples[k * HOP_LEN..k * HOP_LEN + FRAME_LEN].to_vec(),
        })
        .collect())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over 0..Nyquist evaluated on the FFT bin grid.
pub struct MelFilterbank {
    centers_hz: Vec<f64>,
    /// Per channel: first bin index and the weights from that bin on.
    weights: Vec<(usize, Vec<f64>)>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelFilterbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFilterbank")
            .field("centers_hz", &self.centers_hz)
            .finish_non_exhaustive()
    }
}

impl MelFilterbank {
    pub fn new(n_channels: usize) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::InvalidConfig("filterbank has no channels".into()));
        }
        let nyquist = SAMPLE_RATE_HZ as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_channels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_channels + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE_HZ as f64 / FFT_LEN as f64;
        let n_bins = FFT_LEN / 2 + 1;
        let weights = (0..n_channels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = (lo / bin_hz).ceil() as usize;
                let w: Vec<f64> = (first..n_bins)
                    .map(|k| k as f64 * bin_hz)
                    .take_while(|&f| f <= hi)
                    .map(|f| {
                        if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .map(|w| w.max(0.0))
                    .collect();
                (first, w)
            })
            .collect();
        let window = (0..FRAME_LEN)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (FRAME_LEN - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_LEN);
        Ok(Self {
            centers_hz: edges[1..=n_channels].to_vec(),
            weights,
            window,
            fft,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.centers_hz.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Power spectrum `|X(k)|^2` of the windowed, zero-padded frame.
    pub fn power_spectrum(&self, frame: &Frame) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .samples
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(FFT_LEN)
            .collect();
        self.fft.process(&mut buf);
        buf[..=FFT_LEN / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn mel_energies(&self, frame: &Frame) -> FilterbankEnergies {
        let power = self.power_spectrum(frame);
        let values = self
            .weights
            .iter()
            .map(|(first, w)| {
                let e: f64 = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
                e.max(ENERGY_FLOOR)
            })
            .collect();
        FilterbankEnergies { values }
    }
}

/// Cepstra `C(1)..C(8)` of the log filterbank outputs.
pub fn mfcc(energies: &FilterbankEnergies) -> Result<[f64; N_STATIC]> {
    let m_total = energies.n_channels() as f64;
    let logs = energies
        .values
        .iter()
        .enumerate()
        .map(|(channel, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(value.ln())
            } else {
                Err(Error::NonPositiveEnergy { channel, value })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut c = [0.0; N_STATIC];
    for (i, slot) in c.iter_mut().enumerate() {
        let n = (i + 1) as f64;
        *slot = logs
            .iter()
            .enumerate()
            .map(|(m, l)| l * (PI * n / m_total * (m as f64 + 0.5)).cos())
            .sum();
    }
    Ok(c)
}

/// Regression deltas over `±window` frames with edge replication.
pub fn deltas(seq: &[[f64; N_STATIC]], window: usize) -> Vec<[f64; N_STATIC]> {
    let last = seq.len().saturating_sub(1) as isize;
    let at = |t: isize| &seq[t.clamp(0, last) as usize];
    let denom = 2.0 * (1..=window).map(|w| (w * w) as f64).sum::<f64>();
    (0..seq.len() as isize)
        .map(|t| {
            let mut d = [0.0; N_STATIC];
            for w in 1..=window as isize {
                let (next, prev) = (at(t + w), at(t - w));
                for j in 0..N_STATIC {
                    d[j] += w as f64 * (next[j] - prev[j]);
                }
            }
            d.iter_mut().for_each(|x| *x /= denom);
            d
        })
        .collect()
}

/// Full MFCC+delta front end. Cheap to share between threads.
#[derive(Debug)]
pub struct FeatureExtractor {
    config: FrontendConfig,
    filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let filterbank = MelFilterbank::new(config.n_channels)?;
        Ok(Self { config, filterbank })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn extract(&self, audio: &AudioBuffer) -> Result<FeatureSequence> {
        let emphasized = pre_emphasize(audio, self.config.pre_emphasis)?;
        let frames = frame_samples(&emphasized)?;
        let statics = frames
            .iter()
            .map(|f| mfcc(&self.filterbank.mel_energies(f)))
            .collect::<Result<Vec<_>>>()?;
        let d = deltas(&statics, self.config.delta_window);
        let out = statics
            .iter()
            .zip(&d)
            .map(|(s, d)| s.iter().chain(d).copied().collect())
            .collect();
        FeatureSequence::new(out)
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(FrontendConfig::default()).expect("default front-end config is valid")
    }
}
