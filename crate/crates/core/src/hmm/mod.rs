//! Ergodic hidden Markov models with diagonal Gaussian-mixture emissions.
//!
//! All probabilities are handled in the log domain. Scoring uses the
//! forward recursion; [`viterbi`](GmmHmm::viterbi) gives the best single
//! path; training lives in [`train`].

mod gmm;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use self::gmm::GaussianMixture;
pub use self::train::{baum_welch, init_model, TrainingConfig};
use crate::error::{Error, Result};
use crate::math::{argmax, log_sum_exp};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmmParams", into = "HmmParams")]
pub struct GmmHmm {
    feature_dim: usize,
    initial_probs: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    emissions: Vec<GaussianMixture>,
    variance_floor: Vec<f64>,
    log_initial: Vec<f64>,
    log_transitions: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct HmmParams {
    n_states: usize,
    feature_dim: usize,
    initial_probs: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    emissions: Vec<GaussianMixture>,
    variance_floor: Vec<f64>,
}

impl TryFrom<HmmParams> for GmmHmm {
    type Error = Error;

    fn try_from(p: HmmParams) -> Result<Self> {
        if p.n_states != p.emissions.len() {
            return Err(Error::InvalidModel(format!(
                "n_states {} does not match {} emissions",
                p.n_states,
                p.emissions.len()
            )));
        }
        if p.feature_dim != p.variance_floor.len() {
            return Err(Error::DimensionMismatch {
                expected: p.feature_dim,
                found: p.variance_floor.len(),
            });
        }
        GmmHmm::new(p.initial_probs, p.transitions, p.emissions, p.variance_floor)
    }
}

impl From<GmmHmm> for HmmParams {
    fn from(m: GmmHmm) -> Self {
        HmmParams {
            n_states: m.emissions.len(),
            feature_dim: m.feature_dim,
            initial_probs: m.initial_probs,
            transitions: m.transitions,
            emissions: m.emissions,
            variance_floor: m.variance_floor,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile<T> {
    format_version: u32,
    model: T,
}

fn check_stochastic(name: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidModel(format!(
            "{name} has non-positive entries: {row:?}"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidModel(format!("{name} sums to {total}")));
    }
    Ok(())
}

impl GmmHmm {
    /// Builds a model, checking that every probability vector is strictly
    /// positive and stochastic and that every variance respects the floor.
    pub fn new(
        initial_probs: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        emissions: Vec<GaussianMixture>,
        variance_floor: Vec<f64>,
    ) -> Result<Self> {
        let n = emissions.len();
        if n == 0 {
            return Err(Error::InvalidModel("model has no states".into()));
        }
        if initial_probs.len() != n || transitions.len() != n {
            return Err(Error::InvalidModel(format!(
                "{n} states but {} initial probs and {} transition rows",
                initial_probs.len(),
                transitions.len()
            )));
        }
        check_stochastic("initial distribution", &initial_probs)?;
        for (i, row) in transitions.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidModel(format!(
                    "transition row {i} has {} entries",
                    row.len()
                )));
            }
            check_stochastic(&format!("transition row {i}"), row)?;
        }
        let feature_dim = variance_floor.len();
        for e in &emissions {
            if e.dim() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: e.dim(),
                });
            }
            for var in e.variances() {
                if var.iter().zip(&variance_floor).any(|(v, f)| v < f) {
                    return Err(Error::InvalidModel("variance below floor".into()));
                }
            }
        }
        let log_initial = initial_probs.iter().map(|p| p.ln()).collect();
        let log_transitions = transitions
            .iter()
            .map(|row| row.iter().map(|p| p.ln()).collect())
            .collect();
        Ok(Self {
            feature_dim,
            initial_probs,
            transitions,
            emissions,
            variance_floor,
            log_initial,
            log_transitions,
        })
    }

    pub fn n_states(&self) -> usize {
        self.emissions.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn initial_probs(&self) -> &[f64] {
        &self.initial_probs
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn emissions(&self) -> &[GaussianMixture] {
        &self.emissions
    }

    pub fn variance_floor(&self) -> &[f64] {
        &self.variance_floor
    }

    pub(crate) fn log_transitions(&self) -> &[Vec<f64>] {
        &self.log_transitions
    }

    pub fn check_observations(&self, obs: &[Vec<f64>]) -> Result<()> {
        if obs.is_empty() {
            return Err(Error::EmptyObservation);
        }
        if let Some(bad) = obs.iter().find(|o| o.len() != self.feature_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: bad.len(),
            });
        }
        Ok(())
    }

    /// `T x N` matrix of state emission log densities.
    pub fn emission_log_densities(&self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k_max = self.emissions.iter().map(|e| e.n_components()).max().unwrap_or(1);
        let mut buf = vec![0.0; k_max];
        obs.iter()
            .map(|o| {
                self.emissions
                    .iter()
                    .map(|e| {
                        let b = &mut buf[..e.n_components()];
                        e.component_log_densities(o, b);
                        log_sum_exp(b)
                    })
                    .collect()
            })
            .collect()
    }

    /// Log forward variables `alpha[t][j]` given precomputed emissions.
    pub(crate) fn forward_matrix(&self, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let mut alpha = Vec::with_capacity(log_b.len());
        alpha.push((0..n).map(|j| self.log_initial[j] + log_b[0][j]).collect::<Vec<_>>());
        let mut terms = vec![0.0; n];
        for b in &log_b[1..] {
            let prev = alpha.last().expect("alpha is non-empty");
            let next = (0..n)
                .map(|j| {
                    for (i, t) in terms.iter_mut().enumerate() {
                        *t = prev[i] + self.log_transitions[i][j];
                    }
                    log_sum_exp(&terms) + b[j]
                })
                .collect();
            alpha.push(next);
        }
        alpha
    }

    /// Log backward variables `beta[t][i]`.
    pub(crate) fn backward_matrix(&self, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let t_len = log_b.len();
        let mut beta = vec![vec![0.0; n]; t_len];
        let mut terms = vec![0.0; n];
        for t in (0..t_len - 1).rev() {
            for i in 0..n {
                for (j, term) in terms.iter_mut().enumerate() {
                    *term = self.log_transitions[i][j] + log_b[t + 1][j] + beta[t + 1][j];
                }
                beta[t][i] = log_sum_exp(&terms);
            }
        }
        beta
    }

    /// `log P(obs | model)` summed over all state paths.
    pub fn log_forward(&self, obs: &[Vec<f64>]) -> Result<f64> {
        self.check_observations(obs)?;
        let log_b = self.emission_log_densities(obs);
        let alpha = self.forward_matrix(&log_b);
        let ll = log_sum_exp(alpha.last().expect("non-empty"));
        if ll.is_nan() {
            return Err(Error::NumericalFailure("forward likelihood is NaN".into()));
        }
        Ok(ll)
    }

    /// Most likely state path and its log probability.
    pub fn viterbi(&self, obs: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
        self.check_observations(obs)?;
        let n = self.n_states();
        let log_b = self.emission_log_densities(obs);
        let mut delta: Vec<f64> = (0..n).map(|j| self.log_initial[j] + log_b[0][j]).collect();
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(obs.len());
        let mut cand = vec![0.0; n];
        for b in &log_b[1..] {
            let mut ptr = vec![0; n];
            let next: Vec<f64> = (0..n)
                .map(|j| {
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c = delta[i] + self.log_transitions[i][j];
                    }
                    let best = argmax(&cand).unwrap_or(0);
                    ptr[j] = best;
                    cand[best] + b[j]
                })
                .collect();
            back.push(ptr);
            delta = next;
        }
        let last = argmax(&delta).ok_or_else(|| {
            Error::NumericalFailure("viterbi scores are all NaN".into())
        })?;
        let score = delta[last];
        let mut path = vec![last];
        for ptr in back.iter().rev() {
            path.push(ptr[*path.last().expect("non-empty")]);
        }
        path.reverse();
        Ok((path, score))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile<GmmHmm> = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                expected: MODEL_FORMAT_VERSION,
                found: file.format_version,
            });
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
