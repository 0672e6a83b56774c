use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureParams", into = "MixtureParams")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    /// `log w_k - 0.5 * sum_d log(2 pi var_kd)`
    log_norm: Vec<f64>,
    inv_var: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl TryFrom<MixtureParams> for GaussianMixture {
    type Error = Error;

    fn try_from(p: MixtureParams) -> Result<Self> {
        GaussianMixture::new(p.weights, p.means, p.variances)
    }
}

impl From<GaussianMixture> for MixtureParams {
    fn from(g: GaussianMixture) -> Self {
        MixtureParams {
            weights: g.weights,
            means: g.means,
            variances: g.variances,
        }
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidModel(format!(
                "mixture has {k} weights, {} means, {} variances",
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidModel("zero-dimensional mixture".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: if m.len() != dim { m.len() } else { v.len() },
                });
            }
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidModel(format!(
                "mixture weights must be positive: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!(
                "mixture weights sum to {total}"
            )));
        }
        if variances.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite()))
            || means.iter().flatten().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidModel(
                "mixture has non-finite mean or non-positive variance".into(),
            ));
        }
        let log_norm = weights
            .iter()
            .zip(&variances)
            .map(|(w, var)| {
                w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>()
            })
            .collect();
        let inv_var = variances
            .iter()
            .map(|var| var.iter().map(|v| 1.0 / v).collect())
            .collect();
        Ok(Self {
            weights,
            means,
            variances,
            log_norm,
            inv_var,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Weighted log density of each component, `log w_k + log N(x; mu_k, var_k)`.
    pub fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate().take(self.weights.len()) {
            let mahal: f64 = x
                .iter()
                .zip(&self.means[k])
                .zip(&self.inv_var[k])
                .map(|((xi, mi), iv)| {
                    let d = xi - mi;
                    d * d * iv
                })
                .sum();
            *slot = self.log_norm[k] - 0.5 * mahal;
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.weights.len()];
        self.component_log_densities(x, &mut buf);
        log_sum_exp(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_gaussian_density() {
        let g = GaussianMixture::new(vec![1.0], vec![vec![1.0, -2.0]], vec![vec![4.0, 0.25]]).unwrap();
        // product of two univariate normals
        let p1 = (-(0.5f64).powi(2) / 8.0).exp() / (2.0 * PI * 4.0).sqrt();
        let p2 = (-(0.5f64).powi(2) / 0.5).exp() / (2.0 * PI * 0.25).sqrt();
        assert_relative_eq!(g.log_density(&[1.5, -1.5]), (p1 * p2).ln(), epsilon = 1e-12);
    }

    #[test]
    fn mixture_density_is_weighted_sum() {
        let g = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![0.0], vec![3.0]],
            vec![vec![1.0], vec![2.0]],
        )
        .unwrap();
        let n = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        let x = 1.2;
        assert_relative_eq!(
            g.log_density(&[x]),
            (0.3 * n(x, 0.0, 1.0) + 0.7 * n(x, 3.0, 2.0)).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_invalid() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let g = GaussianMixture::new(
            vec![0.1, 0.9],
            vec![vec![0.1 + 0.2, 1.0 / 3.0], vec![-7.25e-3, 1e300]],
            vec![vec![2.0f64.sqrt(), 1e-9], vec![0.7, 3.3]],
        )
        .unwrap();
        let back: GaussianMixture = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, back);
    }
}
