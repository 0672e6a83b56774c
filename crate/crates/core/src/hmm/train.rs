//! Model initialization (seeded k-means) and Baum-Welch re-estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GaussianMixture, GmmHmm};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// Lower bound on every transition probability after re-estimation.
pub const TRANSITION_FLOOR: f64 = 1e-6;
/// Lower bound on mixture weights.
pub const WEIGHT_FLOOR: f64 = 1e-8;
/// Absolute lower bound on the variance floor, for dimensions that never
/// vary in the training data.
pub const MIN_VARIANCE: f64 = 1e-6;

const KMEANS_ITERATIONS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_iterations: usize,
    pub rel_ll_tolerance: f64,
    pub n_mixtures: usize,
    /// Variance floor as a fraction of the pooled per-dimension variance.
    pub variance_floor_scale: f64,
    pub rng_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            rel_ll_tolerance: 1e-5,
            n_mixtures: 3,
            variance_floor_scale: 1e-3,
            rng_seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.n_mixtures == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations and n_mixtures must be positive".into(),
            ));
        }
        if !(self.rel_ll_tolerance > 0.0) || !(self.variance_floor_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "rel_ll_tolerance and variance_floor_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }
}

fn check_dims(obs_set: &[&[Vec<f64>]]) -> Result<usize> {
    let first = obs_set
        .iter()
        .find_map(|s| s.first())
        .ok_or_else(|| Error::InsufficientData("no observations".into()))?;
    let dim = first.len();
    for seq in obs_set {
        if seq.is_empty() {
            return Err(Error::EmptyObservation);
        }
        if let Some(bad) = seq.iter().find(|o| o.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
    }
    Ok(dim)
}

fn mean_and_variance(points: &[&Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = points.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for p in points {
        for ((v, x), m) in var.iter_mut().zip(p.iter()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

fn sq_dist(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scale)
        .map(|((x, y), s)| (x - y) * (x - y) * s)
        .sum()
}

/// Seeded k-means++ followed by Lloyd iterations. Distances are measured
/// after scaling each dimension by `scale` (inverse variances). Returns the
/// centers and each point's cluster.
fn kmeans(
    points: &[&Vec<f64>],
    k: usize,
    scale: &[f64],
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = scale.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0], scale)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().expect("non-empty"), scale));
        }
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| {
                    sq_dist(p, &centers[i], scale).total_cmp(&sq_dist(p, &centers[j], scale))
                })
                .expect("k > 0");
            if best != *a {
                *a = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assign.iter().zip(points) {
            counts[*a] += 1;
            for (s, x) in sums[*a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    (centers, assign)
}

/// Initial model: states from a k-means split of all pooled frames, mixture
/// components from a second k-means inside each state, near-uniform
/// transitions with small seeded jitter and a uniform initial distribution.
pub fn init_model(
    obs_set: &[&[Vec<f64>]],
    n_states: usize,
    config: &TrainingConfig,
) -> Result<GmmHmm> {
    config.validate()?;
    if n_states == 0 {
        return Err(Error::InvalidConfig("n_states must be positive".into()));
    }
    if obs_set.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let dim = check_dims(obs_set)?;
    let points: Vec<&Vec<f64>> = obs_set.iter().flat_map(|s| s.iter()).collect();
    let k = config.n_mixtures;
    if points.len() < n_states * k {
        return Err(Error::InsufficientData(format!(
            "{} frames for {n_states} states x {k} mixtures",
            points.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let (_, global_var) = mean_and_variance(&points, dim);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (v * config.variance_floor_scale).max(MIN_VARIANCE))
        .collect();
    let scale: Vec<f64> = global_var.iter().map(|v| 1.0 / v.max(MIN_VARIANCE)).collect();

    let (_, state_of) = if n_states == 1 {
        (vec![], vec![0; points.len()])
    } else {
        kmeans(&points, n_states, &scale, &mut rng)
    };

    let mut emissions = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(&state_of)
            .filter(|(_, a)| **a == s)
            .map(|(p, _)| *p)
            .collect();
        // An empty state borrows the whole pool.
        let members = if members.is_empty() { points.clone() } else { members };
        let comp_of = if k == 1 {
            vec![0; members.len()]
        } else {
            kmeans(&members, k, &scale, &mut rng).1
        };
        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for c in 0..k {
            let pts: Vec<&Vec<f64>> = members
                .iter()
                .zip(&comp_of)
                .filter(|(_, a)| **a == c)
                .map(|(p, _)| *p)
                .collect();
            let (mean, var) = if pts.is_empty() {
                mean_and_variance(&members, dim)
            } else {
                mean_and_variance(&pts, dim)
            };
            weights.push((pts.len() as f64 + 1.0) / (members.len() + k) as f64);
            means.push(mean);
            variances.push(var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect());
        }
        emissions.push(GaussianMixture::new(weights, means, variances)?);
    }

    let transitions = (0..n_states)
        .map(|_| {
            let row: Vec<f64> = (0..n_states)
                .map(|_| 1.0 / n_states as f64 + 0.01 * rng.random::<f64>())
                .collect();
            let total: f64 = row.iter().sum();
            row.iter().map(|p| p / total).collect()
        })
        .collect();
    GmmHmm::new(
        vec![1.0 / n_states as f64; n_states],
        transitions,
        emissions,
        floor,
    )
}

/// Sufficient statistics gathered in one E-step. Moments are taken around
/// the current component means to keep the variance update well conditioned.
struct Accumulator {
    log_likelihood: f64,
    initial: Vec<f64>,
    trans_num: Vec<Vec<f64>>,
    occupancy: Vec<Vec<f64>>,
    first: Vec<Vec<Vec<f64>>>,
    second: Vec<Vec<Vec<f64>>>,
}

impl Accumulator {
    fn zeros(model: &GmmHmm) -> Self {
        let n = model.n_states();
        let dim = model.feature_dim();
        let ks: Vec<usize> = model.emissions().iter().map(|e| e.n_components()).collect();
        Self {
            log_likelihood: 0.0,
            initial: vec![0.0; n],
            trans_num: vec![vec![0.0; n]; n],
            occupancy: ks.iter().map(|&k| vec![0.0; k]).collect(),
            first: ks.iter().map(|&k| vec![vec![0.0; dim]; k]).collect(),
            second: ks.iter().map(|&k| vec![vec![0.0; dim]; k]).collect(),
        }
    }

    fn add(&mut self, other: &Accumulator) {
        fn add_vec(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.log_likelihood += other.log_likelihood;
        add_vec(&mut self.initial, &other.initial);
        for (a, b) in self.trans_num.iter_mut().zip(&other.trans_num) {
            add_vec(a, b);
        }
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            add_vec(a, b);
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            for (x, y) in a.iter_mut().zip(b) {
                add_vec(x, y);
            }
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            for (x, y) in a.iter_mut().zip(b) {
                add_vec(x, y);
            }
        }
    }
}

fn e_step(model: &GmmHmm, obs: &[Vec<f64>]) -> Result<Accumulator> {
    let n = model.n_states();
    let t_len = obs.len();
    let mut acc = Accumulator::zeros(model);

    // per-frame, per-state component log terms
    let comp: Vec<Vec<Vec<f64>>> = obs
        .iter()
        .map(|o| {
            model
                .emissions()
                .iter()
                .map(|e| {
                    let mut b = vec![0.0; e.n_components()];
                    e.component_log_densities(o, &mut b);
                    b
                })
                .collect()
        })
        .collect();
    let log_b: Vec<Vec<f64>> = comp
        .iter()
        .map(|row| row.iter().map(|c| log_sum_exp(c)).collect())
        .collect();

    let alpha = model.forward_matrix(&log_b);
    let beta = model.backward_matrix(&log_b);
    let ll = log_sum_exp(&alpha[t_len - 1]);
    if !ll.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "sequence log-likelihood is {ll}"
        )));
    }
    acc.log_likelihood = ll;

    let log_a = model.log_transitions();
    for t in 0..t_len {
        for j in 0..n {
            let gamma = (alpha[t][j] + beta[t][j] - ll).exp();
            if t == 0 {
                acc.initial[j] += gamma;
            }
            if gamma > 0.0 {
                let e = &model.emissions()[j];
                for (k, c) in comp[t][j].iter().enumerate() {
                    let g = gamma * (c - log_b[t][j]).exp();
                    if g == 0.0 {
                        continue;
                    }
                    acc.occupancy[j][k] += g;
                    let mu = &e.means()[k];
                    let (f, s) = (&mut acc.first[j][k], &mut acc.second[j][k]);
                    for d in 0..obs[t].len() {
                        let x = obs[t][d] - mu[d];
                        f[d] += g * x;
                        s[d] += g * x * x;
                    }
                }
            }
        }
        if t + 1 < t_len {
            for i in 0..n {
                for j in 0..n {
                    acc.trans_num[i][j] += (alpha[t][i]
                        + log_a[i][j]
                        + log_b[t + 1][j]
                        + beta[t + 1][j]
                        - ll)
                        .exp();
                }
            }
        }
    }
    Ok(acc)
}

fn normalize_with_floor(row: &[f64], floor: f64) -> Option<Vec<f64>> {
    let total: f64 = row.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let floored: Vec<f64> = row.iter().map(|x| (x / total).max(floor)).collect();
    let total: f64 = floored.iter().sum();
    Some(floored.iter().map(|x| x / total).collect())
}

fn m_step(model: &GmmHmm, acc: &Accumulator) -> Result<GmmHmm> {
    let initial = normalize_with_floor(&acc.initial, TRANSITION_FLOOR)
        .ok_or_else(|| Error::NumericalFailure("initial occupancy vanished".into()))?;
    let transitions = acc
        .trans_num
        .iter()
        .zip(model.transitions())
        .map(|(row, old)| {
            // a state never left keeps its previous row
            normalize_with_floor(row, TRANSITION_FLOOR).unwrap_or_else(|| old.clone())
        })
        .collect();
    let floor = model.variance_floor();
    let emissions = model
        .emissions()
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let occ = &acc.occupancy[j];
            let weights = normalize_with_floor(occ, WEIGHT_FLOOR)
                .unwrap_or_else(|| e.weights().to_vec());
            let mut means = Vec::with_capacity(occ.len());
            let mut variances = Vec::with_capacity(occ.len());
            for k in 0..occ.len() {
                let mu = &e.means()[k];
                if occ[k] <= f64::MIN_POSITIVE {
                    means.push(mu.clone());
                    variances.push(e.variances()[k].clone());
                    continue;
                }
                let shift: Vec<f64> = acc.first[j][k].iter().map(|f| f / occ[k]).collect();
                means.push(mu.iter().zip(&shift).map(|(m, s)| m + s).collect());
                variances.push(
                    acc.second[j][k]
                        .iter()
                        .zip(&shift)
                        .zip(floor)
                        .map(|((s2, s1), f)| (s2 / occ[k] - s1 * s1).max(*f))
                        .collect(),
                );
            }
            GaussianMixture::new(weights, means, variances)
        })
        .collect::<Result<Vec<_>>>()?;
    GmmHmm::new(initial, transitions, emissions, floor.to_vec())
}

fn expectation(model: &GmmHmm, obs_set: &[&[Vec<f64>]]) -> Result<Accumulator> {
    // collect keeps sequence order, so the reduction below is order-fixed
    let parts = obs_set
        .par_iter()
        .map(|obs| e_step(model, obs))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Accumulator::zeros(model);
    for p in &parts {
        total.add(p);
    }
    Ok(total)
}

/// Baum-Welch re-estimation. Returns the trained model and the total
/// log-likelihood of the training data under each successive model; the
/// last entry belongs to the returned model.
pub fn baum_welch(
    initial: &GmmHmm,
    obs_set: &[&[Vec<f64>]],
    config: &TrainingConfig,
) -> Result<(GmmHmm, Vec<f64>)> {
    config.validate()?;
    if obs_set.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let dim = check_dims(obs_set)?;
    if dim != initial.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: initial.feature_dim(),
            found: dim,
        });
    }

    let mut model = initial.clone();
    let mut history = Vec::with_capacity(config.max_iterations + 1);
    for iteration in 0..=config.max_iterations {
        let acc = expectation(&model, obs_set)?;
        let ll = acc.log_likelihood;
        if let Some(&prev) = history.last() {
            let rel = (ll - prev) / f64::abs(prev).max(f64::MIN_POSITIVE);
            history.push(ll);
            if rel < config.rel_ll_tolerance {
                break;
            }
        } else {
            history.push(ll);
        }
        if iteration == config.max_iterations {
            break;
        }
        model = m_step(&model, &acc)?;
    }
    Ok((model, history))
}

/// `init_model` followed by `baum_welch`.
pub fn train(
    obs_set: &[&[Vec<f64>]],
    n_states: usize,
    config: &TrainingConfig,
) -> Result<GmmHmm> {
    let init = init_model(obs_set, n_states, config)?;
    Ok(baum_welch(&init, obs_set, config)?.0)
}

impl GmmHmm {
    /// Draws a state path and observation sequence of length `len`.
    pub fn sample<R: Rng>(&self, rng: &mut R, len: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        fn pick<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
            let mut u = rng.random::<f64>();
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    return i;
                }
                u -= p;
            }
            probs.len() - 1
        }
        let mut states = Vec::with_capacity(len);
        let mut obs = Vec::with_capacity(len);
        let mut s = pick(rng, self.initial_probs());
        for t in 0..len {
            if t > 0 {
                s = pick(rng, &self.transitions()[s]);
            }
            let e = &self.emissions()[s];
            let k = pick(rng, e.weights());
            let x = e.means()[k]
                .iter()
                .zip(&e.variances()[k])
                .map(|(m, v)| Normal::new(*m, v.sqrt()).expect("valid normal").sample(rng))
                .collect();
            states.push(s);
            obs.push(x);
        }
        (states, obs)
    }
}
