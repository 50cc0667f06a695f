//! Fitting sub-band expert mixtures from (position, feature) pairs.
//!
//! Each sub-band is fitted on its own: a full-covariance Gaussian mixture over
//! the joint vector `(x; g_k)` is estimated by EM, and each joint component is
//! then conditioned on `x` to give an affine expert. EM runs on standardized
//! coordinates; reported log-likelihoods are in the original units.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AffineExpert, AudioMappingModel, MappingMode, SubbandMapping, TrainingPair};
use crate::error::{Error, Result};
use crate::gaussian::spd_project;

/// Relative slack allowed on the per-iteration log-likelihood increase.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Experts per sub-band `R`.
    pub n_experts: usize,
    /// Expected sub-band count `K`; checked against the pairs.
    pub n_subbands: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// EM restarts per sub-band; the run with the highest final
    /// log-likelihood is kept.
    pub n_init: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
    /// Ridge added to every joint covariance, in standardized units.
    pub reg_covar: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_experts: 3,
            n_subbands: 16,
            seed: 0,
            max_iter: 200,
            n_init: 4,
            tol: 1e-8,
            reg_covar: 1e-8,
        }
    }
}

/// EM history of one sub-band.
#[derive(Clone, Debug, Serialize)]
pub struct SubbandTrace {
    /// Log-likelihood of the initial parameters, then after each M-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// Covariances that had to be pushed back to SPD.
    pub regularized: usize,
}

impl SubbandTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("trace holds the initial value")
    }

    /// Largest relative decrease between consecutive iterations (0 when monotone).
    pub fn max_relative_decrease(&self) -> f64 {
        self.log_likelihood
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub subbands: Vec<SubbandTrace>,
}

impl TrainReport {
    /// Total number of covariance-collapse repairs across sub-bands.
    pub fn warnings(&self) -> usize {
        self.subbands.iter().map(|s| s.regularized).sum()
    }
}

/// Fits one expert mixture per sub-band.
pub fn train_mapping(
    pairs: &[TrainingPair],
    config: &TrainConfig,
) -> Result<(AudioMappingModel, TrainReport)> {
    let r = config.n_experts;
    if r == 0 {
        return Err(Error::Input("number of experts must be >= 1".into()));
    }
    if pairs.len() < 10 * r {
        return Err(Error::Input(format!(
            "need at least {} training pairs for R = {r}, got {}",
            10 * r,
            pairs.len()
        )));
    }
    let k = pairs[0].g.len();
    if k == 0 {
        return Err(Error::Training("training pairs carry no sub-band data".into()));
    }
    if k != config.n_subbands {
        return Err(Error::Input(format!(
            "pairs have {k} sub-bands, configuration expects {}",
            config.n_subbands
        )));
    }
    let dim = pairs[0].g[0].len();
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Input(format!("feature dimension {dim} must be positive and even")));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.g.len() != k || p.g.iter().any(|g| g.len() != dim) {
            return Err(Error::Input(format!("pair {i} has inconsistent feature shape")));
        }
        if !p.x.iter().chain(p.g.iter().flat_map(|g| g.iter())).all(|v| v.is_finite()) {
            return Err(Error::Input(format!("pair {i} has non-finite values")));
        }
    }

    let fitted: Vec<(SubbandMapping, SubbandTrace)> = (0..k)
        .into_par_iter()
        .map(|band| {
            let data = DMatrix::from_fn(2 + dim, pairs.len(), |row, col| {
                if row < 2 {
                    pairs[col].x[row]
                } else {
                    pairs[col].g[band][row - 2]
                }
            });
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(band as u64);
            fit_subband(&data, config, &mut rng)
        })
        .collect::<Result<_>>()?;

    let (bands, traces): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let model = AudioMappingModel::new(MappingMode::LearnedMapping, bands, None)?;
    Ok((model, TrainReport { subbands: traces }))
}

struct Mixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

/// E-step: responsibilities (R x n) and the log-likelihood in standardized units.
fn e_step(data: &DMatrix<f64>, mix: &Mixture) -> Result<(DMatrix<f64>, f64)> {
    let (d, n) = data.shape();
    let r = mix.weights.len();
    let mut log_p = DMatrix::zeros(r, n);
    for c in 0..r {
        let chol = mix.covs[c]
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("EM component covariance", "not SPD"))?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mix.means[c];
        }
        let z = chol
            .l_dirty()
            .solve_lower_triangular(&centered)
            .ok_or_else(|| Error::numeric("EM component covariance", "singular factor"))?;
        let base = mix.weights[c].ln() - 0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        for i in 0..n {
            log_p[(c, i)] = base - 0.5 * z.column(i).norm_squared();
        }
    }
    let mut ll = 0.0;
    for i in 0..n {
        let col = log_p.column(i);
        let max = col.max();
        let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ll += lse;
        for c in 0..r {
            log_p[(c, i)] = (log_p[(c, i)] - lse).exp();
        }
    }
    Ok((log_p, ll))
}

/// M-step from responsibilities; returns the mixture and the number of repaired covariances.
fn m_step(data: &DMatrix<f64>, resp: &DMatrix<f64>, reg: f64, fallback: &DMatrix<f64>) -> Result<(Mixture, usize)> {
    let (d, n) = data.shape();
    let r = resp.nrows();
    let mut mix = Mixture {
        weights: Vec::with_capacity(r),
        means: Vec::with_capacity(r),
        covs: Vec::with_capacity(r),
    };
    let mut repaired = 0;
    for c in 0..r {
        let w = resp.row(c).transpose();
        let nk: f64 = w.sum();
        let floor = 10.0 * f64::EPSILON * n as f64;
        let nk_safe = nk.max(floor);
        let mean = data * &w / nk_safe;
        let mut scaled = data.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col -= &mean;
            col *= w[i].sqrt();
        }
        let mut cov = if nk > (d + 1) as f64 * 1e-3 {
            &scaled * scaled.transpose() / nk_safe
        } else {
            fallback.clone()
        };
        for j in 0..d {
            cov[(j, j)] += reg;
        }
        if cov.clone().cholesky().is_none() {
            cov = spd_project(&cov, reg.max(1e-12))?;
            repaired += 1;
        }
        mix.weights.push(nk_safe / n as f64);
        mix.means.push(mean);
        mix.covs.push(cov);
    }
    let total: f64 = mix.weights.iter().sum();
    mix.weights.iter_mut().for_each(|w| *w /= total);
    Ok((mix, repaired))
}

/// k-means++ seeding refined by a few Lloyd iterations; returns one-hot
/// responsibilities.
fn initial_assignment(data: &DMatrix<f64>, r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = data.ncols();
    let mut centers: Vec<DVector<f64>> = vec![data.column(rng.random_range(0..n)).into_owned()];
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| (data.column(i) - &centers[0]).norm_squared())
        .collect();
    while centers.len() < r {
        let total: f64 = min_dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            min_dist
                .iter()
                .position(|&d| {
                    u -= d;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let c = data.column(pick).into_owned();
        for (i, md) in min_dist.iter_mut().enumerate() {
            *md = md.min((data.column(i) - &c).norm_squared());
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..10 {
        for (i, label) in labels.iter_mut().enumerate() {
            let col = data.column(i);
            *label = (0..r)
                .map(|c| (c, (col - &centers[c]).norm_squared()))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
                .0;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut sum = DVector::zeros(data.nrows());
            for &i in &members {
                sum += data.column(i);
            }
            *center = sum / members.len() as f64;
        }
    }
    let mut resp = DMatrix::zeros(r, n);
    for (i, &label) in labels.iter().enumerate() {
        resp[(label, i)] = 1.0;
    }
    resp
}

struct EmRun {
    mix: Mixture,
    trace: Vec<f64>,
    converged: bool,
    regularized: usize,
}

impl EmRun {
    fn final_ll(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial log-likelihood")
    }
}

fn run_em(
    data: &DMatrix<f64>,
    global: &DMatrix<f64>,
    config: &TrainConfig,
    log_jacobian: f64,
    rng: &mut impl Rng,
) -> Result<EmRun> {
    let resp = initial_assignment(data, config.n_experts, rng);
    let (mut mix, mut regularized) = m_step(data, &resp, config.reg_covar, global)?;
    let (mut resp, mut ll) = e_step(data, &mix)?;
    let mut trace = vec![ll + log_jacobian];
    let mut converged = false;
    for _ in 0..config.max_iter {
        let (next, repaired) = m_step(data, &resp, config.reg_covar, global)?;
        regularized += repaired;
        let (next_resp, next_ll) = e_step(data, &next)?;
        trace.push(next_ll + log_jacobian);
        let improvement = (next_ll - ll) / ll.abs().max(1.0);
        debug_assert!(
            improvement >= -MONOTONE_TOL,
            "EM log-likelihood decreased: {ll} -> {next_ll}"
        );
        mix = next;
        resp = next_resp;
        ll = next_ll;
        if improvement < config.tol {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        mix,
        trace,
        converged,
        regularized,
    })
}

fn fit_subband(
    raw: &DMatrix<f64>,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(SubbandMapping, SubbandTrace)> {
    let (d, n) = raw.shape();
    let r = config.n_experts;

    let shift: DVector<f64> = DVector::from_fn(d, |j, _| raw.row(j).mean());
    let scale: DVector<f64> = DVector::from_fn(d, |j, _| {
        let s = raw.row(j).variance().sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    let mut data = raw.clone();
    for j in 0..d {
        for i in 0..n {
            data[(j, i)] = (data[(j, i)] - shift[j]) / scale[j];
        }
    }
    // change of variables back to the original units
    let log_jacobian = -(n as f64) * scale.iter().map(|s| s.ln()).sum::<f64>();

    let global = {
        let mut c = data.clone();
        for mut col in c.column_iter_mut() {
            col -= DVector::from_fn(d, |j, _| data.row(j).mean());
        }
        &c * c.transpose() / n as f64
    };

    let mut best: Option<EmRun> = None;
    for _ in 0..config.n_init.max(1) {
        let run = run_em(&data, &global, config, log_jacobian, rng)?;
        if best.as_ref().is_none_or(|b| run.final_ll() > b.final_ll()) {
            best = Some(run);
        }
    }
    let EmRun {
        mix,
        trace,
        converged,
        mut regularized,
    } = best.expect("at least one EM run");

    let mut experts = Vec::with_capacity(r);
    let s = DMatrix::from_diagonal(&scale);
    for c in 0..r {
        let mean = mix.means[c].component_mul(&scale) + &shift;
        let cov = &s * &mix.covs[c] * &s;
        let (expert, repaired) = condition_component(mix.weights[c], &mean, &cov)?;
        regularized += repaired;
        experts.push(expert);
    }

    let mut lo = DVector::from_fn(d - 2, |j, _| raw.row(j + 2).min());
    let mut hi = DVector::from_fn(d - 2, |j, _| raw.row(j + 2).max());
    for j in 0..d - 2 {
        if hi[j] - lo[j] <= 0.0 {
            let pad = 1e-6 * (lo[j].abs() + 1.0);
            lo[j] -= pad;
            hi[j] += pad;
        }
    }
    let band = SubbandMapping::new(experts, lo, hi)?;
    Ok((
        band,
        SubbandTrace {
            log_likelihood: trace,
            converged,
            regularized,
        },
    ))
}

/// Joint Gaussian over `(x; g)` to the affine expert of `g | x`.
fn condition_component(pi: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(AffineExpert, usize)> {
    let d = mean.len();
    let m_x = Vector2::new(mean[0], mean[1]);
    let m_g = mean.rows(2, d - 2).into_owned();
    let c_xx = Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]);
    let c_gx = cov.view((2, 0), (d - 2, 2)).into_owned();
    let c_gg = cov.view((2, 2), (d - 2, d - 2)).into_owned();
    let c_xx_inv = c_xx
        .try_inverse()
        .ok_or_else(|| Error::Training("degenerate position covariance".into()))?;
    let c_xx_inv_d = DMatrix::from_column_slice(2, 2, c_xx_inv.as_slice());
    let linear = &c_gx * &c_xx_inv_d;
    let offset = &m_g - &linear * DVector::from_column_slice(m_x.as_slice());
    let schur = &c_gg - &linear * c_gx.transpose();
    let scale = schur.diagonal().amax().max(f64::MIN_POSITIVE);
    let projected = spd_project(&schur, 1e-12 * scale)?;
    let repaired = usize::from(projected != (&schur + schur.transpose()) * 0.5);
    let expert = AffineExpert::new(pi, m_x, c_xx, linear, offset, projected)?;
    Ok((expert, repaired))
}
