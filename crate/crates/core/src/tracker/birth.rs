//! Birth process: marginal likelihood of short detection sequences.

use nalgebra::{DMatrix, DVector, Matrix4, Matrix6, Vector4, Vector6};

use super::{TrackerConfig, VisualObservation};
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_logpdf, DynamicsModel, GaussianBelief};

/// Linear-Gaussian chain `s_1 ~ N(m0, P0)`, `s_i = D s_{i-1} + w`, `v_i = H s_i + r_i`.
/// Returns `log p(v_1..v_n)` by the prediction-error decomposition, together
/// with the filtered mean and covariance at the last step.
pub fn gaussian_sequence_loglik(
    obs: &[DVector<f64>],
    obs_cov: &[DMatrix<f64>],
    h: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    if obs.is_empty() || obs.len() != obs_cov.len() {
        return Err(Error::Input(format!(
            "sequence needs one covariance per observation ({} vs {})",
            obs.len(),
            obs_cov.len()
        )));
    }
    let n = prior_mean.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut m = prior_mean.clone();
    let mut p = prior_cov.clone();
    let mut total = 0.0;
    for (i, (v, r)) in obs.iter().zip(obs_cov).enumerate() {
        if i > 0 {
            m = d * &m;
            p = d * &p * d.transpose() + q;
        }
        let s = h * &p * h.transpose() + r;
        let s = (&s + s.transpose()) * 0.5;
        total += gaussian_logpdf(v, &(h * &m), &s)?;
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("birth innovation covariance", "not SPD"))?;
        let gain = chol.solve(&(h * &p)).transpose();
        m = &m + &gain * (v - h * &m);
        let a = &eye - &gain * h;
        p = &a * &p * a.transpose() + &gain * r * gain.transpose();
        p = (&p + p.transpose()) * 0.5;
    }
    Ok((total, m, p))
}

fn lift(v: &Vector4<f64>) -> Vector6<f64> {
    Vector6::new(v[0], v[1], v[2], v[3], 0.0, 0.0)
}

/// Runs the birth filter over `seq` (oldest first). The prior is centred at
/// the last detection lifted with zero velocity, covariance `prior_cov_scale·I`.
pub fn birth_filter(
    seq: &[Vector4<f64>],
    phis: &[Matrix4<f64>],
    dynamics: &DynamicsModel,
    prior_cov_scale: f64,
) -> Result<(f64, GaussianBelief)> {
    let Some(last) = seq.last() else {
        return Err(Error::Input("empty birth sequence".into()));
    };
    if phis.len() != seq.len() {
        return Err(Error::Input("birth sequence: one Phi per detection expected".into()));
    }
    let obs: Vec<DVector<f64>> = seq.iter().map(|v| DVector::from_column_slice(v.as_slice())).collect();
    let covs: Vec<DMatrix<f64>> = phis.iter().map(|p| DMatrix::from_column_slice(4, 4, p.as_slice())).collect();
    let h = DMatrix::from_fn(4, 6, |i, j| if i == j { 1.0 } else { 0.0 });
    let d = DMatrix::from_column_slice(6, 6, dynamics.transition.as_slice());
    let q = DMatrix::from_column_slice(6, 6, dynamics.process_cov.as_slice());
    let m0 = DVector::from_column_slice(lift(last).as_slice());
    let p0 = DMatrix::identity(6, 6) * prior_cov_scale;
    let (ll, m, p) = gaussian_sequence_loglik(&obs, &covs, &h, &d, &q, &m0, &p0)?;
    Ok((
        ll,
        GaussianBelief::new(Vector6::from_column_slice(m.as_slice()), Matrix6::from_column_slice(p.as_slice())),
    ))
}

/// Log marginal likelihood of a detection sequence under the dynamics.
pub fn sequence_marginal_likelihood(
    seq: &[Vector4<f64>],
    phis: &[Matrix4<f64>],
    dynamics: &DynamicsModel,
    prior_cov_scale: f64,
) -> Result<f64> {
    birth_filter(seq, phis, dynamics, prior_cov_scale).map(|(ll, _)| ll)
}

/// An accepted birth: terminal filter belief and the pool entries it used.
#[derive(Clone, Debug)]
pub struct BirthCandidate {
    pub log_likelihood: f64,
    pub belief: GaussianBelief,
    pub appearance: Vec<f64>,
    /// Index of the used detection in each pool frame, oldest first.
    pub members: Vec<usize>,
}

fn center_distance(a: &Vector4<f64>, b: &Vector4<f64>) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Greedy nearest-neighbour chains through the pool, scored and accepted in
/// decreasing likelihood order without sharing detections.
pub fn birth_scan(pool: &[Vec<VisualObservation>], config: &TrackerConfig) -> Result<Vec<BirthCandidate>> {
    if pool.len() != config.birth_window + 1 || pool.iter().any(|f| f.is_empty()) {
        return Ok(Vec::new());
    }
    let dynamics = config.initial_dynamics.dynamics();
    let mut candidates = Vec::new();
    for start in 0..pool[0].len() {
        let mut members = vec![start];
        let mut last = &pool[0][start].v;
        for frame in &pool[1..] {
            let next = frame
                .iter()
                .enumerate()
                .map(|(j, o)| (center_distance(last, &o.v), j))
                .filter(|(dist, _)| *dist <= config.birth_gate)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match next {
                Some((_, j)) => {
                    members.push(j);
                    last = &frame[j].v;
                }
                None => break,
            }
        }
        if members.len() != pool.len() {
            continue;
        }
        let seq: Vec<Vector4<f64>> = members.iter().zip(pool).map(|(&j, f)| f[j].v).collect();
        let phis: Vec<Matrix4<f64>> = members.iter().zip(pool).map(|(&j, f)| f[j].phi).collect();
        let (ll, belief) = birth_filter(&seq, &phis, &dynamics, config.birth_prior_cov_scale)?;
        if ll > config.birth_threshold {
            let appearance = pool[pool.len() - 1][members[members.len() - 1]].u.clone();
            candidates.push(BirthCandidate {
                log_likelihood: ll,
                belief,
                appearance,
                members,
            });
        }
    }
    candidates.sort_by(|a, b| {
        b.log_likelihood
            .total_cmp(&a.log_likelihood)
            .then(a.members[0].cmp(&b.members[0]))
    });
    let mut used: Vec<Vec<bool>> = pool.iter().map(|f| vec![false; f.len()]).collect();
    let mut accepted = Vec::new();
    for c in candidates {
        if c.members.iter().enumerate().any(|(f, &j)| used[f][j]) {
            continue;
        }
        for (f, &j) in c.members.iter().enumerate() {
            used[f][j] = true;
        }
        accepted.push(c);
    }
    Ok(accepted)
}
