//! E-Z (assignment) and E-S (state) steps.

use nalgebra::{DMatrix, Matrix2, Matrix4, Matrix6, Vector2, Vector4, Vector6};

use super::{AudioObservation, PersonTrack, TrackerConfig, VisualObservation};
use crate::avmap::{log_region_posterior, AudioMappingModel};
use crate::error::{Error, Result};
use crate::gaussian::{
    bhattacharyya_coefficient, log_sum_exp, logpdf_fixed, spd_project6, transition_matrix,
    GaussianBelief,
};

/// Visual responsibilities `α`, `M_t x (N+1)`, column 0 = clutter.
pub fn e_step_visual(
    tracks: &[PersonTrack],
    visuals: &[VisualObservation],
    config: &TrackerConfig,
) -> Result<DMatrix<f64>> {
    let n = tracks.len();
    let log_eta = -((n + 1) as f64).ln();
    let log_clutter = if config.clutter_hypothesis {
        log_eta - config.resolved_vol_v().ln() - config.vol_h.ln()
    } else {
        f64::NEG_INFINITY
    };
    let mut alpha = DMatrix::zeros(visuals.len(), n + 1);
    let mut logs = vec![0.0; n + 1];
    for (m, obs) in visuals.iter().enumerate() {
        let phi_inv = obs
            .phi
            .cholesky()
            .ok_or_else(|| Error::numeric("visual observation covariance", format!("not SPD: {}", obs.phi)))?
            .inverse();
        logs[0] = log_clutter;
        for (i, track) in tracks.iter().enumerate() {
            let mean = track.belief.mean.fixed_rows::<4>(0).into_owned();
            let gauss = logpdf_fixed(&obs.v, &mean, &obs.phi)
                .ok_or_else(|| Error::numeric("visual observation covariance", "not SPD"))?;
            let spread = trace_product4(&phi_inv, &track.belief.cov.fixed_view::<4, 4>(0, 0).into_owned());
            let appearance = -config.lambda_app * (1.0 - bhattacharyya_coefficient(&obs.u, &track.appearance));
            logs[i + 1] = log_eta + gauss - 0.5 * spread + appearance;
        }
        let norm = log_sum_exp(&logs);
        if norm == f64::NEG_INFINITY {
            alpha[(m, 0)] = 1.0;
            continue;
        }
        for (j, l) in logs.iter().enumerate() {
            alpha[(m, j)] = (l - norm).exp();
        }
    }
    Ok(alpha)
}

fn trace_product4(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

fn trace_product2(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Position the audio region prior is evaluated at: `x̃ = x_{t-1} + y_{t-1}`.
pub fn naive_position(prev: &GaussianBelief) -> Vector2<f64> {
    Vector2::new(prev.mean[0] + prev.mean[4], prev.mean[1] + prev.mean[5])
}

/// Audio responsibilities `β`: one `(N+1) x R` matrix per audio observation.
/// Row 0 is clutter, spread evenly over `r`.
pub fn e_step_audio(
    tracks: &[PersonTrack],
    audios: &[AudioObservation],
    mapping: Option<&AudioMappingModel>,
    prev: &[GaussianBelief],
    config: &TrackerConfig,
) -> Result<Vec<DMatrix<f64>>> {
    if audios.is_empty() {
        return Ok(Vec::new());
    }
    let mapping = mapping.ok_or_else(|| Error::Input("audio observations given but no audio mapping".into()))?;
    if prev.len() != tracks.len() {
        return Err(Error::Input("previous beliefs do not match the track list".into()));
    }
    let n = tracks.len();
    let r = mapping.r();
    let log_rho = -((n + 1) as f64).ln();
    let naive: Vec<Vector2<f64>> = prev.iter().map(naive_position).collect();
    let mut out = Vec::with_capacity(audios.len());
    let mut logs = vec![0.0; n * r + 1];
    for obs in audios {
        let band = mapping.subband(obs.k).ok_or_else(|| {
            Error::Input(format!("sub-band index {} out of range (K = {})", obs.k, mapping.n_subbands()))
        })?;
        if obs.g.len() != band.feature_dim() {
            return Err(Error::Input(format!(
                "audio feature for sub-band {} has dimension {}, expected {}",
                obs.k,
                obs.g.len(),
                band.feature_dim()
            )));
        }
        let log_vol_g = config.vol_g.map(f64::ln).unwrap_or_else(|| band.log_feature_volume());
        logs[0] = log_rho - log_vol_g;
        for (i, track) in tracks.iter().enumerate() {
            let x = track.belief.position();
            let cov_xx = track.belief.cov.fixed_view::<2, 2>(0, 0).into_owned();
            let regions = log_region_posterior(band, &naive[i]);
            for (c, expert) in band.experts().iter().enumerate() {
                logs[1 + i * r + c] = log_rho + expert.loglik(&obs.g, &x)
                    - 0.5 * trace_product2(expert.info(), &cov_xx)
                    + regions[c];
            }
        }
        let norm = log_sum_exp(&logs);
        let mut beta = DMatrix::zeros(n + 1, r);
        let clutter = (logs[0] - norm).exp() / r as f64;
        for c in 0..r {
            beta[(0, c)] = clutter;
        }
        for i in 0..n {
            for c in 0..r {
                beta[(i + 1, c)] = (logs[1 + i * r + c] - norm).exp();
            }
        }
        out.push(beta);
    }
    Ok(out)
}

/// Gaussian prior of the E-S step: `N(D μ_{t-1}, Λ + D Γ_{t-1} Dᵀ)`.
pub fn state_prior(prev: &GaussianBelief, dynamics_cov: &Matrix6<f64>) -> GaussianBelief {
    let d = transition_matrix();
    GaussianBelief {
        mean: d * prev.mean,
        cov: dynamics_cov + d * prev.cov * d.transpose(),
    }
}

/// Result of the E-S step.
#[derive(Clone, Debug)]
pub struct StateUpdate {
    pub beliefs: Vec<GaussianBelief>,
    /// Prior or posterior covariances that needed an SPD repair.
    pub repaired: usize,
}

/// Closed-form `q(s_tn)`: information-form fusion of the audio, visual and
/// prior terms.
#[allow(clippy::too_many_arguments)]
pub fn e_step_state(
    n_tracks: usize,
    alpha: &DMatrix<f64>,
    beta: &[DMatrix<f64>],
    visuals: &[VisualObservation],
    audios: &[AudioObservation],
    mapping: Option<&AudioMappingModel>,
    priors: &[GaussianBelief],
    eps: f64,
) -> Result<StateUpdate> {
    if priors.len() != n_tracks || alpha.ncols() != n_tracks + 1 || alpha.nrows() != visuals.len() {
        return Err(Error::Input("E-S step inputs disagree on the number of tracks or observations".into()));
    }
    if beta.len() != audios.len() {
        return Err(Error::Input("E-S step: one beta slice per audio observation expected".into()));
    }
    let phi_inv: Vec<Matrix4<f64>> = visuals
        .iter()
        .map(|o| {
            o.phi
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| Error::numeric("visual observation covariance", "not SPD"))
        })
        .collect::<Result<_>>()?;
    let phi_inv_v: Vec<Vector4<f64>> = phi_inv.iter().zip(visuals).map(|(p, o)| p * o.v).collect();

    let mut repaired = 0;
    let mut beliefs = Vec::with_capacity(n_tracks);
    for (i, prior) in priors.iter().enumerate() {
        let mut precision = Matrix6::zeros();
        let mut info = Vector6::zeros();

        // #1 audio
        if !audios.is_empty() {
            let mapping = mapping.ok_or_else(|| Error::Input("audio observations given but no audio mapping".into()))?;
            for (obs, b) in audios.iter().zip(beta) {
                let band = mapping
                    .subband(obs.k)
                    .ok_or_else(|| Error::Input(format!("sub-band index {} out of range", obs.k)))?;
                for (c, expert) in band.experts().iter().enumerate() {
                    let w = b[(i + 1, c)];
                    let mut block = precision.fixed_view_mut::<2, 2>(0, 0);
                    block += expert.info() * w;
                    let mut head = info.fixed_rows_mut::<2>(0);
                    head += expert.info_vector(&obs.g) * w;
                }
            }
        }

        // #2 visual
        for (m, (pinv, pv)) in phi_inv.iter().zip(&phi_inv_v).enumerate() {
            let w = alpha[(m, i + 1)];
            let mut block = precision.fixed_view_mut::<4, 4>(0, 0);
            block += pinv * w;
            let mut head = info.fixed_rows_mut::<4>(0);
            head += pv * w;
        }

        // #3 prior
        let prior_chol = match prior.cov.cholesky() {
            Some(c) => c,
            None => {
                repaired += 1;
                spd_project6(&prior.cov, eps)?
                    .cholesky()
                    .ok_or_else(|| Error::numeric("E-S prior covariance", "not SPD after projection"))?
            }
        };
        precision += prior_chol.inverse();
        info += prior_chol.solve(&prior.mean);

        let precision = (precision + precision.transpose()) * 0.5;
        let post_chol = precision
            .cholesky()
            .ok_or_else(|| Error::numeric("E-S precision", format!("not SPD for track {i}")))?;
        let mean = post_chol.solve(&info);
        let cov = post_chol.inverse();
        let cov_sym = (cov + cov.transpose()) * 0.5;
        let guarded = spd_project6(&cov_sym, eps)?;
        if guarded != cov_sym {
            repaired += 1;
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("E-S mean", format!("non-finite for track {i}")));
        }
        beliefs.push(GaussianBelief { mean, cov: guarded });
    }
    Ok(StateUpdate { beliefs, repaired })
}
