//! M-step, appearance update and diarization.

use nalgebra::{DMatrix, Matrix6};

use super::VisualObservation;
use crate::error::Result;
use crate::gaussian::{spd_project6, transition_matrix, GaussianBelief};

/// `Λ = spd_project(Γ_t − D Γ_{t-1} Dᵀ + e eᵀ, eps)` with `e = μ_t − D μ_{t-1}`.
pub fn m_step(prev: &GaussianBelief, updated: &GaussianBelief, eps: f64) -> Result<Matrix6<f64>> {
    let d = transition_matrix();
    let e = updated.mean - d * prev.mean;
    let raw = updated.cov - d * prev.cov * d.transpose() + e * e.transpose();
    spd_project6(&raw, eps)
}

/// Responsibility-weighted exponential moving average of the appearance.
pub fn update_appearance(h: &[f64], weights: &[f64], visuals: &[VisualObservation], rate: f64) -> Vec<f64> {
    let mass: f64 = weights.iter().sum();
    if visuals.is_empty() || !(mass > 0.0) {
        return h.to_vec();
    }
    let mut mean = vec![0.0; h.len()];
    for (w, obs) in weights.iter().zip(visuals) {
        for (acc, u) in mean.iter_mut().zip(&obs.u) {
            *acc += w * u;
        }
    }
    let rho = rate * mass.min(1.0);
    let mut out: Vec<f64> = h
        .iter()
        .zip(&mean)
        .map(|(hv, m)| (1.0 - rho) * hv + rho * m / mass)
        .collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean audio responsibility of each person over the active sub-bands.
pub fn speaking_scores(beta: &[DMatrix<f64>], n_persons: usize) -> Vec<f64> {
    if beta.is_empty() {
        return vec![0.0; n_persons];
    }
    let kt = beta.len() as f64;
    (0..n_persons)
        .map(|i| beta.iter().map(|b| b.row(i + 1).sum()).sum::<f64>() / kt)
        .collect()
}

/// `χ_n = 1` iff the mean audio responsibility reaches `gamma`.
pub fn diarize(beta: &[DMatrix<f64>], n_persons: usize, gamma: f64) -> Vec<bool> {
    if beta.is_empty() {
        return vec![false; n_persons];
    }
    speaking_scores(beta, n_persons).into_iter().map(|s| s >= gamma).collect()
}
