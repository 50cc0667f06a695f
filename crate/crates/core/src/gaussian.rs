//! Kinematic state layout, Gaussian beliefs and the small set of SPD helpers
//! every other module leans on.
//!
//! States are 6-vectors ordered as position (2), box size (2), velocity (2),
//! all in pixels or pixels per frame.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix6, SMatrix, SVector, Vector2, Vector6};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 6;

/// Eigenvalue floor used when a covariance has to be pushed back into the SPD cone.
pub const DEFAULT_SPD_EPS: f64 = 1e-6;

/// Person state: position `x`, box size `w` and velocity `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVec(pub Vector6<f64>);

impl StateVec {
    pub fn new(position: Vector2<f64>, size: Vector2<f64>, velocity: Vector2<f64>) -> Self {
        StateVec(Vector6::new(
            position.x, position.y, size.x, size.y, velocity.x, velocity.y,
        ))
    }

    pub fn position(&self) -> Vector2<f64> {
        self.0.fixed_rows::<2>(0).into_owned()
    }

    pub fn size(&self) -> Vector2<f64> {
        self.0.fixed_rows::<2>(2).into_owned()
    }

    pub fn velocity(&self) -> Vector2<f64> {
        self.0.fixed_rows::<2>(4).into_owned()
    }

    /// Bounding box `(cx, cy, w, h)`, i.e. the visual projection of the state.
    pub fn bbox(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn to_array(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        out.copy_from_slice(self.0.as_slice());
        out
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        StateVec(Vector6::from_column_slice(&a))
    }
}

/// Constant-velocity transition: position += velocity, size and velocity kept.
pub fn transition_matrix() -> Matrix6<f64> {
    let mut d = Matrix6::identity();
    d[(0, 4)] = 1.0;
    d[(1, 5)] = 1.0;
    d
}

/// Selects the observed box `(x, w)` out of a state.
pub fn visual_projection() -> SMatrix<f64, 4, 6> {
    SMatrix::<f64, 4, 6>::identity()
}

/// Selects the position `x` out of a state.
pub fn audio_projection() -> SMatrix<f64, 2, 6> {
    SMatrix::<f64, 2, 6>::identity()
}

/// Image plane extent in pixels, origin at the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImageRect {
    pub width: f64,
    pub height: f64,
}

impl ImageRect {
    pub const fn new(width: f64, height: f64) -> Self {
        ImageRect { width, height }
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

impl Default for ImageRect {
    fn default() -> Self {
        ImageRect::new(1920.0, 1200.0)
    }
}

/// Gaussian belief over a person state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector6<f64>,
    pub cov: Matrix6<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vector6<f64>, cov: Matrix6<f64>) -> Self {
        GaussianBelief { mean, cov }
    }

    /// Checks finiteness, symmetry (1e-10 relative) and positive definiteness.
    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::numeric("belief", "non-finite entries"));
        }
        let scale = self.cov.amax().max(f64::MIN_POSITIVE);
        if (self.cov - self.cov.transpose()).amax() > 1e-10 * scale {
            return Err(Error::numeric("belief covariance", "not symmetric"));
        }
        if self.cov.cholesky().is_none() {
            return Err(Error::numeric("belief covariance", "not positive definite"));
        }
        Ok(())
    }

    pub fn position(&self) -> Vector2<f64> {
        self.mean.fixed_rows::<2>(0).into_owned()
    }
}

/// Linear-Gaussian dynamics `s_t ~ N(D s_{t-1}, Λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub transition: Matrix6<f64>,
    pub process_cov: Matrix6<f64>,
}

impl DynamicsModel {
    pub fn new(process_cov: Matrix6<f64>) -> Self {
        DynamicsModel {
            transition: transition_matrix(),
            process_cov,
        }
    }

    /// Diagonal process noise given per-block variances (position, size, velocity).
    pub fn diagonal(position_var: f64, size_var: f64, velocity_var: f64) -> Self {
        Self::new(Matrix6::from_diagonal(&Vector6::new(
            position_var,
            position_var,
            size_var,
            size_var,
            velocity_var,
            velocity_var,
        )))
    }
}

/// `log N(v; mean, cov)` through a Cholesky factorization.
pub fn gaussian_logpdf(v: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = v.len();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(Error::Input(format!(
            "gaussian_logpdf dimension mismatch: v {d}, mean {}, cov {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("gaussian_logpdf covariance", format!("not SPD: {cov}")))?;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&(v - mean))
        .ok_or_else(|| Error::numeric("gaussian_logpdf covariance", "singular factor"))?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + log_det + z.norm_squared()))
}

/// Fixed-size logpdf for the tracker's inner loops. `None` when `cov` is not SPD.
pub(crate) fn logpdf_fixed<const D: usize>(
    v: &SVector<f64, D>,
    mean: &SVector<f64, D>,
    cov: &SMatrix<f64, D, D>,
) -> Option<f64> {
    let chol = cov.cholesky()?;
    let z = chol.l_dirty().solve_lower_triangular(&(v - mean))?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    Some(-0.5 * (D as f64 * (2.0 * PI).ln() + log_det + z.norm_squared()))
}

/// Projects a symmetric matrix onto `{M : λ_min(M) >= eps}` by clipping eigenvalues.
///
/// Matrices already inside the set come back symmetrized and otherwise untouched,
/// which makes the projection idempotent bit for bit.
pub fn spd_project(m: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Input(format!(
            "spd_project needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("spd_project: non-finite entries".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Input(format!("spd_project: eps must be > 0, got {eps}")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.amax();
    // eigen-solver round-off, so a projected matrix re-enters unchanged
    let slack = 64.0 * f64::EPSILON * max_abs.max(eps);
    if eig.eigenvalues.min() >= eps - slack {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(eps));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

/// [`spd_project`] for 6x6 state covariances.
pub fn spd_project6(m: &Matrix6<f64>, eps: f64) -> Result<Matrix6<f64>> {
    let dm = DMatrix::from_column_slice(6, 6, m.as_slice());
    let out = spd_project(&dm, eps)?;
    Ok(Matrix6::from_column_slice(out.as_slice()))
}

fn check_simplex(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Input(format!("{name}: negative or non-finite component")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-8 {
        return Err(Error::Input(format!("{name}: sums to {s}, expected 1")));
    }
    Ok(())
}

/// Normalized Bhattacharyya coefficient, clamped to `[0, 1]`.
pub(crate) fn bhattacharyya_coefficient(u: &[f64], h: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(h).map(|(a, b)| (a * b).sqrt()).sum();
    let su: f64 = u.iter().sum();
    let sh: f64 = h.iter().sum();
    (dot / (su * sh).sqrt()).clamp(0.0, 1.0)
}

/// Appearance likelihood `exp(-lambda (1 - BC(u, h)))`.
pub fn bhattacharyya_likelihood(u: &[f64], h: &[f64], lambda: f64) -> Result<f64> {
    if u.len() != h.len() {
        return Err(Error::Input(format!(
            "appearance dimension mismatch: {} vs {}",
            u.len(),
            h.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Input(format!("lambda must be > 0, got {lambda}")));
    }
    check_simplex("u", u)?;
    check_simplex("h", h)?;
    Ok((-lambda * (1.0 - bhattacharyya_coefficient(u, h))).exp())
}

/// One-step prediction `N(D μ, D Γ Dᵀ + Λ)`, SPD-guarded.
pub fn predict_belief(prev: &GaussianBelief, dynamics: &DynamicsModel) -> Result<GaussianBelief> {
    let d = &dynamics.transition;
    let mean = d * prev.mean;
    let cov = d * prev.cov * d.transpose() + dynamics.process_cov;
    Ok(GaussianBelief {
        mean,
        cov: spd_project6(&cov, DEFAULT_SPD_EPS)?,
    })
}

/// Log-sum-exp whose result does not depend on the order of `values`.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let Some(&max) = sorted.last() else {
        return f64::NEG_INFINITY;
    };
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = sorted.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
