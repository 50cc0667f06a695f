//! Audio generative model: per-sub-band mixtures of affine experts mapping a
//! 2-D source position onto a 2J-D inter-channel feature vector.
//!
//! Each sub-band `k` carries `R` experts. Expert `r` owns a Gaussian region
//! `N(x; ν, Ω)` over image positions with prior weight `π`, and an affine map
//! `g ≈ L x + l` with residual covariance `Σ`. The tracker consumes two
//! quantities from a fitted model: the affine likelihood of a feature given a
//! position ([`affine_loglik`]) and the region posterior at a position
//! ([`region_posterior`]).
//!
//! A DOA-point model ([`doa_point_model`]) reuses the same machinery with
//! `L = I₂`, `l = 0` and a single flat region, so that audio observations are
//! directly noisy image positions.

mod file;
pub mod synthetic;
mod train;

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_logpdf, log_sum_exp, ImageRect};

pub use file::ModelFile;
pub use train::{train_mapping, SubbandTrace, TrainConfig, TrainReport};

/// One affine expert `(L, l, Σ, ν, Ω, π)` of a sub-band mixture.
///
/// Fields are private so the cached factorizations stay consistent with them.
#[derive(Clone, Debug)]
pub struct AffineExpert {
    pi: f64,
    nu: Vector2<f64>,
    omega: Matrix2<f64>,
    linear: DMatrix<f64>,
    offset: DVector<f64>,
    sigma: DMatrix<f64>,
    cache: ExpertCache,
}

#[derive(Clone, Debug)]
struct ExpertCache {
    sigma_chol: Cholesky<f64, Dyn>,
    sigma_log_det: f64,
    /// `Lᵀ Σ⁻¹`, 2 x 2J.
    lt_sigma_inv: DMatrix<f64>,
    /// `Lᵀ Σ⁻¹ L`, the position information one observation carries.
    info: Matrix2<f64>,
    omega_inv: Matrix2<f64>,
    omega_log_det: f64,
}

impl AffineExpert {
    pub fn new(
        pi: f64,
        nu: Vector2<f64>,
        omega: Matrix2<f64>,
        linear: DMatrix<f64>,
        offset: DVector<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let dim = offset.len();
        if linear.nrows() != dim || linear.ncols() != 2 {
            return Err(Error::Input(format!(
                "expert L must be {dim}x2, got {}x{}",
                linear.nrows(),
                linear.ncols()
            )));
        }
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::Input(format!(
                "expert Sigma must be {dim}x{dim}, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if !(pi >= 0.0) || !pi.is_finite() {
            return Err(Error::Input(format!("expert prior must be >= 0, got {pi}")));
        }
        let all_finite = nu.iter().chain(omega.iter()).all(|v| v.is_finite())
            && linear.iter().chain(offset.iter()).chain(sigma.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Input("expert has non-finite parameters".into()));
        }
        let sigma_chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("expert Sigma", "not SPD"))?;
        let omega_chol = omega
            .cholesky()
            .ok_or_else(|| Error::numeric("expert Omega", "not SPD"))?;
        let sigma_log_det = sigma_chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let sigma_inv_l = sigma_chol.solve(&linear);
        let lt_sigma_inv = sigma_inv_l.transpose();
        let info_d = linear.transpose() * &sigma_inv_l;
        let info = Matrix2::new(
            info_d[(0, 0)],
            0.5 * (info_d[(0, 1)] + info_d[(1, 0)]),
            0.5 * (info_d[(0, 1)] + info_d[(1, 0)]),
            info_d[(1, 1)],
        );
        let omega_log_det = omega_chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let omega_inv = omega_chol.inverse();
        Ok(AffineExpert {
            pi,
            nu,
            omega,
            linear,
            offset,
            sigma,
            cache: ExpertCache {
                sigma_chol,
                sigma_log_det,
                lt_sigma_inv,
                info,
                omega_inv,
                omega_log_det,
            },
        })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn nu(&self) -> &Vector2<f64> {
        &self.nu
    }

    pub fn omega(&self) -> &Matrix2<f64> {
        &self.omega
    }

    /// The 2J x 2 matrix `L`.
    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    /// The 2J offset `l`.
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Forward prediction `L x + l`.
    pub fn predict(&self, x: &Vector2<f64>) -> DVector<f64> {
        &self.linear * DVector::from_column_slice(x.as_slice()) + &self.offset
    }

    /// `log N(g; L x + l, Σ)` from the cached factor.
    pub(crate) fn loglik(&self, g: &DVector<f64>, x: &Vector2<f64>) -> f64 {
        let r = g - self.predict(x);
        let z = self
            .cache
            .sigma_chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (g.len() as f64 * (2.0 * PI).ln() + self.cache.sigma_log_det + z.norm_squared())
    }

    /// `Lᵀ Σ⁻¹ L`.
    pub(crate) fn info(&self) -> &Matrix2<f64> {
        &self.cache.info
    }

    /// `Lᵀ Σ⁻¹ (g - l)`.
    pub(crate) fn info_vector(&self, g: &DVector<f64>) -> Vector2<f64> {
        let v = &self.cache.lt_sigma_inv * (g - &self.offset);
        Vector2::new(v[0], v[1])
    }

    /// `log π + log N(x; ν, Ω)`.
    fn region_log_weight(&self, x: &Vector2<f64>) -> f64 {
        let d = x - self.nu;
        let quad = (d.transpose() * self.cache.omega_inv * d)[0];
        self.pi.ln() - 0.5 * (2.0 * (2.0 * PI).ln() + self.cache.omega_log_det + quad)
    }
}

/// The `R` experts of one sub-band plus the bounding box of its features, whose
/// volume is the clutter support `vol(G)`.
#[derive(Clone, Debug)]
pub struct SubbandMapping {
    experts: Vec<AffineExpert>,
    feature_lo: DVector<f64>,
    feature_hi: DVector<f64>,
}

impl SubbandMapping {
    pub fn new(
        experts: Vec<AffineExpert>,
        feature_lo: DVector<f64>,
        feature_hi: DVector<f64>,
    ) -> Result<Self> {
        let Some(first) = experts.first() else {
            return Err(Error::Input("sub-band needs at least one expert".into()));
        };
        let dim = first.offset.len();
        if experts.iter().any(|e| e.offset.len() != dim) {
            return Err(Error::Input("experts of a sub-band disagree on feature dimension".into()));
        }
        if dim % 2 != 0 {
            return Err(Error::Input(format!("feature dimension {dim} is not even")));
        }
        let total: f64 = experts.iter().map(|e| e.pi).sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Input(format!("expert priors sum to {total}, expected 1")));
        }
        if feature_lo.len() != dim || feature_hi.len() != dim {
            return Err(Error::Input("feature box dimension mismatch".into()));
        }
        if feature_lo.iter().zip(feature_hi.iter()).any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::Input("feature box must have positive extent in every dimension".into()));
        }
        Ok(SubbandMapping {
            experts,
            feature_lo,
            feature_hi,
        })
    }

    pub fn experts(&self) -> &[AffineExpert] {
        &self.experts
    }

    /// Number of experts `R`.
    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    /// Feature dimension `2J`.
    pub fn feature_dim(&self) -> usize {
        self.experts[0].offset.len()
    }

    pub fn feature_box(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.feature_lo, &self.feature_hi)
    }

    /// `log vol(G)` of the feature box.
    pub fn log_feature_volume(&self) -> f64 {
        self.feature_lo
            .iter()
            .zip(self.feature_hi.iter())
            .map(|(lo, hi)| (hi - lo).ln())
            .sum()
    }

    /// Region-posterior-weighted forward prediction `Σ_r p(r|x) (L_r x + l_r)`.
    pub fn predict(&self, x: &Vector2<f64>) -> DVector<f64> {
        let post = region_posterior(self, x);
        let mut out = DVector::zeros(self.feature_dim());
        for (w, e) in post.weights.iter().zip(&self.experts) {
            out += e.predict(x) * *w;
        }
        out
    }
}

/// How audio observations relate to positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappingMode {
    /// Inter-channel features through learned affine experts.
    LearnedMapping,
    /// Observations are noisy 2-D image points (projected DOAs).
    DoaPoint,
}

impl MappingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MappingMode::LearnedMapping => "learned-mapping",
            MappingMode::DoaPoint => "doa-point",
        }
    }
}

/// A full audio model: one [`SubbandMapping`] per sub-band.
#[derive(Clone, Debug)]
pub struct AudioMappingModel {
    mode: MappingMode,
    subbands: Vec<SubbandMapping>,
    sigma_doa: Option<f64>,
}

impl AudioMappingModel {
    pub fn new(
        mode: MappingMode,
        subbands: Vec<SubbandMapping>,
        sigma_doa: Option<f64>,
    ) -> Result<Self> {
        let Some(first) = subbands.first() else {
            return Err(Error::Input("mapping needs at least one sub-band".into()));
        };
        let (dim, r) = (first.feature_dim(), first.n_experts());
        if mode == MappingMode::LearnedMapping
            && subbands.iter().any(|s| s.feature_dim() != dim || s.n_experts() != r)
        {
            return Err(Error::Input("all sub-bands must share J and R".into()));
        }
        if mode == MappingMode::DoaPoint {
            match sigma_doa {
                Some(s) if s > 0.0 => {}
                _ => return Err(Error::Input("doa-point mode needs sigma_doa > 0".into())),
            }
            if dim != 2 {
                return Err(Error::Input("doa-point mode needs 2-D observations".into()));
            }
        }
        Ok(AudioMappingModel {
            mode,
            subbands,
            sigma_doa,
        })
    }

    pub fn mode(&self) -> MappingMode {
        self.mode
    }

    pub fn sigma_doa(&self) -> Option<f64> {
        self.sigma_doa
    }

    pub fn subbands(&self) -> &[SubbandMapping] {
        &self.subbands
    }

    pub fn subband(&self, k: usize) -> Option<&SubbandMapping> {
        self.subbands.get(k)
    }

    /// Number of sub-bands `K`.
    pub fn n_subbands(&self) -> usize {
        self.subbands.len()
    }

    /// Frequencies per sub-band `J`.
    pub fn j(&self) -> usize {
        self.subbands[0].feature_dim() / 2
    }

    /// Experts per sub-band `R`.
    pub fn r(&self) -> usize {
        self.subbands[0].n_experts()
    }
}

/// A training example: a source position and its `K` sub-band features.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub x: Vector2<f64>,
    /// One 2J-vector per sub-band.
    pub g: Vec<DVector<f64>>,
}

/// `log N(g; L_r x + l_r, Σ_r)`.
pub fn affine_loglik(
    m: &SubbandMapping,
    g: &DVector<f64>,
    x: &Vector2<f64>,
    r: usize,
) -> Result<f64> {
    let expert = m.experts.get(r).ok_or_else(|| {
        Error::Input(format!("expert index {r} out of range (R = {})", m.experts.len()))
    })?;
    if g.len() != m.feature_dim() {
        return Err(Error::Input(format!(
            "feature has dimension {}, sub-band expects {}",
            g.len(),
            m.feature_dim()
        )));
    }
    Ok(expert.loglik(g, x))
}

/// Posterior over regions at a position, `p(C = r | x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPosterior {
    pub weights: Vec<f64>,
    /// Every component underflowed; `weights` fell back to the priors `π`.
    pub degenerate: bool,
}

/// `p(C=r | x) = π_r N(x; ν_r, Ω_r) / Σ_i π_i N(x; ν_i, Ω_i)`, in log space.
pub fn region_posterior(m: &SubbandMapping, x: &Vector2<f64>) -> RegionPosterior {
    let logs: Vec<f64> = m.experts.iter().map(|e| e.region_log_weight(x)).collect();
    let norm = log_sum_exp(&logs);
    if !norm.is_finite() {
        return RegionPosterior {
            weights: m.experts.iter().map(|e| e.pi).collect(),
            degenerate: true,
        };
    }
    RegionPosterior {
        weights: logs.iter().map(|l| (l - norm).exp()).collect(),
        degenerate: false,
    }
}

/// Log region posterior, used by the tracker's audio E-step.
pub(crate) fn log_region_posterior(m: &SubbandMapping, x: &Vector2<f64>) -> Vec<f64> {
    let logs: Vec<f64> = m.experts.iter().map(|e| e.region_log_weight(x)).collect();
    let norm = log_sum_exp(&logs);
    if !norm.is_finite() {
        return m.experts.iter().map(|e| e.pi.ln()).collect();
    }
    logs.iter().map(|l| l - norm).collect()
}

/// Audio model whose observations are DOAs projected to image points:
/// `x̂ ~ N(x, σ² I)`. Every one of the `slots` sub-bands carries the same single
/// identity expert with a flat region centred on the image; the clutter box is
/// the image rectangle.
pub fn doa_point_model(sigma: f64, slots: usize, image: ImageRect) -> Result<AudioMappingModel> {
    if !(sigma > 0.0) {
        return Err(Error::Input(format!("sigma_doa must be > 0, got {sigma}")));
    }
    if slots == 0 {
        return Err(Error::Input("doa-point model needs at least one slot".into()));
    }
    let flat = 1e4 * image.width.max(image.height);
    let expert = AffineExpert::new(
        1.0,
        image.center(),
        Matrix2::identity() * flat * flat,
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DMatrix::identity(2, 2) * sigma * sigma,
    )?;
    let band = SubbandMapping::new(
        vec![expert],
        DVector::zeros(2),
        DVector::from_column_slice(&[image.width, image.height]),
    )?;
    AudioMappingModel::new(MappingMode::DoaPoint, vec![band; slots], Some(sigma))
}

/// Dense reference for [`affine_loglik`], used by tests.
#[doc(hidden)]
pub fn affine_loglik_dense(
    m: &SubbandMapping,
    g: &DVector<f64>,
    x: &Vector2<f64>,
    r: usize,
) -> Result<f64> {
    let e = &m.experts[r];
    gaussian_logpdf(g, &e.predict(x), &e.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_expert(rng: &mut impl Rng, dim: usize, pi: f64) -> AffineExpert {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        AffineExpert::new(
            pi,
            Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
            b * b.transpose() * 400.0 + Matrix2::identity() * 50.0,
            DMatrix::from_fn(dim, 2, |_, _| rng.random_range(-0.1..0.1)),
            DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
            &a * a.transpose() + DMatrix::identity(dim, dim) * 0.05,
        )
        .unwrap()
    }

    fn random_band(rng: &mut impl Rng, dim: usize, r: usize) -> SubbandMapping {
        let mut w: Vec<f64> = (0..r).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let experts = w.iter().map(|&p| random_expert(rng, dim, p)).collect();
        SubbandMapping::new(
            experts,
            DVector::from_element(dim, -10.0),
            DVector::from_element(dim, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn loglik_at_prediction_is_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let band = random_band(&mut rng, 4, 2);
        let x = Vector2::new(30.0, 40.0);
        let e = &band.experts()[1];
        let g = e.predict(&x);
        let peak = affine_loglik(&band, &g, &x, 1).unwrap();
        let expected = -0.5 * (e.sigma() * (2.0 * PI)).determinant().ln();
        assert_relative_eq!(peak, expected, max_relative = 1e-12);
        let off = affine_loglik(&band, &(g.clone() + DVector::from_element(4, 0.1)), &x, 1).unwrap();
        assert!(off < peak);
    }

    #[test]
    fn loglik_at_origin_uses_offset_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let band = random_band(&mut rng, 6, 3);
        let g = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let e = &band.experts()[2];
        let got = affine_loglik(&band, &g, &Vector2::zeros(), 2).unwrap();
        let want = gaussian_logpdf(&g, e.offset(), e.sigma()).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn loglik_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let band = random_band(&mut rng, 8, 3);
            let g = DVector::from_fn(8, |_, _| rng.random_range(-2.0..2.0));
            let x = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let r = rng.random_range(0..3);
            let e = &band.experts()[r];
            let res = &g - e.linear() * DVector::from_column_slice(x.as_slice()) - e.offset();
            let inv = e.sigma().clone().try_inverse().unwrap();
            let oracle = -0.5
                * ((e.sigma() * (2.0 * PI)).determinant().ln()
                    + (res.transpose() * inv * &res)[0]);
            assert_relative_eq!(affine_loglik(&band, &g, &x, r).unwrap(), oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn loglik_rejects_bad_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let band = random_band(&mut rng, 2, 2);
        assert!(affine_loglik(&band, &DVector::zeros(2), &Vector2::zeros(), 2).is_err());
    }

    #[test]
    fn region_posterior_single_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let band = random_band(&mut rng, 2, 1);
        assert_eq!(region_posterior(&band, &Vector2::new(3.0, 4.0)).weights, vec![1.0]);
    }

    #[test]
    fn region_posterior_symmetric_midpoint() {
        let mk = |nu: Vector2<f64>| {
            AffineExpert::new(
                0.5,
                nu,
                Matrix2::identity() * 100.0,
                DMatrix::zeros(2, 2),
                DVector::zeros(2),
                DMatrix::identity(2, 2),
            )
            .unwrap()
        };
        let band = SubbandMapping::new(
            vec![mk(Vector2::new(0.0, 0.0)), mk(Vector2::new(10.0, 0.0))],
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        let post = region_posterior(&band, &Vector2::new(5.0, 7.0));
        assert_relative_eq!(post.weights[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(post.weights[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn region_posterior_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let band = random_band(&mut rng, 2, 4);
            let x = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let dens: Vec<f64> = band
                .experts()
                .iter()
                .map(|e| {
                    let d = x - e.nu();
                    let inv = e.omega().try_inverse().unwrap();
                    e.pi() * (-0.5 * (d.transpose() * inv * d)[0]).exp()
                        / (2.0 * PI * e.omega().determinant().sqrt())
                })
                .collect();
            let total: f64 = dens.iter().sum();
            let post = region_posterior(&band, &x);
            assert!(!post.degenerate);
            for (w, d) in post.weights.iter().zip(&dens) {
                assert!((w - d / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn region_posterior_falls_back_to_priors_far_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let band = random_band(&mut rng, 2, 3);
        let post = region_posterior(&band, &Vector2::new(1e200, -1e200));
        assert!(post.degenerate);
        let priors: Vec<f64> = band.experts().iter().map(|e| e.pi()).collect();
        assert_eq!(post.weights, priors);
    }

    #[test]
    fn doa_model_basics() {
        let m = doa_point_model(5.0, 4, ImageRect::default()).unwrap();
        assert_eq!(m.mode(), MappingMode::DoaPoint);
        assert_eq!((m.n_subbands(), m.j(), m.r()), (4, 1, 1));
        let x = Vector2::new(100.0, 200.0);
        let g = DVector::from_column_slice(x.as_slice());
        let ll = affine_loglik(m.subband(0).unwrap(), &g, &x, 0).unwrap();
        assert_relative_eq!(ll, -(2.0 * PI * 25.0).ln(), max_relative = 1e-14);
        assert_eq!(region_posterior(m.subband(3).unwrap(), &x).weights, vec![1.0]);
        assert!(doa_point_model(0.0, 1, ImageRect::default()).is_err());
    }

    #[test]
    fn priors_must_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = random_expert(&mut rng, 2, 0.4);
        assert!(SubbandMapping::new(vec![e], DVector::zeros(2), DVector::from_element(2, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn region_posterior_invariant_to_prior_scaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let band = random_band(&mut rng, 2, 3);
            let x = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let scaled: Vec<f64> = band
                .experts()
                .iter()
                .map(|e| e.region_log_weight(&x) + scale.ln())
                .collect();
            let norm = log_sum_exp(&scaled);
            let post = region_posterior(&band, &x);
            let sum: f64 = post.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10);
            for (w, l) in post.weights.iter().zip(&scaled) {
                prop_assert!((w - (l - norm).exp()).abs() < 1e-12);
            }
        }
    }
}
