//! Seeded ground-truth audio models and samplers, for simulation and tests.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{region_posterior, AffineExpert, AudioMappingModel, MappingMode, SubbandMapping, TrainingPair};
use crate::error::{Error, Result};
use crate::gaussian::ImageRect;

/// Parameters of a synthetic reference mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceMappingSpec {
    pub n_subbands: usize,
    pub j: usize,
    pub n_experts: usize,
    pub image: ImageRect,
    /// Feature change per pixel of source motion (column norm of `L`).
    pub gain: f64,
    /// Isotropic residual standard deviation of every expert.
    pub residual_std: f64,
    pub seed: u64,
}

impl Default for ReferenceMappingSpec {
    fn default() -> Self {
        ReferenceMappingSpec {
            n_subbands: 16,
            j: 8,
            n_experts: 3,
            image: ImageRect::default(),
            gain: 0.004,
            residual_std: 0.1,
            seed: 0,
        }
    }
}

/// Builds a mapping whose regions tile the image horizontally and whose
/// experts share a random base map plus a per-region perturbation.
pub fn reference_mapping(params: &ReferenceMappingSpec) -> Result<AudioMappingModel> {
    if params.n_subbands == 0 || params.j == 0 || params.n_experts == 0 {
        return Err(Error::Input("reference mapping needs K, J, R >= 1".into()));
    }
    if !(params.gain > 0.0) || !(params.residual_std > 0.0) {
        return Err(Error::Input("gain and residual_std must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dim = 2 * params.j;
    let r = params.n_experts;
    let (w, h) = (params.image.width, params.image.height);
    let entry_std = params.gain / (dim as f64).sqrt();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut bands = Vec::with_capacity(params.n_subbands);
    for _ in 0..params.n_subbands {
        let base = DMatrix::from_fn(dim, 2, |_, _| entry_std * normal());
        let mut lo = DVector::from_element(dim, f64::INFINITY);
        let mut hi = DVector::from_element(dim, f64::NEG_INFINITY);
        let mut experts = Vec::with_capacity(r);
        for c in 0..r {
            let linear = &base + DMatrix::from_fn(dim, 2, |_, _| 0.5 * entry_std * normal());
            let offset = DVector::from_fn(dim, |_, _| normal());
            let sigma = DMatrix::identity(dim, dim) * params.residual_std.powi(2);
            let nu = Vector2::new((c as f64 + 0.5) * w / r as f64, h / 2.0);
            let sx = w / (2.0 * r as f64);
            let omega = Matrix2::new(sx * sx, 0.0, 0.0, (h / 3.0).powi(2));
            let expert = AffineExpert::new(1.0 / r as f64, nu, omega, linear, offset, sigma)?;
            for corner in [
                Vector2::new(0.0, 0.0),
                Vector2::new(w, 0.0),
                Vector2::new(0.0, h),
                Vector2::new(w, h),
            ] {
                let p = expert.predict(&corner);
                for j in 0..dim {
                    lo[j] = lo[j].min(p[j] - 4.0 * params.residual_std);
                    hi[j] = hi[j].max(p[j] + 4.0 * params.residual_std);
                }
            }
            experts.push(expert);
        }
        bands.push(SubbandMapping::new(experts, lo, hi)?);
    }
    AudioMappingModel::new(MappingMode::LearnedMapping, bands, None)
}

/// Draws `g ~ N(L_r x + l_r, Σ_r)` with `r ~ p(r | x)`.
pub fn sample_feature(band: &SubbandMapping, x: &Vector2<f64>, noise_scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    let post = region_posterior(band, x);
    let r = WeightedIndex::new(&post.weights)
        .map(|d| d.sample(rng))
        .unwrap_or(0);
    sample_feature_from(&band.experts[r], x, noise_scale, rng)
}

pub(crate) fn sample_feature_from(
    expert: &AffineExpert,
    x: &Vector2<f64>,
    noise_scale: f64,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let dim = expert.offset.len();
    let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    expert.predict(x) + expert.cache.sigma_chol.l_dirty().lower_triangle() * z * noise_scale
}

/// Uniform draw over a sub-band's clutter box.
pub fn sample_clutter_feature(band: &SubbandMapping, rng: &mut impl Rng) -> DVector<f64> {
    let (lo, hi) = band.feature_box();
    DVector::from_fn(lo.len(), |j, _| rng.random_range(lo[j]..hi[j]))
}

/// Samples `n` pairs from the joint model: a region from the priors of the
/// first sub-band, a position from that region (redrawn until it lies in the
/// image), then one feature per sub-band.
pub fn sample_training_pairs(
    model: &AudioMappingModel,
    n: usize,
    image: ImageRect,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = &model.subbands()[0];
    let priors: Vec<f64> = first.experts().iter().map(|e| e.pi()).collect();
    let pick = WeightedIndex::new(&priors).map_err(|e| Error::Input(format!("expert priors: {e}")))?;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let e = &first.experts()[pick.sample(&mut rng)];
        let chol = e
            .omega()
            .cholesky()
            .ok_or_else(|| Error::numeric("region covariance", "not SPD"))?;
        let z = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let x = e.nu() + chol.l() * z;
        if !image.contains(&x) {
            continue;
        }
        let g = model
            .subbands()
            .iter()
            .map(|band| sample_feature(band, &x, 1.0, &mut rng))
            .collect();
        out.push(TrainingPair { x, g });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_deterministic() {
        let params = ReferenceMappingSpec::default();
        let a = reference_mapping(&params).unwrap().to_json();
        let b = reference_mapping(&params).unwrap().to_json();
        assert_eq!(a, b);
        let c = reference_mapping(&ReferenceMappingSpec { seed: 1, ..params }).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn pairs_stay_inside_image() {
        let params = ReferenceMappingSpec {
            n_subbands: 2,
            j: 1,
            ..ReferenceMappingSpec::default()
        };
        let model = reference_mapping(&params).unwrap();
        let pairs = sample_training_pairs(&model, 500, params.image, 3).unwrap();
        assert_eq!(pairs.len(), 500);
        assert!(pairs.iter().all(|p| params.image.contains(&p.x) && p.g.len() == 2));
    }
}
