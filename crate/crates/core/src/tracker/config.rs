use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{DynamicsModel, ImageRect};

/// Largest box side assumed by the visual clutter density, in pixels.
pub const MAX_BOX: f64 = 400.0;

/// When the dynamics covariance `Λ` is re-estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MStepMode {
    #[default]
    EveryIteration,
    OncePerFrame,
    /// `Λ` stays at its initial value.
    Disabled,
}

/// Per-block variances of a diagonal dynamics covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockVariances {
    pub position: f64,
    pub size: f64,
    pub velocity: f64,
}

impl BlockVariances {
    pub fn dynamics(&self) -> DynamicsModel {
        DynamicsModel::diagonal(self.position, self.size, self.velocity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// VEM rounds per frame.
    pub n_iter: usize,
    /// Visual clutter support; `None` means `width * height * MAX_BOX²`.
    pub vol_v: Option<f64>,
    /// Audio clutter support; `None` means the mapping's per-band feature box.
    pub vol_g: Option<f64>,
    pub vol_h: f64,
    /// Diarization threshold on the mean audio responsibility.
    pub gamma: f64,
    /// `B`: a birth needs `B + 1` consecutive clutter detections.
    pub birth_window: usize,
    /// `τ`, in log-likelihood units.
    pub birth_threshold: f64,
    /// Linking gate for birth sequences, pixels per frame.
    pub birth_gate: f64,
    /// Prior covariance scale of the birth likelihood filter.
    pub birth_prior_cov_scale: f64,
    pub lambda_app: f64,
    pub appearance_rate: f64,
    /// Covariance scale of fixed-N placeholders.
    pub init_cov_scale: f64,
    /// Number of placeholder tracks created at init.
    pub fixed_n: usize,
    pub image: ImageRect,
    /// Initial `Λ` of newborn tracks, also the dynamics of the birth filter.
    pub initial_dynamics: BlockVariances,
    pub m_step: MStepMode,
    /// Weight `κ` of `initial_dynamics` in the M-step:
    /// `Λ = (κ Λ_0 + Λ_M) / (κ + 1)`. Zero keeps the raw single-frame estimate.
    pub m_step_shrinkage: f64,
    /// When false, detections cannot be explained as clutter.
    pub clutter_hypothesis: bool,
    pub spd_eps: f64,
    pub dormant_support: f64,
    pub dormant_frames: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            n_iter: 5,
            vol_v: None,
            vol_g: None,
            vol_h: 1.0,
            gamma: 0.1,
            birth_window: 3,
            birth_threshold: -100.0,
            birth_gate: 50.0,
            birth_prior_cov_scale: 1e4,
            lambda_app: 10.0,
            appearance_rate: 0.1,
            init_cov_scale: 1e6,
            fixed_n: 0,
            image: ImageRect::default(),
            initial_dynamics: BlockVariances {
                position: 2.0,
                size: 0.05,
                velocity: 0.25,
            },
            m_step: MStepMode::EveryIteration,
            m_step_shrinkage: 10.0,
            clutter_hypothesis: true,
            spd_eps: 1e-6,
            dormant_support: 0.1,
            dormant_frames: 25,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be a positive finite number, got {v}")))
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::config("n_iter", "must be >= 1"));
        }
        if let Some(v) = self.vol_v {
            positive("vol_v", v)?;
        }
        if let Some(v) = self.vol_g {
            positive("vol_g", v)?;
        }
        positive("vol_h", self.vol_h)?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if self.birth_window == 0 {
            return Err(Error::config("birth_window", "must be >= 1"));
        }
        if !self.birth_threshold.is_finite() {
            return Err(Error::config("birth_threshold", "must be finite"));
        }
        positive("birth_gate", self.birth_gate)?;
        positive("birth_prior_cov_scale", self.birth_prior_cov_scale)?;
        positive("lambda_app", self.lambda_app)?;
        if !(0.0..=1.0).contains(&self.appearance_rate) {
            return Err(Error::config("appearance_rate", "must lie in [0, 1]"));
        }
        positive("init_cov_scale", self.init_cov_scale)?;
        positive("image.width", self.image.width)?;
        positive("image.height", self.image.height)?;
        positive("initial_dynamics.position", self.initial_dynamics.position)?;
        positive("initial_dynamics.size", self.initial_dynamics.size)?;
        positive("initial_dynamics.velocity", self.initial_dynamics.velocity)?;
        if !(self.m_step_shrinkage >= 0.0 && self.m_step_shrinkage.is_finite()) {
            return Err(Error::config("m_step_shrinkage", "must be a finite number >= 0"));
        }
        positive("spd_eps", self.spd_eps)?;
        positive("dormant_support", self.dormant_support)?;
        if self.dormant_frames == 0 {
            return Err(Error::config("dormant_frames", "must be >= 1"));
        }
        Ok(())
    }

    pub fn resolved_vol_v(&self) -> f64 {
        self.vol_v.unwrap_or(self.image.area() * MAX_BOX * MAX_BOX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_volumes_follow_image() {
        let c = TrackerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.resolved_vol_v(), 1920.0 * 1200.0 * 160000.0);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = TrackerConfig { gamma: 1.0, ..TrackerConfig::default() };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "gamma"),
            other => panic!("{other:?}"),
        }
        let bad = TrackerConfig { n_iter: 0, ..TrackerConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "n_iter"));
    }

    #[test]
    fn json_rejects_unknown_keys() {
        assert!(serde_json::from_str::<TrackerConfig>(r#"{"n_iter": 3, "bogus": 1}"#).is_err());
        let c: TrackerConfig = serde_json::from_str(r#"{"m_step": "once-per-frame"}"#).unwrap();
        assert_eq!(c.m_step, MStepMode::OncePerFrame);
    }
}
