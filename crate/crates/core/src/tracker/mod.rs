//! Variational audio-visual tracker.
//!
//! Each frame runs a prediction, `n_iter` rounds of E-Z (visual, audio),
//! E-S and M, then the appearance update, diarization and the birth scan.

mod birth;
mod config;
mod estep;
mod ops;

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, Matrix4, Matrix6, Vector4, Vector6};
use serde::{Deserialize, Serialize};

pub use birth::{
    birth_filter, birth_scan, gaussian_sequence_loglik, sequence_marginal_likelihood, BirthCandidate,
};
pub use config::{BlockVariances, MStepMode, TrackerConfig, MAX_BOX};
pub use estep::{e_step_audio, e_step_state, e_step_visual, naive_position, state_prior, StateUpdate};
pub use ops::{diarize, m_step, speaking_scores, update_appearance};

use crate::avmap::AudioMappingModel;
use crate::error::{Error, Result};
use crate::gaussian::{predict_belief, DynamicsModel, GaussianBelief};

/// A detection: box `v = (cx, cy, w, h)`, its covariance and an appearance histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualObservation {
    pub v: Vector4<f64>,
    pub phi: Matrix4<f64>,
    pub u: Vec<f64>,
}

/// An audio feature `g` observed in sub-band `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioObservation {
    pub k: usize,
    pub g: DVector<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameObservations {
    pub visuals: Vec<VisualObservation>,
    pub audios: Vec<AudioObservation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersonTrack {
    pub id: u64,
    pub belief: GaussianBelief,
    pub appearance: Vec<f64>,
    pub dynamics_cov: Matrix6<f64>,
    pub born_at: usize,
    /// Fixed-N stand-in: held constant and skipped by the E-steps.
    pub placeholder: bool,
    pub dormant: bool,
    low_support: usize,
}

impl PersonTrack {
    pub fn new(id: u64, belief: GaussianBelief, appearance: Vec<f64>, dynamics_cov: Matrix6<f64>, born_at: usize) -> Self {
        PersonTrack {
            id,
            belief,
            appearance,
            dynamics_cov,
            born_at,
            placeholder: false,
            dormant: false,
            low_support: 0,
        }
    }
}

/// Responsibilities of the last VEM round. Column / row 0 is clutter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssignmentPosterior {
    pub alpha: DMatrix<f64>,
    pub beta: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub belief: GaussianBelief,
    pub speaking: bool,
    pub dormant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub t: usize,
    pub tracks: Vec<TrackOutput>,
    /// Columns follow the non-placeholder tracks in `tracks` order.
    pub assignments: AssignmentPosterior,
    pub births: Vec<u64>,
}

/// One line of tracker output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: usize,
    pub tracks: Vec<TrackRecord>,
    pub births: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub id: u64,
    pub mu: [f64; 6],
    pub gamma: [[f64; 6]; 6],
    pub speaking: bool,
    pub dormant: bool,
}

impl TrackRecord {
    pub fn belief(&self) -> GaussianBelief {
        GaussianBelief::new(
            Vector6::from_row_slice(&self.mu),
            Matrix6::from_fn(|i, j| self.gamma[i][j]),
        )
    }
}

impl FrameOutput {
    pub fn to_record(&self) -> FrameRecord {
        FrameRecord {
            t: self.t,
            tracks: self
                .tracks
                .iter()
                .map(|tr| TrackRecord {
                    id: tr.id,
                    mu: std::array::from_fn(|i| tr.belief.mean[i]),
                    gamma: std::array::from_fn(|i| std::array::from_fn(|j| tr.belief.cov[(i, j)])),
                    speaking: tr.speaking,
                    dormant: tr.dormant,
                })
                .collect(),
            births: self.births.clone(),
        }
    }
}

/// Tracker state. Single-writer: `step` takes `&mut self`.
#[derive(Clone, Debug)]
pub struct Tracker {
    config: TrackerConfig,
    mapping: Option<AudioMappingModel>,
    tracks: Vec<PersonTrack>,
    pool: VecDeque<Vec<VisualObservation>>,
    next_id: u64,
    t: usize,
}

impl Tracker {
    /// Empty tracker, plus `fixed_n` placeholders at the image centre.
    pub fn new(config: TrackerConfig, mapping: Option<AudioMappingModel>) -> Result<Self> {
        config.validate()?;
        let center = config.image.center();
        let placeholders = (0..config.fixed_n as u64)
            .map(|id| {
                let mut tr = PersonTrack::new(
                    id,
                    GaussianBelief::new(
                        Vector6::new(center.x, center.y, 0.0, 0.0, 0.0, 0.0),
                        Matrix6::identity() * config.init_cov_scale,
                    ),
                    Vec::new(),
                    config.initial_dynamics.dynamics().process_cov,
                    0,
                );
                tr.placeholder = true;
                tr
            })
            .collect();
        Ok(Tracker {
            next_id: config.fixed_n as u64,
            config,
            mapping,
            tracks: placeholders,
            pool: VecDeque::new(),
            t: 0,
        })
    }

    /// Tracker starting from the given tracks, in the given order.
    pub fn with_tracks(
        config: TrackerConfig,
        mapping: Option<AudioMappingModel>,
        tracks: Vec<PersonTrack>,
    ) -> Result<Self> {
        config.validate()?;
        let mut ids = BTreeSet::new();
        for tr in &tracks {
            if !ids.insert(tr.id) {
                return Err(Error::Input(format!("duplicate track id {}", tr.id)));
            }
            tr.belief.validate()?;
        }
        let next_id = ids.last().map_or(0, |m| m + 1);
        Ok(Tracker {
            config,
            mapping,
            tracks,
            pool: VecDeque::new(),
            next_id,
            t: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[PersonTrack] {
        &self.tracks
    }

    pub fn mapping(&self) -> Option<&AudioMappingModel> {
        self.mapping.as_ref()
    }

    /// Index of the next frame.
    pub fn frame_index(&self) -> usize {
        self.t
    }

    fn validate_frame(&self, frame: &FrameObservations) -> Result<()> {
        let d = self
            .tracks
            .iter()
            .find(|t| !t.placeholder)
            .map(|t| t.appearance.len())
            .or_else(|| frame.visuals.first().map(|o| o.u.len()));
        for (m, o) in frame.visuals.iter().enumerate() {
            if !o.v.iter().chain(o.phi.iter()).chain(&o.u).all(|x| x.is_finite()) {
                return Err(Error::Input(format!("visual observation {m}: non-finite values")));
            }
            if Some(o.u.len()) != d {
                return Err(Error::Input(format!("visual observation {m}: appearance dimension {}", o.u.len())));
            }
        }
        let mut seen = BTreeSet::new();
        for a in &frame.audios {
            if !seen.insert(a.k) {
                return Err(Error::Input(format!("sub-band {} appears twice in one frame", a.k)));
            }
            if !a.g.iter().all(|x| x.is_finite()) {
                return Err(Error::Input(format!("audio observation in sub-band {}: non-finite values", a.k)));
            }
        }
        Ok(())
    }

    /// Processes one frame.
    pub fn step(&mut self, frame: &FrameObservations) -> Result<FrameOutput> {
        self.validate_frame(frame)?;
        let cfg = self.config.clone();
        let mapping = self.mapping.as_ref();
        let active: Vec<usize> = (0..self.tracks.len()).filter(|&i| !self.tracks[i].placeholder).collect();
        let prev: Vec<GaussianBelief> = active.iter().map(|&i| self.tracks[i].belief.clone()).collect();

        let mut live: Vec<PersonTrack> = active.iter().map(|&i| self.tracks[i].clone()).collect();
        for tr in &mut live {
            tr.belief = predict_belief(&tr.belief, &DynamicsModel::new(tr.dynamics_cov))?;
        }

        let lambda0 = cfg.initial_dynamics.dynamics().process_cov;
        let mut alpha = DMatrix::zeros(frame.visuals.len(), live.len() + 1);
        let mut beta = Vec::new();
        for iter in 0..cfg.n_iter {
            alpha = e_step_visual(&live, &frame.visuals, &cfg)?;
            beta = e_step_audio(&live, &frame.audios, mapping, &prev, &cfg)?;
            let priors: Vec<GaussianBelief> = live
                .iter()
                .zip(&prev)
                .map(|(tr, p)| state_prior(p, &tr.dynamics_cov))
                .collect();
            let update = e_step_state(
                live.len(),
                &alpha,
                &beta,
                &frame.visuals,
                &frame.audios,
                mapping,
                &priors,
                cfg.spd_eps,
            )?;
            let run_m = match cfg.m_step {
                MStepMode::EveryIteration => true,
                MStepMode::OncePerFrame => iter + 1 == cfg.n_iter,
                MStepMode::Disabled => false,
            };
            for ((tr, b), p) in live.iter_mut().zip(update.beliefs).zip(&prev) {
                if run_m {
                    let raw = m_step(p, &b, cfg.spd_eps)?;
                    tr.dynamics_cov = (lambda0 * cfg.m_step_shrinkage + raw) / (cfg.m_step_shrinkage + 1.0);
                }
                tr.belief = b;
            }
        }

        let speaking = diarize(&beta, live.len(), cfg.gamma);
        for (i, tr) in live.iter_mut().enumerate() {
            let weights: Vec<f64> = (0..frame.visuals.len()).map(|m| alpha[(m, i + 1)]).collect();
            tr.appearance = update_appearance(&tr.appearance, &weights, &frame.visuals, cfg.appearance_rate);
            let support = weights.iter().sum::<f64>() + beta.iter().map(|b| b.row(i + 1).sum()).sum::<f64>();
            if support < cfg.dormant_support {
                tr.low_support += 1;
            } else {
                tr.low_support = 0;
            }
            tr.dormant = tr.low_support >= cfg.dormant_frames;
        }
        for (&i, tr) in active.iter().zip(live) {
            self.tracks[i] = tr;
        }

        let mut speaking_by_track = vec![false; self.tracks.len()];
        for (&i, s) in active.iter().zip(&speaking) {
            speaking_by_track[i] = *s;
        }

        let clutter: Vec<VisualObservation> = frame
            .visuals
            .iter()
            .enumerate()
            .filter(|(m, _)| (1..alpha.ncols()).all(|n| alpha[(*m, 0)] >= alpha[(*m, n)]))
            .map(|(_, o)| o.clone())
            .collect();
        self.pool.push_back(clutter);
        while self.pool.len() > cfg.birth_window + 1 {
            self.pool.pop_front();
        }
        let births = self.run_births()?;
        for _ in speaking_by_track.len()..self.tracks.len() {
            speaking_by_track.push(false);
        }

        let out = FrameOutput {
            t: self.t,
            tracks: self
                .tracks
                .iter()
                .zip(&speaking_by_track)
                .map(|(tr, &s)| TrackOutput {
                    id: tr.id,
                    belief: tr.belief.clone(),
                    speaking: s,
                    dormant: tr.dormant || tr.placeholder,
                })
                .collect(),
            assignments: AssignmentPosterior { alpha, beta },
            births,
        };
        self.t += 1;
        Ok(out)
    }

    fn run_births(&mut self) -> Result<Vec<u64>> {
        let pool: Vec<Vec<VisualObservation>> = self.pool.iter().cloned().collect();
        let accepted = birth_scan(&pool, &self.config)?;
        let mut consumed: Vec<Vec<usize>> = vec![Vec::new(); pool.len()];
        let mut births = Vec::with_capacity(accepted.len());
        for c in accepted {
            for (f, &j) in c.members.iter().enumerate() {
                consumed[f].push(j);
            }
            let mut track = PersonTrack::new(
                0,
                c.belief,
                c.appearance,
                self.config.initial_dynamics.dynamics().process_cov,
                self.t,
            );
            if let Some(slot) = self.tracks.iter().position(|t| t.placeholder) {
                track.id = self.tracks[slot].id;
                births.push(track.id);
                self.tracks[slot] = track;
            } else {
                track.id = self.next_id;
                self.next_id += 1;
                births.push(track.id);
                self.tracks.push(track);
            }
        }
        for (frame, mut gone) in self.pool.iter_mut().zip(consumed) {
            gone.sort_unstable();
            for j in gone.into_iter().rev() {
                frame.remove(j);
            }
        }
        Ok(births)
    }
}
