//! Seeded scenario simulator: trajectories, speech scripts and observation
//! streams drawn from the tracker's own observation models.

mod bundle;

use nalgebra::{DVector, Matrix4, Vector2, Vector4, Vector6};
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

pub use bundle::{
    audio_to_json, read_audio, read_gt, read_visual, visual_to_json, GtFrame, GtPerson, Scenario, ScenarioMeta, AUDIO_FILE,
    GT_FILE, META_FILE, VISUAL_FILE,
};

use crate::avmap::synthetic::{reference_mapping, sample_clutter_feature, sample_feature, ReferenceMappingSpec};
use crate::avmap::{doa_point_model, AudioMappingModel};
use crate::error::{Error, Result};
use crate::gaussian::{transition_matrix, ImageRect};
use crate::tracker::{AudioObservation, FrameObservations, VisualObservation, MAX_BOX};

/// Width of the visible strip in partial field of view, pixels.
pub const DEFAULT_STRIP_WIDTH: f64 = 768.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldOfView {
    Full,
    /// Only a centred vertical strip of `strip_width` pixels is seen.
    Partial { strip_width: f64 },
}

impl FieldOfView {
    pub fn sees(&self, image: &ImageRect, x: f64) -> bool {
        match self {
            FieldOfView::Full => true,
            FieldOfView::Partial { strip_width } => (x - image.width / 2.0).abs() <= strip_width / 2.0,
        }
    }
}

/// Standard deviations of the simulated dynamics noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsNoise {
    pub position: f64,
    pub size: f64,
    pub velocity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeechConfig {
    /// Mean speaking segment length, frames.
    pub mean_speech: f64,
    /// Mean silent segment length, frames.
    pub mean_silence: f64,
    pub min_segment: usize,
    /// Chance that a person may start talking over someone else.
    pub overlap_prob: f64,
    /// Persons that speak in every frame they are present.
    pub always_speaking: Vec<usize>,
    /// Persons that never speak.
    pub silent: Vec<usize>,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        SpeechConfig {
            mean_speech: 40.0,
            mean_silence: 80.0,
            min_segment: 5,
            overlap_prob: 0.1,
            always_speaking: Vec::new(),
            silent: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AudioMode {
    LearnedMapping,
    DoaPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub mode: AudioMode,
    /// Reference mapping the features are drawn from (learned-mapping mode).
    pub reference: ReferenceMappingSpec,
    /// DOA noise standard deviation in pixels and DOA slots per frame
    /// (doa-point mode).
    pub sigma_doa: f64,
    pub doa_slots: usize,
    /// Inclusive range of active sub-bands per speech frame (learned-mapping
    /// mode; doa-point mode fills every slot).
    pub active_subbands: [usize; 2],
    /// Probability that an emitted observation is clutter instead of speech.
    pub clutter_rate: f64,
    /// Multiplier on the feature noise.
    pub noise_scale: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            mode: AudioMode::LearnedMapping,
            reference: ReferenceMappingSpec::default(),
            sigma_doa: 30.0,
            doa_slots: 4,
            active_subbands: [6, 12],
            clutter_rate: 0.05,
            noise_scale: 1.0,
        }
    }
}

/// Fixed start for one person, overriding the random draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonScript {
    /// First frame the person is present.
    #[serde(default)]
    pub appear_at: usize,
    /// Initial `(x, y, w, h, vx, vy)`; random when absent.
    #[serde(default)]
    pub state: Option<[f64; 6]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_persons: usize,
    pub n_frames: usize,
    pub image: ImageRect,
    pub dynamics_noise: DynamicsNoise,
    pub detection_prob: f64,
    /// Poisson mean of visual clutter detections per frame.
    pub clutter_rate_visual: f64,
    /// Standard deviations of the box noise `(cx, cy, w, h)`.
    pub visual_noise: [f64; 4],
    pub appearance_dim: usize,
    /// Dirichlet concentration of per-frame appearance around the prototype.
    pub appearance_concentration: f64,
    /// Symmetric Dirichlet parameter of the prototypes.
    pub prototype_alpha: f64,
    pub speech: SpeechConfig,
    pub audio: AudioConfig,
    pub fov: FieldOfView,
    /// Per-person overrides, by index.
    pub persons: Vec<PersonScript>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_persons: 3,
            n_frames: 500,
            image: ImageRect::default(),
            dynamics_noise: DynamicsNoise {
                position: 1.4,
                size: 0.2,
                velocity: 0.1,
            },
            detection_prob: 0.95,
            clutter_rate_visual: 1.0,
            visual_noise: [3.0, 3.0, 2.0, 2.0],
            appearance_dim: 64,
            appearance_concentration: 200.0,
            prototype_alpha: 0.5,
            speech: SpeechConfig::default(),
            audio: AudioConfig::default(),
            fov: FieldOfView::Full,
            persons: Vec::new(),
            seed: 0,
        }
    }
}

fn probability(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in [0, 1], got {p}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        probability("detection_prob", self.detection_prob)?;
        probability("speech.overlap_prob", self.speech.overlap_prob)?;
        probability("audio.clutter_rate", self.audio.clutter_rate)?;
        if !(self.image.width > 0.0 && self.image.height > 0.0) {
            return Err(Error::config("image", "width and height must be > 0"));
        }
        if !(self.clutter_rate_visual >= 0.0) {
            return Err(Error::config("clutter_rate_visual", "must be >= 0"));
        }
        if self.visual_noise.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("visual_noise", "standard deviations must be >= 0"));
        }
        let dn = &self.dynamics_noise;
        if [dn.position, dn.size, dn.velocity].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("dynamics_noise", "standard deviations must be >= 0"));
        }
        if self.appearance_dim == 0 {
            return Err(Error::config("appearance_dim", "must be >= 1"));
        }
        if !(self.appearance_concentration > 0.0) || !(self.prototype_alpha > 0.0) {
            return Err(Error::config("appearance_concentration", "Dirichlet parameters must be > 0"));
        }
        if self.speech.min_segment == 0 || !(self.speech.mean_speech > 0.0) || !(self.speech.mean_silence > 0.0) {
            return Err(Error::config("speech", "segment lengths must be positive"));
        }
        let [lo, hi] = self.audio.active_subbands;
        if lo == 0 || lo > hi {
            return Err(Error::config("audio.active_subbands", "need 1 <= min <= max"));
        }
        if !(self.audio.noise_scale >= 0.0) {
            return Err(Error::config("audio.noise_scale", "must be >= 0"));
        }
        if self.persons.len() > self.n_persons {
            return Err(Error::config("persons", "more scripts than persons"));
        }
        if let FieldOfView::Partial { strip_width } = self.fov {
            if !(strip_width > 0.0 && strip_width <= self.image.width) {
                return Err(Error::config("fov.strip_width", "must lie in (0, image width]"));
            }
        }
        Ok(())
    }

    /// Observation covariance `Φ` of every detection.
    pub fn phi(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from_iterator(self.visual_noise.iter().map(|s| s * s)))
    }

    fn appear_at(&self, p: usize) -> usize {
        self.persons.get(p).map_or(0, |s| s.appear_at)
    }
}

// Independent streams per purpose and frame, so that masking or changing one
// stage never shifts the draws of another.
const TRAJECTORY: u64 = 0x7472_616a;
const SPEECH: u64 = 0x7370_6563;
const VISUAL: u64 = 0x7669_7375;
const AUDIO: u64 = 0x6175_6469;
const APPEARANCE: u64 = 0x6170_7065;

fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.rotate_left(32));
    rng.set_stream(index);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Symmetric or asymmetric Dirichlet draw through Gamma variates.
fn dirichlet(rng: &mut impl Rng, alpha: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = alpha
        .iter()
        .map(|&a| match Gamma::new(a.max(1e-3), 1.0) {
            Ok(g) => g.sample(rng),
            Err(_) => 0.0,
        })
        .collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let d = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / d);
    }
    v
}

/// Uniform draw from the probability simplex.
fn uniform_simplex(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x: f64| x / s).collect()
}

fn reflect(pos: &mut f64, vel: &mut f64, hi: f64) {
    if *pos < 0.0 {
        *pos = -*pos;
        *vel = -*vel;
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
    *pos = pos.clamp(0.0, hi);
}

/// Samples states, speech flags and appearance prototypes.
pub fn generate_trajectories(config: &ScenarioConfig) -> Result<(Vec<GtFrame>, Vec<Vec<f64>>)> {
    config.validate()?;
    let d = transition_matrix();
    let dn = config.dynamics_noise;
    let (w, h) = (config.image.width, config.image.height);
    let mut frames: Vec<GtFrame> = (0..config.n_frames)
        .map(|t| GtFrame { t, persons: Vec::new() })
        .collect();
    let mut prototypes = Vec::with_capacity(config.n_persons);
    for p in 0..config.n_persons {
        let mut rng = stream(config.seed, TRAJECTORY, p as u64);
        let scripted = config.persons.get(p).and_then(|s| s.state);
        let mut s = match scripted {
            Some(a) => Vector6::from_row_slice(&a),
            None => Vector6::new(
                rng.random_range(0.0..w),
                rng.random_range(0.0..h),
                rng.random_range(80.0..140.0),
                rng.random_range(100.0..160.0),
                0.0,
                0.0,
            ),
        };
        let start = config.appear_at(p);
        for (t, frame) in frames.iter_mut().enumerate() {
            if t > start {
                s = d * s;
                s[0] += dn.position * normal(&mut rng);
                s[1] += dn.position * normal(&mut rng);
                s[2] += dn.size * normal(&mut rng);
                s[3] += dn.size * normal(&mut rng);
                s[4] += dn.velocity * normal(&mut rng);
                s[5] += dn.velocity * normal(&mut rng);
                let (mut x, mut vx) = (s[0], s[4]);
                reflect(&mut x, &mut vx, w);
                let (mut y, mut vy) = (s[1], s[5]);
                reflect(&mut y, &mut vy, h);
                s[0] = x;
                s[4] = vx;
                s[1] = y;
                s[5] = vy;
                s[2] = s[2].max(10.0);
                s[3] = s[3].max(10.0);
            }
            if t >= start {
                frame.persons.push(GtPerson {
                    id: p as u64,
                    state: std::array::from_fn(|i| s[i]),
                    speaking: false,
                });
            }
        }
        let mut arng = stream(config.seed, APPEARANCE, p as u64);
        prototypes.push(dirichlet(&mut arng, &vec![config.prototype_alpha; config.appearance_dim]));
    }
    script_speech(config, &mut frames);
    Ok((frames, prototypes))
}

/// Geometric segment length with the given mean, at least `min` frames.
fn segment(rng: &mut impl Rng, mean: f64, min: usize) -> usize {
    let extra_mean = (mean - min as f64).max(0.0);
    if extra_mean == 0.0 {
        return min;
    }
    let p = 1.0 / (extra_mean + 1.0);
    let mut n = 0;
    while !rng.random_bool(p) {
        n += 1;
    }
    min + n
}

/// Alternating speak/silence segments per person. A segment may only start
/// over another speaker with probability `overlap_prob`; otherwise the person
/// waits another minimum segment.
fn script_speech(config: &ScenarioConfig, frames: &mut [GtFrame]) {
    let sc = &config.speech;
    let n_frames = frames.len();
    for p in 0..config.n_persons {
        let mut rng = stream(config.seed, SPEECH, p as u64);
        let start = config.appear_at(p);
        let mut flags = vec![false; n_frames];
        if sc.always_speaking.contains(&p) {
            flags[start.min(n_frames)..].iter_mut().for_each(|f| *f = true);
        } else if !sc.silent.contains(&p) {
            let mut t = start + segment(&mut rng, sc.mean_silence, sc.min_segment) / 2;
            while t < n_frames {
                let busy = frames[t]
                    .persons
                    .iter()
                    .any(|q| q.speaking && (q.id as usize) != p);
                if busy && !rng.random_bool(sc.overlap_prob) {
                    t += sc.min_segment;
                    continue;
                }
                let len = segment(&mut rng, sc.mean_speech, sc.min_segment);
                let end = (t + len).min(n_frames);
                flags[t..end].iter_mut().for_each(|f| *f = true);
                t = end + segment(&mut rng, sc.mean_silence, sc.min_segment);
            }
        }
        for (frame, flag) in frames.iter_mut().zip(flags) {
            if let Some(q) = frame.persons.iter_mut().find(|q| q.id as usize == p) {
                q.speaking = flag;
            }
        }
    }
}

/// Per-frame detections: person boxes with probability `detection_prob`,
/// Poisson clutter, field-of-view masking, then a seeded shuffle.
pub fn render_visual(gt: &[GtFrame], prototypes: &[Vec<f64>], config: &ScenarioConfig) -> Vec<Vec<VisualObservation>> {
    let phi = config.phi();
    let sd = config.visual_noise;
    let poisson = rand_distr::Poisson::new(config.clutter_rate_visual.max(1e-300)).ok();
    gt.iter()
        .map(|frame| {
            let mut rng = stream(config.seed, VISUAL, frame.t as u64);
            let mut out = Vec::new();
            for person in &frame.persons {
                let detected = rng.random_bool(config.detection_prob);
                let noise: [f64; 4] = std::array::from_fn(|i| sd[i] * normal(&mut rng));
                let conc: Vec<f64> = prototypes[person.id as usize]
                    .iter()
                    .map(|h| h * config.appearance_concentration)
                    .collect();
                let u = dirichlet(&mut rng, &conc);
                if detected {
                    let s = person.state;
                    let v = Vector4::new(s[0] + noise[0], s[1] + noise[1], s[2] + noise[2], s[3] + noise[3]);
                    out.push(VisualObservation { v, phi, u });
                }
            }
            let n_clutter = if config.clutter_rate_visual > 0.0 {
                poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize)
            } else {
                0
            };
            for _ in 0..n_clutter {
                let v = Vector4::new(
                    rng.random_range(0.0..config.image.width),
                    rng.random_range(0.0..config.image.height),
                    rng.random_range(0.0..MAX_BOX),
                    rng.random_range(0.0..MAX_BOX),
                );
                let u = uniform_simplex(&mut rng, config.appearance_dim);
                out.push(VisualObservation { v, phi, u });
            }
            out.retain(|o| config.fov.sees(&config.image, o.v[0]));
            out.shuffle(&mut rng);
            out
        })
        .collect()
}

/// Per-frame audio: when somebody speaks, a random set of active sub-bands
/// (all slots in doa-point mode),
/// each carrying a feature of one current speaker or, with probability
/// `clutter_rate`, a uniform draw over the sub-band's feature box.
pub fn render_audio(gt: &[GtFrame], mapping: &AudioMappingModel, config: &ScenarioConfig) -> Result<Vec<Vec<AudioObservation>>> {
    let k_total = mapping.n_subbands();
    let [lo, hi] = match config.audio.mode {
        AudioMode::LearnedMapping => config.audio.active_subbands,
        AudioMode::DoaPoint => [k_total, k_total],
    };
    if lo > k_total {
        return Err(Error::Input(format!(
            "audio.active_subbands minimum {lo} exceeds the mapping's {k_total} sub-bands"
        )));
    }
    let hi = hi.min(k_total);
    let mut out = Vec::with_capacity(gt.len());
    for frame in gt {
        let mut rng = stream(config.seed, AUDIO, frame.t as u64);
        let speakers: Vec<&GtPerson> = frame.persons.iter().filter(|p| p.speaking).collect();
        if speakers.is_empty() {
            out.push(Vec::new());
            continue;
        }
        let kt = rng.random_range(lo..=hi);
        let mut bands: Vec<usize> = sample_indices(&mut rng, k_total, kt).into_vec();
        bands.sort_unstable();
        let mut obs = Vec::with_capacity(kt);
        for k in bands {
            let band = mapping.subband(k).expect("index below K");
            let g: DVector<f64> = if rng.random_bool(config.audio.clutter_rate) {
                sample_clutter_feature(band, &mut rng)
            } else {
                let who = speakers[rng.random_range(0..speakers.len())];
                let x = Vector2::new(who.state[0], who.state[1]);
                match config.audio.mode {
                    AudioMode::LearnedMapping => sample_feature(band, &x, config.audio.noise_scale, &mut rng),
                    AudioMode::DoaPoint => {
                        let sd = config.audio.sigma_doa * config.audio.noise_scale;
                        DVector::from_fn(2, |i, _| x[i] + sd * normal(&mut rng))
                    }
                }
            };
            obs.push(AudioObservation { k, g });
        }
        out.push(obs);
    }
    Ok(out)
}

/// Audio model the scenario's features are drawn from: the reference mapping,
/// or a DOA-point model with `doa_slots` slots.
pub fn scenario_mapping(config: &ScenarioConfig) -> Result<AudioMappingModel> {
    match config.audio.mode {
        AudioMode::LearnedMapping => reference_mapping(&config.audio.reference),
        AudioMode::DoaPoint => doa_point_model(config.audio.sigma_doa.max(1e-6), config.audio.doa_slots, config.image),
    }
}

/// Builds a full scenario against the given audio model.
pub fn simulate(config: &ScenarioConfig, mapping: &AudioMappingModel) -> Result<Scenario> {
    let (gt, prototypes) = generate_trajectories(config)?;
    let visual = render_visual(&gt, &prototypes, config);
    let audio = render_audio(&gt, mapping, config)?;
    Ok(Scenario {
        meta: ScenarioMeta {
            config: config.clone(),
            prototypes,
        },
        gt,
        visual,
        audio,
    })
}

impl Scenario {
    /// Observations of frame `t` in tracker form.
    pub fn frame(&self, t: usize) -> FrameObservations {
        FrameObservations {
            visuals: self.visual[t].clone(),
            audios: self.audio[t].clone(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameObservations> + '_ {
        (0..self.gt.len()).map(|t| self.frame(t))
    }
}

#[cfg(test)]
mod tests;
