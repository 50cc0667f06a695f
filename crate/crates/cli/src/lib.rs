//! Pipeline commands behind the `avtrack` binary: train a mapping, simulate
//! a scenario, track it and score the result.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use avtrack::avmap::synthetic::sample_training_pairs;
use avtrack::avmap::{doa_point_model, train_mapping, AudioMappingModel, TrainConfig, TrainingPair};
use avtrack::metrics::{evaluate, trackset_from_gt, trackset_from_records, EvalConfig, EvalReport, PfovGate};
use avtrack::nalgebra::{DVector, Vector2};
use avtrack::sim::{read_audio, read_gt, read_visual, scenario_mapping, simulate, AudioMode, FieldOfView, ScenarioConfig};
use avtrack::tracker::{FrameObservations, FrameRecord, Tracker, TrackerConfig};
use serde::{Deserialize, Serialize};

/// Environment override for the master seed.
pub const SEED_ENV: &str = "VAVIT_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] avtrack::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for bad input or configuration, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use avtrack::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::Input(_) | E::Config { .. } | E::Json(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Core(avtrack::Error::Input(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSetup {
    /// Pairs drawn from the reference mapping by `run-e2e`.
    pub n_pairs: usize,
    pub em: TrainConfig,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        TrainingSetup {
            n_pairs: 3000,
            em: TrainConfig::default(),
        }
    }
}

/// One JSON document configuring every stage of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; overrides `scenario.seed` and `training.em.seed`.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub tracker: TrackerConfig,
    pub training: TrainingSetup,
    pub evaluation: EvalConfig,
    /// In the blind strips of a partial field of view, estimates are matched
    /// by centre distance within twice this radius.
    pub pfov_point_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenario: ScenarioConfig::default(),
            tracker: TrackerConfig::default(),
            training: TrainingSetup::default(),
            evaluation: EvalConfig::default(),
            pfov_point_radius: 50.0,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub doa_mode: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| input(format!("config: {e}")))
    }

    /// Reads `path`, or the defaults when `None`, then applies the seed
    /// (`--seed`, else `VAVIT_SEED`, else the file) and derived settings.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| input(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| input(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| input(format!("{SEED_ENV} is not an unsigned integer: {v:?}")))?),
            Err(_) => None,
        };
        if let Some(s) = overrides.seed.or(env_seed) {
            cfg.seed = s;
        }
        if overrides.doa_mode {
            cfg.scenario.audio.mode = AudioMode::DoaPoint;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    fn resolve(&mut self) -> CliResult<()> {
        self.scenario.seed = self.seed;
        self.training.em.seed = self.seed;
        if self.tracker.image != self.scenario.image {
            return Err(avtrack::Error::Config {
                field: "tracker.image".into(),
                reason: "must equal scenario.image".into(),
            }
            .into());
        }
        if let (FieldOfView::Partial { strip_width }, None) = (self.scenario.fov, self.evaluation.matching.pfov) {
            self.evaluation.matching.pfov =
                Some(PfovGate::centered(self.scenario.image.width, strip_width, self.pfov_point_radius));
        }
        self.scenario.validate()?;
        self.tracker.validate()?;
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sidecar written next to every output: the resolved config and seed.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub seed: u64,
    pub config: RunConfig,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_meta(path: &Path, cfg: &RunConfig) -> CliResult<()> {
    let meta = RunMeta {
        seed: cfg.seed,
        config: cfg.clone(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(sidecar(path), text)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    x: [f64; 2],
    g: Vec<Vec<f64>>,
}

pub fn write_pairs(path: &Path, pairs: &[TrainingPair]) -> CliResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        let line = PairLine {
            x: [p.x.x, p.x.y],
            g: p.g.iter().map(|g| g.iter().copied().collect()).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> CliResult<Vec<TrainingPair>> {
    let file = fs::File::open(path).map_err(|e| input(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PairLine = serde_json::from_str(&line).map_err(|e| input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(TrainingPair {
            x: Vector2::new(p.x[0], p.x[1]),
            g: p.g.into_iter().map(DVector::from_vec).collect(),
        });
    }
    if out.is_empty() {
        return Err(input(format!("{}: no training pairs", path.display())));
    }
    Ok(out)
}

/// Per-sub-band outcome of training.
#[derive(Clone, Debug, Serialize)]
pub struct BandSummary {
    pub k: usize,
    pub log_likelihood: f64,
    /// Root mean squared error of the mapping's mean prediction on the pairs.
    pub residual_rms: f64,
}

pub fn cmd_train_mapping(cfg: &RunConfig, pairs_path: &Path, out: &Path) -> CliResult<Vec<BandSummary>> {
    let pairs = read_pairs(pairs_path)?;
    let em = TrainConfig {
        n_subbands: pairs[0].g.len(),
        ..cfg.training.em.clone()
    };
    let (model, report) = train_mapping(&pairs, &em)?;
    model.save(out)?;
    write_meta(out, cfg)?;
    let summary = (0..model.n_subbands())
        .map(|k| {
            let band = model.subband(k).expect("k < K");
            let se: f64 = pairs.iter().map(|p| (band.predict(&p.x) - &p.g[k]).norm_squared()).sum();
            BandSummary {
                k,
                log_likelihood: report.subbands[k].log_likelihood.last().copied().unwrap_or(f64::NAN),
                residual_rms: (se / (pairs.len() * band.feature_dim()) as f64).sqrt(),
            }
        })
        .collect();
    Ok(summary)
}

/// Writes the scenario bundle, and training pairs from the reference mapping
/// when `pairs` is given.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path, pairs: Option<&Path>) -> CliResult<()> {
    let mapping = scenario_mapping(&cfg.scenario)?;
    let scenario = simulate(&cfg.scenario, &mapping)?;
    scenario.write(out_dir)?;
    if let Some(p) = pairs {
        let drawn = sample_training_pairs(&mapping, cfg.training.n_pairs, cfg.scenario.image, pairs_seed(cfg.seed))?;
        write_pairs(p, &drawn)?;
    }
    Ok(())
}

fn pairs_seed(seed: u64) -> u64 {
    seed ^ 0x7061_6972_7300
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Modality {
    #[default]
    AudioVisual,
    VisualOnly,
    AudioOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackSummary {
    pub frames: usize,
    pub births: usize,
    pub mean_frame_seconds: f64,
}

/// The audio model used for tracking: a DOA-point model in doa mode, the
/// model file otherwise.
pub fn tracking_mapping(cfg: &RunConfig, model: Option<&Path>, modality: Modality) -> CliResult<Option<AudioMappingModel>> {
    if modality == Modality::VisualOnly {
        return Ok(None);
    }
    if cfg.scenario.audio.mode == AudioMode::DoaPoint {
        let a = &cfg.scenario.audio;
        return Ok(Some(doa_point_model(a.sigma_doa.max(1e-3), a.doa_slots, cfg.scenario.image)?));
    }
    match model {
        Some(p) => {
            if !p.exists() {
                return Err(input(format!("model file {} does not exist", p.display())));
            }
            Ok(Some(AudioMappingModel::load(p)?))
        }
        None => Ok(None),
    }
}

/// Runs the tracker over per-frame observations and writes one record per line.
pub fn track_frames(
    cfg: &RunConfig,
    frames: Vec<FrameObservations>,
    mapping: Option<AudioMappingModel>,
    out: &Path,
) -> CliResult<(Vec<FrameRecord>, TrackSummary)> {
    if let Some(m) = &mapping {
        for (t, f) in frames.iter().enumerate() {
            for a in &f.audios {
                let Some(band) = m.subband(a.k) else {
                    return Err(input(format!(
                        "frame {t}: sub-band {} but the model has K = {}",
                        a.k,
                        m.n_subbands()
                    )));
                };
                if a.g.len() != band.feature_dim() {
                    return Err(input(format!(
                        "frame {t}: feature of length {} in sub-band {}, model expects {}",
                        a.g.len(),
                        a.k,
                        band.feature_dim()
                    )));
                }
            }
        }
    } else if frames.iter().any(|f| !f.audios.is_empty()) {
        return Err(input("audio observations present but no audio model given (use --model or --visual-only)"));
    }
    let mut tracker = Tracker::new(cfg.tracker.clone(), mapping)?;
    let mut records = Vec::with_capacity(frames.len());
    let mut births = 0;
    let start = Instant::now();
    let mut w = BufWriter::new(fs::File::create(out)?);
    for f in &frames {
        let o = tracker.step(f)?;
        births += o.births.len();
        let rec = o.to_record();
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
        records.push(rec);
    }
    w.flush()?;
    let elapsed = start.elapsed().as_secs_f64();
    write_meta(out, cfg)?;
    let n = frames.len();
    Ok((
        records,
        TrackSummary {
            frames: n,
            births,
            mean_frame_seconds: if n > 0 { elapsed / n as f64 } else { 0.0 },
        },
    ))
}

pub fn load_observations(scenario_dir: &Path, modality: Modality) -> CliResult<Vec<FrameObservations>> {
    let visual = read_visual(&scenario_dir.join(avtrack::sim::VISUAL_FILE))?;
    let audio = read_audio(&scenario_dir.join(avtrack::sim::AUDIO_FILE))?;
    if visual.len() != audio.len() {
        return Err(input(format!(
            "{}: visual has {} frames, audio {}",
            scenario_dir.display(),
            visual.len(),
            audio.len()
        )));
    }
    Ok(visual
        .into_iter()
        .zip(audio)
        .map(|(v, a)| FrameObservations {
            visuals: if modality == Modality::AudioOnly { Vec::new() } else { v },
            audios: if modality == Modality::VisualOnly { Vec::new() } else { a },
        })
        .collect())
}

pub fn cmd_track(
    cfg: &RunConfig,
    scenario_dir: &Path,
    model: Option<&Path>,
    out: &Path,
    modality: Modality,
) -> CliResult<TrackSummary> {
    let frames = load_observations(scenario_dir, modality)?;
    let mapping = tracking_mapping(cfg, model, modality)?;
    Ok(track_frames(cfg, frames, mapping, out)?.1)
}

pub fn read_records(path: &Path) -> CliResult<Vec<FrameRecord>> {
    let file = fs::File::open(path).map_err(|e| input(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: FrameRecord = serde_json::from_str(&line).map_err(|e| input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if r.t != out.len() {
            return Err(input(format!("{}:{}: expected t = {}, found {}", path.display(), i + 1, out.len(), r.t)));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub seed: u64,
    pub config: RunConfig,
    pub report: EvalReport,
}

fn csv_path(report: &Path) -> PathBuf {
    report.with_extension("csv")
}

pub fn evaluate_records(cfg: &RunConfig, gt_dir: &Path, records: &[FrameRecord], report_path: &Path) -> CliResult<EvalReport> {
    let gt = read_gt(&gt_dir.join(avtrack::sim::GT_FILE))?;
    if gt.len() != records.len() {
        return Err(input(format!(
            "ground truth has {} frames, tracks {}",
            gt.len(),
            records.len()
        )));
    }
    let report = evaluate(&trackset_from_gt(&gt), &trackset_from_records(records), &cfg.evaluation)?;
    let file = ReportFile {
        seed: cfg.seed,
        config: cfg.clone(),
        report,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(report_path, text)?;
    fs::write(csv_path(report_path), file.report.to_csv())?;
    Ok(file.report)
}

pub fn cmd_evaluate(cfg: &RunConfig, gt_dir: &Path, tracks: &Path, report: &Path) -> CliResult<EvalReport> {
    let records = read_records(tracks)?;
    evaluate_records(cfg, gt_dir, &records, report)
}

/// File names inside a `run-e2e` output directory.
pub mod e2e_files {
    pub const SCENARIO_DIR: &str = "scenario";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const MODEL: &str = "model.json";
    pub const TRACKS: &str = "tracks.jsonl";
    pub const REPORT: &str = "report.json";
}

/// Simulate, train (learned-mapping mode), track and evaluate into `out_dir`.
pub fn cmd_run_e2e(cfg: &RunConfig, out_dir: &Path, modality: Modality) -> CliResult<(EvalReport, TrackSummary)> {
    use e2e_files::*;
    fs::create_dir_all(out_dir)?;
    let scen_dir = out_dir.join(SCENARIO_DIR);
    let learned = cfg.scenario.audio.mode == AudioMode::LearnedMapping && modality != Modality::VisualOnly;
    cmd_simulate(cfg, &scen_dir, learned.then(|| out_dir.join(PAIRS)).as_deref())?;
    let model_path = out_dir.join(MODEL);
    if learned {
        cmd_train_mapping(cfg, &out_dir.join(PAIRS), &model_path)?;
    }
    let frames = load_observations(&scen_dir, modality)?;
    let mapping = tracking_mapping(cfg, learned.then_some(model_path.as_path()), modality)?;
    let (records, summary) = track_frames(cfg, frames, mapping, &out_dir.join(TRACKS))?;
    let report = evaluate_records(cfg, &scen_dir, &records, &out_dir.join(REPORT))?;
    Ok((report, summary))
}

/// One summary line: MOTA, OSPA-T mean and DER.
pub fn summary_line(r: &EvalReport) -> String {
    let der = r.diarization.as_ref().map_or("n/a".to_string(), |d| format!("{:.2}", d.der));
    format!(
        "MOTA {:.2}  OSPA-T {:.2}  DER {}  (FP {} FN {} IDs {} MT {:.1}% ML {:.1}%)",
        r.mot.mota, r.ospa.mean, der, r.mot.fp, r.mot.fn_, r.mot.ids, r.mot.mt, r.mot.ml
    )
}
