//! Scenario bundle on disk: `gt.jsonl`, `visual.jsonl`, `audio.jsonl` and
//! `scenario.meta.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Matrix4, Vector4};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ScenarioConfig;
use crate::error::{Error, Result};
use crate::tracker::{AudioObservation, VisualObservation};

pub const GT_FILE: &str = "gt.jsonl";
pub const VISUAL_FILE: &str = "visual.jsonl";
pub const AUDIO_FILE: &str = "audio.jsonl";
pub const META_FILE: &str = "scenario.meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtPerson {
    pub id: u64,
    /// `(x, y, w, h, vx, vy)`.
    pub state: [f64; 6],
    pub speaking: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFrame {
    pub t: usize,
    pub persons: Vec<GtPerson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub config: ScenarioConfig,
    /// Appearance prototype of each person.
    pub prototypes: Vec<Vec<f64>>,
}

/// Ground truth plus observation streams, one entry per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    pub gt: Vec<GtFrame>,
    pub visual: Vec<Vec<VisualObservation>>,
    pub audio: Vec<Vec<AudioObservation>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisualRecord {
    v: [f64; 4],
    phi: [[f64; 4]; 4],
    u: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisualLine {
    t: usize,
    detections: Vec<VisualRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AudioRecord {
    k: usize,
    g: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AudioLine {
    t: usize,
    observations: Vec<AudioRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    seed: u64,
    config: ScenarioConfig,
    prototypes: Vec<Vec<f64>>,
}

impl From<&VisualObservation> for VisualRecord {
    fn from(o: &VisualObservation) -> Self {
        VisualRecord {
            v: [o.v[0], o.v[1], o.v[2], o.v[3]],
            phi: std::array::from_fn(|i| std::array::from_fn(|j| o.phi[(i, j)])),
            u: o.u.clone(),
        }
    }
}

impl From<VisualRecord> for VisualObservation {
    fn from(r: VisualRecord) -> Self {
        VisualObservation {
            v: Vector4::from_row_slice(&r.v),
            phi: Matrix4::from_fn(|i, j| r.phi[i][j]),
            u: r.u,
        }
    }
}

pub fn visual_to_json(t: usize, obs: &[VisualObservation]) -> Result<String> {
    Ok(serde_json::to_string(&VisualLine {
        t,
        detections: obs.iter().map(VisualRecord::from).collect(),
    })?)
}

pub fn audio_to_json(t: usize, obs: &[AudioObservation]) -> Result<String> {
    Ok(serde_json::to_string(&AudioLine {
        t,
        observations: obs
            .iter()
            .map(|o| AudioRecord {
                k: o.k,
                g: o.g.iter().copied().collect(),
            })
            .collect(),
    })?)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = Result<String>>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for line in lines {
        w.write_all(line?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a JSONL file, checking that line `i` carries `t = i`.
fn read_lines<T: DeserializeOwned>(path: &Path, t_of: impl Fn(&T) -> usize) -> Result<Vec<T>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if t_of(&rec) != out.len() {
            return Err(Error::Input(format!(
                "{}:{}: expected t = {}, found {}",
                path.display(),
                i + 1,
                out.len(),
                t_of(&rec)
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_visual(path: &Path) -> Result<Vec<Vec<VisualObservation>>> {
    Ok(read_lines(path, |l: &VisualLine| l.t)?
        .into_iter()
        .map(|l| l.detections.into_iter().map(VisualObservation::from).collect())
        .collect())
}

pub fn read_audio(path: &Path) -> Result<Vec<Vec<AudioObservation>>> {
    Ok(read_lines(path, |l: &AudioLine| l.t)?
        .into_iter()
        .map(|l| {
            l.observations
                .into_iter()
                .map(|r| AudioObservation {
                    k: r.k,
                    g: DVector::from_vec(r.g),
                })
                .collect()
        })
        .collect())
}

pub fn read_gt(path: &Path) -> Result<Vec<GtFrame>> {
    read_lines(path, |f: &GtFrame| f.t)
}

impl Scenario {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_lines(&dir.join(GT_FILE), self.gt.iter().map(|f| Ok(serde_json::to_string(f)?)))?;
        write_lines(
            &dir.join(VISUAL_FILE),
            self.visual.iter().enumerate().map(|(t, o)| visual_to_json(t, o)),
        )?;
        write_lines(
            &dir.join(AUDIO_FILE),
            self.audio.iter().enumerate().map(|(t, o)| audio_to_json(t, o)),
        )?;
        let meta = MetaFile {
            seed: self.meta.config.seed,
            config: self.meta.config.clone(),
            prototypes: self.meta.prototypes.clone(),
        };
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(dir.join(META_FILE), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path)
            .map_err(|e| Error::Input(format!("cannot open {}: {e}", meta_path.display())))?;
        let meta: MetaFile = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: {e}", meta_path.display())))?;
        let gt = read_gt(&dir.join(GT_FILE))?;
        let visual = read_visual(&dir.join(VISUAL_FILE))?;
        let audio = read_audio(&dir.join(AUDIO_FILE))?;
        if visual.len() != gt.len() || audio.len() != gt.len() {
            return Err(Error::Input(format!(
                "bundle frame counts disagree: gt {}, visual {}, audio {}",
                gt.len(),
                visual.len(),
                audio.len()
            )));
        }
        Ok(Scenario {
            meta: ScenarioMeta {
                config: meta.config,
                prototypes: meta.prototypes,
            },
            gt,
            visual,
            audio,
        })
    }
}
