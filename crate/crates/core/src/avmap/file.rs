//! JSON model file. Matrices are row-major nested arrays; floats are written
//! in shortest round-trip form, so load followed by save is byte-identical.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{AffineExpert, AudioMappingModel, MappingMode, SubbandMapping};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub mode: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_doa: Option<f64>,
    pub subbands: Vec<SubbandFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubbandFile {
    pub experts: Vec<ExpertFile>,
    /// Lower corner of the clutter feature box.
    pub feature_lo: Vec<f64>,
    pub feature_hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertFile {
    pub pi: f64,
    pub nu: [f64; 2],
    #[serde(rename = "Omega")]
    pub omega: [[f64; 2]; 2],
    #[serde(rename = "L")]
    pub linear: Vec<[f64; 2]>,
    pub l: Vec<f64>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Input(format!("{name}: ragged or mis-sized rows")));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

impl AudioMappingModel {
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            mode: self.mode.as_str().to_string(),
            k: self.n_subbands(),
            j: self.j(),
            r: self.r(),
            sigma_doa: self.sigma_doa,
            subbands: self
                .subbands
                .iter()
                .map(|band| SubbandFile {
                    experts: band
                        .experts
                        .iter()
                        .map(|e| ExpertFile {
                            pi: e.pi,
                            nu: [e.nu.x, e.nu.y],
                            omega: [
                                [e.omega[(0, 0)], e.omega[(0, 1)]],
                                [e.omega[(1, 0)], e.omega[(1, 1)]],
                            ],
                            linear: (0..e.linear.nrows())
                                .map(|i| [e.linear[(i, 0)], e.linear[(i, 1)]])
                                .collect(),
                            l: e.offset.iter().copied().collect(),
                            sigma: rows(&e.sigma),
                        })
                        .collect(),
                    feature_lo: band.feature_lo.iter().copied().collect(),
                    feature_hi: band.feature_hi.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let mode = match file.mode.as_str() {
            "learned-mapping" => MappingMode::LearnedMapping,
            "doa-point" => MappingMode::DoaPoint,
            other => return Err(Error::Input(format!("unknown mapping mode `{other}`"))),
        };
        if file.subbands.len() != file.k {
            return Err(Error::Input(format!(
                "K = {} but {} sub-bands present",
                file.k,
                file.subbands.len()
            )));
        }
        let dim = 2 * file.j;
        let mut bands = Vec::with_capacity(file.k);
        for (kb, band) in file.subbands.iter().enumerate() {
            if band.experts.len() != file.r {
                return Err(Error::Input(format!(
                    "sub-band {kb}: R = {} but {} experts present",
                    file.r,
                    band.experts.len()
                )));
            }
            let experts = band
                .experts
                .iter()
                .map(|e| {
                    if e.linear.len() != dim || e.l.len() != dim {
                        return Err(Error::Input(format!("sub-band {kb}: expert shapes disagree with J")));
                    }
                    let linear = DMatrix::from_row_iterator(dim, 2, e.linear.iter().flat_map(|r| r.iter().copied()));
                    AffineExpert::new(
                        e.pi,
                        Vector2::new(e.nu[0], e.nu[1]),
                        Matrix2::new(e.omega[0][0], e.omega[0][1], e.omega[1][0], e.omega[1][1]),
                        linear,
                        DVector::from_column_slice(&e.l),
                        from_rows("Sigma", &e.sigma, dim)?,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            bands.push(SubbandMapping::new(
                experts,
                DVector::from_column_slice(&band.feature_lo),
                DVector::from_column_slice(&band.feature_hi),
            )?);
        }
        AudioMappingModel::new(mode, bands, file.sigma_doa)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("model file is serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
