use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::hungarian::{assign, assignment_cost};
use super::{TrackEntry, TrackSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OspaParams {
    /// Order `p`.
    pub p: f64,
    /// Cut-off `c`, pixels.
    pub c: f64,
    /// Label mismatch penalty, pixels.
    pub alpha: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        OspaParams {
            p: 1.0,
            c: 100.0,
            alpha: 25.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OspaReport {
    pub params: OspaParams,
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

fn centre_distance(a: &TrackEntry, b: &TrackEntry) -> f64 {
    (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1])
}

/// One-time optimal correspondence of estimated tracks to ground-truth tracks,
/// by the time-summed cut-off distance.
fn align_labels(gt: &TrackSet, est: &TrackSet, c: f64) -> BTreeMap<u64, u64> {
    let gt_ids: Vec<u64> = gt.iter().flatten().map(|e| e.id).collect::<BTreeSet<_>>().into_iter().collect();
    let est_ids: Vec<u64> = est.iter().flatten().map(|e| e.id).collect::<BTreeSet<_>>().into_iter().collect();
    if gt_ids.is_empty() || est_ids.is_empty() {
        return BTreeMap::new();
    }
    let gi: BTreeMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let ei: BTreeMap<u64, usize> = est_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    // Start from "never co-present": every frame where either exists costs c.
    let mut gt_frames = vec![0.0; gt_ids.len()];
    let mut est_frames = vec![0.0; est_ids.len()];
    let mut cost = vec![vec![0.0; est_ids.len()]; gt_ids.len()];
    for (g, e) in gt.iter().zip(est) {
        for x in g {
            gt_frames[gi[&x.id]] += c;
        }
        for y in e {
            est_frames[ei[&y.id]] += c;
        }
        for x in g {
            for y in e {
                // Co-present: replace the two c's with min(c, d).
                cost[gi[&x.id]][ei[&y.id]] += centre_distance(x, y).min(c) - 2.0 * c;
            }
        }
    }
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += gt_frames[i] + est_frames[j];
        }
    }
    assign(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (est_ids[j], gt_ids[i])))
        .collect()
}

/// OSPA distance between two labelled point sets.
fn ospa_frame(gt: &[TrackEntry], est: &[TrackEntry], labels: &BTreeMap<u64, u64>, params: &OspaParams) -> f64 {
    let n = gt.len().max(est.len());
    let m = gt.len().min(est.len());
    if n == 0 {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = gt
        .iter()
        .map(|x| {
            est.iter()
                .map(|y| {
                    let mismatch = if labels.get(&y.id) == Some(&x.id) { 0.0 } else { params.alpha };
                    (centre_distance(x, y) + mismatch).min(params.c).powf(params.p)
                })
                .collect()
        })
        .collect();
    let matched = if m == 0 { 0.0 } else { assignment_cost(&cost, &assign(&cost)) };
    let total = matched + params.c.powf(params.p) * (n - m) as f64;
    (total / n as f64).powf(1.0 / params.p)
}

pub fn ospa_t(gt: &TrackSet, est: &TrackSet, params: &OspaParams) -> Result<OspaReport> {
    if !(params.p >= 1.0 && params.p.is_finite()) {
        return Err(Error::Input(format!("OSPA order p must be >= 1, got {}", params.p)));
    }
    if !(params.c > 0.0 && params.c.is_finite()) || !(params.alpha >= 0.0) {
        return Err(Error::Input("OSPA needs c > 0 and alpha >= 0".into()));
    }
    if gt.len() != est.len() {
        return Err(Error::Input(format!(
            "ground truth has {} frames, estimate {}",
            gt.len(),
            est.len()
        )));
    }
    let labels = align_labels(gt, est, params.c);
    let per_frame: Vec<f64> = gt
        .iter()
        .zip(est)
        .map(|(g, e)| ospa_frame(g, e, &labels, params))
        .collect();
    let mean = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    };
    Ok(OspaReport {
        params: *params,
        per_frame,
        mean,
    })
}
