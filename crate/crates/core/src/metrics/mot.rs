use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::hungarian::assign;
use super::{TrackEntry, TrackSet};
use crate::error::{Error, Result};

/// Pairing rule between a ground-truth and an estimated target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gate {
    /// Minimum intersection over union.
    Iou(f64),
    /// Maximum centre distance, pixels.
    Distance(f64),
}

impl Gate {
    /// Assignment cost in `[0, 1]` when the pair passes the gate.
    fn cost(&self, gt: &TrackEntry, est: &TrackEntry) -> Option<f64> {
        match *self {
            Gate::Iou(thr) => {
                let iou = gt.iou(est);
                (iou >= thr).then_some(1.0 - iou)
            }
            Gate::Distance(r) => {
                let d = gt.distance(est);
                (d <= r).then_some(d / r)
            }
        }
    }
}

/// Blind strips of a partial field of view: ground truth whose centre lies
/// outside `[visible_lo, visible_hi]` is matched by distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfovGate {
    pub visible_lo: f64,
    pub visible_hi: f64,
    pub blind_radius: f64,
}

impl PfovGate {
    /// Centred strip; the blind gate is twice `point_radius`.
    pub fn centered(image_width: f64, strip_width: f64, point_radius: f64) -> Self {
        PfovGate {
            visible_lo: (image_width - strip_width) / 2.0,
            visible_hi: (image_width + strip_width) / 2.0,
            blind_radius: 2.0 * point_radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    pub gate: Gate,
    #[serde(default)]
    pub pfov: Option<PfovGate>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            gate: Gate::Iou(0.1),
            pfov: None,
        }
    }
}

impl MatchConfig {
    fn cost(&self, gt: &TrackEntry, est: &TrackEntry) -> Option<f64> {
        match self.pfov {
            Some(p) if gt.center[0] < p.visible_lo || gt.center[0] > p.visible_hi => {
                Gate::Distance(p.blind_radius).cost(gt, est)
            }
            _ => self.gate.cost(gt, est),
        }
    }
}

/// Correspondences carried from frame to frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchState {
    /// Matches of the previous frame, gt id → est id.
    pub previous: BTreeMap<u64, u64>,
    /// Most recent partner of every gt id ever matched.
    pub last_partner: BTreeMap<u64, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameEvents {
    pub t: usize,
    pub gt: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    /// `(gt id, est id)` pairs.
    pub matches: Vec<(u64, u64)>,
    pub gt_ids: Vec<u64>,
}

/// One CLEAR-MOT matching step. Matches of the previous frame are kept while
/// they pass the gate; the rest are paired by minimum-cost assignment.
pub fn match_frame(t: usize, gt: &[TrackEntry], est: &[TrackEntry], config: &MatchConfig, state: &mut MatchState) -> FrameEvents {
    let mut matches: Vec<(usize, usize)> = Vec::new();
    let mut gt_used = vec![false; gt.len()];
    let mut est_used = vec![false; est.len()];
    for (gi, g) in gt.iter().enumerate() {
        let Some(&eid) = state.previous.get(&g.id) else {
            continue;
        };
        if let Some(ei) = est.iter().position(|e| e.id == eid) {
            if !est_used[ei] && config.cost(g, &est[ei]).is_some() {
                gt_used[gi] = true;
                est_used[ei] = true;
                matches.push((gi, ei));
            }
        }
    }

    let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let free_est: Vec<usize> = (0..est.len()).filter(|&j| !est_used[j]).collect();
    if !free_gt.is_empty() && !free_est.is_empty() {
        // Gated-out pairs cost more than any set of feasible pairs together,
        // so the assignment maximizes the number of feasible matches first.
        let forbidden = 2.0 * (free_gt.len().max(free_est.len()) as f64 + 1.0);
        let cost: Vec<Vec<f64>> = free_gt
            .iter()
            .map(|&gi| {
                free_est
                    .iter()
                    .map(|&ei| config.cost(&gt[gi], &est[ei]).unwrap_or(forbidden))
                    .collect()
            })
            .collect();
        for (r, c) in assign(&cost).into_iter().enumerate() {
            if let Some(c) = c {
                if cost[r][c] < forbidden {
                    matches.push((free_gt[r], free_est[c]));
                }
            }
        }
    }

    let mut ids = 0;
    let mut pairs = Vec::with_capacity(matches.len());
    state.previous.clear();
    for &(gi, ei) in &matches {
        let (g, e) = (gt[gi].id, est[ei].id);
        if state.last_partner.get(&g).is_some_and(|&p| p != e) {
            ids += 1;
        }
        state.last_partner.insert(g, e);
        state.previous.insert(g, e);
        pairs.push((g, e));
    }
    pairs.sort_unstable();
    FrameEvents {
        t,
        gt: gt.len(),
        fp: est.len() - matches.len(),
        fn_: gt.len() - matches.len(),
        ids,
        matches: pairs,
        gt_ids: gt.iter().map(|g| g.id).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub gt: usize,
    /// Percent of ground-truth trajectories matched in more than 80% of their frames.
    pub mt: f64,
    /// Percent matched in less than 20% of their frames.
    pub ml: f64,
    pub events: Vec<FrameEvents>,
}

/// `100 (1 - (FP + FN + IDs) / GT)`.
pub fn mota_value(fp: usize, fn_: usize, ids: usize, gt: usize) -> f64 {
    100.0 * (1.0 - (fp + fn_ + ids) as f64 / gt as f64)
}

pub fn mota(events: &[FrameEvents]) -> Result<MotReport> {
    let (mut fp, mut fn_, mut ids, mut gt) = (0, 0, 0, 0);
    let mut present: BTreeMap<u64, usize> = BTreeMap::new();
    let mut covered: BTreeMap<u64, usize> = BTreeMap::new();
    for e in events {
        fp += e.fp;
        fn_ += e.fn_;
        ids += e.ids;
        gt += e.gt;
        for id in &e.gt_ids {
            *present.entry(*id).or_default() += 1;
        }
        let matched: BTreeSet<u64> = e.matches.iter().map(|m| m.0).collect();
        for id in matched {
            *covered.entry(id).or_default() += 1;
        }
    }
    if gt == 0 {
        return Err(Error::UndefinedScore("MOTA needs at least one ground-truth target".into()));
    }
    let n = present.len() as f64;
    let (mut mt, mut ml) = (0usize, 0usize);
    for (id, &frames) in &present {
        let ratio = covered.get(id).copied().unwrap_or(0) as f64 / frames as f64;
        if ratio > 0.8 {
            mt += 1;
        } else if ratio < 0.2 {
            ml += 1;
        }
    }
    Ok(MotReport {
        mota: mota_value(fp, fn_, ids, gt),
        fp,
        fn_,
        ids,
        gt,
        mt: 100.0 * mt as f64 / n,
        ml: 100.0 * ml as f64 / n,
        events: events.to_vec(),
    })
}

/// Runs [`match_frame`] over aligned sequences and aggregates with [`mota`].
pub fn evaluate_mot(gt: &TrackSet, est: &TrackSet, config: &MatchConfig) -> Result<MotReport> {
    if gt.len() != est.len() {
        return Err(Error::Input(format!(
            "ground truth has {} frames, estimate {}",
            gt.len(),
            est.len()
        )));
    }
    let mut state = MatchState::default();
    let events: Vec<FrameEvents> = gt
        .iter()
        .zip(est)
        .enumerate()
        .map(|(t, (g, e))| match_frame(t, g, e, config, &mut state))
        .collect();
    mota(&events)
}
