//! Evaluation: CLEAR-MOT (MOTA, FP, FN, ID switches, MT/ML), OSPA-T and
//! diarization error rate.

mod der;
pub mod hungarian;
mod mot;
mod ospa;
mod report;

use serde::{Deserialize, Serialize};

pub use der::{der, majority_correspondence, speakers, SpeechScore, DEFAULT_COLLAR};
pub use mot::{evaluate_mot, match_frame, mota, mota_value, FrameEvents, Gate, MatchConfig, MatchState, MotReport, PfovGate};
pub use ospa::{ospa_t, OspaParams, OspaReport};
pub use report::{evaluate, EvalConfig, EvalReport};

use crate::sim::GtFrame;
use crate::tracker::FrameRecord;

/// One labelled target in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub id: u64,
    pub center: [f64; 2],
    /// Box width and height; `None` for point targets.
    pub size: Option<[f64; 2]>,
    pub speaking: Option<bool>,
}

impl TrackEntry {
    pub fn point(id: u64, x: f64, y: f64) -> Self {
        TrackEntry {
            id,
            center: [x, y],
            size: None,
            speaking: None,
        }
    }

    pub fn boxed(id: u64, b: [f64; 4]) -> Self {
        TrackEntry {
            id,
            center: [b[0], b[1]],
            size: Some([b[2], b[3]]),
            speaking: None,
        }
    }

    pub fn speaking(mut self, s: bool) -> Self {
        self.speaking = Some(s);
        self
    }

    fn distance(&self, other: &TrackEntry) -> f64 {
        (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1])
    }

    /// Intersection over union of two `(cx, cy, w, h)` boxes; 0 for points.
    pub fn iou(&self, other: &TrackEntry) -> f64 {
        let (Some(a), Some(b)) = (self.size, other.size) else {
            return 0.0;
        };
        let span = |c0: f64, s0: f64, c1: f64, s1: f64| {
            let lo = (c0 - s0 / 2.0).max(c1 - s1 / 2.0);
            let hi = (c0 + s0 / 2.0).min(c1 + s1 / 2.0);
            (hi - lo).max(0.0)
        };
        let inter = span(self.center[0], a[0], other.center[0], b[0]) * span(self.center[1], a[1], other.center[1], b[1]);
        let union = a[0] * a[1] + b[0] * b[1] - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Per-frame labelled targets.
pub type TrackSet = Vec<Vec<TrackEntry>>;

pub fn trackset_from_gt(gt: &[GtFrame]) -> TrackSet {
    gt.iter()
        .map(|f| {
            f.persons
                .iter()
                .map(|p| {
                    TrackEntry::boxed(p.id, [p.state[0], p.state[1], p.state[2], p.state[3]]).speaking(p.speaking)
                })
                .collect()
        })
        .collect()
}

/// Tracker output as a track set; dormant tracks are left out.
pub fn trackset_from_records(records: &[FrameRecord]) -> TrackSet {
    records
        .iter()
        .map(|r| {
            r.tracks
                .iter()
                .filter(|t| !t.dormant)
                .map(|t| TrackEntry::boxed(t.id, [t.mu[0], t.mu[1], t.mu[2], t.mu[3]]).speaking(t.speaking))
                .collect()
        })
        .collect()
}
