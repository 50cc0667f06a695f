use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{FrameEvents, TrackSet};
use crate::error::{Error, Result};

/// Frames excluded on each side of a reference segment boundary (0.25 s at 25 FPS).
pub const DEFAULT_COLLAR: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechScore {
    /// Percent of scored reference speech.
    pub der: f64,
    pub false_alarm: usize,
    pub missed: usize,
    pub confusion: usize,
    /// Reference speaker-frames outside the collars.
    pub scored_speech: usize,
    pub collar: usize,
}

/// For each estimated id, the ground-truth id it was matched with most often.
pub fn majority_correspondence(events: &[FrameEvents]) -> BTreeMap<u64, u64> {
    let mut counts: BTreeMap<u64, BTreeMap<u64, usize>> = BTreeMap::new();
    for e in events {
        for &(g, s) in &e.matches {
            *counts.entry(s).or_default().entry(g).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(s, by_gt)| {
            let best = by_gt
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(g, _)| *g)
                .expect("non-empty");
            (s, best)
        })
        .collect()
}

/// Speaking ids per frame; estimated ids are renamed through `correspondence`
/// and unmatched ones get labels that never equal a reference id.
pub fn speakers(set: &TrackSet, correspondence: Option<&BTreeMap<u64, u64>>) -> Vec<BTreeSet<u64>> {
    set.iter()
        .map(|f| {
            f.iter()
                .filter(|e| e.speaking == Some(true))
                .map(|e| match correspondence {
                    None => e.id,
                    Some(c) => c.get(&e.id).copied().unwrap_or(u64::MAX - e.id),
                })
                .collect()
        })
        .collect()
}

/// Frame-level diarization error rate with a collar around every reference
/// speaker's segment starts and ends.
pub fn der(gt: &[BTreeSet<u64>], est: &[BTreeSet<u64>], collar: usize) -> Result<SpeechScore> {
    if gt.len() != est.len() {
        return Err(Error::Input(format!(
            "speech references cover {} frames, estimates {}",
            gt.len(),
            est.len()
        )));
    }
    let n = gt.len();
    let mut excluded = vec![false; n];
    let ids: BTreeSet<u64> = gt.iter().flatten().copied().collect();
    for id in ids {
        for t in 0..=n {
            let before = t > 0 && gt[t - 1].contains(&id);
            let after = t < n && gt[t].contains(&id);
            if before != after {
                // Boundary between frames t-1 and t.
                for e in excluded.iter_mut().take((t + collar).min(n)).skip(t.saturating_sub(collar)) {
                    *e = true;
                }
            }
        }
    }
    let (mut fa, mut miss, mut conf, mut scored) = (0, 0, 0, 0);
    for t in (0..n).filter(|&t| !excluded[t]) {
        let nr = gt[t].len();
        let ns = est[t].len();
        let correct = gt[t].intersection(&est[t]).count();
        fa += ns.saturating_sub(nr);
        miss += nr.saturating_sub(ns);
        conf += nr.min(ns) - correct;
        scored += nr;
    }
    if scored == 0 {
        return Err(Error::UndefinedScore("no reference speech outside the collars".into()));
    }
    Ok(SpeechScore {
        der: 100.0 * (fa + miss + conf) as f64 / scored as f64,
        false_alarm: fa,
        missed: miss,
        confusion: conf,
        scored_speech: scored,
        collar,
    })
}
