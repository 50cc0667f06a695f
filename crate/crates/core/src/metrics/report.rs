use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::der::{der, majority_correspondence, speakers, SpeechScore, DEFAULT_COLLAR};
use super::mot::{evaluate_mot, MatchConfig, MotReport};
use super::ospa::{ospa_t, OspaParams, OspaReport};
use super::TrackSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub matching: MatchConfig,
    pub ospa: OspaParams,
    pub collar: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            matching: MatchConfig::default(),
            ospa: OspaParams::default(),
            collar: DEFAULT_COLLAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub mot: MotReport,
    pub ospa: OspaReport,
    /// `None` when the reference has no scored speech.
    pub diarization: Option<SpeechScore>,
}

/// All scores for one sequence. Estimated speakers are renamed to the
/// ground-truth person their track was matched with most often.
pub fn evaluate(gt: &TrackSet, est: &TrackSet, config: &EvalConfig) -> Result<EvalReport> {
    let mot = evaluate_mot(gt, est, &config.matching)?;
    let ospa = ospa_t(gt, est, &config.ospa)?;
    let corr = majority_correspondence(&mot.events);
    let diarization = match der(&speakers(gt, None), &speakers(est, Some(&corr)), config.collar) {
        Ok(s) => Some(s),
        Err(Error::UndefinedScore(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        config: config.clone(),
        mot,
        ospa,
        diarization,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// `t,ospa,fp,fn,ids`, one row per frame.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,ospa,fp,fn,ids\n");
        for (e, o) in self.mot.events.iter().zip(&self.ospa.per_frame) {
            let _ = writeln!(out, "{},{},{},{},{}", e.t, o, e.fp, e.fn_, e.ids);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::TrackEntry;
    use super::*;

    #[test]
    fn perfect_estimate_report() {
        let gt: TrackSet = (0..40)
            .map(|t| {
                vec![
                    TrackEntry::boxed(1, [100.0 + t as f64, 200.0, 80.0, 120.0]).speaking(t >= 10 && t < 30),
                    TrackEntry::boxed(2, [900.0, 200.0, 80.0, 120.0]).speaking(false),
                ]
            })
            .collect();
        let est: TrackSet = gt
            .iter()
            .map(|f| f.iter().map(|e| TrackEntry { id: e.id + 100, ..e.clone() }).collect())
            .collect();
        let r = evaluate(&gt, &est, &EvalConfig::default()).unwrap();
        assert_eq!(r.mot.mota, 100.0);
        assert_eq!(r.ospa.mean, 0.0);
        assert_eq!(r.diarization.as_ref().unwrap().der, 0.0);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 41);
        assert_eq!(csv.lines().nth(1), Some("0,0,0,0,0"));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn silent_reference_has_no_diarization_score() {
        let gt: TrackSet = vec![vec![TrackEntry::boxed(1, [0.0, 0.0, 10.0, 10.0])]];
        let r = evaluate(&gt, &gt, &EvalConfig::default()).unwrap();
        assert!(r.diarization.is_none());
    }
}
