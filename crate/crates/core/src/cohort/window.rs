use serde::{Deserialize, Serialize};

use super::schema::Feature;
use super::ResidentRecord;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_DAYS: i64 = 31;

/// A raw categorical answer recorded some days after admission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedObservation {
    pub feature: String,
    pub answer: String,
    pub days_since_admission: i64,
}

impl TimedObservation {
    pub fn new(feature: &str, answer: &str, days_since_admission: i64) -> Self {
        TimedObservation {
            feature: feature.to_string(),
            answer: answer.to_string(),
            days_since_admission,
        }
    }
}

/// Keeps, per feature, the earliest observation made within `window_days`
/// of admission and encodes it. Features without a qualifying observation
/// stay missing.
///
/// Same-day duplicates are resolved by the lexicographically smallest
/// normalised answer text so the result does not depend on input order.
pub fn select_earliest_within_window(
    observations: &[TimedObservation],
    window_days: i64,
) -> Result<ResidentRecord> {
    if window_days <= 0 {
        return Err(Error::invalid("window_days must be positive"));
    }
    let mut best: [Option<(i64, String, &str)>; 18] = Default::default();
    for obs in observations {
        let feature: Feature = obs.feature.parse()?;
        if obs.days_since_admission < 0 {
            return Err(Error::NegativeObservationDay {
                feature: feature.name().to_string(),
                days: obs.days_since_admission,
            });
        }
        if obs.days_since_admission > window_days {
            continue;
        }
        let key = obs.answer.trim().to_lowercase();
        let slot = &mut best[feature.index()];
        let replace = match slot {
            None => true,
            Some((day, text, _)) => (obs.days_since_admission, &key) < (*day, &*text),
        };
        if replace {
            *slot = Some((obs.days_since_admission, key, obs.answer.as_str()));
        }
    }
    let mut record = ResidentRecord::empty();
    for f in Feature::ALL {
        if let Some((_, _, answer)) = &best[f.index()] {
            record.set(f, f.encode_answer(answer)?)?;
        }
    }
    Ok(record)
}
