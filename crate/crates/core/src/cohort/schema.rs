//! Canonical predictor set, ordinal codes and answer vocabularies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The eighteen admission predictors. Higher codes denote worse function or
/// clinical status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    AgeValue,
    GenderMale,
    FallsHistory,
    ChessScaleScore,
    RxRiskScore,
    SpecificHealthConditions,
    CognitivePerformanceScaleScore,
    DepressionRatingScaleScore,
    WeightLoss,
    PoorEatingOrLackOfAppetite,
    Mobilisation,
    MobilityEquipment,
    Smoking,
    SleepAssist,
    SkinIntegrityScore,
    PressureUlcerRiskScore,
    FaecalIncontinence,
    UrinaryIncontinence,
}

pub const AGE_CODES: [i32; 8] = [67, 72, 77, 82, 87, 92, 97, 100];

/// Diagnosis groups counted by `specific_health_conditions`.
pub const DIAGNOSIS_GROUPS: [&str; 5] = [
    "dementia",
    "heart disease",
    "cancer",
    "diabetes",
    "lung disease",
];

const YES_NO: &[(&str, i32)] = &[("no", 0), ("yes", 1)];

impl Feature {
    pub const ALL: [Feature; 18] = [
        Feature::AgeValue,
        Feature::GenderMale,
        Feature::FallsHistory,
        Feature::ChessScaleScore,
        Feature::RxRiskScore,
        Feature::SpecificHealthConditions,
        Feature::CognitivePerformanceScaleScore,
        Feature::DepressionRatingScaleScore,
        Feature::WeightLoss,
        Feature::PoorEatingOrLackOfAppetite,
        Feature::Mobilisation,
        Feature::MobilityEquipment,
        Feature::Smoking,
        Feature::SleepAssist,
        Feature::SkinIntegrityScore,
        Feature::PressureUlcerRiskScore,
        Feature::FaecalIncontinence,
        Feature::UrinaryIncontinence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::AgeValue => "age_value",
            Feature::GenderMale => "gender_male",
            Feature::FallsHistory => "falls_history",
            Feature::ChessScaleScore => "chess_scale_score",
            Feature::RxRiskScore => "rx_risk_score",
            Feature::SpecificHealthConditions => "specific_health_conditions",
            Feature::CognitivePerformanceScaleScore => "cognitive_performance_scale_score",
            Feature::DepressionRatingScaleScore => "depression_rating_scale_score",
            Feature::WeightLoss => "weight_loss",
            Feature::PoorEatingOrLackOfAppetite => "poor_eating_or_lack_of_appetite",
            Feature::Mobilisation => "mobilisation",
            Feature::MobilityEquipment => "mobility_equipment",
            Feature::Smoking => "smoking",
            Feature::SleepAssist => "sleep_assist",
            Feature::SkinIntegrityScore => "skin_integrity_score",
            Feature::PressureUlcerRiskScore => "pressure_ulcer_risk_score",
            Feature::FaecalIncontinence => "faecal_incontinence",
            Feature::UrinaryIncontinence => "urinary_incontinence",
        }
    }

    /// Assessment question shown to the person entering the record.
    pub fn label(self) -> &'static str {
        match self {
            Feature::AgeValue => "Age (years)",
            Feature::GenderMale => "Gender",
            Feature::FallsHistory => "History of falls",
            Feature::ChessScaleScore => "What was the CHESS scale score?",
            Feature::RxRiskScore => "What was the weighted Rx-Risk scale score?",
            Feature::SpecificHealthConditions => "Was this diagnosis present?",
            Feature::CognitivePerformanceScaleScore => {
                "What was the cognitive performance scale score?"
            }
            Feature::DepressionRatingScaleScore => "What was the depression rating scale score?",
            Feature::WeightLoss => "Has the resident lost weight recently?",
            Feature::PoorEatingOrLackOfAppetite => {
                "Is the resident eating poorly or has a lack of appetite?"
            }
            Feature::Mobilisation => "How does your resident mobilise?",
            Feature::MobilityEquipment => "What equipment does your resident use to mobilise safely?",
            Feature::Smoking => "Has your resident smoked in the past?",
            Feature::SleepAssist => "Does your resident require assistance to settle to bed at night?",
            Feature::SkinIntegrityScore => {
                "Has your resident's skin integrity changed since last assessment?"
            }
            Feature::PressureUlcerRiskScore => "What was the Pressure Ulcer Risk scale?",
            Feature::FaecalIncontinence => "Is the resident incontinent of faeces?",
            Feature::UrinaryIncontinence => "Is the resident incontinent of urine?",
        }
    }

    /// Inclusive ordinal range of the code.
    pub fn range(self) -> (i32, i32) {
        match self {
            Feature::AgeValue => (67, 100),
            Feature::GenderMale => (0, 1),
            Feature::FallsHistory => (0, 3),
            Feature::ChessScaleScore => (0, 5),
            Feature::RxRiskScore => (-3, 23),
            Feature::SpecificHealthConditions => (0, 5),
            Feature::CognitivePerformanceScaleScore => (0, 6),
            Feature::DepressionRatingScaleScore => (0, 3),
            Feature::WeightLoss | Feature::PoorEatingOrLackOfAppetite => (0, 1),
            Feature::Mobilisation => (0, 4),
            Feature::MobilityEquipment => (0, 5),
            Feature::Smoking | Feature::SleepAssist => (0, 1),
            Feature::SkinIntegrityScore => (0, 2),
            Feature::PressureUlcerRiskScore => (0, 4),
            Feature::FaecalIncontinence | Feature::UrinaryIncontinence => (0, 1),
        }
    }

    /// Admissible codes. Every feature is contiguous except age, which
    /// carries the midpoint of its five-year band.
    pub fn levels(self) -> Vec<i32> {
        match self {
            Feature::AgeValue => AGE_CODES.to_vec(),
            _ => {
                let (lo, hi) = self.range();
                (lo..=hi).collect()
            }
        }
    }

    pub fn is_valid_code(self, code: i32) -> bool {
        match self {
            Feature::AgeValue => AGE_CODES.contains(&code),
            _ => {
                let (lo, hi) = self.range();
                (lo..=hi).contains(&code)
            }
        }
    }

    /// Answer texts and their codes. Matching is case-insensitive on trimmed
    /// text. Numeric features (`rx_risk_score`, `specific_health_conditions`)
    /// additionally accept integer text.
    pub fn vocabulary(self) -> &'static [(&'static str, i32)] {
        match self {
            Feature::AgeValue => &[
                ("65-69", 67),
                ("70-74", 72),
                ("75-79", 77),
                ("80-84", 82),
                ("85-89", 87),
                ("90-94", 92),
                ("95-99", 97),
                ("100+", 100),
            ],
            Feature::GenderMale => &[
                ("female", 0),
                ("male", 1),
                ("other/gender diverse", 0),
                ("unknown", 0),
            ],
            Feature::FallsHistory => &[
                ("no history of falls", 0),
                ("no history", 0),
                ("4 or less in last 6 months", 1),
                ("4 or less", 1),
                ("5 or more in last 6 months", 2),
                ("5 or more", 2),
                ("3 or more falls in one month period", 3),
                ("3 or more falls in one month", 3),
            ],
            Feature::ChessScaleScore => &[
                ("no symptoms", 0),
                ("minimal health instability", 1),
                ("low health instability", 2),
                ("moderate health instability", 3),
                ("high health instability", 4),
                ("highest level of instability", 5),
            ],
            Feature::RxRiskScore => &[],
            Feature::SpecificHealthConditions => &[("none", 0)],
            Feature::CognitivePerformanceScaleScore => &[
                ("intact", 0),
                ("borderline intact", 1),
                ("mild impairment", 2),
                ("moderate impairment", 3),
                ("moderate/severe impairment", 4),
                ("severe impairment", 5),
                ("very severe impairment", 6),
            ],
            Feature::DepressionRatingScaleScore => &[
                ("none (0)", 0),
                ("none", 0),
                ("mild (1-2)", 1),
                ("mild", 1),
                ("moderate (3-5)", 2),
                ("moderate", 2),
                ("severe (6-14)", 3),
                ("severe", 3),
            ],
            Feature::WeightLoss => &[("no", 0), ("unsure", 0), ("yes", 1)],
            Feature::PoorEatingOrLackOfAppetite => YES_NO,
            Feature::Mobilisation => &[
                ("independent", 0),
                ("supervision or prompting", 1),
                ("1 person assistance", 2),
                ("2 person assistance", 3),
                ("does not mobilise (bed or chair bound)", 4),
            ],
            Feature::MobilityEquipment => &[
                ("none", 0),
                ("walking stick", 1),
                ("walking frame", 2),
                ("transfer belt or other", 3),
                ("gutter frame", 4),
                ("wheelchair, fallout chair or lazyboy", 5),
            ],
            Feature::Smoking | Feature::SleepAssist => YES_NO,
            Feature::SkinIntegrityScore => &[
                ("improved", 0),
                ("no change", 0),
                ("fluctuated", 1),
                ("declined", 2),
            ],
            Feature::PressureUlcerRiskScore => &[
                ("very low risk", 0),
                ("low risk", 1),
                ("moderate risk", 2),
                ("high risk", 3),
                ("very high risk", 4),
            ],
            Feature::FaecalIncontinence | Feature::UrinaryIncontinence => YES_NO,
        }
    }

    /// Maps an answer to its code. `Ok(None)` means the answer records a
    /// missing value ("Missing" or blank).
    pub fn encode_answer(self, answer: &str) -> Result<Option<i32>, Error> {
        let text = answer.trim().to_lowercase();
        if text.is_empty() || text == "missing" {
            return Ok(None);
        }
        if let Some(&(_, code)) = self.vocabulary().iter().find(|(t, _)| *t == text) {
            return Ok(Some(code));
        }
        let unknown = || Error::UnknownCategory {
            feature: self.name().to_string(),
            text: answer.to_string(),
        };
        match self {
            Feature::RxRiskScore => {
                let code: i32 = text.parse().map_err(|_| unknown())?;
                self.check_code(code).map(Some)
            }
            Feature::SpecificHealthConditions => {
                if let Ok(code) = text.parse::<i32>() {
                    return self.check_code(code).map(Some);
                }
                // a list of diagnosis groups, each counted once
                let mut seen = [false; 5];
                for part in text.split([';', ',']) {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let pos = DIAGNOSIS_GROUPS
                        .iter()
                        .position(|g| *g == part)
                        .ok_or_else(unknown)?;
                    seen[pos] = true;
                }
                Ok(Some(seen.iter().filter(|s| **s).count() as i32))
            }
            _ => Err(unknown()),
        }
    }

    pub fn check_code(self, code: i32) -> Result<i32, Error> {
        if self.is_valid_code(code) {
            Ok(code)
        } else {
            let (min, max) = self.range();
            Err(Error::OutOfRange {
                feature: self.name().to_string(),
                value: code as f64,
                min: min as f64,
                max: max as f64,
            })
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim();
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == key)
            .ok_or_else(|| Error::UnknownFeature(s.to_string()))
    }
}

/// Column description carried by a [`Cohort`](super::Cohort). Canonical
/// predictors are described by [`Feature`]; derived columns (for example a
/// leakage canary) use `levels: None` and a numeric range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Admissible values when the column is ordinal.
    pub levels: Option<Vec<f64>>,
    pub missing_rate: f64,
}

impl FeatureMeta {
    pub fn canonical(feature: Feature) -> Self {
        let (min, max) = feature.range();
        FeatureMeta {
            name: feature.name().to_string(),
            min: min as f64,
            max: max as f64,
            levels: Some(feature.levels().into_iter().map(f64::from).collect()),
            missing_rate: 0.0,
        }
    }

    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        FeatureMeta {
            name: name.into(),
            min,
            max,
            levels: None,
            missing_rate: 0.0,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        if !value.is_finite() || value < self.min || value > self.max {
            return false;
        }
        match &self.levels {
            Some(levels) => levels.iter().any(|l| *l == value),
            None => true,
        }
    }

    /// Clips to the range and snaps to the nearest admissible level.
    pub fn snap(&self, value: f64) -> f64 {
        let v = value.clamp(self.min, self.max);
        match &self.levels {
            Some(levels) if !levels.is_empty() => {
                let mut best = levels[0];
                for &l in levels {
                    if (l - v).abs() < (best - v).abs() {
                        best = l;
                    }
                }
                best
            }
            _ => v,
        }
    }
}
