//! Synthetic admission cohorts with known survival.
//!
//! Predictors are drawn through a one-factor Gaussian copula whose margins
//! follow the published category frequencies. Event times come from a Cox
//! model with a Weibull baseline; the covariate effect may be attenuated over
//! follow-up time (piecewise constant multiplier) to mimic late-time noise.
//! Censoring combines staggered-entry administrative cut-off with random
//! loss to follow-up whose rate is tuned to hit a target event fraction.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{Feature, FeatureMeta};
use super::{CensorReason, Cohort, SurvivalOutcome};
use crate::error::{Error, Result};

/// Missing-answer rates per predictor as reported for the admission cohort.
pub const TABLE2_MISSING_RATES: [(Feature, f64); 18] = [
    (Feature::AgeValue, 0.0),
    (Feature::GenderMale, 0.0),
    (Feature::FallsHistory, 0.064),
    (Feature::ChessScaleScore, 0.527),
    (Feature::RxRiskScore, 0.241),
    (Feature::SpecificHealthConditions, 0.0),
    (Feature::CognitivePerformanceScaleScore, 0.535),
    (Feature::DepressionRatingScaleScore, 0.535),
    (Feature::WeightLoss, 0.056),
    (Feature::PoorEatingOrLackOfAppetite, 0.056),
    (Feature::Mobilisation, 0.118),
    (Feature::MobilityEquipment, 0.118),
    (Feature::Smoking, 0.20),
    (Feature::SleepAssist, 0.122),
    (Feature::SkinIntegrityScore, 0.71),
    (Feature::PressureUlcerRiskScore, 0.537),
    (Feature::FaecalIncontinence, 0.558),
    (Feature::UrinaryIncontinence, 0.551),
];

const DEFAULT_COEFFICIENTS: [(Feature, f64); 18] = [
    (Feature::AgeValue, 0.035),
    (Feature::GenderMale, 0.35),
    (Feature::FallsHistory, 0.05),
    (Feature::ChessScaleScore, 0.18),
    (Feature::RxRiskScore, 0.03),
    (Feature::SpecificHealthConditions, 0.15),
    (Feature::CognitivePerformanceScaleScore, 0.06),
    (Feature::DepressionRatingScaleScore, 0.03),
    (Feature::WeightLoss, 0.2),
    (Feature::PoorEatingOrLackOfAppetite, 0.35),
    (Feature::Mobilisation, 0.22),
    (Feature::MobilityEquipment, 0.05),
    (Feature::Smoking, 0.1),
    (Feature::SleepAssist, 0.05),
    (Feature::SkinIntegrityScore, 0.05),
    (Feature::PressureUlcerRiskScore, 0.15),
    (Feature::FaecalIncontinence, 0.1),
    (Feature::UrinaryIncontinence, 0.05),
];

/// Pairwise term `coefficient * (x_a - mean_a) * (x_b - mean_b)` in the log
/// hazard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: String,
    pub b: String,
    pub coefficient: f64,
}

/// From `from_day` onwards the linear predictor is multiplied by
/// `multiplier`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectPiece {
    pub from_day: f64,
    pub multiplier: f64,
}

/// Simulator configuration, readable from TOML. Every key is optional.
///
/// ```toml
/// n = 12000
/// weibull_shape = 0.7
/// weibull_scale = 900.0
/// target_event_fraction = 0.56
/// followup_days = 2250
/// latent_correlation = 0.25
/// [coefficients]
/// mobilisation = 0.22
/// [[interactions]]
/// a = "specific_health_conditions"
/// b = "mobilisation"
/// coefficient = 0.3
/// [[effect_pieces]]
/// from_day = 91.0
/// multiplier = 0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    /// Columns emitted, in order. Defaults to the eighteen canonical
    /// predictors.
    pub features: Vec<String>,
    /// Log-hazard coefficients on raw codes; features not listed get 0.
    pub coefficients: BTreeMap<String, f64>,
    pub interactions: Vec<Interaction>,
    pub weibull_shape: f64,
    /// Days.
    pub weibull_scale: f64,
    /// Event fraction to reach by tuning random censoring; `None` disables
    /// random censoring.
    pub target_event_fraction: Option<f64>,
    /// Administrative window with uniformly staggered entry; `None` disables
    /// administrative censoring.
    pub followup_days: Option<u32>,
    /// Missing-completely-at-random rate per feature; unlisted features are
    /// fully observed.
    pub missing_rates: BTreeMap<String, f64>,
    /// Loading of the shared latent factor (correlation between latent
    /// normals). Gender is drawn independently.
    pub latent_correlation: f64,
    pub effect_pieces: Vec<EffectPiece>,
    pub censor_tuning_iterations: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 12000,
            features: Feature::ALL.iter().map(|f| f.name().to_string()).collect(),
            coefficients: DEFAULT_COEFFICIENTS
                .iter()
                .map(|(f, b)| (f.name().to_string(), *b))
                .collect(),
            interactions: Vec::new(),
            weibull_shape: 0.7,
            weibull_scale: 900.0,
            target_event_fraction: Some(0.56),
            followup_days: Some(2250),
            missing_rates: TABLE2_MISSING_RATES
                .iter()
                .map(|(f, r)| (f.name().to_string(), *r))
                .collect(),
            latent_correlation: 0.25,
            effect_pieces: Vec::new(),
            censor_tuning_iterations: 60,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// No censoring and no missing values.
    pub fn uncensored(mut self) -> Self {
        self.target_event_fraction = None;
        self.followup_days = None;
        self.missing_rates.clear();
        self
    }
}

/// Everything needed to evaluate the true survival of a simulated resident.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Marginal means subtracted from each code before it enters the log
    /// hazard.
    pub centering: Vec<f64>,
    /// Resolved interaction terms: (column a, column b, coefficient).
    pub interactions: Vec<(usize, usize, f64)>,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub effect_pieces: Vec<EffectPiece>,
    pub random_censor_rate: f64,
    /// Predictor values before missingness was applied.
    pub complete: Vec<Vec<f64>>,
    /// Continuous latent event times (days).
    pub event_times: Vec<f64>,
}

impl GroundTruth {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        let mut eta = 0.0;
        for j in 0..self.coefficients.len() {
            eta += self.coefficients[j] * (x[j] - self.centering[j]);
        }
        for &(a, b, g) in &self.interactions {
            eta += g * (x[a] - self.centering[a]) * (x[b] - self.centering[b]);
        }
        eta
    }

    fn baseline(&self, t: f64) -> f64 {
        (t.max(0.0) / self.weibull_scale).powf(self.weibull_shape)
    }

    fn baseline_inverse(&self, h: f64) -> f64 {
        self.weibull_scale * h.max(0.0).powf(1.0 / self.weibull_shape)
    }

    fn pieces(&self) -> Vec<(f64, f64)> {
        let mut pieces: Vec<(f64, f64)> = self
            .effect_pieces
            .iter()
            .map(|p| (p.from_day, p.multiplier))
            .collect();
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pieces.first().is_none_or(|p| p.0 > 0.0) {
            pieces.insert(0, (0.0, 1.0));
        }
        pieces
    }

    pub fn cumulative_hazard(&self, x: &[f64], t: f64) -> f64 {
        let eta = self.linear_predictor(x);
        let pieces = self.pieces();
        let mut h = 0.0;
        for (k, &(start, mult)) in pieces.iter().enumerate() {
            if t <= start {
                break;
            }
            let end = pieces.get(k + 1).map_or(f64::INFINITY, |p| p.0).min(t);
            h += (self.baseline(end) - self.baseline(start)) * (mult * eta).exp();
        }
        h
    }

    pub fn survival(&self, x: &[f64], t: f64) -> f64 {
        (-self.cumulative_hazard(x, t)).exp()
    }

    /// Time at which the cumulative hazard reaches `target`.
    fn invert(&self, eta: f64, target: f64) -> f64 {
        let pieces = self.pieces();
        let mut acc = 0.0;
        for (k, &(start, mult)) in pieces.iter().enumerate() {
            let rate = (mult * eta).exp();
            let h_start = self.baseline(start);
            match pieces.get(k + 1) {
                Some(&(end, _)) => {
                    let inc = (self.baseline(end) - h_start) * rate;
                    if acc + inc >= target {
                        return self.baseline_inverse(h_start + (target - acc) / rate);
                    }
                    acc += inc;
                }
                None => return self.baseline_inverse(h_start + (target - acc) / rate),
            }
        }
        unreachable!("pieces is never empty")
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Category frequencies (code, count) used as simulator margins.
pub(crate) fn marginal(feature: Feature) -> Vec<(i32, f64)> {
    let counts: Vec<(i32, f64)> = match feature {
        Feature::AgeValue => vec![
            (67, 248.0),
            (72, 645.0),
            (77, 1435.0),
            (82, 2445.0),
            (87, 3255.0),
            (92, 2725.0),
            (97, 1060.0),
            (100, 130.0),
        ],
        Feature::GenderMale => vec![(0, 7200.0 + 167.0 + 82.0), (1, 4494.0)],
        Feature::FallsHistory => vec![(0, 5125.0), (1, 5270.0), (2, 477.0), (3, 306.0)],
        Feature::ChessScaleScore => vec![
            (0, 1446.0),
            (1, 1512.0),
            (2, 1444.0),
            (3, 793.0),
            (4, 385.0),
            (5, 65.0),
        ],
        // only the range is published; a discretised normal centred at 6
        Feature::RxRiskScore => (-3..=23)
            .map(|k| {
                let z = (k as f64 - 6.0) / 4.5;
                (k, (-0.5 * z * z).exp())
            })
            .collect(),
        Feature::SpecificHealthConditions => {
            // count of five independent diagnosis groups
            let p = [0.434, 0.306, 0.109, 0.108, 0.093];
            let mut dist = vec![1.0];
            for q in p {
                let mut next = vec![0.0; dist.len() + 1];
                for (k, w) in dist.iter().enumerate() {
                    next[k] += w * (1.0 - q);
                    next[k + 1] += w * q;
                }
                dist = next;
            }
            dist.into_iter().enumerate().map(|(k, w)| (k as i32, w)).collect()
        }
        Feature::CognitivePerformanceScaleScore => vec![
            (0, 639.0),
            (1, 538.0),
            (2, 2127.0),
            (3, 1527.0),
            (4, 199.0),
            (5, 426.0),
            (6, 99.0),
        ],
        Feature::DepressionRatingScaleScore => {
            vec![(0, 2609.0), (1, 1729.0), (2, 909.0), (3, 308.0)]
        }
        Feature::WeightLoss => vec![(0, 4379.0 + 5242.0), (1, 1650.0)],
        Feature::PoorEatingOrLackOfAppetite => vec![(0, 9136.0), (1, 2135.0)],
        Feature::Mobilisation => vec![
            (0, 4175.0),
            (1, 1889.0),
            (2, 2395.0),
            (3, 921.0),
            (4, 1153.0),
        ],
        Feature::MobilityEquipment => vec![
            (0, 2698.0),
            (1, 813.0),
            (2, 5083.0),
            (3, 586.0),
            (4, 220.0),
            (5, 1130.0),
        ],
        Feature::Smoking => vec![(0, 7604.0), (1, 1950.0)],
        Feature::SleepAssist => vec![(0, 3861.0), (1, 6631.0)],
        Feature::SkinIntegrityScore => vec![(0, 170.0 + 2609.0), (1, 157.0), (2, 530.0)],
        Feature::PressureUlcerRiskScore => vec![
            (0, 2629.0),
            (1, 1967.0),
            (2, 554.0),
            (3, 349.0),
            (4, 34.0),
        ],
        Feature::FaecalIncontinence => vec![(0, 3093.0), (1, 2187.0)],
        Feature::UrinaryIncontinence => vec![(0, 3808.0), (1, 1554.0)],
    };
    let total: f64 = counts.iter().map(|c| c.1).sum();
    counts.into_iter().map(|(k, w)| (k, w / total)).collect()
}

fn quantile(dist: &[(i32, f64)], u: f64) -> i32 {
    let mut cum = 0.0;
    for &(k, p) in dist {
        cum += p;
        if u <= cum {
            return k;
        }
    }
    dist.last().map(|d| d.0).unwrap_or(0)
}

fn marginal_mean(dist: &[(i32, f64)]) -> f64 {
    dist.iter().map(|(k, p)| *k as f64 * p).sum()
}

/// Censoring reasons other than administrative cut-off, with their counts.
const RANDOM_CENSOR_REASONS: [(CensorReason, f64); 3] = [
    (CensorReason::TransferFacility, 1145.0),
    (CensorReason::DischargedHome, 351.0),
    (CensorReason::TransferHospital, 244.0),
];

pub fn simulate_cohort(config: &SimConfig, seed: u64) -> Result<(Cohort, GroundTruth)> {
    let features = config
        .features
        .iter()
        .map(|n| n.parse::<Feature>())
        .collect::<Result<Vec<_>>>()?;
    for name in config.coefficients.keys().chain(config.missing_rates.keys()) {
        name.parse::<Feature>()?;
    }
    if !(0.0..1.0).contains(&config.latent_correlation) {
        return Err(Error::Config("latent_correlation must lie in [0, 1)".into()));
    }
    if config.weibull_shape <= 0.0 || config.weibull_scale <= 0.0 {
        return Err(Error::Config("Weibull shape and scale must be positive".into()));
    }
    let col = |name: &str| -> Result<usize> {
        let f: Feature = name.parse()?;
        features
            .iter()
            .position(|g| *g == f)
            .ok_or_else(|| Error::Config(format!("interaction uses `{name}`, which is not simulated")))
    };
    let interactions = config
        .interactions
        .iter()
        .map(|it| Ok((col(&it.a)?, col(&it.b)?, it.coefficient)))
        .collect::<Result<Vec<_>>>()?;

    let margins: Vec<Vec<(i32, f64)>> = features.iter().map(|f| marginal(*f)).collect();
    let mut truth = GroundTruth {
        feature_names: features.iter().map(|f| f.name().to_string()).collect(),
        coefficients: features
            .iter()
            .map(|f| config.coefficients.get(f.name()).copied().unwrap_or(0.0))
            .collect(),
        centering: margins.iter().map(|m| marginal_mean(m)).collect(),
        interactions,
        weibull_shape: config.weibull_shape,
        weibull_scale: config.weibull_scale,
        effect_pieces: config.effect_pieces.clone(),
        random_censor_rate: 0.0,
        complete: Vec::with_capacity(config.n),
        event_times: Vec::with_capacity(config.n),
    };
    let missing: Vec<f64> = features
        .iter()
        .map(|f| config.missing_rates.get(f.name()).copied().unwrap_or(0.0))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let load = config.latent_correlation.sqrt();
    let unique = (1.0 - config.latent_correlation).sqrt();
    let p = features.len();

    let mut admin = Vec::with_capacity(config.n);
    let mut loss_draw = Vec::with_capacity(config.n);
    let mut reason_draw = Vec::with_capacity(config.n);
    let mut masks = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let factor: f64 = rng.sample(StandardNormal);
        let mut x = Vec::with_capacity(p);
        for (j, f) in features.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            let z = if *f == Feature::GenderMale {
                e
            } else {
                load * factor + unique * e
            };
            x.push(quantile(&margins[j], normal_cdf(z)) as f64);
        }
        let mask: Vec<bool> = missing.iter().map(|&r| rng.random::<f64>() < r).collect();
        let e: f64 = rng.sample(Exp1);
        let eta = truth.linear_predictor(&x);
        truth.event_times.push(truth.invert(eta, e));
        truth.complete.push(x);
        masks.push(mask);
        admin.push(match config.followup_days {
            Some(l) => (1.0 - rng.random::<f64>()) * l as f64,
            None => f64::INFINITY,
        });
        loss_draw.push(rng.sample::<f64, _>(Exp1));
        reason_draw.push(rng.random::<f64>());
    }

    let fraction_at = |rate: f64| -> f64 {
        if config.n == 0 {
            return 0.0;
        }
        let events = (0..config.n)
            .filter(|&i| {
                let loss = if rate > 0.0 { loss_draw[i] / rate } else { f64::INFINITY };
                truth.event_times[i] <= admin[i].min(loss)
            })
            .count();
        events as f64 / config.n as f64
    };

    let rate = match config.target_event_fraction {
        None => 0.0,
        Some(_) if config.n == 0 => 0.0,
        Some(target) => {
            let at_zero = fraction_at(0.0);
            if at_zero < target - 0.03 {
                return Err(Error::CensoringTargetUnreachable {
                    target,
                    achieved: at_zero,
                });
            }
            if at_zero <= target + 0.005 {
                0.0
            } else {
                let mut hi = 1e-4;
                let mut iterations = 0;
                while fraction_at(hi) > target && iterations < config.censor_tuning_iterations {
                    hi *= 2.0;
                    iterations += 1;
                }
                let mut lo = 0.0;
                for _ in 0..config.censor_tuning_iterations {
                    let mid = 0.5 * (lo + hi);
                    if fraction_at(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let rate = 0.5 * (lo + hi);
                let achieved = fraction_at(rate);
                if (achieved - target).abs() > 0.03 {
                    return Err(Error::CensoringTargetUnreachable { target, achieved });
                }
                rate
            }
        }
    };
    truth.random_censor_rate = rate;

    let reason_total: f64 = RANDOM_CENSOR_REASONS.iter().map(|r| r.1).sum();
    let mut records = Vec::with_capacity(config.n);
    let mut outcomes = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let loss = if rate > 0.0 { loss_draw[i] / rate } else { f64::INFINITY };
        let t = truth.event_times[i];
        let c = admin[i].min(loss);
        let outcome = if t <= c {
            SurvivalOutcome::new(day_of(t), true, CensorReason::None)?
        } else {
            let reason = if admin[i] <= loss {
                CensorReason::CurrentResident
            } else {
                let mut cum = 0.0;
                let mut pick = RANDOM_CENSOR_REASONS[0].0;
                for (r, w) in RANDOM_CENSOR_REASONS {
                    cum += w / reason_total;
                    if reason_draw[i] <= cum {
                        pick = r;
                        break;
                    }
                }
                pick
            };
            SurvivalOutcome::new(day_of(c), false, reason)?
        };
        outcomes.push(outcome);
        records.push(
            truth.complete[i]
                .iter()
                .zip(&masks[i])
                .map(|(v, m)| if *m { None } else { Some(*v) })
                .collect(),
        );
    }
    let metas = features.iter().map(|f| FeatureMeta::canonical(*f)).collect();
    let cohort = Cohort::new(metas, records, outcomes)?;
    Ok((cohort, truth))
}

fn day_of(t: f64) -> u32 {
    let d = t.ceil();
    if d < 1.0 {
        1
    } else if d > u32::MAX as f64 {
        u32::MAX
    } else {
        d as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins_are_distributions_over_valid_codes() {
        for f in Feature::ALL {
            let m = marginal(f);
            let total: f64 = m.iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(m.iter().all(|(k, _)| f.is_valid_code(*k)), "{f}");
        }
    }

    #[test]
    fn empty_cohort() {
        let cfg = SimConfig {
            n: 0,
            ..SimConfig::default()
        };
        let (c, t) = simulate_cohort(&cfg, 1).unwrap();
        assert!(c.is_empty());
        assert!(t.complete.is_empty());
    }

    #[test]
    fn bit_reproducible() {
        let cfg = SimConfig {
            n: 500,
            ..SimConfig::default()
        };
        let (a, ta) = simulate_cohort(&cfg, 42).unwrap();
        let (b, tb) = simulate_cohort(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = simulate_cohort(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inversion_matches_cumulative_hazard() {
        let cfg = SimConfig {
            n: 50,
            effect_pieces: vec![
                EffectPiece { from_day: 30.0, multiplier: 0.5 },
                EffectPiece { from_day: 200.0, multiplier: 0.1 },
            ],
            ..SimConfig::default()
        };
        let (_, truth) = simulate_cohort(&cfg, 5).unwrap();
        for x in truth.complete.iter().take(10) {
            let eta = truth.linear_predictor(x);
            for target in [0.01, 0.3, 1.0, 2.5] {
                let t = truth.invert(eta, target);
                assert!((truth.cumulative_hazard(x, t) - target).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unreachable_target_reports_achieved_rate() {
        let cfg = SimConfig {
            n: 300,
            target_event_fraction: Some(0.99),
            followup_days: Some(30),
            ..SimConfig::default()
        };
        match simulate_cohort(&cfg, 1) {
            Err(Error::CensoringTargetUnreachable { achieved, .. }) => assert!(achieved < 0.9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_from_toml() {
        let cfg = SimConfig::from_toml(
            "n = 10\n[[interactions]]\na = \"mobilisation\"\nb = \"chess_scale_score\"\ncoefficient = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 10);
        assert_eq!(cfg.interactions.len(), 1);
        assert_eq!(cfg.weibull_shape, 0.7);
        assert!(SimConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn censoring_reasons_follow_outcome() {
        let cfg = SimConfig {
            n: 2000,
            ..SimConfig::default()
        };
        let (c, _) = simulate_cohort(&cfg, 9).unwrap();
        for o in c.outcomes() {
            assert_eq!(o.event, o.censor_reason == CensorReason::None);
        }
        assert!(c
            .outcomes()
            .iter()
            .any(|o| o.censor_reason == CensorReason::TransferFacility));
    }
}
