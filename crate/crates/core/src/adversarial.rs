//! Explanation-guided adversarial generation and detection.
//!
//! Detection compares the explanation of an input with the class-level
//! explanation of its predicted class. Every kept feature that the class does
//! not consider important, or whose value falls outside the class interval,
//! is a discrepancy; the likelihood score is the fraction of kept features
//! that are discrepant.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::axp::{extract_with, Explanation, OrderPolicy};
use crate::classexpl::ClassExplanation;
use crate::encoder::EncodedModel;
use crate::error::Result;
use crate::model::{Dataset, Instance};
use crate::oracle::{witness_to_instance, Oracle, DEFAULT_SCALE};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFlag {
    Ok,
    MissingFromClass,
    OutsideInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub class: usize,
    pub s_adv: f64,
    /// Discrepancy count.
    pub d: usize,
    /// Number of kept features in the input's explanation.
    pub n: usize,
    pub flags: Vec<(usize, FeatureFlag)>,
    pub empty_explanation: bool,
    pub empty_class: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub order: OrderPolicy,
    pub scale: i64,
    /// Class features rarer than this are treated as absent.
    pub min_frequency: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            order: OrderPolicy::default(),
            scale: DEFAULT_SCALE,
            min_frequency: 0.0,
        }
    }
}

/// Discrepancy scoring of an already extracted explanation.
pub fn score_explanation(
    explanation: &Explanation,
    class_expls: &[ClassExplanation],
    min_frequency: f64,
) -> DetectionResult {
    let class = explanation.class;
    let expected = class_expls.get(class);
    let empty_class = expected.is_none_or(ClassExplanation::is_empty);
    let flags: Vec<(usize, FeatureFlag)> = explanation
        .kept
        .iter()
        .map(|&(f, v)| {
            let flag = match expected
                .and_then(|e| e.get(f))
                .filter(|iv| iv.frequency >= min_frequency)
            {
                None => FeatureFlag::MissingFromClass,
                Some(iv) if !iv.contains(v) => FeatureFlag::OutsideInterval,
                Some(_) => FeatureFlag::Ok,
            };
            (f, flag)
        })
        .collect();
    let n = flags.len();
    let d = flags.iter().filter(|(_, fl)| *fl != FeatureFlag::Ok).count();
    DetectionResult {
        class,
        s_adv: if n == 0 { 0.0 } else { d as f64 / n as f64 },
        d,
        n,
        flags,
        empty_explanation: n == 0,
        empty_class,
    }
}

pub fn detect_with(
    oracle: &mut Oracle<'_>,
    class_expls: &[ClassExplanation],
    instance: &Instance,
    options: &DetectOptions,
) -> Result<DetectionResult> {
    let explanation = extract_with(oracle, instance, options.order)?;
    Ok(score_explanation(&explanation, class_expls, options.min_frequency))
}

pub fn detect(
    encoded: &EncodedModel,
    class_expls: &[ClassExplanation],
    instance: &Instance,
    options: &DetectOptions,
) -> Result<DetectionResult> {
    detect_with(
        &mut Oracle::with_scale(encoded, options.scale),
        class_expls,
        instance,
        options,
    )
}

/// Detection over every row, in row order.
pub fn detect_all(
    encoded: &EncodedModel,
    class_expls: &[ClassExplanation],
    dataset: &Dataset,
    options: &DetectOptions,
) -> Result<Vec<DetectionResult>> {
    dataset
        .instances()
        .par_iter()
        .map_init(
            || Oracle::with_scale(encoded, options.scale),
            |oracle, x| detect_with(oracle, class_expls, x, options),
        )
        .collect()
}

/// Inclusive threshold test on the likelihood score.
pub fn classify_adversarial(result: &DetectionResult, tau: f64) -> bool {
    result.s_adv >= tau
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Move explanation features to the nearest endpoint of a rival class interval.
    #[default]
    Interval,
    /// Free the explanation features and materialize a gap-maximizing witness.
    Witness,
}

impl FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "interval" => Ok(Self::Interval),
            "witness" => Ok(Self::Witness),
            other => Err(format!("unknown attack mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackOptions {
    pub mode: AttackMode,
    /// Witness mode: retry with every feature free when the explanation
    /// features alone cannot flip the prediction.
    pub full_free_fallback: bool,
    pub order: OrderPolicy,
    pub scale: i64,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            mode: AttackMode::default(),
            full_free_fallback: false,
            order: OrderPolicy::default(),
            scale: DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvResult {
    pub original: Instance,
    pub perturbed: Instance,
    pub original_class: usize,
    pub new_class: usize,
    pub distance: f64,
    pub changed: Vec<usize>,
    /// Rival class whose explanation or witness produced the perturbation.
    pub rival: usize,
    /// L2 distance after the initial perturbation and after each accepted reversion.
    pub reversion_trace: Vec<f64>,
}

impl AdvResult {
    fn new(original: &Instance, perturbed: Instance, original_class: usize, new_class: usize, rival: usize, trace: Vec<f64>) -> Self {
        let changed = (0..original.len())
            .filter(|&f| original.get(f) != perturbed.get(f))
            .collect();
        Self {
            distance: original.l2_distance(&perturbed),
            original: original.clone(),
            perturbed,
            original_class,
            new_class,
            changed,
            rival,
            reversion_trace: trace,
        }
    }
}

/// Reverts changed features one at a time, ascending, whenever the prediction
/// stays away from `original_class`. Returns the distance after every accepted step.
fn revert_greedily(
    encoded: &EncodedModel,
    original: &Instance,
    perturbed: &mut Instance,
    original_class: usize,
) -> Vec<f64> {
    let ensemble = encoded.ensemble();
    let mut trace = vec![original.l2_distance(perturbed)];
    for f in 0..original.len() {
        if perturbed.get(f) == original.get(f) {
            continue;
        }
        let mut candidate = perturbed.clone();
        candidate.set(f, original.get(f));
        if ensemble.predict(&candidate) != original_class {
            *perturbed = candidate;
            let d = original.l2_distance(perturbed);
            debug_assert!(d <= *trace.last().unwrap());
            trace.push(d);
        }
    }
    trace
}

fn interval_attack(
    encoded: &EncodedModel,
    class_expls: &[ClassExplanation],
    instance: &Instance,
    explanation: &Explanation,
) -> Option<AdvResult> {
    let ensemble = encoded.ensemble();
    let class = explanation.class;
    for rival in (0..ensemble.num_labels()).filter(|&c| c != class) {
        let Some(target) = class_expls.get(rival) else {
            continue;
        };
        let mut perturbed = instance.clone();
        for &(f, v) in &explanation.kept {
            if let Some(iv) = target.get(f) {
                if !iv.contains(v) {
                    perturbed.set(f, if v < iv.a { iv.a } else { iv.b });
                }
            }
        }
        if perturbed == *instance || ensemble.predict(&perturbed) == class {
            continue;
        }
        let trace = revert_greedily(encoded, instance, &mut perturbed, class);
        let new_class = ensemble.predict(&perturbed);
        return Some(AdvResult::new(instance, perturbed, class, new_class, rival, trace));
    }
    None
}

fn witness_attack(
    oracle: &mut Oracle<'_>,
    instance: &Instance,
    explanation: &Explanation,
    full_free_fallback: bool,
) -> Result<Option<AdvResult>> {
    let encoded = oracle.encoded();
    let ensemble = encoded.ensemble();
    let class = explanation.class;
    oracle.set_reference(instance);

    let mut attempts = vec![explanation.free.clone()];
    if full_free_fallback {
        attempts.push(Vec::new());
    }
    for fixed_features in attempts {
        let fixed = encoded.assumptions(instance, fixed_features.iter().copied());
        for rival in (0..ensemble.num_labels()).filter(|&c| c != class) {
            let floor = if rival > class { 0 } else { -1 };
            let best = oracle.max_score_gap(&fixed, class, rival)?;
            if best.gap.scaled <= floor {
                continue;
            }
            let perturbed = witness_to_instance(&best.witness, encoded, instance);
            let new_class = ensemble.predict(&perturbed);
            if new_class != class {
                let trace = vec![instance.l2_distance(&perturbed)];
                return Ok(Some(AdvResult::new(instance, perturbed, class, new_class, rival, trace)));
            }
        }
    }
    Ok(None)
}

pub fn generate_with(
    oracle: &mut Oracle<'_>,
    class_expls: &[ClassExplanation],
    instance: &Instance,
    options: &AttackOptions,
) -> Result<Option<AdvResult>> {
    let explanation = extract_with(oracle, instance, options.order)?;
    match options.mode {
        AttackMode::Interval => Ok(interval_attack(oracle.encoded(), class_expls, instance, &explanation)),
        AttackMode::Witness => witness_attack(oracle, instance, &explanation, options.full_free_fallback),
    }
}

pub fn generate(
    encoded: &EncodedModel,
    class_expls: &[ClassExplanation],
    instance: &Instance,
    options: &AttackOptions,
) -> Result<Option<AdvResult>> {
    generate_with(
        &mut Oracle::with_scale(encoded, options.scale),
        class_expls,
        instance,
        options,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub attack: AttackOptions,
    pub detect: DetectOptions,
    pub tau: f64,
    /// Also score the unperturbed rows, for a false-positive rate.
    pub include_clean: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            attack: AttackOptions::default(),
            detect: DetectOptions::default(),
            tau: DEFAULT_TAU,
            include_clean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub index: usize,
    pub original_class: usize,
    pub adversarial: Option<AdvResult>,
    pub detection: Option<DetectionResult>,
    pub detected: bool,
    pub clean_detection: Option<DetectionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassFlipRate {
    pub class: usize,
    pub original: usize,
    pub flipped: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleanDetection {
    pub total: usize,
    pub flagged: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub total: usize,
    pub fooled: usize,
    pub fooled_rate: f64,
    pub mean_l2: Option<f64>,
    pub per_class: Vec<ClassFlipRate>,
    /// `flip_matrix[original][new]` counts successful adversarials.
    pub flip_matrix: Vec<Vec<usize>>,
    pub tau: f64,
    pub detected: usize,
    pub detection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean: Option<CleanDetection>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Runs generation on every row, detection on each successful adversarial,
/// and summarizes. Samples are returned in row order.
pub fn evaluate_attack(
    encoded: &EncodedModel,
    class_expls: &[ClassExplanation],
    dataset: &Dataset,
    options: &EvalOptions,
) -> Result<(AttackReport, Vec<SampleOutcome>)> {
    let samples: Vec<SampleOutcome> = dataset
        .instances()
        .par_iter()
        .enumerate()
        .map_init(
            || Oracle::with_scale(encoded, options.attack.scale),
            |oracle, (index, x)| {
                let original_class = encoded.ensemble().predict(x);
                let adversarial = generate_with(oracle, class_expls, x, &options.attack)?;
                let detection = adversarial
                    .as_ref()
                    .map(|adv| detect_with(oracle, class_expls, &adv.perturbed, &options.detect))
                    .transpose()?;
                let clean_detection = options
                    .include_clean
                    .then(|| detect_with(oracle, class_expls, x, &options.detect))
                    .transpose()?;
                Ok(SampleOutcome {
                    index,
                    original_class,
                    detected: detection
                        .as_ref()
                        .is_some_and(|d| classify_adversarial(d, options.tau)),
                    adversarial,
                    detection,
                    clean_detection,
                })
            },
        )
        .collect::<Result<_>>()?;
    let report = summarize(&samples, encoded.ensemble().num_labels(), options);
    Ok((report, samples))
}

pub fn summarize(samples: &[SampleOutcome], num_labels: usize, options: &EvalOptions) -> AttackReport {
    let total = samples.len();
    let successes: Vec<&AdvResult> = samples.iter().filter_map(|s| s.adversarial.as_ref()).collect();
    let fooled = successes.len();
    let mean_l2 = (fooled > 0).then(|| successes.iter().map(|a| a.distance).sum::<f64>() / fooled as f64);

    let mut flip_matrix = vec![vec![0usize; num_labels]; num_labels];
    for adv in &successes {
        flip_matrix[adv.original_class][adv.new_class] += 1;
    }
    let per_class = (0..num_labels)
        .map(|class| {
            let original = samples.iter().filter(|s| s.original_class == class).count();
            let flipped = flip_matrix[class].iter().sum();
            ClassFlipRate {
                class,
                original,
                flipped,
                rate: ratio(flipped, original),
            }
        })
        .collect();
    let detected = samples.iter().filter(|s| s.detected).count();
    let clean = options.include_clean.then(|| {
        let flagged = samples
            .iter()
            .filter_map(|s| s.clean_detection.as_ref())
            .filter(|d| classify_adversarial(d, options.tau))
            .count();
        CleanDetection {
            total,
            flagged,
            rate: ratio(flagged, total),
        }
    });
    AttackReport {
        total,
        fooled,
        fooled_rate: ratio(fooled, total).unwrap_or(0.0),
        mean_l2,
        per_class,
        flip_matrix,
        tau: options.tau,
        detected,
        detection_rate: ratio(detected, fooled),
        clean,
    }
}
