use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use gbexplain::adversarial::{
    self, classify_adversarial, detect_all, evaluate_attack, generate_with, AdvResult, AttackOptions, ClassFlipRate,
    DetectOptions, DetectionResult, EvalOptions, FeatureFlag,
};
use gbexplain::axp::{extract_with, Explanation, OrderPolicy};
use gbexplain::classexpl::{self, build_class_explanations, BuildOptions, ClassExplanation, IntervalMethod};
use gbexplain::encoder::{encode_ensemble, EncodedModel};
use gbexplain::metrics::{self, compare, consistency, formal_rankings};
use gbexplain::model::{parse_lightgbm_text, parse_portable_json, Dataset, Ensemble, FeatureSpace, Instance};
use gbexplain::oracle::Oracle;

use crate::output::{csv_bytes, emit, json_bytes};
use crate::{
    AdvCommand, AdvDetectArgs, AdvEvalArgs, AdvGenArgs, AttackArgs, ClassExplainArgs, Command, DetectArgs,
    EncodeArgs, ExplainArgs, IntervalArg, MetricsArgs, ModelArgs, ModelFormat, RunArgs,
};

/// Bad invocation that clap cannot catch, such as an out-of-range row.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 2 for IO and usage problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<gbexplain::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
    }
    1
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn run(command: Command) -> Result<()> {
    let jobs = match &command {
        Command::Encode(a) => a.run.jobs,
        Command::Explain(a) => a.run.jobs,
        Command::ClassExplain(a) => a.run.jobs,
        Command::Adv { command } => match command {
            AdvCommand::Gen(a) => a.run.jobs,
            AdvCommand::Detect(a) => a.run.jobs,
            AdvCommand::Eval(a) => a.run.jobs,
        },
        Command::Metrics(a) => a.run.jobs,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker pool")?;
    pool.install(|| match command {
        Command::Encode(a) => encode(a),
        Command::Explain(a) => explain(a),
        Command::ClassExplain(a) => class_explain(a),
        Command::Adv { command } => match command {
            AdvCommand::Gen(a) => adv_gen(a),
            AdvCommand::Detect(a) => adv_detect(a),
            AdvCommand::Eval(a) => adv_eval(a),
        },
        Command::Metrics(a) => metrics_cmd(a),
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(args: &ModelArgs) -> Result<Ensemble> {
    let text = read(&args.model)?;
    let model = match args.format {
        ModelFormat::Lightgbm => parse_lightgbm_text(&text),
        ModelFormat::Json => parse_portable_json(&text),
    };
    model.with_context(|| format!("loading model {}", args.model.display()))
}

fn load_data(path: &Path, features: &FeatureSpace) -> Result<Dataset> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Dataset::from_csv(file, features).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_class_expls(path: &Path, model: &Ensemble) -> Result<Vec<ClassExplanation>> {
    let text = read(path)?;
    classexpl::from_json(&text, model.feature_space(), model.num_labels())
        .with_context(|| format!("loading class explanations {}", path.display()))
}

fn scale(run: &RunArgs) -> i64 {
    10i64.pow(run.scale)
}

fn check_unit(name: &str, value: f64, lo: f64, hi: f64, inclusive_lo: bool) -> Result<()> {
    let ok = value <= hi && (value > lo || (inclusive_lo && value == lo));
    if !ok {
        let open = if inclusive_lo { '[' } else { '(' };
        return Err(usage(format!("--{name} must lie in {open}{lo}, {hi}]")));
    }
    Ok(())
}

/// Row selection: `all`, or comma-separated indices and inclusive `a-b` ranges.
pub fn parse_selector(selector: &str, rows: usize) -> Result<Vec<usize>> {
    if selector.trim() == "all" {
        return Ok((0..rows).collect());
    }
    let mut out = Vec::new();
    for part in selector.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || usage(format!("bad instance selector {part:?}"));
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => {
                let i: usize = part.parse().map_err(|_| bad())?;
                (i, i)
            }
        };
        if lo > hi {
            return Err(bad());
        }
        if hi >= rows {
            return Err(usage(format!("instance {hi} out of range: dataset has {rows} rows")));
        }
        out.extend(lo..=hi);
    }
    Ok(out)
}

fn encode(a: EncodeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let encoded = encode_ensemble(&model);
    if a.run.out.is_some() {
        emit(a.run.out.as_deref(), "model.cnf", encoded.to_dimacs().as_bytes(), false)?;
    }
    emit(a.run.out.as_deref(), "stats.json", &json_bytes(&encoded.stats())?, true)
}

fn explain_rows(
    encoded: &EncodedModel,
    data: &Dataset,
    rows: &[usize],
    order: OrderPolicy,
    scale: i64,
) -> Result<Vec<Explanation>> {
    rows.par_iter()
        .map_init(
            || Oracle::with_scale(encoded, scale),
            |oracle, &i| {
                let mut e = extract_with(oracle, &data.instances()[i], order)?;
                e.instance = Some(i);
                Ok(e)
            },
        )
        .collect()
}

fn explain(a: ExplainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, model.feature_space())?;
    let rows = parse_selector(&a.instances, data.len())?;
    let encoded = encode_ensemble(&model);
    let explanations = explain_rows(&encoded, &data, &rows, a.order.into(), scale(&a.run))?;
    let mut out = Vec::new();
    for e in &explanations {
        serde_json::to_writer(&mut out, &e.record(model.feature_space()))?;
        out.push(b'\n');
    }
    emit(a.run.out.as_deref(), "explanations.jsonl", &out, true)
}

fn class_explain(a: ClassExplainArgs) -> Result<()> {
    let method = match a.interval {
        IntervalArg::Quantile => {
            check_unit("alpha", a.alpha, 0.0, 0.5, true)?;
            IntervalMethod::Quantile { alpha: a.alpha }
        }
        IntervalArg::Cluster => IntervalMethod::Cluster,
    };
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, model.feature_space())?;
    let encoded = encode_ensemble(&model);
    let options = BuildOptions {
        method,
        order: a.order.into(),
        scale: scale(&a.run),
    };
    let classes = build_class_explanations(&encoded, &data, &options)?;
    for c in classes.iter().filter(|c| c.is_empty()) {
        eprintln!("warning: class {} has no explained instances", c.class);
    }
    let mut json = classexpl::to_json(&classes, model.feature_space()).into_bytes();
    json.push(b'\n');
    emit(a.run.out.as_deref(), "class_explanations.json", &json, true)
}

fn attack_options(a: &AttackArgs, order: OrderPolicy, run: &RunArgs) -> AttackOptions {
    AttackOptions {
        mode: a.attack.into(),
        full_free_fallback: a.full_free,
        order,
        scale: scale(run),
    }
}

fn detect_options(a: &DetectArgs, run: &RunArgs) -> Result<DetectOptions> {
    check_unit("tau", a.tau, 0.0, 1.0, true)?;
    check_unit("min-frequency", a.min_frequency, 0.0, 1.0, true)?;
    Ok(DetectOptions {
        order: a.order.into(),
        scale: scale(run),
        min_frequency: a.min_frequency,
    })
}

fn names(features: &FeatureSpace, list: &[usize]) -> String {
    list.iter().map(|&f| features.name(f)).collect::<Vec<_>>().join(";")
}

fn values(x: &Instance) -> impl Iterator<Item = String> + '_ {
    x.values().iter().map(|v| v.to_string())
}

fn suffixed<'a>(features: &'a FeatureSpace, suffix: &'a str) -> impl Iterator<Item = String> + 'a {
    features.names().iter().map(move |n| format!("{n}{suffix}"))
}

#[derive(Serialize)]
struct GenSummary {
    total: usize,
    fooled: usize,
    fooled_rate: f64,
    mean_l2: Option<f64>,
    per_class: Vec<ClassFlipRate>,
    flip_matrix: Vec<Vec<usize>>,
}

fn adv_gen(a: AdvGenArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, model.feature_space())?;
    let classes = load_class_expls(&a.class_expl, &model)?;
    let encoded = encode_ensemble(&model);
    let options = attack_options(&a.attack, a.order.into(), &a.run);
    let results: Vec<Option<AdvResult>> = data
        .instances()
        .par_iter()
        .map_init(
            || Oracle::with_scale(&encoded, options.scale),
            |oracle, x| generate_with(oracle, &classes, x, &options),
        )
        .collect::<gbexplain::Result<_>>()?;

    let fs = model.feature_space();
    let mut header: Vec<String> = ["instance", "original_class", "new_class", "rival", "distance", "changed"]
        .map(String::from)
        .to_vec();
    header.extend(suffixed(fs, "_orig"));
    header.extend(suffixed(fs, "_adv"));
    let csv = csv_bytes(&header, |w| {
        for (i, adv) in results.iter().enumerate() {
            let Some(adv) = adv else { continue };
            verify(&model, adv)?;
            let mut row = vec![
                i.to_string(),
                adv.original_class.to_string(),
                adv.new_class.to_string(),
                adv.rival.to_string(),
                adv.distance.to_string(),
                names(fs, &adv.changed),
            ];
            row.extend(values(&adv.original));
            row.extend(values(&adv.perturbed));
            w.write_record(&row)?;
        }
        Ok(())
    })?;

    let perturbed: Vec<Instance> = results.iter().flatten().map(|a| a.perturbed.clone()).collect();
    let mut perturbed_csv = Vec::new();
    Dataset::new(perturbed, None)?.to_csv(&mut perturbed_csv, fs)?;

    let samples: Vec<adversarial::SampleOutcome> = results
        .iter()
        .enumerate()
        .map(|(index, adv)| adversarial::SampleOutcome {
            index,
            original_class: model.predict(&data.instances()[index]),
            adversarial: adv.clone(),
            detection: None,
            detected: false,
            clean_detection: None,
        })
        .collect();
    let report = adversarial::summarize(&samples, model.num_labels(), &EvalOptions::default());
    let summary = GenSummary {
        total: report.total,
        fooled: report.fooled,
        fooled_rate: report.fooled_rate,
        mean_l2: report.mean_l2,
        per_class: report.per_class,
        flip_matrix: report.flip_matrix,
    };

    let out = a.run.out.as_deref();
    emit(out, "adversarial.csv", &csv, true)?;
    if out.is_some() {
        emit(out, "perturbed.csv", &perturbed_csv, false)?;
    }
    emit(out, "gen_summary.json", &json_bytes(&summary)?, false)
}

fn verify(model: &Ensemble, adv: &AdvResult) -> Result<()> {
    if model.predict(&adv.perturbed) == model.predict(&adv.original) {
        bail!("internal error: perturbation does not change the prediction");
    }
    Ok(())
}

fn flag_name(flag: FeatureFlag) -> &'static str {
    match flag {
        FeatureFlag::Ok => "ok",
        FeatureFlag::MissingFromClass => "missing_from_class",
        FeatureFlag::OutsideInterval => "outside_interval",
    }
}

fn flags(features: &FeatureSpace, d: &DetectionResult) -> String {
    d.flags
        .iter()
        .map(|&(f, flag)| format!("{}:{}", features.name(f), flag_name(flag)))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Serialize)]
struct DetectSummary {
    total: usize,
    tau: f64,
    flagged: usize,
    rate: Option<f64>,
    empty_explanation: usize,
    empty_class: usize,
}

fn adv_detect(a: AdvDetectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, model.feature_space())?;
    let classes = load_class_expls(&a.detect.class_expl, &model)?;
    let options = detect_options(&a.detect, &a.run)?;
    let encoded = encode_ensemble(&model);
    let results = detect_all(&encoded, &classes, &data, &options)?;
    let tau = a.detect.tau;

    let fs = model.feature_space();
    let header = ["instance", "class", "s_adv", "d", "n", "flagged", "empty_explanation", "empty_class", "flags"]
        .map(String::from)
        .to_vec();
    let csv = csv_bytes(&header, |w| {
        for (i, d) in results.iter().enumerate() {
            w.write_record([
                i.to_string(),
                d.class.to_string(),
                d.s_adv.to_string(),
                d.d.to_string(),
                d.n.to_string(),
                classify_adversarial(d, tau).to_string(),
                d.empty_explanation.to_string(),
                d.empty_class.to_string(),
                flags(fs, d),
            ])?;
        }
        Ok(())
    })?;
    let flagged = results.iter().filter(|d| classify_adversarial(d, tau)).count();
    let summary = DetectSummary {
        total: results.len(),
        tau,
        flagged,
        rate: (!results.is_empty()).then(|| flagged as f64 / results.len() as f64),
        empty_explanation: results.iter().filter(|d| d.empty_explanation).count(),
        empty_class: results.iter().filter(|d| d.empty_class).count(),
    };
    let out = a.run.out.as_deref();
    emit(out, "detections.csv", &csv, true)?;
    emit(out, "detect_summary.json", &json_bytes(&summary)?, false)
}

fn adv_eval(a: AdvEvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, model.feature_space())?;
    let classes = load_class_expls(&a.detect.class_expl, &model)?;
    let encoded = encode_ensemble(&model);
    let options = EvalOptions {
        attack: attack_options(&a.attack, a.detect.order.into(), &a.run),
        detect: detect_options(&a.detect, &a.run)?,
        tau: a.detect.tau,
        include_clean: a.include_clean,
    };
    let (report, samples) = evaluate_attack(&encoded, &classes, &data, &options)?;

    let fs = model.feature_space();
    let mut header: Vec<String> = [
        "instance",
        "original_class",
        "fooled",
        "new_class",
        "distance",
        "changed",
        "s_adv",
        "detected",
    ]
    .map(String::from)
    .to_vec();
    if a.include_clean {
        header.push("clean_s_adv".into());
    }
    header.extend(suffixed(fs, "_orig"));
    header.extend(suffixed(fs, "_adv"));
    let csv = csv_bytes(&header, |w| {
        for s in &samples {
            let adv = s.adversarial.as_ref();
            if let Some(adv) = adv {
                verify(&model, adv)?;
            }
            let opt = |v: Option<String>| v.unwrap_or_default();
            let mut row = vec![
                s.index.to_string(),
                s.original_class.to_string(),
                adv.is_some().to_string(),
                opt(adv.map(|a| a.new_class.to_string())),
                opt(adv.map(|a| a.distance.to_string())),
                opt(adv.map(|a| names(fs, &a.changed))),
                opt(s.detection.as_ref().map(|d| d.s_adv.to_string())),
                s.detected.to_string(),
            ];
            if a.include_clean {
                row.push(opt(s.clean_detection.as_ref().map(|d| d.s_adv.to_string())));
            }
            row.extend(values(&data.instances()[s.index]));
            match adv {
                Some(adv) => row.extend(values(&adv.perturbed)),
                None => row.extend(std::iter::repeat_n(String::new(), fs.len())),
            }
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    let out = a.run.out.as_deref();
    emit(out, "samples.csv", &csv, out.is_some())?;
    emit(out, "report.json", &json_bytes(&report)?, true)
}

#[derive(Serialize)]
struct MetricsSummary {
    instances: usize,
    rbo_p: f64,
    consistency: f64,
    spearman: Option<metrics::Aggregate>,
    kendall_tau: Option<metrics::Aggregate>,
    rbo: Option<metrics::Aggregate>,
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    if !(a.rbo_p > 0.0 && a.rbo_p < 1.0) {
        return Err(usage("--rbo-p must lie in (0, 1)"));
    }
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, model.feature_space())?;
    let fs = model.feature_space();
    let text = read(&a.rankings)?;
    let is_json = a.rankings.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || text.trim_start().starts_with('[');
    let external = if is_json {
        metrics::parse_rankings_json(&text, fs)?
    } else {
        metrics::parse_rankings_csv(text.as_bytes(), fs)?
    };

    let encoded = encode_ensemble(&model);
    let rows: Vec<usize> = (0..data.len()).collect();
    let order: OrderPolicy = a.order.into();
    // two independent runs, as a determinism check
    let first = formal_rankings(&explain_rows(&encoded, &data, &rows, order, scale(&a.run))?, fs);
    let second = formal_rankings(&explain_rows(&encoded, &data, &rows, order, scale(&a.run))?, fs);
    let consistency = consistency(&first, &second)?;
    let report = compare(&first, &external, a.rbo_p)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let summary = MetricsSummary {
        instances: report.rows.len(),
        rbo_p: a.rbo_p,
        consistency,
        spearman: report.spearman,
        kendall_tau: report.kendall_tau,
        rbo: report.rbo,
    };
    let out = a.run.out.as_deref();
    emit(out, "metrics.csv", &csv, true)?;
    emit(out, "metrics_summary.json", &json_bytes(&summary)?, false)
}
