//! End-to-end drivers: plan layouts for benchmark conditions through a
//! completion backend, then score prediction files against their benchmark.
//!
//! Planning runs retrieve exemplars, assemble the prompt, request completions,
//! parse them tolerantly, and clamp the result onto the canvas. Every sample
//! becomes one prediction line carrying enough provenance (prompt and
//! completion digests, exemplar indices, warning tags) to audit the run
//! afterwards; a manifest captures the configuration so a run can be replayed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, GenerationParams};
use crate::bench::{BenchTask, PromptRecord};
use crate::dsl::parse;
use crate::embed::TextEmbedder;
use crate::error::{Error, Result};
use crate::eval2d::{CountVector, EvalReport2D, ScoredRecord2D, SpatialCase};
use crate::eval3d::{
    kl_divergence, min_scene_difference, oob_rate, scene_in_meters, CategoryDistribution,
    EvalReport3D, FloorPlan, SceneDifferenceSummary, DEFAULT_KL_SMOOTHING,
};
use crate::model::{ConditionKind, ConditionText, Layout};
use crate::prompt::{build, PromptConfig};
use crate::records::LayoutRecord;
use crate::retrieval::{select_with_embedder, SelectionMode, SelectionPolicy, SupportSet};

/// Hex SHA-256 of a text, used to fingerprint prompts and completions.
pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(out, "{byte:02x}");
    }
    out
}

// ── Plan inputs ──────────────────────────────────────────────────────────────

/// One condition to plan a layout for, optionally with a partial layout whose
/// elements the completion must extend (scene completion).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanInput {
    pub id: String,
    pub condition: ConditionText,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prefix: Option<Layout>,
}

/// Plan inputs for benchmark prompt records.
pub fn plan_inputs_from_prompts(records: &[PromptRecord]) -> Result<Vec<PlanInput>> {
    records
        .iter()
        .map(|r| {
            Ok(PlanInput {
                id: r.id.clone(),
                condition: ConditionText::caption(&r.text)?,
                prefix: None,
            })
        })
        .collect()
}

/// Plan inputs for layout records (3D scenes). With `as_prefix` the stored
/// layout seeds a completion instead of being discarded.
pub fn plan_inputs_from_layout_records(records: &[LayoutRecord], as_prefix: bool) -> Vec<PlanInput> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| PlanInput {
            id: r.id.clone().unwrap_or_else(|| i.to_string()),
            condition: r.layout.condition.clone(),
            prefix: as_prefix.then(|| r.layout.clone()),
        })
        .collect()
}

// ── Prediction records ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStatus {
    Ok,
    ParseFailed,
    BackendError,
}

/// One generated sample for one benchmark record, with its audit trail.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub record_id: String,
    pub sample_index: u32,
    pub status: PredictionStatus,
    pub prompt_sha256: String,
    pub completion_sha256: String,
    /// Raw completion text exactly as the backend returned it.
    pub raw: String,
    /// Parse warning tags for this sample.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    /// Support-set indices of the exemplars shown in the prompt.
    pub exemplar_indices: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layout: Option<Layout>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Writes prediction lines as JSON-lines.
pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<()> {
    crate::records::write_jsonl(path, predictions)
}

/// Reads prediction lines back.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    crate::records::read_jsonl(path)
}

// ── Run manifest ─────────────────────────────────────────────────────────────

/// Final status of one planned record: the worst status across its samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordStatus {
    pub id: String,
    pub status: PredictionStatus,
}

/// What a run was and what it touched, written next to its outputs. Timing is
/// the only field allowed to differ between reruns of the same configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub backend: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub records: Vec<RecordStatus>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aborted: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing_ms: Option<u64>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64, backend: impl Into<String>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            seed,
            backend: backend.into(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            records: Vec::new(),
            aborted: None,
            timing_ms: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The manifest as JSON with timing removed, for comparing reruns.
    pub fn determinism_view(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("timing_ms");
        }
        value
    }
}

// ── Planning ─────────────────────────────────────────────────────────────────

/// Everything a planning run needs beyond its inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanConfig {
    pub prompt: PromptConfig,
    pub policy: SelectionPolicy,
    pub params: GenerationParams,
    /// Worker threads; record order in the output always matches the input.
    pub jobs: usize,
    /// Clamp parsed elements onto the canvas (on by default).
    pub clamp: bool,
}

impl PlanConfig {
    pub fn new(prompt: PromptConfig, policy: SelectionPolicy, params: GenerationParams) -> Self {
        PlanConfig { prompt, policy, params, jobs: 1, clamp: true }
    }
}

/// Result of a planning run. `aborted` carries the fatal backend message when
/// the run stopped early; everything planned before the stop is retained.
#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub predictions: Vec<PredictionRecord>,
    pub statuses: Vec<RecordStatus>,
    pub aborted: Option<String>,
}

struct RecordOutcome {
    predictions: Vec<PredictionRecord>,
    status: RecordStatus,
    fatal: Option<String>,
}

/// Plans one record: retrieve, build, complete, parse, clamp.
fn plan_one(
    input: &PlanInput,
    support: &SupportSet,
    backend: &dyn Backend,
    embedder: &dyn TextEmbedder,
    config: &PlanConfig,
) -> Result<RecordOutcome> {
    let mut prompt_config = config.prompt.clone();
    if let Some(prefix) = &input.prefix {
        prompt_config.completion_prefix = Some(prefix.clone());
    }
    let exemplars = select_with_embedder(&input.condition, support, &config.policy, embedder)?;
    let exemplar_indices: Vec<usize> =
        exemplars.exemplars.iter().map(|e| e.support_index).collect();
    let prompt = build(&input.condition, &exemplars, &prompt_config)?;
    let prompt_sha256 = sha256_hex(&prompt.plain_text);

    match backend.complete(&prompt, &config.params) {
        Err(e) => {
            let message = e.to_string();
            Ok(RecordOutcome {
                predictions: vec![PredictionRecord {
                    record_id: input.id.clone(),
                    sample_index: 0,
                    status: PredictionStatus::BackendError,
                    prompt_sha256,
                    completion_sha256: sha256_hex(""),
                    raw: String::new(),
                    warnings: Vec::new(),
                    exemplar_indices,
                    layout: None,
                    error: Some(message.clone()),
                }],
                status: RecordStatus { id: input.id.clone(), status: PredictionStatus::BackendError },
                fatal: Some(message),
            })
        }
        Ok(texts) => {
            let mut predictions = Vec::with_capacity(texts.len());
            let mut any_failed = false;
            for (sample_index, text) in texts.iter().enumerate() {
                let outcome = parse(text, &prompt_config.dialect_spec, &prompt_config.canvas);
                let layout = if outcome.failed {
                    any_failed = true;
                    None
                } else {
                    let mut layout = outcome.layout;
                    layout.condition = input.condition.clone();
                    if config.clamp {
                        layout = layout.clamp_to_canvas().0;
                    }
                    Some(layout)
                };
                predictions.push(PredictionRecord {
                    record_id: input.id.clone(),
                    sample_index: sample_index as u32,
                    status: if outcome.failed {
                        PredictionStatus::ParseFailed
                    } else {
                        PredictionStatus::Ok
                    },
                    prompt_sha256: prompt_sha256.clone(),
                    completion_sha256: sha256_hex(text),
                    raw: text.clone(),
                    warnings: outcome.warnings.iter().map(|w| w.kind().to_string()).collect(),
                    exemplar_indices: exemplar_indices.clone(),
                    layout,
                    error: None,
                });
            }
            let status = if any_failed { PredictionStatus::ParseFailed } else { PredictionStatus::Ok };
            Ok(RecordOutcome {
                predictions,
                status: RecordStatus { id: input.id.clone(), status },
                fatal: None,
            })
        }
    }
}

/// Plans every input in order. Workers pull records concurrently up to
/// `config.jobs`, but results are reassembled in input order, so the output is
/// identical whatever the worker count. A fatal backend error stops the run;
/// records finished before the stop are preserved and the abort reason is
/// reported in the outcome rather than as an `Err`, so callers can still write
/// the partial results.
pub fn plan_records(
    inputs: &[PlanInput],
    support: &mut SupportSet,
    backend: &dyn Backend,
    embedder: &dyn TextEmbedder,
    config: &PlanConfig,
) -> Result<PlanOutcome> {
    config.params.validate().map_err(Error::Backend)?;
    // Caption retrieval compares embeddings, so make sure the support side has
    // them before workers share the set read-only.
    if config.policy.mode == SelectionMode::Retrieval
        && inputs.iter().any(|i| i.condition.kind == ConditionKind::Caption)
    {
        support.ensure_embeddings(embedder, None)?;
    }
    let support = &*support;
    let slots: Vec<Mutex<Option<Result<RecordOutcome>>>> =
        (0..inputs.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let jobs = config.jobs.max(1).min(inputs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let outcome = plan_one(&inputs[i], support, backend, embedder, config);
                let halt = match &outcome {
                    Ok(o) => o.fatal.is_some(),
                    Err(_) => true,
                };
                *slots[i].lock().expect("result slot") = Some(outcome);
                if halt {
                    stop.store(true, Ordering::Relaxed);
                }
            });
        }
    });

    let mut result = PlanOutcome { predictions: Vec::new(), statuses: Vec::new(), aborted: None };
    for slot in slots {
        let Some(outcome) = slot.into_inner().expect("result slot") else {
            // Unprocessed tail after an abort.
            break;
        };
        let outcome = outcome?;
        result.predictions.extend(outcome.predictions);
        result.statuses.push(outcome.status);
        if let Some(message) = outcome.fatal {
            result.aborted = Some(message);
            break;
        }
    }
    Ok(result)
}

// ── Scoring: 2D ──────────────────────────────────────────────────────────────

fn index_predictions<'a>(
    bench_ids: &BTreeSet<&str>,
    predictions: &'a [PredictionRecord],
) -> Result<BTreeMap<&'a str, Vec<&'a PredictionRecord>>> {
    let mut by_id: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    let mut orphans: BTreeSet<&str> = BTreeSet::new();
    for prediction in predictions {
        if bench_ids.contains(prediction.record_id.as_str()) {
            by_id.entry(prediction.record_id.as_str()).or_default().push(prediction);
        } else {
            orphans.insert(prediction.record_id.as_str());
        }
    }
    if !orphans.is_empty() {
        let listed: Vec<&str> = orphans.into_iter().collect();
        return Err(Error::data(format!(
            "predictions reference records missing from the benchmark: {}",
            listed.join(", ")
        )));
    }
    let missing: Vec<&str> =
        bench_ids.iter().copied().filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "benchmark records have no predictions: {}",
            missing.join(", ")
        )));
    }
    Ok(by_id)
}

/// Scores 2D predictions against their benchmark records. Every sample is
/// scored independently; unparsed or errored samples count as failures rather
/// than being dropped. Prediction and benchmark ids must cover each other
/// exactly.
pub fn eval_2d_predictions(
    bench: &[PromptRecord],
    predictions: &[PredictionRecord],
    vocabulary: Option<&BTreeSet<String>>,
) -> Result<EvalReport2D> {
    let by_record: BTreeMap<&str, &PromptRecord> =
        bench.iter().map(|r| (r.id.as_str(), r)).collect();
    let by_id = index_predictions(&by_record.keys().copied().collect(), predictions)?;

    let mut scored = Vec::new();
    for record in bench {
        for prediction in &by_id[record.id.as_str()] {
            let layout = match prediction.status {
                PredictionStatus::Ok => prediction.layout.as_ref(),
                _ => None,
            };
            let pred_counts = layout.map(CountVector::from_layout);
            let subtype = record.subtype.as_str();
            let scored_record = if let Some(label) = &record.gt_relation {
                let case = SpatialCase {
                    relation: label.relation,
                    category_a: label.category_a.clone(),
                    category_b: label.category_b.clone(),
                    prediction: layout.cloned(),
                };
                ScoredRecord2D::spatial(subtype, &record.gt_counts, &case, vocabulary)
            } else if let Some(label) = &record.comparison {
                ScoredRecord2D::comparison(
                    subtype,
                    &record.gt_counts,
                    pred_counts.as_ref(),
                    &label.category_a,
                    &label.category_b,
                    label.relation,
                    vocabulary,
                )
            } else {
                ScoredRecord2D::counting(subtype, &record.gt_counts, pred_counts.as_ref(), vocabulary)
            };
            scored.push(scored_record);
        }
    }

    let tasks: BTreeSet<BenchTask> = bench.iter().map(|r| r.task).collect();
    let task = match (tasks.len(), tasks.into_iter().next()) {
        (1, Some(t)) => t.as_str().to_string(),
        _ => "mixed".to_string(),
    };
    Ok(EvalReport2D::from_records(&task, &scored))
}

// ── Scoring: 3D ──────────────────────────────────────────────────────────────

/// Scores 3D scene predictions against benchmark scenes.
///
/// Out-of-bound is measured per parsed scene against its own room; the
/// category distribution of parsed scenes is compared (KL, natural log, over
/// the union vocabulary of both sides) with the benchmark scenes; when the
/// planning support set is given, each scene's distance to its own prompt
/// exemplars is computed in meters and bucketed, which is how exemplar copying
/// is detected. Unparsed scenes count as parse failures and drop out of the
/// geometric metrics.
pub fn eval_3d_predictions(
    bench: &[LayoutRecord],
    predictions: &[PredictionRecord],
    support: Option<&SupportSet>,
    epsilon_px: f64,
    smoothing: f64,
) -> Result<EvalReport3D> {
    let mut by_record: BTreeMap<&str, &LayoutRecord> = BTreeMap::new();
    for (i, record) in bench.iter().enumerate() {
        let id = record.id.as_deref().ok_or_else(|| {
            Error::data(format!("benchmark record {i} has no id to join predictions against"))
        })?;
        by_record.insert(id, record);
    }
    let by_id = index_predictions(&by_record.keys().copied().collect(), predictions)?;

    let plan_for = |condition: &ConditionText| -> Result<FloorPlan> {
        FloorPlan::from_condition(condition)
    };

    let mut scenes = 0u64;
    let mut parse_failures = 0u64;
    let mut kept: Vec<(Layout, FloorPlan)> = Vec::new();
    let mut differences: Vec<f64> = Vec::new();
    let mut predicted_counts: BTreeMap<String, u64> = BTreeMap::new();

    for record in bench {
        let id = record.id.as_deref().expect("checked above");
        let plan = plan_for(&record.layout.condition)?;
        for prediction in &by_id[id] {
            scenes += 1;
            let Some(layout) = (match prediction.status {
                PredictionStatus::Ok => prediction.layout.as_ref(),
                _ => None,
            }) else {
                parse_failures += 1;
                continue;
            };
            for (category, count) in layout.category_counts() {
                *predicted_counts.entry(category).or_insert(0) += u64::from(count);
            }
            if let Some(support) = support {
                let generated = scene_in_meters(layout, &plan)?;
                let mut exemplars = Vec::new();
                for &index in &prediction.exemplar_indices {
                    let exemplar = support.records().get(index).ok_or_else(|| {
                        Error::data(format!(
                            "prediction {} references support index {index} beyond the support set",
                            prediction.record_id
                        ))
                    })?;
                    let exemplar_plan = plan_for(&exemplar.layout.condition)?;
                    exemplars.push(scene_in_meters(&exemplar.layout, &exemplar_plan)?);
                }
                if !exemplars.is_empty() {
                    differences.push(min_scene_difference(&generated, &exemplars)?);
                }
            }
            kept.push((layout.clone(), plan));
        }
    }

    let out_of_bound_rate = if kept.is_empty() {
        0.0
    } else {
        oob_rate(kept.iter().map(|(layout, plan)| (layout, plan)), epsilon_px)?
    };

    let mut gt_counts: BTreeMap<String, u64> = BTreeMap::new();
    for record in bench {
        for (category, count) in record.layout.category_counts() {
            *gt_counts.entry(category).or_insert(0) += u64::from(count);
        }
    }
    let vocabulary: BTreeSet<&str> = gt_counts
        .keys()
        .chain(predicted_counts.keys())
        .map(String::as_str)
        .collect();
    let category_kl = if gt_counts.values().sum::<u64>() == 0
        || predicted_counts.values().sum::<u64>() == 0
    {
        None
    } else {
        let to_pairs = |counts: &BTreeMap<String, u64>| -> Vec<(String, u64)> {
            counts.iter().map(|(k, &v)| (k.clone(), v)).collect()
        };
        let gt_pairs = to_pairs(&gt_counts);
        let pred_pairs = to_pairs(&predicted_counts);
        let gt_dist = CategoryDistribution::from_counts(
            gt_pairs.iter().map(|(k, v)| (k.as_str(), *v)),
            vocabulary.iter().copied(),
        )?;
        let pred_dist = CategoryDistribution::from_counts(
            pred_pairs.iter().map(|(k, v)| (k.as_str(), *v)),
            vocabulary.iter().copied(),
        )?;
        Some(kl_divergence(&gt_dist, &pred_dist, smoothing)?)
    };

    Ok(EvalReport3D::new(
        scenes,
        parse_failures,
        out_of_bound_rate,
        category_kl,
        SceneDifferenceSummary::from_differences(differences),
    ))
}

/// [`eval_3d_predictions`] with the default smoothing.
pub fn eval_3d_predictions_default(
    bench: &[LayoutRecord],
    predictions: &[PredictionRecord],
    support: Option<&SupportSet>,
    epsilon_px: f64,
) -> Result<EvalReport3D> {
    eval_3d_predictions(bench, predictions, support, epsilon_px, DEFAULT_KL_SMOOTHING)
}
