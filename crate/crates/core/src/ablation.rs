//! Ablation driver: runs the same benchmark through every combination of the
//! three prompt components (task instruction, CSS formatting, integer
//! normalization), plus optional exemplar-count sweeps, and tabulates the
//! scores side by side.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, GenerationParams};
use crate::bench::PromptRecord;
use crate::dsl::DialectSpec;
use crate::embed::TextEmbedder;
use crate::error::Result;
use crate::model::{CanvasSpec, Dialect};
use crate::pipeline::{eval_2d_predictions, plan_records, PlanConfig, PredictionStatus};
use crate::prompt::PromptConfig;
use crate::retrieval::{SelectionPolicy, SupportSet};

// ── Variants ─────────────────────────────────────────────────────────────────

/// One grid cell: which prompt components are on, and how many exemplars.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub label: String,
    pub instruction: bool,
    pub css: bool,
    pub normalization: bool,
    pub k: usize,
}

impl PromptVariant {
    fn flags(instruction: bool, css: bool, normalization: bool, k: usize) -> Self {
        let name = |on: bool, tag: &str| if on { format!("+{tag}") } else { format!("-{tag}") };
        PromptVariant {
            label: format!(
                "{}{}{}",
                name(instruction, "instr"),
                name(css, "css"),
                name(normalization, "norm")
            ),
            instruction,
            css,
            normalization,
            k,
        }
    }

    /// The prompt configuration this variant stands for.
    pub fn prompt_config(&self, dialect: Dialect, canvas: CanvasSpec) -> PromptConfig {
        PromptConfig::ablation(dialect, canvas, self.instruction, self.css, self.normalization)
    }
}

/// The full experiment: the 2^3 component grid at a base exemplar count, plus
/// one extra all-components-on row per swept exemplar count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationGrid {
    pub dialect: Dialect,
    pub canvas: CanvasSpec,
    pub policy: SelectionPolicy,
    pub params: GenerationParams,
    /// Extra exemplar counts to try with all components on.
    pub k_sweep: Vec<usize>,
    pub jobs: usize,
}

impl AblationGrid {
    pub fn new(
        dialect: Dialect,
        canvas: CanvasSpec,
        policy: SelectionPolicy,
        params: GenerationParams,
    ) -> Self {
        AblationGrid { dialect, canvas, policy, params, k_sweep: Vec::new(), jobs: 1 }
    }

    /// Exactly the eight on/off combinations of the three components.
    pub fn flag_variants(&self) -> Vec<PromptVariant> {
        let mut variants = Vec::with_capacity(8);
        for instruction in [true, false] {
            for css in [true, false] {
                for normalization in [true, false] {
                    variants.push(PromptVariant::flags(instruction, css, normalization, self.policy.k));
                }
            }
        }
        variants
    }

    /// Flag variants followed by the exemplar-count sweep rows.
    pub fn all_variants(&self) -> Vec<PromptVariant> {
        let mut variants = self.flag_variants();
        for &k in &self.k_sweep {
            let mut v = PromptVariant::flags(true, true, true, k);
            v.label = format!("k={k}");
            variants.push(v);
        }
        variants
    }
}

// ── Running ──────────────────────────────────────────────────────────────────

/// Scores of one finished variant, lifted from the evaluation's overall row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub samples: u64,
    /// Percent of samples that failed to parse.
    pub parse_failure_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub counting_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comparison_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spatial_accuracy: Option<f64>,
}

/// One table row: either metrics or the error that stopped the variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: PromptVariant,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<VariantMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Runs every variant of the grid over the benchmark and returns one row per
/// variant, in grid order. A variant that fails is reported in its row and
/// does not stop the others. Support embeddings are computed once up front and
/// shared by all variants, which is what makes an 8-cell grid affordable.
///
/// `make_backend` builds the backend for one variant's dialect spec; the mock
/// backend needs this because it must echo completions in the same format the
/// variant's parser expects, while an HTTP factory can ignore the spec.
pub fn run_grid(
    bench: &[PromptRecord],
    support: &mut SupportSet,
    make_backend: &(dyn Fn(&DialectSpec) -> std::result::Result<Box<dyn Backend>, BackendError>
          + Sync),
    embedder: &dyn TextEmbedder,
    grid: &AblationGrid,
) -> Result<Vec<VariantOutcome>> {
    support.ensure_embeddings(embedder, None)?;
    let inputs = crate::pipeline::plan_inputs_from_prompts(bench)?;

    let mut rows = Vec::new();
    for variant in grid.all_variants() {
        let mut run = || -> Result<VariantMetrics> {
            let prompt = variant.prompt_config(grid.dialect, grid.canvas.clone());
            let backend = make_backend(&prompt.dialect_spec).map_err(crate::error::Error::Backend)?;
            let mut policy = grid.policy;
            policy.k = variant.k;
            let mut config = PlanConfig::new(prompt, policy, grid.params.clone());
            config.jobs = grid.jobs;
            let outcome = plan_records(&inputs, support, backend.as_ref(), embedder, &config)?;
            if let Some(message) = outcome.aborted {
                return Err(crate::error::Error::data(format!("variant aborted: {message}")));
            }
            let report = eval_2d_predictions(bench, &outcome.predictions, None)?;
            let samples = outcome.predictions.len() as u64;
            let failures = outcome
                .predictions
                .iter()
                .filter(|p| p.status != PredictionStatus::Ok)
                .count() as u64;
            Ok(VariantMetrics {
                samples,
                parse_failure_rate: if samples == 0 {
                    0.0
                } else {
                    100.0 * failures as f64 / samples as f64
                },
                precision: report.overall.precision,
                recall: report.overall.recall,
                counting_accuracy: report.overall.counting_accuracy,
                comparison_accuracy: report.overall.comparison_accuracy,
                spatial_accuracy: report.overall.spatial_accuracy,
            })
        };
        let row = match run() {
            Ok(metrics) => VariantOutcome { variant, metrics: Some(metrics), error: None },
            Err(e) => VariantOutcome { variant, metrics: None, error: Some(e.to_string()) },
        };
        rows.push(row);
    }
    Ok(rows)
}

// ── Tables ───────────────────────────────────────────────────────────────────

fn cell(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.2}")).unwrap_or_default()
}

const COLUMNS: [&str; 12] = [
    "label",
    "instruction",
    "css",
    "normalization",
    "k",
    "samples",
    "parse_failure_rate",
    "precision",
    "recall",
    "counting_accuracy",
    "comparison_accuracy",
    "spatial_accuracy",
];

fn row_cells(row: &VariantOutcome) -> Vec<String> {
    let v = &row.variant;
    let m = row.metrics.as_ref();
    vec![
        v.label.clone(),
        v.instruction.to_string(),
        v.css.to_string(),
        v.normalization.to_string(),
        v.k.to_string(),
        m.map(|m| m.samples.to_string()).unwrap_or_default(),
        cell(m.map(|m| m.parse_failure_rate)),
        cell(m.map(|m| m.precision)),
        cell(m.map(|m| m.recall)),
        cell(m.map(|m| m.counting_accuracy)),
        cell(m.and_then(|m| m.comparison_accuracy)),
        cell(m.and_then(|m| m.spatial_accuracy)),
    ]
}

/// The result table as CSV, one line per variant. A failed variant leaves its
/// metric cells empty and appends the error in a trailing column.
pub fn grid_csv(rows: &[VariantOutcome]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},error", COLUMNS.join(","));
    for row in rows {
        let mut cells = row_cells(row);
        cells.push(row.error.clone().unwrap_or_default().replace(',', ";"));
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// The result table as a Markdown pipe table.
pub fn grid_markdown(rows: &[VariantOutcome]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} | error |", COLUMNS.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(COLUMNS.len() + 1));
    for row in rows {
        let mut cells = row_cells(row);
        cells.push(row.error.clone().unwrap_or_default());
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}
