//! Prompt assembly: task instruction, serialized exemplars, and the test
//! condition stub, in both plain-text and chat-turn form.
//!
//! Layout shape (blocks separated by one blank line):
//!
//! ```text
//! Instruction:
//! <task instruction>
//!
//! Prompt: <exemplar condition>
//! Layout:
//! <serialized exemplar layout>
//!
//! Prompt: <test condition>
//! Layout:
//! ```
//!
//! The keypoint dialect uses `Keypoints:` in place of `Layout:`.

use serde::{Deserialize, Serialize};

use crate::dsl::{serialize, DialectSpec};
use crate::error::{Error, Result};
use crate::model::{CanvasSpec, ConditionKind, ConditionText, Dialect, Layout};
use crate::retrieval::ExemplarSet;

/// Default instruction templates. They ship as editable files under
/// `templates/` and are compiled in for out-of-the-box use; a custom
/// template path can replace them via [`PromptConfig::instruction_template`].
pub fn default_template(dialect: Dialect) -> &'static str {
    match dialect {
        Dialect::Image2D => include_str!("../templates/instruction_image2d.txt"),
        Dialect::Scene3D => include_str!("../templates/instruction_scene3d.txt"),
        Dialect::Keypoint => include_str!("../templates/instruction_keypoint.txt"),
    }
}

// ── Furniture vocabulary ──────────────────────────────────────────────

/// Category list plus normalized frequency distribution, rendered into the
/// 3D instruction. Entries keep their given order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurnitureVocabulary {
    entries: Vec<(String, f64)>,
}

impl FurnitureVocabulary {
    /// Frequencies must sum to 1 within 1e-3: published distributions are
    /// rounded to 4 decimals, so an exact-sum requirement would reject them.
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid_argument("furniture vocabulary must be nonempty"));
        }
        let sum: f64 = entries.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::invalid_argument(format!(
                "furniture frequencies must sum to 1, got {sum}"
            )));
        }
        Ok(FurnitureVocabulary { entries })
    }

    /// The 22-category bedroom vocabulary with its overall frequencies.
    pub fn bedroom_defaults() -> Self {
        let entries = [
            ("armchair", 0.0045),
            ("bookshelf", 0.0076),
            ("cabinet", 0.0221),
            ("ceiling_lamp", 0.062),
            ("chair", 0.024),
            ("children_cabinet", 0.0075),
            ("coffee_table", 0.0013),
            ("desk", 0.0172),
            ("double_bed", 0.1682),
            ("dressing_chair", 0.0063),
            ("dressing_table", 0.0213),
            ("floor_lamp", 0.0093),
            ("kids_bed", 0.0079),
            ("nightstand", 0.2648),
            ("pendant_lamp", 0.1258),
            ("shelf", 0.0086),
            ("single_bed", 0.0211),
            ("sofa", 0.0018),
            ("stool", 0.012),
            ("table", 0.0201),
            ("tv_stand", 0.0308),
            ("wardrobe", 0.1557),
        ];
        FurnitureVocabulary {
            entries: entries.iter().map(|(c, f)| ((*c).to_string(), *f)).collect(),
        }
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(c, _)| c.as_str())
    }

    pub fn contains(&self, category: &str) -> bool {
        self.entries.iter().any(|(c, _)| c == category)
    }

    fn render_list(&self) -> String {
        self.entries.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>().join(", ")
    }

    fn render_frequencies(&self) -> String {
        self.entries
            .iter()
            .map(|(c, f)| format!("{c}: {f}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

// ── Config ────────────────────────────────────────────────────────────

/// Everything build() needs besides the condition and exemplars. The three
/// ablation toggles live here: `include_instruction`, the dialect spec's
/// CSS flag, and `include_normalization` (kept in sync with the dialect
/// spec's value-format flag by the constructors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub dialect_spec: DialectSpec,
    pub include_instruction: bool,
    pub include_normalization: bool,
    pub instruction_template: String,
    pub canvas: CanvasSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub furniture_vocabulary: Option<FurnitureVocabulary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_prefix: Option<Layout>,
    /// Permit building with zero exemplars.
    #[serde(default)]
    pub allow_zero_shot: bool,
    /// Flag the assembled prompt when it exceeds this many characters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_budget: Option<usize>,
}

impl PromptConfig {
    /// Standard configuration: CSS, normalized pixels, instruction on.
    pub fn standard(dialect: Dialect, canvas: CanvasSpec) -> Self {
        PromptConfig {
            dialect_spec: DialectSpec::css(dialect),
            include_instruction: true,
            include_normalization: true,
            instruction_template: default_template(dialect).to_string(),
            canvas,
            furniture_vocabulary: None,
            completion_prefix: None,
            allow_zero_shot: false,
            char_budget: None,
        }
    }

    /// One cell of the instruction x CSS x normalization ablation grid.
    pub fn ablation(
        dialect: Dialect,
        canvas: CanvasSpec,
        instruction: bool,
        css: bool,
        normalization: bool,
    ) -> Self {
        let mut cfg = Self::standard(dialect, canvas);
        cfg.include_instruction = instruction;
        cfg.include_normalization = normalization;
        cfg.dialect_spec = DialectSpec::new(dialect, css, normalization);
        cfg
    }
}

// ── Assembled prompt ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
}

/// The finished prompt in both forms. Chat turns carry the same content as
/// `plain_text`; flattening them differs only in the blank lines between
/// blocks (turn boundaries separate blocks with a single newline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub plain_text: String,
    pub chat_turns: Vec<ChatTurn>,
    /// True when the plain text exceeded the configured character budget.
    #[serde(default)]
    pub over_budget: bool,
}

// ── Rendering ─────────────────────────────────────────────────────────

/// Substitute `{canvas_w}`, `{canvas_h}`, `{canvas_max}`, `{vocab}`, and
/// `{freqs}` in an instruction template. Lines using the vocabulary
/// placeholders are dropped entirely when no vocabulary is given.
pub fn render_template(
    template: &str,
    canvas: &CanvasSpec,
    vocab: Option<&FurnitureVocabulary>,
) -> String {
    let mut out = Vec::new();
    for line in template.lines() {
        let uses_vocab = line.contains("{vocab}") || line.contains("{freqs}");
        if uses_vocab && vocab.is_none() {
            continue;
        }
        let mut rendered = line
            .replace("{canvas_w}", &canvas.width_px.to_string())
            .replace("{canvas_h}", &canvas.height_px.to_string())
            .replace("{canvas_max}", &canvas.max_extent_px().to_string());
        if let Some(v) = vocab {
            rendered = rendered
                .replace("{vocab}", &v.render_list())
                .replace("{freqs}", &v.render_frequencies());
        }
        out.push(rendered);
    }
    // Drop blank lines orphaned by removed vocabulary sections.
    while out.last().is_some_and(|l| l.trim().is_empty()) {
        out.pop();
    }
    out.join("\n")
}

/// The dialect's default instruction rendered for a canvas.
pub fn render_instruction(
    spec: &DialectSpec,
    canvas: &CanvasSpec,
    vocab: Option<&FurnitureVocabulary>,
) -> String {
    render_template(default_template(spec.dialect), canvas, vocab)
}

/// Render a condition for its `Prompt:` line. Captions pass through; room
/// specs render as "Room Type: T, Room Size: max length Lpx, max width Wpx"
/// with meters scaled so the room's larger side spans the canvas extent
/// (or by the canvas's own scale when it carries one).
pub fn render_condition(condition: &ConditionText, canvas: &CanvasSpec) -> Result<String> {
    match condition.kind {
        ConditionKind::Caption => Ok(condition.text.clone()),
        ConditionKind::RoomSpec => {
            let (length_m, width_m) = condition
                .room_dims()
                .ok_or_else(|| Error::invalid_argument("room_spec condition missing dimensions"))?;
            let scale = canvas.meters_per_canvas.unwrap_or_else(|| length_m.max(width_m));
            let max_px = canvas.max_extent_px();
            let length_px = crate::model::normalize(length_m, scale, max_px)?.round();
            let width_px = crate::model::normalize(width_m, scale, max_px)?.round();
            Ok(format!(
                "Room Type: {}, Room Size: max length {}px, max width {}px",
                condition.text, length_px as i64, width_px as i64
            ))
        }
    }
}

fn exemplar_block(
    condition: &ConditionText,
    layout: &Layout,
    spec: &DialectSpec,
) -> Result<(String, String)> {
    let header = format!("Prompt: {}\n{}", render_condition(condition, &layout.canvas)?, spec.layout_header());
    let body = serialize(&layout.quantize(spec.quantize_mode()), spec)?;
    Ok((header, body))
}

/// Assemble the full prompt for one test condition.
///
/// Exemplars keep their given order (most similar last). Deterministic:
/// identical inputs produce byte-identical output.
pub fn build(
    condition: &ConditionText,
    exemplars: &ExemplarSet,
    cfg: &PromptConfig,
) -> Result<AssembledPrompt> {
    if exemplars.is_empty() && !cfg.allow_zero_shot {
        return Err(Error::invalid_argument(
            "no exemplars given and zero-shot not explicitly allowed",
        ));
    }
    let spec = &cfg.dialect_spec;
    for ex in &exemplars.exemplars {
        if ex.layout.dialect != spec.dialect {
            return Err(Error::DialectMismatch {
                expected: spec.dialect.as_str().to_string(),
                found: ex.layout.dialect.as_str().to_string(),
            });
        }
    }
    if let Some(prefix) = &cfg.completion_prefix {
        if prefix.dialect != spec.dialect {
            return Err(Error::DialectMismatch {
                expected: spec.dialect.as_str().to_string(),
                found: prefix.dialect.as_str().to_string(),
            });
        }
    }

    let instruction = if cfg.include_instruction {
        Some(render_template(
            &cfg.instruction_template,
            &cfg.canvas,
            cfg.furniture_vocabulary.as_ref(),
        ))
    } else {
        None
    };

    // The test stub stays open after its header so the completion continues
    // it; a scene-completion prefix appends its lines with no terminator.
    let mut test_stub = format!(
        "Prompt: {}\n{}",
        render_condition(condition, &cfg.canvas)?,
        spec.layout_header()
    );
    if let Some(prefix) = &cfg.completion_prefix {
        let body = serialize(&prefix.quantize(spec.quantize_mode()), spec)?;
        if !body.is_empty() {
            test_stub.push('\n');
            test_stub.push_str(&body);
        }
    }

    let mut blocks: Vec<String> = Vec::new();
    if let Some(text) = &instruction {
        blocks.push(text.clone());
    }
    let mut exemplar_parts: Vec<(String, String)> = Vec::with_capacity(exemplars.len());
    for ex in &exemplars.exemplars {
        let (header, body) = exemplar_block(&ex.condition, &ex.layout, spec)?;
        blocks.push(if body.is_empty() { header.clone() } else { format!("{header}\n{body}") });
        exemplar_parts.push((header, body));
    }
    blocks.push(test_stub.clone());
    let plain_text = blocks.join("\n\n");

    // Chat form: instruction rides in the first user turn; each exemplar is
    // a user turn (condition + open header) answered by an assistant turn
    // (layout body); the test stub is the final user turn.
    let mut chat_turns: Vec<ChatTurn> = Vec::new();
    let mut pending_instruction = instruction;
    for (header, body) in exemplar_parts {
        let user_text = match pending_instruction.take() {
            Some(instr) => format!("{instr}\n\n{header}"),
            None => header,
        };
        chat_turns.push(ChatTurn { role: ChatRole::User, text: user_text });
        chat_turns.push(ChatTurn { role: ChatRole::Assistant, text: body });
    }
    let final_user = match pending_instruction.take() {
        Some(instr) => format!("{instr}\n\n{test_stub}"),
        None => test_stub,
    };
    chat_turns.push(ChatTurn { role: ChatRole::User, text: final_user });

    let over_budget = cfg.char_budget.is_some_and(|b| plain_text.chars().count() > b);
    Ok(AssembledPrompt { plain_text, chat_turns, over_budget })
}
