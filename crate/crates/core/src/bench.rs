//! Benchmark construction: turns COCO-format annotations into counting and
//! spatial prompt records with ground-truth layouts.
//!
//! Records come in two tasks. Counting prompts are either rendered from fixed
//! sentence templates over the box annotations or lifted verbatim from
//! captions that mention a small number; spatial prompts describe where one
//! object sits relative to another, again via a template or a caption whose
//! phrasing agrees with the annotated geometry. Every emitted record carries
//! its ground-truth layout on the shared 64px canvas, so labels can always be
//! re-derived from the stored geometry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval2d::{
    classify_relation, spatial_case_correct, ComparisonRelation, CountVector, SpatialCase,
    SpatialRelation,
};
use crate::model::{normalize_category, CanvasSpec, ConditionText, Dialect, Element, Element2D,
    Layout, QuantizeMode};
use crate::records::write_jsonl;

// ── Source annotations ───────────────────────────────────────────────────────

/// One labeled box in source image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceBox {
    pub category: String,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

/// One annotated image: its captions plus its box annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub captions: Vec<String>,
    pub boxes: Vec<SourceBox>,
    pub image_width: u32,
    pub image_height: u32,
}

impl AnnotationRecord {
    /// Distinct categories with their box counts.
    pub fn category_counts(&self) -> BTreeMap<String, u32> {
        let mut counts = BTreeMap::new();
        for b in &self.boxes {
            *counts.entry(normalize_category(&b.category)).or_insert(0u32) += 1;
        }
        counts
    }
}

// ── COCO ingestion ───────────────────────────────────────────────────────────

#[derive(Deserialize)]
struct CocoInstances {
    images: Vec<CocoImage>,
    annotations: Vec<CocoBoxAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoBoxAnnotation {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct CocoCaptions {
    annotations: Vec<CocoCaptionAnnotation>,
}

#[derive(Deserialize)]
struct CocoCaptionAnnotation {
    image_id: u64,
    caption: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Loads COCO instance annotations, optionally joined with a captions file.
///
/// Group ("crowd") boxes are skipped because they stand for an unknown number
/// of objects and would corrupt the counts; images left without any individual
/// box are dropped entirely. Records come back sorted by image id so the rest
/// of the build is deterministic.
pub fn load_coco(instances_path: &Path, captions_path: Option<&Path>) -> Result<Vec<AnnotationRecord>> {
    let instances: CocoInstances = read_json(instances_path)?;
    let category_names: BTreeMap<u64, String> = instances
        .categories
        .into_iter()
        .map(|c| (c.id, normalize_category(&c.name)))
        .collect();

    let mut records: BTreeMap<u64, AnnotationRecord> = instances
        .images
        .into_iter()
        .map(|img| {
            (
                img.id,
                AnnotationRecord {
                    image_id: img.id,
                    captions: Vec::new(),
                    boxes: Vec::new(),
                    image_width: img.width,
                    image_height: img.height,
                },
            )
        })
        .collect();

    for ann in instances.annotations {
        if ann.iscrowd != 0 {
            continue;
        }
        let category = category_names.get(&ann.category_id).ok_or_else(|| {
            Error::data(format!(
                "{}: annotation references unknown category id {}",
                instances_path.display(),
                ann.category_id
            ))
        })?;
        let record = records.get_mut(&ann.image_id).ok_or_else(|| {
            Error::data(format!(
                "{}: annotation references unknown image id {}",
                instances_path.display(),
                ann.image_id
            ))
        })?;
        let [left, top, width, height] = ann.bbox;
        record.boxes.push(SourceBox {
            category: category.clone(),
            left,
            top,
            width,
            height,
        });
    }

    if let Some(captions_path) = captions_path {
        let captions: CocoCaptions = read_json(captions_path)?;
        for ann in captions.annotations {
            if let Some(record) = records.get_mut(&ann.image_id) {
                record.captions.push(ann.caption.trim().to_string());
            }
        }
    }

    Ok(records
        .into_values()
        .filter(|r| !r.boxes.is_empty() && r.image_width > 0 && r.image_height > 0)
        .collect())
}

// ── English rendering helpers ────────────────────────────────────────────────

const NUMBER_WORDS: [&str; 5] = ["one", "two", "three", "four", "five"];

/// The English word for a small count, if it is in the supported 1..=5 range.
pub fn number_word(n: u32) -> Option<&'static str> {
    NUMBER_WORDS.get(n.checked_sub(1)? as usize).copied()
}

/// Pluralizes a category name by its last word: a small irregular table, the
/// usual sibilant/-y endings, then a plain "s".
pub fn pluralize(category: &str) -> String {
    const IRREGULAR: [(&str, &str); 8] = [
        ("person", "people"),
        ("mouse", "mice"),
        ("knife", "knives"),
        ("leaf", "leaves"),
        ("sheep", "sheep"),
        ("scissors", "scissors"),
        ("skis", "skis"),
        ("child", "children"),
    ];
    let trimmed = category.trim();
    let (prefix, last) = match trimmed.rfind(' ') {
        Some(pos) => (&trimmed[..=pos], &trimmed[pos + 1..]),
        None => ("", trimmed),
    };
    for (singular, plural) in IRREGULAR {
        if last.eq_ignore_ascii_case(singular) {
            return format!("{prefix}{plural}");
        }
    }
    let plural_last = if last.ends_with('s')
        || last.ends_with('x')
        || last.ends_with('z')
        || last.ends_with("ch")
        || last.ends_with("sh")
    {
        format!("{last}es")
    } else if last.len() >= 2
        && last.ends_with('y')
        && !matches!(
            last.as_bytes()[last.len() - 2],
            b'a' | b'e' | b'i' | b'o' | b'u'
        )
    {
        format!("{}ies", &last[..last.len() - 1])
    } else {
        format!("{last}s")
    };
    format!("{prefix}{plural_last}")
}

/// "a" or "an", by the crude vowel-initial heuristic.
pub fn indefinite_article(noun: &str) -> &'static str {
    match noun.trim().chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    }
}

/// "one giraffe", "two giraffes", ...
fn counted(n: u32, category: &str) -> String {
    let word = number_word(n).expect("counts are pre-filtered to 1..=5");
    if n == 1 {
        format!("{word} {category}")
    } else {
        format!("{word} {}", pluralize(category))
    }
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

// ── Prompt records ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchTask {
    Numerical,
    Spatial,
}

impl BenchTask {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchTask::Numerical => "numerical",
            BenchTask::Spatial => "spatial",
        }
    }
}

impl fmt::Display for BenchTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchSubtype {
    SingleCategory,
    TwoCategories,
    Comparison,
    Natural,
}

impl BenchSubtype {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchSubtype::SingleCategory => "single_category",
            BenchSubtype::TwoCategories => "two_categories",
            BenchSubtype::Comparison => "comparison",
            BenchSubtype::Natural => "natural",
        }
    }
}

impl fmt::Display for BenchSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground-truth spatial label: where `category_b` sits relative to
/// `category_a`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialLabel {
    pub relation: SpatialRelation,
    pub category_a: String,
    pub category_b: String,
}

/// Ground-truth comparison label: how the count of `category_a` relates to
/// that of `category_b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonLabel {
    pub relation: ComparisonRelation,
    pub category_a: String,
    pub category_b: String,
}

/// One benchmark entry: a text prompt with its ground-truth layout and labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub task: BenchTask,
    pub subtype: BenchSubtype,
    pub text: String,
    pub gt_layout: Layout,
    pub gt_counts: CountVector,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gt_relation: Option<SpatialLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comparison: Option<ComparisonLabel>,
}

impl PromptRecord {
    /// Checks that the stored labels re-derive from the stored layout: the
    /// layout's category counts must equal `gt_counts`, the spatial label must
    /// hold when the layout is scored as its own prediction, and the
    /// comparison label must match the counts.
    pub fn validate_self_consistency(&self) -> Result<()> {
        let derived = CountVector::from_layout(&self.gt_layout);
        if derived != self.gt_counts {
            return Err(Error::data(format!(
                "record {}: stored counts disagree with the layout",
                self.id
            )));
        }
        if let Some(label) = &self.gt_relation {
            let case = SpatialCase {
                relation: label.relation,
                category_a: label.category_a.clone(),
                category_b: label.category_b.clone(),
                prediction: Some(self.gt_layout.clone()),
            };
            if !spatial_case_correct(&case) {
                return Err(Error::data(format!(
                    "record {}: stored relation disagrees with the layout",
                    self.id
                )));
            }
        }
        if let Some(label) = &self.comparison {
            let derived = ComparisonRelation::of_counts(
                self.gt_counts.count(&label.category_a),
                self.gt_counts.count(&label.category_b),
            );
            if derived != label.relation {
                return Err(Error::data(format!(
                    "record {}: stored comparison disagrees with the counts",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

// ── Ground-truth layouts ─────────────────────────────────────────────────────

/// Rescales the record's boxes onto the prompt canvas (per axis, so fractions
/// of the source image become the same fractions of the canvas), rounds to
/// whole pixels, and attaches the prompt text as the condition.
fn gt_layout(record: &AnnotationRecord, text: &str, canvas: &CanvasSpec) -> Result<Layout> {
    let sx = f64::from(canvas.width_px) / f64::from(record.image_width);
    let sy = f64::from(canvas.height_px) / f64::from(record.image_height);
    let elements = record
        .boxes
        .iter()
        .map(|b| {
            Element::Box2D(Element2D::new(
                &b.category,
                b.left * sx,
                b.top * sy,
                b.width * sx,
                b.height * sy,
            ))
        })
        .collect();
    let layout = Layout::new(
        Dialect::Image2D,
        ConditionText::caption(text)?,
        canvas.clone(),
        elements,
    )?;
    let mut layout = layout.quantize(QuantizeMode::IntegerPx);
    // A source box narrower than half a canvas pixel rounds to zero extent,
    // which would stop counting as an object. It still depicts one, so keep
    // it at the smallest representable size.
    for el in &mut layout.elements {
        if let Element::Box2D(e) = el {
            e.width = e.width.max(1.0);
            e.height = e.height.max(1.0);
        }
    }
    Ok(layout)
}

fn record_id(task: BenchTask, subtype: BenchSubtype, image_id: u64) -> String {
    format!("{}/{}/{}", task.as_str(), subtype.as_str(), image_id)
}

// ── Counting prompts ─────────────────────────────────────────────────────────

/// Keeps the records usable for template counting prompts: at most two
/// distinct categories, every per-category count between 1 and 5.
pub fn filter_numerical(records: &[AnnotationRecord]) -> Vec<&AnnotationRecord> {
    records
        .iter()
        .filter(|r| {
            let counts = r.category_counts();
            !counts.is_empty() && counts.len() <= 2 && counts.values().all(|&n| (1..=5).contains(&n))
        })
        .collect()
}

/// Renders the template prompts a filtered record supports: one
/// single-category or two-categories sentence, plus a comparison sentence for
/// two-category records.
///
/// For two categories, the larger count is stated first (alphabetical order
/// breaks ties). The comparison sentence states the alphabetically first
/// category's count explicitly and refers to the other only through the
/// comparative term, which is derived from the true counts.
pub fn make_template_prompts(record: &AnnotationRecord, canvas: &CanvasSpec) -> Result<Vec<PromptRecord>> {
    let counts = record.category_counts();
    let mut out = Vec::new();
    match counts.len() {
        1 => {
            let (category, &n) = counts.iter().next().expect("len checked");
            let text = format!(
                "There {} {} in the photo.",
                if n == 1 { "is" } else { "are" },
                counted(n, category)
            );
            out.push(build_counting_record(
                record,
                BenchSubtype::SingleCategory,
                text,
                canvas,
                None,
            )?);
        }
        2 => {
            let mut pairs: Vec<(&String, u32)> = counts.iter().map(|(c, &n)| (c, n)).collect();
            // Larger count first; the map iterates alphabetically, so a stable
            // sort keeps that order for ties.
            pairs.sort_by(|a, b| b.1.cmp(&a.1));
            let text = format!(
                "{} with {} in the picture.",
                capitalize_first(&counted(pairs[0].1, pairs[0].0)),
                counted(pairs[1].1, pairs[1].0)
            );
            out.push(build_counting_record(
                record,
                BenchSubtype::TwoCategories,
                text,
                canvas,
                None,
            )?);

            let (cat_a, n_a) = (pairs[0].0.min(pairs[1].0), counts[pairs[0].0.min(pairs[1].0)]);
            let cat_b = pairs[0].0.max(pairs[1].0);
            let n_b = counts[cat_b];
            let relation = ComparisonRelation::of_counts(n_a, n_b);
            let text = match relation {
                ComparisonRelation::Equal => format!(
                    "A picture of {} with an equal number of {}.",
                    counted(n_a, cat_a),
                    pluralize(cat_b)
                ),
                _ => format!(
                    "A picture of {} with a few {}, the number of {} is {} than that of {}.",
                    counted(n_a, cat_a),
                    pluralize(cat_b),
                    pluralize(cat_a),
                    match relation {
                        ComparisonRelation::Fewer => "fewer",
                        _ => "more",
                    },
                    pluralize(cat_b)
                ),
            };
            out.push(build_counting_record(
                record,
                BenchSubtype::Comparison,
                text,
                canvas,
                Some(ComparisonLabel {
                    relation,
                    category_a: cat_a.clone(),
                    category_b: cat_b.clone(),
                }),
            )?);
        }
        _ => {}
    }
    Ok(out)
}

fn build_counting_record(
    record: &AnnotationRecord,
    subtype: BenchSubtype,
    text: String,
    canvas: &CanvasSpec,
    comparison: Option<ComparisonLabel>,
) -> Result<PromptRecord> {
    let layout = gt_layout(record, &text, canvas)?;
    let gt_counts = CountVector::from_layout(&layout);
    Ok(PromptRecord {
        id: record_id(BenchTask::Numerical, subtype, record.image_id),
        task: BenchTask::Numerical,
        subtype,
        text,
        gt_layout: layout,
        gt_counts,
        gt_relation: None,
        comparison,
    })
}

static NUMBER_WORD_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(one|two|three|four|five)\b").expect("static regex"));

fn mentions(caption_lower: &str, category: &str) -> bool {
    caption_lower.contains(category)
}

/// Picks the first caption that names a small number and mentions every
/// annotated category (so the boxes cannot contradict the text), and keeps it
/// verbatim as a counting prompt. Counts outside 1..=5 disqualify the record.
pub fn extract_natural_numerical(
    record: &AnnotationRecord,
    canvas: &CanvasSpec,
) -> Result<Option<PromptRecord>> {
    let counts = record.category_counts();
    if counts.is_empty() || counts.values().any(|&n| !(1..=5).contains(&n)) {
        return Ok(None);
    }
    for caption in &record.captions {
        if caption.is_empty() || !NUMBER_WORD_PATTERN.is_match(caption) {
            continue;
        }
        let lower = caption.to_lowercase();
        if !counts.keys().all(|category| mentions(&lower, category)) {
            continue;
        }
        return build_counting_record(record, BenchSubtype::Natural, caption.clone(), canvas, None)
            .map(Some);
    }
    Ok(None)
}

// ── Spatial prompts ──────────────────────────────────────────────────────────

static SPATIAL_PHRASES: LazyLock<[(Regex, SpatialRelation); 4]> = LazyLock::new(|| {
    let build = |pattern: &str| Regex::new(pattern).expect("static regex");
    [
        (build(r"(?i)\bthe left of\b"), SpatialRelation::Left),
        (build(r"(?i)\bthe right of\b"), SpatialRelation::Right),
        (build(r"(?i)\bon top of\b"), SpatialRelation::Above),
        (build(r"(?i)\b(?:under|below)\b"), SpatialRelation::Below),
    ]
});

fn relation_phrase(relation: SpatialRelation) -> &'static str {
    match relation {
        SpatialRelation::Left => "to the left of",
        SpatialRelation::Right => "to the right of",
        SpatialRelation::Above => "on top of",
        SpatialRelation::Below => "below",
    }
}

/// The two elements of an exactly-two-box, two-category record, in annotation
/// order, read back from the quantized layout so label and geometry agree.
fn spatial_pair(layout: &Layout) -> Option<(&Element2D, &Element2D)> {
    if layout.elements.len() != 2 {
        return None;
    }
    let a = layout.elements[0].as_box2d()?;
    let b = layout.elements[1].as_box2d()?;
    if a.category == b.category {
        return None;
    }
    Some((a, b))
}

/// Builds the spatial prompts a record supports: a template sentence when the
/// two boxes stand in a defined relation, and a verbatim caption when some
/// caption's spatial phrasing agrees with the annotated geometry.
pub fn make_spatial_prompts(record: &AnnotationRecord, canvas: &CanvasSpec) -> Result<Vec<PromptRecord>> {
    let mut out = Vec::new();
    if let Some(prompt) = make_template_spatial(record, canvas)? {
        out.push(prompt);
    }
    if let Some(prompt) = extract_natural_spatial(record, canvas)? {
        out.push(prompt);
    }
    Ok(out)
}

fn make_template_spatial(
    record: &AnnotationRecord,
    canvas: &CanvasSpec,
) -> Result<Option<PromptRecord>> {
    // Probe with a placeholder condition; the real text needs the relation,
    // which needs the quantized geometry.
    let probe = gt_layout(record, "probe", canvas)?;
    let Some((a, b)) = spatial_pair(&probe) else {
        return Ok(None);
    };
    let Some(relation) = classify_relation(a, b) else {
        return Ok(None);
    };
    let text = format!(
        "{} {} {} {} {}.",
        capitalize_first(indefinite_article(&b.category)),
        b.category,
        relation_phrase(relation),
        indefinite_article(&a.category),
        a.category
    );
    let label = SpatialLabel {
        relation,
        category_a: a.category.clone(),
        category_b: b.category.clone(),
    };
    Ok(Some(build_spatial_record(
        record,
        BenchSubtype::TwoCategories,
        text,
        label,
        canvas,
    )?))
}

fn extract_natural_spatial(
    record: &AnnotationRecord,
    canvas: &CanvasSpec,
) -> Result<Option<PromptRecord>> {
    let probe = gt_layout(record, "probe", canvas)?;
    let Some((first, second)) = spatial_pair(&probe) else {
        return Ok(None);
    };
    for caption in &record.captions {
        if caption.is_empty() {
            continue;
        }
        let lower = caption.to_lowercase();
        // Earliest phrase match decides the claimed relation.
        let Some((span, claimed)) = SPATIAL_PHRASES
            .iter()
            .filter_map(|(pattern, relation)| pattern.find(&lower).map(|m| (m.range(), *relation)))
            .min_by_key(|(range, _)| range.start)
        else {
            continue;
        };
        // The mention just before the phrase is the subject; the one after is
        // the reference.
        let position = |category: &str, before: bool| -> Option<usize> {
            let hits: Vec<usize> = lower.match_indices(category).map(|(i, _)| i).collect();
            if before {
                hits.into_iter().filter(|&i| i < span.start).next_back()
            } else {
                hits.into_iter().find(|&i| i >= span.end)
            }
        };
        let assignments = [(first, second), (second, first)];
        let aligned = assignments.iter().find_map(|(subject, reference)| {
            let s = position(&subject.category, true)?;
            let r = position(&reference.category, false)?;
            (s < r).then_some((*subject, *reference))
        });
        let Some((subject, reference)) = aligned else {
            continue;
        };
        let Some(actual) = classify_relation(reference, subject) else {
            continue;
        };
        if actual != claimed {
            continue;
        }
        let label = SpatialLabel {
            relation: claimed,
            category_a: reference.category.clone(),
            category_b: subject.category.clone(),
        };
        return Ok(Some(build_spatial_record(
            record,
            BenchSubtype::Natural,
            caption.clone(),
            label,
            canvas,
        )?));
    }
    Ok(None)
}

fn build_spatial_record(
    record: &AnnotationRecord,
    subtype: BenchSubtype,
    text: String,
    label: SpatialLabel,
    canvas: &CanvasSpec,
) -> Result<PromptRecord> {
    let layout = gt_layout(record, &text, canvas)?;
    let gt_counts = CountVector::from_layout(&layout);
    Ok(PromptRecord {
        id: record_id(BenchTask::Spatial, subtype, record.image_id),
        task: BenchTask::Spatial,
        subtype,
        text,
        gt_layout: layout,
        gt_counts,
        gt_relation: Some(label),
        comparison: None,
    })
}

// ── Benchmark assembly ───────────────────────────────────────────────────────

/// Build settings: the prompt canvas, the sampling seed, and optional
/// per-subtype size caps keyed "task/subtype".
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub canvas: CanvasSpec,
    pub targets: BTreeMap<String, usize>,
}

impl BenchConfig {
    pub fn new(seed: u64) -> Self {
        BenchConfig {
            seed,
            canvas: CanvasSpec::default_2d(),
            targets: BTreeMap::new(),
        }
    }

    /// Caps each test-split subtype at the benchmark's published sizes.
    pub fn with_test_targets(seed: u64) -> Self {
        let mut cfg = Self::new(seed);
        for (key, cap) in [
            ("numerical/single_category", 114),
            ("numerical/two_categories", 197),
            ("numerical/comparison", 100),
            ("numerical/natural", 351),
            ("spatial/two_categories", 199),
            ("spatial/natural", 84),
        ] {
            cfg.targets.insert(key.to_string(), cap);
        }
        cfg
    }

    fn target(&self, task: BenchTask, subtype: BenchSubtype) -> Option<usize> {
        self.targets
            .get(&format!("{}/{}", task.as_str(), subtype.as_str()))
            .copied()
    }
}

/// The full built benchmark, grouped by task.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BenchmarkSet {
    pub numerical: Vec<PromptRecord>,
    pub spatial: Vec<PromptRecord>,
}

impl BenchmarkSet {
    pub fn iter_all(&self) -> impl Iterator<Item = &PromptRecord> {
        self.numerical.iter().chain(self.spatial.iter())
    }

    /// Record counts keyed "task/subtype".
    pub fn subtype_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for record in self.iter_all() {
            *counts
                .entry(format!("{}/{}", record.task.as_str(), record.subtype.as_str()))
                .or_insert(0) += 1;
        }
        counts
    }
}

fn sample_to_cap(
    records: Vec<PromptRecord>,
    cap: Option<usize>,
    seed: u64,
    salt: u64,
) -> Vec<PromptRecord> {
    let Some(cap) = cap else { return records };
    if records.len() <= cap {
        return records;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let keep: BTreeSet<usize> = rand::seq::index::sample(&mut rng, records.len(), cap)
        .into_iter()
        .collect();
    records
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| keep.contains(&i).then_some(r))
        .collect()
}

/// Builds the whole benchmark from loaded annotations: template and natural
/// counting prompts plus template and natural spatial prompts, each subtype
/// independently down-sampled to its configured cap. Same annotations and
/// config always produce the same records in the same order.
pub fn build_benchmark(records: &[AnnotationRecord], config: &BenchConfig) -> Result<BenchmarkSet> {
    let mut by_subtype: BTreeMap<BenchSubtype, Vec<PromptRecord>> = BTreeMap::new();
    for record in filter_numerical(records) {
        for prompt in make_template_prompts(record, &config.canvas)? {
            by_subtype.entry(prompt.subtype).or_default().push(prompt);
        }
    }
    for record in records {
        if let Some(prompt) = extract_natural_numerical(record, &config.canvas)? {
            by_subtype.entry(prompt.subtype).or_default().push(prompt);
        }
    }
    let mut numerical = Vec::new();
    for (salt, subtype) in [
        (1u64, BenchSubtype::SingleCategory),
        (2, BenchSubtype::TwoCategories),
        (3, BenchSubtype::Comparison),
        (4, BenchSubtype::Natural),
    ] {
        let group = by_subtype.remove(&subtype).unwrap_or_default();
        numerical.extend(sample_to_cap(
            group,
            config.target(BenchTask::Numerical, subtype),
            config.seed,
            salt,
        ));
    }

    let mut spatial_by_subtype: BTreeMap<BenchSubtype, Vec<PromptRecord>> = BTreeMap::new();
    for record in records {
        for prompt in make_spatial_prompts(record, &config.canvas)? {
            spatial_by_subtype
                .entry(prompt.subtype)
                .or_default()
                .push(prompt);
        }
    }
    let mut spatial = Vec::new();
    for (salt, subtype) in [(5u64, BenchSubtype::TwoCategories), (6, BenchSubtype::Natural)] {
        let group = spatial_by_subtype.remove(&subtype).unwrap_or_default();
        spatial.extend(sample_to_cap(
            group,
            config.target(BenchTask::Spatial, subtype),
            config.seed,
            salt,
        ));
    }

    let set = BenchmarkSet { numerical, spatial };
    for record in set.iter_all() {
        record.validate_self_consistency()?;
    }
    Ok(set)
}

/// File name for one benchmark shard.
pub fn benchmark_file_name(task: BenchTask, subtype: BenchSubtype, split: &str) -> String {
    format!("{}_{}_{}.jsonl", task.as_str(), subtype.as_str(), split)
}

/// Writes one JSON-lines file per nonempty (task, subtype) group and returns
/// the paths with their record counts.
pub fn write_benchmark(
    set: &BenchmarkSet,
    out_dir: &Path,
    split: &str,
) -> Result<Vec<(PathBuf, usize)>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut groups: BTreeMap<(BenchTask, BenchSubtype), Vec<&PromptRecord>> = BTreeMap::new();
    for record in set.iter_all() {
        groups
            .entry((record.task, record.subtype))
            .or_default()
            .push(record);
    }
    let mut written = Vec::new();
    for ((task, subtype), group) in groups {
        let path = out_dir.join(benchmark_file_name(task, subtype, split));
        write_jsonl(&path, &group)?;
        written.push((path, group.len()));
    }
    Ok(written)
}

/// Reads prompt records back from one benchmark shard.
pub fn read_prompt_records(path: &Path) -> Result<Vec<PromptRecord>> {
    crate::records::read_jsonl(path)
}

// ── Tests ────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(image_id: u64, boxes: Vec<(&str, f64, f64, f64, f64)>) -> AnnotationRecord {
        AnnotationRecord {
            image_id,
            captions: Vec::new(),
            boxes: boxes
                .into_iter()
                .map(|(category, left, top, width, height)| SourceBox {
                    category: category.to_string(),
                    left,
                    top,
                    width,
                    height,
                })
                .collect(),
            image_width: 640,
            image_height: 480,
        }
    }

    fn canvas() -> CanvasSpec {
        CanvasSpec::default_2d()
    }

    #[test]
    fn pluralize_handles_common_shapes() {
        for (singular, plural) in [
            ("giraffe", "giraffes"),
            ("bench", "benches"),
            ("bus", "buses"),
            ("wine glass", "wine glasses"),
            ("potted plant", "potted plants"),
            ("person", "people"),
            ("knife", "knives"),
            ("sheep", "sheep"),
            ("toothbrush", "toothbrushes"),
            ("daisy", "daisies"),
            ("teddy bear", "teddy bears"),
        ] {
            assert_eq!(pluralize(singular), plural);
        }
    }

    #[test]
    fn filter_keeps_small_clean_records() {
        let keep = record(1, vec![("giraffe", 0.0, 0.0, 50.0, 80.0), ("giraffe", 100.0, 0.0, 50.0, 80.0)]);
        let three_cats = record(2, vec![
            ("cat", 0.0, 0.0, 10.0, 10.0),
            ("dog", 20.0, 0.0, 10.0, 10.0),
            ("bird", 40.0, 0.0, 10.0, 10.0),
        ]);
        let mut crowd = record(3, vec![("chair", 0.0, 0.0, 10.0, 10.0)]);
        for i in 0..6 {
            crowd.boxes.push(SourceBox {
                category: "chair".into(),
                left: 20.0 * i as f64,
                top: 40.0,
                width: 10.0,
                height: 10.0,
            });
        }
        let records = vec![keep, three_cats, crowd];
        let kept = filter_numerical(&records);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].image_id, 1);
    }

    #[test]
    fn single_category_template() {
        let r = record(7, vec![
            ("giraffe", 10.0, 10.0, 100.0, 200.0),
            ("giraffe", 300.0, 20.0, 100.0, 200.0),
        ]);
        let prompts = make_template_prompts(&r, &canvas()).unwrap();
        assert_eq!(prompts.len(), 1);
        let p = &prompts[0];
        assert_eq!(p.text, "There are two giraffes in the photo.");
        assert_eq!(p.subtype, BenchSubtype::SingleCategory);
        assert_eq!(p.gt_counts.count("giraffe"), 2);
        assert_eq!(p.id, "numerical/single_category/7");
        p.validate_self_consistency().unwrap();
    }

    #[test]
    fn two_category_template_orders_by_count() {
        let r = record(8, vec![
            ("vase", 10.0, 10.0, 30.0, 40.0),
            ("potted plant", 100.0, 10.0, 60.0, 80.0),
            ("potted plant", 200.0, 10.0, 60.0, 80.0),
            ("potted plant", 300.0, 10.0, 60.0, 80.0),
        ]);
        let prompts = make_template_prompts(&r, &canvas()).unwrap();
        assert_eq!(prompts.len(), 2);
        assert_eq!(prompts[0].text, "Three potted plants with one vase in the picture.");
        assert_eq!(prompts[0].subtype, BenchSubtype::TwoCategories);
    }

    #[test]
    fn comparison_template_states_one_count() {
        let r = record(9, vec![
            ("car", 10.0, 10.0, 60.0, 40.0),
            ("car", 100.0, 10.0, 60.0, 40.0),
            ("car", 200.0, 10.0, 60.0, 40.0),
            ("fire hydrant", 400.0, 100.0, 30.0, 60.0),
            ("fire hydrant", 500.0, 100.0, 30.0, 60.0),
        ]);
        let prompts = make_template_prompts(&r, &canvas()).unwrap();
        let comparison = prompts
            .iter()
            .find(|p| p.subtype == BenchSubtype::Comparison)
            .unwrap();
        assert_eq!(
            comparison.text,
            "A picture of three cars with a few fire hydrants, the number of cars is more than that of fire hydrants."
        );
        assert!(comparison.text.contains("is more than that"));
        let label = comparison.comparison.as_ref().unwrap();
        assert_eq!(label.relation, ComparisonRelation::More);
        assert_eq!(comparison.gt_counts.count("fire hydrant"), 2);
        comparison.validate_self_consistency().unwrap();
    }

    #[test]
    fn comparison_equal_phrasing() {
        let r = record(10, vec![
            ("cat", 10.0, 10.0, 60.0, 40.0),
            ("dog", 100.0, 10.0, 60.0, 40.0),
        ]);
        let prompts = make_template_prompts(&r, &canvas()).unwrap();
        let comparison = prompts
            .iter()
            .find(|p| p.subtype == BenchSubtype::Comparison)
            .unwrap();
        assert_eq!(
            comparison.text,
            "A picture of one cat with an equal number of dogs."
        );
        assert_eq!(
            comparison.comparison.as_ref().unwrap().relation,
            ComparisonRelation::Equal
        );
    }

    #[test]
    fn natural_numerical_keeps_clean_caption() {
        let mut r = record(11, vec![
            ("horse", 10.0, 100.0, 80.0, 60.0),
            ("horse", 120.0, 100.0, 80.0, 60.0),
            ("horse", 230.0, 100.0, 80.0, 60.0),
            ("horse", 340.0, 100.0, 80.0, 60.0),
        ]);
        r.captions = vec![
            "A fenced in pasture with four horses standing around eating grass.".to_string(),
        ];
        let prompt = extract_natural_numerical(&r, &canvas()).unwrap().unwrap();
        assert_eq!(
            prompt.text,
            "A fenced in pasture with four horses standing around eating grass."
        );
        assert_eq!(prompt.subtype, BenchSubtype::Natural);
        prompt.validate_self_consistency().unwrap();
    }

    #[test]
    fn natural_numerical_rejects_hallucination_and_no_number() {
        let mut with_person = record(12, vec![
            ("horse", 10.0, 100.0, 80.0, 60.0),
            ("horse", 120.0, 100.0, 80.0, 60.0),
            ("person", 300.0, 50.0, 40.0, 120.0),
        ]);
        with_person.captions = vec!["Two horses in a field.".to_string()];
        assert!(extract_natural_numerical(&with_person, &canvas())
            .unwrap()
            .is_none());

        let mut no_number = record(13, vec![("horse", 10.0, 100.0, 80.0, 60.0)]);
        no_number.captions = vec!["A horse in a field.".to_string()];
        assert!(extract_natural_numerical(&no_number, &canvas())
            .unwrap()
            .is_none());
    }

    #[test]
    fn spatial_template_right_of() {
        // Dog center lands well to the right of the bench center.
        let r = record(14, vec![
            ("bench", 50.0, 200.0, 100.0, 80.0),
            ("dog", 450.0, 210.0, 90.0, 70.0),
        ]);
        let prompts = make_spatial_prompts(&r, &canvas()).unwrap();
        assert_eq!(prompts.len(), 1);
        let p = &prompts[0];
        assert_eq!(p.text, "A dog to the right of a bench.");
        assert_eq!(p.subtype, BenchSubtype::TwoCategories);
        let label = p.gt_relation.as_ref().unwrap();
        assert_eq!(label.relation, SpatialRelation::Right);
        assert_eq!(label.category_a, "bench");
        assert_eq!(label.category_b, "dog");
        p.validate_self_consistency().unwrap();
    }

    #[test]
    fn spatial_template_needs_exactly_two_distinct_boxes() {
        let three = record(15, vec![
            ("bench", 50.0, 200.0, 100.0, 80.0),
            ("dog", 450.0, 210.0, 90.0, 70.0),
            ("kite", 300.0, 10.0, 40.0, 30.0),
        ]);
        assert!(make_spatial_prompts(&three, &canvas()).unwrap().is_empty());

        let same = record(16, vec![
            ("dog", 50.0, 200.0, 100.0, 80.0),
            ("dog", 450.0, 210.0, 90.0, 70.0),
        ]);
        assert!(make_spatial_prompts(&same, &canvas()).unwrap().is_empty());
    }

    #[test]
    fn natural_spatial_requires_alignment() {
        let mut aligned = record(17, vec![
            ("bed", 100.0, 240.0, 400.0, 200.0),
            ("cat", 250.0, 120.0, 100.0, 80.0),
        ]);
        aligned.captions = vec!["A black cat laying on top of a bed.".to_string()];
        let prompts = make_spatial_prompts(&aligned, &canvas()).unwrap();
        let natural = prompts
            .iter()
            .find(|p| p.subtype == BenchSubtype::Natural)
            .expect("caption should align");
        assert_eq!(natural.text, "A black cat laying on top of a bed.");
        let label = natural.gt_relation.as_ref().unwrap();
        assert_eq!(label.relation, SpatialRelation::Above);
        assert_eq!(label.category_b, "cat");

        let mut contradicted = record(18, vec![
            ("bed", 100.0, 40.0, 400.0, 150.0),
            ("cat", 250.0, 380.0, 100.0, 80.0),
        ]);
        contradicted.captions = vec!["A black cat laying on top of a bed.".to_string()];
        let prompts = make_spatial_prompts(&contradicted, &canvas()).unwrap();
        assert!(
            !prompts.iter().any(|p| p.subtype == BenchSubtype::Natural),
            "cat below bed must not pass as on top"
        );
    }

    #[test]
    fn gt_layout_uses_integer_canvas_pixels() {
        let r = record(19, vec![("giraffe", 13.0, 29.0, 301.0, 371.0)]);
        let prompts = make_template_prompts(&r, &canvas()).unwrap();
        let layout = &prompts[0].gt_layout;
        let e = layout.elements[0].as_box2d().unwrap();
        for v in [e.left, e.top, e.width, e.height] {
            assert_eq!(v, v.round(), "expected whole pixels, got {v}");
        }
        // 301/640 * 64 = 30.1 -> 30.
        assert_eq!(e.width, 30.0);
    }

    #[test]
    fn sub_pixel_boxes_keep_one_pixel_of_extent() {
        // 3/640 * 64 = 0.3, which would round to zero width.
        let r = record(20, vec![
            ("kite", 100.0, 50.0, 3.0, 2.0),
            ("kite", 300.0, 60.0, 90.0, 80.0),
        ]);
        let prompts = make_template_prompts(&r, &canvas()).unwrap();
        for p in &prompts {
            let thin = p.gt_layout.elements[0].as_box2d().unwrap();
            assert_eq!((thin.width, thin.height), (1.0, 1.0));
            p.validate_self_consistency().unwrap();
            assert_eq!(p.gt_counts.count("kite"), 2);
        }
    }

    fn synthetic_corpus() -> Vec<AnnotationRecord> {
        let mut records = Vec::new();
        for i in 0..30u64 {
            let n = (i % 5) as usize + 1;
            let boxes = (0..n)
                .map(|j| ("giraffe", 20.0 + 90.0 * j as f64, 100.0, 60.0, 120.0))
                .collect();
            records.push(record(i, boxes));
        }
        for i in 30..50u64 {
            let mut r = record(i, vec![
                ("bench", 50.0, 200.0, 100.0, 80.0),
                ("dog", 420.0, 210.0, 90.0, 70.0),
            ]);
            r.captions = vec!["A dog sitting to the right of a bench outdoors.".to_string()];
            records.push(r);
        }
        records
    }

    #[test]
    fn build_is_deterministic_and_self_consistent() {
        let mut config = BenchConfig::new(11);
        config.targets.insert("numerical/single_category".into(), 10);
        config.targets.insert("spatial/two_categories".into(), 7);
        let corpus = synthetic_corpus();
        let a = build_benchmark(&corpus, &config).unwrap();
        let b = build_benchmark(&corpus, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&a.numerical).unwrap(),
            serde_json::to_string(&b.numerical).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&a.spatial).unwrap(),
            serde_json::to_string(&b.spatial).unwrap()
        );
        assert_eq!(a.subtype_counts()["numerical/single_category"], 10);
        assert_eq!(a.subtype_counts()["spatial/two_categories"], 7);
        for record in a.iter_all() {
            record.validate_self_consistency().unwrap();
        }

        let different_seed = BenchConfig {
            seed: 12,
            ..config.clone()
        };
        let c = build_benchmark(&corpus, &different_seed).unwrap();
        let ids = |set: &BenchmarkSet| -> Vec<String> {
            set.numerical.iter().map(|r| r.id.clone()).collect()
        };
        assert_ne!(ids(&a), ids(&c), "different seeds should sample differently");
    }

    #[test]
    fn write_and_read_round_trip(){
        let dir = tempfile::tempdir().unwrap();
        let config = BenchConfig::new(3);
        let set = build_benchmark(&synthetic_corpus(), &config).unwrap();
        let written = write_benchmark(&set, dir.path(), "test").unwrap();
        assert!(written
            .iter()
            .any(|(p, _)| p.ends_with("numerical_single_category_test.jsonl")));
        for (path, count) in &written {
            let back = read_prompt_records(path).unwrap();
            assert_eq!(back.len(), *count);
            for record in back {
                record.validate_self_consistency().unwrap();
            }
        }
    }

    #[test]
    fn coco_files_load_and_join() {
        let dir = tempfile::tempdir().unwrap();
        let instances = serde_json::json!({
            "images": [
                {"id": 1, "width": 640, "height": 480, "file_name": "000001.jpg"},
                {"id": 2, "width": 640, "height": 480, "file_name": "000002.jpg"}
            ],
            "annotations": [
                {"id": 10, "image_id": 1, "category_id": 25, "bbox": [10.0, 20.0, 100.0, 200.0], "iscrowd": 0},
                {"id": 11, "image_id": 1, "category_id": 25, "bbox": [210.0, 20.0, 100.0, 200.0], "iscrowd": 0},
                {"id": 12, "image_id": 2, "category_id": 25, "bbox": [0.0, 0.0, 640.0, 480.0], "iscrowd": 1}
            ],
            "categories": [{"id": 25, "name": "Giraffe", "supercategory": "animal"}]
        });
        let captions = serde_json::json!({
            "annotations": [
                {"id": 90, "image_id": 1, "caption": " Two giraffes on a plain. "}
            ]
        });
        let instances_path = dir.path().join("instances.json");
        let captions_path = dir.path().join("captions.json");
        std::fs::write(&instances_path, instances.to_string()).unwrap();
        std::fs::write(&captions_path, captions.to_string()).unwrap();

        let records = load_coco(&instances_path, Some(&captions_path)).unwrap();
        // Image 2 only had a crowd box, so it is dropped.
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].image_id, 1);
        assert_eq!(records[0].boxes.len(), 2);
        assert_eq!(records[0].boxes[0].category, "giraffe");
        assert_eq!(records[0].captions, vec!["Two giraffes on a plain."]);

        assert!(load_coco(dir.path().join("missing.json").as_path(), None).is_err());
    }

    proptest! {
        #[test]
        fn prop_built_records_are_self_consistent(
            layouts in proptest::collection::vec(
                proptest::collection::vec(
                    ("(cat|dog|kite|vase)", 0.0f64..560.0, 0.0f64..400.0, 8.0f64..80.0, 8.0f64..80.0),
                    1..6,
                ),
                1..8,
            ),
            seed in 0u64..1000,
        ) {
            let records: Vec<AnnotationRecord> = layouts
                .into_iter()
                .enumerate()
                .map(|(i, boxes)| {
                    let mut r = record(i as u64, Vec::new());
                    r.boxes = boxes
                        .into_iter()
                        .map(|(category, left, top, width, height)| SourceBox {
                            category,
                            left,
                            top,
                            width,
                            height,
                        })
                        .collect();
                    r.captions = vec!["One scene with assorted objects.".to_string()];
                    r
                })
                .collect();
            let set = build_benchmark(&records, &BenchConfig::new(seed)).unwrap();
            for record in set.iter_all() {
                record.validate_self_consistency().unwrap();
            }
        }
    }
}
