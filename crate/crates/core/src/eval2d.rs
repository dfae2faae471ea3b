//! Counting and spatial-relation metrics for 2D layouts.
//!
//! Scores predicted layouts against ground truth on two axes: how well the
//! multiset of object categories matches (precision, recall, exact-match
//! accuracy) and whether pairwise spatial relations come out right. Every
//! function here is pure; callers are free to parallelize across records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::model::{normalize_category, Element, Element2D, Layout};

// ── Count vectors ────────────────────────────────────────────────────────────

/// Multiset of object categories, stored as category → count.
///
/// Zero counts are never stored explicitly; an absent category counts as zero.
/// Category names are normalized on insertion so lookups are case- and
/// whitespace-insensitive.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct CountVector {
    counts: BTreeMap<String, u32>,
}

impl CountVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts the elements of a layout by category. A box with a nonpositive
    /// extent depicts nothing and is not counted as a predicted object; no
    /// detector would ever find it in a rendered image.
    pub fn from_layout(layout: &Layout) -> Self {
        let mut v = CountVector::new();
        for el in &layout.elements {
            let has_area = match el {
                Element::Box2D(e) => e.width > 0.0 && e.height > 0.0,
                Element::Box3D(e) => e.length > 0.0 && e.width > 0.0 && e.height > 0.0,
                Element::Keypoints(_) => false,
            };
            if has_area {
                if let Some(category) = el.category() {
                    v.add(category, 1);
                }
            }
        }
        v
    }

    pub fn from_pairs<S, I>(pairs: I) -> Self
    where
        S: AsRef<str>,
        I: IntoIterator<Item = (S, u32)>,
    {
        let mut v = CountVector::new();
        for (category, n) in pairs {
            v.add(category.as_ref(), n);
        }
        v
    }

    /// Adds `n` objects of `category`; adding zero is a no-op.
    pub fn add(&mut self, category: &str, n: u32) {
        if n == 0 {
            return;
        }
        *self.counts.entry(normalize_category(category)).or_insert(0) += n;
    }

    pub fn count(&self, category: &str) -> u32 {
        self.counts
            .get(&normalize_category(category))
            .copied()
            .unwrap_or(0)
    }

    /// Total number of objects across all categories.
    pub fn total(&self) -> u64 {
        self.counts.values().map(|&n| u64::from(n)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of distinct categories.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.counts.iter().map(|(c, &n)| (c.as_str(), n))
    }
}

impl<'de> Deserialize<'de> for CountVector {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: Deserializer<'de>,
    {
        // Route through `add` so external data cannot smuggle in explicit
        // zeros or unnormalized category keys.
        let raw = BTreeMap::<String, u32>::deserialize(deserializer)?;
        Ok(CountVector::from_pairs(raw))
    }
}

// ── Counting metrics ─────────────────────────────────────────────────────────

/// Precision, recall, and exact-match accuracy for one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountMetrics {
    pub precision: f64,
    pub recall: f64,
    /// 1.0 when the predicted vector matches ground truth exactly, else 0.0.
    pub accuracy: f64,
    /// The prediction contained no objects, which pins precision to 0.
    pub empty_prediction: bool,
    /// The ground truth contained no objects, which pins recall to 0.
    pub empty_ground_truth: bool,
}

/// Scores a predicted count vector against ground truth.
///
/// Precision is the fraction of predicted objects that also appear in ground
/// truth (per-category minimum over the predicted total); recall is the same
/// overlap over the ground-truth total; accuracy is 1 only for an exact match.
/// An empty denominator yields 0 and raises the matching flag rather than NaN.
/// Note the one degenerate corner: two empty vectors compare equal (accuracy
/// 1) while both ratios stay at their flagged zeros; benchmark records always
/// contain at least one object, so the corner never arises in practice.
pub fn count_metrics(gt: &CountVector, pred: &CountVector) -> CountMetrics {
    let overlap: u64 = pred
        .iter()
        .map(|(category, n)| u64::from(n.min(gt.count(category))))
        .sum();
    let pred_total = pred.total();
    let gt_total = gt.total();
    let empty_prediction = pred_total == 0;
    let empty_ground_truth = gt_total == 0;
    CountMetrics {
        precision: if empty_prediction {
            0.0
        } else {
            overlap as f64 / pred_total as f64
        },
        recall: if empty_ground_truth {
            0.0
        } else {
            overlap as f64 / gt_total as f64
        },
        accuracy: if gt == pred { 1.0 } else { 0.0 },
        empty_prediction,
        empty_ground_truth,
    }
}

/// How the count of one category compares against another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonRelation {
    Fewer,
    Equal,
    More,
}

impl ComparisonRelation {
    /// The relation of `a` to `b`.
    pub fn of_counts(a: u32, b: u32) -> Self {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => ComparisonRelation::Fewer,
            std::cmp::Ordering::Equal => ComparisonRelation::Equal,
            std::cmp::Ordering::Greater => ComparisonRelation::More,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ComparisonRelation::Fewer => "fewer",
            ComparisonRelation::Equal => "equal",
            ComparisonRelation::More => "more",
        }
    }
}

impl fmt::Display for ComparisonRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ComparisonRelation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fewer" => Ok(ComparisonRelation::Fewer),
            "equal" => Ok(ComparisonRelation::Equal),
            "more" => Ok(ComparisonRelation::More),
            other => Err(crate::Error::invalid_argument(format!(
                "unknown comparison relation {other:?}"
            ))),
        }
    }
}

/// Whether the predicted counts of `category_a` versus `category_b` stand in
/// the expected relation. Counting both sides of the same category is a caller
/// error; the comparison then trivially reads as equal.
pub fn comparison_accuracy(
    gt: ComparisonRelation,
    pred: &CountVector,
    category_a: &str,
    category_b: &str,
) -> bool {
    ComparisonRelation::of_counts(pred.count(category_a), pred.count(category_b)) == gt
}

// ── Spatial relations ────────────────────────────────────────────────────────

/// One of four directions an object can sit in relative to another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialRelation {
    Left,
    Right,
    Above,
    Below,
}

impl SpatialRelation {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpatialRelation::Left => "left",
            SpatialRelation::Right => "right",
            SpatialRelation::Above => "above",
            SpatialRelation::Below => "below",
        }
    }

    /// The relation seen from the other object's point of view.
    pub fn opposite(&self) -> Self {
        match self {
            SpatialRelation::Left => SpatialRelation::Right,
            SpatialRelation::Right => SpatialRelation::Left,
            SpatialRelation::Above => SpatialRelation::Below,
            SpatialRelation::Below => SpatialRelation::Above,
        }
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SpatialRelation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(SpatialRelation::Left),
            "right" => Ok(SpatialRelation::Right),
            "above" | "top" => Ok(SpatialRelation::Above),
            "below" | "bottom" => Ok(SpatialRelation::Below),
            other => Err(crate::Error::invalid_argument(format!(
                "unknown spatial relation {other:?}"
            ))),
        }
    }
}

/// Classifies where `b` sits relative to `a`, or `None` when the two box
/// centers coincide and no direction is defined.
///
/// The circle around `a`'s center is split into four equal sectors whose
/// boundaries run along the diagonals; the diagonals themselves belong to the
/// vertical sectors. Screen coordinates grow downward, so the vertical axis is
/// flipped before classification: a box that sits visually higher counts as
/// above, not below.
pub fn classify_relation(a: &Element2D, b: &Element2D) -> Option<SpatialRelation> {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let dx = bx - ax;
    let dy = ay - by;
    let d = dx.hypot(dy);
    if d == 0.0 {
        return None;
    }
    let diagonal = std::f64::consts::FRAC_1_SQRT_2 * d;
    if dy >= diagonal {
        Some(SpatialRelation::Above)
    } else if dy <= -diagonal {
        Some(SpatialRelation::Below)
    } else if dx < -diagonal {
        Some(SpatialRelation::Left)
    } else if dx > diagonal {
        Some(SpatialRelation::Right)
    } else {
        // Rounding can leave a pair within an ulp of a 45-degree boundary
        // without satisfying any of the four tests. The boundaries belong to
        // the vertical sectors, so resolve the tie the same way.
        Some(if dy.abs() >= dx.abs() {
            if dy > 0.0 {
                SpatialRelation::Above
            } else {
                SpatialRelation::Below
            }
        } else if dx > 0.0 {
            SpatialRelation::Right
        } else {
            SpatialRelation::Left
        })
    }
}

/// One spatial benchmark record paired with its (possibly failed) prediction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpatialCase {
    /// Where `category_b` should sit relative to `category_a`.
    pub relation: SpatialRelation,
    pub category_a: String,
    pub category_b: String,
    /// The predicted layout, or `None` when the completion failed to parse.
    pub prediction: Option<Layout>,
}

/// Scores a single spatial case. A failed parse, a missing category, or
/// coinciding centers all score zero; otherwise the classified relation must
/// match the expected one.
pub fn spatial_case_correct(case: &SpatialCase) -> bool {
    let Some(layout) = &case.prediction else {
        return false;
    };
    let first = |category: &str| {
        let wanted = normalize_category(category);
        layout
            .elements
            .iter()
            .filter_map(|e| e.as_box2d())
            .find(|e| e.category == wanted)
    };
    let (Some(a), Some(b)) = (first(&case.category_a), first(&case.category_b)) else {
        return false;
    };
    classify_relation(a, b) == Some(case.relation)
}

/// Percentage of cases scored correct; an empty list scores 0.
pub fn spatial_accuracy(cases: &[SpatialCase]) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    let correct = cases.iter().filter(|c| spatial_case_correct(c)).count();
    100.0 * correct as f64 / cases.len() as f64
}

// ── Vocabulary accounting ────────────────────────────────────────────────────

/// Number of predicted objects whose category falls outside `vocabulary`.
///
/// Strict scoring already penalizes such objects through precision; this count
/// is surfaced separately so reports can show how much of the penalty comes
/// from otherwise plausible categories the annotation set does not cover. The
/// vocabulary must hold normalized category names.
pub fn out_of_vocabulary_objects(pred: &CountVector, vocabulary: &BTreeSet<String>) -> u64 {
    pred.iter()
        .filter(|(category, _)| !vocabulary.contains(*category))
        .map(|(_, n)| u64::from(n))
        .sum()
}

// ── Per-record scores and report aggregation ─────────────────────────────────

/// Everything measured about one prediction, ready for aggregation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoredRecord2D {
    /// Benchmark subtype the record belongs to, used for the breakdown.
    pub subtype: String,
    pub parse_failed: bool,
    pub counting: CountMetrics,
    /// Present only for comparison records.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comparison_correct: Option<bool>,
    /// Present only for spatial records.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spatial_correct: Option<bool>,
    pub out_of_vocabulary_objects: u64,
}

impl ScoredRecord2D {
    /// Scores a counting record. A failed parse is scored against an empty
    /// prediction, which zeroes every metric.
    pub fn counting(
        subtype: &str,
        gt: &CountVector,
        pred: Option<&CountVector>,
        vocabulary: Option<&BTreeSet<String>>,
    ) -> Self {
        let empty = CountVector::new();
        let parse_failed = pred.is_none();
        let pred = pred.unwrap_or(&empty);
        ScoredRecord2D {
            subtype: subtype.to_string(),
            parse_failed,
            counting: count_metrics(gt, pred),
            comparison_correct: None,
            spatial_correct: None,
            out_of_vocabulary_objects: vocabulary
                .map(|v| out_of_vocabulary_objects(pred, v))
                .unwrap_or(0),
        }
    }

    /// Scores a comparison record: counting metrics plus the relation check.
    #[allow(clippy::too_many_arguments)]
    pub fn comparison(
        subtype: &str,
        gt: &CountVector,
        pred: Option<&CountVector>,
        category_a: &str,
        category_b: &str,
        relation: ComparisonRelation,
        vocabulary: Option<&BTreeSet<String>>,
    ) -> Self {
        let mut record = Self::counting(subtype, gt, pred, vocabulary);
        record.comparison_correct = Some(
            pred.map(|p| comparison_accuracy(relation, p, category_a, category_b))
                .unwrap_or(false),
        );
        record
    }

    /// Scores a spatial record: counting metrics plus the relation check.
    pub fn spatial(
        subtype: &str,
        gt: &CountVector,
        case: &SpatialCase,
        vocabulary: Option<&BTreeSet<String>>,
    ) -> Self {
        let pred_counts = case.prediction.as_ref().map(CountVector::from_layout);
        let mut record = Self::counting(subtype, gt, pred_counts.as_ref(), vocabulary);
        record.spatial_correct = Some(spatial_case_correct(case));
        record
    }
}

/// Aggregated scores for one group of records. All rates are percentages;
/// precision, recall, and accuracy are means of the per-record values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubtypeBreakdown {
    pub records: u64,
    pub parse_failures: u64,
    pub empty_predictions: u64,
    pub precision: f64,
    pub recall: f64,
    pub counting_accuracy: f64,
    /// Mean over the records that carry a comparison check, when any do.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comparison_accuracy: Option<f64>,
    /// Mean over the records that carry a spatial check, when any do.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spatial_accuracy: Option<f64>,
    pub out_of_vocabulary_objects: u64,
}

/// Evaluation summary for one task: an overall row plus one row per subtype.
///
/// The grounding fields are reserved for scores produced by external vision
/// toolchains (an object detector for image-space accuracy, an image-text
/// encoder for similarity) so merged reports keep a single schema; this crate
/// never fills them in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport2D {
    pub task: String,
    pub overall: SubtypeBreakdown,
    pub subtypes: BTreeMap<String, SubtypeBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub glip_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clip_similarity: Option<f64>,
}

impl EvalReport2D {
    pub fn from_records(task: &str, records: &[ScoredRecord2D]) -> Self {
        let mut groups: BTreeMap<&str, Vec<&ScoredRecord2D>> = BTreeMap::new();
        for record in records {
            groups.entry(record.subtype.as_str()).or_default().push(record);
        }
        EvalReport2D {
            task: task.to_string(),
            overall: breakdown(records.iter()),
            subtypes: groups
                .into_iter()
                .map(|(subtype, group)| (subtype.to_string(), breakdown(group.into_iter())))
                .collect(),
            glip_accuracy: None,
            clip_similarity: None,
        }
    }
}

fn breakdown<'a>(records: impl Iterator<Item = &'a ScoredRecord2D>) -> SubtypeBreakdown {
    let mut out = SubtypeBreakdown::default();
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut accuracy_sum = 0.0;
    let mut comparison = (0u64, 0u64);
    let mut spatial = (0u64, 0u64);
    for record in records {
        out.records += 1;
        out.parse_failures += u64::from(record.parse_failed);
        out.empty_predictions += u64::from(record.counting.empty_prediction);
        out.out_of_vocabulary_objects += record.out_of_vocabulary_objects;
        precision_sum += record.counting.precision;
        recall_sum += record.counting.recall;
        accuracy_sum += record.counting.accuracy;
        if let Some(correct) = record.comparison_correct {
            comparison.0 += 1;
            comparison.1 += u64::from(correct);
        }
        if let Some(correct) = record.spatial_correct {
            spatial.0 += 1;
            spatial.1 += u64::from(correct);
        }
    }
    if out.records > 0 {
        let n = out.records as f64;
        out.precision = 100.0 * precision_sum / n;
        out.recall = 100.0 * recall_sum / n;
        out.counting_accuracy = 100.0 * accuracy_sum / n;
    }
    if comparison.0 > 0 {
        out.comparison_accuracy = Some(100.0 * comparison.1 as f64 / comparison.0 as f64);
    }
    if spatial.0 > 0 {
        out.spatial_accuracy = Some(100.0 * spatial.1 as f64 / spatial.0 as f64);
    }
    out
}

// ── Tests ────────────────────────────────────────────────────────────────────
