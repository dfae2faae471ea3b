//! Scene-level metrics for 3D layouts: boundary violations, category
//! distribution divergence, and similarity to the in-context examples.
//!
//! Boundary checks run in canvas pixel space (the frame predictions arrive
//! in); distribution and scene-difference metrics run in meters, with a
//! conversion helper to move a scene from one frame to the other.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    denormalize, footprint_corners, normalize_category, ConditionText, Dialect, Element, Element3D,
    Layout,
};

/// Default additive smoothing for the category divergence.
pub const DEFAULT_KL_SMOOTHING: f64 = 1e-6;

// ── Floor plans ──────────────────────────────────────────────────────────────

/// A rectangular floor plan spanning `[-length/2, length/2]` by
/// `[-width/2, width/2]` in meters about the room center. Only rectangles are
/// supported; irregular rooms are filtered out upstream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub length_m: f64,
    pub width_m: f64,
}

impl FloorPlan {
    pub fn new(length_m: f64, width_m: f64) -> Result<Self> {
        if !(length_m > 0.0) || !(width_m > 0.0) {
            return Err(Error::invalid_argument(format!(
                "floor plan dimensions must be positive, got {length_m} x {width_m}"
            )));
        }
        Ok(FloorPlan { length_m, width_m })
    }

    /// Reads the plan from a room-spec condition.
    pub fn from_condition(condition: &ConditionText) -> Result<Self> {
        let (length_m, width_m) = condition.room_dims().ok_or_else(|| {
            Error::invalid_argument("condition carries no room dimensions")
        })?;
        FloorPlan::new(length_m, width_m)
    }

    /// The longer side, which spans the full canvas when normalizing.
    pub fn max_dim_m(&self) -> f64 {
        self.length_m.max(self.width_m)
    }
}

// ── Frame conversion ─────────────────────────────────────────────────────────

fn elements3d(scene: &Layout) -> Result<Vec<&Element3D>> {
    if scene.dialect != Dialect::Scene3D {
        return Err(Error::DialectMismatch {
            expected: Dialect::Scene3D.as_str().to_string(),
            found: scene.dialect.as_str().to_string(),
        });
    }
    scene
        .elements
        .iter()
        .map(|e| {
            e.as_box3d().ok_or_else(|| Error::DialectMismatch {
                expected: Dialect::Scene3D.as_str().to_string(),
                found: e.dialect().as_str().to_string(),
            })
        })
        .collect()
}

/// Converts a scene from canvas pixels to meters, re-centering floor positions
/// about the room center so they line up with [`FloorPlan`]'s frame. Sizes and
/// the vertical position scale by the same factor; orientation is unchanged.
///
/// The returned layout exists purely for metric computation; its canvas still
/// describes the original pixel frame.
pub fn scene_in_meters(scene: &Layout, plan: &FloorPlan) -> Result<Layout> {
    let scale_m = scene.canvas.meters_per_canvas.unwrap_or(plan.max_dim_m());
    let canvas_max = scene.canvas.max_extent_px();
    let to_m = |v: f64| denormalize(v, scale_m, canvas_max);
    let mut converted = scene.clone();
    converted.elements = scene
        .elements
        .iter()
        .map(|e| match e.as_box3d() {
            Some(b) => Ok(Element::Box3D(Element3D {
                category: b.category.clone(),
                length: to_m(b.length)?,
                width: to_m(b.width)?,
                height: to_m(b.height)?,
                left: to_m(b.left)? - plan.length_m / 2.0,
                top: to_m(b.top)? - plan.width_m / 2.0,
                depth: to_m(b.depth)?,
                orientation_deg: b.orientation_deg,
            })),
            None => Err(Error::DialectMismatch {
                expected: Dialect::Scene3D.as_str().to_string(),
                found: e.dialect().as_str().to_string(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(converted)
}

// ── Out-of-bound checks ──────────────────────────────────────────────────────

/// Per-element and whole-scene boundary verdicts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutOfBoundCheck {
    pub per_element: Vec<bool>,
    pub scene_violates: bool,
}

/// Tests every element's rotated footprint against the floor-plan rectangle.
///
/// The scene is taken in canvas pixels; the plan rectangle is mapped into the
/// same frame and inflated by `epsilon_px` on every side. A corner exactly on
/// the (inflated) boundary does not violate. Element height plays no role:
/// out-of-bound is a floor-plan notion, so even a pendant lamp is judged by
/// its footprint.
pub fn out_of_bound(scene: &Layout, plan: &FloorPlan, epsilon_px: f64) -> Result<OutOfBoundCheck> {
    let elements = elements3d(scene)?;
    let scale_m = scene.canvas.meters_per_canvas.unwrap_or(plan.max_dim_m());
    let canvas_max = f64::from(scene.canvas.max_extent_px());
    let length_px = plan.length_m / scale_m * canvas_max;
    let width_px = plan.width_m / scale_m * canvas_max;
    let (x_min, x_max) = (-epsilon_px, length_px + epsilon_px);
    let (y_min, y_max) = (-epsilon_px, width_px + epsilon_px);
    let per_element: Vec<bool> = elements
        .iter()
        .map(|e| {
            footprint_corners(e.left, e.top, e.length, e.width, e.orientation_deg)
                .iter()
                .any(|&(x, y)| x < x_min || x > x_max || y < y_min || y > y_max)
        })
        .collect();
    let scene_violates = per_element.iter().any(|&v| v);
    Ok(OutOfBoundCheck {
        per_element,
        scene_violates,
    })
}

/// Percentage of scenes with at least one out-of-bound element.
pub fn oob_rate<'a, I>(scenes: I, epsilon_px: f64) -> Result<f64>
where
    I: IntoIterator<Item = (&'a Layout, &'a FloorPlan)>,
{
    let mut total = 0u64;
    let mut violating = 0u64;
    for (scene, plan) in scenes {
        total += 1;
        violating += u64::from(out_of_bound(scene, plan, epsilon_px)?.scene_violates);
    }
    if total == 0 {
        return Err(Error::invalid_argument(
            "out-of-bound rate over an empty scene list is undefined",
        ));
    }
    Ok(100.0 * violating as f64 / total as f64)
}

// ── Category distributions ───────────────────────────────────────────────────

/// A probability distribution over a fixed category vocabulary. Zero-mass
/// categories stay in the map so two distributions can be compared entry by
/// entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryDistribution {
    probabilities: BTreeMap<String, f64>,
}

impl CategoryDistribution {
    /// Validates that the probabilities are nonnegative and sum to one.
    pub fn new<S, I>(probabilities: I) -> Result<Self>
    where
        S: AsRef<str>,
        I: IntoIterator<Item = (S, f64)>,
    {
        let mut map = BTreeMap::new();
        for (category, p) in probabilities {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "probability for {:?} must be a nonnegative finite number, got {p}",
                    category.as_ref()
                )));
            }
            if map.insert(normalize_category(category.as_ref()), p).is_some() {
                return Err(Error::invalid_argument(format!(
                    "duplicate category {:?} in distribution",
                    category.as_ref()
                )));
            }
        }
        let sum: f64 = map.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_argument(format!(
                "probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(CategoryDistribution { probabilities: map })
    }

    /// Builds the relative frequency distribution of `counts` over a fixed
    /// vocabulary. Every vocabulary category appears (possibly with zero
    /// mass); counts outside the vocabulary are rejected.
    pub fn from_counts<'a, C, V>(counts: C, vocabulary: V) -> Result<Self>
    where
        C: IntoIterator<Item = (&'a str, u64)>,
        V: IntoIterator<Item = &'a str>,
    {
        let mut map: BTreeMap<String, u64> = vocabulary
            .into_iter()
            .map(|c| (normalize_category(c), 0))
            .collect();
        let mut total = 0u64;
        for (category, n) in counts {
            let key = normalize_category(category);
            match map.get_mut(&key) {
                Some(slot) => *slot += n,
                None => {
                    return Err(Error::invalid_argument(format!(
                        "category {key:?} is outside the distribution vocabulary"
                    )))
                }
            }
            total += n;
        }
        if total == 0 {
            return Err(Error::invalid_argument(
                "cannot build a distribution from zero objects",
            ));
        }
        Ok(CategoryDistribution {
            probabilities: map
                .into_iter()
                .map(|(c, n)| (c, n as f64 / total as f64))
                .collect(),
        })
    }

    pub fn probability(&self, category: &str) -> Option<f64> {
        self.probabilities.get(&normalize_category(category)).copied()
    }

    pub fn support(&self) -> impl Iterator<Item = &str> {
        self.probabilities.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// KL divergence of `pred` from `gt` in nats (natural logarithm).
///
/// Both distributions receive `smoothing` additive mass per category and are
/// renormalized before the divergence is taken, so a category missing from the
/// prediction yields a large finite penalty instead of infinity (as long as
/// `smoothing > 0`). The supports must match exactly.
pub fn kl_divergence(
    gt: &CategoryDistribution,
    pred: &CategoryDistribution,
    smoothing: f64,
) -> Result<f64> {
    if !(smoothing >= 0.0) {
        return Err(Error::invalid_argument("smoothing must be nonnegative"));
    }
    if gt.probabilities.len() != pred.probabilities.len()
        || !gt
            .probabilities
            .keys()
            .zip(pred.probabilities.keys())
            .all(|(a, b)| a == b)
    {
        return Err(Error::invalid_argument(
            "distributions must share the same category support",
        ));
    }
    let smooth = |dist: &CategoryDistribution| -> Vec<f64> {
        let raised: Vec<f64> = dist.probabilities.values().map(|p| p + smoothing).collect();
        let total: f64 = raised.iter().sum();
        raised.into_iter().map(|p| p / total).collect()
    };
    let g = smooth(gt);
    let p = smooth(pred);
    let mut kl = 0.0;
    for (gi, pi) in g.into_iter().zip(p) {
        if gi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += gi * (gi / pi).ln();
    }
    Ok(kl)
}

// ── Scene difference ─────────────────────────────────────────────────────────

/// Asymmetric difference between a generated scene and one exemplar, in
/// meters. Both layouts must already be in the meter frame (see
/// [`scene_in_meters`]).
///
/// Each generated element contributes the L1 distance (over position and size)
/// to its nearest same-category exemplar element; with no same-category
/// element to match, the exemplar side counts as all zeros, so the term is the
/// element's own L1 magnitude. Orientation does not enter the sum.
pub fn scene_difference(generated: &Layout, exemplar: &Layout) -> Result<f64> {
    let gen_elements = elements3d(generated)?;
    let ex_elements = elements3d(exemplar)?;
    let mut total = 0.0;
    for g in &gen_elements {
        let own = g.left.abs()
            + g.top.abs()
            + g.depth.abs()
            + g.length.abs()
            + g.width.abs()
            + g.height.abs();
        let best = ex_elements
            .iter()
            .filter(|e| e.category == g.category)
            .map(|e| {
                (e.left - g.left).abs()
                    + (e.top - g.top).abs()
                    + (e.depth - g.depth).abs()
                    + (e.length - g.length).abs()
                    + (e.width - g.width).abs()
                    + (e.height - g.height).abs()
            })
            .fold(f64::INFINITY, f64::min);
        total += if best.is_finite() { best } else { own };
    }
    Ok(total)
}

/// The smallest difference between a generated scene and any of the exemplars
/// it was prompted with.
pub fn min_scene_difference(generated: &Layout, exemplars: &[Layout]) -> Result<f64> {
    if exemplars.is_empty() {
        return Err(Error::invalid_argument(
            "minimum scene difference needs at least one exemplar",
        ));
    }
    let mut min = f64::INFINITY;
    for exemplar in exemplars {
        min = min.min(scene_difference(generated, exemplar)?);
    }
    Ok(min)
}

/// How a generated scene relates to its in-context examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationClass {
    /// Nearly identical to an exemplar.
    Duplication,
    /// Recognizably derived from an exemplar with moderate edits.
    Modification,
    /// Substantially different from every exemplar.
    Generation,
}

/// Buckets a minimum scene difference: below 1.0 counts as duplication, below
/// 6.0 as modification, anything larger as genuine generation.
pub fn classify_generation(min_diff: f64) -> GenerationClass {
    if min_diff < 1.0 {
        GenerationClass::Duplication
    } else if min_diff < 6.0 {
        GenerationClass::Modification
    } else {
        GenerationClass::Generation
    }
}

// ── Report ───────────────────────────────────────────────────────────────────

/// Counts per generation class plus the raw per-scene minima the histogram is
/// drawn from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneDifferenceSummary {
    pub duplication: u64,
    pub modification: u64,
    pub generation: u64,
    pub differences: Vec<f64>,
}

impl SceneDifferenceSummary {
    pub fn from_differences(differences: Vec<f64>) -> Self {
        let mut summary = SceneDifferenceSummary {
            differences,
            ..Default::default()
        };
        for &d in &summary.differences {
            match classify_generation(d) {
                GenerationClass::Duplication => summary.duplication += 1,
                GenerationClass::Modification => summary.modification += 1,
                GenerationClass::Generation => summary.generation += 1,
            }
        }
        summary
    }
}

/// Evaluation summary for one 3D run. The FID field is reserved for a score
/// computed by an external rendering pipeline and is never filled in here; the
/// log base records how the divergence was taken.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport3D {
    pub scenes: u64,
    pub parse_failures: u64,
    pub out_of_bound_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub category_kl: Option<f64>,
    pub kl_log_base: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fid: Option<f64>,
    pub scene_difference: SceneDifferenceSummary,
}

impl EvalReport3D {
    pub fn new(
        scenes: u64,
        parse_failures: u64,
        out_of_bound_rate: f64,
        category_kl: Option<f64>,
        scene_difference: SceneDifferenceSummary,
    ) -> Self {
        EvalReport3D {
            scenes,
            parse_failures,
            out_of_bound_rate,
            category_kl,
            kl_log_base: "natural".to_string(),
            fid: None,
            scene_difference,
        }
    }
}

// ── Tests ────────────────────────────────────────────────────────────────────
