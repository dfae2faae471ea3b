//! Domain types shared by every other module: canvas conventions, placed
//! elements, layouts, and the basic geometry they carry.
//!
//! Coordinate conventions:
//! - 2D: origin top-left, y increases downward (image convention).
//! - 3D: `left`/`top` are the element's footprint center in canvas-space
//!   floor coordinates, `depth` is the bottom of the object above the floor,
//!   `orientation_deg` is normalized into `[0, 360)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 17 skeleton node names, in canonical serialization order.
pub const KEYPOINT_NODE_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Default 2D canvas extent in pixels.
pub const DEFAULT_CANVAS_2D: u32 = 64;
/// Default 3D canvas extent in pixels (max room side maps to this).
pub const DEFAULT_CANVAS_3D: u32 = 256;

// ── Canvas ────────────────────────────────────────────────────────────

/// Canvas geometry plus the physical scale used for 3D scenes.
///
/// `meters_per_canvas` maps physical units to the full canvas extent:
/// a value of `v` meters lands at `v / meters_per_canvas * max_extent_px()`
/// pixels. It is only meaningful for the 3D dialect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meters_per_canvas: Option<f64>,
}

impl CanvasSpec {
    pub fn new(width_px: u32, height_px: u32) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::invalid_argument("canvas dimensions must be positive"));
        }
        Ok(CanvasSpec { width_px, height_px, meters_per_canvas: None })
    }

    /// Standard 64x64 2D image canvas.
    pub fn default_2d() -> Self {
        CanvasSpec { width_px: DEFAULT_CANVAS_2D, height_px: DEFAULT_CANVAS_2D, meters_per_canvas: None }
    }

    /// Standard 256px 3D canvas with the room's larger side mapping to the
    /// full extent.
    pub fn default_3d(meters_per_canvas: f64) -> Result<Self> {
        if meters_per_canvas <= 0.0 {
            return Err(Error::invalid_argument("meters_per_canvas must be positive"));
        }
        Ok(CanvasSpec {
            width_px: DEFAULT_CANVAS_3D,
            height_px: DEFAULT_CANVAS_3D,
            meters_per_canvas: Some(meters_per_canvas),
        })
    }

    pub fn with_scale(mut self, meters_per_canvas: f64) -> Result<Self> {
        if meters_per_canvas <= 0.0 {
            return Err(Error::invalid_argument("meters_per_canvas must be positive"));
        }
        self.meters_per_canvas = Some(meters_per_canvas);
        Ok(self)
    }

    pub fn max_extent_px(&self) -> u32 {
        self.width_px.max(self.height_px)
    }
}

// ── Unit mapping ──────────────────────────────────────────────────────

/// Rescale a physical length so that `room_max_m` meters span `canvas_max_px`.
pub fn normalize(value_m: f64, room_max_m: f64, canvas_max_px: u32) -> Result<f64> {
    if room_max_m <= 0.0 {
        return Err(Error::invalid_argument(format!(
            "room_max_m must be positive, got {room_max_m}"
        )));
    }
    Ok(value_m / room_max_m * f64::from(canvas_max_px))
}

/// Inverse of [`normalize`]; round-trips within 1e-9 before quantization.
pub fn denormalize(value_px: f64, room_max_m: f64, canvas_max_px: u32) -> Result<f64> {
    if room_max_m <= 0.0 {
        return Err(Error::invalid_argument(format!(
            "room_max_m must be positive, got {room_max_m}"
        )));
    }
    Ok(value_px / f64::from(canvas_max_px) * room_max_m)
}

/// Trim and lowercase a category label. Internal underscores and spaces are
/// preserved; matching between predicted and ground-truth categories is
/// exact equality on this form.
pub fn normalize_category(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Fold an angle in degrees into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let folded = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if folded >= 360.0 { folded - 360.0 } else { folded }
}

// ── Elements ──────────────────────────────────────────────────────────

/// One placed 2D object: free-text category plus an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element2D {
    pub category: String,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl Element2D {
    pub fn new(category: impl Into<String>, left: f64, top: f64, width: f64, height: f64) -> Self {
        Element2D {
            category: normalize_category(&category.into()),
            left,
            top,
            width: width.max(0.0),
            height: height.max(0.0),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }
}

/// One placed 3D object: oriented box with a footprint-centered position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element3D {
    pub category: String,
    /// Size along the element's local x axis.
    pub length: f64,
    /// Size along the element's local y axis.
    pub width: f64,
    /// Vertical size.
    pub height: f64,
    /// Footprint center, x.
    pub left: f64,
    /// Footprint center, y.
    pub top: f64,
    /// Bottom of the object above the floor.
    pub depth: f64,
    /// Rotation about the vertical axis, normalized into [0, 360).
    pub orientation_deg: f64,
}

impl Element3D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        category: impl Into<String>,
        length: f64,
        width: f64,
        height: f64,
        left: f64,
        top: f64,
        depth: f64,
        orientation_deg: f64,
    ) -> Self {
        Element3D {
            category: normalize_category(&category.into()),
            length: length.max(0.0),
            width: width.max(0.0),
            height: height.max(0.0),
            left,
            top,
            depth,
            orientation_deg: normalize_degrees(orientation_deg),
        }
    }
}

/// Skeleton keypoints for one person. Exactly the 17 canonical nodes, stored
/// in [`KEYPOINT_NODE_NAMES`] order; `(0, 0)` marks an invisible node.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub person_index: u32,
    pub nodes: [(f64, f64); 17],
}

impl KeypointSet {
    pub fn new(person_index: u32) -> Self {
        KeypointSet { person_index, nodes: [(0.0, 0.0); 17] }
    }

    pub fn node_index(name: &str) -> Option<usize> {
        KEYPOINT_NODE_NAMES.iter().position(|n| *n == name)
    }

    pub fn set_node(&mut self, name: &str, left: f64, top: f64) -> Result<()> {
        let idx = Self::node_index(name)
            .ok_or_else(|| Error::invalid_argument(format!("unknown keypoint node '{name}'")))?;
        self.nodes[idx] = (left, top);
        Ok(())
    }

    pub fn node(&self, name: &str) -> Option<(f64, f64)> {
        Self::node_index(name).map(|i| self.nodes[i])
    }

    /// `(0, 0)` is the invisibility convention.
    pub fn is_visible(&self, idx: usize) -> bool {
        self.nodes[idx] != (0.0, 0.0)
    }
}

// Wire form: {"person_index": 1, "nodes": {"nose": [x, y], ...}}
#[derive(Serialize, Deserialize)]
struct KeypointSetWire {
    person_index: u32,
    nodes: BTreeMap<String, (f64, f64)>,
}

impl Serialize for KeypointSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut nodes = BTreeMap::new();
        for (i, name) in KEYPOINT_NODE_NAMES.iter().enumerate() {
            nodes.insert((*name).to_string(), self.nodes[i]);
        }
        KeypointSetWire { person_index: self.person_index, nodes }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KeypointSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = KeypointSetWire::deserialize(deserializer)?;
        let mut set = KeypointSet::new(wire.person_index);
        for (name, pos) in &wire.nodes {
            let idx = KeypointSet::node_index(name)
                .ok_or_else(|| D::Error::custom(format!("unknown keypoint node '{name}'")))?;
            set.nodes[idx] = *pos;
        }
        if wire.nodes.len() != 17 {
            return Err(D::Error::custom(format!(
                "keypoint set must contain exactly 17 nodes, got {}",
                wire.nodes.len()
            )));
        }
        Ok(set)
    }
}

/// A single layout element in any dialect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Element {
    Box3D(Element3D),
    Box2D(Element2D),
    Keypoints(KeypointSet),
}

impl Element {
    pub fn dialect(&self) -> Dialect {
        match self {
            Element::Box2D(_) => Dialect::Image2D,
            Element::Box3D(_) => Dialect::Scene3D,
            Element::Keypoints(_) => Dialect::Keypoint,
        }
    }

    pub fn category(&self) -> Option<&str> {
        match self {
            Element::Box2D(e) => Some(&e.category),
            Element::Box3D(e) => Some(&e.category),
            Element::Keypoints(_) => None,
        }
    }

    pub fn as_box2d(&self) -> Option<&Element2D> {
        match self {
            Element::Box2D(e) => Some(e),
            _ => None,
        }
    }

    pub fn as_box3d(&self) -> Option<&Element3D> {
        match self {
            Element::Box3D(e) => Some(e),
            _ => None,
        }
    }
}

// ── Conditions ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Caption,
    RoomSpec,
}

/// The text condition a layout is generated from: either a free-form caption
/// or a room specification with physical dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionText {
    pub kind: ConditionKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_length_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_width_m: Option<f64>,
}

impl ConditionText {
    pub fn caption(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid_argument("condition text must be nonempty"));
        }
        Ok(ConditionText { kind: ConditionKind::Caption, text, room_length_m: None, room_width_m: None })
    }

    pub fn room_spec(room_type: impl Into<String>, length_m: f64, width_m: f64) -> Result<Self> {
        let text = room_type.into();
        if text.trim().is_empty() {
            return Err(Error::invalid_argument("room type must be nonempty"));
        }
        if length_m <= 0.0 || width_m <= 0.0 {
            return Err(Error::invalid_argument("room dimensions must be positive"));
        }
        Ok(ConditionText {
            kind: ConditionKind::RoomSpec,
            text,
            room_length_m: Some(length_m),
            room_width_m: Some(width_m),
        })
    }

    pub fn room_dims(&self) -> Option<(f64, f64)> {
        match (self.room_length_m, self.room_width_m) {
            (Some(l), Some(w)) => Some((l, w)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::invalid_argument("condition text must be nonempty"));
        }
        if self.kind == ConditionKind::RoomSpec && self.room_dims().is_none() {
            return Err(Error::invalid_argument("room_spec condition requires both room dimensions"));
        }
        Ok(())
    }
}

// ── Layout ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    #[serde(rename = "image2d")]
    Image2D,
    #[serde(rename = "scene3d")]
    Scene3D,
    Keypoint,
}

impl Dialect {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dialect::Image2D => "image2d",
            Dialect::Scene3D => "scene3d",
            Dialect::Keypoint => "keypoint",
        }
    }
}

impl std::fmt::Display for Dialect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rounding mode applied to element geometry before serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizeMode {
    /// Round every geometric field to the nearest integer pixel.
    IntegerPx,
    /// Divide lengths by the canvas extent and round to 2 decimals.
    FloatFraction,
}

/// An ordered collection of elements plus canvas and condition metadata.
/// Element order is preserved exactly as generated or parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub dialect: Dialect,
    pub condition: ConditionText,
    pub canvas: CanvasSpec,
    pub elements: Vec<Element>,
}

impl Layout {
    pub fn new(
        dialect: Dialect,
        condition: ConditionText,
        canvas: CanvasSpec,
        elements: Vec<Element>,
    ) -> Result<Self> {
        let layout = Layout { dialect, condition, canvas, elements };
        layout.validate()?;
        Ok(layout)
    }

    /// Check the cross-field invariants: uniform element dialect and a
    /// well-formed condition.
    pub fn validate(&self) -> Result<()> {
        self.condition.validate()?;
        for el in &self.elements {
            if el.dialect() != self.dialect {
                return Err(Error::DialectMismatch {
                    expected: self.dialect.as_str().to_string(),
                    found: el.dialect().as_str().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Category -> count over box elements (keypoint sets carry no category).
    pub fn category_counts(&self) -> BTreeMap<String, u32> {
        let mut counts = BTreeMap::new();
        for el in &self.elements {
            if let Some(cat) = el.category() {
                *counts.entry(cat.to_string()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Apply [`quantize_element`] (or its keypoint analog) to every element.
    pub fn quantize(&self, mode: QuantizeMode) -> Layout {
        let elements = self
            .elements
            .iter()
            .map(|el| match el {
                Element::Box2D(e) => Element::Box2D(quantize_element2d(e, mode, &self.canvas)),
                Element::Box3D(e) => Element::Box3D(quantize_element3d(e, mode, &self.canvas)),
                Element::Keypoints(k) => Element::Keypoints(quantize_keypoints(k, mode, &self.canvas)),
            })
            .collect();
        Layout { dialect: self.dialect, condition: self.condition.clone(), canvas: self.canvas.clone(), elements }
    }

    /// Clamp every 2D box into the canvas; returns whether any was clamped.
    /// Non-2D elements are left untouched.
    pub fn clamp_to_canvas(&self) -> (Layout, bool) {
        let mut any = false;
        let elements = self
            .elements
            .iter()
            .map(|el| match el {
                Element::Box2D(e) => {
                    let (clamped, did) = clamp_to_canvas(e, &self.canvas);
                    any |= did;
                    Element::Box2D(clamped)
                }
                other => other.clone(),
            })
            .collect();
        (
            Layout {
                dialect: self.dialect,
                condition: self.condition.clone(),
                canvas: self.canvas.clone(),
                elements,
            },
            any,
        )
    }
}

// ── Quantization ──────────────────────────────────────────────────────

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Quantize a 2D element for serialization. `IntegerPx` rounds to whole
/// pixels; `FloatFraction` rescales to canvas-relative fractions rounded to
/// 2 decimals (widths against canvas width, heights against canvas height).
pub fn quantize_element2d(e: &Element2D, mode: QuantizeMode, canvas: &CanvasSpec) -> Element2D {
    match mode {
        QuantizeMode::IntegerPx => Element2D {
            category: e.category.clone(),
            left: e.left.round(),
            top: e.top.round(),
            width: e.width.round(),
            height: e.height.round(),
        },
        QuantizeMode::FloatFraction => {
            let w = f64::from(canvas.width_px);
            let h = f64::from(canvas.height_px);
            Element2D {
                category: e.category.clone(),
                left: round2(e.left / w),
                top: round2(e.top / h),
                width: round2(e.width / w),
                height: round2(e.height / h),
            }
        }
    }
}

/// Quantize a 3D element. Lengths and positions rescale against the max
/// canvas extent in fraction mode; orientation stays in degrees in both
/// modes (rounded like the other fields).
pub fn quantize_element3d(e: &Element3D, mode: QuantizeMode, canvas: &CanvasSpec) -> Element3D {
    match mode {
        QuantizeMode::IntegerPx => Element3D {
            category: e.category.clone(),
            length: e.length.round(),
            width: e.width.round(),
            height: e.height.round(),
            left: e.left.round(),
            top: e.top.round(),
            depth: e.depth.round(),
            orientation_deg: normalize_degrees(e.orientation_deg.round()),
        },
        QuantizeMode::FloatFraction => {
            let m = f64::from(canvas.max_extent_px());
            Element3D {
                category: e.category.clone(),
                length: round2(e.length / m),
                width: round2(e.width / m),
                height: round2(e.height / m),
                left: round2(e.left / m),
                top: round2(e.top / m),
                depth: round2(e.depth / m),
                orientation_deg: normalize_degrees(round2(e.orientation_deg)),
            }
        }
    }
}

pub fn quantize_keypoints(k: &KeypointSet, mode: QuantizeMode, canvas: &CanvasSpec) -> KeypointSet {
    let mut out = KeypointSet::new(k.person_index);
    let w = f64::from(canvas.width_px);
    let h = f64::from(canvas.height_px);
    for (i, (x, y)) in k.nodes.iter().enumerate() {
        out.nodes[i] = match mode {
            QuantizeMode::IntegerPx => (x.round(), y.round()),
            QuantizeMode::FloatFraction => (round2(x / w), round2(y / h)),
        };
    }
    out
}

// ── Clamping ──────────────────────────────────────────────────────────

/// Clip a 2D box so it lies within the canvas. Interval intersection per
/// axis: the box's `[left, left+width]` span is intersected with
/// `[0, width_px]`, and likewise vertically. Returns the clipped element and
/// whether any change was made.
pub fn clamp_to_canvas(e: &Element2D, canvas: &CanvasSpec) -> (Element2D, bool) {
    let clip = |lo: f64, extent: f64, max: f64| -> (f64, f64) {
        let a = lo.clamp(0.0, max);
        let b = (lo + extent).clamp(0.0, max);
        (a, (b - a).max(0.0))
    };
    let (left, width) = clip(e.left, e.width, f64::from(canvas.width_px));
    let (top, height) = clip(e.top, e.height, f64::from(canvas.height_px));
    let clamped = Element2D { category: e.category.clone(), left, top, width, height };
    let changed = clamped != *e;
    (clamped, changed)
}

// ── Footprint geometry ────────────────────────────────────────────────

/// Corners of a `length x width` rectangle centered at `(cx, cy)` and rotated
/// by `orientation_deg` about its center. Shared by the out-of-bound test and
/// the top-down renderer.
pub fn footprint_corners(cx: f64, cy: f64, length: f64, width: f64, orientation_deg: f64) -> [(f64, f64); 4] {
    let theta = normalize_degrees(orientation_deg).to_radians();
    let (sin, cos) = theta.sin_cos();
    let hl = length / 2.0;
    let hw = width / 2.0;
    let local = [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)];
    local.map(|(x, y)| (cx + x * cos - y * sin, cy + x * sin + y * cos))
}
