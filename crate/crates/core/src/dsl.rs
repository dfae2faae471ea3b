//! The layout language: serializing layouts into CSS-style demonstration
//! text and parsing completions back, tolerantly.
//!
//! Reference forms, one element per line:
//!
//! ```text
//! teddy bear {width: 32px; height: 45px; left: 31px; top: 9px; }   css + normalized
//! teddy bear {width: 0.50; height: 0.71; left: 0.50; top: 0.15; }  css, fractions
//! teddy bear: 32, 45, 31, 9                                        plain, normalized
//! teddy bear: 0.50, 0.71, 0.50, 0.15                               plain, fractions
//! ```
//!
//! The keypoint dialect emits a `person#k:` header followed by the 17 node
//! lines in canonical order and always uses the css + normalized form.
//!
//! The parser never fails hard: any text yields a [`ParseOutcome`], worst
//! case an empty layout with `failed = true`.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    normalize_category, normalize_degrees, CanvasSpec, ConditionText, Dialect, Element, Element2D,
    Element3D, KeypointSet, Layout, QuantizeMode, KEYPOINT_NODE_NAMES,
};

pub const PROPS_2D: [&str; 4] = ["width", "height", "left", "top"];
pub const PROPS_3D: [&str; 7] = ["length", "width", "height", "left", "top", "depth", "orientation"];
pub const PROPS_KEYPOINT: [&str; 2] = ["left", "top"];

// ── Dialect spec ──────────────────────────────────────────────────────

/// Which dialect to speak plus the two style toggles that make up the
/// format ablation grid. Property order and units are fixed per dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialectSpec {
    pub dialect: Dialect,
    /// `selector {prop: value; ...}` lines when true, `selector: v1, v2, ...`
    /// when false.
    pub use_css: bool,
    /// Integer pixel values with unit suffixes when true, canvas-relative
    /// fractions as 2-decimal floats with no unit when false.
    pub use_normalized_ints: bool,
}

impl DialectSpec {
    /// The standard form: CSS structure with normalized integer pixels.
    pub fn css(dialect: Dialect) -> Self {
        DialectSpec { dialect, use_css: true, use_normalized_ints: true }
    }

    pub fn new(dialect: Dialect, use_css: bool, use_normalized_ints: bool) -> Self {
        DialectSpec { dialect, use_css, use_normalized_ints }
    }

    pub fn property_order(&self) -> &'static [&'static str] {
        match self.dialect {
            Dialect::Image2D => &PROPS_2D,
            Dialect::Scene3D => &PROPS_3D,
            Dialect::Keypoint => &PROPS_KEYPOINT,
        }
    }

    /// Unit suffix for a property in the normalized form.
    pub fn unit_for(property: &str) -> &'static str {
        if property == "orientation" { "degrees" } else { "px" }
    }

    /// The quantization the serialized form expects.
    pub fn quantize_mode(&self) -> QuantizeMode {
        if self.effective_normalized() {
            QuantizeMode::IntegerPx
        } else {
            QuantizeMode::FloatFraction
        }
    }

    /// Header token introducing a layout body in prompts.
    pub fn layout_header(&self) -> &'static str {
        match self.dialect {
            Dialect::Keypoint => "Keypoints:",
            _ => "Layout:",
        }
    }

    // The keypoint dialect has no ablation variants; it always speaks the
    // css + normalized form.
    fn effective_css(&self) -> bool {
        self.use_css || self.dialect == Dialect::Keypoint
    }

    fn effective_normalized(&self) -> bool {
        self.use_normalized_ints || self.dialect == Dialect::Keypoint
    }
}

// ── Parse outcome ─────────────────────────────────────────────────────

/// Recoverable deviations the parser repaired or skipped past.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// A declaration lacked its expected px/degrees suffix.
    MissingUnit { line: usize, property: String },
    /// A declaration lacked its trailing semicolon.
    MissingSemicolon { line: usize },
    /// A declaration was terminated with a colon instead of a semicolon.
    ColonForSemicolon { line: usize },
    /// Recognized properties appeared out of canonical order.
    ReorderedProperties { line: usize },
    /// An unrecognized property was ignored.
    UnknownProperty { line: usize, name: String },
    /// A recognized property appeared more than once; the first value wins.
    DuplicateProperty { line: usize, name: String },
    /// A plain-form line carried more values than the dialect has properties.
    ExtraValues { line: usize, count: usize },
    /// An expected property was absent and filled with 0.
    MissingProperty { line: usize, name: String },
    /// A line inside an otherwise parsable block matched no element grammar.
    UnparsableLine { line: usize },
    /// A keypoint line named a node outside the 17-node skeleton; dropped.
    UnknownNode { line: usize, name: String },
    /// A keypoint node appeared more than once; the first position wins.
    DuplicateNode { line: usize, name: String },
    /// A person block ended with nodes unstated; filled as invisible (0, 0).
    MissingNodes { person: u32, count: usize },
    /// Keypoint node lines appeared before any `person#k:` header.
    ImplicitPersonHeader { line: usize },
}

impl ParseWarning {
    /// Stable machine-readable tag, independent of the carried context.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseWarning::MissingUnit { .. } => "missing_unit",
            ParseWarning::MissingSemicolon { .. } => "missing_semicolon",
            ParseWarning::ColonForSemicolon { .. } => "colon_for_semicolon",
            ParseWarning::ReorderedProperties { .. } => "reordered_properties",
            ParseWarning::UnknownProperty { .. } => "unknown_property",
            ParseWarning::DuplicateProperty { .. } => "duplicate_property",
            ParseWarning::ExtraValues { .. } => "extra_values",
            ParseWarning::MissingProperty { .. } => "missing_property",
            ParseWarning::UnparsableLine { .. } => "unparsable_line",
            ParseWarning::UnknownNode { .. } => "unknown_node",
            ParseWarning::DuplicateNode { .. } => "duplicate_node",
            ParseWarning::MissingNodes { .. } => "missing_nodes",
            ParseWarning::ImplicitPersonHeader { .. } => "implicit_person_header",
        }
    }
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::MissingUnit { line, property } => {
                write!(f, "line {line}: '{property}' missing unit suffix")
            }
            ParseWarning::MissingSemicolon { line } => {
                write!(f, "line {line}: declaration missing semicolon")
            }
            ParseWarning::ColonForSemicolon { line } => {
                write!(f, "line {line}: colon used in place of semicolon")
            }
            ParseWarning::ReorderedProperties { line } => {
                write!(f, "line {line}: properties out of canonical order")
            }
            ParseWarning::UnknownProperty { line, name } => {
                write!(f, "line {line}: unknown property '{name}' ignored")
            }
            ParseWarning::DuplicateProperty { line, name } => {
                write!(f, "line {line}: duplicate property '{name}', first value kept")
            }
            ParseWarning::ExtraValues { line, count } => {
                write!(f, "line {line}: {count} extra values ignored")
            }
            ParseWarning::MissingProperty { line, name } => {
                write!(f, "line {line}: property '{name}' missing, filled with 0")
            }
            ParseWarning::UnparsableLine { line } => write!(f, "line {line}: unparsable, skipped"),
            ParseWarning::UnknownNode { line, name } => {
                write!(f, "line {line}: unknown keypoint node '{name}' dropped")
            }
            ParseWarning::DuplicateNode { line, name } => {
                write!(f, "line {line}: duplicate keypoint node '{name}', first kept")
            }
            ParseWarning::MissingNodes { person, count } => {
                write!(f, "person#{person}: {count} nodes missing, filled as invisible")
            }
            ParseWarning::ImplicitPersonHeader { line } => {
                write!(f, "line {line}: keypoint nodes before any person header")
            }
        }
    }
}

/// Result of parsing completion text. `failed` is true exactly when zero
/// elements were recovered; the layout's condition is a placeholder the
/// caller replaces with the real test condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub layout: Layout,
    pub warnings: Vec<ParseWarning>,
    pub failed: bool,
}

// ── Serialization ─────────────────────────────────────────────────────

fn fmt_value(v: f64, normalized: bool) -> String {
    if normalized {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn element_values(el: &Element) -> Result<Vec<f64>> {
    match el {
        Element::Box2D(e) => Ok(vec![e.width, e.height, e.left, e.top]),
        Element::Box3D(e) => {
            Ok(vec![e.length, e.width, e.height, e.left, e.top, e.depth, e.orientation_deg])
        }
        Element::Keypoints(_) => Err(Error::invalid_argument(
            "keypoint sets serialize per node, not per element values",
        )),
    }
}

fn serialize_css_line(selector: &str, props: &[&str], values: &[f64], normalized: bool) -> String {
    let decls: Vec<String> = props
        .iter()
        .zip(values)
        .map(|(p, v)| {
            let unit = if normalized { DialectSpec::unit_for(p) } else { "" };
            format!("{p}: {}{unit};", fmt_value(*v, normalized))
        })
        .collect();
    format!("{selector} {{{} }}", decls.join(" "))
}

fn serialize_plain_line(selector: &str, values: &[f64], normalized: bool) -> String {
    let rendered: Vec<String> = values.iter().map(|v| fmt_value(*v, normalized)).collect();
    format!("{selector}: {}", rendered.join(", "))
}

fn serialize_keypoints(set: &KeypointSet) -> String {
    let mut lines = Vec::with_capacity(18);
    lines.push(format!("person#{}:", set.person_index));
    for (i, name) in KEYPOINT_NODE_NAMES.iter().enumerate() {
        let (x, y) = set.nodes[i];
        lines.push(serialize_css_line(name, &PROPS_KEYPOINT, &[x, y], true));
    }
    lines.join("\n")
}

/// Render a layout as demonstration text, one element per line (17 node
/// lines plus a header per person in the keypoint dialect). An empty layout
/// yields an empty string. The layout should already be quantized for the
/// spec's mode; values are rendered as-is.
pub fn serialize(layout: &Layout, spec: &DialectSpec) -> Result<String> {
    if layout.dialect != spec.dialect {
        return Err(Error::DialectMismatch {
            expected: spec.dialect.as_str().to_string(),
            found: layout.dialect.as_str().to_string(),
        });
    }
    let normalized = spec.effective_normalized();
    let mut lines = Vec::with_capacity(layout.elements.len());
    for el in &layout.elements {
        match el {
            Element::Keypoints(set) => lines.push(serialize_keypoints(set)),
            _ => {
                let selector = el.category().unwrap_or_default().to_string();
                let values = element_values(el)?;
                let line = if spec.effective_css() {
                    serialize_css_line(&selector, spec.property_order(), &values, normalized)
                } else {
                    serialize_plain_line(&selector, &values, normalized)
                };
                lines.push(line);
            }
        }
    }
    Ok(lines.join("\n"))
}

// ── Parsing ───────────────────────────────────────────────────────────

static BRACE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([^{}]+?)\s*\{(.*)\}\s*$").unwrap());
static PLAIN_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([^:{},]+?)\s*:\s*(\S.*)$").unwrap());
static DECLARATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([a-zA-Z_][a-zA-Z0-9_]*)\s*:\s*(-?\d+(?:\.\d+)?|-?\.\d+)\s*(px|degrees)?\s*([;:])?")
        .unwrap()
});
static PERSON_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*person\s*#\s*(\d+)\s*:\s*$").unwrap());

/// Bound property values from one css-style declaration body, in order of
/// appearance: (canonical property index, value).
fn scan_declarations(
    body: &str,
    lineno: usize,
    props: &[&str],
    expect_units: bool,
    warnings: &mut Vec<ParseWarning>,
) -> Vec<(usize, f64)> {
    let mut bound: Vec<(usize, f64)> = Vec::new();
    for caps in DECLARATION.captures_iter(body) {
        let name = caps.get(1).unwrap().as_str().to_lowercase();
        let value: f64 = caps.get(2).unwrap().as_str().parse().unwrap_or(0.0);
        let unit = caps.get(3).map(|m| m.as_str());
        let term = caps.get(4).map(|m| m.as_str());

        match term {
            Some(";") => {}
            Some(_) => warnings.push(ParseWarning::ColonForSemicolon { line: lineno }),
            None => warnings.push(ParseWarning::MissingSemicolon { line: lineno }),
        }

        let Some(idx) = props.iter().position(|p| *p == name) else {
            warnings.push(ParseWarning::UnknownProperty { line: lineno, name });
            continue;
        };
        if expect_units && unit.is_none() {
            warnings.push(ParseWarning::MissingUnit { line: lineno, property: name.clone() });
        }
        if bound.iter().any(|(i, _)| *i == idx) {
            warnings.push(ParseWarning::DuplicateProperty { line: lineno, name });
            continue;
        }
        bound.push((idx, value));
    }
    if !bound.windows(2).all(|w| w[0].0 < w[1].0) {
        warnings.push(ParseWarning::ReorderedProperties { line: lineno });
    }
    bound
}

/// Fill any unbound properties with 0 (with warnings) and return values in
/// canonical order. `None` when nothing at all was bound.
fn complete_values(
    bound: &[(usize, f64)],
    props: &[&str],
    lineno: usize,
    warnings: &mut Vec<ParseWarning>,
) -> Option<Vec<f64>> {
    if bound.is_empty() {
        return None;
    }
    let mut values = vec![None; props.len()];
    for (idx, v) in bound {
        values[*idx] = Some(*v);
    }
    Some(
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.unwrap_or_else(|| {
                    warnings.push(ParseWarning::MissingProperty {
                        line: lineno,
                        name: props[i].to_string(),
                    });
                    0.0
                })
            })
            .collect(),
    )
}

fn build_box_element(dialect: Dialect, selector: &str, values: &[f64]) -> Element {
    let category = normalize_category(selector);
    match dialect {
        Dialect::Image2D => Element::Box2D(Element2D {
            category,
            width: values[0],
            height: values[1],
            left: values[2],
            top: values[3],
        }),
        Dialect::Scene3D => Element::Box3D(Element3D {
            category,
            length: values[0],
            width: values[1],
            height: values[2],
            left: values[3],
            top: values[4],
            depth: values[5],
            orientation_deg: normalize_degrees(values[6]),
        }),
        Dialect::Keypoint => unreachable!("keypoint lines are parsed per node"),
    }
}

/// Parse one box-dialect line. `None` means no element was recovered.
fn parse_box_line(
    line: &str,
    lineno: usize,
    spec: &DialectSpec,
    warnings: &mut Vec<ParseWarning>,
) -> Option<Element> {
    let props = spec.property_order();
    let expect_units = spec.effective_css() && spec.effective_normalized();

    if let Some(caps) = BRACE_LINE.captures(line) {
        let selector = caps.get(1).unwrap().as_str();
        let body = caps.get(2).unwrap().as_str();
        let mut local = Vec::new();
        let bound = scan_declarations(body, lineno, props, expect_units, &mut local);
        let values = complete_values(&bound, props, lineno, &mut local)?;
        warnings.append(&mut local);
        return Some(build_box_element(spec.dialect, selector, &values));
    }

    if let Some(caps) = PLAIN_LINE.captures(line) {
        let selector = caps.get(1).unwrap().as_str();
        let rest = caps.get(2).unwrap().as_str();
        let mut values: Vec<f64> = Vec::new();
        for token in rest.split(',') {
            match token.trim().parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => break,
            }
        }
        if values.is_empty() {
            return None;
        }
        if values.len() > props.len() {
            warnings.push(ParseWarning::ExtraValues { line: lineno, count: values.len() - props.len() });
            values.truncate(props.len());
        }
        while values.len() < props.len() {
            warnings.push(ParseWarning::MissingProperty {
                line: lineno,
                name: props[values.len()].to_string(),
            });
            values.push(0.0);
        }
        return Some(build_box_element(spec.dialect, selector, &values));
    }

    None
}

fn parse_box_block(
    lines: &[(usize, &str)],
    spec: &DialectSpec,
) -> (Vec<Element>, Vec<ParseWarning>) {
    let mut elements = Vec::new();
    let mut warnings = Vec::new();
    let mut unparsable = Vec::new();
    for (lineno, line) in lines {
        match parse_box_line(line, *lineno, spec, &mut warnings) {
            Some(el) => elements.push(el),
            None => unparsable.push(ParseWarning::UnparsableLine { line: *lineno }),
        }
    }
    warnings.append(&mut unparsable);
    (elements, warnings)
}

// Keypoint parsing: a small state machine over person headers and node lines.
struct PersonAccum {
    index: u32,
    nodes: [Option<(f64, f64)>; 17],
}

impl PersonAccum {
    fn finish(self, warnings: &mut Vec<ParseWarning>) -> KeypointSet {
        let mut set = KeypointSet::new(self.index);
        let missing = self.nodes.iter().filter(|n| n.is_none()).count();
        for (i, node) in self.nodes.iter().enumerate() {
            set.nodes[i] = node.unwrap_or((0.0, 0.0));
        }
        if missing > 0 {
            warnings.push(ParseWarning::MissingNodes { person: self.index, count: missing });
        }
        set
    }
}

fn parse_keypoint_block(lines: &[(usize, &str)]) -> (Vec<Element>, Vec<ParseWarning>) {
    let mut warnings = Vec::new();
    let mut sets: Vec<KeypointSet> = Vec::new();
    let mut current: Option<PersonAccum> = None;

    for (lineno, line) in lines {
        if let Some(caps) = PERSON_HEADER.captures(line) {
            if let Some(done) = current.take() {
                sets.push(done.finish(&mut warnings));
            }
            let index: u32 = caps.get(1).unwrap().as_str().parse().unwrap_or(0);
            current = Some(PersonAccum { index, nodes: [None; 17] });
            continue;
        }

        let Some(caps) = BRACE_LINE.captures(line) else {
            warnings.push(ParseWarning::UnparsableLine { line: *lineno });
            continue;
        };
        let name = normalize_category(caps.get(1).unwrap().as_str());
        let body = caps.get(2).unwrap().as_str();
        let Some(node_idx) = KeypointSet::node_index(&name) else {
            warnings.push(ParseWarning::UnknownNode { line: *lineno, name });
            continue;
        };
        let mut local = Vec::new();
        let bound = scan_declarations(body, *lineno, &PROPS_KEYPOINT, true, &mut local);
        let Some(values) = complete_values(&bound, &PROPS_KEYPOINT, *lineno, &mut local) else {
            warnings.push(ParseWarning::UnparsableLine { line: *lineno });
            continue;
        };
        warnings.append(&mut local);

        if current.is_none() {
            warnings.push(ParseWarning::ImplicitPersonHeader { line: *lineno });
            current = Some(PersonAccum { index: sets.len() as u32 + 1, nodes: [None; 17] });
        }
        let accum = current.as_mut().unwrap();
        if accum.nodes[node_idx].is_some() {
            warnings.push(ParseWarning::DuplicateNode { line: *lineno, name });
        } else {
            accum.nodes[node_idx] = Some((values[0], values[1]));
        }
    }

    if let Some(done) = current.take() {
        sets.push(done.finish(&mut warnings));
    }
    (sets.into_iter().map(Element::Keypoints).collect(), warnings)
}

/// Parse completion text into a layout. Scans blank-line-delimited blocks in
/// order and stops at the first block yielding no element, so trailing prose
/// is ignored; that block's diagnostics are kept as warnings. The returned
/// layout carries the given canvas and a placeholder condition.
pub fn parse(text: &str, spec: &DialectSpec, canvas: &CanvasSpec) -> ParseOutcome {
    let mut elements: Vec<Element> = Vec::new();
    let mut warnings: Vec<ParseWarning> = Vec::new();

    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut blocks: Vec<Vec<(usize, &str)>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                blocks.push(std::mem::take(&mut block));
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        blocks.push(block);
    }

    for block in &blocks {
        let (els, mut warns) = match spec.dialect {
            Dialect::Keypoint => parse_keypoint_block(block),
            _ => parse_box_block(block, spec),
        };
        let stop = els.is_empty();
        elements.extend(els);
        warnings.append(&mut warns);
        if stop {
            break;
        }
    }

    let failed = elements.is_empty();
    let condition = ConditionText {
        kind: crate::model::ConditionKind::Caption,
        text: "(parsed completion)".to_string(),
        room_length_m: None,
        room_width_m: None,
    };
    let layout =
        Layout { dialect: spec.dialect, condition, canvas: canvas.clone(), elements };
    ParseOutcome { layout, warnings, failed }
}

/// Whether `parse(serialize(layout))` reproduces the layout element-wise.
/// Meaningful only for layouts already quantized for the spec's mode.
pub fn roundtrip_check(layout: &Layout, spec: &DialectSpec) -> Result<bool> {
    let text = serialize(layout, spec)?;
    let outcome = parse(&text, spec, &layout.canvas);
    Ok(outcome.layout.elements == layout.elements)
}
