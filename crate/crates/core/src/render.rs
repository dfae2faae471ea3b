//! SVG rendering of layouts for human inspection: labeled rectangles for 2D,
//! top-down rotated footprints for 3D, and stick figures for keypoints.
//!
//! Output is plain standalone SVG with no external references, so files can be
//! diffed in tests and opened anywhere. Colors are derived from the category
//! name alone, which keeps renders of the same scene stable across runs.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{footprint_corners, Dialect, Element, KeypointSet, Layout};

// ── Modes and colors ─────────────────────────────────────────────────────────

/// Which picture to draw for a layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Axis-aligned labeled rectangles.
    TwoD,
    /// Bird's-eye footprints on the floor rectangle, with facing arrows.
    TopDown3D,
    /// Human skeletons connecting the 17 pose nodes.
    Keypoint,
}

impl RenderMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RenderMode::TwoD => "2d",
            RenderMode::TopDown3D => "topdown3d",
            RenderMode::Keypoint => "keypoint",
        }
    }

    /// The natural mode for a dialect.
    pub fn for_dialect(dialect: Dialect) -> RenderMode {
        match dialect {
            Dialect::Image2D => RenderMode::TwoD,
            Dialect::Scene3D => RenderMode::TopDown3D,
            Dialect::Keypoint => RenderMode::Keypoint,
        }
    }

    fn dialect(&self) -> Dialect {
        match self {
            RenderMode::TwoD => Dialect::Image2D,
            RenderMode::TopDown3D => Dialect::Scene3D,
            RenderMode::Keypoint => Dialect::Keypoint,
        }
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "2d" => Ok(RenderMode::TwoD),
            "topdown3d" => Ok(RenderMode::TopDown3D),
            "keypoint" => Ok(RenderMode::Keypoint),
            other => Err(Error::invalid_argument(format!(
                "unknown render mode {other:?} (expected 2d, topdown3d, or keypoint)"
            ))),
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic (fill, stroke) pair for a category: the name hashes to a hue,
/// fill and stroke differ only in lightness.
pub fn category_color(category: &str) -> (String, String) {
    let hue = fnv1a(category) % 360;
    (
        format!("hsl({hue}, 65%, 60%)"),
        format!("hsl({hue}, 65%, 32%)"),
    )
}

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// ── Rendering ────────────────────────────────────────────────────────────────

struct Svg {
    body: String,
    font: f64,
}

impl Svg {
    fn new(width_px: u32, height_px: u32) -> Svg {
        let max = f64::from(width_px.max(height_px));
        // Scale the on-screen size up so a 64px canvas is not a thumbnail;
        // viewBox keeps all geometry in canvas pixels.
        let scale = (512.0 / max).max(1.0);
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {width_px} {height_px}">"#,
            f64::from(width_px) * scale,
            f64::from(height_px) * scale,
        );
        let _ = writeln!(
            body,
            r##"<rect x="0" y="0" width="{width_px}" height="{height_px}" fill="#fdfdf8" stroke="#444" stroke-width="{:.3}"/>"##,
            max * 0.004
        );
        Svg { body, font: max * 0.045 }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Renders a layout in the given mode. The layout's dialect must match the
/// mode, so a caller iterating mixed files can skip mismatches per layout.
pub fn render_layout(layout: &Layout, mode: RenderMode) -> Result<String> {
    if layout.dialect != mode.dialect() {
        return Err(Error::DialectMismatch {
            expected: mode.dialect().as_str().to_string(),
            found: layout.dialect.as_str().to_string(),
        });
    }
    let mut svg = Svg::new(layout.canvas.width_px, layout.canvas.height_px);
    match mode {
        RenderMode::TwoD => render_2d(&mut svg, layout),
        RenderMode::TopDown3D => render_topdown(&mut svg, layout),
        RenderMode::Keypoint => render_keypoints(&mut svg, layout),
    }
    Ok(svg.finish())
}

fn render_2d(svg: &mut Svg, layout: &Layout) {
    for element in &layout.elements {
        let Element::Box2D(e) = element else { continue };
        let (fill, stroke) = category_color(&e.category);
        let _ = writeln!(
            svg.body,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{fill}" fill-opacity="0.55" stroke="{stroke}" stroke-width="{:.3}"/>"#,
            e.left,
            e.top,
            e.width,
            e.height,
            svg.font * 0.12,
        );
        let _ = writeln!(
            svg.body,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="{:.3}" fill="{stroke}">{}</text>"#,
            e.left + svg.font * 0.2,
            e.top + svg.font,
            svg.font,
            escape_xml(&e.category),
        );
    }
}

fn render_topdown(svg: &mut Svg, layout: &Layout) {
    for element in &layout.elements {
        let Element::Box3D(e) = element else { continue };
        let corners = footprint_corners(e.left, e.top, e.length, e.width, e.orientation_deg);
        let points = corners
            .iter()
            .map(|(x, y)| format!("{x:.3},{y:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        let (fill, stroke) = category_color(&e.category);
        let _ = writeln!(
            svg.body,
            r#"<polygon points="{points}" fill="{fill}" fill-opacity="0.55" stroke="{stroke}" stroke-width="{:.3}"/>"#,
            svg.font * 0.12,
        );
        // Facing arrow: center toward the midpoint of the rotated front edge
        // (corners 1 and 2 span the local +x face), so it turns with the box.
        let front = (
            (corners[1].0 + corners[2].0) / 2.0,
            (corners[1].1 + corners[2].1) / 2.0,
        );
        let _ = writeln!(
            svg.body,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{stroke}" stroke-width="{:.3}"/>"#,
            e.left,
            e.top,
            front.0,
            front.1,
            svg.font * 0.18,
        );
        let _ = writeln!(
            svg.body,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{:.3}" fill="{stroke}"/>"#,
            front.0,
            front.1,
            svg.font * 0.25,
        );
        let _ = writeln!(
            svg.body,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="{:.3}" fill="{stroke}" text-anchor="middle">{}</text>"#,
            e.left,
            e.top - svg.font * 0.3,
            svg.font,
            escape_xml(&e.category),
        );
    }
}

/// Node index pairs forming the standard 17-node human skeleton.
pub const SKELETON_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

fn visible(node: (f64, f64)) -> bool {
    node != (0.0, 0.0)
}

fn render_keypoints(svg: &mut Svg, layout: &Layout) {
    for element in &layout.elements {
        let Element::Keypoints(person) = element else { continue };
        render_person(svg, person);
    }
}

fn render_person(svg: &mut Svg, person: &KeypointSet) {
    let (fill, stroke) = category_color(&format!("person#{}", person.person_index));
    for (a, b) in SKELETON_EDGES {
        let (pa, pb) = (person.nodes[a], person.nodes[b]);
        if !visible(pa) || !visible(pb) {
            continue;
        }
        let _ = writeln!(
            svg.body,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{stroke}" stroke-width="{:.3}"/>"#,
            pa.0,
            pa.1,
            pb.0,
            pb.1,
            svg.font * 0.15,
        );
    }
    for node in person.nodes {
        if visible(node) {
            let _ = writeln!(
                svg.body,
                r#"<circle cx="{:.3}" cy="{:.3}" r="{:.3}" fill="{fill}" stroke="{stroke}" stroke-width="{:.3}"/>"#,
                node.0,
                node.1,
                svg.font * 0.3,
                svg.font * 0.08,
            );
        }
    }
}
