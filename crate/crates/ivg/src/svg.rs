//! Static SVG rendering of a layout document.

use std::fmt::Write as _;

use ivg_core::embedding::Point;
use ivg_core::layout::{BubbleKind, BubbleStyle, NodeMode};
use ivg_core::{Action, LayoutDocument};

pub const ADDITION: &str = "#466E8F";
pub const SUBTRACTION: &str = "#CD3033";
pub const REORDER: &str = "#57B28F";

const GLYPH_RADIUS: f64 = 14.0;
const BUBBLE_PAD: f64 = 10.0;
const MAX_EDGE_WIDTH: f64 = 10.0;

const BUBBLE_FILLS: [&str; 8] = [
    "#e8eef4", "#f4ece4", "#e8f4ee", "#f2e8f4", "#f4f2e2", "#e4f2f4", "#f4e4e8", "#ecece8",
];

pub fn action_color(action: Action) -> &'static str {
    if action.is_addition() {
        ADDITION
    } else if action.is_subtraction() {
        SUBTRACTION
    } else {
        REORDER
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn convex_hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Quadrilateral from `a` to `b`, `wide` across at `a` and `narrow` at `b`.
fn taper(a: Point, b: Point, wide: f64, narrow: f64) -> String {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = (dx * dx + dy * dy).sqrt().max(1e-9);
    let (nx, ny) = (-dy / len, dx / len);
    let p = |q: Point, w: f64, s: f64| format!("{:.2},{:.2}", q[0] + s * nx * w / 2.0, q[1] + s * ny * w / 2.0);
    format!(
        "{} {} {} {}",
        p(a, wide, 1.0),
        p(b, narrow, 1.0),
        p(b, narrow, -1.0),
        p(a, wide, -1.0)
    )
}

/// Renders `doc`; thumbnails link to `asset_prefix` + `<id>.png`.
pub fn render(doc: &LayoutDocument, asset_prefix: &str) -> String {
    let vp = &doc.params.viewport;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = vp.width,
        h = vp.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let _ = writeln!(s, r#"<g class="bubbles">"#);
    for b in &doc.bubbles {
        let mut corners = Vec::new();
        for &m in &b.members {
            let n = &doc.nodes[m];
            let (hw, hh) = (n.width / 2.0 + BUBBLE_PAD, n.height / 2.0 + BUBBLE_PAD);
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                corners.push([n.xy[0] + sx * hw, n.xy[1] + sy * hh]);
            }
        }
        let points: Vec<String> = convex_hull(corners)
            .iter()
            .map(|p| format!("{:.2},{:.2}", p[0], p[1]))
            .collect();
        let kind = match b.kind {
            BubbleKind::Cluster => "cluster",
            BubbleKind::Stage => "stage",
            BubbleKind::SamePrompt => "same-prompt",
        };
        match b.style {
            BubbleStyle::Filled => {
                let _ = writeln!(
                    s,
                    r#"<polygon class="bubble {kind}" points="{}" fill="{}" stroke="none"/>"#,
                    points.join(" "),
                    BUBBLE_FILLS[b.key % BUBBLE_FILLS.len()]
                );
            }
            BubbleStyle::Dashed => {
                let _ = writeln!(
                    s,
                    r##"<polygon class="bubble {kind}" points="{}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
                    points.join(" ")
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");

    let max_weight = doc
        .bundles
        .iter()
        .filter(|b| b.bundle.visible)
        .flat_map(|b| b.bundle.members.iter().map(|&e| doc.edges[e].edge.weight))
        .fold(0.0f64, f64::max);
    let _ = writeln!(s, r#"<g class="edges">"#);
    for b in doc.bundles.iter().filter(|b| b.bundle.visible) {
        let color = action_color(b.bundle.action);
        let via = b.glyph.map(|g| doc.glyphs[g].xy);
        for &e in &b.bundle.members {
            let edge = &doc.edges[e].edge;
            let w = if max_weight > 0.0 {
                1.0 + (MAX_EDGE_WIDTH - 1.0) * edge.weight / max_weight
            } else {
                1.0
            };
            let (src, tgt) = (doc.nodes[edge.src].xy, doc.nodes[edge.tgt].xy);
            let legs = match via {
                Some(g) => vec![(src, g, w, w / 2.0), (g, tgt, w / 2.0, 0.5)],
                None => vec![(src, tgt, w, 0.5)],
            };
            for (a, b2, wide, narrow) in legs {
                let _ = writeln!(
                    s,
                    r#"<polygon class="edge" points="{}" fill="{color}" fill-opacity="0.55"/>"#,
                    taper(a, b2, wide, narrow)
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="nodes">"#);
    for n in &doc.nodes {
        let (x, y) = (n.xy[0] - n.width / 2.0, n.xy[1] - n.height / 2.0);
        let shade = n.order_shade;
        match n.mode {
            NodeMode::Thumbnail => {
                let _ = writeln!(
                    s,
                    r#"<image class="node" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" xlink:href="{}{}.png"/>"#,
                    n.width,
                    n.height,
                    escape(asset_prefix),
                    escape(&n.image_id)
                );
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="rgb({shade},{shade},{shade})" stroke-width="3"/>"#,
                    n.width, n.height
                );
            }
            NodeMode::Rect => {
                let _ = writeln!(
                    s,
                    r#"<rect class="node hidden" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},{shade})"/>"#,
                    n.width, n.height
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g class="glyphs">"#);
    for g in &doc.glyphs {
        let [cx, cy] = g.xy;
        let _ = writeln!(
            s,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{GLYPH_RADIUS}" fill="white" stroke="#999"/>"##
        );
        let mut start = -std::f64::consts::FRAC_PI_2;
        for slice in &g.slices {
            let sweep = slice.angle_fraction * std::f64::consts::TAU;
            let r = GLYPH_RADIUS * slice.radius_fraction;
            let opacity = if slice.low_opacity { 0.35 } else { 1.0 };
            let color = action_color(slice.action);
            if slice.angle_fraction >= 1.0 - 1e-12 {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{color}" fill-opacity="{opacity}"/>"#
                );
            } else {
                let end = start + sweep;
                let large = u8::from(sweep > std::f64::consts::PI);
                let _ = writeln!(
                    s,
                    r#"<path d="M {cx:.2} {cy:.2} L {:.2} {:.2} A {r:.2} {r:.2} 0 {large} 1 {:.2} {:.2} Z" fill="{color}" fill-opacity="{opacity}"/>"#,
                    cx + r * start.cos(),
                    cy + r * start.sin(),
                    cx + r * end.cos(),
                    cy + r * end.sin()
                );
            }
            start += sweep;
        }
        if !g.label_words.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{cx:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                cy + GLYPH_RADIUS + 12.0,
                escape(&g.label_words.join(" "))
            );
        }
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
