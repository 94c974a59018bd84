use std::fmt::Write;

use super::{region_member, ScalarPoint, Variant};

/// Rectangular sampling grid over `(jg, jh)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub jg_min: f64,
    pub jg_max: f64,
    pub jh_min: f64,
    pub jh_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            jg_min: -4.0,
            jg_max: 4.0,
            jh_min: -4.0,
            jh_max: 4.0,
            nx: 161,
            ny: 161,
        }
    }
}

impl GridSpec {
    /// Cell-centre coordinates of column `i`, row `j` (row 0 at `jh_min`).
    pub fn point(&self, i: usize, j: usize) -> ScalarPoint {
        let fx = (i as f64 + 0.5) / self.nx as f64;
        let fy = (j as f64 + 0.5) / self.ny as f64;
        ScalarPoint::new(
            self.jg_min + fx * (self.jg_max - self.jg_min),
            self.jh_min + fy * (self.jh_max - self.jh_min),
        )
    }
}

/// Open-region membership at every cell centre, row-major with row 0 at `jh_min`.
pub fn stability_grid(variant: Variant, spec: &GridSpec) -> Vec<bool> {
    let mut out = Vec::with_capacity(spec.nx * spec.ny);
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            out.push(region_member(variant, spec.point(i, j)));
        }
    }
    out
}

const PANEL: f64 = 320.0;
const MARGIN: f64 = 30.0;

/// Two side-by-side panels (internal left, external right) with the stable
/// cells shaded and optional points overlaid on both.
pub fn stability_svg(spec: &GridSpec, points: &[ScalarPoint]) -> String {
    let width = 2.0 * PANEL + 3.0 * MARGIN;
    let height = PANEL + 2.0 * MARGIN;
    let cw = PANEL / spec.nx as f64;
    let ch = PANEL / spec.ny as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (variant, color)) in [
        (Variant::Internal, "#4c72b0"),
        (Variant::External, "#dd8452"),
    ]
    .into_iter()
    .enumerate()
    {
        let ox = MARGIN + k as f64 * (PANEL + MARGIN);
        let oy = MARGIN;
        let to_px = |p: ScalarPoint| {
            let fx = (p.jg - spec.jg_min) / (spec.jg_max - spec.jg_min);
            let fy = (p.jh - spec.jh_min) / (spec.jh_max - spec.jh_min);
            (ox + fx * PANEL, oy + (1.0 - fy) * PANEL)
        };
        let _ = writeln!(s, r#"<g id="{variant}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{variant}</text>"#,
            ox + PANEL / 2.0,
            oy - 10.0
        );
        let grid = stability_grid(variant, spec);
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                if grid[j * spec.nx + i] {
                    let x = ox + i as f64 * cw;
                    let y = oy + (spec.ny - 1 - j) as f64 * ch;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.45"/>"#,
                        cw + 0.05,
                        ch + 0.05
                    );
                }
            }
        }
        let (ax0, ay) = to_px(ScalarPoint::new(spec.jg_min, 0.0));
        let (ax1, _) = to_px(ScalarPoint::new(spec.jg_max, 0.0));
        let (bx, by0) = to_px(ScalarPoint::new(0.0, spec.jh_min));
        let (_, by1) = to_px(ScalarPoint::new(0.0, spec.jh_max));
        let _ = writeln!(
            s,
            r#"<line x1="{ax0:.2}" y1="{ay:.2}" x2="{ax1:.2}" y2="{ay:.2}" stroke="black" stroke-width="0.6"/>"#
        );
        let _ = writeln!(
            s,
            r#"<line x1="{bx:.2}" y1="{by0:.2}" x2="{bx:.2}" y2="{by1:.2}" stroke="black" stroke-width="0.6"/>"#
        );
        let _ = writeln!(
            s,
            r#"<rect x="{ox}" y="{oy}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
        );
        for &p in points {
            if p.jg < spec.jg_min || p.jg > spec.jg_max || p.jh < spec.jh_min || p.jh > spec.jh_max
            {
                continue;
            }
            let (x, y) = to_px(p);
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="black"/>"#
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">horizontal: eigenvalue of recall Jacobian, vertical: eigenvalue of sublayer Jacobian</text>"#,
        width / 2.0,
        height - 8.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_orientation() {
        let spec = GridSpec {
            jg_min: 0.0,
            jg_max: 2.0,
            jh_min: -2.0,
            jh_max: 0.0,
            nx: 2,
            ny: 2,
        };
        // Cell centres (0.5, -1.5), (1.5, -1.5), (0.5, -0.5), (1.5, -0.5).
        assert_eq!(
            stability_grid(Variant::Internal, &spec),
            vec![true, false, true, true]
        );
        let svg = stability_svg(&spec, &[ScalarPoint::new(1.0, -1.0)]);
        assert!(svg.starts_with("<svg") && svg.contains("<circle"));
    }
}
