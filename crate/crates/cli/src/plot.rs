//! SVG decision-region plots over a square covariate grid.

use std::fmt::Write;

pub const PLOT_RANGE: (f64, f64) = (-2.8, 2.8);

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];
const PANEL: f64 = 360.0;
const MARGIN: f64 = 40.0;

pub fn arm_color(a: usize) -> &'static str {
    PALETTE[a % PALETTE.len()]
}

/// Cell centres of a `size × size` grid over [`PLOT_RANGE`]², row-major with `x₂` varying fastest.
pub fn grid_points(size: usize) -> Vec<[f64; 2]> {
    let (lo, hi) = PLOT_RANGE;
    let step = (hi - lo) / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        for k in 0..size {
            out.push([lo + step * (i as f64 + 0.5), lo + step * (k as f64 + 0.5)]);
        }
    }
    out
}

/// Decisions on the grid, `grid[i][k]` at `(x₁ᵢ, x₂ₖ)`.
pub fn decision_grid(size: usize, decide: impl Fn(&[f64]) -> usize) -> Vec<Vec<usize>> {
    let pts = grid_points(size);
    pts.chunks(size).map(|row| row.iter().map(|x| decide(x)).collect()).collect()
}

/// Number of 4-connected regions sharing one decision.
pub fn count_regions(grid: &[Vec<usize>]) -> usize {
    let n = grid.len();
    let mut seen = vec![vec![false; n]; n];
    let mut regions = 0;
    for i in 0..n {
        for k in 0..n {
            if seen[i][k] {
                continue;
            }
            regions += 1;
            let arm = grid[i][k];
            let mut stack = vec![(i, k)];
            seen[i][k] = true;
            while let Some((r, c)) = stack.pop() {
                let nb = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
                for (rr, cc) in nb {
                    if rr < n && cc < n && !seen[rr][cc] && grid[rr][cc] == arm {
                        seen[rr][cc] = true;
                        stack.push((rr, cc));
                    }
                }
            }
        }
    }
    regions
}

fn panel(svg: &mut String, title: &str, grid: &[Vec<usize>], offset: f64) {
    let n = grid.len();
    let cell = PANEL / n as f64;
    let _ = writeln!(svg, r#"<g transform="translate({offset},{MARGIN})">"#);
    let _ = writeln!(svg, r#"<text x="{}" y="-12" text-anchor="middle" font-size="16">{title}</text>"#, PANEL / 2.0);
    for (i, row) in grid.iter().enumerate() {
        for (k, &arm) in row.iter().enumerate() {
            // x₂ grows upwards
            let _ = writeln!(
                svg,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                i as f64 * cell,
                (n - 1 - k) as f64 * cell,
                cell,
                cell,
                arm_color(arm)
            );
        }
    }
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">x1</text>"#, PANEL / 2.0, PANEL + 18.0);
    let _ = writeln!(svg, r#"<text x="-10" y="{}" text-anchor="end" font-size="12">x2</text>"#, PANEL / 2.0);
    let _ = writeln!(svg, "</g>");
}

/// Side-by-side panels, each a titled decision grid.
pub fn render_svg(panels: &[(&str, Vec<Vec<usize>>)], n_arms: usize) -> String {
    let width = MARGIN + panels.len() as f64 * (PANEL + MARGIN);
    let height = PANEL + 2.0 * MARGIN + 30.0;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, (title, grid)) in panels.iter().enumerate() {
        panel(&mut svg, title, grid, MARGIN + p as f64 * (PANEL + MARGIN));
    }
    for a in 0..n_arms {
        let x = MARGIN + a as f64 * 90.0;
        let y = PANEL + MARGIN + 30.0;
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, arm_color(a));
        let _ = writeln!(svg, r#"<text x="{}" y="{y}" font-size="12">arm {a}</text>"#, x + 16.0);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_the_square() {
        let pts = grid_points(4);
        assert_eq!(pts.len(), 16);
        assert!((pts[0][0] + 2.1).abs() < 1e-12 && (pts[0][1] + 2.1).abs() < 1e-12);
        assert!((pts[15][0] - 2.1).abs() < 1e-12);
    }

    #[test]
    fn regions_are_connected_components() {
        let g = vec![vec![0, 0, 1], vec![2, 0, 1], vec![2, 2, 0]];
        assert_eq!(count_regions(&g), 4);
        assert_eq!(count_regions(&[vec![1, 1], vec![1, 1]]), 1);
    }

    #[test]
    fn svg_has_header_and_cells() {
        let svg = render_svg(&[("truth", vec![vec![0, 1], vec![2, 0]])], 3);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(arm_color(0)).count(), 2 + 1);
    }
}
