//! SVG level-set contours of `h` on a 2D slice of configuration space.

use std::fmt::Write as _;

use crate::planner::ImplicitManifold;
use crate::{Configuration, Error, Result};

/// Evaluation grid resolution per axis.
pub const GRID: usize = 41;
const PIXELS: f64 = 400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    /// Coordinates varied along the horizontal and vertical axes.
    pub axes: (usize, usize),
    /// Values of all coordinates; the two slice axes are overwritten.
    pub base: Configuration,
    pub lo: f64,
    pub hi: f64,
}

impl Slice {
    pub fn new(d: usize, axes: (usize, usize), half_width: f64) -> Result<Self> {
        if axes.0 >= d || axes.1 >= d || axes.0 == axes.1 {
            return Err(Error::Config(format!("invalid slice axes {axes:?} for d={d}")));
        }
        if !(half_width > 0.0) {
            return Err(Error::Config("slice half width must be positive".into()));
        }
        Ok(Slice {
            axes,
            base: Configuration::zeros(d),
            lo: -half_width,
            hi: half_width,
        })
    }

    fn coord(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (GRID - 1) as f64
    }

    /// Signed `h` for codimension one, `‖h‖` otherwise, on the grid indexed
    /// `[row][col]` with row along the second axis.
    pub fn sample(&self, m: &dyn ImplicitManifold) -> Vec<Vec<f64>> {
        let mut q = self.base.clone();
        (0..GRID)
            .map(|r| {
                (0..GRID)
                    .map(|c| {
                        q[self.axes.0] = self.coord(c);
                        q[self.axes.1] = self.coord(r);
                        if m.codim() == 1 {
                            m.evaluate(&q)[0]
                        } else {
                            m.residual(&q)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Line segments of the `level` isoline, in grid coordinates, by marching
/// squares with linear interpolation along cell edges.
pub fn marching_squares(grid: &[Vec<f64>], level: f64) -> Vec<[(f64, f64); 2]> {
    let mut segs = Vec::new();
    let rows = grid.len();
    if rows < 2 {
        return segs;
    }
    let cols = grid[0].len();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            // corners counter-clockwise from (c, r)
            let corners = [
                ((c as f64, r as f64), grid[r][c]),
                (((c + 1) as f64, r as f64), grid[r][c + 1]),
                (((c + 1) as f64, (r + 1) as f64), grid[r + 1][c + 1]),
                ((c as f64, (r + 1) as f64), grid[r + 1][c]),
            ];
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (pa, va) = corners[e];
                let (pb, vb) = corners[(e + 1) % 4];
                if (va < level) != (vb < level) {
                    let t = (level - va) / (vb - va);
                    pts.push((pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)));
                }
            }
            if pts.len() == 2 {
                segs.push([pts[0], pts[1]]);
            } else if pts.len() == 4 {
                segs.push([pts[0], pts[1]]);
                segs.push([pts[2], pts[3]]);
            }
        }
    }
    segs
}

/// Contours of the sampled field at each level, plus optional scatter points projected
/// onto the slice axes.
pub fn plot_slice(
    m: &dyn ImplicitManifold,
    slice: &Slice,
    levels: &[f64],
    points: &[Configuration],
) -> Result<String> {
    if slice.base.len() != m.ambient_dim() {
        return Err(Error::Config("slice dimension does not match the manifold".into()));
    }
    let grid = slice.sample(m);
    let scale = PIXELS / (GRID - 1) as f64;
    let to_px = |(x, y): (f64, f64)| (x * scale, PIXELS - y * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PIXELS}" height="{PIXELS}" viewBox="0 0 {PIXELS} {PIXELS}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, &level) in levels.iter().enumerate() {
        let shade = if levels.len() > 1 {
            200 * k / (levels.len() - 1)
        } else {
            0
        };
        let _ = writeln!(
            s,
            r#"<g stroke="rgb({shade},{shade},255)" stroke-width="1.5" fill="none" data-level="{level}">"#
        );
        for [a, b] in marching_squares(&grid, level) {
            let (x1, y1) = to_px(a);
            let (x2, y2) = to_px(b);
            let _ = writeln!(
                s,
                r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let span = slice.hi - slice.lo;
    let _ = writeln!(s, r#"<g fill="black">"#);
    for p in points {
        let x = (p[slice.axes.0] - slice.lo) / span * (GRID - 1) as f64;
        let y = (p[slice.axes.1] - slice.lo) / span * (GRID - 1) as f64;
        if (0.0..=(GRID - 1) as f64).contains(&x) && (0.0..=(GRID - 1) as f64).contains(&y) {
            let (px, py) = to_px((x, y));
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.5"/>"#);
        }
    }
    let _ = writeln!(s, "</g>\n</svg>");
    Ok(s)
}
