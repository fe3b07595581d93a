//! Structured, mirror-symmetric P2 triangulations of the truncated strip.
//!
//! The grid is a tensor product of x and y gridlines; every rectangle cell
//! is split into two triangles. Gridlines include every `γ`-block edge and
//! `x = ±L, ±X`, so each element carries a single value of `γ` and of the
//! scaling profile. Nodes live on the "fine" `(2nx+1) × (2ny+1)` grid that
//! holds vertices and edge midpoints together, numbered lexicographically
//! (x-column major) to keep the assembled matrices banded.

#[cfg(test)]
use std::collections::HashMap;
use std::io::Write;

use crate::model::WaveguideProblem;
use crate::{Error, Result};

/// Position of an element relative to the scaling onset `x = ±L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Interior,
    PmlLeft,
    PmlRight,
}

impl Region {
    fn mirrored(self) -> Region {
        match self {
            Region::Interior => Region::Interior,
            Region::PmlLeft => Region::PmlRight,
            Region::PmlRight => Region::PmlLeft,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Region::Interior => "interior",
            Region::PmlLeft => "pml_left",
            Region::PmlRight => "pml_right",
        }
    }
}

/// Six-node quadratic triangle. `midpoints[i]` sits between `corners[i]`
/// and `corners[(i+1) % 3]`; corners are counterclockwise.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub corners: [usize; 3],
    pub midpoints: [usize; 3],
    pub region: Region,
    pub gamma: f64,
}

impl Triangle {
    /// Corner and midpoint indices in the local P2 ordering
    /// (three corners, then the midpoint opposite to each corner's gap).
    pub fn node_ids(&self) -> [usize; 6] {
        [
            self.corners[0],
            self.corners[1],
            self.corners[2],
            self.midpoints[0],
            self.midpoints[1],
            self.midpoints[2],
        ]
    }
}

/// Node index sets for the four straight boundary pieces.
#[derive(Debug, Clone, Default)]
pub struct BoundarySets {
    pub y_bottom: Vec<usize>,
    pub y_top: Vec<usize>,
    pub x_left: Vec<usize>,
    pub x_right: Vec<usize>,
}

/// Structured P2 mesh of `(−X, X) × (0, 1)`.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// All P2 node abscissas, length `2·nx + 1`: even entries are vertex
    /// columns, odd entries midpoint columns.
    pub xs_fine: Vec<f64>,
    /// All P2 node ordinates, length `2·ny + 1`.
    pub ys_fine: Vec<f64>,
    /// Node coordinates; `index = fx · (2·ny + 1) + fy`.
    pub nodes: Vec<(f64, f64)>,
    pub triangles: Vec<Triangle>,
    pub boundary: BoundarySets,
    /// Cell counts of the underlying rectangle grid.
    pub nx: usize,
    pub ny: usize,
    /// Scaling onset the region tags were computed against.
    pub pml_start: f64,
}

/// Builds the gridline coordinates of one axis: required coordinates are
/// kept exactly, and every gap is filled uniformly with segments of length
/// at most `h`.
fn fill_gridlines(required: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut req = required.to_vec();
    req.sort_by(|a, b| a.partial_cmp(b).unwrap());
    req.dedup();
    for w in req.windows(2) {
        if w[1] - w[0] < h * 1e-6 {
            return Err(Error::Config(format!(
                "gridlines {} and {} are closer than {:.1e}; geometry too degenerate for h = {h}",
                w[0],
                w[1],
                h * 1e-6
            )));
        }
    }
    let mut out = vec![req[0]];
    for w in req.windows(2) {
        let gap = w[1] - w[0];
        let m = (gap / h).ceil().max(1.0) as usize;
        for j in 1..m {
            out.push(w[0] + gap * (j as f64 / m as f64));
        }
        out.push(w[1]);
    }
    Ok(out)
}

/// [`build_structured_mesh`] with separate target sizes along x and y.
/// Useful for effectively one-dimensional problems (y-invariant `γ`).
pub fn build_structured_mesh_aniso(
    problem: &WaveguideProblem,
    hx: f64,
    hy: f64,
) -> Result<Mesh> {
    if !(hx > 0.0) || !(hy > 0.0) {
        return Err(Error::Config(format!(
            "element size must be positive, got hx = {hx}, hy = {hy}"
        )));
    }
    let big_x = problem.truncation;
    let l = problem.pml_start;

    // Required x-gridlines, symmetrized so the grid mirrors exactly: build
    // the non-negative half, then negate it for the other half.
    let mut pos = vec![0.0, l, big_x];
    for b in &problem.gamma_blocks {
        for e in [b.x0, b.x1] {
            if e.abs() < big_x {
                pos.push(e.abs());
            }
        }
    }
    let xs_pos = fill_gridlines(&pos, hx)?;
    let mut xs: Vec<f64> = xs_pos.iter().skip(1).map(|&x| -x).collect();
    xs.reverse();
    xs.extend_from_slice(&xs_pos);

    let mut req_y = vec![0.0, 1.0];
    for b in &problem.gamma_blocks {
        for e in [b.y0, b.y1] {
            if e > 0.0 && e < 1.0 {
                req_y.push(e);
            }
        }
    }
    let ys = fill_gridlines(&req_y, hy)?;

    let nx = xs.len() - 1;
    let ny = ys.len() - 1;

    // Fine grid interleaves gridlines with midpoints. Midpoints of mirrored
    // x-intervals are exact negations because (a + b)/2 negates exactly.
    let fine = |grid: &[f64]| -> Vec<f64> {
        let mut f = Vec::with_capacity(2 * grid.len() - 1);
        for w in grid.windows(2) {
            f.push(w[0]);
            f.push(0.5 * (w[0] + w[1]));
        }
        f.push(*grid.last().unwrap());
        f
    };
    let xs_fine = fine(&xs);
    let ys_fine = fine(&ys);
    let nyn = 2 * ny + 1;

    let mut nodes = Vec::with_capacity((2 * nx + 1) * nyn);
    for &x in &xs_fine {
        for &y in &ys_fine {
            nodes.push((x, y));
        }
    }
    let at = |fx: usize, fy: usize| fx * nyn + fy;

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let xc = 0.5 * (xs[i] + xs[i + 1]);
            let region = if xc < -l {
                Region::PmlLeft
            } else if xc > l {
                Region::PmlRight
            } else {
                Region::Interior
            };
            // Corner nodes of the cell on the fine grid.
            let c00 = at(2 * i, 2 * j);
            let c10 = at(2 * i + 2, 2 * j);
            let c01 = at(2 * i, 2 * j + 2);
            let c11 = at(2 * i + 2, 2 * j + 2);
            // Split along the diagonal that rises away from x = 0, so the
            // triangulation maps onto itself under x → −x.
            let pair = if xc > 0.0 {
                [[c00, c10, c11], [c00, c11, c01]]
            } else {
                [[c00, c10, c01], [c10, c11, c01]]
            };
            for corners in pair {
                let mid = |a: usize, b: usize| {
                    let (afx, afy) = (a / nyn, a % nyn);
                    let (bfx, bfy) = (b / nyn, b % nyn);
                    at((afx + bfx) / 2, (afy + bfy) / 2)
                };
                let gx = (nodes[corners[0]].0 + nodes[corners[1]].0 + nodes[corners[2]].0) / 3.0;
                let gy = (nodes[corners[0]].1 + nodes[corners[1]].1 + nodes[corners[2]].1) / 3.0;
                triangles.push(Triangle {
                    corners,
                    midpoints: [
                        mid(corners[0], corners[1]),
                        mid(corners[1], corners[2]),
                        mid(corners[2], corners[0]),
                    ],
                    region,
                    gamma: problem.gamma_at(gx, gy),
                });
            }
        }
    }

    let mut boundary = BoundarySets::default();
    let nxn = 2 * nx + 1;
    for fx in 0..nxn {
        boundary.y_bottom.push(at(fx, 0));
        boundary.y_top.push(at(fx, nyn - 1));
    }
    for fy in 0..nyn {
        boundary.x_left.push(at(0, fy));
        boundary.x_right.push(at(nxn - 1, fy));
    }

    Ok(Mesh { xs_fine, ys_fine, nodes, triangles, boundary, nx, ny, pml_start: l })
}

/// Builds the structured mesh with target element size `h` in both
/// directions. Gridlines include `x = 0, ±L, ±X` and every `γ`-block edge;
/// the x-grid and the triangle splits are exactly mirror-symmetric.
pub fn build_structured_mesh(problem: &WaveguideProblem, h: f64) -> Result<Mesh> {
    build_structured_mesh_aniso(problem, h, h)
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes per x-column of the fine grid.
    pub fn column_height(&self) -> usize {
        2 * self.ny + 1
    }

    pub fn node_index(&self, fx: usize, fy: usize) -> usize {
        fx * self.column_height() + fy
    }

    /// Largest |i − j| over node pairs sharing an element: the half
    /// bandwidth of any matrix assembled on this mesh.
    pub fn bandwidth(&self) -> usize {
        self.triangles
            .iter()
            .map(|t| {
                let ids = t.node_ids();
                let lo = *ids.iter().min().unwrap();
                let hi = *ids.iter().max().unwrap();
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }

    /// Index of the node mirrored across x = 0 (same fine row, reflected
    /// fine column).
    pub fn mirror_node(&self, node: usize) -> usize {
        let nyn = self.column_height();
        let (fx, fy) = (node / nyn, node % nyn);
        self.node_index(2 * self.nx - fx, fy)
    }

    /// Fine-column index whose abscissa matches `x` within `tol`, if any.
    pub fn fine_column_at(&self, x: f64, tol: f64) -> Option<usize> {
        self.xs_fine.iter().position(|&gx| (gx - x).abs() <= tol)
    }

    /// Largest cell extent of the underlying rectangle grid: the `h` that
    /// enters discretization-error estimates.
    pub fn max_cell_size(&self) -> f64 {
        let coarse_gap = |fine: &[f64]| {
            fine.windows(3)
                .step_by(2)
                .map(|w| w[2] - w[0])
                .fold(0.0, f64::max)
        };
        coarse_gap(&self.xs_fine).max(coarse_gap(&self.ys_fine))
    }

    /// True when node positions are symmetric under x → −x.
    pub fn mirror_check_geometry(&self) -> bool {
        let nxn = 2 * self.nx + 1;
        let nyn = self.column_height();
        for fx in 0..nxn {
            for fy in 0..nyn {
                let (x, y) = self.nodes[self.node_index(fx, fy)];
                let (mx, my) = self.nodes[self.node_index(nxn - 1 - fx, fy)];
                if (x + mx).abs() > 1e-12 || (y - my).abs() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    /// True when the mesh is fully mirror-symmetric: node positions map
    /// under x → −x, and the mirrored element carries the same `γ` and the
    /// reflected region tag. A mesh of an even obstacle passes; a
    /// non-symmetric obstacle fails the tag part.
    pub fn mirror_check(&self) -> bool {
        if !self.mirror_check_geometry() {
            return false;
        }
        for i in 0..self.nx {
            for j in 0..self.ny {
                let a = 2 * (i * self.ny + j);
                let b = 2 * ((self.nx - 1 - i) * self.ny + j);
                for d in 0..2 {
                    // Within a cell the two triangles swap under mirroring,
                    // but they share both γ and region, so compare cellwise.
                    let (s, t) = (&self.triangles[a + d], &self.triangles[b + d]);
                    if s.gamma != t.gamma || s.region != t.region.mirrored() {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Signed twice-area of an element (positive for counterclockwise
    /// corners).
    pub fn double_area(&self, e: usize) -> f64 {
        let t = &self.triangles[e];
        let (ax, ay) = self.nodes[t.corners[0]];
        let (bx, by) = self.nodes[t.corners[1]];
        let (cx, cy) = self.nodes[t.corners[2]];
        (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
    }

    /// Element containing `(x, y)`, if the point is inside the domain.
    /// Points on shared edges report the lower-indexed element.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let xs: Vec<f64> = self.xs_fine.iter().step_by(2).copied().collect();
        let ys: Vec<f64> = self.ys_fine.iter().step_by(2).copied().collect();
        if x < xs[0] || x > *xs.last().unwrap() || y < ys[0] || y > *ys.last().unwrap() {
            return None;
        }
        let cell = |grid: &[f64], v: f64| -> usize {
            let mut i = grid.partition_point(|&g| g <= v);
            i = i.saturating_sub(1);
            i.min(grid.len() - 2)
        };
        let (i, j) = (cell(&xs, x), cell(&ys, y));
        let s = (x - xs[i]) / (xs[i + 1] - xs[i]);
        let t = (y - ys[j]) / (ys[j + 1] - ys[j]);
        let xc = 0.5 * (xs[i] + xs[i + 1]);
        let base = 2 * (i * self.ny + j);
        let first = if xc > 0.0 { t <= s } else { s + t <= 1.0 };
        Some(if first { base } else { base + 1 })
    }

    /// Plain-text listing: one `n index x y` line per node, one
    /// `e index c0 c1 c2 m0 m1 m2 region gamma` line per element.
    pub fn dump(&self, out: &mut dyn Write) -> std::io::Result<()> {
        for (i, (x, y)) in self.nodes.iter().enumerate() {
            writeln!(out, "n {i} {x:.16e} {y:.16e}")?;
        }
        for (i, t) in self.triangles.iter().enumerate() {
            let c = t.corners;
            let m = t.midpoints;
            writeln!(
                out,
                "e {i} {} {} {} {} {} {} {} {:.16e}",
                c[0],
                c[1],
                c[2],
                m[0],
                m[1],
                m[2],
                t.region.label(),
                t.gamma
            )?;
        }
        Ok(())
    }
}

/// Edge-sharing census used by the conformity test: counts how many
/// elements use each corner edge.
#[cfg(test)]
fn edge_use_counts(mesh: &Mesh) -> HashMap<(usize, usize), usize> {
    let mut counts = HashMap::new();
    for t in &mesh.triangles {
        for i in 0..3 {
            let a = t.corners[i];
            let b = t.corners[(i + 1) % 3];
            let key = (a.min(b), a.max(b));
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}
