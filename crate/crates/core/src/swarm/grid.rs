//! Toroidal geometry and a uniform bucket grid for radius queries.

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x - floor(x) rounds to 1.0 for tiny negative x
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[inline]
pub fn wrap_point(p: [f64; 2]) -> [f64; 2] {
    [wrap_unit(p[0]), wrap_unit(p[1])]
}

/// Minimal-image difference `to ⊖ from` on the unit torus; each component in
/// `[-0.5, 0.5]`.
#[inline]
pub fn torus_delta(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    [min_image(to[0] - from[0]), min_image(to[1] - from[1])]
}

#[inline]
fn min_image(d: f64) -> f64 {
    let up = if d < -0.5 { 1.0 } else { 0.0 };
    let down = if d > 0.5 { 1.0 } else { 0.0 };
    d + up - down
}

#[inline]
pub fn torus_dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = torus_delta(a, b);
    d[0] * d[0] + d[1] * d[1]
}

const MAX_CELLS_PER_SIDE: usize = 256;
/// Cells per radius along each axis. Smaller cells let a query skip more of
/// the square around its disc.
const SUBDIVISIONS: f64 = 3.0;

/// Bucket grid over the unit torus for radius queries.
///
/// Cells are about a third of the build radius wide. A query looks at the
/// block of cells within reach and skips any cell whose rectangle lies wholly
/// outside the query disc.
///
/// Entries are stored cell-major (counting sort), and within a cell in
/// ascending agent index, so iteration order is a pure function of the
/// positions.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    side: usize,
    /// Cells to scan on each side of the query cell.
    reach: usize,
    radius: f64,
    cell_start: Vec<u32>,
    entries: Vec<u32>,
}

impl SpatialGrid {
    pub fn build(positions: &[[f64; 2]], radius: f64) -> Self {
        let side = cells_per_side(radius, positions.len());
        let reach = if radius > 0.0 { (radius * side as f64).ceil() as usize } else { side };
        let n_cells = side * side;
        let mut counts = vec![0u32; n_cells + 1];
        let cells: Vec<usize> = positions.iter().map(|&p| cell_of(p, side)).collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0u32; positions.len()];
        for (i, &c) in cells.iter().enumerate() {
            entries[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        SpatialGrid {
            side,
            reach,
            radius,
            cell_start: counts,
            entries,
        }
    }

    pub fn cells_per_side(&self) -> usize {
        self.side
    }

    /// Agent indices in storage order (cell-major).
    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    /// Visits every stored index that may lie within the build radius of
    /// `p`, each exactly once. Every point that does lie within it is visited.
    pub fn for_each_candidate(&self, p: [f64; 2], mut visit: impl FnMut(usize)) {
        self.for_each_candidate_slot(p, self.radius, |slots| {
            for &j in &self.entries[slots] {
                visit(j as usize);
            }
        });
    }

    /// Like [`for_each_candidate`](Self::for_each_candidate) for a query
    /// radius no larger than the build radius, handing out contiguous ranges
    /// of positions in [`entries`](Self::entries).
    pub fn for_each_candidate_slot(&self, p: [f64; 2], radius: f64, mut visit: impl FnMut(std::ops::Range<usize>)) {
        debug_assert!(radius <= self.radius);
        let side = self.side;
        let reach = self.reach;
        if 2 * reach + 1 >= side {
            visit(0..self.entries.len());
            return;
        }
        let cell = 1.0 / side as f64;
        let cx = axis_cell(p[0], side);
        let cy = axis_cell(p[1], side);
        // offset of p inside its own cell, and a little slack so rounding
        // never drops a cell that touches the disc
        let fx = p[0] - cx as f64 * cell;
        let fy = p[1] - cy as f64 * cell;
        let limit = radius * radius * (1.0 + 1e-9) + 1e-18;
        for dy in 0..=2 * reach {
            let gy = axis_gap(dy, reach, fy, cell);
            if gy * gy > limit {
                continue;
            }
            let y = (cy + side + dy - reach) % side;
            for dx in 0..=2 * reach {
                let gx = axis_gap(dx, reach, fx, cell);
                if gx * gx + gy * gy > limit {
                    continue;
                }
                let x = (cx + side + dx - reach) % side;
                let c = y * side + x;
                visit(self.cell_start[c] as usize..self.cell_start[c + 1] as usize);
            }
        }
    }
}

/// Distance along one axis from a point at offset `f` inside its cell to the
/// cell `d - reach` steps away.
#[inline]
fn axis_gap(d: usize, reach: usize, f: f64, cell: f64) -> f64 {
    if d > reach {
        ((d - reach - 1) as f64 * cell + (cell - f)).max(0.0)
    } else if d < reach {
        ((reach - d - 1) as f64 * cell + f).max(0.0)
    } else {
        0.0
    }
}

fn cells_per_side(radius: f64, n: usize) -> usize {
    if !(radius > 0.0) {
        return 1;
    }
    let by_radius = (SUBDIVISIONS / radius).floor();
    let by_radius = if by_radius >= MAX_CELLS_PER_SIDE as f64 {
        MAX_CELLS_PER_SIDE
    } else {
        by_radius as usize
    };
    // more cells than ~2 per agent per axis only costs memory
    let by_count = 2 * ((n as f64).sqrt().ceil() as usize).max(1);
    by_radius.min(by_count).max(1)
}

#[inline]
fn axis_cell(x: f64, side: usize) -> usize {
    ((x * side as f64) as usize).min(side - 1)
}

#[inline]
fn cell_of(p: [f64; 2], side: usize) -> usize {
    axis_cell(p[1], side) * side + axis_cell(p[0], side)
}
