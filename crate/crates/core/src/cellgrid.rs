//! Space-variant cell grids and the stretch transform between cell space and
//! hr-pixel space.
//!
//! A grid partitions the `width × height` hr-pixel field into `N` cells. Fovea
//! rectangles are tiled by a Cartesian lattice of square cells; every other
//! hr-pixel belongs to a ring/sector periphery cell whose linear size grows
//! with distance from the polar centre. Cell labels are canonical: cells are
//! numbered in order of their first hr-pixel in a row-major scan, so two grids
//! with the same partition have identical assignments.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const UNASSIGNED: u32 = u32::MAX;

/// Maximum polar-centre jitter, in hr-pixels per axis.
pub const MAX_CENTER_JITTER: i32 = 2;

/// Half-cell lattice offsets for shift indices 0..4, in units of `cell_size / 2`.
pub const SHIFT_PATTERN: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoveaDescriptor {
    /// Centre of the fovea rectangle, in hr-pixels.
    pub center: (usize, usize),
    /// The fovea covers `[center - half_extent, center + half_extent)` on both axes.
    pub half_extent: usize,
    /// Side length of a fovea cell, in hr-pixels.
    pub cell_size: usize,
    /// Translation of the cell lattice inside the rectangle, in hr-pixels.
    #[serde(default)]
    pub lattice_offset: (usize, usize),
}

impl FoveaDescriptor {
    pub fn new(center: (usize, usize), half_extent: usize, cell_size: usize) -> Self {
        FoveaDescriptor {
            center,
            half_extent,
            cell_size,
            lattice_offset: (0, 0),
        }
    }

    /// `(x0, y0, x1, y1)` with exclusive upper bounds. Callers must have
    /// checked that the rectangle lies inside the field.
    pub fn rect(&self) -> (usize, usize, usize, usize) {
        let (cx, cy) = self.center;
        let h = self.half_extent;
        (cx - h, cy - h, cx + h, cy + h)
    }

    pub fn side(&self) -> usize {
        2 * self.half_extent
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x0, y0, x1, y1) = self.rect();
        x >= x0 && x < x1 && y >= y0 && y < y1
    }

    /// Lattice columns/rows, counting clipped part-cells at the edges.
    fn lattice_dims(&self) -> (usize, usize) {
        let s = self.cell_size;
        let side = self.side();
        let cols = (side + self.lattice_offset.0 + s - 1) / s;
        let rows = (side + self.lattice_offset.1 + s - 1) / s;
        (cols, rows)
    }

    pub fn cell_count(&self) -> usize {
        let (c, r) = self.lattice_dims();
        c * r
    }

    fn validate(&self, width: usize, height: usize) -> Result<()> {
        let (cx, cy) = self.center;
        let h = self.half_extent;
        if h == 0 || self.cell_size == 0 {
            return Err(Error::InvalidGrid(
                "fovea half-extent and cell size must be positive".into(),
            ));
        }
        if cx < h || cy < h || cx + h > width || cy + h > height {
            return Err(Error::InvalidGrid(format!(
                "fovea at {:?} with half-extent {h} exceeds the {width}x{height} field",
                self.center
            )));
        }
        if self.side() % self.cell_size != 0 {
            return Err(Error::InvalidGrid(format!(
                "fovea side {} is not a multiple of cell size {}",
                self.side(),
                self.cell_size
            )));
        }
        if self.lattice_offset.0 >= self.cell_size || self.lattice_offset.1 >= self.cell_size {
            return Err(Error::InvalidGrid("lattice offset must be below cell size".into()));
        }
        Ok(())
    }

    fn overlaps(&self, other: &FoveaDescriptor) -> bool {
        let (ax0, ay0, ax1, ay1) = self.rect();
        let (bx0, by0, bx1, by1) = other.rect();
        ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1
    }
}

/// Partition of the hr-pixel field into `cell_count` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub width: usize,
    pub height: usize,
    pub cell_count: usize,
    /// Row-major cell index of every hr-pixel.
    pub assignment: Vec<u32>,
    #[serde(skip)]
    cell_area: Vec<u32>,
    pub foveas: Vec<FoveaDescriptor>,
    #[serde(default)]
    pub azimuth_offset: f64,
    #[serde(default)]
    pub polar_center_jitter: (i32, i32),
    #[serde(default)]
    pub seed: u64,
    /// Number of re-randomisations since the grid stream was seeded.
    #[serde(default)]
    pub generation: u64,
}

impl CellGrid {
    fn from_labels(
        width: usize,
        height: usize,
        assignment: Vec<u32>,
        foveas: Vec<FoveaDescriptor>,
        azimuth_offset: f64,
        polar_center_jitter: (i32, i32),
        seed: u64,
        generation: u64,
    ) -> Result<Self> {
        let cell_count = assignment.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut grid = CellGrid {
            width,
            height,
            cell_count,
            assignment,
            cell_area: Vec::new(),
            foveas,
            azimuth_offset,
            polar_center_jitter,
            seed,
            generation,
        };
        grid.recompute_areas()?;
        Ok(grid)
    }

    fn recompute_areas(&mut self) -> Result<()> {
        if self.assignment.len() != self.width * self.height {
            return Err(Error::LengthMismatch {
                expected: self.width * self.height,
                actual: self.assignment.len(),
            });
        }
        let mut area = vec![0u32; self.cell_count];
        for &c in &self.assignment {
            let c = c as usize;
            if c >= self.cell_count {
                return Err(Error::InvalidGrid(format!(
                    "cell index {c} out of range for {} cells",
                    self.cell_count
                )));
            }
            area[c] += 1;
        }
        if let Some(empty) = area.iter().position(|&a| a == 0) {
            return Err(Error::InvalidGrid(format!("cell {empty} is empty")));
        }
        self.cell_area = area;
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_area(&self) -> &[u32] {
        &self.cell_area
    }

    #[inline]
    pub fn cell_of(&self, x: usize, y: usize) -> usize {
        self.assignment[y * self.width + x] as usize
    }

    /// Area of the cell containing hr-pixel `m` (the diagonal of `A`).
    #[inline]
    pub fn area_at(&self, m: usize) -> u32 {
        self.cell_area[self.assignment[m] as usize]
    }

    pub fn is_fovea_pixel(&self, x: usize, y: usize) -> bool {
        self.foveas.iter().any(|f| f.contains(x, y))
    }

    /// Hr-pixels grouped by cell, each list in row-major order.
    pub fn cell_members(&self) -> Vec<Vec<u32>> {
        let mut members: Vec<Vec<u32>> = self
            .cell_area
            .iter()
            .map(|&a| Vec::with_capacity(a as usize))
            .collect();
        for (m, &c) in self.assignment.iter().enumerate() {
            members[c as usize].push(m as u32);
        }
        members
    }

    /// Checks the partition invariants and that the cell count is a power of two.
    pub fn validate(&self) -> Result<()> {
        let mut copy = self.clone();
        copy.recompute_areas()?;
        if copy.cell_area != self.cell_area {
            return Err(Error::InvalidGrid("cached cell areas are stale".into()));
        }
        let total: u64 = self.cell_area.iter().map(|&a| a as u64).sum();
        if total as usize != self.pixel_count() {
            return Err(Error::InvalidGrid("cell areas do not sum to M".into()));
        }
        if !self.cell_count.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.cell_count));
        }
        Ok(())
    }

    /// Hr-pixels that lie on a cell boundary (right or lower neighbour differs).
    pub fn boundary_mask(&self) -> Vec<bool> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let c = self.assignment[y * w + x];
                let right = x + 1 < w && self.assignment[y * w + x + 1] != c;
                let down = y + 1 < h && self.assignment[(y + 1) * w + x] != c;
                out[y * w + x] = right || down;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut grid: CellGrid = serde_json::from_str(text)?;
        grid.recompute_areas()?;
        if grid.cell_count == 0 || !grid.cell_count.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(grid.cell_count));
        }
        Ok(grid)
    }
}

pub fn make_uniform_grid(width: usize, height: usize, cells_per_side: usize) -> Result<CellGrid> {
    if cells_per_side == 0 || width % cells_per_side != 0 || height % cells_per_side != 0 {
        return Err(Error::InvalidGrid(format!(
            "{width}x{height} field is not divisible into {cells_per_side} cells per side"
        )));
    }
    let n = cells_per_side * cells_per_side;
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let (pw, ph) = (width / cells_per_side, height / cells_per_side);
    let mut assignment = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            assignment.push(((y / ph) * cells_per_side + x / pw) as u32);
        }
    }
    CellGrid::from_labels(width, height, assignment, Vec::new(), 0.0, (0, 0), 0, 0)
}

/// Builds a foveated grid with exactly `target_cells` cells.
///
/// Fovea rectangles are tiled by their cell lattice (part-cells at the edges
/// of a shifted lattice stay inside the fovea). The periphery is rasterised
/// into geometric rings around the jittered polar centre, each ring split into
/// equal azimuthal sectors, and the cell count is then repaired to the target
/// by splitting the largest or merging the smallest periphery cells.
pub fn make_foveated_grid(
    width: usize,
    height: usize,
    target_cells: usize,
    foveas: &[FoveaDescriptor],
    azimuth_offset: f64,
    polar_center_jitter: (i32, i32),
    seed: u64,
) -> Result<CellGrid> {
    build_foveated(
        width,
        height,
        target_cells,
        foveas,
        azimuth_offset,
        polar_center_jitter,
        seed,
        0,
    )
}

/// As [`make_foveated_grid`], with the periphery drawn from position
/// `generation` of the grid's seeded stream. Later [`shift_fovea`] calls
/// continue the stream from there.
pub fn make_foveated_grid_at(
    width: usize,
    height: usize,
    target_cells: usize,
    foveas: &[FoveaDescriptor],
    seed: u64,
    generation: u64,
) -> Result<CellGrid> {
    let (azimuth, jitter) = periphery_draw(seed, generation);
    build_foveated(width, height, target_cells, foveas, azimuth, jitter, seed, generation)
}

/// Re-randomised periphery parameters for the given grid stream position.
pub fn periphery_draw(seed: u64, generation: u64) -> (f64, (i32, i32)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(generation);
    let azimuth = rng.random_range(0.0..TAU);
    let jx = rng.random_range(-MAX_CENTER_JITTER..=MAX_CENTER_JITTER);
    let jy = rng.random_range(-MAX_CENTER_JITTER..=MAX_CENTER_JITTER);
    (azimuth, (jx, jy))
}

/// Translates every fovea lattice by the half-cell offset of `shift_index`
/// and re-randomises the periphery from the grid's seeded stream.
pub fn shift_fovea(grid: &CellGrid, shift_index: usize) -> Result<CellGrid> {
    if grid.foveas.is_empty() {
        return Err(Error::InvalidGrid("grid has no fovea to shift".into()));
    }
    let (sx, sy) = *SHIFT_PATTERN.get(shift_index).ok_or_else(|| {
        Error::InvalidGrid(format!("shift index {shift_index} is outside 0..4"))
    })?;
    let mut foveas = grid.foveas.clone();
    for f in &mut foveas {
        if f.cell_size % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "cannot half-shift odd fovea cell size {}",
                f.cell_size
            )));
        }
        let half = f.cell_size / 2;
        f.lattice_offset = (sx * half, sy * half);
    }
    let generation = grid.generation + 1;
    let (azimuth, jitter) = periphery_draw(grid.seed, generation);
    build_foveated(
        grid.width,
        grid.height,
        grid.cell_count,
        &foveas,
        azimuth,
        jitter,
        grid.seed,
        generation,
    )
}

#[allow(clippy::too_many_arguments)]
fn build_foveated(
    width: usize,
    height: usize,
    target_cells: usize,
    foveas: &[FoveaDescriptor],
    azimuth_offset: f64,
    polar_center_jitter: (i32, i32),
    seed: u64,
    generation: u64,
) -> Result<CellGrid> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidGrid("empty field".into()));
    }
    if target_cells == 0 || !target_cells.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(target_cells));
    }
    if foveas.is_empty() {
        return Err(Error::InvalidGrid("at least one fovea is required".into()));
    }
    for (i, f) in foveas.iter().enumerate() {
        f.validate(width, height)?;
        if foveas[..i].iter().any(|g| g.overlaps(f)) {
            return Err(Error::InvalidGrid("fovea rectangles overlap".into()));
        }
    }

    let m = width * height;
    let mut labels = vec![UNASSIGNED; m];
    let mut next_label = 0u32;
    for f in foveas {
        let (x0, y0, x1, y1) = f.rect();
        let (cols, _) = f.lattice_dims();
        let s = f.cell_size;
        let (ox, oy) = f.lattice_offset;
        // Column index of the first full cell is 1 when a leading sliver exists.
        let lead_x = usize::from(ox > 0);
        let lead_y = usize::from(oy > 0);
        for y in y0..y1 {
            let ry = y - y0;
            let ly = if ry < oy { 0 } else { (ry - oy) / s + lead_y };
            for x in x0..x1 {
                let rx = x - x0;
                let lx = if rx < ox { 0 } else { (rx - ox) / s + lead_x };
                labels[y * width + x] = next_label + (ly * cols + lx) as u32;
            }
        }
        next_label += f.cell_count() as u32;
    }
    let fovea_cells = next_label as usize;
    let periphery: Vec<usize> = (0..m).filter(|&i| labels[i] == UNASSIGNED).collect();

    if periphery.is_empty() {
        if fovea_cells != target_cells {
            return Err(Error::InfeasibleCellCount(format!(
                "fovea lattice has {fovea_cells} cells and leaves no periphery to reach {target_cells}"
            )));
        }
    } else {
        if fovea_cells >= target_cells {
            return Err(Error::InfeasibleCellCount(format!(
                "{fovea_cells} fovea cells leave no periphery cell within N = {target_cells}"
            )));
        }
        let target_periphery = target_cells - fovea_cells;
        if target_periphery > periphery.len() {
            return Err(Error::InfeasibleCellCount(format!(
                "{target_periphery} periphery cells requested from {} periphery hr-pixels",
                periphery.len()
            )));
        }
        let geom = PolarGeometry::new(width, foveas, polar_center_jitter, azimuth_offset, &periphery);
        let keys = geom.best_rasterisation(target_periphery);
        for (slot, &pix) in periphery.iter().enumerate() {
            labels[pix] = next_label + keys[slot];
        }
        repair_count(&mut labels, width, height, fovea_cells as u32, target_cells)?;
    }

    canonical_relabel(&mut labels);
    CellGrid::from_labels(
        width,
        height,
        labels,
        foveas.to_vec(),
        azimuth_offset,
        polar_center_jitter,
        seed,
        generation,
    )
}

/// Per-periphery-pixel polar coordinates.
struct PolarGeometry {
    /// `ln(r / r0)` per periphery pixel.
    log_radius: Vec<f64>,
    azimuth: Vec<f64>,
    r0: f64,
    perimeter: f64,
}

impl PolarGeometry {
    fn new(
        width: usize,
        foveas: &[FoveaDescriptor],
        jitter: (i32, i32),
        azimuth_offset: f64,
        periphery: &[usize],
    ) -> Self {
        let (jx, jy) = (jitter.0 as f64, jitter.1 as f64);
        let k = foveas.len() as f64;
        let cx = foveas.iter().map(|f| f.center.0 as f64).sum::<f64>() / k + jx;
        let cy = foveas.iter().map(|f| f.center.1 as f64).sum::<f64>() / k + jy;
        let single = foveas.len() == 1;
        let rects: Vec<(f64, f64, f64, f64)> = foveas
            .iter()
            .map(|f| {
                let (x0, y0, x1, y1) = f.rect();
                (x0 as f64 + jx, y0 as f64 + jy, x1 as f64 + jx, y1 as f64 + jy)
            })
            .collect();
        let mut radius = Vec::with_capacity(periphery.len());
        let mut azimuth = Vec::with_capacity(periphery.len());
        for &pix in periphery {
            let px = (pix % width) as f64 + 0.5;
            let py = (pix / width) as f64 + 0.5;
            let r = if single {
                ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
            } else {
                rects
                    .iter()
                    .map(|&(x0, y0, x1, y1)| {
                        let dx = (x0 - px).max(0.0).max(px - x1);
                        let dy = (y0 - py).max(0.0).max(py - y1);
                        (dx * dx + dy * dy).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            };
            radius.push(r);
            let a = (py - cy).atan2(px - cx) - azimuth_offset;
            azimuth.push(a.rem_euclid(TAU));
        }
        let r0 = radius.iter().copied().fold(f64::INFINITY, f64::min).max(0.5);
        let perimeter = if single {
            0.0
        } else {
            foveas.iter().map(|f| 4.0 * f.side() as f64).sum()
        };
        let log_radius = radius
            .iter()
            .map(|&r| if r <= r0 { 0.0 } else { (r / r0).ln() })
            .collect();
        PolarGeometry {
            log_radius,
            azimuth,
            r0,
            perimeter,
        }
    }

    /// Ring index and sector count per ring for growth ratio `q`.
    fn layout(&self, q: f64) -> (Vec<u32>, Vec<u32>) {
        let ln_q = q.ln();
        let rings: Vec<u32> = self
            .log_radius
            .iter()
            .map(|&lr| if lr <= 0.0 { 0 } else { (lr / ln_q).floor() as u32 })
            .collect();
        let ring_count = rings.iter().copied().max().map_or(0, |r| r as usize + 1);
        let sectors = (0..ring_count)
            .map(|ring| {
                let inner = self.r0 * q.powi(ring as i32);
                let outer = inner * q;
                ((std::f64::consts::PI * (inner + outer) + self.perimeter) / (outer - inner))
                    .round()
                    .max(1.0) as u32
            })
            .collect();
        (rings, sectors)
    }

    fn sector_of(&self, pixel: usize, sectors: u32) -> u32 {
        ((self.azimuth[pixel] / TAU * sectors as f64).floor() as u32).min(sectors - 1)
    }

    /// Number of non-empty ring/sector cells for growth ratio `q`.
    fn count(&self, q: f64) -> usize {
        let (rings, sectors) = self.layout(q);
        let mut offset = Vec::with_capacity(sectors.len() + 1);
        offset.push(0usize);
        for &s in &sectors {
            offset.push(offset.last().unwrap() + s as usize);
        }
        let mut hit = vec![false; *offset.last().unwrap()];
        let mut n = 0;
        for (i, &ring) in rings.iter().enumerate() {
            let slot = offset[ring as usize] + self.sector_of(i, sectors[ring as usize]) as usize;
            if !hit[slot] {
                hit[slot] = true;
                n += 1;
            }
        }
        n
    }

    /// Ring/sector key per periphery pixel for growth ratio `q`, densely
    /// numbered in first-occurrence order.
    fn rasterise(&self, q: f64) -> Vec<u32> {
        let (rings, sectors) = self.layout(q);
        let mut seen: std::collections::HashMap<(u32, u32), u32> = Default::default();
        rings
            .iter()
            .enumerate()
            .map(|(i, &ring)| {
                let sector = self.sector_of(i, sectors[ring as usize]);
                let len = seen.len() as u32;
                *seen.entry((ring, sector)).or_insert(len)
            })
            .collect()
    }

    /// Chooses the growth ratio whose rasterised count is closest to `target`.
    ///
    /// The ratio is searched on a log-spaced ladder: every eighth rung
    /// first, then every rung around the best coarse hit.
    fn best_rasterisation(&self, target: usize) -> Vec<u32> {
        const STEPS: usize = 192;
        const STRIDE: usize = 8;
        let (lo, hi) = (1.02f64.ln(), 8.0f64.ln());
        let q_at = |i: usize| (lo + (hi - lo) * i as f64 / STEPS as f64).exp();
        let mut best: Option<(usize, usize)> = None;
        let consider = |i: usize, best: &mut Option<(usize, usize)>| {
            let miss = self.count(q_at(i)).abs_diff(target);
            if best.is_none_or(|(b, j)| miss < b || (miss == b && i < j)) {
                *best = Some((miss, i));
            }
        };
        for i in (0..=STEPS).step_by(STRIDE) {
            consider(i, &mut best);
        }
        let centre = best.map_or(0, |(_, i)| i);
        for i in centre.saturating_sub(STRIDE - 1)..=(centre + STRIDE - 1).min(STEPS) {
            if i % STRIDE != 0 {
                consider(i, &mut best);
            }
        }
        best.map(|(_, i)| self.rasterise(q_at(i))).unwrap_or_default()
    }
}

/// Splits or merges periphery cells (labels `>= first_periphery`) until the
/// grid has exactly `target` cells.
fn repair_count(
    labels: &mut [u32],
    width: usize,
    height: usize,
    first_periphery: u32,
    target: usize,
) -> Result<()> {
    loop {
        let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut area = vec![0usize; max_label + 1];
        for &l in labels.iter() {
            area[l as usize] += 1;
        }
        let count = area.iter().filter(|&&a| a > 0).count();
        if count == target {
            return Ok(());
        }
        let live = |l: usize| l >= first_periphery as usize && area[l] > 0;
        if count < target {
            let largest = (0..area.len())
                .filter(|&l| live(l))
                .max_by(|&a, &b| area[a].cmp(&area[b]).then(b.cmp(&a)))
                .ok_or_else(|| Error::InfeasibleCellCount("no periphery cell to split".into()))?;
            if area[largest] < 2 {
                return Err(Error::InfeasibleCellCount(
                    "periphery cells are single hr-pixels and cannot be split".into(),
                ));
            }
            split_cell(labels, width, largest as u32, (max_label + 1) as u32);
        } else {
            let mut order: Vec<usize> = (0..area.len()).filter(|&l| live(l)).collect();
            order.sort_by(|&a, &b| area[a].cmp(&area[b]).then(a.cmp(&b)));
            let mut merged = false;
            for &cell in &order {
                let neighbours = periphery_neighbours(labels, width, height, cell as u32, first_periphery);
                if let Some(&nb) = neighbours
                    .iter()
                    .min_by(|&&a, &&b| area[a as usize].cmp(&area[b as usize]).then(a.cmp(&b)))
                {
                    for l in labels.iter_mut() {
                        if *l == cell as u32 {
                            *l = nb;
                        }
                    }
                    merged = true;
                    break;
                }
            }
            if !merged {
                return Err(Error::InfeasibleCellCount(
                    "no adjacent periphery cells left to merge".into(),
                ));
            }
        }
    }
}

fn split_cell(labels: &mut [u32], width: usize, cell: u32, new_label: u32) {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (usize::MAX, 0, usize::MAX, 0);
    for (i, &l) in labels.iter().enumerate() {
        if l == cell {
            let (x, y) = (i % width, i / width);
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    let along_x = xmax - xmin >= ymax - ymin;
    let (lo, hi) = if along_x { (xmin, xmax) } else { (ymin, ymax) };
    let mid = lo + (hi - lo + 1) / 2;
    for (i, l) in labels.iter_mut().enumerate() {
        if *l == cell {
            let c = if along_x { i % width } else { i / width };
            if c >= mid {
                *l = new_label;
            }
        }
    }
}

fn periphery_neighbours(
    labels: &[u32],
    width: usize,
    height: usize,
    cell: u32,
    first_periphery: u32,
) -> Vec<u32> {
    let mut out = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != cell {
            continue;
        }
        let (x, y) = (i % width, i / width);
        let mut consider = |j: usize| {
            let n = labels[j];
            if n != cell && n >= first_periphery && !out.contains(&n) {
                out.push(n);
            }
        };
        if x > 0 {
            consider(i - 1);
        }
        if x + 1 < width {
            consider(i + 1);
        }
        if y > 0 {
            consider(i - width);
        }
        if y + 1 < height {
            consider(i + width);
        }
    }
    out
}

fn canonical_relabel(labels: &mut [u32]) {
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut map = vec![UNASSIGNED; max + 1];
    let mut next = 0u32;
    for l in labels.iter_mut() {
        let slot = &mut map[*l as usize];
        if *slot == UNASSIGNED {
            *slot = next;
            next += 1;
        }
        *l = *slot;
    }
}

/// Sparse view of the stretch matrix `T` (M×N, one 1 per row) and the
/// diagonal area matrix `A` of a grid.
#[derive(Debug, Clone, Copy)]
pub struct StretchTransform<'a> {
    grid: &'a CellGrid,
}

pub fn stretch(grid: &CellGrid) -> StretchTransform<'_> {
    StretchTransform { grid }
}

impl<'a> StretchTransform<'a> {
    pub fn grid(&self) -> &'a CellGrid {
        self.grid
    }

    /// `T·v`: every hr-pixel takes its cell's value.
    pub fn expand(&self, cell_values: &[f64]) -> Result<Vec<f64>> {
        self.check_cells(cell_values)?;
        Ok(self
            .grid
            .assignment
            .iter()
            .map(|&c| cell_values[c as usize])
            .collect())
    }

    /// `A⁻¹·T·v`: every hr-pixel takes its cell's value divided by the cell area.
    pub fn expand_per_area(&self, cell_values: &[f64]) -> Result<Vec<f64>> {
        self.check_cells(cell_values)?;
        let area = self.grid.cell_area();
        Ok(self
            .grid
            .assignment
            .iter()
            .map(|&c| cell_values[c as usize] / area[c as usize] as f64)
            .collect())
    }

    /// `Tᵀ·x`: per-cell sums of an hr-pixel vector.
    pub fn reduce_sum(&self, hr: &[f64]) -> Result<Vec<f64>> {
        if hr.len() != self.grid.pixel_count() {
            return Err(Error::LengthMismatch {
                expected: self.grid.pixel_count(),
                actual: hr.len(),
            });
        }
        let mut out = vec![0.0; self.grid.cell_count];
        for (&c, &v) in self.grid.assignment.iter().zip(hr) {
            out[c as usize] += v;
        }
        Ok(out)
    }

    /// `Tᵀ·A⁻¹·x`: per-cell means when `x` is constant on cells.
    pub fn reduce_mean(&self, hr: &[f64]) -> Result<Vec<f64>> {
        let mut sums = self.reduce_sum(hr)?;
        for (s, &a) in sums.iter_mut().zip(self.grid.cell_area()) {
            *s /= a as f64;
        }
        Ok(sums)
    }

    /// `A⁻¹·T·Tᵀ·x`: projection onto cell-constant vectors (per-cell mean).
    pub fn project(&self, hr: &[f64]) -> Result<Vec<f64>> {
        let sums = self.reduce_sum(hr)?;
        self.expand_per_area(&sums)
    }

    /// Diagonal entry `A_mm`.
    pub fn area(&self, m: usize) -> u32 {
        self.grid.area_at(m)
    }

    fn check_cells(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.grid.cell_count {
            return Err(Error::LengthMismatch {
                expected: self.grid.cell_count,
                actual: v.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn default_fovea() -> FoveaDescriptor {
        FoveaDescriptor::new((64, 64), 16, 2)
    }

    fn indicator_partition_holds(g: &CellGrid) {
        let mut count = vec![0usize; g.cell_count];
        for &c in &g.assignment {
            count[c as usize] += 1;
        }
        assert!(count.iter().all(|&c| c > 0));
        assert_eq!(count.iter().sum::<usize>(), g.pixel_count());
        assert_eq!(
            count,
            g.cell_area().iter().map(|&a| a as usize).collect::<Vec<_>>()
        );
        g.validate().unwrap();
    }

    #[test]
    fn uniform_examples() {
        let g = make_uniform_grid(128, 128, 32).unwrap();
        assert_eq!(g.cell_count, 1024);
        assert!(g.cell_area().iter().all(|&a| a == 16));
        let blip = make_uniform_grid(128, 128, 16).unwrap();
        assert_eq!(blip.cell_count, 256);
        assert!(blip.cell_area().iter().all(|&a| a == 64));
        let tiny = make_uniform_grid(2, 2, 2).unwrap();
        assert_eq!(tiny.assignment, vec![0, 1, 2, 3]);
        indicator_partition_holds(&g);
    }

    #[test]
    fn uniform_rejects_bad_dimensions() {
        assert!(make_uniform_grid(100, 128, 32).is_err());
        assert!(make_uniform_grid(128, 128, 0).is_err());
        assert!(matches!(
            make_uniform_grid(96, 96, 3),
            Err(Error::NotPowerOfTwo(9))
        ));
    }

    #[test]
    fn foveated_grid_hits_exact_count() {
        let g = make_foveated_grid(128, 128, 1024, &[default_fovea()], 0.3, (1, -1), 5).unwrap();
        assert_eq!(g.cell_count, 1024);
        indicator_partition_holds(&g);
        // 16x16 lattice of 2x2 cells inside the fovea
        let (x0, y0, x1, y1) = default_fovea().rect();
        for y in y0..y1 {
            for x in x0..x1 {
                let c = g.cell_of(x, y);
                assert_eq!(g.cell_area()[c], 4);
                let (bx, by) = (x0 + (x - x0) / 2 * 2, y0 + (y - y0) / 2 * 2);
                assert_eq!(g.cell_of(bx, by), c);
            }
        }
        // periphery cells grow with distance from the fovea
        let near = g.cell_area()[g.cell_of(44, 64)];
        let far = g.cell_area()[g.cell_of(0, 0)];
        assert!(far > near, "near {near} far {far}");
    }

    #[test]
    fn too_large_fovea_is_infeasible() {
        // 64x64 hr-pixels of 2x2 cells consume all 1024 cells.
        let f = FoveaDescriptor::new((64, 64), 32, 2);
        assert!(matches!(
            make_foveated_grid(128, 128, 1024, &[f], 0.0, (0, 0), 0),
            Err(Error::InfeasibleCellCount(_))
        ));
    }

    #[test]
    fn invalid_fovea_rejected() {
        let off = FoveaDescriptor::new((10, 64), 16, 2);
        assert!(make_foveated_grid(128, 128, 1024, &[off], 0.0, (0, 0), 0).is_err());
        let a = FoveaDescriptor::new((40, 64), 16, 2);
        let b = FoveaDescriptor::new((60, 64), 16, 2);
        assert!(make_foveated_grid(128, 128, 1024, &[a, b], 0.0, (0, 0), 0).is_err());
        assert!(make_foveated_grid(128, 128, 1000, &[a], 0.0, (0, 0), 0).is_err());
    }

    #[test]
    fn whole_field_fovea_matches_uniform() {
        let f = FoveaDescriptor::new((64, 64), 64, 4);
        let g = make_foveated_grid(128, 128, 1024, &[f], 1.0, (2, 2), 9).unwrap();
        let u = make_uniform_grid(128, 128, 32).unwrap();
        assert_eq!(g.assignment, u.assignment);
    }

    #[test]
    fn dual_fovea_grid() {
        let a = FoveaDescriptor::new((36, 64), 12, 2);
        let b = FoveaDescriptor::new((92, 64), 12, 2);
        for n in [1024, 2048] {
            let g = make_foveated_grid(128, 128, n, &[a, b], 0.7, (0, 1), 3).unwrap();
            assert_eq!(g.cell_count, n);
            indicator_partition_holds(&g);
            assert_eq!(g.cell_area()[g.cell_of(30, 60)], 4);
            assert_eq!(g.cell_area()[g.cell_of(90, 70)], 4);
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = make_foveated_grid(128, 128, 1024, &[default_fovea()], 2.0, (-2, 1), 11).unwrap();
        let b = make_foveated_grid(128, 128, 1024, &[default_fovea()], 2.0, (-2, 1), 11).unwrap();
        assert_eq!(a, b);
        let s1 = shift_fovea(&a, 3).unwrap();
        let s2 = shift_fovea(&b, 3).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn shift_keeps_count_and_footprint() {
        let g = make_foveated_grid(128, 128, 1024, &[default_fovea()], 0.0, (0, 0), 21).unwrap();
        let (x0, y0, x1, y1) = default_fovea().rect();
        for k in 0..4 {
            let s = shift_fovea(&g, k).unwrap();
            assert_eq!(s.cell_count, 1024);
            indicator_partition_holds(&s);
            // every cell lies either wholly inside or wholly outside the fovea
            for members in s.cell_members() {
                let inside = members
                    .iter()
                    .filter(|&&m| {
                        let (x, y) = (m as usize % 128, m as usize / 128);
                        x >= x0 && x < x1 && y >= y0 && y < y1
                    })
                    .count();
                assert!(inside == 0 || inside == members.len());
            }
        }
        let s0 = shift_fovea(&g, 0).unwrap();
        for y in y0..y1 {
            for x in x0..x1 {
                assert_eq!(s0.cell_area()[s0.cell_of(x, y)], 4);
            }
        }
        // shifted lattice: (x0, y0) sits in a 1x1 corner part-cell
        let s3 = shift_fovea(&g, 3).unwrap();
        assert_eq!(s3.cell_area()[s3.cell_of(x0, y0)], 1);
        assert_eq!(s3.cell_area()[s3.cell_of(x0 + 1, y0 + 1)], 4);
        assert_eq!(s3.cell_of(x0 + 1, y0 + 1), s3.cell_of(x0 + 2, y0 + 2));
    }

    #[test]
    fn shift_rejects_bad_input() {
        let u = make_uniform_grid(16, 16, 4).unwrap();
        assert!(shift_fovea(&u, 1).is_err());
        let odd = FoveaDescriptor::new((64, 64), 15, 3);
        let g = make_foveated_grid(128, 128, 1024, &[odd], 0.0, (0, 0), 0).unwrap();
        assert!(shift_fovea(&g, 1).is_err());
        let g = make_foveated_grid(128, 128, 1024, &[default_fovea()], 0.0, (0, 0), 0).unwrap();
        assert!(shift_fovea(&g, 4).is_err());
    }

    #[test]
    fn shifts_rerandomise_periphery() {
        let g = make_foveated_grid(128, 128, 1024, &[default_fovea()], 0.0, (0, 0), 21).unwrap();
        let s = shift_fovea(&g, 0).unwrap();
        assert_ne!(g.assignment, s.assignment);
        assert_ne!(
            (g.azimuth_offset, g.polar_center_jitter),
            (s.azimuth_offset, s.polar_center_jitter)
        );
        assert!(s.polar_center_jitter.0.abs() <= 2 && s.polar_center_jitter.1.abs() <= 2);
    }

    #[test]
    fn stretch_small_cases() {
        let g = make_uniform_grid(2, 2, 2).unwrap();
        let t = stretch(&g);
        assert_eq!(t.expand(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!((0..4).all(|m| t.area(m) == 1));

        let g = make_uniform_grid(4, 4, 2).unwrap();
        let t = stretch(&g);
        assert!((0..16).all(|m| t.area(m) == 4));
        let e = t.expand(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            e,
            vec![
                1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0
            ]
        );
        assert!(t.expand(&[1.0]).is_err());
        assert!(t.reduce_sum(&[1.0; 3]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = make_foveated_grid(64, 64, 256, &[FoveaDescriptor::new((32, 32), 8, 2)], 0.4, (1, 0), 2)
            .unwrap();
        let back = CellGrid::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        assert!(CellGrid::from_json(r#"{"width":2,"height":2,"cell_count":3,"assignment":[0,1,2,2],"foveas":[]}"#).is_err());
    }
}
