//! Fusion of sub-frames into composites.
//!
//! Two estimators share one output type: a per-pixel weighted average that is
//! cheap enough to refresh after every sub-frame, and a sparse least-squares
//! solve over the stacked cell-sum constraints of all sub-frames.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cellgrid::CellGrid;
use crate::detector::{acquire, DetectorConfig};
use crate::guidance::DifferenceMapStack;
use crate::hadamard::build_basis;
use crate::reconstruct::{reconstruct_subframe, uniform_cells_per_side, SubFrame};
use crate::scene::{presets, DynamicScene};
use crate::solver::{cgls, CsrMatrix, SolveReport, SolverOptions};
use crate::{Error, Field, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MAX_EXPOSURE: f64 = 4.0;
pub const RECENCY_FACTOR: f64 = 0.8;

/// Slack on the exposure cap so that a window of exactly `max_exposure`
/// survives floating-point accumulation in the simulated clock.
const EXPOSURE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeImage {
    pub width: usize,
    pub height: usize,
    pub hr_image: Vec<f64>,
    /// Seconds from the oldest contributing `t_start` to the newest `t_end`.
    pub exposure_map: Vec<f64>,
    pub contributing_frames: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveReport>,
}

impl CompositeImage {
    pub fn image(&self) -> Field {
        Field {
            width: self.width,
            height: self.height,
            data: self.hr_image.clone(),
        }
    }

    pub fn exposure(&self) -> Field {
        Field {
            width: self.width,
            height: self.height,
            data: self.exposure_map.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    #[default]
    AreaInverse,
    /// Area-inverse weights scaled by `0.8^age`, age 0 being the newest sub-frame.
    NewestBiased,
    /// Equal weights over the contributors with the smallest cell.
    BestResolution,
}

/// Per-sub-frame, per-cell flags; a flagged cell is excluded from fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMask {
    pub flags: Vec<Vec<bool>>,
}

impl MotionMask {
    pub fn none(subframes: &[SubFrame]) -> Self {
        Self {
            flags: subframes.iter().map(|s| vec![false; s.grid.cell_count]).collect(),
        }
    }

    pub fn is_flagged(&self, frame: usize, cell: usize) -> bool {
        self.flags[frame][cell]
    }

    pub fn flag(&mut self, frame: usize, cell: usize) {
        self.flags[frame][cell] = true;
    }

    pub fn flagged_count(&self) -> usize {
        self.flags.iter().flatten().filter(|&&f| f).count()
    }

    /// True when every cell of the frame is flagged.
    pub fn frame_excluded(&self, frame: usize) -> bool {
        self.flags[frame].iter().all(|&f| f)
    }

    fn check(&self, subframes: &[SubFrame]) -> Result<()> {
        if self.flags.len() != subframes.len() {
            return Err(Error::LengthMismatch {
                expected: subframes.len(),
                actual: self.flags.len(),
            });
        }
        for (f, s) in self.flags.iter().zip(subframes) {
            if f.len() != s.grid.cell_count {
                return Err(Error::LengthMismatch {
                    expected: s.grid.cell_count,
                    actual: f.len(),
                });
            }
        }
        Ok(())
    }
}

fn check_stack(subframes: &[SubFrame]) -> Result<(usize, usize)> {
    let first = subframes
        .first()
        .ok_or_else(|| Error::Fusion("no sub-frames to fuse".into()))?;
    let (w, h) = (first.grid.width, first.grid.height);
    if let Some(bad) = subframes.iter().find(|s| s.grid.width != w || s.grid.height != h) {
        return Err(Error::Fusion(format!(
            "sub-frame of {}x{} does not match {w}x{h}",
            bad.grid.width, bad.grid.height
        )));
    }
    Ok((w, h))
}

/// Exposure span and contributor count per hr-pixel over unflagged cells.
fn exposure(subframes: &[SubFrame], mask: &MotionMask, m_total: usize) -> (Vec<f64>, Vec<u32>) {
    let mut first = vec![f64::INFINITY; m_total];
    let mut last = vec![f64::NEG_INFINITY; m_total];
    let mut count = vec![0u32; m_total];
    for (k, sf) in subframes.iter().enumerate() {
        for (m, &c) in sf.grid.assignment.iter().enumerate() {
            if mask.is_flagged(k, c as usize) {
                continue;
            }
            first[m] = first[m].min(sf.t_start);
            last[m] = last[m].max(sf.t_end);
            count[m] += 1;
        }
    }
    let span = first
        .iter()
        .zip(&last)
        .zip(&count)
        .map(|((a, b), &n)| if n > 0 { b - a } else { 0.0 })
        .collect();
    (span, count)
}

pub fn weighted_average(subframes: &[SubFrame], mode: WeightMode) -> Result<CompositeImage> {
    weighted_average_masked(subframes, mode, None)
}

/// Weighted average over unflagged cells. Pixels with no contributor are 0.
pub fn weighted_average_masked(
    subframes: &[SubFrame],
    mode: WeightMode,
    mask: Option<&MotionMask>,
) -> Result<CompositeImage> {
    let (w, h) = check_stack(subframes)?;
    let owned;
    let mask = match mask {
        Some(m) => {
            m.check(subframes)?;
            m
        }
        None => {
            owned = MotionMask::none(subframes);
            &owned
        }
    };
    let m_total = w * h;
    let mut num = vec![0.0; m_total];
    let mut den = vec![0.0; m_total];
    let mut used = vec![0u32; m_total];
    let mut only = vec![0.0; m_total];

    // age 0 is the most recent sub-frame by end time; on ties the later entry is newer
    let mut order: Vec<usize> = (0..subframes.len()).collect();
    order.sort_by(|&a, &b| subframes[b].t_end.total_cmp(&subframes[a].t_end).then(b.cmp(&a)));
    let mut age = vec![0usize; subframes.len()];
    for (rank, &k) in order.iter().enumerate() {
        age[k] = rank;
    }

    let mut best_area = vec![u32::MAX; m_total];
    if mode == WeightMode::BestResolution {
        for (k, sf) in subframes.iter().enumerate() {
            let area = sf.grid.cell_area();
            for (m, &c) in sf.grid.assignment.iter().enumerate() {
                if !mask.is_flagged(k, c as usize) {
                    best_area[m] = best_area[m].min(area[c as usize]);
                }
            }
        }
    }

    for (k, sf) in subframes.iter().enumerate() {
        let area = sf.grid.cell_area();
        let recency = RECENCY_FACTOR.powi(age[k] as i32);
        for (m, &c) in sf.grid.assignment.iter().enumerate() {
            let c = c as usize;
            if mask.is_flagged(k, c) {
                continue;
            }
            let weight = match mode {
                WeightMode::AreaInverse => 1.0 / area[c] as f64,
                WeightMode::NewestBiased => recency / area[c] as f64,
                WeightMode::BestResolution => {
                    if area[c] == best_area[m] {
                        1.0
                    } else {
                        continue;
                    }
                }
            };
            num[m] += weight * sf.hr_image[m];
            den[m] += weight;
            used[m] += 1;
            only[m] = sf.hr_image[m];
        }
    }
    // a lone contributor is copied so that it survives the division unrounded
    let hr_image = (0..m_total)
        .map(|m| match used[m] {
            0 => 0.0,
            1 => only[m],
            _ => num[m] / den[m],
        })
        .collect();
    let (exposure_map, contributing_frames) = exposure(subframes, mask, m_total);
    Ok(CompositeImage {
        width: w,
        height: h,
        hr_image,
        exposure_map,
        contributing_frames,
        solve: None,
    })
}

/// The stacked system: cell-sum rows for every unflagged cell, then (for
/// λ > 0) one `λ·o′_m = λ·o_wm,m` row per hr-pixel.
pub fn build_system(
    subframes: &[SubFrame],
    mask: &MotionMask,
    lambda: f64,
    prior: Option<&[f64]>,
) -> Result<(CsrMatrix, Vec<f64>)> {
    let (w, h) = check_stack(subframes)?;
    mask.check(subframes)?;
    let m_total = w * h;
    let mut a = CsrMatrix::new(m_total);
    let mut b = Vec::new();
    for (k, sf) in subframes.iter().enumerate() {
        for (n, members) in sf.grid.cell_members().iter().enumerate() {
            if mask.is_flagged(k, n) {
                continue;
            }
            a.push_row(members.iter().map(|&m| (m, 1.0)));
            b.push(sf.cell_sums[n]);
        }
    }
    if lambda > 0.0 {
        let prior = prior.ok_or_else(|| Error::Fusion("smoothing rows need a prior".into()))?;
        for (m, &p) in prior.iter().enumerate() {
            a.push_row([(m as u32, lambda)]);
            b.push(lambda * p);
        }
    }
    Ok((a, b))
}

pub fn linear_constraints(
    subframes: &[SubFrame],
    mask: Option<&MotionMask>,
    lambda: f64,
    options: &SolverOptions,
) -> Result<CompositeImage> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("smoothing weight must be finite and >= 0, got {lambda}")));
    }
    let (w, h) = check_stack(subframes)?;
    let none = MotionMask::none(subframes);
    let mask = mask.unwrap_or(&none);
    mask.check(subframes)?;

    let wm = weighted_average_masked(subframes, WeightMode::AreaInverse, Some(mask))?;
    if let Some(fast) = separable_fast_path(subframes, mask, lambda, &wm) {
        return Ok(fast);
    }
    let (a, b) = build_system(subframes, mask, lambda, Some(&wm.hr_image))?;
    let (hr_image, report) = cgls(&a, &b, options)?;
    Ok(CompositeImage {
        width: w,
        height: h,
        hr_image,
        exposure_map: wm.exposure_map,
        contributing_frames: wm.contributing_frames,
        solve: Some(report),
    })
}

/// Closed form when every sub-frame uses the same regular uniform grid and
/// nothing is flagged: each cell decouples into
/// `min Σ_k (Σ_m x_m − c_k)² + λ² Σ_m (x_m − w_m)²`.
fn separable_fast_path(
    subframes: &[SubFrame],
    mask: &MotionMask,
    lambda: f64,
    wm: &CompositeImage,
) -> Option<CompositeImage> {
    let grid = &subframes[0].grid;
    uniform_cells_per_side(grid)?;
    if mask.flagged_count() > 0
        || subframes[1..]
            .iter()
            .any(|s| !Arc::ptr_eq(&s.grid, grid) && s.grid.assignment != grid.assignment)
    {
        return None;
    }
    let k = subframes.len() as f64;
    let area = grid.cell_area()[0] as f64;
    let members = grid.cell_members();
    let mut out = vec![0.0; grid.pixel_count()];
    for (n, cell) in members.iter().enumerate() {
        let c_bar = subframes.iter().map(|s| s.cell_sums[n]).sum::<f64>() / k;
        if lambda == 0.0 {
            for &m in cell {
                out[m as usize] = c_bar / area;
            }
        } else {
            let w_sum: f64 = cell.iter().map(|&m| wm.hr_image[m as usize]).sum();
            let l2 = lambda * lambda;
            let s = (l2 * w_sum + area * k * c_bar) / (l2 + area * k);
            let shift = k * (s - c_bar) / l2;
            for &m in cell {
                out[m as usize] = wm.hr_image[m as usize] - shift;
            }
        }
    }
    Some(CompositeImage {
        width: wm.width,
        height: wm.height,
        hr_image: out,
        exposure_map: wm.exposure_map.clone(),
        contributing_frames: wm.contributing_frames.clone(),
        solve: None,
    })
}

/// Flags, per sub-frame, every cell touching a blip-pixel that changed after
/// the sub-frame started, and every cell of a sub-frame that has fallen out
/// of the exposure window.
///
/// The window is measured in accumulated sub-frame acquisition time: a
/// sub-frame expires once it and every later-starting sub-frame together
/// exceed `max_exposure`. Time spent on blip-frames does not count.
pub fn apply_motion_mask(
    stack: &DifferenceMapStack,
    subframes: &[SubFrame],
    max_exposure: f64,
) -> Result<MotionMask> {
    let mut mask = MotionMask::none(subframes);
    if subframes.is_empty() {
        return Ok(mask);
    }
    let (w, h) = check_stack(subframes)?;
    let (bw, bh) = (stack.width(), stack.height());
    if bw == 0 || bh == 0 || w % bw != 0 || h % bh != 0 {
        return Err(Error::Fusion(format!(
            "difference maps of {bw}x{bh} do not tile a {w}x{h} field"
        )));
    }
    let (sx, sy) = (w / bw, h / bh);
    let mut order: Vec<usize> = (0..subframes.len()).collect();
    order.sort_by(|&a, &b| subframes[b].t_start.total_cmp(&subframes[a].t_start));
    let mut accumulated = vec![0.0; subframes.len()];
    let mut total = 0.0;
    for &k in &order {
        total += subframes[k].duration();
        accumulated[k] = total;
    }
    for (k, sf) in subframes.iter().enumerate() {
        if accumulated[k] > max_exposure + EXPOSURE_SLACK {
            mask.flags[k].iter_mut().for_each(|f| *f = true);
            continue;
        }
        for y in 0..h {
            for x in 0..w {
                if stack.last_change(x / sx, y / sy) > sf.t_start {
                    mask.flags[k][sf.grid.cell_of(x, y)] = true;
                }
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FusionMethod {
    WeightedAverage { mode: WeightMode },
    LinearConstraints { lambda: f64, options: SolverOptions },
}

impl FusionMethod {
    pub fn fuse(&self, subframes: &[SubFrame], mask: Option<&MotionMask>) -> Result<CompositeImage> {
        match self {
            FusionMethod::WeightedAverage { mode } => weighted_average_masked(subframes, *mode, mask),
            FusionMethod::LinearConstraints { lambda, options } => {
                linear_constraints(subframes, mask, *lambda, options)
            }
        }
    }
}

/// Measures a lattice of single hr-pixel impulses through every grid of the
/// sequence (noiseless, static) and fuses the resulting sub-frames.
pub fn psf_probe(
    grids: &[Arc<CellGrid>],
    method: &FusionMethod,
    spacing: usize,
    offset: usize,
) -> Result<CompositeImage> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Fusion("empty grid sequence".into()))?;
    let scene = DynamicScene::from_static(presets::impulse_grid(first.width, first.height, spacing, offset));
    let config = DetectorConfig::default();
    let mut subframes = Vec::with_capacity(grids.len());
    let mut t = 0.0;
    for grid in grids {
        let basis = build_basis(grid.cell_count)?;
        let rec = acquire(&scene, grid.clone(), &basis, &config, t)?;
        t = rec.t_end;
        subframes.push(reconstruct_subframe(&rec, &basis)?);
    }
    method.fuse(&subframes, None)
}
