//! Fovea placement: blip-frame change detection, Haar detail trajectories,
//! stochastic jumps and manual clicks.

use std::collections::{HashSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Field, Result};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_STACK_CAPACITY: usize = 64;
pub const DEFAULT_P_JUMP: f64 = 0.2;
/// Positions a stochastic jump may not revisit.
pub const DEFAULT_RECENT: usize = 4;
pub const DEFAULT_LATTICE_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    fn points(&self) -> Vec<(i64, i64)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.get(x, y))
            .map(|(x, y)| (x as i64, y as i64))
            .collect()
    }
}

/// Recent difference maps and the time each blip-pixel last changed.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMapStack {
    width: usize,
    height: usize,
    capacity: usize,
    entries: VecDeque<(f64, BinaryMap)>,
    last_change: Vec<f64>,
}

impl DifferenceMapStack {
    pub fn new(width: usize, height: usize, capacity: usize) -> Self {
        Self {
            width,
            height,
            capacity: capacity.max(1),
            entries: VecDeque::new(),
            last_change: vec![f64::NEG_INFINITY; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &(f64, BinaryMap)> {
        self.entries.iter()
    }

    /// Time of the most recent change at a blip-pixel, `-inf` if never.
    pub fn last_change(&self, x: usize, y: usize) -> f64 {
        self.last_change[y * self.width + x]
    }

    /// Record a map whose true pixels changed at time `t`.
    pub fn push(&mut self, map: BinaryMap, t: f64) -> Result<()> {
        if map.width != self.width || map.height != self.height {
            return Err(Error::LengthMismatch {
                expected: self.width * self.height,
                actual: map.width * map.height,
            });
        }
        if let Some((last, _)) = self.entries.back() {
            if t < *last {
                return Err(Error::InvalidConfig(format!(
                    "difference map at {t} s is older than the previous one at {last} s"
                )));
            }
        }
        for (lc, &changed) in self.last_change.iter_mut().zip(&map.data) {
            if changed {
                *lc = t;
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((t, map));
        Ok(())
    }
}

/// `|curr − prev| > τ`, before hull filling and dilation.
pub fn threshold_changes(prev: &Field, curr: &Field, tau: f64) -> Result<BinaryMap> {
    if !prev.same_shape(curr) {
        return Err(Error::LengthMismatch {
            expected: prev.len(),
            actual: curr.len(),
        });
    }
    let data = prev.data.iter().zip(&curr.data).map(|(a, b)| (b - a).abs() > tau).collect();
    BinaryMap::new(prev.width, prev.height, data)
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull without collinear points (monotone chain).
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn in_hull(hull: &[(i64, i64)], p: (i64, i64)) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

/// Fill every lattice point inside or on the convex hull of the true pixels.
pub fn hull_fill(map: &BinaryMap) -> BinaryMap {
    let pts = map.points();
    let mut out = BinaryMap::empty(map.width, map.height);
    if pts.is_empty() {
        return out;
    }
    let (ymin, ymax) = pts.iter().fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let hull = convex_hull(pts);
    for y in ymin..=ymax {
        for x in 0..map.width as i64 {
            if in_hull(&hull, (x, y)) {
                out.set(x as usize, y as usize, true);
            }
        }
    }
    out
}

/// 3×3 dilation, clipped at the border.
pub fn dilate(map: &BinaryMap) -> BinaryMap {
    let mut out = BinaryMap::empty(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            if !map.get(x, y) {
                continue;
            }
            for ny in y.saturating_sub(1)..=(y + 1).min(map.height - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(map.width - 1) {
                    out.set(nx, ny, true);
                }
            }
        }
    }
    out
}

pub fn difference_map(prev: &Field, curr: &Field, tau: f64) -> Result<BinaryMap> {
    Ok(dilate(&hull_fill(&threshold_changes(prev, curr, tau)?)))
}

/// Fovea centres available to the scheduler: an evenly spaced product
/// lattice spanning `[h, W − h]` on each axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateLattice {
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
}

impl CandidateLattice {
    pub fn new(width: usize, height: usize, half_extent: usize, per_side: usize) -> Result<Self> {
        if per_side == 0 || 2 * half_extent > width || 2 * half_extent > height {
            return Err(Error::InvalidConfig(format!(
                "no fovea positions for half-extent {half_extent} on a {width}x{height} field"
            )));
        }
        let axis = |len: usize| -> Vec<usize> {
            let lo = half_extent as f64;
            let hi = (len - half_extent) as f64;
            if per_side == 1 {
                return vec![((lo + hi) / 2.0).round() as usize];
            }
            let step = (hi - lo) / (per_side - 1) as f64;
            let mut v: Vec<usize> = (0..per_side).map(|i| (lo + i as f64 * step).round() as usize).collect();
            v.dedup();
            v
        };
        Ok(Self {
            xs: axis(width),
            ys: axis(height),
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All positions in raster order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        self.ys.iter().flat_map(|&y| self.xs.iter().map(move |&x| (x, y))).collect()
    }

    /// Largest distance between adjacent positions on either axis.
    pub fn spacing(&self) -> f64 {
        let gap = |v: &[usize]| v.windows(2).map(|w| (w[1] - w[0]) as f64).fold(0.0, f64::max);
        gap(&self.xs).max(gap(&self.ys))
    }

    pub fn snap(&self, x: f64, y: f64) -> (usize, usize) {
        let nearest = |v: &[usize], t: f64| {
            *v.iter()
                .min_by(|a, b| (**a as f64 - t).abs().total_cmp(&(**b as f64 - t).abs()))
                .unwrap()
        };
        (nearest(&self.xs, x), nearest(&self.ys, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionReason {
    Motion,
    Wavelet,
    Stochastic,
    Manual,
    /// Nothing asked for a move; the fovea stays where it is.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoveaDecision {
    pub center: (usize, usize),
    pub reason: DecisionReason,
    pub decided_at: f64,
}

impl FoveaDecision {
    /// One line of the decision log.
    pub fn to_log_line(&self) -> String {
        serde_json::json!({
            "t": self.decided_at,
            "center": [self.center.0, self.center.1],
            "reason": self.reason,
        })
        .to_string()
    }

    pub fn from_log_line(line: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            t: f64,
            center: (usize, usize),
            reason: DecisionReason,
        }
        let l: Line = serde_json::from_str(line)?;
        Ok(Self {
            center: l.center,
            reason: l.reason,
            decided_at: l.t,
        })
    }
}

/// Centroid of the true region, in hr-pixels, before snapping.
pub fn map_centroid(map: &BinaryMap, field_width: usize, field_height: usize) -> Option<(f64, f64)> {
    let n = map.count();
    if n == 0 {
        return None;
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in map.points() {
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
    }
    let kx = field_width as f64 / map.width as f64;
    let ky = field_height as f64 / map.height as f64;
    Some((sx / n as f64 * kx, sy / n as f64 * ky))
}

pub fn motion_target(
    map: &BinaryMap,
    lattice: &CandidateLattice,
    field_width: usize,
    field_height: usize,
    t: f64,
) -> Option<FoveaDecision> {
    let (x, y) = map_centroid(map, field_width, field_height)?;
    Some(FoveaDecision {
        center: lattice.snap(x, y),
        reason: DecisionReason::Motion,
        decided_at: t,
    })
}

/// One level of the orthonormal 2-D Haar transform.
///
/// For each 2×2 block `[a b; c d]`: `ll = (a+b+c+d)/2`, `lh = (a−b+c−d)/2`
/// (responds to vertical edges), `hl = (a+b−c−d)/2` (horizontal edges) and
/// `hh = (a−b−c+d)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarBands {
    pub ll: Field,
    pub lh: Field,
    pub hl: Field,
    pub hh: Field,
}

impl HaarBands {
    /// `sqrt(lh² + hl² + hh²)` per 2×2 block.
    pub fn detail(&self) -> Field {
        Field::from_fn(self.ll.width, self.ll.height, |x, y| {
            (self.lh.get(x, y).powi(2) + self.hl.get(x, y).powi(2) + self.hh.get(x, y).powi(2)).sqrt()
        })
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|b| b.data.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

pub fn haar_level(image: &Field) -> Result<HaarBands> {
    if image.width % 2 != 0 || image.height % 2 != 0 || image.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "Haar transform needs even dimensions, got {}x{}",
            image.width, image.height
        )));
    }
    let (w, h) = (image.width / 2, image.height / 2);
    let band = |f: fn(f64, f64, f64, f64) -> f64| {
        Field::from_fn(w, h, |x, y| {
            f(
                image.get(2 * x, 2 * y),
                image.get(2 * x + 1, 2 * y),
                image.get(2 * x, 2 * y + 1),
                image.get(2 * x + 1, 2 * y + 1),
            )
        })
    };
    Ok(HaarBands {
        ll: band(|a, b, c, d| (a + b + c + d) / 2.0),
        lh: band(|a, b, c, d| (a - b + c - d) / 2.0),
        hl: band(|a, b, c, d| (a + b - c - d) / 2.0),
        hh: band(|a, b, c, d| (a - b - c + d) / 2.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<(usize, usize)>,
    /// The request asked for more positions than the lattice holds.
    pub truncated: bool,
}

/// Centre of detail-map cell `(i, j)` in hr-pixels.
fn detail_cell_center(detail: &Field, i: usize, j: usize, field_width: usize, field_height: usize) -> (f64, f64) {
    let kx = field_width as f64 / detail.width as f64;
    let ky = field_height as f64 / detail.height as f64;
    ((i as f64 + 0.5) * kx, (j as f64 + 0.5) * ky)
}

fn footprint_contains(center: (usize, usize), half_extent: usize, p: (f64, f64)) -> bool {
    let (cx, cy) = (center.0 as f64, center.1 as f64);
    let h = half_extent as f64;
    p.0 >= cx - h && p.0 < cx + h && p.1 >= cy - h && p.1 < cy + h
}

/// Greedy detail-driven fovea trajectory.
///
/// Repeatedly takes the detail cell with the most unsampled detail and moves
/// to the nearest unused candidate; detail under the chosen footprint is then
/// marked sampled. Once no detail remains, unused candidates follow in raster
/// order.
pub fn wavelet_trajectory(
    blip: &Field,
    lattice: &CandidateLattice,
    half_extent: usize,
    field_width: usize,
    field_height: usize,
    n_positions: usize,
) -> Result<Trajectory> {
    let mut detail = haar_level(blip)?.detail();
    let candidates = lattice.positions();
    let truncated = n_positions > candidates.len();
    let n = n_positions.min(candidates.len());
    let mut used = vec![false; candidates.len()];
    let mut positions = Vec::with_capacity(n);
    while positions.len() < n {
        let (best, &peak) = detail
            .data
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        let idx = if peak > 0.0 {
            let target = detail_cell_center(&detail, best % detail.width, best / detail.width, field_width, field_height);
            detail.data[best] = 0.0;
            (0..candidates.len())
                .filter(|&i| !used[i])
                .min_by(|&a, &b| {
                    let d = |i: usize| {
                        let (x, y) = candidates[i];
                        (x as f64 - target.0).powi(2) + (y as f64 - target.1).powi(2)
                    };
                    d(a).total_cmp(&d(b)).then(a.cmp(&b))
                })
                .unwrap()
        } else {
            (0..candidates.len()).find(|&i| !used[i]).unwrap()
        };
        used[idx] = true;
        let c = candidates[idx];
        positions.push(c);
        for j in 0..detail.height {
            for i in 0..detail.width {
                let p = detail_cell_center(&detail, i, j, field_width, field_height);
                if footprint_contains(c, half_extent, p) {
                    detail.set(i, j, 0.0);
                }
            }
        }
    }
    Ok(Trajectory { positions, truncated })
}

/// Fraction of the total detail mass whose cells fall under the footprints
/// of `positions`.
pub fn detail_coverage(
    detail: &Field,
    positions: &[(usize, usize)],
    half_extent: usize,
    field_width: usize,
    field_height: usize,
) -> f64 {
    let total: f64 = detail.data.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut covered = 0.0;
    for j in 0..detail.height {
        for i in 0..detail.width {
            let p = detail_cell_center(detail, i, j, field_width, field_height);
            if positions.iter().any(|&c| footprint_contains(c, half_extent, p)) {
                covered += detail.get(i, j);
            }
        }
    }
    covered / total
}

/// What the scheduler knows at a decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerView<'a> {
    pub lattice: &'a CandidateLattice,
    pub current: (usize, usize),
    /// Most recent first; includes the current position.
    pub recent: &'a [(usize, usize)],
    pub recent_limit: usize,
    pub motion: Option<(usize, usize)>,
    pub wavelet_head: Option<(usize, usize)>,
    pub t: f64,
}

/// Priority: manual click, then a stochastic jump with probability `p_jump`
/// to a candidate outside the last `recent_limit` positions, then motion,
/// then the wavelet trajectory, then hold.
pub fn next_decision(
    view: &SchedulerView<'_>,
    manual_click: Option<(usize, usize)>,
    p_jump: f64,
    rng: &mut ChaCha8Rng,
) -> FoveaDecision {
    let decide = |center, reason| FoveaDecision {
        center,
        reason,
        decided_at: view.t,
    };
    if let Some((x, y)) = manual_click {
        return decide(view.lattice.snap(x as f64, y as f64), DecisionReason::Manual);
    }
    if p_jump > 0.0 && rng.random::<f64>() < p_jump {
        let blocked: HashSet<_> = view.recent.iter().take(view.recent_limit).collect();
        let options: Vec<_> = view
            .lattice
            .positions()
            .into_iter()
            .filter(|p| !blocked.contains(p))
            .collect();
        if !options.is_empty() {
            let pick = options[rng.random_range(0..options.len())];
            return decide(pick, DecisionReason::Stochastic);
        }
    }
    if let Some(c) = view.motion {
        return decide(c, DecisionReason::Motion);
    }
    if let Some(c) = view.wavelet_head {
        return decide(c, DecisionReason::Wavelet);
    }
    decide(view.current, DecisionReason::Hold)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    Manual,
    #[default]
    Motion,
    Wavelet,
}

/// Scheduler-side guidance state: visit history, wavelet queue, click latch.
#[derive(Debug, Clone)]
pub struct Guidance {
    pub lattice: CandidateLattice,
    pub mode: GuidanceMode,
    pub p_jump: f64,
    pub recent_limit: usize,
    pub half_extent: usize,
    field: (usize, usize),
    current: (usize, usize),
    recent: VecDeque<(usize, usize)>,
    wavelet_queue: VecDeque<(usize, usize)>,
    pending_click: Option<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl Guidance {
    pub fn new(
        lattice: CandidateLattice,
        mode: GuidanceMode,
        p_jump: f64,
        half_extent: usize,
        field: (usize, usize),
        start: (usize, usize),
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_jump) {
            return Err(Error::InvalidConfig(format!("p_jump must lie in [0,1], got {p_jump}")));
        }
        let current = lattice.snap(start.0 as f64, start.1 as f64);
        Ok(Self {
            lattice,
            mode,
            p_jump,
            recent_limit: DEFAULT_RECENT,
            half_extent,
            field,
            current,
            recent: VecDeque::from([current]),
            wavelet_queue: VecDeque::new(),
            pending_click: None,
            rng,
        })
    }

    pub fn current(&self) -> (usize, usize) {
        self.current
    }

    /// Latch a click; a later click replaces an earlier unconsumed one.
    pub fn click(&mut self, x: usize, y: usize) {
        self.pending_click = Some((x, y));
    }

    pub fn pending_click(&self) -> Option<(usize, usize)> {
        self.pending_click
    }

    pub fn set_mode(&mut self, mode: GuidanceMode) {
        if mode != self.mode {
            self.wavelet_queue.clear();
        }
        self.mode = mode;
    }

    /// Decide the next fixation from the latest blip and difference map.
    pub fn decide(&mut self, t: f64, blip: Option<&Field>, change: Option<&BinaryMap>) -> Result<FoveaDecision> {
        let click = self.pending_click.take();
        let (w, h) = self.field;
        let motion = match (self.mode, change) {
            (GuidanceMode::Motion, Some(map)) => motion_target(map, &self.lattice, w, h, t).map(|d| d.center),
            _ => None,
        };
        let moving = change.is_some_and(BinaryMap::any);
        let wants_wavelet = match self.mode {
            GuidanceMode::Manual => false,
            GuidanceMode::Motion => motion.is_none(),
            GuidanceMode::Wavelet => true,
        };
        if wants_wavelet && (self.wavelet_queue.is_empty() || (moving && self.mode == GuidanceMode::Wavelet)) {
            if let Some(b) = blip {
                let all = self.lattice.len();
                let traj = wavelet_trajectory(b, &self.lattice, self.half_extent, w, h, all)?;
                self.wavelet_queue = traj.positions.into();
            }
        }
        let wavelet_head = if wants_wavelet { self.wavelet_queue.front().copied() } else { None };
        let recent: Vec<_> = self.recent.iter().copied().collect();
        let view = SchedulerView {
            lattice: &self.lattice,
            current: self.current,
            recent: &recent,
            recent_limit: self.recent_limit,
            motion,
            wavelet_head,
            t,
        };
        let p_jump = if self.mode == GuidanceMode::Manual { 0.0 } else { self.p_jump };
        let decision = next_decision(&view, click, p_jump, &mut self.rng);
        if decision.reason == DecisionReason::Wavelet {
            self.wavelet_queue.pop_front();
        }
        self.current = decision.center;
        self.recent.push_front(decision.center);
        self.recent.truncate(self.recent_limit.max(1));
        Ok(decision)
    }
}
