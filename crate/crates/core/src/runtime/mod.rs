//! Acquisition sessions: plans, the fixation loop, timing, persistence,
//! replay and the streaming gateway protocol.
//!
//! Everything runs on the simulated mask clock. A session alternates a
//! blip-frame, a fovea decision and a fixation of half-cell-shifted
//! sub-frames; the weighted-average composite is refreshed after every
//! sub-frame and the linear-constraint composite once per fixation.

mod gateway;
mod persist;
mod session;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cellgrid::{make_foveated_grid_at, shift_fovea, FoveaDescriptor, SHIFT_PATTERN};
use crate::detector::DetectorConfig;
use crate::fusion::{WeightMode, DEFAULT_LAMBDA, DEFAULT_MAX_EXPOSURE};
use crate::guidance::{CandidateLattice, GuidanceMode, DEFAULT_LATTICE_SIDE, DEFAULT_P_JUMP, DEFAULT_TAU};
use crate::scene::{presets, load_image, DynamicScene, SceneScript};
use crate::solver::SolverOptions;
use crate::{Error, Result};

pub use gateway::{
    error_message, parse_control, serve, step_messages, ChannelTransport, Control, Inbound, ServeEnd,
    ServeOptions, Transport, SCHEMA_VERSION,
};
pub use persist::{replay, write_output, ReplayOutput, WriteOptions};
pub use session::{
    run_session, BlipEntry, CompositeEntry, CompositeKind, ControlLogEntry, Fuser, Session, SessionOutput,
    StepEvents, SubFrameEntry,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionMode {
    Manual,
    #[default]
    Motion,
    Wavelet,
    /// Plain uniform frames with no fovea, no blips and no accumulation.
    UniformBaseline,
}

impl AcquisitionMode {
    pub fn guidance(self) -> Option<GuidanceMode> {
        match self {
            AcquisitionMode::Manual => Some(GuidanceMode::Manual),
            AcquisitionMode::Motion => Some(GuidanceMode::Motion),
            AcquisitionMode::Wavelet => Some(GuidanceMode::Wavelet),
            AcquisitionMode::UniformBaseline => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositeCadence {
    /// Linear-constraint composite at the end of every fixation.
    #[default]
    PerFixation,
    /// Weighted average only; linear constraints are left to the caller.
    OnDemand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridTemplate {
    pub width: usize,
    pub height: usize,
    pub cell_count: usize,
    pub half_extent: usize,
    pub cell_size: usize,
    pub blip_cells_per_side: usize,
    pub uniform_cells_per_side: usize,
    pub lattice_per_side: usize,
}

impl Default for GridTemplate {
    fn default() -> Self {
        GridTemplate {
            width: 128,
            height: 128,
            cell_count: 1024,
            half_extent: 16,
            cell_size: 2,
            blip_cells_per_side: 16,
            uniform_cells_per_side: 32,
            lattice_per_side: DEFAULT_LATTICE_SIDE,
        }
    }
}

impl GridTemplate {
    pub fn fovea(&self, center: (usize, usize)) -> FoveaDescriptor {
        FoveaDescriptor::new(center, self.half_extent, self.cell_size)
    }

    pub fn lattice(&self) -> Result<CandidateLattice> {
        CandidateLattice::new(self.width, self.height, self.half_extent, self.lattice_per_side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionPlan {
    pub mode: AcquisitionMode,
    /// Sub-frames per fixation, one per half-cell shift.
    pub fixation_length: usize,
    /// Fixations between blip-frames; 0 disables blips.
    pub blip_every: usize,
    pub p_jump: f64,
    pub max_exposure: f64,
    pub tau: f64,
    pub lambda: f64,
    pub weight_mode: WeightMode,
    pub cadence: CompositeCadence,
    pub solver: SolverOptions,
    /// The detector seed is replaced by one derived from `seed`.
    pub detector: DetectorConfig,
    pub grid: GridTemplate,
    pub start_center: (usize, usize),
    pub seed: u64,
}

impl Default for AcquisitionPlan {
    fn default() -> Self {
        AcquisitionPlan {
            mode: AcquisitionMode::default(),
            fixation_length: SHIFT_PATTERN.len(),
            blip_every: 1,
            p_jump: DEFAULT_P_JUMP,
            max_exposure: DEFAULT_MAX_EXPOSURE,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            weight_mode: WeightMode::default(),
            cadence: CompositeCadence::default(),
            solver: SolverOptions::default(),
            detector: DetectorConfig::default(),
            grid: GridTemplate::default(),
            start_center: (64, 64),
            seed: 0,
        }
    }
}

impl AcquisitionPlan {
    pub fn uniform_baseline() -> Self {
        AcquisitionPlan {
            mode: AcquisitionMode::UniformBaseline,
            blip_every: 0,
            ..Self::default()
        }
    }

    /// Rejects plans that cannot run, including building the largest grid
    /// the plan will ask for.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.detector.validate()?;
        if !(0.0..=1.0).contains(&self.p_jump) {
            return bad(format!("p_jump must lie in [0,1], got {}", self.p_jump));
        }
        if !(self.max_exposure > 0.0 && self.max_exposure.is_finite()) {
            return bad(format!("max_exposure must be positive, got {}", self.max_exposure));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be finite and >= 0, got {}", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        let g = &self.grid;
        if g.width == 0 || g.height == 0 {
            return bad("empty field".into());
        }
        let frame_cells = match self.mode {
            AcquisitionMode::UniformBaseline => g.uniform_cells_per_side.pow(2),
            _ => g.cell_count,
        };
        if self.max_exposure < self.detector.record_duration(frame_cells) {
            return bad(format!(
                "max_exposure {} s is shorter than one sub-frame",
                self.max_exposure
            ));
        }
        let divides = |cps: usize| cps > 0 && g.width % cps == 0 && g.height % cps == 0;
        if !divides(g.blip_cells_per_side) || !(g.blip_cells_per_side.pow(2)).is_power_of_two() {
            return bad(format!("{} blip cells per side do not tile the field", g.blip_cells_per_side));
        }
        if self.mode == AcquisitionMode::UniformBaseline {
            if self.fixation_length == 0 {
                return bad("fixation_length must be positive".into());
            }
            if !divides(g.uniform_cells_per_side) || !(g.uniform_cells_per_side.pow(2)).is_power_of_two() {
                return bad(format!(
                    "{} uniform cells per side do not tile the field",
                    g.uniform_cells_per_side
                ));
            }
            return Ok(());
        }
        if self.fixation_length != SHIFT_PATTERN.len() {
            return bad(format!(
                "fixation_length must equal the {} fovea shifts, got {}",
                SHIFT_PATTERN.len(),
                self.fixation_length
            ));
        }
        let lattice = g.lattice()?;
        let center = lattice.snap(self.start_center.0 as f64, self.start_center.1 as f64);
        let base = make_foveated_grid_at(g.width, g.height, g.cell_count, &[g.fovea(center)], self.seed, 0)?;
        for k in 1..SHIFT_PATTERN.len() {
            shift_fovea(&base, k)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Simulated seconds from the session start to the end of the last acquisition.
    pub duration: f64,
    pub subframes: usize,
    pub blips: usize,
    pub fixations: usize,
    pub subframe_rate: f64,
    /// Blip pattern time over total pattern time.
    pub blip_overhead: f64,
    pub fovea_update_rate: f64,
    pub patterns: u64,
    pub decision_counts: BTreeMap<String, usize>,
}

pub fn timing_report(output: &SessionOutput) -> TimingReport {
    let end = output
        .subframes
        .iter()
        .map(|s| s.record.t_end)
        .chain(output.blips.iter().map(|b| b.record.t_end))
        .fold(0.0, f64::max);
    let pattern_time = |r: &crate::detector::MeasurementRecord| r.pattern_time();
    let sub_time: f64 = output.subframes.iter().map(|s| pattern_time(&s.record)).sum();
    let blip_time: f64 = output.blips.iter().map(|b| pattern_time(&b.record)).sum();
    let patterns = output
        .subframes
        .iter()
        .map(|s| s.record.pattern_count as u64)
        .chain(output.blips.iter().map(|b| b.record.pattern_count as u64))
        .sum();
    let mut decision_counts = BTreeMap::new();
    for d in &output.decisions {
        let key = serde_json::to_value(d.reason)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        *decision_counts.entry(key).or_insert(0) += 1;
    }
    let rate = |n: usize| if end > 0.0 { n as f64 / end } else { 0.0 };
    let total = sub_time + blip_time;
    TimingReport {
        duration: end,
        subframes: output.subframes.len(),
        blips: output.blips.len(),
        fixations: output.fixations,
        subframe_rate: rate(output.subframes.len()),
        blip_overhead: if total > 0.0 { blip_time / total } else { 0.0 },
        fovea_update_rate: rate(output.decisions.len()),
        patterns,
        decision_counts,
    }
}

/// Resolves a scene argument: a builtin image name, `moving-sign`,
/// `moving-square`, a JSON scene script or an image file.
pub fn scene_from_spec(spec: &str, width: usize, height: usize, duration: f64) -> Result<DynamicScene> {
    match spec {
        "moving-sign" => return Ok(presets::moving_sign(width, height, duration)),
        "moving-square" => {
            let lattice = CandidateLattice::new(width, height, 16.min(width / 2), DEFAULT_LATTICE_SIDE)?;
            let row = lattice.ys[lattice.ys.len() * 5 / 8] as f64;
            return Ok(presets::moving_square(width, height, 16, 8.0, row, 24.0, duration));
        }
        _ => {}
    }
    if let Ok(image) = presets::builtin(spec, width, height) {
        return Ok(DynamicScene::from_static(image));
    }
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let script = SceneScript::load(path)?;
        let scene = script.build(path.parent().unwrap_or(Path::new(".")))?;
        if scene.width != width || scene.height != height {
            return Err(Error::Scene(format!(
                "scene is {}x{}, expected {width}x{height}",
                scene.width, scene.height
            )));
        }
        return Ok(scene);
    }
    Ok(DynamicScene::from_static(load_image(path, width, height)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_valid() {
        AcquisitionPlan::default().validate().unwrap();
        AcquisitionPlan::uniform_baseline().validate().unwrap();
    }

    #[test]
    fn infeasible_plans_are_rejected() {
        let mut p = AcquisitionPlan::default();
        p.grid.half_extent = 80;
        assert!(p.validate().is_err());

        let mut p = AcquisitionPlan::default();
        p.grid.half_extent = 32;
        assert!(p.validate().is_err(), "32x32 fovea cells leave no room for a periphery");

        let mut p = AcquisitionPlan::default();
        p.fixation_length = 3;
        assert!(p.validate().is_err());

        for edit in [
            |p: &mut AcquisitionPlan| p.p_jump = 1.5,
            |p: &mut AcquisitionPlan| p.max_exposure = 0.0,
            |p: &mut AcquisitionPlan| p.lambda = -1.0,
            |p: &mut AcquisitionPlan| p.tau = f64::NAN,
            |p: &mut AcquisitionPlan| p.grid.blip_cells_per_side = 12,
        ] {
            let mut p = AcquisitionPlan::default();
            edit(&mut p);
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn plan_json_fills_defaults() {
        let p: AcquisitionPlan = serde_json::from_str(r#"{"mode":"wavelet","seed":9}"#).unwrap();
        assert_eq!(p.mode, AcquisitionMode::Wavelet);
        assert_eq!(p.seed, 9);
        assert_eq!(p.fixation_length, 4);
        assert_eq!(p.grid, GridTemplate::default());
    }

    #[test]
    fn scene_names_resolve() {
        assert!(scene_from_spec("test-card", 64, 64, 1.0).unwrap().is_static());
        assert_eq!(scene_from_spec("moving-sign", 128, 128, 5.0).unwrap().sprites().len(), 1);
        assert_eq!(scene_from_spec("moving-square", 128, 128, 5.0).unwrap().sprites().len(), 1);
        assert!(scene_from_spec("/nonexistent/scene.png", 64, 64, 1.0).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, r#"{"width":32,"height":32,"background":{"fill":0.5}}"#).unwrap();
        let s = scene_from_spec(path.to_str().unwrap(), 32, 32, 1.0).unwrap();
        assert_eq!(s.background.data[0], 0.5);
        assert!(scene_from_spec(path.to_str().unwrap(), 64, 64, 1.0).is_err());
    }
}
