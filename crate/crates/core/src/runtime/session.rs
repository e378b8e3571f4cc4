use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{timing_report, AcquisitionMode, AcquisitionPlan, CompositeCadence, TimingReport};
use crate::cellgrid::{make_foveated_grid_at, make_uniform_grid, shift_fovea, CellGrid};
use crate::detector::{Detector, MeasurementRecord};
use crate::fusion::{
    apply_motion_mask, linear_constraints, weighted_average_masked, CompositeImage, MotionMask, WeightMode,
};
use crate::guidance::{
    difference_map, BinaryMap, DifferenceMapStack, FoveaDecision, Guidance, GuidanceMode,
    DEFAULT_STACK_CAPACITY,
};
use crate::hadamard::{build_basis, HadamardBasis};
use crate::reconstruct::{reconstruct_blip, reconstruct_subframe, BlipFrame, SubFrame};
use crate::scene::DynamicScene;
use crate::solver::SolverOptions;
use crate::{Error, Field, Result};

const GRID_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const DETECTOR_SEED_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const GUIDANCE_STREAM: u64 = 0x6775;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubFrameEntry {
    pub index: usize,
    pub fixation: usize,
    pub shift_index: usize,
    /// Fovea centre, absent for uniform frames.
    pub center: Option<(usize, usize)>,
    pub record: MeasurementRecord,
    pub frame: SubFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipEntry {
    pub index: usize,
    pub fixation: usize,
    pub record: MeasurementRecord,
    pub frame: BlipFrame,
    /// Difference map against the previous blip-frame.
    pub change: Option<BinaryMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositeKind {
    WeightedAverage,
    LinearConstraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeEntry {
    pub index: usize,
    pub kind: CompositeKind,
    pub fixation: usize,
    /// End of the newest contributing sub-frame.
    pub t: f64,
    /// Sub-frame indices with at least one unflagged cell.
    pub frames: Vec<usize>,
    pub composite: CompositeImage,
}

/// A control change recorded so that replays can reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLogEntry {
    /// Applied before this fixation.
    pub fixation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<GuidanceMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutput {
    pub plan: AcquisitionPlan,
    pub fixations: usize,
    pub subframes: Vec<SubFrameEntry>,
    pub blips: Vec<BlipEntry>,
    pub decisions: Vec<FoveaDecision>,
    pub composites: Vec<CompositeEntry>,
    pub controls: Vec<ControlLogEntry>,
    pub timing: TimingReport,
}

impl SessionOutput {
    fn empty(plan: AcquisitionPlan) -> Self {
        let mut out = SessionOutput {
            plan,
            fixations: 0,
            subframes: Vec::new(),
            blips: Vec::new(),
            decisions: Vec::new(),
            composites: Vec::new(),
            controls: Vec::new(),
            timing: TimingReport::default(),
        };
        out.timing = timing_report(&out);
        out
    }

    pub fn composites_of(&self, kind: CompositeKind) -> impl Iterator<Item = &CompositeEntry> {
        self.composites.iter().filter(move |c| c.kind == kind)
    }
}

/// Indices into [`SessionOutput`] produced by one fixation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepEvents {
    pub blip: Option<usize>,
    pub decision: Option<usize>,
    pub subframes: Range<usize>,
    pub composites: Range<usize>,
}

/// Fusion state shared by live sessions and replays: the difference-map
/// stack, the exposure window and the composite counter.
#[derive(Debug, Clone)]
pub struct Fuser {
    pub lambda: f64,
    pub tau: f64,
    pub max_exposure: f64,
    pub weight_mode: WeightMode,
    pub solver: SolverOptions,
    refresh_each_frame: bool,
    stack: DifferenceMapStack,
    previous_blip: Option<Field>,
    window_indices: Vec<usize>,
    window: Vec<SubFrame>,
    mask: MotionMask,
    composites: usize,
}

impl Fuser {
    pub fn new(plan: &AcquisitionPlan) -> Self {
        let cps = plan.grid.blip_cells_per_side;
        Fuser {
            lambda: plan.lambda,
            tau: plan.tau,
            max_exposure: plan.max_exposure,
            weight_mode: plan.weight_mode,
            solver: plan.solver,
            refresh_each_frame: plan.mode == AcquisitionMode::UniformBaseline,
            stack: DifferenceMapStack::new(cps, cps, DEFAULT_STACK_CAPACITY),
            previous_blip: None,
            window_indices: Vec::new(),
            window: Vec::new(),
            mask: MotionMask { flags: Vec::new() },
            composites: 0,
        }
    }

    pub fn stack(&self) -> &DifferenceMapStack {
        &self.stack
    }

    /// Sub-frame indices currently inside the exposure window.
    pub fn window(&self) -> Vec<usize> {
        self.window_indices.clone()
    }

    /// Compares the blip with its predecessor. Changes are stamped with the
    /// blip's start, so every sub-frame begun before it loses the changed cells.
    pub fn on_blip(&mut self, blip: &BlipFrame) -> Result<Option<BinaryMap>> {
        let change = match &self.previous_blip {
            Some(prev) => {
                let map = difference_map(prev, &blip.image, self.tau)?;
                self.stack.push(map.clone(), blip.t_start)?;
                Some(map)
            }
            None => None,
        };
        self.previous_blip = Some(blip.image.clone());
        Ok(change)
    }

    /// Adds a sub-frame, expires what fell out of the window and returns the
    /// refreshed weighted-average composite.
    pub fn on_subframe(&mut self, index: usize, fixation: usize, frame: &SubFrame) -> Result<CompositeEntry> {
        if self.refresh_each_frame {
            self.window.clear();
            self.window_indices.clear();
        }
        self.window.push(frame.clone());
        self.window_indices.push(index);
        let mask = apply_motion_mask(&self.stack, &self.window, self.max_exposure)?;
        let keep: Vec<bool> = (0..self.window.len()).map(|k| !mask.frame_excluded(k)).collect();
        let mut kept = keep.iter();
        self.window.retain(|_| *kept.next().unwrap());
        let mut kept = keep.iter();
        self.window_indices.retain(|_| *kept.next().unwrap());
        self.mask = MotionMask {
            flags: mask
                .flags
                .into_iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(f, _)| f)
                .collect(),
        };
        let composite = weighted_average_masked(&self.window, self.weight_mode, Some(&self.mask))?;
        Ok(self.entry(CompositeKind::WeightedAverage, fixation, composite))
    }

    /// Linear-constraint composite over the current window.
    pub fn linear_composite(&mut self, fixation: usize) -> Result<Option<CompositeEntry>> {
        if self.window.is_empty() {
            return Ok(None);
        }
        let composite = linear_constraints(&self.window, Some(&self.mask), self.lambda, &self.solver)?;
        Ok(Some(self.entry(CompositeKind::LinearConstraints, fixation, composite)))
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be finite and >= 0, got {tau}")));
        }
        self.tau = tau;
        Ok(())
    }

    fn entry(&mut self, kind: CompositeKind, fixation: usize, composite: CompositeImage) -> CompositeEntry {
        let frames = self.window_indices.clone();
        let t = self.window.iter().map(|f| f.t_end).fold(f64::NEG_INFINITY, f64::max);
        let index = self.composites;
        self.composites += 1;
        CompositeEntry {
            index,
            kind,
            fixation,
            t,
            frames,
            composite,
        }
    }
}

/// One running acquisition: owns the detector clock, guidance and fusion state.
pub struct Session {
    plan: AcquisitionPlan,
    scene: DynamicScene,
    detector: Detector,
    guidance: Option<Guidance>,
    fuser: Fuser,
    basis: HadamardBasis,
    blip_basis: HadamardBasis,
    blip_grid: Arc<CellGrid>,
    uniform_grid: Option<Arc<CellGrid>>,
    pending_controls: ControlLogEntry,
    output: SessionOutput,
}

impl Session {
    pub fn new(plan: AcquisitionPlan, scene: DynamicScene) -> Result<Self> {
        plan.validate()?;
        let g = &plan.grid;
        if scene.width != g.width || scene.height != g.height {
            return Err(Error::InvalidConfig(format!(
                "scene is {}x{} but the plan expects {}x{}",
                scene.width, scene.height, g.width, g.height
            )));
        }
        let mut detector_config = plan.detector.clone();
        detector_config.seed = plan.seed ^ DETECTOR_SEED_SALT;
        let detector = Detector::new(detector_config)?;
        let blip_grid = Arc::new(make_uniform_grid(g.width, g.height, g.blip_cells_per_side)?);
        let blip_basis = build_basis(blip_grid.cell_count)?;
        let (guidance, uniform_grid, basis) = match plan.mode.guidance() {
            Some(mode) => {
                let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
                rng.set_stream(GUIDANCE_STREAM);
                let guidance = Guidance::new(
                    g.lattice()?,
                    mode,
                    plan.p_jump,
                    g.half_extent,
                    (g.width, g.height),
                    plan.start_center,
                    rng,
                )?;
                (Some(guidance), None, build_basis(g.cell_count)?)
            }
            None => {
                let grid = make_uniform_grid(g.width, g.height, g.uniform_cells_per_side)?;
                let basis = build_basis(grid.cell_count)?;
                (None, Some(Arc::new(grid)), basis)
            }
        };
        Ok(Session {
            fuser: Fuser::new(&plan),
            output: SessionOutput::empty(plan.clone()),
            plan,
            scene,
            detector,
            guidance,
            basis,
            blip_basis,
            blip_grid,
            uniform_grid,
            pending_controls: ControlLogEntry::at(0),
        })
    }

    pub fn plan(&self) -> &AcquisitionPlan {
        &self.plan
    }

    pub fn clock(&self) -> f64 {
        self.detector.clock()
    }

    pub fn output(&self) -> &SessionOutput {
        &self.output
    }

    pub fn fuser(&self) -> &Fuser {
        &self.fuser
    }

    pub fn guidance_mode(&self) -> Option<GuidanceMode> {
        self.guidance.as_ref().map(|g| g.mode)
    }

    /// Latches a click for the next decision point.
    pub fn click(&mut self, x: usize, y: usize) -> Result<()> {
        let (w, h) = (self.plan.grid.width, self.plan.grid.height);
        if x >= w || y >= h {
            return Err(Error::InvalidConfig(format!("click ({x},{y}) is outside the {w}x{h} field")));
        }
        self.guidance_mut()?.click(x, y);
        self.pending_controls.click = Some((x, y));
        Ok(())
    }

    /// Switches the guidance mode from the next fixation on.
    pub fn set_mode(&mut self, mode: GuidanceMode) -> Result<()> {
        self.guidance_mut()?.set_mode(mode);
        self.pending_controls.mode = Some(mode);
        Ok(())
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        self.fuser.set_lambda(lambda)?;
        self.pending_controls.lambda = Some(lambda);
        Ok(())
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        self.fuser.set_tau(tau)?;
        self.pending_controls.tau = Some(tau);
        Ok(())
    }

    /// Sets λ and/or τ together; nothing changes if either is invalid.
    pub fn set_fusion(&mut self, lambda: Option<f64>, tau: Option<f64>) -> Result<()> {
        for (name, v) in [("lambda", lambda), ("tau", tau)] {
            if let Some(v) = v.filter(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(l) = lambda {
            self.set_lambda(l)?;
        }
        if let Some(t) = tau {
            self.set_tau(t)?;
        }
        Ok(())
    }

    fn guidance_mut(&mut self) -> Result<&mut Guidance> {
        self.guidance
            .as_mut()
            .ok_or_else(|| Error::InvalidConfig("uniform-baseline sessions have no fovea to steer".into()))
    }

    /// Runs one fixation: blip, decision, shifted sub-frames, composites.
    pub fn step(&mut self) -> Result<StepEvents> {
        let fixation = self.output.fixations;
        let controls = std::mem::replace(&mut self.pending_controls, ControlLogEntry::at(fixation + 1));
        if !controls.is_empty() {
            self.output.controls.push(ControlLogEntry { fixation, ..controls });
        }
        let mut events = StepEvents {
            subframes: self.output.subframes.len()..self.output.subframes.len(),
            composites: self.output.composites.len()..self.output.composites.len(),
            ..StepEvents::default()
        };

        let mut change = None;
        if self.plan.blip_every > 0 && fixation % self.plan.blip_every == 0 {
            let record = self.detector.acquire_blip(&self.scene, self.blip_grid.clone(), &self.blip_basis)?;
            let frame = reconstruct_blip(&record, &self.blip_basis)?;
            change = self.fuser.on_blip(&frame)?;
            let index = self.output.blips.len();
            self.output.blips.push(BlipEntry {
                index,
                fixation,
                record,
                frame,
                change: change.clone(),
            });
            events.blip = Some(index);
        }

        let grids = match self.guidance.as_mut() {
            Some(guidance) => {
                let blip = self.output.blips.last().map(|b| &b.frame.image);
                let decision = guidance.decide(self.detector.clock(), blip, change.as_ref())?;
                events.decision = Some(self.output.decisions.len());
                self.output.decisions.push(decision);
                let g = &self.plan.grid;
                let generation = (fixation * self.plan.fixation_length) as u64;
                let base = make_foveated_grid_at(
                    g.width,
                    g.height,
                    g.cell_count,
                    &[g.fovea(decision.center)],
                    self.plan.seed ^ GRID_SEED_SALT,
                    generation,
                )?;
                let mut grids = vec![Arc::new(base)];
                for k in 1..self.plan.fixation_length {
                    let next = shift_fovea(grids.last().unwrap(), k)?;
                    grids.push(Arc::new(next));
                }
                grids.into_iter().map(|g| (Some(decision.center), g)).collect()
            }
            None => {
                let grid = self.uniform_grid.clone().expect("uniform grid exists without guidance");
                vec![(None, grid); self.plan.fixation_length]
            }
        };

        for (shift_index, (center, grid)) in grids.into_iter().enumerate() {
            let record = self.detector.acquire(&self.scene, grid, &self.basis)?;
            let frame = reconstruct_subframe(&record, &self.basis)?;
            let index = self.output.subframes.len();
            let composite = self.fuser.on_subframe(index, fixation, &frame)?;
            self.output.composites.push(composite);
            self.output.subframes.push(SubFrameEntry {
                index,
                fixation,
                shift_index: if center.is_some() { shift_index } else { 0 },
                center,
                record,
                frame,
            });
        }
        if self.plan.cadence == CompositeCadence::PerFixation && self.guidance.is_some() {
            if let Some(lc) = self.fuser.linear_composite(fixation)? {
                self.output.composites.push(lc);
            }
        }

        self.output.fixations += 1;
        events.subframes.end = self.output.subframes.len();
        events.composites.end = self.output.composites.len();
        Ok(events)
    }

    /// Steps whole fixations while the clock is below `duration`.
    pub fn run_until(&mut self, duration: f64) -> Result<()> {
        while self.clock() < duration {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> SessionOutput {
        self.output.timing = timing_report(&self.output);
        self.output
    }
}

impl ControlLogEntry {
    fn at(fixation: usize) -> Self {
        ControlLogEntry {
            fixation,
            lambda: None,
            tau: None,
            mode: None,
            click: None,
        }
    }

    fn is_empty(&self) -> bool {
        self.lambda.is_none() && self.tau.is_none() && self.mode.is_none() && self.click.is_none()
    }
}

/// Runs a plan against a scene for `duration` simulated seconds.
pub fn run_session(plan: &AcquisitionPlan, scene: &DynamicScene, duration: f64) -> Result<SessionOutput> {
    let mut session = Session::new(plan.clone(), scene.clone())?;
    session.run_until(duration)?;
    Ok(session.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::DecisionReason;
    use crate::scene::presets;

    fn quick_plan(mode: AcquisitionMode) -> AcquisitionPlan {
        AcquisitionPlan {
            mode,
            cadence: CompositeCadence::OnDemand,
            seed: 3,
            ..AcquisitionPlan::default()
        }
    }

    fn card() -> DynamicScene {
        DynamicScene::from_static(presets::test_card(128, 128))
    }

    #[test]
    fn zero_duration_gives_empty_output() {
        let out = run_session(&AcquisitionPlan::default(), &card(), 0.0).unwrap();
        assert_eq!(out.fixations, 0);
        assert!(out.subframes.is_empty() && out.blips.is_empty() && out.composites.is_empty());
        assert_eq!(out.timing.subframe_rate, 0.0);
        assert_eq!(out.timing.blip_overhead, 0.0);
    }

    #[test]
    fn fixation_structure_and_accounting() {
        let out = run_session(&quick_plan(AcquisitionMode::Wavelet), &card(), 1.2).unwrap();
        assert_eq!(out.fixations, 3);
        assert_eq!(out.subframes.len(), 12);
        assert_eq!(out.blips.len(), 3);
        assert_eq!(out.decisions.len(), 3);
        assert_eq!(out.timing.patterns, 2 * (1024 * 12 + 256 * 3));

        let mut times: Vec<(f64, f64)> = out
            .subframes
            .iter()
            .map(|s| (s.record.t_start, s.record.t_end))
            .chain(out.blips.iter().map(|b| (b.record.t_start, b.record.t_end)))
            .collect();
        times.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(times[0].0, 0.0);
        for w in times.windows(2) {
            assert!(w[0].0 < w[1].0);
            assert!((w[0].1 - w[1].0).abs() < 1e-12, "acquisitions are back to back");
        }

        for (k, s) in out.subframes.iter().enumerate() {
            assert_eq!(s.shift_index, k % 4);
            assert_eq!(s.center, Some(out.decisions[k / 4].center));
            let blip = &out.blips[k / 4];
            assert!(blip.record.t_end <= s.record.t_start);
        }
        // one weighted-average composite per sub-frame, referencing it
        assert_eq!(out.composites.len(), 12);
        for (k, c) in out.composites.iter().enumerate() {
            assert_eq!(c.kind, CompositeKind::WeightedAverage);
            assert_eq!(*c.frames.last().unwrap(), k);
            assert_eq!(c.t, out.subframes[k].record.t_end);
            assert!(c.frames.iter().all(|&f| f <= k));
        }
    }

    #[test]
    fn sessions_are_deterministic_and_seed_dependent() {
        let scene = presets::moving_sign(128, 128, 2.0);
        let plan = quick_plan(AcquisitionMode::Motion);
        let a = run_session(&plan, &scene, 1.5).unwrap();
        let b = run_session(&plan, &scene, 1.5).unwrap();
        assert_eq!(a, b);
        let c = run_session(&AcquisitionPlan { seed: 4, ..plan }, &scene, 1.5).unwrap();
        assert_ne!(a.subframes[0].frame.grid.assignment, c.subframes[0].frame.grid.assignment);
    }

    #[test]
    fn no_blips_means_no_overhead() {
        let plan = AcquisitionPlan {
            blip_every: 0,
            ..quick_plan(AcquisitionMode::Wavelet)
        };
        let out = run_session(&plan, &card(), 0.6).unwrap();
        assert!(out.blips.is_empty());
        assert_eq!(out.timing.blip_overhead, 0.0);
        assert!((out.timing.subframe_rate - 8.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_baseline_refreshes_every_frame() {
        let out = run_session(&AcquisitionPlan::uniform_baseline(), &card(), 1.0).unwrap();
        assert_eq!(out.subframes.len(), 8);
        assert!(out.blips.is_empty() && out.decisions.is_empty());
        for (s, c) in out.subframes.iter().zip(&out.composites) {
            assert_eq!(c.frames, vec![s.index]);
            assert_eq!(c.composite.hr_image, s.frame.hr_image);
            assert_eq!(s.frame.grid.cell_count, 1024);
            assert!(s.center.is_none());
        }
        assert!((out.timing.subframe_rate - 8.0).abs() < 1e-9);
    }

    #[test]
    fn click_and_mode_switch_apply_at_the_next_decision() {
        let mut s = Session::new(quick_plan(AcquisitionMode::Motion), card()).unwrap();
        s.step().unwrap();
        s.click(30, 40).unwrap();
        s.set_mode(GuidanceMode::Wavelet).unwrap();
        let ev = s.step().unwrap();
        let d = s.output().decisions[ev.decision.unwrap()];
        assert_eq!(d.reason, DecisionReason::Manual);
        let lattice = s.plan().grid.lattice().unwrap();
        assert_eq!(d.center, lattice.snap(30.0, 40.0));
        assert_eq!(s.guidance_mode(), Some(GuidanceMode::Wavelet));
        let out = s.finish();
        assert_eq!(out.controls.len(), 1);
        assert_eq!(out.controls[0].fixation, 1);
        assert_eq!(out.controls[0].click, Some((30, 40)));
    }

    #[test]
    fn controls_are_validated() {
        let mut s = Session::new(quick_plan(AcquisitionMode::Motion), card()).unwrap();
        assert!(s.click(500, 1).is_err());
        assert!(s.set_fusion(Some(0.5), Some(-1.0)).is_err());
        assert_eq!(s.fuser().lambda, AcquisitionPlan::default().lambda, "rejected sets change nothing");
        s.set_fusion(Some(0.5), Some(0.2)).unwrap();
        assert_eq!((s.fuser().lambda, s.fuser().tau), (0.5, 0.2));

        let mut b = Session::new(AcquisitionPlan::uniform_baseline(), card()).unwrap();
        assert!(b.click(3, 3).is_err());
        assert!(b.set_mode(GuidanceMode::Manual).is_err());
    }

    #[test]
    fn scene_size_must_match_the_plan() {
        let scene = DynamicScene::from_static(presets::test_card(64, 64));
        assert!(Session::new(AcquisitionPlan::default(), scene).is_err());
    }

    #[test]
    fn motion_flags_cells_that_changed_since_acquisition() {
        let scene = presets::moving_square(128, 128, 16, 8.0, 71.0, 24.0, 4.0);
        let plan = AcquisitionPlan {
            p_jump: 0.0,
            ..quick_plan(AcquisitionMode::Motion)
        };
        let mut s = Session::new(plan, scene).unwrap();
        for _ in 0..3 {
            s.step().unwrap();
        }
        let out = s.output();
        let changed = out.blips.iter().filter_map(|b| b.change.as_ref()).filter(|c| c.any()).count();
        assert!(changed >= 1);
        // sub-frames acquired before the latest change lose the changed cells
        let last = out.composites.last().unwrap();
        assert!(last.frames.len() >= 4);
        let counts = &last.composite.contributing_frames;
        assert!(counts.iter().any(|&n| (n as usize) < last.frames.len()));
    }
}
