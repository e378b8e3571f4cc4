//! Simulated single-pixel detector.
//!
//! Each Hadamard row is stretched onto the grid (`s_n = T·h_n`) and shown as a
//! positive {1,0} mask followed by its complement. The scene is sampled at
//! every pattern tick, the transmitted intensity is integrated, noise is
//! added per reading, and `b_n = i_pos - i_neg` is recorded.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::cellgrid::CellGrid;
use crate::hadamard::{differential_decode, HadamardBasis};
use crate::scene::DynamicScene;
use crate::{Error, Result};

pub const DEFAULT_MASK_RATE: f64 = 2.0e4;

/// Dead time per pattern pair so that a 1024-cell sub-frame takes 0.125 s at
/// the default mask rate (and a 256-cell blip-frame 31.25 ms).
pub const DEFAULT_PAIR_OVERHEAD: f64 = 0.125 / 1024.0 - 2.0 / DEFAULT_MASK_RATE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Patterns per second.
    pub mask_rate: f64,
    /// Seconds of dead time added after every positive/negative pair.
    pub pair_overhead: f64,
    /// Additive Gaussian std, as a fraction of the full-scale reading.
    pub noise_sigma: f64,
    pub shot_noise: bool,
    /// Photons collected for a full-scale reading when shot noise is on.
    pub photon_budget: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            mask_rate: DEFAULT_MASK_RATE,
            pair_overhead: DEFAULT_PAIR_OVERHEAD,
            noise_sigma: 0.0,
            shot_noise: false,
            photon_budget: 1.0e7,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate.is_finite()) {
            return Err(Error::InvalidConfig("mask_rate must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.pair_overhead >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_sigma and pair_overhead must be non-negative".into(),
            ));
        }
        if self.shot_noise && !(self.photon_budget > 0.0) {
            return Err(Error::InvalidConfig("photon_budget must be positive".into()));
        }
        Ok(())
    }

    /// Time from one positive pattern to the next.
    pub fn pair_period(&self) -> f64 {
        2.0 / self.mask_rate + self.pair_overhead
    }

    /// Duration of a record with `cells` pattern pairs.
    pub fn record_duration(&self, cells: usize) -> f64 {
        cells as f64 * self.pair_period()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Subframe,
    Blip,
}

/// Correlation coefficients of one acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub kind: RecordKind,
    pub grid: Arc<CellGrid>,
    pub coefficients: Vec<f64>,
    pub t_start: f64,
    /// `t_start + pattern_count / mask_rate + (pattern_count / 2) · pair_overhead`.
    pub t_end: f64,
    pub pattern_count: usize,
    pub mask_rate: f64,
}

impl MeasurementRecord {
    /// Time spent displaying patterns, excluding inter-pair dead time.
    pub fn pattern_time(&self) -> f64 {
        self.pattern_count as f64 / self.mask_rate
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: MeasurementRecord = serde_json::from_str(text)?;
        // Re-validate the grid: areas are not serialised.
        let grid = CellGrid::from_json(&serde_json::to_string(&*rec.grid)?)?;
        if rec.coefficients.len() != grid.cell_count {
            return Err(Error::LengthMismatch {
                expected: grid.cell_count,
                actual: rec.coefficients.len(),
            });
        }
        Ok(MeasurementRecord {
            grid: Arc::new(grid),
            ..rec
        })
    }
}

/// A detector session: owns the mask clock and the noise stream.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    clock: f64,
    rng: ChaCha8Rng,
    patterns_shown: u64,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Detector {
            config,
            clock: 0.0,
            rng,
            patterns_shown: 0,
        })
    }

    pub fn starting_at(config: DetectorConfig, t_start: f64) -> Result<Self> {
        let mut d = Detector::new(config)?;
        d.clock = t_start;
        Ok(d)
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn patterns_shown(&self) -> u64 {
        self.patterns_shown
    }

    pub fn set_noise_sigma(&mut self, sigma: f64) {
        self.config.noise_sigma = sigma.max(0.0);
    }

    pub fn acquire(
        &mut self,
        scene: &DynamicScene,
        grid: Arc<CellGrid>,
        basis: &HadamardBasis,
    ) -> Result<MeasurementRecord> {
        self.acquire_kind(scene, grid, basis, RecordKind::Subframe)
    }

    pub fn acquire_blip(
        &mut self,
        scene: &DynamicScene,
        blip_grid: Arc<CellGrid>,
        basis: &HadamardBasis,
    ) -> Result<MeasurementRecord> {
        self.acquire_kind(scene, blip_grid, basis, RecordKind::Blip)
    }

    fn acquire_kind(
        &mut self,
        scene: &DynamicScene,
        grid: Arc<CellGrid>,
        basis: &HadamardBasis,
        kind: RecordKind,
    ) -> Result<MeasurementRecord> {
        let n = grid.cell_count;
        if basis.order() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: basis.order(),
            });
        }
        if scene.width != grid.width || scene.height != grid.height {
            return Err(Error::InvalidConfig(format!(
                "scene is {}x{} but grid is {}x{}",
                scene.width, scene.height, grid.width, grid.height
            )));
        }
        let full_scale = grid.pixel_count() as f64;
        let gaussian = Normal::new(0.0, self.config.noise_sigma * full_scale)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let t_start = self.clock;
        let period = self.config.pair_period();
        let tick = 1.0 / self.config.mask_rate;

        let mut frame = vec![0.0; grid.pixel_count()];
        let mut cell_sums = vec![0.0; n];
        let mut key = None;
        let mut coefficients = Vec::with_capacity(n);
        for row in 0..n {
            let mut readings = [0.0f64; 2];
            for (phase, reading) in readings.iter_mut().enumerate() {
                let t = t_start + row as f64 * period + phase as f64 * tick;
                let k = scene.state_key(t);
                if key.as_ref() != Some(&k) {
                    scene.evaluate_into(t, &mut frame);
                    cell_sums.iter_mut().for_each(|s| *s = 0.0);
                    for (&c, &v) in grid.assignment.iter().zip(&frame) {
                        cell_sums[c as usize] += v;
                    }
                    key = Some(k);
                }
                let positive_phase = phase == 0;
                let mut intensity = 0.0;
                for (col, &s) in cell_sums.iter().enumerate() {
                    if basis.is_positive(row, col) == positive_phase {
                        intensity += s;
                    }
                }
                *reading = self.add_noise(intensity, full_scale, &gaussian);
            }
            coefficients.push(differential_decode(readings[0], readings[1]));
        }
        let pattern_count = 2 * n;
        self.patterns_shown += pattern_count as u64;
        let t_end = t_start + n as f64 * period;
        self.clock = t_end;
        Ok(MeasurementRecord {
            kind,
            grid,
            coefficients,
            t_start,
            t_end,
            pattern_count,
            mask_rate: self.config.mask_rate,
        })
    }

    fn add_noise(&mut self, intensity: f64, full_scale: f64, gaussian: &Normal<f64>) -> f64 {
        let mut value = intensity;
        if self.config.shot_noise {
            let mean = (intensity / full_scale * self.config.photon_budget).max(0.0);
            let photons = if mean > 0.0 {
                Poisson::new(mean)
                    .map(|p| p.sample(&mut self.rng))
                    .unwrap_or(mean)
            } else {
                0.0
            };
            value = photons * full_scale / self.config.photon_budget;
        }
        if self.config.noise_sigma > 0.0 {
            value += gaussian.sample(&mut self.rng);
        }
        value
    }
}

/// One-shot acquisition with a fresh detector session starting at `t_start`.
pub fn acquire(
    scene: &DynamicScene,
    grid: Arc<CellGrid>,
    basis: &HadamardBasis,
    config: &DetectorConfig,
    t_start: f64,
) -> Result<MeasurementRecord> {
    Detector::starting_at(config.clone(), t_start)?.acquire(scene, grid, basis)
}

pub fn acquire_blip(
    scene: &DynamicScene,
    blip_grid: Arc<CellGrid>,
    basis: &HadamardBasis,
    config: &DetectorConfig,
    t_start: f64,
) -> Result<MeasurementRecord> {
    Detector::starting_at(config.clone(), t_start)?.acquire_blip(scene, blip_grid, basis)
}
