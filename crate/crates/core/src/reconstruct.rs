//! Reconstruction of uniform images, space-variant sub-frames and blip-frames.
//!
//! All reconstructions run in cell space: `c = (1/N)·H·b` gives the per-cell
//! sums of the scene, and dividing by cell area gives mean intensities, which
//! are then stretched onto the hr-pixel grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cellgrid::{make_uniform_grid, stretch, CellGrid};
use crate::detector::{MeasurementRecord, RecordKind};
use crate::hadamard::{fwht_in_place, HadamardBasis};
use crate::{Error, Field, Result};

/// One reconstructed space-variant acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubFrame {
    pub grid: Arc<CellGrid>,
    /// Per-cell sums of the scene, `c = (1/N)·Σ b_n h_n`.
    pub cell_sums: Vec<f64>,
    /// `A⁻¹·T·c`: constant on every cell.
    pub hr_image: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

impl SubFrame {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn image(&self) -> Field {
        Field {
            width: self.grid.width,
            height: self.grid.height,
            data: self.hr_image.clone(),
        }
    }

    /// Mean intensity of cell `n`.
    pub fn cell_mean(&self, n: usize) -> f64 {
        self.cell_sums[n] / self.grid.cell_area()[n] as f64
    }
}

/// Uniform low-resolution frame interlaced between fixations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipFrame {
    pub image: Field,
    pub t_start: f64,
    pub t_end: f64,
}

/// Per-cell sums from coefficients via the fast transform.
pub fn cell_sums(coefficients: &[f64], basis: &HadamardBasis) -> Result<Vec<f64>> {
    let n = basis.order();
    if coefficients.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: coefficients.len(),
        });
    }
    let mut c = coefficients.to_vec();
    fwht_in_place(&mut c)?;
    let inv = 1.0 / n as f64;
    c.iter_mut().for_each(|v| *v *= inv);
    Ok(c)
}

pub fn reconstruct_subframe(record: &MeasurementRecord, basis: &HadamardBasis) -> Result<SubFrame> {
    if record.grid.cell_count != basis.order() {
        return Err(Error::LengthMismatch {
            expected: record.grid.cell_count,
            actual: basis.order(),
        });
    }
    let sums = cell_sums(&record.coefficients, basis)?;
    let hr_image = stretch(&record.grid).expand_per_area(&sums)?;
    Ok(SubFrame {
        grid: record.grid.clone(),
        cell_sums: sums,
        hr_image,
        t_start: record.t_start,
        t_end: record.t_end,
    })
}

/// Side length (in cells) of a regular uniform grid, if `grid` is one.
pub fn uniform_cells_per_side(grid: &CellGrid) -> Option<usize> {
    let side = (grid.cell_count as f64).sqrt().round() as usize;
    if side * side != grid.cell_count {
        return None;
    }
    let reference = make_uniform_grid(grid.width, grid.height, side).ok()?;
    (reference.assignment == grid.assignment).then_some(side)
}

/// Uniform-grid reconstruction returned at cell resolution, in mean-intensity units.
pub fn reconstruct_uniform(record: &MeasurementRecord, basis: &HadamardBasis) -> Result<Field> {
    let side = uniform_cells_per_side(&record.grid).ok_or_else(|| {
        Error::InvalidGrid("record was not acquired on a uniform grid".into())
    })?;
    if basis.order() != record.grid.cell_count {
        return Err(Error::LengthMismatch {
            expected: record.grid.cell_count,
            actual: basis.order(),
        });
    }
    let mut sums = cell_sums(&record.coefficients, basis)?;
    let area = record.grid.cell_area()[0] as f64;
    sums.iter_mut().for_each(|v| *v /= area);
    Field::new(side, side, sums)
}

pub fn reconstruct_blip(record: &MeasurementRecord, basis: &HadamardBasis) -> Result<BlipFrame> {
    if record.kind != RecordKind::Blip {
        return Err(Error::InvalidConfig("record is not a blip-frame".into()));
    }
    Ok(BlipFrame {
        image: reconstruct_uniform(record, basis)?,
        t_start: record.t_start,
        t_end: record.t_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellgrid::{make_foveated_grid, FoveaDescriptor};
    use crate::detector::{acquire, acquire_blip, DetectorConfig};
    use crate::hadamard::build_basis;
    use crate::scene::DynamicScene;
    use rand::{Rng, SeedableRng};

    fn random_field(w: usize, h: usize, seed: u64) -> Field {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(w, h, |_, _| rng.random_range(0.0..1.0))
    }

    /// Brute-force A⁻¹·T·Tᵀ·o from the assignment.
    fn cell_mean_oracle(grid: &CellGrid, o: &[f64]) -> Vec<f64> {
        (0..o.len())
            .map(|m| {
                let c = grid.assignment[m];
                let members: Vec<usize> = (0..o.len()).filter(|&j| grid.assignment[j] == c).collect();
                members.iter().map(|&j| o[j]).sum::<f64>() / members.len() as f64
            })
            .collect()
    }

    #[test]
    fn uniform_recovers_critically_sampled_scene() {
        let scene = random_field(32, 32, 11);
        let grid = Arc::new(make_uniform_grid(32, 32, 32).unwrap());
        let basis = build_basis(1024).unwrap();
        let rec = acquire(
            &DynamicScene::from_static(scene.clone()),
            grid,
            &basis,
            &DetectorConfig::default(),
            0.0,
        )
        .unwrap();
        let img = reconstruct_uniform(&rec, &basis).unwrap();
        assert_eq!((img.width, img.height), (32, 32));
        for (a, b) in img.data.iter().zip(&scene.data) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn uniform_constant_scene_returns_constant() {
        let grid = Arc::new(make_uniform_grid(128, 128, 32).unwrap());
        let basis = build_basis(1024).unwrap();
        let rec = acquire(
            &DynamicScene::from_static(Field::filled(128, 128, 0.4)),
            grid,
            &basis,
            &DetectorConfig::default(),
            0.0,
        )
        .unwrap();
        let img = reconstruct_uniform(&rec, &basis).unwrap();
        assert!(img.data.iter().all(|&v| (v - 0.4).abs() < 1e-12));
        assert!(reconstruct_uniform(&rec, &build_basis(512).unwrap()).is_err());
    }

    #[test]
    fn subframe_equals_cell_means() {
        // 8x8 field, foveated grid with 2x2 fovea cells and a 16-cell total.
        let scene = random_field(8, 8, 3);
        let grid = Arc::new(
            make_foveated_grid(8, 8, 16, &[FoveaDescriptor::new((4, 4), 2, 2)], 0.2, (0, 0), 1)
                .unwrap(),
        );
        let basis = build_basis(16).unwrap();
        let rec = acquire(
            &DynamicScene::from_static(scene.clone()),
            grid.clone(),
            &basis,
            &DetectorConfig::default(),
            0.0,
        )
        .unwrap();
        let sf = reconstruct_subframe(&rec, &basis).unwrap();
        let oracle = cell_mean_oracle(&grid, &scene.data);
        for (a, b) in sf.hr_image.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (m, &c) in grid.assignment.iter().enumerate() {
            assert_eq!(sf.hr_image[m], sf.cell_mean(c as usize));
        }
    }

    #[test]
    fn cell_constant_scene_is_recovered_exactly() {
        let grid = Arc::new(make_uniform_grid(16, 16, 4).unwrap());
        let basis = build_basis(16).unwrap();
        let values: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let scene = Field::new(16, 16, stretch(&grid).expand(&values).unwrap()).unwrap();
        let rec = acquire(
            &DynamicScene::from_static(scene.clone()),
            grid,
            &basis,
            &DetectorConfig::default(),
            0.0,
        )
        .unwrap();
        let sf = reconstruct_subframe(&rec, &basis).unwrap();
        for (a, b) in sf.hr_image.iter().zip(&scene.data) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn blip_equals_block_means() {
        let scene = random_field(128, 128, 8);
        let grid = Arc::new(make_uniform_grid(128, 128, 16).unwrap());
        let basis = build_basis(256).unwrap();
        let rec = acquire_blip(
            &DynamicScene::from_static(scene.clone()),
            grid,
            &basis,
            &DetectorConfig::default(),
            0.0,
        )
        .unwrap();
        let blip = reconstruct_blip(&rec, &basis).unwrap();
        for by in 0..16 {
            for bx in 0..16 {
                let mut s = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        s += scene.get(bx * 8 + x, by * 8 + y);
                    }
                }
                assert!((blip.image.get(bx, by) - s / 64.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_uniform_record_rejected_by_uniform_path() {
        let grid = Arc::new(
            make_foveated_grid(8, 8, 16, &[FoveaDescriptor::new((4, 4), 2, 2)], 0.0, (0, 0), 1)
                .unwrap(),
        );
        let basis = build_basis(16).unwrap();
        let rec = acquire(
            &DynamicScene::from_static(Field::filled(8, 8, 0.5)),
            grid,
            &basis,
            &DetectorConfig::default(),
            0.0,
        )
        .unwrap();
        assert!(reconstruct_uniform(&rec, &basis).is_err());
        assert!(reconstruct_blip(&rec, &basis).is_err());
        assert!(reconstruct_subframe(&rec, &build_basis(8).unwrap()).is_err());
    }
    fn stretched_mask(grid: &CellGrid, basis: &HadamardBasis, n: usize) -> Vec<f64> {
        let row: Vec<f64> = basis.row(n).iter().map(|&v| v as f64).collect();
        stretch(grid).expand(&row).unwrap()
    }

    fn default_foveated() -> CellGrid {
        make_foveated_grid(128, 128, 1024, &[FoveaDescriptor::new((64, 64), 16, 2)], 0.7, (1, -1), 3)
            .unwrap()
    }

    fn biorthogonal_product(grid: &CellGrid, sn: &[f64], sm: &[f64]) -> f64 {
        sn.iter()
            .zip(sm)
            .enumerate()
            .map(|(m, (a, b))| a * b / grid.area_at(m) as f64)
            .sum()
    }

    #[test]
    fn stretched_masks_are_biorthogonal_exhaustively_at_64() {
        let grid = make_foveated_grid(32, 32, 64, &[FoveaDescriptor::new((16, 16), 4, 2)], 1.1, (0, 1), 9)
            .unwrap();
        let basis = build_basis(64).unwrap();
        let masks: Vec<Vec<f64>> = (0..64).map(|n| stretched_mask(&grid, &basis, n)).collect();
        for n in 0..64 {
            for m in 0..64 {
                let expected = if n == m { 64.0 } else { 0.0 };
                let got = biorthogonal_product(&grid, &masks[n], &masks[m]);
                assert!((got - expected).abs() <= 1e-9, "({n},{m}) -> {got}");
            }
        }
    }

    #[test]
    fn stretched_masks_are_biorthogonal_on_sampled_pairs() {
        let grid = default_foveated();
        let basis = build_basis(1024).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for k in 0..200 {
            let n = rng.random_range(0..1024);
            let m = if k % 4 == 0 { n } else { rng.random_range(0..1024) };
            let got = biorthogonal_product(
                &grid,
                &stretched_mask(&grid, &basis, n),
                &stretched_mask(&grid, &basis, m),
            );
            let expected = if n == m { 1024.0 } else { 0.0 };
            assert!((got - expected).abs() <= 1e-9);
        }
    }

    #[test]
    fn residual_is_orthogonal_to_every_stretched_mask() {
        let grid = make_foveated_grid(16, 16, 64, &[FoveaDescriptor::new((8, 8), 4, 2)], 0.3, (0, 0), 2)
            .unwrap();
        let basis = build_basis(64).unwrap();
        let scene = random_field(16, 16, 4);
        let proj = stretch(&grid).project(&scene.data).unwrap();
        let eps: Vec<f64> = scene.data.iter().zip(&proj).map(|(a, b)| a - b).collect();
        for n in 0..64 {
            let s = stretched_mask(&grid, &basis, n);
            let dot: f64 = s.iter().zip(&eps).map(|(a, b)| a * b).sum();
            assert!(dot.abs() <= 1e-9);
        }
    }

    #[test]
    fn cell_space_matches_direct_hr_space_sum() {
        let grid = Arc::new(
            make_foveated_grid(16, 16, 32, &[FoveaDescriptor::new((6, 9), 3, 2)], 2.0, (1, 1), 6)
                .unwrap(),
        );
        let basis = build_basis(32).unwrap();
        let scene = random_field(16, 16, 10);
        let rec = acquire(
            &DynamicScene::from_static(scene),
            grid.clone(),
            &basis,
            &DetectorConfig::default(),
            0.0,
        )
        .unwrap();
        let fast = reconstruct_subframe(&rec, &basis).unwrap();
        let mut direct = vec![0.0; 256];
        for n in 0..32 {
            let s = stretched_mask(&grid, &basis, n);
            for (d, v) in direct.iter_mut().zip(&s) {
                *d += rec.coefficients[n] * v;
            }
        }
        for (m, d) in direct.iter_mut().enumerate() {
            *d /= 32.0 * grid.area_at(m) as f64;
        }
        for (a, b) in fast.hr_image.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn cell_noise_variance_scales_with_inverse_area_squared() {
        let grid = Arc::new(
            make_foveated_grid(16, 16, 16, &[FoveaDescriptor::new((8, 8), 2, 2)], 0.0, (0, 0), 5)
                .unwrap(),
        );
        let areas = grid.cell_area().to_vec();
        assert!(areas.iter().max() > areas.iter().min());
        let basis = build_basis(16).unwrap();
        let scene = DynamicScene::from_static(Field::filled(16, 16, 0.5));
        let clean = reconstruct_subframe(
            &acquire(&scene, grid.clone(), &basis, &DetectorConfig::default(), 0.0).unwrap(),
            &basis,
        )
        .unwrap();
        let cfg = DetectorConfig {
            noise_sigma: 0.01,
            seed: 17,
            ..DetectorConfig::default()
        };
        let mut det = crate::detector::Detector::new(cfg).unwrap();
        let trials = 10_000;
        let mut sq = vec![0.0; 16];
        for _ in 0..trials {
            let sf = reconstruct_subframe(&det.acquire(&scene, grid.clone(), &basis).unwrap(), &basis)
                .unwrap();
            for n in 0..16 {
                sq[n] += (sf.cell_mean(n) - clean.cell_mean(n)).powi(2);
            }
        }
        // var(cell mean)·area² is the same for every cell.
        let scaled: Vec<f64> = (0..16)
            .map(|n| sq[n] / trials as f64 * (areas[n] as f64).powi(2))
            .collect();
        let mean = scaled.iter().sum::<f64>() / 16.0;
        for s in scaled {
            assert!((s / mean - 1.0).abs() < 0.1, "{s} vs {mean}");
        }
    }
}
