use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::session::{BlipEntry, ControlLogEntry, Fuser, SessionOutput, SubFrameEntry};
use super::{timing_report, AcquisitionMode, AcquisitionPlan, CompositeCadence};
use crate::detector::{MeasurementRecord, RecordKind};
use crate::guidance::{BinaryMap, FoveaDecision};
use crate::hadamard::build_basis;
use crate::io::{write_bytes, write_exposure_png, write_json, write_pgm};
use crate::reconstruct::{reconstruct_blip, reconstruct_subframe};
use crate::{Error, Field, Result};

pub type ReplayOutput = SessionOutput;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteOptions {
    /// Also write RGB composites with exposure in the red plane.
    pub exposure_png: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    fixations: usize,
    subframes: usize,
    blips: usize,
    composites: usize,
}

fn subframe_record_path(i: usize) -> String {
    format!("records/subframe-{i:04}.json")
}

fn blip_record_path(i: usize) -> String {
    format!("records/blip-{i:04}.json")
}

fn binary_field(map: &BinaryMap) -> Field {
    Field {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    }
}

/// Writes a session to `dir`:
///
/// ```text
/// plan.json  manifest.json  timing.json  decisions.jsonl  controls.jsonl
/// records/{subframe,blip}-NNNN.json
/// subframes/NNNN.pgm  NNNN.json  NNNN-grid.pgm
/// blips/NNNN.pgm  NNNN.json  [NNNN-change.pgm]
/// composites/NNNN.pgm  NNNN.json  NNNN-exposure.pgm  [NNNN-exposure.png]
/// ```
pub fn write_output(output: &SessionOutput, dir: &Path, options: &WriteOptions) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("plan.json"), &output.plan)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            schema: super::SCHEMA_VERSION,
            fixations: output.fixations,
            subframes: output.subframes.len(),
            blips: output.blips.len(),
            composites: output.composites.len(),
        },
    )?;
    write_json(&dir.join("timing.json"), &output.timing)?;
    let decisions: String = output.decisions.iter().map(|d| d.to_log_line() + "\n").collect();
    write_bytes(&dir.join("decisions.jsonl"), decisions.as_bytes())?;
    let mut controls = String::new();
    for c in &output.controls {
        controls += &serde_json::to_string(c)?;
        controls.push('\n');
    }
    write_bytes(&dir.join("controls.jsonl"), controls.as_bytes())?;

    for s in &output.subframes {
        let record = subframe_record_path(s.index);
        write_bytes(&dir.join(&record), s.record.to_json()?.as_bytes())?;
        let base = dir.join(format!("subframes/{:04}", s.index));
        write_pgm(&base.with_extension("pgm"), &s.frame.image())?;
        let grid = &s.frame.grid;
        let boundary = Field {
            width: grid.width,
            height: grid.height,
            data: grid.boundary_mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        };
        write_pgm(&dir.join(format!("subframes/{:04}-grid.pgm", s.index)), &boundary)?;
        write_json(
            &base.with_extension("json"),
            &json!({
                "index": s.index,
                "fixation": s.fixation,
                "shift_index": s.shift_index,
                "center": s.center,
                "t_start": s.record.t_start,
                "t_end": s.record.t_end,
                "cell_count": grid.cell_count,
                "generation": grid.generation,
                "record": record,
            }),
        )?;
    }

    for b in &output.blips {
        let record = blip_record_path(b.index);
        write_bytes(&dir.join(&record), b.record.to_json()?.as_bytes())?;
        let base = dir.join(format!("blips/{:04}", b.index));
        write_pgm(&base.with_extension("pgm"), &b.frame.image)?;
        if let Some(change) = &b.change {
            write_pgm(&dir.join(format!("blips/{:04}-change.pgm", b.index)), &binary_field(change))?;
        }
        write_json(
            &base.with_extension("json"),
            &json!({
                "index": b.index,
                "fixation": b.fixation,
                "t_start": b.record.t_start,
                "t_end": b.record.t_end,
                "changed_pixels": b.change.as_ref().map(BinaryMap::count),
                "record": record,
            }),
        )?;
    }

    let max_exposure = output.plan.max_exposure;
    for c in &output.composites {
        let base = dir.join(format!("composites/{:04}", c.index));
        let image = c.composite.image();
        let exposure = c.composite.exposure();
        write_pgm(&base.with_extension("pgm"), &image)?;
        let scaled = Field {
            data: exposure.data.iter().map(|e| e / max_exposure).collect(),
            ..exposure.clone()
        };
        write_pgm(&dir.join(format!("composites/{:04}-exposure.pgm", c.index)), &scaled)?;
        if options.exposure_png {
            write_exposure_png(
                &dir.join(format!("composites/{:04}-exposure.png", c.index)),
                &image,
                &exposure,
                max_exposure,
            )?;
        }
        write_json(
            &base.with_extension("json"),
            &json!({
                "index": c.index,
                "kind": c.kind,
                "fixation": c.fixation,
                "t": c.t,
                "frames": c.frames,
                "max_contributors": c.composite.contributing_frames.iter().max(),
                "max_exposure_span": exposure.data.iter().copied().fold(0.0, f64::max),
                "solve": c.composite.solve,
            }),
        )?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn read_record(path: &Path, kind: RecordKind) -> Result<MeasurementRecord> {
    let record = MeasurementRecord::from_json(&read_text(path)?)?;
    if record.kind != kind {
        return Err(Error::InvalidConfig(format!("{} holds the wrong record kind", path.display())));
    }
    Ok(record)
}

/// Rebuilds a session from the measurement records in `dir`: every sub-frame,
/// blip-frame and composite is recomputed; decisions and control changes are
/// read back from their logs.
pub fn replay(dir: &Path) -> Result<ReplayOutput> {
    let plan: AcquisitionPlan = read_json(&dir.join("plan.json"))?;
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.schema != super::SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!("unsupported output schema {}", manifest.schema)));
    }
    let decisions = read_text(&dir.join("decisions.jsonl"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(FoveaDecision::from_log_line)
        .collect::<Result<Vec<_>>>()?;
    let controls = read_text(&dir.join("controls.jsonl"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<ControlLogEntry>(l).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;

    let mut subframe_meta = Vec::with_capacity(manifest.subframes);
    for i in 0..manifest.subframes {
        let meta: serde_json::Value = read_json(&dir.join(format!("subframes/{i:04}.json")))?;
        let record = read_record(&dir.join(subframe_record_path(i)), RecordKind::Subframe)?;
        subframe_meta.push((meta, record));
    }
    let mut blip_records = Vec::with_capacity(manifest.blips);
    for i in 0..manifest.blips {
        let meta: serde_json::Value = read_json(&dir.join(format!("blips/{i:04}.json")))?;
        let record = read_record(&dir.join(blip_record_path(i)), RecordKind::Blip)?;
        blip_records.push((field_usize(&meta, "fixation")?, record));
    }

    let mut out = SessionOutput {
        plan: plan.clone(),
        fixations: manifest.fixations,
        subframes: Vec::new(),
        blips: Vec::new(),
        decisions,
        composites: Vec::new(),
        controls: controls.clone(),
        timing: Default::default(),
    };
    let mut fuser = Fuser::new(&plan);
    let mut subframes = subframe_meta.into_iter().peekable();
    let mut blips = blip_records.into_iter().peekable();
    for fixation in 0..manifest.fixations {
        for c in controls.iter().filter(|c| c.fixation == fixation) {
            if let Some(l) = c.lambda {
                fuser.set_lambda(l)?;
            }
            if let Some(t) = c.tau {
                fuser.set_tau(t)?;
            }
        }
        while let Some((_, record)) = blips.next_if(|(f, _)| *f == fixation) {
            let basis = build_basis(record.grid.cell_count)?;
            let frame = reconstruct_blip(&record, &basis)?;
            let change = fuser.on_blip(&frame)?;
            out.blips.push(BlipEntry {
                index: out.blips.len(),
                fixation,
                record,
                frame,
                change,
            });
        }
        while let Some((meta, record)) = subframes.next_if(|(m, _)| field_usize(m, "fixation").ok() == Some(fixation)) {
            let basis = build_basis(record.grid.cell_count)?;
            let frame = reconstruct_subframe(&record, &basis)?;
            let index = out.subframes.len();
            out.composites.push(fuser.on_subframe(index, fixation, &frame)?);
            out.subframes.push(SubFrameEntry {
                index,
                fixation,
                shift_index: field_usize(&meta, "shift_index")?,
                center: serde_json::from_value(meta["center"].clone())?,
                record,
                frame,
            });
        }
        if plan.cadence == CompositeCadence::PerFixation && plan.mode != AcquisitionMode::UniformBaseline {
            if let Some(lc) = fuser.linear_composite(fixation)? {
                out.composites.push(lc);
            }
        }
    }
    if subframes.next().is_some() || blips.next().is_some() {
        return Err(Error::InvalidConfig("records reference fixations beyond the manifest".into()));
    }
    out.timing = timing_report(&out);
    Ok(out)
}

fn field_usize(meta: &serde_json::Value, key: &str) -> Result<usize> {
    meta[key]
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::InvalidConfig(format!("sidecar field {key:?} is missing")))
}
