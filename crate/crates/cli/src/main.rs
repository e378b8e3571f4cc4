mod server;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fovea_core::cellgrid::{make_foveated_grid_at, shift_fovea, CellGrid};
use fovea_core::fusion::{psf_probe, FusionMethod, WeightMode};
use fovea_core::io::{write_json, write_pgm};
use fovea_core::runtime::{
    replay, run_session, scene_from_spec, write_output, AcquisitionMode, AcquisitionPlan, CompositeCadence,
    SessionOutput, WriteOptions,
};
use fovea_core::scene::presets;
use fovea_core::solver::SolverOptions;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fovea", version, about = "Adaptive foveated single-pixel imaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an acquisition session and write its outputs.
    Run {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value_t = 15.0)]
        duration: f64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write composites as RGB PNGs with exposure in the red plane.
        #[arg(long)]
        exposure_png: bool,
    },
    /// Recompute sub-frames and composites from a run's measurement records.
    Replay {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fuse impulse-lattice measurements through a sequence of shifted grids.
    Psf {
        #[arg(long, default_value_t = 36)]
        frames: usize,
        #[arg(long, value_enum, default_value_t = PsfMethod::Both)]
        method: PsfMethod,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 8)]
        spacing: usize,
        #[arg(long, default_value_t = 4)]
        offset: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve live sessions over a WebSocket at /ws.
    Serve {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Wait for a resume or step message before acquiring.
        #[arg(long)]
        start_paused: bool,
        /// Simulated seconds per wall-clock second; 0 runs as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        pace: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Manual,
    Motion,
    Wavelet,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PsfMethod {
    Wa,
    Lc,
    Both,
}

#[derive(Args)]
struct PlanArgs {
    /// Builtin image, moving-sign, moving-square, a scene script (.json) or an image file.
    #[arg(long, default_value = "moving-sign")]
    scene: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Motion)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    p_jump: Option<f64>,
    #[arg(long)]
    max_exposure: Option<f64>,
    /// 32x32 uniform frames with no fovea and no accumulation.
    #[arg(long)]
    uniform_baseline: bool,
    /// Skip the per-fixation linear-constraint composite.
    #[arg(long)]
    no_linear_constraints: bool,
    /// Base plan as JSON; flags override its fields.
    #[arg(long)]
    plan: Option<PathBuf>,
}

impl PlanArgs {
    fn build(&self) -> Result<AcquisitionPlan> {
        let mut plan = match &self.plan {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => AcquisitionPlan::default(),
        };
        if self.uniform_baseline {
            plan = AcquisitionPlan {
                mode: AcquisitionMode::UniformBaseline,
                blip_every: 0,
                ..plan
            };
        } else {
            plan.mode = match self.mode {
                ModeArg::Manual => AcquisitionMode::Manual,
                ModeArg::Motion => AcquisitionMode::Motion,
                ModeArg::Wavelet => AcquisitionMode::Wavelet,
            };
        }
        plan.seed = self.seed;
        if let Some(v) = self.noise_sigma {
            plan.detector.noise_sigma = v;
        }
        if let Some(v) = self.lambda {
            plan.lambda = v;
        }
        if let Some(v) = self.tau {
            plan.tau = v;
        }
        if let Some(v) = self.p_jump {
            plan.p_jump = v;
        }
        if let Some(v) = self.max_exposure {
            plan.max_exposure = v;
        }
        if self.no_linear_constraints {
            plan.cadence = CompositeCadence::OnDemand;
        }
        plan.validate().context("invalid acquisition plan")?;
        Ok(plan)
    }
}

fn summary(out: &SessionOutput) -> String {
    let t = &out.timing;
    format!(
        "{} fixations, {} sub-frames, {} blip-frames, {} composites over {:.3} s\n\
         sub-frame rate {:.3} Hz, fovea update {:.3} Hz, blip overhead {:.2}%",
        out.fixations,
        t.subframes,
        t.blips,
        out.composites.len(),
        t.duration,
        t.subframe_rate,
        t.fovea_update_rate,
        100.0 * t.blip_overhead
    )
}

fn psf(frames: usize, method: PsfMethod, lambda: f64, spacing: usize, offset: usize, seed: u64, out_dir: &Path) -> Result<()> {
    if frames == 0 {
        bail!("--frames must be positive");
    }
    let plan = AcquisitionPlan::default();
    let g = &plan.grid;
    let fovea = [g.fovea(plan.start_center)];
    let mut grids: Vec<Arc<CellGrid>> = Vec::with_capacity(frames);
    while grids.len() < frames {
        let generation = grids.len() as u64;
        let base = make_foveated_grid_at(g.width, g.height, g.cell_count, &fovea, seed, generation)?;
        let mut prev = Arc::new(base);
        grids.push(prev.clone());
        for k in 1..4 {
            if grids.len() == frames {
                break;
            }
            prev = Arc::new(shift_fovea(&prev, k)?);
            grids.push(prev.clone());
        }
    }
    let truth = presets::impulse_grid(g.width, g.height, spacing, offset);
    let mut methods = Vec::new();
    if method != PsfMethod::Lc {
        methods.push(("wa", FusionMethod::WeightedAverage { mode: WeightMode::AreaInverse }));
    }
    if method != PsfMethod::Wa {
        methods.push((
            "lc",
            FusionMethod::LinearConstraints {
                lambda,
                options: SolverOptions::default(),
            },
        ));
    }
    let mut report = serde_json::Map::new();
    for (name, m) in methods {
        let c = psf_probe(&grids, &m, spacing, offset)?;
        let image = c.image();
        write_pgm(&out_dir.join(format!("psf-{name}.pgm")), &image)?;
        report.insert(
            name.into(),
            json!({ "rmse": image.rmse(&truth), "solve": c.solve }),
        );
        println!("{name}: rmse against the impulse lattice {:.4}", image.rmse(&truth));
    }
    write_pgm(&out_dir.join("psf-truth.pgm"), &truth)?;
    write_json(
        &out_dir.join("psf.json"),
        &json!({ "frames": frames, "lambda": lambda, "spacing": spacing, "offset": offset, "methods": report }),
    )?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            plan,
            duration,
            out_dir,
            exposure_png,
        } => {
            let p = plan.build()?;
            let scene = scene_from_spec(&plan.scene, p.grid.width, p.grid.height, duration)?;
            let out = run_session(&p, &scene, duration)?;
            write_output(&out, &out_dir, &WriteOptions { exposure_png })?;
            println!("{}", summary(&out));
        }
        Command::Replay { from, out_dir } => {
            let out = replay(&from)?;
            if let Some(dir) = out_dir {
                write_output(&out, &dir, &WriteOptions::default())?;
            }
            println!("{}", summary(&out));
        }
        Command::Psf {
            frames,
            method,
            lambda,
            spacing,
            offset,
            seed,
            out_dir,
        } => psf(frames, method, lambda, spacing, offset, seed, &out_dir)?,
        Command::Serve {
            plan,
            duration,
            host,
            port,
            start_paused,
            pace,
        } => {
            let p = plan.build()?;
            let scene = scene_from_spec(&plan.scene, p.grid.width, p.grid.height, duration)?;
            let config = server::ServerConfig {
                plan: p,
                scene,
                duration,
                start_paused,
                pace: (pace > 0.0).then_some(pace),
            };
            server::run(config, &host, port)?;
        }
    }
    Ok(())
}
