//! `terraplan` — command-line frontend for the planning pipeline:
//! terrain generation, map pre-processing, roadmap building, planning,
//! refinement, evaluation sweeps, and CSV export.

mod commands;
mod config;
mod error;
mod ioutil;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{
    cmd_build_roadmap, cmd_eval, cmd_export, cmd_gen_terrain, cmd_plan, cmd_preprocess, cmd_refine,
    BuildRoadmapArgs, EvalArgs, ExportArgs, GenTerrainArgs, Global, PlanArgs, RefineArgs, SeedMode,
};
use config::AppConfig;
use error::CliError;
use terraplan_core::terrain::TerrainFamily;

#[derive(Debug, Parser)]
#[command(name = "terraplan", version, about = "Motion planning for legged-wheeled robots on 2.5D elevation maps")]
struct Cli {
    /// TOML configuration file mirroring the module config types.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Replace wall-clock budgets with iteration budgets and omit
    /// timing fields, making reruns bit-identical.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a terrain map (with derived layers) and ground-truth sidecar.
    GenTerrain(GenTerrainCli),
    /// Derive smoothed/normal/traversability/sdf layers for an elevation map.
    Preprocess(PreprocessCli),
    /// Build per-limb roadmap files.
    BuildRoadmap(BuildRoadmapCli),
    /// Plan a whole-body path between two SE(2) poses.
    Plan(PlanCli),
    /// Refine a planned path into a constraint-feasible trajectory.
    Refine(RefineCli),
    /// Run a terrain sweep and write success/cost/time CSVs.
    Eval(EvalCli),
    /// Export maps and plans as plot-ready CSV files.
    Export(ExportCli),
}

#[derive(Debug, Args)]
struct GenTerrainCli {
    /// Terrain family: flat, rough, gap, step, or hole.
    #[arg(long)]
    family: TerrainFamily,
    /// Difficulty in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    difficulty: f64,
    /// Map extent in meters, x axis.
    #[arg(long)]
    extent_x: Option<f64>,
    /// Map extent in meters, y axis.
    #[arg(long)]
    extent_y: Option<f64>,
    /// Cell size in meters.
    #[arg(long)]
    resolution: Option<f64>,
}

#[derive(Debug, Args)]
struct PreprocessCli {
    /// Input map file (needs an elevation layer).
    #[arg(long)]
    map: PathBuf,
}

#[derive(Debug, Args)]
struct BuildRoadmapCli {
    /// Robot model JSON; defaults to the built-in model.
    #[arg(long)]
    robot: Option<PathBuf>,
    /// Vertices per wheeled-leg roadmap.
    #[arg(long)]
    leg_vertices: Option<usize>,
    /// Vertices for the arm roadmap.
    #[arg(long)]
    arm_vertices: Option<usize>,
}

#[derive(Debug, Args)]
struct PlanCli {
    #[arg(long)]
    map: PathBuf,
    /// Directory of per-limb roadmap files.
    #[arg(long)]
    roadmaps: PathBuf,
    #[arg(long)]
    robot: Option<PathBuf>,
    /// Start pose as "x,y,yaw".
    #[arg(long)]
    start: String,
    /// Goal pose as "x,y,yaw".
    #[arg(long)]
    goal: String,
    /// Extra edge cost per contact change.
    #[arg(long)]
    stepping_penalty: Option<f64>,
    /// Iteration budget (overrides the wall-clock budget).
    #[arg(long)]
    iterations: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
}

#[derive(Debug, Args)]
struct RefineCli {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    robot: Option<PathBuf>,
    /// "init" refines the planner seed; "linear" replaces it with
    /// straight-line interpolation first.
    #[arg(long, default_value = "init")]
    seed_mode: SeedMode,
    /// Knot spacing in seconds.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalCli {
    /// Comma-separated families to sweep.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<TerrainFamily>>,
    /// Comma-separated difficulties in [0, 1].
    #[arg(long, value_delimiter = ',')]
    difficulties: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Planning sweep only; skip the refinement comparison.
    #[arg(long)]
    no_refine: bool,
}

#[derive(Debug, Args)]
struct ExportCli {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = AppConfig::load(cli.config.as_deref()).map_err(CliError::usage)?;
    let config_value = serde_json::to_value(&config).expect("config serializes");
    let g = Global {
        config,
        config_value,
        seed: cli.seed,
        deterministic: cli.deterministic,
        out: cli.out,
    };
    match cli.command {
        Command::GenTerrain(a) => {
            let extent = match (a.extent_x, a.extent_y) {
                (None, None) => None,
                (x, y) => Some([
                    x.unwrap_or(g.config.terrain.extent[0]),
                    y.unwrap_or(g.config.terrain.extent[1]),
                ]),
            };
            cmd_gen_terrain(
                &g,
                &GenTerrainArgs {
                    family: a.family,
                    difficulty: a.difficulty,
                    extent,
                    resolution: a.resolution,
                },
            )
        }
        Command::Preprocess(a) => cmd_preprocess(&g, &a.map),
        Command::BuildRoadmap(a) => cmd_build_roadmap(
            &g,
            &BuildRoadmapArgs {
                robot: a.robot,
                leg_vertices: a.leg_vertices,
                arm_vertices: a.arm_vertices,
            },
        ),
        Command::Plan(a) => cmd_plan(
            &g,
            &PlanArgs {
                map: a.map,
                roadmaps: a.roadmaps,
                robot: a.robot,
                start: a.start,
                goal: a.goal,
                stepping_penalty: a.stepping_penalty,
                iterations: a.iterations,
                time_budget: a.time_budget,
            },
        ),
        Command::Refine(a) => cmd_refine(
            &g,
            &RefineArgs {
                plan: a.plan,
                map: a.map,
                robot: a.robot,
                seed_mode: a.seed_mode,
                dt: a.dt,
            },
        ),
        Command::Eval(a) => cmd_eval(
            &g,
            &EvalArgs {
                families: a.families,
                difficulties: a.difficulties,
                trials: a.trials,
                no_refine: a.no_refine,
            },
        ),
        Command::Export(a) => cmd_export(
            &g,
            &ExportArgs {
                map: a.map,
                plan: a.plan,
            },
        ),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let err = CliError::usage(e.to_string());
                eprintln!("{}", e.render());
                eprintln!("{}", err.to_json());
                std::process::exit(2);
            }
            // --help / --version
            print!("{}", e.render());
            std::process::exit(0);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("{}", err.to_json());
        std::process::exit(err.exit_code());
    }
}
