//! One function per subcommand. Each builds its inputs, runs the
//! pipeline stage, writes outputs atomically, and records a run
//! manifest next to them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use terraplan_core::gridmap::GridMap;
use terraplan_core::init_planner::{PlanError, Planner, PlannerConfig, WholeBodyPath};
use terraplan_core::reeds_shepp::SE2Pose;
use terraplan_core::refine::{solve, transcribe, Knot, SolveReport};
use terraplan_core::roadmap::{build, LimbRoadmap};
use terraplan_core::robot::{default_model, RobotModel};
use terraplan_core::sampler::SamplerContext;
use terraplan_core::terrain::{
    classify_traversability, compute_sdf, derive_layers, generate, TerrainFamily, TerrainSpec,
    TraversabilityParams, RADIUS_LARGE, RADIUS_SMALL,
};

use crate::config::AppConfig;
use crate::error::{CliError, Result};
use crate::ioutil::{save_atomic, write_atomic};
use crate::manifest::RunManifest;

/// Options shared by every subcommand.
pub struct Global {
    pub config: AppConfig,
    pub config_value: serde_json::Value,
    pub seed: u64,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

impl Global {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.seed, self.deterministic, self.config_value.clone())
    }

    fn finish(&self, mut manifest: RunManifest, started: Instant, path: &Path) -> Result<()> {
        if !self.deterministic {
            manifest.wall_time_s = Some(started.elapsed().as_secs_f64());
        }
        manifest
            .write(path)
            .map_err(|e| CliError::io(format!("cannot write manifest {}: {e}", path.display())))
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    if out.extension().is_some() {
        out.with_extension("manifest.json")
    } else {
        out.join("manifest.json")
    }
}

fn load_model(path: Option<&Path>) -> Result<RobotModel> {
    match path {
        None => Ok(default_model()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("cannot read robot config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::io(format!("robot config parse error {}: {e}", p.display())))
        }
    }
}

fn load_map(path: &Path) -> Result<GridMap> {
    GridMap::load(path).map_err(|e| CliError::io(format!("cannot load map {}: {e}", path.display())))
}

fn prepare_layers(map: &mut GridMap) -> Result<()> {
    derive_layers(map, RADIUS_SMALL, RADIUS_LARGE)
        .and_then(|_| classify_traversability(map, &TraversabilityParams::default()))
        .and_then(|_| compute_sdf(map))
        .map_err(|e| CliError::io(format!("layer derivation failed: {e}")))
}

fn save_map(map: &GridMap, path: &Path) -> Result<()> {
    save_atomic(path, |tmp| map.save(tmp))
        .map_err(|e| CliError::io(format!("cannot write map {}: {e}", path.display())))
}

fn parse_se2(text: &str) -> Result<SE2Pose> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!(
            "pose '{text}' must be 'x,y,yaw' (three comma-separated numbers)"
        )));
    }
    let nums: std::result::Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
    let nums = nums.map_err(|e| CliError::usage(format!("pose '{text}': {e}")))?;
    Ok(SE2Pose::new(nums[0], nums[1], nums[2]))
}

// --- gen-terrain --------------------------------------------------------

pub struct GenTerrainArgs {
    pub family: TerrainFamily,
    pub difficulty: f64,
    pub extent: Option<[f64; 2]>,
    pub resolution: Option<f64>,
}

pub fn cmd_gen_terrain(g: &Global, args: &GenTerrainArgs) -> Result<()> {
    let started = Instant::now();
    let out = g.out_or("terrain.map");
    let spec = TerrainSpec {
        family: args.family,
        difficulty: args.difficulty,
        seed: g.seed,
        extent: args.extent.unwrap_or(g.config.terrain.extent),
        resolution: args.resolution.unwrap_or(g.config.terrain.resolution),
    };
    let (mut map, truth) =
        generate(&spec).map_err(|e| CliError::usage(format!("terrain generation: {e}")))?;
    prepare_layers(&mut map)?;
    save_map(&map, &out)?;
    let truth_path = out.with_extension("truth.json");
    let truth_json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    write_atomic(&truth_path, truth_json.as_bytes())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", truth_path.display())))?;

    let mut manifest = g.manifest("gen-terrain");
    manifest.outputs = vec![out.clone(), truth_path];
    manifest.result = json!({
        "spec": spec,
        "ground_truth": truth,
        "rows": map.rows(),
        "cols": map.cols(),
    });
    g.finish(manifest, started, &manifest_path(&out))
}

// --- preprocess ---------------------------------------------------------

pub fn cmd_preprocess(g: &Global, map_path: &Path) -> Result<()> {
    let started = Instant::now();
    let out = g.out_or("preprocessed.map");
    let mut map = load_map(map_path)?;
    prepare_layers(&mut map)?;
    save_map(&map, &out)?;
    let mut manifest = g.manifest("preprocess");
    manifest.inputs = vec![map_path.to_path_buf()];
    manifest.outputs = vec![out.clone()];
    manifest.result = json!({ "layers": map.layer_names().collect::<Vec<_>>() });
    g.finish(manifest, started, &manifest_path(&out))
}

// --- build-roadmap ------------------------------------------------------

pub struct BuildRoadmapArgs {
    pub robot: Option<PathBuf>,
    pub leg_vertices: Option<usize>,
    pub arm_vertices: Option<usize>,
}

pub fn roadmap_file(dir: &Path, limb_name: &str) -> PathBuf {
    dir.join(format!("{limb_name}.roadmap"))
}

pub fn cmd_build_roadmap(g: &Global, args: &BuildRoadmapArgs) -> Result<()> {
    let started = Instant::now();
    let out_dir = g.out_or("roadmaps");
    let model = load_model(args.robot.as_deref())?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let rm_cfg = &g.config.roadmap;
    let mut outputs = Vec::new();
    let mut sizes = Vec::new();
    for limb in &model.limbs {
        let (n, d_max) = if limb.wheeled {
            (args.leg_vertices.unwrap_or(rm_cfg.leg_vertices), rm_cfg.leg_d_max)
        } else {
            (args.arm_vertices.unwrap_or(rm_cfg.arm_vertices), rm_cfg.arm_d_max)
        };
        let rm = build(&model, &limb.name, n, rm_cfg.k_neighbors, d_max, g.seed)
            .map_err(|e| CliError::usage(format!("roadmap build for {}: {e}", limb.name)))?;
        let path = roadmap_file(&out_dir, &limb.name);
        save_atomic(&path, |tmp| rm.save(tmp))
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        sizes.push(json!({ "limb": limb.name, "vertices": rm.vertices.len() }));
        outputs.push(path);
    }
    let mut manifest = g.manifest("build-roadmap");
    manifest.inputs = args.robot.iter().map(|p| p.to_path_buf()).collect();
    manifest.outputs = outputs;
    manifest.result = json!({ "roadmaps": sizes });
    g.finish(manifest, started, &out_dir.join("manifest.json"))
}

// --- plan ---------------------------------------------------------------

pub struct PlanArgs {
    pub map: PathBuf,
    pub roadmaps: PathBuf,
    pub robot: Option<PathBuf>,
    pub start: String,
    pub goal: String,
    pub stepping_penalty: Option<f64>,
    pub iterations: Option<usize>,
    pub time_budget: Option<f64>,
}

fn load_roadmaps(dir: &Path, model: &RobotModel) -> Result<Vec<LimbRoadmap>> {
    model
        .limbs
        .iter()
        .map(|limb| {
            let path = roadmap_file(dir, &limb.name);
            LimbRoadmap::load(&path, Some(model.config_hash()))
                .map_err(|e| CliError::io(format!("cannot load roadmap {}: {e}", path.display())))
        })
        .collect()
}

pub fn planner_config(g: &Global, args: &PlanArgs) -> PlannerConfig {
    let mut cfg = g.config.planner.clone();
    cfg.seed = g.seed;
    if let Some(p) = args.stepping_penalty {
        cfg.stepping_penalty = p;
    }
    if let Some(t) = args.time_budget {
        cfg.time_budget = t;
    }
    if let Some(n) = args.iterations {
        cfg.iteration_budget = Some(n);
    } else if g.deterministic {
        cfg.iteration_budget = Some(g.config.deterministic_iterations);
    }
    cfg
}

fn plan_error(e: PlanError) -> CliError {
    match e {
        PlanError::InfeasibleStart | PlanError::InfeasibleGoal | PlanError::NoSolutionWithinBudget(_) => {
            CliError::infeasible(e.to_string())
        }
        PlanError::Io(e) => CliError::io(e.to_string()),
        PlanError::Parse(m) => CliError::io(m),
        other => CliError::usage(other.to_string()),
    }
}

pub fn cmd_plan(g: &Global, args: &PlanArgs) -> Result<()> {
    let started = Instant::now();
    let out = g.out_or("plan.json");
    let model = load_model(args.robot.as_deref())?;
    let map = load_map(&args.map)?;
    let roadmaps = load_roadmaps(&args.roadmaps, &model)?;
    let start = parse_se2(&args.start)?;
    let goal = parse_se2(&args.goal)?;
    let ctx = SamplerContext {
        model: &model,
        map: &map,
        roadmaps: &roadmaps,
        params: g.config.sampler.to_params(),
    };
    let cfg = planner_config(g, args);
    let planner = Planner::new(&ctx, cfg);
    let mut plan = planner.plan(&start, &goal).map_err(plan_error)?;
    if g.deterministic {
        // wall-clock metrics would break bit-identical reruns
        plan.metrics.time_to_first_solution = None;
    }
    save_atomic(&out, |tmp| plan.save(tmp))
        .map_err(|e| CliError::io(format!("cannot write plan {}: {e}", out.display())))?;

    let mut manifest = g.manifest("plan");
    manifest.inputs = vec![args.map.clone(), args.roadmaps.clone()];
    manifest.outputs = vec![out.clone()];
    manifest.result = json!({
        "iterations": plan.metrics.iterations,
        "first_solution_iteration": plan.metrics.first_solution_iteration,
        "time_to_first_solution": plan.metrics.time_to_first_solution,
        "initial_cost": plan.metrics.initial_cost,
        "final_cost": plan.metrics.final_cost,
        "phases": plan.phases.len(),
        "contact_breaks": plan.contact_break_count(),
    });
    g.finish(manifest, started, &manifest_path(&out))
}

// --- refine -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMode {
    Init,
    Linear,
}

impl std::str::FromStr for SeedMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "init" => Ok(Self::Init),
            "linear" => Ok(Self::Linear),
            other => Err(format!("unknown seed mode '{other}' (expected init or linear)")),
        }
    }
}

pub struct RefineArgs {
    pub plan: PathBuf,
    pub map: PathBuf,
    pub robot: Option<PathBuf>,
    pub seed_mode: SeedMode,
    pub dt: Option<f64>,
}

/// On-disk result of a refine run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RefinedTrajectory {
    pub dt: f64,
    pub knots: Vec<Knot>,
    pub report: SolveReport,
}

pub fn cmd_refine(g: &Global, args: &RefineArgs) -> Result<()> {
    let started = Instant::now();
    let out = g.out_or("refined.json");
    let model = load_model(args.robot.as_deref())?;
    let map = load_map(&args.map)?;
    let plan = WholeBodyPath::load(&args.plan)
        .map_err(|e| CliError::io(format!("cannot load plan {}: {e}", args.plan.display())))?;
    let dt = args.dt.unwrap_or(g.config.refine.dt);
    let prob = transcribe(&plan, &map, &model, dt)
        .map_err(|e| CliError::usage(format!("transcription: {e}")))?;
    let prob = match args.seed_mode {
        SeedMode::Init => prob,
        SeedMode::Linear => prob.with_linear_seed(),
    };
    let (knots, mut report) = solve(&prob, &g.config.refine.solver);
    if g.deterministic {
        report.wall_time_s = 0.0;
    }
    let result = json!({
        "success": report.success,
        "outer_loops": report.outer.len(),
        "initial": report.initial,
        "final": report.final_violations,
    });
    let traj = RefinedTrajectory { dt, knots, report };
    let mut text = serde_json::to_string_pretty(&traj).expect("trajectory serializes");
    text.push('\n');
    write_atomic(&out, text.as_bytes())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", out.display())))?;

    let mut manifest = g.manifest("refine");
    manifest.inputs = vec![args.plan.clone(), args.map.clone()];
    manifest.outputs = vec![out.clone()];
    manifest.result = result;
    g.finish(manifest, started, &manifest_path(&out))
}

// --- eval ---------------------------------------------------------------

pub struct EvalArgs {
    pub families: Option<Vec<TerrainFamily>>,
    pub difficulties: Option<Vec<f64>>,
    pub trials: Option<usize>,
    /// Skip the refinement comparison (planning sweep only).
    pub no_refine: bool,
}

fn family_name(f: TerrainFamily) -> &'static str {
    match f {
        TerrainFamily::Flat => "flat",
        TerrainFamily::Rough => "rough",
        TerrainFamily::Gap => "gap",
        TerrainFamily::Step => "step",
        TerrainFamily::Hole => "hole",
    }
}

/// Deterministic per-trial seed derived from the sweep seed.
fn trial_seed(base: u64, fi: usize, di: usize, trial: usize) -> u64 {
    let mut x = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((fi as u64) << 32)
        .wrapping_add((di as u64) << 16)
        .wrapping_add(trial as u64 + 1);
    // splitmix64 finalizer
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    x
}

struct TrialOutcome {
    seed: u64,
    plan_success: bool,
    error: Option<String>,
    time_to_first_solution: Option<f64>,
    first_solution_iteration: Option<usize>,
    initial_cost: Option<f64>,
    final_cost: Option<f64>,
    init_refine_success: Option<bool>,
    linear_refine_success: Option<bool>,
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_eval(g: &Global, args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let out_dir = g.out_or("eval");
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let families: Vec<TerrainFamily> = match &args.families {
        Some(f) => f.clone(),
        None => g
            .config
            .eval
            .families
            .iter()
            .map(|s| s.parse().map_err(CliError::usage))
            .collect::<Result<_>>()?,
    };
    let difficulties = args
        .difficulties
        .clone()
        .unwrap_or_else(|| g.config.eval.difficulties.clone());
    let trials = args.trials.unwrap_or(g.config.eval.trials);
    if families.is_empty() || difficulties.is_empty() || trials == 0 {
        return Err(CliError::usage("eval sweep needs families, difficulties, and trials"));
    }

    let model = default_model();
    let rm_cfg = &g.config.roadmap;
    let roadmaps: Vec<LimbRoadmap> = model
        .limbs
        .iter()
        .map(|limb| {
            let (n, d_max) = if limb.wheeled {
                (rm_cfg.leg_vertices, rm_cfg.leg_d_max)
            } else {
                (rm_cfg.arm_vertices, rm_cfg.arm_d_max)
            };
            build(&model, &limb.name, n, rm_cfg.k_neighbors, d_max, g.seed)
                .map_err(|e| CliError::usage(format!("roadmap build: {e}")))
        })
        .collect::<Result<_>>()?;

    let extent = g.config.terrain.extent;
    let start = SE2Pose::new(2.5, extent[1] / 2.0, 0.0);
    let goal = SE2Pose::new(extent[0] - 2.5, extent[1] / 2.0, 0.0);

    let mut runs_csv = String::from(
        "family,difficulty,trial,seed,plan_success,time_to_first_solution,first_solution_iteration,initial_cost,final_cost,error\n",
    );
    let mut seeding_csv = String::from("family,difficulty,trial,init_success,linear_success\n");
    let mut summary_csv = String::from(
        "family,difficulty,success_rate,mean_time_to_first_solution,mean_first_solution_iteration,mean_initial_cost,mean_final_cost\n",
    );
    let mut n_runs = 0usize;

    for (fi, &family) in families.iter().enumerate() {
        for (di, &difficulty) in difficulties.iter().enumerate() {
            let mut outcomes = Vec::new();
            for trial in 0..trials {
                let seed = trial_seed(g.seed, fi, di, trial);
                let outcome = run_trial(
                    g, &model, &roadmaps, family, difficulty, seed, &start, &goal, args.no_refine,
                );
                n_runs += 1;
                runs_csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    family_name(family),
                    difficulty,
                    trial,
                    outcome.seed,
                    outcome.plan_success,
                    fmt_opt(&outcome.time_to_first_solution),
                    fmt_opt(&outcome.first_solution_iteration),
                    fmt_opt(&outcome.initial_cost),
                    fmt_opt(&outcome.final_cost),
                    outcome.error.clone().unwrap_or_default().replace(',', ";"),
                ));
                if let (Some(i), Some(l)) =
                    (outcome.init_refine_success, outcome.linear_refine_success)
                {
                    seeding_csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        family_name(family),
                        difficulty,
                        trial,
                        i,
                        l
                    ));
                }
                outcomes.push(outcome);
            }
            let succ = outcomes.iter().filter(|o| o.plan_success).count();
            let mean = |f: &dyn Fn(&TrialOutcome) -> Option<f64>| -> String {
                let vals: Vec<f64> = outcomes.iter().filter_map(|o| f(o)).collect();
                if vals.is_empty() {
                    String::new()
                } else {
                    format!("{}", vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            summary_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                family_name(family),
                difficulty,
                succ as f64 / trials as f64,
                mean(&|o: &TrialOutcome| o.time_to_first_solution),
                mean(&|o: &TrialOutcome| o.first_solution_iteration.map(|x| x as f64)),
                mean(&|o: &TrialOutcome| o.initial_cost),
                mean(&|o: &TrialOutcome| o.final_cost),
            ));
        }
    }

    for (name, text) in [
        ("runs.csv", &runs_csv),
        ("summary.csv", &summary_csv),
        ("seeding.csv", &seeding_csv),
    ] {
        let path = out_dir.join(name);
        write_atomic(&path, text.as_bytes())
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    }

    let mut manifest = g.manifest("eval");
    manifest.outputs = vec![
        out_dir.join("runs.csv"),
        out_dir.join("summary.csv"),
        out_dir.join("seeding.csv"),
    ];
    manifest.result = json!({
        "runs": n_runs,
        "families": families.iter().map(|f| family_name(*f)).collect::<Vec<_>>(),
        "difficulties": difficulties,
        "trials": trials,
    });
    g.finish(manifest, started, &out_dir.join("manifest.json"))
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    g: &Global,
    model: &RobotModel,
    roadmaps: &[LimbRoadmap],
    family: TerrainFamily,
    difficulty: f64,
    seed: u64,
    start: &SE2Pose,
    goal: &SE2Pose,
    no_refine: bool,
) -> TrialOutcome {
    let mut outcome = TrialOutcome {
        seed,
        plan_success: false,
        error: None,
        time_to_first_solution: None,
        first_solution_iteration: None,
        initial_cost: None,
        final_cost: None,
        init_refine_success: None,
        linear_refine_success: None,
    };
    let spec = TerrainSpec {
        family,
        difficulty,
        seed,
        extent: g.config.terrain.extent,
        resolution: g.config.terrain.resolution,
    };
    let map = (|| -> std::result::Result<GridMap, String> {
        let (mut map, _) = generate(&spec).map_err(|e| e.to_string())?;
        derive_layers(&mut map, RADIUS_SMALL, RADIUS_LARGE).map_err(|e| e.to_string())?;
        classify_traversability(&mut map, &TraversabilityParams::default())
            .map_err(|e| e.to_string())?;
        compute_sdf(&mut map).map_err(|e| e.to_string())?;
        Ok(map)
    })();
    let map = match map {
        Ok(m) => m,
        Err(e) => {
            outcome.error = Some(e);
            return outcome;
        }
    };
    let ctx = SamplerContext {
        model,
        map: &map,
        roadmaps,
        params: g.config.sampler.to_params(),
    };
    let mut cfg = g.config.planner.clone();
    cfg.seed = seed;
    if g.deterministic {
        cfg.iteration_budget = Some(g.config.deterministic_iterations);
    }
    let planner = Planner::new(&ctx, cfg);
    let plan = match planner.plan(start, goal) {
        Ok(p) => p,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.plan_success = true;
    outcome.time_to_first_solution = if g.deterministic {
        None
    } else {
        plan.metrics.time_to_first_solution
    };
    outcome.first_solution_iteration = plan.metrics.first_solution_iteration;
    outcome.initial_cost = plan.metrics.initial_cost;
    outcome.final_cost = plan.metrics.final_cost;

    if !no_refine {
        match transcribe(&plan, &map, model, g.config.refine.dt) {
            Ok(prob) => {
                let (_, init_report) = solve(&prob, &g.config.refine.solver);
                let linear = prob.with_linear_seed();
                let (_, linear_report) = solve(&linear, &g.config.refine.solver);
                outcome.init_refine_success = Some(init_report.success);
                outcome.linear_refine_success = Some(linear_report.success);
            }
            Err(e) => outcome.error = Some(format!("transcription: {e}")),
        }
    }
    outcome
}

// --- export -------------------------------------------------------------

pub struct ExportArgs {
    pub map: Option<PathBuf>,
    pub plan: Option<PathBuf>,
}

fn export_map_csv(map: &GridMap, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let layers: Vec<String> = map.layer_names().map(str::to_string).collect();
    for layer in layers {
        let data = map
            .layer(&layer)
            .map_err(|e| CliError::io(format!("layer {layer}: {e}")))?;
        let mut text = String::new();
        for r in 0..map.rows() {
            let row: Vec<String> = (0..map.cols())
                .map(|c| {
                    let v = data[r * map.cols() + c];
                    if v.is_nan() {
                        "nan".to_string()
                    } else {
                        format!("{v}")
                    }
                })
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let path = out_dir.join(format!("{layer}.csv"));
        write_atomic(&path, text.as_bytes())
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

fn export_plan_csv(plan: &WholeBodyPath, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut traj = String::from("phase,state,x,y,z,roll,pitch,yaw,contacts\n");
    for (pi, phase) in plan.phases.iter().enumerate() {
        for (si, s) in phase.states.iter().enumerate() {
            let t = s.base_pose.translation;
            let (roll, pitch, yaw) = s.base_pose.rotation.euler_angles();
            let contacts: String = s
                .contacts
                .iter()
                .map(|&c| if c { '1' } else { '0' })
                .collect();
            traj.push_str(&format!(
                "{pi},{si},{},{},{},{roll},{pitch},{yaw},{contacts}\n",
                t.x, t.y, t.z
            ));
        }
    }
    let mut hist = String::from("iteration,cost\n");
    for (it, cost) in &plan.metrics.solution_history {
        hist.push_str(&format!("{it},{cost}\n"));
    }
    let mut written = Vec::new();
    for (name, text) in [("trajectory.csv", &traj), ("solution_history.csv", &hist)] {
        let path = out_dir.join(name);
        write_atomic(&path, text.as_bytes())
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_export(g: &Global, args: &ExportArgs) -> Result<()> {
    let started = Instant::now();
    let out_dir = g.out_or("export");
    if args.map.is_none() && args.plan.is_none() {
        return Err(CliError::usage("export needs --map and/or --plan"));
    }
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut outputs = Vec::new();
    let mut inputs = Vec::new();
    if let Some(map_path) = &args.map {
        let map = load_map(map_path)?;
        outputs.extend(export_map_csv(&map, &out_dir)?);
        inputs.push(map_path.clone());
    }
    if let Some(plan_path) = &args.plan {
        let plan = WholeBodyPath::load(plan_path)
            .map_err(|e| CliError::io(format!("cannot load plan {}: {e}", plan_path.display())))?;
        outputs.extend(export_plan_csv(&plan, &out_dir)?);
        inputs.push(plan_path.clone());
    }
    let mut manifest = g.manifest("export");
    manifest.inputs = inputs;
    manifest.result = json!({ "files": outputs.len() });
    manifest.outputs = outputs;
    g.finish(manifest, started, &out_dir.join("manifest.json"))
}
