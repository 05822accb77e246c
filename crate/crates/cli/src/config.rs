//! Optional TOML configuration mirroring each module's config type.
//! Every section and field has a default, so a partial file (or none at
//! all) is valid.

use serde::{Deserialize, Serialize};
use terraplan_core::init_planner::PlannerConfig;
use terraplan_core::refine::SolverConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainSection {
    pub extent: [f64; 2],
    pub resolution: f64,
}

impl Default for TerrainSection {
    fn default() -> Self {
        Self {
            extent: [15.0, 8.0],
            resolution: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadmapSection {
    pub leg_vertices: usize,
    pub arm_vertices: usize,
    pub k_neighbors: usize,
    pub leg_d_max: f64,
    pub arm_d_max: f64,
}

impl Default for RoadmapSection {
    fn default() -> Self {
        Self {
            leg_vertices: 300,
            arm_vertices: 3000,
            k_neighbors: 8,
            leg_d_max: 0.4,
            arm_d_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub w_ground: f64,
    pub w_roll_pitch: f64,
    pub sdf_margin: f64,
    pub ground_search_radius: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let p = terraplan_core::sampler::SamplerParams::default();
        Self {
            w_ground: p.w_ground,
            w_roll_pitch: p.w_roll_pitch,
            sdf_margin: p.sdf_margin,
            ground_search_radius: p.ground_search_radius,
        }
    }
}

impl SamplerSection {
    pub fn to_params(&self) -> terraplan_core::sampler::SamplerParams {
        terraplan_core::sampler::SamplerParams {
            w_ground: self.w_ground,
            w_roll_pitch: self.w_roll_pitch,
            sdf_margin: self.sdf_margin,
            ground_search_radius: self.ground_search_radius,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineSection {
    /// Knot spacing in seconds.
    pub dt: f64,
    pub solver: SolverConfig,
}

impl Default for RefineSection {
    fn default() -> Self {
        Self {
            dt: 0.5,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub families: Vec<String>,
    pub difficulties: Vec<f64>,
    pub trials: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            families: vec!["rough".into(), "gap".into(), "step".into()],
            difficulties: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            trials: 5,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub terrain: TerrainSection,
    pub roadmap: RoadmapSection,
    pub sampler: SamplerSection,
    pub planner: PlannerConfig,
    pub refine: RefineSection,
    pub eval: EvalSection,
    /// Iteration budget substituted for the wall-clock budget when the
    /// deterministic flag is set.
    pub deterministic_iterations: usize,
}

impl AppConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default_with_budget()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                let mut cfg: AppConfig = toml::from_str(&text)
                    .map_err(|e| format!("config parse error in {}: {e}", p.display()))?;
                if cfg.deterministic_iterations == 0 {
                    cfg.deterministic_iterations = 800;
                }
                Ok(cfg)
            }
        }
    }

    fn default_with_budget() -> Self {
        Self {
            deterministic_iterations: 800,
            ..Default::default()
        }
    }
}
