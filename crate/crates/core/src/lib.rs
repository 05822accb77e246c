//! Motion-planning toolkit for legged-wheeled robots on 2.5D elevation maps.
//!
//! The pipeline has two stages. A sampling-based initialization stage grows
//! an RRT over SE(2) base poses with Reeds-Shepp steering, lifts samples to
//! full SE(3) poses from terrain features, and checks whole-body feasibility
//! against precomputed limb roadmaps. The result, a whole-body path with a
//! contact schedule, seeds a trajectory-optimization refinement stage that
//! enforces contact, traversability, rolling, and collision constraints
//! against interpolated terrain.

pub mod gridmap;
pub mod init_planner;
pub mod reeds_shepp;
pub mod refine;
pub mod roadmap;
pub mod robot;
pub mod sampler;
pub mod terrain;

pub use gridmap::{CellIndex, GridMap, GridMapError, InterpolationMethod, MISSING};
