//! Scratch probe: candidate heights, pose costs, and feasibility in the
//! step-crossing band.

use terraplan_core::gridmap::InterpolationMethod;
use terraplan_core::init_planner::check_feasibility;
use terraplan_core::roadmap::build;
use terraplan_core::robot::default_model;
use terraplan_core::sampler::{
    candidate_pose, lift_pose, pose_cost, SamplerContext, SamplerParams,
};
use terraplan_core::terrain::{
    classify_traversability, compute_sdf, derive_layers, generate, TerrainFamily, TerrainSpec,
    TraversabilityParams, LAYER_ELEVATION, RADIUS_LARGE, RADIUS_SMALL,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let difficulty: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let model = default_model();
    let spec = TerrainSpec {
        family: TerrainFamily::Step,
        difficulty,
        seed: 31,
        extent: [12.0, 8.0],
        resolution: 0.1,
    };
    let (mut map, _) = generate(&spec).unwrap();
    derive_layers(&mut map, RADIUS_SMALL, RADIUS_LARGE).unwrap();
    classify_traversability(&mut map, &TraversabilityParams::default()).unwrap();
    compute_sdf(&mut map).unwrap();

    let roadmaps: Vec<_> = model
        .limbs
        .iter()
        .map(|l| {
            let (n, d) = if l.wheeled { (300, 0.4) } else { (1500, 1.0) };
            build(&model, &l.name, n, 8, d, 7).unwrap()
        })
        .collect();
    let ctx = SamplerContext {
        model: &model,
        map: &map,
        roadmaps: &roadmaps,
        params: SamplerParams::default(),
    };

    // layer names present
    for name in map.layer_names() {
        println!("layer: {name}");
    }

    let mut x = 6.2;
    while x <= 7.2 {
        let raw = map
            .value_at(LAYER_ELEVATION, [x, 4.0], InterpolationMethod::NearestNeighbor)
            .unwrap();
        println!("--- x {x:.1}: raw {raw:.3}");
        for h in [0.0, 0.1, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5] {
            let pose = candidate_pose(&model, [x, 4.0], 0.0, h, [0.0, 0.0]);
            let cost = pose_cost(&ctx, &pose).unwrap();
            let feas = match check_feasibility(&ctx, &pose) {
                None => "infeasible".to_string(),
                Some(s) => s
                    .contacts
                    .iter()
                    .map(|&b| if b { '#' } else { '.' })
                    .collect(),
            };
            println!("  h {h:.2} -> cost {cost:6.2}  feas {feas}");
        }
        match lift_pose(&ctx, [x, 4.0], 0.0) {
            Ok(lp) => println!(
                "  lift chose z {:.2} (sources {:?}/{:?}, cost {:.2})",
                lp.base_pose.translation.z, lp.chosen.height_source, lp.chosen.normal_source, lp.chosen.cost
            ),
            Err(e) => println!("  lift err {e}"),
        }
        x += 0.2;
    }
}
