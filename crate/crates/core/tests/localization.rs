use poleloc::geometry::Pose2D;
use poleloc::map::{GlobalPole, PoleMap};
use poleloc::mcl::{
    estimate_pose, motion_update, observation_update, LocalizationConfig, Localizer, MotionNoise,
    ObservationModelParams,
};
use poleloc::sim::{generate_trajectory, urban_block};
use poleloc::ExtractorParams;

fn exact_map() -> PoleMap {
    let (scene, _) = urban_block();
    PoleMap::new(
        scene
            .cylinders
            .iter()
            .map(|c| GlobalPole { center_x: c.center_x, center_y: c.center_y, radius: c.radius, hit_count: 1, last_section: 0 })
            .collect(),
    )
}

/// Body-frame centers of the map poles within `reach` of the pose.
fn exact_observations(map: &PoleMap, pose: &Pose2D, reach: f64) -> Vec<(f64, f64)> {
    map.poles()
        .iter()
        .filter(|p| (p.center_x - pose.x).hypot(p.center_y - pose.y) < reach)
        .map(|p| pose.inverse_transform_point(p.center_x, p.center_y))
        .collect()
}

fn truth() -> Vec<Pose2D> {
    generate_trajectory(&urban_block().1).unwrap()
}

#[test]
fn zero_noise_closed_loop_tracks_truth() {
    let map = exact_map();
    let poses = truth();
    let config = LocalizationConfig { init_radius: 0.0, init_yaw_range: 0.0, ..Default::default() };
    let mut loc = Localizer::new(
        &poses[0],
        3,
        config,
        MotionNoise::zero(),
        ObservationModelParams::default(),
        ExtractorParams::default(),
    )
    .unwrap();
    for i in 0..100 {
        let delta = if i == 0 { Default::default() } else { poses[i - 1].delta_to(&poses[i]) };
        let obs = exact_observations(&map, &poses[i], 30.0);
        let est = loc.step_with_observations(&delta, &obs, &map).unwrap().estimate;
        assert!(est.distance_to(&poses[i]) < 0.05, "step {i}: {est:?} vs {:?}", poses[i]);
    }
}

#[test]
fn top_fraction_estimate_agrees_with_weighted_mean_once_converged() {
    let map = exact_map();
    let poses = truth();
    let noise = MotionNoise::default();
    let mut loc = Localizer::new(
        &poses[0],
        11,
        LocalizationConfig::default(),
        noise,
        ObservationModelParams::default(),
        ExtractorParams::default(),
    )
    .unwrap();
    for i in 0..60 {
        let delta = if i == 0 { Default::default() } else { poses[i - 1].delta_to(&poses[i]) };
        loc.step_with_observations(&delta, &exact_observations(&map, &poses[i], 30.0), &map).unwrap();
    }
    // one more step by hand so the weights are inspected before resampling
    let delta = poses[59].delta_to(&poses[60]);
    motion_update(&mut loc.set, &delta, &noise);
    observation_update(&mut loc.set, &exact_observations(&map, &poses[60], 30.0), &map, &loc.observation).unwrap();
    let top = estimate_pose(&loc.set.particles, 0.1);
    let mean = loc.set.weighted_mean();
    assert!(top.distance_to(&poses[60]) < 0.2, "{top:?}");
    assert!(top.distance_to(&mean) < 0.05, "top {top:?} mean {mean:?}");
}
