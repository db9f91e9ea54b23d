//! Locality and wall purity on the reference run, next to variants that
//! factor out the arena's quarter-turn symmetry.
//!
//! `cargo run --release -p percept-core --example aliasing`

use percept::cluster::{kmeans, nearest_wall, wall_purity, KMeansParams};
use percept::dataset::{filter_by_yaw, normalize_sensors, LogRecord};
use percept::explore::{run_exploration, seeded_rng, ExploreConfig};
use percept::neighbors::SpatialIndex;
use percept::points::{dist, Points};
use percept::sim::World;
use rand::Rng;

fn main() {
    let world = World::default();
    let config = ExploreConfig {
        n_actions: 50_000,
        seed: 7,
        ..ExploreConfig::default()
    };
    let mut log: Vec<LogRecord> = Vec::new();
    run_exploration(&config, &world, &mut log, None).unwrap();

    let sensors = normalize_sensors(&log).unwrap().matrix;
    let mut with_yaw = Vec::with_capacity(log.len() * 18);
    for (i, r) in log.iter().enumerate() {
        with_yaw.extend_from_slice(sensors.row(i));
        with_yaw.extend([r.yaw.cos(), r.yaw.sin()]);
    }
    let plain = SpatialIndex::build(sensors).unwrap();
    let yawed = SpatialIndex::build(Points::new(18, with_yaw).unwrap()).unwrap();

    // distance to the nearest of the four quarter-turn images of `b`
    let up_to_rotation = |a: [f64; 2], b: [f64; 2]| {
        let mut q = b;
        (0..4)
            .map(|_| {
                let d = dist(&a, &q);
                q = [-q[1], q[0]];
                d
            })
            .fold(f64::INFINITY, f64::min)
    };

    let mut rng = seeded_rng(7);
    let (mut sum_plain, mut sum_rot, mut sum_yaw, mut baseline) = (0.0, 0.0, 0.0, 0.0);
    let neighbours = |index: &SpatialIndex, a: usize| -> Vec<usize> {
        index
            .knn(index.points().row(a), 11)
            .unwrap()
            .into_iter()
            .map(|(i, _)| i)
            .filter(|&i| i != a)
            .take(10)
            .collect()
    };
    for _ in 0..200 {
        let a = rng.gen_range(0..log.len());
        for i in neighbours(&plain, a) {
            sum_plain += dist(&log[a].end(), &log[i].end());
            sum_rot += up_to_rotation(log[a].end(), log[i].end());
        }
        for i in neighbours(&yawed, a) {
            sum_yaw += dist(&log[a].end(), &log[i].end());
        }
        for _ in 0..10 {
            let (i, j) = (rng.gen_range(0..log.len()), rng.gen_range(0..log.len()));
            baseline += dist(&log[i].end(), &log[j].end());
        }
    }
    println!(
        "locality, 16-D sensors:            {:.3}",
        sum_plain / baseline
    );
    println!(
        "locality, up to a quarter turn:    {:.3}",
        sum_rot / baseline
    );
    println!(
        "locality, sensors plus yaw:        {:.3}",
        sum_yaw / baseline
    );

    let subset = filter_by_yaw(&log, -2.09, 0.1).unwrap();
    let m = normalize_sensors(&subset).unwrap().matrix;
    let model = kmeans(&m, 4, &KMeansParams::with_seed(7)).unwrap();
    let mut walls = vec![[0usize; 4]; 4];
    let mut quadrants = vec![[0usize; 4]; 4];
    for (&c, r) in model.assignments.iter().zip(&subset) {
        walls[c][nearest_wall(r.x1, r.y1, &world.arena).id()] += 1;
        quadrants[c][usize::from(r.x1 > 0.0) * 2 + usize::from(r.y1 > 0.0)] += 1;
    }
    println!(
        "wall purity at yaw -2.09: {:.3}",
        wall_purity(&model.assignments, &subset, &world.arena).unwrap()
    );
    println!("cluster x wall (N, E, S, W):       {walls:?}");
    println!("cluster x quadrant (--, -+, +-, ++): {quadrants:?}");
}
