//! Analysis throughput. Each benchmark runs under the crate's own mode
//! (`rayon` with the default `parallel` feature, `sequential` with
//! `--no-default-features`); the parallel build also runs every case on a
//! one-thread pool for a same-binary comparison.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use percept::cluster::{elbow_select, kmeans, KMeansParams};
use percept::dataset::{filter_by_yaw, normalize_sensors, LogRecord};
use percept::explore::{run_exploration, seeded_rng, ExploreConfig};
use percept::geometry::{sample_region_centers, SensorPlane};
use percept::neighbors::locality_ratio;
use percept::par;
use percept::sim::{Arena, World};
use percept::transform::{map_to_sensor_space, ProbeSet};

fn log(n: u64) -> Vec<LogRecord> {
    let config = ExploreConfig {
        n_actions: n,
        seed: 7,
        ..ExploreConfig::default()
    };
    let mut out = Vec::new();
    run_exploration(&config, &World::default(), &mut out, None).unwrap();
    out
}

/// Run `f` in every available mode.
fn modes(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    let mode = if par::is_parallel() {
        "rayon"
    } else {
        "sequential"
    };
    g.bench_function(BenchmarkId::from_parameter(mode), |b| b.iter(&mut f));
    if par::is_parallel() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        g.bench_function(BenchmarkId::from_parameter("rayon-1-thread"), |b| {
            b.iter(|| pool.install(&mut f))
        });
    }
    g.finish();
}

fn analyses(c: &mut Criterion) {
    let records = log(20_000);
    let subset = filter_by_yaw(&records, -2.09, 0.2).unwrap();
    let matrix = normalize_sensors(&subset).unwrap().matrix;
    let arena = Arena::default();

    modes(c, "locality_k10_200", || {
        locality_ratio(&records, 10, 200, &mut seeded_rng(1)).unwrap();
    });
    modes(c, "kmeans_k4", || {
        kmeans(&matrix, 4, &KMeansParams::with_seed(1)).unwrap();
    });
    let ks: Vec<usize> = (1..=8).collect();
    modes(c, "elbow_1_to_8", || {
        elbow_select(&matrix, &ks, &KMeansParams::with_seed(1)).unwrap();
    });
    let plane = SensorPlane::new(&records, (-2.09, 0.1)).unwrap();
    let centres = sample_region_centers(&arena, 1.0, 30, &mut seeded_rng(2)).unwrap();
    modes(c, "hull_30_regions", || {
        plane.correspondences(&centres, 1.0);
    });
    let grid = ProbeSet::grid([-4.0, -4.0], [4.0, 4.0], 20, 20, &arena).unwrap();
    modes(c, "transform_grid_20x20", || {
        map_to_sensor_space(&grid, &records, (-2.09, 0.1), 10).unwrap();
    });
}

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("2000_actions", |b| b.iter(|| log(2000)));
    g.finish();
}

criterion_group!(benches, analyses, simulation);
criterion_main!(benches);
