//! Lloyd k-means with k-means++ seeding, elbow selection of k, and a
//! purity score against nearest-wall labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LogRecord;
use crate::error::{invalid, Result};
use crate::par;
use crate::points::{sq_dist, Points};
use crate::sim::Arena;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            seed: 0,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

impl KMeansParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Points,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning run.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Nearest centroid, ties to the lower id.
fn nearest(row: &[f64], centroids: &Points) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.rows().enumerate() {
        let d = sq_dist(row, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(matrix: &Points, centroids: &Points) -> (Vec<usize>, Vec<f64>) {
    matrix.rows().map(|r| nearest(r, centroids)).unzip()
}

fn kmeans_pp<R: Rng>(matrix: &Points, k: usize, rng: &mut R) -> Points {
    let n = matrix.len();
    let dim = matrix.dim();
    let mut data = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    data.extend_from_slice(matrix.row(first));
    let mut d2: Vec<f64> = matrix
        .rows()
        .map(|r| sq_dist(r, matrix.row(first)))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_positive = 0;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    last_positive = i;
                }
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or(last_positive)
        } else {
            rng.gen_range(0..n)
        };
        let c = matrix.row(pick).to_vec();
        for (i, r) in matrix.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &c));
        }
        data.extend_from_slice(&c);
    }
    Points::new(dim, data).expect("k rows of matrix dimension")
}

fn lloyd(matrix: &Points, k: usize, params: &KMeansParams, restart: usize) -> ClusterModel {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(restart as u64);
    let n = matrix.len();
    let dim = matrix.dim();
    let mut centroids = kmeans_pp(matrix, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        iterations += 1;
        let (labels, dists) = assign(matrix, &centroids);
        trace.push(dists.iter().sum());

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (row, &c) in matrix.rows().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut next = sums;
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                next[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .for_each(|v| *v /= counts[c] as f64);
            } else {
                // re-seed an empty cluster at the worst-served point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                next[c * dim..(c + 1) * dim].copy_from_slice(matrix.row(far));
            }
        }
        let next = Points::new(dim, next).expect("k rows");
        let shift = centroids
            .rows()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max)
            .sqrt();
        centroids = next;
        if shift < params.tol {
            break;
        }
    }

    let (assignments, dists) = assign(matrix, &centroids);
    let inertia: f64 = dists.iter().sum();
    trace.push(inertia);
    ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
        trace,
        iterations,
    }
}

/// Best of `params.restarts` Lloyd runs by inertia; ties go to the
/// earliest restart. Restart `r` draws from stream `r` of the seeded
/// ChaCha8 generator, so results do not depend on scheduling.
pub fn kmeans(matrix: &Points, k: usize, params: &KMeansParams) -> Result<ClusterModel> {
    if k == 0 || k > matrix.len() {
        return Err(invalid(format!(
            "k must be in 1..={}, got {k}",
            matrix.len()
        )));
    }
    if params.restarts == 0 || params.max_iter == 0 {
        return Err(invalid("restarts and max_iter must be at least 1"));
    }
    if !(params.tol.is_finite() && params.tol >= 0.0) {
        return Err(invalid("tol must be >= 0"));
    }
    if !matrix.all_finite() {
        return Err(invalid("matrix must be finite"));
    }
    let runs = par::map_range(params.restarts, |r| lloyd(matrix, k, params, r));
    Ok(runs
        .into_iter()
        .reduce(|best, m| if m.inertia < best.inertia { m } else { best })
        .expect("at least one restart"))
}

/// Inertia recomputed from a model's assignments.
pub fn inertia_of(matrix: &Points, model: &ClusterModel) -> f64 {
    matrix
        .rows()
        .zip(&model.assignments)
        .map(|(r, &c)| sq_dist(r, model.centroids.row(c)))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowCurve {
    pub ks: Vec<usize>,
    pub inertias: Vec<f64>,
    pub selected: usize,
}

/// Index of the point farthest from the chord joining the first and last
/// points, both axes min-max scaled; ties go to the earlier point.
pub fn elbow_index(ks: &[usize], inertias: &[f64]) -> usize {
    let n = ks.len();
    if n <= 2 {
        return 0;
    }
    let (k0, k1) = (ks[0] as f64, ks[n - 1] as f64);
    let lo = inertias.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inertias.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64 - k0) / (k1 - k0)).collect();
    let ys: Vec<f64> = inertias
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect();
    let (ax, ay, bx, by) = (xs[0], ys[0], xs[n - 1], ys[n - 1]);
    let len = (bx - ax).hypot(by - ay);
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let d = ((bx - ax) * (ay - ys[i]) - (ax - xs[i]) * (by - ay)).abs() / len;
        if d > best.1 + 1e-12 {
            best = (i, d);
        }
    }
    best.0
}

pub fn elbow_select(
    matrix: &Points,
    k_range: &[usize],
    params: &KMeansParams,
) -> Result<ElbowCurve> {
    if k_range.is_empty() {
        return Err(invalid("k range is empty"));
    }
    if k_range.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("k range must be strictly ascending"));
    }
    let inertias = k_range
        .iter()
        .map(|&k| kmeans(matrix, k, params).map(|m| m.inertia))
        .collect::<Result<Vec<_>>>()?;
    let selected = k_range[elbow_index(k_range, &inertias)];
    Ok(ElbowCurve {
        ks: k_range.to_vec(),
        inertias,
        selected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Wall {
    North,
    East,
    South,
    West,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::North, Wall::East, Wall::South, Wall::West];

    pub fn id(self) -> usize {
        self as usize
    }
}

/// Closest wall to (x, y); ties resolve in N, E, S, W order.
pub fn nearest_wall(x: f64, y: f64, arena: &Arena) -> Wall {
    let h = arena.half();
    let d = [h - y, h - x, y + h, x + h];
    let mut best = 0;
    for i in 1..4 {
        if d[i] < d[best] {
            best = i;
        }
    }
    Wall::ALL[best]
}

/// Share of records whose cluster's majority wall is their own wall.
pub fn wall_purity(assignments: &[usize], records: &[LogRecord], arena: &Arena) -> Result<f64> {
    if assignments.len() != records.len() {
        return Err(invalid(format!(
            "{} assignments for {} records",
            assignments.len(),
            records.len()
        )));
    }
    if records.is_empty() {
        return Err(invalid("purity of an empty clustering"));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![[0usize; 4]; k];
    for (&c, r) in assignments.iter().zip(records) {
        table[c][nearest_wall(r.x1, r.y1, arena).id()] += 1;
    }
    let majority: usize = table.iter().map(|row| *row.iter().max().unwrap()).sum();
    Ok(majority as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs(rng: &mut impl Rng, centers: &[[f64; 2]], per: usize, spread: f64) -> Points {
        let mut data = Vec::new();
        for c in centers {
            for _ in 0..per {
                data.push(c[0] + spread * rng.gen_range(-1.0..1.0));
                data.push(c[1] + spread * rng.gen_range(-1.0..1.0));
            }
        }
        Points::new(2, data).unwrap()
    }

    /// Optimal 2-partition inertia by enumerating every split.
    fn exhaustive_two_means(m: &Points) -> f64 {
        let n = m.len();
        let sse = |members: &[usize]| -> f64 {
            if members.is_empty() {
                return 0.0;
            }
            let dim = m.dim();
            let mut mean = vec![0.0; dim];
            for &i in members {
                for (acc, v) in mean.iter_mut().zip(m.row(i)) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= members.len() as f64);
            members.iter().map(|&i| sq_dist(m.row(i), &mean)).sum()
        };
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let a: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let b: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
            best = best.min(sse(&a) + sse(&b));
        }
        best
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Points::new(3, (0..300).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let model = kmeans(&m, 1, &KMeansParams::with_seed(3)).unwrap();
        let mut mean = [0.0; 3];
        for r in m.rows() {
            for d in 0..3 {
                mean[d] += r[d] / 100.0;
            }
        }
        let total: f64 = m.rows().map(|r| sq_dist(r, &mean)).sum();
        for (c, want) in model.centroids.row(0).iter().zip(&mean) {
            assert!((c - want).abs() < 1e-12);
        }
        assert!((model.inertia - total).abs() < 1e-9);
    }

    #[test]
    fn well_separated_blobs_split_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = blobs(&mut rng, &[[0.0, 0.0], [100.0, 100.0]], 50, 1.0);
        for seed in 0..10 {
            let model = kmeans(&m, 2, &KMeansParams::with_seed(seed)).unwrap();
            let first = model.assignments[0];
            assert!(model.assignments[..50].iter().all(|&a| a == first));
            assert!(model.assignments[50..].iter().all(|&a| a != first));
        }
    }

    #[test]
    fn matches_exhaustive_two_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = Points::new(2, (0..16).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let params = KMeansParams {
                restarts: 50,
                ..KMeansParams::with_seed(rng.gen())
            };
            let model = kmeans(&m, 2, &params).unwrap();
            let best = exhaustive_two_means(&m);
            assert!(
                (model.inertia - best).abs() < 1e-9,
                "{} vs {best}",
                model.inertia
            );
        }
    }

    #[test]
    fn kmeans_errors() {
        let m = Points::new(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(kmeans(&m, 0, &KMeansParams::default()).is_err());
        assert!(kmeans(&m, 3, &KMeansParams::default()).is_err());
    }

    #[test]
    fn duplicate_points_more_clusters_than_distinct() {
        let m = Points::new(1, vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        let model = kmeans(&m, 3, &KMeansParams::with_seed(0)).unwrap();
        assert!(model.inertia.abs() < 1e-12);
        assert!((inertia_of(&m, &model) - model.inertia).abs() < 1e-12);
    }

    #[test]
    fn elbow_finds_four_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = blobs(
            &mut rng,
            &[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]],
            100,
            1.0,
        );
        let ks: Vec<usize> = (1..=10).collect();
        let curve = elbow_select(&m, &ks, &KMeansParams::with_seed(5)).unwrap();
        assert_eq!(curve.selected, 4);
        assert!(curve.inertias.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn elbow_single_k() {
        let m = Points::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let curve = elbow_select(&m, &[2], &KMeansParams::default()).unwrap();
        assert_eq!(curve.selected, 2);
        assert!(elbow_select(&m, &[2, 1], &KMeansParams::default()).is_err());
    }

    fn rec_at(x: f64, y: f64) -> LogRecord {
        LogRecord {
            index: 0,
            v_left: 0.0,
            v_right: 0.0,
            x0: x,
            y0: y,
            x1: x,
            y1: y,
            dx: 0.0,
            dy: 0.0,
            yaw: 0.0,
            sensors: [0.0; 16],
            stuck: false,
        }
    }

    #[test]
    fn nearest_wall_labels_and_ties() {
        let a = Arena::default();
        assert_eq!(nearest_wall(0.0, 4.0, &a), Wall::North);
        assert_eq!(nearest_wall(4.0, 0.0, &a), Wall::East);
        assert_eq!(nearest_wall(0.0, -4.0, &a), Wall::South);
        assert_eq!(nearest_wall(-4.0, 0.0, &a), Wall::West);
        assert_eq!(nearest_wall(0.0, 0.0, &a), Wall::North);
        assert_eq!(nearest_wall(3.0, -3.0, &a), Wall::East);
    }

    #[test]
    fn purity_examples() {
        let a = Arena::default();
        let recs: Vec<_> = [[0.0, 4.0], [4.0, 0.0], [0.0, -4.0], [-4.0, 0.0]]
            .iter()
            .cycle()
            .take(400)
            .map(|p| rec_at(p[0], p[1]))
            .collect();
        let labels: Vec<usize> = recs
            .iter()
            .map(|r| nearest_wall(r.x1, r.y1, &a).id())
            .collect();
        assert_eq!(wall_purity(&labels, &recs, &a).unwrap(), 1.0);
        assert_eq!(wall_purity(&vec![0; 400], &recs, &a).unwrap(), 0.25);
        assert!(wall_purity(&[0, 1], &recs, &a).is_err());
    }

    #[test]
    fn random_assignment_purity_band() {
        let a = Arena::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let recs: Vec<_> = [[0.0, 4.0], [4.0, 0.0], [0.0, -4.0], [-4.0, 0.0]]
            .iter()
            .cycle()
            .take(10_000)
            .map(|p| rec_at(p[0], p[1]))
            .collect();
        let labels: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..4)).collect();
        let p = wall_purity(&labels, &recs, &a).unwrap();
        assert!((0.25..=0.30).contains(&p), "{p}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn model_invariants(seed in any::<u64>(), n in 5usize..120, k in 1usize..6, exp in -3i32..6) {
            // power-of-two scaling keeps every float operation exact
            let scale = 2f64.powi(exp);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = k.min(n);
            let m = Points::new(3, (0..n * 3).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let params = KMeansParams { restarts: 3, tol: 0.0, max_iter: 100, ..KMeansParams::with_seed(seed) };
            let model = kmeans(&m, k, &params).unwrap();
            prop_assert!((inertia_of(&m, &model) - model.inertia).abs() < 1e-9);
            for (r, &a) in m.rows().zip(&model.assignments) {
                let own = sq_dist(r, model.centroids.row(a));
                for c in model.centroids.rows() {
                    prop_assert!(own <= sq_dist(r, c) + 1e-12);
                }
            }
            prop_assert!(model.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            prop_assert_eq!(&kmeans(&m, k, &params).unwrap(), &model);

            let scaled = Points::new(3, m.as_flat().iter().map(|v| v * scale).collect()).unwrap();
            let sm = kmeans(&scaled, k, &params).unwrap();
            prop_assert_eq!(&sm.assignments, &model.assignments);
            prop_assert!((sm.inertia - model.inertia * scale * scale).abs() <= 1e-6 * sm.inertia.max(1e-9));
        }
    }
}
