//! Exact k-nearest-neighbour search over a static KD-tree, and the
//! sensor-space locality analysis built on it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::Rng;

use crate::dataset::{normalize_sensors, LogRecord};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::points::{dist, sq_dist, Points};

const LEAF_SIZE: usize = 8;

/// Static KD-tree. The tree is implicit in `order`: every subrange
/// `[lo, hi)` longer than a leaf stores its splitting point at the middle
/// position, smaller-coordinate points before it and larger after.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Points,
    order: Vec<usize>,
    split_axis: Vec<u8>,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    sq: f64,
    index: usize,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.sq
            .total_cmp(&other.sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

impl SpatialIndex {
    pub fn build(points: Points) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("cannot index an empty point set"));
        }
        if !points.all_finite() {
            return Err(invalid("points must be finite"));
        }
        let n = points.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut split_axis = vec![0u8; n];
        build_range(&points, &mut order, &mut split_axis);
        Ok(Self {
            points,
            order,
            split_axis,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::build(Points::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    /// The `k` nearest stored points as (index, distance), ascending by
    /// distance with ties broken by lower index.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim() {
            return Err(invalid(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim()
            )));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(invalid("query must be finite"));
        }
        if k == 0 || k > self.len() {
            return Err(invalid(format!("k must be in 1..={}, got {k}", self.len())));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, 0, self.len(), &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        Ok(out.into_iter().map(|c| (c.index, c.sq.sqrt())).collect())
    }

    fn offer(&self, query: &[f64], index: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let cand = Candidate {
            sq: sq_dist(query, self.points.row(index)),
            index,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap holds k items") {
            heap.pop();
            heap.push(cand);
        }
    }

    fn search(
        &self,
        query: &[f64],
        k: usize,
        lo: usize,
        hi: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                self.offer(query, i, k, heap);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid];
        let axis = self.split_axis[mid] as usize;
        let diff = query[axis] - self.points.row(pivot)[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(query, k, near.0, near.1, heap);
        self.offer(query, pivot, k, heap);
        // `<=` keeps equal-distance points with lower indices reachable.
        if heap.len() < k || diff * diff <= heap.peek().expect("non-empty").sq {
            self.search(query, k, far.0, far.1, heap);
        }
    }
}

fn widest_axis(points: &Points, idx: &[usize]) -> usize {
    let dim = points.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &i in idx {
        for (d, &v) in points.row(i).iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    (0..dim)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}

fn build_range(points: &Points, order: &mut [usize], axes: &mut [u8]) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    let axis = widest_axis(points, order);
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points.row(a)[axis]
            .total_cmp(&points.row(b)[axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build_range(points, left, left_axes);
    build_range(points, &mut rest[1..], &mut rest_axes[1..]);
}

/// Sensor-space neighbourhoods versus physical proximity.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityReport {
    /// Record indices of the sampled anchors.
    pub anchors: Vec<u64>,
    /// Record indices of each anchor's sensor-space neighbours.
    pub neighbors: Vec<Vec<u64>>,
    /// Mean physical distance from each anchor to its neighbours.
    pub anchor_means: Vec<f64>,
    /// Mean physical distance over random record pairs.
    pub baseline: f64,
    pub ratio: f64,
}

/// Compare the physical spread of sensor-space neighbours with the spread
/// of random record pairs. Values near 0 mean sensor similarity implies
/// physical proximity; near 1 means it carries no positional information.
pub fn locality_ratio<R: Rng + ?Sized>(
    records: &[LogRecord],
    k: usize,
    n_anchors: usize,
    rng: &mut R,
) -> Result<LocalityReport> {
    let n = records.len();
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if n <= k {
        return Err(invalid(format!("need more than k={k} records, have {n}")));
    }
    if n_anchors == 0 || n_anchors > n {
        return Err(invalid(format!(
            "n_anchors must be in 1..={n}, got {n_anchors}"
        )));
    }

    let mut sorted: Vec<&LogRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let sorted_records: Vec<LogRecord> = sorted.iter().map(|r| (*r).clone()).collect();
    let normalized = normalize_sensors(&sorted_records)?;
    let index = SpatialIndex::build(normalized.matrix)?;

    let anchor_pos = sample(rng, n, n_anchors).into_vec();
    let per_anchor = par::map_slice(&anchor_pos, |&a| -> Result<(Vec<usize>, f64)> {
        let found = index.knn(index.points().row(a), k + 1)?;
        let nbrs: Vec<usize> = found
            .into_iter()
            .map(|(i, _)| i)
            .filter(|&i| i != a)
            .take(k)
            .collect();
        let here = sorted[a].end();
        let mean = nbrs
            .iter()
            .map(|&i| dist(&here, &sorted[i].end()))
            .sum::<f64>()
            / k as f64;
        Ok((nbrs, mean))
    });

    let mut anchors = Vec::with_capacity(n_anchors);
    let mut neighbors = Vec::with_capacity(n_anchors);
    let mut anchor_means = Vec::with_capacity(n_anchors);
    for (&a, res) in anchor_pos.iter().zip(per_anchor) {
        let (nbrs, mean) = res?;
        anchors.push(sorted[a].index);
        neighbors.push(nbrs.iter().map(|&i| sorted[i].index).collect());
        anchor_means.push(mean);
    }

    let pairs = n_anchors * k;
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += dist(&sorted[i].end(), &sorted[j].end());
    }
    let baseline = total / pairs as f64;
    if baseline <= 0.0 {
        return Err(Error::Degenerate(
            "all sampled record pairs share one position".into(),
        ));
    }
    let ratio = anchor_means.iter().sum::<f64>() / n_anchors as f64 / baseline;
    Ok(LocalityReport {
        anchors,
        neighbors,
        anchor_means,
        baseline,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &Points, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points.rows().map(|r| sq_dist(q, r)).zip(0..).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(d, i)| (i, d.sqrt())).collect()
    }

    fn random_points(rng: &mut impl Rng, n: usize, dim: usize) -> Points {
        Points::new(dim, (0..n * dim).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn single_point_index() {
        let idx = SpatialIndex::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.knn(&[0.0, 0.0], 1).unwrap()[0].0, 0);
    }

    #[test]
    fn build_errors() {
        assert!(SpatialIndex::from_rows::<[f64; 2]>(&[]).is_err());
        let mixed: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(SpatialIndex::from_rows(&mixed).is_err());
        assert!(SpatialIndex::from_rows(&[[f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn knn_errors() {
        let idx = SpatialIndex::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(idx.knn(&[0.0, 0.0], 0).is_err());
        assert!(idx.knn(&[0.0, 0.0], 3).is_err());
        assert!(idx.knn(&[0.0], 1).is_err());
    }

    #[test]
    fn thousand_points_sixteen_dims_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 1000, 16);
        let idx = SpatialIndex::build(pts.clone()).unwrap();
        for i in 0..1000 {
            assert_eq!(
                idx.knn(pts.row(i), 10).unwrap(),
                brute_knn(&pts, pts.row(i), 10)
            );
        }
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let rows = [[0.5, 0.5], [3.0, 3.0], [0.5, 0.5], [0.5, 0.5]];
        let idx = SpatialIndex::from_rows(&rows).unwrap();
        let got = idx.knn(&[0.5, 0.5], 2).unwrap();
        assert_eq!(got, vec![(0, 0.0), (2, 0.0)]);
        let all = idx.knn(&[0.0, 0.0], 4).unwrap();
        assert_eq!(
            all.iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![0, 2, 3, 1]
        );
    }

    #[test]
    fn lattice_ties_match_scan() {
        // integer lattice produces many exactly equal distances
        let rows: Vec<[f64; 2]> = (0..900)
            .map(|i| [(i % 30) as f64, (i / 30) as f64])
            .collect();
        let pts = Points::from_rows(&rows).unwrap();
        let idx = SpatialIndex::build(pts.clone()).unwrap();
        for q in [[10.0, 10.0], [0.5, 0.5], [29.0, 0.0], [14.5, 7.0]] {
            for k in [1, 4, 5, 9, 13, 40] {
                assert_eq!(idx.knn(&q, k).unwrap(), brute_knn(&pts, &q, k));
            }
        }
    }

    #[test]
    fn k_equals_n_sorts_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 57, 3);
        let idx = SpatialIndex::build(pts.clone()).unwrap();
        let got = idx.knn(&[0.2, 0.4, 0.6], 57).unwrap();
        assert_eq!(got, brute_knn(&pts, &[0.2, 0.4, 0.6], 57));
    }

    fn synthetic(rng: &mut impl Rng, n: usize, identity: bool) -> Vec<LogRecord> {
        (0..n as u64)
            .map(|i| {
                let x = rng.gen_range(-4.75..4.75);
                let y = rng.gen_range(-4.75..4.75);
                let mut sensors = [0.0; 16];
                if identity {
                    sensors[0] = x;
                    sensors[1] = y;
                } else {
                    for s in &mut sensors {
                        *s = rng.gen();
                    }
                }
                LogRecord {
                    index: i,
                    v_left: 0.0,
                    v_right: 0.0,
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                    dx: 0.0,
                    dy: 0.0,
                    yaw: 0.0,
                    sensors,
                    stuck: true,
                }
            })
            .collect()
    }

    #[test]
    fn identity_embedding_is_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs = synthetic(&mut rng, 10_000, true);
        let rep = locality_ratio(&recs, 10, 200, &mut rng).unwrap();
        assert!(rep.ratio <= 0.1, "ratio {}", rep.ratio);
        assert_eq!(rep.neighbors.len(), 200);
        assert!(rep.neighbors.iter().all(|n| n.len() == 10));
        assert!(rep
            .anchors
            .iter()
            .zip(&rep.neighbors)
            .all(|(a, n)| !n.contains(a)));
    }

    #[test]
    fn noise_embedding_is_not_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let recs = synthetic(&mut rng, 10_000, false);
        let rep = locality_ratio(&recs, 10, 200, &mut rng).unwrap();
        assert!((0.9..=1.1).contains(&rep.ratio), "ratio {}", rep.ratio);
    }

    #[test]
    fn locality_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs = synthetic(&mut rng, 50, true);
        assert!(locality_ratio(&recs, 0, 5, &mut rng).is_err());
        assert!(locality_ratio(&recs, 50, 5, &mut rng).is_err());
        assert!(locality_ratio(&recs, 5, 0, &mut rng).is_err());
    }

    #[test]
    fn locality_ignores_record_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let recs = synthetic(&mut rng, 2000, true);
        let mut shuffled = recs.clone();
        shuffled.reverse();
        shuffled.swap(3, 1000);
        let a = locality_ratio(&recs, 5, 40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = locality_ratio(&shuffled, 5, 40, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn knn_equals_linear_scan(
            seed in any::<u64>(), n in 1usize..2000, high_dim in any::<bool>(), k_frac in 0.0f64..1.0
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = if high_dim { 16 } else { 2 };
            let pts = random_points(&mut rng, n, dim);
            let idx = SpatialIndex::build(pts.clone()).unwrap();
            let k = 1 + ((n - 1) as f64 * k_frac * 0.05) as usize;
            for _ in 0..5 {
                let q: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
                prop_assert_eq!(idx.knn(&q, k).unwrap(), brute_knn(&pts, &q, k));
            }
        }
    }
}
