//! Neighborhoods of label space and their representatives.
//!
//! Continuous labels are clustered with Lloyd's algorithm (k-means++
//! seeding); finite label sets get one chart per distinct value. A label
//! belongs to the chart with the nearest representative, ties going to the
//! lowest index, so the charts partition the training labels.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::{Error, Result};

/// Upper bound on distinct values accepted by [`finite_charts`].
pub const MAX_FINITE_CHARTS: usize = 256;

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartMode {
    Continuous,
    Finite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartAtlas {
    pub reps: PointCloud,
    pub mode: ChartMode,
}

impl ChartAtlas {
    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn rep(&self, i: usize) -> &[f64] {
        self.reps.row(i)
    }

    pub fn assign(&self, y: &[f64]) -> usize {
        assign(y, &self.reps)
    }

    /// Row indices of `labels` grouped by chart.
    pub fn partition(&self, labels: &PointCloud) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.len()];
        for (i, y) in labels.rows().enumerate() {
            groups[self.assign(y)].push(i);
        }
        groups
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `reps`; ties go to the lowest index.
pub fn assign(y: &[f64], reps: &PointCloud) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, r) in reps.rows().enumerate() {
        let d = sq_dist(y, r);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn distinct_rows(labels: &PointCloud) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = labels.rows().map(<[f64]>::to_vec).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.dedup();
    rows
}

/// One chart per distinct label, representatives sorted lexicographically.
pub fn finite_charts(labels: &PointCloud) -> Result<ChartAtlas> {
    if labels.is_empty() {
        return Err(Error::Clustering("no labels".into()));
    }
    let rows = distinct_rows(labels);
    if rows.len() > MAX_FINITE_CHARTS {
        return Err(Error::Clustering(format!(
            "{} distinct labels exceeds {MAX_FINITE_CHARTS}; use continuous (k-means) charts",
            rows.len()
        )));
    }
    Ok(ChartAtlas {
        reps: PointCloud::from_rows(&rows)?,
        mode: ChartMode::Finite,
    })
}

/// Outcome of one Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: PointCloud,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub objective: Vec<f64>,
    pub converged: bool,
}

fn plus_plus_seed(points: &PointCloud, q: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = points.rows().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < q {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(rng),
            // all remaining mass is zero: take the first point not already a center
            Err(_) => (0..n)
                .find(|&i| centers.iter().all(|c| c.as_slice() != points.row(i)))
                .unwrap_or(0),
        };
        let c = points.row(next).to_vec();
        for (d, p) in nearest.iter_mut().zip(points.rows()) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd iterations from k-means++ seeds. Stops at an assignment fixed
/// point or after `max_iter` rounds. An empty cluster is re-seeded at the
/// point farthest from its current centroid.
pub fn lloyd(points: &PointCloud, q: usize, seed: u64, max_iter: usize) -> Result<LloydRun> {
    let distinct = distinct_rows(points).len();
    if q == 0 || q > distinct {
        return Err(Error::Clustering(format!(
            "cannot form {q} clusters from {distinct} distinct points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points.dim();
    let mut centroids = plus_plus_seed(points, q, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        let reps = PointCloud::from_rows(&centroids)?;
        let next: Vec<usize> = points.rows().map(|p| assign(p, &reps)).collect();
        let changed = next != assignment;
        assignment = next;
        objective.push(
            points
                .rows()
                .zip(&assignment)
                .map(|(p, &c)| sq_dist(p, &centroids[c]))
                .sum(),
        );
        if !changed {
            converged = true;
            break;
        }

        let mut sums = vec![vec![0.0; dim]; q];
        let mut counts = vec![0usize; q];
        for (p, &c) in points.rows().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..q {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..q {
            if counts[c] == 0 {
                let far = points
                    .rows()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assignment[i]])))
                    .fold(
                        (0, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    )
                    .0;
                centroids[c] = points.row(far).to_vec();
                // the far point now belongs to c, so it no longer counts as far
                assignment[far] = c;
                counts[c] = 1;
            }
        }
    }
    Ok(LloydRun {
        centroids: PointCloud::from_rows(&centroids)?,
        assignment,
        objective,
        converged,
    })
}

/// k-means charts over continuous labels.
pub fn kmeans(labels: &PointCloud, q: usize, seed: u64, max_iter: usize) -> Result<ChartAtlas> {
    let run = lloyd(labels, q, seed, max_iter)?;
    Ok(ChartAtlas {
        reps: run.centroids,
        mode: ChartMode::Continuous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_labels(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                [4.5 * t.cos(), 4.5 * t.sin()]
            })
            .collect();
        PointCloud::from_rows(&rows).unwrap()
    }

    fn wcss(points: &PointCloud, reps: &PointCloud) -> f64 {
        points
            .rows()
            .map(|p| sq_dist(p, reps.row(assign(p, reps))))
            .sum()
    }

    /// Plain Lloyd from uniformly drawn distinct seeds, written separately
    /// from the implementation under test.
    fn naive_lloyd(points: &PointCloud, q: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = rand::seq::index::sample(&mut rng, points.len(), q);
        let mut cents: Vec<Vec<f64>> = idx.iter().map(|i| points.row(i).to_vec()).collect();
        for _ in 0..500 {
            let mut sums = vec![vec![0.0; points.dim()]; q];
            let mut counts = vec![0.0; q];
            for p in points.rows() {
                let (best, _) = cents
                    .iter()
                    .enumerate()
                    .map(|(c, m)| (c, sq_dist(p, m)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                counts[best] += 1.0;
                for (s, v) in sums[best].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..q {
                if counts[c] > 0.0 {
                    cents[c] = sums[c].iter().map(|s| s / counts[c]).collect();
                }
            }
        }
        wcss(points, &PointCloud::from_rows(&cents).unwrap())
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let labels = PointCloud::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]]).unwrap();
        let atlas = kmeans(&labels, 1, 0, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(atlas.reps.data(), &[2.0, 1.0]);
    }

    #[test]
    fn two_separated_pairs() {
        let labels =
            PointCloud::from_rows(&[[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [9.9, 0.0]]).unwrap();
        let atlas = kmeans(&labels, 2, 3, DEFAULT_MAX_ITER).unwrap();
        let mut xs: Vec<f64> = atlas.reps.rows().map(|r| r[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.05).abs() < 1e-12 && (xs[1] - 9.95).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let labels = PointCloud::from_rows(&[[1.0], [1.0], [2.0]]).unwrap();
        assert!(kmeans(&labels, 3, 0, 10).is_err());
        assert!(kmeans(&labels, 2, 0, 10).is_ok());
    }

    #[test]
    fn torus_base_circle_25_charts() {
        let labels = circle_labels(1000, 7);
        let run = lloyd(&labels, 25, 7, DEFAULT_MAX_ITER).unwrap();
        let atlas = ChartAtlas {
            reps: run.centroids.clone(),
            mode: ChartMode::Continuous,
        };
        assert!(atlas.partition(&labels).iter().all(|g| !g.is_empty()));
        let ours = wcss(&labels, &run.centroids);
        let oracle = (0..10)
            .map(|s| naive_lloyd(&labels, 25, 100 + s))
            .fold(f64::INFINITY, f64::min);
        assert!(ours <= oracle * 1.05, "ours {ours}, oracle {oracle}");
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..5 {
            let labels = circle_labels(300, seed);
            let run = lloyd(&labels, 12, seed, DEFAULT_MAX_ITER).unwrap();
            for w in run.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", run.objective);
            }
        }
    }

    #[test]
    fn empty_cluster_gets_reseeded() {
        // duplicate-heavy data: seeding can land two centers that later
        // lose all points; every cluster must still end up nonempty
        let mut rows = vec![[0.0, 0.0]; 20];
        rows.extend(vec![[1.0, 0.0]; 20]);
        rows.extend([[5.0, 5.0], [5.0, 6.0], [9.0, 9.0]]);
        let labels = PointCloud::from_rows(&rows).unwrap();
        for seed in 0..20 {
            let run = lloyd(&labels, 5, seed, DEFAULT_MAX_ITER).unwrap();
            let mut counts = [0; 5];
            for &a in &run.assignment {
                counts[a] += 1;
            }
            assert!(counts.iter().all(|&c| c > 0), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn finite_charts_sorted_and_counted() {
        let labels =
            PointCloud::from_rows(&[[1.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
                .unwrap();
        let atlas = finite_charts(&labels).unwrap();
        assert_eq!(atlas.len(), 4);
        assert_eq!(atlas.reps.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let single = finite_charts(&PointCloud::from_rows(&[[3.0], [3.0]]).unwrap()).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn finite_charts_reject_continuous_labels() {
        let labels = PointCloud::new(1, (0..300).map(f64::from).collect()).unwrap();
        let err = finite_charts(&labels).unwrap_err();
        assert!(err.to_string().contains("continuous"));
    }

    #[test]
    fn assignment_rules() {
        let reps = PointCloud::from_rows(&[[0.0], [2.0], [4.0], [6.0]]).unwrap();
        assert_eq!(assign(&[6.0], &reps), 3);
        assert_eq!(assign(&[1.0], &reps), 0); // tie between 0 and 1
        for i in 0..reps.len() {
            assert_eq!(assign(reps.row(i), &reps), i);
        }
    }

    #[test]
    fn partition_matches_linear_scan() {
        let labels = circle_labels(500, 1);
        let atlas = kmeans(&labels, 25, 1, DEFAULT_MAX_ITER).unwrap();
        let groups = atlas.partition(&labels);
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), labels.len());
        for (c, g) in groups.iter().enumerate() {
            for &i in g {
                let y = labels.row(i);
                let dists: Vec<f64> = atlas.reps.rows().map(|r| sq_dist(y, r)).collect();
                let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                let first = dists.iter().position(|&d| d == min).unwrap();
                assert_eq!(first, c);
            }
        }
    }
}
