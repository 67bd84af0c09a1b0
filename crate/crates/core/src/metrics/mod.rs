//! Two-sample discrepancies between point clouds.

pub mod assignment;
pub mod sinkhorn;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::tensor::pairwise_sq_dists_raw;
use crate::{Error, Result};

pub use sinkhorn::SinkhornParams;

/// Squared distances are floored at this value before logs and roots
/// (a distance floor of 1e-12).
pub const SQ_DIST_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median of the pooled pairwise distances.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WassersteinMethod {
    /// Exact up to `exact_threshold` points, entropic above.
    Auto,
    Exact,
    Entropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub knn_k: usize,
    pub mmd_bandwidth: Bandwidth,
    pub wasserstein_method: WassersteinMethod,
    pub entropic_blur: f64,
    pub exact_threshold: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            knn_k: 5,
            mmd_bandwidth: Bandwidth::Median,
            wasserstein_method: WassersteinMethod::Auto,
            entropic_blur: 0.05,
            exact_threshold: 512,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Config("metrics.knn_k must be at least 1".into()));
        }
        if !(self.entropic_blur > 0.0) {
            return Err(Error::Config(
                "metrics.entropic_blur must be positive".into(),
            ));
        }
        if let Bandwidth::Fixed(s) = self.mmd_bandwidth {
            if !(s > 0.0) {
                return Err(Error::Config(
                    "metrics.mmd_bandwidth must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "MSMD")]
    Msmd,
    #[serde(rename = "MMD")]
    Mmd,
    #[serde(rename = "KL-fwd")]
    KlFwd,
    #[serde(rename = "KL-bwd")]
    KlBwd,
    #[serde(rename = "W1")]
    W1,
    #[serde(rename = "W2")]
    W2,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Msmd,
        Metric::Mmd,
        Metric::KlFwd,
        Metric::KlBwd,
        Metric::W1,
        Metric::W2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Msmd => "MSMD",
            Metric::Mmd => "MMD",
            Metric::KlFwd => "KL-fwd",
            Metric::KlBwd => "KL-bwd",
            Metric::W1 => "W1",
            Metric::W2 => "W2",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_pair(metric: &'static str, a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric {
            metric,
            detail: "empty point cloud".into(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::Metric {
            metric,
            detail: format!("dimension mismatch: {} vs {}", a.dim(), b.dim()),
        });
    }
    Ok(())
}

fn sq_dists_from(p: &[f64], cloud: &PointCloud) -> Vec<f64> {
    pairwise_sq_dists_raw(p, cloud.data(), cloud.dim())
}

fn kth_smallest(mut v: Vec<f64>, k: usize) -> f64 {
    let (_, x, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    *x
}

/// Mean over `s1` of the squared distance to the nearest point of `s2`.
pub fn msmd(s1: &PointCloud, s2: &PointCloud) -> Result<f64> {
    check_pair("MSMD", s1, s2)?;
    let total: f64 = s1
        .rows()
        .map(|p| {
            sq_dists_from(p, s2)
                .into_iter()
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / s1.len() as f64)
}

/// k-nearest-neighbor estimate of `KL(P ‖ Q)` from samples.
pub fn knn_kl(p: &PointCloud, q: &PointCloud, k: usize) -> Result<f64> {
    check_pair("KL", p, q)?;
    let (n, m, d) = (p.len(), q.len(), p.dim());
    if k == 0 || n <= k || m < k {
        return Err(Error::Metric {
            metric: "KL",
            detail: format!("need n > k and m >= k, got n = {n}, m = {m}, k = {k}"),
        });
    }
    let mut acc = 0.0;
    for (i, pi) in p.rows().enumerate() {
        let mut within = sq_dists_from(pi, p);
        within.swap_remove(i);
        let rho2 = kth_smallest(within, k).max(SQ_DIST_FLOOR);
        let nu2 = kth_smallest(sq_dists_from(pi, q), k).max(SQ_DIST_FLOOR);
        acc += 0.5 * (nu2.ln() - rho2.ln());
    }
    Ok(d as f64 / n as f64 * acc + (m as f64 / (n - 1) as f64).ln())
}

/// Median of all pairwise distances within the pooled clouds.
pub fn median_heuristic(s1: &PointCloud, s2: &PointCloud) -> f64 {
    let pooled: Vec<&[f64]> = s1.rows().chain(s2.rows()).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for (i, a) in pooled.iter().enumerate() {
        for b in &pooled[i + 1..] {
            d.push(
                a.iter()
                    .zip(*b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>(),
            );
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if d.len() % 2 == 1 {
        upper.sqrt()
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower.sqrt() + upper.sqrt())
    }
}

fn mean_kernel(a: &PointCloud, b: &PointCloud, inv_two_sigma2: f64) -> f64 {
    let total: f64 = a
        .rows()
        .map(|p| {
            sq_dists_from(p, b)
                .into_iter()
                .map(|d| (-d * inv_two_sigma2).exp())
                .sum::<f64>()
        })
        .sum();
    total / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) squared MMD with a Gaussian kernel.
pub fn mmd(s1: &PointCloud, s2: &PointCloud, bandwidth: Bandwidth) -> Result<f64> {
    check_pair("MMD", s1, s2)?;
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => median_heuristic(s1, s2),
    }
    .max(1e-12);
    let c = 1.0 / (2.0 * sigma * sigma);
    Ok(mean_kernel(s1, s1, c) + mean_kernel(s2, s2, c) - 2.0 * mean_kernel(s1, s2, c))
}

/// Optimal-assignment `W_p` between equal-size clouds.
pub fn wasserstein_exact(s1: &PointCloud, s2: &PointCloud, p: u32) -> Result<f64> {
    check_wasserstein(s1, s2, p)?;
    let n = s1.len();
    let mut cost = pairwise_sq_dists_raw(s1.data(), s2.data(), s1.dim());
    if p == 1 {
        for c in &mut cost {
            *c = c.sqrt();
        }
    }
    let total = assignment::min_cost(&cost, n);
    Ok((total / n as f64).max(0.0).powf(1.0 / p as f64))
}

/// `W_p` approximated by the debiased Sinkhorn divergence at `blur`.
pub fn wasserstein_entropic(s1: &PointCloud, s2: &PointCloud, p: u32, blur: f64) -> Result<f64> {
    check_wasserstein(s1, s2, p)?;
    let params = SinkhornParams {
        blur,
        ..SinkhornParams::default()
    };
    Ok(sinkhorn::divergence(s1, s2, p, &params)
        .max(0.0)
        .powf(1.0 / p as f64))
}

fn check_wasserstein(s1: &PointCloud, s2: &PointCloud, p: u32) -> Result<()> {
    check_pair("W", s1, s2)?;
    if s1.len() != s2.len() {
        return Err(Error::Metric {
            metric: "W",
            detail: format!(
                "clouds must have equal sizes, got {} and {}; resample first",
                s1.len(),
                s2.len()
            ),
        });
    }
    if p != 1 && p != 2 {
        return Err(Error::Metric {
            metric: "W",
            detail: format!("p must be 1 or 2, got {p}"),
        });
    }
    Ok(())
}

pub fn wasserstein(s1: &PointCloud, s2: &PointCloud, p: u32, config: &MetricConfig) -> Result<f64> {
    let exact = match config.wasserstein_method {
        WassersteinMethod::Exact => true,
        WassersteinMethod::Entropic => false,
        WassersteinMethod::Auto => s1.len() <= config.exact_threshold,
    };
    if exact {
        wasserstein_exact(s1, s2, p)
    } else {
        wasserstein_entropic(s1, s2, p, config.entropic_blur)
    }
}

/// One metric of a generated cloud against a reference cloud.
pub fn compute(
    metric: Metric,
    generated: &PointCloud,
    reference: &PointCloud,
    config: &MetricConfig,
) -> Result<f64> {
    match metric {
        Metric::Msmd => msmd(generated, reference),
        Metric::Mmd => mmd(generated, reference, config.mmd_bandwidth),
        Metric::KlFwd => knn_kl(reference, generated, config.knn_k),
        Metric::KlBwd => knn_kl(generated, reference, config.knn_k),
        Metric::W1 => wasserstein(generated, reference, 1, config),
        Metric::W2 => wasserstein(generated, reference, 2, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: &[f64], rng: &mut impl Rng) -> PointCloud {
        let data = (0..n * d)
            .map(|i| {
                let e: f64 = StandardNormal.sample(rng);
                e + shift[i % d]
            })
            .collect();
        PointCloud::new(d, data).unwrap()
    }

    fn uniform(n: usize, d: usize, scale: f64, rng: &mut impl Rng) -> PointCloud {
        PointCloud::new(
            d,
            (0..n * d).map(|_| rng.random_range(0.0..scale)).collect(),
        )
        .unwrap()
    }

    fn brute_force_w(a: &PointCloud, b: &PointCloud, p: i32) -> f64 {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for perm in permutations(n - 1) {
                for pos in 0..=perm.len() {
                    let mut p = perm.clone();
                    p.insert(pos, n - 1);
                    out.push(p);
                }
            }
            out
        }
        let n = a.len();
        let best = permutations(n)
            .into_iter()
            .map(|perm| {
                (0..n)
                    .map(|i| {
                        let d: f64 = a
                            .row(i)
                            .iter()
                            .zip(b.row(perm[i]))
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt();
                        d.powi(p)
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        (best / n as f64).powf(1.0 / p as f64)
    }

    #[test]
    fn msmd_examples() {
        let origin = PointCloud::from_rows(&[[0.0, 0.0]]).unwrap();
        let far = PointCloud::from_rows(&[[3.0, 4.0], [6.0, 8.0]]).unwrap();
        assert_eq!(msmd(&origin, &far).unwrap(), 25.0);
        let pair = PointCloud::from_rows(&[[0.0, 0.0], [100.0, 0.0]]).unwrap();
        assert_eq!(msmd(&origin, &pair).unwrap(), 0.0);
        assert_eq!(msmd(&pair, &origin).unwrap(), 5000.0);
        assert_eq!(msmd(&pair, &pair).unwrap(), 0.0);
        assert!(msmd(&PointCloud::empty(2), &pair).is_err());
    }

    #[test]
    fn knn_kl_hand_example() {
        // rho = (1, 1); nu = (floor, 1)
        let p = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        let q = PointCloud::from_rows(&[[0.0]]).unwrap();
        let got = knn_kl(&p, &q, 1).unwrap();
        let expected = 0.5 * 1e-12f64.ln();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn knn_kl_requires_enough_points() {
        let p = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(knn_kl(&p, &p, 2).is_err());
        assert!(knn_kl(&p, &PointCloud::from_rows(&[[0.0]]).unwrap(), 2).is_err());
    }

    #[test]
    fn knn_kl_self_divergence_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = gaussian(800, 2, &[0.0, 0.0], &mut rng);
        let q = gaussian(800, 2, &[0.0, 0.0], &mut rng);
        assert!(knn_kl(&p, &q, 5).unwrap().abs() < 0.15);
    }

    #[test]
    fn knn_kl_shifted_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = gaussian(2000, 1, &[0.0], &mut rng);
        let q = gaussian(2000, 1, &[1.0], &mut rng);
        let est = knn_kl(&p, &q, 5).unwrap();
        assert!((est - 0.5).abs() < 0.15, "{est}");
    }

    #[test]
    fn knn_kl_handles_duplicates() {
        let p = PointCloud::from_rows(&[[1.0, 1.0]; 8]).unwrap();
        let v = knn_kl(&p, &p, 3).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn mmd_self_is_exactly_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian(100, 2, &[0.0, 0.0], &mut rng);
        let b = gaussian(80, 2, &[1.0, 0.0], &mut rng);
        assert_eq!(mmd(&a, &a, Bandwidth::Median).unwrap(), 0.0);
        let ab = mmd(&a, &b, Bandwidth::Median).unwrap();
        let ba = mmd(&b, &a, Bandwidth::Median).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }

    #[test]
    fn mmd_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian(500, 2, &[0.0, 0.0], &mut rng);
        let b = gaussian(500, 2, &[5.0, 0.0], &mut rng);
        let k =
            |x: &[f64], y: &[f64]| (-((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)) / 2.0).exp();
        let mean = |s: &PointCloud, t: &PointCloud| {
            let mut acc = 0.0;
            for i in 0..s.len() {
                for j in 0..t.len() {
                    acc += k(s.row(i), t.row(j));
                }
            }
            acc / (s.len() * t.len()) as f64
        };
        let oracle = mean(&a, &a) + mean(&b, &b) - 2.0 * mean(&a, &b);
        let got = mmd(&a, &b, Bandwidth::Fixed(1.0)).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn median_heuristic_small_example() {
        // pooled distances: 1, 2, 3 (0-1, 1-3, 0-3)
        let a = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        let b = PointCloud::from_rows(&[[3.0]]).unwrap();
        assert!((median_heuristic(&a, &b) - 2.0).abs() < 1e-12);
        // four points on a line: distances 1,1,1,2,2,3 -> median 1.5
        let c = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        let d = PointCloud::from_rows(&[[2.0], [3.0]]).unwrap();
        assert!((median_heuristic(&c, &d) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn exact_w_single_points() {
        let a = PointCloud::from_rows(&[[0.0]]).unwrap();
        let b = PointCloud::from_rows(&[[3.0]]).unwrap();
        assert_eq!(wasserstein_exact(&a, &b, 1).unwrap(), 3.0);
        assert_eq!(wasserstein_exact(&a, &b, 2).unwrap(), 3.0);
        assert_eq!(wasserstein_exact(&b, &b, 2).unwrap(), 0.0);
    }

    #[test]
    fn exact_w_matches_permutation_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let a = uniform(8, 3, 5.0, &mut rng);
            let b = uniform(8, 3, 5.0, &mut rng);
            for p in [1, 2] {
                let got = wasserstein_exact(&a, &b, p).unwrap();
                let oracle = brute_force_w(&a, &b, p as i32);
                assert!((got - oracle).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wasserstein_rejects_unequal_sizes() {
        let a = PointCloud::from_rows(&[[0.0], [1.0]]).unwrap();
        let b = PointCloud::from_rows(&[[3.0]]).unwrap();
        let err = wasserstein(&a, &b, 1, &MetricConfig::default()).unwrap_err();
        assert!(err.to_string().contains("resample"));
    }

    #[test]
    fn entropic_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (p, n) in [(1, 64), (2, 64), (1, 256), (2, 256)] {
            let a = uniform(n, 2, 7.0, &mut rng);
            let b = uniform(n, 2, 7.0, &mut rng);
            let exact = wasserstein_exact(&a, &b, p).unwrap();
            let entropic = wasserstein_entropic(&a, &b, p, 0.01).unwrap();
            let rel = (entropic - exact).abs() / exact.max(0.1);
            assert!(rel < 0.05, "p={p}: exact {exact}, entropic {entropic}");
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(Metric::from_name(m.name()), Some(m));
        }
        assert_eq!(Metric::from_name("w1"), Some(Metric::W1));
        assert_eq!(serde_json::to_string(&Metric::KlFwd).unwrap(), "\"KL-fwd\"");
    }
}
