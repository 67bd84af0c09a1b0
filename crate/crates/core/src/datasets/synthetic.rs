//! Surfaces in ℝ³ fibered over a circle, plus the oval target.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Torus,
    Moebius,
    SlicedTorus,
    Oval,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "torus" => Ok(Self::Torus),
            "moebius" | "mobius" | "möbius" => Ok(Self::Moebius),
            "sliced_torus" | "sliced" => Ok(Self::SlicedTorus),
            "oval" => Ok(Self::Oval),
            other => Err(Error::Config(format!(
                "unknown dataset kind {other:?} (expected torus, moebius, sliced_torus or oval)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Torus => "torus",
            Self::Moebius => "moebius",
            Self::SlicedTorus => "sliced_torus",
            Self::Oval => "oval",
        }
    }
}

/// For the oval, `r` and `big_r` are the semi-axes `b` and `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub r: f64,
    pub big_r: f64,
    pub base_radius: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Torus,
            r: 2.0,
            big_r: 8.0,
            base_radius: 4.5,
            n: 1000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SyntheticKind::Oval => self.r > 0.0 && self.big_r > 0.0,
            _ => self.r > 0.0 && self.r < self.big_r,
        };
        if !ok {
            return Err(Error::Config(format!(
                "invalid radii r = {}, R = {} for {}",
                self.r,
                self.big_r,
                self.kind.name()
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.base_radius > 0.0) {
            return Err(Error::Config("base_radius must be positive".into()));
        }
        Ok(())
    }

    pub fn label(&self, angle: f64) -> [f64; 2] {
        [
            self.base_radius * angle.cos(),
            self.base_radius * angle.sin(),
        ]
    }
}

/// Angle of a label on the base circle, in `[0, 2π)`.
pub fn label_angle(y: &[f64]) -> f64 {
    y[1].atan2(y[0]).rem_euclid(TAU)
}

pub fn torus_point(phi: f64, theta: f64, r: f64, big_r: f64) -> [f64; 3] {
    let ring = big_r + r * theta.cos();
    [ring * phi.cos(), ring * phi.sin(), r * theta.sin()]
}

/// Unit direction of the segment through the center line at angle `theta`:
/// the inward radial vector tilted out of the plane by `theta / 2` around
/// the circle's tangent.
pub fn moebius_direction(theta: f64) -> [f64; 3] {
    let half = theta / 2.0;
    [
        -half.cos() * theta.cos(),
        -half.cos() * theta.sin(),
        half.sin(),
    ]
}

pub fn moebius_point(theta: f64, s: f64, big_r: f64) -> [f64; 3] {
    let d = moebius_direction(theta);
    [
        big_r * theta.cos() + s * d[0],
        big_r * theta.sin() + s * d[1],
        s * d[2],
    ]
}

pub fn sliced_radius(phi: f64, r: f64) -> f64 {
    r * (phi.rem_euclid(TAU) / 2.0).sin()
}

pub fn sliced_torus_point(phi: f64, theta: f64, r: f64, big_r: f64) -> [f64; 3] {
    torus_point(phi, theta, sliced_radius(phi, r), big_r)
}

pub fn oval_point(t: f64, a: f64, b: f64) -> [f64; 2] {
    [a * t.cos(), b * t.sin()]
}

fn angle(rng: &mut impl Rng) -> f64 {
    rng.random_range(0.0..TAU)
}

/// θ drawn from the density ∝ `(R + r cos θ)` (surface-uniform torus).
fn surface_theta(r: f64, big_r: f64, rng: &mut impl Rng) -> f64 {
    loop {
        let theta = angle(rng);
        let accept = (big_r + r * theta.cos()) / (big_r + r);
        if rng.random::<f64>() < accept {
            return theta;
        }
    }
}

/// Inputs and labels of a synthetic sample.
pub struct Sample {
    pub x: PointCloud,
    pub y: PointCloud,
}

/// Draws `spec.n` points from `rng`. Torus points are surface-uniform when
/// `uniform_surface`; every other kind is parameter-uniform.
pub fn sample(spec: &SyntheticSpec, uniform_surface: bool, rng: &mut impl Rng) -> Result<Sample> {
    spec.validate()?;
    let (r, big_r) = (spec.r, spec.big_r);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let phi = angle(rng);
        let x = match spec.kind {
            SyntheticKind::Torus => {
                let theta = if uniform_surface {
                    surface_theta(r, big_r, rng)
                } else {
                    angle(rng)
                };
                torus_point(phi, theta, r, big_r).to_vec()
            }
            SyntheticKind::Moebius => {
                let s = rng.random_range(-r..=r);
                moebius_point(phi, s, big_r).to_vec()
            }
            SyntheticKind::SlicedTorus => sliced_torus_point(phi, angle(rng), r, big_r).to_vec(),
            SyntheticKind::Oval => oval_point(phi, big_r, r).to_vec(),
        };
        xs.push(x);
        ys.push(spec.label(phi).to_vec());
    }
    Ok(Sample {
        x: PointCloud::from_rows(&xs)?,
        y: PointCloud::from_rows(&ys)?,
    })
}

/// `n` points on the oval `(a cos t, b sin t)` with uniform `t`.
pub fn gen_oval(n: usize, a: f64, b: f64, seed: u64) -> Result<PointCloud> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Config(format!(
            "oval semi-axes must be positive, got {a}, {b}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<[f64; 2]> = (0..n).map(|_| oval_point(angle(&mut rng), a, b)).collect();
    if rows.is_empty() {
        return Ok(PointCloud::empty(2));
    }
    PointCloud::from_rows(&rows)
}

/// `n` points of the true fiber over label `y`, uniform with respect to
/// the fiber's own arc length (uniform θ for circles, uniform s for
/// segments).
pub fn fiber_oracle(
    spec: &SyntheticSpec,
    y: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<PointCloud> {
    if y.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "synthetic labels are 2-dimensional, got {}",
            y.len()
        )));
    }
    let phi = label_angle(y);
    let (r, big_r) = (spec.r, spec.big_r);
    let rows: Vec<[f64; 3]> = (0..n)
        .map(|_| match spec.kind {
            SyntheticKind::Torus => Ok(torus_point(phi, angle(rng), r, big_r)),
            SyntheticKind::Moebius => Ok(moebius_point(phi, rng.random_range(-r..=r), big_r)),
            SyntheticKind::SlicedTorus => Ok(sliced_torus_point(phi, angle(rng), r, big_r)),
            SyntheticKind::Oval => Err(Error::InvalidInput(
                "the oval has no fiber structure".into(),
            )),
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(PointCloud::empty(3));
    }
    PointCloud::from_rows(&rows)
}

/// Whether the fiber over angle `phi` collapses to a single point.
pub fn is_degenerate_fiber(kind: SyntheticKind, phi: f64) -> bool {
    kind == SyntheticKind::SlicedTorus && sliced_radius(phi, 1.0).abs() < 1e-12
}

/// Angle `π` is where the sliced torus fiber is widest.
pub const SLICED_WIDEST: f64 = PI;

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    fn torus_residual(p: &[f64], r: f64, big_r: f64) -> f64 {
        ((p[0].hypot(p[1]) - big_r).powi(2) + p[2] * p[2] - r * r).abs()
    }

    #[test]
    fn torus_examples() {
        assert!(close(&torus_point(0.0, 0.0, 2.0, 8.0), &[10.0, 0.0, 0.0]));
        assert!(close(&torus_point(PI, PI, 2.0, 8.0), &[-6.0, 0.0, 0.0]));
        let spec = SyntheticSpec::default();
        assert!(close(&spec.label(0.0), &[4.5, 0.0]));
    }

    #[test]
    fn torus_samples_lie_on_surface() {
        let spec = SyntheticSpec {
            n: 2000,
            ..SyntheticSpec::default()
        };
        for uniform in [false, true] {
            let s = sample(&spec, uniform, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            for (p, y) in s.x.rows().zip(s.y.rows()) {
                assert!(torus_residual(p, 2.0, 8.0) < 1e-9);
                assert!((y[0].hypot(y[1]) - 4.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn surface_theta_histogram_chi_square() {
        let (r, big_r) = (2.0, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 50_000;
        let bins = 36;
        let mut counts = vec![0f64; bins];
        for _ in 0..n {
            let t = surface_theta(r, big_r, &mut rng);
            counts[((t / TAU) * bins as f64) as usize % bins] += 1.0;
        }
        // expected mass per bin from the exact CDF of (R + r cos θ) / (2πR)
        let cdf = |t: f64| (big_r * t + r * t.sin()) / (TAU * big_r);
        let chi2: f64 = (0..bins)
            .map(|b| {
                let lo = TAU * b as f64 / bins as f64;
                let hi = TAU * (b + 1) as f64 / bins as f64;
                let e = n as f64 * (cdf(hi) - cdf(lo));
                (counts[b] - e).powi(2) / e
            })
            .sum();
        // chi-square critical value, 35 degrees of freedom, alpha = 0.001
        assert!(chi2 < 66.62, "chi2 = {chi2}");
    }

    #[test]
    fn moebius_examples() {
        assert!(close(&moebius_point(0.0, 0.0, 8.0), &[8.0, 0.0, 0.0]));
        assert!(close(&moebius_point(0.0, 2.0, 8.0), &[6.0, 0.0, 0.0]));
        for k in 0..100 {
            let d = moebius_direction(k as f64 * 0.1);
            assert!((d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // half twist: the segment comes back reversed after a full turn
        let a = moebius_direction(0.0);
        let b = moebius_direction(TAU);
        assert!(close(&a, &b.map(|v| -v)));
    }

    #[test]
    fn moebius_samples_stay_near_center_line() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Moebius,
            n: 1000,
            ..SyntheticSpec::default()
        };
        let s = sample(&spec, false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (p, y) in s.x.rows().zip(s.y.rows()) {
            let theta = label_angle(y);
            let c = [8.0 * theta.cos(), 8.0 * theta.sin(), 0.0];
            let dist = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum::<f64>().sqrt();
            assert!(dist <= 2.0 + 1e-9);
            // and on the line through c along the twisted direction
            let d = moebius_direction(theta);
            let s_par: f64 = (0..3).map(|i| (p[i] - c[i]) * d[i]).sum();
            assert!((s_par.abs() - dist).abs() < 1e-9);
        }
    }

    #[test]
    fn sliced_torus_examples() {
        for k in 0..10 {
            let t = k as f64 * 0.7;
            assert!(close(
                &sliced_torus_point(0.0, t, 2.0, 8.0),
                &[8.0, 0.0, 0.0]
            ));
        }
        assert!((sliced_radius(PI, 2.0) - 2.0).abs() < 1e-12);
        for k in 0..1000 {
            let phi = k as f64 * TAU / 1000.0;
            let rad = sliced_radius(phi, 2.0);
            assert!((0.0..=2.0).contains(&rad));
            let next = sliced_radius(phi + TAU / 1000.0, 2.0);
            assert!((next - rad).abs() < 0.01);
        }
        assert!(is_degenerate_fiber(SyntheticKind::SlicedTorus, 0.0));
        assert!(!is_degenerate_fiber(
            SyntheticKind::SlicedTorus,
            SLICED_WIDEST
        ));
    }

    #[test]
    fn sliced_torus_samples_on_surface() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::SlicedTorus,
            n: 500,
            ..SyntheticSpec::default()
        };
        let s = sample(&spec, false, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (p, y) in s.x.rows().zip(s.y.rows()) {
            let rad = sliced_radius(label_angle(y), 2.0);
            assert!(torus_residual(p, rad, 8.0) < 1e-9);
        }
    }

    #[test]
    fn oval_examples() {
        assert!(close(&oval_point(0.0, 2.0, 1.0), &[2.0, 0.0]));
        let unit = gen_oval(100, 1.0, 1.0, 0).unwrap();
        assert!(unit.rows().all(|p| (p[0].hypot(p[1]) - 1.0).abs() < 1e-12));
        let oval = gen_oval(1000, 2.0, 1.0, 1).unwrap();
        assert!(oval
            .rows()
            .all(|p| ((p[0] / 2.0).powi(2) + p[1] * p[1] - 1.0).abs() < 1e-9));
        assert!(gen_oval(5, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn fiber_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let torus = SyntheticSpec::default();
        let f = fiber_oracle(&torus, &[4.5, 0.0], 200, &mut rng).unwrap();
        for p in f.rows() {
            assert!(p[1].abs() < 1e-12);
            assert!(((p[0] - 8.0).powi(2) + p[2] * p[2] - 4.0).abs() < 1e-9);
        }
        let moebius = SyntheticSpec {
            kind: SyntheticKind::Moebius,
            ..torus.clone()
        };
        let f = fiber_oracle(&moebius, &[4.5, 0.0], 200, &mut rng).unwrap();
        for p in f.rows() {
            assert!((6.0..=10.0).contains(&p[0]) && p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
        }
        let sliced = SyntheticSpec {
            kind: SyntheticKind::SlicedTorus,
            ..torus.clone()
        };
        let f = fiber_oracle(&sliced, &[4.5, 0.0], 20, &mut rng).unwrap();
        assert!(f.rows().all(|p| close(p, &[8.0, 0.0, 0.0])));
        let oval = SyntheticSpec {
            kind: SyntheticKind::Oval,
            ..torus
        };
        assert!(fiber_oracle(&oval, &[4.5, 0.0], 5, &mut rng).is_err());
    }

    #[test]
    fn invalid_specs() {
        let bad = SyntheticSpec {
            r: 9.0,
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!(SyntheticKind::parse("klein").is_err());
        assert_eq!(
            SyntheticKind::parse("Sliced-Torus").unwrap(),
            SyntheticKind::SlicedTorus
        );
    }
}
