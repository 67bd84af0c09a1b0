//! Per-neighborhood latent priors: `C` circles followed by Gaussians.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{pad_input, BundleNet};
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

/// Floor applied to fitted Gaussian standard deviations.
pub const MIN_GAUSSIAN_STD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPrior {
    /// Mean magnitude of each latent coordinate pair.
    pub circle_radius: Vec<f64>,
    pub gaussian_mean: Vec<f64>,
    pub gaussian_std: Vec<f64>,
}

impl ChartPrior {
    /// Sample statistics of latent rows `[n, 2C + G]`.
    pub fn from_latents(z: &PointCloud, n_circles: usize) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::InvalidInput("no latent rows to fit".into()));
        }
        let n = z.len() as f64;
        let circle_radius = (0..n_circles)
            .map(|c| z.rows().map(|r| r[2 * c].hypot(r[2 * c + 1])).sum::<f64>() / n)
            .collect::<Vec<f64>>();
        let mut gaussian_mean = Vec::new();
        let mut gaussian_std = Vec::new();
        for j in 2 * n_circles..z.dim() {
            let mean = z.rows().map(|r| r[j]).sum::<f64>() / n;
            let var = z.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            gaussian_mean.push(mean);
            gaussian_std.push(var.sqrt().max(MIN_GAUSSIAN_STD));
        }
        Ok(Self {
            circle_radius,
            gaussian_mean,
            gaussian_std,
        })
    }

    pub fn latent_dim(&self) -> usize {
        2 * self.circle_radius.len() + self.gaussian_mean.len()
    }

    /// Uniform angle on each circle, independent Gaussians elsewhere.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> PointCloud {
        let dim = self.latent_dim();
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            for &radius in &self.circle_radius {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                data.push(radius * theta.cos());
                data.push(radius * theta.sin());
            }
            for (m, s) in self.gaussian_mean.iter().zip(&self.gaussian_std) {
                let e: f64 = StandardNormal.sample(rng);
                data.push(m + s * e);
            }
        }
        PointCloud::new(dim, data).expect("latent_dim > 0")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub n_circles: usize,
    pub n_gaussians: usize,
    pub charts: Vec<Option<ChartPrior>>,
}

impl PriorSpec {
    pub fn new(n_circles: usize, n_gaussians: usize, n_charts: usize) -> Self {
        Self {
            n_circles,
            n_gaussians,
            charts: vec![None; n_charts],
        }
    }

    pub fn chart(&self, i: usize) -> Result<&ChartPrior> {
        self.charts
            .get(i)
            .and_then(Option::as_ref)
            .ok_or(Error::PriorNotFitted(i))
    }

    pub fn set(&mut self, i: usize, prior: ChartPrior) {
        if i >= self.charts.len() {
            self.charts.resize(i + 1, None);
        }
        self.charts[i] = Some(prior);
    }

    pub fn sample(&self, i: usize, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
        Ok(self.chart(i)?.sample(n, rng))
    }
}

/// Pushes padded inputs of one neighborhood through the model with `rep`
/// and summarizes the latent coordinates.
pub fn fit_chart_prior(
    model: &BundleNet,
    x_padded: &PointCloud,
    rep: &[f64],
) -> Result<ChartPrior> {
    let (_, z) = model.forward_split(x_padded, rep)?;
    ChartPrior::from_latents(&z, model.config.n_circles)
}

/// Fits statistics for every neighborhood. `neighborhoods[i]` holds raw
/// (unpadded) inputs of chart `i`; `reps` row `i` is its representative.
pub fn fit_prior_stats(
    model: &BundleNet,
    neighborhoods: &[PointCloud],
    reps: &PointCloud,
    rng: &mut impl Rng,
) -> Result<PriorSpec> {
    let mut spec = PriorSpec::new(
        model.config.n_circles,
        model.config.latent_gaussians(),
        neighborhoods.len(),
    );
    for (i, cloud) in neighborhoods.iter().enumerate() {
        if cloud.is_empty() {
            return Err(Error::EmptyNeighborhood(i));
        }
        let padded = pad_input(cloud, &model.config, rng)?;
        spec.set(i, fit_chart_prior(model, &padded, reps.row(i))?);
    }
    Ok(spec)
}

/// `n` points of the modeled fiber over `y`, generated in chart `chart`
/// (representative `rep`). Returns `[n, dim_x]`.
pub fn sample_fiber(
    model: &BundleNet,
    prior: &PriorSpec,
    chart: usize,
    rep: &[f64],
    y: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<PointCloud> {
    let chart_prior = prior.chart(chart)?;
    let dim_x = model.config.dim_x;
    if n == 0 {
        return Ok(PointCloud::empty(dim_x));
    }
    let z = chart_prior.sample(n, rng);
    let ys = PointCloud::new(y.len(), y.repeat(n))?;
    let x = model.inverse(&ys, &z, rep)?;
    Ok(x.columns(0, dim_x))
}
