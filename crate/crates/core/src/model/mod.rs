//! The neighborhood-conditioned invertible map `X x R -> Y x Z`.
//!
//! Forward: `v = exp(s(r)) * x_pad + t(r)`, then the coupling stack. The
//! output row is laid out as `[y_hat (B) | circle pairs (2C) | gaussians]`.
//! Reverse runs the exact algebraic inverse of every stage.

mod flow;
mod mlp;
mod prior;

pub use flow::{BoundStack, CouplingBlock, CouplingStack, Permutation};
pub use mlp::{BoundMlp, Linear, Mlp};
pub use prior::{fit_prior_stats, sample_fiber, ChartPrior, PriorSpec, MIN_GAUSSIAN_STD};

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Rows per graph when running the model without gradients.
const EVAL_CHUNK: usize = 512;

thread_local! {
    static INVERSE_ROWS: Cell<u64> = const { Cell::new(0) };
}

/// Number of rows this thread has pushed through [`BundleNet::inverse`]
/// (graph or plain). Used to audit that generated points come from the
/// model's reverse pass.
pub fn inverse_row_count() -> u64 {
    INVERSE_ROWS.with(Cell::get)
}

fn count_inverse_rows(n: usize) {
    INVERSE_ROWS.with(|c| c.set(c.get() + n as u64));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim_x: usize,
    /// Label dimension `B`.
    pub dim_y: usize,
    pub n_circles: usize,
    pub n_gaussians: usize,
    pub n_blocks: usize,
    pub subnet_depth: usize,
    pub subnet_width: usize,
    pub cond_depth: usize,
    pub cond_width: usize,
    pub soft_clamp_alpha: f64,
    pub pad_noise_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim_x: 3,
            dim_y: 2,
            n_circles: 3,
            n_gaussians: 0,
            n_blocks: 5,
            subnet_depth: 3,
            subnet_width: 64,
            cond_depth: 2,
            cond_width: 64,
            soft_clamp_alpha: 2.0,
            pad_noise_std: 0.01,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// `D = max(dim_x, B + 2C + G)`.
    pub fn working_dim(&self) -> usize {
        self.dim_x
            .max(self.dim_y + 2 * self.n_circles + self.n_gaussians)
    }

    /// Gaussian latent coordinates actually used: `G` grows to fill `D`
    /// when the input is wider than `B + 2C + G`.
    pub fn latent_gaussians(&self) -> usize {
        self.working_dim() - self.dim_y - 2 * self.n_circles
    }

    /// Defaults for a dataset: three circles, plus five Gaussians for
    /// one-dimensional labels (airfoil-style regression) and none otherwise.
    pub fn for_dims(dim_x: usize, dim_y: usize) -> Self {
        Self {
            dim_x,
            dim_y,
            n_circles: 3,
            n_gaussians: if dim_y == 1 { 5 } else { 0 },
            ..Self::default()
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.working_dim() - self.dim_y
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.dim_y == 0 {
            return Err(Error::Config("dim_x and dim_y must be positive".into()));
        }
        if self.working_dim() < 2 {
            return Err(Error::Config(format!(
                "working dimension {} < 2",
                self.working_dim()
            )));
        }
        if self.latent_dim() == 0 {
            return Err(Error::Config(format!(
                "working dimension {} leaves no latent coordinates beside the {} label coordinates",
                self.working_dim(),
                self.dim_y
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be at least 1".into()));
        }
        if self.subnet_depth == 0 || self.cond_depth == 0 {
            return Err(Error::Config("subnet depths must be at least 1".into()));
        }
        if !(self.soft_clamp_alpha > 0.0) {
            return Err(Error::Config("soft_clamp_alpha must be positive".into()));
        }
        if !(self.pad_noise_std >= 0.0) {
            return Err(Error::Config("pad_noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleNetParams {
    /// `r -> [s(r) | t(r)]`, each of width `D`.
    pub cond_net: Mlp,
    pub stack: CouplingStack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleNet {
    pub config: ModelConfig,
    pub params: BundleNetParams,
}

#[derive(Debug, Clone)]
pub struct BoundParams {
    pub cond_net: BoundMlp,
    pub stack: BoundStack,
}

impl BoundParams {
    /// Graph handles in the order of [`BundleNet::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.cond_net.vars().chain(self.stack.vars()).collect()
    }
}

pub fn build_model(config: &ModelConfig) -> Result<BundleNet> {
    config.validate()?;
    let d = config.working_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cond_net = Mlp::new(
        config.dim_y,
        2 * d,
        config.cond_depth,
        config.cond_width,
        &mut rng,
    );
    let stack = CouplingStack::new(
        d,
        config.n_blocks,
        config.subnet_depth,
        config.subnet_width,
        config.soft_clamp_alpha,
        &mut rng,
    )?;
    Ok(BundleNet {
        config: config.clone(),
        params: BundleNetParams { cond_net, stack },
    })
}

/// Appends `D - dim_x` coordinates drawn from `N(0, pad_noise_std^2)`.
pub fn pad_input(x: &PointCloud, config: &ModelConfig, rng: &mut impl Rng) -> Result<PointCloud> {
    let d = config.working_dim();
    if x.dim() != config.dim_x {
        return Err(Error::InvalidInput(format!(
            "expected inputs of dimension {}, got {}",
            config.dim_x,
            x.dim()
        )));
    }
    if d == x.dim() {
        return Ok(x.clone());
    }
    let noise = Normal::new(0.0, config.pad_noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(x.len() * d);
    for row in x.rows() {
        data.extend_from_slice(row);
        for _ in x.dim()..d {
            data.push(if config.pad_noise_std == 0.0 {
                0.0
            } else {
                noise.sample(rng)
            });
        }
    }
    PointCloud::new(d, data)
}

impl BundleNet {
    pub fn working_dim(&self) -> usize {
        self.config.working_dim()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.params
            .cond_net
            .tensors()
            .chain(self.params.stack.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let BundleNetParams { cond_net, stack } = &mut self.params;
        cond_net.tensors_mut().chain(stack.tensors_mut()).collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        BoundParams {
            cond_net: self.params.cond_net.bind(g, trainable),
            stack: self.params.stack.bind(g, trainable),
        }
    }

    fn check_rep(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.config.dim_y {
            return Err(Error::InvalidInput(format!(
                "representative has dimension {}, expected {}",
                r.len(),
                self.config.dim_y
            )));
        }
        Ok(())
    }

    /// `(log-scale, shift)` rows of the conditioned affine layer for `r`.
    pub fn conditioning(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        r: &[f64],
    ) -> Result<(Var, Var)> {
        self.check_rep(r)?;
        let d = self.working_dim();
        let rv = g.constant(Tensor::matrix(1, r.len(), r.to_vec())?);
        let st = bound.cond_net.forward(g, rv)?;
        Ok((g.slice_cols(st, 0, d)?, g.slice_cols(st, d, 2 * d)?))
    }

    /// Graph forward of padded inputs `[n, D]` under representative `r`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        x: Var,
        r: &[f64],
        trace: Option<&mut Vec<Tensor>>,
    ) -> Result<Var> {
        let (s, t) = self.conditioning(g, bound, r)?;
        let es = g.exp(s);
        let scaled = g.mul(x, es)?;
        let v = g.add(scaled, t)?;
        if !g.value(v).all_finite() {
            return Err(Error::NonFinite {
                direction: "forward",
                block: 0,
            });
        }
        self.params.stack.forward(g, &bound.stack, v, trace)
    }

    /// Graph inverse of latent rows `[n, D]` (`[y | z]`) under `r`.
    pub fn inverse_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        v: Var,
        r: &[f64],
    ) -> Result<Var> {
        count_inverse_rows(g.value(v).rows());
        let (s, t) = self.conditioning(g, bound, r)?;
        let u = self.params.stack.inverse(g, &bound.stack, v)?;
        let shifted = g.sub(u, t)?;
        let neg = g.scale(s, -1.0);
        let inv = g.exp(neg);
        let x = g.mul(shifted, inv)?;
        if !g.value(x).all_finite() {
            return Err(Error::NonFinite {
                direction: "inverse",
                block: 0,
            });
        }
        Ok(x)
    }

    fn run_chunked(
        &self,
        rows: &PointCloud,
        f: impl Fn(&mut Graph, &BoundParams, Var) -> Result<Var>,
    ) -> Result<PointCloud> {
        let d = self.working_dim();
        if rows.dim() != d {
            return Err(Error::InvalidInput(format!(
                "expected rows of dimension {d}, got {}",
                rows.dim()
            )));
        }
        let mut out = Vec::with_capacity(rows.data().len());
        for chunk in rows.data().chunks(EVAL_CHUNK * d) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let x = g.constant(Tensor::matrix(chunk.len() / d, d, chunk.to_vec())?);
            let y = f(&mut g, &bound, x)?;
            out.extend_from_slice(g.value(y).data());
        }
        PointCloud::new(d, out)
    }

    /// Forward pass on padded inputs; returns `[n, D]` latent rows.
    pub fn forward(&self, x_padded: &PointCloud, r: &[f64]) -> Result<PointCloud> {
        if x_padded.is_empty() {
            return Ok(PointCloud::empty(self.working_dim()));
        }
        self.run_chunked(x_padded, |g, b, x| self.forward_graph(g, b, x, r, None))
    }

    /// Forward pass split into `(y_hat [n, B], z [n, D - B])`.
    pub fn forward_split(
        &self,
        x_padded: &PointCloud,
        r: &[f64],
    ) -> Result<(PointCloud, PointCloud)> {
        let v = self.forward(x_padded, r)?;
        let b = self.config.dim_y;
        if v.is_empty() {
            return Ok((PointCloud::empty(b), PointCloud::empty(v.dim() - b)));
        }
        Ok((v.columns(0, b), v.columns(b, v.dim())))
    }

    /// Inverse pass from labels `y [n, B]` and latents `z [n, D - B]`;
    /// returns padded inputs `[n, D]`.
    pub fn inverse(&self, y: &PointCloud, z: &PointCloud, r: &[f64]) -> Result<PointCloud> {
        let d = self.working_dim();
        if y.dim() != self.config.dim_y || z.dim() != d - self.config.dim_y || y.len() != z.len() {
            return Err(Error::InvalidInput(format!(
                "inverse expects y [n, {}] and z [n, {}], got [{}, {}] and [{}, {}]",
                self.config.dim_y,
                d - self.config.dim_y,
                y.len(),
                y.dim(),
                z.len(),
                z.dim()
            )));
        }
        if y.is_empty() {
            return Ok(PointCloud::empty(d));
        }
        let mut joined = Vec::with_capacity(y.len() * d);
        for (yr, zr) in y.rows().zip(z.rows()) {
            joined.extend_from_slice(yr);
            joined.extend_from_slice(zr);
        }
        let joined = PointCloud::new(d, joined)?;
        self.run_chunked(&joined, |g, b, v| self.inverse_graph(g, b, v, r))
    }

    /// Clamped coupling log-scales seen while mapping `x_padded` forward.
    pub fn coupling_log_scales(&self, x_padded: &PointCloud, r: &[f64]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(x_padded.to_tensor()?);
        let mut trace = Vec::new();
        self.forward_graph(&mut g, &bound, x, r, Some(&mut trace))?;
        Ok(trace)
    }
}
