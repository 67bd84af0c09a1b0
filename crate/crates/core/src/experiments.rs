//! Neighborhood-count ablation and the prior topology experiment.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::{gen_oval, LabeledDataset};
use crate::eval::{eval_fiberwise, eval_global, format_cell, EvalConfig, MetricSummary};
use crate::losses::knn_kl;
use crate::metrics::{wasserstein_exact, Metric};
use crate::model::{CouplingStack, ModelConfig};
use crate::pointcloud::PointCloud;
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};
use crate::train::{train, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub q: usize,
    pub global_w1: MetricSummary,
    pub fiberwise_w1: MetricSummary,
}

/// Trains one model per `q` with the same seeds and reports W1 in both
/// regimes.
pub fn ablate_neighborhoods(
    ds: &LabeledDataset,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    q_list: &[usize],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if q_list.is_empty() {
        return Err(Error::Config("empty q list".into()));
    }
    let eval_cfg = EvalConfig {
        metrics: vec![Metric::W1],
        ..eval_cfg.clone()
    };
    let mut rows = Vec::with_capacity(q_list.len());
    for &q in q_list {
        let cfg = TrainConfig {
            q,
            ..train_cfg.clone()
        };
        let ckpt = train(ds, model, &cfg)?.checkpoint;
        let global = eval_global(&ckpt, ds, &eval_cfg)?;
        let fiber = eval_fiberwise(&ckpt, ds, &eval_cfg)?;
        let row = AblationRow {
            q,
            global_w1: global.metrics[0].clone(),
            fiberwise_w1: fiber.metrics[0].clone(),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!("{:>4}  {:>13}  {:>13}\n", "q", "global W1", "fiberwise W1");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4}  {:>13}  {:>13}",
            r.q,
            format_cell(r.global_w1.mean, r.global_w1.halfwidth()),
            format_cell(r.fiberwise_w1.mean, r.fiberwise_w1.halfwidth())
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    /// `N(0, 1)` on the first axis; the second axis only carries pad noise.
    Gauss1d,
    Gauss2d,
    /// Uniform on the unit circle.
    Circle,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::Gauss1d, PriorKind::Gauss2d, PriorKind::Circle];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gauss1d" => Ok(Self::Gauss1d),
            "gauss2d" => Ok(Self::Gauss2d),
            "circle" => Ok(Self::Circle),
            other => Err(Error::Config(format!(
                "unknown prior {other:?} (expected gauss1d, gauss2d or circle)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gauss1d => "gauss1d",
            Self::Gauss2d => "gauss2d",
            Self::Circle => "circle",
        }
    }

    pub fn sample(self, n: usize, pad_noise_std: f64, rng: &mut impl Rng) -> PointCloud {
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            match self {
                Self::Gauss1d => {
                    let e: f64 = StandardNormal.sample(rng);
                    let pad: f64 = StandardNormal.sample(rng);
                    data.extend([e, pad_noise_std * pad]);
                }
                Self::Gauss2d => {
                    let e: f64 = StandardNormal.sample(rng);
                    let f: f64 = StandardNormal.sample(rng);
                    data.extend([e, f]);
                }
                Self::Circle => {
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    data.extend([t.cos(), t.sin()]);
                }
            }
        }
        PointCloud::new(2, data).expect("two columns")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorExperimentConfig {
    pub prior: PriorKind,
    /// Oval semi-axes.
    pub a: f64,
    pub b: f64,
    pub steps: usize,
    pub batch: usize,
    pub eval_points: usize,
    pub trace_every: usize,
    pub lr: f64,
    /// Steps between learning-rate halvings.
    pub lr_halve_every: usize,
    pub n_blocks: usize,
    pub subnet_depth: usize,
    pub subnet_width: usize,
    pub soft_clamp_alpha: f64,
    pub pad_noise_std: f64,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for PriorExperimentConfig {
    fn default() -> Self {
        Self {
            prior: PriorKind::Circle,
            a: 2.0,
            b: 1.0,
            steps: 2000,
            batch: 256,
            eval_points: 400,
            trace_every: 100,
            lr: 1e-3,
            lr_halve_every: 500,
            n_blocks: 4,
            subnet_depth: 2,
            subnet_width: 32,
            soft_clamp_alpha: 2.0,
            pad_noise_std: 0.01,
            knn_k: 5,
            seed: 0,
        }
    }
}

impl PriorExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::Config("oval semi-axes must be positive".into()));
        }
        if self.steps == 0
            || self.trace_every == 0
            || self.n_blocks == 0
            || self.lr_halve_every == 0
        {
            return Err(Error::Config(
                "steps, trace_every, n_blocks and lr_halve_every must be at least 1".into(),
            ));
        }
        if self.batch <= self.knn_k || self.eval_points == 0 {
            return Err(Error::Config(format!(
                "batch must exceed knn_k = {} and eval_points must be positive",
                self.knn_k
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub w1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrace {
    pub prior: PriorKind,
    pub seed: u64,
    pub points: Vec<TracePoint>,
}

impl PriorTrace {
    pub fn final_w1(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.w1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("prior,seed,step,w1\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.prior.name(),
                self.seed,
                p.step,
                p.w1
            );
        }
        out
    }
}

fn push_through(stack: &CouplingStack, z: &PointCloud) -> Result<PointCloud> {
    let mut g = Graph::new();
    let bound = stack.bind(&mut g, false);
    let v = g.constant(z.to_tensor()?);
    let x = stack.inverse(&mut g, &bound, v)?;
    Ok(PointCloud::from_tensor(g.value(x)))
}

fn trace_w1(
    stack: &CouplingStack,
    cfg: &PriorExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let z = cfg.prior.sample(cfg.eval_points, cfg.pad_noise_std, rng);
    let generated = push_through(stack, &z)?;
    let target = gen_oval(cfg.eval_points, cfg.a, cfg.b, rng.random())?;
    wasserstein_exact(&generated, &target, 1)
}

/// Trains an unconditioned coupling stack to push `cfg.prior` onto the
/// oval with the two KL terms, recording exact W1 to fresh target draws.
pub fn prior_experiment(cfg: &PriorExperimentConfig) -> Result<PriorTrace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stack = CouplingStack::new(
        2,
        cfg.n_blocks,
        cfg.subnet_depth,
        cfg.subnet_width,
        cfg.soft_clamp_alpha,
        &mut rng,
    )?;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.lr,
        ..AdamConfig::default()
    });
    let mut points = vec![TracePoint {
        step: 0,
        w1: trace_w1(&stack, cfg, &mut rng)?,
    }];
    for step in 1..=cfg.steps {
        let halvings = ((step - 1) / cfg.lr_halve_every).min(1074) as i32;
        adam.set_learning_rate(cfg.lr * 0.5f64.powi(halvings));
        let z = cfg.prior.sample(cfg.batch, cfg.pad_noise_std, &mut rng);
        let target = gen_oval(cfg.batch, cfg.a, cfg.b, rng.random())?;
        let mut g = Graph::new();
        let bound = stack.bind(&mut g, true);
        let zv = g.constant(z.to_tensor()?);
        let generated = stack.inverse(&mut g, &bound, zv)?;
        let real = g.constant(target.to_tensor()?);
        let fwd = knn_kl(&mut g, real, generated, cfg.knn_k)?;
        let bwd = knn_kl(&mut g, generated, real, cfg.knn_k)?;
        let loss = g.add(fwd, bwd)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::Diverged {
                epoch: step,
                neighborhood: 0,
                detail: "prior experiment loss is not finite".into(),
            });
        }
        let grads = g.backward(loss)?;
        let grad_refs: Vec<Option<&Tensor>> = bound.vars().map(|v| grads.get(v)).collect();
        let mut params: Vec<&mut Tensor> = stack.tensors_mut().collect();
        adam.step(&mut params, &grad_refs)?;
        if step % cfg.trace_every == 0 || step == cfg.steps {
            points.push(TracePoint {
                step,
                w1: trace_w1(&stack, cfg, &mut rng)?,
            });
        }
    }
    Ok(PriorTrace {
        prior: cfg.prior,
        seed: cfg.seed,
        points,
    })
}

/// Exact W1 between two independent `n`-point draws of the oval.
pub fn oval_noise_floor(n: usize, a: f64, b: f64, seed: u64) -> Result<f64> {
    let s1 = gen_oval(n, a, b, seed)?;
    let s2 = gen_oval(n, a, b, seed.wrapping_add(0x9e37_79b9))?;
    wasserstein_exact(&s1, &s2, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, SyntheticSpec};

    #[test]
    fn prior_samples_have_expected_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = PriorKind::Circle.sample(50, 0.01, &mut rng);
        assert!(c.rows().all(|r| (r[0].hypot(r[1]) - 1.0).abs() < 1e-12));
        let g1 = PriorKind::Gauss1d.sample(500, 0.01, &mut rng);
        assert!(g1.rows().all(|r| r[1].abs() < 0.1));
        assert_eq!(PriorKind::parse("Circle").unwrap(), PriorKind::Circle);
        assert!(PriorKind::parse("torus").is_err());
    }

    #[test]
    fn short_trace_is_recorded() {
        let cfg = PriorExperimentConfig {
            steps: 20,
            trace_every: 10,
            batch: 40,
            eval_points: 40,
            subnet_width: 8,
            n_blocks: 2,
            ..PriorExperimentConfig::default()
        };
        let t = prior_experiment(&cfg).unwrap();
        let steps: Vec<usize> = t.points.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 10, 20]);
        assert!(t.points.iter().all(|p| p.w1.is_finite() && p.w1 >= 0.0));
        assert_eq!(t.to_csv().lines().count(), 4);
        assert_eq!(prior_experiment(&cfg).unwrap(), t);

        let halving = PriorExperimentConfig {
            lr_halve_every: 1,
            ..cfg.clone()
        };
        assert_ne!(prior_experiment(&halving).unwrap().points[2], t.points[2]);
        let bad = PriorExperimentConfig {
            lr_halve_every: 0,
            ..cfg
        };
        assert!(matches!(prior_experiment(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn single_q_gives_single_row() {
        let ds = generate(&SyntheticSpec {
            n: 60,
            seed: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let model = ModelConfig {
            n_blocks: 1,
            subnet_width: 8,
            cond_width: 8,
            ..ModelConfig::default()
        };
        let train_cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let eval_cfg = EvalConfig {
            n_global: 50,
            n_fiber_points: 20,
            n_base_points: 2,
            n_repeats: 2,
            bootstrap_resamples: 50,
            ..EvalConfig::default()
        };
        let rows = ablate_neighborhoods(&ds, &model, &train_cfg, &eval_cfg, &[3], |_| {}).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(render_ablation(&rows).lines().count(), 2);
    }
}
