//! Joint training of every neighborhood with one shared optimizer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charts::{finite_charts, kmeans, ChartAtlas, DEFAULT_MAX_ITER};
use crate::checkpoint::{Checkpoint, FORMAT};
use crate::datasets::LabeledDataset;
use crate::losses::{backward_loss, forward_loss, msmd, total_loss, LossBreakdown};
use crate::model::{
    build_model, fit_prior_stats, pad_input, BundleNet, ChartPrior, ModelConfig, PriorSpec,
};
use crate::pointcloud::PointCloud;
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};
use crate::{Error, Result};

/// How many points to generate per neighborhood for the backward loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenPolicy {
    /// As many as the (possibly subsampled) neighborhood holds.
    MatchNeighborhood,
    Fixed(usize),
}

/// Coordinates compared by the generation-side loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardSpace {
    /// Only the first `dim_x` coordinates of generated points.
    Input,
    /// All `D` coordinates, against the padded real points; keeps generated
    /// padding near the padding distribution of the data.
    Padded,
    /// KL terms on the first `dim_x` coordinates, MSMD on all `D`.
    Hybrid,
}

impl BackwardSpace {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Self::Input),
            "padded" => Ok(Self::Padded),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(Error::Config(format!(
                "unknown backward space {other:?} (expected input, padded or hybrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_halve_every: usize,
    /// Neighborhood count for continuous labels; ignored for categorical ones.
    pub q: usize,
    /// Neighbor rank used by the KL loss terms.
    pub knn_k: usize,
    pub gen_per_neighborhood: GenPolicy,
    pub backward_space: BackwardSpace,
    /// Random subsample of each neighborhood per epoch when larger.
    pub max_neighborhood: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr0: 1e-4,
            lr_halve_every: 70,
            q: 25,
            knn_k: 5,
            gen_per_neighborhood: GenPolicy::MatchNeighborhood,
            backward_space: BackwardSpace::Input,
            max_neighborhood: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if self.lr_halve_every == 0 {
            return Err(Error::Config("lr_halve_every must be at least 1".into()));
        }
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        if self.gen_per_neighborhood == GenPolicy::Fixed(0) {
            return Err(Error::Config(
                "fixed generation count must be positive".into(),
            ));
        }
        if self.max_neighborhood.is_some_and(|m| m < 2) {
            return Err(Error::Config("max_neighborhood must be at least 2".into()));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.lr_halve_every).min(1074) as i32;
        self.lr0 * 0.5f64.powi(halvings)
    }
}

/// Mean loss terms over the neighborhoods of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Charts for the training labels: one per value for categorical labels,
/// `q` k-means clusters otherwise.
pub fn build_atlas(dataset: &LabeledDataset, q: usize, seed: u64) -> Result<ChartAtlas> {
    let labels = dataset.train_y();
    if labels.is_empty() {
        return Err(Error::InvalidInput("dataset has no training rows".into()));
    }
    if dataset.meta.categorical_labels {
        finite_charts(&labels)
    } else {
        kmeans(&labels, q, seed, DEFAULT_MAX_ITER)
    }
}

struct Neighborhood {
    x: PointCloud,
    y: PointCloud,
}

fn neighborhoods(dataset: &LabeledDataset, atlas: &ChartAtlas) -> Vec<Neighborhood> {
    let x = dataset.train_x();
    let y = dataset.train_y();
    atlas
        .partition(&y)
        .into_iter()
        .map(|idx| Neighborhood {
            x: x.select(&idx),
            y: y.select(&idx),
        })
        .collect()
}

fn subsample(
    nb: &Neighborhood,
    cap: Option<usize>,
    rng: &mut impl Rng,
) -> (PointCloud, PointCloud) {
    match cap {
        Some(cap) if nb.x.len() > cap => {
            let idx = rand::seq::index::sample(rng, nb.x.len(), cap).into_vec();
            (nb.x.select(&idx), nb.y.select(&idx))
        }
        _ => (nb.x.clone(), nb.y.clone()),
    }
}

fn diverged(epoch: usize, neighborhood: usize, detail: impl Into<String>) -> Error {
    Error::Diverged {
        epoch,
        neighborhood,
        detail: detail.into(),
    }
}

/// One optimizer step on a single neighborhood.
#[allow(clippy::too_many_arguments)]
fn step(
    model: &mut BundleNet,
    adam: &mut Adam,
    x: &PointCloud,
    y: &PointCloud,
    rep: &[f64],
    prior: &ChartPrior,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let n = x.len();
    let x_padded = pad_input(x, &model.config, rng)?;
    let dim_x = model.config.dim_x;
    let dim_y = model.config.dim_y;

    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let xv = g.constant(x_padded.to_tensor()?);
    let v = model.forward_graph(&mut g, &bound, xv, rep, None)?;
    let y_hat = g.slice_cols(v, 0, dim_y)?;
    let yv = g.constant(y.to_tensor()?);
    let l_fwd = forward_loss(&mut g, y_hat, yv)?;

    let n_gen = match cfg.gen_per_neighborhood {
        GenPolicy::MatchNeighborhood => n,
        GenPolicy::Fixed(m) => m,
    };
    let k = cfg.knn_k.min(n.min(n_gen).saturating_sub(1));
    let (loss, breakdown) = if k == 0 {
        let value = g.value(l_fwd).item();
        (l_fwd, LossBreakdown::new(value, 0.0, 0.0, 0.0))
    } else {
        let z = prior.sample(n_gen, rng);
        let labels: Vec<&[f64]> = (0..n_gen).map(|_| y.row(rng.random_range(0..n))).collect();
        let mut latent = Vec::with_capacity(n_gen * model.working_dim());
        for (yr, zr) in labels.iter().zip(z.rows()) {
            latent.extend_from_slice(yr);
            latent.extend_from_slice(zr);
        }
        let lv = g.constant(Tensor::matrix(n_gen, model.working_dim(), latent)?);
        let xg = model.inverse_graph(&mut g, &bound, lv, rep)?;
        let terms = match cfg.backward_space {
            BackwardSpace::Input | BackwardSpace::Hybrid => {
                let generated = g.slice_cols(xg, 0, dim_x)?;
                let real = g.constant(x.to_tensor()?);
                let mut terms = backward_loss(&mut g, generated, real, k)?;
                if cfg.backward_space == BackwardSpace::Hybrid {
                    terms.msmd = msmd(&mut g, xg, xv)?;
                }
                terms
            }
            BackwardSpace::Padded => backward_loss(&mut g, xg, xv, k)?,
        };
        total_loss(&mut g, l_fwd, &terms)?
    };

    if !breakdown.total.is_finite() {
        return Err(Error::InvalidInput(format!("loss is {}", breakdown.total)));
    }
    let grads = g.backward(loss)?;
    let vars = bound.vars();
    let grad_refs: Vec<Option<&Tensor>> = vars.iter().map(|&v| grads.get(v)).collect();
    if grad_refs.iter().flatten().any(|t| !t.all_finite()) {
        return Err(Error::InvalidInput("non-finite gradient".into()));
    }
    adam.step(&mut model.tensors_mut(), &grad_refs)?;
    Ok(breakdown)
}

/// Trains a model on the training split. `on_epoch` sees every epoch log.
pub fn train_with(
    dataset: &LabeledDataset,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model_config.dim_x != dataset.dim_x() || model_config.dim_y != dataset.dim_y() {
        return Err(Error::Config(format!(
            "model expects dim_x = {}, dim_y = {} but the dataset has {} and {}",
            model_config.dim_x,
            model_config.dim_y,
            dataset.dim_x(),
            dataset.dim_y()
        )));
    }
    let atlas = build_atlas(dataset, cfg.q, cfg.seed)?;
    let hoods = neighborhoods(dataset, &atlas);
    let mut model = build_model(model_config)?;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.lr0,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..hoods.len())
        .filter(|&i| !hoods[i].x.is_empty())
        .collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        adam.set_learning_rate(lr);
        order.shuffle(&mut rng);
        let mut sum = [0.0; 4];
        for &i in &order {
            let (x, y) = subsample(&hoods[i], cfg.max_neighborhood, &mut rng);
            let rep = atlas.rep(i);
            let padded = pad_input(&x, &model.config, &mut rng)?;
            let (_, z) = model
                .forward_split(&padded, rep)
                .map_err(|e| diverged(epoch, i, e.to_string()))?;
            let prior = ChartPrior::from_latents(&z, model.config.n_circles)?;
            let b = step(&mut model, &mut adam, &x, &y, rep, &prior, cfg, &mut rng)
                .map_err(|e| diverged(epoch, i, e.to_string()))?;
            sum[0] += b.l_fwd;
            sum[1] += b.l_kl_fwd;
            sum[2] += b.l_kl_bwd;
            sum[3] += b.l_msmd;
        }
        let m = order.len().max(1) as f64;
        let entry = EpochLog {
            epoch,
            lr,
            loss: LossBreakdown::new(sum[0] / m, sum[1] / m, sum[2] / m, sum[3] / m),
        };
        log::debug!("epoch {epoch}: total loss {:.4}", entry.loss.total);
        on_epoch(&entry);
        log.push(entry);
    }

    let prior = final_priors(&model, &hoods, &atlas, &mut rng)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            format: FORMAT.to_string(),
            model,
            atlas,
            prior,
            train_config: cfg.clone(),
            dataset: dataset.meta.clone(),
            epochs: cfg.epochs,
        },
        log,
    })
}

pub fn train(
    dataset: &LabeledDataset,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(dataset, model_config, cfg, |_| {})
}

/// Prior statistics under the final weights; empty charts stay unfitted.
fn final_priors(
    model: &BundleNet,
    hoods: &[Neighborhood],
    atlas: &ChartAtlas,
    rng: &mut ChaCha8Rng,
) -> Result<PriorSpec> {
    let mut spec = PriorSpec::new(
        model.config.n_circles,
        model.config.latent_gaussians(),
        atlas.len(),
    );
    for (i, nb) in hoods.iter().enumerate() {
        if nb.x.is_empty() {
            log::warn!("chart {i} has no training points; its prior is left unfitted");
            continue;
        }
        let fitted = fit_prior_stats(
            model,
            std::slice::from_ref(&nb.x),
            &atlas.reps.select(&[i]),
            rng,
        )?;
        if let Some(Some(p)) = fitted.charts.into_iter().next() {
            spec.set(i, p);
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, SyntheticSpec};

    fn small_model() -> ModelConfig {
        ModelConfig {
            dim_x: 3,
            dim_y: 2,
            n_circles: 3,
            n_gaussians: 0,
            n_blocks: 2,
            subnet_width: 16,
            cond_width: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn schedule_halves() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 1e-4);
        assert_eq!(cfg.learning_rate(69), 1e-4);
        assert_eq!(cfg.learning_rate(70), 5e-5);
        assert_eq!(cfg.learning_rate(140), 2.5e-5);
        assert!(cfg.learning_rate(usize::MAX) >= 0.0);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr0: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr_halve_every: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                q: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                max_neighborhood: Some(1),
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn one_epoch_smoke_run_round_trips() {
        let ds = generate(&SyntheticSpec {
            n: 50,
            seed: 1,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            q: 3,
            ..TrainConfig::default()
        };
        let out = train(&ds, &small_model(), &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!(out.log[0].loss.total.is_finite());
        let text = out.checkpoint.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, out.checkpoint);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(back.prior.charts.iter().all(Option::is_some));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let ds = generate(&SyntheticSpec {
            n: 20,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            q: 2,
            ..TrainConfig::default()
        };
        let model = ModelConfig {
            dim_x: 4,
            ..small_model()
        };
        assert!(matches!(train(&ds, &model, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_neighborhoods_still_train() {
        let ds = generate(&SyntheticSpec {
            n: 12,
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            q: 6,
            ..TrainConfig::default()
        };
        let out = train(&ds, &small_model(), &cfg).unwrap();
        assert!(out.log.iter().all(|e| e.loss.total.is_finite()));
    }

    #[test]
    fn subsampling_cap_applies() {
        let ds = generate(&SyntheticSpec {
            n: 60,
            seed: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            q: 2,
            max_neighborhood: Some(10),
            ..TrainConfig::default()
        };
        assert!(train(&ds, &small_model(), &cfg).is_ok());
    }
}
