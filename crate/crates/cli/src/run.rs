//! Run directories and the command implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bundlenet::checkpoint::Checkpoint;
use bundlenet::datasets::{
    self, load_csv, load_dataset, load_wine, save_dataset, LabeledDataset, SyntheticKind,
    SyntheticSpec,
};
use bundlenet::eval::{evaluate, generate_fiber, render_table, EvalConfig, Regime};
use bundlenet::experiments::{
    ablate_neighborhoods, oval_noise_floor, prior_experiment, render_ablation,
    PriorExperimentConfig, PriorKind,
};
use bundlenet::metrics::{Metric, MetricConfig, WassersteinMethod};
use bundlenet::model::ModelConfig;
use bundlenet::train::{train_with, BackwardSpace, GenPolicy, TrainConfig};
use bundlenet::PointCloud;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::{resolve, CliError, Command};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "BUNDLENET_OUT";

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
    inputs: Vec<(PathBuf, String)>,
}

impl RunDir {
    /// Creates `<root>/<command>-<UTC timestamp>`, suffixed `-2`, `-3`, ...
    /// when taken.
    pub fn create(root: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::io(format!("creating {}", root.display()), e))?;
        let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
        let base = format!("{command}-{stamp}");
        for k in 1.. {
            let name = if k == 1 {
                base.clone()
            } else {
                format!("{base}-{k}")
            };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(Self {
                        path,
                        inputs: Vec::new(),
                    })
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(CliError::io(format!("creating {}", path.display()), e)),
            }
        }
        unreachable!()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| CliError::io(format!("writing {}", p.display()), e))?;
        Ok(p)
    }

    /// Records the SHA-256 of an input file.
    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes =
            fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        self.inputs
            .push((path.to_path_buf(), hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    fn write_resolved(&self, cfg: &Config, sections: &[&str]) -> Result<(), CliError> {
        let mut text = cfg.render(sections);
        for (path, hash) in &self.inputs {
            let _ = writeln!(text, "# sha256 {hash}  {}", path.display());
        }
        self.write("config.resolved", text)?;
        Ok(())
    }
}

fn output_root(cmd: &Command) -> PathBuf {
    cmd.common()
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Runs one command; returns its run directory.
pub fn execute(cmd: &Command) -> Result<RunDir, CliError> {
    let cfg = resolve(cmd)?;
    let mut dir = RunDir::create(&output_root(cmd), cmd.name())?;
    let result = match cmd {
        Command::MakeData { .. } => make_data(&cfg, &mut dir),
        Command::Train { .. } => train_cmd(&cfg, &mut dir),
        Command::Eval { .. } => eval_cmd(&cfg, &mut dir),
        Command::Ablate { .. } => ablate_cmd(&cfg, &mut dir),
        Command::PriorExperiment { .. } => prior_cmd(&cfg, &mut dir),
        Command::Generate { .. } => generate_cmd(&cfg, &mut dir),
    };
    dir.write_resolved(&cfg, cmd.sections())?;
    result.map(|()| dir)
}

fn seed(cfg: &Config) -> Result<u64, CliError> {
    cfg.get("seed")
}

fn synthetic_spec(cfg: &Config) -> Result<SyntheticSpec, CliError> {
    let kind = SyntheticKind::parse(cfg.raw("data.kind"))?;
    let spec = SyntheticSpec {
        kind,
        r: cfg.get("data.r")?,
        big_r: cfg.get("data.big_r")?,
        base_radius: cfg.get("data.base_radius")?,
        n: cfg.get("data.n")?,
        seed: match cfg.get_opt("data.seed")? {
            Some(s) => s,
            None => seed(cfg)?,
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn index_list(cfg: &Config, key: &str) -> Result<Option<Vec<usize>>, CliError> {
    let v: Vec<usize> = cfg.get_list(key)?;
    Ok(Some(v).filter(|v| !v.is_empty()))
}

/// Dataset from `data.path`, raw CSV, Wine files, or the synthetic spec,
/// in that order.
fn load_data(cfg: &Config, dir: &mut RunDir) -> Result<LabeledDataset, CliError> {
    if let Some(p) = cfg.opt_str("data.path") {
        let p = PathBuf::from(p);
        dir.record_input(&p)?;
        let sidecar = datasets::sidecar_path(&p);
        if sidecar.exists() {
            dir.record_input(&sidecar)?;
        }
        return Ok(load_dataset(&p)?);
    }
    let test_frac: f64 = cfg.get("data.test_frac")?;
    if let Some(p) = cfg.opt_str("data.csv") {
        let p = PathBuf::from(p);
        dir.record_input(&p)?;
        let ds = load_csv(
            &p,
            index_list(cfg, "data.input_cols")?.as_deref(),
            index_list(cfg, "data.label_cols")?.as_deref(),
        )?;
        return Ok(ds.with_split(test_frac, seed(cfg)?)?);
    }
    match (cfg.opt_str("data.wine_red"), cfg.opt_str("data.wine_white")) {
        (Some(red), Some(white)) => {
            let (red, white) = (PathBuf::from(red), PathBuf::from(white));
            dir.record_input(&red)?;
            dir.record_input(&white)?;
            return Ok(load_wine(&red, &white)?.with_split(test_frac, seed(cfg)?)?);
        }
        (None, None) => {}
        _ => {
            return Err(CliError::Field {
                key: "data.wine_red".into(),
                detail: "both data.wine_red and data.wine_white are needed".into(),
            })
        }
    }
    Ok(datasets::generate(&synthetic_spec(cfg)?)?)
}

fn model_config(cfg: &Config, ds: &LabeledDataset) -> Result<ModelConfig, CliError> {
    let base = ModelConfig::for_dims(ds.dim_x(), ds.dim_y());
    let model = ModelConfig {
        n_circles: cfg.get("model.n_circles")?,
        n_gaussians: match cfg.raw("model.n_gaussians") {
            "auto" => base.n_gaussians,
            _ => cfg.get("model.n_gaussians")?,
        },
        n_blocks: cfg.get("model.n_blocks")?,
        subnet_depth: cfg.get("model.subnet_depth")?,
        subnet_width: cfg.get("model.subnet_width")?,
        cond_depth: cfg.get("model.cond_depth")?,
        cond_width: cfg.get("model.cond_width")?,
        soft_clamp_alpha: cfg.get("model.soft_clamp_alpha")?,
        pad_noise_std: cfg.get("model.pad_noise_std")?,
        seed: seed(cfg)?,
        ..base
    };
    model.validate()?;
    Ok(model)
}

fn train_config(cfg: &Config) -> Result<TrainConfig, CliError> {
    let gen = match cfg.raw("train.gen_per_neighborhood") {
        "match" => GenPolicy::MatchNeighborhood,
        _ => GenPolicy::Fixed(cfg.get("train.gen_per_neighborhood")?),
    };
    let t = TrainConfig {
        epochs: cfg.get("train.epochs")?,
        lr0: cfg.get("train.lr0")?,
        lr_halve_every: cfg.get("train.lr_halve_every")?,
        q: cfg.get("train.q")?,
        knn_k: cfg.get("train.knn_k")?,
        gen_per_neighborhood: gen,
        backward_space: BackwardSpace::parse(cfg.raw("train.backward_space"))?,
        max_neighborhood: cfg.get_opt("train.max_neighborhood")?,
        seed: seed(cfg)?,
    };
    t.validate()?;
    Ok(t)
}

fn regimes(cfg: &Config) -> Result<Vec<Regime>, CliError> {
    match cfg.raw("eval.regime") {
        "both" => Ok(vec![Regime::Global, Regime::Fiberwise]),
        other => Ok(vec![Regime::parse(other)?]),
    }
}

fn eval_config(cfg: &Config) -> Result<EvalConfig, CliError> {
    let names: Vec<String> = cfg.get_list("eval.metrics")?;
    let metrics = names
        .iter()
        .map(|n| {
            Metric::from_name(n).ok_or_else(|| CliError::Field {
                key: "eval.metrics".into(),
                detail: format!("unknown metric {n:?}"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let wasserstein_method = match cfg.raw("eval.wasserstein") {
        "auto" => WassersteinMethod::Auto,
        "exact" => WassersteinMethod::Exact,
        "entropic" => WassersteinMethod::Entropic,
        other => {
            return Err(CliError::Field {
                key: "eval.wasserstein".into(),
                detail: format!("expected auto, exact or entropic, got {other:?}"),
            })
        }
    };
    let e = EvalConfig {
        regime: Regime::Global,
        n_global: cfg.get("eval.n_global")?,
        n_fiber_points: cfg.get("eval.n_fiber_points")?,
        n_base_points: cfg.get("eval.n_base_points")?,
        n_repeats: cfg.get("eval.n_repeats")?,
        bootstrap_resamples: cfg.get("eval.bootstrap_resamples")?,
        metrics,
        metric_config: MetricConfig {
            knn_k: cfg.get("eval.knn_k")?,
            wasserstein_method,
            entropic_blur: cfg.get("eval.entropic_blur")?,
            exact_threshold: cfg.get("eval.exact_threshold")?,
            ..MetricConfig::default()
        },
        seed: seed(cfg)?,
    };
    e.validate()?;
    Ok(e)
}

fn cloud_csv(cloud: &PointCloud, prefix: &str) -> String {
    let header: Vec<String> = (0..cloud.dim()).map(|j| format!("{prefix}{j}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in cloud.rows() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn make_data(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let ds = load_data(cfg, dir)?;
    let path = dir.file("dataset.csv");
    save_dataset(&ds, &path)?;
    log::info!(
        "{}: {} rows, dim_x = {}, dim_y = {} -> {}",
        ds.meta.name,
        ds.len(),
        ds.dim_x(),
        ds.dim_y(),
        path.display()
    );
    Ok(())
}

fn train_cmd(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let ds = load_data(cfg, dir)?;
    if cfg.opt_str("data.path").is_none() {
        save_dataset(&ds, &dir.file("dataset.csv"))?;
    }
    let model = model_config(cfg, &ds)?;
    let tc = train_config(cfg)?;
    let mut log_csv = String::from("epoch,lr,l_fwd,l_kl_fwd,l_kl_bwd,l_msmd,total\n");
    let every = (tc.epochs / 20).max(1);
    let out = train_with(&ds, &model, &tc, |e| {
        let l = &e.loss;
        let _ = writeln!(
            log_csv,
            "{},{},{},{},{},{},{}",
            e.epoch, e.lr, l.l_fwd, l.l_kl_fwd, l.l_kl_bwd, l.l_msmd, l.total
        );
        if e.epoch % every == 0 || e.epoch + 1 == tc.epochs {
            log::info!("epoch {}/{}: loss {:.4}", e.epoch + 1, tc.epochs, l.total);
        }
    })?;
    dir.write("train_log.csv", log_csv)?;
    out.checkpoint.save(&dir.file("checkpoint.json"))?;
    Ok(())
}

fn checkpoint_at(cfg: &Config, key: &str, dir: &mut RunDir) -> Result<Checkpoint, CliError> {
    let p = cfg.opt_str(key).ok_or_else(|| CliError::Field {
        key: key.into(),
        detail: "a checkpoint path is required".into(),
    })?;
    let p = PathBuf::from(p);
    dir.record_input(&p)?;
    Ok(Checkpoint::load(&p)?)
}

fn eval_cmd(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let ckpt = checkpoint_at(cfg, "eval.checkpoint", dir)?;
    let ds = match (cfg.opt_str("data.path"), &ckpt.dataset.synthetic) {
        (None, Some(spec)) => datasets::generate(spec)?,
        (None, None) => {
            return Err(CliError::Field {
                key: "data.path".into(),
                detail: "evaluating a model trained on real data needs its dataset file".into(),
            })
        }
        _ => load_data(cfg, dir)?,
    };
    let base = eval_config(cfg)?;
    let mut reports = Vec::new();
    for regime in regimes(cfg)? {
        let ec = EvalConfig {
            regime,
            ..base.clone()
        };
        log::info!("evaluating {} ({} repeats)", regime.name(), ec.n_repeats);
        reports.push(evaluate(&ckpt, &ds, &ec)?);
    }
    dir.write("report.json", serde_json::to_string_pretty(&reports)?)?;
    let table = render_table(&reports);
    print!("{table}");
    dir.write("report.txt", table)?;
    Ok(())
}

fn ablate_cmd(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let ds = load_data(cfg, dir)?;
    let model = model_config(cfg, &ds)?;
    let tc = train_config(cfg)?;
    let ec = eval_config(cfg)?;
    let q_list: Vec<usize> = cfg.get_list("ablate.q_list")?;
    let rows = ablate_neighborhoods(&ds, &model, &tc, &ec, &q_list, |row| {
        log::info!(
            "q = {}: global W1 {:.3}, fiberwise W1 {:.3}",
            row.q,
            row.global_w1.mean,
            row.fiberwise_w1.mean
        );
    })?;
    dir.write("ablation.json", serde_json::to_string_pretty(&rows)?)?;
    let table = render_ablation(&rows);
    print!("{table}");
    dir.write("ablation.txt", table)?;
    Ok(())
}

fn prior_cmd(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let kinds = cfg
        .get_list::<String>("prior.kinds")?
        .iter()
        .map(|s| PriorKind::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds: Vec<u64> = cfg.get_list("prior.seeds")?;
    if kinds.is_empty() || seeds.is_empty() {
        return Err(CliError::Field {
            key: "prior.kinds".into(),
            detail: "need at least one prior kind and one seed".into(),
        });
    }
    let base = PriorExperimentConfig {
        a: cfg.get("prior.a")?,
        b: cfg.get("prior.b")?,
        steps: cfg.get("prior.steps")?,
        batch: cfg.get("prior.batch")?,
        eval_points: cfg.get("prior.eval_points")?,
        trace_every: cfg.get("prior.trace_every")?,
        lr: cfg.get("prior.lr")?,
        lr_halve_every: cfg.get("prior.lr_halve_every")?,
        ..PriorExperimentConfig::default()
    };
    let mut csv = String::from("prior,seed,step,w1\n");
    let mut summary = String::from("prior     seed  final W1\n");
    for &seed in &seeds {
        for &prior in &kinds {
            let trace = prior_experiment(&PriorExperimentConfig {
                prior,
                seed,
                ..base.clone()
            })?;
            log::info!(
                "{} seed {seed}: final W1 {:.4}",
                prior.name(),
                trace.final_w1()
            );
            csv.push_str(trace.to_csv().split_once('\n').map_or("", |(_, rest)| rest));
            let _ = writeln!(
                summary,
                "{:<8}  {seed:>4}  {:.4}",
                prior.name(),
                trace.final_w1()
            );
        }
    }
    let floor = oval_noise_floor(base.eval_points, base.a, base.b, seeds[0])?;
    let _ = writeln!(summary, "noise floor (two target draws): {floor:.4}");
    dir.write("traces.csv", csv)?;
    print!("{summary}");
    dir.write("summary.txt", summary)?;
    Ok(())
}

fn generate_cmd(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let ckpt = checkpoint_at(cfg, "generate.checkpoint", dir)?;
    let y: Vec<f64> = cfg.get_list("generate.y")?;
    if y.is_empty() {
        return Err(CliError::Field {
            key: "generate.y".into(),
            detail: "a label is required, e.g. --y 4.5,0".into(),
        });
    }
    let n: usize = cfg.get("generate.n")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(cfg)?);
    let points = generate_fiber(&ckpt, &y, n, &mut rng)?;
    dir.write("points.csv", cloud_csv(&points, "x"))?;
    Ok(())
}
