//! Global and fiberwise evaluation with bootstrap confidence intervals.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::{self, fiber_oracle, LabeledDataset, SyntheticSpec};
use crate::metrics::{self, Metric, MetricConfig};
use crate::model::sample_fiber;
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Global,
    Fiberwise,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(Self::Global),
            "fiberwise" => Ok(Self::Fiberwise),
            other => Err(Error::Config(format!(
                "unknown regime {other:?} (expected global or fiberwise)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::Fiberwise => "fiberwise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub regime: Regime,
    pub n_global: usize,
    pub n_fiber_points: usize,
    pub n_base_points: usize,
    pub n_repeats: usize,
    pub bootstrap_resamples: usize,
    pub metrics: Vec<Metric>,
    pub metric_config: MetricConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Global,
            n_global: 4000,
            n_fiber_points: 200,
            n_base_points: 15,
            n_repeats: 10,
            bootstrap_resamples: 1000,
            metrics: Metric::ALL.to_vec(),
            metric_config: MetricConfig::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_global", self.n_global),
            ("n_fiber_points", self.n_fiber_points),
            ("n_base_points", self.n_base_points),
            ("n_repeats", self.n_repeats),
            ("bootstrap_resamples", self.bootstrap_resamples),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics selected".into()));
        }
        self.metric_config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// One value per repeat.
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn halfwidth(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// A base point whose chart had no real points to compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFiber {
    pub repeat: usize,
    pub label: Vec<f64>,
    pub chart: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub regime: Regime,
    pub seed: u64,
    pub n_repeats: usize,
    pub metrics: Vec<MetricSummary>,
    pub skipped: Vec<SkippedFiber>,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Percentile bootstrap of the mean: `(mean, low, high)` at 95%. The
/// interval is widened if needed so that it contains the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64, f64)> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::InvalidInput(
            "bootstrap needs values and resamples".into(),
        ));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let low = percentile(&means, 0.025);
    let high = percentile(&means, 0.975);
    Ok((mean, low.min(mean), high.max(mean)))
}

/// Linear interpolation between closest ranks of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(per_repeat: &[Vec<f64>], cfg: &EvalConfig) -> Result<Vec<MetricSummary>> {
    cfg.metrics
        .iter()
        .enumerate()
        .map(|(j, &metric)| {
            let values: Vec<f64> = per_repeat.iter().map(|r| r[j]).collect();
            let (mean, ci_low, ci_high) =
                bootstrap_ci(&values, cfg.bootstrap_resamples, cfg.seed ^ (j as u64 + 1))?;
            Ok(MetricSummary {
                metric,
                mean,
                ci_low,
                ci_high,
                values,
            })
        })
        .collect()
}

fn compute_all(
    generated: &PointCloud,
    reference: &PointCloud,
    cfg: &EvalConfig,
) -> Result<Vec<f64>> {
    cfg.metrics
        .iter()
        .map(|&m| metrics::compute(m, generated, reference, &cfg.metric_config))
        .collect()
}

fn repeat_rng(seed: u64, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64 + 1);
    rng
}

/// Generates one point per label through the inverse map of its chart.
/// Rows come back in label order.
pub fn generate_global(
    ckpt: &Checkpoint,
    labels: &PointCloud,
    rng: &mut impl Rng,
) -> Result<PointCloud> {
    let dim_x = ckpt.model.config.dim_x;
    let mut out = vec![0.0; labels.len() * dim_x];
    for (chart, rows) in ckpt.atlas.partition(labels).into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let y = labels.select(&rows);
        let z = ckpt.prior.sample(chart, rows.len(), rng)?;
        let x = ckpt.model.inverse(&y, &z, ckpt.atlas.rep(chart))?;
        for (k, &i) in rows.iter().enumerate() {
            out[i * dim_x..(i + 1) * dim_x].copy_from_slice(&x.row(k)[..dim_x]);
        }
    }
    PointCloud::new(dim_x, out)
}

/// `n` points of the modeled fiber over `y`, generated in `y`'s chart.
pub fn generate_fiber(
    ckpt: &Checkpoint,
    y: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<PointCloud> {
    if y.len() != ckpt.model.config.dim_y {
        return Err(Error::InvalidInput(format!(
            "label has dimension {}, model expects {}",
            y.len(),
            ckpt.model.config.dim_y
        )));
    }
    let chart = ckpt.atlas.assign(y);
    sample_fiber(
        &ckpt.model,
        &ckpt.prior,
        chart,
        ckpt.atlas.rep(chart),
        y,
        n,
        rng,
    )
}

fn synthetic_spec(ds: &LabeledDataset) -> Option<&SyntheticSpec> {
    ds.meta.synthetic.as_ref()
}

fn resample(cloud: &PointCloud, n: usize, rng: &mut impl Rng) -> PointCloud {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..cloud.len())).collect();
    cloud.select(&idx)
}

fn uniform_base_labels(spec: &SyntheticSpec, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let rows: Vec<[f64; 2]> = (0..n)
        .map(|_| spec.label(rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    PointCloud::from_rows(&rows)
}

pub fn eval_global(
    ckpt: &Checkpoint,
    ds: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    let train_y = ds.train_y();
    let test_x = ds.test_x();
    if synthetic_spec(ds).is_none() && (train_y.is_empty() || test_x.is_empty()) {
        return Err(Error::InvalidInput(
            "global evaluation on real data needs train and test rows".into(),
        ));
    }
    let mut per_repeat = Vec::with_capacity(cfg.n_repeats);
    for repeat in 0..cfg.n_repeats {
        let mut rng = repeat_rng(cfg.seed, repeat);
        let (labels, reference) = match synthetic_spec(ds) {
            Some(spec) => (
                uniform_base_labels(spec, cfg.n_global, &mut rng)?,
                datasets::reference_sample(spec, cfg.n_global, &mut rng)?,
            ),
            None => (
                resample(&train_y, cfg.n_global, &mut rng),
                resample(&test_x, cfg.n_global, &mut rng),
            ),
        };
        let generated = generate_global(ckpt, &labels, &mut rng)?;
        per_repeat.push(compute_all(&generated, &reference, cfg)?);
    }
    Ok(MetricReport {
        dataset: ds.meta.name.clone(),
        regime: Regime::Global,
        seed: cfg.seed,
        n_repeats: cfg.n_repeats,
        metrics: summarize(&per_repeat, cfg)?,
        skipped: Vec::new(),
    })
}

/// Metric values for the fibers over `labels`, one row per label; `None`
/// where the reference would be empty.
pub fn fiber_metrics(
    ckpt: &Checkpoint,
    ds: &LabeledDataset,
    labels: &PointCloud,
    cfg: &EvalConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Option<Vec<f64>>>> {
    let real = match synthetic_spec(ds) {
        Some(_) => None,
        None => {
            let groups = ckpt.atlas.partition(&ds.y);
            Some(
                groups
                    .into_iter()
                    .map(|idx| ds.x.select(&idx))
                    .collect::<Vec<_>>(),
            )
        }
    };
    let mut out = Vec::with_capacity(labels.len());
    for y in labels.rows() {
        let reference = match (synthetic_spec(ds), &real) {
            (Some(spec), _) => fiber_oracle(spec, y, cfg.n_fiber_points, rng)?,
            (None, Some(groups)) => {
                let pool = &groups[ckpt.atlas.assign(y)];
                if pool.is_empty() {
                    out.push(None);
                    continue;
                }
                resample(pool, cfg.n_fiber_points, rng)
            }
            (None, None) => unreachable!(),
        };
        let generated = generate_fiber(ckpt, y, cfg.n_fiber_points, rng)?;
        out.push(Some(compute_all(&generated, &reference, cfg)?));
    }
    Ok(out)
}

pub fn eval_fiberwise(
    ckpt: &Checkpoint,
    ds: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut per_repeat = Vec::with_capacity(cfg.n_repeats);
    let mut skipped = Vec::new();
    for repeat in 0..cfg.n_repeats {
        let mut rng = repeat_rng(cfg.seed, repeat);
        let labels = match synthetic_spec(ds) {
            Some(spec) => uniform_base_labels(spec, cfg.n_base_points, &mut rng)?,
            None => resample(&ds.y, cfg.n_base_points, &mut rng),
        };
        let rows = fiber_metrics(ckpt, ds, &labels, cfg, &mut rng)?;
        let mut sums = vec![0.0; cfg.metrics.len()];
        let mut used = 0usize;
        for (y, row) in labels.rows().zip(rows) {
            match row {
                Some(values) => {
                    for (s, v) in sums.iter_mut().zip(values) {
                        *s += v;
                    }
                    used += 1;
                }
                None => {
                    let chart = ckpt.atlas.assign(y);
                    log::warn!("skipping fiber over {y:?}: chart {chart} has no real points");
                    skipped.push(SkippedFiber {
                        repeat,
                        label: y.to_vec(),
                        chart,
                    });
                }
            }
        }
        if used == 0 {
            return Err(Error::InvalidInput(format!(
                "repeat {repeat}: every sampled fiber was skipped"
            )));
        }
        per_repeat.push(sums.into_iter().map(|s| s / used as f64).collect());
    }
    Ok(MetricReport {
        dataset: ds.meta.name.clone(),
        regime: Regime::Fiberwise,
        seed: cfg.seed,
        n_repeats: cfg.n_repeats,
        metrics: summarize(&per_repeat, cfg)?,
        skipped,
    })
}

pub fn evaluate(ckpt: &Checkpoint, ds: &LabeledDataset, cfg: &EvalConfig) -> Result<MetricReport> {
    match cfg.regime {
        Regime::Global => eval_global(ckpt, ds, cfg),
        Regime::Fiberwise => eval_fiberwise(ckpt, ds, cfg),
    }
}

/// `mean±halfwidth` with three decimals.
pub fn format_cell(mean: f64, halfwidth: f64) -> String {
    format!("{mean:.3}±{halfwidth:.3}")
}

/// Text table with one row per report and one column per metric seen in
/// any report. Missing cells show "-".
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut columns: Vec<Metric> = Vec::new();
    for r in reports {
        for m in &r.metrics {
            if !columns.contains(&m.metric) {
                columns.push(m.metric);
            }
        }
    }
    columns.sort_by_key(|m| Metric::ALL.iter().position(|a| a == m));
    let mut cells: Vec<Vec<String>> = vec![std::iter::once(String::new())
        .chain(columns.iter().map(|m| m.name().to_string()))
        .collect()];
    for r in reports {
        let mut row = vec![format!("{} ({})", r.dataset, r.regime.name())];
        for &m in &columns {
            row.push(match r.get(m) {
                Some(s) => format_cell(s.mean, s.halfwidth()),
                None => "-".to_string(),
            });
        }
        cells.push(row);
    }
    let widths: Vec<usize> = (0..=columns.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in &cells {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                let _ = write!(line, "{cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(line, "{}{cell}", " ".repeat(pad));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, SyntheticKind};
    use crate::model::{build_model, ModelConfig, PriorSpec};
    use crate::train::{train, TrainConfig};

    fn summary(metric: Metric, mean: f64, lo: f64, hi: f64) -> MetricSummary {
        MetricSummary {
            metric,
            mean,
            ci_low: lo,
            ci_high: hi,
            values: vec![mean],
        }
    }

    fn report(name: &str, metrics: Vec<MetricSummary>) -> MetricReport {
        MetricReport {
            dataset: name.into(),
            regime: Regime::Global,
            seed: 0,
            n_repeats: 1,
            metrics,
            skipped: vec![],
        }
    }

    #[test]
    fn cell_rounding() {
        assert_eq!(format_cell(0.4614, 0.0199), "0.461±0.020");
        let s = summary(Metric::W1, 0.4614, 0.4415, 0.4813);
        assert_eq!(format_cell(s.mean, s.halfwidth()), "0.461±0.020");
    }

    #[test]
    fn single_cell_table() {
        let t = render_table(&[report("torus", vec![summary(Metric::W1, 1.0, 0.9, 1.1)])]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].ends_with("W1"));
        assert!(lines[1].ends_with("1.000±0.100"));
    }

    #[test]
    fn missing_metric_cell() {
        let t = render_table(&[
            report(
                "a",
                vec![
                    summary(Metric::W1, 1.0, 1.0, 1.0),
                    summary(Metric::W2, 2.0, 2.0, 2.0),
                ],
            ),
            report("b", vec![summary(Metric::W2, 3.0, 3.0, 3.0)]),
        ]);
        let last = t.lines().last().unwrap();
        assert!(last.contains(" - "));
        assert!(last.ends_with("3.000±0.000"));
        let widths: Vec<usize> = t.lines().map(|l| l.chars().count()).collect();
        assert!(widths.iter().all(|&w| w == widths[0]));
    }

    #[test]
    fn bootstrap_contains_mean() {
        let (m, lo, hi) = bootstrap_ci(&[1.0, 2.0, 3.0, 10.0], 1000, 4).unwrap();
        assert_eq!(m, 4.0);
        assert!(lo <= m && m <= hi && lo >= 1.0 && hi <= 10.0);
        assert_eq!(bootstrap_ci(&[0.7], 100, 0).unwrap(), (0.7, 0.7, 0.7));
        assert!(bootstrap_ci(&[], 10, 0).is_err());
    }

    fn fitted_checkpoint(ds: &LabeledDataset) -> Checkpoint {
        let model = ModelConfig {
            n_blocks: 2,
            subnet_width: 8,
            cond_width: 8,
            ..ModelConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 1,
            q: 4,
            ..TrainConfig::default()
        };
        train(ds, &model, &cfg).unwrap().checkpoint
    }

    fn small_eval(regime: Regime) -> EvalConfig {
        EvalConfig {
            regime,
            n_global: 60,
            n_fiber_points: 30,
            n_base_points: 3,
            n_repeats: 3,
            bootstrap_resamples: 200,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn reports_have_ordered_intervals() {
        let ds = generate(&SyntheticSpec {
            n: 80,
            seed: 5,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ckpt = fitted_checkpoint(&ds);
        for regime in [Regime::Global, Regime::Fiberwise] {
            let r = evaluate(&ckpt, &ds, &small_eval(regime)).unwrap();
            assert_eq!(r.metrics.len(), 6);
            for m in &r.metrics {
                assert!(m.ci_low <= m.mean && m.mean <= m.ci_high, "{m:?}");
                assert!(m.mean.is_finite());
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let ds = generate(&SyntheticSpec {
            n: 80,
            seed: 6,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ckpt = fitted_checkpoint(&ds);
        let cfg = small_eval(Regime::Fiberwise);
        assert_eq!(
            evaluate(&ckpt, &ds, &cfg).unwrap(),
            evaluate(&ckpt, &ds, &cfg).unwrap()
        );
    }

    #[test]
    fn single_base_point_gives_degenerate_interval() {
        let ds = generate(&SyntheticSpec {
            n: 80,
            seed: 7,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ckpt = fitted_checkpoint(&ds);
        let cfg = EvalConfig {
            n_base_points: 1,
            n_repeats: 1,
            ..small_eval(Regime::Fiberwise)
        };
        let r = evaluate(&ckpt, &ds, &cfg).unwrap();
        for m in &r.metrics {
            assert_eq!((m.ci_low, m.ci_high), (m.mean, m.mean));
        }
    }

    #[test]
    fn generation_goes_through_inverse() {
        let ds = generate(&SyntheticSpec {
            n: 80,
            seed: 8,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ckpt = fitted_checkpoint(&ds);
        let before = crate::model::inverse_row_count();
        let labels = ds.train_y();
        let x = generate_global(&ckpt, &labels, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(x.len(), labels.len());
        assert_eq!(
            crate::model::inverse_row_count() - before,
            labels.len() as u64
        );
    }

    #[test]
    fn empty_chart_is_skipped() {
        let x =
            PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]])
                .unwrap();
        let y = PointCloud::from_rows(&[[0.0], [0.0], [0.0], [0.0], [0.0]]).unwrap();
        let ds = LabeledDataset::new(
            x.clone(),
            y,
            datasets::DatasetMeta {
                name: "flat".into(),
                categorical_labels: true,
                normalization: vec![],
                synthetic: None,
                seed: 0,
            },
        )
        .unwrap();
        let cfg = ModelConfig {
            dim_x: 2,
            dim_y: 1,
            n_circles: 0,
            n_gaussians: 1,
            n_blocks: 1,
            subnet_width: 4,
            cond_width: 4,
            ..ModelConfig::default()
        };
        let model = build_model(&cfg).unwrap();
        let mut prior = PriorSpec::new(0, 1, 2);
        let fitted = crate::model::fit_prior_stats(
            &model,
            std::slice::from_ref(&x),
            &PointCloud::from_rows(&[[0.0]]).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        prior.set(0, fitted.charts[0].clone().unwrap());
        prior.set(1, fitted.charts[0].clone().unwrap());
        let ckpt = Checkpoint {
            format: crate::checkpoint::FORMAT.into(),
            model,
            atlas: crate::charts::ChartAtlas {
                reps: PointCloud::from_rows(&[[0.0], [5.0]]).unwrap(),
                mode: crate::charts::ChartMode::Finite,
            },
            prior,
            train_config: TrainConfig::default(),
            dataset: ds.meta.clone(),
            epochs: 0,
        };
        let labels = PointCloud::from_rows(&[[0.0], [5.0]]).unwrap();
        let cfg = EvalConfig {
            n_fiber_points: 8,
            metrics: vec![Metric::W1, Metric::Msmd],
            ..EvalConfig::default()
        };
        let rows =
            fiber_metrics(&ckpt, &ds, &labels, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(rows[0].is_some());
        assert!(rows[1].is_none());
    }

    #[test]
    fn oval_has_no_fibers() {
        let ds = generate(&SyntheticSpec {
            kind: SyntheticKind::Oval,
            n: 40,
            ..SyntheticSpec::default()
        });
        if let Ok(ds) = ds {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let spec = ds.meta.synthetic.clone().unwrap();
            assert!(fiber_oracle(&spec, &[1.0, 0.0], 5, &mut rng).is_err());
        }
    }
}
