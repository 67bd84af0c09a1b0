//! Labeled datasets: synthetic bundles, UCI tables, normalization, splits
//! and on-disk persistence.

mod io;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::{Error, Result};

pub use io::{load_csv, load_dataset, load_table, load_wine, save_dataset, sidecar_path, Table};
pub use synthetic::{fiber_oracle, gen_oval, label_angle, SyntheticKind, SyntheticSpec};

pub const NORMALIZED_SPAN: f64 = 10.0;

/// Column minimum and maximum before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    fn range(&self) -> f64 {
        let r = self.max - self.min;
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        NORMALIZED_SPAN * (v - self.min) / self.range()
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.range() / NORMALIZED_SPAN + self.min
    }
}

/// Maps a column onto `[0, 10]` in place; a constant column becomes zeros.
pub fn normalize(column: &mut [f64]) -> Result<ColumnScale> {
    if column.is_empty() {
        return Err(Error::InvalidInput(
            "cannot normalize an empty column".into(),
        ));
    }
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = ColumnScale { min, max };
    for v in column.iter_mut() {
        *v = scale.apply(*v);
    }
    Ok(scale)
}

/// Seeded shuffle; the first `round((1 − test_frac)·n)` indices train.
pub fn split_indices(n: usize, test_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::InvalidInput(format!(
            "need at least 5 rows to split, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Config(format!(
            "test fraction {test_frac} outside [0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((1.0 - test_frac) * n as f64).round() as usize;
    let test = idx.split_off(n_train.clamp(1, n));
    Ok((idx, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Labels take finitely many values (one chart per value).
    pub categorical_labels: bool,
    /// One entry per x column then per y column; empty when unnormalized.
    pub normalization: Vec<ColumnScale>,
    pub synthetic: Option<SyntheticSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: PointCloud,
    pub y: PointCloud,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(x: PointCloud, y: PointCloud, meta: DatasetMeta) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs but {} labels",
                x.len(),
                y.len()
            )));
        }
        let train = (0..x.len()).collect();
        Ok(Self {
            x,
            y,
            train,
            test: Vec::new(),
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.x.dim()
    }

    pub fn dim_y(&self) -> usize {
        self.y.dim()
    }

    pub fn with_split(mut self, test_frac: f64, seed: u64) -> Result<Self> {
        let (train, test) = split_indices(self.len(), test_frac, seed)?;
        self.train = train;
        self.test = test;
        Ok(self)
    }

    pub fn set_split(&mut self, train: Vec<usize>, test: Vec<usize>) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &i in train.iter().chain(&test) {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!(
                    "split index {i} is out of range or repeated"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("split does not cover every row".into()));
        }
        self.train = train;
        self.test = test;
        Ok(())
    }

    pub fn train_x(&self) -> PointCloud {
        self.x.select(&self.train)
    }

    pub fn train_y(&self) -> PointCloud {
        self.y.select(&self.train)
    }

    pub fn test_x(&self) -> PointCloud {
        self.x.select(&self.test)
    }

    pub fn test_y(&self) -> PointCloud {
        self.y.select(&self.test)
    }

    /// Normalizes every column to `[0, 10]` and records the scales.
    pub fn normalized(mut self) -> Result<Self> {
        let mut scales = Vec::new();
        for cloud in [&mut self.x, &mut self.y] {
            let (n, d) = (cloud.len(), cloud.dim());
            let mut data = cloud.data().to_vec();
            for c in 0..d {
                let mut col: Vec<f64> = (0..n).map(|i| data[i * d + c]).collect();
                scales.push(normalize(&mut col)?);
                for (i, v) in col.into_iter().enumerate() {
                    data[i * d + c] = v;
                }
            }
            *cloud = PointCloud::new(d, data)?;
        }
        self.meta.normalization = scales;
        Ok(self)
    }
}

/// Generates a synthetic dataset; all rows are training rows.
pub fn generate(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sample = synthetic::sample(spec, false, &mut rng)?;
    LabeledDataset::new(
        sample.x,
        sample.y,
        DatasetMeta {
            name: spec.kind.name().to_string(),
            categorical_labels: false,
            normalization: Vec::new(),
            synthetic: Some(spec.clone()),
            seed: spec.seed,
        },
    )
}

/// Reference draw used by global evaluation: surface-uniform for the torus,
/// parameter-uniform otherwise.
pub fn reference_sample(
    spec: &SyntheticSpec,
    n: usize,
    rng: &mut impl rand::Rng,
) -> Result<PointCloud> {
    let spec = SyntheticSpec { n, ..spec.clone() };
    Ok(synthetic::sample(&spec, true, rng)?.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let mut a = vec![0.0, 5.0, 10.0];
        normalize(&mut a).unwrap();
        assert_eq!(a, vec![0.0, 5.0, 10.0]);
        let mut b = vec![2.0, 4.0];
        normalize(&mut b).unwrap();
        assert_eq!(b, vec![0.0, 10.0]);
        let mut c = vec![7.0, 7.0];
        normalize(&mut c).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        assert!(normalize(&mut []).is_err());
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut a = vec![3.0, -1.0, 8.5, 2.25];
        normalize(&mut a).unwrap();
        let once = a.clone();
        normalize(&mut a).unwrap();
        for (x, y) in once.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_round_trip() {
        let s = ColumnScale {
            min: -2.0,
            max: 6.0,
        };
        assert!((s.invert(s.apply(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn split_examples() {
        let (train, test) = split_indices(10, 0.2, 3).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(
            split_indices(10, 0.2, 3).unwrap(),
            (train.clone(), test.clone())
        );
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_indices(4, 0.2, 0).is_err());
    }

    #[test]
    fn synthetic_dataset_shape() {
        let ds = generate(&SyntheticSpec {
            n: 50,
            seed: 7,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert_eq!((ds.len(), ds.dim_x(), ds.dim_y()), (50, 3, 2));
        assert_eq!(ds.train.len(), 50);
        assert!(ds.test.is_empty());
    }

    #[test]
    fn normalized_dataset_spans_range() {
        let x = PointCloud::from_rows(&[[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]]).unwrap();
        let y = PointCloud::from_rows(&[[10.0], [20.0], [15.0]]).unwrap();
        let meta = DatasetMeta {
            name: "t".into(),
            categorical_labels: false,
            normalization: vec![],
            synthetic: None,
            seed: 0,
        };
        let ds = LabeledDataset::new(x, y, meta)
            .unwrap()
            .normalized()
            .unwrap();
        assert_eq!(ds.x.data(), &[0.0, 0.0, 10.0, 0.0, 5.0, 0.0]);
        assert_eq!(ds.y.data(), &[0.0, 10.0, 5.0]);
        assert_eq!(ds.meta.normalization.len(), 3);
    }

    #[test]
    fn bad_split_rejected() {
        let mut ds = generate(&SyntheticSpec {
            n: 6,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert!(ds.set_split(vec![0, 1, 2], vec![3, 4]).is_err());
        assert!(ds.set_split(vec![0, 1, 2, 3], vec![3, 4, 5]).is_err());
        assert!(ds.set_split(vec![0, 1, 2, 3], vec![4, 5]).is_ok());
    }
}
