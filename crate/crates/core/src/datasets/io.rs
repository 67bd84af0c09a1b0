use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, LabeledDataset};
use crate::charts::MAX_FINITE_CHARTS;
use crate::pointcloud::PointCloud;
use crate::{Error, Result};

const SIDECAR_FORMAT: &str = "bundlenet-dataset/1";

/// Labels with at most this many distinct values are treated as categorical
/// by [`load_csv`].
const CATEGORICAL_MAX_DISTINCT: usize = 32;

/// A numeric table read from a delimited text file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn columns(&self, cols: &[usize]) -> Result<PointCloud> {
        let data = self
            .rows
            .iter()
            .flat_map(|r| cols.iter().map(move |&c| r[c]))
            .collect();
        PointCloud::new(cols.len(), data)
    }
}

fn data_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Delimiter {
    Byte(u8),
    Whitespace,
}

fn detect_delimiter(first_line: &str) -> Delimiter {
    // tabs fall through to whitespace splitting, which also absorbs
    // files that mix tabs and spaces
    [b';', b',']
        .into_iter()
        .map(|d| (first_line.bytes().filter(|&b| b == d).count(), d))
        .filter(|&(count, _)| count > 0)
        .max_by_key(|&(count, _)| count)
        .map_or(Delimiter::Whitespace, |(_, d)| Delimiter::Byte(d))
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().trim_matches('"').parse::<f64>().ok()
}

fn split_records(
    text: &str,
    delim: Delimiter,
) -> std::result::Result<Vec<(usize, Vec<String>)>, String> {
    match delim {
        Delimiter::Whitespace => Ok(text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect()))
            .collect()),
        Delimiter::Byte(d) => {
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(d)
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            let mut out = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(|e| e.to_string())?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(str::is_empty) {
                    continue;
                }
                out.push((line, rec.iter().map(str::to_string).collect()));
            }
            Ok(out)
        }
    }
}

/// Reads a numeric table. The delimiter (`;`, `,`, or runs of whitespace
/// including tabs) is detected from the first line, and a first row with any
/// non-numeric cell is taken as a header.
pub fn load_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| data_err(path, e.to_string()))?;
    let text = text.trim_start_matches('\u{feff}');
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| data_err(path, "file is empty"))?;
    let records = split_records(text, detect_delimiter(first)).map_err(|e| data_err(path, e))?;
    let mut iter = records.into_iter().peekable();
    let header = match iter.peek() {
        Some((_, cells)) if cells.iter().any(|c| parse_cell(c).is_none()) => Some(
            iter.next()
                .expect("peeked")
                .1
                .into_iter()
                .map(|c| c.trim_matches('"').to_string())
                .collect::<Vec<_>>(),
        ),
        _ => None,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for (line, cells) in iter {
        let expected = *width.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(data_err(
                path,
                format!("line {line}: {} fields, expected {expected}", cells.len()),
            ));
        }
        let row = cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                parse_cell(cell).filter(|v| v.is_finite()).ok_or_else(|| {
                    data_err(
                        path,
                        format!("line {line}, column {}: cannot parse {cell:?}", c + 1),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(data_err(path, "no data rows"));
    }
    Ok(Table { header, rows })
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Loads a table and normalizes every column to `[0, 10]`. Without explicit
/// columns the last column is the label and the rest are inputs.
pub fn load_csv(
    path: &Path,
    input_cols: Option<&[usize]>,
    label_cols: Option<&[usize]>,
) -> Result<LabeledDataset> {
    let table = load_table(path)?;
    let n_cols = table.n_cols();
    if n_cols < 2 {
        return Err(data_err(
            path,
            "need at least one input and one label column",
        ));
    }
    let labels: Vec<usize> = label_cols.map_or_else(|| vec![n_cols - 1], <[usize]>::to_vec);
    let inputs: Vec<usize> = input_cols.map_or_else(
        || (0..n_cols).filter(|c| !labels.contains(c)).collect(),
        <[usize]>::to_vec,
    );
    if let Some(&c) = inputs.iter().chain(&labels).find(|&&c| c >= n_cols) {
        return Err(data_err(
            path,
            format!("column {c} out of range ({n_cols} columns)"),
        ));
    }
    if inputs.is_empty() || labels.is_empty() {
        return Err(data_err(path, "empty input or label column set"));
    }
    let x = table.columns(&inputs)?;
    let y = table.columns(&labels)?;
    let distinct = distinct_count(&y);
    let meta = DatasetMeta {
        name: dataset_name(path),
        categorical_labels: distinct <= CATEGORICAL_MAX_DISTINCT.min(MAX_FINITE_CHARTS),
        normalization: Vec::new(),
        synthetic: None,
        seed: 0,
    };
    LabeledDataset::new(x, y, meta)?.normalized()
}

fn distinct_count(y: &PointCloud) -> usize {
    let mut rows: Vec<Vec<u64>> = y
        .rows()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}

/// Merges the red and white wine tables: 11 inputs, labels (color, quality)
/// with color 0 for red and 1 for white, all normalized.
pub fn load_wine(red: &Path, white: &Path) -> Result<LabeledDataset> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (path, color) in [(red, 0.0), (white, 1.0)] {
        let table = load_table(path)?;
        if table.n_cols() != 12 {
            return Err(data_err(
                path,
                format!(
                    "expected 12 columns (11 inputs and quality), found {}",
                    table.n_cols()
                ),
            ));
        }
        for row in &table.rows {
            xs.extend_from_slice(&row[..11]);
            ys.extend_from_slice(&[color, row[11]]);
        }
    }
    let meta = DatasetMeta {
        name: "wine".into(),
        categorical_labels: true,
        normalization: Vec::new(),
        synthetic: None,
        seed: 0,
    };
    LabeledDataset::new(PointCloud::new(11, xs)?, PointCloud::new(2, ys)?, meta)?.normalized()
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    dim_x: usize,
    dim_y: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    meta: DatasetMeta,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `x` and `y` columns as CSV plus a JSON sidecar with split and
/// normalization metadata next to it.
pub fn save_dataset(ds: &LabeledDataset, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| data_err(csv_path, e.to_string()))?;
    let header: Vec<String> = (0..ds.dim_x())
        .map(|i| format!("x{i}"))
        .chain((0..ds.dim_y()).map(|i| format!("y{i}")))
        .collect();
    let csv_err = |e: csv::Error| data_err(csv_path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (x, y) in ds.x.rows().zip(ds.y.rows()) {
        w.write_record(x.iter().chain(y).map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    let sidecar = Sidecar {
        format: SIDECAR_FORMAT.into(),
        dim_x: ds.dim_x(),
        dim_y: ds.dim_y(),
        train: ds.train.clone(),
        test: ds.test.clone(),
        meta: ds.meta.clone(),
    };
    fs::write(
        sidecar_path(csv_path),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn load_dataset(csv_path: &Path) -> Result<LabeledDataset> {
    let side = sidecar_path(csv_path);
    let text = fs::read_to_string(&side).map_err(|e| data_err(&side, e.to_string()))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.format != SIDECAR_FORMAT {
        return Err(data_err(
            &side,
            format!("unknown format {:?}", sidecar.format),
        ));
    }
    let table = load_table(csv_path)?;
    if table.n_cols() != sidecar.dim_x + sidecar.dim_y {
        return Err(data_err(
            csv_path,
            format!(
                "{} columns, sidecar says {} + {}",
                table.n_cols(),
                sidecar.dim_x,
                sidecar.dim_y
            ),
        ));
    }
    let x = table.columns(&(0..sidecar.dim_x).collect::<Vec<_>>())?;
    let y = table.columns(&(sidecar.dim_x..table.n_cols()).collect::<Vec<_>>())?;
    let mut ds = LabeledDataset::new(x, y, sidecar.meta)?;
    ds.set_split(sidecar.train, sidecar.test)?;
    Ok(ds)
}
