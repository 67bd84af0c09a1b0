//! Flat `key = value` configuration with dotted sections.
//!
//! ```text
//! # torus run
//! seed = 7
//! data.kind = torus
//! model.n_blocks = 5
//! train.epochs = 2000
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::CliError;

/// Where a resolved value came from, lowest precedence first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Flag,
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub value: String,
    pub source: Source,
}

/// Resolved configuration. Keys must be declared in [`KEYS`].
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

/// Every recognized key with its default (`""` means unset).
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data.path", ""),
    ("data.csv", ""),
    ("data.input_cols", ""),
    ("data.label_cols", ""),
    ("data.wine_red", ""),
    ("data.wine_white", ""),
    ("data.test_frac", "0.2"),
    ("data.kind", "torus"),
    ("data.n", "1000"),
    ("data.r", "2"),
    ("data.big_r", "8"),
    ("data.base_radius", "4.5"),
    ("data.seed", ""),
    ("model.n_circles", "3"),
    ("model.n_gaussians", "auto"),
    ("model.n_blocks", "5"),
    ("model.subnet_depth", "3"),
    ("model.subnet_width", "64"),
    ("model.cond_depth", "2"),
    ("model.cond_width", "64"),
    ("model.soft_clamp_alpha", "2"),
    ("model.pad_noise_std", "0.01"),
    ("train.epochs", "2000"),
    ("train.lr0", "1e-4"),
    ("train.lr_halve_every", "70"),
    ("train.q", "25"),
    ("train.knn_k", "5"),
    ("train.gen_per_neighborhood", "match"),
    ("train.backward_space", "input"),
    ("train.max_neighborhood", "none"),
    ("eval.checkpoint", ""),
    ("eval.regime", "both"),
    ("eval.n_global", "4000"),
    ("eval.n_fiber_points", "200"),
    ("eval.n_base_points", "15"),
    ("eval.n_repeats", "10"),
    ("eval.bootstrap_resamples", "1000"),
    ("eval.metrics", "MSMD,MMD,KL-fwd,KL-bwd,W1,W2"),
    ("eval.knn_k", "5"),
    ("eval.wasserstein", "auto"),
    ("eval.entropic_blur", "0.05"),
    ("eval.exact_threshold", "512"),
    ("ablate.q_list", "1,2,5,25"),
    ("prior.kinds", "gauss1d,gauss2d,circle"),
    ("prior.seeds", "0,1,2"),
    ("prior.a", "2"),
    ("prior.b", "1"),
    ("prior.steps", "2000"),
    ("prior.batch", "256"),
    ("prior.eval_points", "400"),
    ("prior.trace_every", "100"),
    ("prior.lr", "1e-3"),
    ("prior.lr_halve_every", "500"),
    ("generate.checkpoint", ""),
    ("generate.y", ""),
    ("generate.n", "200"),
];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Parses config text into `(line, key, value)` triples.
pub fn parse(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Parse {
                line: line_no,
                detail: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(CliError::Parse {
                line: line_no,
                detail: format!("invalid key {key:?}"),
            });
        }
        if !is_known(key) {
            return Err(CliError::Parse {
                line: line_no,
                detail: format!("unknown key {key:?}"),
            });
        }
        out.push((line_no, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    pub fn with_defaults() -> Self {
        let mut c = Self::default();
        for (k, v) in KEYS {
            c.entries.insert(
                k.to_string(),
                Entry {
                    value: v.to_string(),
                    source: Source::Default,
                },
            );
        }
        c
    }

    pub fn apply_file(&mut self, text: &str) -> Result<(), CliError> {
        for (_, key, value) in parse(text)? {
            self.set(&key, value, Source::File)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), CliError> {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(CliError::Usage(format!(
                "--set expects KEY=VALUE, got {pair:?}"
            )));
        };
        self.set(key.trim(), value.trim().to_string(), Source::Flag)
    }

    pub fn set(&mut self, key: &str, value: String, source: Source) -> Result<(), CliError> {
        if !is_known(key) {
            return Err(CliError::Field {
                key: key.to_string(),
                detail: "unknown key".into(),
            });
        }
        self.entries
            .insert(key.to_string(), Entry { value, source });
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.entries
            .get(key)
            .map(|e| e.value.as_str())
            .unwrap_or_else(|| panic!("undeclared config key {key}"))
    }

    pub fn source(&self, key: &str) -> Source {
        self.entries.get(key).map_or(Source::Default, |e| e.source)
    }

    /// `None` for an empty value.
    pub fn opt_str(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn get<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e: T::Err| CliError::Field {
            key: key.to_string(),
            detail: format!("cannot parse {raw:?}: {e}"),
        })
    }

    /// `None` for an empty value or `none`.
    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn get_list<T>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse().map_err(|e: T::Err| CliError::Field {
                    key: key.to_string(),
                    detail: format!("cannot parse list item {s:?}: {e}"),
                })
            })
            .collect()
    }

    /// `key = value` lines for the keys under the given prefixes.
    pub fn render(&self, prefixes: &[&str]) -> String {
        let mut out = String::new();
        for (k, e) in &self.entries {
            let section = k.split_once('.').map_or("", |(s, _)| s);
            if section.is_empty() || prefixes.contains(&section) {
                out.push_str(&format!("{k} = {}\n", e.value));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let text = "# header\n\nseed = 3 # trailing\n  train.epochs=10\n";
        let entries = parse(text).unwrap();
        assert_eq!(
            entries,
            vec![
                (3, "seed".to_string(), "3".to_string()),
                (4, "train.epochs".to_string(), "10".to_string())
            ]
        );
    }

    #[test]
    fn parse_errors_name_the_line() {
        match parse("seed = 1\nnot a pair\n") {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse("seed = 1\n\nmodel.bogus = 2\n") {
            Err(CliError::Parse { line, detail }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("model.bogus"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut c = Config::with_defaults();
        assert_eq!(c.get::<usize>("train.epochs").unwrap(), 2000);
        c.apply_file("train.epochs = 10\ntrain.q = 4\n").unwrap();
        c.apply_override("train.epochs=3").unwrap();
        assert_eq!(c.get::<usize>("train.epochs").unwrap(), 3);
        assert_eq!(c.source("train.epochs"), Source::Flag);
        assert_eq!(c.get::<usize>("train.q").unwrap(), 4);
        assert_eq!(c.source("train.q"), Source::File);
    }

    #[test]
    fn typed_getters() {
        let mut c = Config::with_defaults();
        c.apply_file("ablate.q_list = 1, 2 ,5\ntrain.max_neighborhood = none\n")
            .unwrap();
        assert_eq!(c.get_list::<usize>("ablate.q_list").unwrap(), vec![1, 2, 5]);
        assert_eq!(c.get_opt::<usize>("train.max_neighborhood").unwrap(), None);
        c.apply_override("train.lr0=abc").unwrap();
        match c.get::<f64>("train.lr0") {
            Err(CliError::Field { key, .. }) => assert_eq!(key, "train.lr0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_filters_sections() {
        let c = Config::with_defaults();
        let text = c.render(&["train"]);
        assert!(text.contains("seed = 0"));
        assert!(text.contains("train.q = 25"));
        assert!(!text.contains("model."));
    }
}
