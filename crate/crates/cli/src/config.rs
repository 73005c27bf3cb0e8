use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// Settings shared by every subcommand. Any field may be omitted; command
/// line flags take precedence over values read from the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub theta: Option<f64>,
    pub min_cells: Option<usize>,
    pub canonical_size: Option<usize>,
    pub feature_grid: Option<usize>,
    pub split: Option<(f64, f64, f64)>,
    pub ratios: Option<Vec<usize>>,
    pub tol: Option<f64>,
    pub jobs: Option<usize>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Parses `1..5` (inclusive), `1,2,4` or a single integer.
pub fn parse_ratios(text: &str) -> Result<Vec<usize>> {
    let ratios: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let lo: usize = a.trim().parse().context("ratio range start")?;
        let hi: usize = b.trim().trim_start_matches('=').parse().context("ratio range end")?;
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad ratio {t:?}")))
            .collect::<Result<_>>()?
    };
    if ratios.is_empty() || ratios.contains(&0) {
        bail!("ratios must be a non-empty list of positive integers, got {text:?}");
    }
    Ok(ratios)
}
