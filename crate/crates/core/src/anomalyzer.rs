//! Per-cell normal-band learning, scoring and explanation.
//!
//! For every grid cell the fitter evaluates candidate bands `[L, U]` drawn
//! from percentiles of the normal class's cell means. Each candidate turns
//! every training image's cell mean `I` into the deviation statistic
//! `S = |U − I| + |L − I|`, and the candidate whose `S` values best separate
//! the two labels under a one-way ANOVA F-test wins. Scoring maps `S` to a
//! likelihood with the logistic sigmoid and flags cells whose likelihood
//! reaches `theta`; an image is anomalous once at least `min_corrupt_cells`
//! cells are flagged.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::dataset::{Label, LabeledImage, Pixels};
use crate::error::{Error, Result};
use crate::eval::ConfusionCounts;
use crate::gridstats::{cell_means, percentile_sorted, two_group_f, CellFeatureGrid, FStat};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_GRID_SIZE: usize = 16;
pub const DEFAULT_THETA: f64 = 0.7;
pub const DEFAULT_MIN_CORRUPT_CELLS: usize = 4;

/// Largest likelihood a cell can reach: intensities live in `[0, 1]`, so
/// `S ≤ 2`.
pub fn max_likelihood() -> f64 {
    likelihood(2.0)
}

pub fn s_statistic(intensity: f64, upper: f64, lower: f64) -> f64 {
    (upper - intensity).abs() + (lower - intensity).abs()
}

pub fn likelihood(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// The `S` value at which the likelihood equals `theta`.
pub fn logit(theta: f64) -> f64 {
    (theta / (1.0 - theta)).ln()
}

/// Integer percentile ranges the band search draws `L` and `U` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PercentileSearch {
    pub lower_min: u32,
    pub lower_max: u32,
    pub upper_min: u32,
    pub upper_max: u32,
    pub step: u32,
}

impl Default for PercentileSearch {
    fn default() -> Self {
        Self {
            lower_min: 1,
            lower_max: 80,
            upper_min: 20,
            upper_max: 99,
            step: 1,
        }
    }
}

impl PercentileSearch {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step > 0
            && self.lower_min <= self.lower_max
            && self.upper_min <= self.upper_max
            && self.lower_max <= 100
            && self.upper_max <= 100;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad percentile search {self:?}")))
        }
    }

    pub fn lower_percentiles(&self) -> impl Iterator<Item = u32> + '_ {
        (self.lower_min..=self.lower_max).step_by(self.step as usize)
    }

    pub fn upper_percentiles(&self) -> impl Iterator<Item = u32> + '_ {
        (self.upper_min..=self.upper_max).step_by(self.step as usize)
    }
}

/// What to do with a cell whose normal-class means have no spread, so that
/// no candidate satisfies `L < U` (e.g. an always-black corner).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateCells {
    /// Fail with [`Error::DegenerateCell`].
    Reject,
    /// Centre a band one 8-bit quantization step wide on the constant value.
    #[default]
    QuantizationBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub grid_size: usize,
    pub search: PercentileSearch,
    pub degenerate_cells: DegenerateCells,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            search: PercentileSearch::default(),
            degenerate_cells: DegenerateCells::default(),
        }
    }
}

/// The band chosen for one cell and the statistic that selected it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFit {
    pub row: usize,
    pub col: usize,
    pub lower: f64,
    pub upper: f64,
    /// `(lower, upper)` percentiles; `None` for a degenerate-cell fallback.
    pub percentiles: Option<(u32, u32)>,
    pub f: FStat,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: AnomalyzerModel,
    /// Row-major, one entry per cell.
    pub cells: Vec<CellFit>,
}

/// Learned per-cell bands plus the decision thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyzerModel {
    n: usize,
    canonical_size: usize,
    theta: f64,
    min_corrupt_cells: usize,
    upper: Array2<f64>,
    lower: Array2<f64>,
    excluded: Vec<(usize, usize)>,
}

/// Candidate ordering: larger F, then wider band, then smaller upper
/// percentile, then smaller lower percentile.
fn better(a: &CellFit, b: &CellFit) -> bool {
    let ord = a
        .f
        .cmp(&b.f)
        .then_with(|| (a.upper - a.lower).total_cmp(&(b.upper - b.lower)))
        .then_with(|| {
            let (al, au) = a.percentiles.unwrap_or_default();
            let (bl, bu) = b.percentiles.unwrap_or_default();
            (bu, bl).cmp(&(au, al))
        });
    ord == Ordering::Greater
}

/// Learns per-cell bands from labeled training images.
///
/// The returned model carries the default thresholds; use
/// [`AnomalyzerModel::with_thresholds`] to change them.
pub fn fit(train: &[LabeledImage], options: &FitOptions) -> Result<FitOutcome> {
    options.search.validate()?;
    let n = options.grid_size;
    let first = train
        .first()
        .ok_or_else(|| Error::MissingClass(Label::Anomalous.to_string()))?;
    let size = first.height();
    for img in train {
        if img.height() != size || img.width() != size {
            return Err(Error::SizeMismatch {
                want: size,
                got_w: img.width(),
                got_h: img.height(),
            });
        }
    }
    for class in [Label::Anomalous, Label::NonAnomalous] {
        if !train.iter().any(|i| i.label == class) {
            return Err(Error::MissingClass(class.to_string()));
        }
    }
    if train.len() < 3 {
        return Err(Error::invalid("fit needs at least 3 training images"));
    }
    let grids: Vec<CellFeatureGrid> = train
        .par_iter()
        .map(|img| cell_means(&img.pixels, n))
        .collect::<Result<_>>()?;
    let anomalous: Vec<bool> = train.iter().map(|i| i.label.is_anomalous()).collect();

    let cells: Vec<CellFit> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / n, idx % n);
            let values: Vec<f64> = grids.iter().map(|g| g.get(row, col)).collect();
            fit_cell(row, col, &values, &anomalous, options)
        })
        .collect::<Result<_>>()?;

    let mut upper = Array2::zeros((n, n));
    let mut lower = Array2::zeros((n, n));
    for c in &cells {
        upper[[c.row, c.col]] = c.upper;
        lower[[c.row, c.col]] = c.lower;
    }
    let model = AnomalyzerModel::new(
        n,
        size,
        upper,
        lower,
        DEFAULT_THETA,
        DEFAULT_MIN_CORRUPT_CELLS,
    )?;
    Ok(FitOutcome { model, cells })
}

/// Exhaustive band search for a single cell.
///
/// `values[k]` is image k's cell mean and `anomalous[k]` its label.
pub fn fit_cell(
    row: usize,
    col: usize,
    values: &[f64],
    anomalous: &[bool],
    options: &FitOptions,
) -> Result<CellFit> {
    let mut normal: Vec<f64> = values
        .iter()
        .zip(anomalous)
        .filter(|(_, &a)| !a)
        .map(|(&v, _)| v)
        .collect();
    normal.sort_by(f64::total_cmp);
    let search = &options.search;
    let at = |p: u32| percentile_sorted(&normal, f64::from(p));
    let lowers: Vec<(u32, f64)> = search
        .lower_percentiles()
        .map(|p| at(p).map(|v| (p, v)))
        .collect::<Result<_>>()?;
    let uppers: Vec<(u32, f64)> = search
        .upper_percentiles()
        .map(|p| at(p).map(|v| (p, v)))
        .collect::<Result<_>>()?;

    let mut s = vec![0.0; values.len()];
    let mut best: Option<CellFit> = None;
    for &(up, uv) in &uppers {
        for &(lp, lv) in &lowers {
            if !(lv < uv) {
                continue;
            }
            for (dst, &i) in s.iter_mut().zip(values) {
                *dst = s_statistic(i, uv, lv);
            }
            let cand = CellFit {
                row,
                col,
                lower: lv,
                upper: uv,
                percentiles: Some((lp, up)),
                f: two_group_f(&s, anomalous),
            };
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    match (best, options.degenerate_cells) {
        (Some(b), _) => Ok(b),
        (None, DegenerateCells::Reject) => Err(Error::DegenerateCell { row, col }),
        (None, DegenerateCells::QuantizationBand) => {
            let centre = normal[normal.len() / 2];
            let half = 0.5 / 255.0;
            let (mut lower, mut upper) = (centre - half, centre + half);
            if lower < 0.0 {
                (lower, upper) = (0.0, 2.0 * half);
            } else if upper > 1.0 {
                (lower, upper) = (1.0 - 2.0 * half, 1.0);
            }
            Ok(CellFit {
                row,
                col,
                lower,
                upper,
                percentiles: None,
                f: FStat::Finite(0.0),
            })
        }
    }
}

/// Checks model settings that do not depend on learned bands: grid size,
/// canonical size, likelihood threshold and minimum flagged cells.
pub fn validate_settings(
    n: usize,
    canonical_size: usize,
    theta: f64,
    min_corrupt_cells: usize,
) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidModel(msg));
    if n < 2 {
        return bad(format!("grid size {n} < 2"));
    }
    if canonical_size == 0 || !canonical_size.is_multiple_of(n) {
        return bad(format!("canonical size {canonical_size} not divisible by grid size {n}"));
    }
    if !(theta > 0.5 && theta < 1.0) {
        return bad(format!("theta {theta} outside (0.5, 1)"));
    }
    if theta >= max_likelihood() {
        return bad(format!(
            "theta {theta} >= sigmoid(2) = {:.4}; no cell could ever be flagged",
            max_likelihood()
        ));
    }
    if min_corrupt_cells == 0 || min_corrupt_cells > n * n {
        return bad(format!("min_corrupt_cells {min_corrupt_cells} outside [1, {}]", n * n));
    }
    Ok(())
}

impl AnomalyzerModel {
    pub fn new(
        n: usize,
        canonical_size: usize,
        upper: Array2<f64>,
        lower: Array2<f64>,
        theta: f64,
        min_corrupt_cells: usize,
    ) -> Result<Self> {
        let model = Self {
            n,
            canonical_size,
            theta,
            min_corrupt_cells,
            upper,
            lower,
            excluded: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_thresholds(mut self, theta: f64, min_corrupt_cells: usize) -> Result<Self> {
        self.theta = theta;
        self.min_corrupt_cells = min_corrupt_cells;
        self.validate()?;
        Ok(self)
    }

    /// Cells that are never flagged, for masking known instrument artefacts.
    pub fn with_excluded_cells(mut self, cells: Vec<(usize, usize)>) -> Result<Self> {
        self.excluded = cells;
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn canonical_size(&self) -> usize {
        self.canonical_size
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn min_corrupt_cells(&self) -> usize {
        self.min_corrupt_cells
    }

    pub fn upper(&self) -> &Array2<f64> {
        &self.upper
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn excluded_cells(&self) -> &[(usize, usize)] {
        &self.excluded
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        validate_settings(n, self.canonical_size, self.theta, self.min_corrupt_cells)?;
        if self.upper.dim() != (n, n) || self.lower.dim() != (n, n) {
            return Err(Error::InvalidModel("bound arrays do not match the grid".into()));
        }
        for ((idx, &u), &l) in self.upper.indexed_iter().zip(self.lower.iter()) {
            if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&l) || !(l < u) {
                return Err(Error::InvalidModel(format!("cell {idx:?} has invalid band [{l}, {u}]")));
            }
        }
        if let Some(c) = self.excluded.iter().find(|&&(r, c)| r >= n || c >= n) {
            return Err(Error::InvalidModel(format!("excluded cell {c:?} outside the grid")));
        }
        Ok(())
    }

    /// Scores an image already resampled to the model's canonical size.
    pub fn score(&self, pixels: &Pixels) -> Result<ScoreMap> {
        let (h, w) = pixels.dim();
        if h != self.canonical_size || w != self.canonical_size {
            return Err(Error::SizeMismatch {
                want: self.canonical_size,
                got_w: w,
                got_h: h,
            });
        }
        self.score_grid(&cell_means(pixels, self.n)?)
    }

    pub fn score_grid(&self, grid: &CellFeatureGrid) -> Result<ScoreMap> {
        if grid.n() != self.n {
            return Err(Error::invalid(format!(
                "feature grid is {0}x{0}, model is {1}x{1}",
                grid.n(),
                self.n
            )));
        }
        let s = Array2::from_shape_fn((self.n, self.n), |(r, c)| {
            s_statistic(grid.get(r, c), self.upper[[r, c]], self.lower[[r, c]])
        });
        let mut excluded = Array2::from_elem((self.n, self.n), false);
        for &(r, c) in &self.excluded {
            excluded[[r, c]] = true;
        }
        Ok(ScoreMap::from_scores(
            s,
            &excluded,
            self.theta,
            self.min_corrupt_cells,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        let flat = |a: &Array2<f64>| -> Result<Box<RawValue>> {
            let body: Vec<String> = a.iter().map(|v| format!("{v:e}")).collect();
            Ok(RawValue::from_string(format!("[{}]", body.join(",")))?)
        };
        let doc = ModelDocOut {
            version: MODEL_FORMAT_VERSION,
            n: self.n,
            canonical_size: self.canonical_size,
            theta: self.theta,
            min_corrupt_cells: self.min_corrupt_cells,
            upper: flat(&self.upper)?,
            lower: flat(&self.lower)?,
            excluded_cells: self.excluded.iter().map(|&(r, c)| [r, c]).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(probe.version));
        }
        let doc: ModelDocIn = serde_json::from_str(text)?;
        let n = doc.n;
        let grid = |v: Vec<f64>, name: &str| {
            Array2::from_shape_vec((n, n), v)
                .map_err(|_| Error::InvalidModel(format!("{name} must hold {} values", n * n)))
        };
        let model = Self {
            n,
            canonical_size: doc.canonical_size,
            theta: doc.theta,
            min_corrupt_cells: doc.min_corrupt_cells,
            upper: grid(doc.upper, "upper")?,
            lower: grid(doc.lower, "lower")?,
            excluded: doc.excluded_cells.into_iter().map(|[r, c]| (r, c)).collect(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize)]
struct ModelDocOut {
    version: u32,
    n: usize,
    canonical_size: usize,
    theta: f64,
    min_corrupt_cells: usize,
    upper: Box<RawValue>,
    lower: Box<RawValue>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    excluded_cells: Vec<[usize; 2]>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocIn {
    #[allow(dead_code)]
    version: u32,
    n: usize,
    canonical_size: usize,
    theta: f64,
    min_corrupt_cells: usize,
    upper: Vec<f64>,
    lower: Vec<f64>,
    #[serde(default)]
    excluded_cells: Vec<[usize; 2]>,
}

/// Per-cell deviation, likelihood and flag for one scored image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub s: Array2<f64>,
    pub p: Array2<f64>,
    pub flagged: Array2<bool>,
    pub flagged_count: usize,
    pub verdict: Label,
    pub theta: f64,
    pub min_corrupt_cells: usize,
}

impl ScoreMap {
    /// A cell is flagged when `p ≥ theta`, evaluated as `S ≥ logit(theta)`
    /// so the decision does not depend on rounding inside the sigmoid.
    pub fn from_scores(
        s: Array2<f64>,
        excluded: &Array2<bool>,
        theta: f64,
        min_corrupt_cells: usize,
    ) -> Self {
        let cut = logit(theta);
        let p = s.mapv(likelihood);
        let flagged = ndarray::Zip::from(&s)
            .and(excluded)
            .map_collect(|&s, &ex| !ex && s >= cut);
        let flagged_count = flagged.iter().filter(|&&f| f).count();
        let verdict = if flagged_count >= min_corrupt_cells {
            Label::Anomalous
        } else {
            Label::NonAnomalous
        };
        Self {
            s,
            p,
            flagged,
            flagged_count,
            verdict,
            theta,
            min_corrupt_cells,
        }
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }
}

/// One flagged cell in an explanation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFlag {
    pub row: usize,
    pub col: usize,
    pub s: f64,
    pub p: f64,
}

/// Flagged cells ordered by likelihood, highest first; ties by `(row, col)`.
pub fn explain(map: &ScoreMap) -> Vec<CellFlag> {
    let mut out: Vec<CellFlag> = map
        .flagged
        .indexed_iter()
        .filter(|(_, &f)| f)
        .map(|((row, col), _)| CellFlag {
            row,
            col,
            s: map.s[[row, col]],
            p: map.p[[row, col]],
        })
        .collect();
    out.sort_by(|a, b| {
        b.p.total_cmp(&a.p)
            .then_with(|| (a.row, a.col).cmp(&(b.row, b.col)))
    });
    out
}

/// Result of a threshold sweep on a validation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub theta: f64,
    pub min_corrupt_cells: usize,
    pub counts: ConfusionCounts,
    pub f1: Option<f64>,
}

/// Likelihood thresholds tried by [`tune_thresholds`] by default:
/// 0.51, 0.52, ... up to the largest value below `sigmoid(2)`.
pub fn default_theta_grid() -> Vec<f64> {
    (51..=88)
        .map(|c| f64::from(c) / 100.0)
        .filter(|&t| t < max_likelihood())
        .collect()
}

/// Picks `(theta, min_corrupt_cells)` maximizing validation F1. Ties keep
/// the earliest combination in `(theta, min_cells)` grid order.
pub fn tune_thresholds(
    model: &AnomalyzerModel,
    validation: &[LabeledImage],
    thetas: &[f64],
    min_cells: &[usize],
) -> Result<ThresholdChoice> {
    if thetas.is_empty() || min_cells.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    let maps: Vec<(Label, ScoreMap)> = validation
        .par_iter()
        .map(|img| model.score(&img.pixels).map(|m| (img.label, m)))
        .collect::<Result<_>>()?;
    let n = model.n();
    let mut allowed = Array2::from_elem((n, n), true);
    for &(r, c) in model.excluded_cells() {
        allowed[[r, c]] = false;
    }
    let mut best: Option<ThresholdChoice> = None;
    for &theta in thetas {
        if !(theta > 0.5 && theta < max_likelihood()) {
            return Err(Error::invalid(format!("theta {theta} outside (0.5, sigmoid(2))")));
        }
        let cut = logit(theta);
        let flagged: Vec<(Label, usize)> = maps
            .iter()
            .map(|(label, m)| {
                let count = ndarray::Zip::from(&m.s)
                    .and(&allowed)
                    .fold(0, |acc, &s, &ok| acc + usize::from(ok && s >= cut));
                (*label, count)
            })
            .collect();
        for &mc in min_cells {
            let mut counts = ConfusionCounts::default();
            for &(label, count) in &flagged {
                counts.record(label.is_anomalous(), count >= mc);
            }
            let f1 = counts.metrics().f1;
            let improves = best
                .as_ref()
                .is_none_or(|b| f1.unwrap_or(-1.0) > b.f1.unwrap_or(-1.0));
            if improves {
                best = Some(ThresholdChoice {
                    theta,
                    min_corrupt_cells: mc,
                    counts,
                    f1,
                });
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}
