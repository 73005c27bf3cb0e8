use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{Gamma, KernelKind, KernelSpec};
use super::smo::{train_ocsvm, train_svm, SmoOptions, SolverDiagnostics};
use super::{BaselineDetector, TrainedBaseline};
use crate::error::{Error, Result};
use crate::eval::{csv_writer, fmt_metric, ConfusionCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Svm,
    Ocsvm,
}

/// Hyperparameter axes. `c` applies to the SVM, `nu` to the one-class SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    #[serde(default)]
    pub c: Vec<f64>,
    #[serde(default)]
    pub nu: Vec<f64>,
    pub gamma: Vec<Gamma>,
    pub kernel: Vec<KernelKind>,
    #[serde(default = "default_degree")]
    pub degree: u32,
}

fn default_degree() -> u32 {
    3
}

fn default_gammas() -> Vec<Gamma> {
    let mut g = vec![Gamma::Scale, Gamma::Auto];
    g.extend((-12..=3).map(|e| Gamma::Value(2f64.powi(e))));
    g
}

impl ParamGrid {
    /// `C ∈ {0.01, 0.1, 1, 10, 100}`, gamma in {scale, auto, 2⁻¹²..2³},
    /// kernels {rbf, linear, poly}.
    pub fn default_svm() -> Self {
        Self {
            c: vec![1e-2, 1e-1, 1.0, 1e1, 1e2],
            nu: Vec::new(),
            gamma: default_gammas(),
            kernel: vec![KernelKind::Rbf, KernelKind::Linear, KernelKind::Poly],
            degree: 3,
        }
    }

    /// `ν ∈ {0.01, 0.05, 0.1, 0.2, 0.5}` with the same gamma and kernel axes.
    pub fn default_ocsvm() -> Self {
        Self {
            c: Vec::new(),
            nu: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            ..Self::default_svm()
        }
    }

    /// Grid points in evaluation order: regularizer, then gamma, then kernel.
    pub fn points(&self, kind: BaselineKind) -> Vec<BaselineParams> {
        let regs = match kind {
            BaselineKind::Svm => &self.c,
            BaselineKind::Ocsvm => &self.nu,
        };
        let mut out = Vec::new();
        for &r in regs {
            for &gamma in &self.gamma {
                for &kind_k in &self.kernel {
                    let kernel = KernelSpec {
                        kind: kind_k,
                        gamma,
                        degree: self.degree,
                    };
                    out.push(match kind {
                        BaselineKind::Svm => BaselineParams::Svm { c: r, kernel },
                        BaselineKind::Ocsvm => BaselineParams::Ocsvm { nu: r, kernel },
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineParams {
    Svm { c: f64, kernel: KernelSpec },
    Ocsvm { nu: f64, kernel: KernelSpec },
}

impl BaselineParams {
    fn describe(&self) -> (String, String, String, String) {
        let (reg, k) = match self {
            BaselineParams::Svm { c, kernel } => (format!("C={c}"), kernel),
            BaselineParams::Ocsvm { nu, kernel } => (format!("nu={nu}"), kernel),
        };
        (reg, k.kind.to_string(), k.gamma.to_string(), k.degree.to_string())
    }

    /// Trains on `train` (labels: `true` = anomalous). The one-class SVM
    /// only sees the normal rows.
    pub fn train(
        &self,
        train: &[Vec<f64>],
        labels: &[bool],
        feature_grid: usize,
        smo: &SmoOptions,
    ) -> Result<(BaselineDetector, SolverDiagnostics)> {
        let (model, diagnostics) = match self {
            BaselineParams::Svm { c, kernel } => {
                let fit = train_svm(train, labels, *c, kernel, smo)?;
                (TrainedBaseline::Svm(fit.model), fit.diagnostics)
            }
            BaselineParams::Ocsvm { nu, kernel } => {
                let normals: Vec<Vec<f64>> = train
                    .iter()
                    .zip(labels)
                    .filter(|(_, &a)| !a)
                    .map(|(x, _)| x.clone())
                    .collect();
                let fit = train_ocsvm(&normals, *nu, kernel, smo)?;
                (TrainedBaseline::Ocsvm(fit.model), fit.diagnostics)
            }
        };
        Ok((BaselineDetector::new(model, feature_grid), diagnostics))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub params: BaselineParams,
    pub counts: ConfusionCounts,
    pub f1: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub rows: Vec<GridRow>,
}

impl GridSearchResult {
    pub fn best(&self) -> &GridRow {
        &self.rows[self.best_index]
    }
}

/// Trains every grid point and scores it on the validation rows; the
/// highest validation F1 wins, ties going to the earlier grid point.
pub fn grid_search(
    kind: BaselineKind,
    train: (&[Vec<f64>], &[bool]),
    validation: (&[Vec<f64>], &[bool]),
    grid: &ParamGrid,
    feature_grid: usize,
    smo: &SmoOptions,
) -> Result<GridSearchResult> {
    let points = grid.points(kind);
    if points.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let (vx, vy) = validation;
    if !vy.iter().any(|&a| a) || vy.iter().all(|&a| a) {
        return Err(Error::invalid("validation set must contain both classes"));
    }
    let rows: Vec<GridRow> = points
        .par_iter()
        .map(|params| {
            let (det, diag) = params.train(train.0, train.1, feature_grid, smo)?;
            let mut counts = ConfusionCounts::default();
            for (x, &y) in vx.iter().zip(vy) {
                counts.record(y, det.predict_features(x)?);
            }
            Ok(GridRow {
                params: *params,
                counts,
                f1: counts.metrics().f1,
                converged: diag.converged,
            })
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.f1.unwrap_or(-1.0) > rows[best_index].f1.unwrap_or(-1.0) {
            best_index = i;
        }
    }
    Ok(GridSearchResult { best_index, rows })
}

/// Grid report: `regularizer,kernel,gamma,degree,tp,tn,fp,fn,f1`.
pub fn write_grid_report(path: &Path, result: &GridSearchResult) -> Result<()> {
    let mut out = csv_writer(path)?;
    out.write_record(["regularizer", "kernel", "gamma", "degree", "tp", "tn", "fp", "fn", "f1"])?;
    for row in &result.rows {
        let (reg, kernel, gamma, degree) = row.params.describe();
        out.write_record([
            reg,
            kernel,
            gamma,
            degree,
            row.counts.tp.to_string(),
            row.counts.tn.to_string(),
            row.counts.fp.to_string(),
            row.counts.fn_.to_string(),
            fmt_metric(row.f1),
        ])?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..10 {
            let t = k as f64 / 100.0;
            x.push(vec![0.2 + t, 0.2 - t, 0.25, 0.2]);
            y.push(false);
            x.push(vec![0.8 - t, 0.8 + t / 2.0, 0.75, 0.8]);
            y.push(true);
        }
        (x, y)
    }

    #[test]
    fn default_grid_sizes() {
        let svm = ParamGrid::default_svm();
        assert_eq!(svm.gamma.len(), 18);
        assert_eq!(svm.points(BaselineKind::Svm).len(), 5 * 18 * 3);
        assert_eq!(ParamGrid::default_ocsvm().points(BaselineKind::Ocsvm).len(), 5 * 18 * 3);
        assert!(svm.points(BaselineKind::Ocsvm).is_empty());
    }

    #[test]
    fn single_point_grid() {
        let (x, y) = toy();
        let grid = ParamGrid {
            c: vec![1.0],
            nu: vec![],
            gamma: vec![Gamma::Value(0.25)],
            kernel: vec![KernelKind::Rbf],
            degree: 3,
        };
        let res = grid_search(BaselineKind::Svm, (&x, &y), (&x, &y), &grid, 2, &SmoOptions::default()).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.best_index, 0);
        assert_eq!(res.best().f1, Some(1.0));
    }

    #[test]
    fn dominant_config_wins() {
        let (x, y) = toy();
        // A very narrow RBF memorizes the training rows and falls back to the
        // bias on unseen points; the linear kernel generalizes.
        let vx: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v + 0.03).collect()).collect();
        let grid = ParamGrid {
            c: vec![10.0],
            nu: vec![],
            gamma: vec![Gamma::Value(1e6)],
            kernel: vec![KernelKind::Rbf, KernelKind::Linear],
            degree: 3,
        };
        let res = grid_search(BaselineKind::Svm, (&x, &y), (&vx, &y), &grid, 2, &SmoOptions::default()).unwrap();
        assert!(res.rows[1].f1.unwrap() > res.rows[0].f1.unwrap_or(0.0));
        assert_eq!(res.best_index, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.csv");
        write_grid_report(&p, &res).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().nth(2).unwrap(), "C=10,linear,1000000,3,10,10,0,0,1");
    }

    #[test]
    fn empty_grid_rejected() {
        let (x, y) = toy();
        let grid = ParamGrid { c: vec![], ..ParamGrid::default_svm() };
        assert!(grid_search(BaselineKind::Svm, (&x, &y), (&x, &y), &grid, 2, &SmoOptions::default()).is_err());
    }

    #[test]
    fn grid_json() {
        let g: ParamGrid = serde_json::from_str(
            r#"{"c":[0.1,1],"gamma":["scale",0.25],"kernel":["rbf","poly"]}"#,
        )
        .unwrap();
        assert_eq!(g.points(BaselineKind::Svm).len(), 8);
        assert_eq!(g.degree, 3);
    }
}
