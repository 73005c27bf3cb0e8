//! Classic baselines on flattened cell-mean features: a soft-margin kernel
//! SVM and a one-class SVM, both trained with SMO, plus exhaustive
//! hyperparameter search on a validation set.

mod grid;
mod kernel;
mod smo;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use grid::{
    grid_search, write_grid_report, BaselineKind, BaselineParams, GridRow, GridSearchResult,
    ParamGrid,
};
pub use kernel::{kernel_eval, Gamma, KernelKind, KernelSpec};
pub use smo::{
    train_ocsvm, train_svm, OcsvmFit, OcsvmModel, SmoOptions, SolverDiagnostics, SvmFit, SvmModel,
};

use crate::dataset::{LabeledImage, Pixels};
use crate::error::{Error, Result};
use crate::eval::{Detection, Detector};
use crate::gridstats::cell_means;

pub const BASELINE_FORMAT_VERSION: u32 = 1;
/// Cells per side of the baseline feature grid.
pub const DEFAULT_FEATURE_GRID: usize = 32;

/// Row-major cell means of an `m × m` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let m = (values.len() as f64).sqrt().round() as usize;
        if m == 0 || m * m != values.len() {
            return Err(Error::invalid(format!(
                "feature length {} is not a perfect square",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn from_pixels(pixels: &Pixels, m: usize) -> Result<Self> {
        Ok(Self(cell_means(pixels, m)?.to_flat()))
    }

    pub fn grid_side(&self) -> usize {
        (self.0.len() as f64).sqrt().round() as usize
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Extracts feature rows for a set of images.
pub fn features(images: &[LabeledImage], m: usize) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    images
        .par_iter()
        .map(|img| FeatureVector::from_pixels(&img.pixels, m).map(FeatureVector::into_inner))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedBaseline {
    Svm(SvmModel),
    Ocsvm(OcsvmModel),
}

/// A trained baseline together with its feature extraction setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDetector {
    pub version: u32,
    pub feature_grid: usize,
    pub model: TrainedBaseline,
}

impl BaselineDetector {
    pub fn new(model: TrainedBaseline, feature_grid: usize) -> Self {
        Self {
            version: BASELINE_FORMAT_VERSION,
            feature_grid,
            model,
        }
    }

    pub fn predict_features(&self, x: &[f64]) -> Result<bool> {
        match &self.model {
            TrainedBaseline::Svm(m) => m.predict(x),
            TrainedBaseline::Ocsvm(m) => m.is_outlier(x),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.version != BASELINE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(probe.version));
        }
        let det: Self = serde_json::from_str(text)?;
        let (svs, coefs) = match &det.model {
            TrainedBaseline::Svm(m) => (&m.support_vectors, &m.dual_coefs),
            TrainedBaseline::Ocsvm(m) => (&m.support_vectors, &m.dual_coefs),
        };
        let len = det.feature_grid * det.feature_grid;
        if svs.len() != coefs.len() || svs.iter().any(|s| s.len() != len) {
            return Err(Error::InvalidModel("support vectors do not match the feature grid".into()));
        }
        Ok(det)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Detector for BaselineDetector {
    fn name(&self) -> String {
        match self.model {
            TrainedBaseline::Svm(_) => "svm".into(),
            TrainedBaseline::Ocsvm(_) => "ocsvm".into(),
        }
    }

    fn detect(&self, image: &LabeledImage) -> Result<Detection> {
        let x = FeatureVector::from_pixels(&image.pixels, self.feature_grid)?;
        Ok(Detection {
            anomalous: self.predict_features(x.as_slice())?,
            flagged_count: None,
        })
    }
}
