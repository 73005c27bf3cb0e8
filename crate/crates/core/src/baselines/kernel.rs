use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
    Poly,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Linear => "linear",
            KernelKind::Poly => "poly",
        })
    }
}

/// Kernel width: a fixed value or one of the data-driven conventions.
///
/// `Auto` is `1 / n_features`; `Scale` is `1 / (n_features · Var(X))`
/// with the variance taken over every entry of the training matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Value(f64),
    Scale,
    Auto,
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Value(v) => write!(f, "{v}"),
            Gamma::Scale => f.write_str("scale"),
            Gamma::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Value(f64),
    Name(String),
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Value(v) => GammaRepr::Value(*v),
            other => GammaRepr::Name(other.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match GammaRepr::deserialize(d)? {
            GammaRepr::Value(v) => Ok(Gamma::Value(v)),
            GammaRepr::Name(n) => match n.as_str() {
                "scale" => Ok(Gamma::Scale),
                "auto" => Ok(Gamma::Auto),
                other => Err(serde::de::Error::custom(format!("unknown gamma {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: Gamma,
    #[serde(default = "default_degree")]
    pub degree: u32,
}

fn default_degree() -> u32 {
    3
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            gamma: Gamma::Value(gamma),
            degree: 3,
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: Gamma::Auto,
            degree: 3,
        }
    }

    pub fn poly(gamma: Gamma, degree: u32) -> Self {
        Self {
            kind: KernelKind::Poly,
            gamma,
            degree,
        }
    }

    /// Replaces `Scale`/`Auto` with a numeric gamma computed from `features`.
    pub fn resolve(&self, features: &[Vec<f64>]) -> Result<Self> {
        let n_features = features
            .first()
            .map(Vec::len)
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::invalid("cannot resolve gamma without features"))?;
        let gamma = match self.gamma {
            Gamma::Value(v) if v > 0.0 && v.is_finite() => v,
            Gamma::Value(v) => return Err(Error::invalid(format!("gamma must be positive, got {v}"))),
            Gamma::Auto => 1.0 / n_features as f64,
            Gamma::Scale => {
                let count = (features.len() * n_features) as f64;
                let mean = features.iter().flatten().sum::<f64>() / count;
                let var = features.iter().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / count;
                if var > 0.0 {
                    1.0 / (n_features as f64 * var)
                } else {
                    1.0
                }
            }
        };
        Ok(Self {
            gamma: Gamma::Value(gamma),
            ..*self
        })
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != z.len() {
            return Err(Error::invalid(format!(
                "feature length mismatch: {} vs {}",
                x.len(),
                z.len()
            )));
        }
        let gamma = match (self.kind, self.gamma) {
            (KernelKind::Linear, _) => 0.0,
            (_, Gamma::Value(g)) => g,
            (_, g) => return Err(Error::invalid(format!("gamma {g} is unresolved"))),
        };
        Ok(self.eval_unchecked(gamma, x, z))
    }

    /// Kernel value with a resolved gamma; lengths must already agree.
    pub(crate) fn eval_unchecked(&self, gamma: f64, x: &[f64], z: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelKind::Linear => dot(x, z),
            KernelKind::Poly => (gamma * dot(x, z) + 1.0).powi(self.degree as i32),
        }
    }

    pub(crate) fn numeric_gamma(&self) -> Result<f64> {
        match (self.kind, self.gamma) {
            (KernelKind::Linear, _) => Ok(0.0),
            (_, Gamma::Value(g)) if g > 0.0 => Ok(g),
            (_, g) => Err(Error::invalid(format!("gamma {g} is unresolved or non-positive"))),
        }
    }
}

fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

/// Standalone kernel evaluation.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    spec.eval(x, z)
}

/// Dense Gram matrix over `rows`, computed row-parallel.
pub(crate) fn gram(spec: &KernelSpec, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let gamma = spec.numeric_gamma()?;
    let len = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != len) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    Ok(rows
        .par_iter()
        .map(|x| rows.iter().map(|z| spec.eval_unchecked(gamma, x, z)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        let x = [0.3, 0.7];
        assert_eq!(kernel_eval(&KernelSpec::rbf(2.0), &x, &x).unwrap(), 1.0);
        assert_eq!(kernel_eval(&KernelSpec::linear(), &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // ‖x − z‖² = 4
        let v = kernel_eval(&KernelSpec::rbf(0.25), &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3679).abs() < 1e-4);
        let p = kernel_eval(&KernelSpec::poly(Gamma::Value(0.5), 2), &[1.0, 2.0], &[3.0, 1.0]).unwrap();
        assert_eq!(p, (0.5f64 * 5.0 + 1.0).powi(2));
    }

    #[test]
    fn kernel_errors() {
        assert!(kernel_eval(&KernelSpec::linear(), &[1.0], &[1.0, 2.0]).is_err());
        let unresolved = KernelSpec {
            kind: KernelKind::Rbf,
            gamma: Gamma::Scale,
            degree: 3,
        };
        assert!(kernel_eval(&unresolved, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn gamma_conventions() {
        let feats = vec![vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0, 0.0]];
        let auto = KernelSpec { gamma: Gamma::Auto, ..KernelSpec::rbf(1.0) }.resolve(&feats).unwrap();
        assert_eq!(auto.gamma, Gamma::Value(0.25));
        // Var of {0,1} x4 = 0.25 -> 1 / (4 * 0.25)
        let scale = KernelSpec { gamma: Gamma::Scale, ..KernelSpec::rbf(1.0) }.resolve(&feats).unwrap();
        assert_eq!(scale.gamma, Gamma::Value(1.0));
        assert!(KernelSpec::rbf(-1.0).resolve(&feats).is_err());
    }

    #[test]
    fn gamma_serde() {
        let spec = KernelSpec { gamma: Gamma::Scale, ..KernelSpec::rbf(1.0) };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"rbf","gamma":"scale","degree":3}"#);
        assert_eq!(serde_json::from_str::<KernelSpec>(&json).unwrap(), spec);
        let num: KernelSpec = serde_json::from_str(r#"{"kind":"poly","gamma":0.125}"#).unwrap();
        assert_eq!(num, KernelSpec::poly(Gamma::Value(0.125), 3));
        assert!(serde_json::from_str::<KernelSpec>(r#"{"kind":"rbf","gamma":"wide"}"#).is_err());
    }
}
