//! Deterministic synthetic full-disk observations and anomaly injectors.
//!
//! A normal frame is a centred, limb-darkened disk on a black sky with a
//! smooth random texture on the disk. Injectors reproduce the defect
//! families seen in real archives: occluding objects, cloud shadow,
//! oversaturation, a displaced disk and loss of surface texture. All
//! randomness comes from ChaCha8 seeded explicitly, so output is identical
//! across runs and platforms.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, Label, ManifestRecord, Pixels};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Frame side in pixels.
    pub size: usize,
    /// Disk centre as fractions of the frame, `(x, y)`.
    pub disk_center: (f64, f64),
    /// Disk radius as a fraction of the frame side.
    pub disk_radius: f64,
    /// Linear limb-darkening coefficient `u`.
    pub limb_darkening: f64,
    /// Intensity at disk centre before texture.
    pub brightness: f64,
    /// Peak-to-peak amplitude of the surface texture.
    pub texture_amplitude: f64,
    /// Texture lattice cells per frame side; larger means finer texture.
    pub texture_scale: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 512,
            disk_center: (0.5, 0.5),
            disk_radius: 0.4,
            limb_darkening: 0.6,
            brightness: 0.55,
            texture_amplitude: 0.04,
            texture_scale: 12,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (cx, cy) = self.disk_center;
        let r = self.disk_radius;
        if self.size == 0 || self.texture_scale == 0 {
            return Err(Error::invalid("size and texture_scale must be positive"));
        }
        if !(r > 0.0) || cx - r < 0.0 || cx + r > 1.0 || cy - r < 0.0 || cy + r > 1.0 {
            return Err(Error::invalid(format!(
                "disk (centre {:?}, radius {r}) does not fit in the frame",
                self.disk_center
            )));
        }
        if !(0.0..=1.0).contains(&self.limb_darkening)
            || !(0.0..=1.0).contains(&self.brightness)
            || !(self.texture_amplitude >= 0.0)
        {
            return Err(Error::invalid("limb darkening, brightness or texture out of range"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn geometry(&self) -> DiskGeometry {
        let s = self.size as f64;
        DiskGeometry {
            cx: self.disk_center.0 * s,
            cy: self.disk_center.1 * s,
            r: self.disk_radius * s,
        }
    }

    /// Radial intensity profile `b · (1 − u · (1 − cos θ))` at fractional
    /// radius `rho ∈ [0, 1)`, where `cos θ = √(1 − ρ²)`.
    pub fn profile(&self, rho: f64) -> f64 {
        if rho >= 1.0 {
            return 0.0;
        }
        let mu = (1.0 - rho * rho).sqrt();
        self.brightness * (1.0 - self.limb_darkening * (1.0 - mu))
    }
}

/// Disk position in pixel units.
#[derive(Debug, Clone, Copy)]
struct DiskGeometry {
    cx: f64,
    cy: f64,
    r: f64,
}

impl DiskGeometry {
    /// Fractional radius of pixel `(row, col)`, measured at the pixel centre.
    fn rho(&self, row: usize, col: usize) -> f64 {
        let dx = col as f64 + 0.5 - self.cx;
        let dy = row as f64 + 0.5 - self.cy;
        (dx * dx + dy * dy).sqrt() / self.r
    }

    /// A random point at most `max_dist` from the disk centre.
    fn random_point(&self, rng: &mut ChaCha8Rng, max_dist: f64) -> (f64, f64) {
        let d = max_dist.max(0.0) * rng.random::<f64>().sqrt();
        let phi = rng.random::<f64>() * 2.0 * PI;
        (self.cx + d * phi.cos(), self.cy + d * phi.sin())
    }
}

/// Smoothly interpolated lattice noise with values in `[−amp/2, amp/2]`.
fn texture(size: usize, lattice: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let knots = Array2::from_shape_fn((lattice + 1, lattice + 1), |_| {
        (rng.random::<f64>() - 0.5) * amplitude
    });
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let scale = lattice as f64 / size as f64;
    Array2::from_shape_fn((size, size), |(r, c)| {
        let (y, x) = ((r as f64 + 0.5) * scale, (c as f64 + 0.5) * scale);
        let (y0, x0) = ((y.floor() as usize).min(lattice - 1), (x.floor() as usize).min(lattice - 1));
        let (ty, tx) = (smooth(y - y0 as f64), smooth(x - x0 as f64));
        let top = knots[[y0, x0]] * (1.0 - tx) + knots[[y0, x0 + 1]] * tx;
        let bottom = knots[[y0 + 1, x0]] * (1.0 - tx) + knots[[y0 + 1, x0 + 1]] * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// Renders a clean observation for `spec`.
pub fn generate_normal(spec: &SynthSpec) -> Result<Pixels> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tex = texture(spec.size, spec.texture_scale, spec.texture_amplitude, &mut rng);
    let geo = spec.geometry();
    Ok(Array2::from_shape_fn((spec.size, spec.size), |(r, c)| {
        let rho = geo.rho(r, c);
        if rho < 1.0 {
            (spec.profile(rho) + tex[[r, c]]).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Occlusion,
    CloudShadow,
    Oversaturation,
    OffCenterDisk,
    TextureLoss,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::Occlusion,
        AnomalyKind::CloudShadow,
        AnomalyKind::Oversaturation,
        AnomalyKind::OffCenterDisk,
        AnomalyKind::TextureLoss,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInjector {
    pub kind: AnomalyKind,
    /// Strength in `(0, 1]`.
    pub severity: f64,
    pub seed: u64,
}

/// Applies one defect to an image produced by [`generate_normal`] with `spec`.
pub fn inject(image: &Pixels, spec: &SynthSpec, injector: &AnomalyInjector) -> Result<Pixels> {
    let sev = injector.severity;
    if !(sev > 0.0 && sev <= 1.0) {
        return Err(Error::invalid(format!("severity {sev} outside (0, 1]")));
    }
    if image.dim() != (spec.size, spec.size) {
        return Err(Error::SizeMismatch {
            want: spec.size,
            got_w: image.ncols(),
            got_h: image.nrows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(injector.seed);
    let geo = spec.geometry();
    let mut out = image.clone();
    match injector.kind {
        AnomalyKind::Occlusion => {
            let ellipse = Ellipse::random(&geo, sev, &mut rng);
            for ((r, c), v) in out.indexed_iter_mut() {
                if ellipse.contains(r, c) {
                    *v = 0.0;
                }
            }
        }
        AnomalyKind::CloudShadow => {
            let depth = 0.9 * sev;
            let sigma = (0.3 + 0.3 * rng.random::<f64>()) * geo.r;
            let (px, py) = geo.random_point(&mut rng, 0.6 * geo.r);
            for ((r, c), v) in out.indexed_iter_mut() {
                let d2 = (c as f64 + 0.5 - px).powi(2) + (r as f64 + 0.5 - py).powi(2);
                *v *= 1.0 - depth * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        AnomalyKind::Oversaturation => {
            let radius = (0.25 + 0.35 * sev) * geo.r;
            let (px, py) = geo.random_point(&mut rng, geo.r - radius);
            for ((r, c), v) in out.indexed_iter_mut() {
                let d2 = (c as f64 + 0.5 - px).powi(2) + (r as f64 + 0.5 - py).powi(2);
                if d2 <= radius * radius {
                    *v = 1.0;
                }
            }
        }
        AnomalyKind::OffCenterDisk => {
            let shift = sev * spec.size as f64 / 4.0;
            let phi = rng.random::<f64>() * 2.0 * PI;
            let (dx, dy) = (
                (shift * phi.cos()).round() as isize,
                (shift * phi.sin()).round() as isize,
            );
            out = translate(image, dx, dy);
        }
        AnomalyKind::TextureLoss => {
            let (mut sum, mut count) = (0.0, 0usize);
            for ((r, c), &v) in image.indexed_iter() {
                if geo.rho(r, c) < 1.0 {
                    sum += v;
                    count += 1;
                }
            }
            let mean = sum / count.max(1) as f64;
            for ((r, c), v) in out.indexed_iter_mut() {
                if geo.rho(r, c) < 1.0 {
                    *v = (1.0 - sev) * *v + sev * mean;
                }
            }
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Applies several injectors in sequence.
pub fn inject_all(image: &Pixels, spec: &SynthSpec, injectors: &[AnomalyInjector]) -> Result<Pixels> {
    injectors
        .iter()
        .try_fold(image.clone(), |img, inj| inject(&img, spec, inj))
}

/// Shifts content by `(dx, dy)` pixels, filling vacated pixels with black.
fn translate(image: &Pixels, dx: isize, dy: isize) -> Pixels {
    let (h, w) = image.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (sr, sc) = (r as isize - dy, c as isize - dx);
        if sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w {
            image[[sr as usize, sc as usize]]
        } else {
            0.0
        }
    })
}

/// Rotated ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    /// An ellipse lying fully on the disk whose area is between 1.1 and 2
    /// times `severity · 10%` of the disk area.
    fn random(geo: &DiskGeometry, severity: f64, rng: &mut ChaCha8Rng) -> Self {
        let disk_area = PI * geo.r * geo.r;
        let area = disk_area * severity * 0.1 * (1.1 + 0.9 * rng.random::<f64>());
        let ratio = 0.5 + 0.5 * rng.random::<f64>();
        let a = (area / (PI * ratio)).sqrt();
        let b = a * ratio;
        let angle = rng.random::<f64>() * PI;
        let (cx, cy) = geo.random_point(rng, geo.r - a);
        Self { cx, cy, a, b, angle }
    }

    fn contains(&self, row: usize, col: usize) -> bool {
        self.contains_point(col as f64 + 0.5, row as f64 + 0.5)
    }

    pub(crate) fn contains_point(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Quantizes to 8 bits.
pub fn to_gray8(pixels: &Pixels) -> GrayImage {
    let (h, w) = pixels.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(pixels[[y as usize, x as usize]] * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

pub fn write_png(path: &Path, pixels: &Pixels) -> Result<()> {
    to_gray8(pixels).save(path)?;
    Ok(())
}

/// One generated observation.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub name: String,
    pub label: Label,
    pub injector: Option<AnomalyInjector>,
    pub pixels: Pixels,
}

/// Generation plan for a labeled synthetic set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub count: usize,
    pub anomaly_fraction: f64,
    /// Severity is drawn uniformly from this range.
    pub severity: (f64, f64),
    pub kinds: Vec<AnomalyKind>,
    /// First index used in file names; lets several batches share a directory.
    pub start_index: usize,
}

impl Default for SynthPlan {
    fn default() -> Self {
        Self {
            count: 100,
            anomaly_fraction: 0.5,
            severity: (0.5, 1.0),
            kinds: AnomalyKind::ALL.to_vec(),
            start_index: 0,
        }
    }
}

/// Generates `plan.count` images; the first `round(count · fraction)` are
/// anomalous, each with one defect, kinds cycling through `plan.kinds`.
pub fn generate_set(spec: &SynthSpec, plan: &SynthPlan) -> Result<Vec<SynthSample>> {
    use rayon::prelude::*;
    spec.validate()?;
    if !(0.0..=1.0).contains(&plan.anomaly_fraction) {
        return Err(Error::invalid("anomaly fraction outside [0, 1]"));
    }
    let (lo, hi) = plan.severity;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid("severity range must satisfy 0 < lo <= hi <= 1"));
    }
    let n_anom = (plan.count as f64 * plan.anomaly_fraction).round() as usize;
    if n_anom > 0 && plan.kinds.is_empty() {
        return Err(Error::invalid("no anomaly kinds to inject"));
    }
    // Draw every per-image parameter up front so parallel rendering cannot
    // change the sequence.
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let jobs: Vec<(usize, u64, Option<AnomalyInjector>)> = (0..plan.count)
        .map(|k| {
            let seed = master.random::<u64>();
            let injector = (k < n_anom).then(|| AnomalyInjector {
                kind: plan.kinds[k % plan.kinds.len()],
                severity: lo + (hi - lo) * master.random::<f64>(),
                seed: master.random::<u64>(),
            });
            (k, seed, injector)
        })
        .collect();
    jobs.into_par_iter()
        .map(|(k, seed, injector)| {
            let idx = plan.start_index + k;
            let spec_k = spec.with_seed(seed);
            let clean = generate_normal(&spec_k)?;
            Ok(match injector {
                Some(inj) => SynthSample {
                    name: format!("anomalous_{idx:05}"),
                    label: Label::Anomalous,
                    pixels: inject(&clean, &spec_k, &inj)?,
                    injector: Some(inj),
                },
                None => SynthSample {
                    name: format!("normal_{idx:05}"),
                    label: Label::NonAnomalous,
                    pixels: clean,
                    injector: None,
                },
            })
        })
        .collect()
}

/// Writes PNGs, `manifest.csv` and `spec.json` into `dir`.
pub fn write_set(dir: &Path, spec: &SynthSpec, samples: &[SynthSample]) -> Result<Vec<ManifestRecord>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let path = dir.join(format!("{}.png", s.name));
        write_png(&path, &s.pixels)?;
        records.push(ManifestRecord {
            path,
            label: s.label,
        });
    }
    write_manifest(&dir.join("manifest.csv"), &records)?;
    let spec_path = dir.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(spec)? + "\n")
        .map_err(|e| Error::io(&spec_path, e))?;
    Ok(records)
}
