//! Statistical kernel: per-cell mean intensities, percentile estimation and
//! the one-way ANOVA F statistic.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean normalized intensity of every cell of an `n × n` partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFeatureGrid {
    means: Array2<f64>,
}

impl CellFeatureGrid {
    pub fn n(&self) -> usize {
        self.means.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.means[[row, col]]
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    /// Row-major flattening, the feature layout used by the SVM baselines.
    pub fn to_flat(&self) -> Vec<f64> {
        self.means.iter().copied().collect()
    }
}

/// Averages the pixels of each of the `n × n` blocks tiling `pixels`.
///
/// Both image dimensions must be divisible by `n`.
pub fn cell_means(pixels: &Array2<f64>, n: usize) -> Result<CellFeatureGrid> {
    if n < 2 {
        return Err(Error::invalid(format!("grid size must be >= 2, got {n}")));
    }
    let (h, w) = pixels.dim();
    for side in [h, w] {
        if side == 0 || side % n != 0 {
            return Err(Error::NotDivisible { side, n });
        }
    }
    let (bh, bw) = (h / n, w / n);
    let mut sums = Array2::<f64>::zeros((n, n));
    for (r, row) in pixels.outer_iter().enumerate() {
        let cr = r / bh;
        for (c, &v) in row.iter().enumerate() {
            sums[[cr, c / bw]] += v;
        }
    }
    let area = (bh * bw) as f64;
    sums.mapv_inplace(|s| s / area);
    Ok(CellFeatureGrid { means: sums })
}

/// Percentile by linear interpolation between closest ranks.
///
/// With sorted values `v[0..m]` and `h = q/100 · (m − 1)` the result is
/// `v[⌊h⌋] + (h − ⌊h⌋)(v[⌈h⌉] − v[⌊h⌋])`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

/// Same as [`percentile`] for input that is already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::invalid(format!("percentile {q} outside [0, 100]")));
    }
    let h = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// An F statistic, with perfect separation (zero within-group variance but
/// nonzero between-group variance) kept distinct from any finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FStat {
    Finite(f64),
    Infinite,
}

impl FStat {
    pub fn is_infinite(self) -> bool {
        matches!(self, FStat::Infinite)
    }

    /// Finite value, or `f64::INFINITY` for the perfect-separation flag.
    pub fn value(self) -> f64 {
        match self {
            FStat::Finite(f) => f,
            FStat::Infinite => f64::INFINITY,
        }
    }
}

impl Eq for FStat {}

impl PartialOrd for FStat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FStat {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (FStat::Infinite, FStat::Infinite) => Ordering::Equal,
            (FStat::Infinite, _) => Ordering::Greater,
            (_, FStat::Infinite) => Ordering::Less,
            (FStat::Finite(a), FStat::Finite(b)) => a.total_cmp(b),
        }
    }
}

/// The two label groups an F statistic is computed over.
#[derive(Debug, Clone, Copy)]
pub struct GroupedSamples<'a> {
    pub group_a: &'a [f64],
    pub group_b: &'a [f64],
}

impl GroupedSamples<'_> {
    pub fn anova_f(&self) -> Result<FStat> {
        anova_f(&[self.group_a, self.group_b])
    }
}

/// Classical pooled-variance one-way ANOVA over `k ≥ 2` groups.
///
/// Returns [`FStat::Infinite`] when the within-group sum of squares vanishes
/// while the between-group one does not, and `0` when both vanish.
pub fn anova_f(groups: &[&[f64]]) -> Result<FStat> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::invalid("ANOVA needs at least two groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("ANOVA group is empty"));
    }
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if total <= k {
        return Err(Error::invalid(format!(
            "ANOVA needs more samples ({total}) than groups ({k})"
        )));
    }
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / total as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    let mut max_abs = 0.0f64;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand).powi(2);
        for &x in g.iter() {
            ss_within += (x - mean).powi(2);
            max_abs = max_abs.max(x.abs());
        }
    }
    Ok(f_from_sums(ss_between, ss_within, k, total, max_abs))
}

/// Two-group F over `values` partitioned by `in_b`; allocation-free variant
/// used inside the bound search. Caller guarantees both groups are non-empty
/// and `values.len() >= 3`.
pub(crate) fn two_group_f(values: &[f64], in_b: &[bool]) -> FStat {
    let (mut n_a, mut n_b, mut sum_a, mut sum_b) = (0usize, 0usize, 0.0, 0.0);
    let mut max_abs = 0.0f64;
    for (&x, &b) in values.iter().zip(in_b) {
        if b {
            n_b += 1;
            sum_b += x;
        } else {
            n_a += 1;
            sum_a += x;
        }
        max_abs = max_abs.max(x.abs());
    }
    let (mean_a, mean_b) = (sum_a / n_a as f64, sum_b / n_b as f64);
    let total = n_a + n_b;
    let grand = (sum_a + sum_b) / total as f64;
    let ss_between =
        n_a as f64 * (mean_a - grand).powi(2) + n_b as f64 * (mean_b - grand).powi(2);
    let ss_within: f64 = values
        .iter()
        .zip(in_b)
        .map(|(&x, &b)| (x - if b { mean_b } else { mean_a }).powi(2))
        .sum();
    f_from_sums(ss_between, ss_within, 2, total, max_abs)
}

fn f_from_sums(ss_between: f64, ss_within: f64, k: usize, total: usize, max_abs: f64) -> FStat {
    // Sums of squared deviations below this are rounding noise of exactly
    // equal samples.
    let noise = 16.0 * total as f64 * (f64::EPSILON * max_abs).powi(2);
    let between_zero = ss_between <= noise;
    let within_zero = ss_within <= noise;
    match (between_zero, within_zero) {
        (true, _) => FStat::Finite(0.0),
        (false, true) => FStat::Infinite,
        (false, false) => {
            let ms_between = ss_between / (k - 1) as f64;
            let ms_within = ss_within / (total - k) as f64;
            FStat::Finite(ms_between / ms_within)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_has_constant_cells() {
        let img = Array2::from_elem((64, 64), 0.5);
        let g = cell_means(&img, 16).unwrap();
        assert_eq!(g.n(), 16);
        assert!(g.means().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_block_mean() {
        let mut img = Array2::<f64>::zeros((4, 4));
        img[[1, 0]] = 1.0;
        img[[1, 1]] = 1.0;
        let g = cell_means(&img, 2).unwrap();
        assert_eq!(g.get(0, 0), 0.5);
        assert_eq!(g.get(1, 1), 0.0);
    }

    #[test]
    fn indivisible_side_rejected() {
        let img = Array2::<f64>::zeros((10, 10));
        assert!(matches!(
            cell_means(&img, 4),
            Err(Error::NotDivisible { side: 10, n: 4 })
        ));
        assert!(cell_means(&img, 1).is_err());
    }

    #[test]
    fn percentile_examples() {
        let v = [4.0, 2.0, 3.0, 1.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
        // h = 0.5 * 3 = 1.5 -> 2 + 0.5 * (3 - 2)
        assert_eq!(percentile(&v, 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[7.0], 37.0).unwrap(), 7.0);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&v, 100.5).is_err());
        assert!(percentile(&v, -1.0).is_err());
    }

    #[test]
    fn anova_examples() {
        // SSB = 1.5 on 1 df, SSW = 4 on 4 df.
        let f = anova_f(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]]).unwrap();
        assert!((f.value() - 1.5).abs() < 1e-12);
        assert_eq!(
            anova_f(&[&[5.0, 5.0], &[5.0, 5.0]]).unwrap(),
            FStat::Finite(0.0)
        );
        assert_eq!(anova_f(&[&[0.0, 0.0], &[1.0, 1.0]]).unwrap(), FStat::Infinite);
        let grouped = GroupedSamples {
            group_a: &[1.0, 2.0, 3.0],
            group_b: &[2.0, 3.0, 4.0],
        };
        assert_eq!(grouped.anova_f().unwrap(), f);
    }

    #[test]
    fn anova_preconditions() {
        assert!(anova_f(&[&[1.0, 2.0], &[]]).is_err());
        assert!(anova_f(&[&[1.0], &[2.0]]).is_err());
        assert!(anova_f(&[&[1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn three_groups() {
        // Means 2, 5, 8; grand 5; SSB = 3*(9+0+9) = 54 (df 2); SSW = 3*2 = 6 (df 6).
        let f = anova_f(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]).unwrap();
        assert!((f.value() - 27.0 / 1.0).abs() < 1e-12);
    }

    #[test]
    fn fstat_ordering() {
        assert!(FStat::Infinite > FStat::Finite(1e300));
        assert!(FStat::Finite(2.0) > FStat::Finite(1.0));
    }

    #[test]
    fn two_group_fast_path_matches() {
        let vals = [0.1, 0.4, 0.35, 0.9, 0.8, 0.2];
        let lab = [false, false, true, true, true, false];
        let a: Vec<f64> = vals.iter().zip(&lab).filter(|p| !*p.1).map(|p| *p.0).collect();
        let b: Vec<f64> = vals.iter().zip(&lab).filter(|p| *p.1).map(|p| *p.0).collect();
        let slow = anova_f(&[&a, &b]).unwrap().value();
        let fast = two_group_f(&vals, &lab).value();
        assert!((slow - fast).abs() <= 1e-12 * slow.abs());
    }

    fn groups() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-100.0f64..100.0, 2..30),
            prop::collection::vec(-100.0f64..100.0, 2..30),
        )
    }

    fn close(a: FStat, b: FStat) -> bool {
        match (a, b) {
            (FStat::Finite(x), FStat::Finite(y)) => (x - y).abs() <= 1e-7 * x.abs().max(1e-9),
            _ => a == b,
        }
    }

    proptest! {
        #[test]
        fn anova_symmetric((a, b) in groups()) {
            prop_assert!(close(anova_f(&[&a, &b]).unwrap(), anova_f(&[&b, &a]).unwrap()));
        }

        #[test]
        fn anova_affine_invariant((a, b) in groups(), shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
            let f = anova_f(&[&a, &b]).unwrap();
            let ta: Vec<f64> = a.iter().map(|x| x * scale + shift).collect();
            let tb: Vec<f64> = b.iter().map(|x| x * scale + shift).collect();
            prop_assert!(close(f, anova_f(&[&ta, &tb]).unwrap()));
            let na: Vec<f64> = a.iter().map(|x| -x).collect();
            let nb: Vec<f64> = b.iter().map(|x| -x).collect();
            prop_assert!(close(f, anova_f(&[&na, &nb]).unwrap()));
        }

        #[test]
        fn percentile_monotone_and_bounded(v in prop::collection::vec(-10.0f64..10.0, 1..40), q1 in 0.0f64..=100.0, q2 in 0.0f64..=100.0) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let p_lo = percentile(&v, lo).unwrap();
            let p_hi = percentile(&v, hi).unwrap();
            prop_assert!(p_lo <= p_hi);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p_lo >= min && p_hi <= max);
        }

        #[test]
        fn cell_means_match_brute_force(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Array2::from_shape_fn((64, 64), |_| rng.random::<f64>());
            let g = cell_means(&img, 4).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let mut s = 0.0;
                    for r in i * 16..(i + 1) * 16 {
                        for c in j * 16..(j + 1) * 16 {
                            s += img[[r, c]];
                        }
                    }
                    prop_assert!((g.get(i, j) - s / 256.0).abs() < 1e-12);
                }
            }
        }
    }
}
