//! Small dense helpers on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

/// Numerical rank: singular values counted iff `σ_i > rel_tol · σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Orthonormal basis (as columns) of the null space of `m`, with the same
/// relative cutoff as [`rank`].
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let ncols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    // pad to a square matrix so the SVD returns a full right basis
    let rows = m.nrows().max(ncols);
    let mut a = DMatrix::zeros(rows, ncols);
    a.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = (0..sv.len())
        .filter(|&i| smax == 0.0 || sv[i] <= rel_tol * smax)
        .map(|i| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(ncols, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Smallest singular value and its right singular vector.
pub fn smallest_right_singular(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let ncols = m.ncols();
    let rows = m.nrows().max(ncols);
    let mut a = DMatrix::zeros(rows, ncols);
    a.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (imin, smin) = svd
        .singular_values
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
    (smin, v_t.row(imin).transpose())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Angle between two nonzero vectors, accurate near 0 and π.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / na - y / nb).powi(2))
        .sum::<f64>()
        .sqrt();
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / na + y / nb).powi(2))
        .sum::<f64>()
        .sqrt();
    2.0 * diff.atan2(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_null_space() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(rank(&m, 1e-9), 2);
        let ns = null_space(&m, 1e-9);
        assert_eq!(ns.ncols(), 1);
        assert!((ns[(2, 0)].abs() - 1.0).abs() < 1e-12);
        assert_eq!(rank(&DMatrix::zeros(3, 3), 1e-9), 0);
        assert_eq!(null_space(&DMatrix::zeros(2, 3), 1e-9).ncols(), 3);
    }

    #[test]
    fn angle_is_accurate_for_tiny_deviations() {
        assert_eq!(angle(&[0.0, 0.0, -1.0], &[0.0, 0.0, -2.0]), 0.0);
        let a = angle(&[1e-14, 0.0, 1.0], &[0.0, 0.0, 1.0]);
        assert!((a - 1e-14).abs() < 1e-20);
        assert!((angle(&[1.0, 0.0], &[-1.0, 0.0]) - std::f64::consts::PI).abs() < 1e-12);
    }
}
