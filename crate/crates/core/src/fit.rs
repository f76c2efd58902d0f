//! Least-squares fits used by the scaling studies.

use crate::{Error, Result};
use serde::Serialize;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fit log y = intercept + slope·log x. Needs three or more positive points.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InsufficientPoints(format!("slope fit needs at least three points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Invalid("slope fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let c = polyfit(&lx, &ly, 1)?;
    let mean = ly.iter().sum::<f64>() / ly.len() as f64;
    let ss_tot: f64 = ly.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - c[0] - c[1] * a).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(SlopeFit { slope: c[1], intercept: c[0], r_squared, points: x.len() })
}

/// Polynomial least squares; coefficients from the constant term up.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let m = degree + 1;
    if x.len() < m || x.len() != y.len() {
        return Err(Error::Invalid(format!("degree {degree} fit with {} points", x.len())));
    }
    // normal equations on x scaled to unit size
    let s = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut a = vec![vec![0.0; m + 1]; m];
    for (xi, yi) in x.iter().zip(y) {
        let t = xi / s;
        let pw: Vec<f64> = (0..m).map(|k| t.powi(k as i32)).collect();
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][m] += pw[r] * yi;
        }
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Invalid("singular fit".into()));
        }
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok((0..m).map(|k| a[k][m] / a[k][k] / s.powi(k as i32)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = [0.5, 0.35, 0.25, 0.18];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(2.2)).collect();
        let f = fit_slope(&x, &y).unwrap();
        assert!((f.slope - 2.2).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert!(fit_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn quadratic_recovered() {
        let x = [0.1, 0.2, 0.3, 0.5];
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v + 0.5 * v * v).collect();
        let c = polyfit(&x, &y, 2).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-10 && (c[1] + 2.0).abs() < 1e-10 && (c[2] - 0.5).abs() < 1e-10);
    }
}
