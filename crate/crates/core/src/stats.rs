//! Goodness-of-fit and regression helpers used by the map diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Asymptotic Kolmogorov–Smirnov critical coefficient at significance 1e-3:
/// `sqrt(−ln(α/2) / 2) ≈ 1.949`, rounded up.
pub const KS_COEFF_1E3: f64 = 1.95;

/// One-sample KS statistic `sup |F_n − F|`; sorts `samples` in place.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS statistic; sorts both inputs in place.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_critical_one_sample(n: usize) -> f64 {
    KS_COEFF_1E3 / (n as f64).sqrt()
}

pub fn ks_critical_two_sample(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    KS_COEFF_1E3 * ((n + m) / (n * m)).sqrt()
}

/// Least-squares affine fit `y ≈ A·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// `sqrt(mean ‖yⱼ − A·xⱼ − b‖²)`.
    pub rms_residual: f64,
}

pub fn affine_fit(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<AffineFit> {
    let n = inputs.len();
    if n != outputs.len() || n == 0 {
        return Err(Error::DimensionMismatch { expected: n, found: outputs.len() });
    }
    let p = inputs[0].len();
    let q = outputs[0].len();
    if n <= p {
        return Err(Error::InvalidParameter { name: "inputs", reason: format!("need more than {p} points, got {n}") });
    }
    let mean = |rows: &[Vec<f64>], d: usize| -> DVector<f64> {
        DVector::from_iterator(d, (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64))
    };
    let mx = mean(inputs, p);
    let my = mean(outputs, q);
    let x = DMatrix::from_fn(n, p, |i, k| inputs[i][k] - mx[k]);
    let y = DMatrix::from_fn(n, q, |i, k| outputs[i][k] - my[k]);
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::InvalidParameter { name: "inputs", reason: e.to_string() })?;
    let resid = &y - &x * &coef;
    let rms_residual = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    let linear = coef.transpose();
    let offset = &my - &linear * &mx;
    Ok(AffineFit { linear, offset, rms_residual })
}
