//! Differential entropy (nats) by independent routes.
//!
//! | method | estimator |
//! |---|---|
//! | `closed_form` | `½·log((2πe)ⁿ·det Σ)` |
//! | `resubstitution` | `−mean log f(Xⱼ)`, `Xⱼ ~ f` drawn ancestrally |
//! | `change_of_variables` | `h(N(0, I)) + mean log det ∇Φ(Zⱼ)`, `Zⱼ ~ N(0, I)` |
//! | `divergence_route` | `−∫ f log g − D(f‖g)` with a Gaussian `g` |
//! | `quadrature_oracle` | adaptive quadrature of `−f log f` (1D only) |
//!
//! Every Monte-Carlo estimate carries the standard error of its mean.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::densities::{GaussianMixture, Mixture1D, MAX_DIM};
use crate::error::{Error, Result};
use crate::mc::{self, Moments};
use crate::numerics::{integrate_1d, QuadratureConfig, LN_SQRT_2PI};
use crate::rng::RngStream;
use crate::transport::{check_lambda, ThetaMap, TriangularMap};

pub const MIN_SAMPLES: usize = 100;
const ORACLE_HALF_WIDTH_SDS: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMethod {
    ClosedForm,
    Resubstitution,
    ChangeOfVariables,
    DivergenceRoute,
    QuadratureOracle,
}

impl EntropyMethod {
    pub const ALL: [EntropyMethod; 5] = [
        EntropyMethod::ClosedForm,
        EntropyMethod::Resubstitution,
        EntropyMethod::ChangeOfVariables,
        EntropyMethod::DivergenceRoute,
        EntropyMethod::QuadratureOracle,
    ];

    pub fn is_exact(self) -> bool {
        matches!(self, EntropyMethod::ClosedForm | EntropyMethod::QuadratureOracle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub method: EntropyMethod,
}

impl EntropyEstimate {
    pub fn exact(value: f64, method: EntropyMethod) -> Self {
        Self { value, std_error: 0.0, n_samples: 0, method }
    }

    /// `|self − other| ≤ k·√(σ₁² + σ₂²)` for independent estimates.
    pub fn agrees_with(&self, other: &EntropyEstimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.std_error.hypot(other.std_error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::InvalidParameter { name: "n", reason: format!("need at least {MIN_SAMPLES} samples, got {n}") });
    }
    Ok(())
}

/// Entropy of `N(·, cov)`.
pub fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<EntropyEstimate> {
    let n = cov.nrows();
    if n == 0 || n != cov.ncols() {
        return Err(Error::NotSpd(format!("{}x{} matrix", cov.nrows(), cov.ncols())));
    }
    let scale = 1.0 + cov.amax();
    if (cov - cov.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotSpd("matrix is not symmetric".into()));
    }
    let chol = cov.clone().cholesky().ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))?;
    let half_log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    Ok(EntropyEstimate::exact(n as f64 * (LN_SQRT_2PI + 0.5) + half_log_det, EntropyMethod::ClosedForm))
}

/// `h(N(0, I_dim))`.
pub fn standard_gaussian_entropy(dim: usize) -> f64 {
    dim as f64 * (LN_SQRT_2PI + 0.5)
}

fn from_moments(m: &Moments, offset: f64, method: EntropyMethod) -> EntropyEstimate {
    EntropyEstimate { value: offset + m.mean(0), std_error: m.std_error(0), n_samples: m.count(), method }
}

pub fn entropy_resub(d: &GaussianMixture, rng: &RngStream, n: usize) -> Result<EntropyEstimate> {
    check_samples(n)?;
    let width = d.draw_width();
    let m = mc::accumulate(n, 1, |range, acc| {
        let mut cursor = rng.cursor(range.start as u64, width);
        let mut u = [0.0; MAX_DIM + 1];
        let mut x = [0.0; MAX_DIM];
        for _ in range {
            cursor.next_uniforms(&mut u[..width]);
            d.draw_from_uniforms(&u[..width], &mut x[..d.dim()])?;
            acc.push(&[-d.log_pdf(&x[..d.dim()])?]);
        }
        Ok(())
    })?;
    Ok(from_moments(&m, 0.0, EntropyMethod::Resubstitution))
}

/// Entropy of the target of `map` as `h(X*) + E log Φ′(X*)`.
pub fn entropy_cov(map: &TriangularMap, rng: &RngStream, n: usize) -> Result<EntropyEstimate> {
    check_samples(n)?;
    let dim = map.dim();
    let m = mc::accumulate(n, 1, |range, acc| {
        let mut cursor = rng.cursor(range.start as u64, dim);
        let mut z = [0.0; MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        let mut lp = [0.0; MAX_DIM];
        for _ in range {
            cursor.next_normals(&mut z[..dim])?;
            map.eval_into(&z[..dim], &mut y[..dim], Some(&mut lp[..dim]))?;
            acc.push(&[lp[..dim].iter().sum()]);
        }
        Ok(())
    })?;
    Ok(from_moments(&m, standard_gaussian_entropy(dim), EntropyMethod::ChangeOfVariables))
}

/// `h(Θ_Ỹ(X̃) | Ỹ) = h(X̃) + E log Θ′_Ỹ(X̃)` over independent standard normal
/// `X̃`, `Ỹ`.
pub fn conditional_entropy_theta(
    phi: &TriangularMap,
    psi: &TriangularMap,
    lambda: f64,
    rng: &RngStream,
    n: usize,
) -> Result<EntropyEstimate> {
    check_samples(n)?;
    check_lambda(lambda)?;
    if phi.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { expected: phi.dim(), found: psi.dim() });
    }
    let dim = phi.dim();
    let m = mc::accumulate(n, 1, |range, acc| {
        let mut cursor = rng.cursor(range.start as u64, 2 * dim);
        let mut w = [0.0; 2 * MAX_DIM];
        for _ in range {
            cursor.next_normals(&mut w[..2 * dim])?;
            let theta = ThetaMap::new(phi, psi, lambda, w[dim..2 * dim].to_vec())?;
            let point = theta.evaluate(&w[..dim])?;
            acc.push(&[point.log_theta_partials.iter().sum()]);
        }
        Ok(())
    })?;
    Ok(from_moments(&m, standard_gaussian_entropy(dim), EntropyMethod::ChangeOfVariables))
}

/// `D(f‖g) = E_f[log f − log g]`.
pub fn divergence_mc(f: &GaussianMixture, g: &GaussianMixture, rng: &RngStream, n: usize) -> Result<DivergenceEstimate> {
    check_samples(n)?;
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), found: g.dim() });
    }
    let width = f.draw_width();
    let m = mc::accumulate(n, 1, |range, acc| {
        let mut cursor = rng.cursor(range.start as u64, width);
        let mut u = [0.0; MAX_DIM + 1];
        let mut x = [0.0; MAX_DIM];
        for _ in range {
            cursor.next_uniforms(&mut u[..width]);
            let x = &mut x[..f.dim()];
            f.draw_from_uniforms(&u[..width], x)?;
            acc.push(&[f.log_pdf(x)? - g.log_pdf(x)?]);
        }
        Ok(())
    })?;
    Ok(DivergenceEstimate { value: m.mean(0), std_error: m.std_error(0), n_samples: m.count() })
}

/// `h(f) = −∫ f log g − D(f‖g)` with `g = N(mean(f), g_cov)`; the cross
/// term is closed form, only the divergence is sampled.
pub fn entropy_via_divergence(
    f: &GaussianMixture,
    g_cov: &DMatrix<f64>,
    rng: &RngStream,
    n: usize,
) -> Result<EntropyEstimate> {
    if g_cov.nrows() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), found: g_cov.nrows() });
    }
    let g_entropy = gaussian_entropy(g_cov)?.value;
    let g = GaussianMixture::gaussian(f.mean(), g_cov.clone())?;
    let g_inv = g_cov.clone().cholesky().expect("checked by gaussian_entropy").inverse();
    // −∫ f log g = h(g) + ½·(tr(G⁻¹ Cov_f) − n)
    let cross = g_entropy + 0.5 * ((&g_inv * f.covariance()).trace() - f.dim() as f64);
    let d = divergence_mc(f, &g, rng, n)?;
    Ok(EntropyEstimate {
        value: cross - d.value,
        std_error: d.std_error,
        n_samples: d.n_samples,
        method: EntropyMethod::DivergenceRoute,
    })
}

/// Deterministic oracle: quadrature of `−f log f` over the component means
/// widened by 12 of the widest component standard deviations.
pub fn entropy_quadrature_1d(d: &GaussianMixture, cfg: &QuadratureConfig) -> Result<EntropyEstimate> {
    let m = Mixture1D::try_from(d)?;
    let s = m.sds().iter().copied().fold(0.0, f64::max);
    let lo = m.means().iter().copied().fold(f64::INFINITY, f64::min) - ORACLE_HALF_WIDTH_SDS * s;
    let hi = m.means().iter().copied().fold(f64::NEG_INFINITY, f64::max) + ORACLE_HALF_WIDTH_SDS * s;
    let integrand = |x: f64| {
        let lf = m.log_pdf(x);
        -lf.exp() * lf
    };
    // break at the component means so that narrow peaks are never straddled
    let mut cuts: Vec<f64> = m.means().to_vec();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = (cuts.len() - 1) as f64;
    let piece_cfg = QuadratureConfig { abs_tol: cfg.abs_tol / pieces, ..*cfg };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += integrate_1d(integrand, w[0], w[1], &piece_cfg)?;
    }
    Ok(EntropyEstimate::exact(total, EntropyMethod::QuadratureOracle))
}
