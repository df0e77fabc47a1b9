//! Triangular (Knöthe–Rosenblatt) maps from the standard Gaussian to
//! Gaussian-mixture targets.
//!
//! Coordinate `k` of `Φ(x*)` is the unique `yₖ` with
//! `F_target(yₖ | y₁..ₖ₋₁) = Φcdf(x*ₖ)`, where `y₁..ₖ₋₁` are the coordinates
//! already produced. Differentiating that identity gives the diagonal
//! partial `∂Φₖ/∂x*ₖ = φ(x*ₖ) / f_target(yₖ | y₁..ₖ₋₁)`.

use nalgebra::DMatrix;

use crate::densities::{Conditional1D, GaussianMixture, MAX_DIM};
use crate::error::{Error, Result};
use crate::mc;
use crate::numerics::{find_root_monotone, std_normal_cdf, std_normal_log_pdf, std_normal_quantile, RootConfig};
pub use crate::rng::RngStream;

const CACHE_KNOTS: usize = 1024;
const CACHE_HALF_WIDTH: f64 = 8.0;
/// Inverse solves search reference coordinates in ±this range; beyond it the
/// reference tail mass underflows.
const INVERSE_SEARCH: f64 = 37.0;
const JENSEN_SERIES_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct TriangularMap {
    reference: GaussianMixture,
    target: GaussianMixture,
    root_cfg: RootConfig,
    cache: Option<FirstCoordinateCache>,
}

/// Knöthe map pushing `N(0, I)` forward to `target`.
pub fn build_knothe(target: &GaussianMixture, root_cfg: RootConfig) -> TriangularMap {
    TriangularMap::new(target.clone(), root_cfg)
}

impl TriangularMap {
    pub fn new(target: GaussianMixture, root_cfg: RootConfig) -> Self {
        let reference = GaussianMixture::standard_normal(target.dim()).expect("target dimension already validated");
        Self { reference, target, root_cfg, cache: None }
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn reference(&self) -> &GaussianMixture {
        &self.reference
    }

    pub fn target(&self) -> &GaussianMixture {
        &self.target
    }

    pub fn root_config(&self) -> &RootConfig {
        &self.root_cfg
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(())
    }

    fn wrap(&self, coordinate: usize, input: &[f64], e: Error) -> Error {
        Error::MapEval { coordinate, input: input.to_vec(), source: Box::new(e) }
    }

    /// Coordinate `k` of the image given the already mapped prefix `y[..k]`;
    /// returns `(yₖ, log ∂Φₖ/∂x*ₖ)`.
    fn coordinate(&self, k: usize, z: f64, prefix: &[f64]) -> Result<(f64, f64)> {
        let cond = self.target.conditional(prefix)?;
        // A single Gaussian conditional makes the coordinate affine; skipping
        // the CDF round trip keeps it exact.
        if let Some((mu, s)) = cond.as_gaussian() {
            return Ok((mu + s * z, s.ln()));
        }
        let y = match (&self.cache, k) {
            (Some(cache), 0) if z.abs() <= CACHE_HALF_WIDTH => cache.eval(z),
            _ => solve_matching(&cond, z, &self.root_cfg)?,
        };
        Ok((y, std_normal_log_pdf(z) - cond.log_pdf(y)))
    }

    /// Writes `Φ(x*)` into `out` and, when requested, the log diagonal partials.
    pub fn eval_into(&self, x_star: &[f64], out: &mut [f64], mut log_partials: Option<&mut [f64]>) -> Result<()> {
        self.check_len(x_star)?;
        for k in 0..self.dim() {
            let (y, lp) = self.coordinate(k, x_star[k], &out[..k]).map_err(|e| self.wrap(k, x_star, e))?;
            out[k] = y;
            if let Some(lps) = log_partials.as_deref_mut() {
                lps[k] = lp;
            }
        }
        Ok(())
    }

    pub fn eval(&self, x_star: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x_star, &mut out, None)?;
        Ok(out)
    }

    /// `(Φ(x*), log ∂Φₖ/∂x*ₖ for each k)`.
    pub fn eval_with_log_partials(&self, x_star: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut out = vec![0.0; self.dim()];
        let mut lp = vec![0.0; self.dim()];
        self.eval_into(x_star, &mut out, Some(&mut lp))?;
        Ok((out, lp))
    }

    pub fn diag_partials(&self, x_star: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_with_log_partials(x_star)?.1.into_iter().map(f64::exp).collect())
    }

    /// Log of the Jacobian determinant: the sum of log diagonal partials.
    pub fn log_jacobian(&self, x_star: &[f64]) -> Result<f64> {
        Ok(self.eval_with_log_partials(x_star)?.1.iter().sum())
    }

    /// Full Jacobian matrix by centered finite differences with step `h`.
    pub fn jacobian_fd(&self, x_star: &[f64], h: f64) -> Result<DMatrix<f64>> {
        jacobian_fd(|x| self.eval(x), x_star, h)
    }

    /// Conditional CDF levels `F(yₖ | y₁..ₖ₋₁)` of the target at `y`.
    pub fn rosenblatt(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        (0..self.dim()).map(|k| Ok(self.target.conditional(&y[..k])?.cdf(y[k]))).collect()
    }

    /// `Φ⁻¹(y)` in closed form: `x*ₖ = Φcdf⁻¹(F(yₖ | y₁..ₖ₋₁))`, each level
    /// taken from its smaller tail.
    pub fn inverse_closed_form(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        (0..self.dim())
            .map(|k| {
                let c = self.target.conditional(&y[..k])?;
                let (lower, upper) = (c.cdf(y[k]), c.sf(y[k]));
                if lower <= upper {
                    std_normal_quantile(lower)
                } else {
                    Ok(-std_normal_quantile(upper)?)
                }
            })
            .collect()
    }

    /// `Φ⁻¹(y)` by coordinate-wise monotone root solves on the forward map.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let mut x = vec![0.0; self.dim()];
        let mut mapped = vec![0.0; self.dim()];
        for k in 0..self.dim() {
            let cond = self.target.conditional(&mapped[..k]).map_err(|e| self.wrap(k, y, e))?;
            let g = |s: f64| match solve_matching(&cond, s, &self.root_cfg) {
                Ok(v) => v - y[k],
                Err(_) => f64::NAN,
            };
            x[k] = find_root_monotone(g, -INVERSE_SEARCH, INVERSE_SEARCH, &self.root_cfg).map_err(|e| self.wrap(k, y, e))?;
            mapped[k] = self.coordinate(k, x[k], &mapped[..k]).map_err(|e| self.wrap(k, y, e))?.0;
        }
        Ok(x)
    }

    /// Enables a monotone cubic Hermite cache for the first coordinate over
    /// ±8 reference standard deviations (1024 knots, exact knot slopes).
    /// Later coordinates depend on the mapped prefix and are always solved.
    pub fn with_cache(mut self) -> Result<Self> {
        self.cache = None;
        let cond = self.target.conditional(&[])?;
        self.cache = Some(FirstCoordinateCache::build(&cond, &self.root_cfg)?);
        Ok(self)
    }
}

/// Solves `F(y) = Φcdf(z)` on the smaller tail.
fn solve_matching(cond: &Conditional1D, z: f64, cfg: &RootConfig) -> Result<f64> {
    let lower = std_normal_cdf(z);
    let upper = std_normal_cdf(-z);
    if !(lower > 0.0 && upper > 0.0) {
        return Err(Error::Domain(format!("reference coordinate {z} has no representable tail mass")));
    }
    cond.quantile_split(lower, upper, cfg)
}

#[derive(Debug, Clone)]
struct FirstCoordinateCache {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl FirstCoordinateCache {
    fn build(cond: &Conditional1D, cfg: &RootConfig) -> Result<Self> {
        let step = 2.0 * CACHE_HALF_WIDTH / (CACHE_KNOTS - 1) as f64;
        let mut values = Vec::with_capacity(CACHE_KNOTS);
        let mut slopes = Vec::with_capacity(CACHE_KNOTS);
        for i in 0..CACHE_KNOTS {
            let z = -CACHE_HALF_WIDTH + i as f64 * step;
            let y = solve_matching(cond, z, cfg)?;
            values.push(y);
            slopes.push((std_normal_log_pdf(z) - cond.log_pdf(y)).exp());
        }
        // Fritsch–Carlson limiter keeps each cubic piece monotone.
        for i in 0..CACHE_KNOTS - 1 {
            let secant = (values[i + 1] - values[i]) / step;
            let (a, b) = (slopes[i] / secant, slopes[i + 1] / secant);
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * a * secant;
                slopes[i + 1] = tau * b * secant;
            }
        }
        Ok(Self { step, values, slopes })
    }

    fn eval(&self, z: f64) -> f64 {
        let pos = (z + CACHE_HALF_WIDTH) / self.step;
        let i = (pos.floor() as usize).min(CACHE_KNOTS - 2);
        let t = pos - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[i]
            + h10 * self.step * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * self.step * self.slopes[i + 1]
    }
}

/// Centered finite-difference Jacobian of `f` at `x`.
pub fn jacobian_fd<F>(f: F, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::InvalidParameter { name: "h", reason: format!("step must lie in [1e-6, 1e-3], got {h}") });
    }
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let plus = f(&xp)?;
        xp[j] = x[j] - h;
        let minus = f(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `Φ ∘ Ψ⁻¹`: a triangular map pushing the target of `inner` to the target
/// of `outer`, neither of which needs to be Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct ComposedMap<'a> {
    outer: &'a TriangularMap,
    inner: &'a TriangularMap,
}

pub fn compose<'a>(outer: &'a TriangularMap, inner: &'a TriangularMap) -> Result<ComposedMap<'a>> {
    if outer.dim() != inner.dim() {
        return Err(Error::DimensionMismatch { expected: outer.dim(), found: inner.dim() });
    }
    Ok(ComposedMap { outer, inner })
}

impl ComposedMap<'_> {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.outer.eval(&self.inner.inverse(x)?)
    }

    /// Chain rule on the diagonal: outer partial over inner partial at `Ψ⁻¹(x)`.
    pub fn diag_partials(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.inner.inverse(x)?;
        let (_, outer) = self.outer.eval_with_log_partials(&z)?;
        let (_, inner) = self.inner.eval_with_log_partials(&z)?;
        Ok(outer.iter().zip(&inner).map(|(a, b)| (a - b).exp()).collect())
    }

    pub fn jacobian_fd(&self, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
        jacobian_fd(|p| self.eval(p), x, h)
    }
}

/// `(x̃, ỹ) = (√λ·x* + √(1−λ)·y*, −√(1−λ)·x* + √λ·y*)`.
pub fn rotate_pair(x_star: &[f64], y_star: &[f64], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(x_star, y_star, lambda)?;
    let (a, b) = (lambda.sqrt(), (1.0 - lambda).sqrt());
    Ok((
        x_star.iter().zip(y_star).map(|(x, y)| a * x + b * y).collect(),
        x_star.iter().zip(y_star).map(|(x, y)| -b * x + a * y).collect(),
    ))
}

/// Inverse of [`rotate_pair`]: `x* = √λ·x̃ − √(1−λ)·ỹ`, `y* = √(1−λ)·x̃ + √λ·ỹ`.
pub fn unrotate_pair(x_tilde: &[f64], y_tilde: &[f64], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(x_tilde, y_tilde, lambda)?;
    let (a, b) = (lambda.sqrt(), (1.0 - lambda).sqrt());
    Ok((
        x_tilde.iter().zip(y_tilde).map(|(x, y)| a * x - b * y).collect(),
        x_tilde.iter().zip(y_tilde).map(|(x, y)| b * x + a * y).collect(),
    ))
}

fn check_pair(x: &[f64], y: &[f64], lambda: f64) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    check_lambda(lambda)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter { name: "lambda", reason: format!("must lie in (0, 1), got {lambda}") });
    }
    Ok(())
}

/// `log(λ·e^a + (1−λ)·e^b) − λ·a − (1−λ)·b`, the per-coordinate Jensen gap
/// between log-partials `a` and `b`. Evaluated through `expm1`/`ln_1p` so that
/// equal inputs give exactly zero; near-equal inputs use the cumulant series
/// of a Bernoulli(1−λ) variable, which keeps the result nonnegative.
pub fn jensen_log_gap(lambda: f64, a: f64, b: f64) -> f64 {
    let d = b - a;
    if d.abs() <= JENSEN_SERIES_CUTOFF {
        let k2 = lambda * (1.0 - lambda);
        let k3 = k2 * (2.0 * lambda - 1.0);
        let k4 = k2 * (1.0 - 6.0 * k2);
        return d * d * (k2 / 2.0 + d * (k3 / 6.0 + d * k4 / 24.0));
    }
    if d <= 0.0 {
        ((1.0 - lambda) * d.exp_m1()).ln_1p() - (1.0 - lambda) * d
    } else {
        (lambda * (-d).exp_m1()).ln_1p() + lambda * d
    }
}

/// `Θ_ỹ(x̃) = √λ·Φ(√λ·x̃ − √(1−λ)·ỹ) + √(1−λ)·Ψ(√(1−λ)·x̃ + √λ·ỹ)` for a frozen `ỹ`.
#[derive(Debug, Clone)]
pub struct ThetaMap<'a> {
    phi: &'a TriangularMap,
    psi: &'a TriangularMap,
    lambda: f64,
    y_tilde: Vec<f64>,
}

/// Everything computed while evaluating `Θ_ỹ` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub value: Vec<f64>,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub log_phi_partials: Vec<f64>,
    pub log_psi_partials: Vec<f64>,
    pub log_theta_partials: Vec<f64>,
    /// Per-coordinate `log θᵢ − λ·log ∂Φᵢ − (1−λ)·log ∂Ψᵢ`.
    pub jensen_gaps: Vec<f64>,
}

impl<'a> ThetaMap<'a> {
    pub fn new(phi: &'a TriangularMap, psi: &'a TriangularMap, lambda: f64, y_tilde: Vec<f64>) -> Result<Self> {
        if phi.dim() != psi.dim() {
            return Err(Error::DimensionMismatch { expected: phi.dim(), found: psi.dim() });
        }
        if y_tilde.len() != phi.dim() {
            return Err(Error::DimensionMismatch { expected: phi.dim(), found: y_tilde.len() });
        }
        check_lambda(lambda)?;
        Ok(Self { phi, psi, lambda, y_tilde })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn y_tilde(&self) -> &[f64] {
        &self.y_tilde
    }

    pub fn evaluate(&self, x_tilde: &[f64]) -> Result<ThetaPoint> {
        let (x_star, y_star) = unrotate_pair(x_tilde, &self.y_tilde, self.lambda)?;
        let (phi_val, lphi) = self.phi.eval_with_log_partials(&x_star)?;
        let (psi_val, lpsi) = self.psi.eval_with_log_partials(&y_star)?;
        let (a, b) = (self.lambda.sqrt(), (1.0 - self.lambda).sqrt());
        let value = phi_val.iter().zip(&psi_val).map(|(p, q)| a * p + b * q).collect();
        let jensen_gaps: Vec<f64> = lphi.iter().zip(&lpsi).map(|(&p, &q)| jensen_log_gap(self.lambda, p, q)).collect();
        let log_theta_partials = lphi
            .iter()
            .zip(&lpsi)
            .zip(&jensen_gaps)
            .map(|((p, q), j)| self.lambda * p + (1.0 - self.lambda) * q + j)
            .collect();
        Ok(ThetaPoint {
            value,
            x_star,
            y_star,
            log_phi_partials: lphi,
            log_psi_partials: lpsi,
            log_theta_partials,
            jensen_gaps,
        })
    }

    pub fn eval(&self, x_tilde: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(x_tilde)?.value)
    }

    /// `λ·∂Φᵢ/∂xᵢ + (1−λ)·∂Ψᵢ/∂yᵢ` at the unrotated points.
    pub fn diag_partials(&self, x_tilde: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(x_tilde)?.log_theta_partials.into_iter().map(f64::exp).collect())
    }

    pub fn log_jacobian(&self, x_tilde: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x_tilde)?.log_theta_partials.iter().sum())
    }

    pub fn jacobian_fd(&self, x_tilde: &[f64], h: f64) -> Result<DMatrix<f64>> {
        jacobian_fd(|p| self.eval(p), x_tilde, h)
    }
}

/// `count` draws from `d` by multivariate inverse transform sampling:
/// `xₖ = F⁻¹(uₖ | x₁..ₖ₋₁)` with one uniform per coordinate.
pub fn sample_mitsm(d: &GaussianMixture, rng: &RngStream, count: usize) -> Result<Vec<Vec<f64>>> {
    let dim = d.dim();
    let cfg = RootConfig::default();
    let chunks = mc::map_chunks(count, |range| {
        let mut cursor = rng.cursor(range.start as u64, dim);
        let mut u = [0.0; MAX_DIM];
        let mut out = Vec::with_capacity(range.len());
        for _ in range {
            cursor.next_uniforms(&mut u[..dim]);
            let mut x = vec![0.0; dim];
            for k in 0..dim {
                x[k] = d.conditional(&x[..k])?.quantile_split(u[k], 1.0 - u[k], &cfg)?;
            }
            out.push(x);
        }
        Ok(out)
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// `count` standard normal reference draws pushed through `map`.
pub fn sample_pushforward(map: &TriangularMap, rng: &RngStream, count: usize) -> Result<Vec<Vec<f64>>> {
    let dim = map.dim();
    let chunks = mc::map_chunks(count, |range| {
        let mut cursor = rng.cursor(range.start as u64, dim);
        let mut z = [0.0; MAX_DIM];
        let mut out = Vec::with_capacity(range.len());
        for _ in range {
            cursor.next_normals(&mut z[..dim])?;
            out.push(map.eval(&z[..dim])?);
        }
        Ok(out)
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// `count` draws of `N(0, I_dim)`.
pub fn standard_normal_draws(dim: usize, rng: &RngStream, count: usize) -> Result<Vec<Vec<f64>>> {
    let chunks = mc::map_chunks(count, |range| {
        let mut cursor = rng.cursor(range.start as u64, dim);
        let mut out = Vec::with_capacity(range.len());
        for _ in range {
            let mut z = vec![0.0; dim];
            cursor.next_normals(&mut z)?;
            out.push(z);
        }
        Ok(out)
    })?;
    Ok(chunks.into_iter().flatten().collect())
}
