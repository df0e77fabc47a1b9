//! Gaussian mixtures with closed-form marginals, conditionals and linear
//! combinations.
//!
//! Every component stores the lower Cholesky factor `L` of its covariance.
//! Sequential conditioning then reduces to forward substitution: with
//! `z = L⁻¹(x − μ)`, coordinate `k` given `x₁..ₖ₋₁` has mean
//! `μₖ + Σⱼ<ₖ Lₖⱼ zⱼ` and standard deviation `Lₖₖ`, and the prefix
//! log-likelihood is `Σⱼ<ₖ (−½zⱼ² − log Lⱼⱼ) − (k−1)·log √(2π)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    find_root_monotone_newton, std_normal_cdf, std_normal_log_pdf, std_normal_quantile, RootConfig, LN_SQRT_2PI,
};
use crate::rng::RngStream;

pub const MAX_DIM: usize = 3;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const MIN_EIGENVALUE: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
/// Initial quantile bracket half-width, in widest-component standard deviations.
const BRACKET_SDS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentLiteral {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// JSON form: `{"dim": n, "components": [{"weight": w, "mean": [...], "cov": [[...], ...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureLiteral {
    pub dim: usize,
    pub components: Vec<ComponentLiteral>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    /// Row-major lower Cholesky factor.
    chol: Vec<f64>,
    log_det_half: f64,
}

impl Component {
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> DMatrix<f64> {
        let n = self.mean.len();
        DMatrix::from_row_slice(n, n, &self.chol)
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.chol[i * self.mean.len() + j]
    }

    /// Whitens the first `z.len()` coordinates of `x`.
    fn whiten_prefix(&self, x: &[f64], z: &mut [f64]) {
        for i in 0..z.len() {
            let mut acc = x[i] - self.mean[i];
            for (j, zj) in z.iter().enumerate().take(i) {
                acc -= self.l(i, j) * zj;
            }
            z[i] = acc / self.l(i, i);
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut z = [0.0; MAX_DIM];
        self.whiten_prefix(x, &mut z[..n]);
        let quad: f64 = z[..n].iter().map(|v| v * v).sum();
        -0.5 * quad - self.log_det_half - n as f64 * LN_SQRT_2PI
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureLiteral", into = "MixtureLiteral")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidMixture { field: field.into(), reason: reason.into() }
}

fn lower_cholesky(cov: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = cov.nrows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

impl GaussianMixture {
    /// Validates and builds a mixture from `(weight, mean, covariance)` triples.
    pub fn new(dim: usize, parts: Vec<(f64, Vec<f64>, DMatrix<f64>)>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid("dim", format!("supported dimensions are 1..={MAX_DIM}, got {dim}")));
        }
        if parts.is_empty() {
            return Err(invalid("components", "at least one component is required"));
        }
        let mut sum = 0.0;
        let mut components = Vec::with_capacity(parts.len());
        for (i, (weight, mean, cov)) in parts.into_iter().enumerate() {
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(invalid(format!("components[{i}].weight"), format!("must be positive and finite, got {weight}")));
            }
            if mean.len() != dim {
                return Err(invalid(format!("components[{i}].mean"), format!("expected length {dim}, got {}", mean.len())));
            }
            if mean.iter().any(|m| !m.is_finite()) {
                return Err(invalid(format!("components[{i}].mean"), "entries must be finite"));
            }
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(invalid(
                    format!("components[{i}].cov"),
                    format!("expected {dim}x{dim}, got {}x{}", cov.nrows(), cov.ncols()),
                ));
            }
            if cov.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!("components[{i}].cov"), "entries must be finite"));
            }
            let scale = 1.0 + cov.amax();
            for r in 0..dim {
                for c in 0..r {
                    if (cov[(r, c)] - cov[(c, r)]).abs() > SYMMETRY_TOL * scale {
                        return Err(invalid(format!("components[{i}].cov"), "matrix is not symmetric"));
                    }
                }
            }
            let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
            let min_eig = eig.iter().copied().fold(f64::INFINITY, f64::min);
            if min_eig < MIN_EIGENVALUE {
                return Err(invalid(
                    format!("components[{i}].cov"),
                    format!("smallest eigenvalue {min_eig:e} is below {MIN_EIGENVALUE:e}"),
                ));
            }
            let chol = lower_cholesky(&cov)
                .ok_or_else(|| invalid(format!("components[{i}].cov"), "Cholesky factorization failed"))?;
            let log_det_half = (0..dim).map(|k| chol[k * dim + k].ln()).sum();
            sum += weight;
            components.push(Component { weight, mean, cov, chol, log_det_half });
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid("components", format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { dim, components })
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], DMatrix::identity(dim, dim))
    }

    pub fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean.len(), vec![(1.0, mean, cov)])
    }

    /// One-dimensional mixture from `(weight, mean, variance)` triples.
    pub fn univariate(parts: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(1, parts.iter().map(|&(w, m, v)| (w, vec![m], DMatrix::from_element(1, 1, v))).collect())
    }

    /// Law of a vector with independent coordinates, each a 1D mixture.
    pub fn product(factors: &[GaussianMixture]) -> Result<Self> {
        if factors.iter().any(|f| f.dim != 1) {
            return Err(invalid("factors", "product factors must be one-dimensional"));
        }
        let dim = factors.len();
        let mut parts: Vec<(f64, Vec<f64>, Vec<f64>)> = vec![(1.0, vec![], vec![])];
        for f in factors {
            let mut next = Vec::with_capacity(parts.len() * f.components.len());
            for (w, m, v) in &parts {
                for c in &f.components {
                    let mut m2 = m.clone();
                    m2.push(c.mean[0]);
                    let mut v2 = v.clone();
                    v2.push(c.cov[(0, 0)]);
                    next.push((w * c.weight, m2, v2));
                }
            }
            parts = next;
        }
        Self::new(
            dim,
            parts.into_iter().map(|(w, m, v)| (w, m, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v)))).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_gaussian(&self) -> bool {
        self.components.len() == 1
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok(())
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(log_sum_exp(self.components.iter().map(|c| c.weight.ln() + c.log_density(x))))
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// Law of the first `k` coordinates.
    pub fn marginal_prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dim {
            return Err(Error::InvalidParameter { name: "k", reason: format!("need 1 <= k <= {}, got {k}", self.dim) });
        }
        Self::new(
            k,
            self.components
                .iter()
                .map(|c| (c.weight, c.mean[..k].to_vec(), c.cov.view((0, 0), (k, k)).into_owned()))
                .collect(),
        )
    }

    /// Marginal law of coordinate `i` (zero-based).
    pub fn marginal_coordinate(&self, i: usize) -> Result<Mixture1D> {
        if i >= self.dim {
            return Err(Error::InvalidParameter { name: "i", reason: format!("coordinate {i} out of range") });
        }
        Ok(Mixture1D {
            weights: self.components.iter().map(|c| c.weight).collect(),
            means: self.components.iter().map(|c| c.mean[i]).collect(),
            sds: self.components.iter().map(|c| c.cov[(i, i)].sqrt()).collect(),
        })
    }

    /// Law of coordinate `prefix.len()` given the preceding coordinates.
    pub fn conditional(&self, prefix: &[f64]) -> Result<Conditional1D> {
        let k = prefix.len();
        if k >= self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim - 1, found: k });
        }
        let m = self.components.len();
        let mut log_w = Vec::with_capacity(m);
        let mut means = Vec::with_capacity(m);
        let mut sds = Vec::with_capacity(m);
        let mut z = [0.0; MAX_DIM];
        for c in &self.components {
            c.whiten_prefix(prefix, &mut z[..k]);
            let mut ll = c.weight.ln();
            let mut mu = c.mean[k];
            for j in 0..k {
                ll += -0.5 * z[j] * z[j] - c.l(j, j).ln();
                mu += c.l(k, j) * z[j];
            }
            log_w.push(ll);
            means.push(mu);
            sds.push(c.l(k, k));
        }
        let norm = log_sum_exp(log_w.iter().copied());
        let weights = log_w.iter().map(|l| (l - norm).exp()).collect();
        Ok(Mixture1D { weights, means, sds })
    }

    /// Exact law of `a·X + b·Y` for independent `X ~ dx`, `Y ~ dy`.
    pub fn linear_combine(a: f64, dx: &Self, b: f64, dy: &Self) -> Result<Self> {
        if dx.dim != dy.dim {
            return Err(Error::DimensionMismatch { expected: dx.dim, found: dy.dim });
        }
        if a == 0.0 && b == 0.0 {
            return Err(Error::InvalidParameter { name: "a, b", reason: "coefficients cannot both be zero".into() });
        }
        let mut parts = Vec::with_capacity(dx.components.len() * dy.components.len());
        for cx in &dx.components {
            for cy in &dy.components {
                let mean = cx.mean.iter().zip(&cy.mean).map(|(m, n)| a * m + b * n).collect();
                let cov = &cx.cov * (a * a) + &cy.cov * (b * b);
                parts.push((cx.weight * cy.weight, mean, cov));
            }
        }
        Self::new(dx.dim, parts)
    }

    /// Law of `X + √t·Z` with `Z ~ N(0, I)` independent of `X`.
    pub fn smooth(&self, t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter { name: "t", reason: format!("must be positive, got {t}") });
        }
        let eye = DMatrix::<f64>::identity(self.dim, self.dim);
        Self::new(
            self.dim,
            self.components.iter().map(|c| (c.weight, c.mean.clone(), &c.cov + &eye * t)).collect(),
        )
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in &self.components {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += c.weight * m;
            }
        }
        out
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for c in &self.components {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    out[(i, j)] += c.weight * (c.cov[(i, j)] + (c.mean[i] - mu[i]) * (c.mean[j] - mu[j]));
                }
            }
        }
        out
    }

    /// Uniforms consumed by one ancestral draw.
    pub fn draw_width(&self) -> usize {
        self.dim + 1
    }

    /// Ancestral draw: `u[0]` picks the component, the rest become `μ + L·z`.
    pub fn draw_from_uniforms(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let mut acc = 0.0;
        let last = self.components.len() - 1;
        let mut chosen = &self.components[last];
        for c in &self.components[..last] {
            acc += c.weight;
            if u[0] < acc {
                chosen = c;
                break;
            }
        }
        let mut z = [0.0; MAX_DIM];
        for k in 0..self.dim {
            z[k] = std_normal_quantile(u[k + 1])?;
        }
        for i in 0..self.dim {
            let mut v = chosen.mean[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                v += chosen.l(i, j) * zj;
            }
            out[i] = v;
        }
        Ok(())
    }

    /// `count` ancestral draws starting at draw index 0 of `rng`.
    pub fn sample(&self, rng: &RngStream, count: usize) -> Result<Vec<Vec<f64>>> {
        let mut cursor = rng.cursor(0, self.draw_width());
        let mut u = vec![0.0; self.draw_width()];
        (0..count)
            .map(|_| {
                cursor.next_uniforms(&mut u);
                let mut x = vec![0.0; self.dim];
                self.draw_from_uniforms(&u, &mut x)?;
                Ok(x)
            })
            .collect()
    }
}

impl TryFrom<MixtureLiteral> for GaussianMixture {
    type Error = Error;

    fn try_from(lit: MixtureLiteral) -> Result<Self> {
        let dim = lit.dim;
        let mut parts = Vec::with_capacity(lit.components.len());
        for (i, c) in lit.components.into_iter().enumerate() {
            if c.cov.len() != dim || c.cov.iter().any(|row| row.len() != dim) {
                return Err(invalid(format!("components[{i}].cov"), format!("expected a {dim}x{dim} nested array")));
            }
            let flat: Vec<f64> = c.cov.into_iter().flatten().collect();
            parts.push((c.weight, c.mean, DMatrix::from_row_slice(dim, dim, &flat)));
        }
        Self::new(dim, parts)
    }
}

impl From<GaussianMixture> for MixtureLiteral {
    fn from(d: GaussianMixture) -> Self {
        MixtureLiteral {
            dim: d.dim,
            components: d
                .components
                .into_iter()
                .map(|c| ComponentLiteral {
                    weight: c.weight,
                    cov: (0..d.dim).map(|r| (0..d.dim).map(|s| c.cov[(r, s)]).collect()).collect(),
                    mean: c.mean,
                })
                .collect(),
        }
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One-dimensional Gaussian mixture kept as flat arrays for the hot paths
/// (CDF matching inside map evaluation).
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture1D {
    weights: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

/// Law of one coordinate given the preceding ones.
pub type Conditional1D = Mixture1D;

impl Mixture1D {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.iter().map(|(w, m, s)| w * std_normal_cdf((x - m) / s)).sum()
    }

    /// `1 − cdf(x)` without cancellation in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        self.iter().map(|(w, m, s)| w * std_normal_cdf((m - x) / s)).sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        log_sum_exp(self.iter().map(|(w, m, s)| w.ln() + std_normal_log_pdf((x - m) / s) - s.ln()))
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(w, m, _)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.iter().map(|(w, m, s)| w * (s * s + (m - mu) * (m - mu))).sum()
    }

    /// `(mean, sd)` when the mixture has a single component.
    pub fn as_gaussian(&self) -> Option<(f64, f64)> {
        (self.weights.len() == 1).then(|| (self.means[0], self.sds[0]))
    }

    fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + Clone + '_ {
        self.weights.iter().zip(&self.means).zip(&self.sds).map(|((&w, &m), &s)| (w, m, s))
    }

    pub fn quantile(&self, u: f64, cfg: &RootConfig) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile requires 0 < u < 1, got {u}")));
        }
        self.quantile_split(u, 1.0 - u, cfg)
    }

    /// Quantile at lower-tail mass `lower` (`upper = 1 − lower`), solving on
    /// whichever tail is smaller so that extreme levels keep full precision.
    pub fn quantile_split(&self, lower: f64, upper: f64, cfg: &RootConfig) -> Result<f64> {
        if !(lower > 0.0 && upper > 0.0) {
            return Err(Error::Domain(format!("quantile tail masses must be positive, got {lower}, {upper}")));
        }
        let use_lower = lower <= upper;
        let z = if use_lower { std_normal_quantile(lower)? } else { -std_normal_quantile(upper)? };
        if self.weights.len() == 1 {
            return Ok(self.means[0] + self.sds[0] * z);
        }
        let target = if use_lower { lower } else { upper };
        let root_cfg = RootConfig { f_tol: cfg.f_tol * target, ..*cfg };
        let g = |x: f64| {
            let dens = self.pdf(x);
            if use_lower {
                (self.cdf(x) - target, dens)
            } else {
                (target - self.sf(x), dens)
            }
        };
        let (mut lo, mut hi) = self.initial_bracket();
        let mut width = hi - lo;
        while g(lo).0 > 0.0 {
            lo -= width;
            width *= 2.0;
        }
        width = hi - lo;
        while g(hi).0 < 0.0 {
            hi += width;
            width *= 2.0;
        }
        let guess = self.mean() + self.variance().sqrt() * z;
        find_root_monotone_newton(g, lo, hi, guess, &root_cfg)
    }

    fn initial_bracket(&self) -> (f64, f64) {
        let s = self.sds.iter().copied().fold(0.0, f64::max);
        let lo = self.means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo - BRACKET_SDS * s, hi + BRACKET_SDS * s)
    }
}

impl From<&Mixture1D> for GaussianMixture {
    fn from(m: &Mixture1D) -> Self {
        GaussianMixture::new(
            1,
            m.iter().map(|(w, mu, s)| (w, vec![mu], DMatrix::from_element(1, 1, s * s))).collect(),
        )
        .expect("Mixture1D parameters are valid by construction")
    }
}

impl TryFrom<&GaussianMixture> for Mixture1D {
    type Error = Error;

    fn try_from(d: &GaussianMixture) -> Result<Self> {
        if d.dim != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: d.dim });
        }
        d.marginal_coordinate(0)
    }
}

pub fn cdf_1d(d: &Mixture1D, x: f64) -> f64 {
    d.cdf(x)
}

pub fn quantile_1d(d: &Mixture1D, u: f64) -> Result<f64> {
    d.quantile(u, &RootConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{find_root_monotone, integrate_1d, std_normal_pdf, QuadratureConfig};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn bimodal() -> GaussianMixture {
        GaussianMixture::univariate(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]).unwrap()
    }

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        DMatrix::from_row_slice(n, n, &rows.concat())
    }

    fn mixed_2d() -> GaussianMixture {
        GaussianMixture::new(
            2,
            vec![
                (0.3, vec![-1.0, 0.5], mat(&[&[1.0, 0.4], &[0.4, 0.8]])),
                (0.7, vec![1.5, -0.5], mat(&[&[0.5, -0.2], &[-0.2, 1.2]])),
            ],
        )
        .unwrap()
    }

    #[test]
    fn pdf_values() {
        let n = GaussianMixture::standard_normal(1).unwrap();
        assert_abs_diff_eq!(n.pdf(&[0.0]).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);
        let m = GaussianMixture::univariate(&[(0.5, -1.0, 1.0), (0.5, 1.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(m.pdf(&[0.0]).unwrap(), std_normal_pdf(1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(m.pdf(&[0.0]).unwrap(), 0.241_970_724_519_143_37, epsilon = 1e-12);
        let n2 = GaussianMixture::standard_normal(2).unwrap();
        assert_abs_diff_eq!(n2.pdf(&[0.0, 0.0]).unwrap(), 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-15);
        assert!(matches!(n2.pdf(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn log_pdf_survives_separated_components() {
        let m = GaussianMixture::univariate(&[(0.5, -100.0, 1e-4), (0.5, 100.0, 1e-4)]).unwrap();
        let v = m.log_pdf(&[0.0]).unwrap();
        assert!(v.is_finite() && v < -1e7);
    }

    #[test]
    fn validation() {
        let bad_sum = GaussianMixture::univariate(&[(0.5, 0.0, 1.0), (0.4, 1.0, 1.0)]);
        match bad_sum {
            Err(Error::InvalidMixture { field, reason }) => {
                assert_eq!(field, "components");
                assert!(reason.contains("0.9"));
            }
            other => panic!("{other:?}"),
        }
        assert!(GaussianMixture::univariate(&[(1.0, 0.0, 1e-11)]).is_err());
        assert!(GaussianMixture::univariate(&[(1.0, 0.0, 0.0)]).is_err());
        assert!(GaussianMixture::univariate(&[(1.0, 0.0, -1.0)]).is_err());
        assert!(GaussianMixture::new(2, vec![(1.0, vec![0.0, 0.0], mat(&[&[1.0, 0.5], &[0.4, 1.0]]))]).is_err());
        assert!(GaussianMixture::new(2, vec![(1.0, vec![0.0, 0.0], mat(&[&[1.0, 1.0], &[1.0, 1.0]]))]).is_err());
        assert!(GaussianMixture::standard_normal(4).is_err());
        assert!(GaussianMixture::new(1, vec![]).is_err());
    }

    #[test]
    fn json_literal_round_trip() {
        let json = r#"{"dim": 2, "components": [{"weight": 1.0, "mean": [0.0, 1.0], "cov": [[1.0, 0.5], [0.5, 1.0]]}]}"#;
        let d: GaussianMixture = serde_json::from_str(json).unwrap();
        assert_eq!(d.dim(), 2);
        let back: GaussianMixture = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        let bad = r#"{"dim": 1, "components": [{"weight": 0.9, "mean": [0.0], "cov": [[1.0]]}]}"#;
        assert!(serde_json::from_str::<GaussianMixture>(bad).unwrap_err().to_string().contains("weights sum"));
    }

    #[test]
    fn marginals() {
        let d = GaussianMixture::gaussian(vec![1.0, 2.0], mat(&[&[2.0, 0.3], &[0.3, 1.0]])).unwrap();
        let m = d.marginal_prefix(1).unwrap();
        assert_eq!(m, GaussianMixture::univariate(&[(1.0, 1.0, 2.0)]).unwrap());
        assert_eq!(d.marginal_prefix(2).unwrap(), d);
        assert!(d.marginal_prefix(0).is_err());
        assert!(d.marginal_prefix(3).is_err());
        let p = GaussianMixture::product(&[bimodal(), GaussianMixture::standard_normal(1).unwrap()]).unwrap();
        let first = p.marginal_prefix(1).unwrap();
        for x in [-3.0, -0.5, 0.0, 1.7] {
            assert_relative_eq!(first.pdf(&[x]).unwrap(), bimodal().pdf(&[x]).unwrap(), max_relative = 1e-13);
        }
    }

    #[test]
    fn conditionals() {
        let p = GaussianMixture::product(&[bimodal(), GaussianMixture::univariate(&[(0.3, 1.0, 0.5), (0.7, -1.0, 2.0)]).unwrap()])
            .unwrap();
        let want = p.marginal_coordinate(1).unwrap();
        for x1 in [-4.0, 0.0, 2.5] {
            let c = p.conditional(&[x1]).unwrap();
            for y in [-2.0, 0.0, 1.0] {
                assert_relative_eq!(c.pdf(y), want.pdf(y), max_relative = 1e-12);
            }
        }
        let sym = GaussianMixture::new(
            2,
            vec![(0.5, vec![-1.0, 0.0], DMatrix::identity(2, 2)), (0.5, vec![1.0, 0.0], DMatrix::identity(2, 2))],
        )
        .unwrap();
        let c = sym.conditional(&[0.0]).unwrap();
        assert_abs_diff_eq!(c.weights()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.weights()[1], 0.5, epsilon = 1e-15);
        let g = GaussianMixture::gaussian(vec![0.0, 0.0], mat(&[&[1.0, 0.5], &[0.5, 1.0]])).unwrap();
        let c = g.conditional(&[1.0]).unwrap();
        assert_abs_diff_eq!(c.means()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.sds()[0] * c.sds()[0], 0.75, epsilon = 1e-15);
        assert!(g.conditional(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn cdf_and_quantile() {
        let n: Mixture1D = (&GaussianMixture::standard_normal(1).unwrap()).try_into().unwrap();
        assert_eq!(cdf_1d(&n, 0.0), 0.5);
        let b = Mixture1D::try_from(&GaussianMixture::univariate(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]).unwrap()).unwrap();
        assert_abs_diff_eq!(cdf_1d(&b, 0.0), 0.5, epsilon = 1e-16);
        // oracle: bisection on the quadrature-integrated density
        let q = QuadratureConfig::default();
        let quad_cdf = |x: f64| integrate_1d(|t| b.pdf(t), f64::NEG_INFINITY, x, &q).unwrap();
        let oracle = find_root_monotone(|x| quad_cdf(x) - 0.25, -10.0, 10.0, &RootConfig { f_tol: 1e-13, ..Default::default() })
            .unwrap();
        let got = quantile_1d(&b, 0.25).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-8);
        assert_abs_diff_eq!(0.5 * std_normal_cdf(got + 2.0) + 0.5 * std_normal_cdf(got - 2.0), 0.25, epsilon = 1e-14);
        assert!(quantile_1d(&b, 0.0).is_err());
        assert!(quantile_1d(&b, 1.5).is_err());
    }

    #[test]
    fn extreme_quantiles_expand_bracket() {
        let b = Mixture1D::try_from(&bimodal()).unwrap();
        let x = b.quantile_split(1e-200, 1.0, &RootConfig::default()).unwrap();
        assert!(x < -25.0);
        assert_relative_eq!(b.cdf(x), 1e-200, max_relative = 1e-8);
        let y = b.quantile_split(1.0, 1e-200, &RootConfig::default()).unwrap();
        assert_abs_diff_eq!(x, -y, epsilon = 1e-9);
    }

    #[test]
    fn linear_combination_and_smoothing() {
        let n = GaussianMixture::standard_normal(1).unwrap();
        let h = 0.5f64.sqrt();
        let c = GaussianMixture::linear_combine(h, &n, h, &n).unwrap();
        assert_eq!(c.components().len(), 1);
        assert_abs_diff_eq!(c.covariance()[(0, 0)], 1.0, epsilon = 1e-15);
        let t: f64 = 0.3;
        let x = bimodal();
        let via_combine = GaussianMixture::linear_combine(1.0, &x, t.sqrt(), &n).unwrap();
        let via_smooth = x.smooth(t).unwrap();
        for (a, b) in via_combine.components().iter().zip(via_smooth.components()) {
            assert_abs_diff_eq!(a.cov()[(0, 0)], b.cov()[(0, 0)], epsilon = 1e-15);
        }
        let four = GaussianMixture::linear_combine(1.0, &x, 1.0, &GaussianMixture::univariate(&[(0.25, 1.0, 1.0), (0.75, 3.0, 2.0)]).unwrap())
            .unwrap();
        assert_eq!(four.components().len(), 4);
        let means: Vec<f64> = four.components().iter().map(|c| c.mean()[0]).collect();
        assert_eq!(means, vec![-1.0, 1.0, 3.0, 5.0]);
        assert!(GaussianMixture::linear_combine(0.0, &x, 0.0, &x).is_err());
        assert!(GaussianMixture::linear_combine(1.0, &x, 1.0, &mixed_2d()).is_err());

        let s = n.smooth(1.0).unwrap();
        assert_abs_diff_eq!(s.covariance()[(0, 0)], 2.0, epsilon = 1e-15);
        let narrow = GaussianMixture::univariate(&[(0.5, -2.0, 0.01), (0.5, 2.0, 0.01)]).unwrap();
        let sm = narrow.smooth(1.0).unwrap();
        assert_eq!(sm, GaussianMixture::univariate(&[(0.5, -2.0, 1.01), (0.5, 2.0, 1.01)]).unwrap());
        assert!(n.smooth(0.0).is_err());
        assert!(n.smooth(-1.0).is_err());
        let tiny = narrow.smooth(1e-12).unwrap();
        assert_abs_diff_eq!(tiny.components()[0].cov()[(0, 0)], 0.01, epsilon = 1e-11);
    }

    #[test]
    fn moments() {
        let n = GaussianMixture::standard_normal(2).unwrap();
        assert_eq!(n.mean(), vec![0.0, 0.0]);
        assert_eq!(n.covariance(), DMatrix::identity(2, 2));
        let b = bimodal();
        assert_abs_diff_eq!(b.covariance()[(0, 0)], 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.mean()[0], 0.0, epsilon = 1e-15);
        let cov = mat(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let g = GaussianMixture::gaussian(vec![1.0, -1.0], cov.clone()).unwrap();
        assert_eq!(g.mean(), vec![1.0, -1.0]);
        assert_eq!(g.covariance(), cov);
    }

    #[test]
    fn normalization_1d() {
        let q = QuadratureConfig::default();
        for d in [bimodal(), GaussianMixture::univariate(&[(0.2, -1.0, 0.04), (0.8, 3.0, 2.0)]).unwrap()] {
            let m = Mixture1D::try_from(&d).unwrap();
            let s = m.sds().iter().copied().fold(0.0, f64::max);
            let mass = integrate_1d(|x| m.pdf(x), m.mean() - 12.0 * s - 4.0, m.mean() + 12.0 * s + 4.0, &q).unwrap();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn ancestral_sample_moments() {
        let d = mixed_2d();
        let xs = d.sample(&RngStream::new(5, 0), 100_000).unwrap();
        let n = xs.len() as f64;
        let mu = d.mean();
        let cov = d.covariance();
        for i in 0..2 {
            let m = xs.iter().map(|x| x[i]).sum::<f64>() / n;
            assert!((m - mu[i]).abs() < 4.0 * (cov[(i, i)] / n).sqrt());
        }
    }

    fn arb_mixture_2d() -> impl Strategy<Value = GaussianMixture> {
        prop::collection::vec((0.1f64..1.0, -3.0f64..3.0, -3.0f64..3.0, 0.2f64..2.0, 0.2f64..2.0, -0.9f64..0.9), 1..4)
            .prop_map(|parts| {
                let total: f64 = parts.iter().map(|p| p.0).sum();
                let k = parts.len();
                let mut acc = 0.0;
                let parts = parts
                    .into_iter()
                    .enumerate()
                    .map(|(i, (w, m1, m2, s1, s2, r))| {
                        let w = if i + 1 == k { 1.0 - acc } else { w / total };
                        acc += w;
                        let c = r * s1 * s2;
                        (w, vec![m1, m2], DMatrix::from_row_slice(2, 2, &[s1 * s1, c, c, s2 * s2]))
                    })
                    .collect();
                GaussianMixture::new(2, parts).unwrap()
            })
    }

    proptest! {
        #[test]
        fn chain_rule(d in arb_mixture_2d(), x1 in -4.0f64..4.0, x2 in -4.0f64..4.0) {
            let joint = d.log_pdf(&[x1, x2]).unwrap();
            let prefix = d.marginal_prefix(1).unwrap().log_pdf(&[x1]).unwrap();
            let cond = d.conditional(&[x1]).unwrap().log_pdf(x2);
            // relative 1e-10 on the density, compared in log space to avoid underflow
            prop_assert!((prefix + cond - joint).abs() <= 1e-10);
        }

        #[test]
        fn combination_covariance(d in arb_mixture_2d(), e in arb_mixture_2d(), lam in 0.01f64..0.99) {
            let c = GaussianMixture::linear_combine(lam.sqrt(), &d, (1.0 - lam).sqrt(), &e).unwrap();
            let want = d.covariance() * lam + e.covariance() * (1.0 - lam);
            prop_assert!((c.covariance() - want).amax() <= 1e-12);
        }

        #[test]
        fn heat_semigroup(d in arb_mixture_2d(), s in 0.01f64..2.0, t in 0.01f64..2.0) {
            let a = d.smooth(s + t).unwrap();
            let b = d.smooth(s).unwrap().smooth(t).unwrap();
            for (ca, cb) in a.components().iter().zip(b.components()) {
                prop_assert!((ca.cov() - cb.cov()).amax() <= 1e-12);
                prop_assert_eq!(ca.mean(), cb.mean());
            }
        }

        #[test]
        fn quantile_inverts_cdf(x in -8.0f64..8.0, w in 0.05f64..0.95, m in -3.0f64..3.0, s in 0.3f64..2.0) {
            let d = Mixture1D::try_from(&GaussianMixture::univariate(&[(w, m, s * s), (1.0 - w, -m, 1.0)]).unwrap()).unwrap();
            let u = d.cdf(x);
            prop_assume!(u > 1e-300 && u < 1.0);
            let back = d.quantile_split(u, d.sf(x), &RootConfig::default()).unwrap();
            prop_assert!((back - x).abs() <= 1e-8, "x={} back={}", x, back);
        }
    }
}
