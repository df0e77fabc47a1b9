//! The entropy power inequality in Lieb form,
//! `h(√λ·X + √(1−λ)·Y) ≥ λ·h(X) + (1−λ)·h(Y)`,
//! with its gap split along the rotation-coupling argument:
//!
//! ```text
//! total = [h(Θ) − h(Θ | Ỹ)] + [E log Θ′ − E(λ log Φ′ + (1−λ) log Ψ′)]
//!           conditioning          Jensen
//! ```
//!
//! where `Φ`, `Ψ` are the Knöthe maps of `X`, `Y` and `Θ_ỹ` is the map of
//! [`ThetaMap`]. Every reported quantity carries a standard error.
//!
//! Random streams used by a cell with stream `r`:
//!
//! | label | draws |
//! |---|---|
//! | `r.derive(1)` | ancestral `(X, Y)` pairs for both sides |
//! | `r.derive(2)` | coupled `(X̃, Ỹ)` for the decomposition |
//! | `r.derive(3)` | ancestral pairs for the Shannon form |
//! | `r.derive(4..=6)` | equality diagnostics |

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::densities::{GaussianMixture, MAX_DIM};
use crate::entropy::{entropy_quadrature_1d, entropy_resub, standard_gaussian_entropy, EntropyEstimate, EntropyMethod};
use crate::error::{Error, Result};
use crate::mc::{self, Moments};
use crate::numerics::{QuadratureConfig, RootConfig};
use crate::rng::RngStream;
use crate::stats::affine_fit;
use crate::transport::{build_knothe, check_lambda, jacobian_fd, standard_normal_draws, unrotate_pair, ThetaMap, TriangularMap};

pub const MIN_EPI_SAMPLES: usize = 10_000;
pub const DEFAULT_LAMBDAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
const FD_STEP: f64 = 1e-4;
const MAX_FD_POINTS: usize = 200;

const STREAM_SIDES: u64 = 1;
const STREAM_COUPLED: u64 = 2;
const STREAM_SHANNON: u64 = 3;
const STREAM_AFFINE_PHI: u64 = 4;
const STREAM_AFFINE_PSI: u64 = 5;
const STREAM_SLOPES: u64 = 6;

/// A Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64) -> Self {
        Self { value, std_error }
    }

    /// `value > k·σ`.
    pub fn exceeds(&self, k: f64) -> bool {
        self.value > k * self.std_error
    }

    /// `value ≥ −k·σ`.
    pub fn not_below(&self, k: f64) -> bool {
        self.value >= -k * self.std_error
    }

    /// `|value − target| ≤ k·σ`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }

    /// Difference of independent estimates.
    pub fn minus_independent(&self, other: &Estimate) -> Estimate {
        Estimate::new(self.value - other.value, self.std_error.hypot(other.std_error))
    }

    /// `Σ cᵢ·meanᵢ` with its standard error from the joint covariance of the means.
    fn linear(m: &Moments, coeffs: &[(usize, f64)]) -> Estimate {
        let value = coeffs.iter().map(|&(i, c)| c * m.mean(i)).sum();
        let mut var = 0.0;
        for &(i, a) in coeffs {
            for &(j, b) in coeffs {
                var += a * b * m.mean_covariance(i, j);
            }
        }
        Estimate::new(value, var.max(0.0).sqrt())
    }
}

impl From<EntropyEstimate> for Estimate {
    fn from(e: EntropyEstimate) -> Self {
        Estimate::new(e.value, e.std_error)
    }
}

/// `λ·h(X) + (1−λ)·h(Y)` and its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhsDecomposition {
    pub x_term: Estimate,
    pub y_term: Estimate,
    pub total: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDecomposition {
    pub conditioning_gap: Estimate,
    pub jensen_gap: Estimate,
    /// `conditioning_gap + jensen_gap` with the paired standard error.
    pub sum: Estimate,
    /// `h(Θ_Ỹ(X̃) | Ỹ)`.
    pub conditional_entropy: EntropyEstimate,
    /// Per-coordinate Jensen inequalities checked (samples × dim).
    pub jensen_evaluations: u64,
    /// Checks where the per-coordinate Jensen gap came out negative.
    pub jensen_violations: u64,
}

/// Entropy powers `e^{2h/n}` for `X + Y` against `X` and `Y` separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShannonForm {
    pub lhs_power: f64,
    pub rhs_power: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// Standard error of `lhs_power − rhs_power` (delta method on paired draws).
    pub difference_se: f64,
}

impl ShannonForm {
    pub fn difference(&self) -> Estimate {
        Estimate::new(self.lhs_power - self.rhs_power, self.difference_se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpiReport {
    pub dim: usize,
    pub lambda: f64,
    pub n_samples: u64,
    /// `h(√λ·X + √(1−λ)·Y)`.
    pub lhs: EntropyEstimate,
    pub rhs: RhsDecomposition,
    pub total_gap: Estimate,
    /// `lhs − h(√λ·X* + √(1−λ)·Y*)`.
    pub baseline_gap_lhs: Estimate,
    pub conditioning_gap: Estimate,
    pub jensen_gap: Estimate,
    /// `total_gap − conditioning_gap − jensen_gap`; zero in expectation.
    pub reconciliation: Estimate,
    pub conditional_entropy: EntropyEstimate,
    pub jensen_evaluations: u64,
    pub jensen_violations: u64,
    pub shannon: ShannonForm,
}

impl EpiReport {
    /// The gap is statistically indistinguishable from zero.
    pub fn is_equality(&self, k: f64) -> bool {
        self.total_gap.within(0.0, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualityDiagnostics {
    pub affine_residual_phi: f64,
    pub affine_residual_psi: f64,
    /// Largest `|∂Φᵢ/∂xᵢ(X*) − ∂Ψᵢ/∂yᵢ(Y*)|` over coupled draws.
    pub slope_mismatch: f64,
    /// Largest spread of the finite-difference Jacobians of both maps
    /// around a common reference Jacobian.
    pub cross_partial_variation: f64,
}

impl EqualityDiagnostics {
    pub fn max(&self) -> f64 {
        self.affine_residual_phi
            .max(self.affine_residual_psi)
            .max(self.slope_mismatch)
            .max(self.cross_partial_variation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingPoint {
    pub t: f64,
    pub entropy: EntropyEstimate,
}

/// A named pair of distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub x: GaussianMixture,
    pub y: GaussianMixture,
}

impl Scenario {
    pub fn new(name: impl Into<String>, x: GaussianMixture, y: GaussianMixture) -> Result<Self> {
        check_pair(&x, &y)?;
        Ok(Self { name: name.into(), x, y })
    }

    /// Both sides Gaussian with identical covariances.
    pub fn is_equality_case(&self) -> bool {
        self.x.is_gaussian()
            && self.y.is_gaussian()
            && (self.x.covariance() - self.y.covariance()).amax() <= 1e-12
    }
}

/// Stream for cell `(scenario, lambda)` of a grid run under `seed`.
pub fn cell_stream(seed: u64, scenario: usize, lambda: usize) -> RngStream {
    RngStream::new(seed, 0).derive(scenario as u64).derive(lambda as u64)
}

fn uni(parts: &[(f64, f64, f64)]) -> GaussianMixture {
    GaussianMixture::univariate(parts).expect("grid literal")
}

fn mat2(a: f64, b: f64, d: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a, b, b, d])
}

/// The fixed evaluation grid: equality, unequal variances, non-Gaussianity
/// in 1D, and correlated or product mixtures in 2D and 3D.
pub fn default_grid() -> Vec<Scenario> {
    let bimodal = uni(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]);
    let skewed = uni(&[(0.3, -1.0, 0.25), (0.7, 1.5, 0.64)]);
    let corr = GaussianMixture::gaussian(vec![0.0, 0.0], mat2(1.0, 0.5, 1.0)).expect("grid literal");
    let mix2 = GaussianMixture::new(
        2,
        vec![
            (0.4, vec![-1.5, 0.0], mat2(0.6, 0.2, 0.8)),
            (0.6, vec![1.0, 0.5], mat2(0.8, -0.3, 0.6)),
        ],
    )
    .expect("grid literal");
    let prod_x = GaussianMixture::product(&[
        uni(&[(0.5, -1.5, 0.5), (0.5, 1.5, 0.5)]),
        uni(&[(1.0, 0.0, 2.0)]),
        uni(&[(0.7, 0.0, 1.0), (0.3, 3.0, 0.5)]),
    ])
    .expect("grid literal");
    let prod_y = GaussianMixture::product(&[
        uni(&[(1.0, 0.0, 1.0)]),
        uni(&[(0.5, -1.0, 0.3), (0.5, 1.0, 0.3)]),
        uni(&[(0.6, -1.0, 1.0), (0.4, 2.0, 0.5)]),
    ])
    .expect("grid literal");
    let n01 = uni(&[(1.0, 0.0, 1.0)]);
    vec![
        Scenario { name: "iid_gaussian".into(), x: n01.clone(), y: n01.clone() },
        Scenario { name: "unequal_variance".into(), x: n01.clone(), y: uni(&[(1.0, 0.0, 4.0)]) },
        Scenario { name: "bimodal_vs_gaussian".into(), x: bimodal.clone(), y: n01 },
        Scenario { name: "bimodal_pair".into(), x: bimodal, y: skewed },
        Scenario { name: "correlated_2d".into(), x: corr, y: mix2 },
        Scenario { name: "product_mixture_3d".into(), x: prod_x, y: prod_y },
    ]
}

fn check_pair(x: &GaussianMixture, y: &GaussianMixture) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), found: y.dim() });
    }
    Ok(())
}

fn check_epi_args(x: &GaussianMixture, y: &GaussianMixture, lambda: f64, n: usize) -> Result<()> {
    check_pair(x, y)?;
    check_lambda(lambda)?;
    if n < MIN_EPI_SAMPLES {
        return Err(Error::InvalidParameter { name: "n", reason: format!("need at least {MIN_EPI_SAMPLES} samples, got {n}") });
    }
    Ok(())
}

fn maps(x: &GaussianMixture, y: &GaussianMixture) -> (TriangularMap, TriangularMap) {
    (build_knothe(x, RootConfig::default()), build_knothe(y, RootConfig::default()))
}

/// Means of `(−log f_S(S), −log f_X(X), −log f_Y(Y))` over ancestral pairs
/// with `S = a·X + b·Y`.
fn paired_sides(
    x: &GaussianMixture,
    y: &GaussianMixture,
    s: &GaussianMixture,
    (a, b): (f64, f64),
    rng: &RngStream,
    n: usize,
) -> Result<Moments> {
    let dim = x.dim();
    let (wx, wy) = (x.draw_width(), y.draw_width());
    mc::accumulate(n, 3, |range, acc| {
        let mut cursor = rng.cursor(range.start as u64, wx + wy);
        let mut u = [0.0; 2 * MAX_DIM + 2];
        let (mut xs, mut ys, mut ss) = ([0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM]);
        for _ in range {
            cursor.next_uniforms(&mut u[..wx + wy]);
            x.draw_from_uniforms(&u[..wx], &mut xs[..dim])?;
            y.draw_from_uniforms(&u[wx..wx + wy], &mut ys[..dim])?;
            for k in 0..dim {
                ss[k] = a * xs[k] + b * ys[k];
            }
            acc.push(&[-s.log_pdf(&ss[..dim])?, -x.log_pdf(&xs[..dim])?, -y.log_pdf(&ys[..dim])?]);
        }
        Ok(())
    })
}

/// Both sides of the inequality, the gap decomposition and the Shannon form
/// for one `(X, Y, λ)` cell.
///
/// The two sides come from the same ancestral pairs, so the gap is a paired
/// mean: for `X = Y` Gaussian its integrand is `√(λ(1−λ))·⟨X, Y⟩`.
pub fn epi_run(x: &GaussianMixture, y: &GaussianMixture, lambda: f64, rng: &RngStream, n: usize) -> Result<EpiReport> {
    check_epi_args(x, y, lambda, n)?;
    let (a, b) = (lambda.sqrt(), (1.0 - lambda).sqrt());
    let s = GaussianMixture::linear_combine(a, x, b, y)?;
    let m = paired_sides(x, y, &s, (a, b), &rng.derive(STREAM_SIDES), n)?;
    let lhs = EntropyEstimate {
        value: m.mean(0),
        std_error: m.std_error(0),
        n_samples: m.count(),
        method: EntropyMethod::Resubstitution,
    };
    let rhs = RhsDecomposition {
        x_term: Estimate::linear(&m, &[(1, lambda)]),
        y_term: Estimate::linear(&m, &[(2, 1.0 - lambda)]),
        total: Estimate::linear(&m, &[(1, lambda), (2, 1.0 - lambda)]),
    };
    let total_gap = Estimate::linear(&m, &[(0, 1.0), (1, -lambda), (2, -(1.0 - lambda))]);
    let (phi, psi) = maps(x, y);
    let gaps = decompose(&phi, &psi, &s, lambda, &rng.derive(STREAM_COUPLED), n)?;
    let shannon = shannon_form(x, y, &rng.derive(STREAM_SHANNON), n)?;
    Ok(EpiReport {
        dim: x.dim(),
        lambda,
        n_samples: m.count(),
        lhs,
        rhs,
        total_gap,
        baseline_gap_lhs: Estimate::new(lhs.value - standard_gaussian_entropy(x.dim()), lhs.std_error),
        conditioning_gap: gaps.conditioning_gap,
        jensen_gap: gaps.jensen_gap,
        reconciliation: total_gap.minus_independent(&gaps.sum),
        conditional_entropy: gaps.conditional_entropy,
        jensen_evaluations: gaps.jensen_evaluations,
        jensen_violations: gaps.jensen_violations,
        shannon,
    })
}

/// Conditioning and Jensen gaps from one coupled sample set `(X̃ⱼ, Ỹⱼ)`
/// drawn from `rng`.
pub fn gap_decomposition(
    x: &GaussianMixture,
    y: &GaussianMixture,
    lambda: f64,
    rng: &RngStream,
    n: usize,
) -> Result<GapDecomposition> {
    check_epi_args(x, y, lambda, n)?;
    let s = GaussianMixture::linear_combine(lambda.sqrt(), x, (1.0 - lambda).sqrt(), y)?;
    let (phi, psi) = maps(x, y);
    decompose(&phi, &psi, &s, lambda, rng, n)
}

/// Per draw: `K = −log f_S(Θ) − h*`, `L = log det Θ′`, `J = Σᵢ jensenᵢ`.
/// `Θ_Ỹ(X̃)` has the law of `S`, so `E K = h(S) − h*` and the conditioning
/// gap is `E(K − L)`.
fn decompose(
    phi: &TriangularMap,
    psi: &TriangularMap,
    s: &GaussianMixture,
    lambda: f64,
    rng: &RngStream,
    n: usize,
) -> Result<GapDecomposition> {
    let dim = phi.dim();
    let h_star = standard_gaussian_entropy(dim);
    let parts = mc::map_chunks(n, |range| {
        let mut acc = Moments::new(3);
        let mut violations = 0u64;
        let mut cursor = rng.cursor(range.start as u64, 2 * dim);
        let mut w = [0.0; 2 * MAX_DIM];
        for _ in range {
            cursor.next_normals(&mut w[..2 * dim])?;
            let theta = ThetaMap::new(phi, psi, lambda, w[dim..2 * dim].to_vec())?;
            let p = theta.evaluate(&w[..dim])?;
            violations += p.jensen_gaps.iter().filter(|g| !(**g >= 0.0)).count() as u64;
            acc.push(&[
                -s.log_pdf(&p.value)? - h_star,
                p.log_theta_partials.iter().sum(),
                p.jensen_gaps.iter().sum(),
            ]);
        }
        Ok((acc, violations))
    })?;
    let mut m = Moments::new(3);
    let mut violations = 0;
    for (part, v) in &parts {
        m.merge(part);
        violations += v;
    }
    Ok(GapDecomposition {
        conditioning_gap: Estimate::linear(&m, &[(0, 1.0), (1, -1.0)]),
        jensen_gap: Estimate::linear(&m, &[(2, 1.0)]),
        sum: Estimate::linear(&m, &[(0, 1.0), (1, -1.0), (2, 1.0)]),
        conditional_entropy: EntropyEstimate {
            value: h_star + m.mean(1),
            std_error: m.std_error(1),
            n_samples: m.count(),
            method: EntropyMethod::ChangeOfVariables,
        },
        jensen_evaluations: m.count() * dim as u64,
        jensen_violations: violations,
    })
}

/// `e^{(2/n)h(X+Y)}` against `e^{(2/n)h(X)} + e^{(2/n)h(Y)}` from paired
/// resubstitution, errors by the delta method on the joint covariance of the
/// three entropy means.
pub fn shannon_form(x: &GaussianMixture, y: &GaussianMixture, rng: &RngStream, n: usize) -> Result<ShannonForm> {
    check_pair(x, y)?;
    if n < crate::entropy::MIN_SAMPLES {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("need at least {} samples, got {n}", crate::entropy::MIN_SAMPLES),
        });
    }
    let s = GaussianMixture::linear_combine(1.0, x, 1.0, y)?;
    let m = paired_sides(x, y, &s, (1.0, 1.0), rng, n)?;
    let c = 2.0 / x.dim() as f64;
    let p: Vec<f64> = (0..3).map(|i| (c * m.mean(i)).exp()).collect();
    // gradients of lhs, rhs and lhs − rhs with respect to the three means
    let grad = |g: [f64; 3]| {
        let mut var = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                var += g[i] * g[j] * m.mean_covariance(i, j);
            }
        }
        var.max(0.0).sqrt()
    };
    Ok(ShannonForm {
        lhs_power: p[0],
        rhs_power: p[1] + p[2],
        lhs_se: grad([c * p[0], 0.0, 0.0]),
        rhs_se: grad([0.0, c * p[1], c * p[2]]),
        difference_se: grad([c * p[0], -c * p[1], -c * p[2]]),
    })
}

/// Affine-fit residuals of both maps, slope mismatch over `n` coupled draws
/// and finite-difference Jacobian spread over the first 200 of them.
pub fn equality_diagnostics(
    x: &GaussianMixture,
    y: &GaussianMixture,
    lambda: f64,
    rng: &RngStream,
    n: usize,
) -> Result<EqualityDiagnostics> {
    check_epi_args(x, y, lambda, n)?;
    let (phi, psi) = maps(x, y);
    let dim = x.dim();

    let affine_residual = |map: &TriangularMap, stream: &RngStream| -> Result<f64> {
        let inputs = standard_normal_draws(dim, stream, n)?;
        let outputs = mc::map_chunks(n, |range| inputs[range].iter().map(|z| map.eval(z)).collect::<Result<Vec<_>>>())?;
        let outputs: Vec<Vec<f64>> = outputs.into_iter().flatten().collect();
        Ok(affine_fit(&inputs, &outputs)?.rms_residual)
    };
    let affine_residual_phi = affine_residual(&phi, &rng.derive(STREAM_AFFINE_PHI))?;
    let affine_residual_psi = affine_residual(&psi, &rng.derive(STREAM_AFFINE_PSI))?;

    let coupled = rng.derive(STREAM_SLOPES);
    let pairs = mc::map_chunks(n, |range| {
        let mut cursor = coupled.cursor(range.start as u64, 2 * dim);
        let mut w = [0.0; 2 * MAX_DIM];
        let mut worst: f64 = 0.0;
        let mut kept = Vec::new();
        for j in range {
            cursor.next_normals(&mut w[..2 * dim])?;
            let (xs, ys) = unrotate_pair(&w[..dim], &w[dim..2 * dim], lambda)?;
            let (_, lphi) = phi.eval_with_log_partials(&xs)?;
            let (_, lpsi) = psi.eval_with_log_partials(&ys)?;
            for (p, q) in lphi.iter().zip(&lpsi) {
                worst = worst.max((p.exp() - q.exp()).abs());
            }
            if j < MAX_FD_POINTS {
                kept.push((xs, ys));
            }
        }
        Ok((worst, kept))
    })?;
    let slope_mismatch = pairs.iter().map(|(w, _)| *w).fold(0.0, f64::max);

    let mut reference: Option<DMatrix<f64>> = None;
    let mut cross_partial_variation: f64 = 0.0;
    for (xs, ys) in pairs.iter().flat_map(|(_, kept)| kept) {
        for jac in [jacobian_fd(|p| phi.eval(p), xs, FD_STEP)?, jacobian_fd(|p| psi.eval(p), ys, FD_STEP)?] {
            let r = reference.get_or_insert_with(|| jac.clone());
            cross_partial_variation = cross_partial_variation.max((&jac - &*r).amax());
        }
    }
    Ok(EqualityDiagnostics { affine_residual_phi, affine_residual_psi, slope_mismatch, cross_partial_variation })
}

/// `h(X + √t·Z)` for each `t`, largest first. In 1D the values come from the
/// quadrature oracle; otherwise from resubstitution with the same draws at
/// every `t`.
pub fn smoothing_curve(x: &GaussianMixture, t_values: &[f64], rng: &RngStream, n: usize) -> Result<Vec<SmoothingPoint>> {
    if t_values.is_empty() {
        return Err(Error::InvalidParameter { name: "t_values", reason: "must not be empty".into() });
    }
    if let Some(t) = t_values.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter { name: "t_values", reason: format!("must be positive and finite, got {t}") });
    }
    if t_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter { name: "t_values", reason: "must be strictly decreasing".into() });
    }
    t_values
        .iter()
        .map(|&t| {
            let d = x.smooth(t)?;
            let entropy = if x.dim() == 1 {
                entropy_quadrature_1d(&d, &QuadratureConfig::default())?
            } else {
                entropy_resub(&d, rng, n)?
            };
            Ok(SmoothingPoint { t, entropy })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const N: usize = 20_000;
    const H1: f64 = 1.4189385332046727;

    fn n01() -> GaussianMixture {
        GaussianMixture::standard_normal(1).unwrap()
    }

    fn n04() -> GaussianMixture {
        GaussianMixture::univariate(&[(1.0, 0.0, 4.0)]).unwrap()
    }

    fn bimodal() -> GaussianMixture {
        GaussianMixture::univariate(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]).unwrap()
    }

    #[test]
    fn rejects_bad_arguments() {
        let rng = RngStream::new(1, 1);
        assert!(epi_run(&n01(), &n01(), 0.0, &rng, N).is_err());
        assert!(epi_run(&n01(), &n01(), 1.0, &rng, N).is_err());
        assert!(epi_run(&n01(), &n01(), 0.5, &rng, 9_999).is_err());
        let two = GaussianMixture::standard_normal(2).unwrap();
        assert!(matches!(epi_run(&n01(), &two, 0.5, &rng, N), Err(Error::DimensionMismatch { .. })));
        assert!(gap_decomposition(&n01(), &two, 0.5, &rng, N).is_err());
        assert!(equality_diagnostics(&n01(), &n01(), 0.5, &rng, 100).is_err());
        assert!(shannon_form(&n01(), &two, &rng, N).is_err());
        assert!(Scenario::new("bad", n01(), two).is_err());
    }

    #[test]
    fn iid_gaussian_cell_is_an_equality() {
        let r = epi_run(&n01(), &n01(), 0.5, &RngStream::new(3, 0), N).unwrap();
        assert!(r.is_equality(3.0));
        // paired integrand √(λ(1−λ))·x·y has variance 1/4
        assert!((r.total_gap.std_error * (N as f64).sqrt() - 0.5).abs() < 0.02);
        assert_eq!(r.jensen_gap.value, 0.0);
        assert_eq!(r.jensen_gap.std_error, 0.0);
        assert_eq!(r.jensen_violations, 0);
        assert_eq!(r.jensen_evaluations, N as u64);
        assert_abs_diff_eq!(r.conditional_entropy.value, H1, epsilon = 1e-12);
        assert!(r.reconciliation.within(0.0, 3.0));
        assert!(r.lhs.agrees_with(&EntropyEstimate::exact(H1, EntropyMethod::ClosedForm), 3.0));
        assert!(r.baseline_gap_lhs.within(0.0, 3.0));
    }

    #[test]
    fn unequal_variance_closed_forms() {
        let r = epi_run(&n01(), &n04(), 0.5, &RngStream::new(4, 0), N).unwrap();
        assert!(r.total_gap.within(0.5 * 1.25f64.ln(), 3.0));
        // constant slopes 1 and 2: the Jensen integrand is deterministic
        assert_abs_diff_eq!(r.jensen_gap.value, 1.5f64.ln() - 0.5 * 2f64.ln(), epsilon = 1e-14);
        assert!(r.jensen_gap.std_error < 1e-15);
        assert!(r.conditioning_gap.within(0.052680257828913151, 3.0));
        assert!(r.reconciliation.within(0.0, 3.0));
        assert!(r.total_gap.exceeds(3.0));
    }

    #[test]
    fn bimodal_cell_matches_quadrature() {
        let r = epi_run(&bimodal(), &n01(), 0.5, &RngStream::new(5, 0), N).unwrap();
        assert!(r.total_gap.within(0.18371203919841145, 3.0), "{:?}", r.total_gap);
        assert!(r.conditioning_gap.exceeds(3.0));
        assert!(r.jensen_gap.exceeds(3.0));
        assert!(r.reconciliation.within(0.0, 3.0));
        assert_eq!(r.jensen_violations, 0);
    }

    #[test]
    fn decomposition_matches_conditional_entropy_route() {
        let rng = RngStream::new(6, 2);
        let (phi, psi) = maps(&bimodal(), &n04());
        let g = gap_decomposition(&bimodal(), &n04(), 0.3, &rng, N).unwrap();
        let c = crate::entropy::conditional_entropy_theta(&phi, &psi, 0.3, &rng, N).unwrap();
        assert_eq!(g.conditional_entropy, c);
    }

    #[test]
    fn rhs_terms_add_up() {
        let r = epi_run(&bimodal(), &n04(), 0.25, &RngStream::new(7, 0), N).unwrap();
        assert_abs_diff_eq!(r.rhs.total.value, r.rhs.x_term.value + r.rhs.y_term.value, epsilon = 1e-12);
        assert_abs_diff_eq!(r.total_gap.value, r.lhs.value - r.rhs.total.value, epsilon = 1e-12);
        assert!(r.rhs.total.std_error <= r.rhs.x_term.std_error + r.rhs.y_term.std_error + 1e-15);
    }

    #[test]
    fn shannon_form_examples() {
        let rng = RngStream::new(8, 0);
        let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
        let s = shannon_form(&n01(), &n01(), &rng, N).unwrap();
        assert!((s.lhs_power - two_pi_e * 2.0).abs() <= 3.0 * s.lhs_se);
        assert!((s.rhs_power - two_pi_e * 2.0).abs() <= 3.0 * s.rhs_se);
        assert!(s.difference().within(0.0, 3.0));
        let s = shannon_form(&n01(), &n04(), &rng, N).unwrap();
        assert!(s.difference().within(0.0, 3.0));
        assert!((s.lhs_power - two_pi_e * 5.0).abs() <= 3.0 * s.lhs_se);
        let s = shannon_form(&bimodal(), &n01(), &rng, N).unwrap();
        assert!((s.lhs_power - 92.867014585355815).abs() <= 3.0 * s.lhs_se);
        assert!((s.rhs_power - 77.620264569108497).abs() <= 3.0 * s.rhs_se);
        assert!(s.difference().exceeds(3.0));
    }

    #[test]
    fn equality_diagnostics_examples() {
        let rng = RngStream::new(9, 0);
        let d = equality_diagnostics(&n01(), &n01(), 0.5, &rng, 10_000).unwrap();
        assert!(d.max() <= 1e-9, "{d:?}");
        let g = GaussianMixture::univariate(&[(1.0, 3.0, 4.0)]).unwrap();
        let d = equality_diagnostics(&g, &g, 0.3, &rng, 10_000).unwrap();
        assert!(d.affine_residual_phi <= 1e-6 && d.slope_mismatch <= 1e-6, "{d:?}");
        let d = equality_diagnostics(&bimodal(), &n01(), 0.5, &rng, 10_000).unwrap();
        assert!(d.affine_residual_phi > 0.01 && d.affine_residual_psi <= 1e-6, "{d:?}");
        assert!(d.slope_mismatch > 0.01);
    }

    #[test]
    fn smoothing_examples() {
        let rng = RngStream::new(10, 0);
        let c = smoothing_curve(&n01(), &[1.0], &rng, 1000).unwrap();
        assert_abs_diff_eq!(c[0].entropy.value, 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 2.0).ln(), epsilon = 1e-8);
        let c = smoothing_curve(&n01(), &[1e-6], &rng, 1000).unwrap();
        assert_abs_diff_eq!(c[0].entropy.value, H1, epsilon = 1e-6);
        let narrow = GaussianMixture::univariate(&[(0.5, -2.0, 0.25), (0.5, 2.0, 0.25)]).unwrap();
        let c = smoothing_curve(&narrow, &[1.0, 0.1, 0.01], &rng, 1000).unwrap();
        for (p, want) in c.iter().zip([2.128160506903556, 1.5861268128389968, 1.4384196481547726]) {
            assert_abs_diff_eq!(p.entropy.value, want, epsilon = 1e-8);
        }
        assert!(smoothing_curve(&narrow, &[0.1, 1.0], &rng, 1000).is_err());
        assert!(smoothing_curve(&narrow, &[1.0, 0.0], &rng, 1000).is_err());
        assert!(smoothing_curve(&narrow, &[], &rng, 1000).is_err());
        let two = GaussianMixture::standard_normal(2).unwrap();
        let c = smoothing_curve(&two, &[1.0, 0.1], &rng, 10_000).unwrap();
        assert!(c[0].entropy.value > c[1].entropy.value);
    }

    #[test]
    fn grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 6);
        assert_eq!(g.iter().map(|s| s.x.dim()).collect::<Vec<_>>(), vec![1, 1, 1, 1, 2, 3]);
        assert!(g[0].is_equality_case());
        assert!(g[1..].iter().all(|s| !s.is_equality_case()));
        for s in &g {
            assert_eq!(s.x.dim(), s.y.dim());
        }
        assert_ne!(cell_stream(1, 0, 1), cell_stream(1, 1, 0));
    }
}
