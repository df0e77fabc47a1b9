//! One function per subcommand. Each returns the report and any extra files;
//! nothing is written until every computation has succeeded.

use std::path::PathBuf;

use knothe_epi::densities::GaussianMixture;
use knothe_epi::entropy::{
    entropy_cov, entropy_quadrature_1d, entropy_resub, entropy_via_divergence, gaussian_entropy, EntropyEstimate,
    EntropyMethod,
};
use knothe_epi::epi::{cell_stream, epi_run, smoothing_curve, EpiReport, SmoothingPoint};
use knothe_epi::numerics::{QuadratureConfig, RootConfig};
use knothe_epi::rng::RngStream;
use knothe_epi::stats::{affine_fit, ks_critical_one_sample, ks_critical_two_sample, ks_one_sample, ks_two_sample};
use knothe_epi::transport::{build_knothe, sample_mitsm, sample_pushforward, standard_normal_draws};
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::report::{fmt17, to_json, RunReport, StreamRecord};

const EPI_CSV_HEADER: [&str; 14] = [
    "scenario_id", "lambda", "lhs", "lhs_se", "rhs", "rhs_se", "total_gap", "gap_se", "cond_gap", "cond_se",
    "jensen_gap", "jensen_se", "shannon_lhs", "shannon_rhs",
];
const CHECK_POINTS: usize = 100;
const AFFINE_DRAWS: usize = 10_000;
const FD_STEP: f64 = 1e-4;

pub struct Output {
    pub report: Vec<u8>,
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub passed: bool,
}

pub struct Context<'a> {
    pub configs: &'a [ScenarioConfig],
    pub started: Option<std::time::Instant>,
}

impl Context<'_> {
    fn finish<R: Serialize>(&self, command: &'static str, rng: Vec<StreamRecord>, results: R, passed: bool) -> Vec<u8> {
        let timestamp_unix = self.started.map(|_| {
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
        });
        to_json(&RunReport {
            tool: "knothe-epi",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: self.configs,
            rng,
            results,
            passed,
            wall_clock_seconds: self.started.map(|s| s.elapsed().as_secs_f64()),
            timestamp_unix,
        })
    }
}

fn base_stream(c: &ScenarioConfig, index: usize) -> RngStream {
    RngStream::new(c.seed, index as u64)
}

#[derive(Serialize)]
struct EntropyResult {
    scenario: String,
    dim: usize,
    estimates: Vec<EntropyEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<EntropyEstimate>,
    /// Every pair of estimates (and the oracle) within 3 combined σ plus the quadrature tolerance.
    agree: bool,
}

pub fn entropy(ctx: &Context) -> knothe_epi::Result<Output> {
    let mut results = Vec::new();
    let mut streams = Vec::new();
    for (i, c) in ctx.configs.iter().enumerate() {
        let base = base_stream(c, i);
        let mut estimates = Vec::new();
        for (k, m) in c.estimators.iter().enumerate() {
            let rng = base.derive(k as u64);
            let e = match m {
                EntropyMethod::ClosedForm => gaussian_entropy(c.x.components()[0].cov())?,
                EntropyMethod::Resubstitution => entropy_resub(&c.x, &rng, c.n_samples)?,
                EntropyMethod::ChangeOfVariables => {
                    entropy_cov(&build_knothe(&c.x, RootConfig::default()), &rng, c.n_samples)?
                }
                EntropyMethod::DivergenceRoute => entropy_via_divergence(&c.x, &c.x.covariance(), &rng, c.n_samples)?,
                EntropyMethod::QuadratureOracle => entropy_quadrature_1d(&c.x, &QuadratureConfig::default())?,
            };
            if !m.is_exact() {
                streams.push(StreamRecord::new(&c.name, format!("{m:?}"), &rng));
            }
            estimates.push(e);
        }
        let oracle = if c.x.dim() == 1 { Some(entropy_quadrature_1d(&c.x, &QuadratureConfig::default())?) } else { None };
        let mut all: Vec<&EntropyEstimate> = estimates.iter().collect();
        all.extend(oracle.iter());
        // exact methods carry σ = 0; the quadrature tolerance bounds their disagreement
        let slack = QuadratureConfig::default().abs_tol;
        let agree = all.iter().enumerate().all(|(a, e)| {
            all[a + 1..].iter().all(|f| (e.value - f.value).abs() <= 3.0 * e.std_error.hypot(f.std_error) + slack)
        });
        results.push(EntropyResult { scenario: c.name.clone(), dim: c.x.dim(), estimates, oracle, agree });
    }
    let passed = results.iter().all(|r| r.agree);
    Ok(Output { report: ctx.finish("entropy", streams, results, passed), files: Vec::new(), passed })
}

#[derive(Serialize)]
struct Diagnostic {
    name: String,
    statistic: f64,
    /// Upper bound on the statistic, or the lower bound for `min_diagonal`.
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    /// Absent for informational statistics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pass: Option<bool>,
}

impl Diagnostic {
    fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self { name: name.into(), statistic, threshold: Some(threshold), pass: Some(statistic <= threshold) }
    }
}

#[derive(Serialize)]
struct MapCheckResult {
    scenario: String,
    side: &'static str,
    dim: usize,
    diagnostics: Vec<Diagnostic>,
}

fn check_map(d: &GaussianMixture, rng: &RngStream, n: usize) -> knothe_epi::Result<Vec<Diagnostic>> {
    let map = build_knothe(d, RootConfig::default());
    let dim = d.dim();
    let mut out = Vec::new();

    let points = standard_normal_draws(dim, &rng.derive(1), CHECK_POINTS)?;
    let mut upper: f64 = 0.0;
    let mut min_diag = f64::INFINITY;
    let mut chol_err: f64 = 0.0;
    let chol = d.is_gaussian().then(|| d.components()[0].cholesky());
    for x in &points {
        let j = map.jacobian_fd(x, FD_STEP)?;
        for r in 0..dim {
            for c in r + 1..dim {
                upper = upper.max(j[(r, c)].abs());
            }
        }
        min_diag = map.diag_partials(x)?.into_iter().fold(min_diag, f64::min);
        if let Some(l) = &chol {
            chol_err = chol_err.max((&j - l).amax());
        }
    }
    out.push(Diagnostic::at_most("triangularity", upper, 1e-6));
    out.push(Diagnostic { name: "min_diagonal".into(), statistic: min_diag, threshold: Some(0.0), pass: Some(min_diag > 0.0) });
    if chol.is_some() {
        out.push(Diagnostic::at_most("jacobian_vs_cholesky", chol_err, 1e-4));
    }

    let pushed = sample_pushforward(&map, &rng.derive(2), n)?;
    let direct = sample_mitsm(d, &rng.derive(3), n)?;
    for i in 0..dim {
        let marginal = d.marginal_coordinate(i)?;
        let mut a: Vec<f64> = pushed.iter().map(|p| p[i]).collect();
        let mut b: Vec<f64> = direct.iter().map(|p| p[i]).collect();
        let ks1 = ks_one_sample(&mut a, |v| marginal.cdf(v));
        out.push(Diagnostic::at_most(format!("pushforward_ks[{i}]"), ks1, ks_critical_one_sample(n)));
        let ks2 = ks_two_sample(&mut a, &mut b);
        out.push(Diagnostic::at_most(format!("mitsm_ks[{i}]"), ks2, ks_critical_two_sample(n, n)));
    }

    let m = n.min(AFFINE_DRAWS);
    let z = standard_normal_draws(dim, &rng.derive(4), m)?;
    let y = z.iter().map(|p| map.eval(p)).collect::<knothe_epi::Result<Vec<_>>>()?;
    let residual = affine_fit(&z, &y)?.rms_residual;
    out.push(if d.is_gaussian() {
        Diagnostic::at_most("affine_residual", residual, 1e-6)
    } else {
        Diagnostic { name: "affine_residual".into(), statistic: residual, threshold: None, pass: None }
    });
    Ok(out)
}

pub fn map_check(ctx: &Context) -> knothe_epi::Result<Output> {
    let mut results = Vec::new();
    let mut streams = Vec::new();
    for (i, c) in ctx.configs.iter().enumerate() {
        let base = base_stream(c, i);
        let sides = std::iter::once(("x", &c.x)).chain(c.y.as_ref().map(|y| ("y", y)));
        for (k, (side, d)) in sides.enumerate() {
            let rng = base.derive(k as u64);
            streams.push(StreamRecord::new(&c.name, side, &rng));
            results.push(MapCheckResult { scenario: c.name.clone(), side, dim: d.dim(), diagnostics: check_map(d, &rng, c.n_samples)? });
        }
    }
    let passed = results.iter().flat_map(|r| &r.diagnostics).all(|d| d.pass != Some(false));
    Ok(Output { report: ctx.finish("map-check", streams, results, passed), files: Vec::new(), passed })
}

#[derive(Serialize)]
struct EpiCell {
    scenario: String,
    lambda: f64,
    /// `equality` when |total_gap| ≤ 3σ, `strict` when above, `violation` when below −3σ.
    status: &'static str,
    /// Reconciliation within 3σ, no Jensen violations, gap not below −3σ.
    checks_pass: bool,
    report: EpiReport,
}

pub fn epi(ctx: &Context, csv_path: PathBuf) -> knothe_epi::Result<Output> {
    let mut cells = Vec::new();
    let mut streams = Vec::new();
    for (i, c) in ctx.configs.iter().enumerate() {
        let y = c.y.as_ref().expect("validated");
        for (j, &lambda) in c.lambdas.iter().enumerate() {
            let rng = cell_stream(c.seed, i, j);
            streams.push(StreamRecord::new(&c.name, format!("lambda={}", fmt17(lambda)), &rng));
            let report = epi_run(&c.x, y, lambda, &rng, c.n_samples)?;
            let status = if report.is_equality(3.0) {
                "equality"
            } else if report.total_gap.value > 0.0 {
                "strict"
            } else {
                "violation"
            };
            let checks_pass =
                status != "violation" && report.reconciliation.within(0.0, 3.0) && report.jensen_violations == 0;
            cells.push(EpiCell { scenario: c.name.clone(), lambda, status, checks_pass, report });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EPI_CSV_HEADER).expect("in-memory write");
    for c in &cells {
        let r = &c.report;
        let nums = [
            r.lambda,
            r.lhs.value,
            r.lhs.std_error,
            r.rhs.total.value,
            r.rhs.total.std_error,
            r.total_gap.value,
            r.total_gap.std_error,
            r.conditioning_gap.value,
            r.conditioning_gap.std_error,
            r.jensen_gap.value,
            r.jensen_gap.std_error,
            r.shannon.lhs_power,
            r.shannon.rhs_power,
        ];
        let mut row = vec![c.scenario.clone()];
        row.extend(nums.iter().map(|v| fmt17(*v)));
        w.write_record(&row).expect("in-memory write");
    }
    let csv = w.into_inner().expect("in-memory write");
    let passed = cells.iter().all(|c| c.checks_pass);
    Ok(Output { report: ctx.finish("epi", streams, cells, passed), files: vec![(csv_path, csv)], passed })
}

#[derive(Serialize)]
struct SmoothResult {
    scenario: String,
    points: Vec<SmoothingPoint>,
    /// `h(X)` itself: the quadrature oracle in 1D, resubstitution otherwise.
    limit: EntropyEstimate,
    /// Entropy strictly decreases along the (decreasing) `t` list.
    monotone: bool,
}

pub fn smooth(ctx: &Context) -> knothe_epi::Result<Output> {
    let mut results = Vec::new();
    let mut streams = Vec::new();
    for (i, c) in ctx.configs.iter().enumerate() {
        let rng = base_stream(c, i);
        if c.x.dim() > 1 {
            streams.push(StreamRecord::new(&c.name, "smoothing", &rng));
        }
        let points = smoothing_curve(&c.x, c.t_values.as_deref().expect("validated"), &rng, c.n_samples)?;
        let limit = if c.x.dim() == 1 {
            entropy_quadrature_1d(&c.x, &QuadratureConfig::default())?
        } else {
            entropy_resub(&c.x, &rng, c.n_samples)?
        };
        let monotone = points.windows(2).all(|w| w[0].entropy.value > w[1].entropy.value);
        results.push(SmoothResult { scenario: c.name.clone(), points, limit, monotone });
    }
    let passed = results.iter().all(|r| r.monotone);
    Ok(Output { report: ctx.finish("smooth", streams, results, passed), files: Vec::new(), passed })
}

#[derive(Serialize)]
struct SampleResult {
    scenario: String,
    rows: usize,
    dim: usize,
    path: String,
}

pub fn sample(ctx: &Context, csv_path: PathBuf) -> knothe_epi::Result<Output> {
    let c = &ctx.configs[0];
    let rng = base_stream(c, 0);
    let draws = sample_mitsm(&c.x, &rng, c.n_samples)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..c.x.dim()).map(|k| format!("x{k}"))).expect("in-memory write");
    for d in &draws {
        w.write_record(d.iter().map(|v| fmt17(*v))).expect("in-memory write");
    }
    let csv = w.into_inner().expect("in-memory write");
    let result = SampleResult { scenario: c.name.clone(), rows: draws.len(), dim: c.x.dim(), path: csv_path.display().to_string() };
    let streams = vec![StreamRecord::new(&c.name, "mitsm", &rng)];
    Ok(Output { report: ctx.finish("sample", streams, result, true), files: vec![(csv_path, csv)], passed: true })
}
