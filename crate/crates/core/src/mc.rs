//! Seeded Monte-Carlo harness: end-to-end trials, cone-condition frequency,
//! order-statistics checks, rate fitting, and the paired Lasso vs Group
//! Lasso comparison.
//!
//! Every trial derives its seed from `(master_seed, shape_index,
//! trial_index)`, so results are bit-identical for any thread count and both
//! estimators see the same `(X, y)` on grouped shapes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_assumptions, generate_design, generate_ground_truth, synthesize_response,
    GroupStructure, NoiseModel, Normalization, RegressionProblem,
};
use crate::seeds;
use crate::solver::{fit_group_lasso, fit_lasso, SolverConfig};
use crate::theory::{
    bound_rhs, cone_membership, lambda_group, lambda_lasso, top_k_support, top_s_groups,
    BoundMode, ConeSpec, TailMode, TheoryParams,
};

/// One problem shape of the experiment grid. Grouped shapes use contiguous
/// equal-size groups covering all of {0..p-1}; `m* = s* * group_size` then
/// holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub p: usize,
    pub k_star: usize,
    pub group_size: Option<usize>,
    pub s_star: Option<usize>,
}

impl Shape {
    pub fn ungrouped(n: usize, p: usize, k_star: usize) -> Self {
        Shape {
            n,
            p,
            k_star,
            group_size: None,
            s_star: None,
        }
    }

    pub fn grouped(n: usize, p: usize, k_star: usize, group_size: usize, s_star: usize) -> Self {
        Shape {
            n,
            p,
            k_star,
            group_size: Some(group_size),
            s_star: Some(s_star),
        }
    }

    pub fn groups(&self) -> Result<Option<GroupStructure>> {
        match self.group_size {
            Some(size) => Ok(Some(GroupStructure::equal_sized(self.p, size)?)),
            None => Ok(None),
        }
    }

    pub fn label(&self) -> String {
        match (self.group_size, self.s_star) {
            (Some(size), Some(s)) => format!(
                "n={} p={} k={} gsize={} s={}",
                self.n, self.p, self.k_star, size, s
            ),
            _ => format!("n={} p={} k={}", self.n, self.p, self.k_star),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_star == 0 || self.k_star > self.p {
            return Err(Error::InvalidParameter(format!(
                "shape {}: need 1 <= k* <= p",
                self.label()
            )));
        }
        if let Some(size) = self.group_size {
            let s = self.s_star.ok_or_else(|| {
                Error::InvalidParameter(format!("shape {}: grouped shape needs s*", self.label()))
            })?;
            if size == 0 || self.p % size != 0 {
                return Err(Error::InvalidParameter(format!(
                    "shape {}: group size must divide p",
                    self.label()
                )));
            }
            let g = self.p / size;
            if s == 0 || s > g {
                return Err(Error::InvalidParameter(format!(
                    "shape {}: need 1 <= s* <= G={g}",
                    self.label()
                )));
            }
            if self.k_star < s || self.k_star > s * size {
                return Err(Error::InvalidParameter(format!(
                    "shape {}: k* must fit the s* chosen groups",
                    self.label()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    Lasso,
    Group,
    Both,
}

impl EstimatorKind {
    fn singles(self) -> &'static [Estimator] {
        match self {
            EstimatorKind::Lasso => &[Estimator::Lasso],
            EstimatorKind::Group => &[Estimator::Group],
            EstimatorKind::Both => &[Estimator::Lasso, Estimator::Group],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Lasso,
    Group,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Lasso => "lasso",
            Estimator::Group => "group",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub grid: Vec<Shape>,
    pub estimator: EstimatorKind,
    pub params: TheoryParams,
    pub replications: usize,
    pub master_seed: u64,
    pub noise: NoiseModel,
    pub solver: SolverConfig,
    /// Magnitude of the ground-truth nonzeros.
    pub amplitude: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Experiment("empty shape grid".into()));
        }
        if self.replications == 0 {
            return Err(Error::Experiment("replications must be >= 1".into()));
        }
        self.params.validate()?;
        self.solver.validate()?;
        for shape in &self.grid {
            shape.validate()?;
            if matches!(self.estimator, EstimatorKind::Group | EstimatorKind::Both)
                && shape.group_size.is_none()
            {
                return Err(Error::Experiment(format!(
                    "shape {} has no groups but the group estimator is enabled",
                    shape.label()
                )));
            }
        }
        Ok(())
    }
}

/// One solved trial. Wall time is measured but never serialized: output
/// files must be byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub shape: String,
    pub shape_index: usize,
    pub trial_index: usize,
    pub estimator: String,
    pub seed: u64,
    pub lambda_used: f64,
    pub l2_error: f64,
    pub cone_member: bool,
    pub cone_lhs: f64,
    pub cone_rhs: f64,
    pub cone_slack: f64,
    pub converged: bool,
    pub solver_iterations: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeAggregate {
    pub shape: String,
    pub shape_index: usize,
    pub estimator: String,
    pub trials: usize,
    pub excluded_nonconverged: usize,
    pub lambda: f64,
    pub predictor: f64,
    pub mean_l2: f64,
    pub median_l2: f64,
    pub std_l2: f64,
    pub mean_sq_l2: f64,
    pub cone_member_freq: f64,
    /// `mean_sq_l2 / bound_rhs(expectation, kappa=1)^2`; its spread across
    /// shapes shows how stable the hidden constant is.
    pub bound_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<ShapeAggregate>,
    /// Largest `bound_ratio` across shapes (empirical hidden constant,
    /// measured against kappa = 1).
    pub empirical_bound_constant: f64,
}

fn build_problem(
    spec: &ExperimentSpec,
    shape: &Shape,
    trial_seed: u64,
) -> Result<(RegressionProblem, Option<GroupStructure>)> {
    let groups = shape.groups()?;
    let normalization = match groups {
        Some(_) => Normalization::UnitGroupSpectral,
        None => Normalization::UnitColumns,
    };
    let x = generate_design(shape.n, shape.p, trial_seed, normalization, groups.as_ref())?;
    debug_assert!({
        let report = check_assumptions(&x, groups.as_ref());
        report.column_ok || groups.is_some()
    });
    let truth = generate_ground_truth(
        shape.p,
        shape.k_star,
        spec.amplitude,
        trial_seed,
        groups.as_ref().map(|g| (g, shape.s_star.unwrap())),
    )?;
    let problem = synthesize_response(&x, &truth, spec.noise, trial_seed)?;
    Ok((problem, groups))
}

/// Run one trial of one estimator at one grid shape.
pub fn run_trial(
    spec: &ExperimentSpec,
    shape_index: usize,
    trial_index: usize,
    estimator: Estimator,
) -> Result<TrialRecord> {
    let shape = &spec.grid[shape_index];
    let trial_seed = seeds::derive(spec.master_seed, &[shape_index as u64, trial_index as u64]);
    let started = std::time::Instant::now();
    let (problem, groups) = build_problem(spec, shape, trial_seed)?;
    let params = &spec.params;

    let (fit, cone_check) = match estimator {
        Estimator::Lasso => {
            let lambda = lambda_lasso(params, shape.n, shape.p, shape.k_star)?;
            let fit = fit_lasso(&problem, lambda, &spec.solver)?;
            let h = &fit.beta_hat - &problem.truth.beta_star;
            let support = top_k_support(h.view(), shape.k_star);
            let (gamma1, gamma2) = params.lasso_cone_widths(shape.k_star);
            let check = cone_membership(
                h.view(),
                &ConeSpec::Lasso {
                    support,
                    gamma1,
                    gamma2,
                },
            );
            (fit, check)
        }
        Estimator::Group => {
            let groups = groups.as_ref().ok_or_else(|| {
                Error::Experiment(format!("shape {} has no groups", shape.label()))
            })?;
            let cover = problem
                .truth
                .group_cover
                .as_ref()
                .expect("grouped truth carries a cover");
            let lambda = lambda_group(params, shape.n, groups.count(), cover.s_star, cover.m_star)?;
            let fit = fit_group_lasso(&problem, groups, lambda, &spec.solver)?;
            let h = &fit.beta_hat - &problem.truth.beta_star;
            let j_set = top_s_groups(h.view(), groups, cover.s_star);
            let (eps1, eps2) = params.group_cone_widths(cover.s_star);
            let check = cone_membership(
                h.view(),
                &ConeSpec::Group {
                    groups,
                    j_set,
                    eps1,
                    eps2,
                },
            );
            (fit, check)
        }
    };

    let h = &fit.beta_hat - &problem.truth.beta_star;
    Ok(TrialRecord {
        shape: shape.label(),
        shape_index,
        trial_index,
        estimator: estimator.as_str().to_string(),
        seed: trial_seed,
        lambda_used: fit.lambda_used,
        l2_error: h.dot(&h).sqrt(),
        cone_member: cone_check.member,
        cone_lhs: cone_check.lhs,
        cone_rhs: cone_check.rhs,
        cone_slack: cone_check.slack,
        converged: fit.converged,
        solver_iterations: fit.iterations,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Theoretical rate predictor of a shape.
pub fn predictor_value(shape: &Shape, estimator: Estimator, params: &TheoryParams) -> f64 {
    match estimator {
        Estimator::Lasso => {
            shape.k_star as f64 * (shape.p as f64 / shape.k_star as f64).ln() / shape.n as f64
        }
        Estimator::Group => {
            let size = shape.group_size.expect("grouped shape") as f64;
            let g = shape.p as f64 / size;
            let s = shape.s_star.expect("grouped shape") as f64;
            let m = s * size;
            (s * (g / s).ln() + params.gamma * m) / shape.n as f64
        }
    }
}

/// Run the full grid; records come back in deterministic order regardless of
/// the rayon thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let estimators = spec.estimator.singles();
    let mut tasks = Vec::new();
    for shape_index in 0..spec.grid.len() {
        for &estimator in estimators {
            for trial_index in 0..spec.replications {
                tasks.push((shape_index, trial_index, estimator));
            }
        }
    }
    let records: Result<Vec<TrialRecord>> = tasks
        .par_iter()
        .map(|&(shape_index, trial_index, estimator)| {
            run_trial(spec, shape_index, trial_index, estimator)
        })
        .collect();
    let records = records?;

    let failed = records.iter().filter(|r| !r.converged).count();
    if failed * 100 > records.len() {
        return Err(Error::Experiment(format!(
            "{failed} of {} trials failed to converge (> 1%)",
            records.len()
        )));
    }

    let mut aggregates = Vec::new();
    for shape_index in 0..spec.grid.len() {
        for &estimator in estimators {
            let bucket: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.shape_index == shape_index && r.estimator == estimator.as_str())
                .collect();
            if bucket.is_empty() {
                continue;
            }
            let excluded = bucket.iter().filter(|r| !r.converged).count();
            let kept: Vec<&&TrialRecord> = bucket.iter().filter(|r| r.converged).collect();
            let count = kept.len().max(1) as f64;
            let mean = kept.iter().map(|r| r.l2_error).sum::<f64>() / count;
            let mean_sq = kept.iter().map(|r| r.l2_error * r.l2_error).sum::<f64>() / count;
            let var = kept
                .iter()
                .map(|r| (r.l2_error - mean) * (r.l2_error - mean))
                .sum::<f64>()
                / count;
            let mut sorted: Vec<f64> = kept.iter().map(|r| r.l2_error).collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let member_freq =
                kept.iter().filter(|r| r.cone_member).count() as f64 / count;
            let shape = &spec.grid[shape_index];
            let mode = match estimator {
                Estimator::Lasso => BoundMode::Lasso {
                    n: shape.n,
                    p: shape.p,
                    k_star: shape.k_star,
                },
                Estimator::Group => BoundMode::Group {
                    n: shape.n,
                    group_count: shape.p / shape.group_size.unwrap(),
                    s_star: shape.s_star.unwrap(),
                    m_star: shape.s_star.unwrap() * shape.group_size.unwrap(),
                },
            };
            let expectation_bound = bound_rhs(&spec.params, mode, TailMode::Expectation, 1.0)?;
            let bound_ratio = if expectation_bound > 0.0 {
                mean_sq / (expectation_bound * expectation_bound)
            } else {
                0.0
            };
            aggregates.push(ShapeAggregate {
                shape: shape.label(),
                shape_index,
                estimator: estimator.as_str().to_string(),
                trials: bucket.len(),
                excluded_nonconverged: excluded,
                lambda: bucket[0].lambda_used,
                predictor: predictor_value(shape, estimator, &spec.params),
                mean_l2: mean,
                median_l2: if sorted.is_empty() { 0.0 } else { median(&sorted) },
                std_l2: var.sqrt(),
                mean_sq_l2: mean_sq,
                cone_member_freq: member_freq,
                bound_ratio,
            });
        }
    }
    let empirical_bound_constant = aggregates
        .iter()
        .map(|a| a.bound_ratio)
        .fold(0.0_f64, f64::max);
    Ok(ExperimentResult {
        records,
        aggregates,
        empirical_bound_constant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares of `log(mean_sq_error)` on `log(predictor)` over
/// raw `(predictor, mean_sq_error)` points.
pub fn fit_rate_points(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Experiment(format!(
            "rate fit needs >= 3 points, got {}",
            points.len()
        )));
    }
    let (lo, hi) = points.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &(x, _)| {
        (lo.min(x), hi.max(x))
    });
    if !(lo > 0.0) || hi / lo < 4.0 {
        return Err(Error::Experiment(format!(
            "degenerate predictor spread: [{lo}, {hi}] spans less than 4x"
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = logs
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            e * e
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared: r_squared.clamp(0.0, 1.0),
        n_points: points.len(),
    })
}

/// Rate fit over one estimator's per-shape aggregates.
pub fn fit_rate(result: &ExperimentResult, estimator: Estimator) -> Result<RateFit> {
    let points: Vec<(f64, f64)> = result
        .aggregates
        .iter()
        .filter(|a| a.estimator == estimator.as_str())
        .map(|a| {
            if a.excluded_nonconverged > 0 {
                Err(Error::Experiment(format!(
                    "shape {} has non-converged trials",
                    a.shape
                )))
            } else {
                Ok((a.predictor, a.mean_sq_l2))
            }
        })
        .collect::<Result<_>>()?;
    fit_rate_points(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaReport {
    pub violation_frequency: f64,
    pub max_observed_ratio: f64,
    pub threshold: f64,
    pub trials: usize,
}

/// Empirical check of the sorted sub-Gaussian maxima bound: per trial, draw
/// `r` values, sort the magnitudes, and compare
/// `sup_j g_(j) / (sigma lambda_j)` against `12 sqrt(log(1/delta))`.
pub fn verify_order_statistics_lemma(
    r: usize,
    noise: NoiseModel,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    if r == 0 || trials == 0 {
        return Err(Error::InvalidParameter("need r >= 1 and trials >= 1".into()));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1/2), got {delta}"
        )));
    }
    if noise.sigma == 0.0 {
        return Err(Error::InvalidParameter("sigma must be positive".into()));
    }
    let weights = crate::theory::order_stat_weights(r);
    let threshold = 12.0 * (1.0 / delta).ln().sqrt();
    let stats: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng(seed, &[0x0c, r as u64, t]);
            let mut draws: Vec<f64> = (0..r).map(|_| noise.draw(&mut rng).abs()).collect();
            draws.sort_by(|a, b| b.partial_cmp(a).unwrap());
            draws
                .iter()
                .zip(&weights)
                .map(|(g, w)| g / (noise.sigma * w))
                .fold(0.0_f64, f64::max)
        })
        .collect();
    let violations = stats.iter().filter(|&&s| s > threshold).count();
    Ok(LemmaReport {
        violation_frequency: violations as f64 / trials as f64,
        max_observed_ratio: stats.iter().fold(0.0_f64, |acc, &v| acc.max(v)),
        threshold,
        trials,
    })
}

/// Degenerate trials (Lasso error at numerical zero) are flagged, not
/// divided through.
pub const RATIO_DEGENERACY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedComparison {
    pub shape: String,
    pub shape_index: usize,
    pub trials: usize,
    pub degenerate: usize,
    /// group / lasso error ratios for the non-degenerate pairs.
    pub ratios: Vec<f64>,
    pub median_ratio: Option<f64>,
}

/// Solve both estimators on identical `(X, y)` per trial and report paired
/// error ratios.
pub fn compare_lasso_group(spec: &ExperimentSpec) -> Result<Vec<PairedComparison>> {
    let mut spec = spec.clone();
    spec.estimator = EstimatorKind::Both;
    spec.validate()?;
    let mut out = Vec::new();
    for shape_index in 0..spec.grid.len() {
        let pairs: Result<Vec<(f64, f64)>> = (0..spec.replications)
            .into_par_iter()
            .map(|trial_index| {
                let a = run_trial(&spec, shape_index, trial_index, Estimator::Lasso)?;
                let b = run_trial(&spec, shape_index, trial_index, Estimator::Group)?;
                debug_assert_eq!(a.seed, b.seed);
                Ok((a.l2_error, b.l2_error))
            })
            .collect();
        let pairs = pairs?;
        let mut ratios = Vec::new();
        let mut degenerate = 0;
        for &(lasso_err, group_err) in &pairs {
            if lasso_err <= RATIO_DEGENERACY_FLOOR {
                degenerate += 1;
            } else {
                ratios.push(group_err / lasso_err);
            }
        }
        let median_ratio = if ratios.is_empty() {
            None
        } else {
            let mut sorted = ratios.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Some(median(&sorted))
        };
        out.push(PairedComparison {
            shape: spec.grid[shape_index].label(),
            shape_index,
            trials: pairs.len(),
            degenerate,
            ratios,
            median_ratio,
        });
    }
    Ok(out)
}
