//! Accelerated proximal gradient (FISTA) solvers for the Lasso and Group
//! Lasso programs, with KKT-residual stopping.
//!
//! Both programs minimize `(1/n) ||y - X beta||_2^2` plus `lambda ||beta||_1`
//! or `lambda sum_g ||beta_g||_2`. The smooth gradient is
//! `(2/n) X^T (X beta - y)` and the fixed step is `1/L` with
//! `L = 2 mu_max(X^T X) / n`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{GroupStructure, RegressionProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Restart {
    None,
    FunctionValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    FixedLipschitz,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_kkt: f64,
    pub max_iter: usize,
    pub restart: Restart,
    pub step_rule: StepRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_kkt: 1e-8,
            max_iter: 50_000,
            restart: Restart::FunctionValue,
            step_rule: StepRule::FixedLipschitz,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_kkt >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol_kkt must be >= 0, got {}",
                self.tol_kkt
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solution record of a single fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Array1<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_used: f64,
    /// True when uncovered indices were promoted to singleton groups.
    pub groups_completed: bool,
}

/// Which penalty a KKT residual refers to.
#[derive(Debug, Clone)]
pub enum PenaltyKind<'a> {
    L1,
    Group(&'a GroupStructure),
}

/// `sign(v) * max(|v| - t, 0)`, the proximal operator of `t |.|`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Block shrinkage: `0` if `||v|| <= t`, else `(1 - t/||v||) v`.
pub fn group_soft_threshold(v: ArrayView1<f64>, t: f64) -> Array1<f64> {
    debug_assert!(t >= 0.0);
    let norm = v.dot(&v).sqrt();
    if norm <= t {
        Array1::zeros(v.len())
    } else {
        let scale = 1.0 - t / norm;
        v.mapv(|x| scale * x)
    }
}

fn check_inputs(problem: &RegressionProblem, lambda: f64) -> Result<()> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if problem.y.len() != problem.x.n() {
        return Err(Error::InvalidDimension(format!(
            "y has length {}, design has n={}",
            problem.y.len(),
            problem.x.n()
        )));
    }
    if problem.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response entry".into()));
    }
    Ok(())
}

/// `2 mu_max(X^T X) / n`, the gradient Lipschitz constant of the smooth part.
pub fn lipschitz_constant(problem: &RegressionProblem) -> f64 {
    let x = problem.x.values();
    let n = problem.x.n() as f64;
    let mu = linalg::max_eigenvalue_op(problem.x.p(), |v| x.t().dot(&x.dot(v)), 1e-10);
    2.0 * mu / n
}

/// KKT residual of `beta` for the given penalty at regularization `lambda`.
///
/// L1: `max_j |g_j + lambda sign(beta_j)|` on the active set and
/// `max(0, |g_j| - lambda)` off it, with `g = (2/n) X^T (X beta - y)`.
/// Group: per-group analog with the L2 norm.
pub fn kkt_residual(
    problem: &RegressionProblem,
    beta: ArrayView1<f64>,
    lambda: f64,
    penalty: &PenaltyKind,
) -> f64 {
    let x = problem.x.values();
    let n = problem.x.n() as f64;
    let resid = x.dot(&beta) - &problem.y;
    let grad = x.t().dot(&resid) * (2.0 / n);
    match penalty {
        PenaltyKind::L1 => beta
            .iter()
            .zip(grad.iter())
            .map(|(&b, &g)| {
                if b != 0.0 {
                    (g + lambda * b.signum()).abs()
                } else {
                    (g.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0_f64, f64::max),
        PenaltyKind::Group(structure) => {
            let mut worst = 0.0_f64;
            for idx in structure.completed().groups() {
                let b_norm2: f64 = idx.iter().map(|&j| beta[j] * beta[j]).sum();
                let r = if b_norm2 > 0.0 {
                    let b_norm = b_norm2.sqrt();
                    idx.iter()
                        .map(|&j| {
                            let v = grad[j] + lambda * beta[j] / b_norm;
                            v * v
                        })
                        .sum::<f64>()
                        .sqrt()
                } else {
                    let g_norm: f64 = idx.iter().map(|&j| grad[j] * grad[j]).sum::<f64>().sqrt();
                    (g_norm - lambda).max(0.0)
                };
                worst = worst.max(r);
            }
            worst
        }
    }
}

struct Objective<'a> {
    problem: &'a RegressionProblem,
}

impl Objective<'_> {
    fn smooth(&self, beta: &Array1<f64>) -> f64 {
        let resid = self.problem.x.values().dot(beta) - &self.problem.y;
        resid.dot(&resid) / self.problem.x.n() as f64
    }

    fn gradient(&self, beta: &Array1<f64>) -> Array1<f64> {
        let x = self.problem.x.values();
        let resid = x.dot(beta) - &self.problem.y;
        x.t().dot(&resid) * (2.0 / self.problem.x.n() as f64)
    }
}

fn penalty_value(beta: &Array1<f64>, lambda: f64, penalty: &PenaltyKind) -> f64 {
    match penalty {
        PenaltyKind::L1 => lambda * beta.iter().map(|b| b.abs()).sum::<f64>(),
        // callers pass a complete (partitioning) structure
        PenaltyKind::Group(structure) => {
            lambda
                * structure
                    .groups()
                    .iter()
                    .map(|idx| idx.iter().map(|&j| beta[j] * beta[j]).sum::<f64>().sqrt())
                    .sum::<f64>()
        }
    }
}

fn apply_prox(v: &Array1<f64>, t: f64, penalty: &PenaltyKind) -> Array1<f64> {
    match penalty {
        PenaltyKind::L1 => v.mapv(|x| soft_threshold(x, t)),
        PenaltyKind::Group(structure) => {
            let mut out = v.clone();
            for idx in structure.groups() {
                let block = Array1::from_iter(idx.iter().map(|&j| v[j]));
                let shrunk = group_soft_threshold(block.view(), t);
                for (k, &j) in idx.iter().enumerate() {
                    out[j] = shrunk[k];
                }
            }
            out
        }
    }
}

fn fista(
    problem: &RegressionProblem,
    lambda: f64,
    config: &SolverConfig,
    penalty: &PenaltyKind,
    groups_completed: bool,
) -> Result<FitResult> {
    config.validate()?;
    check_inputs(problem, lambda)?;
    let obj = Objective { problem };
    let lip = lipschitz_constant(problem).max(f64::MIN_POSITIVE);
    let mut eta = 1.0 / lip;

    let p = problem.x.p();
    let mut x_cur: Array1<f64> = Array1::zeros(p);
    let mut momentum = x_cur.clone();
    let mut theta = 1.0_f64;
    let mut f_cur = obj.smooth(&x_cur) + penalty_value(&x_cur, lambda, penalty);

    let mut converged = false;
    let mut kkt = kkt_residual(problem, x_cur.view(), lambda, penalty);
    let mut iterations = 0;
    if kkt <= config.tol_kkt {
        converged = true;
    }

    // KKT residual is checked periodically; the gradient it needs costs as
    // much as one iteration.
    const KKT_EVERY: usize = 10;

    while !converged && iterations < config.max_iter {
        iterations += 1;

        let step = |point: &Array1<f64>, eta: f64| -> Array1<f64> {
            let grad = obj.gradient(point);
            apply_prox(&(point - &(grad * eta)), eta * lambda, penalty)
        };

        let mut x_next = match config.step_rule {
            StepRule::FixedLipschitz => step(&momentum, eta),
            StepRule::Backtracking => {
                // halve the step until the quadratic upper bound holds
                let f_y = obj.smooth(&momentum);
                let grad_y = obj.gradient(&momentum);
                loop {
                    let cand = apply_prox(&(&momentum - &(&grad_y * eta)), eta * lambda, penalty);
                    let diff = &cand - &momentum;
                    let quad = f_y + grad_y.dot(&diff) + diff.dot(&diff) / (2.0 * eta);
                    if obj.smooth(&cand) <= quad + 1e-12 * quad.abs().max(1.0) {
                        break cand;
                    }
                    eta *= 0.5;
                }
            }
        };
        let mut f_next = obj.smooth(&x_next) + penalty_value(&x_next, lambda, penalty);

        if config.restart == Restart::FunctionValue && f_next > f_cur {
            // momentum overshot; restart from the last accepted iterate
            theta = 1.0;
            x_next = step(&x_cur, eta);
            f_next = obj.smooth(&x_next) + penalty_value(&x_next, lambda, penalty);
        }
        debug_assert!(
            f_next <= f_cur + 1e-10 * f_cur.abs().max(1.0),
            "objective increased: {f_cur} -> {f_next}"
        );

        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta_mom = (theta - 1.0) / theta_next;
        momentum = &x_next + &((&x_next - &x_cur) * beta_mom);
        theta = theta_next;
        x_cur = x_next;
        f_cur = f_next;

        if iterations % KKT_EVERY == 0 || iterations == config.max_iter {
            kkt = kkt_residual(problem, x_cur.view(), lambda, penalty);
            if kkt <= config.tol_kkt {
                converged = true;
            }
        }
    }
    if !converged {
        kkt = kkt_residual(problem, x_cur.view(), lambda, penalty);
        converged = kkt <= config.tol_kkt;
    }

    let objective = obj.smooth(&x_cur) + penalty_value(&x_cur, lambda, penalty);
    Ok(FitResult {
        beta_hat: x_cur,
        objective,
        kkt_residual: kkt,
        iterations,
        converged,
        lambda_used: lambda,
        groups_completed,
    })
}

/// Solve `(1/n)||y - X beta||^2 + lambda ||beta||_1`.
pub fn fit_lasso(
    problem: &RegressionProblem,
    lambda: f64,
    config: &SolverConfig,
) -> Result<FitResult> {
    fista(problem, lambda, config, &PenaltyKind::L1, false)
}

/// Solve `(1/n)||y - X beta||^2 + lambda sum_g ||beta_g||_2`.
///
/// Indices outside every group are treated as singleton groups; the result
/// records whether that completion happened.
pub fn fit_group_lasso(
    problem: &RegressionProblem,
    groups: &GroupStructure,
    lambda: f64,
    config: &SolverConfig,
) -> Result<FitResult> {
    if groups.p() != problem.x.p() {
        return Err(Error::InvalidGroups(format!(
            "group structure built for p={}, problem has p={}",
            groups.p(),
            problem.x.p()
        )));
    }
    let completed = groups.completed();
    let was_completed = completed.count() != groups.count();
    fista(
        problem,
        lambda,
        config,
        &PenaltyKind::Group(&completed),
        was_completed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_design, generate_ground_truth, synthesize_response, DesignMatrix, GroundTruth,
        NoiseFamily, NoiseModel, Normalization,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn problem_from(x: Array2<f64>, y: Array1<f64>) -> RegressionProblem {
        let p = x.ncols();
        let x = DesignMatrix::new(x, Normalization::None).unwrap();
        let truth = GroundTruth::from_beta(Array1::zeros(p), None).unwrap();
        RegressionProblem {
            x,
            y,
            truth,
            noise: NoiseModel::new(NoiseFamily::Gaussian, 0.0).unwrap(),
            seed: 0,
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.0, 0.0), 0.0);
    }

    #[test]
    fn group_soft_threshold_cases() {
        let v = array![3.0, 4.0];
        assert_eq!(group_soft_threshold(v.view(), 5.0), array![0.0, 0.0]);
        let shrunk = group_soft_threshold(v.view(), 2.5);
        assert_abs_diff_eq!(shrunk[0], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(shrunk[1], 2.0, epsilon = 1e-15);
        let z = Array1::zeros(3);
        assert_eq!(group_soft_threshold(z.view(), 1.0), Array1::<f64>::zeros(3));
    }

    #[test]
    fn lasso_unregularized_recovers_least_squares() {
        let x = array![[2.0, 1.0], [1.0, 3.0]];
        let y = array![1.0, 2.0];
        let prob = problem_from(x.clone(), y.clone());
        let fit = fit_lasso(&prob, 0.0, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        let pred = x.dot(&fit.beta_hat);
        for i in 0..2 {
            assert!((pred[i] - y[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn lasso_orthogonal_closed_form() {
        // X = sqrt(2) I so X^T X = n I with n = 2
        let s = 2.0_f64.sqrt();
        let x = array![[s, 0.0], [0.0, s]];
        let y = array![s, 0.1 * s];
        let prob = problem_from(x, y);
        let fit = fit_lasso(&prob, 0.5, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.beta_hat[0], 0.75, epsilon = 1e-7);
        assert_abs_diff_eq!(fit.beta_hat[1], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn lasso_large_lambda_gives_zero() {
        let x = generate_design(20, 8, 4, Normalization::UnitColumns, None).unwrap();
        let t = generate_ground_truth(8, 3, 1.0, 4, None).unwrap();
        let noise = NoiseModel::new(NoiseFamily::Gaussian, 0.5).unwrap();
        let prob = synthesize_response(&x, &t, noise, 4).unwrap();
        let xty = prob.x.values().t().dot(&prob.y);
        let lam = 2.0 * xty.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / 20.0;
        let fit = fit_lasso(&prob, lam * 1.000001, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.beta_hat.iter().all(|&b| b == 0.0));
        // zero is optimal there up to rounding in the lambda computation
        let r = kkt_residual(&prob, Array1::zeros(8).view(), lam, &PenaltyKind::L1);
        assert!(r <= 1e-12 * lam, "residual {r}");
    }

    #[test]
    fn kkt_residual_at_zero_without_penalty() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let y = array![3.0, 4.0];
        let prob = problem_from(x, y);
        let r = kkt_residual(&prob, Array1::zeros(2).view(), 0.0, &PenaltyKind::L1);
        // 2 ||X^T y||_inf / n with n = 2
        assert_abs_diff_eq!(r, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn group_lasso_matches_lasso_on_singletons() {
        let x = generate_design(30, 10, 8, Normalization::UnitColumns, None).unwrap();
        let t = generate_ground_truth(10, 3, 1.0, 8, None).unwrap();
        let noise = NoiseModel::new(NoiseFamily::Gaussian, 0.3).unwrap();
        let prob = synthesize_response(&x, &t, noise, 8).unwrap();
        let groups = GroupStructure::singletons(10);
        let lam = 0.2;
        let cfg = SolverConfig::default();
        let a = fit_lasso(&prob, lam, &cfg).unwrap();
        let b = fit_group_lasso(&prob, &groups, lam, &cfg).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.objective - b.objective).abs() <= 10.0 * cfg.tol_kkt);
        for j in 0..10 {
            assert!((a.beta_hat[j] - b.beta_hat[j]).abs() <= 1e-6);
        }
    }

    #[test]
    fn group_lasso_unregularized_ignores_groups() {
        let x = array![[2.0, 1.0], [1.0, 3.0]];
        let y = array![1.0, 2.0];
        let prob = problem_from(x.clone(), y.clone());
        let groups = GroupStructure::new(vec![vec![0, 1]], 2).unwrap();
        let fit = fit_group_lasso(&prob, &groups, 0.0, &SolverConfig::default()).unwrap();
        let pred = x.dot(&fit.beta_hat);
        for i in 0..2 {
            assert!((pred[i] - y[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn group_lasso_orthogonal_closed_form() {
        // X = sqrt(n) I with n = 4, two groups of two
        let n = 4;
        let s = (n as f64).sqrt();
        let x = Array2::from_shape_fn((n, n), |(i, j)| if i == j { s } else { 0.0 });
        let y = array![2.0, 1.0, 0.1, 0.05];
        let prob = problem_from(x, y.clone());
        let groups = GroupStructure::equal_sized(4, 2).unwrap();
        let lam = 0.6;
        let fit = fit_group_lasso(&prob, &groups, lam, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        // closed form: group_soft_threshold((X^T y)_g / n, lambda / 2)
        let xty = prob.x.values().t().dot(&y) / n as f64;
        for idx in groups.groups() {
            let block = Array1::from_iter(idx.iter().map(|&j| xty[j]));
            let expect = group_soft_threshold(block.view(), lam / 2.0);
            for (k, &j) in idx.iter().enumerate() {
                assert!((fit.beta_hat[j] - expect[k]).abs() <= 1e-7, "j={j}");
            }
        }
    }

    #[test]
    fn incomplete_groups_are_completed() {
        let x = generate_design(15, 6, 2, Normalization::UnitColumns, None).unwrap();
        let t = generate_ground_truth(6, 2, 1.0, 2, None).unwrap();
        let noise = NoiseModel::new(NoiseFamily::Gaussian, 0.2).unwrap();
        let prob = synthesize_response(&x, &t, noise, 2).unwrap();
        let groups = GroupStructure::new(vec![vec![0, 1], vec![2, 3]], 6).unwrap();
        let fit = fit_group_lasso(&prob, &groups, 0.1, &SolverConfig::default()).unwrap();
        assert!(fit.groups_completed);
        assert!(fit.converged);
    }

    #[test]
    fn rejects_nan_input() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let y = array![f64::NAN, 0.0];
        let prob = problem_from(x, y);
        assert!(fit_lasso(&prob, 0.1, &SolverConfig::default()).is_err());
        assert!(fit_lasso(&prob, f64::NAN, &SolverConfig::default()).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let x = generate_design(25, 7, 13, Normalization::UnitColumns, None).unwrap();
        let t = generate_ground_truth(7, 2, 1.0, 13, None).unwrap();
        let noise = NoiseModel::new(NoiseFamily::Gaussian, 0.4).unwrap();
        let prob = synthesize_response(&x, &t, noise, 13).unwrap();
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let mut xp = Array2::zeros((25, 7));
        for (new_j, &old_j) in perm.iter().enumerate() {
            xp.column_mut(new_j).assign(&prob.x.values().column(old_j));
        }
        let prob_p = problem_from(xp, prob.y.clone());
        let cfg = SolverConfig {
            tol_kkt: 1e-10,
            ..SolverConfig::default()
        };
        let a = fit_lasso(&prob, 0.15, &cfg).unwrap();
        let b = fit_lasso(&prob_p, 0.15, &cfg).unwrap();
        for (new_j, &old_j) in perm.iter().enumerate() {
            assert!((a.beta_hat[old_j] - b.beta_hat[new_j]).abs() <= 1e-7);
        }
    }

    #[test]
    fn converged_kkt_recomputes_below_tol() {
        let x = generate_design(40, 12, 21, Normalization::UnitColumns, None).unwrap();
        let t = generate_ground_truth(12, 4, 1.0, 21, None).unwrap();
        let noise = NoiseModel::new(NoiseFamily::Gaussian, 1.0).unwrap();
        let prob = synthesize_response(&x, &t, noise, 21).unwrap();
        let cfg = SolverConfig::default();
        let fit = fit_lasso(&prob, 0.3, &cfg).unwrap();
        assert!(fit.converged);
        let recomputed = kkt_residual(&prob, fit.beta_hat.view(), 0.3, &PenaltyKind::L1);
        assert!(recomputed <= cfg.tol_kkt);
        // objective invariant
        let resid = prob.x.values().dot(&fit.beta_hat) - &prob.y;
        let obj = resid.dot(&resid) / 40.0 + 0.3 * fit.beta_hat.iter().map(|b| b.abs()).sum::<f64>();
        assert!((obj - fit.objective).abs() <= 1e-12 * obj.abs().max(1.0));
    }
}
