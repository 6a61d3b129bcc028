//! Configuration and orchestration: parse line-oriented config files, run
//! commands, and persist machine-readable results.
//!
//! The config format is `[section]` headers over `key=value` lines; `#`
//! starts a comment. Unknown keys are rejected with their line number.
//! Every output file starts with a comment block embedding the fully
//! resolved config, so any artifact is reproducible from itself.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mc::{
    compare_lasso_group, fit_rate, run_experiment, Estimator, EstimatorKind, ExperimentResult,
    ExperimentSpec, Shape,
};
use crate::model::{read_problem, NoiseFamily, NoiseModel};
use crate::solver::{fit_group_lasso, fit_lasso, Restart, SolverConfig, StepRule};
use crate::theory::{
    estimate_re_constant, lambda_group, lambda_lasso, ConeFamily, ReMode, TheoryParams,
};

/// Exit status contract: 0 success, 1 operational error, 2 acceptance-check
/// failure.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Experiment,
    VerifyLemma,
    VerifyCone,
    EstimateRe,
    Compare,
}

impl CommandKind {
    fn as_str(self) -> &'static str {
        match self {
            CommandKind::Solve => "solve",
            CommandKind::Experiment => "experiment",
            CommandKind::VerifyLemma => "verify-lemma",
            CommandKind::VerifyCone => "verify-cone",
            CommandKind::EstimateRe => "estimate-re",
            CommandKind::Compare => "compare",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "solve" => Some(CommandKind::Solve),
            "experiment" => Some(CommandKind::Experiment),
            "verify-lemma" => Some(CommandKind::VerifyLemma),
            "verify-cone" => Some(CommandKind::VerifyCone),
            "estimate-re" => Some(CommandKind::EstimateRe),
            "compare" => Some(CommandKind::Compare),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSection {
    pub estimator: EstimatorKind,
    pub replications: usize,
    pub amplitude: f64,
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSection {
    pub input: Option<PathBuf>,
    pub estimator: Estimator,
    /// None means "use the theoretical lambda for the problem's truth".
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaSection {
    pub r_values: Vec<usize>,
    pub deltas: Vec<f64>,
    pub families: Vec<NoiseFamily>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReSection {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub budget: usize,
    pub exact: bool,
    pub samples: usize,
}

/// Fully resolved run configuration; every field has a materialized value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// 0 lets rayon pick.
    pub threads: usize,
    pub theory: TheoryParams,
    pub solver: SolverConfig,
    pub noise: NoiseModel,
    pub experiment: ExperimentSection,
    pub solve: SolveSection,
    pub lemma: LemmaSection,
    pub re: ReSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: CommandKind::Experiment,
            seed: 42,
            out_dir: PathBuf::from("out"),
            threads: 0,
            theory: TheoryParams::new(2.0, 0.05, 1.0).unwrap(),
            solver: SolverConfig::default(),
            noise: NoiseModel::new(NoiseFamily::Gaussian, 1.0).unwrap(),
            experiment: ExperimentSection {
                estimator: EstimatorKind::Lasso,
                replications: 50,
                amplitude: 1.0,
                shapes: vec![Shape::ungrouped(100, 256, 4)],
            },
            solve: SolveSection {
                input: None,
                estimator: Estimator::Lasso,
                lambda: None,
            },
            lemma: LemmaSection {
                r_values: vec![10, 100, 1000],
                deltas: vec![0.01, 0.05],
                families: vec![
                    NoiseFamily::Gaussian,
                    NoiseFamily::Rademacher,
                    NoiseFamily::Uniform,
                ],
                trials: 2000,
            },
            re: ReSection {
                n: 30,
                p: 12,
                k: 2,
                budget: 10,
                exact: true,
                samples: 50,
            },
        }
    }
}

fn shape_to_string(s: &Shape) -> String {
    match (s.group_size, s.s_star) {
        (Some(size), Some(st)) => format!("n:{},p:{},k:{},gsize:{},s:{}", s.n, s.p, s.k_star, size, st),
        _ => format!("n:{},p:{},k:{}", s.n, s.p, s.k_star),
    }
}

fn parse_shape(text: &str, line: usize) -> Result<Shape> {
    let mut n = None;
    let mut p = None;
    let mut k = None;
    let mut gsize = None;
    let mut s = None;
    for field in text.split(',') {
        let (key, value) = field
            .split_once(':')
            .ok_or_else(|| cfg_err(line, format!("bad shape field `{field}`")))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|e| cfg_err(line, format!("bad shape value `{value}`: {e}")))?;
        match key.trim() {
            "n" => n = Some(value),
            "p" => p = Some(value),
            "k" => k = Some(value),
            "gsize" => gsize = Some(value),
            "s" => s = Some(value),
            other => return Err(cfg_err(line, format!("unknown shape field `{other}`"))),
        }
    }
    let (n, p, k) = match (n, p, k) {
        (Some(n), Some(p), Some(k)) => (n, p, k),
        _ => return Err(cfg_err(line, "shape needs n, p and k")),
    };
    let shape = match (gsize, s) {
        (Some(gsize), Some(s)) => Shape::grouped(n, p, k, gsize, s),
        (None, None) => Shape::ungrouped(n, p, k),
        _ => return Err(cfg_err(line, "grouped shape needs both gsize and s")),
    };
    shape
        .validate()
        .map_err(|e| cfg_err(line, e.to_string()))?;
    Ok(shape)
}

fn cfg_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

/// Parse a config text into a fully resolved [`RunConfig`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    let mut section = String::new();
    let mut saw_command = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(lineno, "unterminated section header"))?;
            match name {
                "run" | "theory" | "solver" | "noise" | "experiment" | "solve" | "lemma"
                | "re" => section = name.to_string(),
                other => return Err(cfg_err(lineno, format!("unknown section `[{other}]`"))),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(lineno, format!("expected key=value, found `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|e| cfg_err(lineno, format!("bad number `{v}`: {e}")))
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|e| cfg_err(lineno, format!("bad count `{v}`: {e}")))
        };
        match (section.as_str(), key) {
            ("run", "command") => {
                config.command = CommandKind::parse(value)
                    .ok_or_else(|| cfg_err(lineno, format!("unknown command `{value}`")))?;
                saw_command = true;
            }
            ("run", "seed") => {
                config.seed = value
                    .parse()
                    .map_err(|e| cfg_err(lineno, format!("bad seed `{value}`: {e}")))?;
            }
            ("run", "out") => config.out_dir = PathBuf::from(value),
            ("run", "threads") => config.threads = parse_usize(value)?,
            ("theory", "alpha") => {
                let v = parse_f64(value)?;
                if v < 2.0 {
                    return Err(cfg_err(lineno, format!("alpha must be >= 2, got {v}")));
                }
                config.theory.alpha = v;
            }
            ("theory", "delta") => {
                let v = parse_f64(value)?;
                if !(v > 0.0 && v < 0.5) {
                    return Err(cfg_err(lineno, format!("delta must lie in (0, 1/2), got {v}")));
                }
                config.theory.delta = v;
            }
            ("theory", "sigma") => {
                let v = parse_f64(value)?;
                if v < 0.0 {
                    return Err(cfg_err(lineno, format!("sigma must be >= 0, got {v}")));
                }
                config.theory.sigma = v;
            }
            ("theory", "gamma") => {
                let v = parse_f64(value)?;
                if v < 1.0 {
                    return Err(cfg_err(lineno, format!("gamma must be >= 1, got {v}")));
                }
                config.theory.gamma = v;
            }
            ("theory", "bound_constant") => {
                let v = parse_f64(value)?;
                if v <= 0.0 {
                    return Err(cfg_err(lineno, format!("bound_constant must be > 0, got {v}")));
                }
                config.theory.bound_constant = v;
            }
            ("theory", "lambda_constant") => {
                let v = parse_f64(value)?;
                if v <= 0.0 {
                    return Err(cfg_err(lineno, format!("lambda_constant must be > 0, got {v}")));
                }
                config.theory.lambda_constant = v;
            }
            ("theory", "group_delta_factor") => {
                let v = parse_f64(value)?;
                if v < 1.0 {
                    return Err(cfg_err(
                        lineno,
                        format!("group_delta_factor must be >= 1, got {v}"),
                    ));
                }
                config.theory.group_delta_factor = v;
            }
            ("solver", "tol_kkt") => {
                let v = parse_f64(value)?;
                if v < 0.0 {
                    return Err(cfg_err(lineno, format!("tol_kkt must be >= 0, got {v}")));
                }
                config.solver.tol_kkt = v;
            }
            ("solver", "max_iter") => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(cfg_err(lineno, "max_iter must be >= 1"));
                }
                config.solver.max_iter = v;
            }
            ("solver", "restart") => {
                config.solver.restart = match value {
                    "none" => Restart::None,
                    "function-value" => Restart::FunctionValue,
                    other => return Err(cfg_err(lineno, format!("unknown restart `{other}`"))),
                };
            }
            ("solver", "step") => {
                config.solver.step_rule = match value {
                    "fixed" => StepRule::FixedLipschitz,
                    "backtracking" => StepRule::Backtracking,
                    other => return Err(cfg_err(lineno, format!("unknown step rule `{other}`"))),
                };
            }
            ("noise", "family") => {
                config.noise.family =
                    NoiseFamily::parse(value).map_err(|e| cfg_err(lineno, e.to_string()))?;
            }
            ("noise", "sigma") => {
                let v = parse_f64(value)?;
                if v < 0.0 {
                    return Err(cfg_err(lineno, format!("noise sigma must be >= 0, got {v}")));
                }
                config.noise.sigma = v;
            }
            ("experiment", "estimator") => {
                config.experiment.estimator = match value {
                    "lasso" => EstimatorKind::Lasso,
                    "group" => EstimatorKind::Group,
                    "both" => EstimatorKind::Both,
                    other => return Err(cfg_err(lineno, format!("unknown estimator `{other}`"))),
                };
            }
            ("experiment", "replications") => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(cfg_err(lineno, "replications must be >= 1"));
                }
                config.experiment.replications = v;
            }
            ("experiment", "amplitude") => {
                let v = parse_f64(value)?;
                if v <= 0.0 {
                    return Err(cfg_err(lineno, format!("amplitude must be > 0, got {v}")));
                }
                config.experiment.amplitude = v;
            }
            ("experiment", "shapes") => {
                let shapes: Result<Vec<Shape>> = value
                    .split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_shape(s.trim(), lineno))
                    .collect();
                let shapes = shapes?;
                if shapes.is_empty() {
                    return Err(cfg_err(lineno, "shapes list is empty"));
                }
                config.experiment.shapes = shapes;
            }
            ("solve", "input") => config.solve.input = Some(PathBuf::from(value)),
            ("solve", "estimator") => {
                config.solve.estimator = match value {
                    "lasso" => Estimator::Lasso,
                    "group" => Estimator::Group,
                    other => return Err(cfg_err(lineno, format!("unknown estimator `{other}`"))),
                };
            }
            ("solve", "lambda") => {
                config.solve.lambda = if value == "theory" {
                    None
                } else {
                    let v = parse_f64(value)?;
                    if v < 0.0 {
                        return Err(cfg_err(lineno, format!("lambda must be >= 0, got {v}")));
                    }
                    Some(v)
                };
            }
            ("lemma", "r") => {
                let vals: Result<Vec<usize>> =
                    value.split(',').map(|v| parse_usize(v.trim())).collect();
                let vals = vals?;
                if vals.iter().any(|&r| r == 0) {
                    return Err(cfg_err(lineno, "r values must be >= 1"));
                }
                config.lemma.r_values = vals;
            }
            ("lemma", "delta") => {
                let vals: Result<Vec<f64>> =
                    value.split(',').map(|v| parse_f64(v.trim())).collect();
                let vals = vals?;
                if vals.iter().any(|&d| !(d > 0.0 && d < 0.5)) {
                    return Err(cfg_err(lineno, "lemma deltas must lie in (0, 1/2)"));
                }
                config.lemma.deltas = vals;
            }
            ("lemma", "families") => {
                let vals: Result<Vec<NoiseFamily>> = value
                    .split(',')
                    .map(|v| NoiseFamily::parse(v.trim()).map_err(|e| cfg_err(lineno, e.to_string())))
                    .collect();
                config.lemma.families = vals?;
            }
            ("lemma", "trials") => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(cfg_err(lineno, "trials must be >= 1"));
                }
                config.lemma.trials = v;
            }
            ("re", "n") => config.re.n = parse_usize(value)?,
            ("re", "p") => config.re.p = parse_usize(value)?,
            ("re", "k") => config.re.k = parse_usize(value)?,
            ("re", "budget") => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(cfg_err(lineno, "budget must be >= 1"));
                }
                config.re.budget = v;
            }
            ("re", "mode") => {
                config.re.exact = match value {
                    "exact" => true,
                    "sampled" => false,
                    other => return Err(cfg_err(lineno, format!("unknown re mode `{other}`"))),
                };
            }
            ("re", "samples") => {
                let v = parse_usize(value)?;
                if v == 0 {
                    return Err(cfg_err(lineno, "samples must be >= 1"));
                }
                config.re.samples = v;
            }
            ("", _) => return Err(cfg_err(lineno, "key outside any [section]")),
            (section, key) => {
                return Err(cfg_err(
                    lineno,
                    format!("unknown key `{key}` in section [{section}]"),
                ))
            }
        }
    }
    if !saw_command {
        return Err(cfg_err(0, "missing required key `command` in [run]"));
    }
    Ok(config)
}

/// Canonical text of a resolved config. `parse(serialize(c)) == c`.
pub fn serialize_config(config: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[run]");
    let _ = writeln!(out, "command={}", config.command.as_str());
    let _ = writeln!(out, "seed={}", config.seed);
    let _ = writeln!(out, "out={}", config.out_dir.display());
    let _ = writeln!(out, "threads={}", config.threads);
    let _ = writeln!(out, "[theory]");
    let _ = writeln!(out, "alpha={}", config.theory.alpha);
    let _ = writeln!(out, "delta={}", config.theory.delta);
    let _ = writeln!(out, "sigma={}", config.theory.sigma);
    let _ = writeln!(out, "gamma={}", config.theory.gamma);
    let _ = writeln!(out, "bound_constant={}", config.theory.bound_constant);
    let _ = writeln!(out, "lambda_constant={}", config.theory.lambda_constant);
    let _ = writeln!(out, "group_delta_factor={}", config.theory.group_delta_factor);
    let _ = writeln!(out, "[solver]");
    let _ = writeln!(out, "tol_kkt={}", config.solver.tol_kkt);
    let _ = writeln!(out, "max_iter={}", config.solver.max_iter);
    let _ = writeln!(
        out,
        "restart={}",
        match config.solver.restart {
            Restart::None => "none",
            Restart::FunctionValue => "function-value",
        }
    );
    let _ = writeln!(
        out,
        "step={}",
        match config.solver.step_rule {
            StepRule::FixedLipschitz => "fixed",
            StepRule::Backtracking => "backtracking",
        }
    );
    let _ = writeln!(out, "[noise]");
    let _ = writeln!(out, "family={}", config.noise.family.as_str());
    let _ = writeln!(out, "sigma={}", config.noise.sigma);
    let _ = writeln!(out, "[experiment]");
    let _ = writeln!(
        out,
        "estimator={}",
        match config.experiment.estimator {
            EstimatorKind::Lasso => "lasso",
            EstimatorKind::Group => "group",
            EstimatorKind::Both => "both",
        }
    );
    let _ = writeln!(out, "replications={}", config.experiment.replications);
    let _ = writeln!(out, "amplitude={}", config.experiment.amplitude);
    let shapes: Vec<String> = config.experiment.shapes.iter().map(shape_to_string).collect();
    let _ = writeln!(out, "shapes={}", shapes.join(";"));
    let _ = writeln!(out, "[solve]");
    if let Some(input) = &config.solve.input {
        let _ = writeln!(out, "input={}", input.display());
    }
    let _ = writeln!(out, "estimator={}", config.solve.estimator.as_str());
    let _ = writeln!(
        out,
        "lambda={}",
        match config.solve.lambda {
            Some(v) => v.to_string(),
            None => "theory".to_string(),
        }
    );
    let _ = writeln!(out, "[lemma]");
    let r: Vec<String> = config.lemma.r_values.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "r={}", r.join(","));
    let d: Vec<String> = config.lemma.deltas.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "delta={}", d.join(","));
    let f: Vec<String> = config
        .lemma
        .families
        .iter()
        .map(|v| v.as_str().to_string())
        .collect();
    let _ = writeln!(out, "families={}", f.join(","));
    let _ = writeln!(out, "trials={}", config.lemma.trials);
    let _ = writeln!(out, "[re]");
    let _ = writeln!(out, "n={}", config.re.n);
    let _ = writeln!(out, "p={}", config.re.p);
    let _ = writeln!(out, "k={}", config.re.k);
    let _ = writeln!(out, "budget={}", config.re.budget);
    let _ = writeln!(out, "mode={}", if config.re.exact { "exact" } else { "sampled" });
    let _ = writeln!(out, "samples={}", config.re.samples);
    out
}

fn header_block(config: &RunConfig) -> String {
    // the output path and thread count do not affect results, so normalize
    // them: reruns must produce byte-identical files wherever they land
    let mut config = config.clone();
    config.out_dir = RunConfig::default().out_dir;
    config.threads = 0;
    let mut out = String::new();
    let _ = writeln!(out, "# sparselab output v1");
    let _ = writeln!(out, "# master_seed {}", config.seed);
    let _ = writeln!(out, "# config-begin");
    for line in serialize_config(&config).lines() {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "# config-end");
    out
}

fn experiment_spec(config: &RunConfig) -> ExperimentSpec {
    ExperimentSpec {
        grid: config.experiment.shapes.clone(),
        estimator: config.experiment.estimator,
        params: config.theory,
        replications: config.experiment.replications,
        master_seed: config.seed,
        noise: config.noise,
        solver: config.solver,
        amplitude: config.experiment.amplitude,
    }
}

fn write_trials_jsonl(path: &Path, config: &RunConfig, result: &ExperimentResult) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(header_block(config).as_bytes())?;
    for record in &result.records {
        let line = serde_json::to_string(record).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn write_aggregates_csv(path: &Path, config: &RunConfig, result: &ExperimentResult) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(header_block(config).as_bytes())?;
    writeln!(
        file,
        "shape,estimator,trials,excluded,lambda,predictor,mean_l2,median_l2,std_l2,mean_sq_l2,cone_member_freq,bound_ratio"
    )?;
    for a in &result.aggregates {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            a.shape.replace(' ', "_"),
            a.estimator,
            a.trials,
            a.excluded_nonconverged,
            fmt_f64(a.lambda),
            fmt_f64(a.predictor),
            fmt_f64(a.mean_l2),
            fmt_f64(a.median_l2),
            fmt_f64(a.std_l2),
            fmt_f64(a.mean_sq_l2),
            fmt_f64(a.cone_member_freq),
            fmt_f64(a.bound_ratio),
        )?;
    }
    Ok(())
}

fn write_rate_csv(
    path: &Path,
    config: &RunConfig,
    result: &ExperimentResult,
    estimator: Estimator,
) -> Result<()> {
    let fit = fit_rate(result, estimator)?;
    let mut file = fs::File::create(path)?;
    file.write_all(header_block(config).as_bytes())?;
    writeln!(
        file,
        "# slope {} intercept {} r_squared {}",
        fmt_f64(fit.slope),
        fmt_f64(fit.intercept),
        fmt_f64(fit.r_squared)
    )?;
    writeln!(file, "predictor,mean_sq_l2,fitted")?;
    for a in result
        .aggregates
        .iter()
        .filter(|a| a.estimator == estimator.as_str())
    {
        let fitted = (fit.intercept + fit.slope * a.predictor.ln()).exp();
        writeln!(
            file,
            "{},{},{}",
            fmt_f64(a.predictor),
            fmt_f64(a.mean_sq_l2),
            fmt_f64(fitted)
        )?;
    }
    Ok(())
}

fn run_solve(config: &RunConfig) -> Result<i32> {
    let input = config
        .solve
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("solve needs [solve] input=PATH".into()))?;
    let file = fs::File::open(input)?;
    let (problem, groups) = read_problem(&mut BufReader::new(file))?;
    let n = problem.x.n();
    let lambda = match config.solve.lambda {
        Some(v) => v,
        None => match (config.solve.estimator, &groups) {
            (Estimator::Lasso, _) => {
                lambda_lasso(&config.theory, n, problem.x.p(), problem.truth.k_star.max(1))?
            }
            (Estimator::Group, Some(structure)) => {
                let cover = problem.truth.group_cover.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("problem has no group cover".into())
                })?;
                lambda_group(
                    &config.theory,
                    n,
                    structure.count(),
                    cover.s_star.max(1),
                    cover.m_star.max(1),
                )?
            }
            (Estimator::Group, None) => {
                return Err(Error::InvalidParameter(
                    "group solve needs a problem file with groups".into(),
                ))
            }
        },
    };
    let fit = match config.solve.estimator {
        Estimator::Lasso => fit_lasso(&problem, lambda, &config.solver)?,
        Estimator::Group => {
            let structure = groups.as_ref().ok_or_else(|| {
                Error::InvalidParameter("group solve needs a problem file with groups".into())
            })?;
            fit_group_lasso(&problem, structure, lambda, &config.solver)?
        }
    };
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("solution.txt");
    let mut file = fs::File::create(&path)?;
    file.write_all(header_block(config).as_bytes())?;
    writeln!(file, "lambda {}", fmt_f64(fit.lambda_used))?;
    writeln!(file, "objective {}", fmt_f64(fit.objective))?;
    writeln!(file, "kkt_residual {}", fmt_f64(fit.kkt_residual))?;
    writeln!(file, "iterations {}", fit.iterations)?;
    writeln!(file, "converged {}", fit.converged)?;
    writeln!(file, "beta")?;
    let line: Vec<String> = fit.beta_hat.iter().map(|&v| fmt_f64(v)).collect();
    writeln!(file, "{}", line.join(" "))?;
    println!(
        "solve: objective {:.6e}, kkt {:.3e}, {} iterations, converged {}",
        fit.objective, fit.kkt_residual, fit.iterations, fit.converged
    );
    Ok(EXIT_OK)
}

fn run_experiment_cmd(config: &RunConfig) -> Result<i32> {
    let spec = experiment_spec(config);
    let result = run_experiment(&spec)?;
    fs::create_dir_all(&config.out_dir)?;
    write_trials_jsonl(&config.out_dir.join("trials.jsonl"), config, &result)?;
    write_aggregates_csv(&config.out_dir.join("aggregates.csv"), config, &result)?;
    for &estimator in spec.estimator.singles_public() {
        let name = format!("rate_{}.csv", estimator.as_str());
        // rate data only when the grid supports a fit
        if let Err(err) = write_rate_csv(&config.out_dir.join(name), config, &result, estimator) {
            eprintln!("rate fit skipped for {}: {err}", estimator.as_str());
        }
    }
    println!(
        "experiment: {} trials over {} shapes, empirical bound constant {:.4}",
        result.records.len(),
        spec.grid.len(),
        result.empirical_bound_constant
    );
    Ok(EXIT_OK)
}

fn run_verify_cone(config: &RunConfig) -> Result<i32> {
    let spec = experiment_spec(config);
    let result = run_experiment(&spec)?;
    fs::create_dir_all(&config.out_dir)?;
    write_trials_jsonl(&config.out_dir.join("trials.jsonl"), config, &result)?;
    let delta = config.theory.delta;
    let trials = config.experiment.replications as f64;
    let threshold = 1.0 - delta - 3.0 * (delta * (1.0 - delta) / trials).sqrt();
    let mut all_ok = true;
    let path = config.out_dir.join("cone_report.csv");
    let mut file = fs::File::create(&path)?;
    file.write_all(header_block(config).as_bytes())?;
    writeln!(file, "shape,estimator,cone_member_freq,threshold,pass")?;
    for a in &result.aggregates {
        let pass = a.cone_member_freq >= threshold;
        all_ok &= pass;
        writeln!(
            file,
            "{},{},{},{},{}",
            a.shape.replace(' ', "_"),
            a.estimator,
            fmt_f64(a.cone_member_freq),
            fmt_f64(threshold),
            pass
        )?;
        println!(
            "cone {} {}: freq {:.4} vs threshold {:.4} -> {}",
            a.shape,
            a.estimator,
            a.cone_member_freq,
            threshold,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn run_verify_lemma(config: &RunConfig) -> Result<i32> {
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("lemma_report.csv");
    let mut file = fs::File::create(&path)?;
    file.write_all(header_block(config).as_bytes())?;
    writeln!(file, "r,family,delta,trials,violation_frequency,max_ratio,pass")?;
    let mut all_ok = true;
    for &r in &config.lemma.r_values {
        for &family in &config.lemma.families {
            for &delta in &config.lemma.deltas {
                let noise = NoiseModel::new(family, config.noise.sigma.max(1.0))?;
                let report = crate::mc::verify_order_statistics_lemma(
                    r,
                    noise,
                    delta,
                    config.lemma.trials,
                    config.seed,
                )?;
                let pass = report.violation_frequency <= delta;
                all_ok &= pass;
                writeln!(
                    file,
                    "{},{},{},{},{},{},{}",
                    r,
                    family.as_str(),
                    delta,
                    report.trials,
                    fmt_f64(report.violation_frequency),
                    fmt_f64(report.max_observed_ratio),
                    pass
                )?;
                println!(
                    "lemma r={r} {} delta={delta}: freq {:.4}, max ratio {:.3} -> {}",
                    family.as_str(),
                    report.violation_frequency,
                    report.max_observed_ratio,
                    if pass { "pass" } else { "FAIL" }
                );
            }
        }
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn run_estimate_re(config: &RunConfig) -> Result<i32> {
    let re = &config.re;
    let x = crate::model::generate_design(
        re.n,
        re.p,
        config.seed,
        crate::model::Normalization::UnitColumns,
        None,
    )?;
    let (gamma1, gamma2) = config.theory.lasso_cone_widths(re.k);
    let family = ConeFamily::Lasso {
        k: re.k,
        gamma1,
        gamma2,
    };
    let mode = if re.exact {
        ReMode::Exact
    } else {
        ReMode::Sampled(re.samples)
    };
    let est = estimate_re_constant(&x, &family, mode, re.budget, config.seed)?;
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("re_estimate.txt");
    let mut file = fs::File::create(&path)?;
    file.write_all(header_block(config).as_bytes())?;
    writeln!(file, "kappa_upper_estimate {}", fmt_f64(est.kappa))?;
    writeln!(file, "supports_examined {}", est.supports_examined)?;
    let support: Vec<String> = est.support.iter().map(|v| v.to_string()).collect();
    writeln!(file, "support {}", support.join(" "))?;
    writeln!(file, "witness")?;
    let line: Vec<String> = est.witness.iter().map(|&v| fmt_f64(v)).collect();
    writeln!(file, "{}", line.join(" "))?;
    println!(
        "estimate-re: kappa <= {:.6e} over {} supports",
        est.kappa, est.supports_examined
    );
    Ok(EXIT_OK)
}

fn run_compare(config: &RunConfig) -> Result<i32> {
    let spec = experiment_spec(config);
    let comparisons = compare_lasso_group(&spec)?;
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("compare.csv");
    let mut file = fs::File::create(&path)?;
    file.write_all(header_block(config).as_bytes())?;
    writeln!(file, "shape,trials,degenerate,median_ratio")?;
    for c in &comparisons {
        writeln!(
            file,
            "{},{},{},{}",
            c.shape.replace(' ', "_"),
            c.trials,
            c.degenerate,
            match c.median_ratio {
                Some(v) => fmt_f64(v),
                None => "degenerate".to_string(),
            }
        )?;
        println!(
            "compare {}: median group/lasso ratio {}",
            c.shape,
            match c.median_ratio {
                Some(v) => format!("{v:.4}"),
                None => "degenerate".into(),
            }
        );
    }
    Ok(EXIT_OK)
}

impl EstimatorKind {
    fn singles_public(self) -> &'static [Estimator] {
        match self {
            EstimatorKind::Lasso => &[Estimator::Lasso],
            EstimatorKind::Group => &[Estimator::Group],
            EstimatorKind::Both => &[Estimator::Lasso, Estimator::Group],
        }
    }
}

/// Execute a resolved config. Returns the process exit code; operational
/// failures surface as `Err` (mapped to exit 1 by the binary).
pub fn run(config: &RunConfig) -> Result<i32> {
    let body = || -> Result<i32> {
        match config.command {
            CommandKind::Solve => run_solve(config),
            CommandKind::Experiment => run_experiment_cmd(config),
            CommandKind::VerifyLemma => run_verify_lemma(config),
            CommandKind::VerifyCone => run_verify_cone(config),
            CommandKind::EstimateRe => run_estimate_re(config),
            CommandKind::Compare => run_compare(config),
        }
    };
    if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Experiment(e.to_string()))?;
        pool.install(body)
    } else {
        body()
    }
}
