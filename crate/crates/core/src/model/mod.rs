//! Synthetic regression problems: design matrices, group structures, sparse
//! ground truths, sub-Gaussian noise, and responses `y = X beta* + eps`.

mod format;

pub use format::{read_problem, write_problem};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seeds;

/// Sub-seed tags for the model generators.
mod tag {
    pub const DESIGN: u64 = 0x01;
    pub const TRUTH: u64 = 0x02;
    pub const NOISE: u64 = 0x03;
}

/// Relative slack allowed when checking the normalization assumptions.
pub const ASSUMPTION_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    None,
    /// Every column satisfies `||X_j||_2 <= sqrt(n)`.
    UnitColumns,
    /// Every group satisfies `mu_max(X_g^T X_g) <= n`.
    UnitGroupSpectral,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::UnitColumns => "unit-columns",
            Normalization::UnitGroupSpectral => "unit-group-spectral",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "unit-columns" => Ok(Normalization::UnitColumns),
            "unit-group-spectral" => Ok(Normalization::UnitGroupSpectral),
            other => Err(Error::Parse(format!("unknown normalization `{other}`"))),
        }
    }
}

/// The n x p model matrix with normalization metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Array2<f64>,
    normalization: Normalization,
}

impl DesignMatrix {
    pub fn new(values: Array2<f64>, normalization: Normalization) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidDimension(
                "design matrix needs n >= 1 and p >= 1".into(),
            ));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("design matrix entry".into()));
        }
        Ok(DesignMatrix {
            values,
            normalization,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        let c = self.values.column(j);
        c.dot(&c).sqrt()
    }

    /// Columns of one group as a dense n x n_g matrix.
    pub fn group_columns(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), indices.len()));
        for (k, &j) in indices.iter().enumerate() {
            out.column_mut(k).assign(&self.values.column(j));
        }
        out
    }
}

/// Disjoint feature groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
    p: usize,
}

impl GroupStructure {
    pub fn new(groups: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        let mut seen = vec![false; p];
        for (g, idx) in groups.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InvalidGroups(format!("group {g} is empty")));
            }
            for &j in idx {
                if j >= p {
                    return Err(Error::InvalidGroups(format!(
                        "group {g} contains index {j} out of range for p={p}"
                    )));
                }
                if seen[j] {
                    return Err(Error::InvalidGroups(format!(
                        "index {j} appears in more than one group"
                    )));
                }
                seen[j] = true;
            }
        }
        Ok(GroupStructure { groups, p })
    }

    /// Contiguous equal-size groups covering all of {0..p-1}; requires
    /// `group_size` to divide `p`.
    pub fn equal_sized(p: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || p % group_size != 0 {
            return Err(Error::InvalidGroups(format!(
                "group size {group_size} does not divide p={p}"
            )));
        }
        let groups = (0..p / group_size)
            .map(|g| (g * group_size..(g + 1) * group_size).collect())
            .collect();
        GroupStructure::new(groups, p)
    }

    pub fn singletons(p: usize) -> Self {
        GroupStructure {
            groups: (0..p).map(|j| vec![j]).collect(),
            p,
        }
    }

    pub fn count(&self) -> usize {
        self.groups.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    /// Largest group size `g*`.
    pub fn g_star(&self) -> usize {
        self.groups.iter().map(|g| g.len()).max().unwrap_or(0)
    }

    /// Indices not covered by any group.
    pub fn uncovered(&self) -> Vec<usize> {
        let mut covered = vec![false; self.p];
        for g in &self.groups {
            for &j in g {
                covered[j] = true;
            }
        }
        (0..self.p).filter(|&j| !covered[j]).collect()
    }

    /// Same structure with every uncovered index appended as a singleton
    /// group, so the groups partition {0..p-1}.
    pub fn completed(&self) -> Self {
        let mut groups = self.groups.clone();
        for j in self.uncovered() {
            groups.push(vec![j]);
        }
        GroupStructure { groups, p: self.p }
    }
}

/// Minimal group cover of a support: for disjoint groups this is exactly the
/// set of groups intersecting the support.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCover {
    /// Group indices in `J*`.
    pub groups: Vec<usize>,
    /// `s* = |J*|`.
    pub s_star: usize,
    /// `m*` = total size of the covering groups.
    pub m_star: usize,
}

impl GroupCover {
    pub fn for_support(structure: &GroupStructure, support: &[usize]) -> Result<Self> {
        let mut covered = vec![false; structure.p()];
        let mut chosen = Vec::new();
        let mut m_star = 0;
        for (g, idx) in structure.groups().iter().enumerate() {
            if idx.iter().any(|j| support.contains(j)) {
                chosen.push(g);
                m_star += idx.len();
                for &j in idx {
                    covered[j] = true;
                }
            }
        }
        if let Some(&j) = support.iter().find(|&&j| !covered[j]) {
            return Err(Error::InvalidGroups(format!(
                "support index {j} not covered by any group"
            )));
        }
        Ok(GroupCover {
            s_star: chosen.len(),
            m_star,
            groups: chosen,
        })
    }
}

/// The sparse signal `beta*` with support bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub beta_star: Array1<f64>,
    pub support: Vec<usize>,
    pub k_star: usize,
    pub group_cover: Option<GroupCover>,
}

impl GroundTruth {
    pub fn from_beta(beta_star: Array1<f64>, groups: Option<&GroupStructure>) -> Result<Self> {
        let support: Vec<usize> = beta_star
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect();
        let group_cover = match groups {
            Some(g) => Some(GroupCover::for_support(g, &support)?),
            None => None,
        };
        Ok(GroundTruth {
            k_star: support.len(),
            support,
            beta_star,
            group_cover,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    Gaussian,
    Rademacher,
    Uniform,
}

impl NoiseFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Rademacher => "rademacher",
            NoiseFamily::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "rademacher" => Ok(NoiseFamily::Rademacher),
            "uniform" => Ok(NoiseFamily::Uniform),
            other => Err(Error::Parse(format!("unknown noise family `{other}`"))),
        }
    }
}

/// Sub-Gaussian noise with variance proxy `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(family: NoiseFamily, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(NoiseModel { family, sigma })
    }

    /// Draw one noise value from the given stream.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.sigma * z
            }
            NoiseFamily::Rademacher => {
                if rng.gen::<bool>() {
                    self.sigma
                } else {
                    -self.sigma
                }
            }
            NoiseFamily::Uniform => {
                let half = self.sigma * 3.0_f64.sqrt();
                rng.gen_range(-half..=half)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array1<f64> {
        Array1::from_iter((0..count).map(|_| self.draw(rng)))
    }
}

/// A fully materialized synthetic problem.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub x: DesignMatrix,
    pub y: Array1<f64>,
    pub truth: GroundTruth,
    pub noise: NoiseModel,
    pub seed: u64,
}

/// Assumption report from [`check_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub column_ok: bool,
    pub group_ok: bool,
    pub worst_column_norm: f64,
    pub worst_group_eig: Option<f64>,
}

/// Generate an i.i.d. standard-normal design and rescale it (shrink-only) so
/// the requested normalization holds exactly.
pub fn generate_design(
    n: usize,
    p: usize,
    seed: u64,
    normalization: Normalization,
    groups: Option<&GroupStructure>,
) -> Result<DesignMatrix> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidDimension(format!(
            "need n >= 1 and p >= 1, got n={n}, p={p}"
        )));
    }
    if normalization == Normalization::UnitGroupSpectral && groups.is_none() {
        return Err(Error::InvalidGroups(
            "unit-group-spectral normalization requires a group structure".into(),
        ));
    }
    let mut rng = seeds::rng(seed, &[tag::DESIGN]);
    let mut values: Array2<f64> =
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng));
    match normalization {
        Normalization::None => {}
        Normalization::UnitColumns => {
            let sqrt_n = (n as f64).sqrt();
            for mut col in values.axis_iter_mut(Axis(1)) {
                let norm = col.dot(&col).sqrt();
                let scale = (norm / sqrt_n).max(1.0);
                col.mapv_inplace(|x| x / scale);
            }
        }
        Normalization::UnitGroupSpectral => {
            let structure = groups.unwrap();
            if structure.p() != p {
                return Err(Error::InvalidGroups(format!(
                    "group structure built for p={}, design has p={p}",
                    structure.p()
                )));
            }
            for idx in structure.groups() {
                let sub = {
                    let mut m = Array2::zeros((n, idx.len()));
                    for (k, &j) in idx.iter().enumerate() {
                        m.column_mut(k).assign(&values.column(j));
                    }
                    m
                };
                let mu = linalg::max_eigenvalue_sym(linalg::gram(sub.view()).view(), 1e-12);
                let scale = (mu / n as f64).sqrt().max(1.0);
                for &j in idx {
                    values.column_mut(j).mapv_inplace(|x| x / scale);
                }
            }
        }
    }
    DesignMatrix::new(values, normalization)
}

/// Check the column-norm and group-spectral assumptions on a design.
pub fn check_assumptions(x: &DesignMatrix, groups: Option<&GroupStructure>) -> AssumptionReport {
    let n = x.n() as f64;
    let worst_column_norm = (0..x.p())
        .map(|j| x.column_norm(j))
        .fold(0.0_f64, f64::max);
    let column_ok = worst_column_norm <= n.sqrt() * (1.0 + ASSUMPTION_REL_TOL);
    let worst_group_eig = groups.map(|structure| {
        structure
            .groups()
            .iter()
            .map(|idx| {
                let sub = x.group_columns(idx);
                linalg::max_eigenvalue_sym(linalg::gram(sub.view()).view(), 1e-12)
            })
            .fold(0.0_f64, f64::max)
    });
    let group_ok = match worst_group_eig {
        Some(mu) => mu <= n * (1.0 + ASSUMPTION_REL_TOL),
        None => true,
    };
    AssumptionReport {
        column_ok,
        group_ok,
        worst_column_norm,
        worst_group_eig,
    }
}

/// Generate a k*-sparse signal with +-`amplitude` entries at seeded random
/// positions. When `grouped` is given, exactly `s_star` groups are selected
/// and every selected group receives at least one nonzero, so the minimal
/// cover has size `s_star` by construction.
pub fn generate_ground_truth(
    p: usize,
    k_star: usize,
    amplitude: f64,
    seed: u64,
    grouped: Option<(&GroupStructure, usize)>,
) -> Result<GroundTruth> {
    if k_star == 0 || k_star > p {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k* <= p, got k*={k_star}, p={p}"
        )));
    }
    if !amplitude.is_finite() || amplitude <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "amplitude must be positive and finite, got {amplitude}"
        )));
    }
    let mut rng = seeds::rng(seed, &[tag::TRUTH]);
    let mut beta = Array1::zeros(p);
    let positions: Vec<usize> = match grouped {
        None => {
            let mut all: Vec<usize> = (0..p).collect();
            all.shuffle(&mut rng);
            all.truncate(k_star);
            all
        }
        Some((structure, s_star)) => {
            if s_star == 0 || s_star > structure.count() {
                return Err(Error::InvalidParameter(format!(
                    "need 1 <= s* <= G, got s*={s_star}, G={}",
                    structure.count()
                )));
            }
            if k_star < s_star {
                return Err(Error::InvalidParameter(format!(
                    "k*={k_star} nonzeros cannot touch s*={s_star} groups"
                )));
            }
            let mut group_ids: Vec<usize> = (0..structure.count()).collect();
            group_ids.shuffle(&mut rng);
            group_ids.truncate(s_star);
            let union: usize = group_ids.iter().map(|&g| structure.groups()[g].len()).sum();
            if k_star > union {
                return Err(Error::InvalidParameter(format!(
                    "k*={k_star} does not fit inside the {s_star} chosen groups ({union} slots)"
                )));
            }
            // One nonzero per chosen group first, the rest uniform over the
            // remaining slots in the union.
            let mut positions = Vec::with_capacity(k_star);
            let mut remaining = Vec::new();
            for &g in &group_ids {
                let idx = &structure.groups()[g];
                let pick = idx[rng.gen_range(0..idx.len())];
                positions.push(pick);
                remaining.extend(idx.iter().copied().filter(|&j| j != pick));
            }
            remaining.shuffle(&mut rng);
            positions.extend(remaining.into_iter().take(k_star - s_star));
            positions
        }
    };
    for &j in &positions {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        beta[j] = sign * amplitude;
    }
    GroundTruth::from_beta(beta, grouped.map(|(g, _)| g))
}

/// Build the response `y = X beta* + eps` with noise drawn from the seeded
/// stream.
pub fn synthesize_response(
    x: &DesignMatrix,
    truth: &GroundTruth,
    noise: NoiseModel,
    seed: u64,
) -> Result<RegressionProblem> {
    if truth.beta_star.len() != x.p() {
        return Err(Error::InvalidDimension(format!(
            "beta* has length {}, design has p={}",
            truth.beta_star.len(),
            x.p()
        )));
    }
    let mut rng = seeds::rng(seed, &[tag::NOISE]);
    let eps = noise.sample(x.n(), &mut rng);
    let y = x.values().dot(&truth.beta_star) + &eps;
    Ok(RegressionProblem {
        x: x.clone(),
        y,
        truth: truth.clone(),
        noise,
        seed,
    })
}
