//! Restricted-eigenvalue estimation.
//!
//! Minimizes the Rayleigh quotient `z^T X^T X z / (n ||z||^2)` over the
//! intersection of the unit sphere with a cone, by multi-start projected
//! gradient descent per candidate support. The result is an upper estimate
//! of the true constant (the inner infimum may not be attained), with an
//! in-cone witness whose quotient is recomputed independently.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DesignMatrix, GroupStructure};
use crate::seeds;
use crate::theory::{cone_membership, ConeSpec};

/// Hard cap on the number of enumerated supports in exact mode.
pub const ENUMERATION_LIMIT: usize = 100_000;

const PGD_ITERS: usize = 600;

#[derive(Debug, Clone)]
pub enum ConeFamily {
    Lasso {
        k: usize,
        gamma1: f64,
        gamma2: f64,
    },
    Group {
        groups: GroupStructure,
        s: usize,
        eps1: f64,
        eps2: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReMode {
    /// Enumerate every support of the maximal size.
    Exact,
    /// Sample this many supports uniformly.
    Sampled(usize),
}

#[derive(Debug, Clone)]
pub struct ReEstimate {
    /// Smallest `||X z|| / (sqrt(n) ||z||)` found (upper estimate of kappa).
    pub kappa: f64,
    /// Unit vector attaining `kappa`, verified to lie in its cone.
    pub witness: Array1<f64>,
    /// The support (feature indices for the L1 cone, group indices for the
    /// group cone) at which the minimum was found.
    pub support: Vec<usize>,
    /// Number of supports examined.
    pub supports_examined: usize,
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)?;
        acc /= i + 1;
        if acc > ENUMERATION_LIMIT * 1000 {
            return None;
        }
    }
    Some(acc)
}

/// All k-subsets of 0..n in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Scale the off-support part of `z` until the cone inequality holds.
/// The right-hand side only involves the on-support part, so this maps any
/// vector into the cone without moving its support coordinates.
fn project_lasso_cone(z: &mut Array1<f64>, support: &[usize], gamma1: f64, gamma2: f64) {
    let mut on = vec![false; z.len()];
    for &j in support {
        on[j] = true;
    }
    let mut l1_in = 0.0;
    let mut l2_in = 0.0;
    let mut l1_out = 0.0;
    for (j, &v) in z.iter().enumerate() {
        if on[j] {
            l1_in += v.abs();
            l2_in += v * v;
        } else {
            l1_out += v.abs();
        }
    }
    let rhs = gamma1 * l1_in + gamma2 * l2_in.sqrt();
    if l1_out > rhs {
        let scale = if l1_out > 0.0 { rhs / l1_out } else { 0.0 };
        for (j, v) in z.iter_mut().enumerate() {
            if !on[j] {
                *v *= scale;
            }
        }
    }
}

fn project_group_cone(
    z: &mut Array1<f64>,
    groups: &GroupStructure,
    j_set: &[usize],
    eps1: f64,
    eps2: f64,
) {
    let mut chosen = vec![false; groups.count()];
    for &g in j_set {
        chosen[g] = true;
    }
    let mut sum_in = 0.0;
    let mut t_norm2 = 0.0;
    let mut sum_out = 0.0;
    for (g, idx) in groups.groups().iter().enumerate() {
        let norm2: f64 = idx.iter().map(|&j| z[j] * z[j]).sum();
        if chosen[g] {
            sum_in += norm2.sqrt();
            t_norm2 += norm2;
        } else {
            sum_out += norm2.sqrt();
        }
    }
    let rhs = eps1 * sum_in + eps2 * t_norm2.sqrt();
    if sum_out > rhs {
        let scale = if sum_out > 0.0 { rhs / sum_out } else { 0.0 };
        for (g, idx) in groups.groups().iter().enumerate() {
            if !chosen[g] {
                for &j in idx {
                    z[j] *= scale;
                }
            }
        }
    }
}

struct ConeOps<'a> {
    family: &'a ConeFamily,
}

impl ConeOps<'_> {
    fn project(&self, z: &mut Array1<f64>, support: &[usize]) {
        match self.family {
            ConeFamily::Lasso { gamma1, gamma2, .. } => {
                project_lasso_cone(z, support, *gamma1, *gamma2)
            }
            ConeFamily::Group {
                groups, eps1, eps2, ..
            } => project_group_cone(z, groups, support, *eps1, *eps2),
        }
    }

    fn spec<'s>(&'s self, support: &[usize]) -> ConeSpec<'s> {
        match self.family {
            ConeFamily::Lasso { gamma1, gamma2, .. } => ConeSpec::Lasso {
                support: support.to_vec(),
                gamma1: *gamma1,
                gamma2: *gamma2,
            },
            ConeFamily::Group {
                groups, eps1, eps2, ..
            } => ConeSpec::Group {
                groups,
                j_set: support.to_vec(),
                eps1: *eps1,
                eps2: *eps2,
            },
        }
    }

    /// Feature indices a random start should live on to guarantee a valid
    /// in-cone seed point.
    fn seed_indices(&self, support: &[usize]) -> Vec<usize> {
        match self.family {
            ConeFamily::Lasso { .. } => support.to_vec(),
            ConeFamily::Group { groups, .. } => support
                .iter()
                .flat_map(|&g| groups.groups()[g].iter().copied())
                .collect(),
        }
    }
}

/// Estimate the restricted eigenvalue constant of `X` over a cone family.
///
/// Exact mode enumerates every support of size `k` (resp. `s`); sampled mode
/// draws supports uniformly. `budget` is the number of projected-gradient
/// starts per support.
pub fn estimate_re_constant(
    x: &DesignMatrix,
    family: &ConeFamily,
    mode: ReMode,
    budget: usize,
    seed: u64,
) -> Result<ReEstimate> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    let p = x.p();
    let n = x.n() as f64;
    let (universe, size) = match family {
        ConeFamily::Lasso { k, .. } => {
            if *k == 0 || *k > p {
                return Err(Error::InvalidParameter(format!(
                    "need 1 <= k <= p, got k={k}, p={p}"
                )));
            }
            (p, *k)
        }
        ConeFamily::Group { groups, s, .. } => {
            if groups.p() != p {
                return Err(Error::InvalidGroups(format!(
                    "group structure built for p={}, design has p={p}",
                    groups.p()
                )));
            }
            if *s == 0 || *s > groups.count() {
                return Err(Error::InvalidParameter(format!(
                    "need 1 <= s <= G, got s={s}, G={}",
                    groups.count()
                )));
            }
            (groups.count(), *s)
        }
    };

    let supports: Vec<Vec<usize>> = match mode {
        ReMode::Exact => {
            let count = binomial(universe, size)
                .ok_or(Error::EnumerationOverflow(usize::MAX, ENUMERATION_LIMIT))?;
            if count > ENUMERATION_LIMIT {
                return Err(Error::EnumerationOverflow(count, ENUMERATION_LIMIT));
            }
            combinations(universe, size)
        }
        ReMode::Sampled(count) => {
            if count == 0 {
                return Err(Error::InvalidParameter("sample count must be >= 1".into()));
            }
            let mut rng = seeds::rng(seed, &[0x7e, 0]);
            use rand::seq::SliceRandom;
            (0..count)
                .map(|_| {
                    let mut all: Vec<usize> = (0..universe).collect();
                    all.shuffle(&mut rng);
                    all.truncate(size);
                    all.sort_unstable();
                    all
                })
                .collect()
        }
    };

    let a: Array2<f64> = x.values().t().dot(&x.values());
    let lmax = linalg::max_eigenvalue_sym(a.view(), 1e-10).max(f64::MIN_POSITIVE);
    let step = n / (2.0 * lmax);
    let quotient = |z: &Array1<f64>| -> f64 { z.dot(&a.dot(z)) / (n * z.dot(z)) };

    let ops = ConeOps { family };
    let mut best_q = f64::INFINITY;
    let mut best_z: Option<Array1<f64>> = None;
    let mut best_support = Vec::new();

    for (s_idx, support) in supports.iter().enumerate() {
        let seed_idx = ops.seed_indices(support);
        for start in 0..budget {
            let mut rng = seeds::rng(seed, &[0x7e, 1, s_idx as u64, start as u64]);
            let mut z: Array1<f64> =
                Array1::from_shape_fn(p, |_| StandardNormal.sample(&mut rng));
            ops.project(&mut z, support);
            let mut norm = z.dot(&z).sqrt();
            if norm == 0.0 {
                // fall back to a start supported inside the cone's own support
                z = Array1::zeros(p);
                for &j in &seed_idx {
                    z[j] = StandardNormal.sample(&mut rng);
                }
                norm = z.dot(&z).sqrt().max(f64::MIN_POSITIVE);
            }
            z /= norm;

            let mut q = quotient(&z);
            for _ in 0..PGD_ITERS {
                let az = a.dot(&z);
                // Riemannian gradient of the quotient on the sphere
                let rq = z.dot(&az) / n;
                let grad = (az / n - &z * rq) * 2.0;
                let mut next = &z - &(grad * step);
                ops.project(&mut next, support);
                let nn = next.dot(&next).sqrt();
                if nn == 0.0 {
                    break;
                }
                next /= nn;
                let q_next = quotient(&next);
                if q_next <= q {
                    let stall = q - q_next <= 1e-15 * q.max(1e-30);
                    z = next;
                    q = q_next;
                    if stall {
                        break;
                    }
                } else {
                    break;
                }
            }
            if q < best_q {
                best_q = q;
                best_z = Some(z.clone());
                best_support = support.clone();
            }
        }
    }

    let witness = best_z.expect("at least one support examined");
    // verify the witness and recompute its quotient straight from X
    let check = cone_membership(witness.view(), &ops.spec(&best_support));
    debug_assert!(check.member, "witness left the cone: slack {}", check.slack);
    let xw = x.values().dot(&witness);
    // kappa is the quotient on the ||.|| scale: ||X z|| / (sqrt(n) ||z||)
    let kappa = (xw.dot(&xw) / (n * witness.dot(&witness))).sqrt();
    Ok(ReEstimate {
        kappa,
        witness,
        support: best_support,
        supports_examined: supports.len(),
    })
}
