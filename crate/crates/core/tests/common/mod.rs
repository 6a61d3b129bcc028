//! Independent oracles shared by the integration tests. Everything here is
//! implemented from first principles so library results can be checked
//! against a second, unrelated computation.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sparselab::seeds;

/// All eigenvalues of a symmetric matrix via the cyclic Jacobi rotation
/// method. O(p^3) per sweep; fine for the small matrices used in tests.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let p = a.nrows();
    assert_eq!(p, a.ncols());
    let mut m = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.iter().map(|v| v * v).sum::<f64>().sqrt()) {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = m[[i, j]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[i, i]];
                let aqq = m[[j, j]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mki = m[[k, i]];
                    let mkj = m[[k, j]];
                    m[[k, i]] = c * mki - s * mkj;
                    m[[k, j]] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let mik = m[[i, k]];
                    let mjk = m[[j, k]];
                    m[[i, k]] = c * mik - s * mjk;
                    m[[j, k]] = s * mik + c * mjk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..p).map(|i| m[[i, i]]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// An n x p design with X^T X = n I, built by Gram-Schmidt on a random
/// Gaussian matrix and scaled by sqrt(n). Requires n >= p.
pub fn orthogonal_design(n: usize, p: usize, seed: u64) -> Array2<f64> {
    assert!(n >= p);
    let mut rng = seeds::rng(seed, &[0xa11]);
    loop {
        let raw: Array2<f64> = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng));
        let mut q = Array2::zeros((n, p));
        let mut ok = true;
        for j in 0..p {
            let mut v = raw.column(j).to_owned();
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v = &v - &(&qi.to_owned() * proj);
            }
            let norm = v.dot(&v).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).assign(&(&v / norm));
        }
        if ok {
            return q * (n as f64).sqrt();
        }
    }
}

/// Monte-Carlo sphere oracle for the restricted eigenvalue: the smallest
/// observed `||X z|| / (sqrt(n) ||z||)` over unit vectors in the Lasso cone
/// of any size-k support. Half the budget samples the cone globally; the
/// rest anneals around the running best with in-cone rejection, so the total
/// number of evaluated sphere points equals `samples`.
pub fn sphere_oracle_kappa(
    x: &Array2<f64>,
    k: usize,
    gamma1: f64,
    gamma2: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    let supports = k_subsets(p, k);
    let mut rng = seeds::rng(seed, &[0x5a]);

    let in_cone = |z: &Array1<f64>, support: &[usize]| -> bool {
        let mut on_l1 = 0.0;
        let mut on_l2 = 0.0;
        let mut off_l1 = 0.0;
        for j in 0..p {
            if support.contains(&j) {
                on_l1 += z[j].abs();
                on_l2 += z[j] * z[j];
            } else {
                off_l1 += z[j].abs();
            }
        }
        off_l1 <= gamma1 * on_l1 + gamma2 * on_l2.sqrt() + 1e-12
    };
    let quotient = |z: &Array1<f64>| -> f64 {
        let xz = x.dot(z);
        xz.dot(&xz).sqrt() / ((n as f64).sqrt() * z.dot(z).sqrt())
    };

    let mut best = f64::INFINITY;
    let global = samples / 2;
    let per_support = (global / supports.len().max(1)).max(1);
    for support in &supports {
        let mut sup_best = f64::INFINITY;
        let mut sup_z: Option<Array1<f64>> = None;
        for trial in 0..per_support {
            let mut z = Array1::zeros(p);
            let mut on = vec![0.0_f64; k];
            for v in on.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let l1: f64 = on.iter().map(|v| v.abs()).sum();
            let l2: f64 = on.iter().map(|v| v * v).sum::<f64>().sqrt();
            if l2 == 0.0 {
                continue;
            }
            let budget = gamma1 * l1 + gamma2 * l2;
            // bias samples toward the cone boundary and toward sparse
            // off-support mass, where minimizers tend to live
            let scale = match trial % 3 {
                0 => budget,
                1 => budget * rng.gen::<f64>(),
                _ => budget,
            };
            let heavy = trial % 3 == 2;
            let mut off: Vec<f64> = if heavy {
                let mut v = vec![0.0; p - k];
                v[rng.gen_range(0..p - k)] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                v
            } else {
                (0..p - k).map(|_| StandardNormal.sample(&mut rng)).collect()
            };
            let off_l1: f64 = off.iter().map(|v| v.abs()).sum();
            if off_l1 > 0.0 {
                for v in off.iter_mut() {
                    *v *= scale / off_l1;
                }
            }
            let mut oi = 0;
            for j in 0..p {
                if let Some(pos) = support.iter().position(|&s| s == j) {
                    z[j] = on[pos];
                } else {
                    z[j] = off[oi];
                    oi += 1;
                }
            }
            let q = quotient(&z);
            if q < sup_best {
                sup_best = q;
                sup_z = Some(z);
            }
        }

        // annealed local refinement per support: shrinking Gaussian
        // perturbations with rejection of points that leave the cone
        if let Some(mut z) = sup_z {
            let stages = 40;
            let per_stage = (samples - global) / supports.len().max(1) / stages;
            let mut radius = 0.5;
            for _ in 0..stages {
                for _ in 0..per_stage {
                    let cand = Array1::from_shape_fn(p, |j| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        z[j] + radius * g
                    });
                    if cand.dot(&cand) < 1e-20 || !in_cone(&cand, support) {
                        continue;
                    }
                    let q = quotient(&cand);
                    if q < sup_best {
                        sup_best = q;
                        z = cand;
                    }
                }
                radius *= 0.8;
            }
        }
        best = best.min(sup_best);
    }
    best
}

fn k_subsets(p: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < p - (k - i) {
                current[i] += 1;
                for j in (i + 1)..k {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
        }
    }
}
