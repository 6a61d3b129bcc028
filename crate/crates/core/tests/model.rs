mod common;

use approx::assert_relative_eq;
use ndarray::Array2;
use sparselab::linalg;
use sparselab::model::{
    check_assumptions, generate_design, generate_ground_truth, read_problem, synthesize_response,
    write_problem, GroupCover, GroupStructure, NoiseFamily, NoiseModel, Normalization,
};

#[test]
fn group_spectral_norms_match_jacobi_oracle() {
    let groups = GroupStructure::equal_sized(24, 6).unwrap();
    let x = generate_design(40, 24, 11, Normalization::UnitGroupSpectral, Some(&groups)).unwrap();
    for idx in groups.groups() {
        let cols = x.group_columns(idx);
        let gram = cols.t().dot(&cols);
        let eigs = common::jacobi_eigenvalues(&gram);
        let oracle_max = *eigs.last().unwrap();
        let power = linalg::max_eigenvalue_sym(gram.view(), 1e-12);
        assert_relative_eq!(power, oracle_max, max_relative = 1e-8);
        assert!(oracle_max <= 40.0 * (1.0 + 1e-9));
    }
}

#[test]
fn unit_columns_design_satisfies_assumptions() {
    let x = generate_design(30, 50, 3, Normalization::UnitColumns, None).unwrap();
    for j in 0..50 {
        assert!(x.column_norm(j) <= 30f64.sqrt() * (1.0 + 1e-12));
    }
    let report = check_assumptions(&x, None);
    assert!(report.column_ok && report.group_ok);
}

#[test]
fn group_normalized_design_satisfies_assumptions() {
    let groups = GroupStructure::equal_sized(32, 8).unwrap();
    let x = generate_design(20, 32, 5, Normalization::UnitGroupSpectral, Some(&groups)).unwrap();
    let report = check_assumptions(&x, Some(&groups));
    assert!(report.column_ok && report.group_ok, "worst group eig {:?}", report.worst_group_eig);
    // spectral normalization keeps individual columns bounded too
    for j in 0..32 {
        assert!(x.column_norm(j) <= 20f64.sqrt() * (1.0 + 1e-9));
    }
}

#[test]
fn unnormalized_design_flagged() {
    let values = Array2::from_elem((4, 3), 10.0);
    let x = sparselab::model::DesignMatrix::new(values, Normalization::None).unwrap();
    let report = check_assumptions(&x, None);
    assert!(!report.column_ok);
}

#[test]
fn minimal_cover_matches_brute_force() {
    // brute force over all subsets of groups: smallest cover of the support
    let groups = GroupStructure::new(
        vec![vec![0, 1, 2], vec![3, 4], vec![5], vec![6, 7, 8, 9]],
        10,
    )
    .unwrap();
    let support = vec![1, 4, 9];
    let cover = GroupCover::for_support(&groups, &support).unwrap();
    let g = groups.count();
    let mut best: Option<(usize, usize)> = None;
    for mask in 0..(1usize << g) {
        let chosen: Vec<usize> = (0..g).filter(|i| mask >> i & 1 == 1).collect();
        let covered = support.iter().all(|j| {
            chosen
                .iter()
                .any(|&gi| groups.groups()[gi].contains(j))
        });
        if covered {
            let m: usize = chosen.iter().map(|&gi| groups.groups()[gi].len()).sum();
            let cand = (chosen.len(), m);
            if best.map_or(true, |b| cand < b) {
                best = Some(cand);
            }
        }
    }
    let (s_best, m_best) = best.unwrap();
    // disjoint groups: the intersecting groups are the unique minimal cover
    assert_eq!(cover.s_star, s_best);
    assert_eq!(cover.m_star, m_best);
}

#[test]
fn problem_file_round_trips() {
    let groups = GroupStructure::equal_sized(12, 4).unwrap();
    let x = generate_design(10, 12, 3, Normalization::UnitGroupSpectral, Some(&groups)).unwrap();
    let truth = generate_ground_truth(12, 5, 2.5, 3, Some((&groups, 2))).unwrap();
    let noise = NoiseModel::new(NoiseFamily::Uniform, 0.7).unwrap();
    let problem = synthesize_response(&x, &truth, noise, 3).unwrap();

    let mut buf = Vec::new();
    write_problem(&mut buf, &problem, Some(&groups)).unwrap();
    let (back, back_groups) = read_problem(&mut buf.as_slice()).unwrap();
    assert_eq!(back.x, problem.x);
    assert_eq!(back.y, problem.y);
    assert_eq!(back.truth.beta_star, problem.truth.beta_star);
    assert_eq!(back_groups.as_ref(), Some(&groups));

    let mut buf2 = Vec::new();
    write_problem(&mut buf2, &back, back_groups.as_ref()).unwrap();
    assert_eq!(buf, buf2);
}

#[test]
fn grouped_truth_respects_structure() {
    let groups = GroupStructure::equal_sized(40, 8).unwrap();
    for seed in 0..20 {
        let truth = generate_ground_truth(40, 12, 1.0, seed, Some((&groups, 2))).unwrap();
        let cover = truth.group_cover.as_ref().unwrap();
        assert_eq!(cover.s_star, 2);
        assert_eq!(cover.m_star, 16);
        assert_eq!(truth.support.len(), 12);
        // every support index sits inside a covering group
        for &j in &truth.support {
            assert!(cover
                .groups
                .iter()
                .any(|&gi| groups.groups()[gi].contains(&j)));
        }
    }
}

#[test]
fn noise_sample_moments() {
    let mut rng = sparselab::seeds::rng(99, &[1]);
    for family in [NoiseFamily::Gaussian, NoiseFamily::Rademacher, NoiseFamily::Uniform] {
        let noise = NoiseModel::new(family, 2.0).unwrap();
        let sample = noise.sample(200_000, &mut rng);
        let mean = sample.sum() / sample.len() as f64;
        let var = sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / sample.len() as f64;
        assert!(mean.abs() < 0.02, "{family:?} mean {mean}");
        assert_relative_eq!(var, 4.0, max_relative = 0.02);
    }
}
