//! Gendered-to-neutral transfer round trips measured in mesh space.

use bodyfit::identity::{solve_gender_transfer, to_neutral, IdentityLabel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Explicit pseudo-inverse through SVD, kept separate from the library's
/// solve path.
fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut sigma_inv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            sigma_inv[(i, i)] = 1.0 / s;
        }
    }
    vt.transpose() * sigma_inv * u.transpose()
}

#[test]
fn in_span_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n3 = 90;
    let (bn, bg) = (6, 4);
    let basis_n = random_matrix(n3, bn, &mut rng);
    let template_n = random_matrix(n3, 1, &mut rng).column(0).into_owned();
    // Construct the gendered model inside the neutral span.
    let offset_true = random_matrix(bn, 1, &mut rng).column(0).into_owned();
    let mix = random_matrix(bg, bn, &mut rng);
    let template_g = &template_n + &basis_n * &offset_true;
    let basis_g = &basis_n * mix.transpose();

    let sol = solve_gender_transfer(
        &template_g,
        &basis_g,
        &template_n,
        &basis_n,
        IdentityLabel::Male,
    )
    .unwrap();
    assert!(sol.template_residual < 1e-9);
    for r in &sol.basis_residuals {
        assert!(*r < 1e-9);
    }
    for _ in 0..10 {
        let beta_g = DVector::from_fn(bg, |_, _| StandardNormal.sample(&mut rng));
        let beta_n = to_neutral(&beta_g, &sol.transfer).unwrap();
        let mesh_g = &template_g + &basis_g * &beta_g;
        let mesh_n = &template_n + &basis_n * &beta_n;
        let err = (mesh_g - mesh_n).norm();
        assert!(err < 1e-8, "round-trip mesh error {err}");
    }
}

#[test]
fn out_of_span_error_equals_pinv_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n3 = 60;
    let (bn, bg) = (5, 3);
    let basis_n = random_matrix(n3, bn, &mut rng);
    let template_n = random_matrix(n3, 1, &mut rng).column(0).into_owned();
    let template_g = random_matrix(n3, 1, &mut rng).column(0).into_owned();
    let basis_g = random_matrix(n3, bg, &mut rng);

    let sol = solve_gender_transfer(
        &template_g,
        &basis_g,
        &template_n,
        &basis_n,
        IdentityLabel::Female,
    )
    .unwrap();

    // Pseudo-inverse oracle for the same least-squares problems.
    let p = pinv(&basis_n);
    let offset_oracle = &p * (&template_g - &template_n);
    assert!((&sol.transfer.offset - &offset_oracle).norm() < 1e-10);
    for i in 0..bg {
        let rhs: DVector<f64> = basis_g.column(i).into_owned();
        let row_oracle = &p * &rhs;
        assert!((sol.transfer.mapping.row(i).transpose() - row_oracle).norm() < 1e-10);
    }

    for _ in 0..10 {
        let beta_g = DVector::from_fn(bg, |_, _| StandardNormal.sample(&mut rng));
        let beta_n = to_neutral(&beta_g, &sol.transfer).unwrap();
        let mesh_err = ((&template_g + &basis_g * &beta_g)
            - (&template_n + &basis_n * &beta_n))
            .norm();
        // The residual of the least-squares solution with the same
        // right-hand side, computed through the pseudo-inverse oracle.
        let rhs = (&template_g - &template_n) + &basis_g * &beta_g;
        let coeffs = &p * &rhs;
        let residual = (&basis_n * coeffs - rhs).norm();
        assert!(
            (mesh_err - residual).abs() < 1e-8,
            "mesh error {mesh_err} vs pinv residual {residual}"
        );
    }
}

#[test]
fn unit_normal_betas_map_to_offset_mean_and_mapping_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (bn, bg) = (3, 2);
    let offset = DVector::from_vec(vec![0.5, -0.25, 1.0]);
    let mapping = DMatrix::from_row_slice(
        bg,
        bn,
        &[0.8, 0.1, -0.3, 0.2, 1.1, 0.4],
    );
    let transfer = bodyfit::identity::GenderTransfer {
        offset: offset.clone(),
        mapping: mapping.clone(),
        label: IdentityLabel::Male,
    };
    let n = 100_000;
    let mut mean = DVector::zeros(bn);
    let mut cov = DMatrix::zeros(bn, bn);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let beta_g = DVector::from_fn(bg, |_, _| StandardNormal.sample(&mut rng));
        let beta_n = to_neutral(&beta_g, &transfer).unwrap();
        mean += &beta_n;
        samples.push(beta_n);
    }
    mean /= n as f64;
    for s in &samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    let expected_cov = mapping.transpose() * &mapping;
    assert!((&mean - &offset).norm() < 0.02, "mean error {}", (&mean - &offset).norm());
    assert!(
        (&cov - &expected_cov).norm() / expected_cov.norm() < 0.03,
        "cov error {}",
        (&cov - &expected_cov).norm() / expected_cov.norm()
    );
}
