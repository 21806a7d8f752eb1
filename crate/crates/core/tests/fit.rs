mod common;

use common::random_params;
use nalgebra::{DMatrix, DVector};
use projected_normal::fit::{
    fit, fit_pn, fit_pnbc, loss, BMode, FitConfig, FitProblem, Objective, SigmaMode,
};
use projected_normal::moments::approx_moments;
use projected_normal::sampling::{sample_mu, EigDist, RngHandle};
use projected_normal::spd::{check_spd, SortedEigen};
use projected_normal::{GaussianParams, ProjectionVariant, VariantKind};
use proptest::prelude::*;

const FAMILIES: [(VariantKind, SigmaMode, BMode); 8] = [
    (VariantKind::Pn, SigmaMode::FullSigma, BMode::None),
    (VariantKind::Pn, SigmaMode::IsotropicSigma, BMode::None),
    (VariantKind::PnC, SigmaMode::FullSigma, BMode::None),
    (VariantKind::PnB, SigmaMode::FullSigma, BMode::Rank1),
    (VariantKind::PnB, SigmaMode::FullSigma, BMode::Full),
    (VariantKind::PnBc, SigmaMode::IsotropicSigma, BMode::Rank1),
    (VariantKind::PnBc, SigmaMode::FullSigma, BMode::Rank1),
    (VariantKind::PnBc, SigmaMode::FullSigma, BMode::Full),
];

/// Observed moments from a random projected normal, used only as targets.
fn observed(n: usize, rng: &mut RngHandle) -> (DVector<f64>, DMatrix<f64>) {
    let p = random_params(n, 1.0, 0.5, EigDist::Exponential, rng);
    let m = approx_moments(&p, &ProjectionVariant::pn()).unwrap();
    (m.gamma, m.psi)
}

fn random_theta(dim: usize, rng: &mut RngHandle) -> Vec<f64> {
    // small coordinates keep exp(W) and log-scalars in a sane range
    sample_mu(dim, rng)
        .iter()
        .map(|v| v * (dim as f64).sqrt() * 0.5)
        .collect()
}

fn central_difference(obj: &Objective, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[i] += h;
            minus[i] -= h;
            (obj.loss(&plus).unwrap() - obj.loss(&minus).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), n in 2usize..6, family in 0usize..8, lambda in 0.05..0.95f64) {
        let mut rng = RngHandle::new(seed);
        let (gamma, psi) = observed(n, &mut rng);
        let (kind, sigma, b) = FAMILIES[family];
        let problem = FitProblem::new(gamma, psi, kind, sigma, b, lambda).unwrap();
        let obj = Objective::new(&problem).unwrap();
        let theta = random_theta(obj.dim(), &mut rng);
        let (_, g) = obj.loss_and_grad(&theta).unwrap();
        let fd = central_difference(&obj, &theta, 1e-5);
        prop_assert!(rel_err(&g, &fd) < 1e-4, "{:?}: {:?} vs {:?}", FAMILIES[family], g, fd);
    }

    #[test]
    fn joint_scaling_leaves_the_pn_loss_unchanged(seed in any::<u64>(), n in 2usize..8, k in 0.1..10.0f64) {
        let mut rng = RngHandle::new(seed);
        let (gamma, psi) = observed(n, &mut rng);
        let problem = FitProblem::pn(gamma, psi, 0.9).unwrap();
        let p = random_params(n, 1.0, 0.5, EigDist::Exponential, &mut rng);
        let scaled = GaussianParams::new(p.mu() * k, p.sigma() * (k * k)).unwrap();
        let v = ProjectionVariant::pn();
        let a = loss(&p, &v, &problem).unwrap();
        let b = loss(&scaled, &v, &problem).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a), "{} vs {}", a, b);
    }

    #[test]
    fn decoded_coordinates_satisfy_the_constraints(seed in any::<u64>(), n in 2usize..7, family in 0usize..8) {
        let mut rng = RngHandle::new(seed);
        let (gamma, psi) = observed(n, &mut rng);
        let (kind, sigma, b) = FAMILIES[family];
        let problem = FitProblem::new(gamma, psi, kind, sigma, b, 0.9).unwrap();
        let obj = Objective::new(&problem).unwrap();
        let (params, variant) = obj.decode(&random_theta(obj.dim(), &mut rng)).unwrap();
        prop_assert!((params.mu().norm() - 1.0).abs() < 1e-12);
        prop_assert!(check_spd(params.sigma()).is_ok());
        prop_assert_eq!(variant.kind(), kind);
        if let Some(b) = variant.b() {
            prop_assert!(check_spd(b).is_ok());
        }
        if kind.has_c() {
            prop_assert!(variant.c() > 0.0);
        }
    }
}

#[test]
fn zero_lambda_ignores_the_covariance_target() {
    let mut rng = RngHandle::new(4);
    let (gamma, psi) = observed(4, &mut rng);
    let (_, other_psi) = observed(4, &mut rng);
    let a = FitProblem::pn(gamma.clone(), psi, 0.0).unwrap();
    let b = FitProblem::pn(gamma.clone(), other_psi, 0.0).unwrap();
    for _ in 0..10 {
        let p = random_params(4, 1.0, 0.5, EigDist::Exponential, &mut rng);
        let v = ProjectionVariant::pn();
        let la = loss(&p, &v, &a).unwrap();
        assert_eq!(la, loss(&p, &v, &b).unwrap());
        let m = approx_moments(&p, &v).unwrap();
        assert!((la - (&m.gamma - &gamma).norm_squared()).abs() < 1e-15);
    }
}

#[test]
fn fit_results_satisfy_their_constraints() {
    let mut rng = RngHandle::new(5);
    let cfg = FitConfig {
        cycles: 2,
        ..FitConfig::default()
    };

    let (gamma, psi) = observed(4, &mut rng);
    let r = fit_pn(
        &FitProblem::pn(gamma.clone(), psi.clone(), 0.9).unwrap(),
        &cfg,
    )
    .unwrap();
    assert!((r.params_hat.mu().norm() - 1.0).abs() < 1e-12);
    check_spd(r.params_hat.sigma()).unwrap();
    assert_eq!(r.variant_hat.kind(), VariantKind::Pn);

    let r = fit_pnbc(&FitProblem::pnbc_rank1(gamma, psi, 0.9).unwrap(), &cfg).unwrap();
    assert!((r.params_hat.mu().norm() - 1.0).abs() < 1e-12);
    let s = r.params_hat.sigma();
    assert!((s - DMatrix::identity(4, 4) * s[(0, 0)]).amax() == 0.0 && s[(0, 0)] > 0.0);
    let rank1 = r.rank1_hat.as_ref().unwrap();
    assert!(rank1.b > 0.0);
    let v = DVector::from_vec(rank1.v.clone());
    assert!((v.norm() - 1.0).abs() < 1e-12);
    let b = r.variant_hat.b().unwrap();
    assert!((b - (DMatrix::identity(4, 4) + &v * v.transpose() * rank1.b)).amax() < 1e-12);
    assert!(r.variant_hat.c() > 0.0);
}

#[test]
fn best_so_far_trace_is_monotone() {
    let mut rng = RngHandle::new(6);
    let (gamma, psi) = observed(3, &mut rng);
    let r = fit_pn(
        &FitProblem::pn(gamma, psi, 0.9).unwrap(),
        &FitConfig {
            cycles: 3,
            ..FitConfig::default()
        },
    )
    .unwrap();
    assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*r.loss_trace.last().unwrap(), r.final_loss);
    assert!(r.final_loss <= r.loss_trace[0]);
    assert_eq!(r.iterations, 3 * 80);
}

#[test]
fn identical_inputs_give_identical_fits() {
    let mut rng = RngHandle::new(7);
    let (gamma, psi) = observed(5, &mut rng);
    let cfg = FitConfig {
        cycles: 2,
        ..FitConfig::default()
    };
    let p = FitProblem::pnbc_rank1(gamma, psi, 0.95).unwrap();
    let a = fit(&p, &cfg).unwrap();
    let b = fit(&p, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn axis_aligned_rank_one_b_is_recovered() {
    let n = 4;
    let b_true = 3.0;
    let mut b = DMatrix::identity(n, n);
    b[(0, 0)] += b_true;
    let mu = DVector::from_vec(vec![0.6, 0.8, 0.0, 0.0]);
    let params = GaussianParams::isotropic(mu, 0.05).unwrap();
    let variant = ProjectionVariant::pn_bc(b, 0.4).unwrap();
    let m = approx_moments(&params, &variant).unwrap();
    let r = fit_pnbc(
        &FitProblem::pnbc_rank1(m.gamma, m.psi, 0.9).unwrap(),
        &FitConfig::default(),
    )
    .unwrap();
    let rank1 = r.rank1_hat.unwrap();
    assert!(
        (rank1.b / b_true - 1.0).abs() < 1e-3,
        "b = {} (loss {})",
        rank1.b,
        r.final_loss
    );
    assert!(rank1.v[0].abs() > 1.0 - 1e-6, "v = {:?}", rank1.v);
}

#[test]
fn realizable_targets_are_fit_to_near_zero_loss() {
    let mut rng = RngHandle::new(8);
    let params = random_params(3, 1.0, 0.25, EigDist::Exponential, &mut rng);
    let m = approx_moments(&params, &ProjectionVariant::pn()).unwrap();
    let r = fit_pn(
        &FitProblem::pn(m.gamma, m.psi, 0.9).unwrap(),
        &FitConfig::default(),
    )
    .unwrap();
    assert!(r.final_loss < 1e-8, "{}", r.final_loss);
    assert!(r.params_hat.mu().dot(params.mu()) / params.mu().norm() > 0.99);
}

#[test]
fn problems_round_trip_through_json() {
    let mut rng = RngHandle::new(9);
    let (gamma, psi) = observed(3, &mut rng);
    let p = FitProblem::pnbc_rank1(gamma, psi, 0.66).unwrap();
    let text = serde_json::to_string(&p).unwrap();
    let back: FitProblem = serde_json::from_str(&text).unwrap();
    assert_eq!(p, back);
    let bad = text.replace("0.66", "1.5");
    assert!(serde_json::from_str::<FitProblem>(&bad).is_err());
}

#[test]
fn wrong_family_is_rejected() {
    let mut rng = RngHandle::new(10);
    let (gamma, psi) = observed(3, &mut rng);
    let p = FitProblem::pn(gamma.clone(), psi.clone(), 0.9).unwrap();
    assert!(fit_pnbc(&p, &FitConfig::default()).is_err());
    let p = FitProblem::pnbc_rank1(gamma, psi, 0.9).unwrap();
    assert!(fit_pn(&p, &FitConfig::default()).is_err());
    let bad = FitConfig {
        iterations_per_cycle: 0,
        ..FitConfig::default()
    };
    assert!(fit(&p, &bad).is_err());
}

#[test]
fn isotropic_initial_sigma_uses_the_mean_psi_eigenvalue() {
    let mut rng = RngHandle::new(11);
    let (gamma, psi) = observed(4, &mut rng);
    let p = FitProblem::pnbc_rank1(gamma, psi.clone(), 0.9).unwrap();
    let obj = Objective::new(&p).unwrap();
    let (params, variant) = obj
        .decode(&obj.initial_theta(&FitConfig::default()).unwrap())
        .unwrap();
    assert!((params.sigma()[(0, 0)] - psi.trace() / 4.0).abs() < 1e-12);
    // v starts along the smallest-eigenvalue direction of Psi
    let eig = SortedEigen::new(&psi);
    let v0 = eig.vectors.column(0);
    let b = variant.b().unwrap();
    let bv = b * v0;
    assert!((bv - v0 * (1.0 + FitConfig::default().b_init)).amax() < 1e-10);
}
