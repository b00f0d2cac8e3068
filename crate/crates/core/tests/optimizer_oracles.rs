use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cswm_core::data::{generate_synthetic, SyntheticShiftSpec};
use cswm_core::eval::{accuracy, baseline_source_only};
use cswm_core::model::{orthonormality_error, HyperParams, SourceWeights, TransferModel};
use cswm_core::optimizer::{
    fit, initialize, principal_directions, solve_pi, solve_theta, solve_w, theta_cost_matrix, update_phi_psi,
    TrainingContext,
};
use cswm_core::DomainDataset;

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn orthonormal_rows(rng: &mut ChaCha8Rng, r: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, r, |_, _| rng.sample(StandardNormal)).qr().q().transpose()
}

fn spec(dim: usize, n: usize, seed: u64) -> SyntheticShiftSpec {
    SyntheticShiftSpec {
        dim,
        n,
        separation: 3.0,
        angle: 0.5,
        translation: vec![0.3; dim],
        noise: 0.05,
        seed,
    }
}

fn pair(dim: usize, n: usize, seed: u64) -> (DomainDataset, DomainDataset) {
    let p = generate_synthetic(&spec(dim, n, seed)).unwrap();
    (p.source, p.target)
}

#[test]
fn solve_w_is_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let m = rng.random_range(2..=9);
        let r = rng.random_range(1..=m);
        let theta = orthonormal_rows(&mut rng, r, m);
        let (phi, psi) = (gaussian_vec(&mut rng, m), gaussian_vec(&mut rng, m));
        let cost = |w: &DVector<f64>| {
            let a = theta.transpose() * w;
            (&phi - &a).norm_squared() + (&psi - &a).norm_squared()
        };
        let w = solve_w(&theta, &phi, &psi).unwrap();
        let h = 1e-6;
        for k in 0..r {
            let mut e = DVector::zeros(r);
            e[k] = h;
            let fd = (cost(&(&w + &e)) - cost(&(&w - &e))) / (2.0 * h);
            assert!(fd.abs() < 1e-6, "derivative {fd}");
        }
        for _ in 0..50 {
            assert!(cost(&w) <= cost(&(&w + gaussian_vec(&mut rng, r) * 0.1)) + 1e-12);
        }
    }
}

#[test]
fn solve_theta_matches_dense_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..20 {
        let m = rng.random_range(2..=8);
        let r = rng.random_range(1..=m);
        let (source, target) = pair(m, 30, 50 + case);
        let hp = HyperParams {
            c1: rng.random_range(0.1..3.0),
            c3: rng.random_range(0.1..3.0),
            r: Some(r),
            ..HyperParams::default()
        };
        let weights = SourceWeights::uniform(source.len(), hp.delta).unwrap();
        let (phi, psi) = (gaussian_vec(&mut rng, m), gaussian_vec(&mut rng, m));
        let big_m = theta_cost_matrix(&phi, &psi, &source, &target, &weights, &hp);
        let theta = solve_theta(&phi, &psi, &source, &target, &weights, &hp).unwrap();
        assert_eq!(theta.shape(), (r, m));
        assert!(orthonormality_error(&theta) <= 1e-8);
        let mut eig: Vec<f64> = SymmetricEigen::new(big_m.clone()).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let best: f64 = eig[..r].iter().sum();
        let achieved = (&theta * &big_m * theta.transpose()).trace();
        assert!((achieved - best).abs() < 1e-9 * (1.0 + big_m.norm()), "case {case}: {achieved} vs {best}");
        for row in theta.row_iter() {
            let first = row.iter().find(|v| v.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }
}

#[test]
fn solve_theta_beats_random_orthonormal_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (source, target) = pair(5, 40, 9);
    let hp = HyperParams {
        r: Some(2),
        ..HyperParams::default()
    };
    let weights = SourceWeights::uniform(source.len(), hp.delta).unwrap();
    let (phi, psi) = (gaussian_vec(&mut rng, 5), gaussian_vec(&mut rng, 5));
    let big_m = theta_cost_matrix(&phi, &psi, &source, &target, &weights, &hp);
    let theta = solve_theta(&phi, &psi, &source, &target, &weights, &hp).unwrap();
    let achieved = (&theta * &big_m * theta.transpose()).trace();
    for _ in 0..2000 {
        let t = orthonormal_rows(&mut rng, 2, 5);
        assert!(achieved <= (&t * &big_m * t.transpose()).trace() + 1e-12);
    }
}

#[test]
fn principal_directions_capture_top_variance() {
    let (source, target) = pair(6, 50, 4);
    let theta = principal_directions(&source, &target, 3).unwrap();
    assert!(orthonormality_error(&theta) <= 1e-10);
    let pooled = DMatrix::from_fn(100, 6, |i, j| {
        if i < 50 {
            source.features()[(i, j)]
        } else {
            target.features()[(i - 50, j)]
        }
    });
    let mean = pooled.row_mean();
    let mut centered = pooled.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.tr_mul(&centered) / 100.0;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    for (k, row) in theta.row_iter().enumerate() {
        let variance = (row * &cov * row.transpose())[(0, 0)];
        assert!((variance - eig[k]).abs() < 1e-9, "direction {k}: {variance} vs {}", eig[k]);
    }
}

#[test]
fn subgradient_counts_hinge_at_the_kink() {
    let source = DomainDataset::new(DMatrix::from_row_slice(4, 1, &[1.0, 2.0, -1.0, -3.0]), vec![1.0, 1.0, -1.0, -1.0]).unwrap();
    let target = DomainDataset::new(DMatrix::from_row_slice(4, 1, &[1.0, 2.0, -1.0, -2.0]), vec![1.0]).unwrap();
    let hp = HyperParams {
        c1: 0.0,
        c2: 0.0,
        k: 1,
        r: Some(1),
        ..HyperParams::default()
    };
    let ctx = TrainingContext::new(&source, &target, &hp).unwrap();
    let phi = DVector::from_element(1, 1.0);
    let zero = DVector::zeros(1);
    let pi = DVector::from_element(4, 1.0);
    let (g_phi, g_psi) = ctx.subgradients(&phi, &phi, &zero, &pi);
    // Points 0 and 2 sit exactly at margin 1 and count as active.
    assert_eq!(g_phi[0], -2.0);
    assert_eq!(g_psi[0], -1.0);
}

#[test]
fn phi_psi_update_never_increases_its_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let (source, target) = pair(4, 40, 70 + seed);
        let hp = HyperParams::default();
        let ctx = TrainingContext::new(&source, &target, &hp).unwrap();
        let theta = orthonormal_rows(&mut rng, 4, 4);
        let model = TransferModel::new(theta, gaussian_vec(&mut rng, 4), gaussian_vec(&mut rng, 4), gaussian_vec(&mut rng, 4)).unwrap();
        let weights = SourceWeights::uniform(source.len(), hp.delta).unwrap();
        let anchor = model.shared();
        let before = ctx.q_value(model.phi(), model.psi(), &anchor, weights.pi());
        let (phi, psi) = update_phi_psi(&ctx, &model, &weights);
        let after = ctx.q_value(&phi, &psi, &anchor, weights.pi());
        assert!(after <= before, "{after} > {before}");
        assert!(after < before * 0.99, "no progress: {before} -> {after}");
    }
}

fn pi_context_model(source: &DomainDataset, phi: DVector<f64>) -> TransferModel {
    let m = source.dim();
    TransferModel::new(DMatrix::identity(1, m), DVector::zeros(1), phi.clone(), phi).unwrap()
}

#[test]
fn pi_stays_uniform_for_equal_losses() {
    let (source, target) = pair(3, 20, 1);
    let hp = HyperParams {
        c2: 0.0,
        c3: 0.0,
        r: Some(1),
        ..HyperParams::default()
    };
    let ctx = TrainingContext::new(&source, &target, &hp).unwrap();
    let model = pi_context_model(&source, DVector::zeros(3));
    let weights = SourceWeights::uniform(20, hp.delta).unwrap();
    let (new, _) = solve_pi(&ctx, &model, &weights).unwrap();
    assert_eq!(new.pi(), weights.pi());
}

#[test]
fn pi_is_greedy_for_distinct_losses() {
    let (source, target) = pair(3, 20, 2);
    let n1 = source.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for delta in [n1, 3.0, 1.5] {
        let hp = HyperParams {
            c2: 0.0,
            c3: 0.0,
            r: Some(1),
            delta,
            ..HyperParams::default()
        };
        let ctx = TrainingContext::new(&source, &target, &hp).unwrap();
        let model = pi_context_model(&source, gaussian_vec(&mut rng, 3));
        let scores = source.features() * model.phi();
        let losses: Vec<f64> = (0..source.len()).map(|i| (1.0 - source.labels()[i] * scores[i]).max(0.0)).collect();
        let mut order: Vec<usize> = (0..losses.len()).collect();
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
        let mut expected = DVector::zeros(losses.len());
        let mut left = n1;
        for i in order {
            expected[i] = left.min(delta);
            left -= expected[i];
        }
        let weights = SourceWeights::uniform(source.len(), delta).unwrap();
        let (new, _) = solve_pi(&ctx, &model, &weights).unwrap();
        let cost = |p: &DVector<f64>| p.iter().zip(&losses).map(|(a, b)| a * b).sum::<f64>();
        assert!((cost(new.pi()) - cost(&expected)).abs() < 1e-9);
        let distinct = {
            let mut l = losses.clone();
            l.sort_by(f64::total_cmp);
            l.windows(2).all(|w| w[1] - w[0] > 1e-9)
        };
        if distinct {
            assert!((new.pi() - &expected).amax() < 1e-9, "delta {delta}");
        }
    }
}

#[test]
fn pi_subproblem_matches_objective_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..10 {
        let m = 4;
        let (source, target) = pair(m, 25, 200 + seed);
        let hp = HyperParams {
            c1: rng.random_range(0.1..2.0),
            c2: rng.random_range(0.1..2.0),
            c3: rng.random_range(0.1..2.0),
            r: Some(2),
            ..HyperParams::default()
        };
        let ctx = TrainingContext::new(&source, &target, &hp).unwrap();
        let theta = orthonormal_rows(&mut rng, 2, m);
        let model = TransferModel::new(theta, gaussian_vec(&mut rng, 2), gaussian_vec(&mut rng, m), gaussian_vec(&mut rng, m)).unwrap();
        let (qp, constant) = ctx.pi_subproblem(&model).unwrap();
        for _ in 0..5 {
            let mut pi = DVector::from_fn(source.len(), |_, _| rng.random_range(0.0..2.0));
            pi *= source.len() as f64 / pi.sum();
            let weights = SourceWeights::new(pi.clone(), hp.delta).unwrap();
            let t = ctx.objective(&model, &weights).unwrap();
            let direct = t.source_hinge + t.weight_smoothness + t.matching;
            let via_qp = qp.objective(&pi) + constant;
            assert!((direct - via_qp).abs() < 1e-8 * (1.0 + direct.abs()), "{direct} vs {via_qp}");
        }
        let start = SourceWeights::uniform(source.len(), hp.delta).unwrap();
        let (solved, _) = solve_pi(&ctx, &model, &start).unwrap();
        assert!(ctx.objective(&model, &solved).unwrap().total() <= ctx.objective(&model, &start).unwrap().total() + 1e-10);
    }
}

#[test]
fn zero_iterations_return_initialization() {
    let (source, target) = pair(3, 30, 3);
    let hp = HyperParams {
        outer_iters: 0,
        ..HyperParams::default()
    };
    let state = fit(&source, &target, &hp).unwrap();
    assert_eq!(state.objective_trace.len(), 1);
    assert_eq!(state.iteration, 0);
    let ctx = TrainingContext::new(&source, &target, &hp).unwrap();
    let (model, weights) = initialize(&ctx).unwrap();
    assert_eq!(state.model, model);
    assert_eq!(state.weights.pi(), weights.pi());
    assert!(weights.pi().iter().all(|&p| p == 1.0));
}

#[test]
fn zero_shift_fit_descends() {
    let spec = SyntheticShiftSpec {
        angle: 0.0,
        translation: Vec::new(),
        ..spec(4, 60, 11)
    };
    let p = generate_synthetic(&spec).unwrap();
    let hp = HyperParams {
        outer_iters: 5,
        tol: 0.0,
        ..HyperParams::default()
    };
    let state = fit(&p.source, &p.target, &hp).unwrap();
    assert_eq!(state.objective_trace.len(), 6);
    assert!(state.objective_trace.last().unwrap() <= &state.objective_trace[0]);
    for w in state.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-8);
    }
}

#[test]
fn rotated_pair_beats_source_only() {
    let spec = SyntheticShiftSpec {
        dim: 2,
        n: 200,
        separation: 4.0,
        angle: 30f64.to_radians(),
        translation: Vec::new(),
        noise: 0.0,
        seed: 7,
    };
    let p = generate_synthetic(&spec).unwrap();
    let hp = HyperParams::default();
    let n3 = p.target.labeled_count();
    let hidden = p.target.features().rows(n3, p.target.len() - n3).into_owned();
    let truth = &p.target_truth[n3..];
    let state = fit(&p.source, &p.target, &hp).unwrap();
    let ours = accuracy((&hidden * state.model.psi()).as_slice(), truth).unwrap();
    let baseline = baseline_source_only(&p.source, &hp).unwrap();
    let theirs = accuracy((&hidden * &baseline).as_slice(), truth).unwrap();
    assert!(ours > theirs, "proposed {ours} vs source-only {theirs}");
}

#[test]
fn fit_is_bitwise_reproducible() {
    let (source, target) = pair(5, 50, 12);
    let hp = HyperParams {
        outer_iters: 8,
        ..HyperParams::default()
    };
    let a = fit(&source, &target, &hp).unwrap();
    let b = fit(&source, &target, &hp).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.objective_trace, b.objective_trace);
    assert_eq!(a.weights.pi(), b.weights.pi());
}

#[test]
fn invalid_inputs_are_rejected() {
    let (source, target) = pair(3, 20, 13);
    let (_, wide) = pair(4, 20, 13);
    assert!(fit(&source, &wide, &HyperParams::default()).is_err());
    let bad = HyperParams {
        r: Some(4),
        ..HyperParams::default()
    };
    assert!(fit(&source, &target, &bad).is_err());
    let bad = HyperParams {
        delta: 0.5,
        ..HyperParams::default()
    };
    assert!(fit(&source, &target, &bad).is_err());
}
