use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svig_core::forward::{assemble_causal_operator, assemble_terminal_operator, weighted};
use svig_core::game::{
    assemble_theta, check_conditions, negative_direction, random_process, solve_saddle,
    stack_controls, stationarity_residual, theta11_form_via_fbsvie, theta22_form_via_fbsvie,
    verify_saddle, SaddleOptions,
};
use svig_core::sample::GameSampler;
use svig_core::{evaluate_cost, AdaptedProcess, ScenarioTree};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn quadratic_form_reproduces_the_cost() {
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = ScenarioTree::new(1 + (seed as usize % 5), 1.0).unwrap();
        let spec = GameSampler::default().sample(&tree, &mut rng);
        let a = assemble_theta(&spec).unwrap();
        assert!(a.asymmetry() < 1e-12);
        let u1 = random_process(&tree, &mut rng, 1.0);
        let u2 = random_process(&tree, &mut rng, 1.0);
        let direct = evaluate_cost(&spec, &u1, &u2).unwrap();
        let via = a.cost(&stack_controls(&u1, &u2));
        assert!(rel(direct, via) < 1e-11, "seed {seed}: {direct} vs {via}");
    }
}

#[test]
fn theta_blocks_match_the_expanded_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tree = ScenarioTree::new(4, 0.8).unwrap();
    let spec = GameSampler::default().sample(&tree, &mut rng);
    let a = assemble_theta(&spec).unwrap();
    let d = tree.process_dim();
    let am = assemble_causal_operator(&spec.a1, &spec.a2, &tree).unwrap().matrix;
    let bm = assemble_causal_operator(&spec.b1, &spec.b2, &tree).unwrap().matrix;
    let cm = assemble_causal_operator(&spec.c1, &spec.c2, &tree).unwrap().matrix;
    let dt = assemble_terminal_operator(&spec.a1, &spec.a2, &tree).unwrap().matrix;
    let lt = assemble_terminal_operator(&spec.b1, &spec.b2, &tree).unwrap().matrix;
    let pt = assemble_terminal_operator(&spec.c1, &spec.c2, &tree).unwrap().matrix;
    let inv = (DMatrix::identity(d, d) - &am).try_inverse().unwrap();
    let diag = |p: &AdaptedProcess| DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(p.interior()));
    let g = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(spec.g.values()));
    let q_prime = diag(&spec.q) + dt.transpose() * &g * &dt;
    let block = |u: &DMatrix<f64>, ut: &DMatrix<f64>, s: &AdaptedProcess, r: &AdaptedProcess| {
        u.transpose() * inv.transpose() * &q_prime * &inv * u
            + diag(s) * &inv * u
            + ut.transpose() * &g * &dt * &inv * u
            + u.transpose() * inv.transpose() * (diag(s) + dt.transpose() * &g * ut)
            + diag(r)
            + ut.transpose() * &g * ut
    };
    let t11 = block(&bm, &lt, &spec.s1, &spec.r11);
    let t22 = block(&cm, &pt, &spec.s2, &spec.r22);
    assert!((&t11 - a.theta11()).amax() < 1e-12 * t11.amax());
    assert!((&t22 - a.theta22()).amax() < 1e-12 * t22.amax());
}

#[test]
fn backward_routes_agree_with_the_matrix() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let tree = ScenarioTree::new(2 + (seed as usize % 5), 1.0).unwrap();
        let spec = GameSampler::default().sample(&tree, &mut rng);
        let a = assemble_theta(&spec).unwrap();
        let u1 = random_process(&tree, &mut rng, 1.0);
        let u2 = random_process(&tree, &mut rng, 1.0);
        let w1 = weighted(&u1);
        let w2 = weighted(&u2);
        let m11 = w1.dot(&(a.theta11() * &w1));
        let m22 = w2.dot(&(a.theta22() * &w2));
        assert!(rel(m11, theta11_form_via_fbsvie(&spec, &u1).unwrap()) < 1e-10);
        assert!(rel(m22, theta22_form_via_fbsvie(&spec, &u2).unwrap()) < 1e-10);

        let u = stack_controls(&u1, &u2);
        let expected = &a.theta * &u + &a.theta1_phi;
        let (r1, r2) = stationarity_residual(&spec, &u1, &u2).unwrap();
        let got = stack_controls(&r1, &r2);
        assert!((&got - &expected).norm() < 1e-10 * expected.norm());
    }
}

#[test]
fn saddle_points_survive_perturbation_and_witnesses_break_them() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tree = ScenarioTree::new(4, 1.0).unwrap();
    let spec = GameSampler::default().sample(&tree, &mut rng);
    let a = assemble_theta(&spec).unwrap();
    let opts = SaddleOptions::default();
    assert!(check_conditions(&a, &opts).all_hold());
    let rep = solve_saddle(&a, &opts).unwrap();
    let (r1, r2) = stationarity_residual(&spec, &rep.u1, &rep.u2).unwrap();
    assert!(r1.max_abs().max(r2.max_abs()) < 1e-8);
    let m = verify_saddle(&spec, &rep.u1, &rep.u2, 50, 9).unwrap();
    assert!(m.min() >= -1e-8);

    let sampler = GameSampler {
        r11: (-1.0, -0.5),
        ..GameSampler::default()
    };
    let bad = sampler.sample(&tree, &mut rng);
    let a = assemble_theta(&bad).unwrap();
    let (val, dir) = negative_direction(&a, 1e-6).expect("negative eigenvalue");
    assert!(val < 0.0);
    let rep = solve_saddle(&a, &opts).unwrap();
    let j_hat = evaluate_cost(&bad, &rep.u1, &rep.u2).unwrap();
    let j_dev = evaluate_cost(&bad, &rep.u1.add(&dir), &rep.u2).unwrap();
    assert!(j_dev < j_hat);
}
