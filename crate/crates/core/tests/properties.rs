use bd_spectra::analysis::{
    localization_report, quasi_eigenvector_boundary, quasi_eigenvector_bulk, solve, EmbeddingGrid,
};
use bd_spectra::eigensolve::{dense_oracle, sturm_count, top_eigenpairs, SolverOptions};
use bd_spectra::limit_spectra::{
    branching_eigenvector, merge_eta, EtaTag, HermiteEigenfunction, LimitSpectrum,
};
use bd_spectra::model::{model_constants, RateModel};
use bd_spectra::operator::{
    build_operator, choose_truncation, dirichlet_form, potential_profile, tail_log_decay,
    TridiagonalOperator, TruncationSpec,
};
use bd_spectra::quadrature::gauss_hermite;
use bd_spectra::qsd::{pi_weights, qsd_from_ground_state};
use bd_spectra::simulate::total_variation;
use proptest::prelude::*;

fn builtin() -> impl Strategy<Value = RateModel> {
    (1.2f64..3.0, 0.3f64..1.0, 0.5f64..0.8, 0usize..3).prop_map(|(ratio, mu, theta, kind)| {
        let lambda = ratio * mu;
        match kind {
            0 => RateModel::logistic(lambda, mu).unwrap(),
            1 => RateModel::age(lambda, mu, theta).unwrap(),
            _ => RateModel::smith(lambda, mu).unwrap(),
        }
    })
}

fn random_operator() -> impl Strategy<Value = TridiagonalOperator> {
    (2usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..-0.1, n),
            prop::collection::vec(0.01f64..10.0, n - 1),
        )
            .prop_map(|(d, o)| TridiagonalOperator::from_parts(d, o).unwrap())
    })
}

fn model_operator(model: &RateModel, k: u64) -> TridiagonalOperator {
    let t = choose_truncation(model, k).unwrap();
    build_operator(model, k, &t).unwrap()
}

/// `∫ a b dx` by Gauss–Hermite after the substitution `y = √α x`.
fn hermite_inner(a: &HermiteEigenfunction, b: &HermiteEigenfunction, nodes: usize) -> f64 {
    let (y, w) = gauss_hermite(nodes);
    let s = a.alpha.sqrt();
    y.iter()
        .zip(&w)
        .map(|(&y, &w)| w * (y * y).exp() * a.eval(y / s) * b.eval(y / s) / s)
        .sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn derivatives_and_fixed_point(model in builtin()) {
        let c = model_constants(&model).unwrap();
        prop_assert!(rel(model.birth(c.x_star), model.death(c.x_star)) <= 1e-10);
        for x in [1e-3, 0.5, 2.0, 10.0] {
            prop_assert!(model.birth(x) > 0.0 && model.death(x) > 0.0);
        }
        let mut points = vec![c.x_star];
        if !matches!(model, RateModel::Age { .. }) {
            points.push(0.0);
        }
        for x in points {
            let (ba, da) = model.analytic_derivatives(x).unwrap();
            let (bn, dn) = model.numerical_derivatives(x);
            prop_assert!(rel(bn, ba) <= 1e-6, "b' at {x}: {bn} vs {ba}");
            prop_assert!(rel(dn, da) <= 1e-6, "d' at {x}: {dn} vs {da}");
        }
    }

    #[test]
    fn logistic_steps_coincide(mu in 0.2f64..3.0, ratio in 1.1f64..5.0) {
        let lambda = ratio * mu;
        let c = model_constants(&RateModel::logistic(lambda, mu).unwrap()).unwrap();
        prop_assert!(rel(c.s1_step, lambda - mu) <= 1e-8);
        prop_assert!(rel(c.s2_step, lambda - mu) <= 1e-12);
    }

    #[test]
    fn sturm_count_is_monotone(op in random_operator(), a in -120.0f64..10.0, b in -120.0f64..10.0) {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sturm_count(&op, x) <= sturm_count(&op, y));
    }

    #[test]
    fn solver_matches_dense_oracle(op in random_operator()) {
        let k = op.n().min(10);
        let spec = top_eigenpairs(&op, k, &SolverOptions::default()).unwrap();
        let oracle = dense_oracle(&op).unwrap();
        let scale = op.scale();
        for j in 0..k {
            let expected = -oracle[op.n() - 1 - j];
            prop_assert!((spec.rhos[j] - expected).abs() <= 1e-10 * scale);
        }
        for i in 0..k {
            for j in 0..i {
                let dot: f64 = spec.vectors[i].iter().zip(&spec.vectors[j]).map(|(a, b)| a * b).sum();
                prop_assert!(dot.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn dirichlet_identity(model in builtin(), k in 1u64..80, start in 0usize..40, len in 1usize..25,
                          seed in prop::collection::vec(-1.0f64..1.0, 25)) {
        let op = model_operator(&model, k);
        let n = op.n();
        let mut phi = vec![0.0; n];
        for (i, s) in seed.iter().take(len).enumerate() {
            if start + i < n {
                phi[start + i] = *s;
            }
        }
        let norm: f64 = phi.iter().map(|v| v * v).sum();
        let defect = dirichlet_form(&op, &phi) + op.inner_apply(&phi, &phi);
        prop_assert!(defect.abs() <= 1e-12 * norm.max(1e-300) * op.scale() + 1e-300);
    }

    #[test]
    fn quadratic_form_bound(model in builtin(), k in 5u64..120) {
        let op = model_operator(&model, k);
        let spec = top_eigenpairs(&op, 3, &SolverOptions::default()).unwrap();
        let pot = potential_profile(&op);
        let half_edge = 0.5 * op.offdiag.first().copied().unwrap_or(op.edge_coupling);
        for (j, phi) in spec.vectors.iter().enumerate() {
            let n = phi.len();
            let mut kinetic = 0.0;
            for i in 0..n {
                let next = if i + 1 < n { phi[i + 1] } else { 0.0 };
                let c = op.offdiag.get(i).copied().unwrap_or(op.edge_coupling);
                kinetic += c * (next - phi[i]).powi(2);
            }
            let potential: f64 = phi.iter().zip(&pot.v).map(|(p, v)| v.max(1.0) * p * p).sum();
            let bound = 1.0 + spec.rhos[j] + pot.xi + spec.residuals[j] + half_edge;
            prop_assert!(kinetic + potential <= bound * (1.0 + 1e-12), "{} > {}", kinetic + potential, bound);
            for v in &pot.v {
                prop_assert!(*v >= -pot.xi);
            }
        }
    }

    #[test]
    fn pi_weights_match_direct_product(model in builtin(), k in 1u64..60, n in 1usize..20) {
        let pi = pi_weights(&model, k, n).unwrap();
        let mut direct = 1.0;
        for m in 1..=n as u64 {
            let (_, mu_m) = model.rates_at(k, m).unwrap();
            if m == 1 {
                direct = 1.0 / mu_m;
            } else {
                let (lam_prev, _) = model.rates_at(k, m - 1).unwrap();
                direct *= lam_prev / mu_m;
            }
            prop_assert!(rel(pi.log_pi[m as usize - 1].exp(), direct) <= 1e-12);
        }
    }

    #[test]
    fn merge_eta_multiplicities(s1 in 0.1f64..3.0, s2 in 0.1f64..3.0, count in 1usize..40) {
        let spec = LimitSpectrum::new(s1, s2).unwrap();
        let merged = merge_eta(&spec, count, 1e-9);
        prop_assert_eq!(merged.etas.len(), count);
        prop_assert!(merged.etas.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(merged.etas[0], 0.0);
        for (i, tag) in merged.tags.iter().enumerate() {
            let twins = merged.etas.iter().filter(|e| (**e - merged.etas[i]).abs() <= 1e-9 * merged.etas[i].max(1.0)).count();
            match tag {
                EtaTag::BothFirst | EtaTag::BothSecond => prop_assert!(twins == 2 || i + 1 == count),
                _ => prop_assert_eq!(twins, 1),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn hermite_orthonormality(alpha in 0.1f64..8.0) {
        for i in 0..=10 {
            let a = HermiteEigenfunction::new(i, alpha).unwrap();
            for j in 0..=i {
                let b = HermiteEigenfunction::new(j, alpha).unwrap();
                let ip = hermite_inner(&a, &b, 4 * 10 + 8);
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((ip - expected).abs() <= 1e-9, "⟨ψ{i},ψ{j}⟩ = {ip}");
            }
        }
    }

    #[test]
    fn branching_vectors_orthogonal(r in 0.2f64..0.85) {
        let vs: Vec<Vec<f64>> = (1..=6).map(|m| branching_eigenvector(m, r, 4000).unwrap().normalized()).collect();
        for i in 0..vs.len() {
            for j in 0..i {
                let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
                prop_assert!(dot.abs() <= 1e-9, "⟨v{},v{}⟩ = {dot}", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn eigenvector_tail_decays(model in builtin(), k in 5u64..80) {
        let ratio_at = |n: usize| {
            let x = n as f64 / k as f64;
            model.death(x) / model.birth(x)
        };
        let t = choose_truncation(&model, k).unwrap();
        let steep = (1..).find(|&n| ratio_at(n) >= 8.0).unwrap();
        let op = build_operator(&model, k, &TruncationSpec::fixed((2 * t.n).max(2 * steep))).unwrap();
        let spec = top_eigenpairs(&op, 3, &SolverOptions::default()).unwrap();
        let first = (1..=op.n()).find(|&n| ratio_at(n) >= 4.0).unwrap();
        for (phi, &rho) in spec.vectors.iter().zip(&spec.rhos) {
            // Beyond `first`, also wait until the recurrence coefficient itself
            // drops below one half; at small K the eigenvalue shifts it upward.
            let coefficient = |i: usize| {
                op.offdiag[i] / (-op.diag[i] - rho - op.offdiag[i - 1])
            };
            let start = ((first - 1).max(1)..op.n() - 1)
                .find(|&i| (0.0..=0.5).contains(&coefficient(i)))
                .unwrap();
            let sign = phi[start].signum();
            let peak = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in start..(op.n() - 1) {
                // Entries below this level are round-off in absolute terms.
                if phi[i + 1].abs() < 1e-13 * peak {
                    break;
                }
                prop_assert!(phi[i].signum() == sign, "sign flip at n={}", i + 1);
                prop_assert!(phi[i + 1].abs() / phi[i].abs() <= 0.5 + 1e-6,
                    "ratio {} at n={}", phi[i + 1].abs() / phi[i].abs(), i + 1);
            }
        }
    }

    #[test]
    fn doubling_truncation_is_stable(model in builtin(), k in 5u64..150) {
        let t = choose_truncation(&model, k).unwrap();
        // The ratio rule alone can cut a tail that has barely decayed at tiny K.
        prop_assume!(tail_log_decay(&model, k, t.n).unwrap() <= -40.0);
        let op = build_operator(&model, k, &t).unwrap();
        let big = build_operator(&model, k, &TruncationSpec::fixed(2 * t.n)).unwrap();
        let opts = SolverOptions::default();
        let a = top_eigenpairs(&op, 5, &opts).unwrap();
        let b = top_eigenpairs(&big, 5, &opts).unwrap();
        for j in 0..5 {
            prop_assert!((a.rhos[j] - b.rhos[j]).abs() <= 1e-10 * op.scale());
        }
        let nu_a = qsd_from_ground_state(&a, &pi_weights(&model, k, op.n()).unwrap()).unwrap();
        let nu_b = qsd_from_ground_state(&b, &pi_weights(&model, k, big.n()).unwrap()).unwrap();
        prop_assert!(total_variation(&nu_a.nu, &nu_b.nu) <= 1e-10);
        prop_assert!((nu_a.nu.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn quasi_eigenvectors_are_certified(model in builtin(), k in 100u64..1500, n in 0usize..4, m in 1usize..4) {
        let op = model_operator(&model, k);
        let c = model_constants(&model).unwrap();
        let bulk = quasi_eigenvector_bulk(&op, &c, n).unwrap();
        prop_assert!(bulk.certified, "bulk n={n} residual {}", bulk.residual);
        let boundary = quasi_eigenvector_boundary(&op, &c, m).unwrap();
        prop_assert!(boundary.certified, "boundary m={m} residual {}", boundary.residual);
    }

    #[test]
    fn embedding_is_isometric(k in 1u64..100_000, x_star in 0.1f64..5.0,
                              u in prop::collection::vec(-1.0f64..1.0, 1..200)) {
        let grid = EmbeddingGrid::new(k, x_star);
        let l2: f64 = u.iter().map(|v| v * v).sum();
        prop_assert!((grid.embedded_norm_sq(&u) - l2).abs() <= 1e-14 * l2.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn mass_splits_at_large_k(kind in 0usize..3, k in 10_000u64..30_000) {
        let model = match kind {
            0 => RateModel::logistic(2.0, 1.0).unwrap(),
            1 => RateModel::age(2.0, 1.0, 0.5).unwrap(),
            _ => RateModel::smith(2.0, 1.0).unwrap(),
        };
        let c = model_constants(&model).unwrap();
        let solved = solve(&model, k, 3, &SolverOptions::default()).unwrap();
        for j in 0..3 {
            let rep = localization_report(&solved.spec, &c, k, j).unwrap();
            prop_assert!(rep.mass_left + rep.mass_right >= 1.0 - 1e-6, "j={j}: {rep:?}");
            prop_assert!((rep.mass_left + rep.mass_right + rep.mass_middle - 1.0).abs() <= 1e-12);
        }
    }
}
