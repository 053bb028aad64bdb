//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::Instant;

use bd_spectra::analysis::{
    localization_report, quasi_eigenvector_boundary, quasi_eigenvector_bulk, solve,
    spectrum_convergence, window_stats,
};
use bd_spectra::eigensolve::{dense_oracle, lowest_rhos, top_eigenpairs, SolverOptions};
use bd_spectra::exec::{map_range, Execution};
use bd_spectra::limit_spectra::{
    apply_hstar, apply_m0, branching_eigenvector, merge_eta, HermiteEigenfunction, LimitSpectrum,
};
use bd_spectra::model::{model_constants, RateModel};
use bd_spectra::operator::{build_operator, choose_truncation, dirichlet_form, TruncationSpec};
use bd_spectra::qsd::{mean_extinction_asymptotic, pi_weights, qsd_from_ground_state};
use bd_spectra::quadrature::adaptive_gauss_kronrod;
use bd_spectra::simulate::{extinction_study, InitialState, SimulationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sci(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn logistic() -> RateModel {
    RateModel::logistic(2.0, 1.0).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng) -> RateModel {
    let mu = rng.random_range(0.3..2.0);
    let lambda = mu + rng.random_range(0.2..3.0);
    match rng.random_range(0..3) {
        0 => RateModel::logistic(lambda, mu).unwrap(),
        1 => RateModel::age(lambda, mu, rng.random_range(0.2..0.9)).unwrap(),
        _ => RateModel::smith(lambda, mu).unwrap(),
    }
}

fn c1_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(RateModel, u64, usize)> = (0..50)
        .map(|_| {
            let m = random_model(&mut rng);
            (m, rng.random_range(1..=60), rng.random_range(10..=300))
        })
        .collect();
    let worst = map_range(Execution::Parallel, cases.len(), |i| {
        let (m, k, n) = &cases[i];
        let op = build_operator(m, *k, &TruncationSpec::fixed(*n)).unwrap();
        let spec = top_eigenpairs(&op, 10, &SolverOptions::default()).unwrap();
        let dense = dense_oracle(&op).unwrap();
        (0..10)
            .map(|j| (spec.rhos[j] + dense[n - 1 - j]).abs() / op.scale())
            .fold(0.0f64, f64::max)
    })
    .into_iter()
    .fold(0.0f64, f64::max);
    check(worst <= 1e-10, format!("max |Δρ|/max|diag| = {worst:.2e} over 50 operators"))
}

fn c2_dirichlet_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let models = [
        logistic(),
        RateModel::age(2.0, 1.0, 0.5).unwrap(),
        RateModel::smith(2.0, 1.0).unwrap(),
    ];
    for m in &models {
        let k = 50;
        let t = choose_truncation(m, k).unwrap();
        let op = build_operator(m, k, &t).unwrap();
        for _ in 0..1000 {
            let mut phi = vec![0.0; op.n()];
            let len = rng.random_range(1..=40);
            let start = rng.random_range(0..op.n() - len);
            for p in &mut phi[start..start + len] {
                *p = rng.random_range(-1.0..1.0);
            }
            let nsq: f64 = phi.iter().map(|v| v * v).sum();
            let defect = (dirichlet_form(&op, &phi) + op.inner_apply(&phi, &phi)).abs();
            worst = worst.max(defect / (nsq * op.scale()));
        }
    }
    check(worst <= 1e-12, format!("max defect/(‖φ‖² max|diag|) = {worst:.2e} over 3000 vectors"))
}

fn c3_merged_spectrum() -> Outcome {
    let steps = |m: &RateModel| LimitSpectrum::from_constants(&model_constants(m).unwrap()).unwrap();
    let a = merge_eta(&steps(&logistic()), 7, 1e-9).etas;
    let b = merge_eta(&steps(&RateModel::age(2.0, 1.0, 0.5).unwrap()), 7, 1e-9).etas;
    check(
        a == [0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0] && b == [0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0],
        format!("logistic {a:?}, AGE {b:?}"),
    )
}

fn c4_eigenvalue_convergence() -> Outcome {
    let ladder = [100, 200, 400, 800, 1600];
    let r = spectrum_convergence(&logistic(), &ladder, 4, &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let trend = (0..=4).all(|j| r.trend_ok(j, 0.1));
    let last = r.errors.last().unwrap();
    let worst = last.iter().copied().fold(0.0, f64::max);
    check(
        trend && worst < 0.1,
        format!("trend ok: {trend}; errors at K=1600: {}", sci(last)),
    )
}

fn c5_gap_limits() -> Outcome {
    let cases = [
        ("logistic(2,1)", logistic(), 1.0),
        ("AGE(2,1,0.5)", RateModel::age(2.0, 1.0, 0.5).unwrap(), 0.5),
        ("Smith(2,1)", RateModel::smith(2.0, 1.0).unwrap(), 0.5),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, m, want) in &cases {
        let t = choose_truncation(m, 1600).unwrap();
        let op = build_operator(m, 1600, &t).unwrap();
        let (r, _) = lowest_rhos(&op, 2, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let gap = r[1] - r[0];
        ok &= (gap - want).abs() <= 0.1 * want;
        parts.push(format!("{name} gap {gap:.4} (limit {want})"));
    }
    check(ok, parts.join("; "))
}

fn c6_mean_extinction() -> Outcome {
    let m = logistic();
    let c = model_constants(&m).unwrap();
    let mut ratios = Vec::new();
    let mut floor = false;
    for k in [30u64, 40, 50, 60, 70] {
        let t = choose_truncation(&m, k).unwrap();
        let op = build_operator(&m, k, &t).unwrap();
        let (r, flag) = lowest_rhos(&op, 1, &SolverOptions::default()).map_err(|e| e.to_string())?;
        floor |= flag;
        ratios.push(mean_extinction_asymptotic(&c, &m, k).unwrap() * r[0]);
    }
    let dev: Vec<f64> = ratios.iter().map(|r| (1.0 - r).abs()).collect();
    let monotone = dev.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    check(
        monotone && dev[4] <= 0.25 && !floor,
        format!("ratios {ratios:.4?}, floor flag {floor}"),
    )
}

fn c7_hermite_suite() -> Outcome {
    let c = model_constants(&logistic()).unwrap();
    let alpha = c.s1_step / (2.0 * c.b_star);
    let efs: Vec<HermiteEigenfunction> =
        (0..=10).map(|n| HermiteEigenfunction::new(n, alpha).unwrap()).collect();
    let half_width = 14.0 / alpha.sqrt();
    let mut orth: f64 = 0.0;
    for i in 0..=10 {
        for j in i..=10 {
            let v = adaptive_gauss_kronrod(
                |x| efs[i].eval(x) * efs[j].eval(x),
                -half_width,
                half_width,
                1e-13,
            )
            .unwrap();
            orth = orth.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let mut res: f64 = 0.0;
    for (n, ef) in efs.iter().enumerate().take(4) {
        for i in 0..=160 {
            let x = -4.0 + 0.05 * i as f64;
            let lhs = apply_hstar(|y| ef.eval(y), x, &c, 1e-4);
            res = res.max((lhs + n as f64 * c.s1_step * ef.eval(x)).abs());
        }
    }
    check(
        orth <= 1e-9 && res <= 1e-6,
        format!("orthonormality defect {orth:.2e}; 𝓗* residual {res:.2e}"),
    )
}

fn c8_branching_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    for r in [0.3, 0.5, 0.8] {
        let (bp, dp) = (2.0, 2.0 * r);
        for m in 1..=6 {
            let v = branching_eigenvector(m, r, 2000).unwrap();
            let out = apply_m0(&v.values, bp, dp);
            let lam = -(m as f64) * (bp - dp);
            let num = out
                .iter()
                .enumerate()
                .map(|(i, o)| (o - lam * v.values.get(i).copied().unwrap_or(0.0)).powi(2))
                .sum::<f64>()
                .sqrt();
            let den = lam.abs() * v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
    }
    // Σ n² rⁿ / Σ n rⁿ = (1+r)/(1−r) for the monic degree-1 polynomial.
    let r = 0.5;
    let v2 = branching_eigenvector(2, r, 10).unwrap();
    let shift = (1.0 + r) / (1.0 - r);
    let p2_ok = (0..10).all(|n| {
        let x = n as f64;
        (v2.poly_eval(x) - (x - shift)).abs() <= 1e-12 * (1.0 + x.abs())
    });
    check(
        worst <= 1e-8 && p2_ok && shift == 3.0,
        format!("max 𝓜₀ relative residual {worst:.2e}; P₂(n) = n − {shift}: {p2_ok}"),
    )
}

fn c9_quasi_eigenvectors() -> Outcome {
    let m = logistic();
    let c = model_constants(&m).unwrap();
    let ops = |ks: &[u64]| -> Vec<_> {
        ks.iter()
            .map(|&k| build_operator(&m, k, &choose_truncation(&m, k).unwrap()).unwrap())
            .collect()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    let bulk_ops = ops(&[100, 400, 1600]);
    for n in 0..=3 {
        let q: Vec<_> = bulk_ops
            .iter()
            .map(|op| quasi_eigenvector_bulk(op, &c, n).unwrap())
            .collect();
        let res: Vec<f64> = q.iter().map(|x| x.residual).collect();
        ok &= res.windows(2).all(|w| w[1] < w[0]) && q.iter().all(|x| x.certified);
        parts.push(format!("bulk n={n} {}", sci(&res)));
    }
    let boundary_ops = ops(&[100, 1000, 10_000]);
    for mt in 1..=3 {
        let q: Vec<_> = boundary_ops
            .iter()
            .map(|op| quasi_eigenvector_boundary(op, &c, mt).unwrap())
            .collect();
        let res: Vec<f64> = q.iter().map(|x| x.residual).collect();
        ok &= res.windows(2).all(|w| w[1] < w[0]) && q.iter().all(|x| x.certified);
        parts.push(format!("boundary m={mt} {}", sci(&res)));
    }
    check(ok, parts.join("; "))
}

fn c10_localization() -> Outcome {
    let m = logistic();
    let c = model_constants(&m).unwrap();
    let k = 100_000;
    let s = solve(&m, k, 3, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    let mut n_r = 0;
    for j in 0..3 {
        let r = localization_report(&s.spec, &c, k, j).map_err(|e| e.to_string())?;
        // The window as computed from the definition, and the literal [132, 75197].
        let (sup_wide, ..) = window_stats(&s.spec.vectors[j], 132, 75197);
        let sup = r.mid_sup.unwrap_or(f64::INFINITY).max(sup_wide.unwrap_or(0.0));
        let split = r.mass_left + r.mass_right;
        n_r = r.n_r;
        ok &= r.n_l == 132 && sup <= 1e-8 && split >= 1.0 - 1e-6;
        parts.push(format!("j={j} mid_sup {sup:.2e} split {split:.12}"));
    }
    check(ok, format!("window [132, {n_r}] and [132, 75197]: {}", parts.join("; ")))
}

fn c11_monte_carlo() -> Outcome {
    let m = logistic();
    let k = 20;
    let s = solve(&m, k, 1, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let q = qsd_from_ground_state(&s.spec, &pi_weights(&m, k, s.op.n()).unwrap())
        .map_err(|e| e.to_string())?;
    let cfg = SimulationConfig {
        seed: 20_240_601,
        n_traj: 2000,
        t_max: 50.0 / q.rho0,
        initial: InitialState::FromQsd(q.nu.clone()),
        execution: Execution::Parallel,
    };
    let a = extinction_study(&m, k, &cfg).map_err(|e| e.to_string())?;
    let b = extinction_study(&m, k, &cfg).map_err(|e| e.to_string())?;
    let csv = |x: &bd_spectra::simulate::ExtinctionStats| {
        let mut buf = Vec::new();
        x.write_times_csv(&mut buf).unwrap();
        buf
    };
    let identical = csv(&a) == csv(&b);
    let target = 1.0 / q.rho0;
    let z = (a.mean - target) / a.stderr;
    let slope = a.survival_slope().unwrap_or(f64::NAN);
    let slope_err = (slope + q.rho0).abs() / q.rho0;
    check(
        z.abs() <= 3.0 && slope_err <= 0.1 && identical && a.censored_fraction < 1e-3,
        format!(
            "mean {:.2} vs 1/ρ₀ {target:.2} ({z:+.2} se); slope error {:.1}%; censored {}; identical reruns {identical}",
            a.mean,
            100.0 * slope_err,
            a.censored_fraction
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("oracle equivalence", c1_oracle_equivalence),
        ("Dirichlet identity", c2_dirichlet_identity),
        ("merged spectrum", c3_merged_spectrum),
        ("eigenvalue convergence", c4_eigenvalue_convergence),
        ("gap limits", c5_gap_limits),
        ("mean extinction time", c6_mean_extinction),
        ("Hermite suite", c7_hermite_suite),
        ("branching suite", c8_branching_suite),
        ("quasi-eigenvector certificates", c9_quasi_eigenvectors),
        ("localization", c10_localization),
        ("Monte-Carlo extinction", c11_monte_carlo),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} [{status}] {name} ({:.1}s): {detail}",
            i + 1,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
