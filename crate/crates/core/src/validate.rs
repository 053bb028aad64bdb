//! Fast invariant suite behind `bd-spectra validate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigensolve::{dense_oracle, sturm_count, top_eigenpairs, SolverOptions};
use crate::exec::Execution;
use crate::limit_spectra::{apply_m0, branching_eigenvector, merge_eta, LimitSpectrum};
use crate::model::{check_assumptions, log_grid, model_constants, RateModel};
use crate::operator::{build_operator, dirichlet_form, TruncationSpec};
use crate::qsd::{pi_weights, qsd_from_ground_state};
use crate::simulate::{extinction_study, InitialState, SimulationConfig};
use crate::analysis::solve;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: crate::Result<(bool, String)>) -> CheckOutcome {
    match r {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn builtin_models() -> Vec<RateModel> {
    vec![
        RateModel::logistic(2.0, 1.0).unwrap(),
        RateModel::age(2.0, 1.0, 0.5).unwrap(),
        RateModel::smith(2.0, 1.0).unwrap(),
    ]
}

fn check_assumption_grid() -> crate::Result<(bool, String)> {
    let grid = log_grid(0.1, 10.0, 200);
    let failing: Vec<String> = builtin_models()
        .iter()
        .filter(|m| !check_assumptions(m, &grid).all_passed())
        .map(|m| m.name())
        .collect();
    Ok((failing.is_empty(), format!("failing models: {failing:?}")))
}

fn check_merge() -> crate::Result<(bool, String)> {
    let a = merge_eta(&LimitSpectrum::new(1.0, 1.0)?, 7, 1e-9).etas;
    let b = merge_eta(&LimitSpectrum::new(0.5, 1.0)?, 7, 1e-9).etas;
    let ok = a == [0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0] && b == [0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0];
    Ok((ok, format!("{a:?} / {b:?}")))
}

fn check_oracle(exec: Execution) -> crate::Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for model in builtin_models() {
        for _ in 0..3 {
            let k = rng.random_range(1..=12u64);
            let n = rng.random_range(2..=60usize);
            let op = build_operator(&model, k, &TruncationSpec::fixed(n))?;
            let top = (n).min(10);
            let spec = top_eigenpairs(&op, top, &SolverOptions { tol: 1e-13, execution: exec })?;
            let dense = dense_oracle(&op)?;
            for j in 0..top {
                let err = (spec.rhos[j] + dense[n - 1 - j]).abs() / op.scale();
                worst = worst.max(err);
            }
            if sturm_count(&op, 0.0) != n {
                return Ok((false, "operator not negative definite".into()));
            }
        }
    }
    Ok((worst <= 1e-10, format!("max relative deviation {worst:e}")))
}

fn check_dirichlet() -> crate::Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for model in builtin_models() {
        let op = build_operator(&model, 30, &TruncationSpec::fixed(200))?;
        for _ in 0..50 {
            let mut phi = vec![0.0; op.n()];
            let start = rng.random_range(0..150);
            for p in phi.iter_mut().skip(start).take(20) {
                *p = rng.random_range(-1.0..1.0);
            }
            let norm_sq: f64 = phi.iter().map(|v| v * v).sum();
            let gap = (dirichlet_form(&op, &phi) + op.inner_apply(&phi, &phi)).abs();
            worst = worst.max(gap / (norm_sq * op.scale()));
        }
    }
    Ok((worst <= 1e-12, format!("max scaled defect {worst:e}")))
}

fn check_branching() -> crate::Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for r in [0.3, 0.5, 0.8] {
        let (bp, dp) = (1.0, r);
        for m in 1..=6 {
            let v = branching_eigenvector(m, r, 400)?;
            let out = apply_m0(&v.values, bp, dp);
            let lam = -(m as f64) * (bp - dp);
            let num: f64 = out
                .iter()
                .enumerate()
                .map(|(i, o)| (o - lam * v.values.get(i).copied().unwrap_or(0.0)).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = v.values.iter().map(|x| x * x).sum::<f64>().sqrt() * lam.abs();
            worst = worst.max(num / den);
        }
    }
    Ok((worst <= 1e-8, format!("max relative residual {worst:e}")))
}

fn check_qsd(exec: Execution) -> crate::Result<(bool, String)> {
    let m = RateModel::logistic(2.0, 1.0)?;
    let s = solve(&m, 20, 2, &SolverOptions { tol: 1e-13, execution: exec })?;
    let q = qsd_from_ground_state(&s.spec, &pi_weights(&m, 20, s.op.n())?)?;
    let sum: f64 = q.nu.iter().sum();
    let ok = (sum - 1.0).abs() < 1e-12 && q.mode().abs_diff(20) <= 3;
    Ok((ok, format!("mass {sum}, mode {}", q.mode())))
}

fn check_determinism(exec: Execution) -> crate::Result<(bool, String)> {
    let m = RateModel::logistic(2.0, 1.0)?;
    let cfg = SimulationConfig {
        seed: 42,
        n_traj: 50,
        t_max: 1e5,
        initial: InitialState::Fixed(5),
        execution: exec,
    };
    let a = extinction_study(&m, 5, &cfg)?;
    let b = extinction_study(&m, 5, &cfg)?;
    Ok((a.times == b.times, format!("{} trajectories", a.times.len())))
}

fn check_constants() -> crate::Result<(bool, String)> {
    let c = model_constants(&RateModel::logistic(2.0, 1.0)?)?;
    let ok = (c.x_star - 1.0).abs() < 1e-12
        && (c.h0 - (1.0 - 2f64.ln())).abs() < 1e-10
        && (c.h2_star - 0.5).abs() < 1e-12;
    Ok((ok, format!("x*={}, H(0)={}, H''(x*)={}", c.x_star, c.h0, c.h2_star)))
}

/// Runs every check; the suite passes when all outcomes pass.
pub fn run_validation_suite(exec: Execution) -> Vec<CheckOutcome> {
    vec![
        outcome("model_constants", check_constants()),
        outcome("assumptions_builtin", check_assumption_grid()),
        outcome("merge_eta", check_merge()),
        outcome("oracle_equivalence", check_oracle(exec)),
        outcome("dirichlet_identity", check_dirichlet()),
        outcome("branching_m0_residual", check_branching()),
        outcome("qsd_logistic_k20", check_qsd(exec)),
        outcome("simulation_determinism", check_determinism(exec)),
    ]
}
