//! Population models: birth and death rate functions `b`, `d` on the positive
//! half-line, the scaled rates `K b(n/K)`, `K d(n/K)`, derived constants and
//! sampled checks of the standing assumptions.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::quadrature;

/// Rate function handle for user-supplied models.
pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("rate evaluation produced a non-finite value at n={n}, K={k}")]
    NonFiniteRate { n: u64, k: u64 },
    #[error("no sign change of b-d found on (0, {x_max}]: positive fixed point not found")]
    FixedPointNotFound { x_max: f64 },
    #[error("quadrature of log(b/d) did not converge: {0}")]
    Integration(String),
    #[error("model violates an assumption: {0}")]
    Assumption(String),
}

/// A birth-and-death model given by the pair `(b, d)`.
#[derive(Clone)]
pub enum RateModel {
    /// `b(x) = λx`, `d(x) = x(μ + x)`.
    Logistic { lambda: f64, mu: f64 },
    /// Ayala-Gilpin-Ehrenfeld: `b(x) = λx`, `d(x) = x(μ + x^θ)`.
    Age { lambda: f64, mu: f64, theta: f64 },
    /// Smith: `b(x) = λx/(1+x)`, `d(x) = x(μ + x)/(1+x)`.
    Smith { lambda: f64, mu: f64 },
    Custom {
        name: String,
        birth: RateFn,
        death: RateFn,
    },
}

impl fmt::Debug for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Logistic { lambda, mu } => write!(f, "Logistic(λ={lambda}, μ={mu})"),
            Self::Age { lambda, mu, theta } => write!(f, "AGE(λ={lambda}, μ={mu}, θ={theta})"),
            Self::Smith { lambda, mu } => write!(f, "Smith(λ={lambda}, μ={mu})"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

fn check_lambda_mu(lambda: f64, mu: f64) -> Result<(), ModelError> {
    if !(lambda.is_finite() && mu.is_finite()) {
        return Err(ModelError::InvalidParameters("λ and μ must be finite".into()));
    }
    if !(mu > 0.0) {
        return Err(ModelError::InvalidParameters(format!("μ must be positive, got {mu}")));
    }
    if !(lambda > mu) {
        return Err(ModelError::InvalidParameters(format!(
            "λ must exceed μ (got λ={lambda}, μ={mu})"
        )));
    }
    Ok(())
}

impl RateModel {
    pub fn logistic(lambda: f64, mu: f64) -> Result<Self, ModelError> {
        check_lambda_mu(lambda, mu)?;
        Ok(Self::Logistic { lambda, mu })
    }

    pub fn age(lambda: f64, mu: f64, theta: f64) -> Result<Self, ModelError> {
        check_lambda_mu(lambda, mu)?;
        if !(theta > 0.0 && theta < 1.0) {
            return Err(ModelError::InvalidParameters(format!(
                "θ must lie in (0,1), got {theta}"
            )));
        }
        Ok(Self::Age { lambda, mu, theta })
    }

    pub fn smith(lambda: f64, mu: f64) -> Result<Self, ModelError> {
        check_lambda_mu(lambda, mu)?;
        Ok(Self::Smith { lambda, mu })
    }

    /// User-supplied model. Both functions must vanish at 0.
    pub fn custom<B, D>(name: impl Into<String>, birth: B, death: D) -> Result<Self, ModelError>
    where
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let (b0, d0) = (birth(0.0), death(0.0));
        if b0 != 0.0 || d0 != 0.0 {
            return Err(ModelError::InvalidParameters(format!(
                "custom rates must vanish at 0 (b(0)={b0}, d(0)={d0})"
            )));
        }
        Ok(Self::Custom {
            name: name.into(),
            birth: Arc::new(birth),
            death: Arc::new(death),
        })
    }

    /// Builds a built-in model from its name (`logistic`, `age`, `smith`).
    pub fn from_name(
        name: &str,
        lambda: f64,
        mu: f64,
        theta: Option<f64>,
    ) -> Result<Self, ModelError> {
        match name.to_ascii_lowercase().as_str() {
            "logistic" => Self::logistic(lambda, mu),
            "age" => {
                let theta = theta.ok_or_else(|| {
                    ModelError::InvalidParameters("AGE model requires theta".into())
                })?;
                Self::age(lambda, mu, theta)
            }
            "smith" => Self::smith(lambda, mu),
            other => Err(ModelError::InvalidParameters(format!("unknown model '{other}'"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Logistic { .. } => "logistic".into(),
            Self::Age { .. } => "age".into(),
            Self::Smith { .. } => "smith".into(),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    #[inline]
    pub fn birth(&self, x: f64) -> f64 {
        match self {
            Self::Logistic { lambda, .. } | Self::Age { lambda, .. } => lambda * x,
            Self::Smith { lambda, .. } => lambda * x / (1.0 + x),
            Self::Custom { birth, .. } => birth(x),
        }
    }

    #[inline]
    pub fn death(&self, x: f64) -> f64 {
        match self {
            Self::Logistic { mu, .. } => x * (mu + x),
            Self::Age { mu, theta, .. } => x * (mu + x.powf(*theta)),
            Self::Smith { mu, .. } => x * (mu + x) / (1.0 + x),
            Self::Custom { death, .. } => death(x),
        }
    }

    /// Closed-form `(b'(x), d'(x))` for the built-in models.
    pub fn analytic_derivatives(&self, x: f64) -> Option<(f64, f64)> {
        match *self {
            Self::Logistic { lambda, mu } => Some((lambda, mu + 2.0 * x)),
            Self::Age { lambda, mu, theta } => {
                let dp = if x == 0.0 { mu } else { mu + (1.0 + theta) * x.powf(theta) };
                Some((lambda, dp))
            }
            Self::Smith { lambda, mu } => {
                let s = (1.0 + x) * (1.0 + x);
                Some((lambda / s, (mu + 2.0 * x + x * x) / s))
            }
            Self::Custom { .. } => None,
        }
    }

    /// Finite-difference `(b'(x), d'(x))` with relative step `1e-6`. At the
    /// origin a second-order one-sided stencil with absolute step `1e-6` is used,
    /// since the rates live on the half-line.
    pub fn numerical_derivatives(&self, x: f64) -> (f64, f64) {
        let diff = |f: &dyn Fn(f64) -> f64| -> f64 {
            if x <= 0.0 {
                let h = 1e-6;
                (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h)
            } else {
                let h = 1e-6 * x.abs().max(1e-3);
                let h = h.min(0.5 * x);
                (f(x + h) - f(x - h)) / (2.0 * h)
            }
        };
        (diff(&|t| self.birth(t)), diff(&|t| self.death(t)))
    }

    pub fn derivatives(&self, x: f64) -> (f64, f64) {
        self.analytic_derivatives(x)
            .unwrap_or_else(|| self.numerical_derivatives(x))
    }

    /// Scaled rates `(λ_n, μ_n) = (K b(n/K), K d(n/K))`.
    pub fn rates_at(&self, k: u64, n: u64) -> Result<(f64, f64), ModelError> {
        if k == 0 {
            return Err(ModelError::InvalidParameters("K must be at least 1".into()));
        }
        if n == 0 {
            return Ok((0.0, 0.0));
        }
        let kf = k as f64;
        let x = n as f64 / kf;
        let (lam, mu) = (kf * self.birth(x), kf * self.death(x));
        if !(lam.is_finite() && mu.is_finite()) {
            return Err(ModelError::NonFiniteRate { n, k });
        }
        Ok((lam, mu))
    }
}

/// Constants of the model that the limit spectra are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConstants {
    /// `b'(0)`
    pub bp0: f64,
    /// `d'(0)`
    pub dp0: f64,
    pub x_star: f64,
    /// `b'(x*)`
    pub bp_star: f64,
    /// `d'(x*)`
    pub dp_star: f64,
    /// `b(x*)`
    pub b_star: f64,
    /// `H''(x*) = d'(x*)/d(x*) - b'(x*)/b(x*)`
    pub h2_star: f64,
    /// `∫_0^{x*} log(b/d) dx`
    pub h0: f64,
    /// `d'(x*) - b'(x*)`, the harmonic-oscillator lattice step.
    pub s1_step: f64,
    /// `b'(0) - d'(0)`, the branching lattice step.
    pub s2_step: f64,
}

const X_MAX: f64 = 1e6;

/// Positive root of `b - d` by bisection on a bracket found by doubling from 1.
pub fn find_fixed_point(model: &RateModel) -> Result<f64, ModelError> {
    let g = |x: f64| model.birth(x) - model.death(x);
    let mut hi = 1.0;
    while g(hi) >= 0.0 {
        hi *= 2.0;
        if hi > X_MAX {
            return Err(ModelError::FixedPointNotFound { x_max: X_MAX });
        }
    }
    let mut lo = hi / 2.0;
    while g(lo) <= 0.0 {
        lo /= 2.0;
        if lo < 1e-12 {
            return Err(ModelError::FixedPointNotFound { x_max: X_MAX });
        }
    }
    // `lo` may have been halved below `hi / 2`; tighten the bracket from the top.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    Ok(x)
}

pub fn model_constants(model: &RateModel) -> Result<ModelConstants, ModelError> {
    let x_star = find_fixed_point(model)?;
    let (b_star, d_star) = (model.birth(x_star), model.death(x_star));
    if (b_star - d_star).abs() > 1e-10 * b_star.abs().max(d_star.abs()) {
        return Err(ModelError::FixedPointNotFound { x_max: X_MAX });
    }
    let (bp0, dp0) = model.derivatives(0.0);
    let (bp_star, dp_star) = model.derivatives(x_star);
    let h2_star = dp_star / d_star - bp_star / b_star;
    let h0 = quadrature::adaptive_gauss_kronrod(
        |x| (model.birth(x) / model.death(x)).ln(),
        0.0,
        x_star,
        1e-10,
    )
    .map_err(ModelError::Integration)?;

    let consts = ModelConstants {
        bp0,
        dp0,
        x_star,
        bp_star,
        dp_star,
        b_star,
        h2_star,
        h0,
        s1_step: dp_star - bp_star,
        s2_step: bp0 - dp0,
    };
    if !(consts.bp0 > consts.dp0 && consts.dp0 > 0.0) {
        return Err(ModelError::Assumption(format!(
            "need b'(0) > d'(0) > 0, got b'(0)={bp0}, d'(0)={dp0}"
        )));
    }
    if !(consts.s1_step > 0.0 && consts.h2_star > 0.0) {
        return Err(ModelError::Assumption(format!(
            "fixed point x*={x_star} is not attracting (d'(x*)-b'(x*)={})",
            consts.s1_step
        )));
    }
    Ok(consts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// First grid point where the check failed.
    pub first_offending: Option<f64>,
    /// Advisory checks are reported but do not fail the report.
    pub advisory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.advisory)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed && !c.advisory)
    }
}

/// 200 log-spaced points in `[1e-3, 1e3]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 200)
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn first_decrease(grid: &[f64], f: impl Fn(f64) -> f64, rel_slack: f64) -> Option<f64> {
    grid.windows(2).find_map(|w| {
        let (f0, f1) = (f(w[0]), f(w[1]));
        (f1 < f0 - rel_slack * f0.abs().max(f1.abs())).then_some(w[1])
    })
}

/// Sampled (heuristic) checks of the standing assumptions on `grid`.
pub fn check_assumptions(model: &RateModel, grid: &[f64]) -> AssumptionReport {
    assert!(!grid.is_empty(), "grid must be nonempty");
    const SLACK: f64 = 1e-12;
    let b = |x: f64| model.birth(x);
    let d = |x: f64| model.death(x);
    let mut checks = Vec::new();

    let bad = grid.iter().copied().find(|&x| !(b(x) > 0.0 && d(x) > 0.0));
    checks.push(AssumptionCheck {
        name: "rates_positive",
        passed: bad.is_none(),
        first_offending: bad,
        advisory: false,
    });

    let bad = first_decrease(grid, b, SLACK).or_else(|| first_decrease(grid, d, SLACK));
    checks.push(AssumptionCheck {
        name: "rates_increasing",
        passed: bad.is_none(),
        first_offending: bad,
        advisory: false,
    });

    let bad = first_decrease(grid, |x| d(x) / x, SLACK);
    checks.push(AssumptionCheck {
        name: "death_per_capita_increasing",
        passed: bad.is_none(),
        first_offending: bad,
        advisory: false,
    });

    // Smith's model has a decreasing per-capita birth rate, so this one is advisory.
    let bad = first_decrease(grid, |x| b(x) / x, SLACK);
    checks.push(AssumptionCheck {
        name: "birth_per_capita_increasing",
        passed: bad.is_none(),
        first_offending: bad,
        advisory: true,
    });

    let bad = first_decrease(grid, |x| (d(x) / b(x)).ln(), SLACK);
    checks.push(AssumptionCheck {
        name: "log_death_over_birth_increasing",
        passed: bad.is_none(),
        first_offending: bad,
        advisory: false,
    });

    let (bp0, dp0) = model.derivatives(0.0);
    checks.push(AssumptionCheck {
        name: "births_prevail_at_zero",
        passed: bp0 > dp0 && dp0 > 0.0,
        first_offending: (!(bp0 > dp0 && dp0 > 0.0)).then_some(0.0),
        advisory: false,
    });

    let tail = &grid[grid.len() - (grid.len() / 4).max(2).min(grid.len())..];
    let tail_ok = |f: &dyn Fn(f64) -> f64| {
        tail.windows(2)
            .find_map(|w| (f(w[1]) > f(w[0]) * (1.0 + SLACK)).then_some(w[1]))
    };
    let bad = if tail.len() < 2 { None } else { tail_ok(&|x| b(x) / d(x)) };
    checks.push(AssumptionCheck {
        name: "deaths_prevail_at_infinity",
        passed: bad.is_none() && b(*tail.last().unwrap()) < d(*tail.last().unwrap()),
        first_offending: bad,
        advisory: false,
    });

    let bad = if tail.len() < 2 {
        None
    } else {
        tail_ok(&|x| b(x).ln().abs() / x).or_else(|| tail_ok(&|x| d(x).ln().abs() / x))
    };
    checks.push(AssumptionCheck {
        name: "subexponential_rates",
        passed: bad.is_none(),
        first_offending: bad,
        advisory: false,
    });

    let fixed = find_fixed_point(model).is_ok();
    checks.push(AssumptionCheck {
        name: "positive_fixed_point",
        passed: fixed,
        first_offending: None,
        advisory: false,
    });

    AssumptionReport { checks }
}
