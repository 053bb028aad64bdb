//! The conjugated generator `𝓛_K` truncated to states `1..=N`, its potential and
//! Dirichlet form.
//!
//! Storage is 0-based: index `i` holds state `n = i + 1`. The cemetery state 0 is
//! never stored; killing at 0 is the absence of a coupling below `n = 1`.
//! Truncation at `N` amounts to killing at `N + 1`.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::model::{find_fixed_point, ModelError, RateModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("K must be a positive integer")]
    InvalidK,
    #[error("truncation size must be at least 1")]
    EmptyTruncation,
    #[error("rate overflow at state n={n}")]
    Overflow { n: u64 },
    #[error("no truncation N <= {cap} reaches d(N/K)/b(N/K) >= 4")]
    TruncationCap { cap: u64 },
    #[error("inconsistent operator arrays: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Birth rates `λ_1..λ_N` and death rates `μ_1..μ_{N+1}` behind an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthDeathRates {
    pub birth: Vec<f64>,
    pub death: Vec<f64>,
}

/// Symmetric tridiagonal matrix; eigenvalues are `-ρ_j` with `ρ_j ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalOperator {
    /// Carrying capacity (0 for operators not built from a model).
    pub k: u64,
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
    /// Coupling `√(λ_N μ_{N+1})` to the first discarded state.
    pub edge_coupling: f64,
    pub rates: Option<BirthDeathRates>,
}

impl TridiagonalOperator {
    /// Generic symmetric tridiagonal matrix without rate data.
    pub fn from_parts(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self, OperatorError> {
        if diag.is_empty() {
            return Err(OperatorError::EmptyTruncation);
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(OperatorError::Shape(format!(
                "diag has {} entries, offdiag {}",
                diag.len(),
                offdiag.len()
            )));
        }
        if diag.iter().chain(&offdiag).any(|v| !v.is_finite()) {
            return Err(OperatorError::Shape("non-finite entry".into()));
        }
        Ok(Self {
            k: 0,
            diag,
            offdiag,
            edge_coupling: 0.0,
            rates: None,
        })
    }

    /// Truncation size `N`.
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// `max |diag|`, the reference scale for absolute tolerances.
    pub fn scale(&self) -> f64 {
        self.diag.iter().fold(0.0f64, |m, d| m.max(d.abs()))
    }

    /// Matrix-vector product `𝓛_K v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n();
        assert_eq!(v.len(), n, "vector length must equal N");
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.offdiag[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.offdiag[i] * v[i + 1];
            }
            out[i] = s;
        }
    }

    /// `‖𝓛_K v + ρ v‖₂`.
    pub fn residual(&self, v: &[f64], rho: f64) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = (self.diag[i] + rho) * v[i];
            if i > 0 {
                s += self.offdiag[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.offdiag[i] * v[i + 1];
            }
            acc += s * s;
        }
        acc.sqrt()
    }

    /// `⟨u, 𝓛_K v⟩`
    pub fn inner_apply(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(self.apply(v)).map(|(a, b)| a * b).sum()
    }

    /// Writes `n,diag,offdiag` rows (offdiag of the last row is the edge coupling).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,diag,offdiag")?;
        for i in 0..self.n() {
            let off = self.offdiag.get(i).copied().unwrap_or(self.edge_coupling);
            writeln!(w, "{},{:?},{:?}", i + 1, self.diag[i], off)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationSpec {
    pub n: usize,
    /// `√(λ_N μ_{N+1}) / (λ_N + μ_N − √(λ_{N−1} μ_N))` at the cut.
    pub tail_ratio: f64,
    /// `√(b/d)(N/K)`: per-step decay factor of eigenvector tails at the cut.
    pub contraction: f64,
}

impl TruncationSpec {
    /// A fixed size without the tail diagnostics.
    pub fn fixed(n: usize) -> Self {
        Self {
            n,
            tail_ratio: f64::NAN,
            contraction: f64::NAN,
        }
    }
}

const TRUNCATION_CAP: u64 = 100_000_000;

/// Smallest `N ≥ ⌈4 K x*⌉` with `d(N/K)/b(N/K) ≥ 4`.
pub fn choose_truncation(model: &RateModel, k: u64) -> Result<TruncationSpec, OperatorError> {
    if k == 0 {
        return Err(OperatorError::InvalidK);
    }
    let x_star = find_fixed_point(model)?;
    let kf = k as f64;
    let passes = |n: u64| {
        let x = n as f64 / kf;
        model.death(x) >= 4.0 * model.birth(x)
    };
    let target = 4.0 * kf * x_star;
    let lower = ((target * (1.0 - 1e-12)).ceil() as u64).max(1);
    if lower > TRUNCATION_CAP {
        return Err(OperatorError::TruncationCap { cap: TRUNCATION_CAP });
    }
    let n = if passes(lower) {
        lower
    } else {
        let mut lo = lower;
        let mut hi = lower.saturating_mul(2);
        while !passes(hi) {
            if hi >= TRUNCATION_CAP {
                return Err(OperatorError::TruncationCap { cap: TRUNCATION_CAP });
            }
            lo = hi;
            hi = (hi * 2).min(TRUNCATION_CAP);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if passes(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let rate = |m: u64| model.rates_at(k, m);
    let (l_n, m_n) = rate(n)?;
    let (_, m_n1) = rate(n + 1)?;
    let (l_prev, _) = rate(n - 1)?;
    let tail_ratio = (l_n * m_n1).sqrt() / (l_n + m_n - (l_prev * m_n).sqrt());
    let x = n as f64 / kf;
    Ok(TruncationSpec {
        n: n as usize,
        tail_ratio,
        contraction: (model.birth(x) / model.death(x)).sqrt(),
    })
}

/// `Σ_{⌈K x*⌉ ≤ m < N} ½ log(λ_m / μ_{m+1})`: the log of the WKB decay of an
/// eigenvector from the fixed point to the cut. Small `K` can leave this
/// modest even when the ratio rule holds at `N`.
pub fn tail_log_decay(model: &RateModel, k: u64, n: usize) -> Result<f64, OperatorError> {
    if k == 0 {
        return Err(OperatorError::InvalidK);
    }
    let kf = k as f64;
    let start = ((kf * find_fixed_point(model)?).ceil() as usize).max(1);
    Ok((start..n)
        .map(|m| 0.5 * (model.birth(m as f64 / kf) / model.death((m + 1) as f64 / kf)).ln())
        .sum())
}

fn geometric_mean(a: f64, b: f64) -> f64 {
    let p = a * b;
    if p.is_finite() && p < 1e300 {
        p.sqrt()
    } else {
        (0.5 * (a.ln() + b.ln())).exp()
    }
}

/// Builds `𝓛_K` on states `1..=trunc.n`.
pub fn build_operator(
    model: &RateModel,
    k: u64,
    trunc: &TruncationSpec,
) -> Result<TridiagonalOperator, OperatorError> {
    if k == 0 {
        return Err(OperatorError::InvalidK);
    }
    let n = trunc.n;
    if n == 0 {
        return Err(OperatorError::EmptyTruncation);
    }
    let mut birth = Vec::with_capacity(n);
    let mut death = Vec::with_capacity(n + 1);
    for m in 1..=(n as u64 + 1) {
        let (l, u) = model.rates_at(k, m).map_err(|e| match e {
            ModelError::NonFiniteRate { n, .. } => OperatorError::Overflow { n },
            other => OperatorError::Model(other),
        })?;
        if m <= n as u64 {
            birth.push(l);
        }
        death.push(u);
    }
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let d = -(birth[i] + death[i]);
        if !d.is_finite() {
            return Err(OperatorError::Overflow { n: i as u64 + 1 });
        }
        diag.push(d);
    }
    let couple = |i: usize| geometric_mean(birth[i], death[i + 1]);
    let offdiag: Vec<f64> = (0..n - 1).map(couple).collect();
    if let Some(i) = offdiag.iter().position(|v| !v.is_finite()) {
        return Err(OperatorError::Overflow { n: i as u64 + 1 });
    }
    let edge_coupling = couple(n - 1);
    Ok(TridiagonalOperator {
        k,
        diag,
        offdiag,
        edge_coupling,
        rates: Some(BirthDeathRates { birth, death }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialProfile {
    /// `V_n` for `n = 1..=N` (0-based storage).
    pub v: Vec<f64>,
    /// `max(0, −min_n V_n)`
    pub xi: f64,
}

/// `V_n = λ_n + μ_n − √(λ_n μ_{n+1}) − √(λ_{n−1} μ_n)·1_{n>1}`.
pub fn potential_profile(op: &TridiagonalOperator) -> PotentialProfile {
    let n = op.n();
    let v: Vec<f64> = (0..n)
        .map(|i| {
            let right = op.offdiag.get(i).copied().unwrap_or(op.edge_coupling);
            let left = if i > 0 { op.offdiag[i - 1] } else { 0.0 };
            -op.diag[i] - right - left
        })
        .collect();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    PotentialProfile {
        xi: (-min).max(0.0),
        v,
    }
}

/// `Σ_{n≤N} √(λ_n μ_{n+1})(φ(n+1) − φ(n))² + Σ V_n φ(n)²` with `φ(N+1) = 0`.
///
/// Equals `−⟨φ, 𝓛_K φ⟩` exactly (no boundary correction at `n = 1`).
pub fn dirichlet_form(op: &TridiagonalOperator, phi: &[f64]) -> f64 {
    let n = op.n();
    assert_eq!(phi.len(), n, "φ must have length N");
    let pot = potential_profile(op);
    let mut kinetic = 0.0;
    for i in 0..n {
        let a = op.offdiag.get(i).copied().unwrap_or(op.edge_coupling);
        let next = if i + 1 < n { phi[i + 1] } else { 0.0 };
        let diff = next - phi[i];
        kinetic += a * diff * diff;
    }
    let potential: f64 = pot.v.iter().zip(phi).map(|(v, p)| v * p * p).sum();
    kinetic + potential
}
