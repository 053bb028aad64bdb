//! Convergence of `ρ_j^(K)` to the merged limit sequence, localization of
//! eigenvectors, comparison with the limit eigenfunctions, and quasi-eigenvector
//! residual certificates.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::eigensolve::{count_rho_below, lowest_rhos, top_eigenpairs, SolverOptions, SpectralResult};
use crate::exec::map_slice;
use crate::limit_spectra::{
    branching_eigenvector, merge_eta, HermiteEigenfunction, LimitSpectrum, MergedSequence,
};
use crate::model::{model_constants, ModelConstants, RateModel};
use crate::operator::{build_operator, choose_truncation, TridiagonalOperator, TruncationSpec};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("refused: {0}")]
    Refused(String),
}

/// Truncation, operator and lowest `k` eigenpairs at carrying capacity `k_cap`.
#[derive(Debug, Clone)]
pub struct Solved {
    pub k: u64,
    pub trunc: TruncationSpec,
    pub op: TridiagonalOperator,
    pub spec: SpectralResult,
}

pub fn solve(model: &RateModel, k: u64, count: usize, opts: &SolverOptions) -> crate::Result<Solved> {
    let trunc = choose_truncation(model, k)?;
    let op = build_operator(model, k, &trunc)?;
    let spec = top_eigenpairs(&op, count.min(op.n()), opts)?;
    Ok(Solved { k, trunc, op, spec })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    #[serde(rename = "K_list")]
    pub k_list: Vec<u64>,
    /// `table[i][j] = ρ_j` at `K = k_list[i]`.
    pub table: Vec<Vec<f64>>,
    pub etas: MergedSequence,
    /// `errors[i][j] = |ρ_j − η_j|` at `K = k_list[i]`.
    pub errors: Vec<Vec<f64>>,
    pub floor_flags: Vec<bool>,
}

impl ConvergenceReport {
    /// Whether `errors[·][j]` is nonincreasing along the ladder up to a
    /// multiplicative `slack` (0.1 for 10%).
    pub fn trend_ok(&self, j: usize, slack: f64) -> bool {
        self.errors
            .windows(2)
            .all(|w| w[1][j] <= (1.0 + slack) * w[0][j] + 1e-12)
    }

    /// `ρ_1 − ρ_0` at each K.
    pub fn gaps(&self) -> Vec<f64> {
        self.table.iter().map(|r| r[1] - r[0]).collect()
    }

    /// Writes `K,j,rho,eta,abs_err` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "K,j,rho,eta,abs_err")?;
        for (i, k) in self.k_list.iter().enumerate() {
            for (j, rho) in self.table[i].iter().enumerate() {
                writeln!(w, "{k},{j},{rho:?},{:?},{:?}", self.etas.etas[j], self.errors[i][j])?;
            }
        }
        Ok(())
    }
}

pub const MAX_CONVERGENCE_J: usize = 8;

/// `ρ_j^(K)` for `j ≤ j_max` along `k_list`, paired with the merged sequence.
pub fn spectrum_convergence(
    model: &RateModel,
    k_list: &[u64],
    j_max: usize,
    opts: &SolverOptions,
) -> crate::Result<ConvergenceReport> {
    if k_list.is_empty() || k_list.windows(2).any(|w| w[1] <= w[0]) || k_list[0] == 0 {
        return Err(AnalysisError::InvalidInput("K list must be positive and increasing".into()).into());
    }
    if j_max > MAX_CONVERGENCE_J {
        return Err(AnalysisError::InvalidInput(format!(
            "j_max must be at most {MAX_CONVERGENCE_J}, got {j_max}"
        ))
        .into());
    }
    let consts = model_constants(model)?;
    let etas = merge_eta(&LimitSpectrum::from_constants(&consts)?, j_max + 1, 1e-9);
    let inner = SolverOptions {
        execution: crate::Execution::Sequential,
        ..*opts
    };
    let rows = map_slice(opts.execution, k_list, |&k| -> crate::Result<(Vec<f64>, bool)> {
        let trunc = choose_truncation(model, k)?;
        let op = build_operator(model, k, &trunc)?;
        Ok(lowest_rhos(&op, (j_max + 1).min(op.n()), &inner)?)
    });
    let mut table = Vec::with_capacity(k_list.len());
    let mut floor_flags = Vec::with_capacity(k_list.len());
    for row in rows {
        let (rhos, flag) = row?;
        table.push(rhos);
        floor_flags.push(flag);
    }
    let errors = table
        .iter()
        .map(|r| r.iter().zip(&etas.etas).map(|(a, b)| (a - b).abs()).collect())
        .collect();
    Ok(ConvergenceReport {
        k_list: k_list.to_vec(),
        table,
        etas,
        errors,
        floor_flags,
    })
}

/// `⌊(ln K)²⌋`
pub fn n_left(k: u64) -> i64 {
    let l = (k as f64).ln();
    (l * l).floor() as i64
}

/// `⌊K x* − K^{2/3} ln K⌋`
pub fn n_right(k: u64, x_star: f64) -> i64 {
    let kf = k as f64;
    (kf * x_star - kf.powf(2.0 / 3.0) * kf.ln()).floor() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationReport {
    #[serde(rename = "K")]
    pub k: u64,
    pub j: usize,
    pub n_l: i64,
    pub n_r: i64,
    /// `max |φ_j(n)|` over `n_l ≤ n ≤ n_r`; `None` when the window is empty.
    pub mid_sup: Option<f64>,
    /// `Σ_{n < n_l} φ_j(n)²`
    pub mass_left: f64,
    /// `Σ_{n > n_r} φ_j(n)²` (`n ≥ n_l` when the window is empty).
    pub mass_right: f64,
    pub mass_middle: f64,
    pub window_empty: bool,
}

impl LocalizationReport {
    pub fn csv_header() -> &'static str {
        "K,j,n_l,n_r,mid_sup,mass_left,mass_right"
    }

    pub fn csv_row(&self) -> String {
        let sup = self.mid_sup.map_or_else(|| "NaN".to_string(), |v| format!("{v:?}"));
        format!(
            "{},{},{},{},{},{:?},{:?}",
            self.k, self.j, self.n_l, self.n_r, sup, self.mass_left, self.mass_right
        )
    }
}

/// Sup and masses of `φ` over the window `[lo, hi]` of states (1-based).
pub fn window_stats(phi: &[f64], lo: i64, hi: i64) -> (Option<f64>, f64, f64, f64) {
    let (mut left, mut mid, mut right) = (0.0, 0.0, 0.0);
    let mut sup: Option<f64> = None;
    let empty = hi <= lo;
    for (i, &v) in phi.iter().enumerate() {
        let n = i as i64 + 1;
        let sq = v * v;
        if n < lo {
            left += sq;
        } else if empty || n > hi {
            right += sq;
        } else {
            mid += sq;
            sup = Some(sup.map_or(v.abs(), |s: f64| s.max(v.abs())));
        }
    }
    (sup, left, mid, right)
}

pub fn localization_report(
    spec: &SpectralResult,
    consts: &ModelConstants,
    k: u64,
    j: usize,
) -> crate::Result<LocalizationReport> {
    let phi = spec
        .vectors
        .get(j)
        .ok_or_else(|| AnalysisError::InvalidInput(format!("no eigenvector j={j}")))?;
    let n_l = n_left(k);
    let n_r = n_right(k, consts.x_star);
    let (mid_sup, mass_left, mass_middle, mass_right) = window_stats(phi, n_l, n_r);
    Ok(LocalizationReport {
        k,
        j,
        n_l,
        n_r,
        mid_sup,
        mass_left,
        mass_right,
        mass_middle,
        window_empty: n_r <= n_l,
    })
}

/// Step-function embedding `ℓ² → L²` at scale `√K` around `K x*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddingGrid {
    #[serde(rename = "K")]
    pub k: u64,
    pub x_star: f64,
}

impl EmbeddingGrid {
    pub fn new(k: u64, x_star: f64) -> Self {
        Self { k, x_star }
    }

    /// Centre of the cell `I_n`: `(n − K x*)/√K`.
    pub fn x_of_n(&self, n: usize) -> f64 {
        let kf = self.k as f64;
        (n as f64 - kf * self.x_star) / kf.sqrt()
    }

    pub fn width(&self) -> f64 {
        1.0 / (self.k as f64).sqrt()
    }

    /// Height factor `K^{1/4}` of the basis step functions.
    pub fn scale(&self) -> f64 {
        (self.k as f64).powf(0.25)
    }

    /// `‖Q_K u‖²_{L²}` computed cell by cell.
    pub fn embedded_norm_sq(&self, u: &[f64]) -> f64 {
        let h = self.scale();
        u.iter().map(|v| (h * v) * (h * v) * self.width()).sum()
    }

    /// `(P_K f)(n) = K^{1/4} ∫_{I_n} f` by Gauss–Legendre on each cell.
    pub fn project<F: Fn(f64) -> f64>(&self, f: F, n_states: usize, nodes: usize) -> Vec<f64> {
        let (gx, gw) = gauss_legendre(nodes);
        let half = 0.5 * self.width();
        let h = self.scale();
        (1..=n_states)
            .map(|n| {
                let c = self.x_of_n(n);
                h * half * gx.iter().zip(&gw).map(|(x, w)| w * f(c + half * x)).sum::<f64>()
            })
            .collect()
    }

    /// Midpoint version of [`Self::project`]: `K^{−1/4} f(x_n)`.
    pub fn project_midpoint<F: Fn(f64) -> f64>(&self, f: F, n_states: usize) -> Vec<f64> {
        let c = self.scale() * self.width();
        (1..=n_states).map(|n| c * f(self.x_of_n(n))).collect()
    }
}

/// `min_± ‖a ∓ b‖₂`
pub fn signed_l2_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let (mut plus, mut minus) = (0.0, 0.0);
    for i in 0..n {
        let (x, y) = (get(a, i), get(b, i));
        plus += (x - y) * (x - y);
        minus += (x + y) * (x + y);
    }
    plus.min(minus).sqrt()
}

const BULK_MASS_THRESHOLD: f64 = 0.5;

/// `L²` distance between the embedded bulk part (`n > n_r`) of `φ_j` and the
/// unit Hermite eigenfunction `ψ_{n_target}`, minimized over the sign.
pub fn compare_bulk_to_hermite(
    spec: &SpectralResult,
    consts: &ModelConstants,
    k: u64,
    j: usize,
    n_target: usize,
) -> crate::Result<f64> {
    let phi = spec
        .vectors
        .get(j)
        .ok_or_else(|| AnalysisError::InvalidInput(format!("no eigenvector j={j}")))?;
    let n_r = n_right(k, consts.x_star).max(0) as usize;
    let right_mass: f64 = phi.iter().skip(n_r).map(|v| v * v).sum();
    if right_mass < BULK_MASS_THRESHOLD {
        return Err(AnalysisError::Refused(format!(
            "eigenvector j={j} has bulk mass {right_mass:.3} < {BULK_MASS_THRESHOLD}"
        ))
        .into());
    }
    let psi = HermiteEigenfunction::for_constants(n_target, consts)?;
    let grid = EmbeddingGrid::new(k, consts.x_star);
    let proj = grid.project(|x| psi.eval(x), phi.len(), 8);
    let overlap: f64 = phi.iter().zip(&proj).skip(n_r).map(|(a, b)| a * b).sum();
    Ok((right_mass + 1.0 - 2.0 * overlap.abs()).max(0.0).sqrt())
}

/// `ℓ²` distance between the renormalized boundary part (`n < n_l`) of `φ_j`
/// and the normalized branching eigenvector `v_{m_target}`, minimized over sign.
pub fn compare_boundary_to_branching(
    spec: &SpectralResult,
    consts: &ModelConstants,
    k: u64,
    j: usize,
    m_target: usize,
) -> crate::Result<f64> {
    let phi = spec
        .vectors
        .get(j)
        .ok_or_else(|| AnalysisError::InvalidInput(format!("no eigenvector j={j}")))?;
    let n_l = (n_left(k).max(1) as usize).min(phi.len() + 1);
    let head = &phi[..n_l - 1];
    let left_mass: f64 = head.iter().map(|v| v * v).sum();
    if left_mass < BULK_MASS_THRESHOLD {
        return Err(AnalysisError::Refused(format!(
            "eigenvector j={j} has boundary mass {left_mass:.3} < {BULK_MASS_THRESHOLD}"
        ))
        .into());
    }
    let u: Vec<f64> = head.iter().map(|v| v / left_mass.sqrt()).collect();
    let v = branching_eigenvector(m_target, consts.dp0 / consts.bp0, head.len())?.normalized();
    Ok(signed_l2_distance(&u, &v))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiEigenvector {
    pub vector: Vec<f64>,
    /// Limit value `ρ` the vector approximates.
    pub rho: f64,
    /// `‖𝓛_K v + ρ v‖₂`
    pub residual: f64,
    /// An eigenvalue `−ρ_j` with `|ρ_j − ρ| ≤ residual` exists (inertia count).
    pub certified: bool,
}

/// True when `[ρ − r, ρ + r]` contains some `ρ_j` of the operator.
pub fn certify(op: &TridiagonalOperator, rho: f64, residual: f64) -> bool {
    let hi = rho + residual * (1.0 + 1e-12);
    let lo = rho - residual * (1.0 + 1e-12);
    count_rho_below(op, hi) > count_rho_below(op, lo)
}

fn finish(op: &TridiagonalOperator, mut vector: Vec<f64>, rho: f64) -> QuasiEigenvector {
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    vector.iter_mut().for_each(|v| *v /= norm);
    let residual = op.residual(&vector, rho);
    QuasiEigenvector {
        certified: certify(op, rho, residual),
        vector,
        rho,
        residual,
    }
}

pub const MAX_BULK_TARGET: usize = 10;
pub const MAX_BOUNDARY_TARGET: usize = 6;

/// `P_K ψ_{n_target}` (midpoint rule), normalized, against `ρ = n_target·s₁`.
pub fn quasi_eigenvector_bulk(
    op: &TridiagonalOperator,
    consts: &ModelConstants,
    n_target: usize,
) -> crate::Result<QuasiEigenvector> {
    if n_target > MAX_BULK_TARGET {
        return Err(AnalysisError::InvalidInput(format!(
            "bulk target must be at most {MAX_BULK_TARGET}"
        ))
        .into());
    }
    let psi = HermiteEigenfunction::for_constants(n_target, consts)?;
    let grid = EmbeddingGrid::new(op.k, consts.x_star);
    let v = grid.project_midpoint(|x| psi.eval(x), op.n());
    Ok(finish(op, v, n_target as f64 * consts.s1_step))
}

/// `v_{m_target}` zero-padded to `N`, normalized, against `ρ = m·s₂`.
pub fn quasi_eigenvector_boundary(
    op: &TridiagonalOperator,
    consts: &ModelConstants,
    m_target: usize,
) -> crate::Result<QuasiEigenvector> {
    if m_target == 0 || m_target > MAX_BOUNDARY_TARGET {
        return Err(AnalysisError::InvalidInput(format!(
            "boundary target must lie in 1..={MAX_BOUNDARY_TARGET}"
        ))
        .into());
    }
    let v = branching_eigenvector(m_target, consts.dp0 / consts.bp0, op.n())?;
    Ok(finish(op, v.values, m_target as f64 * consts.s2_step))
}
