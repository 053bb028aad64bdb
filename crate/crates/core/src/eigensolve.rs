//! Low-lying spectrum of a negative symmetric tridiagonal operator.
//!
//! Eigenvalues are written `−ρ_j`. They are located by bisection on an inertia
//! count. For operators built from rates, the count runs on the bidiagonal
//! factorization `−𝓛_K = GᵀG`: the pivots of `GGᵀ = LDLᵀ` are exactly
//! `d_i = μ_i` with `d_i l_i² = λ_i`, so a stationary qd sweep resolves even
//! exponentially small `ρ_0` to nearly full relative precision. Eigenvectors
//! come from a twisted factorization of `𝓛_K + ρ I`; members of tight clusters
//! after the first use inverse iteration with Gram–Schmidt.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::exec::{map_range, Execution};
use crate::operator::TridiagonalOperator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid eigensolver request: {0}")]
    InvalidRequest(String),
    #[error(
        "inverse iteration for j={j} did not converge after {iterations} iterations \
         (ρ bracket [{lo}, {hi}], residual {residual:e})"
    )]
    NoConvergence {
        j: usize,
        lo: f64,
        hi: f64,
        iterations: usize,
        residual: f64,
    },
    #[error("dense oracle refused: N={n} exceeds {max}")]
    TooLarge { n: usize, max: usize },
    #[error("non-finite value in eigenvector computation for j={0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bisection width relative to `max|diag|` (generic operators).
    pub tol: f64,
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralResult {
    /// Ascending `ρ_0 ≤ ρ_1 ≤ …`.
    pub rhos: Vec<f64>,
    /// Unit eigenvectors, `vectors[j]` paired with `rhos[j]`.
    pub vectors: Vec<Vec<f64>>,
    /// `‖𝓛_K φ_j + ρ_j φ_j‖₂`
    pub residuals: Vec<f64>,
    /// `ρ_0` is below what the count can resolve (treat it as an upper bound).
    pub floor_flag: bool,
    /// `max|diag|`
    pub scale: f64,
}

impl SpectralResult {
    pub fn gap(&self) -> Option<f64> {
        (self.rhos.len() >= 2).then(|| self.rhos[1] - self.rhos[0])
    }

    /// Writes `j,rho,residual` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "j,rho,residual")?;
        for (j, (r, res)) in self.rhos.iter().zip(&self.residuals).enumerate() {
            writeln!(w, "{j},{r:?},{res:?}")?;
        }
        Ok(())
    }
}

/// Number of eigenvalues of the operator strictly below `x`.
pub fn sturm_count(op: &TridiagonalOperator, x: f64) -> usize {
    let pivmin = f64::MIN_POSITIVE.max(f64::EPSILON * f64::EPSILON * op.scale().max(1.0));
    let mut count = 0;
    let mut q = op.diag[0] - x;
    if q == 0.0 {
        q = -pivmin;
    }
    if q < 0.0 {
        count += 1;
    }
    for i in 1..op.n() {
        let e = op.offdiag[i - 1];
        q = op.diag[i] - x - e * e / q;
        if q == 0.0 {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Number of `ρ_j` strictly below `tau`, i.e. eigenvalues above `−tau`.
pub fn count_rho_below(op: &TridiagonalOperator, tau: f64) -> usize {
    match &op.rates {
        Some(r) => factored_count(&r.birth, &r.death[..op.n()], tau),
        None => op.n() - sturm_count(op, -tau),
    }
}

/// Stationary qd count on `GGᵀ − τ` with pivots `μ_i` and `d_i l_i² = λ_i`.
fn factored_count(birth: &[f64], death: &[f64], tau: f64) -> usize {
    if !(tau > 0.0) {
        return 0;
    }
    let mut s = -tau;
    let mut neg = 0usize;
    for (&lam, &mu) in birth.iter().zip(death) {
        let mut d = mu + s;
        if d == 0.0 {
            d = -f64::EPSILON * (mu.abs() + tau);
        }
        if d < 0.0 {
            neg += 1;
        }
        s = lam * (s / d) - tau;
    }
    // The last pivot of GGᵀ is zero, so the final diagonal entry is just `s`.
    if s <= 0.0 {
        neg += 1;
    }
    neg.saturating_sub(1)
}

/// Bounds `[lo, hi]` containing every `ρ` (Gershgorin).
fn rho_bounds(op: &TridiagonalOperator) -> (f64, f64) {
    let n = op.n();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { op.offdiag[i - 1].abs() } else { 0.0 }
            + if i + 1 < n { op.offdiag[i].abs() } else { 0.0 };
        lo = lo.min(-op.diag[i] - r);
        hi = hi.max(-op.diag[i] + r);
    }
    let pad = 1e-12 * (lo.abs().max(hi.abs())).max(1.0);
    (lo - pad, hi + pad)
}

const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy)]
struct Bracket {
    lo: f64,
    hi: f64,
    underflow: bool,
}

impl Bracket {
    fn value(&self) -> f64 {
        if self.underflow {
            self.hi
        } else {
            0.5 * (self.lo + self.hi)
        }
    }
}

/// Brackets the `j`-th smallest `ρ`.
fn bisect_rho(op: &TridiagonalOperator, j: usize, tol: f64) -> Bracket {
    let (glo, ghi) = rho_bounds(op);
    if op.rates.is_some() {
        // The factored count is valid for τ > 0 and every ρ is positive.
        let mut lo = 0.0f64;
        let mut hi = ghi.max(UNDERFLOW_FLOOR);
        for _ in 0..4000 {
            let mid = if lo <= 0.0 {
                (UNDERFLOW_FLOOR * hi).sqrt()
            } else if hi > 2.0 * lo {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            if mid <= lo || mid >= hi {
                break;
            }
            if count_rho_below(op, mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi <= 2.0 * UNDERFLOW_FLOOR {
                return Bracket {
                    lo: 0.0,
                    hi,
                    underflow: true,
                };
            }
            if lo > 0.0 && hi - lo <= 2.0 * f64::EPSILON * hi {
                break;
            }
        }
        Bracket {
            lo,
            hi,
            underflow: false,
        }
    } else {
        let width = tol * op.scale().max(f64::MIN_POSITIVE);
        let (mut lo, mut hi) = (glo, ghi);
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if count_rho_below(op, mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Bracket {
            lo,
            hi,
            underflow: false,
        }
    }
}

fn validate_request(op: &TridiagonalOperator, k: usize, tol: f64) -> Result<(), SolverError> {
    if k == 0 || k > op.n() {
        return Err(SolverError::InvalidRequest(format!(
            "need 1 <= k <= N, got k={k}, N={}",
            op.n()
        )));
    }
    if !(1e-14..1.0).contains(&tol) {
        return Err(SolverError::InvalidRequest(format!(
            "tolerance must lie in [1e-14, 1), got {tol}"
        )));
    }
    Ok(())
}

fn floor_flag(op: &TridiagonalOperator, first: &Bracket) -> bool {
    if op.rates.is_some() {
        first.underflow
    } else {
        let scale = op.scale();
        first.value() < 1e3 * scale * f64::EPSILON
    }
}

/// The `k` smallest `ρ_j` without eigenvectors, plus the floor flag.
pub fn lowest_rhos(
    op: &TridiagonalOperator,
    k: usize,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, bool), SolverError> {
    validate_request(op, k, opts.tol)?;
    let brackets = map_range(opts.execution, k, |j| bisect_rho(op, j, opts.tol));
    let flag = floor_flag(op, &brackets[0]);
    Ok((brackets.iter().map(Bracket::value).collect(), flag))
}

/// The `k` eigenpairs with smallest `ρ` (largest eigenvalues `−ρ`).
pub fn top_eigenpairs(
    op: &TridiagonalOperator,
    k: usize,
    opts: &SolverOptions,
) -> Result<SpectralResult, SolverError> {
    validate_request(op, k, opts.tol)?;
    let brackets = map_range(opts.execution, k, |j| bisect_rho(op, j, opts.tol));
    let rhos: Vec<f64> = brackets.iter().map(Bracket::value).collect();
    let scale = op.scale();
    let cluster_gap = 1e-7 * scale;
    let res_target = opts.tol * scale.max(f64::MIN_POSITIVE);

    // Group indices into clusters of numerically coincident eigenvalues.
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for j in 0..k {
        match clusters.last_mut() {
            Some(c) if rhos[j] - rhos[*c.last().unwrap()] < cluster_gap => c.push(j),
            _ => clusters.push(vec![j]),
        }
    }

    let solved = map_range(opts.execution, clusters.len(), |c| {
        let members = &clusters[c];
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(members.len());
        for (pos, &j) in members.iter().enumerate() {
            let v = if pos == 0 {
                match twisted_vector(op, rhos[j]) {
                    Some(v) if op.residual(&v, rhos[j]) <= res_target => v,
                    _ => inverse_iteration(op, j, &brackets[j], &out, res_target)?,
                }
            } else {
                inverse_iteration(op, j, &brackets[j], &out, res_target)?
            };
            out.push(v);
        }
        Ok::<_, SolverError>(out)
    });

    let mut vectors = Vec::with_capacity(k);
    for block in solved {
        vectors.extend(block?);
    }

    // Vectors of distinct clusters are orthogonal up to ε·scale/gap; clean up
    // whatever exceeds a tight threshold.
    for j in 1..k {
        let (done, rest) = vectors.split_at_mut(j);
        let v = &mut rest[0];
        let mut touched = false;
        for u in done.iter() {
            let d = dot(u, v);
            if d.abs() > 1e-10 {
                axpy(-d, u, v);
                touched = true;
            }
        }
        if touched {
            normalize(v);
        }
    }
    for (j, v) in vectors.iter_mut().enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::NonFinite(j));
        }
        fix_sign(v);
    }
    let residuals = vectors
        .iter()
        .zip(&rhos)
        .map(|(v, &r)| op.residual(v, r))
        .collect();
    Ok(SpectralResult {
        floor_flag: floor_flag(op, &brackets[0]),
        rhos,
        vectors,
        residuals,
        scale,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Largest-magnitude entry made positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigenvector of `𝓛_K + ρ I` from the twisted factorization with the smallest
/// twist element.
pub fn twisted_vector(op: &TridiagonalOperator, rho: f64) -> Option<Vec<f64>> {
    let n = op.n();
    if n == 1 {
        return Some(vec![1.0]);
    }
    let pivmin = f64::MIN_POSITIVE.max(f64::EPSILON * f64::EPSILON * op.scale());
    let guard = |x: f64| if x == 0.0 { -pivmin } else { x };
    let d: Vec<f64> = op.diag.iter().map(|x| x + rho).collect();
    let e = &op.offdiag;

    let mut dp = vec![0.0; n];
    dp[0] = guard(d[0]);
    for i in 1..n {
        dp[i] = guard(d[i] - e[i - 1] * e[i - 1] / dp[i - 1]);
    }
    let mut dm = vec![0.0; n];
    dm[n - 1] = guard(d[n - 1]);
    for i in (0..n - 1).rev() {
        dm[i] = guard(d[i] - e[i] * e[i] / dm[i + 1]);
    }
    let twist = (0..n)
        .min_by(|&a, &b| {
            let ga = (dp[a] + dm[a] - d[a]).abs();
            let gb = (dp[b] + dm[b] - d[b]).abs();
            ga.total_cmp(&gb)
        })
        .unwrap();

    let mut z = vec![0.0; n];
    z[twist] = 1.0;
    for i in (0..twist).rev() {
        z[i] = -(e[i] / dp[i]) * z[i + 1];
    }
    for i in twist..n - 1 {
        z[i + 1] = -(e[i] / dm[i + 1]) * z[i];
    }
    if z.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let norm = normalize(&mut z);
    (norm.is_finite() && norm > 0.0).then_some(z)
}

/// LU factorization with partial pivoting of a tridiagonal matrix.
struct TridiagonalLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    fn new(op: &TridiagonalOperator, shift: f64, pivmin: f64) -> Self {
        let n = op.n();
        let mut dl = op.offdiag.clone();
        let mut d: Vec<f64> = op.diag.iter().map(|x| x + shift).collect();
        let mut du = op.offdiag.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = pivmin;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        for x in d.iter_mut() {
            if x.abs() < pivmin {
                *x = if *x < 0.0 { -pivmin } else { pivmin };
            }
        }
        Self {
            dl,
            d,
            du,
            du2,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let t = b[i];
                b[i] = b[i + 1];
                b[i + 1] = t - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

const MAX_INVERSE_ITERATIONS: usize = 100;

fn inverse_iteration(
    op: &TridiagonalOperator,
    j: usize,
    bracket: &Bracket,
    against: &[Vec<f64>],
    res_target: f64,
) -> Result<Vec<f64>, SolverError> {
    let n = op.n();
    let rho = bracket.value();
    let scale = op.scale().max(f64::MIN_POSITIVE);
    let pivmin = f64::EPSILON * scale;
    let lu = TridiagonalLu::new(op, rho + 1e-10 * scale, pivmin);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ j as u64);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let orthogonalize = |v: &mut Vec<f64>| {
        for _ in 0..2 {
            for u in against {
                let d = dot(u, v);
                axpy(-d, u, v);
            }
        }
        normalize(v)
    };
    orthogonalize(&mut v);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_INVERSE_ITERATIONS {
        lu.solve(&mut v);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::NonFinite(j));
        }
        let norm = orthogonalize(&mut v);
        if !(norm > 0.0) {
            v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            orthogonalize(&mut v);
            continue;
        }
        residual = op.residual(&v, rho);
        if residual <= res_target {
            return Ok(v);
        }
    }
    Err(SolverError::NoConvergence {
        j,
        lo: bracket.lo,
        hi: bracket.hi,
        iterations: MAX_INVERSE_ITERATIONS,
        residual,
    })
}

pub const DENSE_ORACLE_MAX: usize = 500;

/// All eigenvalues (ascending) by cyclic Jacobi rotations on the dense matrix.
pub fn dense_oracle(op: &TridiagonalOperator) -> Result<Vec<f64>, SolverError> {
    let n = op.n();
    if n > DENSE_ORACLE_MAX {
        return Err(SolverError::TooLarge {
            n,
            max: DENSE_ORACLE_MAX,
        });
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = op.diag[i];
        if i + 1 < n {
            a[i * n + i + 1] = op.offdiag[i];
            a[(i + 1) * n + i] = op.offdiag[i];
        }
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off <= 1e-32 * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    a[r * n + p] = np;
                    a[p * n + r] = np;
                    a[r * n + q] = nq;
                    a[q * n + r] = nq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}
