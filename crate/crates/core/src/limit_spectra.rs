//! Limit objects as `K → ∞`: the lattices `S₁ = s₁ℤ≥0` (harmonic oscillator
//! near `Kx*`) and `S₂ = s₂ℤ>0` (branching near 0), their merged sequence, the
//! Hermite eigenfunctions of `𝓗*` and the eigenvectors of `𝓜₀`.

use std::fmt;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::model::ModelConstants;
use crate::quadrature::gauss_hermite;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("invalid argument: {0}")]
    InvalidInput(String),
    #[error("ill-conditioned orthogonal polynomial construction: {0}")]
    IllConditioned(String),
}

impl LimitError {
    pub fn is_domain_error(&self) -> bool {
        matches!(self, LimitError::InvalidInput(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitSpectrum {
    pub s1_step: f64,
    pub s2_step: f64,
}

impl LimitSpectrum {
    pub fn new(s1_step: f64, s2_step: f64) -> Result<Self, LimitError> {
        if !(s1_step > 0.0 && s2_step > 0.0 && s1_step.is_finite() && s2_step.is_finite()) {
            return Err(LimitError::InvalidInput(format!(
                "lattice steps must be positive and finite, got ({s1_step}, {s2_step})"
            )));
        }
        Ok(Self { s1_step, s2_step })
    }

    pub fn from_constants(c: &ModelConstants) -> Result<Self, LimitError> {
        Self::new(c.s1_step, c.s2_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EtaTag {
    #[serde(rename = "S1only")]
    S1Only,
    #[serde(rename = "S2only")]
    S2Only,
    BothFirst,
    BothSecond,
}

impl fmt::Display for EtaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EtaTag::S1Only => "S1only",
            EtaTag::S2Only => "S2only",
            EtaTag::BothFirst => "BothFirst",
            EtaTag::BothSecond => "BothSecond",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedSequence {
    pub etas: Vec<f64>,
    pub tags: Vec<EtaTag>,
}

impl MergedSequence {
    /// Writes `index,eta,tag` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,eta,tag")?;
        for (i, (e, t)) in self.etas.iter().zip(&self.tags).enumerate() {
            writeln!(w, "{i},{e:?},{t}")?;
        }
        Ok(())
    }
}

fn near_multiple(x: f64, step: f64, tol: f64) -> Option<i64> {
    let k = (x / step).round();
    ((x - k * step).abs() <= tol * x.abs().max(step)).then_some(k as i64)
}

/// Smallest lattice point `step·k` (`k ≥ k_min`) strictly above `x` beyond tolerance.
fn next_multiple(x: f64, step: f64, k_min: i64, tol: f64) -> f64 {
    let q = x / step;
    let mut k = (q + tol * q.abs().max(1.0)).floor() as i64 + 1;
    k = k.max(k_min);
    step * k as f64
}

/// The nondecreasing merge of `S₁ ∪ S₂` with points of `S₁ ∩ S₂` listed twice.
pub fn merge_eta(spec: &LimitSpectrum, count: usize, tol: f64) -> MergedSequence {
    let (s1, s2) = (spec.s1_step, spec.s2_step);
    let mut etas = Vec::with_capacity(count);
    let mut tags = Vec::with_capacity(count);
    let in_both = |x: f64| {
        near_multiple(x, s1, tol).is_some() && near_multiple(x, s2, tol).is_some_and(|k| k >= 1)
    };
    let mut current = 0.0;
    let mut tag = EtaTag::S1Only;
    while etas.len() < count {
        etas.push(current);
        tags.push(tag);
        if tag == EtaTag::BothFirst {
            tag = EtaTag::BothSecond;
            continue;
        }
        let c1 = next_multiple(current, s1, 0, tol);
        let c2 = next_multiple(current, s2, 1, tol);
        current = c1.min(c2);
        tag = if in_both(current) {
            EtaTag::BothFirst
        } else if c1 < c2 {
            EtaTag::S1Only
        } else {
            EtaTag::S2Only
        };
    }
    MergedSequence { etas, tags }
}

pub const HERMITE_MAX_N: usize = 60;

/// Physicists' Hermite polynomial `H_n(y)` by the three-term recurrence.
pub fn hermite_poly(n: usize, y: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * y);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = 2.0 * y * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `ψ_n(x) = c·e^{−αx²/2} H_n(√α x)` with `c` fixing unit `L²` norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HermiteEigenfunction {
    pub n: usize,
    pub alpha: f64,
    pub norm_const: f64,
}

impl HermiteEigenfunction {
    pub fn new(n: usize, alpha: f64) -> Result<Self, LimitError> {
        if n > HERMITE_MAX_N {
            return Err(LimitError::InvalidInput(format!(
                "Hermite order {n} exceeds {HERMITE_MAX_N}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LimitError::InvalidInput(format!("α must be positive, got {alpha}")));
        }
        let (y, w) = gauss_hermite(4 * n + 8);
        let mass: f64 = y
            .iter()
            .zip(&w)
            .map(|(&y, &w)| {
                let h = hermite_poly(n, y);
                w * h * h
            })
            .sum::<f64>()
            / alpha.sqrt();
        Ok(Self {
            n,
            alpha,
            norm_const: mass.sqrt().recip(),
        })
    }

    /// Eigenfunction for `𝓗*` of the given model, eigenvalue `−n·s₁`.
    pub fn for_constants(n: usize, c: &ModelConstants) -> Result<Self, LimitError> {
        Self::new(n, c.s1_step / (2.0 * c.b_star))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g = (-0.5 * self.alpha * x * x).exp();
        if g == 0.0 {
            return 0.0;
        }
        self.norm_const * g * hermite_poly(self.n, self.alpha.sqrt() * x)
    }
}

pub fn hermite_eval(ef: &HermiteEigenfunction, x: f64) -> f64 {
    ef.eval(x)
}

/// `𝓗* f(x) = b(x*) f″(x) − (s₁²/(4b(x*))) x² f(x) + (s₁/2) f(x)`, with `f″` by
/// a central difference of step `h`.
pub fn apply_hstar<F: Fn(f64) -> f64>(f: F, x: f64, c: &ModelConstants, h: f64) -> f64 {
    let s = c.s1_step;
    let b = c.b_star;
    let fx = f(x);
    let f2 = (f(x + h) - 2.0 * fx + f(x - h)) / (h * h);
    b * f2 - s * s / (4.0 * b) * x * x * fx + 0.5 * s * fx
}

pub const BRANCHING_MAX_M: usize = 12;

/// `v_m(n) = √n r^{n/2} P_m(n)` with `P_m` monic of degree `m−1`, orthogonal
/// for the weight `q(n) = n rⁿ` on `ℤ>0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingEigenvector {
    pub m: usize,
    pub r: f64,
    /// Power-basis coefficients of `P_m`, constant term first.
    pub poly: Vec<f64>,
    /// Stieltjes recurrence `p_{k+1} = (x − a_k) p_k − b_k p_{k−1}`.
    pub recurrence_a: Vec<f64>,
    pub recurrence_b: Vec<f64>,
    /// `v_m(n)` for `n = 1..=N` (0-based storage), unnormalized.
    pub values: Vec<f64>,
}

impl BranchingEigenvector {
    /// `P_m(x)` through the three-term recurrence.
    pub fn poly_eval(&self, x: f64) -> f64 {
        let (mut p_prev, mut p) = (0.0, 1.0);
        for k in 0..self.m - 1 {
            let next = (x - self.recurrence_a[k]) * p - self.recurrence_b[k] * p_prev;
            p_prev = p;
            p = next;
        }
        p
    }

    pub fn normalized(&self) -> Vec<f64> {
        let norm = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.values.iter().map(|v| v / norm).collect()
    }
}

/// Builds `P_m` by the discretized Stieltjes procedure and fills `v_m(1..=N)`.
pub fn branching_eigenvector(m: usize, r: f64, n: usize) -> Result<BranchingEigenvector, LimitError> {
    if m == 0 || m > BRANCHING_MAX_M {
        return Err(LimitError::InvalidInput(format!(
            "branching index m must lie in 1..={BRANCHING_MAX_M}, got {m}"
        )));
    }
    if !(r > 0.0 && r <= 0.95) {
        return Err(LimitError::InvalidInput(format!(
            "ratio r = d'(0)/b'(0) must lie in (0, 0.95], got {r}"
        )));
    }
    if n == 0 {
        return Err(LimitError::InvalidInput("N must be positive".into()));
    }
    // Support of the truncated sums: stop once n^{2m+1} rⁿ < 1e-20 past the peak.
    let p = (2 * m + 1) as f64;
    let peak = p / -r.ln();
    let mut n_max = 1usize;
    loop {
        let nf = n_max as f64;
        if nf > peak && p * nf.ln() + nf * r.ln() < (1e-20f64).ln() {
            break;
        }
        n_max += 1;
    }
    let xs: Vec<f64> = (1..=n_max).map(|k| k as f64).collect();
    let weight: Vec<f64> = xs.iter().map(|&x| x * r.powf(x)).collect();
    let inner = |f: &[f64], g: &[f64]| -> f64 {
        f.iter().zip(g).zip(&weight).map(|((a, b), w)| a * b * w).sum()
    };

    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0; n_max]];
    let mut coeffs: Vec<Vec<f64>> = vec![vec![1.0]];
    let mut norms = vec![inner(&basis[0], &basis[0])];
    for k in 0..m - 1 {
        let pk = &basis[k];
        let xpk: Vec<f64> = pk.iter().zip(&xs).map(|(p, x)| p * x).collect();
        let ak = inner(&xpk, pk) / norms[k];
        let bk = if k == 0 { 0.0 } else { norms[k] / norms[k - 1] };
        let next: Vec<f64> = (0..n_max)
            .map(|i| {
                let prev = if k == 0 { 0.0 } else { basis[k - 1][i] };
                (xs[i] - ak) * pk[i] - bk * prev
            })
            .collect();
        let mut c = vec![0.0; k + 2];
        for (d, &ck) in coeffs[k].iter().enumerate() {
            c[d + 1] += ck;
            c[d] -= ak * ck;
        }
        if k > 0 {
            for (d, &cp) in coeffs[k - 1].iter().enumerate() {
                c[d] -= bk * cp;
            }
        }
        norms.push(inner(&next, &next));
        a.push(ak);
        b.push(bk);
        basis.push(next);
        coeffs.push(c);
    }
    let last = &basis[m - 1];
    for (j, pj) in basis.iter().enumerate().take(m - 1) {
        let cosine = inner(last, pj) / (norms[m - 1] * norms[j]).sqrt();
        if cosine.abs() > 1e-6 {
            return Err(LimitError::IllConditioned(format!(
                "P_{m} and P_{} have normalized inner product {cosine:e}",
                j + 1
            )));
        }
    }

    let mut ev = BranchingEigenvector {
        m,
        r,
        poly: coeffs.pop().unwrap(),
        recurrence_a: a,
        recurrence_b: b,
        values: Vec::new(),
    };
    ev.values = (1..=n)
        .map(|k| {
            let x = k as f64;
            x.sqrt() * (0.5 * x * r.ln()).exp() * ev.poly_eval(x)
        })
        .collect();
    Ok(ev)
}

/// `(𝓜₀ v)(n) = √(b′d′n(n+1)) v(n+1) + √(b′d′n(n−1)) v(n−1)·1_{n>1} − n(b′+d′) v(n)`.
///
/// `v` holds `n = 1..=len`; the output has one more entry (state `len + 1`).
pub fn apply_m0(v: &[f64], bp0: f64, dp0: f64) -> Vec<f64> {
    let len = v.len();
    let get = |n: usize| if n >= 1 && n <= len { v[n - 1] } else { 0.0 };
    let bd = bp0 * dp0;
    (1..=len + 1)
        .map(|n| {
            let nf = n as f64;
            let up = (bd * nf * (nf + 1.0)).sqrt() * get(n + 1);
            let down = if n > 1 {
                (bd * nf * (nf - 1.0)).sqrt() * get(n - 1)
            } else {
                0.0
            };
            up + down - nf * (bp0 + dp0) * get(n)
        })
        .collect()
}
