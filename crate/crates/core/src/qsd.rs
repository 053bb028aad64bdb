//! Quasi-stationary distribution, π-weights and the mean extinction time.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::eigensolve::SpectralResult;
use crate::model::{ModelConstants, ModelError, RateModel};
use crate::operator::TridiagonalOperator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsdError {
    #[error("zero or non-finite rate at state n={n}")]
    ZeroRate { n: u64 },
    #[error("ground-state vector changes sign at n={n} (value {value:e}): solver failure")]
    SignChange { n: usize, value: f64 },
    #[error("spectral result has no ground state")]
    MissingGroundState,
    #[error("length mismatch: π has {pi} entries, φ₀ has {phi}")]
    Length { pi: usize, phi: usize },
    #[error("mean-time formula needs K >= 2, got {0}")]
    SmallK(u64),
    #[error("b(1/K) <= d(1/K) at K={0}: births do not prevail near 0")]
    NearZeroAssumption(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `log π_n` for `n = 1..=N` (0-based storage).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiWeights {
    pub log_pi: Vec<f64>,
}

fn pi_from_rates(
    n: usize,
    mut rate: impl FnMut(u64) -> Result<(f64, f64), QsdError>,
) -> Result<PiWeights, QsdError> {
    let mut log_pi = Vec::with_capacity(n);
    let (_, mu1) = rate(1)?;
    if !(mu1 > 0.0 && mu1.is_finite()) {
        return Err(QsdError::ZeroRate { n: 1 });
    }
    let mut acc = -mu1.ln();
    log_pi.push(acc);
    let mut prev_birth = rate(1)?.0;
    for m in 2..=n as u64 {
        let (lam, mu) = rate(m)?;
        if !(prev_birth > 0.0 && prev_birth.is_finite()) {
            return Err(QsdError::ZeroRate { n: m - 1 });
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(QsdError::ZeroRate { n: m });
        }
        acc += prev_birth.ln() - mu.ln();
        log_pi.push(acc);
        prev_birth = lam;
    }
    Ok(PiWeights { log_pi })
}

/// `π_1 = 1/μ_1`, `π_{n+1} = π_n λ_n / μ_{n+1}` in log space.
pub fn pi_weights(model: &RateModel, k: u64, n: usize) -> Result<PiWeights, QsdError> {
    if n == 0 {
        return Err(QsdError::Length { pi: 0, phi: 0 });
    }
    pi_from_rates(n, |m| Ok(model.rates_at(k, m)?))
}

/// π-weights from the rates stored in a model operator.
pub fn pi_weights_from_operator(op: &TridiagonalOperator) -> Option<Result<PiWeights, QsdError>> {
    let r = op.rates.as_ref()?;
    Some(pi_from_rates(op.n(), |m| {
        let i = m as usize - 1;
        Ok((r.birth[i], r.death[i]))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QsdResult {
    /// `ν_n` for `n = 1..=N` (0-based storage).
    pub nu: Vec<f64>,
    pub rho0: f64,
    /// `1/ρ₀`
    pub mean_t_exact: f64,
    pub mean_t_asymptotic: Option<f64>,
    /// `mean_t_asymptotic / mean_t_exact`
    pub ratio: Option<f64>,
    pub floor_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QsdSummary {
    #[serde(rename = "K")]
    pub k: u64,
    pub rho0: f64,
    #[serde(rename = "mean_T_exact")]
    pub mean_t_exact: f64,
    #[serde(rename = "mean_T_asymptotic")]
    pub mean_t_asymptotic: Option<f64>,
    pub ratio: Option<f64>,
}

impl QsdResult {
    pub fn attach_asymptotic(&mut self, mean_t_asymptotic: f64) {
        self.mean_t_asymptotic = Some(mean_t_asymptotic);
        self.ratio = Some(mean_t_asymptotic / self.mean_t_exact);
    }

    pub fn mean_state(&self) -> f64 {
        self.nu
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// State `n` (1-based) with the largest mass.
    pub fn mode(&self) -> usize {
        self.nu
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i + 1)
            .unwrap_or(0)
    }

    pub fn summary(&self, k: u64) -> QsdSummary {
        QsdSummary {
            k,
            rho0: self.rho0,
            mean_t_exact: self.mean_t_exact,
            mean_t_asymptotic: self.mean_t_asymptotic,
            ratio: self.ratio,
        }
    }

    /// Writes `n,nu` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,nu")?;
        for (i, p) in self.nu.iter().enumerate() {
            writeln!(w, "{},{:?}", i + 1, p)?;
        }
        Ok(())
    }
}

/// `ν_n ∝ √π_n φ₀(n)`, normalized in log space.
pub fn qsd_from_ground_state(
    spec: &SpectralResult,
    pi: &PiWeights,
) -> Result<QsdResult, QsdError> {
    let phi = spec.vectors.first().ok_or(QsdError::MissingGroundState)?;
    if phi.len() != pi.log_pi.len() {
        return Err(QsdError::Length {
            pi: pi.log_pi.len(),
            phi: phi.len(),
        });
    }
    let (imax, vmax) = phi
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, v)| (i, *v))
        .ok_or(QsdError::MissingGroundState)?;
    let sign = if phi[imax] < 0.0 { -1.0 } else { 1.0 };
    let limit = 1e-12 * vmax.abs();
    let mut log_nu = Vec::with_capacity(phi.len());
    for (i, (&p, &lp)) in phi.iter().zip(&pi.log_pi).enumerate() {
        let v = sign * p;
        if v < -limit {
            return Err(QsdError::SignChange { n: i + 1, value: v });
        }
        log_nu.push(if v > 0.0 {
            0.5 * lp + v.ln()
        } else {
            f64::NEG_INFINITY
        });
    }
    let shift = log_nu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut nu: Vec<f64> = log_nu.iter().map(|l| (l - shift).exp()).collect();
    let z: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|p| *p /= z);
    let rho0 = spec.rhos[0];
    Ok(QsdResult {
        nu,
        rho0,
        mean_t_exact: 1.0 / rho0,
        mean_t_asymptotic: None,
        ratio: None,
        floor_flag: spec.floor_flag,
    })
}

/// Natural log of the asymptotic mean extinction time
/// `√(2π) e^{K H(0)} / (b(x*) (√(b/d) − √(d/b))(1/K) √(K H″(x*)))`.
pub fn log_mean_extinction_asymptotic(
    c: &ModelConstants,
    model: &RateModel,
    k: u64,
) -> Result<f64, QsdError> {
    if k < 2 {
        return Err(QsdError::SmallK(k));
    }
    let kf = k as f64;
    let x = 1.0 / kf;
    let (b, d) = (model.birth(x), model.death(x));
    if !(b > d) {
        return Err(QsdError::NearZeroAssumption(k));
    }
    let ratio = (b / d).sqrt();
    let edge = ratio - 1.0 / ratio;
    Ok(0.5 * (2.0 * PI).ln() + kf * c.h0 - c.b_star.ln() - edge.ln() - 0.5 * (kf * c.h2_star).ln())
}

pub fn mean_extinction_asymptotic(
    c: &ModelConstants,
    model: &RateModel,
    k: u64,
) -> Result<f64, QsdError> {
    Ok(log_mean_extinction_asymptotic(c, model, k)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolve::{top_eigenpairs, SolverOptions};
    use crate::model::model_constants;
    use crate::operator::{build_operator, choose_truncation, TruncationSpec};
    use approx::assert_relative_eq;

    fn logistic() -> RateModel {
        RateModel::logistic(2.0, 1.0).unwrap()
    }

    #[test]
    fn pi_small_cases() {
        let p = pi_weights(&logistic(), 1, 2).unwrap();
        assert_relative_eq!(p.log_pi[0].exp(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(p.log_pi[1].exp(), 1.0 / 6.0, max_relative = 1e-15);
    }

    #[test]
    fn pi_direct_product() {
        let m = RateModel::smith(3.0, 1.0).unwrap();
        let p = pi_weights(&m, 4, 20).unwrap();
        let mut prod = 1.0 / m.rates_at(4, 1).unwrap().1;
        for n in 1..=20u64 {
            if n > 1 {
                prod *= m.rates_at(4, n - 1).unwrap().0 / m.rates_at(4, n).unwrap().1;
            }
            assert_relative_eq!(p.log_pi[n as usize - 1].exp(), prod, max_relative = 1e-12);
        }
    }

    #[test]
    fn pi_from_operator_agrees() {
        let op = build_operator(&logistic(), 9, &TruncationSpec::fixed(40)).unwrap();
        let a = pi_weights_from_operator(&op).unwrap().unwrap();
        let b = pi_weights(&logistic(), 9, 40).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_state_qsd() {
        let op = build_operator(&logistic(), 1, &TruncationSpec::fixed(1)).unwrap();
        let spec = top_eigenpairs(&op, 1, &SolverOptions::default()).unwrap();
        let pi = pi_weights(&logistic(), 1, 1).unwrap();
        let q = qsd_from_ground_state(&spec, &pi).unwrap();
        assert_eq!(q.nu, vec![1.0]);
        assert_eq!(q.mean_t_exact * q.rho0, 1.0);
    }

    #[test]
    fn logistic_k20_mode() {
        let m = logistic();
        let t = choose_truncation(&m, 20).unwrap();
        let op = build_operator(&m, 20, &t).unwrap();
        let spec = top_eigenpairs(&op, 1, &SolverOptions::default()).unwrap();
        let q = qsd_from_ground_state(&spec, &pi_weights(&m, 20, t.n).unwrap()).unwrap();
        assert!((q.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q.mode().abs_diff(20) <= 3, "mode {}", q.mode());
        assert!(q.nu.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn sign_change_rejected() {
        let spec = SpectralResult {
            rhos: vec![0.1],
            vectors: vec![vec![0.8, -0.6]],
            residuals: vec![0.0],
            floor_flag: false,
            scale: 1.0,
        };
        let pi = PiWeights {
            log_pi: vec![0.0, 0.0],
        };
        assert!(matches!(
            qsd_from_ground_state(&spec, &pi),
            Err(QsdError::SignChange { n: 2, .. })
        ));
    }

    #[test]
    fn asymptotic_logistic_closed_form() {
        let m = logistic();
        let c = model_constants(&m).unwrap();
        for k in [10u64, 50, 400] {
            let got = log_mean_extinction_asymptotic(&c, &m, k).unwrap();
            let kf = k as f64;
            // General formula with the exact b(1/K), d(1/K) correction.
            let edge = (2.0 / (1.0 + 1.0 / kf)).sqrt() - ((1.0 + 1.0 / kf) / 2.0).sqrt();
            let want = 0.5 * (2.0 * PI).ln() + kf * (1.0 - 2f64.ln())
                - 2f64.ln()
                - edge.ln()
                - 0.5 * (0.5 * kf).ln();
            assert_relative_eq!(got, want, max_relative = 1e-9);
        }
        // The correction vanishes as K grows: ratio to √(2π)e^{K(1−log 2)}/√K → 1.
        let k = 1_000_000u64;
        let kf = k as f64;
        let got = log_mean_extinction_asymptotic(&c, &m, k).unwrap();
        let closed_form = 0.5 * (2.0 * PI).ln() + kf * (1.0 - 2f64.ln()) - 0.5 * kf.ln();
        assert!((got - closed_form).abs() < 1e-5);
        assert!(mean_extinction_asymptotic(&c, &m, 1).is_err());
    }

    #[test]
    fn summary_json_keys() {
        let q = QsdResult {
            nu: vec![1.0],
            rho0: 0.5,
            mean_t_exact: 2.0,
            mean_t_asymptotic: Some(2.2),
            ratio: Some(1.1),
            floor_flag: false,
        };
        let s = serde_json::to_string(&q.summary(20)).unwrap();
        assert_eq!(
            s,
            r#"{"K":20,"rho0":0.5,"mean_T_exact":2.0,"mean_T_asymptotic":2.2,"ratio":1.1}"#
        );
    }
}
