//! Convergence-rate constants, their estimation, and the bound objective.
//!
//! After one global iteration the harness can estimate every constant the
//! convergence bound needs: the smoothness `L` from a secant between the
//! initial and first-round models, the gradient-norm bound `G^2` and the
//! non-IID measure `Gamma_G^2` from per-client gradients at `w0`, and the
//! optimality gap from the loss at `w_E` (taking `F* ~ 0`). Full-batch local
//! iterations make the per-client variance bounds zero.
//!
//! With `R = Y / h(k, lambda)` rounds inside a time budget `Y`, the bound
//! becomes the objective
//!
//! ```text
//! J(k, lambda) = Lambda_A sqrt(h/Y) + Lambda_B (4 d^2/k^2 - 3) h/Y
//! ```
//!
//! whose square (with the `-3` dropped for `d >> k`) expands into the
//! three-term form the biconvex optimizer minimizes.

use thiserror::Error;

use crate::learning::ParamVector;
use crate::timecost::{h_direct, NetworkEnv, TimeCostError};

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error("degenerate estimation input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty diagnostic history")]
    EmptyHistory,
    #[error(transparent)]
    TimeCost(#[from] TimeCostError),
}

/// Constants of the convergence bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceParams {
    /// Smoothness constant of the client losses.
    pub l_smooth: f64,
    /// Uniform bound on squared stochastic gradient norms.
    pub g2: f64,
    /// Non-IID measure: worst squared deviation of a client gradient
    /// from the global gradient (0 under IID data).
    pub gamma_g2: f64,
    /// Per-client variance bounds of stochastic gradients; all zero in
    /// full-batch mode.
    pub sigma2: Vec<f64>,
    /// Optimality gap `F(w0) - F*`, approximated by the first-round loss.
    pub gap: f64,
    /// Step-size constant: the learning rate is `C / sqrt(T)`.
    pub c: f64,
    /// Local epochs per global iteration.
    pub epochs: usize,
    /// Local batch size.
    pub batch: usize,
    pub n_clients: usize,
}

impl ConvergenceParams {
    /// The step-size condition `C/sqrt(T) <= 1/(16 L)` for a planned
    /// iteration count; violations warn rather than fail.
    pub fn step_size_ok(&self, total_iterations: usize) -> bool {
        if total_iterations == 0 {
            return false;
        }
        let eta = self.c / (total_iterations as f64).sqrt();
        eta <= 1.0 / (16.0 * self.l_smooth)
    }

    pub fn validate(&self) -> Result<(), ConvergenceError> {
        for (name, v) in [
            ("l_smooth", self.l_smooth),
            ("g2", self.g2),
            ("gamma_g2", self.gamma_g2),
            ("gap", self.gap),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(ConvergenceError::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.c > 0.0) {
            return Err(ConvergenceError::InvalidParameter("c must be positive".into()));
        }
        if self.epochs == 0 || self.batch == 0 || self.n_clients == 0 {
            return Err(ConvergenceError::InvalidParameter(
                "epochs, batch and n_clients must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the estimator needs from the first global iteration.
#[derive(Debug, Clone)]
pub struct FirstRoundObservations {
    pub w0: ParamVector,
    pub w_e: ParamVector,
    /// Full local gradients at `w0`, one per client.
    pub client_grads_w0: Vec<ParamVector>,
    /// Full local gradients at `w_E`, one per client.
    pub client_grads_we: Vec<ParamVector>,
    /// Local losses at `w_E`, one per client.
    pub client_losses_we: Vec<f64>,
}

fn uniform_mean(grads: &[ParamVector]) -> ParamVector {
    let mut mean = ParamVector::zeros(grads[0].len());
    for g in grads {
        mean.axpy(1.0, g);
    }
    let scale = 1.0 / grads.len() as f64;
    for v in mean.as_mut_slice() {
        *v *= scale;
    }
    mean
}

/// Estimate the bound constants from first-round observations.
///
/// `L` is the secant `||grad F(w_E) - grad F(w0)|| / ||w_E - w0||` (exact on
/// quadratics), `G^2 = max_i ||grad F_i(w0)||^2`,
/// `Gamma^2 = max_i ||grad F_i(w0) - grad F(w0)||^2`, and the gap is the
/// global loss at `w_E`. Variance bounds are zero (full-batch) unless the
/// caller supplies its own estimates afterwards.
pub fn estimate_params(
    obs: &FirstRoundObservations,
    c: f64,
    epochs: usize,
    batch: usize,
) -> Result<ConvergenceParams, ConvergenceError> {
    let n = obs.client_grads_w0.len();
    if n == 0 || obs.client_grads_we.len() != n || obs.client_losses_we.len() != n {
        return Err(ConvergenceError::Degenerate(
            "need one gradient and loss per client at both models".into(),
        ));
    }
    let dw = obs.w_e.sub(&obs.w0);
    let denom = dw.norm();
    if denom == 0.0 {
        return Err(ConvergenceError::Degenerate(
            "w_E equals w0; cannot form the secant estimate of L".into(),
        ));
    }
    let grad_w0 = uniform_mean(&obs.client_grads_w0);
    let grad_we = uniform_mean(&obs.client_grads_we);
    let l_smooth = grad_we.sub(&grad_w0).norm() / denom;
    let g2 = obs
        .client_grads_w0
        .iter()
        .map(|g| g.norm_sq())
        .fold(0.0, f64::max);
    let gamma_g2 = obs
        .client_grads_w0
        .iter()
        .map(|g| g.sub(&grad_w0).norm_sq())
        .fold(0.0, f64::max);
    let gap = obs.client_losses_we.iter().sum::<f64>() / n as f64;
    let params = ConvergenceParams {
        l_smooth,
        g2,
        gamma_g2,
        sigma2: vec![0.0; n],
        gap,
        c,
        epochs,
        batch,
        n_clients: n,
    };
    params.validate()?;
    Ok(params)
}

/// The two constants of the per-round bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundCoefficients {
    pub lambda_a: f64,
    pub lambda_b: f64,
}

/// `Lambda_A = (8/sqrt(E)) (gap/C + 2 C L Gamma^2 + (C L / (b N^2)) sum sigma_i^2)`
/// and `Lambda_B = 16 C^2 L^2 G^2 E`.
pub fn bound_coefficients(p: &ConvergenceParams) -> Result<BoundCoefficients, ConvergenceError> {
    p.validate()?;
    let sigma_sum: f64 = p.sigma2.iter().sum();
    let n = p.n_clients as f64;
    let inner = p.gap / p.c
        + 2.0 * p.c * p.l_smooth * p.gamma_g2
        + p.c * p.l_smooth / (p.batch as f64 * n * n) * sigma_sum;
    let lambda_a = 8.0 / (p.epochs as f64).sqrt() * inner;
    let lambda_b = 16.0 * p.c * p.c * p.l_smooth * p.l_smooth * p.g2 * p.epochs as f64;
    Ok(BoundCoefficients { lambda_a, lambda_b })
}

/// Raw iteration-count bound on `E||z_T||^2` after `T` local iterations with
/// compression constant `gamma`:
/// `(8/sqrt(T)) (gap/C + 2CL Gamma^2 + (CL/(bN^2)) sum sigma^2)
///  + (4/gamma^2 - 3) 16 C^2 L^2 G^2 E^2 / T`.
pub fn raw_iteration_bound(p: &ConvergenceParams, gamma: f64, total_iterations: usize) -> Result<f64, ConvergenceError> {
    p.validate()?;
    if !(gamma > 0.0) || gamma > 1.0 {
        return Err(ConvergenceError::InvalidParameter(format!(
            "gamma={gamma} must be in (0, 1]"
        )));
    }
    if total_iterations == 0 {
        return Err(ConvergenceError::InvalidParameter(
            "total_iterations must be positive".into(),
        ));
    }
    let t = total_iterations as f64;
    let sigma_sum: f64 = p.sigma2.iter().sum();
    let n = p.n_clients as f64;
    let e = p.epochs as f64;
    let first = 8.0 / t.sqrt()
        * (p.gap / p.c
            + 2.0 * p.c * p.l_smooth * p.gamma_g2
            + p.c * p.l_smooth / (p.batch as f64 * n * n) * sigma_sum);
    let second =
        (4.0 / (gamma * gamma) - 3.0) * 16.0 * p.c * p.c * p.l_smooth * p.l_smooth * p.g2 * e * e
            / t;
    Ok(first + second)
}

/// Per-round form of the bound: `Lambda_A/sqrt(R) + Lambda_B (4d^2/k^2 - 3)/R`.
pub fn bound_from_rounds(c: &BoundCoefficients, d: f64, k: f64, rounds: f64) -> f64 {
    c.lambda_a / rounds.sqrt() + c.lambda_b * (4.0 * d * d / (k * k) - 3.0) / rounds
}

/// The time-budget objective `J(k, lambda)` with the `-3` retained.
pub fn bound_value(
    k: f64,
    lambda: f64,
    env: &NetworkEnv,
    coeffs: &BoundCoefficients,
    budget: f64,
) -> Result<f64, ConvergenceError> {
    let h = h_direct(k, lambda, env)?;
    let d = env.d as f64;
    Ok(bound_from_rounds(coeffs, d, k, budget / h))
}

/// `J` with the `d >> k` simplification (the `-3` dropped); its square is
/// exactly [`objective_squared`].
pub fn bound_value_simplified(c: &BoundCoefficients, d: f64, k: f64, h: f64, budget: f64) -> f64 {
    c.lambda_a * (h / budget).sqrt() + 4.0 * c.lambda_b * d * d * h / (k * k * budget)
}

/// The three-term expansion of `J^2` the optimizer minimizes:
/// `Lambda_A^2 h/Y + 16 Lambda_B^2 d^4/Y^2 (h/k^2)^2
///  + 8 Lambda_A Lambda_B d^2/Y^{3/2} (h/k^{4/3})^{3/2}`.
pub fn objective_squared(c: &BoundCoefficients, d: f64, k: f64, h: f64, budget: f64) -> f64 {
    let a = c.lambda_a;
    let b = c.lambda_b;
    let hk2 = h / (k * k);
    a * a * h / budget
        + 16.0 * b * b * d.powi(4) / (budget * budget) * hk2 * hk2
        + 8.0 * a * b * d * d / budget.powf(1.5) * (h / k.powf(4.0 / 3.0)).powf(1.5)
}

/// Bound on the expected squared compensation-error norm after `E` local
/// epochs: `4 eta^2 (1-gamma)^2 E^2 G^2 / gamma^2`. Exposed as a per-round
/// diagnostic against the measured `||m||^2`.
pub fn residual_norm_bound(eta: f64, gamma: f64, epochs: usize, g2: f64) -> f64 {
    let e = epochs as f64;
    4.0 * eta * eta * (1.0 - gamma) * (1.0 - gamma) * e * e * g2 / (gamma * gamma)
}

/// Mean of recorded squared gradient norms: the empirical counterpart of the
/// uniformly sampled `E||z_T||^2` the bound controls.
pub fn sampled_gradient_norm_diagnostic(history: &[f64]) -> Result<f64, ConvergenceError> {
    if history.is_empty() {
        return Err(ConvergenceError::EmptyHistory);
    }
    Ok(history.iter().sum::<f64>() / history.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_params() -> ConvergenceParams {
        // the IID image-classification row of the estimated-constants table
        ConvergenceParams {
            l_smooth: 0.45,
            g2: 0.15,
            gamma_g2: 0.00044,
            sigma2: vec![0.0; 50],
            gap: 2.30,
            c: 0.15,
            epochs: 5,
            batch: 1000,
            n_clients: 50,
        }
    }

    #[test]
    fn secant_recovers_quadratic_smoothness_exactly() {
        // F(w) = (L0/2)||w||^2 has gradient L0*w everywhere
        let l0 = 3.75;
        let w0 = ParamVector::from_vec(vec![1.0, -2.0, 0.5]);
        let w_e = ParamVector::from_vec(vec![0.2, -1.0, 0.1]);
        let grad = |w: &ParamVector| {
            ParamVector::from_vec(w.as_slice().iter().map(|v| l0 * v).collect())
        };
        let obs = FirstRoundObservations {
            client_grads_w0: vec![grad(&w0), grad(&w0)],
            client_grads_we: vec![grad(&w_e), grad(&w_e)],
            client_losses_we: vec![0.5, 0.5],
            w0,
            w_e,
        };
        let p = estimate_params(&obs, 0.15, 5, 10).unwrap();
        assert!((p.l_smooth - l0).abs() < 1e-12);
        // identical gradients across clients: IID, so the measure is zero
        assert_eq!(p.gamma_g2, 0.0);
        assert!((p.gap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_first_round_is_an_error() {
        let w = ParamVector::from_vec(vec![1.0, 2.0]);
        let g = ParamVector::from_vec(vec![0.0, 0.0]);
        let obs = FirstRoundObservations {
            w0: w.clone(),
            w_e: w.clone(),
            client_grads_w0: vec![g.clone()],
            client_grads_we: vec![g],
            client_losses_we: vec![0.1],
        };
        assert!(matches!(
            estimate_params(&obs, 0.15, 5, 10),
            Err(ConvergenceError::Degenerate(_))
        ));
    }

    #[test]
    fn coefficients_match_hand_evaluated_table_row() {
        let c = bound_coefficients(&table_params()).unwrap();
        // Lambda_A = (8/sqrt(5)) (2.30/0.15 + 2*0.15*0.45*0.00044)
        let expect_a = 8.0 / 5f64.sqrt() * (2.30 / 0.15 + 2.0 * 0.15 * 0.45 * 0.00044);
        assert!((c.lambda_a - expect_a).abs() < 1e-12 * expect_a);
        assert!((c.lambda_a - 54.86).abs() < 0.01);
        // Lambda_B = 16 * 0.15^2 * 0.45^2 * 0.15 * 5
        let expect_b = 16.0 * 0.15f64.powi(2) * 0.45f64.powi(2) * 0.15 * 5.0;
        assert!((c.lambda_b - expect_b).abs() < 1e-15);
        assert!((c.lambda_b - 0.05468).abs() < 1e-4);
    }

    #[test]
    fn all_zero_numerators_give_zero_lambda_a() {
        let mut p = table_params();
        p.gap = 0.0;
        p.gamma_g2 = 0.0;
        p.sigma2 = vec![0.0; 50];
        let c = bound_coefficients(&p).unwrap();
        assert_eq!(c.lambda_a, 0.0);
    }

    #[test]
    fn per_round_form_is_consistent_with_raw_bound() {
        let p = table_params();
        let c = bound_coefficients(&p).unwrap();
        let d = 122_570f64;
        let k = 1226f64;
        let gamma = k / d;
        for rounds in [10usize, 100, 1000] {
            let t = rounds * p.epochs;
            let raw = raw_iteration_bound(&p, gamma, t).unwrap();
            let per_round = bound_from_rounds(&c, d, k, rounds as f64);
            assert!(
                (raw - per_round).abs() <= 1e-12 * raw,
                "rounds={rounds}: {raw} vs {per_round}"
            );
        }
    }

    #[test]
    fn compression_penalty_vanishes_at_k_equals_d() {
        let c = BoundCoefficients {
            lambda_a: 0.0,
            lambda_b: 1.0,
        };
        let d = 100.0;
        // 4d^2/k^2 - 3 = 1 at k = d
        let v = bound_from_rounds(&c, d, d, 1.0);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn budget_scaling_of_the_two_terms() {
        let env = NetworkEnv::homogeneous(10, 10, 1e7, 0.0, 0.2, 0.0, 10_000, 4).unwrap();
        let k = 100.0;
        let lambda = 0.5;
        // first term only: quadrupling Y halves it
        let a_only = BoundCoefficients { lambda_a: 2.0, lambda_b: 0.0 };
        let v1 = bound_value(k, lambda, &env, &a_only, 100.0).unwrap();
        let v4 = bound_value(k, lambda, &env, &a_only, 400.0).unwrap();
        assert!((v4 - v1 / 2.0).abs() < 1e-12 * v1);
        // second term only: quadrupling Y quarters it
        let b_only = BoundCoefficients { lambda_a: 0.0, lambda_b: 2.0 };
        let v1 = bound_value(k, lambda, &env, &b_only, 100.0).unwrap();
        let v4 = bound_value(k, lambda, &env, &b_only, 400.0).unwrap();
        assert!((v4 - v1 / 4.0).abs() < 1e-12 * v1);
    }

    #[test]
    fn bound_value_is_decreasing_in_budget() {
        let env = NetworkEnv::default();
        let c = bound_coefficients(&table_params()).unwrap();
        let mut prev = f64::INFINITY;
        for y in [100.0, 200.0, 400.0, 800.0, 1600.0] {
            let v = bound_value(1226.0, 0.4, &env, &c, y).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn squared_objective_expands_the_simplified_square() {
        let c = bound_coefficients(&table_params()).unwrap();
        let d = 122_570.0;
        let env = NetworkEnv::default();
        for (k, lambda, y) in [(1226.0, 0.4, 500.0), (3677.0, 1.2, 400.0), (245.0, 0.05, 800.0)] {
            let h = h_direct(k, lambda, &env).unwrap();
            let j = bound_value_simplified(&c, d, k, h, y);
            let j2 = objective_squared(&c, d, k, h, y);
            assert!(
                (j * j - j2).abs() <= 1e-12 * j2,
                "k={k}: {} vs {j2}",
                j * j
            );
        }
    }

    #[test]
    fn step_size_condition_flags_violations() {
        let p = table_params();
        // eta = 0.15/sqrt(T) <= 1/(16*0.45) = 0.1389 for any T >= 2
        assert!(p.step_size_ok(500));
        let mut sharp = p.clone();
        sharp.l_smooth = 45.0;
        assert!(!sharp.step_size_ok(4));
    }

    #[test]
    fn residual_bound_matches_hand_arithmetic() {
        let v = residual_norm_bound(0.1, 0.25, 2, 3.0);
        // 4 * 0.01 * 0.5625 * 4 * 3 / 0.0625
        assert!((v - 4.0 * 0.01 * 0.5625 * 4.0 * 3.0 / 0.0625).abs() < 1e-12);
    }

    #[test]
    fn gradient_norm_diagnostic_behaves() {
        assert!(sampled_gradient_norm_diagnostic(&[]).is_err());
        assert_eq!(sampled_gradient_norm_diagnostic(&[2.5]).unwrap(), 2.5);
        let hist = [1.0, 2.0, 3.0];
        let doubled: Vec<f64> = hist.iter().map(|x| 4.0 * x).collect();
        let base = sampled_gradient_norm_diagnostic(&hist).unwrap();
        let scaled = sampled_gradient_norm_diagnostic(&doubled).unwrap();
        assert!((scaled - 4.0 * base).abs() < 1e-12);
    }
}
