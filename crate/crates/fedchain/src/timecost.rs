//! Wireless link model and the analytic round-time function `h(k, lambda)`.
//!
//! One global iteration costs
//!
//! ```text
//! h = tau_local + tau_aggre
//!   + max_i k*omega / u_up_i                      (upload)
//!   + max_j (N - N_j) k*omega / u_j               (cross transactions)
//!   + (1/lambda + max_{j != jw} Omega/u_j)
//!       * exp(lambda * sum_{j != jw} Omega/u_j)   (mining + propagation,
//!                                                  fork retries included)
//!   + max_i Omega / u_down_i                      (download)
//! ```
//!
//! with `Omega = N*k*omega`. The same quantity collapses to the coefficient
//! form `tau_fixed + L_T*k + (1/lambda) e^{L_F k} + L_P k e^{L_F k}`; both
//! evaluations are exposed and must agree to machine precision.
//!
//! With heterogeneous miner speeds the winner `jw` excluded from the fork
//! terms is taken as the fastest miner, which maximizes both the propagation
//! maximum and the fork-exposure sum, so the analytic value upper-bounds the
//! expected cost; with homogeneous speeds the choice is immaterial.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::compression::omega_bytes;

#[derive(Debug, Error)]
pub enum TimeCostError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("environment file: {0}")]
    EnvFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Shannon capacity `BW * log2(1 + g*P_t/P_n)` in bits per second.
pub fn shannon_rate_bits(
    bw_hz: f64,
    gain: f64,
    p_tx_w: f64,
    p_noise_w: f64,
) -> Result<f64, TimeCostError> {
    for (name, v) in [
        ("bw_hz", bw_hz),
        ("gain", gain),
        ("p_t_w", p_tx_w),
        ("p_n_w", p_noise_w),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(TimeCostError::InvalidParameter(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    Ok(bw_hz * (1.0 + gain * p_tx_w / p_noise_w).log2())
}

/// Draw one link rate: Gaussian around `mu` with standard deviation
/// `jitter * mu`, truncated below at `0.01 * mu` so a rate can never be
/// non-positive. `jitter = 0` returns `mu` exactly.
pub fn sample_link_rate<R: rand::Rng>(mu: f64, jitter: f64, rng: &mut R) -> f64 {
    if jitter == 0.0 {
        return mu;
    }
    let normal = Normal::new(mu, jitter * mu).expect("finite jitter");
    normal.sample(rng).max(0.01 * mu)
}

/// Physical-layer constants feeding the Shannon formula.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkModel {
    pub bw_hz: f64,
    pub gain: f64,
    pub p_tx_w: f64,
    pub p_noise_w: f64,
}

impl LinkModel {
    /// Mean link rate in bytes per second.
    pub fn mean_rate_bytes(&self) -> Result<f64, TimeCostError> {
        Ok(shannon_rate_bits(self.bw_hz, self.gain, self.p_tx_w, self.p_noise_w)? / 8.0)
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            bw_hz: 20e6,
            gain: 1e-8,
            p_tx_w: 0.5,
            p_noise_w: 1e-10,
        }
    }
}

/// Everything `h(k, lambda)` needs: link rates, miner topology, payload
/// constants, and the fixed per-round compute/aggregation costs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkEnv {
    /// Per-client uplink mean rates, bytes/s.
    pub up_rates: Vec<f64>,
    /// Per-client downlink mean rates, bytes/s.
    pub down_rates: Vec<f64>,
    /// Per-miner download mean rates, bytes/s.
    pub miner_rates: Vec<f64>,
    /// Number of clients connected to each miner; sums to N.
    pub miner_client_counts: Vec<usize>,
    /// Relative standard deviation of sampled rates.
    pub jitter: f64,
    pub tau_local: f64,
    pub tau_aggre: f64,
    /// Model dimension.
    pub d: usize,
    /// Bytes per transmitted update value.
    pub s: u32,
}

impl NetworkEnv {
    /// All clients and miners share one mean rate; clients are assigned to
    /// miners round-robin (one-to-one when `n == m`).
    #[allow(clippy::too_many_arguments)]
    pub fn homogeneous(
        n: usize,
        m: usize,
        rate_bytes_per_s: f64,
        jitter: f64,
        tau_local: f64,
        tau_aggre: f64,
        d: usize,
        s: u32,
    ) -> Result<Self, TimeCostError> {
        let mut counts = vec![0usize; m];
        for i in 0..n {
            counts[i % m.max(1)] += 1;
        }
        let env = NetworkEnv {
            up_rates: vec![rate_bytes_per_s; n],
            down_rates: vec![rate_bytes_per_s; n],
            miner_rates: vec![rate_bytes_per_s; m],
            miner_client_counts: counts,
            jitter,
            tau_local,
            tau_aggre,
            d,
            s,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn n_clients(&self) -> usize {
        self.up_rates.len()
    }

    pub fn n_miners(&self) -> usize {
        self.miner_rates.len()
    }

    pub fn validate(&self) -> Result<(), TimeCostError> {
        if self.up_rates.is_empty() || self.miner_rates.is_empty() {
            return Err(TimeCostError::InvalidEnv(
                "need at least one client and one miner".into(),
            ));
        }
        if self.up_rates.len() != self.down_rates.len() {
            return Err(TimeCostError::InvalidEnv(
                "up/down rate vectors differ in length".into(),
            ));
        }
        if self.miner_client_counts.len() != self.miner_rates.len() {
            return Err(TimeCostError::InvalidEnv(
                "miner_client_counts length must match miner_rates".into(),
            ));
        }
        if self.miner_client_counts.iter().sum::<usize>() != self.n_clients() {
            return Err(TimeCostError::InvalidEnv(
                "miner client counts must sum to the client count".into(),
            ));
        }
        for r in self
            .up_rates
            .iter()
            .chain(&self.down_rates)
            .chain(&self.miner_rates)
        {
            if !(r > &0.0) || !r.is_finite() {
                return Err(TimeCostError::InvalidEnv(format!("non-positive rate {r}")));
            }
        }
        if self.jitter < 0.0 || !self.jitter.is_finite() {
            return Err(TimeCostError::InvalidEnv("jitter must be >= 0".into()));
        }
        if self.tau_local < 0.0 || self.tau_aggre < 0.0 {
            return Err(TimeCostError::InvalidEnv(
                "tau_local and tau_aggre must be >= 0".into(),
            ));
        }
        if self.d == 0 {
            return Err(TimeCostError::InvalidEnv("d must be positive".into()));
        }
        if self.s == 0 {
            return Err(TimeCostError::InvalidEnv("s must be positive".into()));
        }
        Ok(())
    }

    /// Index of the miner excluded from the fork terms (the fastest one;
    /// `None` when there is a single miner).
    pub fn excluded_winner(&self) -> Option<usize> {
        if self.n_miners() <= 1 {
            return None;
        }
        let mut best = 0usize;
        for (j, r) in self.miner_rates.iter().enumerate() {
            if *r > self.miner_rates[best] {
                best = j;
            }
        }
        Some(best)
    }

    /// Bytes per compressed entry in this environment.
    pub fn omega(&self) -> f64 {
        omega_bytes(self.d, self.s)
    }

    /// Parse the plain-text `key=value` environment file. Missing keys fall
    /// back to the documented defaults (50 clients and miners, the default
    /// radio link, jitter 0.1, tau_local 0.2 s, s=4, d=122570).
    pub fn from_env_str(text: &str) -> Result<Self, TimeCostError> {
        let map = parse_kv(text).map_err(TimeCostError::EnvFile)?;
        let get_f64 = |key: &str, default: f64| -> Result<f64, TimeCostError> {
            match map.get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|e| TimeCostError::EnvFile(format!("bad {key}={v}: {e}"))),
            }
        };
        let get_usize = |key: &str, default: usize| -> Result<usize, TimeCostError> {
            match map.get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse::<usize>()
                    .map_err(|e| TimeCostError::EnvFile(format!("bad {key}={v}: {e}"))),
            }
        };
        let link = LinkModel {
            bw_hz: get_f64("bw_hz", 20e6)?,
            gain: get_f64("gain", 1e-8)?,
            p_tx_w: get_f64("p_t_w", 0.5)?,
            p_noise_w: get_f64("p_n_w", 1e-10)?,
        };
        let rate = link.mean_rate_bytes()?;
        NetworkEnv::homogeneous(
            get_usize("n_clients", 50)?,
            get_usize("n_miners", 50)?,
            rate,
            get_f64("jitter", 0.1)?,
            get_f64("tau_local_s", 0.2)?,
            get_f64("tau_aggre_s", 0.0)?,
            get_usize("d", 122_570)?,
            get_usize("s_bytes", 4)? as u32,
        )
    }

    pub fn from_env_file(path: &std::path::Path) -> Result<Self, TimeCostError> {
        Self::from_env_str(&std::fs::read_to_string(path)?)
    }
}

impl Default for NetworkEnv {
    fn default() -> Self {
        let rate = LinkModel::default().mean_rate_bytes().expect("default link");
        NetworkEnv::homogeneous(50, 50, rate, 0.1, 0.2, 0.0, 122_570, 4).expect("default env")
    }
}

/// Per-step analytic durations of one round at `(k, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTerms {
    pub tau_up: f64,
    pub tau_cross: f64,
    pub tau_step4: f64,
    pub tau_down: f64,
}

fn check_k_lambda(k: f64, lambda: f64, d: usize) -> Result<(), TimeCostError> {
    if !(k > 0.0) || k > d as f64 {
        return Err(TimeCostError::InvalidParameter(format!(
            "k={k} out of range (0, {d}]"
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(TimeCostError::InvalidParameter(format!(
            "lambda={lambda} must be positive"
        )));
    }
    Ok(())
}

/// The traffic-dependent step durations, term by term. `k` is relaxed to a
/// positive real so the optimizer can search a continuum.
pub fn analytic_round_terms(
    k: f64,
    lambda: f64,
    env: &NetworkEnv,
) -> Result<RoundTerms, TimeCostError> {
    check_k_lambda(k, lambda, env.d)?;
    let omega = env.omega();
    let n = env.n_clients() as f64;
    let payload = k * omega;
    let block = n * payload;

    let tau_up = env
        .up_rates
        .iter()
        .map(|u| payload / u)
        .fold(0.0, f64::max);
    let tau_cross = env
        .miner_rates
        .iter()
        .zip(&env.miner_client_counts)
        .map(|(u, &nj)| (n - nj as f64) * payload / u)
        .fold(0.0, f64::max);
    let tau_down = env
        .down_rates
        .iter()
        .map(|u| block / u)
        .fold(0.0, f64::max);
    let tau_step4 = match env.excluded_winner() {
        None => 1.0 / lambda,
        Some(jw) => {
            let mut prop_max = 0.0f64;
            let mut exposure = 0.0f64;
            for (j, u) in env.miner_rates.iter().enumerate() {
                if j == jw {
                    continue;
                }
                prop_max = prop_max.max(block / u);
                exposure += block / u;
            }
            (1.0 / lambda + prop_max) * (lambda * exposure).exp()
        }
    };
    Ok(RoundTerms {
        tau_up,
        tau_cross,
        tau_step4,
        tau_down,
    })
}

/// Direct term-by-term evaluation of the round-time function.
pub fn h_direct(k: f64, lambda: f64, env: &NetworkEnv) -> Result<f64, TimeCostError> {
    let t = analytic_round_terms(k, lambda, env)?;
    Ok(env.tau_local + env.tau_aggre + t.tau_up + t.tau_cross + t.tau_step4 + t.tau_down)
}

/// Environment-dependent constants of the coefficient form of `h`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HCoefficients {
    /// Bytes per compressed entry.
    pub omega: f64,
    /// `tau_local + tau_aggre`.
    pub tau_fixed: f64,
    /// Upload + cross + download slope per entry (Lambda_T), seconds.
    pub traffic: f64,
    /// Worst competitor propagation slope per entry (Lambda_P), seconds.
    pub propagation: f64,
    /// Fork-exposure sum per entry (Lambda_F / lambda), seconds.
    pub fork_exposure: f64,
}

impl HCoefficients {
    /// `h(k, lambda)` from the coefficients.
    pub fn h(&self, k: f64, lambda: f64) -> f64 {
        let e = (lambda * self.fork_exposure * k).exp();
        self.tau_fixed + self.traffic * k + e / lambda + self.propagation * k * e
    }
}

/// Collapse the environment into the coefficient form.
pub fn h_coefficients(env: &NetworkEnv) -> Result<HCoefficients, TimeCostError> {
    env.validate()?;
    let omega = env.omega();
    let n = env.n_clients() as f64;
    let up = env.up_rates.iter().map(|u| omega / u).fold(0.0, f64::max);
    let cross = env
        .miner_rates
        .iter()
        .zip(&env.miner_client_counts)
        .map(|(u, &nj)| (n - nj as f64) * omega / u)
        .fold(0.0, f64::max);
    let down = env
        .down_rates
        .iter()
        .map(|u| n * omega / u)
        .fold(0.0, f64::max);
    let (propagation, fork_exposure) = match env.excluded_winner() {
        None => (0.0, 0.0),
        Some(jw) => {
            let mut p = 0.0f64;
            let mut f = 0.0f64;
            for (j, u) in env.miner_rates.iter().enumerate() {
                if j == jw {
                    continue;
                }
                p = p.max(n * omega / u);
                f += n * omega / u;
            }
            (p, f)
        }
    };
    Ok(HCoefficients {
        omega,
        tau_fixed: env.tau_local + env.tau_aggre,
        traffic: up + cross + down,
        propagation,
        fork_exposure,
    })
}

/// Minimal `key=value` parser shared by the environment and config files.
/// Lines starting with `#` and blank lines are ignored.
pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value, got {raw:?}", lineno + 1));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}
