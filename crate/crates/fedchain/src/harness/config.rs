//! Flat `key=value` experiment configuration.
//!
//! The format is diff-able plain text; `--print-default-config` emits the
//! full schema with defaults. Unknown keys are rejected so typos fail fast.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::chain::MiningModel;
use crate::learning::{Activation, Architecture};
use crate::protocol::Mode;
use crate::timecost::{LinkModel, NetworkEnv};

use super::HarnessError;

/// How `k` and `lambda` are chosen for the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Use the configured `k` (or `k_frac`) and `lambda`.
    Fixed,
    /// Probe one round, estimate the bound constants, and solve for
    /// `(k*, lambda*)`.
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    /// Minimize the round time over `lambda` for the chosen `k`.
    Auto,
    Fixed(f64),
}

impl serde::Serialize for LambdaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Auto => s.serialize_str("auto"),
            LambdaChoice::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauLocalChoice {
    /// Measure the first round's local-training wall time and scale it by
    /// `compute_speed_factor`. Not covered by the byte-for-byte determinism
    /// contract.
    Auto,
    Fixed(f64),
}

impl serde::Serialize for TauLocalChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TauLocalChoice::Auto => s.serialize_str("auto"),
            TauLocalChoice::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    pub strategy: Strategy,

    pub n_clients: usize,
    pub n_miners: usize,
    pub epochs: usize,
    pub lr: f64,
    /// `None` = full batch.
    pub batch: Option<usize>,

    /// Explicit compression level; overrides `k_frac` when set.
    pub k: Option<usize>,
    /// Compression level as a fraction of `d`.
    pub k_frac: f64,
    pub lambda: LambdaChoice,
    pub budget_s: f64,
    pub dropout: f64,
    pub max_rounds: usize,
    /// Re-solve `(k*, lambda*)` every this many rounds (0 = off); only
    /// meaningful with `strategy=optimal` in stochastic mode.
    pub reoptimize_every: usize,
    /// Smoothing for re-measured link rates.
    pub ema_alpha: f64,
    /// Probe compression level for the estimation round, as a fraction of d.
    pub probe_k_frac: f64,
    /// Step-size constant: the learning-rate schedule is `C/sqrt(T)`.
    pub c_const: f64,
    pub pow: MiningModel,
    pub grad_diag_stride: usize,

    pub hidden_widths: Vec<usize>,
    pub activation: Activation,

    pub feature_dim: usize,
    pub label_count: usize,
    pub labels_per_client: usize,
    /// Total training samples, split evenly across clients.
    pub total_samples: usize,
    pub test_samples: usize,
    pub center_scale: f64,
    pub noise: f64,
    /// Optional CSV dataset (feature columns then integer label column);
    /// replaces synthetic generation.
    pub csv_path: Option<PathBuf>,
    pub csv_test_fraction: f64,
    /// Data generation seed; defaults to `seed`.
    pub data_seed: Option<u64>,
    /// Model initialization seed; defaults to `seed`.
    pub init_seed: Option<u64>,

    pub bw_hz: f64,
    pub gain: f64,
    pub p_t_w: f64,
    pub p_n_w: f64,
    pub jitter: f64,
    pub tau_local_s: TauLocalChoice,
    pub compute_speed_factor: f64,
    pub tau_aggre_s: f64,
    pub s_bytes: u32,

    pub lambda_min: f64,
    pub lambda_max: f64,
    pub acs_tol: f64,
    pub acs_max_sweeps: usize,
    /// Fixed-k baselines for the comparison experiment, fractions of d.
    pub baseline_k_fracs: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            mode: Mode::Analytic,
            strategy: Strategy::Fixed,
            n_clients: 50,
            n_miners: 50,
            epochs: 5,
            lr: 0.05,
            batch: None,
            k: None,
            k_frac: 0.01,
            lambda: LambdaChoice::Auto,
            budget_s: 400.0,
            dropout: 0.0,
            max_rounds: 100_000,
            reoptimize_every: 0,
            ema_alpha: 0.3,
            probe_k_frac: 0.01,
            c_const: 0.15,
            pow: MiningModel::Simulated,
            grad_diag_stride: 0,
            hidden_widths: vec![64],
            activation: Activation::Relu,
            feature_dim: 32,
            label_count: 10,
            labels_per_client: 10,
            total_samples: 2500,
            test_samples: 500,
            center_scale: 3.0,
            noise: 1.0,
            csv_path: None,
            csv_test_fraction: 0.2,
            data_seed: None,
            init_seed: None,
            bw_hz: 20e6,
            gain: 1e-8,
            p_t_w: 0.5,
            p_n_w: 1e-10,
            jitter: 0.1,
            tau_local_s: TauLocalChoice::Fixed(0.2),
            compute_speed_factor: 1.0,
            tau_aggre_s: 0.0,
            s_bytes: 4,
            lambda_min: 1e-4,
            lambda_max: 100.0,
            acs_tol: 1e-8,
            acs_max_sweeps: 100,
            baseline_k_fracs: vec![0.01, 0.02, 0.03],
        }
    }
}

impl ExperimentConfig {
    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.feature_dim,
            hidden_widths: self.hidden_widths.clone(),
            num_classes: self.label_count,
            activation: self.activation,
        }
    }

    /// The network environment implied by the radio constants.
    pub fn network_env(&self, d: usize) -> Result<NetworkEnv, HarnessError> {
        let link = LinkModel {
            bw_hz: self.bw_hz,
            gain: self.gain,
            p_tx_w: self.p_t_w,
            p_noise_w: self.p_n_w,
        };
        let rate = link.mean_rate_bytes()?;
        let tau_local = match self.tau_local_s {
            TauLocalChoice::Fixed(v) => v,
            // placeholder until the first round measures it
            TauLocalChoice::Auto => 0.0,
        };
        Ok(NetworkEnv::homogeneous(
            self.n_clients,
            self.n_miners,
            rate,
            self.jitter,
            tau_local,
            self.tau_aggre_s,
            d,
            self.s_bytes,
        )?)
    }

    /// Resolve the configured compression level against the model dimension.
    pub fn resolve_k(&self, d: usize) -> Result<usize, HarnessError> {
        let k = match self.k {
            Some(k) => k,
            None => frac_to_k(self.k_frac, d),
        };
        if k == 0 || k > d {
            return Err(HarnessError::Config(format!("k={k} out of range (0, {d}]")));
        }
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |msg: String| Err(HarnessError::Config(msg));
        if !(self.k_frac > 0.0 && self.k_frac <= 1.0) {
            return err(format!("k_frac={} must be in (0, 1]", self.k_frac));
        }
        if !(self.probe_k_frac > 0.0 && self.probe_k_frac <= 1.0) {
            return err(format!("probe_k_frac={} must be in (0, 1]", self.probe_k_frac));
        }
        for f in &self.baseline_k_fracs {
            if !(*f > 0.0 && *f <= 1.0) {
                return err(format!("baseline_k_frac={f} must be in (0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout={} must be in [0, 1)", self.dropout));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return err(format!("ema_alpha={} must be in (0, 1]", self.ema_alpha));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max) {
            return err(format!(
                "lambda range [{}, {}] invalid",
                self.lambda_min, self.lambda_max
            ));
        }
        if let LambdaChoice::Fixed(l) = self.lambda {
            if !(l > 0.0) {
                return err(format!("lambda={l} must be positive"));
            }
        }
        if self.s_bytes != 4 && self.s_bytes != 8 {
            return err(format!(
                "s_bytes={} unsupported (the ledger wire format needs 4 or 8)",
                self.s_bytes
            ));
        }
        if !(self.c_const > 0.0) {
            return err(format!("c_const={} must be positive", self.c_const));
        }
        if !(self.budget_s > 0.0) {
            return err(format!("budget_s={} must be positive", self.budget_s));
        }
        if self.csv_path.is_none() {
            if self.total_samples < self.n_clients {
                return err(format!(
                    "total_samples={} cannot cover {} clients",
                    self.total_samples, self.n_clients
                ));
            }
            if self.labels_per_client == 0 || self.labels_per_client > self.label_count {
                return err(format!(
                    "labels_per_client={} must be in 1..={}",
                    self.labels_per_client, self.label_count
                ));
            }
        }
        if let TauLocalChoice::Fixed(v) = self.tau_local_s {
            if v < 0.0 {
                return err(format!("tau_local_s={v} must be >= 0"));
            }
        }
        if let MiningModel::HashPow { hash_rate } = self.pow {
            if !(hash_rate > 0.0) {
                return err(format!("hash_rate={hash_rate} must be positive"));
            }
        }
        Ok(())
    }

    /// Parse from `key=value` text, starting from defaults.
    pub fn from_kv_str(text: &str) -> Result<Self, HarnessError> {
        let map = crate::timecost::parse_kv(text).map_err(HarnessError::Config)?;
        Self::from_kv(map)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_kv_str(&text)
    }

    fn from_kv(map: BTreeMap<String, String>) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let bad = |key: &str, value: &str, why: &dyn std::fmt::Display| {
            HarnessError::Config(format!("bad {key}={value}: {why}"))
        };
        for (key, value) in &map {
            let v = value.as_str();
            match key.as_str() {
                "seed" => cfg.seed = v.parse().map_err(|e| bad(key, v, &e))?,
                "mode" => cfg.mode = v.parse().map_err(|e| bad(key, v, &e))?,
                "strategy" => {
                    cfg.strategy = match v {
                        "fixed" => Strategy::Fixed,
                        "optimal" => Strategy::Optimal,
                        _ => return Err(bad(key, v, &"expected fixed|optimal")),
                    }
                }
                "n_clients" => cfg.n_clients = v.parse().map_err(|e| bad(key, v, &e))?,
                "n_miners" => cfg.n_miners = v.parse().map_err(|e| bad(key, v, &e))?,
                "epochs" => cfg.epochs = v.parse().map_err(|e| bad(key, v, &e))?,
                "lr" => cfg.lr = v.parse().map_err(|e| bad(key, v, &e))?,
                "batch" => {
                    cfg.batch = match v {
                        "full" => None,
                        _ => Some(v.parse().map_err(|e| bad(key, v, &e))?),
                    }
                }
                "k" => {
                    cfg.k = match v {
                        "" | "none" => None,
                        _ => Some(v.parse().map_err(|e| bad(key, v, &e))?),
                    }
                }
                "k_frac" => cfg.k_frac = v.parse().map_err(|e| bad(key, v, &e))?,
                "lambda" => {
                    cfg.lambda = match v {
                        "auto" => LambdaChoice::Auto,
                        _ => LambdaChoice::Fixed(v.parse().map_err(|e| bad(key, v, &e))?),
                    }
                }
                "budget_s" => cfg.budget_s = v.parse().map_err(|e| bad(key, v, &e))?,
                "dropout" => cfg.dropout = v.parse().map_err(|e| bad(key, v, &e))?,
                "max_rounds" => cfg.max_rounds = v.parse().map_err(|e| bad(key, v, &e))?,
                "reoptimize_every" => {
                    cfg.reoptimize_every = v.parse().map_err(|e| bad(key, v, &e))?
                }
                "ema_alpha" => cfg.ema_alpha = v.parse().map_err(|e| bad(key, v, &e))?,
                "probe_k_frac" => cfg.probe_k_frac = v.parse().map_err(|e| bad(key, v, &e))?,
                "c_const" => cfg.c_const = v.parse().map_err(|e| bad(key, v, &e))?,
                "pow" => {
                    cfg.pow = match v {
                        "simulated" => MiningModel::Simulated,
                        "hash" => MiningModel::HashPow {
                            hash_rate: match cfg.pow {
                                MiningModel::HashPow { hash_rate } => hash_rate,
                                _ => 1e6,
                            },
                        },
                        _ => return Err(bad(key, v, &"expected simulated|hash")),
                    }
                }
                "hash_rate" => {
                    let rate: f64 = v.parse().map_err(|e| bad(key, v, &e))?;
                    cfg.pow = MiningModel::HashPow { hash_rate: rate };
                }
                "grad_diag_stride" => {
                    cfg.grad_diag_stride = v.parse().map_err(|e| bad(key, v, &e))?
                }
                "hidden_widths" => {
                    cfg.hidden_widths = v
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(|p| p.trim().parse::<usize>().map_err(|e| bad(key, v, &e)))
                        .collect::<Result<Vec<_>, _>>()?
                }
                "activation" => {
                    cfg.activation = match v {
                        "relu" => Activation::Relu,
                        "tanh" => Activation::Tanh,
                        _ => return Err(bad(key, v, &"expected relu|tanh")),
                    }
                }
                "feature_dim" => cfg.feature_dim = v.parse().map_err(|e| bad(key, v, &e))?,
                "label_count" => cfg.label_count = v.parse().map_err(|e| bad(key, v, &e))?,
                "labels_per_client" => {
                    cfg.labels_per_client = v.parse().map_err(|e| bad(key, v, &e))?
                }
                "total_samples" => cfg.total_samples = v.parse().map_err(|e| bad(key, v, &e))?,
                "test_samples" => cfg.test_samples = v.parse().map_err(|e| bad(key, v, &e))?,
                "center_scale" => cfg.center_scale = v.parse().map_err(|e| bad(key, v, &e))?,
                "noise" => cfg.noise = v.parse().map_err(|e| bad(key, v, &e))?,
                "csv_path" => {
                    cfg.csv_path = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
                }
                "csv_test_fraction" => {
                    cfg.csv_test_fraction = v.parse().map_err(|e| bad(key, v, &e))?
                }
                "data_seed" => cfg.data_seed = Some(v.parse().map_err(|e| bad(key, v, &e))?),
                "init_seed" => cfg.init_seed = Some(v.parse().map_err(|e| bad(key, v, &e))?),
                "bw_hz" => cfg.bw_hz = v.parse().map_err(|e| bad(key, v, &e))?,
                "gain" => cfg.gain = v.parse().map_err(|e| bad(key, v, &e))?,
                "p_t_w" => cfg.p_t_w = v.parse().map_err(|e| bad(key, v, &e))?,
                "p_n_w" => cfg.p_n_w = v.parse().map_err(|e| bad(key, v, &e))?,
                "jitter" => cfg.jitter = v.parse().map_err(|e| bad(key, v, &e))?,
                "tau_local_s" => {
                    cfg.tau_local_s = match v {
                        "auto" => TauLocalChoice::Auto,
                        _ => TauLocalChoice::Fixed(v.parse().map_err(|e| bad(key, v, &e))?),
                    }
                }
                "compute_speed_factor" => {
                    cfg.compute_speed_factor = v.parse().map_err(|e| bad(key, v, &e))?
                }
                "tau_aggre_s" => cfg.tau_aggre_s = v.parse().map_err(|e| bad(key, v, &e))?,
                "s_bytes" => cfg.s_bytes = v.parse().map_err(|e| bad(key, v, &e))?,
                "lambda_min" => cfg.lambda_min = v.parse().map_err(|e| bad(key, v, &e))?,
                "lambda_max" => cfg.lambda_max = v.parse().map_err(|e| bad(key, v, &e))?,
                "acs_tol" => cfg.acs_tol = v.parse().map_err(|e| bad(key, v, &e))?,
                "acs_max_sweeps" => cfg.acs_max_sweeps = v.parse().map_err(|e| bad(key, v, &e))?,
                "baseline_k_fracs" => {
                    cfg.baseline_k_fracs = v
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(|p| p.trim().parse::<f64>().map_err(|e| bad(key, v, &e)))
                        .collect::<Result<Vec<_>, _>>()?
                }
                other => {
                    return Err(HarnessError::Config(format!("unknown config key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The default configuration as commented `key=value` text.
    pub fn default_text() -> String {
        DEFAULT_CONFIG_TEXT.to_string()
    }

    /// Render this configuration as `key=value` text (no comments).
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push(
            "mode",
            match self.mode {
                Mode::Analytic => "analytic".into(),
                Mode::Stochastic => "stochastic".into(),
            },
        );
        push(
            "strategy",
            match self.strategy {
                Strategy::Fixed => "fixed".into(),
                Strategy::Optimal => "optimal".into(),
            },
        );
        push("n_clients", self.n_clients.to_string());
        push("n_miners", self.n_miners.to_string());
        push("epochs", self.epochs.to_string());
        push("lr", self.lr.to_string());
        push(
            "batch",
            self.batch.map(|b| b.to_string()).unwrap_or_else(|| "full".into()),
        );
        if let Some(k) = self.k {
            push("k", k.to_string());
        }
        push("k_frac", self.k_frac.to_string());
        push(
            "lambda",
            match self.lambda {
                LambdaChoice::Auto => "auto".into(),
                LambdaChoice::Fixed(l) => l.to_string(),
            },
        );
        push("budget_s", self.budget_s.to_string());
        push("dropout", self.dropout.to_string());
        push("max_rounds", self.max_rounds.to_string());
        push("reoptimize_every", self.reoptimize_every.to_string());
        push("ema_alpha", self.ema_alpha.to_string());
        push("probe_k_frac", self.probe_k_frac.to_string());
        push("c_const", self.c_const.to_string());
        match self.pow {
            MiningModel::Simulated => push("pow", "simulated".into()),
            MiningModel::HashPow { hash_rate } => {
                push("pow", "hash".into());
                push("hash_rate", hash_rate.to_string());
            }
        }
        push("grad_diag_stride", self.grad_diag_stride.to_string());
        push(
            "hidden_widths",
            self.hidden_widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            "activation",
            match self.activation {
                Activation::Relu => "relu".into(),
                Activation::Tanh => "tanh".into(),
            },
        );
        push("feature_dim", self.feature_dim.to_string());
        push("label_count", self.label_count.to_string());
        push("labels_per_client", self.labels_per_client.to_string());
        push("total_samples", self.total_samples.to_string());
        push("test_samples", self.test_samples.to_string());
        push("center_scale", self.center_scale.to_string());
        push("noise", self.noise.to_string());
        if let Some(p) = &self.csv_path {
            push("csv_path", p.display().to_string());
        }
        push("csv_test_fraction", self.csv_test_fraction.to_string());
        if let Some(s) = self.data_seed {
            push("data_seed", s.to_string());
        }
        if let Some(s) = self.init_seed {
            push("init_seed", s.to_string());
        }
        push("bw_hz", self.bw_hz.to_string());
        push("gain", self.gain.to_string());
        push("p_t_w", self.p_t_w.to_string());
        push("p_n_w", self.p_n_w.to_string());
        push("jitter", self.jitter.to_string());
        push(
            "tau_local_s",
            match self.tau_local_s {
                TauLocalChoice::Auto => "auto".into(),
                TauLocalChoice::Fixed(v) => v.to_string(),
            },
        );
        push("compute_speed_factor", self.compute_speed_factor.to_string());
        push("tau_aggre_s", self.tau_aggre_s.to_string());
        push("s_bytes", self.s_bytes.to_string());
        push("lambda_min", self.lambda_min.to_string());
        push("lambda_max", self.lambda_max.to_string());
        push("acs_tol", self.acs_tol.to_string());
        push("acs_max_sweeps", self.acs_max_sweeps.to_string());
        push(
            "baseline_k_fracs",
            self.baseline_k_fracs
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        out
    }
}

/// Turn a fraction of `d` into a concrete `k`, at least 1.
pub fn frac_to_k(frac: f64, d: usize) -> usize {
    ((frac * d as f64).round() as usize).clamp(1, d)
}

const DEFAULT_CONFIG_TEXT: &str = "\
# fedchain experiment configuration (key=value; '#' starts a comment)

# reproducibility
seed=1
# analytic charges expected durations; stochastic samples rates, mining, forks
mode=analytic
# fixed uses k/k_frac and lambda below; optimal probes one round, estimates
# the bound constants, and solves for (k*, lambda*)
strategy=fixed

# federated system
n_clients=50
n_miners=50
epochs=5
lr=0.05
# 'full' or an integer mini-batch size
batch=full

# compression and chain
# k takes precedence over k_frac when set
#k=1226
k_frac=0.01
# 'auto' minimizes the round time over lambda for the chosen k
lambda=auto
budget_s=400
dropout=0
max_rounds=100000
reoptimize_every=0
ema_alpha=0.3
probe_k_frac=0.01
c_const=0.15
# simulated | hash (hash grinds real nonces; slow, demo only)
pow=simulated
#hash_rate=1000000
grad_diag_stride=0

# model
hidden_widths=64
activation=relu

# data (synthetic Gaussian class clusters unless csv_path is set)
feature_dim=32
label_count=10
# equal to label_count -> IID; smaller -> label-skewed clients
labels_per_client=10
total_samples=2500
test_samples=500
center_scale=3
noise=1
#csv_path=data.csv
csv_test_fraction=0.2
# default to `seed`; pin these to share data/init across runs
#data_seed=1
#init_seed=1

# network (radio constants feed Shannon's formula)
bw_hz=20000000
gain=0.00000001
p_t_w=0.5
p_n_w=0.0000000001
jitter=0.1
# a number in seconds, or 'auto' to measure the first round's wall time
tau_local_s=0.2
compute_speed_factor=1
tau_aggre_s=0
s_bytes=4

# optimizer
lambda_min=0.0001
lambda_max=100
acs_tol=0.00000001
acs_max_sweeps=100
baseline_k_fracs=0.01,0.02,0.03
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_parses_back_to_defaults() {
        let cfg = ExperimentConfig::from_kv_str(&ExperimentConfig::default_text()).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn kv_render_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 99;
        cfg.mode = Mode::Stochastic;
        cfg.strategy = Strategy::Optimal;
        cfg.k = Some(321);
        cfg.lambda = LambdaChoice::Fixed(0.4);
        cfg.hidden_widths = vec![32, 16];
        cfg.batch = Some(8);
        cfg.pow = MiningModel::HashPow { hash_rate: 5e5 };
        cfg.tau_local_s = TauLocalChoice::Auto;
        let text = cfg.to_kv_string();
        let back = ExperimentConfig::from_kv_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_kv_str("no_such_key=1"),
            Err(HarnessError::Config(_))
        ));
        assert!(ExperimentConfig::from_kv_str("lr=fast").is_err());
        assert!(ExperimentConfig::from_kv_str("mode=quantum").is_err());
        assert!(ExperimentConfig::from_kv_str("s_bytes=3").is_err());
        assert!(ExperimentConfig::from_kv_str("dropout=1.5").is_err());
    }

    #[test]
    fn k_resolution_prefers_explicit_over_fraction() {
        let mut cfg = ExperimentConfig::default();
        cfg.k_frac = 0.01;
        assert_eq!(cfg.resolve_k(10_000).unwrap(), 100);
        cfg.k = Some(7);
        assert_eq!(cfg.resolve_k(10_000).unwrap(), 7);
        cfg.k = Some(0);
        assert!(cfg.resolve_k(10_000).is_err());
        assert_eq!(frac_to_k(1e-9, 100), 1);
        assert_eq!(frac_to_k(1.0, 100), 100);
    }
}
