//! The round protocol: local training with error feedback, compressed
//! upload, cross transactions, the mining race, download, and aggregation,
//! all against a virtual clock.
//!
//! Each round a client runs `E` local gradient-descent epochs from the
//! shared global model, forms the raw update
//! `g_raw = (w_after - w_global) + m_prev` (its parameter delta plus the
//! compensation error carrying everything previously discarded), sends
//! `top_k(g_raw)` quantized to the wire width, and keeps
//! `m_new = g_raw - densify(sent)`. That conservation identity holds
//! bit-exactly per coordinate, so no update mass is ever lost — with `k = d`
//! and a lossless wire the trajectory is plain FedAvg and `m` stays zero.
//!
//! Aggregation applies the block contents: `w + (1/N) * sum of updates`,
//! summed in client-id order, with the fixed `1/N` weight even when clients
//! drop out. All clients then adopt the aggregated model, so the fleet stays
//! synchronized.
//!
//! In analytic mode step durations are the expected values of the time-cost
//! model; in stochastic mode link rates are sampled per transmission and the
//! mining race is simulated fork by fork. Both modes advance the same
//! virtual clock; nothing ever sleeps.

use std::sync::Arc;
use std::time::Instant;

use rand::RngExt;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::chain::{
    apply_updates, model_digest, run_mining_race_with, ChainError, Ledger, MinerState, MiningModel,
};
use crate::compression::{
    omega_bytes, quantize_update, CompressionError, CompressionOp, SparseUpdate, TopK,
};
use crate::learning::{
    accuracy, loss, loss_and_gradient, Architecture, FederatedDataset, LearningError, ParamVector,
    Sample,
};
use crate::rngstream::derive_rng;
use crate::timecost::{sample_link_rate, NetworkEnv, TimeCostError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("divergence at round {round}, client {client}: non-finite loss or gradient")]
    Divergence { round: u32, client: u32 },
    #[error("block integrity: {0}")]
    BlockIntegrity(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    TimeCost(#[from] TimeCostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Charge expected durations from the analytic time-cost model.
    Analytic,
    /// Sample link rates and mining times; simulate fork retries.
    Stochastic,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "analytic" => Ok(Mode::Analytic),
            "stochastic" => Ok(Mode::Stochastic),
            other => Err(format!("unknown mode {other:?} (analytic|stochastic)")),
        }
    }
}

/// Everything the round loop needs beyond the network environment.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SystemConfig {
    pub n_clients: usize,
    pub n_miners: usize,
    /// Local epochs per global iteration.
    pub epochs: usize,
    /// Learning rate for local gradient descent.
    pub lr: f64,
    /// Mini-batch size; `None` runs full-batch local iterations.
    pub batch: Option<usize>,
    /// Compression level: entries kept per update.
    pub k: usize,
    /// Block generation rate, blocks per second.
    pub lambda: f64,
    /// Training time budget `Y` in simulated seconds.
    pub budget: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Per-round probability that a client fails to return its update.
    pub dropout: f64,
    /// Hard cap on simulated rounds.
    pub max_rounds: usize,
    pub mining: MiningModel,
    /// Record `||grad F(w_t^i)||^2` every this many local iterations
    /// (0 disables the diagnostic; it costs a full-data gradient per probe).
    pub grad_diag_stride: usize,
    /// When set, measure tau_local from the wall clock of the first round's
    /// local training and scale by this factor. Breaks the byte-for-byte
    /// determinism contract; off by default.
    pub auto_tau_local_factor: Option<f64>,
}

impl SystemConfig {
    pub fn validate(&self, d: usize) -> Result<(), ProtocolError> {
        let err = |msg: String| Err(ProtocolError::InvalidConfig(msg));
        if self.n_clients == 0 || self.n_miners == 0 {
            return err("need at least one client and one miner".into());
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return err(format!("lr={} must be positive", self.lr));
        }
        if self.k == 0 || self.k > d {
            return err(format!("k={} out of range (0, {d}]", self.k));
        }
        if !(self.lambda > 0.0) {
            return err(format!("lambda={} must be positive", self.lambda));
        }
        if !(self.budget > 0.0) {
            return err(format!("budget={} must be positive", self.budget));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout={} must be in [0, 1)", self.dropout));
        }
        if self.max_rounds == 0 {
            return err("max_rounds must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-client state carried across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u32,
    /// Local copy of the model; equal to the global model between rounds.
    pub model: ParamVector,
    /// Compensation error `m`: the update mass not yet transmitted.
    pub compensation: ParamVector,
    pub up_rate: f64,
    pub down_rate: f64,
}

/// Everything measured about one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub k: usize,
    pub lambda: f64,
    pub tau_local: f64,
    pub tau_up: f64,
    pub tau_cross: f64,
    /// Mining plus propagation, fork retries included.
    pub tau_mine: f64,
    pub tau_down: f64,
    pub tau_aggre: f64,
    pub fork_attempts: u32,
    pub bytes_uploaded: f64,
    pub bytes_crossed: f64,
    pub bytes_propagated: f64,
    pub bytes_downloaded: f64,
    /// Virtual seconds elapsed including this round.
    pub cum_time: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub dropped: Vec<u32>,
    /// Mean effective link rates this round (sampled in stochastic mode,
    /// the configured means otherwise); feeds rate re-measurement.
    pub observed_up_rate: f64,
    pub observed_down_rate: f64,
    pub observed_miner_rate: f64,
    /// Mean squared compensation-error norm across clients after the round.
    pub mean_residual_sq: f64,
}

impl RoundRecord {
    pub fn duration(&self) -> f64 {
        self.tau_local + self.tau_up + self.tau_cross + self.tau_mine + self.tau_down + self.tau_aggre
    }

    pub fn bytes_total(&self) -> f64 {
        self.bytes_uploaded + self.bytes_crossed + self.bytes_propagated + self.bytes_downloaded
    }
}

/// Run `epochs` gradient steps `w <- w - lr * grad(w)` from `w0`.
///
/// `grad` is any gradient oracle; non-finite values abort with an error.
pub fn local_descent<F>(
    w0: &ParamVector,
    epochs: usize,
    lr: f64,
    mut grad: F,
) -> Result<ParamVector, ProtocolError>
where
    F: FnMut(&ParamVector) -> Result<ParamVector, ProtocolError>,
{
    let mut w = w0.clone();
    for _ in 0..epochs {
        let g = grad(&w)?;
        if !g.all_finite() {
            return Err(ProtocolError::Divergence { round: 0, client: 0 });
        }
        w.axpy(-lr, &g);
        if !w.all_finite() {
            return Err(ProtocolError::Divergence { round: 0, client: 0 });
        }
    }
    Ok(w)
}

/// Form the compressed update and the new compensation error.
///
/// `g_raw = (w_after - w_global) + m_prev`; the sent update is `top_k(g_raw)`
/// quantized to the wire width `s`, and `m_new = g_raw - densify(sent)`, so
/// `densify(sent) + m_new == g_raw` holds exactly per coordinate.
pub fn form_update(
    w_after: &ParamVector,
    w_global: &ParamVector,
    m_prev: &ParamVector,
    k: usize,
    s: u32,
    round: u32,
    client_id: u32,
) -> Result<(SparseUpdate, ParamVector), ProtocolError> {
    form_update_with(&TopK { k }, w_after, w_global, m_prev, s, round, client_id)
}

/// [`form_update`] with an arbitrary compression operator.
pub fn form_update_with(
    op: &dyn CompressionOp,
    w_after: &ParamVector,
    w_global: &ParamVector,
    m_prev: &ParamVector,
    s: u32,
    round: u32,
    client_id: u32,
) -> Result<(SparseUpdate, ParamVector), ProtocolError> {
    let mut g_raw = w_after.sub(w_global);
    g_raw.axpy(1.0, m_prev);
    let mut sent = quantize_update(&op.compress(&g_raw)?, s)?;
    // values that overflow the wire width count as divergence: the update
    // cannot be transmitted faithfully
    if sent.entries.iter().any(|(_, v)| !v.is_finite()) {
        return Err(ProtocolError::Divergence { round, client: client_id });
    }
    sent.round = round;
    sent.client_id = client_id;
    let dense = sent.densify();
    let m_new = g_raw.sub(&dense);
    #[cfg(debug_assertions)]
    for i in 0..g_raw.len() {
        debug_assert_eq!(dense[i] + m_new[i], g_raw[i], "conservation broke at {i}");
    }
    Ok((sent, m_new))
}

/// One client's round: `E` local epochs from the global model, then the
/// compressed update plus refreshed compensation error. The client state is
/// not mutated; the caller commits the new compensation when the block
/// lands.
#[allow(clippy::too_many_arguments)]
pub fn client_round(
    state: &ClientState,
    data: &[Sample],
    arch: &Architecture,
    w_global: &ParamVector,
    epochs: usize,
    lr: f64,
    k: usize,
    s: u32,
    batch: Option<usize>,
    round: u32,
    batch_rng: &mut ChaCha20Rng,
) -> Result<(SparseUpdate, ParamVector), ProtocolError> {
    client_round_inner(
        state, data, arch, w_global, epochs, lr, k, s, batch, round, batch_rng, &mut None,
    )
}

type DiagProbe<'a> = Option<&'a mut dyn FnMut(&ParamVector) -> Result<(), ProtocolError>>;

#[allow(clippy::too_many_arguments)]
fn client_round_inner(
    state: &ClientState,
    data: &[Sample],
    arch: &Architecture,
    w_global: &ParamVector,
    epochs: usize,
    lr: f64,
    k: usize,
    s: u32,
    batch: Option<usize>,
    round: u32,
    batch_rng: &mut ChaCha20Rng,
    diag: &mut DiagProbe<'_>,
) -> Result<(SparseUpdate, ParamVector), ProtocolError> {
    if let Some(b) = batch {
        if b == 0 || b > data.len() {
            return Err(LearningError::BatchTooLarge {
                batch: b,
                available: data.len(),
            }
            .into());
        }
    }
    let mut w = w_global.clone();
    for _ in 0..epochs {
        if let Some(probe) = diag.as_mut() {
            probe(&w)?;
        }
        let g = match batch {
            None => loss_and_gradient(&w, arch, data.iter())?.1,
            Some(b) => {
                // sample b indices without replacement (partial shuffle)
                let mut idx: Vec<usize> = (0..data.len()).collect();
                for i in 0..b {
                    let j = batch_rng.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                loss_and_gradient(&w, arch, idx[..b].iter().map(|&i| &data[i]))?.1
            }
        };
        if !g.all_finite() {
            return Err(ProtocolError::Divergence {
                round,
                client: state.id,
            });
        }
        w.axpy(-lr, &g);
        if !w.all_finite() {
            return Err(ProtocolError::Divergence {
                round,
                client: state.id,
            });
        }
    }
    form_update(&w, w_global, &state.compensation, k, s, round, state.id).map_err(|e| match e {
        ProtocolError::Divergence { .. } => ProtocolError::Divergence {
            round,
            client: state.id,
        },
        other => other,
    })
}

/// Aggregate one block of updates: `w_prev + (1/N) sum`, client-id order.
///
/// With `allow_missing` (dropout mode) absent clients contribute zero while
/// the divisor stays `N`; otherwise exactly one update per client is
/// required.
pub fn aggregate(
    updates: &[SparseUpdate],
    w_prev: &ParamVector,
    n_clients: usize,
    allow_missing: bool,
) -> Result<ParamVector, ProtocolError> {
    if updates.is_empty() && !allow_missing {
        return Err(ProtocolError::BlockIntegrity("no updates in block".into()));
    }
    let mut expected_round = None;
    let mut prev_client: Option<u32> = None;
    for u in updates {
        u.validate()?;
        if u.d as usize != w_prev.len() {
            return Err(ProtocolError::BlockIntegrity(format!(
                "update dimension {} does not match model {}",
                u.d,
                w_prev.len()
            )));
        }
        if u.client_id as usize >= n_clients {
            return Err(ProtocolError::BlockIntegrity(format!(
                "unknown client {}",
                u.client_id
            )));
        }
        if let Some(r) = expected_round {
            if u.round != r {
                return Err(ProtocolError::BlockIntegrity(format!(
                    "mixed rounds {r} and {} in one block",
                    u.round
                )));
            }
        }
        expected_round = Some(u.round);
        if let Some(p) = prev_client {
            if u.client_id <= p {
                return Err(ProtocolError::BlockIntegrity(format!(
                    "duplicate or unordered client {}",
                    u.client_id
                )));
            }
        }
        prev_client = Some(u.client_id);
    }
    if !allow_missing && updates.len() != n_clients {
        return Err(ProtocolError::BlockIntegrity(format!(
            "expected {n_clients} updates, found {}",
            updates.len()
        )));
    }
    Ok(apply_updates(w_prev, updates, n_clients))
}

/// A fully simulated round waiting to be committed. Splitting simulation
/// from commit lets the experiment loop discard a round that would overrun
/// the time budget without corrupting state.
#[derive(Debug)]
pub struct PendingRound {
    pub record: RoundRecord,
    new_model: ParamVector,
    new_compensations: Vec<(usize, ParamVector)>,
    updates: Vec<SparseUpdate>,
    winner: u32,
    nonce: u64,
}

impl PendingRound {
    pub fn duration(&self) -> f64 {
        self.record.duration()
    }
}

/// The live system: clients, miners, ledger, global model, virtual clock.
pub struct Simulation {
    pub cfg: SystemConfig,
    pub arch: Architecture,
    pub data: Arc<FederatedDataset>,
    pub env: NetworkEnv,
    pub clients: Vec<ClientState>,
    pub miners: Vec<MinerState>,
    pub global_model: ParamVector,
    pub ledger: Ledger,
    pub clock: f64,
    pub rounds_done: u32,
    /// Recorded `||grad F(w_t^i)||^2` samples (diagnostic mode).
    pub grad_norm_history: Vec<f64>,
    tau_local_measured: Option<f64>,
}

impl Simulation {
    pub fn new(
        cfg: SystemConfig,
        arch: Architecture,
        data: Arc<FederatedDataset>,
        env: NetworkEnv,
        initial_model: ParamVector,
    ) -> Result<Self, ProtocolError> {
        arch.validate()?;
        env.validate()?;
        let d = arch.param_count();
        cfg.validate(d)?;
        if env.d != d {
            return Err(ProtocolError::InvalidConfig(format!(
                "environment d={} does not match architecture d={d}",
                env.d
            )));
        }
        if initial_model.len() != d {
            return Err(ProtocolError::InvalidConfig(format!(
                "initial model has {} parameters, architecture needs {d}",
                initial_model.len()
            )));
        }
        if data.n_clients() != cfg.n_clients
            || env.n_clients() != cfg.n_clients
            || env.n_miners() != cfg.n_miners
        {
            return Err(ProtocolError::InvalidConfig(
                "client/miner counts disagree between config, data, and environment".into(),
            ));
        }
        data.validate()?;
        if data.label_count != arch.num_classes {
            return Err(ProtocolError::InvalidConfig(format!(
                "dataset has {} labels, architecture outputs {}",
                data.label_count, arch.num_classes
            )));
        }
        if let Some(b) = cfg.batch {
            for c in data.clients.iter() {
                if b > c.len() {
                    return Err(LearningError::BatchTooLarge {
                        batch: b,
                        available: c.len(),
                    }
                    .into());
                }
            }
        }
        // clients connect to miners round-robin; one-to-one when M == N
        let mut miners: Vec<MinerState> = (0..cfg.n_miners)
            .map(|j| MinerState {
                id: j as u32,
                down_rate: env.miner_rates[j],
                clients: Vec::new(),
            })
            .collect();
        let clients: Vec<ClientState> = (0..cfg.n_clients)
            .map(|i| {
                miners[i % cfg.n_miners].clients.push(i as u32);
                ClientState {
                    id: i as u32,
                    model: initial_model.clone(),
                    compensation: ParamVector::zeros(d),
                    up_rate: env.up_rates[i],
                    down_rate: env.down_rates[i],
                }
            })
            .collect();
        let ledger = Ledger::new(initial_model.clone(), cfg.n_clients, env.s);
        Ok(Simulation {
            cfg,
            arch,
            data,
            env,
            clients,
            miners,
            global_model: initial_model,
            ledger,
            clock: 0.0,
            rounds_done: 0,
            grad_norm_history: Vec::new(),
            tau_local_measured: None,
        })
    }

    /// Change the compression level between rounds (re-optimization hook).
    pub fn set_compression(&mut self, k: usize) -> Result<(), ProtocolError> {
        let d = self.arch.param_count();
        if k == 0 || k > d {
            return Err(ProtocolError::InvalidConfig(format!(
                "k={k} out of range (0, {d}]"
            )));
        }
        self.cfg.k = k;
        Ok(())
    }

    /// Change the block generation rate between rounds.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<(), ProtocolError> {
        if !(lambda > 0.0) {
            return Err(ProtocolError::InvalidConfig(format!(
                "lambda={lambda} must be positive"
            )));
        }
        self.cfg.lambda = lambda;
        Ok(())
    }

    fn gradient_of_global_loss(&self, w: &ParamVector) -> Result<ParamVector, ProtocolError> {
        // uniform 1/N average of per-client full gradients
        let mut acc = ParamVector::zeros(w.len());
        for c in &self.data.clients {
            let g = crate::learning::gradient(w, &self.arch, c.iter())?;
            acc.axpy(1.0, &g);
        }
        let scale = 1.0 / self.data.n_clients() as f64;
        for v in acc.as_mut_slice() {
            *v *= scale;
        }
        Ok(acc)
    }

    /// Simulate one round without committing any state.
    pub fn simulate_round(&mut self) -> Result<PendingRound, ProtocolError> {
        let round = self.rounds_done + 1;
        let seed = self.cfg.seed;
        let k = self.cfg.k;
        let s = self.env.s;
        let n = self.cfg.n_clients;
        let m = self.cfg.n_miners;
        let omega = omega_bytes(self.env.d, s);
        let payload = k as f64 * omega;

        // step 0: dropout pattern for this round
        let mut dropout_rng = derive_rng(seed, &format!("round/{round}/dropout"));
        let dropped: Vec<u32> = (0..n)
            .filter_map(|i| {
                let u: f64 = dropout_rng.random();
                (self.cfg.dropout > 0.0 && u < self.cfg.dropout).then_some(i as u32)
            })
            .collect();
        let active = |i: u32| !dropped.contains(&i);

        // step 1 + 2 payload formation: local training and compression,
        // client-index order
        let started = Instant::now();
        let mut batch_rng = derive_rng(seed, &format!("round/{round}/batches"));
        let mut updates = Vec::with_capacity(n);
        let mut new_compensations = Vec::with_capacity(n);
        let stride = self.cfg.grad_diag_stride;
        let mut diag_records: Vec<f64> = Vec::new();
        for i in 0..n {
            if !active(i as u32) {
                continue;
            }
            let state = &self.clients[i];
            let data = &self.data.clients[i];
            let mut step = 0usize;
            let mut probe = |w: &ParamVector| -> Result<(), ProtocolError> {
                if step % stride.max(1) == 0 {
                    let g = self.gradient_of_global_loss(w)?;
                    diag_records.push(g.norm_sq());
                }
                step += 1;
                Ok(())
            };
            let mut diag: DiagProbe<'_> = if stride > 0 { Some(&mut probe) } else { None };
            let (update, m_new) = client_round_inner(
                state,
                data,
                &self.arch,
                &self.global_model,
                self.cfg.epochs,
                self.cfg.lr,
                k,
                s,
                self.cfg.batch,
                round,
                &mut batch_rng,
                &mut diag,
            )?;
            updates.push(update);
            new_compensations.push((i, m_new));
        }
        let wall_local = started.elapsed().as_secs_f64();
        let tau_local = match self.cfg.auto_tau_local_factor {
            None => self.env.tau_local,
            Some(factor) => *self
                .tau_local_measured
                .get_or_insert_with(|| wall_local * factor),
        };

        let n_active = updates.len();
        let block_payload = n_active as f64 * payload;

        // per-miner active client counts for the cross step
        let active_per_miner: Vec<usize> = self
            .miners
            .iter()
            .map(|mi| mi.clients.iter().filter(|&&c| active(c)).count())
            .collect();

        // effective rates: sampled per transmission in stochastic mode
        let mut rate_rng = derive_rng(seed, &format!("round/{round}/rates"));
        let jitter = match self.cfg.mode {
            Mode::Analytic => 0.0,
            Mode::Stochastic => self.env.jitter,
        };
        let up_rates: Vec<f64> = (0..n)
            .map(|i| sample_link_rate(self.env.up_rates[i], jitter, &mut rate_rng))
            .collect();
        let miner_rates: Vec<f64> = (0..m)
            .map(|j| sample_link_rate(self.env.miner_rates[j], jitter, &mut rate_rng))
            .collect();
        let down_rates: Vec<f64> = (0..n)
            .map(|i| sample_link_rate(self.env.down_rates[i], jitter, &mut rate_rng))
            .collect();

        // step 2: uploads complete when the slowest active client finishes
        let tau_up = (0..n)
            .filter(|&i| active(i as u32))
            .map(|i| payload / up_rates[i])
            .fold(0.0, f64::max);

        // step 3: cross transactions, gated by miner download capacity
        let tau_cross = (0..m)
            .map(|j| (n_active as f64 - active_per_miner[j] as f64) * payload / miner_rates[j])
            .fold(0.0, f64::max);

        // step 4: mining race (stochastic) or its expectation (analytic)
        let mut mining_rng = derive_rng(seed, &format!("round/{round}/mining"));
        let (tau_mine, fork_attempts, winner, nonce) = match self.cfg.mode {
            Mode::Analytic => {
                let jw = self.env.excluded_winner();
                let competitors: Vec<f64> = (0..m)
                    .filter(|&j| Some(j) != jw && m > 1)
                    .map(|j| miner_rates[j])
                    .collect();
                let t = crate::chain::expected_step4_time(
                    self.cfg.lambda,
                    block_payload,
                    &competitors,
                )?;
                (t, 1u32, jw.unwrap_or(0) as u32, mining_rng.random::<u64>())
            }
            Mode::Stochastic => {
                let outcome = run_mining_race_with(
                    self.cfg.mining,
                    &miner_rates,
                    self.cfg.lambda,
                    block_payload,
                    &mut mining_rng,
                )?;
                (outcome.elapsed, outcome.attempts, outcome.winner, outcome.nonce)
            }
        };

        // step 5: every client (dropped ones included) downloads the block
        let tau_down = (0..n)
            .map(|i| block_payload / down_rates[i])
            .fold(0.0, f64::max);

        // step 6: aggregation
        let new_model = aggregate(&updates, &self.global_model, n, self.cfg.dropout > 0.0)?;
        let test_loss = loss(&new_model, &self.arch, self.data.test_set.iter())?;
        let test_acc = accuracy(&new_model, &self.arch, self.data.test_set.iter())?;

        let mean_residual_sq = {
            let mut sum = 0.0;
            for (i, c) in self.clients.iter().enumerate() {
                let replaced = new_compensations.iter().find(|(j, _)| *j == i);
                sum += match replaced {
                    Some((_, m_new)) => m_new.norm_sq(),
                    None => c.compensation.norm_sq(),
                };
            }
            sum / n as f64
        };

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let record = RoundRecord {
            round,
            k,
            lambda: self.cfg.lambda,
            tau_local,
            tau_up,
            tau_cross,
            tau_mine,
            tau_down,
            tau_aggre: self.env.tau_aggre,
            fork_attempts,
            bytes_uploaded: n_active as f64 * payload,
            bytes_crossed: (0..m)
                .map(|j| (n_active - active_per_miner[j]) as f64 * payload)
                .sum(),
            bytes_propagated: fork_attempts as f64 * (m as f64 - 1.0) * block_payload,
            bytes_downloaded: n as f64 * block_payload,
            cum_time: self.clock, // finalized at commit
            test_loss,
            test_acc,
            dropped,
            observed_up_rate: mean(&up_rates),
            observed_down_rate: mean(&down_rates),
            observed_miner_rate: mean(&miner_rates),
            mean_residual_sq,
        };
        if stride > 0 {
            self.grad_norm_history.extend(diag_records);
        }
        Ok(PendingRound {
            record,
            new_model,
            new_compensations,
            updates,
            winner,
            nonce,
        })
    }

    /// Commit a simulated round: advance the clock, append the block,
    /// synchronize every client to the aggregated model.
    pub fn commit_round(&mut self, pending: PendingRound) -> Result<RoundRecord, ProtocolError> {
        let PendingRound {
            mut record,
            new_model,
            new_compensations,
            updates,
            winner,
            nonce,
        } = pending;
        self.clock += record.duration();
        record.cum_time = self.clock;
        self.rounds_done = record.round;
        self.ledger.append_block(
            record.round,
            winner,
            nonce,
            self.clock,
            updates,
            &new_model,
        )?;
        for (i, m_new) in new_compensations {
            self.clients[i].compensation = m_new;
        }
        for c in self.clients.iter_mut() {
            c.model = new_model.clone();
        }
        self.global_model = new_model;
        Ok(record)
    }

    /// Simulate and commit one round unconditionally.
    pub fn run_round(&mut self) -> Result<RoundRecord, ProtocolError> {
        let pending = self.simulate_round()?;
        self.commit_round(pending)
    }

    /// Digest of the current global model.
    pub fn model_digest(&self) -> [u8; 32] {
        model_digest(&self.global_model)
    }

    /// The per-round local-training duration in effect: the auto-measured
    /// value once round 1 has run, the configured one otherwise.
    pub fn effective_tau_local(&self) -> f64 {
        self.tau_local_measured.unwrap_or(self.env.tau_local)
    }
}

/// Optional stopping rules for [`run_experiment`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunControl {
    /// Stop as soon as test accuracy reaches this level.
    pub stop_at_accuracy: Option<f64>,
}

/// A completed experiment: every round record plus summary figures.
#[derive(Debug, Clone)]
pub struct ExperimentLog {
    pub records: Vec<RoundRecord>,
    pub completed_rounds: usize,
    pub final_loss: f64,
    pub final_acc: f64,
    pub total_bytes: f64,
    pub final_model_digest: [u8; 32],
    pub warning: Option<String>,
    pub reached_target: bool,
}

/// Repeat rounds until the next one would overrun the budget `Y`, the round
/// cap is hit, or the accuracy target is reached. A round that would exceed
/// the budget is discarded, not committed.
pub fn run_experiment(
    sim: &mut Simulation,
    control: &RunControl,
) -> Result<ExperimentLog, ProtocolError> {
    run_experiment_with(sim, control, |_, _| Ok(()), Vec::new())
}

/// [`run_experiment`] with a post-round hook (re-optimization, tracing) and
/// any rounds already committed by the caller (e.g. a probe round).
pub fn run_experiment_with<F>(
    sim: &mut Simulation,
    control: &RunControl,
    mut after_round: F,
    existing: Vec<RoundRecord>,
) -> Result<ExperimentLog, ProtocolError>
where
    F: FnMut(&mut Simulation, &RoundRecord) -> Result<(), ProtocolError>,
{
    let mut records = existing;
    let mut reached_target = records
        .last()
        .zip(control.stop_at_accuracy)
        .map(|(r, t)| r.test_acc >= t)
        .unwrap_or(false);
    while !reached_target && records.len() < sim.cfg.max_rounds {
        let pending = sim.simulate_round()?;
        if sim.clock + pending.duration() > sim.cfg.budget {
            break;
        }
        let record = sim.commit_round(pending)?;
        after_round(sim, &record)?;
        let acc = record.test_acc;
        records.push(record);
        if let Some(target) = control.stop_at_accuracy {
            if acc >= target {
                reached_target = true;
            }
        }
    }
    let warning = if records.is_empty() {
        Some(format!(
            "budget {}s is smaller than a single round; nothing executed",
            sim.cfg.budget
        ))
    } else {
        None
    };
    let (final_loss, final_acc) = match records.last() {
        Some(r) => (r.test_loss, r.test_acc),
        None => (
            loss(&sim.global_model, &sim.arch, sim.data.test_set.iter())?,
            accuracy(&sim.global_model, &sim.arch, sim.data.test_set.iter())?,
        ),
    };
    Ok(ExperimentLog {
        completed_rounds: records.len(),
        total_bytes: records.iter().map(RoundRecord::bytes_total).sum(),
        final_loss,
        final_acc,
        final_model_digest: sim.model_digest(),
        warning,
        reached_target,
        records,
    })
}


#[cfg(test)]
mod consistency_tests {
    use super::*;
    use crate::learning::{generate_federated, init_model, DataSpec};
    use crate::timecost::analytic_round_terms;

    fn sim_with_jitter(jitter: f64) -> Simulation {
        let arch = Architecture::new(4, vec![3], 2);
        let spec = DataSpec {
            n_clients: 3,
            per_client: 10,
            labels_per_client: 2,
            label_count: 2,
            feature_dim: 4,
            test_samples: 10,
            center_scale: 2.0,
            noise: 0.8,
        };
        let data = Arc::new(generate_federated(&spec, 8).unwrap());
        let env = NetworkEnv::homogeneous(3, 2, 2e4, jitter, 0.05, 0.0, 23, 4).unwrap();
        let w0 = init_model(&arch, 8).unwrap();
        let cfg = SystemConfig {
            n_clients: 3,
            n_miners: 2,
            epochs: 1,
            lr: 0.05,
            batch: None,
            k: 4,
            lambda: 0.9,
            budget: 1e9,
            seed: 55,
            mode: Mode::Stochastic,
            dropout: 0.0,
            max_rounds: 1000,
            mining: MiningModel::Simulated,
            grad_diag_stride: 0,
            auto_tau_local_factor: None,
        };
        Simulation::new(cfg, arch, data, env, w0).unwrap()
    }

    #[test]
    fn zero_jitter_stochastic_round_matches_analytic_terms_outside_mining() {
        let mut sim = sim_with_jitter(0.0);
        let r = sim.run_round().unwrap();
        let terms = analytic_round_terms(4.0, 0.9, &sim.env).unwrap();
        assert_eq!(r.tau_up, terms.tau_up);
        assert_eq!(r.tau_cross, terms.tau_cross);
        assert_eq!(r.tau_down, terms.tau_down);
        // mining is sampled; everything else is exact
        assert!(r.tau_mine > 0.0);
    }

    #[test]
    fn divergence_error_names_round_and_client() {
        let mut sim = sim_with_jitter(0.1);
        sim.cfg.lr = 1e200; // second step overflows f64
        sim.cfg.epochs = 3;
        match sim.run_round() {
            Err(ProtocolError::Divergence { round: 1, client }) => {
                assert_eq!(client, 0, "first client hits it in index order");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        // values that fit f64 but overflow the f32 wire also diverge
        let w_after = ParamVector::from_vec(vec![1e40, 0.0]);
        let w0 = ParamVector::zeros(2);
        match form_update(&w_after, &w0, &ParamVector::zeros(2), 1, 4, 2, 7) {
            Err(ProtocolError::Divergence { round: 2, client: 7 }) => {}
            other => panic!("expected wire-overflow divergence, got {other:?}"),
        }
    }

    #[test]
    fn auto_tau_local_measures_once_and_reuses() {
        let mut sim = sim_with_jitter(0.1);
        sim.cfg.auto_tau_local_factor = Some(3.0);
        let r1 = sim.run_round().unwrap();
        let measured = sim.effective_tau_local();
        assert!(measured > 0.0);
        assert_eq!(r1.tau_local, measured);
        let r2 = sim.run_round().unwrap();
        assert_eq!(r2.tau_local, measured, "later rounds reuse the measurement");
    }
}
