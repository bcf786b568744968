//! Proof-of-work mining model, blocks, and the verifiable ledger.
//!
//! Block generation is exponential: the winning block appears after
//! `Exp(lambda)` seconds and the winner is uniform over miners. A fork
//! happens when some other miner finds its own block before the winner's
//! block reaches it; by memorylessness the competitor's remaining mining
//! time is again `Exp(lambda)`, so the race samples that gap directly and
//! compares it against the propagation delay `Omega/u_j`. Every failed
//! attempt is charged its full mining-plus-propagation cost before the race
//! restarts.
//!
//! The closed forms live alongside the sampler: the fork probability
//! `1 - exp(-lambda * sum_j Omega/u_j)` and the expected step time
//! `(1/lambda + max_j Omega/u_j) * exp(lambda * sum_j Omega/u_j)`, both over
//! competitors `j != jw`.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Exp};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compression::{decode_update, encode_update, SparseUpdate};
use crate::learning::ParamVector;

pub type Digest32 = [u8; 32];

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("ledger encoding: {0}")]
    Encoding(#[from] crate::compression::CompressionError),
    #[error("malformed ledger at height {height}: {msg}")]
    Malformed { height: u64, msg: String },
    #[error("chain verification failed at height {height}: {field} mismatch")]
    Verify { height: u64, field: &'static str },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A miner: download rate plus the set of directly connected clients.
#[derive(Debug, Clone)]
pub struct MinerState {
    pub id: u32,
    pub down_rate: f64,
    pub clients: Vec<u32>,
}

/// Result of one mining race, fork retries included.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutcome {
    pub winner: u32,
    /// Total attempts; 1 means no fork occurred.
    pub attempts: u32,
    /// Total simulated seconds spent, failed attempts included.
    pub elapsed: f64,
    /// Mining-plus-propagation time of each attempt.
    pub attempt_times: Vec<f64>,
    /// Nonce recorded by the winning miner (hash-PoW mode finds it by
    /// grinding; simulated mode draws it).
    pub nonce: u64,
}

/// How the winning block time is produced.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MiningModel {
    /// Draw the block time from `Exp(lambda)` directly.
    Simulated,
    /// Grind SHA-256 nonces against a target tuned so that
    /// `hash_rate / target_probability` gives expected time `1/lambda`.
    /// Demonstrates the lambda-to-difficulty mapping; much slower.
    HashPow { hash_rate: f64 },
}

/// One draw of the block generation time, mean `1/lambda`.
pub fn sample_mining_time<R: Rng>(lambda: f64, rng: &mut R) -> Result<f64, ChainError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(ChainError::InvalidParameter(format!(
            "lambda={lambda} must be positive"
        )));
    }
    let exp = Exp::new(lambda).expect("positive lambda");
    Ok(exp.sample(rng))
}

fn check_race_params(lambda: f64, omega: f64) -> Result<(), ChainError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(ChainError::InvalidParameter(format!(
            "lambda={lambda} must be positive"
        )));
    }
    if omega < 0.0 || !omega.is_finite() {
        return Err(ChainError::InvalidParameter(format!(
            "omega={omega} must be non-negative"
        )));
    }
    Ok(())
}

/// Closed-form fork probability `1 - exp(-lambda * sum_j Omega/u_j)` over
/// the competitors' download rates. Empty competitor set gives 0.
pub fn fork_probability(
    lambda: f64,
    omega: f64,
    competitor_rates: &[f64],
) -> Result<f64, ChainError> {
    check_race_params(lambda, omega)?;
    let mut exposure = 0.0;
    for u in competitor_rates {
        if !(u > &0.0) {
            return Err(ChainError::InvalidParameter(format!("rate {u} must be positive")));
        }
        exposure += omega / u;
    }
    Ok(1.0 - (-lambda * exposure).exp())
}

/// Expected duration of the mine-and-propagate step including fork retries:
/// `(1/lambda + max_j Omega/u_j) * exp(lambda * sum_j Omega/u_j)`.
pub fn expected_step4_time(
    lambda: f64,
    omega: f64,
    competitor_rates: &[f64],
) -> Result<f64, ChainError> {
    check_race_params(lambda, omega)?;
    let mut prop_max = 0.0f64;
    let mut exposure = 0.0f64;
    for u in competitor_rates {
        if !(u > &0.0) {
            return Err(ChainError::InvalidParameter(format!("rate {u} must be positive")));
        }
        prop_max = prop_max.max(omega / u);
        exposure += omega / u;
    }
    Ok((1.0 / lambda + prop_max) * (lambda * exposure).exp())
}

/// Derive the 64-bit hash target for the hash-PoW mode: a single hash
/// succeeds with probability `lambda / hash_rate`.
pub fn pow_target(lambda: f64, hash_rate: f64) -> Result<u64, ChainError> {
    if !(hash_rate > 0.0) || !hash_rate.is_finite() {
        return Err(ChainError::InvalidParameter(format!(
            "hash_rate={hash_rate} must be positive"
        )));
    }
    let p = lambda / hash_rate;
    if !(p > 0.0) || p > 1.0 {
        return Err(ChainError::InvalidParameter(format!(
            "lambda/hash_rate={p} must be in (0, 1]"
        )));
    }
    if p >= 1.0 {
        return Ok(u64::MAX);
    }
    Ok((p * 2f64.powi(64)) as u64)
}

fn grind_hash_pow<R: Rng>(
    lambda: f64,
    hash_rate: f64,
    rng: &mut R,
) -> Result<(f64, u64), ChainError> {
    let target = pow_target(lambda, hash_rate)?;
    let mut base = [0u8; 32];
    rng.fill_bytes(&mut base);
    let mut nonce: u64 = 0;
    loop {
        let mut hasher = Sha256::new();
        hasher.update(base);
        hasher.update(nonce.to_le_bytes());
        let digest: Digest32 = hasher.finalize().into();
        let head = u64::from_le_bytes(digest[..8].try_into().unwrap());
        if head < target {
            let attempts = nonce + 1;
            return Ok((attempts as f64 / hash_rate, nonce));
        }
        nonce = nonce.checked_add(1).ok_or_else(|| {
            ChainError::InvalidParameter("hash-PoW nonce space exhausted".into())
        })?;
    }
}

/// Run one mining race: sample the winner and its block time, then check
/// every competitor's fresh `Exp(lambda)` gap against its propagation delay
/// `omega / u_j`; on any fork the attempt's full cost is charged and the
/// race restarts with fresh samples.
pub fn run_mining_race<R: Rng>(
    miner_rates: &[f64],
    lambda: f64,
    omega: f64,
    rng: &mut R,
) -> Result<MiningOutcome, ChainError> {
    run_mining_race_with(MiningModel::Simulated, miner_rates, lambda, omega, rng)
}

/// [`run_mining_race`] with an explicit mining model.
pub fn run_mining_race_with<R: Rng>(
    model: MiningModel,
    miner_rates: &[f64],
    lambda: f64,
    omega: f64,
    rng: &mut R,
) -> Result<MiningOutcome, ChainError> {
    check_race_params(lambda, omega)?;
    let m = miner_rates.len();
    if m == 0 {
        return Err(ChainError::InvalidParameter("need at least one miner".into()));
    }
    for u in miner_rates {
        if !(u > &0.0) {
            return Err(ChainError::InvalidParameter(format!("rate {u} must be positive")));
        }
    }
    let gap_dist = Exp::new(lambda).expect("positive lambda");
    let mut attempts = 0u32;
    let mut elapsed = 0.0f64;
    let mut attempt_times = Vec::new();
    loop {
        attempts += 1;
        let winner = rng.random_range(0..m);
        let (mine_time, nonce) = match model {
            MiningModel::Simulated => (sample_mining_time(lambda, rng)?, rng.random::<u64>()),
            MiningModel::HashPow { hash_rate } => grind_hash_pow(lambda, hash_rate, rng)?,
        };
        let mut prop_max = 0.0f64;
        let mut forked = false;
        for (j, u) in miner_rates.iter().enumerate() {
            if j == winner {
                continue;
            }
            let threshold = omega / u;
            prop_max = prop_max.max(threshold);
            let gap = gap_dist.sample(rng);
            if threshold > 0.0 && gap <= threshold {
                forked = true;
            }
        }
        let attempt_time = mine_time + prop_max;
        elapsed += attempt_time;
        attempt_times.push(attempt_time);
        if !forked {
            return Ok(MiningOutcome {
                winner: winner as u32,
                attempts,
                elapsed,
                attempt_times,
                nonce,
            });
        }
    }
}

/// A mined block: header fields plus the round's model updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest32,
    pub round: u32,
    pub winner: u32,
    pub nonce: u64,
    /// Simulated seconds at which the block was committed.
    pub timestamp: f64,
    /// Updates sorted by client id; fewer than N entries only when clients
    /// dropped out that round.
    pub updates: Vec<SparseUpdate>,
    /// SHA-256 of the post-round global model.
    pub model_digest: Digest32,
}

impl Block {
    fn encode_payload(&self, s: u32) -> Result<Vec<u8>, ChainError> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.winner.to_le_bytes());
        out.extend_from_slice(&self.nonce.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&(self.updates.len() as u32).to_le_bytes());
        for u in &self.updates {
            out.extend_from_slice(&encode_update(u, s)?);
        }
        out.extend_from_slice(&self.model_digest);
        Ok(out)
    }

    /// Hash of the encoded block payload.
    pub fn hash(&self, s: u32) -> Result<Digest32, ChainError> {
        Ok(sha256(&self.encode_payload(s)?))
    }
}

pub fn sha256(bytes: &[u8]) -> Digest32 {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

/// Digest of a model snapshot (little-endian f64 image).
pub fn model_digest(w: &ParamVector) -> Digest32 {
    sha256(&w.to_le_bytes())
}

/// Apply one block's updates: `w_prev + (1/N) * sum of densified updates`,
/// summed in stored (client-id) order. Shared by live aggregation and
/// ledger replay so the two paths are bit-identical.
pub fn apply_updates(w_prev: &ParamVector, updates: &[SparseUpdate], n_clients: usize) -> ParamVector {
    let mut acc = vec![0.0f64; w_prev.len()];
    for u in updates {
        for &(i, v) in &u.entries {
            acc[i as usize] += v;
        }
    }
    let n = n_clients as f64;
    let mut out = w_prev.clone();
    for (w, a) in out.as_mut_slice().iter_mut().zip(&acc) {
        *w += a / n;
    }
    out
}

const LEDGER_MAGIC: &[u8; 8] = b"FCLEDGER";
const LEDGER_VERSION: u32 = 1;

/// The hash-linked ledger: genesis model plus one block per round.
#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    pub s: u32,
    pub d: u32,
    pub n_clients: u32,
    pub initial_model: ParamVector,
    pub blocks: Vec<Block>,
}

impl Ledger {
    pub fn new(initial_model: ParamVector, n_clients: usize, s: u32) -> Self {
        Ledger {
            s,
            d: initial_model.len() as u32,
            n_clients: n_clients as u32,
            initial_model,
            blocks: Vec::new(),
        }
    }

    fn genesis_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.initial_model.len() * 8);
        out.extend_from_slice(LEDGER_MAGIC);
        out.extend_from_slice(&LEDGER_VERSION.to_le_bytes());
        out.extend_from_slice(&self.s.to_le_bytes());
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend_from_slice(&self.n_clients.to_le_bytes());
        out.extend_from_slice(&self.initial_model.to_le_bytes());
        out
    }

    pub fn genesis_hash(&self) -> Digest32 {
        sha256(&self.genesis_bytes())
    }

    /// Hash of the last block (or the genesis record when empty).
    pub fn tip_hash(&self) -> Result<Digest32, ChainError> {
        match self.blocks.last() {
            None => Ok(self.genesis_hash()),
            Some(b) => b.hash(self.s),
        }
    }

    /// Append a block for `round`, computing the link hash and model digest.
    #[allow(clippy::too_many_arguments)]
    pub fn append_block(
        &mut self,
        round: u32,
        winner: u32,
        nonce: u64,
        timestamp: f64,
        updates: Vec<SparseUpdate>,
        new_model: &ParamVector,
    ) -> Result<&Block, ChainError> {
        let block = Block {
            height: self.blocks.len() as u64 + 1,
            prev_hash: self.tip_hash()?,
            round,
            winner,
            nonce,
            timestamp,
            updates,
            model_digest: model_digest(new_model),
        };
        self.blocks.push(block);
        Ok(self.blocks.last().unwrap())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ChainError> {
        let mut out = self.genesis_bytes();
        out.extend_from_slice(&self.genesis_hash());
        for b in &self.blocks {
            let payload = b.encode_payload(self.s)?;
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&payload);
            out.extend_from_slice(&sha256(&payload));
        }
        Ok(out)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), ChainError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChainError> {
        let need = |height: u64, have: usize, want: usize, what: &str| -> Result<(), ChainError> {
            if have < want {
                return Err(ChainError::Malformed {
                    height,
                    msg: format!("truncated {what}: need {want} bytes, have {have}"),
                });
            }
            Ok(())
        };
        need(0, bytes.len(), 24, "ledger header")?;
        if &bytes[..8] != LEDGER_MAGIC {
            return Err(ChainError::Malformed {
                height: 0,
                msg: "bad magic".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != LEDGER_VERSION {
            return Err(ChainError::Malformed {
                height: 0,
                msg: format!("unsupported version {version}"),
            });
        }
        let s = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let n_clients = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
        let w_len = d as usize * 8;
        need(0, bytes.len(), 24 + w_len + 32, "genesis record")?;
        let mut w0 = Vec::with_capacity(d as usize);
        for chunk in bytes[24..24 + w_len].chunks_exact(8) {
            w0.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let mut ledger = Ledger {
            s,
            d,
            n_clients,
            initial_model: ParamVector::from_vec(w0),
            blocks: Vec::new(),
        };
        let mut off = 24 + w_len;
        let stored_genesis: Digest32 = bytes[off..off + 32].try_into().unwrap();
        if stored_genesis != ledger.genesis_hash() {
            return Err(ChainError::Verify {
                height: 0,
                field: "genesis_hash",
            });
        }
        off += 32;
        let mut height: u64 = 0;
        while off < bytes.len() {
            height += 1;
            need(height, bytes.len() - off, 4, "block length")?;
            let len = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
            off += 4;
            need(height, bytes.len() - off, len + 32, "block")?;
            let payload = &bytes[off..off + len];
            let stored_hash: Digest32 = bytes[off + len..off + len + 32].try_into().unwrap();
            if sha256(payload) != stored_hash {
                return Err(ChainError::Verify {
                    height,
                    field: "block_hash",
                });
            }
            let block = decode_block_payload(payload, s, height)?;
            ledger.blocks.push(block);
            off += len + 32;
        }
        Ok(ledger)
    }

    pub fn read(path: &std::path::Path) -> Result<Self, ChainError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Full audit: recompute hashes and links, then replay aggregation from
    /// genesis and compare every recorded model digest. Returns the replayed
    /// final model.
    pub fn verify(&self) -> Result<ParamVector, ChainError> {
        let mut prev = self.genesis_hash();
        let mut w = self.initial_model.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            let height = i as u64 + 1;
            if b.height != height {
                return Err(ChainError::Verify {
                    height,
                    field: "height",
                });
            }
            if b.prev_hash != prev {
                return Err(ChainError::Verify {
                    height,
                    field: "prev_hash",
                });
            }
            let mut last_client: Option<u32> = None;
            for u in &b.updates {
                if u.d != self.d || u.validate().is_err() {
                    return Err(ChainError::Verify {
                        height,
                        field: "updates",
                    });
                }
                if let Some(prev_id) = last_client {
                    if u.client_id <= prev_id {
                        return Err(ChainError::Verify {
                            height,
                            field: "updates",
                        });
                    }
                }
                last_client = Some(u.client_id);
            }
            w = apply_updates(&w, &b.updates, self.n_clients as usize);
            if model_digest(&w) != b.model_digest {
                return Err(ChainError::Verify {
                    height,
                    field: "model_digest",
                });
            }
            prev = b.hash(self.s)?;
        }
        Ok(w)
    }
}

fn decode_block_payload(payload: &[u8], s: u32, height: u64) -> Result<Block, ChainError> {
    let err = |msg: &str| ChainError::Malformed {
        height,
        msg: msg.into(),
    };
    if payload.len() < 8 + 32 + 4 + 4 + 8 + 8 + 4 + 32 {
        return Err(err("payload too short"));
    }
    let mut off = 0;
    let stored_height = u64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
    off += 8;
    let prev_hash: Digest32 = payload[off..off + 32].try_into().unwrap();
    off += 32;
    let round = u32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
    off += 4;
    let winner = u32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
    off += 4;
    let nonce = u64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
    off += 8;
    let timestamp = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
    off += 8;
    let n_updates = u32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
    off += 4;
    let mut updates = Vec::with_capacity(n_updates as usize);
    for _ in 0..n_updates {
        let (u, used) = decode_update(&payload[off..payload.len() - 32], s).map_err(|e| {
            ChainError::Malformed {
                height,
                msg: format!("bad update: {e}"),
            }
        })?;
        updates.push(u);
        off += used;
    }
    if payload.len() - off != 32 {
        return Err(err("trailing bytes after model digest"));
    }
    let model_digest: Digest32 = payload[off..off + 32].try_into().unwrap();
    Ok(Block {
        height: stored_height,
        prev_hash,
        round,
        winner,
        nonce,
        timestamp,
        updates,
        model_digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::top_k;

    #[test]
    fn mining_time_is_exponential_with_mean_one_over_lambda() {
        let mut rng = crate::rngstream::derive_rng(3, "chain/mine");
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let t = sample_mining_time(0.4, &mut rng).unwrap();
            assert!(t > 0.0);
            sum += t;
        }
        let mean = sum / n as f64;
        let tol = 3.0 * 2.5 / (n as f64).sqrt(); // sigma = mean for exponential
        assert!((mean - 2.5).abs() < tol, "mean {mean}");
        assert!(sample_mining_time(0.0, &mut rng).is_err());
    }

    #[test]
    fn mining_draws_are_deterministic_per_seed() {
        let mut a = crate::rngstream::derive_rng(9, "chain/det");
        let mut b = crate::rngstream::derive_rng(9, "chain/det");
        for _ in 0..10 {
            assert_eq!(
                sample_mining_time(1.3, &mut a).unwrap(),
                sample_mining_time(1.3, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn fork_probability_closed_form() {
        // one competitor, lambda=0.4, Omega/u = 0.5 -> 1 - e^{-0.2}
        let p = fork_probability(0.4, 0.5, &[1.0]).unwrap();
        assert!((p - (1.0 - (-0.2f64).exp())).abs() < 1e-15);
        assert!((p - 0.18127).abs() < 1e-5);
        // no competitors
        assert_eq!(fork_probability(0.4, 0.5, &[]).unwrap(), 0.0);
        // lambda -> 0 limit
        assert!(fork_probability(1e-12, 0.5, &[1.0]).unwrap() < 1e-10);
    }

    #[test]
    fn expected_step4_closed_form() {
        let t = expected_step4_time(0.4, 0.5, &[1.0]).unwrap();
        assert!((t - 3.0 * 0.2f64.exp()).abs() < 1e-12);
        assert!((t - 3.6642).abs() < 1e-4);
        // Omega = 0 -> exactly 1/lambda
        assert_eq!(expected_step4_time(0.4, 0.0, &[1.0, 2.0]).unwrap(), 2.5);
        // nondecreasing in Omega
        let mut prev = 0.0;
        for i in 0..50 {
            let omega = i as f64 * 0.1;
            let t = expected_step4_time(0.7, omega, &[1.0, 2.0, 0.5]).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn race_with_single_miner_never_forks() {
        let mut rng = crate::rngstream::derive_rng(4, "chain/single");
        for _ in 0..100 {
            let out = run_mining_race(&[1e6], 0.5, 1e9, &mut rng).unwrap();
            assert_eq!(out.attempts, 1);
            assert_eq!(out.winner, 0);
            assert!(out.elapsed > 0.0);
        }
    }

    #[test]
    fn race_with_zero_payload_never_forks() {
        let mut rng = crate::rngstream::derive_rng(5, "chain/zero");
        for _ in 0..100 {
            let out = run_mining_race(&[1.0, 1.0, 1.0], 2.0, 0.0, &mut rng).unwrap();
            assert_eq!(out.attempts, 1);
        }
    }

    #[test]
    fn race_statistics_match_closed_forms() {
        // lambda=0.8, Omega/u=0.3 for 2 competitors
        let rates = [1.0, 1.0, 1.0];
        let lambda = 0.8;
        let omega = 0.3;
        let p = fork_probability(lambda, omega, &rates[..2]).unwrap();
        let races = 50_000;
        let mut rng = crate::rngstream::derive_rng(6, "chain/stats");
        let mut attempts_sum = 0.0f64;
        let mut first_attempt_forks = 0usize;
        for _ in 0..races {
            let out = run_mining_race(&rates, lambda, omega, &mut rng).unwrap();
            attempts_sum += out.attempts as f64;
            if out.attempts > 1 {
                first_attempt_forks += 1;
            }
        }
        let n = races as f64;
        // fraction of races whose first attempt forked is a binomial sample of p
        let p_hat = first_attempt_forks as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((p_hat - p).abs() < 3.0 * se, "p_hat {p_hat} vs {p}");
        // attempts are geometric with mean 1/(1-p)
        let mean = attempts_sum / n;
        let gmean = 1.0 / (1.0 - p);
        let gsd = p.sqrt() / (1.0 - p);
        assert!(
            (mean - gmean).abs() < 3.0 * gsd / n.sqrt(),
            "attempts mean {mean} vs {gmean}"
        );
    }

    #[test]
    fn winner_is_uniform_under_equal_speeds() {
        let rates = [2.0, 2.0, 2.0, 2.0, 2.0];
        let mut rng = crate::rngstream::derive_rng(7, "chain/winner");
        let races = 100_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..races {
            let out = run_mining_race(&rates, 1.0, 0.05, &mut rng).unwrap();
            counts[out.winner as usize] += 1;
        }
        let expected = races as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi-square critical value, 4 degrees of freedom, 1% level
        assert!(chi2 < 13.2767, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn step4_monte_carlo_mean_tracks_expected_time() {
        // expected value (cost independent of the fork indicator) equals
        // the closed form when all competitors share one rate
        let rates = vec![1.0; 6];
        let lambda = 0.5;
        let omega = 0.12; // p_fork ~ 0.26
        let expected = expected_step4_time(lambda, omega, &rates[..5]).unwrap();
        let mut rng = crate::rngstream::derive_rng(8, "chain/mc-step4");
        let races = 10_000;
        let mut sum = 0.0;
        for _ in 0..races {
            sum += run_mining_race(&rates, lambda, omega, &mut rng).unwrap().elapsed;
        }
        let mean = sum / races as f64;
        assert!(
            (mean - expected).abs() / expected < 0.05,
            "mean {mean} vs expected {expected}"
        );
    }

    #[test]
    fn hash_pow_finds_nonces_with_expected_rate() {
        let mut rng = crate::rngstream::derive_rng(9, "chain/pow");
        // succeed with probability 1/16 per hash: expected 16 hashes
        let lambda = 2.0;
        let hash_rate = 32.0;
        let races = 2000;
        let mut sum = 0.0;
        for _ in 0..races {
            let out = run_mining_race_with(
                MiningModel::HashPow { hash_rate },
                &[1.0],
                lambda,
                0.0,
                &mut rng,
            )
            .unwrap();
            sum += out.elapsed;
        }
        let mean = sum / races as f64;
        // geometric with p = lambda/hash_rate: mean time = 1/lambda, sd ~ mean
        assert!(
            (mean - 0.5).abs() < 3.0 * 0.5 / (races as f64).sqrt(),
            "mean {mean}"
        );
        assert!(pow_target(1.0, 1.0).is_ok());
        assert!(pow_target(2.0, 1.0).is_err());
    }

    fn toy_ledger() -> (Ledger, ParamVector) {
        let w0 = ParamVector::from_vec(vec![0.5, -1.0, 2.0, 0.0, 0.25]);
        let mut ledger = Ledger::new(w0.clone(), 2, 8);
        let mut w = w0;
        for round in 1..=4u32 {
            let mut updates = Vec::new();
            for client in 0..2u32 {
                let g = ParamVector::from_vec(vec![
                    0.1 * round as f64,
                    -0.2,
                    0.05 * client as f64,
                    0.0,
                    0.3,
                ]);
                let mut u = top_k(&g, 3).unwrap();
                u.round = round;
                u.client_id = client;
                updates.push(u);
            }
            w = apply_updates(&w, &updates, 2);
            ledger
                .append_block(round, round % 2, round as u64 * 17, round as f64, updates, &w)
                .unwrap();
        }
        (ledger, w)
    }

    #[test]
    fn untouched_ledger_verifies_and_replays() {
        let (ledger, final_model) = toy_ledger();
        let replayed = ledger.verify().unwrap();
        assert_eq!(replayed, final_model);
        // file round-trip preserves everything
        let bytes = ledger.to_bytes().unwrap();
        let back = Ledger::from_bytes(&bytes).unwrap();
        assert_eq!(back, ledger);
        assert_eq!(back.verify().unwrap(), final_model);
    }

    #[test]
    fn tampering_with_block_updates_is_detected_at_its_height() {
        let (ledger, _) = toy_ledger();
        let bytes = ledger.to_bytes().unwrap();
        // locate block 3's first update value and flip one byte
        let mut corrupted = bytes.clone();
        // genesis: 24 + 5*8 + 32 = 96; each block: 4 + payload + 32
        let payload_len = ledger.blocks[0].encode_payload(8).unwrap().len();
        let block_stride = 4 + payload_len + 32;
        let block3_payload = 96 + 2 * block_stride + 4;
        corrupted[block3_payload + 8 + 32 + 4 + 4 + 8 + 8 + 4 + 5] ^= 0xff;
        match Ledger::from_bytes(&corrupted) {
            Err(ChainError::Verify { height: 3, .. }) | Err(ChainError::Malformed { height: 3, .. }) => {}
            other => panic!("expected failure at height 3, got {other:?}"),
        }
    }

    #[test]
    fn truncated_ledger_reports_height() {
        let (ledger, _) = toy_ledger();
        let bytes = ledger.to_bytes().unwrap();
        match Ledger::from_bytes(&bytes[..bytes.len() - 7]) {
            Err(ChainError::Malformed { height: 4, .. }) => {}
            other => panic!("expected truncation at height 4, got {other:?}"),
        }
    }

    #[test]
    fn relinked_blocks_fail_verification() {
        let (mut ledger, _) = toy_ledger();
        ledger.blocks[1].prev_hash = [0u8; 32];
        match ledger.verify() {
            Err(ChainError::Verify { height: 2, field }) => assert_eq!(field, "prev_hash"),
            other => panic!("unexpected {other:?}"),
        }
        let (mut ledger, _) = toy_ledger();
        ledger.blocks[2].model_digest = [1u8; 32];
        match ledger.verify() {
            Err(ChainError::Verify { height: 3, field }) => assert_eq!(field, "model_digest"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
