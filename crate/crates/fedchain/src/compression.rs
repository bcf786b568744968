//! Top-k update compression, payload sizing, and the sparse wire format.
//!
//! The operator keeps exactly `k` entries of largest magnitude (ties broken
//! toward lower indices, so payload sizing stays honest even on degenerate
//! vectors) and satisfies the per-instance energy bound
//! `||g - top_k(g)||^2 <= (1 - k/d) ||g||^2`.
//!
//! Two byte counts coexist deliberately: the analytic model uses the
//! fractional `omega = s + ceil(log2 d)/8` bytes per entry that the
//! round-time function is built on, while the wire encoder rounds the index
//! field up to whole bytes. Both are exposed.

use thiserror::Error;

use crate::learning::ParamVector;

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error("k={k} out of range for dimension d={d}")]
    KOutOfRange { k: usize, d: usize },
    #[error("dimension mismatch: vector has d={vector_d}, update has d={update_d}")]
    DimensionMismatch { vector_d: usize, update_d: usize },
    #[error("unsupported value width s={0} bytes (wire format supports 4 or 8)")]
    UnsupportedValueWidth(u32),
    #[error("malformed sparse update: {0}")]
    Malformed(String),
}

/// The `k` surviving entries of a compressed update, plus round metadata.
///
/// Indices are strictly increasing and below `d`; there are always exactly
/// `min(k, d)` entries, padding with zero-valued coordinates only when the
/// raw vector had fewer than `k` non-zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub round: u32,
    pub client_id: u32,
    pub d: u32,
    pub entries: Vec<(u32, f64)>,
}

impl SparseUpdate {
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    /// Expand to a dense vector of length `d` with zeros elsewhere.
    pub fn densify(&self) -> ParamVector {
        let mut dense = ParamVector::zeros(self.d as usize);
        for &(i, v) in &self.entries {
            dense[i as usize] = v;
        }
        dense
    }

    pub fn validate(&self) -> Result<(), CompressionError> {
        let mut prev: Option<u32> = None;
        for &(i, v) in &self.entries {
            if i >= self.d {
                return Err(CompressionError::Malformed(format!(
                    "index {i} out of range for d={}",
                    self.d
                )));
            }
            if let Some(p) = prev {
                if i <= p {
                    return Err(CompressionError::Malformed(format!(
                        "indices not strictly increasing at {i}"
                    )));
                }
            }
            if !v.is_finite() {
                return Err(CompressionError::Malformed(format!(
                    "non-finite value at index {i}"
                )));
            }
            prev = Some(i);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionKind {
    TopK,
}

/// A compression operator together with its declared energy constant
/// `gamma`: the operator guarantees `E||x - C(x)||^2 <= (1-gamma) ||x||^2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompressionSpec {
    pub kind: CompressionKind,
    pub k: usize,
    pub gamma: f64,
}

impl CompressionSpec {
    pub fn top_k(k: usize, d: usize) -> Result<Self, CompressionError> {
        if k == 0 || k > d {
            return Err(CompressionError::KOutOfRange { k, d });
        }
        Ok(CompressionSpec {
            kind: CompressionKind::TopK,
            k,
            gamma: k as f64 / d as f64,
        })
    }
}

/// Pluggable compression operator contract. Top-k is the one shipped; other
/// operators can declare their own `gamma` without touching the protocol.
pub trait CompressionOp {
    fn compress(&self, g: &ParamVector) -> Result<SparseUpdate, CompressionError>;
    fn gamma(&self, d: usize) -> f64;
}

/// The top-k sparsifier.
#[derive(Debug, Clone, Copy)]
pub struct TopK {
    pub k: usize,
}

impl CompressionOp for TopK {
    fn compress(&self, g: &ParamVector) -> Result<SparseUpdate, CompressionError> {
        top_k(g, self.k)
    }

    fn gamma(&self, d: usize) -> f64 {
        self.k as f64 / d as f64
    }
}

/// Keep exactly the `k` entries of `g` with largest absolute value.
///
/// At equal magnitudes the lower index survives, which keeps the operator
/// deterministic and the entry count exact.
pub fn top_k(g: &ParamVector, k: usize) -> Result<SparseUpdate, CompressionError> {
    let d = g.len();
    if k == 0 || k > d {
        return Err(CompressionError::KOutOfRange { k, d });
    }
    let values = g.as_slice();
    let mut order: Vec<u32> = (0..d as u32).collect();
    let by_magnitude = |&a: &u32, &b: &u32| {
        let ma = values[a as usize].abs();
        let mb = values[b as usize].abs();
        mb.partial_cmp(&ma)
            .expect("non-finite magnitude in top_k")
            .then(a.cmp(&b))
    };
    if k < d {
        order.select_nth_unstable_by(k - 1, by_magnitude);
        order.truncate(k);
    }
    order.sort_unstable();
    let entries = order
        .into_iter()
        .map(|i| (i, values[i as usize]))
        .collect();
    Ok(SparseUpdate {
        round: 0,
        client_id: 0,
        d: d as u32,
        entries,
    })
}

/// Evaluate both sides of the compression energy bound for `u = top_k(g, k)`.
///
/// Returns `(||g - densify(u)||^2, (1 - k/d) ||g||^2)`; the first never
/// exceeds the second for top-k.
pub fn compression_energy_check(
    g: &ParamVector,
    u: &SparseUpdate,
) -> Result<(f64, f64), CompressionError> {
    if g.len() != u.d as usize {
        return Err(CompressionError::DimensionMismatch {
            vector_d: g.len(),
            update_d: u.d as usize,
        });
    }
    let dense = u.densify();
    let lhs: f64 = g
        .as_slice()
        .iter()
        .zip(dense.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let gamma = u.k() as f64 / u.d as f64;
    let bound = (1.0 - gamma) * g.norm_sq();
    Ok((lhs, bound))
}

/// Analytic bytes per compressed entry: `omega = s + ceil(log2 d)/8`.
///
/// Fractional by design; the wire encoder uses [`wire_index_bytes`] instead.
pub fn omega_bytes(d: usize, s: u32) -> f64 {
    s as f64 + index_bits(d) as f64 / 8.0
}

/// Bits needed to address a coordinate of a `d`-dimensional vector.
pub fn index_bits(d: usize) -> u32 {
    (d.max(1) as f64).log2().ceil() as u32
}

/// Whole bytes the wire format spends per index.
pub fn wire_index_bytes(d: usize) -> usize {
    index_bits(d).div_ceil(8) as usize
}

/// Analytic upload payload of one client: `k * omega` bytes.
pub fn payload_bytes(k: usize, d: usize, s: u32) -> f64 {
    k as f64 * omega_bytes(d, s)
}

/// Analytic block payload for `n` clients: `Omega = N * k * omega` bytes.
pub fn block_bytes(n_clients: usize, k: usize, d: usize, s: u32) -> f64 {
    n_clients as f64 * payload_bytes(k, d, s)
}

/// Dense traffic of an uncompressed update, values only: `d * s` bytes.
pub fn dense_bytes(d: usize, s: u32) -> f64 {
    d as f64 * s as f64
}

/// Round `v` to the value the wire format can carry at width `s`.
///
/// With `s = 4` this is the nearest IEEE-754 single; with `s = 8` it is the
/// identity. The rounding error is exactly representable in f64, which is
/// what keeps error-feedback conservation bit-exact downstream.
pub fn quantize_value(v: f64, s: u32) -> Result<f64, CompressionError> {
    match s {
        4 => Ok(v as f32 as f64),
        8 => Ok(v),
        other => Err(CompressionError::UnsupportedValueWidth(other)),
    }
}

/// Quantize all entry values of `u` to wire width `s`.
pub fn quantize_update(u: &SparseUpdate, s: u32) -> Result<SparseUpdate, CompressionError> {
    let entries = u
        .entries
        .iter()
        .map(|&(i, v)| Ok((i, quantize_value(v, s)?)))
        .collect::<Result<Vec<_>, CompressionError>>()?;
    Ok(SparseUpdate {
        entries,
        ..u.clone()
    })
}

/// Exact byte length of one encoded update.
pub fn wire_len(k: usize, d: usize, s: u32) -> usize {
    16 + k * (wire_index_bytes(d) + s as usize)
}

/// Encode an update into the bit-exact wire format.
///
/// Layout (little-endian): header `round u32, client_id u32, d u32, k u32`,
/// then `k` indices of `wire_index_bytes(d)` bytes each, then `k` IEEE-754
/// values of `s` bytes each.
pub fn encode_update(u: &SparseUpdate, s: u32) -> Result<Vec<u8>, CompressionError> {
    if s != 4 && s != 8 {
        return Err(CompressionError::UnsupportedValueWidth(s));
    }
    u.validate()?;
    let idx_bytes = wire_index_bytes(u.d as usize);
    let mut out = Vec::with_capacity(wire_len(u.k(), u.d as usize, s));
    out.extend_from_slice(&u.round.to_le_bytes());
    out.extend_from_slice(&u.client_id.to_le_bytes());
    out.extend_from_slice(&u.d.to_le_bytes());
    out.extend_from_slice(&(u.k() as u32).to_le_bytes());
    for &(i, _) in &u.entries {
        out.extend_from_slice(&i.to_le_bytes()[..idx_bytes]);
    }
    for &(_, v) in &u.entries {
        match s {
            4 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            _ => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Decode one update from `bytes`; returns the update and the bytes consumed.
pub fn decode_update(bytes: &[u8], s: u32) -> Result<(SparseUpdate, usize), CompressionError> {
    if s != 4 && s != 8 {
        return Err(CompressionError::UnsupportedValueWidth(s));
    }
    if bytes.len() < 16 {
        return Err(CompressionError::Malformed("truncated header".into()));
    }
    let round = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let client_id = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let k = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if d == 0 || k == 0 || k > d as usize {
        return Err(CompressionError::Malformed(format!(
            "bad header: d={d}, k={k}"
        )));
    }
    let idx_bytes = wire_index_bytes(d as usize);
    let total = wire_len(k, d as usize, s);
    if bytes.len() < total {
        return Err(CompressionError::Malformed(format!(
            "truncated update: need {total} bytes, have {}",
            bytes.len()
        )));
    }
    let mut entries = Vec::with_capacity(k);
    let mut off = 16;
    for _ in 0..k {
        let mut raw = [0u8; 4];
        raw[..idx_bytes].copy_from_slice(&bytes[off..off + idx_bytes]);
        entries.push((u32::from_le_bytes(raw), 0.0));
        off += idx_bytes;
    }
    for entry in entries.iter_mut() {
        let v = match s {
            4 => f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64,
            _ => f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()),
        };
        entry.1 = v;
        off += s as usize;
    }
    let update = SparseUpdate {
        round,
        client_id,
        d,
        entries,
    };
    update.validate()?;
    Ok((update, off))
}
