//! Bit-packed on-disk cache of sparse teacher targets (format version 1).
//!
//! ```text
//! header (23 bytes, little-endian)
//!   magic          4  "SKDC"
//!   version        u16
//!   vocab_size     u32   <= 2^17
//!   scheme_id      u8    1 = Top-K linear, 2 = Top-K ratio, 3 = random-sampling counts
//!   param          u32   K, or sampling rounds N (<= 127) for scheme 3
//!   position_count u64
//! per position
//!   entry_count    u8    >= 1
//!   anchor         u16   scheme 2 only: largest probability as value / 65535
//!   records        entry_count x 3 bytes
//! record (24-bit little-endian)
//!   bits 0..17     token id
//!   bits 17..24    7-bit payload
//! ```
//!
//! Payloads by scheme, with records sorted by descending probability and
//! ascending token id on ties:
//!
//! 1. `floor(p · 128)` clamped to `[0, 127]`; decoded as the interval midpoint.
//! 2. The first payload is 127 and the anchor carries the absolute value.
//!    Each later payload is `round(127 · p_i / p̂_{i−1})`, where `p̂_{i−1}` is
//!    the *decoded* predecessor, so rounding errors do not compound.
//! 3. The numerator `x` of a weight `x / N`, stored exactly.
//!
//! Schemes 1 and 2 are renormalized to unit mass on decode; scheme 3
//! round-trips bit-exactly.

use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::sparsify::{Scheme, SparseTarget};

pub const MAGIC: [u8; 4] = *b"SKDC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 23;
pub const TOKEN_BITS: u32 = 17;
pub const PAYLOAD_BITS: u32 = 7;
pub const MAX_VOCAB: usize = 1 << TOKEN_BITS;
pub const MAX_PAYLOAD: u8 = (1 << PAYLOAD_BITS) - 1;
pub const MAX_ENTRIES: usize = u8::MAX as usize;
pub const RECORD_LEN: usize = 3;
const ANCHOR_SCALE: f64 = u16::MAX as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CacheScheme {
    TopKLinear = 1,
    TopKRatio = 2,
    RandomSamplingCounts = 3,
}

impl CacheScheme {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(CacheScheme::TopKLinear),
            2 => Ok(CacheScheme::TopKRatio),
            3 => Ok(CacheScheme::RandomSamplingCounts),
            other => Err(Error::UnsupportedVersion(format!("unknown scheme id {other}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "topk-linear" | "1" => Ok(CacheScheme::TopKLinear),
            "topk-ratio" | "2" => Ok(CacheScheme::TopKRatio),
            "rs-counts" | "3" => Ok(CacheScheme::RandomSamplingCounts),
            other => Err(invalid(format!("unknown cache scheme '{other}'"))),
        }
    }

    fn anchor_len(self) -> usize {
        if self == CacheScheme::TopKRatio {
            2
        } else {
            0
        }
    }

    /// Target scheme reported for decoded positions.
    fn decoded_scheme(self, param: u32) -> Scheme {
        match self {
            CacheScheme::TopKLinear | CacheScheme::TopKRatio => Scheme::TopK {
                k: param as usize,
                normalized: true,
            },
            CacheScheme::RandomSamplingCounts => Scheme::RandomSampling {
                rounds: param as usize,
                temperature: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub version: u16,
    pub vocab_size: u32,
    pub scheme: CacheScheme,
    pub param: u32,
    pub position_count: u64,
}

impl CacheHeader {
    pub fn new(scheme: CacheScheme, vocab_size: usize, param: u32, position_count: u64) -> Result<Self> {
        if vocab_size == 0 || vocab_size > MAX_VOCAB {
            return Err(invalid(format!(
                "vocab size {vocab_size} does not fit {TOKEN_BITS}-bit token ids"
            )));
        }
        if scheme == CacheScheme::RandomSamplingCounts && !(1..=MAX_PAYLOAD as u32).contains(&param) {
            return Err(invalid(format!(
                "count encoding needs 1 <= N <= {MAX_PAYLOAD}, got {param}; use ratio encoding for more rounds"
            )));
        }
        Ok(Self {
            version: VERSION,
            vocab_size: vocab_size as u32,
            scheme,
            param,
            position_count,
        })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..10].copy_from_slice(&self.vocab_size.to_le_bytes());
        out[10] = self.scheme.id();
        out[11..15].copy_from_slice(&self.param.to_le_bytes());
        out[15..23].copy_from_slice(&self.position_count.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(bytes.len(), "truncated header"));
        }
        if bytes[0..4] != MAGIC {
            return Err(corrupt(0, "bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(format!("format version {version}")));
        }
        let vocab_size = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
        let scheme = CacheScheme::from_id(bytes[10])?;
        let param = u32::from_le_bytes(bytes[11..15].try_into().expect("4 bytes"));
        let position_count = u64::from_le_bytes(bytes[15..23].try_into().expect("8 bytes"));
        if vocab_size == 0 || vocab_size as usize > MAX_VOCAB {
            return Err(corrupt(6, format!("vocab size {vocab_size} out of range")));
        }
        if scheme == CacheScheme::RandomSamplingCounts && !(1..=MAX_PAYLOAD as u32).contains(&param) {
            return Err(corrupt(11, format!("sampling rounds {param} out of range")));
        }
        Ok(Self {
            version,
            vocab_size,
            scheme,
            param,
            position_count,
        })
    }
}

/// One packed 24-bit `(token id, payload)` record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheRecord(u32);

impl CacheRecord {
    pub fn new(token_id: u32, payload: u8) -> Result<Self> {
        if token_id as usize >= MAX_VOCAB || payload > MAX_PAYLOAD {
            return Err(invalid(format!(
                "record ({token_id}, {payload}) does not fit 17 + 7 bits"
            )));
        }
        Ok(Self(token_id | (payload as u32) << TOKEN_BITS))
    }

    pub fn token_id(self) -> u32 {
        self.0 & ((1 << TOKEN_BITS) - 1)
    }

    pub fn payload(self) -> u8 {
        (self.0 >> TOKEN_BITS) as u8
    }

    pub fn to_bytes(self) -> [u8; RECORD_LEN] {
        let b = self.0.to_le_bytes();
        [b[0], b[1], b[2]]
    }

    pub fn from_bytes(b: [u8; RECORD_LEN]) -> Self {
        Self(u32::from_le_bytes([b[0], b[1], b[2], 0]))
    }
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        offset,
        reason: reason.into(),
    }
}

/// Exact encoded size for `entry_counts` positions.
pub fn encoded_len(scheme: CacheScheme, entry_counts: impl IntoIterator<Item = usize>) -> usize {
    HEADER_LEN
        + entry_counts
            .into_iter()
            .map(|n| 1 + scheme.anchor_len() + RECORD_LEN * n)
            .sum::<usize>()
}

/// Entries sorted by descending weight, ties by ascending id.
fn sorted_desc(target: &SparseTarget) -> Vec<(u32, f64)> {
    let mut e = target.entries().to_vec();
    e.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    e
}

fn linear_payload(p: f64) -> u8 {
    ((p * 128.0).floor() as i64).clamp(0, MAX_PAYLOAD as i64) as u8
}

fn count_payload(w: f64, rounds: u32, id: u32) -> Result<u8> {
    let scaled = w * rounds as f64;
    let x = scaled.round();
    if (scaled - x).abs() > 1e-9 || x < 1.0 || x > MAX_PAYLOAD as f64 {
        return Err(invalid(format!(
            "weight {w} of token {id} is not a multiple of 1/{rounds}"
        )));
    }
    Ok(x as u8)
}

/// Serializes targets under one cache scheme.
///
/// `param` is K for the Top-K schemes (informational) and the sampling
/// round count N for count encoding.
pub fn encode(
    targets: &[SparseTarget],
    scheme: CacheScheme,
    vocab_size: usize,
    param: u32,
) -> Result<Vec<u8>> {
    let header = CacheHeader::new(scheme, vocab_size, param, targets.len() as u64)?;
    let mut out = Vec::with_capacity(encoded_len(scheme, targets.iter().map(|t| t.len())));
    out.extend_from_slice(&header.to_bytes());
    for (pos, target) in targets.iter().enumerate() {
        if target.vocab_size() != vocab_size {
            return Err(invalid(format!(
                "position {pos}: vocab size {} differs from header {vocab_size}",
                target.vocab_size()
            )));
        }
        if target.is_empty() || target.len() > MAX_ENTRIES {
            return Err(invalid(format!(
                "position {pos}: {} entries, expected 1..={MAX_ENTRIES}",
                target.len()
            )));
        }
        let sorted = sorted_desc(target);
        out.push(sorted.len() as u8);
        let records: Vec<(u32, u8)> = match scheme {
            CacheScheme::TopKLinear => {
                let mut r: Vec<(u32, u8)> =
                    sorted.iter().map(|&(id, p)| (id, linear_payload(p))).collect();
                r.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                r
            }
            CacheScheme::TopKRatio => {
                let anchor = (sorted[0].1 * ANCHOR_SCALE).round().clamp(1.0, ANCHOR_SCALE) as u16;
                out.extend_from_slice(&anchor.to_le_bytes());
                let mut decoded = anchor as f64 / ANCHOR_SCALE;
                let mut r = vec![(sorted[0].0, MAX_PAYLOAD)];
                for &(id, p) in &sorted[1..] {
                    let q = (p / decoded * MAX_PAYLOAD as f64)
                        .round()
                        .clamp(1.0, MAX_PAYLOAD as f64) as u8;
                    decoded *= q as f64 / MAX_PAYLOAD as f64;
                    r.push((id, q));
                }
                r
            }
            CacheScheme::RandomSamplingCounts => {
                let mut r = sorted
                    .iter()
                    .map(|&(id, w)| Ok((id, count_payload(w, param, id)?)))
                    .collect::<Result<Vec<_>>>()?;
                r.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                r
            }
        };
        for (id, payload) in records {
            out.extend_from_slice(&CacheRecord::new(id, payload)?.to_bytes());
        }
    }
    Ok(out)
}

/// Parses a cache, returning its header and one target per position with
/// entries in ascending token order.
pub fn decode(bytes: &[u8]) -> Result<(CacheHeader, Vec<SparseTarget>)> {
    let header = CacheHeader::parse(bytes)?;
    let scheme = header.scheme;
    let vocab = header.vocab_size as usize;
    let target_scheme = scheme.decoded_scheme(header.param);
    // every position takes at least 4 bytes, which bounds the allocation
    let max_positions = (bytes.len() - HEADER_LEN) / (1 + RECORD_LEN);
    if header.position_count > max_positions as u64 {
        return Err(corrupt(
            bytes.len(),
            format!("header claims {} positions, stream too short", header.position_count),
        ));
    }
    let mut targets = Vec::with_capacity(header.position_count as usize);
    let mut at = HEADER_LEN;
    for pos in 0..header.position_count {
        let block_start = at;
        let n = *bytes
            .get(at)
            .ok_or_else(|| corrupt(at, format!("truncated before position {pos}")))? as usize;
        if n == 0 {
            return Err(corrupt(at, "position with zero entries"));
        }
        at += 1;
        let need = scheme.anchor_len() + RECORD_LEN * n;
        if bytes.len() < at + need {
            return Err(corrupt(bytes.len(), format!("truncated inside position {pos}")));
        }
        let anchor = if scheme == CacheScheme::TopKRatio {
            let a = u16::from_le_bytes([bytes[at], bytes[at + 1]]);
            if a == 0 {
                return Err(corrupt(at, "zero anchor probability"));
            }
            at += 2;
            a
        } else {
            0
        };
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let r = CacheRecord::from_bytes([bytes[at], bytes[at + 1], bytes[at + 2]]);
            if r.token_id() as usize >= vocab {
                return Err(corrupt(at, format!("token id {} outside vocabulary", r.token_id())));
            }
            if scheme != CacheScheme::TopKLinear && r.payload() == 0 {
                return Err(corrupt(at, "zero payload"));
            }
            if scheme == CacheScheme::TopKRatio && i == 0 && r.payload() != MAX_PAYLOAD {
                return Err(corrupt(at, "first ratio record must carry payload 127"));
            }
            if scheme != CacheScheme::TopKRatio {
                if let Some(prev) = records.last().map(|p: &CacheRecord| *p) {
                    let ordered = prev.payload() > r.payload()
                        || (prev.payload() == r.payload() && prev.token_id() < r.token_id());
                    if !ordered {
                        return Err(corrupt(at, "records out of order"));
                    }
                }
            }
            records.push(r);
            at += RECORD_LEN;
        }
        let mut entries: Vec<(u32, f64)> = match scheme {
            CacheScheme::TopKLinear => {
                let raw: Vec<f64> = records.iter().map(|r| (r.payload() as f64 + 0.5) / 128.0).collect();
                let total: f64 = raw.iter().sum();
                records.iter().zip(raw).map(|(r, v)| (r.token_id(), v / total)).collect()
            }
            CacheScheme::TopKRatio => {
                let mut log_v = (anchor as f64 / ANCHOR_SCALE).ln();
                let logs: Vec<f64> = records
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        if i > 0 {
                            log_v += (r.payload() as f64 / MAX_PAYLOAD as f64).ln();
                        }
                        log_v
                    })
                    .collect();
                let max = logs[0];
                let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
                records
                    .iter()
                    .zip(logs)
                    .map(|(r, l)| (r.token_id(), ((l - max).exp() / total).max(f64::MIN_POSITIVE)))
                    .collect()
            }
            CacheScheme::RandomSamplingCounts => {
                let rounds = header.param as f64;
                records
                    .iter()
                    .map(|r| (r.token_id(), r.payload() as f64 / rounds))
                    .collect()
            }
        };
        entries.sort_unstable_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(corrupt(block_start, format!("duplicate token id in position {pos}")));
        }
        let target = SparseTarget::new(vocab, target_scheme, entries)
            .map_err(|e| corrupt(block_start, format!("position {pos}: {e}")))?;
        targets.push(target);
    }
    if at != bytes.len() {
        return Err(corrupt(at, format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok((header, targets))
}

pub fn write_cache(
    path: impl AsRef<Path>,
    targets: &[SparseTarget],
    scheme: CacheScheme,
    vocab_size: usize,
    param: u32,
) -> Result<()> {
    std::fs::write(path, encode(targets, scheme, vocab_size, param)?)?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<(CacheHeader, Vec<SparseTarget>)> {
    decode(&std::fs::read(path)?)
}
