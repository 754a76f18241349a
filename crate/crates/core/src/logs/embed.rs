use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::drain::{TemplateKey, TemplateStore};
use super::normalize::normalize_tokens;
use crate::obs::LogStream;

pub const MIN_LOG_DIM: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Bucket and sign for a token: index is the hash modulo `dim`, the sign is
/// taken from the top bit.
pub fn token_slot(token: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a64(token.as_bytes());
    let index = (h % dim as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (index, sign)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceVector(pub Vec<f64>);

impl SentenceVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogChannelVector {
    pub channel: LogStream,
    pub values: Vec<f64>,
}

/// Signed feature-hashing sentence embedding, L2-normalized.
///
/// Order-insensitive; an empty token list gives the zero vector.
pub fn embed_sentence<S: AsRef<str>>(tokens: &[S], d_log: usize) -> SentenceVector {
    assert!(d_log >= MIN_LOG_DIM, "log embedding dimension must be >= {MIN_LOG_DIM}");
    let mut v = vec![0.0; d_log];
    for token in tokens {
        let (i, sign) = token_slot(token.as_ref(), d_log);
        v[i] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    SentenceVector(v)
}

/// Embed one node's log sequence for a single channel: dedup by template,
/// embed each template's normalized tokens, then sum-pool. Templates are
/// summed in key order so the result does not depend on record order.
pub fn embed_log_sequence<'a, I>(
    messages: I,
    channel: LogStream,
    d_log: usize,
    store: &TemplateStore,
) -> LogChannelVector
where
    I: IntoIterator<Item = &'a str>,
{
    let mut unique: BTreeMap<TemplateKey, Vec<String>> = BTreeMap::new();
    for message in messages {
        let (key, tokens) = store.resolve(message);
        unique.entry(key).or_insert(tokens);
    }
    let mut values = vec![0.0; d_log];
    for tokens in unique.values() {
        let sentence = embed_sentence(&normalize_tokens(tokens), d_log);
        for (acc, x) in values.iter_mut().zip(&sentence.0) {
            *acc += x;
        }
    }
    LogChannelVector { channel, values }
}
