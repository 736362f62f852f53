use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use xtask::Worker;

pub const DIGEST_BYTES: usize = 28;
pub const BUCKETS: usize = 16;
pub const MAX_K: u32 = 32;

/// One generated record: truncated digest followed by the little-endian nonce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(C)]
pub struct Record {
    pub digest: [u8; DIGEST_BYTES],
    pub nonce: [u8; 4],
}

impl Record {
    pub const ZERO: Record = Record {
        digest: [0; DIGEST_BYTES],
        nonce: [0; 4],
    };

    pub fn nonce(&self) -> u32 {
        u32::from_le_bytes(self.nonce)
    }

    pub fn bucket(&self) -> usize {
        (self.digest[0] >> 4) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HashKind {
    /// Four chained splitmix64 outputs; fast and non-cryptographic.
    #[default]
    SplitMix,
    Sha256,
}

impl HashKind {
    pub fn name(self) -> &'static str {
        match self {
            HashKind::SplitMix => "splitmix",
            HashKind::Sha256 => "sha256",
        }
    }

    pub fn digest(self, nonce: u32) -> [u8; 32] {
        match self {
            HashKind::SplitMix => {
                let mut out = [0u8; 32];
                let mut state = nonce as u64;
                for chunk in out.chunks_exact_mut(8) {
                    chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
                }
                out
            }
            HashKind::Sha256 => Sha256::digest(nonce.to_le_bytes()).into(),
        }
    }

    pub fn record(self, nonce: u32) -> Record {
        let full = self.digest(nonce);
        let mut digest = [0u8; DIGEST_BYTES];
        digest.copy_from_slice(&full[..DIGEST_BYTES]);
        Record {
            digest,
            nonce: nonce.to_le_bytes(),
        }
    }
}

impl fmt::Display for HashKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HashKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "splitmix" => Ok(HashKind::SplitMix),
            "sha256" => Ok(HashKind::Sha256),
            other => Err(format!(
                "unknown hash '{other}' (expected splitmix or sha256)"
            )),
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct HashOutcome {
    pub records: Vec<Record>,
    /// Records per bucket, one histogram per zone.
    pub histograms: Vec<[u64; BUCKETS]>,
    pub batch: usize,
    pub tasks: usize,
    pub elapsed: Duration,
}

impl HashOutcome {
    pub fn histogram(&self) -> [u64; BUCKETS] {
        let mut total = [0u64; BUCKETS];
        for h in &self.histograms {
            for (t, x) in total.iter_mut().zip(h) {
                *t += x;
            }
        }
        total
    }

    pub fn throughput(&self) -> f64 {
        self.records.len() as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }
}

/// Generates records for nonces `0..2^k`, `batch` per task. Each task counts
/// its records into the bucket histogram of the zone it ran on.
pub fn hashbucket(w: &Worker<'_>, k: u32, batch: usize, hash: HashKind) -> HashOutcome {
    assert!(k <= MAX_K, "k must be at most {MAX_K}");
    let n = 1usize << k;
    let batch = batch.clamp(1, n);
    let mut records = vec![Record::ZERO; n];
    let zones = w.config().zones;
    let hist: Vec<[AtomicU64; BUCKETS]> = (0..zones).map(|_| Default::default()).collect();
    let start = Instant::now();
    w.scope(|s| {
        for (i, chunk) in records.chunks_mut(batch).enumerate() {
            let hist = &hist;
            s.spawn(move |w| {
                let mut local = [0u64; BUCKETS];
                let base = i * batch;
                for (j, r) in chunk.iter_mut().enumerate() {
                    *r = hash.record((base + j) as u32);
                    local[r.bucket()] += 1;
                }
                for (b, &c) in hist[w.zone()].iter().zip(&local) {
                    if c > 0 {
                        b.fetch_add(c, Ordering::Relaxed);
                    }
                }
            });
        }
    });
    let elapsed = start.elapsed();
    HashOutcome {
        records,
        histograms: hist
            .iter()
            .map(|h| h.each_ref().map(|b| b.load(Ordering::Relaxed)))
            .collect(),
        batch,
        tasks: n.div_ceil(batch),
        elapsed,
    }
}

/// Recomputes every record serially; returns the first mismatch.
pub fn verify(outcome: &HashOutcome, hash: HashKind) -> Result<(), String> {
    let mut want = [0u64; BUCKETS];
    for (i, r) in outcome.records.iter().enumerate() {
        let expect = hash.record(i as u32);
        if *r != expect {
            return Err(format!("record {i} differs from serial hash"));
        }
        want[expect.bucket()] += 1;
    }
    if outcome.histogram() != want {
        return Err("bucket histogram differs from serial count".into());
    }
    Ok(())
}
