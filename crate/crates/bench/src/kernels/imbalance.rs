use std::hint::black_box;

use xtask::Worker;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceSpec {
    pub n_tasks: usize,
    /// Share of the total work given to the hot tasks, in [0, 1].
    pub skew: f64,
    /// Fraction of workers whose queues receive the hot tasks.
    pub hot_fraction: f64,
    /// Mean spin iterations per task.
    pub work_per_task: u64,
}

impl Default for ImbalanceSpec {
    fn default() -> Self {
        ImbalanceSpec {
            n_tasks: 2048,
            skew: 0.9,
            hot_fraction: 0.25,
            work_per_task: 20_000,
        }
    }
}

impl ImbalanceSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(format!("skew {} outside [0, 1]", self.skew));
        }
        if !(self.hot_fraction > 0.0 && self.hot_fraction <= 1.0) {
            return Err(format!("hot fraction {} outside (0, 1]", self.hot_fraction));
        }
        Ok(())
    }

    fn hot_workers(&self, n_workers: usize) -> usize {
        ((n_workers as f64 * self.hot_fraction).round() as usize).clamp(1, n_workers)
    }

    /// Spin iterations for every task, in spawn order. Task `j` is aimed at
    /// worker `j mod n_workers` by round-robin placement; those aimed at the
    /// first hot workers carry the concentrated share of the work.
    pub fn weights(&self, n_workers: usize) -> Vec<u64> {
        let hot = self.hot_workers(n_workers);
        let is_hot = |j: usize| j % n_workers < hot;
        let n_hot = (0..self.n_tasks).filter(|&j| is_hot(j)).count().max(1);
        let total = self.n_tasks as f64 * self.work_per_task as f64;
        let base = (1.0 - self.skew) * self.work_per_task as f64;
        let extra = self.skew * total / n_hot as f64;
        (0..self.n_tasks)
            .map(|j| if is_hot(j) { base + extra } else { base }.round() as u64)
            .collect()
    }
}

/// A deterministic busy loop; returns a value that depends on every step.
pub fn spin(iters: u64, seed: u64) -> u64 {
    let mut x = seed.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    for _ in 0..iters {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x = black_box(x);
    }
    x
}

/// Result of every task, indexed by spawn order.
pub fn imbalance(w: &Worker<'_>, weights: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; weights.len()];
    // Waves never exceed what the root's rings can hold, so the round-robin
    // target of each task is the one its weight was chosen for.
    let wave = (w.n_workers() * w.config().queue_capacity).max(1);
    for (c, (ws, outs)) in weights.chunks(wave).zip(out.chunks_mut(wave)).enumerate() {
        w.scope(|s| {
            for (i, (&iters, slot)) in ws.iter().zip(outs.iter_mut()).enumerate() {
                let seed = (c * wave + i) as u64;
                s.spawn(move |_| *slot = spin(iters, seed));
            }
        });
    }
    out
}

pub fn checksum(results: &[u64]) -> u64 {
    results.iter().fold(0u64, |a, &x| a.wrapping_add(x))
}
