use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use xtask::Worker;

/// Merges below this many elements run serially.
const MERGE_CUTOFF: usize = 4096;

pub fn random_input(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = SmallRng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Order-independent fingerprint of a multiset of keys.
pub fn checksum(data: &[u64]) -> u64 {
    data.iter().fold(0u64, |acc, &x| acc.wrapping_add(mix(x)))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn is_sorted(data: &[u64]) -> bool {
    data.windows(2).all(|p| p[0] <= p[1])
}

/// Sorts `data` in place. Halves are sorted as sibling tasks and merged by a
/// divide-and-conquer parallel merge; runs of at most `leaf` use the std sort.
pub fn msort(w: &Worker<'_>, data: &mut [u64], leaf: usize) {
    let mut tmp = vec![0u64; data.len()];
    sort_into(w, data, &mut tmp, leaf.max(1));
}

fn sort_into(w: &Worker<'_>, data: &mut [u64], tmp: &mut [u64], leaf: usize) {
    if data.len() <= leaf {
        data.sort_unstable();
        return;
    }
    let mid = data.len() / 2;
    {
        let (lo, hi) = data.split_at_mut(mid);
        let (tlo, thi) = tmp.split_at_mut(mid);
        w.scope(|s| {
            s.spawn(|w| sort_into(w, lo, tlo, leaf));
            s.spawn(|w| sort_into(w, hi, thi, leaf));
        });
    }
    let (lo, hi) = data.split_at(mid);
    merge(w, lo, hi, tmp);
    data.copy_from_slice(tmp);
}

fn merge(w: &Worker<'_>, a: &[u64], b: &[u64], out: &mut [u64]) {
    if a.len() + b.len() <= MERGE_CUTOFF {
        merge_serial(a, b, out);
        return;
    }
    let (a, b) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let ma = a.len() / 2;
    let pivot = a[ma];
    let mb = b.partition_point(|&x| x < pivot);
    let (out_lo, out_hi) = out.split_at_mut(ma + mb);
    w.scope(|s| {
        s.spawn(|w| merge(w, &a[..ma], &b[..mb], out_lo));
        s.spawn(|w| merge(w, &a[ma..], &b[mb..], out_hi));
    });
}

fn merge_serial(a: &[u64], b: &[u64], out: &mut [u64]) {
    let (mut i, mut j) = (0, 0);
    for slot in out.iter_mut() {
        if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            *slot = a[i];
            i += 1;
        } else {
            *slot = b[j];
            j += 1;
        }
    }
}
