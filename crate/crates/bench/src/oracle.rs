//! Sequential reference implementations the kernels are checked against.

use crate::kernels::strassen::Matrix;

pub fn fib(n: u32) -> u64 {
    let (mut a, mut b) = (0u64, 1u64);
    for _ in 0..n {
        (a, b) = (b, a.wrapping_add(b));
    }
    a
}

/// Plain row-by-row backtracking with explicit column/diagonal tables.
pub fn nqueens(n: usize) -> u64 {
    fn place(row: usize, n: usize, cols: &mut [bool], d1: &mut [bool], d2: &mut [bool]) -> u64 {
        if row == n {
            return 1;
        }
        let mut count = 0;
        for c in 0..n {
            let (a, b) = (row + c, row + n - 1 - c);
            if cols[c] || d1[a] || d2[b] {
                continue;
            }
            cols[c] = true;
            d1[a] = true;
            d2[b] = true;
            count += place(row + 1, n, cols, d1, d2);
            cols[c] = false;
            d1[a] = false;
            d2[b] = false;
        }
        count
    }
    if n == 0 {
        return 1;
    }
    place(
        0,
        n,
        &mut vec![false; n],
        &mut vec![false; 2 * n],
        &mut vec![false; 2 * n],
    )
}

pub fn sort(data: &[u64]) -> Vec<u64> {
    let mut v = data.to_vec();
    v.sort();
    v
}

/// Textbook triple loop, accumulating each entry in k order.
pub fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.n();
    let mut c = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, s);
        }
    }
    c
}

/// Sequential Strassen with the same splitting and leaf kernel as the task
/// version, so results must agree bit for bit.
pub fn strassen(a: &Matrix, b: &Matrix, cutoff: usize) -> Matrix {
    let n = a.n();
    if n <= cutoff.max(1) {
        return a.mul_leaf(b);
    }
    let [a11, a12, a21, a22] = a.quadrants();
    let [b11, b12, b21, b22] = b.quadrants();
    let m1 = strassen(&a11.add(&a22), &b11.add(&b22), cutoff);
    let m2 = strassen(&a21.add(&a22), &b11, cutoff);
    let m3 = strassen(&a11, &b12.sub(&b22), cutoff);
    let m4 = strassen(&a22, &b21.sub(&b11), cutoff);
    let m5 = strassen(&a11.add(&a12), &b22, cutoff);
    let m6 = strassen(&a21.sub(&a11), &b11.add(&b12), cutoff);
    let m7 = strassen(&a12.sub(&a22), &b21.add(&b22), cutoff);
    Matrix::combine(&[m1, m2, m3, m4, m5, m6, m7])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(fib(0), 0);
        assert_eq!(fib(1), 1);
        assert_eq!(fib(20), 6765);
        assert_eq!(fib(30), 832_040);
        let q: Vec<u64> = (1..=10).map(nqueens).collect();
        assert_eq!(q, [1, 0, 0, 2, 10, 4, 40, 92, 352, 724]);
    }
}
