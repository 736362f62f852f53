use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;
use xtask::Worker;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("matrix size {0} is not a power of two")]
pub struct NotPowerOfTwo(pub usize);

/// Dense square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Entries uniform in [-1, 1).
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = SmallRng::seed_from_u64(seed);
        Matrix {
            n,
            data: (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    /// i-k-j product used at the recursion leaves.
    pub fn mul_leaf(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut c = Matrix::zeros(n);
        for i in 0..n {
            let row = &mut c.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                let b = &other.data[k * n..(k + 1) * n];
                for (c, &b) in row.iter_mut().zip(b) {
                    *c += a * b;
                }
            }
        }
        c
    }

    /// Splits into [11, 12, 21, 22] quadrant copies.
    pub fn quadrants(&self) -> [Matrix; 4] {
        let h = self.n / 2;
        let block = |r0: usize, c0: usize| {
            let mut m = Matrix::zeros(h);
            for i in 0..h {
                let src = &self.data[(r0 + i) * self.n + c0..][..h];
                m.data[i * h..(i + 1) * h].copy_from_slice(src);
            }
            m
        };
        [block(0, 0), block(0, h), block(h, 0), block(h, h)]
    }

    /// Assembles C from the seven Strassen products m1..m7.
    pub fn combine(m: &[Matrix; 7]) -> Matrix {
        let [m1, m2, m3, m4, m5, m6, m7] = m;
        let c11 = m1.add(m4).sub(m5).add(m7);
        let c12 = m3.add(m5);
        let c21 = m2.add(m4);
        let c22 = m1.sub(m2).add(m3).add(m6);
        let h = m1.n;
        let n = 2 * h;
        let mut c = Matrix::zeros(n);
        for (q, (r0, c0)) in
            [&c11, &c12, &c21, &c22]
                .into_iter()
                .zip([(0, 0), (0, h), (h, 0), (h, h)])
        {
            for i in 0..h {
                c.data[(r0 + i) * n + c0..][..h].copy_from_slice(&q.data[i * h..(i + 1) * h]);
            }
        }
        c
    }
}

/// Strassen product with the seven sub-products computed as sibling tasks.
/// Blocks of size `<= cutoff` use the leaf kernel.
pub fn strassen(
    w: &Worker<'_>,
    a: &Matrix,
    b: &Matrix,
    cutoff: usize,
) -> Result<Matrix, NotPowerOfTwo> {
    let n = a.n();
    if !n.is_power_of_two() || b.n() != n {
        return Err(NotPowerOfTwo(n));
    }
    Ok(recurse(w, a, b, cutoff.max(1)))
}

fn recurse(w: &Worker<'_>, a: &Matrix, b: &Matrix, cutoff: usize) -> Matrix {
    if a.n() <= cutoff {
        return a.mul_leaf(b);
    }
    let [a11, a12, a21, a22] = a.quadrants();
    let [b11, b12, b21, b22] = b.quadrants();
    let operands = [
        (a11.add(&a22), b11.add(&b22)),
        (a21.add(&a22), b11.clone()),
        (a11.clone(), b12.sub(&b22)),
        (a22.clone(), b21.sub(&b11)),
        (a11.add(&a12), b22.clone()),
        (a21.sub(&a11), b11.add(&b12)),
        (a12.sub(&a22), b21.add(&b22)),
    ];
    let mut products: [Option<Matrix>; 7] = Default::default();
    w.scope(|s| {
        for ((x, y), slot) in operands.iter().zip(products.iter_mut()) {
            s.spawn(move |w| *slot = Some(recurse(w, x, y, cutoff)));
        }
    });
    Matrix::combine(&products.map(|p| p.expect("product computed")))
}
