//! Compensated summation with a fixed reduction tree.
//!
//! Large populations are split into fixed-size chunks that may be summed on
//! different threads; partial sums are always combined in chunk order, so the
//! result does not depend on the thread count.

use rayon::prelude::*;

pub const CHUNK: usize = 16_384;

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Neumaier::default();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

/// Sum `f(i)` over `0..n`.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n <= CHUNK {
        return compensated_sum((0..n).map(&f));
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| compensated_sum((c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f)))
        .collect();
    compensated_sum(partials)
}

/// Component-wise sum of `dim`-vectors; `f(i, out)` must add observation
/// `i`'s vector into `out`.
pub fn chunked_sum_vec<F>(n: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunk_sum = |range: std::ops::Range<usize>| {
        let mut acc = vec![Neumaier::default(); dim];
        let mut buf = vec![0.0; dim];
        for i in range {
            buf.iter_mut().for_each(|b| *b = 0.0);
            f(i, &mut buf);
            for (a, &b) in acc.iter_mut().zip(&buf) {
                a.add(b);
            }
        }
        acc
    };
    let partials: Vec<Vec<Neumaier>> = if n <= CHUNK {
        vec![chunk_sum(0..n)]
    } else {
        (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| chunk_sum(c * CHUNK..((c + 1) * CHUNK).min(n)))
            .collect()
    };
    (0..dim)
        .map(|j| compensated_sum(partials.iter().map(|p| p[j].total())))
        .collect()
}
