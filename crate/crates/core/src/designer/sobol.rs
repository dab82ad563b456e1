//! Sobol' points from Joe-Kuo direction numbers, generated in Gray-code order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Highest supported dimension.
pub const MAX_DIM: usize = 16;

const BITS: usize = 32;

// (degree, polynomial coefficients, initial direction numbers) for
// dimensions 2..=16
const TABLE: [(usize, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

fn directions(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = TABLE[dim - 1];
    for k in 0..s {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// First `n` points in `[0,1)^p`. Without a seed the first point is the
/// origin; a seed applies a random digital shift.
pub fn sobol_points(n: usize, p: usize, seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
    if p == 0 || p > MAX_DIM {
        return Err(Error::Argument(format!("Sobol' dimension {p} is outside 1..={MAX_DIM}")));
    }
    if n == 0 || (n as u64) > (1u64 << BITS) {
        return Err(Error::Argument(format!("cannot generate {n} Sobol' points")));
    }
    let dirs: Vec<[u32; BITS]> = (0..p).map(directions).collect();
    let shift: Vec<u32> = match seed {
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..p).map(|_| rng.random::<u32>()).collect()
        }
        None => vec![0; p],
    };
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut state = vec![0u32; p];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let c = (i - 1).trailing_ones() as usize;
            for (x, d) in state.iter_mut().zip(&dirs) {
                *x ^= d[c];
            }
        }
        out.push(
            state
                .iter()
                .zip(&shift)
                .map(|(x, s)| (x ^ s) as f64 * scale)
                .collect(),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_points() {
        let pts = sobol_points(4, 2, None).unwrap();
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert_eq!(pts[1], vec![0.5, 0.5]);
        assert_eq!(pts[2], vec![0.75, 0.25]);
        assert_eq!(pts[3], vec![0.25, 0.75]);
    }

    #[test]
    fn stratified_in_every_dimension() {
        // each of the first 2^k points hits each dyadic interval of width 2^-k once
        let pts = sobol_points(64, MAX_DIM, None).unwrap();
        for j in 0..MAX_DIM {
            let mut seen = [false; 64];
            for x in &pts {
                seen[(x[j] * 64.0) as usize] = true;
            }
            assert!(seen.iter().all(|&s| s), "dimension {j}");
        }
    }

    #[test]
    fn seeded_repeatable_and_distinct() {
        let a = sobol_points(32, 3, Some(4)).unwrap();
        assert_eq!(a, sobol_points(32, 3, Some(4)).unwrap());
        assert_ne!(a, sobol_points(32, 3, Some(5)).unwrap());
    }

    #[test]
    fn rejects_large_dimension() {
        assert!(sobol_points(4, MAX_DIM + 1, None).is_err());
        assert!(sobol_points(4, 0, None).is_err());
    }
}
