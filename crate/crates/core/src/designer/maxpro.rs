//! Maximum projection designs: Latin hypercubes scored by
//! `sum_{i<j} prod_l (x_il - x_jl)^-2`, which penalizes points that are
//! close in any coordinate projection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const CANDIDATES: usize = 200;
const MAX_PASSES: usize = 100;

// -2 sum_l ln|a_l - b_l|, or +inf when the points share a coordinate
fn log_pair_term(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (u, v) in a.iter().zip(b) {
        let d = (u - v).abs();
        if d == 0.0 {
            return f64::INFINITY;
        }
        s -= 2.0 * d.ln();
    }
    s
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Natural log of the MaxPro criterion; `+inf` if two points share a
/// coordinate value.
pub fn maxpro_log_criterion(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    log_sum_exp((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| log_pair_term(&points[i], &points[j])))
}

/// Log of `sum_i prod_l (x_il - x_l)^-2`, the MaxPro increment from adding
/// `x` to `existing`. Smaller is more space filling.
pub fn maxpro_increment(existing: &[Vec<f64>], x: &[f64]) -> f64 {
    log_sum_exp(existing.iter().map(|e| log_pair_term(e, x)))
}

fn random_lhs(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; p]; n];
    let mut levels: Vec<usize> = (0..n).collect();
    for l in 0..p {
        levels.shuffle(rng);
        for (i, &k) in levels.iter().enumerate() {
            pts[i][l] = (k as f64 + 0.5) / n as f64;
        }
    }
    pts
}

/// `n`-point MaxPro Latin hypercube in `[0,1]^p` on the centered levels
/// `(k + 1/2)/n`: the best of 200 random Latin hypercubes, improved by
/// swapping levels within columns until no swap helps.
pub fn initial_design(n: usize, p: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::Argument(format!("a design needs at least 2 points, got {n}")));
    }
    if p == 0 {
        return Err(Error::Argument("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = random_lhs(n, p, &mut rng);
    let mut best_val = maxpro_log_criterion(&best);
    for _ in 1..CANDIDATES {
        let cand = random_lhs(n, p, &mut rng);
        let v = maxpro_log_criterion(&cand);
        if v < best_val {
            best = cand;
            best_val = v;
        }
    }
    if p == 1 {
        return Ok(best);
    }
    for _ in 0..MAX_PASSES {
        let mut improved = false;
        for l in 0..p {
            for i in 0..n {
                for j in i + 1..n {
                    let (a, b) = (best[i][l], best[j][l]);
                    best[i][l] = b;
                    best[j][l] = a;
                    let v = maxpro_log_criterion(&best);
                    if v < best_val - 1e-12 {
                        best_val = v;
                        improved = true;
                    } else {
                        best[i][l] = a;
                        best[j][l] = b;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

/// `n` equally spaced points on `[0,1]`, endpoints included.
pub fn equispaced(n: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![0.5]],
        _ => (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect(),
    }
}
