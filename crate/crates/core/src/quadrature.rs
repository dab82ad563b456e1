//! Gauss-Legendre rules on `[0,1]` and tensor/QMC cubature over the unit cube.

use crate::designer::sobol::sobol_points;
use crate::error::Result;

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule, nodes from Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1,1] -> [0,1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { nodes, weights }
    }

    /// Composite rule: `panels` equal sub-intervals of `[0,1]`, each with an
    /// `n`-point rule.
    pub fn composite(n: usize, panels: usize) -> Self {
        let base = Self::new(n);
        let h = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(n * panels);
        let mut weights = Vec::with_capacity(n * panels);
        for k in 0..panels {
            let lo = k as f64 * h;
            for (x, w) in base.nodes.iter().zip(&base.weights) {
                nodes.push(lo + h * x);
                weights.push(h * w);
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// How to integrate over `[0,1]^p` when no closed form is used.
#[derive(Clone, Debug, PartialEq)]
pub enum Cubature {
    /// Tensor-product composite Gauss-Legendre, `nodes * panels` points per axis.
    Tensor { nodes: usize, panels: usize },
    /// Digitally shifted Sobol' points with equal weights.
    Sobol { points: usize, seed: u64 },
}

impl Cubature {
    /// Default for dimension `p`: 64 nodes per axis up to three dimensions,
    /// `2^14` Sobol' points beyond.
    pub fn default_for(p: usize) -> Self {
        if p <= 3 {
            Cubature::Tensor {
                nodes: 16,
                panels: 4,
            }
        } else {
            Cubature::Sobol {
                points: 1 << 14,
                seed: 0x5eed,
            }
        }
    }

    /// Nodes and weights over `[0,1]^p`.
    pub fn rule(&self, p: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        match *self {
            Cubature::Tensor { nodes, panels } => {
                let axis = GaussLegendre::composite(nodes, panels);
                let m = axis.nodes.len();
                let total = m.pow(p as u32);
                let mut pts = Vec::with_capacity(total);
                let mut wts = Vec::with_capacity(total);
                let mut idx = vec![0usize; p];
                for _ in 0..total {
                    pts.push(idx.iter().map(|&i| axis.nodes[i]).collect());
                    wts.push(idx.iter().map(|&i| axis.weights[i]).product());
                    for slot in idx.iter_mut() {
                        *slot += 1;
                        if *slot < m {
                            break;
                        }
                        *slot = 0;
                    }
                }
                Ok((pts, wts))
            }
            Cubature::Sobol { points, seed } => {
                let pts = sobol_points(points, p, Some(seed))?;
                let w = 1.0 / points as f64;
                Ok((pts, vec![w; points]))
            }
        }
    }
}
