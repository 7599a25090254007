//! Quadrature on the reference triangle `(0,0), (1,0), (0,1)`.
//!
//! Rules are collapsed (conical) Gauss-Legendre products: the square `[0,1]^2` is
//! mapped onto the triangle by `x = u, y = v (1 - u)`, so an `n x n` rule is exact
//! for every polynomial of total degree `2n - 2` and all weights are positive.

use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Total polynomial degree integrated exactly.
    pub order: usize,
    /// Barycentric coordinates `(l0, l1, l2)` of each point.
    pub points: Vec<[f64; 3]>,
    /// Weights on the reference triangle; they sum to 1/2.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn triangle(order: usize) -> Self {
        let n = (order + 3) / 2;
        let (x, w) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            let u = x[i];
            for j in 0..n {
                let v = x[j];
                let px = u;
                let py = v * (1.0 - u);
                points.push([1.0 - px - py, px, py]);
                weights.push(w[i] * w[j] * (1.0 - u));
            }
        }
        Self {
            order,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Tricomi initial guess, then Newton on P_n.
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        // Ascending order on [0, 1].
        x[n - 1 - i] = 0.5 * (t + 1.0);
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}
