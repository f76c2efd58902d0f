//! One-dimensional quadrature and interpolation helpers.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// Barycentric interpolation on Chebyshev points of the first kind in [a, b].
#[derive(Clone, Debug)]
pub struct Chebyshev {
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl Chebyshev {
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 1 && b > a);
        let mut nodes = Vec::with_capacity(n);
        let mut bary = Vec::with_capacity(n);
        for j in 0..n {
            let t = PI * (2 * j + 1) as f64 / (2 * n) as f64;
            nodes.push(0.5 * (a + b) - 0.5 * (b - a) * t.cos());
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            bary.push(sign * t.sin());
        }
        Chebyshev { a, b, nodes, bary }
    }

    /// Interpolation coefficients at `t`: f(t) ≈ Σ c_j f(node_j).
    pub fn coefficients(&self, t: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.nodes.len()];
        for (j, &x) in self.nodes.iter().enumerate() {
            if (t - x).abs() < 1e-15 * (self.b - self.a) {
                c[j] = 1.0;
                return c;
            }
        }
        let mut sum = 0.0;
        for j in 0..self.nodes.len() {
            c[j] = self.bary[j] / (t - self.nodes[j]);
            sum += c[j];
        }
        for v in &mut c {
            *v /= sum;
        }
        c
    }
}

/// Lagrange weights for equispaced points 0, 1, ..., n-1 evaluated at `t`.
pub fn lagrange_equispaced(n: usize, t: f64, out: &mut [f64]) {
    for j in 0..n {
        let mut w = 1.0;
        for m in 0..n {
            if m != j {
                w *= (t - m as f64) / (j as f64 - m as f64);
            }
        }
        out[j] = w;
    }
}

/// Smooth step equal to 0 for s ≤ 0 and 1 for s ≥ 1, C^∞ in between.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let f = |t: f64| if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() };
    let a = f(s);
    let b = f(1.0 - s);
    a / (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn chebyshev_interpolates_smooth_function() {
        let c = Chebyshev::new(24, 0.3, 1.4);
        let f = |t: f64| (3.0 * t).sin() * (-t).exp();
        let vals: Vec<f64> = c.nodes.iter().map(|&t| f(t)).collect();
        for k in 0..50 {
            let t = 0.3 + 1.1 * k as f64 / 49.0;
            let co = c.coefficients(t);
            let v: f64 = co.iter().zip(&vals).map(|(a, b)| a * b).sum();
            assert!((v - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn lagrange_reproduces_cubic() {
        let mut w = [0.0; 4];
        lagrange_equispaced(4, 1.37, &mut w);
        let f = |t: f64| 2.0 - t + 0.5 * t * t - 0.25 * t * t * t;
        let v: f64 = (0..4).map(|j| w[j] * f(j as f64)).sum();
        assert!((v - f(1.37)).abs() < 1e-13);
    }

    #[test]
    fn smooth_step_limits() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
    }
}
