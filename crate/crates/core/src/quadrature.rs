//! Small quadrature toolbox: Gauss–Legendre rules, tensor integration over
//! boxes and midpoint grids used for density normalisation checks.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mid + half * z))
            .sum::<f64>()
            * half
    }

    /// Tensor-product integral of `f` over the box `[lo, hi]`.
    pub fn integrate_box(&self, lo: &[f64], hi: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let dim = lo.len();
        if dim == 0 {
            return f(&[]);
        }
        let n = self.len();
        let total = n.pow(dim as u32);
        let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let jac: f64 = half.iter().product();
        let mut x = vec![0.0; dim];
        let mut sum = 0.0;
        for flat in 0..total {
            let mut rest = flat;
            let mut w = 1.0;
            for j in (0..dim).rev() {
                let q = rest % n;
                rest /= n;
                x[j] = mid[j] + half[j] * self.nodes[q];
                w *= self.weights[q];
            }
            sum += w * f(&x);
        }
        sum * jac
    }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
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

/// Midpoint nodes of a uniform tensor grid with `per_axis` intervals on
/// `[0, side]^dim`, together with the common cell volume.
pub fn midpoint_grid(dim: usize, side: f64, per_axis: usize) -> (Vec<Vec<f64>>, f64) {
    let h = side / per_axis as f64;
    let total = per_axis.pow(dim as u32);
    let mut points = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rest = flat;
        let mut x = vec![0.0; dim];
        for j in (0..dim).rev() {
            let q = rest % per_axis;
            rest /= per_axis;
            x[j] = (q as f64 + 0.5) * h;
        }
        points.push(x);
    }
    (points, h.powi(dim as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in 1..12 {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}: {s}");
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let gl = GaussLegendre::new(5);
        // ∫_0^2 x^9 dx = 2^10 / 10
        let v = gl.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 102.4).abs() < 1e-10);
    }

    #[test]
    fn box_integral_of_product() {
        let gl = GaussLegendre::new(6);
        let v = gl.integrate_box(&[0.0, 1.0], &[1.0, 3.0], |x| x[0] * x[1]);
        assert!((v - 0.5 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn midpoint_grid_volume() {
        let (pts, vol) = midpoint_grid(2, 1.0, 4);
        assert_eq!(pts.len(), 16);
        assert_eq!(pts[1], vec![0.125, 0.375]);
        assert!((vol * 16.0 - 1.0).abs() < 1e-15);
    }
}
