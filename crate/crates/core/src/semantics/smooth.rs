//! Discrete penalized least-squares (Whittaker-Henderson) smoothing.
//!
//! For a series `y` of length `n` the smoothed series `x` minimizes
//! `sum (y - x)^2 + lambda * sum (second difference of x)^2`, i.e. it solves
//! `(I + lambda * D'D) x = y` with `D` the `(n-2) x n` second-difference
//! operator. The system matrix is symmetric positive definite and
//! pentadiagonal; it is factored once as `L D L'` and reused for every
//! coefficient dimension.

/// Factored `I + lambda * D'D` for a fixed series length.
#[derive(Debug, Clone)]
pub struct WhittakerSmoother {
    n: usize,
    lambda: f64,
    /// Main, first and second diagonals of the assembled system matrix.
    a0: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    /// `L D L'` factors: pivots and the two sub-diagonals of unit-lower `L`.
    piv: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl WhittakerSmoother {
    /// `lambda` must be finite and non-negative (clamped at 0 otherwise).
    pub fn new(n: usize, lambda: f64) -> Self {
        let lambda = if lambda.is_finite() { lambda.max(0.0) } else { 0.0 };
        let mut a0 = vec![1.0; n];
        let mut a1 = vec![0.0; n.saturating_sub(1)];
        let mut a2 = vec![0.0; n.saturating_sub(2)];
        if n >= 3 {
            const C: [f64; 3] = [1.0, -2.0, 1.0];
            for i in 0..n - 2 {
                for a in 0..3 {
                    a0[i + a] += lambda * C[a] * C[a];
                    if a < 2 {
                        a1[i + a] += lambda * C[a] * C[a + 1];
                    }
                }
                a2[i] += lambda * C[0] * C[2];
            }
        }

        let mut piv = vec![0.0; n];
        let mut l1 = vec![0.0; n.saturating_sub(1)];
        let mut l2 = vec![0.0; n.saturating_sub(2)];
        for i in 0..n {
            let mut d = a0[i];
            if i >= 1 {
                d -= l1[i - 1] * l1[i - 1] * piv[i - 1];
            }
            if i >= 2 {
                d -= l2[i - 2] * l2[i - 2] * piv[i - 2];
            }
            piv[i] = d;
            if i + 1 < n {
                let mut v = a1[i];
                if i >= 1 {
                    v -= l2[i - 1] * l1[i - 1] * piv[i - 1];
                }
                l1[i] = v / d;
            }
            if i + 2 < n {
                l2[i] = a2[i] / d;
            }
        }
        Self {
            n,
            lambda,
            a0,
            a1,
            a2,
            piv,
            l1,
            l2,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Smooths `y` in place.
    pub fn solve_in_place(&self, y: &mut [f64]) {
        assert_eq!(y.len(), self.n, "series length must match the factorization");
        if self.lambda == 0.0 || self.n < 3 {
            return;
        }
        let n = self.n;
        for i in 1..n {
            y[i] -= self.l1[i - 1] * y[i - 1];
            if i >= 2 {
                y[i] -= self.l2[i - 2] * y[i - 2];
            }
        }
        for (v, p) in y.iter_mut().zip(&self.piv) {
            *v /= p;
        }
        for i in (0..n - 1).rev() {
            y[i] -= self.l1[i] * y[i + 1];
            if i + 2 < n {
                y[i] -= self.l2[i] * y[i + 2];
            }
        }
    }

    pub fn smooth(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Max-norm of `(I + lambda D'D) x - y`.
    pub fn residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut ax = self.a0[i] * x[i];
            if i >= 1 {
                ax += self.a1[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                ax += self.a1[i] * x[i + 1];
            }
            if i >= 2 {
                ax += self.a2[i - 2] * x[i - 2];
            }
            if i + 2 < n {
                ax += self.a2[i] * x[i + 2];
            }
            worst = worst.max((ax - y[i]).abs());
        }
        worst
    }
}

/// Sum of squared second differences.
pub fn second_difference_energy(x: &[f64]) -> f64 {
    x.windows(3)
        .map(|w| {
            let d = w[2] - 2.0 * w[1] + w[0];
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Cholesky solve of the same system, assembled independently.
    fn dense_reference(y: &[f64], lambda: f64) -> Vec<f64> {
        let n = y.len();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for r in 0..n.saturating_sub(2) {
            let d = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
            for &(i, ci) in &d {
                for &(j, cj) in &d {
                    a[i][j] += lambda * ci * cj;
                }
            }
        }
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                l[i][j] = if i == j { (a[i][i] - s).sqrt() } else { (a[i][j] - s) / l[j][j] };
            }
        }
        let mut z = vec![0.0; n];
        for i in 0..n {
            z[i] = (y[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (z[i] - ((i + 1)..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
        }
        x
    }

    #[test]
    fn matches_dense_solver() {
        let y: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64 * 0.3 - 1.0).collect();
        for lambda in [0.5, 5.0, 300.0] {
            let s = WhittakerSmoother::new(y.len(), lambda);
            let x = s.smooth(&y);
            let r = dense_reference(&y, lambda);
            for (a, b) in x.iter().zip(&r) {
                assert!((a - b).abs() < 1e-10, "{lambda}: {a} vs {b}");
            }
            assert!(s.residual(&x, &y) < 1e-9);
        }
    }

    #[test]
    fn short_series_pass_through() {
        for n in 0..3 {
            let y: Vec<f64> = (0..n).map(|i| i as f64 * 3.0 + 1.0).collect();
            assert_eq!(WhittakerSmoother::new(n, 10.0).smooth(&y), y);
        }
        let y = [1.0, 5.0, 2.0];
        let x = WhittakerSmoother::new(3, 1.0).smooth(&y);
        assert!(second_difference_energy(&x) < second_difference_energy(&y));
    }

    #[test]
    fn zero_lambda_is_identity() {
        let y = [3.0, -1.0, 4.0, 1.0, -5.0];
        assert_eq!(WhittakerSmoother::new(5, 0.0).smooth(&y), y);
    }
}
