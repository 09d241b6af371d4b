//! Clamped interpolating B-splines in the plane.
//!
//! Data points are assigned equally spaced parameters `t_i = i / (k - 1)`,
//! knots are placed by averaging those parameters, and control points come
//! from solving the banded collocation system. Degree is `min(3, k - 1)`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("at least one data point is required")]
    NoPoints,
    #[error("collocation system is singular at row {0}")]
    Singular(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineCurve {
    degree: usize,
    knots: Vec<f64>,
    control: Vec<[f64; 2]>,
}

impl BSplineCurve {
    /// Interpolates `points` at equally spaced parameters on [0, 1].
    pub fn interpolate(points: &[[f64; 2]]) -> Result<Self, SplineError> {
        let k = points.len();
        if k == 0 {
            return Err(SplineError::NoPoints);
        }
        if k == 1 {
            return Ok(Self {
                degree: 0,
                knots: vec![0.0, 1.0],
                control: points.to_vec(),
            });
        }
        let n = k - 1;
        let p = n.min(3);
        let params: Vec<f64> = (0..k).map(|i| i as f64 / n as f64).collect();

        let mut knots = vec![0.0; p + 1];
        for j in 1..=(n - p) {
            let s: f64 = params[j..j + p].iter().sum();
            knots.push(s / p as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, p + 1));

        let mut band = BandSystem::new(k, p);
        let mut basis = vec![0.0; p + 1];
        for (row, &t) in params.iter().enumerate() {
            let span = find_span(n, p, t, &knots);
            basis_funs(span, t, p, &knots, &mut basis);
            for (j, &b) in basis.iter().enumerate() {
                band.set(row, span - p + j, b);
            }
        }
        let control = band.solve(points)?;
        Ok(Self {
            degree: p,
            knots,
            control,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.control
    }

    /// Evaluates the curve at `t`, clamped into [0, 1].
    pub fn eval(&self, t: f64) -> [f64; 2] {
        if self.degree == 0 {
            return self.control[0];
        }
        let t = t.clamp(0.0, 1.0);
        let p = self.degree;
        let n = self.control.len() - 1;
        let span = find_span(n, p, t, &self.knots);
        let mut basis = [0.0; 4];
        basis_funs(span, t, p, &self.knots, &mut basis[..=p]);
        let mut out = [0.0; 2];
        for (j, &b) in basis[..=p].iter().enumerate() {
            let c = self.control[span - p + j];
            out[0] += b * c[0];
            out[1] += b * c[1];
        }
        out
    }
}

/// Knot span index `s` with `knots[s] <= t < knots[s + 1]`; the right end maps
/// to the last non-empty span.
fn find_span(n: usize, p: usize, t: f64, knots: &[f64]) -> usize {
    if t >= knots[n + 1] {
        return n;
    }
    if t <= knots[p] {
        return p;
    }
    let (mut lo, mut hi) = (p, n + 1);
    let mut mid = (lo + hi) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// The `p + 1` non-vanishing basis functions at `t` in `span` (triangular scheme).
fn basis_funs(span: usize, t: f64, p: usize, knots: &[f64], out: &mut [f64]) {
    let mut left = [0.0; 4];
    let mut right = [0.0; 4];
    out[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// Square system with lower and upper bandwidth `w`, stored row-wise as
/// `2w + 1` diagonals. Collocation matrices of B-splines are totally
/// positive, so elimination without pivoting is stable.
struct BandSystem {
    n: usize,
    w: usize,
    rows: Vec<f64>,
}

impl BandSystem {
    fn new(n: usize, w: usize) -> Self {
        Self {
            n,
            w,
            rows: vec![0.0; n * (2 * w + 1)],
        }
    }

    fn idx(&self, r: usize, c: usize) -> usize {
        r * (2 * self.w + 1) + (c + self.w - r)
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[self.idx(r, c)]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        let i = self.idx(r, c);
        self.rows[i] = v;
    }

    fn solve(mut self, rhs: &[[f64; 2]]) -> Result<Vec<[f64; 2]>, SplineError> {
        let (n, w) = (self.n, self.w);
        let mut b = rhs.to_vec();
        for i in 0..n {
            let piv = self.get(i, i);
            if piv.abs() < 1e-300 {
                return Err(SplineError::Singular(i));
            }
            for r in (i + 1)..(i + w + 1).min(n) {
                let f = self.get(r, i) / piv;
                if f == 0.0 {
                    continue;
                }
                for c in i..(i + w + 1).min(n) {
                    let v = self.get(r, c) - f * self.get(i, c);
                    self.set(r, c, v);
                }
                b[r][0] -= f * b[i][0];
                b[r][1] -= f * b[i][1];
            }
        }
        let mut x = vec![[0.0; 2]; n];
        for i in (0..n).rev() {
            let mut acc = b[i];
            for (c, xc) in x.iter().enumerate().take((i + w + 1).min(n)).skip(i + 1) {
                let a = self.get(i, c);
                acc[0] -= a * xc[0];
                acc[1] -= a * xc[1];
            }
            let d = self.get(i, i);
            x[i] = [acc[0] / d, acc[1] / d];
        }
        Ok(x)
    }
}
