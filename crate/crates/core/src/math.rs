//! Log-space arithmetic and the small dense matrix type used throughout.

/// A natural-log probability.
///
/// Log-zero (an impossible event, e.g. an infeasible alignment) is represented
/// by negative infinity, which stays distinguishable from any underflowed
/// finite score.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogScore(f64);

impl LogScore {
    /// Probability zero.
    pub const ZERO: LogScore = LogScore(f64::NEG_INFINITY);
    /// Probability one.
    pub const ONE: LogScore = LogScore(0.0);

    pub fn new(ln_prob: f64) -> Self {
        LogScore(ln_prob)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl std::fmt::Display for LogScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// log(exp(a) + exp(b)) without overflow.
#[inline]
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log(sum(exp(x))) over a slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// log(1 - exp(x)) for x <= 0, stable near both ends.
///
/// Returns negative infinity when x == 0 (the complement of probability one).
#[inline]
pub fn log1mexp(x: f64) -> f64 {
    debug_assert!(x <= 0.0, "log1mexp expects a log-probability, got {x}");
    if x == 0.0 {
        f64::NEG_INFINITY
    } else if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// In-place log-softmax over a slice of logits.
pub fn log_softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter() {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
}

/// Dense row-major f64 matrix. Biases are stored as 1-row matrices so that
/// every trainable tensor shares one shape and one text serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            *yi = acc;
        }
        y
    }

    /// x = A^T y
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut x = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (xj, &aij) in x.iter_mut().zip(row.iter()) {
                *xj += aij * yi;
            }
        }
        x
    }

    /// A += scale * y x^T
    pub fn add_outer(&mut self, y: &[f64], x: &[f64], scale: f64) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (i, &yi) in y.iter().enumerate() {
            let f = scale * yi;
            if f == 0.0 {
                continue;
            }
            let row = self.row_mut(i);
            for (aij, &xj) in row.iter_mut().zip(x.iter()) {
                *aij += f * xj;
            }
        }
    }

    /// self += scale * other (elementwise)
    pub fn scaled_add(&mut self, other: &Mat, scale: f64) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|a| *a = v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp2_basics() {
        let v = logsumexp2(0.5f64.ln(), 0.25f64.ln());
        assert!((v - 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(logsumexp2(f64::NEG_INFINITY, -1.0), -1.0);
        assert_eq!(
            logsumexp2(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn logsumexp2_large_magnitudes() {
        // log(exp(1234) + exp(1232)) = 1232 + log(exp(2) + 1)
        let v = logsumexp2(1234.0, 1232.0);
        assert!((v - (1232.0 + (2f64.exp() + 1.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn log1mexp_boundaries() {
        assert_eq!(log1mexp(0.0), f64::NEG_INFINITY);
        let half = 0.5f64.ln();
        assert!((log1mexp(half) - half).abs() < 1e-15);
        // tiny probability: complement is almost one
        assert!(log1mexp(-50.0).abs() < 1e-20);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut z = vec![0.3, -2.0, 5.0, 0.0];
        log_softmax_in_place(&mut z);
        let total: f64 = z.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn matvec_and_transpose() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn outer_accumulate() {
        let mut a = Mat::zeros(2, 2);
        a.add_outer(&[1.0, 2.0], &[3.0, 4.0], 0.5);
        assert_eq!(a.data(), &[1.5, 2.0, 3.0, 4.0]);
    }
}
