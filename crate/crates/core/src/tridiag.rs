//! Thomas algorithm for tridiagonal systems.

/// Tridiagonal matrix with sub-diagonal `lower[i]` = A[i][i-1] (`lower[0]`
/// unused), diagonal `diag[i]` and super-diagonal `upper[i]` = A[i][i+1]
/// (`upper[last]` unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(len: usize) -> Self {
        Self {
            lower: vec![0.0; len],
            diag: vec![0.0; len],
            upper: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y = A x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.upper[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    /// Solves A x = rhs in place. No pivoting: intended for the diagonally
    /// dominant M-matrices produced by implicit diffusion.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        assert_eq!(rhs.len(), n, "rhs length mismatch");
        if n == 0 {
            return;
        }
        let mut c = vec![0.0; n];
        let mut denom = self.diag[0];
        c[0] = self.upper[0] / denom;
        rhs[0] /= denom;
        for i in 1..n {
            denom = self.diag[i] - self.lower[i] * c[i - 1];
            if i + 1 < n {
                c[i] = self.upper[i] / denom;
            }
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= c[i] * rhs[i + 1];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
