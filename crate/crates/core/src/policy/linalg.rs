//! Dense Cholesky factorization with a fixed operation order.
//!
//! This is the only solver the policy uses, so any two processes that feed it
//! the same bits get the same bits back.

// Index loops spell out the summation order; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

/// Lower-triangular factor `L` with `A = L Lᵀ`, stored row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
}

impl Cholesky {
    pub fn factor(a: &[f64], n: usize) -> Result<Self, NotPositiveDefinite> {
        assert_eq!(a.len(), n * n, "matrix must be n×n");
        let mut lower = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= lower[j * n + k] * lower[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(NotPositiveDefinite { pivot: j, value: diag });
            }
            let d = diag.sqrt();
            lower[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= lower[i * n + k] * lower[j * n + k];
                }
                let v = s / d;
                if !v.is_finite() {
                    return Err(NotPositiveDefinite { pivot: j, value: v });
                }
                lower[i * n + j] = v;
            }
        }
        Ok(Self { n, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * x[k];
            }
            x[i] = s / self.lower[i * n + i];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// `zᵀ A⁻¹ z`, computed as `‖L⁻¹ z‖²`.
    pub fn inverse_quadratic_form(&self, z: &[f64]) -> f64 {
        self.forward(z).iter().map(|y| y * y).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_known_matrix() {
        // [[4,2],[2,3]] = L Lᵀ with L = [[2,0],[1,√2]]
        let c = Cholesky::factor(&[4.0, 2.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(c.lower[0], 2.0);
        assert_eq!(c.lower[2], 1.0);
        assert!((c.lower[3] - 2f64.sqrt()).abs() < 1e-15);
        let x = c.solve(&[2.0, 1.0]);
        // A x = b  ->  x = (0.5, 0)
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite() {
        let err = Cholesky::factor(&[1.0, 2.0, 2.0, 1.0], 2).unwrap_err();
        assert_eq!(err.pivot, 1);
        assert!(Cholesky::factor(&[0.0], 1).is_err());
        assert!(Cholesky::factor(&[f64::NAN], 1).is_err());
    }

    #[test]
    fn quadratic_form_of_identity() {
        let c = Cholesky::factor(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(c.inverse_quadratic_form(&[3.0, 4.0]), 25.0);
    }
}
