use alloc::vec;
use alloc::vec::Vec;

/// Tridiagonal system `sub[i] x[i-1] + main[i] x[i] + sup[i] x[i+1] = rhs[i]`.
///
/// `sub[0]` and `sup[n-1]` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub sub: Vec<f64>,
    pub main: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn zeros(n: usize) -> Self {
        Self { sub: vec![0.0; n], main: vec![0.0; n], sup: vec![0.0; n], rhs: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    /// First row that is not (weakly) diagonally dominant, if any.
    pub fn dominance_violation(&self) -> Option<usize> {
        let n = self.len();
        (0..n).find(|&i| {
            let off = if i > 0 { self.sub[i].abs() } else { 0.0 } + if i + 1 < n { self.sup[i].abs() } else { 0.0 };
            !(self.main[i].abs() >= off) || self.main[i] == 0.0
        })
    }

    /// Thomas elimination without pivoting.
    pub fn solve(&self) -> Vec<f64> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.main[0];
        c[0] = if n > 1 { self.sup[0] / denom } else { 0.0 };
        d[0] = self.rhs[0] / denom;
        for i in 1..n {
            denom = self.main[i] - self.sub[i] * c[i - 1];
            if i + 1 < n {
                c[i] = self.sup[i] / denom;
            }
            d[i] = (self.rhs[i] - self.sub[i] * d[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        d
    }

    /// Max-norm of `A x - rhs`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut r = self.main[i] * x[i] - self.rhs[i];
                if i > 0 {
                    r += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    r += self.sup[i] * x[i + 1];
                }
                r.abs()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_dominant_system() {
        let sys = TridiagonalSystem {
            sub: vec![0.0, -1.0, -1.0, -1.0],
            main: vec![4.0, 4.0, 4.0, 4.0],
            sup: vec![-1.0, -1.0, -1.0, 0.0],
            rhs: vec![5.0, 5.0, 10.0, 23.0],
        };
        let x = sys.solve();
        // Dense check of A x.
        assert!(sys.residual(&x) < 1e-14);
        assert_eq!(sys.dominance_violation(), None);
    }

    #[test]
    fn single_unknown() {
        let sys = TridiagonalSystem { sub: vec![0.0], main: vec![2.0], sup: vec![0.0], rhs: vec![3.0] };
        assert_eq!(sys.solve(), vec![1.5]);
    }

    #[test]
    fn flags_non_dominant_row() {
        let sys = TridiagonalSystem {
            sub: vec![0.0, 3.0, 0.0],
            main: vec![1.0, 1.0, 1.0],
            sup: vec![0.5, 0.0, 0.0],
            rhs: vec![0.0; 3],
        };
        assert_eq!(sys.dominance_violation(), Some(1));
    }
}
