//! Dense helpers shared by the analysis and synthesis code.

use crate::error::{Error, Result};
use conic::Real;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn max_real_eig<T: Real>(a: &DMatrix<T>) -> T {
    if a.is_empty() {
        return T::lit(f64::NEG_INFINITY);
    }
    a.clone().complex_eigenvalues().iter().map(|z| z.re).fold(T::lit(f64::NEG_INFINITY), |m, v| m.max(v))
}

pub fn is_hurwitz<T: Real>(a: &DMatrix<T>) -> bool {
    max_real_eig(a) < T::zero()
}

/// Rank with singular values below `max(r, c)·eps·σ_max` treated as zero.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(T::zero(), |a, b| a.max(*b));
    if smax == T::zero() {
        return 0;
    }
    let tol = T::from_usize(m.nrows().max(m.ncols())).unwrap() * T::machine_eps() * smax;
    sv.iter().filter(|s| **s > tol).count()
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn lambda_min<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).iter().fold(T::lit(f64::INFINITY), |a, b| a.min(*b))
}

pub fn lambda_max<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).iter().fold(T::lit(f64::NEG_INFINITY), |a, b| a.max(*b))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn sqrtm_psd<T: Real>(q: &DMatrix<T>) -> DMatrix<T> {
    let e = SymmetricEigen::new(symmetrize(q));
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(T::zero()).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone().singular_values().iter().fold(T::zero(), |a, b| a.max(*b))
}

pub fn row_norm<T: Real>(m: &DMatrix<T>, i: usize) -> T {
    m.row(i).iter().fold(T::zero(), |a, v| a + *v * *v).sqrt()
}

/// Solve `A Q + Q Aᵀ + W = 0` by Bartels-Stewart on the real Schur form.
pub fn solve_lyapunov<T: Real>(a: &DMatrix<T>, w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if a.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(Error::Dimension(format!("A is {}x{}, W is {}x{}", n, a.ncols(), w.nrows(), w.ncols())));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (u, t) = nalgebra::linalg::Schur::new(a.clone()).unpack();
    let c = -(u.transpose() * w * &u);

    // diagonal block boundaries of the quasi-triangular factor
    let mut blocks = vec![];
    let mut i = 0;
    while i < n {
        let two = i + 1 < n && {
            let sub = t[(i + 1, i)].abs();
            sub > T::machine_eps() * (t[(i, i)].abs() + t[(i + 1, i + 1)].abs()).max(T::machine_eps())
        };
        let sz = if two { 2 } else { 1 };
        blocks.push((i, sz));
        i += sz;
    }
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::lit(1e-300));
    let mut y = DMatrix::<T>::zeros(n, n);
    for &(j0, q) in blocks.iter().rev() {
        for &(i0, p) in blocks.iter().rev() {
            let mut r = c.view((i0, j0), (p, q)).into_owned();
            // subtract Σ_{K>I} T_IK Y_KJ and Σ_{L>J} Y_IL T_JLᵀ
            if i0 + p < n {
                r -= t.view((i0, i0 + p), (p, n - i0 - p)) * y.view((i0 + p, j0), (n - i0 - p, q));
            }
            if j0 + q < n {
                r -= y.view((i0, j0 + q), (p, n - j0 - q)) * t.view((j0, j0 + q), (q, n - j0 - q)).transpose();
            }
            let tii = t.view((i0, i0), (p, p));
            let tjj = t.view((j0, j0), (q, q));
            // (I_q ⊗ T_II + T_JJ ⊗ I_p) vec Y = vec R
            let k = p * q;
            let mut sys = DMatrix::<T>::zeros(k, k);
            for cj in 0..q {
                for ri in 0..p {
                    let row = cj * p + ri;
                    for rr in 0..p {
                        sys[(row, cj * p + rr)] += tii[(ri, rr)];
                    }
                    for cc in 0..q {
                        sys[(row, cc * p + ri)] += tjj[(cj, cc)];
                    }
                }
            }
            let rhs = DVector::from_iterator(k, (0..q).flat_map(|cj| (0..p).map(move |ri| (ri, cj))).map(|(ri, cj)| r[(ri, cj)]));
            let lu = sys.clone().full_piv_lu();
            let min_piv = lu.u().diagonal().iter().fold(T::lit(f64::INFINITY), |m, v| m.min(v.abs()));
            if !(min_piv > T::lit(1e3) * T::machine_eps() * scale) {
                return Err(Error::Numerical("Lyapunov equation ill-posed: eigenvalue pair sums to zero".into()));
            }
            let sol = lu.solve(&rhs).ok_or_else(|| Error::Numerical("singular Lyapunov block".into()))?;
            for cj in 0..q {
                for ri in 0..p {
                    y[(i0 + ri, j0 + cj)] = sol[cj * p + ri];
                }
            }
        }
    }
    Ok(symmetrize(&(&u * y * u.transpose())))
}

/// Compensated (Neumaier) running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    pub fn merge(&mut self, o: &KahanSum) {
        self.add(o.sum);
        self.add(o.comp);
    }
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kron_lyap(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let id = DMatrix::<f64>::identity(n, n);
        let k = id.kronecker(a) + a.kronecker(&id);
        let rhs = -DVector::from_column_slice(w.as_slice());
        let v = k.lu().solve(&rhs).unwrap();
        DMatrix::from_column_slice(n, n, v.as_slice())
    }

    #[test]
    fn lyapunov_small_cases() {
        let q = solve_lyapunov(&(-DMatrix::<f64>::identity(2, 2)), &DMatrix::identity(2, 2)).unwrap();
        assert!((q - DMatrix::identity(2, 2) * 0.5).amax() < 1e-14);
        let q = solve_lyapunov(&DMatrix::<f64>::from_element(1, 1, -2.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!((q[(0, 0)] - 1.0).abs() < 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let w = DMatrix::identity(2, 2);
        let q = solve_lyapunov(&a, &w).unwrap();
        assert!((&q - kron_lyap(&a, &w)).amax() < 1e-12);
        assert!((&a * &q + &q * a.transpose() + &w).amax() < 1e-10);
    }

    #[test]
    fn lyapunov_complex_pairs() {
        // rotation-dominated dynamics produce 2x2 Schur blocks
        let a = DMatrix::from_row_slice(4, 4, &[-0.1, 5.0, 0.3, 0.0, -5.0, -0.2, 0.0, 1.0, 0.0, 0.0, -0.5, 3.0, 0.1, 0.0, -3.0, -0.4]);
        let w = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.3 });
        let q = solve_lyapunov(&a, &w).unwrap();
        assert!((&a * &q + &q * a.transpose() + &w).amax() < 1e-10 * w.amax());
        assert!((&q - kron_lyap(&a, &w)).amax() < 1e-10);
    }

    #[test]
    fn lyapunov_rejects_marginal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(solve_lyapunov(&a, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn rank_threshold() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0 + 1e-17]);
        assert_eq!(numerical_rank(&m), 1);
        assert_eq!(numerical_rank(&DMatrix::<f64>::identity(3, 3)), 3);
        assert_eq!(numerical_rank(&DMatrix::<f64>::zeros(2, 2)), 0);
    }
}
