//! Thin SVD of Casorati matrices through the `T x T` Gram matrix.
//!
//! `M^H M` is Hermitian and small (`T` is the number of frames), so it is
//! diagonalized with cyclic complex Jacobi rotations; its eigenvectors are the
//! right singular vectors.

use num_complex::Complex64;

use crate::volume::CasoratiMatrix;

const MAX_SWEEPS: usize = 64;

/// Dense column-major square matrix used for the Gram/eigen step.
#[derive(Clone, Debug, PartialEq)]
pub struct Square {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl Square {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            data[i + n * i] = Complex64::new(1.0, 0.0);
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r + self.n * c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r + self.n * c] = v;
    }

    fn off_diagonal_sq(&self) -> f64 {
        let mut s = 0.0;
        for c in 0..self.n {
            for r in 0..self.n {
                if r != c {
                    s += self.get(r, c).norm_sqr();
                }
            }
        }
        s
    }
}

/// `M^H M`.
pub fn gram(m: &CasoratiMatrix) -> Square {
    let n = m.cols();
    let mut g = Square {
        n,
        data: vec![Complex64::new(0.0, 0.0); n * n],
    };
    for j in 0..n {
        for i in 0..=j {
            let v: Complex64 = m
                .column(i)
                .iter()
                .zip(m.column(j))
                .map(|(a, b)| a.conj() * b)
                .sum();
            g.set(i, j, v);
            g.set(j, i, v.conj());
        }
    }
    g
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi sweeps.
///
/// Returns eigenvalues in descending order and the unitary matrix whose
/// columns are the matching eigenvectors.
pub fn hermitian_eigen(a: &Square) -> (Vec<f64>, Square) {
    let n = a.n;
    let mut a = a.clone();
    let mut v = Square::identity(n);
    let total: f64 = a.data.iter().map(|z| z.norm_sqr()).sum();
    let tol = f64::EPSILON * f64::EPSILON * total.max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        if a.off_diagonal_sq() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                // Phase-align a_pq to a real positive entry, then rotate as in
                // the real symmetric case.
                let phase = apq / mag;
                let app = a.get(p, p).re;
                let aqq = a.get(q, q).re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let e = phase.conj();
                // J restricted to (p, q): [[c, s], [-s e, c e]]
                let jpp = Complex64::new(c, 0.0);
                let jpq = Complex64::new(s, 0.0);
                let jqp = -e * s;
                let jqq = e * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, akp * jpp + akq * jqp);
                    a.set(k, q, akp * jpq + akq * jqq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, jpp.conj() * apk + jqp.conj() * aqk);
                    a.set(q, k, jpq.conj() * apk + jqq.conj() * aqk);
                }
                a.set(p, q, Complex64::new(0.0, 0.0));
                a.set(q, p, Complex64::new(0.0, 0.0));
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, vkp * jpp + vkq * jqp);
                    v.set(k, q, vkp * jpq + vkq * jqq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let evals: Vec<f64> = (0..n).map(|i| a.get(i, i).re).collect();
    order.sort_by(|&i, &j| evals[j].total_cmp(&evals[i]));
    let mut sorted = Square {
        n,
        data: vec![Complex64::new(0.0, 0.0); n * n],
    };
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            sorted.set(k, dst, v.get(k, src));
        }
    }
    (order.iter().map(|&i| evals[i]).collect(), sorted)
}

/// Singular values (descending) and right singular vectors of `m`.
///
/// Each singular value is measured as `||M v_j||` rather than the square root
/// of a Gram eigenvalue, which keeps small values accurate to `eps ||M||`.
pub fn right_singular(m: &CasoratiMatrix) -> (Vec<f64>, Square) {
    let (_, v) = hermitian_eigen(&gram(m));
    let mv = mul_right(m, &v);
    let s = (0..v.n)
        .map(|j| mv.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    (s, v)
}

/// `m * v`, an `rows x v.n` matrix.
pub fn mul_right(m: &CasoratiMatrix, v: &Square) -> CasoratiMatrix {
    let rows = m.rows();
    let mut out = CasoratiMatrix::zeros(rows, v.n);
    for j in 0..v.n {
        let col = out.column_mut(j);
        for k in 0..m.cols() {
            let coef = v.get(k, j);
            if coef == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, x) in col.iter_mut().zip(m.column(k)) {
                *o += x * coef;
            }
        }
    }
    out
}

/// Thin SVD `m = U diag(s) V^H`. Left vectors of zero singular values are
/// left as zero columns.
pub fn svd(m: &CasoratiMatrix) -> (CasoratiMatrix, Vec<f64>, Square) {
    let (s, v) = right_singular(m);
    let mut u = mul_right(m, &v);
    let smax = s.first().copied().unwrap_or(0.0);
    for (j, &sj) in s.iter().enumerate() {
        let col = u.column_mut(j);
        if sj > smax * 1e-14 && sj > 0.0 {
            for z in col.iter_mut() {
                *z /= sj;
            }
        } else {
            col.fill(Complex64::new(0.0, 0.0));
        }
    }
    (u, s, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CasoratiMatrix {
        let mut s = Stream::new(seed, "svd");
        CasoratiMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| s.complex_normal(1.0)).collect()).unwrap()
    }

    #[test]
    fn eigen_reconstructs_gram() {
        let m = random_matrix(20, 6, 1);
        let g = gram(&m);
        let (evals, v) = hermitian_eigen(&g);
        for w in evals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for r in 0..6 {
            for c in 0..6 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..6 {
                    acc += v.get(r, k) * evals[k] * v.get(c, k).conj();
                }
                assert!((acc - g.get(r, c)).norm() < 1e-10, "({r},{c})");
            }
        }
        // V unitary
        for i in 0..6 {
            for j in 0..6 {
                let d: Complex64 = (0..6).map(|k| v.get(k, i).conj() * v.get(k, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn thin_svd_reconstructs() {
        let m = random_matrix(24, 5, 2);
        let (u, s, v) = svd(&m);
        for c in 0..5 {
            for r in 0..24 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..5 {
                    acc += u.get(r, k) * s[k] * v.get(c, k).conj();
                }
                assert!((acc - m.get(r, c)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficient_and_wide() {
        // rank one: outer product
        let mut s = Stream::new(3, "r1");
        let a: Vec<Complex64> = (0..10).map(|_| s.complex_normal(1.0)).collect();
        let b: Vec<Complex64> = (0..4).map(|_| s.complex_normal(1.0)).collect();
        let mut m = CasoratiMatrix::zeros(10, 4);
        for c in 0..4 {
            for r in 0..10 {
                m.set(r, c, a[r] * b[c].conj());
            }
        }
        let (sv, _) = right_singular(&m);
        let na: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((sv[0] - na * nb).abs() < 1e-10);
        assert!(sv[1..].iter().all(|&x| x < 1e-12));

        let wide = random_matrix(2, 5, 4);
        let (sv, _) = right_singular(&wide);
        assert!(sv[2..].iter().all(|&x| x < 1e-12));
    }
}
