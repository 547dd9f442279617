//! Dense linear-algebra helpers: determinants (double and double-double),
//! singular-value rank decisions, complex eigenvectors and polynomial roots.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

/// Arithmetic used by the determinant oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    Double,
    Extended,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Precision> {
        match s.to_ascii_lowercase().as_str() {
            "double" => Ok(Precision::Double),
            "extended" => Ok(Precision::Extended),
            _ => Err(Error::Config(format!("unknown precision '{s}'"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Double => "double",
            Precision::Extended => "extended",
        })
    }
}

/// Complex determinant in the requested arithmetic.
pub fn det_with(m: &CMatrix, precision: Precision) -> Complex64 {
    match precision {
        Precision::Double => det_complex(m),
        Precision::Extended => det_complex_extended(m),
    }
}

/// Determinant by partially pivoted LU in complex doubles.
pub fn det_complex(m: &CMatrix) -> Complex64 {
    assert!(m.is_square());
    if m.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    m.clone().lu().determinant()
}

/// Determinant by partially pivoted LU in real doubles.
pub fn det_real(m: &RMatrix) -> f64 {
    assert!(m.is_square());
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// Singular values, largest first.
pub fn singular_values<T>(m: &DMatrix<T>) -> Vec<f64>
where
    T: ComplexField<RealField = f64>,
{
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank<T>(m: &DMatrix<T>, rel_tol: f64) -> usize
where
    T: ComplexField<RealField = f64>,
{
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

/// `σ_min / σ_max`; zero for an all-zero matrix, one for an empty one.
pub fn spectral_ratio<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&top), Some(&bottom)) if top > 0.0 => bottom / top,
        (Some(_), _) => 0.0,
        _ => 1.0,
    }
}

/// Sum by recursive halving so the rounding pattern is independent of how
/// the terms were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Eigenvalues and unit eigenvectors (columns) of a general complex matrix.
pub fn eigen_complex(m: &CMatrix) -> Result<(Vec<Complex64>, CMatrix)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMatrix::zeros(0, 0)));
    }
    let fm = faer::Mat::<Complex64>::from_fn(n, n, |i, j| m[(i, j)]);
    let evd = fm
        .eigen()
        .map_err(|e| Error::Singular(format!("eigendecomposition failed: {e:?}")))?;
    let lambda: Vec<Complex64> = (0..n).map(|i| evd.S()[i]).collect();
    let u = evd.U();
    let mut v = CMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    for k in 0..n {
        let norm = v.column(k).norm();
        if norm > 0.0 {
            v.column_mut(k).scale_mut(1.0 / norm);
        }
    }
    Ok((lambda, v))
}

/// Roots of the monic polynomial `z^M + c[M-1] z^{M-1} + … + c[0]` with real
/// coefficients, from the companion matrix, then Newton-polished.
pub fn monic_roots(c: &[f64]) -> Vec<Complex64> {
    let m = c.len();
    if m == 0 {
        return Vec::new();
    }
    let mut comp = RMatrix::zeros(m, m);
    for i in 1..m {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..m {
        comp[(i, m - 1)] = -c[i];
    }
    let eig: DVector<Complex64> = comp.complex_eigenvalues();
    eig.iter().map(|&z| polish_root(c, z)).collect()
}

fn polish_root(c: &[f64], mut z: Complex64) -> Complex64 {
    for _ in 0..3 {
        let m = c.len();
        let mut p = Complex64::new(1.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for s in (0..m).rev() {
            dp = dp * z + p;
            p = p * z + c[s];
        }
        if dp.norm() == 0.0 {
            break;
        }
        let step = p / dp;
        if !step.re.is_finite() || !step.im.is_finite() || step.norm() > 1e-3 * z.norm().max(1.0) {
            break;
        }
        z -= step;
    }
    z
}

/// Double-double arithmetic for the extended-precision determinant.
pub mod dd {
    use num_complex::Complex64;
    use std::ops::{Add, Div, Mul, Neg, Sub};

    #[inline]
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    #[inline]
    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    #[inline]
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    /// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
    #[derive(Clone, Copy, Debug, Default, PartialEq)]
    pub struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    impl Dd {
        pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
        pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

        pub fn new(x: f64) -> Dd {
            Dd { hi: x, lo: 0.0 }
        }

        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }

        pub fn abs(self) -> Dd {
            if self.hi < 0.0 {
                -self
            } else {
                self
            }
        }
    }

    impl Add for Dd {
        type Output = Dd;
        fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            let (t, f) = two_sum(self.lo, o.lo);
            let (s, e) = quick_two_sum(s, e + t);
            let (hi, lo) = quick_two_sum(s, e + f);
            Dd { hi, lo }
        }
    }

    impl Neg for Dd {
        type Output = Dd;
        fn neg(self) -> Dd {
            Dd {
                hi: -self.hi,
                lo: -self.lo,
            }
        }
    }

    impl Sub for Dd {
        type Output = Dd;
        fn sub(self, o: Dd) -> Dd {
            self + (-o)
        }
    }

    impl Mul for Dd {
        type Output = Dd;
        fn mul(self, o: Dd) -> Dd {
            let (p, e) = two_prod(self.hi, o.hi);
            let e = e + (self.hi * o.lo + self.lo * o.hi);
            let (hi, lo) = quick_two_sum(p, e);
            Dd { hi, lo }
        }
    }

    impl Div for Dd {
        type Output = Dd;
        fn div(self, o: Dd) -> Dd {
            let q1 = self.hi / o.hi;
            let r = self - o * Dd::new(q1);
            let q2 = r.hi / o.hi;
            let r = r - o * Dd::new(q2);
            let q3 = r.hi / o.hi;
            let (hi, lo) = quick_two_sum(q1, q2);
            Dd { hi, lo } + Dd::new(q3)
        }
    }

    /// Complex number with double-double parts.
    #[derive(Clone, Copy, Debug, Default, PartialEq)]
    pub struct CDd {
        pub re: Dd,
        pub im: Dd,
    }

    impl CDd {
        pub fn from_c64(z: Complex64) -> CDd {
            CDd {
                re: Dd::new(z.re),
                im: Dd::new(z.im),
            }
        }

        pub fn to_c64(self) -> Complex64 {
            Complex64::new(self.re.to_f64(), self.im.to_f64())
        }

        pub fn norm1(self) -> f64 {
            self.re.to_f64().abs() + self.im.to_f64().abs()
        }
    }

    impl Add for CDd {
        type Output = CDd;
        fn add(self, o: CDd) -> CDd {
            CDd {
                re: self.re + o.re,
                im: self.im + o.im,
            }
        }
    }

    impl Sub for CDd {
        type Output = CDd;
        fn sub(self, o: CDd) -> CDd {
            CDd {
                re: self.re - o.re,
                im: self.im - o.im,
            }
        }
    }

    impl Neg for CDd {
        type Output = CDd;
        fn neg(self) -> CDd {
            CDd {
                re: -self.re,
                im: -self.im,
            }
        }
    }

    impl Mul for CDd {
        type Output = CDd;
        fn mul(self, o: CDd) -> CDd {
            CDd {
                re: self.re * o.re - self.im * o.im,
                im: self.re * o.im + self.im * o.re,
            }
        }
    }

    impl Div for CDd {
        type Output = CDd;
        fn div(self, o: CDd) -> CDd {
            let den = o.re * o.re + o.im * o.im;
            let num = CDd {
                re: self.re * o.re + self.im * o.im,
                im: self.im * o.re - self.re * o.im,
            };
            CDd {
                re: num.re / den,
                im: num.im / den,
            }
        }
    }
}

/// Determinant by partially pivoted LU carried out in double-double.
pub fn det_complex_extended(m: &CMatrix) -> Complex64 {
    use dd::CDd;
    assert!(m.is_square());
    let n = m.nrows();
    let mut a: Vec<Vec<CDd>> = (0..n)
        .map(|i| (0..n).map(|j| CDd::from_c64(m[(i, j)])).collect())
        .collect();
    let mut det = CDd::from_c64(Complex64::new(1.0, 0.0));
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&x, &y| a[x][k].norm1().total_cmp(&a[y][k].norm1()))
            .unwrap();
        if a[piv][k].norm1() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != k {
            a.swap(piv, k);
            det = -det;
        }
        let p = a[k][k];
        det = det * p;
        for i in k + 1..n {
            let f = a[i][k] / p;
            for j in k + 1..n {
                let t = f * a[k][j];
                a[i][j] = a[i][j] - t;
            }
        }
    }
    det.to_c64()
}

/// Solves `A x = b` for real square `A`, refusing numerically singular input.
pub struct RealSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl RealSolver {
    pub fn new(a: &RMatrix, rel_tol: f64) -> Result<RealSolver> {
        let ratio = spectral_ratio(a);
        if a.nrows() > 0 && ratio < rel_tol {
            return Err(Error::Singular(format!(
                "spectral ratio {ratio:.3e} below tolerance {rel_tol:.1e}"
            )));
        }
        Ok(RealSolver { lu: a.clone().lu() })
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.is_empty() {
            return Ok(b.clone());
        }
        self.lu
            .solve(b)
            .ok_or_else(|| Error::Singular("LU solve failed".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rank_examples() {
        let id = RMatrix::identity(3, 3);
        assert_eq!(numerical_rank(&id, 1e-8), 3);
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let outer = &u * u.transpose();
        assert_eq!(numerical_rank(&outer, 1e-8), 1);
        assert_eq!(numerical_rank(&RMatrix::zeros(3, 3), 1e-8), 0);
    }

    #[test]
    fn extended_det_matches_double() {
        let m = CMatrix::from_fn(5, 5, |i, j| {
            Complex64::from_polar(1.0, 0.37 * (i * j) as f64 + 0.11 * i as f64)
        });
        let a = det_complex(&m);
        let b = det_complex_extended(&m);
        assert!((a - b).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn dd_division_keeps_low_word() {
        use dd::Dd;
        let third = Dd::ONE / Dd::new(3.0);
        let back = third * Dd::new(3.0);
        assert!((back - Dd::ONE).to_f64().abs() < 1e-30);
    }

    #[test]
    fn eigen_of_diagonalizable_matrix() {
        let d = CMatrix::from_diagonal(&DVector::from_vec(vec![c(0.0, 1.0), c(-1.0, 0.0), c(0.5, 0.5)]));
        let p = CMatrix::from_fn(3, 3, |i, j| c(if i == j { 3.0 } else { 0.5 + 0.1 * (i + j) as f64 }, 0.2 * (i as f64 - j as f64)));
        let m = &p * d * p.clone().try_inverse().unwrap();
        let (lam, v) = eigen_complex(&m).unwrap();
        for k in 0..3 {
            let r = &m * v.column(k) - v.column(k) * lam[k];
            assert!(r.norm() < 1e-10);
        }
    }

    #[test]
    fn companion_roots() {
        let r = monic_roots(&[1.0, 0.0]);
        let mut args: Vec<f64> = r.iter().map(|z| z.arg()).collect();
        args.sort_by(f64::total_cmp);
        assert!((args[0] + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((args[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let r = monic_roots(&[1.0]);
        assert!((r[0] - c(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn pairwise_sum_small() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0, 4.0, 5.0]), 15.0);
    }
}
