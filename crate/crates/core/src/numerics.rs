//! Small dense complex kernels and the DFT convention used everywhere else.
//!
//! Forward transform: `X(f) = sum_n x(n) exp(-j 2 pi f n / F)`.
//! Inverse transform: `x(n) = (1/F) sum_f X(f) exp(+j 2 pi f n / F)`.
//!
//! Bins are stored `0..F`; negative frequencies live in the upper half.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Tolerance for treating a matrix as Hermitian in checked kernels.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense complex vector. Never empty.
#[derive(Clone, PartialEq)]
pub struct ComplexVector(Vec<C64>);

impl ComplexVector {
    pub fn new(entries: Vec<C64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("complex vector must be non-empty"));
        }
        Ok(Self(entries))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "complex vector must be non-empty");
        Self(vec![ZERO; len])
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }
}

impl fmt::Debug for ComplexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl std::ops::Index<usize> for ComplexVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.0[i]
    }
}

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(scale, 0.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.get(r, c).conj();
            }
        }
        out
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::dims(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == ZERO {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(r);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dims("matrix subtraction shape mismatch"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest `|A(a,b) - conj(A(b,a))|` relative to the largest entry.
    pub fn hermitian_defect(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in a..n {
                worst = worst.max((self.get(a, b) - self.get(b, a).conj()).norm());
            }
        }
        worst / scale
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermitian_defect() <= rel_tol
    }

    /// Replace with `(A + A^H) / 2`.
    pub fn hermitianize(&mut self) {
        let n = self.rows;
        debug_assert_eq!(n, self.cols);
        for a in 0..n {
            let d = self.get(a, a);
            self.set(a, a, C64::new(d.re, 0.0));
            for b in a + 1..n {
                let v = (self.get(a, b) + self.get(b, a).conj()) * 0.5;
                self.set(a, b, v);
                self.set(b, a, v.conj());
            }
        }
    }

    /// Determinant by partial-pivot LU. Intended for the small N x N
    /// separation matrices.
    pub fn determinant(&self) -> Result<C64> {
        if self.rows != self.cols {
            return Err(Error::dims("determinant of a non-square matrix"));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = ONE;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x * n + col].norm().total_cmp(&a[y * n + col].norm()))
                .unwrap();
            if a[pivot * n + col] == ZERO {
                return Ok(ZERO);
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot * n + c);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for r in col + 1..n {
                let factor = a[r * n + col] / p;
                for c in col..n {
                    let v = a[col * n + c];
                    a[r * n + c] -= factor * v;
                }
            }
        }
        Ok(det)
    }

    /// Inverse by Gauss-Jordan with partial pivoting.
    pub fn inverse(&self) -> Result<ComplexMatrix> {
        if self.rows != self.cols {
            return Err(Error::dims("inverse of a non-square matrix"));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut inv = Self::identity(n).data;
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x * n + col].norm().total_cmp(&a[y * n + col].norm()))
                .unwrap();
            if a[pivot * n + col].norm() <= 1e-300 * scale {
                return Err(Error::DecompositionFailure("singular matrix".into()));
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot * n + c);
                    inv.swap(col * n + c, pivot * n + c);
                }
            }
            let p = a[col * n + col].inv();
            for c in 0..n {
                a[col * n + c] *= p;
                inv[col * n + c] *= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == ZERO {
                    continue;
                }
                for c in 0..n {
                    let av = a[col * n + c];
                    let iv = inv[col * n + c];
                    a[r * n + c] -= factor * av;
                    inv[r * n + c] -= factor * iv;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: n,
            data: inv,
        })
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// `A v`.
pub fn mat_vec(a: &ComplexMatrix, v: &ComplexVector) -> Result<ComplexVector> {
    if a.cols() != v.len() {
        return Err(Error::dims(format!(
            "{}x{} matrix times vector of length {}",
            a.rows(),
            a.cols(),
            v.len()
        )));
    }
    let out = (0..a.rows())
        .map(|r| a.row(r).iter().zip(v.as_slice()).map(|(x, y)| x * y).sum())
        .collect();
    ComplexVector::new(out)
}

/// `q^H U q` for Hermitian `U`, returned as a real number.
pub fn hermitian_quadratic(q: &ComplexVector, u: &ComplexMatrix) -> Result<f64> {
    if u.rows() != q.len() || u.cols() != q.len() {
        return Err(Error::dims(format!(
            "quadratic form of length-{} vector with {}x{} matrix",
            q.len(),
            u.rows(),
            u.cols()
        )));
    }
    let defect = u.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NumericalContract(format!(
            "matrix is not Hermitian (relative defect {defect:.3e})"
        )));
    }
    let q = q.as_slice();
    let mut acc = ZERO;
    let mut magnitude = 0.0;
    for (a, qa) in q.iter().enumerate() {
        for (b, qb) in q.iter().enumerate() {
            let term = qa.conj() * u.get(a, b) * qb;
            magnitude += term.norm();
            acc += term;
        }
    }
    if acc.im.abs() > 1e-10 * magnitude.max(f64::MIN_POSITIVE) {
        return Err(Error::NumericalContract(format!(
            "quadratic form has imaginary residue {:.3e}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// Solve `A X = B` for Hermitian positive-definite `A` by Cholesky.
///
/// A pivot below `1e-12 * trace(A)` is reported as a decomposition failure.
pub fn solve_hermitian(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::dims(format!(
            "solve with {}x{} system and {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let trace = a.trace().re;
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::DecompositionFailure(
            "matrix trace is not positive".into(),
        ));
    }
    let threshold = 1e-12 * trace;
    // Lower-triangular factor, A = L L^H.
    let mut l = vec![ZERO; n * n];
    for j in 0..n {
        let mut d = a.get(j, j).re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if d.is_nan() || d < threshold {
            return Err(Error::DecompositionFailure(format!(
                "pivot {d:.3e} at column {j} below {threshold:.3e}"
            )));
        }
        let d = d.sqrt();
        l[j * n + j] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / d;
        }
    }
    let m = b.cols();
    let mut x = b.clone();
    for c in 0..m {
        // forward: L y = b
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l[i * n + k] * x.get(k, c);
            }
            x.set(i, c, s / l[i * n + i].re);
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in i + 1..n {
                s -= l[k * n + i].conj() * x.get(k, c);
            }
            x.set(i, c, s / l[i * n + i].re);
        }
    }
    Ok(x)
}

/// Planned power-of-two DFT pair sharing one FFT plan.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Dft {
    pub fn new(len: usize) -> Result<Self> {
        if !len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "DFT length {len} is not a power of two"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward_in_place(&self, buf: &mut [C64]) {
        assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
    }

    /// Inverse transform including the `1/F` factor.
    pub fn inverse_in_place(&self, buf: &mut [C64]) {
        assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
        let s = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

impl fmt::Debug for Dft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

/// Fill a full length-F spectrum from its one-sided half (bins `0..=F/2`)
/// by conjugate symmetry.
pub fn extend_conjugate_symmetric(half: &[C64], full: &mut [C64]) {
    let n = full.len();
    debug_assert_eq!(half.len(), n / 2 + 1);
    full[..half.len()].copy_from_slice(half);
    for f in 1..n / 2 {
        full[n - f] = half[f].conj();
    }
}

pub fn forward_dft(v: &ComplexVector) -> Result<ComplexVector> {
    let dft = Dft::new(v.len())?;
    let mut buf = v.as_slice().to_vec();
    dft.forward_in_place(&mut buf);
    ComplexVector::new(buf)
}

pub fn inverse_dft(v: &ComplexVector) -> Result<ComplexVector> {
    let dft = Dft::new(v.len())?;
    let mut buf = v.as_slice().to_vec();
    dft.inverse_in_place(&mut buf);
    ComplexVector::new(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_hpd(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        let b = ComplexMatrix::from_rows(n, n, random_vec(rng, n * n)).unwrap();
        let mut a = b.matmul(&b.adjoint()).unwrap();
        for i in 0..n {
            let d = a.get(i, i);
            a.set(i, i, d + c(0.1, 0.0));
        }
        a.hermitianize();
        a
    }

    #[test]
    fn mat_vec_small_cases() {
        let v = ComplexVector::new(vec![c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        assert_eq!(mat_vec(&ComplexMatrix::identity(2), &v).unwrap(), v);
        let z = mat_vec(&ComplexMatrix::zeros(2, 2), &v).unwrap();
        assert_eq!(z.as_slice(), &[ZERO, ZERO]);
        let perm = ComplexMatrix::from_rows(2, 2, vec![ZERO, ONE, ONE, ZERO]).unwrap();
        let ab = ComplexVector::new(vec![c(1.0, 2.0), c(-3.0, 0.5)]).unwrap();
        let ba = mat_vec(&perm, &ab).unwrap();
        assert_eq!(ba.as_slice(), &[c(-3.0, 0.5), c(1.0, 2.0)]);
    }

    #[test]
    fn mat_vec_rejects_bad_shape() {
        let v = ComplexVector::zeros(3);
        assert!(matches!(
            mat_vec(&ComplexMatrix::identity(2), &v),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn quadratic_form_cases() {
        let e1 = ComplexVector::new(vec![ONE, ZERO]).unwrap();
        let id = ComplexMatrix::identity(2);
        assert_eq!(hermitian_quadratic(&e1, &id).unwrap(), 1.0);
        let q2 = ComplexVector::new(vec![c(2.0, 0.0), ZERO]).unwrap();
        assert_eq!(hermitian_quadratic(&q2, &id).unwrap(), 4.0);
    }

    #[test]
    fn quadratic_form_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..6 {
            let u = random_hpd(&mut rng, n);
            let q = ComplexVector::new(random_vec(&mut rng, n)).unwrap();
            let mut brute = ZERO;
            for a in 0..n {
                for b in 0..n {
                    brute += q[a].conj() * u.get(a, b) * q[b];
                }
            }
            let got = hermitian_quadratic(&q, &u).unwrap();
            assert!((got - brute.re).abs() <= 1e-12 * brute.re.abs().max(1.0));
        }
    }

    #[test]
    fn quadratic_form_rejects_non_hermitian() {
        let u = ComplexMatrix::from_rows(2, 2, vec![ONE, c(0.5, 0.0), ZERO, ONE]).unwrap();
        let q = ComplexVector::new(vec![ONE, ONE]).unwrap();
        assert!(matches!(
            hermitian_quadratic(&q, &u),
            Err(Error::NumericalContract(_))
        ));
    }

    #[test]
    fn solve_identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ComplexMatrix::from_rows(3, 2, random_vec(&mut rng, 6)).unwrap();
        let x = solve_hermitian(&ComplexMatrix::identity(3), &b).unwrap();
        assert!(x.sub(&b).unwrap().frobenius() < 1e-15);

        let x = solve_hermitian(
            &ComplexMatrix::scaled_identity(2, 2.0),
            &ComplexMatrix::identity(2),
        )
        .unwrap();
        assert!(
            x.sub(&ComplexMatrix::scaled_identity(2, 0.5))
                .unwrap()
                .frobenius()
                < 1e-15
        );
    }

    #[test]
    fn solve_rejects_indefinite() {
        let a = ComplexMatrix::from_rows(2, 2, vec![ONE, c(2.0, 0.0), c(2.0, 0.0), ONE]).unwrap();
        assert!(matches!(
            solve_hermitian(&a, &ComplexMatrix::identity(2)),
            Err(Error::DecompositionFailure(_))
        ));
        let singular = ComplexMatrix::from_rows(2, 2, vec![ONE, ONE, ONE, ONE]).unwrap();
        assert!(solve_hermitian(&singular, &ComplexMatrix::identity(2)).is_err());
    }

    #[test]
    fn inverse_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = ComplexMatrix::from_rows(3, 3, random_vec(&mut rng, 9)).unwrap();
        let inv = a.inverse().unwrap();
        let prod = a.matmul(&inv).unwrap();
        assert!(prod.sub(&ComplexMatrix::identity(3)).unwrap().frobenius() < 1e-12);
        let m = ComplexMatrix::from_rows(2, 2, vec![c(1.0, 1.0), c(2.0, 0.0), c(0.0, 1.0), c(3.0, -1.0)])
            .unwrap();
        let expect = c(1.0, 1.0) * c(3.0, -1.0) - c(2.0, 0.0) * c(0.0, 1.0);
        assert!((m.determinant().unwrap() - expect).norm() < 1e-14);
    }

    #[test]
    fn dft_impulse_and_flat() {
        let imp = ComplexVector::new(vec![ONE, ZERO, ZERO, ZERO]).unwrap();
        assert_eq!(forward_dft(&imp).unwrap().as_slice(), &[ONE; 4]);
        let flat = ComplexVector::new(vec![ONE; 4]).unwrap();
        let back = inverse_dft(&flat).unwrap();
        for (k, v) in back.as_slice().iter().enumerate() {
            let expect = if k == 0 { ONE } else { ZERO };
            assert!((v - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn dft_rejects_non_power_of_two() {
        assert!(matches!(
            forward_dft(&ComplexVector::zeros(6)),
            Err(Error::InvalidInput(_))
        ));
    }

    proptest! {
        #[test]
        fn solve_reproduces_rhs(seed in 0u64..10_000, n in 1usize..21, m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_hpd(&mut rng, n);
            let b = ComplexMatrix::from_rows(n, m, random_vec(&mut rng, n * m)).unwrap();
            let x = solve_hermitian(&a, &b).unwrap();
            let resid = a.matmul(&x).unwrap().sub(&b).unwrap().frobenius() / b.frobenius();
            prop_assert!(resid < 1e-8, "residual {resid}");
        }

        #[test]
        fn dft_roundtrip_parseval_linearity(seed in 0u64..10_000, log_len in 0u32..11) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1usize << log_len;
            let u = ComplexVector::new(random_vec(&mut rng, n)).unwrap();
            let v = ComplexVector::new(random_vec(&mut rng, n)).unwrap();
            let fu = forward_dft(&u).unwrap();
            let back = inverse_dft(&fu).unwrap();
            let err: f64 = back.as_slice().iter().zip(u.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
            prop_assert!(err.sqrt() <= 1e-12 * u.norm_sqr().sqrt());

            let parseval = fu.norm_sqr() / n as f64;
            prop_assert!((parseval - u.norm_sqr()).abs() <= 1e-10 * u.norm_sqr());

            let (a, b) = (c(0.3, -1.2), c(-2.0, 0.7));
            let mix = ComplexVector::new(
                u.as_slice().iter().zip(v.as_slice()).map(|(x, y)| a * x + b * y).collect(),
            ).unwrap();
            let fmix = forward_dft(&mix).unwrap();
            let fv = forward_dft(&v).unwrap();
            let scale = fmix.norm_sqr().sqrt().max(1.0);
            for k in 0..n {
                let expect = a * fu[k] + b * fv[k];
                prop_assert!((fmix[k] - expect).norm() <= 1e-12 * scale);
            }
        }
    }
}
