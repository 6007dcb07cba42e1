//! Fixed-size linear algebra for 3- and 4-dimensional model coordinates.
//!
//! Everything here is generic over the scalar type through [`Real`], so the
//! same code runs in `f64` for rendering and validation and in `f32` for
//! quick previews.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

use crate::error::{Error, Result};

/// Floating point scalar usable by the geometry core.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every literal in this crate is representable.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits the scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Returns `Err(NumericFailure)` when `x` is NaN or infinite.
#[inline]
pub fn finite<T: Real>(x: T, what: &'static str) -> Result<T> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NumericFailure(what))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vector<T, const N: usize>(pub [T; N]);

pub type Vec3<T> = Vector<T, 3>;
pub type Vec4<T> = Vector<T, 4>;

impl<T: Real> Vector<T, 3> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vector([x, y, z])
    }

    pub fn cross(&self, o: &Self) -> Self {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vector([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    /// Pads with a fourth component.
    #[inline]
    pub fn extend(&self, w: T) -> Vec4<T> {
        Vector([self.0[0], self.0[1], self.0[2], w])
    }
}

impl<T: Real> Vector<T, 4> {
    #[inline]
    pub fn new(x: T, y: T, z: T, w: T) -> Self {
        Vector([x, y, z, w])
    }

    /// First three components.
    #[inline]
    pub fn xyz(&self) -> Vec3<T> {
        Vector([self.0[0], self.0[1], self.0[2]])
    }
}

impl<T: Real, const N: usize> Vector<T, N> {
    #[inline]
    pub fn zero() -> Self {
        Vector([T::zero(); N])
    }

    #[inline]
    pub fn unit(axis: usize) -> Self {
        let mut v = [T::zero(); N];
        v[axis] = T::one();
        Vector(v)
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.0
            .iter()
            .zip(o.0.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > T::zero() && n.is_finite()).then(|| *self / n)
    }

    #[inline]
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Vector(self.0.map(f))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        self.0
            .iter()
            .zip(o.0.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Real>(&self) -> Vector<U, N> {
        Vector(self.0.map(|x| U::lit(x.as_f64())))
    }

    pub fn check_finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NumericFailure(what))
        }
    }
}

impl<T: Real, const N: usize> From<[T; N]> for Vector<T, N> {
    fn from(a: [T; N]) -> Self {
        Vector(a)
    }
}

impl<T, const N: usize> Index<usize> for Vector<T, N> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T, const N: usize> IndexMut<usize> for Vector<T, N> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real, const N: usize> Add for Vector<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vector(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl<T: Real, const N: usize> Sub for Vector<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vector(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl<T: Real, const N: usize> Neg for Vector<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.map(|x| -x)
    }
}

impl<T: Real, const N: usize> Mul<T> for Vector<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.map(|x| x * s)
    }
}

impl<T: Real, const N: usize> Div<T> for Vector<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        self.map(|x| x / s)
    }
}

impl<T: Real, const N: usize> AddAssign for Vector<T, N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real, const N: usize> SubAssign for Vector<T, N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

/// Lorentzian product `u_x v_x + u_y v_y + u_z v_z - u_w v_w`.
#[inline]
pub fn lorentz_dot<T: Real>(u: &Vec4<T>, v: &Vec4<T>) -> T {
    u[0] * v[0] + u[1] * v[1] + u[2] * v[2] - u[3] * v[3]
}

/// Lorentzian product on `R^{N-1,1}`, last coordinate timelike.
#[inline]
pub fn lorentz_dot_n<T: Real, const N: usize>(u: &Vector<T, N>, v: &Vector<T, N>) -> T {
    u.dot(v) - (u[N - 1] * v[N - 1] + u[N - 1] * v[N - 1])
}

/// Square matrix stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix<T, const N: usize>(pub [[T; N]; N]);

pub type Mat3<T> = Matrix<T, 3>;
pub type Mat4<T> = Matrix<T, 4>;

impl<T: Real, const N: usize> Matrix<T, N> {
    pub fn zero() -> Self {
        Matrix([[T::zero(); N]; N])
    }

    pub fn identity() -> Self {
        Self::from_diagonal([T::one(); N])
    }

    pub fn from_diagonal(d: [T; N]) -> Self {
        let mut m = Self::zero();
        for (i, &x) in d.iter().enumerate() {
            m.0[i][i] = x;
        }
        m
    }

    pub fn from_columns(cols: [Vector<T, N>; N]) -> Self {
        Matrix(std::array::from_fn(|i| std::array::from_fn(|j| cols[j][i])))
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vector<T, N> {
        Vector(self.0[i])
    }

    #[inline]
    pub fn column(&self, j: usize) -> Vector<T, N> {
        Vector(std::array::from_fn(|i| self.0[i][j]))
    }

    pub fn transpose(&self) -> Self {
        Matrix(std::array::from_fn(|i| std::array::from_fn(|j| self.0[j][i])))
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vector<T, N>) -> Vector<T, N> {
        Vector(std::array::from_fn(|i| self.row(i).dot(v)))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        Matrix(std::array::from_fn(|i| {
            std::array::from_fn(|j| (0..N).fold(T::zero(), |acc, k| acc + self.0[i][k] * o.0[k][j]))
        }))
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix(self.0.map(|r| r.map(|x| x * s)))
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut m = T::zero();
        for i in 0..N {
            for j in 0..N {
                m = m.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|r| r.iter().all(|x| x.is_finite()))
    }

    /// Gaussian elimination with partial pivoting; returns `(det, inverse)`.
    /// The inverse is `None` when a pivot vanishes.
    fn eliminate(&self) -> (T, Option<Self>) {
        let mut a = self.0;
        let mut inv = Self::identity().0;
        let mut det = T::one();
        for col in 0..N {
            let pivot = (col..N)
                .max_by(|&r, &s| {
                    a[r][col]
                        .abs()
                        .partial_cmp(&a[s][col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            if a[pivot][col] == T::zero() || !a[pivot][col].is_finite() {
                return (T::zero(), None);
            }
            if pivot != col {
                a.swap(pivot, col);
                inv.swap(pivot, col);
                det = -det;
            }
            let p = a[col][col];
            det = det * p;
            for j in 0..N {
                a[col][j] = a[col][j] / p;
                inv[col][j] = inv[col][j] / p;
            }
            for r in 0..N {
                if r != col {
                    let f = a[r][col];
                    if f != T::zero() {
                        for j in 0..N {
                            a[r][j] = a[r][j] - f * a[col][j];
                            inv[r][j] = inv[r][j] - f * inv[col][j];
                        }
                    }
                }
            }
        }
        (det, Some(Matrix(inv)))
    }

    pub fn determinant(&self) -> T {
        self.eliminate().0
    }

    pub fn inverse(&self) -> Option<Self> {
        self.eliminate().1
    }

    pub fn cast<U: Real>(&self) -> Matrix<U, N> {
        Matrix(self.0.map(|r| r.map(|x| U::lit(x.as_f64()))))
    }
}

impl<T: Real, const N: usize> Mul for Matrix<T, N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.mul_mat(&o)
    }
}

/// Solves the square system `a x = b`.
pub fn solve<T: Real, const N: usize>(a: &Matrix<T, N>, b: &Vector<T, N>) -> Option<Vector<T, N>> {
    a.inverse().map(|inv| inv.mul_vec(b)).filter(|x| x.is_finite())
}

/// Generalized cross product: the vector `x` with `x_i = det[e_i; a; b; c]`.
/// It is Euclidean-orthogonal to `a`, `b` and `c`.
pub fn cross4<T: Real>(a: &Vec4<T>, b: &Vec4<T>, c: &Vec4<T>) -> Vec4<T> {
    Vector(std::array::from_fn(|i| {
        let mut m = Matrix([[T::zero(); 4]; 4]);
        m.0[0] = Vec4::<T>::unit(i).0;
        m.0[1] = a.0;
        m.0[2] = b.0;
        m.0[3] = c.0;
        m.determinant()
    }))
}

/// Symmetric bilinear form, e.g. a metric tensor `[g_ij]` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearForm<T, const N: usize>(Matrix<T, N>);

impl<T: Real, const N: usize> BilinearForm<T, N> {
    /// Wraps a matrix, symmetrizing it. Rejects asymmetry beyond `1e-12` relative.
    pub fn new(m: Matrix<T, N>) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::NumericFailure("non-finite bilinear form"));
        }
        let scale = (0..N)
            .flat_map(|i| (0..N).map(move |j| (i, j)))
            .fold(T::one(), |s, (i, j)| s.max(m.0[i][j].abs()));
        let mut sym = m;
        for i in 0..N {
            for j in (i + 1)..N {
                if (m.0[i][j] - m.0[j][i]).abs() > T::lit(1e-12) * scale {
                    return Err(Error::NumericFailure("asymmetric bilinear form"));
                }
                let avg = (m.0[i][j] + m.0[j][i]) / T::lit(2.0);
                sym.0[i][j] = avg;
                sym.0[j][i] = avg;
            }
        }
        Ok(BilinearForm(sym))
    }

    pub fn identity() -> Self {
        BilinearForm(Matrix::identity())
    }

    pub fn diagonal(d: [T; N]) -> Self {
        BilinearForm(Matrix::from_diagonal(d))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix<T, N> {
        &self.0
    }

    #[inline]
    pub fn dot(&self, u: &Vector<T, N>, v: &Vector<T, N>) -> T {
        u.dot(&self.0.mul_vec(v))
    }

    #[inline]
    pub fn norm_squared(&self, u: &Vector<T, N>) -> T {
        self.dot(u, u)
    }

    pub fn determinant(&self) -> T {
        self.0.determinant()
    }

    pub fn inverse(&self) -> Result<Matrix<T, N>> {
        let det = self.determinant();
        if det.abs() < T::lit(1e-12) {
            return Err(Error::SingularMetric { det: det.as_f64() });
        }
        self.0
            .inverse()
            .ok_or(Error::SingularMetric { det: det.as_f64() })
    }

    /// Index raising: `g^{-1} c` for a covector `c`.
    pub fn raise(&self, c: &Vector<T, N>) -> Result<Vector<T, N>> {
        Ok(self.inverse()?.mul_vec(c))
    }
}

/// `sum_ij g_ij u_i v_j`.
#[inline]
pub fn metric_dot<T: Real, const N: usize>(g: &BilinearForm<T, N>, u: &Vector<T, N>, v: &Vector<T, N>) -> T {
    g.dot(u, v)
}

/// An ordered tangent frame at a base point.
///
/// `signs[i]` is `g(v_i, v_i)` after normalization: always `+1` for Riemannian
/// metrics, possibly `-1` for the indefinite trace form used by SL2(R).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame<T, const N: usize> {
    pub base: Vector<T, N>,
    pub vectors: [Vector<T, N>; 3],
    pub signs: [T; 3],
}

impl<T: Real, const N: usize> Frame<T, N> {
    /// `max |g(v_i, v_j) - s_i δ_ij|`.
    pub fn orthonormality_residual(&self, g: &BilinearForm<T, N>) -> T {
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { self.signs[i] } else { T::zero() };
                worst = worst.max((g.dot(&self.vectors[i], &self.vectors[j]) - target).abs());
            }
        }
        worst
    }
}

/// Volume spanned by three vectors in the ambient Euclidean inner product.
fn euclidean_volume<T: Real, const N: usize>(v: &[Vector<T, N>; 3]) -> T {
    let gram = Matrix::<T, 3>(std::array::from_fn(|i| std::array::from_fn(|j| v[i].dot(&v[j]))));
    gram.determinant().max(T::zero()).sqrt()
}

/// Orthonormalizes three vectors under `g`, preserving the direction of the first.
pub fn gram_schmidt<T: Real, const N: usize>(
    g: &BilinearForm<T, N>,
    base: Vector<T, N>,
    vectors: [Vector<T, N>; 3],
) -> Result<Frame<T, N>> {
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite frame input"));
    }
    if euclidean_volume(&vectors) < T::lit(1e-10) {
        return Err(Error::DegenerateFrame);
    }
    let mut out = [Vector::<T, N>::zero(); 3];
    let mut signs = [T::one(); 3];
    for i in 0..3 {
        let mut v = vectors[i];
        // two passes keep the residual at roundoff level
        for _ in 0..2 {
            for j in 0..i {
                let c = g.dot(&v, &out[j]) * signs[j];
                v = v - out[j] * c;
            }
        }
        let q = g.norm_squared(&v);
        let scale = vectors[i].norm_squared().max(T::min_positive_value());
        if q.abs() < T::lit(1e-12) * scale {
            return Err(Error::DegenerateFrame);
        }
        signs[i] = q.signum();
        out[i] = v / q.abs().sqrt();
    }
    Ok(Frame {
        base,
        vectors: out,
        signs,
    })
}

/// `Γ[k][i][j]`, symmetric in the lower indices `i, j`.
pub type Christoffel<T> = [[[T; 3]; 3]; 3];

/// Christoffel symbols of a metric field by central differences of step `h`:
/// `Γ^k_ij = ½ g^{kl} (∂_i g_jl + ∂_j g_il − ∂_l g_ij)`.
pub fn christoffel_numeric<T, F>(metric: F, p: &Vec3<T>, h: T) -> Result<Christoffel<T>>
where
    T: Real,
    F: Fn(&Vec3<T>) -> Result<BilinearForm<T, 3>>,
{
    let sample = |q: &Vec3<T>| -> Result<BilinearForm<T, 3>> {
        let g = metric(q)?;
        let det = g.determinant();
        if det.abs() < T::lit(1e-12) || !det.is_finite() {
            return Err(Error::SingularMetric { det: det.as_f64() });
        }
        Ok(g)
    };
    let g_inv = sample(p)?.inverse()?;
    // dg[l][i][j] = ∂_l g_ij
    let mut dg = [[[T::zero(); 3]; 3]; 3];
    let two_h = h + h;
    for (l, dgl) in dg.iter_mut().enumerate() {
        let step = Vec3::<T>::unit(l) * h;
        let plus = sample(&(*p + step))?;
        let minus = sample(&(*p - step))?;
        for i in 0..3 {
            for j in 0..3 {
                dgl[i][j] = (plus.matrix().0[i][j] - minus.matrix().0[i][j]) / two_h;
            }
        }
    }
    let half = T::lit(0.5);
    let mut gamma = [[[T::zero(); 3]; 3]; 3];
    for (k, gk) in gamma.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for l in 0..3 {
                    s = s + g_inv.0[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                }
                gk[i][j] = finite(half * s, "christoffel symbol")?;
            }
        }
    }
    Ok(gamma)
}

/// `-Σ Γ^k_ij y_i w_j`, the geodesic-flow acceleration when `w = y`.
pub fn contract_christoffel<T: Real>(gamma: &Christoffel<T>, y: &Vec3<T>, w: &Vec3<T>) -> Vec3<T> {
    Vector(std::array::from_fn(|k| {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s = s + gamma[k][i][j] * y[i] * w[j];
            }
        }
        -s
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nil_form(p: &Vec3<f64>) -> Result<BilinearForm<f64, 3>> {
        let x = p[0];
        BilinearForm::new(Matrix([[1.0, 0.0, 0.0], [0.0, x * x + 1.0, -x], [0.0, -x, 1.0]]))
    }

    fn sol_form(p: &Vec3<f64>) -> Result<BilinearForm<f64, 3>> {
        let z = p[2];
        Ok(BilinearForm::diagonal([(2.0 * z).exp(), (-2.0 * z).exp(), 1.0]))
    }

    #[test]
    fn lorentz_dot_examples() {
        let e1 = Vec4::new(1.0, 0.0, 0.0, 0.0);
        let e4 = Vec4::new(0.0, 0.0, 0.0, 1.0);
        let null = Vec4::new(1.0, 0.0, 0.0, 1.0);
        assert_eq!(lorentz_dot(&e1, &e1), 1.0);
        assert_eq!(lorentz_dot(&e4, &e4), -1.0);
        assert_eq!(lorentz_dot(&null, &null), 0.0);
        let v3 = Vec3::new(0.0, 0.0, 2.0);
        assert_eq!(lorentz_dot_n(&v3, &v3), -4.0);
    }

    #[test]
    fn metric_dot_examples() {
        let e1 = Vec3::new(1.0, 0.0, 0.0);
        let e2 = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(metric_dot(&BilinearForm::identity(), &e1, &e1), 1.0);
        let g = nil_form(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(metric_dot(&g, &e2, &e2), 2.0);
        let g = sol_form(&Vec3::new(0.0, 0.0, 2f64.ln())).unwrap();
        assert!((metric_dot(&g, &e1, &e1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_form_rejected() {
        let m = Matrix([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(BilinearForm::new(m).is_err());
    }

    #[test]
    fn gram_schmidt_identity_keeps_standard_basis() {
        let basis = [Vec3::unit(0), Vec3::unit(1), Vec3::unit(2)];
        let f = gram_schmidt(&BilinearForm::<f64, 3>::identity(), Vec3::zero(), basis).unwrap();
        assert_eq!(f.vectors, basis);
    }

    #[test]
    fn gram_schmidt_nil_frame_is_orthonormal() {
        let p = Vec3::new(1.0, 0.0, 0.0);
        let g = nil_form(&p).unwrap();
        let f = gram_schmidt(&g, p, [Vec3::unit(0), Vec3::unit(1), Vec3::unit(2)]).unwrap();
        assert!(f.orthonormality_residual(&g) < 1e-12);
        // e2 has g-norm √2 at this point
        assert!((f.vectors[1][1] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(f.vectors[0], Vec3::unit(0));
    }

    #[test]
    fn gram_schmidt_collinear_is_degenerate() {
        let g = BilinearForm::<f64, 3>::identity();
        let v = Vec3::new(1.0, 2.0, 3.0);
        let r = gram_schmidt(&g, Vec3::zero(), [v, v * 2.0, Vec3::unit(0)]);
        assert_eq!(r, Err(Error::DegenerateFrame));
    }

    #[test]
    fn gram_schmidt_indefinite_form_records_signs() {
        // trace form of sl2 at the identity: signature (+, +, -)
        let g = BilinearForm::new(Matrix([[2.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])).unwrap();
        let f = gram_schmidt(&g, Vec3::zero(), [Vec3::unit(0), Vec3::new(0.0, 1.0, 1.0), Vec3::new(0.0, 1.0, -1.0)]).unwrap();
        assert_eq!(f.signs, [1.0, 1.0, -1.0]);
        assert!(f.orthonormality_residual(&g) < 1e-12);
    }

    #[test]
    fn christoffel_flat_space_vanishes() {
        let gamma = christoffel_numeric(|_| Ok(BilinearForm::identity()), &Vec3::new(0.3, -1.0, 2.0), 1e-4).unwrap();
        assert!(gamma.iter().flatten().flatten().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn christoffel_sol_at_origin() {
        let gamma = christoffel_numeric(sol_form, &Vec3::zero(), 1e-4).unwrap();
        // Γ^z_xx = -1, Γ^z_yy = +1, Γ^x_xz = 1, Γ^y_yz = -1
        let expected = |k: usize, i: usize, j: usize| -> f64 {
            match (k, i.min(j), i.max(j)) {
                (2, 0, 0) => -1.0,
                (2, 1, 1) => 1.0,
                (0, 0, 2) => 1.0,
                (1, 1, 2) => -1.0,
                _ => 0.0,
            }
        };
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((gamma[k][i][j] - expected(k, i, j)).abs() < 1e-6, "Γ[{k}][{i}][{j}]");
                }
            }
        }
    }

    #[test]
    fn christoffel_singular_metric() {
        let r = christoffel_numeric(|_| Ok(BilinearForm::diagonal([1.0, 0.0, 1.0])), &Vec3::zero(), 1e-4);
        assert!(matches!(r, Err(Error::SingularMetric { .. })));
    }

    #[test]
    fn cross4_is_orthogonal() {
        let a = Vec4::new(0.1, 0.2, -0.3, 1.0);
        let b = Vec4::new(1.0, 0.5, 0.0, 0.2);
        let c = Vec4::new(-0.4, 1.0, 0.3, 0.0);
        let x = cross4(&a, &b, &c);
        assert!(x.dot(&a).abs() < 1e-12 && x.dot(&b).abs() < 1e-12 && x.dot(&c).abs() < 1e-12);
    }

    #[test]
    fn inverse_roundtrip() {
        let m = Matrix([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]]);
        let inv = m.inverse().unwrap();
        assert!((m * inv).max_abs_diff(&Matrix::identity()) < 1e-14);
        assert!((m.determinant() - 18.0).abs() < 1e-12);
    }

    fn vec3() -> impl Strategy<Value = Vec3<f64>> {
        prop::array::uniform3(-3.0f64..3.0).prop_map(Vector)
    }

    fn vec4() -> impl Strategy<Value = Vec4<f64>> {
        prop::array::uniform4(-3.0f64..3.0).prop_map(Vector)
    }

    proptest! {
        #[test]
        fn lorentz_dot_symmetric_bilinear(u in vec4(), v in vec4(), w in vec4(), a in -2.0f64..2.0) {
            let scale = 1.0 + u.norm() * (v.norm() + w.norm());
            prop_assert!((lorentz_dot(&u, &v) - lorentz_dot(&v, &u)).abs() <= 1e-12 * scale);
            let lhs = lorentz_dot(&(u * a + w), &v);
            let rhs = a * lorentz_dot(&u, &v) + lorentz_dot(&w, &v);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale * (1.0 + a.abs()) * 4.0);
        }

        #[test]
        fn metric_dot_symmetric_bilinear(p in vec3(), u in vec3(), v in vec3(), w in vec3(), a in -2.0f64..2.0) {
            let g = nil_form(&p).unwrap();
            let scale = (1.0 + p.norm_squared()) * (1.0 + u.norm() * (v.norm() + w.norm())) * (1.0 + a.abs());
            prop_assert!((metric_dot(&g, &u, &v) - metric_dot(&g, &v, &u)).abs() <= 1e-12 * scale);
            let lhs = metric_dot(&g, &(u * a + w), &v);
            let rhs = a * metric_dot(&g, &u, &v) + metric_dot(&g, &w, &v);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale * 4.0);
        }

        #[test]
        fn gram_schmidt_orthonormal_under_nil(p in vec3(), a in vec3(), b in vec3(), c in vec3()) {
            let g = nil_form(&p).unwrap();
            match gram_schmidt(&g, p, [a, b, c]) {
                Ok(f) => prop_assert!(f.orthonormality_residual(&g) < 1e-9),
                Err(e) => prop_assert_eq!(e, Error::DegenerateFrame),
            }
        }

        #[test]
        fn christoffel_symmetric_in_lower_indices(p in vec3()) {
            let gamma = christoffel_numeric(nil_form, &p, 1e-4).unwrap();
            for k in 0..3 { for i in 0..3 { for j in 0..3 {
                prop_assert!((gamma[k][i][j] - gamma[k][j][i]).abs() < 1e-8);
            }}}
        }
    }
}
