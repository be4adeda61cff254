//! The two concrete Euclidean Jordan algebras: real symmetric matrices of
//! rank `r` and the Lorentz (spin factor) algebra on `R^{n+1}`.
//!
//! Elements of `Sym(r, R)` are stored as the packed upper triangle of the
//! matrix, row-major: `(0,0), (0,1), .., (0,r-1), (1,1), ..`. Lorentz
//! elements are stored as `(x0, x1, .., xn)`. Linear operators act on these
//! coordinate vectors as dense matrices, so `L(x)`, `P(x)` and the values of
//! a multiplication algorithm compose and invert uniformly.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default eigenvalue margin used by cone and `D` membership.
pub const DEFAULT_CONE_MARGIN: f64 = 1e-12;

/// Relative eigenvalue size below which an element counts as singular.
const SINGULAR_TOL: f64 = 1e-14;

/// Accepted relative eigen-residual `|x v - lambda v| / |x|`.
const EIGEN_RESIDUAL_TOL: f64 = 1e-10;

/// Which simple Euclidean Jordan algebra we are working in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algebra {
    /// Real symmetric `rank x rank` matrices with `x∘y = (xy + yx)/2`.
    SymReal { rank: usize },
    /// `R^{n+1}` with the spin-factor product; rank 2.
    Lorentz { n: usize },
}

impl Algebra {
    pub fn sym_real(rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidAlgebra("symmetric rank must be >= 1".into()));
        }
        Ok(Algebra::SymReal { rank })
    }

    pub fn lorentz(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidAlgebra(format!(
                "Lorentz algebra needs spatial dimension n >= 2, got {n}"
            )));
        }
        Ok(Algebra::Lorentz { n })
    }

    pub fn vector_dim(&self) -> usize {
        match *self {
            Algebra::SymReal { rank } => rank * (rank + 1) / 2,
            Algebra::Lorentz { n } => n + 1,
        }
    }

    pub fn rank(&self) -> usize {
        match *self {
            Algebra::SymReal { rank } => rank,
            Algebra::Lorentz { .. } => 2,
        }
    }

    pub fn is_sym_real(&self) -> bool {
        matches!(self, Algebra::SymReal { .. })
    }

    /// Matrix order `r` for the symmetric algebra.
    pub fn matrix_order(&self) -> Option<usize> {
        match *self {
            Algebra::SymReal { rank } => Some(rank),
            Algebra::Lorentz { .. } => None,
        }
    }

    pub(crate) fn check_same(&self, other: &Algebra) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::AlgebraMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }

    /// Weights `m_j` such that `<a, b> = sum_j m_j a_j b_j` on coordinates.
    ///
    /// For packed symmetric matrices off-diagonal entries appear twice in
    /// `Trace(a b)`, hence weight 2.
    pub fn metric_weights(&self) -> Vec<f64> {
        match *self {
            Algebra::SymReal { rank } => {
                let mut w = Vec::with_capacity(self.vector_dim());
                for i in 0..rank {
                    for j in i..rank {
                        w.push(if i == j { 1.0 } else { 2.0 });
                    }
                }
                w
            }
            Algebra::Lorentz { n } => vec![1.0; n + 1],
        }
    }
}

impl fmt::Display for Algebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algebra::SymReal { rank } => write!(f, "sym:{rank}"),
            Algebra::Lorentz { n } => write!(f, "lorentz:{n}"),
        }
    }
}

impl FromStr for Algebra {
    type Err = Error;

    /// Parses `sym:<r>` or `lorentz:<n>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("algebra spec `{s}` missing ':'")))?;
        let value: usize = arg
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad algebra size `{arg}`")))?;
        let alg = match kind.trim() {
            "sym" => Algebra::sym_real(value),
            "lorentz" => Algebra::lorentz(value),
            other => return Err(Error::Parse(format!("unknown algebra kind `{other}`"))),
        };
        alg.map_err(|e| Error::Parse(e.to_string()))
    }
}

#[inline]
fn packed_index(r: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // entries in rows 0..i, then the offset inside row i
    i * r - i * i.saturating_sub(1) / 2 + (j - i)
}

/// A point of the algebra in canonical coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    algebra: Algebra,
    coords: Vec<f64>,
}

impl Element {
    pub fn new(algebra: Algebra, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != algebra.vector_dim() {
            return Err(Error::Domain(format!(
                "{algebra} expects {} coordinates, got {}",
                algebra.vector_dim(),
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        Ok(Element { algebra, coords })
    }

    pub(crate) fn from_raw(algebra: Algebra, coords: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), algebra.vector_dim());
        Element { algebra, coords }
    }

    /// The unit `e`: identity matrix, or `(1, 0, .., 0)`.
    pub fn identity(algebra: Algebra) -> Self {
        let mut coords = vec![0.0; algebra.vector_dim()];
        match algebra {
            Algebra::SymReal { rank } => {
                for i in 0..rank {
                    coords[packed_index(rank, i, i)] = 1.0;
                }
            }
            Algebra::Lorentz { .. } => coords[0] = 1.0,
        }
        Element { algebra, coords }
    }

    pub fn zero(algebra: Algebra) -> Self {
        Element {
            algebra,
            coords: vec![0.0; algebra.vector_dim()],
        }
    }

    /// Coordinate basis vector `j`.
    pub fn basis(algebra: Algebra, j: usize) -> Self {
        let mut coords = vec![0.0; algebra.vector_dim()];
        coords[j] = 1.0;
        Element { algebra, coords }
    }

    /// Packs a square matrix, symmetrising it first.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Domain("expected a non-empty square matrix".into()));
        }
        let r = m.nrows();
        let algebra = Algebra::SymReal { rank: r };
        let mut coords = Vec::with_capacity(algebra.vector_dim());
        for i in 0..r {
            for j in i..r {
                coords.push(0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Element::new(algebra, coords)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Element::from_matrix(&DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
            diag,
        )))
    }

    pub fn algebra(&self) -> Algebra {
        self.algebra
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Full symmetric matrix (symmetric algebra only).
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.algebra {
            Algebra::SymReal { rank } => Ok(unpack(rank, &self.coords)),
            Algebra::Lorentz { .. } => Err(Error::Unsupported(
                "matrix form is only defined for the symmetric algebra".into(),
            )),
        }
    }

    /// Trace inner product (symmetric) or Euclidean dot product (Lorentz).
    pub fn inner(&self, other: &Element) -> f64 {
        assert_eq!(self.algebra, other.algebra, "inner product across algebras");
        match self.algebra {
            Algebra::SymReal { rank } => {
                let mut acc = 0.0;
                let mut idx = 0;
                for i in 0..rank {
                    for j in i..rank {
                        let w = if i == j { 1.0 } else { 2.0 };
                        acc += w * self.coords[idx] * other.coords[idx];
                        idx += 1;
                    }
                }
                acc
            }
            Algebra::Lorentz { .. } => self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a * b)
                .sum(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Element {
        Element {
            algebra: self.algebra,
            coords: self.coords.iter().map(|c| c * s).collect(),
        }
    }

    /// `self - other`, checked.
    pub fn try_sub(&self, other: &Element) -> Result<Element> {
        self.algebra.check_same(&other.algebra)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    /// `self + other`, checked.
    pub fn try_add(&self, other: &Element) -> Result<Element> {
        self.algebra.check_same(&other.algebra)?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    /// `e - self`.
    pub fn complement(&self) -> Element {
        &Element::identity(self.algebra) - self
    }

    /// Trace: sum of the eigenvalues.
    pub fn trace(&self) -> f64 {
        match self.algebra {
            Algebra::SymReal { rank } => (0..rank)
                .map(|i| self.coords[packed_index(rank, i, i)])
                .sum(),
            Algebra::Lorentz { .. } => 2.0 * self.coords[0],
        }
    }

    /// Distance `|self - other|` in the algebra norm.
    pub fn distance(&self, other: &Element) -> f64 {
        (self - other).norm()
    }

    fn zip_with(&self, other: &Element, f: impl Fn(f64, f64) -> f64) -> Element {
        Element {
            algebra: self.algebra,
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.algebra)?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

// Arithmetic operators panic on algebra mismatch; use `try_add`/`try_sub`
// when the operands come from untrusted sources.
impl Add for &Element {
    type Output = Element;
    fn add(self, rhs: &Element) -> Element {
        assert_eq!(self.algebra, rhs.algebra, "adding elements of different algebras");
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Element {
    type Output = Element;
    fn sub(self, rhs: &Element) -> Element {
        assert_eq!(self.algebra, rhs.algebra, "subtracting elements of different algebras");
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Element {
    type Output = Element;
    fn mul(self, s: f64) -> Element {
        self.scale(s)
    }
}

impl Neg for &Element {
    type Output = Element;
    fn neg(self) -> Element {
        self.scale(-1.0)
    }
}

fn unpack(r: usize, coords: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(r, r);
    let mut idx = 0;
    for i in 0..r {
        for j in i..r {
            m[(i, j)] = coords[idx];
            m[(j, i)] = coords[idx];
            idx += 1;
        }
    }
    m
}

/// Row-major full matrix of packed coordinates.
fn dense(r: usize, coords: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; r * r];
    let mut idx = 0;
    for i in 0..r {
        for j in i..r {
            m[i * r + j] = coords[idx];
            m[j * r + i] = coords[idx];
            idx += 1;
        }
    }
    m
}

pub(crate) fn pack(m: &DMatrix<f64>) -> Element {
    let r = m.nrows();
    let algebra = Algebra::SymReal { rank: r };
    let mut coords = Vec::with_capacity(algebra.vector_dim());
    for i in 0..r {
        for j in i..r {
            coords.push(0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    Element { algebra, coords }
}

/// Jordan product `a∘b`.
pub fn jordan_product(a: &Element, b: &Element) -> Result<Element> {
    a.algebra.check_same(&b.algebra)?;
    Ok(product_unchecked(a, b))
}

fn product_unchecked(a: &Element, b: &Element) -> Element {
    match a.algebra {
        Algebra::SymReal { rank: r } => {
            let x = dense(r, &a.coords);
            let y = dense(r, &b.coords);
            let mut out = Vec::with_capacity(a.coords.len());
            for i in 0..r {
                for j in i..r {
                    let mut acc = 0.0;
                    for k in 0..r {
                        acc += x[i * r + k] * y[k * r + j] + y[i * r + k] * x[k * r + j];
                    }
                    out.push(0.5 * acc);
                }
            }
            Element::from_raw(a.algebra, out)
        }
        Algebra::Lorentz { .. } => {
            let x = &a.coords;
            let y = &b.coords;
            let mut out = Vec::with_capacity(x.len());
            out.push(x.iter().zip(y).map(|(p, q)| p * q).sum());
            for i in 1..x.len() {
                out.push(x[0] * y[i] + y[0] * x[i]);
            }
            Element::from_raw(a.algebra, out)
        }
    }
}

/// Jordan square `x∘x`.
pub fn square(x: &Element) -> Element {
    product_unchecked(x, x)
}

/// A linear map on the coordinate space of an algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    algebra: Algebra,
    matrix: DMatrix<f64>,
}

impl LinearOperator {
    pub fn new(algebra: Algebra, matrix: DMatrix<f64>) -> Result<Self> {
        let d = algebra.vector_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Domain(format!(
                "operator on {algebra} must be {d}x{d}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite operator entry".into()));
        }
        Ok(LinearOperator { algebra, matrix })
    }

    pub fn identity(algebra: Algebra) -> Self {
        let d = algebra.vector_dim();
        LinearOperator {
            algebra,
            matrix: DMatrix::identity(d, d),
        }
    }

    /// Tabulates a linear map by applying it to each coordinate basis vector.
    pub fn from_fn(algebra: Algebra, mut f: impl FnMut(&Element) -> Result<Element>) -> Result<Self> {
        let d = algebra.vector_dim();
        let mut matrix = DMatrix::zeros(d, d);
        for j in 0..d {
            let image = f(&Element::basis(algebra, j))?;
            algebra.check_same(&image.algebra)?;
            for (i, v) in image.coords.iter().enumerate() {
                matrix[(i, j)] = *v;
            }
        }
        LinearOperator::new(algebra, matrix)
    }

    pub fn algebra(&self) -> Algebra {
        self.algebra
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, x: &Element) -> Result<Element> {
        self.algebra.check_same(&x.algebra)?;
        let d = self.algebra.vector_dim();
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.matrix[(i, j)] * x.coords[j];
            }
            *o = acc;
        }
        Ok(Element::from_raw(self.algebra, out))
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &LinearOperator) -> Result<LinearOperator> {
        self.algebra.check_same(&other.algebra)?;
        Ok(LinearOperator {
            algebra: self.algebra,
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn inverse(&self) -> Result<LinearOperator> {
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or(Error::Singular {
                min_abs_eigenvalue: 0.0,
            })?;
        LinearOperator::new(self.algebra, inv)
    }

    /// Determinant of the operator on the coordinate space.
    pub fn det(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn scale(&self, s: f64) -> LinearOperator {
        LinearOperator {
            algebra: self.algebra,
            matrix: &self.matrix * s,
        }
    }

    pub fn sub(&self, other: &LinearOperator) -> Result<LinearOperator> {
        self.algebra.check_same(&other.algebra)?;
        Ok(LinearOperator {
            algebra: self.algebra,
            matrix: &self.matrix - &other.matrix,
        })
    }

    /// Operator norm induced by the algebra's inner product.
    pub fn op_norm(&self) -> f64 {
        // Conjugate into orthonormal coordinates: M^{1/2} A M^{-1/2}.
        let w: Vec<f64> = self.algebra.metric_weights().iter().map(|v| v.sqrt()).collect();
        let d = w.len();
        let mut b = self.matrix.clone();
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] *= w[i] / w[j];
            }
        }
        b.singular_values().max()
    }

    /// `max |A^T M A - M|`: zero exactly when the operator preserves the
    /// algebra's inner product.
    pub fn isometry_defect(&self) -> f64 {
        let weights = self.algebra.metric_weights();
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(weights));
        let g = self.matrix.transpose() * &m * &self.matrix;
        (g - m).amax()
    }

    /// `|k e - e|`.
    pub fn identity_defect(&self) -> f64 {
        let e = Element::identity(self.algebra);
        self.apply(&e).map(|ke| ke.distance(&e)).unwrap_or(f64::INFINITY)
    }

    /// `max |k(a∘b) - k(a)∘k(b)|` over coordinate basis pairs; zero iff `k`
    /// is a Jordan automorphism.
    pub fn automorphism_defect(&self) -> f64 {
        let d = self.algebra.vector_dim();
        let images: Vec<Element> = (0..d)
            .map(|j| self.apply(&Element::basis(self.algebra, j)).expect("same algebra"))
            .collect();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                let bi = Element::basis(self.algebra, i);
                let bj = Element::basis(self.algebra, j);
                let lhs = self.apply(&product_unchecked(&bi, &bj)).expect("same algebra");
                let rhs = product_unchecked(&images[i], &images[j]);
                worst = worst.max(lhs.distance(&rhs));
            }
        }
        worst
    }
}

/// `L(x)`: `y ↦ x∘y`.
pub fn left_mult(x: &Element) -> LinearOperator {
    LinearOperator::from_fn(x.algebra, |b| Ok(product_unchecked(x, b))).expect("finite product")
}

/// Quadratic representation `P(x) = 2 L(x)^2 - L(x^2)`.
pub fn quad_rep(x: &Element) -> LinearOperator {
    let l = left_mult(x);
    let l2 = left_mult(&square(x));
    LinearOperator {
        algebra: x.algebra,
        matrix: (&l.matrix * &l.matrix) * 2.0 - l2.matrix,
    }
}

/// Applies `P(x)` to `y` without building the operator.
///
/// For matrices this is `x·y·x`; for the Lorentz algebra the Jordan formula
/// `2x∘(x∘y) - x²∘y` is used directly.
pub fn quad_apply(x: &Element, y: &Element) -> Result<Element> {
    x.algebra.check_same(&y.algebra)?;
    match x.algebra {
        Algebra::SymReal { rank } => {
            let xm = unpack(rank, &x.coords);
            let ym = unpack(rank, &y.coords);
            Ok(pack(&(&xm * ym * &xm)))
        }
        Algebra::Lorentz { .. } => {
            let xy = product_unchecked(x, y);
            let a = product_unchecked(x, &xy).scale(2.0);
            let b = product_unchecked(&square(x), y);
            Ok(&a - &b)
        }
    }
}

/// `x = Σ λ_i c_i` with eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub idempotents: Vec<Element>,
}

impl SpectralDecomposition {
    /// `Σ f(λ_i) c_i`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Element {
        let alg = self.idempotents[0].algebra;
        let mut out = Element::zero(alg);
        for (lambda, c) in self.eigenvalues.iter().zip(&self.idempotents) {
            out = &out + &c.scale(f(*lambda));
        }
        out
    }

    pub fn reconstruct(&self) -> Element {
        self.map(|l| l)
    }
}

struct SymEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

fn sym_eigen(rank: usize, coords: &[f64]) -> Result<SymEigen> {
    let m = unpack(rank, coords);
    let scale = m.norm();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vectors = DMatrix::zeros(rank, rank);
    let mut values = Vec::with_capacity(rank);
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let lambda = eig.eigenvalues[k];
        let resid = (&m * v - v * lambda).norm();
        if scale > 0.0 && resid > EIGEN_RESIDUAL_TOL * scale {
            return Err(Error::Numerical(format!(
                "eigen residual {resid:e} exceeds tolerance"
            )));
        }
        vectors.set_column(col, &v);
        values.push(lambda);
    }
    Ok(SymEigen { values, vectors })
}

fn lorentz_split(x: &Element) -> (f64, f64, Vec<f64>) {
    let x0 = x.coords[0];
    let bar = &x.coords[1..];
    let norm = bar.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dir = if norm == 0.0 {
        // degenerate spatial part: any fixed unit direction works
        let mut u = vec![0.0; bar.len()];
        u[0] = 1.0;
        u
    } else {
        bar.iter().map(|v| v / norm).collect()
    };
    (x0, norm, dir)
}

fn lorentz_idempotent(algebra: Algebra, dir: &[f64], sign: f64) -> Element {
    let mut coords = Vec::with_capacity(dir.len() + 1);
    coords.push(0.5);
    coords.extend(dir.iter().map(|u| 0.5 * sign * u));
    Element::from_raw(algebra, coords)
}

/// Eigenvalues (descending) and a complete system of orthogonal idempotents.
pub fn spectral_decompose(x: &Element) -> Result<SpectralDecomposition> {
    match x.algebra {
        Algebra::SymReal { rank } => {
            let eig = sym_eigen(rank, &x.coords)?;
            let idempotents = (0..rank)
                .map(|k| {
                    let v = eig.vectors.column(k);
                    pack(&(v * v.transpose()))
                })
                .collect();
            Ok(SpectralDecomposition {
                eigenvalues: eig.values,
                idempotents,
            })
        }
        Algebra::Lorentz { .. } => {
            let (x0, norm, dir) = lorentz_split(x);
            Ok(SpectralDecomposition {
                eigenvalues: vec![x0 + norm, x0 - norm],
                idempotents: vec![
                    lorentz_idempotent(x.algebra, &dir, 1.0),
                    lorentz_idempotent(x.algebra, &dir, -1.0),
                ],
            })
        }
    }
}

/// Eigenvalues in descending order.
pub fn eigenvalues(x: &Element) -> Result<Vec<f64>> {
    match x.algebra {
        Algebra::SymReal { rank } => Ok(sym_eigen(rank, &x.coords)?.values),
        Algebra::Lorentz { .. } => {
            let (x0, norm, _) = lorentz_split(x);
            Ok(vec![x0 + norm, x0 - norm])
        }
    }
}

/// `Σ f(λ_i) c_i`, computed without materialising idempotents for matrices.
pub fn spectral_map(x: &Element, f: impl Fn(f64) -> f64) -> Result<Element> {
    match x.algebra {
        Algebra::SymReal { rank } => {
            let eig = sym_eigen(rank, &x.coords)?;
            let mut scaled = eig.vectors.clone();
            for (k, lambda) in eig.values.iter().enumerate() {
                let fk = f(*lambda);
                scaled.column_mut(k).scale_mut(fk);
            }
            Ok(pack(&(scaled * eig.vectors.transpose())))
        }
        Algebra::Lorentz { .. } => spectral_decompose(x).map(|sd| sd.map(f)),
    }
}

/// Product of the eigenvalues.
pub fn determinant(x: &Element) -> f64 {
    match x.algebra {
        Algebra::SymReal { rank } => unpack(rank, &x.coords).determinant(),
        Algebra::Lorentz { .. } => {
            let (x0, norm, _) = lorentz_split(x);
            (x0 + norm) * (x0 - norm)
        }
    }
}

/// `log det x` for `x` in the cone.
pub fn log_det(x: &Element) -> Result<f64> {
    match x.algebra {
        Algebra::SymReal { .. } => {
            let t = cholesky_factor(x)?;
            Ok(2.0 * t.diagonal().iter().map(|v| v.ln()).sum::<f64>())
        }
        Algebra::Lorentz { .. } => {
            let (x0, norm, _) = lorentz_split(x);
            let lo = x0 - norm;
            if lo <= 0.0 {
                return Err(Error::Domain(format!("{x} is not in the cone")));
            }
            Ok((x0 + norm).ln() + lo.ln())
        }
    }
}

/// Inverse `x^{-1}` with `x∘x^{-1} = e`.
pub fn inverse(x: &Element) -> Result<Element> {
    let eig = eigenvalues(x)?;
    let max_abs = eig.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let min_abs = eig.iter().fold(f64::INFINITY, |a, l| a.min(l.abs()));
    if min_abs <= SINGULAR_TOL * max_abs.max(1.0) {
        return Err(Error::Singular {
            min_abs_eigenvalue: min_abs,
        });
    }
    match x.algebra {
        Algebra::SymReal { rank } => {
            let inv = unpack(rank, &x.coords)
                .try_inverse()
                .ok_or(Error::Singular {
                    min_abs_eigenvalue: min_abs,
                })?;
            Ok(pack(&inv))
        }
        Algebra::Lorentz { .. } => {
            let det = determinant(x);
            let mut coords = Vec::with_capacity(x.coords.len());
            coords.push(x.coords[0] / det);
            coords.extend(x.coords[1..].iter().map(|v| -v / det));
            Ok(Element::from_raw(x.algebra, coords))
        }
    }
}

/// Region tested by [`membership`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// The open symmetric cone `V`.
    Cone,
    /// `D = {x ∈ V : e - x ∈ V}`.
    D,
}

pub fn membership(x: &Element, region: Region) -> bool {
    membership_with_margin(x, region, DEFAULT_CONE_MARGIN)
}

pub fn membership_with_margin(x: &Element, region: Region, margin: f64) -> bool {
    let Ok(eig) = eigenvalues(x) else {
        return false;
    };
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    match region {
        Region::Cone => min > margin,
        Region::D => min > margin && 1.0 - max > margin,
    }
}

fn require_cone(x: &Element, what: &str) -> Result<()> {
    if membership(x, Region::Cone) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what}: argument is not in the cone")))
    }
}

/// Square root in the cone: the unique `s ∈ V` with `s∘s = x`.
pub fn sqrt_element(x: &Element) -> Result<Element> {
    require_cone(x, "sqrt")?;
    spectral_map(x, f64::sqrt)
}

/// `x^p` for `x` in the cone and any real `p`.
pub fn power_element(x: &Element, p: f64) -> Result<Element> {
    require_cone(x, "power")?;
    spectral_map(x, |l| l.powf(p))
}

/// Lower-triangular `t` with `x = t tᵀ` (no pivoting).
pub fn cholesky_factor(x: &Element) -> Result<DMatrix<f64>> {
    let m = x.to_matrix()?;
    Cholesky::new(m)
        .map(|c| c.l())
        .ok_or_else(|| Error::Domain("Cholesky factorisation failed: not positive definite".into()))
}

/// `log Δ_k(x)` for `k = 1..r`, from `Δ_k = Π_{j≤k} t_jj²`.
pub fn log_leading_minors(x: &Element) -> Result<Vec<f64>> {
    if !x.algebra.is_sym_real() {
        return Err(Error::Unsupported(
            "principal minors require the symmetric algebra".into(),
        ));
    }
    let t = cholesky_factor(x).map_err(|_| Error::Domain("nonpositive leading minor".into()))?;
    let mut acc = 0.0;
    Ok(t.diagonal()
        .iter()
        .map(|d| {
            acc += 2.0 * d.ln();
            acc
        })
        .collect())
}

/// Leading principal minors `Δ_1(x), .., Δ_r(x)`.
pub fn leading_minors(x: &Element) -> Result<Vec<f64>> {
    Ok(log_leading_minors(x)?.into_iter().map(f64::exp).collect())
}

/// `log Δ_s(x) = Σ_k (s_k - s_{k+1}) log Δ_k(x)` with `s_{r+1} = 0`.
pub fn log_power_function(x: &Element, s: &[f64]) -> Result<f64> {
    let logs = log_leading_minors(x)?;
    if s.len() != logs.len() {
        return Err(Error::Domain(format!(
            "power vector has length {}, algebra rank is {}",
            s.len(),
            logs.len()
        )));
    }
    let r = s.len();
    Ok((0..r)
        .map(|k| {
            let next = if k + 1 < r { s[k + 1] } else { 0.0 };
            (s[k] - next) * logs[k]
        })
        .sum())
}

/// Generalised power function `Δ_s(x)`.
pub fn power_function(x: &Element, s: &[f64]) -> Result<f64> {
    log_power_function(x, s).map(f64::exp)
}

/// Relative defects of the Jordan algebra axioms at one triple:
/// commutativity, the Jordan identity `x∘(x²∘y) = x²∘(x∘y)`, neutrality of
/// `e`, and associativity of the inner product `⟨x, y∘z⟩ = ⟨x∘y, z⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AxiomDefects {
    pub commutativity: f64,
    pub jordan_identity: f64,
    pub neutral_element: f64,
    pub inner_associativity: f64,
}

impl AxiomDefects {
    pub fn max(&self) -> f64 {
        self.commutativity
            .max(self.jordan_identity)
            .max(self.neutral_element)
            .max(self.inner_associativity)
    }

    fn merge(&mut self, other: &AxiomDefects) {
        self.commutativity = self.commutativity.max(other.commutativity);
        self.jordan_identity = self.jordan_identity.max(other.jordan_identity);
        self.neutral_element = self.neutral_element.max(other.neutral_element);
        self.inner_associativity = self.inner_associativity.max(other.inner_associativity);
    }
}

pub fn axiom_defects(x: &Element, y: &Element, z: &Element) -> Result<AxiomDefects> {
    x.algebra.check_same(&y.algebra)?;
    x.algebra.check_same(&z.algebra)?;
    let (nx, ny, nz) = (x.norm(), y.norm(), z.norm());
    let rel = |d: f64, scale: f64| if scale > 0.0 { d / scale } else { d };
    let xy = product_unchecked(x, y);
    let yx = product_unchecked(y, x);
    let x2 = square(x);
    let lhs = product_unchecked(x, &product_unchecked(&x2, y));
    let rhs = product_unchecked(&x2, &xy);
    let xe = product_unchecked(x, &Element::identity(x.algebra));
    let yz = product_unchecked(y, z);
    Ok(AxiomDefects {
        commutativity: rel(xy.distance(&yx), nx * ny),
        jordan_identity: rel(lhs.distance(&rhs), nx * nx * nx * ny),
        neutral_element: rel(xe.distance(x), nx),
        inner_associativity: rel((x.inner(&yz) - xy.inner(z)).abs(), nx * ny * nz),
    })
}

/// Worst axiom defects over `count` random triples.
pub fn axiom_sweep(algebra: Algebra, count: usize, seed: u64) -> Result<AxiomDefects> {
    use rayon::prelude::*;
    let mut s = crate::sampler::Sampler::seeded(algebra, seed);
    let triples: Vec<_> = (0..count)
        .map(|_| (s.sample_algebra(), s.sample_algebra(), s.sample_algebra()))
        .collect();
    let defects = triples
        .par_iter()
        .map(|(x, y, z)| axiom_defects(x, y, z))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = AxiomDefects::default();
    for d in &defects {
        worst.merge(d);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {

    #[test]
    fn axiom_suite_holds() {
        for alg in [
            Algebra::sym_real(2).unwrap(),
            Algebra::sym_real(5).unwrap(),
            Algebra::lorentz(2).unwrap(),
            Algebra::lorentz(5).unwrap(),
        ] {
            let d = axiom_sweep(alg, 500, 1).unwrap();
            assert!(d.max() <= 1e-9, "{alg}: {d:?}");
        }
    }

    use super::*;
    use approx::assert_relative_eq;

    fn sym2(a: f64, b: f64, c: f64) -> Element {
        Element::new(Algebra::SymReal { rank: 2 }, vec![a, b, c]).unwrap()
    }

    fn lor(c: &[f64]) -> Element {
        Element::new(Algebra::lorentz(c.len() - 1).unwrap(), c.to_vec()).unwrap()
    }

    #[test]
    fn packed_layout_matches_row_major_upper_triangle() {
        let r = 4;
        let mut expected = 0;
        for i in 0..r {
            for j in i..r {
                assert_eq!(packed_index(r, i, j), expected);
                assert_eq!(packed_index(r, j, i), expected);
                expected += 1;
            }
        }
    }

    #[test]
    fn algebra_parsing_and_dims() {
        assert_eq!("sym:3".parse::<Algebra>().unwrap().vector_dim(), 6);
        assert_eq!("lorentz:4".parse::<Algebra>().unwrap().vector_dim(), 5);
        assert_eq!("lorentz:4".parse::<Algebra>().unwrap().rank(), 2);
        assert!("lorentz:1".parse::<Algebra>().is_err());
        assert!("sym:0".parse::<Algebra>().is_err());
        assert!("herm:2".parse::<Algebra>().is_err());
    }

    #[test]
    fn product_examples() {
        let x = sym2(1.0, 0.0, 2.0);
        let y = sym2(0.0, 1.0, 0.0);
        assert_eq!(jordan_product(&x, &y).unwrap().coords(), &[0.0, 1.5, 0.0]);

        let z = lor(&[2.0, 1.0, 0.0]);
        assert_eq!(jordan_product(&z, &z).unwrap().coords(), &[5.0, 4.0, 0.0]);

        let e = Element::identity(x.algebra());
        assert_eq!(jordan_product(&x, &e).unwrap(), x);
        assert!(matches!(
            jordan_product(&x, &z),
            Err(Error::AlgebraMismatch { .. })
        ));
    }

    #[test]
    fn quad_rep_examples() {
        let x = sym2(2.0, 0.0, 3.0);
        let e = Element::identity(x.algebra());
        let p = quad_rep(&x).apply(&e).unwrap();
        for (a, b) in p.coords().iter().zip([4.0, 0.0, 9.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        let z = lor(&[0.3, -1.0, 2.0]);
        let two_e = Element::identity(z.algebra()).scale(2.0);
        let pz = quad_rep(&two_e).apply(&z).unwrap();
        assert!(pz.distance(&z.scale(4.0)) < 1e-14);
        let pe = quad_rep(&Element::identity(z.algebra()));
        assert_eq!(pe, LinearOperator::identity(z.algebra()));
    }

    #[test]
    fn quad_rep_formula_matches_matrix_sandwich() {
        let x = Element::new(Algebra::SymReal { rank: 3 }, vec![1.0, 0.2, -0.3, 2.0, 0.5, 1.5])
            .unwrap();
        let y = Element::new(Algebra::SymReal { rank: 3 }, vec![0.1, 1.0, 0.4, -0.7, 0.0, 2.0])
            .unwrap();
        let via_l = quad_rep(&x).apply(&y).unwrap();
        let xm = x.to_matrix().unwrap();
        let sandwich = pack(&(&xm * y.to_matrix().unwrap() * &xm));
        assert!(via_l.distance(&sandwich) < 1e-12);
        assert!(quad_apply(&x, &y).unwrap().distance(&sandwich) < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let x = sym2(2.0, 0.0, 4.0);
        let inv = inverse(&x).unwrap();
        assert!(inv.distance(&sym2(0.5, 0.0, 0.25)) < 1e-15);

        let z = lor(&[2.0, 1.0, 0.0]);
        let zi = inverse(&z).unwrap();
        assert!(zi.distance(&lor(&[2.0 / 3.0, -1.0 / 3.0, 0.0])) < 1e-15);
        let e = Element::identity(z.algebra());
        assert!(jordan_product(&z, &zi).unwrap().distance(&e) < 1e-15);
        assert_eq!(inverse(&e).unwrap(), e);

        assert!(matches!(inverse(&sym2(1.0, 1.0, 1.0)), Err(Error::Singular { .. })));
        assert!(matches!(inverse(&lor(&[1.0, 1.0, 0.0])), Err(Error::Singular { .. })));
    }

    #[test]
    fn spectral_examples() {
        let sd = spectral_decompose(&sym2(2.0, 0.0, 3.0)).unwrap();
        assert_relative_eq!(sd.eigenvalues[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(sd.eigenvalues[1], 2.0, epsilon = 1e-14);
        assert!(sd.idempotents[0].distance(&sym2(0.0, 0.0, 1.0)) < 1e-14);
        assert!(sd.idempotents[1].distance(&sym2(1.0, 0.0, 0.0)) < 1e-14);

        let z = lor(&[2.0, 1.0, 0.0]);
        let sd = spectral_decompose(&z).unwrap();
        assert_eq!(sd.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(sd.idempotents[0].coords(), &[0.5, 0.5, 0.0]);
        assert_eq!(sd.idempotents[1].coords(), &[0.5, -0.5, 0.0]);
        assert!(sd.reconstruct().distance(&z) < 1e-15);

        let e = Element::identity(Algebra::SymReal { rank: 3 });
        assert!(spectral_decompose(&e)
            .unwrap()
            .eigenvalues
            .iter()
            .all(|l| (l - 1.0).abs() < 1e-14));
    }

    #[test]
    fn lorentz_degenerate_spectral_uses_fixed_direction() {
        let z = lor(&[0.7, 0.0, 0.0, 0.0]);
        let sd = spectral_decompose(&z).unwrap();
        assert_eq!(sd.eigenvalues, vec![0.7, 0.7]);
        assert_eq!(sd.idempotents[0].coords(), &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(sd.idempotents[1].coords(), &[0.5, -0.5, 0.0, 0.0]);
        let sum = &sd.idempotents[0] + &sd.idempotents[1];
        assert_eq!(sum, Element::identity(z.algebra()));
    }

    #[test]
    fn determinant_examples() {
        assert_relative_eq!(determinant(&lor(&[2.0, 1.0, 0.0])), 3.0, epsilon = 1e-15);
        assert_relative_eq!(
            determinant(&Element::identity(Algebra::SymReal { rank: 4 })),
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(log_det(&sym2(2.0, 0.0, 3.0)).unwrap(), 6f64.ln(), epsilon = 1e-14);
        assert!(log_det(&sym2(1.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn membership_examples() {
        let alg = Algebra::SymReal { rank: 2 };
        let e = Element::identity(alg);
        assert!(membership(&e.scale(0.5), Region::D));
        assert!(!membership(&e, Region::D));
        assert!(membership(&e, Region::Cone));
        assert!(!membership(&sym2(0.5, 0.0, 1.2), Region::D));
        assert!(!membership(&lor(&[1.0, 0.5, 0.0]), Region::D));
        assert!(membership(&lor(&[0.5, 0.2, 0.1]), Region::D));
        assert!(!membership(&lor(&[0.5, 0.6, 0.0]), Region::Cone));
    }

    #[test]
    fn sqrt_examples() {
        let e = Element::identity(Algebra::SymReal { rank: 2 });
        assert!(sqrt_element(&e).unwrap().distance(&e) < 1e-15);
        let s = sqrt_element(&sym2(4.0, 0.0, 9.0)).unwrap();
        assert!(s.distance(&sym2(2.0, 0.0, 3.0)) < 1e-14);
        assert!(matches!(
            sqrt_element(&sym2(-1.0, 0.0, 1.0)),
            Err(Error::Domain(_))
        ));
        let z = lor(&[2.0, 1.0, 0.5]);
        let sz = sqrt_element(&z).unwrap();
        assert!(square(&sz).distance(&z) < 1e-14);
    }

    #[test]
    fn power_function_examples() {
        let x = sym2(2.0, 1.0, 3.0);
        assert_relative_eq!(power_function(&x, &[2.0, 1.0]).unwrap(), 10.0, epsilon = 1e-13);
        let e = Element::identity(Algebra::SymReal { rank: 2 });
        assert_relative_eq!(power_function(&e, &[3.0, -7.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            power_function(&x, &[0.3, 0.3]).unwrap(),
            determinant(&x).powf(0.3),
            epsilon = 1e-13
        );
        let minors = leading_minors(&x).unwrap();
        assert_relative_eq!(minors[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(minors[1], 5.0, epsilon = 1e-13);
        assert!(matches!(
            power_function(&lor(&[2.0, 1.0, 0.0]), &[1.0, 0.0]),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            power_function(&sym2(-1.0, 0.0, 2.0), &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn operator_checks() {
        let alg = Algebra::SymReal { rank: 2 };
        let id = LinearOperator::identity(alg);
        assert_eq!(id.isometry_defect(), 0.0);
        assert_eq!(id.identity_defect(), 0.0);
        assert_eq!(id.automorphism_defect(), 0.0);
        let twice = id.scale(2.0);
        assert!(twice.isometry_defect() > 1.0);
        assert!((twice.op_norm() - 2.0).abs() < 1e-14);
    }
}
